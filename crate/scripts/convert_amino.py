#!/usr/bin/env python3
"""Convert the amino-acid fluorescence dataset to the slab text format.

The dataset holds excitation-emission matrices for five mixtures of three
amino acid fluorophores (tyrosine, tryptophan, phenylalanine): excitation
240-300 nm in 1 nm steps (61), emission 250-450 nm in 1 nm steps (201),
giving a 5 x 201 x 61 tensor. It is distributed as a MATLAB file
(commonly `amino.mat` or `claus.mat`) with the measurements in a variable
named `X` (sometimes flattened alongside `DimX`).

Usage:
    convert_amino.py amino.mat data/amino.slab
"""

import sys

import numpy as np
import scipy.io


def load_tensor(path):
    mat = scipy.io.loadmat(path)
    if "X" in mat:
        x = np.asarray(mat["X"], dtype=float)
        if x.ndim == 2 and "DimX" in mat:
            dims = np.asarray(mat["DimX"]).ravel().astype(int)
            x = x.reshape(dims, order="F")
        return x
    for key, value in mat.items():
        if key.startswith("__"):
            continue
        arr = np.asarray(value, dtype=float)
        if arr.ndim == 3:
            return arr
    sys.exit(f"{path}: no 3-way array found (keys: {list(mat)})")


def main():
    if len(sys.argv) != 3:
        sys.exit(__doc__)
    src, dst = sys.argv[1], sys.argv[2]
    x = load_tensor(src)
    if x.shape != (5, 201, 61):
        if x.shape == (5, 61, 201):
            x = x.transpose(0, 2, 1)
        else:
            print(f"warning: unexpected shape {x.shape}, writing as-is", file=sys.stderr)
    # Missing values (scatter regions are NaN in some distributions) are
    # written as zeros; refit with a mask if that matters for your use.
    x = np.nan_to_num(x, nan=0.0)
    with open(dst, "w") as f:
        f.write("shape " + " ".join(str(n) for n in x.shape) + "\n")
        for slab in x:
            for row in slab:
                f.write(" ".join(repr(float(v)) for v in row) + "\n")
            f.write("\n")
    print(f"wrote {dst} with shape {x.shape}")


if __name__ == "__main__":
    main()
