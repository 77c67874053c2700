#!/usr/bin/env python3
"""Write a planted low-rank tensor in the slab format, for demos and
smoke tests.

Usage:
    make_planted_slab.py OUT.slab [n1 n2 n3 rank seed]
"""

import math
import random
import sys


def unit(rng, n):
    v = [rng.gauss(0, 1) for _ in range(n)]
    s = math.sqrt(sum(x * x for x in v))
    return [x / s for x in v]


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    out = sys.argv[1]
    n1, n2, n3, rank, seed = (int(x) for x in (sys.argv[2:] + ["5", "8", "6", "2", "11"][len(sys.argv) - 2:]))
    rng = random.Random(seed)
    weights = [0.5 + rng.random() for _ in range(rank)]
    a = [unit(rng, n1) for _ in range(rank)]
    b = [unit(rng, n2) for _ in range(rank)]
    c = [unit(rng, n3) for _ in range(rank)]
    with open(out, "w") as f:
        f.write(f"shape {n1} {n2} {n3}\n")
        for i in range(n1):
            for j in range(n2):
                row = (
                    sum(weights[t] * a[t][i] * b[t][j] * c[t][k] for t in range(rank))
                    for k in range(n3)
                )
                f.write(" ".join(repr(v) for v in row) + "\n")
            f.write("\n")
    print(f"wrote {out}: {n1}x{n2}x{n3}, rank {rank}, seed {seed}")


if __name__ == "__main__":
    main()
