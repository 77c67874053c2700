//! Text formats: COO entry lists, dense slab tensors, factor CSVs, and the
//! fit manifest.
//!
//! All formats are UTF-8 with `#` comment lines. Indices in files are
//! **1-based**, matching the conventions of the reports; they are converted
//! at this boundary only.
//!
//! COO format:
//!
//! ```text
//! # optional comments
//! shape n1 n2 ... nd
//! i1 i2 ... id value     (one observed entry per line, 1-based indices)
//! ```
//!
//! Slab format (complete tensors): the same `shape` header followed by all
//! `prod n_i` values in row-major order, whitespace-separated. The writer
//! emits one row of the last mode per line, with blank lines between
//! consecutive slabs of the leading modes.

use crate::error::{Error, Result};
use crate::rcg::FitReport;
use crate::tensor::{ColMatrix, CpdModel, DenseTensor, SparseObservations};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_shape_header(line: &str, lineno: usize) -> Result<Vec<usize>> {
    let mut tokens = line.split_whitespace();
    match tokens.next() {
        Some("shape") => {}
        _ => {
            return Err(Error::parse(
                lineno,
                "expected a `shape n1 n2 ...` header line",
            ))
        }
    }
    let shape = tokens
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| Error::parse(lineno, format!("bad extent `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    if shape.len() < 2 {
        return Err(Error::parse(lineno, "shape needs at least two extents"));
    }
    if shape.contains(&0) {
        return Err(Error::parse(lineno, "extents must be positive"));
    }
    Ok(shape)
}

/// Parses the COO observation format.
pub fn parse_coo(text: &str) -> Result<SparseObservations> {
    let mut lines = content_lines(text);
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty input, expected a shape header"))?;
    let shape = parse_shape_header(header, lineno)?;
    let d = shape.len();
    let mut entries = Vec::new();
    for (lineno, line) in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != d + 1 {
            return Err(Error::parse(
                lineno,
                format!("expected {} indices and a value, found {} tokens", d, tokens.len()),
            ));
        }
        let mut idx = Vec::with_capacity(d);
        for (k, t) in tokens[..d].iter().enumerate() {
            let i: usize = t
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad index `{t}`")))?;
            if i == 0 || i > shape[k] {
                return Err(Error::parse(
                    lineno,
                    format!("index {i} out of range 1..={} in mode {}", shape[k], k + 1),
                ));
            }
            idx.push(i - 1);
        }
        let value: f64 = tokens[d]
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad value `{}`", tokens[d])))?;
        entries.push((idx, value));
    }
    SparseObservations::new(shape, entries)
}

pub fn read_coo(path: impl AsRef<Path>) -> Result<SparseObservations> {
    parse_coo(&fs::read_to_string(path)?)
}

pub fn write_coo(path: impl AsRef<Path>, obs: &SparseObservations) -> Result<()> {
    let mut out = String::new();
    out.push_str("shape");
    for n in obs.shape() {
        out.push_str(&format!(" {n}"));
    }
    out.push('\n');
    for (idx, value) in obs.iter() {
        for i in idx {
            out.push_str(&format!("{} ", i + 1));
        }
        out.push_str(&format!("{value}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses the dense slab format.
pub fn parse_slab(text: &str) -> Result<DenseTensor> {
    let mut lines = content_lines(text);
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty input, expected a shape header"))?;
    let shape = parse_shape_header(header, lineno)?;
    let expected: usize = shape.iter().product();
    let mut data = Vec::with_capacity(expected);
    for (lineno, line) in lines {
        for t in line.split_whitespace() {
            let v: f64 = t
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad value `{t}`")))?;
            data.push(v);
        }
    }
    if data.len() != expected {
        return Err(Error::invalid(format!(
            "slab body has {} values, shape {:?} needs {}",
            data.len(),
            shape,
            expected
        )));
    }
    DenseTensor::new(shape, data)
}

pub fn read_slab(path: impl AsRef<Path>) -> Result<DenseTensor> {
    parse_slab(&fs::read_to_string(path)?)
}

pub fn write_slab(path: impl AsRef<Path>, tensor: &DenseTensor) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write!(w, "shape")?;
    for n in tensor.shape() {
        write!(w, " {n}")?;
    }
    writeln!(w)?;
    let d = tensor.order();
    let row = tensor.shape()[d - 1];
    let rows_per_slab: usize = if d >= 2 { tensor.shape()[d - 2] } else { 1 };
    for (i, chunk) in tensor.data().chunks(row).enumerate() {
        if i > 0 && i % rows_per_slab == 0 {
            writeln!(w)?;
        }
        let line: Vec<String> = chunk.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    Ok(())
}

/// A tensor read from disk, either complete or as an observation list.
#[derive(Debug, Clone)]
pub enum TensorFile {
    Dense(DenseTensor),
    Sparse(SparseObservations),
}

/// Reads a tensor file, sniffing COO versus slab layout. A body whose
/// token count equals the shape product is a slab; otherwise every line
/// must be a COO entry. Use [`read_coo`]/[`read_slab`] to force a format.
pub fn read_tensor_auto(path: impl AsRef<Path>) -> Result<TensorFile> {
    let text = fs::read_to_string(path)?;
    let mut lines = content_lines(&text);
    let (lineno, header) = lines
        .next()
        .ok_or_else(|| Error::parse(1, "empty input, expected a shape header"))?;
    let shape = parse_shape_header(header, lineno)?;
    let expected: usize = shape.iter().product();
    let body_tokens: usize = lines.map(|(_, l)| l.split_whitespace().count()).sum();
    if body_tokens == expected {
        Ok(TensorFile::Dense(parse_slab(&text)?))
    } else {
        Ok(TensorFile::Sparse(parse_coo(&text)?))
    }
}

/// Densifies either variant; observation lists become tensors with zeros at
/// unobserved entries.
impl TensorFile {
    pub fn into_dense(self) -> Result<DenseTensor> {
        match self {
            TensorFile::Dense(t) => Ok(t),
            TensorFile::Sparse(o) => o.to_dense(),
        }
    }

    pub fn into_sparse(self) -> SparseObservations {
        match self {
            TensorFile::Dense(t) => SparseObservations::from_dense(&t),
            TensorFile::Sparse(o) => o,
        }
    }
}

/// Manifest tying the factor files of one fit together.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub shape: Vec<usize>,
    pub rank: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Per-mode factor CSVs, `shape[k]` rows by `rank` columns.
    pub factor_files: Vec<String>,
    pub weights_file: String,
    pub report_file: String,
}

fn write_matrix_csv(path: &Path, m: &ColMatrix) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m.get(i, j))).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

fn read_matrix_csv(path: &Path) -> Result<ColMatrix> {
    let file = fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(i + 1, format!("bad value `{t}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::invalid("empty matrix CSV"));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::invalid("ragged matrix CSV"));
    }
    let cols = (0..ncols)
        .map(|j| rows.iter().map(|r| r[j]).collect::<Vec<f64>>())
        .collect();
    ColMatrix::from_columns(cols)
}

/// Serializable mirror of a fit report (the model is written as factor
/// files, not embedded here).
#[derive(Debug, Serialize)]
struct ReportJson<'a> {
    iterations: usize,
    termination: String,
    final_objective: f64,
    final_grad_norm: f64,
    initial_grad_norm: f64,
    relative_grad_norm: f64,
    wall_seconds: f64,
    evaluations: usize,
    trace: &'a [crate::rcg::IterationRecord],
}

pub fn report_to_json(report: &FitReport) -> serde_json::Value {
    let rel = if report.initial_grad_norm > 0.0 {
        report.final_grad_norm / report.initial_grad_norm
    } else {
        0.0
    };
    serde_json::to_value(ReportJson {
        iterations: report.iterations,
        termination: report.termination.to_string(),
        final_objective: report.final_objective,
        final_grad_norm: report.final_grad_norm,
        initial_grad_norm: report.initial_grad_norm,
        relative_grad_norm: rel,
        wall_seconds: report.wall_seconds,
        evaluations: report.evaluations,
        trace: &report.trace,
    })
    .expect("report serialization cannot fail")
}

/// Writes factor CSVs, the weights CSV, the fit report JSON, and the
/// manifest into `dir`. Returns the manifest path. The factor and weight
/// files are byte-reproducible for identical fits; the report contains
/// wall-clock times and is not.
pub fn write_fit_artifacts(
    dir: impl AsRef<Path>,
    report: &FitReport,
    seed: u64,
    config_hash: &str,
) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let model = &report.model;
    let mut factor_files = Vec::new();
    for (k, factor) in model.factors().iter().enumerate() {
        let name = format!("factor_mode{}.csv", k + 1);
        write_matrix_csv(&dir.join(&name), factor)?;
        factor_files.push(name);
    }
    let weights_file = "weights.csv".to_string();
    {
        let file = fs::File::create(dir.join(&weights_file))?;
        let mut w = std::io::BufWriter::new(file);
        for weight in model.weights() {
            writeln!(w, "{weight}")?;
        }
    }
    let report_file = "fit_report.json".to_string();
    fs::write(
        dir.join(&report_file),
        serde_json::to_string_pretty(&report_to_json(report)).expect("report json"),
    )?;
    let manifest = Manifest {
        shape: model.shape().to_vec(),
        rank: model.rank(),
        seed,
        config_hash: config_hash.to_string(),
        factor_files,
        weights_file,
        report_file,
    };
    let path = dir.join("manifest.json");
    fs::write(
        &path,
        serde_json::to_string_pretty(&manifest).expect("manifest json"),
    )?;
    Ok(path)
}

/// Reads a model back from a manifest written by [`write_fit_artifacts`].
/// Accepts either the manifest path or its directory.
pub fn read_model(path: impl AsRef<Path>) -> Result<CpdModel> {
    let path = path.as_ref();
    let manifest_path = if path.is_dir() {
        path.join("manifest.json")
    } else {
        path.to_path_buf()
    };
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| Error::invalid(format!("bad manifest: {e}")))?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let factors = manifest
        .factor_files
        .iter()
        .map(|f| read_matrix_csv(&dir.join(f)))
        .collect::<Result<Vec<_>>>()?;
    let weights_text = fs::read_to_string(dir.join(&manifest.weights_file))?;
    let weights = weights_text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.parse::<f64>()
                .map_err(|_| Error::parse(i + 1, format!("bad weight `{l}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    CpdModel::new(weights, factors)
}

/// Stable hash of a serializable configuration, for manifests.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    use sha2::{Digest, Sha256};
    let json = serde_json::to_string(config).expect("config serialization");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{ObjectiveSpec, Observations};
    use crate::rcg::{minimize, OptimizerConfig};
    use crate::segre::random_point;
    use proptest::prelude::*;

    #[test]
    fn parse_coo_fixture() {
        let text = "# comment line\nshape 2 3\n1 1 0.5\n# another comment\n2 3 -1.25\n";
        let obs = parse_coo(text).unwrap();
        assert_eq!(obs.shape(), &[2, 3]);
        assert_eq!(obs.len(), 2);
        let entries: Vec<(Vec<usize>, f64)> =
            obs.iter().map(|(i, v)| (i.to_vec(), v)).collect();
        assert_eq!(entries[0], (vec![0, 0], 0.5));
        assert_eq!(entries[1], (vec![1, 2], -1.25));
    }

    #[test]
    fn parse_coo_errors_carry_line_numbers() {
        let err = parse_coo("shape 2 2\n3 1 0.5\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        // 0 is out of range for 1-based indices.
        assert!(parse_coo("shape 2 2\n0 1 0.5\n").is_err());
        // Wrong token count.
        assert!(parse_coo("shape 2 2\n1 1\n").is_err());
        // Missing header.
        assert!(parse_coo("1 1 0.5\n").is_err());
        // Duplicates are rejected by the container.
        assert!(parse_coo("shape 2 2\n1 1 0.5\n1 1 0.25\n").is_err());
    }

    #[test]
    fn slab_roundtrip() {
        let tensor = DenseTensor::new(
            vec![2, 2, 3],
            (0..12).map(|i| i as f64 * 0.25 - 1.0).collect(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.slab");
        write_slab(&path, &tensor).unwrap();
        let back = read_slab(&path).unwrap();
        assert_eq!(back, tensor);
    }

    #[test]
    fn auto_detection() {
        let dir = tempfile::tempdir().unwrap();
        let tensor = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let slab_path = dir.path().join("dense.txt");
        write_slab(&slab_path, &tensor).unwrap();
        match read_tensor_auto(&slab_path).unwrap() {
            TensorFile::Dense(t) => assert_eq!(t, tensor),
            _ => panic!("expected dense"),
        }

        let obs = SparseObservations::new(vec![2, 2], vec![(vec![0, 1], 2.0)]).unwrap();
        let coo_path = dir.path().join("sparse.txt");
        write_coo(&coo_path, &obs).unwrap();
        match read_tensor_auto(&coo_path).unwrap() {
            TensorFile::Sparse(o) => assert_eq!(o, obs),
            _ => panic!("expected sparse"),
        }
    }

    #[test]
    fn fit_artifacts_roundtrip_exactly() {
        let model = random_point(&[4, 3, 2], 2, 1.0, 9).unwrap();
        let dense = model.to_dense().unwrap();
        let spec = ObjectiveSpec::least_squares(Observations::Dense(dense));
        let config = OptimizerConfig {
            max_iters: 5,
            ..OptimizerConfig::default()
        };
        let report = minimize(random_point(&[4, 3, 2], 2, 1.0, 10).unwrap(), &spec, &config)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = write_fit_artifacts(dir.path(), &report, 10, "abc").unwrap();
        let back = read_model(&manifest).unwrap();
        // Shortest-roundtrip float formatting makes the roundtrip exact.
        assert_eq!(back, report.model);
        let loaded: Manifest =
            serde_json::from_str(&fs::read_to_string(&manifest).unwrap()).unwrap();
        assert_eq!(loaded.rank, 2);
        assert_eq!(loaded.shape, vec![4, 3, 2]);
        assert_eq!(loaded.seed, 10);
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = config_hash(&OptimizerConfig::default());
        let b = config_hash(&OptimizerConfig::default());
        assert_eq!(a, b);
        let c = config_hash(&OptimizerConfig {
            grad_tol: 1e-7,
            ..OptimizerConfig::default()
        });
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn coo_roundtrip(values in proptest::collection::vec(-1e3f64..1e3, 1..20)) {
            // Distinct indices along a diagonal-ish pattern in a 20x7 grid.
            let entries: Vec<(Vec<usize>, f64)> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| (vec![i % 20, (i * 3 + 1) % 7], v))
                .collect();
            let obs = SparseObservations::new(vec![20, 7], entries).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.coo");
            write_coo(&path, &obs).unwrap();
            let back = read_coo(&path).unwrap();
            prop_assert_eq!(back, obs);
        }
    }
}
