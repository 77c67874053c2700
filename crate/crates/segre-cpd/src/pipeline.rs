//! The two experiment pipelines and their report files.
//!
//! * [`run_rating_pipeline`]: one-hot rating completion. The table is split
//!   into an outer train/test pair once; each rank in the sweep gets a
//!   fresh inner split of the training set, a penalized fit on the inner
//!   training part, and RMSE evaluations of every configured prediction
//!   rule on both the inner held-out pairs and the outer test pairs.
//!   Predicted ratings are clipped to `[1, 5]` before RMSE. Writes
//!   `rmse_by_rank.csv`, per-fit artifacts, and `summary.json` (which
//!   carries the wall-clock timings, including a top-k recommendation
//!   probe).
//! * [`run_mask_pipeline`]: completion of a known reference tensor. A rank
//!   sweep fits the complete tensor (`relerr_by_rank.csv`); a phi sweep at
//!   a fixed rank keeps only `phi * secant_dim_bound(r, dims)` sampled
//!   entries, fits on the mask, and reports relative error against the
//!   full reference plus core consistency (`phi_sweep.csv`). Factor
//!   matrices of every fit are written as CSVs for plotting.
//!
//! Runs are reproducible: identical configs and seeds produce byte
//! identical CSVs (timings live only in `summary.json` and the fit report
//! JSONs).

use crate::diagnostics::{corcondia, predict_rating, relative_error, rmse, secant_dim_bound, PredictionRule};
use crate::error::{Error, Result};
use crate::formats::{config_hash, write_fit_artifacts};
use crate::objective::{ObjectiveSpec, Observations};
use crate::ratings::{one_hot_tensorize, split_train_test, RatingsTable};
use crate::rcg::{minimize, OptimizerConfig, Termination};
use crate::segre::random_point;
use crate::tensor::{DenseTensor, SparseObservations};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Range-penalty settings for the rating pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct PenaltyOptions {
    pub weight: f64,
    pub power: u32,
    /// When set, the penalty is evaluated on this many sampled entries
    /// instead of the full ambient shape (extension for large tensors).
    pub subsample: Option<usize>,
}

impl Default for PenaltyOptions {
    fn default() -> Self {
        PenaltyOptions {
            weight: 1.0,
            power: 9,
            subsample: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    /// Ranks for the sweep (both pipelines).
    pub ranks: Vec<usize>,
    /// Fixed rank of the phi sweep in the mask pipeline.
    pub mask_rank: usize,
    /// Sampling budgets, in multiples of the secant dimension bound.
    pub phis: Vec<f64>,
    pub split_fraction: f64,
    pub seed: u64,
    /// Weight scale of random starting points.
    pub init_scale: f64,
    pub penalty: PenaltyOptions,
    pub optimizer: OptimizerConfig,
    pub rules: Vec<PredictionRule>,
    /// Where report files land. Not part of the config hash: runs into
    /// different directories are still the same experiment.
    #[serde(skip)]
    pub out_dir: PathBuf,
    /// Size of the top-k timing probe: k recommendations for each of m
    /// sampled users.
    pub topk_users: usize,
    pub topk_items: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            ranks: vec![3],
            mask_rank: 3,
            phis: Vec::new(),
            split_fraction: 0.8,
            seed: 0,
            init_scale: 1.0,
            penalty: PenaltyOptions::default(),
            optimizer: OptimizerConfig::default(),
            rules: PredictionRule::all().to_vec(),
            out_dir: PathBuf::from("."),
            topk_users: 100,
            topk_items: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.ranks.is_empty() || self.ranks.contains(&0) {
            return Err(Error::invalid("ranks must be a nonempty list of positives"));
        }
        if self.mask_rank == 0 {
            return Err(Error::invalid("mask rank must be positive"));
        }
        let f = self.split_fraction;
        if f.is_nan() || f <= 0.0 || f >= 1.0 {
            return Err(Error::invalid("split fraction must lie in (0, 1)"));
        }
        if self.phis.iter().any(|&p| p <= 0.0 || p.is_nan()) {
            return Err(Error::invalid("phi values must be positive"));
        }
        if self.init_scale <= 0.0 || self.init_scale.is_nan() {
            return Err(Error::invalid("init scale must be positive"));
        }
        if self.rules.is_empty() {
            return Err(Error::invalid("need at least one prediction rule"));
        }
        Ok(())
    }
}

/// Splitmix64 step, used to derive independent sub-seeds from the base
/// seed so every fit in a sweep gets its own reproducible stream. The
/// rating pipeline uses salt 1 for the outer split, `100 + rank` for the
/// inner splits, and `300 + rank` for starting points.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `count` distinct entries of `tensor`, uniform without replacement,
/// deterministic per seed. Entries are returned in index order.
pub fn sample_mask(tensor: &DenseTensor, count: usize, seed: u64) -> Result<SparseObservations> {
    if count > tensor.len() {
        return Err(Error::invalid(format!(
            "cannot sample {count} of {} entries",
            tensor.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks = rand::seq::index::sample(&mut rng, tensor.len(), count).into_vec();
    picks.sort_unstable();
    let d = tensor.order();
    let mut idx = vec![0usize; d];
    let entries = picks
        .into_iter()
        .map(|lin| {
            tensor.multi_index(lin, &mut idx);
            (idx.clone(), tensor.data()[lin])
        })
        .collect();
    SparseObservations::new(tensor.shape().to_vec(), entries)
}

fn penalty_spec(
    obs: SparseObservations,
    penalty: &PenaltyOptions,
    shape: &[usize],
    seed: u64,
) -> Result<ObjectiveSpec> {
    let mut spec = ObjectiveSpec::least_squares(Observations::Sparse(obs))
        .with_penalty(penalty.weight, penalty.power)?;
    if let (Some(count), true) = (penalty.subsample, penalty.weight > 0.0) {
        let total: usize = shape.iter().product();
        let zeros = DenseTensor::zeros(shape.to_vec())?;
        let sample = sample_mask(&zeros, count.min(total), seed)?;
        spec = spec.with_penalty_subsample(sample)?;
    }
    Ok(spec)
}

/// One rank of the rating sweep.
#[derive(Debug, Clone, Serialize)]
pub struct RatingRankRow {
    pub rank: usize,
    pub iterations: usize,
    pub termination: Termination,
    /// RMSE on the inner held-out pairs, per configured rule.
    pub val_rmse: Vec<f64>,
    /// RMSE on the outer test pairs, per configured rule.
    pub test_rmse: Vec<f64>,
    pub fit_seconds: f64,
    pub topk_seconds: f64,
    /// Pairs where the rescale rule degenerated and fell back to the
    /// weighted average.
    pub rescale_fallbacks: usize,
}

#[derive(Debug)]
pub struct RatingPipelineReport {
    pub rows: Vec<RatingRankRow>,
    pub out_dir: PathBuf,
}

struct PredictionOutcome {
    value: f64,
    fell_back: bool,
}

/// Predicted, clipped rating for one pair. A degenerate rescale rule falls
/// back to the plain weighted average and flags it.
fn predict_pair(
    model: &crate::tensor::CpdModel,
    user: usize,
    item: usize,
    rule: PredictionRule,
) -> PredictionOutcome {
    let scores: [f64; 5] = std::array::from_fn(|k| model.entry(&[user, item, k]));
    match predict_rating(&scores, rule) {
        Ok(v) => PredictionOutcome {
            value: v.clamp(1.0, 5.0),
            fell_back: false,
        },
        Err(_) => PredictionOutcome {
            value: predict_rating(&scores, PredictionRule::WeightedAverage)
                .expect("weighted average is total")
                .clamp(1.0, 5.0),
            fell_back: true,
        },
    }
}

fn rmse_for_rule(
    model: &crate::tensor::CpdModel,
    rows: &[crate::ratings::RatingRow],
    rule: PredictionRule,
    fallbacks: &mut usize,
) -> Result<f64> {
    let mut pred = Vec::with_capacity(rows.len());
    let mut actual = Vec::with_capacity(rows.len());
    for row in rows {
        let outcome = predict_pair(model, row.user, row.item, rule);
        if outcome.fell_back {
            *fallbacks += 1;
        }
        pred.push(outcome.value);
        actual.push(row.rating as f64);
    }
    rmse(&pred, &actual)
}

/// Top-k recommendation timing probe: scores every item for `m` sampled
/// users with the weighted-average rule and keeps the best `k`.
fn topk_probe(
    model: &crate::tensor::CpdModel,
    n_users: usize,
    n_items: usize,
    m: usize,
    k: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let users = rand::seq::index::sample(&mut rng, n_users, m.min(n_users)).into_vec();
    let k = k.min(n_items);
    let start = Instant::now();
    let mut sink = 0.0;
    for &u in &users {
        let mut scored: Vec<(f64, usize)> = (0..n_items)
            .map(|i| (predict_pair(model, u, i, PredictionRule::WeightedAverage).value, i))
            .collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
        sink += scored[..k].iter().map(|(s, _)| s).sum::<f64>();
    }
    // Keep the work observable so it cannot be optimized away.
    std::hint::black_box(sink);
    start.elapsed().as_secs_f64()
}

#[derive(Serialize)]
struct RatingSummary<'a> {
    config_hash: String,
    n_ratings: usize,
    n_users: usize,
    n_items: usize,
    outer_train: usize,
    outer_test: usize,
    rules: Vec<usize>,
    /// Rule with the lowest validation RMSE over the whole sweep, and the
    /// second-best measured rule.
    best_rule: Option<usize>,
    runner_up_rule: Option<usize>,
    note: &'a str,
    wall_seconds: f64,
    rows: &'a [RatingRankRow],
}

/// Ranks the configured rules by their best validation RMSE across the
/// sweep; returns the 1-based indices of the best and second-best rules.
fn rule_leaderboard(
    rules: &[PredictionRule],
    rows: &[RatingRankRow],
) -> (Option<usize>, Option<usize>) {
    let mut scored: Vec<(f64, usize)> = rules
        .iter()
        .enumerate()
        .map(|(i, rule)| {
            let best = rows
                .iter()
                .map(|r| r.val_rmse[i])
                .fold(f64::INFINITY, f64::min);
            (best, rule.index())
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut it = scored.into_iter().map(|(_, idx)| idx);
    (it.next(), it.next())
}

pub fn run_rating_pipeline(
    table: &RatingsTable,
    config: &ExperimentConfig,
) -> Result<RatingPipelineReport> {
    config.validate()?;
    if table.is_empty() {
        return Err(Error::invalid("rating table is empty"));
    }
    let clock = Instant::now();
    let hash = config_hash(config);
    fs::create_dir_all(&config.out_dir)?;

    let (train, test) = split_train_test(table, config.split_fraction, derive_seed(config.seed, 1))?;
    if test.is_empty() {
        return Err(Error::invalid("outer test set is empty"));
    }
    if train.is_empty() {
        return Err(Error::invalid("outer training set is empty"));
    }
    let shape = table.tensor_shape();

    let mut rows = Vec::new();
    for &rank in &config.ranks {
        let salt = rank as u64;
        let (fit_set, val_set) =
            split_train_test(&train, config.split_fraction, derive_seed(config.seed, 100 + salt))?;
        if fit_set.is_empty() || val_set.is_empty() {
            return Err(Error::invalid("inner split produced an empty set"));
        }
        let obs = one_hot_tensorize(&fit_set)?;
        let spec = penalty_spec(obs, &config.penalty, &shape, derive_seed(config.seed, 200 + salt))?;
        let start = random_point(&shape, rank, config.init_scale, derive_seed(config.seed, 300 + salt))?;

        let fit_clock = Instant::now();
        let report = minimize(start, &spec, &config.optimizer)?;
        let fit_seconds = fit_clock.elapsed().as_secs_f64();

        let mut fallbacks = 0usize;
        let mut val_rmse = Vec::new();
        let mut test_rmse = Vec::new();
        for &rule in &config.rules {
            val_rmse.push(rmse_for_rule(&report.model, val_set.rows(), rule, &mut fallbacks)?);
            test_rmse.push(rmse_for_rule(&report.model, test.rows(), rule, &mut fallbacks)?);
        }
        let topk_seconds = topk_probe(
            &report.model,
            table.n_users(),
            table.n_items(),
            config.topk_users,
            config.topk_items,
            derive_seed(config.seed, 400 + salt),
        );

        write_fit_artifacts(
            config.out_dir.join(format!("fit_rank{rank}")),
            &report,
            config.seed,
            &hash,
        )?;
        rows.push(RatingRankRow {
            rank,
            iterations: report.iterations,
            termination: report.termination,
            val_rmse,
            test_rmse,
            fit_seconds,
            topk_seconds,
            rescale_fallbacks: fallbacks,
        });
        // Flush partial results after every fit so a failed or interrupted
        // sweep keeps what it already computed.
        write_rating_csv(&config.out_dir.join("rmse_by_rank.csv"), &config.rules, &rows)?;
    }

    // The observed-id maps: dense indices used by the factor files, in
    // terms of the input's original ids.
    write_id_map(&config.out_dir.join("user_ids.csv"), "user", table.user_ids())?;
    write_id_map(&config.out_dir.join("item_ids.csv"), "item", table.item_ids())?;
    let (best_rule, runner_up_rule) = rule_leaderboard(&config.rules, &rows);
    let summary = RatingSummary {
        config_hash: hash,
        n_ratings: table.len(),
        n_users: table.n_users(),
        n_items: table.n_items(),
        outer_train: train.len(),
        outer_test: test.len(),
        rules: config.rules.iter().map(|r| r.index()).collect(),
        best_rule,
        runner_up_rule,
        note: "predicted ratings are clipped to [1, 5] before RMSE; val_rmse uses the \
               per-rank inner split of the training set, test_rmse the outer test set; \
               best/runner-up label the measured validation ranking of the rules",
        wall_seconds: clock.elapsed().as_secs_f64(),
        rows: &rows,
    };
    fs::write(
        config.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary json"),
    )?;
    Ok(RatingPipelineReport {
        rows,
        out_dir: config.out_dir.clone(),
    })
}

fn write_id_map(path: &Path, kind: &str, ids: &[u64]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "index,{kind}_id")?;
    for (i, id) in ids.iter().enumerate() {
        writeln!(w, "{},{id}", i + 1)?;
    }
    Ok(())
}

fn write_rating_csv(path: &Path, rules: &[PredictionRule], rows: &[RatingRankRow]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let mut header = vec!["rank".to_string(), "iterations".to_string(), "termination".to_string()];
    for r in rules {
        header.push(format!("val_rmse_rule{}", r.index()));
    }
    for r in rules {
        header.push(format!("test_rmse_rule{}", r.index()));
    }
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut fields = vec![
            row.rank.to_string(),
            row.iterations.to_string(),
            row.termination.to_string(),
        ];
        for v in &row.val_rmse {
            fields.push(format!("{v}"));
        }
        for v in &row.test_rmse {
            fields.push(format!("{v}"));
        }
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

/// One rank of the full-data sweep in the mask pipeline.
#[derive(Debug, Clone, Serialize)]
pub struct FullRankRow {
    pub rank: usize,
    pub relative_error: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub fit_seconds: f64,
}

/// One sampling budget of the phi sweep.
#[derive(Debug, Clone, Serialize)]
pub struct PhiRow {
    pub phi: f64,
    /// Number of observed entries, `round(phi * secant_dim_bound)`.
    pub count: usize,
    /// Relative error against the full reference tensor.
    pub relative_error: f64,
    pub corcondia: f64,
    pub corcondia_regularized: bool,
    pub iterations: usize,
    pub termination: Termination,
    pub fit_seconds: f64,
}

#[derive(Debug)]
pub struct MaskPipelineReport {
    pub rank_rows: Vec<FullRankRow>,
    pub phi_rows: Vec<PhiRow>,
    pub out_dir: PathBuf,
}

#[derive(Serialize)]
struct MaskSummary<'a> {
    config_hash: String,
    shape: Vec<usize>,
    mask_rank: usize,
    secant_dim_bound: usize,
    wall_seconds: f64,
    rank_rows: &'a [FullRankRow],
    phi_rows: &'a [PhiRow],
}

pub fn run_mask_pipeline(
    reference: &DenseTensor,
    config: &ExperimentConfig,
) -> Result<MaskPipelineReport> {
    config.validate()?;
    if reference.frobenius_norm() == 0.0 {
        return Err(Error::invalid("reference tensor is zero"));
    }
    let clock = Instant::now();
    let hash = config_hash(config);
    fs::create_dir_all(&config.out_dir)?;
    let shape = reference.shape().to_vec();

    // Rank sweep on the complete tensor.
    let mut rank_rows = Vec::new();
    for &rank in &config.ranks {
        let spec = ObjectiveSpec::least_squares(Observations::Dense(reference.clone()));
        let start = random_point(&shape, rank, config.init_scale, derive_seed(config.seed, 500 + rank as u64))?;
        let fit_clock = Instant::now();
        let report = minimize(start, &spec, &config.optimizer)?;
        let fit_seconds = fit_clock.elapsed().as_secs_f64();
        let err = relative_error(reference, &report.model)?;
        write_fit_artifacts(
            config.out_dir.join(format!("full_rank{rank}")),
            &report,
            config.seed,
            &hash,
        )?;
        rank_rows.push(FullRankRow {
            rank,
            relative_error: err,
            iterations: report.iterations,
            termination: report.termination,
            fit_seconds,
        });
        write_full_rank_csv(&config.out_dir.join("relerr_by_rank.csv"), &rank_rows)?;
    }

    // Phi sweep at the fixed mask rank.
    let bound = secant_dim_bound(config.mask_rank, &shape)?;
    let mut phi_rows = Vec::new();
    write_phi_csv(&config.out_dir.join("phi_sweep.csv"), &phi_rows)?;
    for &phi in &config.phis {
        let count = ((phi * bound as f64).round() as usize)
            .max(1)
            .min(reference.len());
        let mask = sample_mask(reference, count, derive_seed(config.seed, 600 ^ phi.to_bits()))?;
        let spec = ObjectiveSpec::least_squares(Observations::Sparse(mask));
        let start = random_point(
            &shape,
            config.mask_rank,
            config.init_scale,
            derive_seed(config.seed, 700 ^ phi.to_bits()),
        )?;
        let fit_clock = Instant::now();
        let report = minimize(start, &spec, &config.optimizer)?;
        let fit_seconds = fit_clock.elapsed().as_secs_f64();
        let err = relative_error(reference, &report.model)?;
        let cc = corcondia(reference, &report.model)?;
        write_fit_artifacts(
            config.out_dir.join(format!("phi_{phi}")),
            &report,
            config.seed,
            &hash,
        )?;
        phi_rows.push(PhiRow {
            phi,
            count,
            relative_error: err,
            corcondia: cc.value,
            corcondia_regularized: cc.regularized,
            iterations: report.iterations,
            termination: report.termination,
            fit_seconds,
        });
        write_phi_csv(&config.out_dir.join("phi_sweep.csv"), &phi_rows)?;
    }
    let summary = MaskSummary {
        config_hash: hash,
        shape: shape.clone(),
        mask_rank: config.mask_rank,
        secant_dim_bound: bound,
        wall_seconds: clock.elapsed().as_secs_f64(),
        rank_rows: &rank_rows,
        phi_rows: &phi_rows,
    };
    fs::write(
        config.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary).expect("summary json"),
    )?;
    Ok(MaskPipelineReport {
        rank_rows,
        phi_rows,
        out_dir: config.out_dir.clone(),
    })
}

fn write_full_rank_csv(path: &Path, rows: &[FullRankRow]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "rank,relative_error,iterations,termination")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{}",
            r.rank, r.relative_error, r.iterations, r.termination
        )?;
    }
    Ok(())
}

fn write_phi_csv(path: &Path, rows: &[PhiRow]) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "phi,count,relative_error,corcondia,corcondia_regularized,iterations,termination"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.phi,
            r.count,
            r.relative_error,
            r.corcondia,
            r.corcondia_regularized,
            r.iterations,
            r.termination
        )?;
    }
    Ok(())
}
