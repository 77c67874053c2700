//! Command-line driver: `fit`, `rating-pipeline`, `mask-pipeline`, and
//! `diagnose` subcommands over the segre-cpd library.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use segre_cpd::diagnostics::{corcondia, relative_error, PredictionRule};
use segre_cpd::formats::{
    config_hash, read_coo, read_model, read_slab, read_tensor_auto, write_fit_artifacts,
};
use segre_cpd::objective::{ObjectiveSpec, Observations};
use segre_cpd::pipeline::{
    run_mask_pipeline, run_rating_pipeline, ExperimentConfig, PenaltyOptions,
};
use segre_cpd::ratings::parse_ratings;
use segre_cpd::rcg::{minimize, OptimizerConfig};
use segre_cpd::segre::random_point;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "segre-cpd",
    about = "Rank-r tensor approximation and completion by Riemannian conjugate gradient \
             on products of Segre manifolds",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum FileFormat {
    Auto,
    Coo,
    Slab,
}

#[derive(Args)]
struct OptimizerArgs {
    /// Absolute metric gradient-norm stopping threshold.
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 1000)]
    max_iters: usize,
    /// Weight scale of the random starting point.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        OptimizerConfig {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
            ..OptimizerConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit a rank-r model to an observation file and write the factors.
    Fit {
        /// Input tensor: COO observations or a dense slab.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = FileFormat::Auto)]
        format: FileFormat,
        #[arg(long)]
        rank: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Range penalty pushing entries toward [0, 1].
        #[arg(long, value_enum, default_value_t = Toggle::Off)]
        penalty: Toggle,
        #[arg(long, default_value_t = 1.0)]
        penalty_weight: f64,
        #[arg(long, default_value_t = 9)]
        penalty_power: u32,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        /// Output directory for factor CSVs, manifest, and the fit report.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank sweep on a ratings table with per-rule RMSE reports.
    RatingPipeline {
        /// Ratings file: `user::item::rating[::timestamp]` lines or CSV
        /// with a header.
        #[arg(long)]
        ratings: PathBuf,
        /// Single rank to evaluate.
        #[arg(long, conflicts_with = "ranks")]
        rank: Option<usize>,
        /// Rank sweep: `a..b` (inclusive) or a comma list.
        #[arg(long)]
        ranks: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Train fraction of each 80/20-style split.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, value_enum, default_value_t = Toggle::On)]
        penalty: Toggle,
        /// Evaluate only this prediction rule (1-4), or all.
        #[arg(long, default_value = "all")]
        rule: String,
        /// Cap the penalty sum at this many sampled entries (extension for
        /// large tensors; exact penalty when absent).
        #[arg(long)]
        penalty_subsample: Option<usize>,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank sweep plus masked-sampling sweep against a complete tensor.
    MaskPipeline {
        /// Complete reference tensor (COO with all entries, or slab).
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = FileFormat::Auto)]
        format: FileFormat,
        /// Ranks for the full-data sweep, `a..b` or comma list.
        #[arg(long, default_value = "1..5")]
        ranks: String,
        /// Fixed rank of the phi sweep.
        #[arg(long, default_value_t = 3)]
        mask_rank: usize,
        /// Sampling budgets as multiples of the secant dimension bound,
        /// comma separated.
        #[arg(long, default_value = "")]
        phi: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        optimizer: OptimizerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Relative error and core consistency of stored factors against a
    /// reference tensor.
    Diagnose {
        /// Fit directory or manifest.json path.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, value_enum, default_value_t = FileFormat::Auto)]
        format: FileFormat,
    },
}

fn parse_ranks(single: Option<usize>, list: &Option<String>, default: &str) -> Result<Vec<usize>> {
    if let Some(r) = single {
        return Ok(vec![r]);
    }
    let spec = list.as_deref().unwrap_or(default);
    parse_rank_spec(spec)
}

fn parse_rank_spec(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().context("bad rank range start")?;
        let b: usize = b.trim().parse().context("bad rank range end")?;
        if a == 0 || b < a {
            bail!("bad rank range `{spec}`");
        }
        return Ok((a..=b).collect());
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .with_context(|| format!("bad rank `{t}`"))
        })
        .collect()
}

fn parse_phis(spec: &str) -> Result<Vec<f64>> {
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad phi `{t}`"))
        })
        .collect()
}

fn parse_rules(spec: &str) -> Result<Vec<PredictionRule>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(PredictionRule::all().to_vec());
    }
    spec.split(',')
        .map(|t| {
            let i: usize = t.trim().parse().with_context(|| format!("bad rule `{t}`"))?;
            PredictionRule::from_index(i).map_err(anyhow::Error::from)
        })
        .collect()
}

fn read_reference(path: &PathBuf, format: FileFormat) -> Result<segre_cpd::tensor::DenseTensor> {
    let dense = match format {
        FileFormat::Coo => read_coo(path)?.to_dense()?,
        FileFormat::Slab => read_slab(path)?,
        FileFormat::Auto => read_tensor_auto(path)?.into_dense()?,
    };
    Ok(dense)
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Fit {
            input,
            format,
            rank,
            seed,
            penalty,
            penalty_weight,
            penalty_power,
            optimizer,
            out,
        } => {
            let obs = match format {
                FileFormat::Coo => read_coo(&input)?,
                FileFormat::Slab => {
                    segre_cpd::tensor::SparseObservations::from_dense(&read_slab(&input)?)
                }
                FileFormat::Auto => read_tensor_auto(&input)?.into_sparse(),
            };
            let shape = obs.shape().to_vec();
            let mut spec = ObjectiveSpec::least_squares(Observations::Sparse(obs));
            if matches!(penalty, Toggle::On) {
                spec = spec.with_penalty(penalty_weight, penalty_power)?;
            }
            let opt = optimizer.config();
            let penalty_on = matches!(penalty, Toggle::On);
            let hash = config_hash(&(&opt, rank, seed, penalty_on, penalty_weight, penalty_power));
            let start = random_point(&shape, rank, optimizer.scale, seed)?;
            let report = minimize(start, &spec, &opt)?;
            let manifest = write_fit_artifacts(&out, &report, seed, &hash)?;
            println!(
                "fit rank {rank}: {} after {} iterations, objective {:.6e}, gradient norm {:.6e}",
                report.termination, report.iterations, report.final_objective, report.final_grad_norm
            );
            println!("artifacts: {}", manifest.display());
        }
        Command::RatingPipeline {
            ratings,
            rank,
            ranks,
            seed,
            split,
            penalty,
            rule,
            penalty_subsample,
            optimizer,
            out,
        } => {
            let table = parse_ratings(&ratings)?;
            let config = ExperimentConfig {
                ranks: parse_ranks(rank, &ranks, "1..8")?,
                split_fraction: split,
                seed,
                init_scale: optimizer.scale,
                penalty: PenaltyOptions {
                    weight: if matches!(penalty, Toggle::On) { 1.0 } else { 0.0 },
                    power: 9,
                    subsample: penalty_subsample,
                },
                optimizer: optimizer.config(),
                rules: parse_rules(&rule)?,
                out_dir: out,
                ..ExperimentConfig::default()
            };
            let report = run_rating_pipeline(&table, &config)?;
            for row in &report.rows {
                let rmses: Vec<String> = config
                    .rules
                    .iter()
                    .zip(&row.val_rmse)
                    .map(|(r, v)| format!("rule{} {:.4}", r.index(), v))
                    .collect();
                println!(
                    "rank {}: val RMSE {} ({} iterations, {})",
                    row.rank,
                    rmses.join(", "),
                    row.iterations,
                    row.termination
                );
            }
            println!("reports: {}", report.out_dir.display());
        }
        Command::MaskPipeline {
            reference,
            format,
            ranks,
            mask_rank,
            phi,
            seed,
            optimizer,
            out,
        } => {
            let tensor = read_reference(&reference, format)?;
            let config = ExperimentConfig {
                ranks: parse_rank_spec(&ranks)?,
                mask_rank,
                phis: parse_phis(&phi)?,
                seed,
                init_scale: optimizer.scale,
                penalty: PenaltyOptions {
                    weight: 0.0,
                    ..PenaltyOptions::default()
                },
                optimizer: optimizer.config(),
                out_dir: out,
                ..ExperimentConfig::default()
            };
            let report = run_mask_pipeline(&tensor, &config)?;
            for row in &report.rank_rows {
                println!(
                    "rank {}: relative error {:.6} ({} iterations, {})",
                    row.rank, row.relative_error, row.iterations, row.termination
                );
            }
            for row in &report.phi_rows {
                println!(
                    "phi {}: {} entries, relative error {:.6}, core consistency {:.2}",
                    row.phi, row.count, row.relative_error, row.corcondia
                );
            }
            println!("reports: {}", report.out_dir.display());
        }
        Command::Diagnose {
            model,
            reference,
            format,
        } => {
            let model = read_model(&model)?;
            let tensor = read_reference(&reference, format)?;
            let err = relative_error(&tensor, &model)?;
            let cc = corcondia(&tensor, &model)?;
            let out = serde_json::json!({
                "relative_error": err,
                "corcondia": cc.value,
                "corcondia_regularized": cc.regularized,
                "rank": model.rank(),
                "shape": model.shape(),
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}
