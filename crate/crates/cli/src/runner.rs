//! The generate -> train -> evaluate pipeline and the sweep driver.

use std::fs;
use std::path::{Path, PathBuf};

use mcvae::evaluation::{condition_diagnostics, importance_sampling_loglik, EvalReport};
use mcvae::models::{AnyModel, LinearHvae};
use mcvae::numerics::RngStream;
use mcvae::training::{train, write_events_jsonl, write_metrics_csv, PreconditionerKind};

use crate::config::{DatasetSpec, ExperimentConfig, RawConfig};
use crate::dataset::{generate_linear_data, read_dataset, write_dataset};
use crate::modelio::{build_model, load_model, save_model};
use crate::{CliError, Result};

pub struct RunArtifacts {
    pub dataset: PathBuf,
    pub truth: Option<PathBuf>,
    pub model: PathBuf,
    pub metrics: PathBuf,
    pub events: PathBuf,
    pub report: PathBuf,
}

fn artifacts(out: &Path) -> RunArtifacts {
    RunArtifacts {
        dataset: out.join("dataset.bin"),
        truth: Some(out.join("truth.ckpt")),
        model: out.join("model.ckpt"),
        metrics: out.join("metrics.csv"),
        events: out.join("events.jsonl"),
        report: out.join("eval.json"),
    }
}

/// Writes the dataset (and, for synthetic data, the generating model's
/// checkpoint) under `out`.
pub fn generate_data(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let paths = artifacts(out);
    match &cfg.dataset {
        DatasetSpec::SyntheticLinear {
            n1,
            n2,
            dx,
            n,
            obs_sigma,
            gen_seed,
        } => {
            let (truth, data) = generate_linear_data(*n1, *n2, *dx, *n, *obs_sigma, *gen_seed);
            write_dataset(&paths.dataset, *dx, &data)?;
            save_model(paths.truth.as_ref().unwrap(), &truth, None)?;
            Ok(())
        }
        DatasetSpec::File(src) => {
            let data = read_dataset(src)?;
            let dx = data.first().map(Vec::len).unwrap_or(0);
            write_dataset(&paths.dataset, dx, &data)?;
            Ok(())
        }
    }
}

fn load_or_generate(cfg: &ExperimentConfig, out: &Path) -> Result<(Vec<Vec<f64>>, Option<LinearHvae>)> {
    let paths = artifacts(out);
    match &cfg.dataset {
        DatasetSpec::SyntheticLinear { .. } => {
            // Regeneration is deterministic in gen_seed, so reruns
            // overwrite with identical bytes.
            generate_data(cfg, out)?;
        }
        DatasetSpec::File(_) => {
            if !paths.dataset.exists() {
                generate_data(cfg, out)?;
            }
        }
    }
    let data = read_dataset(&paths.dataset)?;
    if data.is_empty() {
        return Err(CliError::Runtime("dataset is empty".into()));
    }
    let truth = match paths.truth {
        Some(ref p) if p.exists() => match load_model(p)? {
            (AnyModel::Linear(m), _) => Some(m),
            _ => None,
        },
        _ => None,
    };
    Ok((data, truth))
}

/// Trains per the config, writing metrics, the event log, and the final
/// checkpoint (with the adapted kernel state).
pub fn run_training(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    let paths = artifacts(out);
    let (data, truth) = load_or_generate(cfg, out)?;
    let dx = data[0].len();

    let mut init_rng = RngStream::new(cfg.train.seed, 0xA11CE);
    let mut model = build_model(&cfg.model, dx, &mut init_rng);
    if model.as_latent().data_dim() != dx {
        return Err(CliError::Config(format!(
            "model expects data dimension {}, dataset has {dx}",
            model.as_latent().data_dim()
        )));
    }

    let outcome = train(model.as_latent_mut(), &data, &cfg.train, truth.as_ref())?;
    write_metrics_csv(&paths.metrics, &outcome.metrics)?;
    write_events_jsonl(&paths.events, &outcome.events)?;
    save_model(&paths.model, model.as_latent(), Some(&outcome.state.kernel))?;
    Ok(())
}

/// Evaluates the trained checkpoint: condition diagnostics and evidence
/// gap for linear models, importance-sampling log-evidence on a fixed
/// subset for every model.
pub fn run_evaluation(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    let paths = artifacts(out);
    let (data, truth) = load_or_generate(cfg, out)?;
    let (model, kernel) = load_model(&paths.model)?;
    let latent = model.as_latent();

    let (kappa_raw, kappa_transformed, gap_mean) = match model.as_linear() {
        Some(linear) => {
            let c = match (cfg.train.preconditioner, &kernel) {
                (PreconditionerKind::None, _) | (_, None) => None,
                (_, Some(k)) => Some(k.precond.realize()),
            };
            let (raw, transformed) = condition_diagnostics(linear, c.as_ref())
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            let gap = truth
                .as_ref()
                .map(|t| t.mean_marginal_loglik(&data) - linear.mean_marginal_loglik(&data));
            (Some(raw), transformed, gap)
        }
        None => (None, None, None),
    };

    let subset = cfg.eval_subset.max(1).min(data.len());
    let mut is_sum = 0.0;
    for (i, x) in data.iter().take(subset).enumerate() {
        let mut rng = RngStream::new(cfg.train.seed, 0xE7A1 + i as u64);
        is_sum += importance_sampling_loglik(latent, x, kernel.as_ref(), &cfg.eval, &mut rng)?;
    }

    let dataset_tag = match &cfg.dataset {
        DatasetSpec::SyntheticLinear { n1, n2, dx, n, .. } => {
            format!("synthetic-linear({n1},{n2},dx={dx},n={n})")
        }
        DatasetSpec::File(p) => p.display().to_string(),
    };
    let report = EvalReport {
        dataset: dataset_tag,
        model: latent.checkpoint_meta(),
        kernel: cfg.kernel_tag(),
        adaptation: cfg.adaptation_tag().to_string(),
        kappa_raw,
        kappa_transformed,
        gap_mean,
        gap_abs: gap_mean.map(f64::abs),
        is_loglik_mean: is_sum / subset as f64,
        is_samples: cfg.eval.samples,
        tau: cfg.eval.tau,
        seed: cfg.train.seed,
    };
    report
        .write_json(&paths.report)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(report)
}

/// generate-or-load, train, evaluate.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<EvalReport> {
    run_training(cfg, out)?;
    run_evaluation(cfg, out)
}

/// One sweep cell result for the summary table.
struct CellResult {
    value: String,
    seed: u64,
    report: Option<EvalReport>,
}

/// Runs the config once per (axis value, seed), each cell in its own
/// directory with a deterministic derived seed, then writes a summary CSV
/// with per-value means and sample standard deviations. Failed cells are
/// marked and reported; the first failure is returned after all cells ran.
pub fn sweep(
    raw_base: &RawConfig,
    out: &Path,
    axis: &str,
    values: &[String],
    seeds: u64,
) -> Result<PathBuf> {
    fs::create_dir_all(out)?;
    let mut cells: Vec<CellResult> = Vec::new();
    let mut first_failure: Option<CliError> = None;

    for value in values {
        for seed_idx in 0..seeds.max(1) {
            let mut raw = raw_base.clone();
            raw.set(axis, value);
            // Independent per-cell seed, derived deterministically.
            let base_seed: u64 = raw
                .value_of("train.seed")
                .and_then(|v| v.parse().ok())
                .unwrap_or(0);
            let seed = base_seed
                .wrapping_mul(1_000_003)
                .wrapping_add(seed_idx * 7 + 1);
            raw.set("train.seed", &seed.to_string());
            let cfg = match ExperimentConfig::from_raw(&raw) {
                Ok(c) => c,
                Err(e) => {
                    // A bad axis value is a configuration error for the
                    // whole sweep.
                    return Err(e);
                }
            };
            let dir = out
                .join(sanitize(&format!("{axis}={value}")))
                .join(format!("seed-{seed_idx}"));
            fs::create_dir_all(&dir)?;
            match run(&cfg, &dir) {
                Ok(report) => cells.push(CellResult {
                    value: value.clone(),
                    seed: seed_idx,
                    report: Some(report),
                }),
                Err(e) => {
                    if first_failure.is_none() {
                        first_failure = Some(e);
                    }
                    cells.push(CellResult {
                        value: value.clone(),
                        seed: seed_idx,
                        report: None,
                    });
                }
            }
        }
    }

    let summary_path = out.join("summary.csv");
    let mut body = String::from(
        "value,seed,status,kappa_raw,kappa_transformed,gap_abs,is_loglik_mean\n",
    );
    let fmt = |v: Option<f64>| v.map(|v| format!("{v}")).unwrap_or_default();
    for cell in &cells {
        match &cell.report {
            Some(r) => body.push_str(&format!(
                "{},{},ok,{},{},{},{}\n",
                cell.value,
                cell.seed,
                fmt(r.kappa_raw),
                fmt(r.kappa_transformed),
                fmt(r.gap_abs),
                r.is_loglik_mean,
            )),
            None => body.push_str(&format!("{},{},failed,,,,\n", cell.value, cell.seed)),
        }
    }
    // Aggregates: mean and sample standard deviation per value.
    for value in values {
        let rows: Vec<&EvalReport> = cells
            .iter()
            .filter(|c| &c.value == value)
            .filter_map(|c| c.report.as_ref())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let agg = |get: &dyn Fn(&EvalReport) -> Option<f64>| -> (Option<f64>, Option<f64>) {
            let xs: Vec<f64> = rows.iter().filter_map(|r| get(r)).collect();
            if xs.is_empty() {
                return (None, None);
            }
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let std = if xs.len() > 1 {
                (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            (Some(mean), Some(std))
        };
        let (kr_m, kr_s) = agg(&|r| r.kappa_raw);
        let (kt_m, kt_s) = agg(&|r| r.kappa_transformed);
        let (g_m, g_s) = agg(&|r| r.gap_abs);
        let (is_m, is_s) = agg(&|r| Some(r.is_loglik_mean));
        body.push_str(&format!(
            "{value},mean,aggregate,{},{},{},{}\n",
            fmt(kr_m),
            fmt(kt_m),
            fmt(g_m),
            fmt(is_m),
        ));
        body.push_str(&format!(
            "{value},std,aggregate,{},{},{},{}\n",
            fmt(kr_s),
            fmt(kt_s),
            fmt(g_s),
            fmt(is_s),
        ));
    }
    fs::write(&summary_path, body)?;

    match first_failure {
        Some(e) => Err(e),
        None => Ok(summary_path),
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '=' || c == '.' { c } else { '_' })
        .collect()
}
