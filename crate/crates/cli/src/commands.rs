use std::fs;
use std::path::{Path, PathBuf};

use rnnid::analysis::{
    direction_agreement, estimate_frozen, lyapunov_derivative, DirectionAgreement, FrozenThetaEstimates,
    LyapunovDiagnostic,
};
use rnnid::experiment::{generate_data, monte_carlo, run_seed, ExperimentSpec, RunOutcome, SampleStats};
use rnnid::ident::RunSummary;
use serde::Serialize;

use crate::config::{ExperimentConfig, VariantSpec};
use crate::curves::{
    convergence_curve, convergence_figure, curve_series, output_overlay, overlay_figure, read_curve, read_trace,
    write_curve, write_overlay,
};
use crate::CliError;

/// A variant whose mean MSE drops by less than this fraction is flagged.
pub const SLOW_CONVERGENCE_DROP: f64 = 0.10;

#[derive(Debug, Clone, Serialize)]
pub struct RunEntry {
    pub run_index: usize,
    #[serde(flatten)]
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub initial_mse: SampleStats,
    pub final_mse: SampleStats,
    pub runs: Vec<RunEntry>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn trace_path(dir: &Path, run_index: usize) -> PathBuf {
    dir.join(format!("run_{run_index:03}.csv"))
}

/// Runs the Monte-Carlo batch and writes traces, curve data and plots into `dir`.
fn execute(spec: &ExperimentSpec, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<RunOutcome>, CliError> {
    let outcomes = monte_carlo(spec, cfg.monte_carlo.n_runs, cfg.monte_carlo.master_seed)?;
    let traces = dir.join("traces");
    fs::create_dir_all(&traces)?;
    let mut paths = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let p = trace_path(&traces, o.run_index);
        o.trace.write_csv(fs::File::create(&p)?)?;
        paths.push(p);
    }
    write_curve(&dir.join("convergence.csv"), &convergence_curve(&paths)?)?;
    write_overlay(&dir.join("output.csv"), &output_overlay(&read_trace(&paths[0])?))?;
    Ok(outcomes)
}

fn report(cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> RunReport {
    let initial: Vec<f64> = outcomes.iter().map(|o| o.trace.summary.initial_mse).collect();
    let fin: Vec<f64> = outcomes.iter().map(|o| o.trace.summary.final_mse).collect();
    RunReport {
        config: cfg.clone(),
        master_seed: cfg.monte_carlo.master_seed,
        initial_mse: SampleStats::of(&initial),
        final_mse: SampleStats::of(&fin),
        runs: outcomes.iter().map(|o| RunEntry { run_index: o.run_index, summary: o.trace.summary.clone() }).collect(),
    }
}

/// Writes `traces/run_NNN.csv`, `convergence.csv`, `output.csv`,
/// `summary.json`, `convergence.svg` and `output.svg` under `out`.
pub fn cmd_run(cfg: &ExperimentConfig, out: &Path) -> Result<RunReport, CliError> {
    fs::create_dir_all(out)?;
    let outcomes = execute(&cfg.experiment(), cfg, out)?;
    let rep = report(cfg, &outcomes);
    write_json(&out.join("summary.json"), &rep)?;

    let curve = read_curve(&out.join("convergence.csv"))?;
    let fig = convergence_figure(
        &format!("Convergence over {} runs", cfg.monte_carlo.n_runs),
        vec![curve_series("mean (band: min-max)", &curve, true)],
    );
    fs::write(out.join("convergence.svg"), fig.render())?;
    fs::write(out.join("output.svg"), overlay_figure(&out.join("output.csv"))?.render())?;
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct VariantResult {
    pub name: String,
    pub initial_mse: SampleStats,
    pub final_mse: SampleStats,
    /// Relative drop of the mean MSE from the first to the last window.
    pub mse_drop: f64,
    pub slow_convergence: bool,
    pub runs: Vec<RunEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantResult>,
}

#[derive(Serialize)]
struct CompareRow<'a> {
    variant: &'a str,
    initial_mse_mean: f64,
    final_mse_mean: f64,
    final_mse_std_err: f64,
    final_mse_min: f64,
    final_mse_max: f64,
    mse_drop: f64,
    slow_convergence: bool,
}

/// Runs every variant on the same seeds; writes one directory per variant
/// plus `compare.csv`, `compare.json` and `compare.svg` under `out`.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<CompareReport, CliError> {
    if cfg.variants.len() < 2 {
        return Err(CliError::Config(format!(
            "compare needs at least 2 entries in `variants`, got {}",
            cfg.variants.len()
        )));
    }
    fs::create_dir_all(out)?;
    let mut results = Vec::new();
    let mut series = Vec::new();
    for v in &cfg.variants {
        let dir = out.join(&v.name);
        let outcomes = execute(&cfg.variant_experiment(v), cfg, &dir)?;
        results.push(variant_result(v, cfg, &outcomes));
        series.push(curve_series(&v.name, &read_curve(&dir.join("convergence.csv"))?, false));
    }

    let mut w = csv::Writer::from_path(out.join("compare.csv"))?;
    for r in &results {
        w.serialize(CompareRow {
            variant: &r.name,
            initial_mse_mean: r.initial_mse.mean,
            final_mse_mean: r.final_mse.mean,
            final_mse_std_err: r.final_mse.std_err,
            final_mse_min: r.final_mse.min,
            final_mse_max: r.final_mse.max,
            mse_drop: r.mse_drop,
            slow_convergence: r.slow_convergence,
        })?;
    }
    w.flush()?;

    let seeds = (0..cfg.monte_carlo.n_runs as u64).map(|i| run_seed(cfg.monte_carlo.master_seed, i)).collect();
    let rep = CompareReport { config: cfg.clone(), master_seed: cfg.monte_carlo.master_seed, seeds, variants: results };
    write_json(&out.join("compare.json"), &rep)?;
    let fig = convergence_figure(&format!("Mean convergence over {} runs", cfg.monte_carlo.n_runs), series);
    fs::write(out.join("compare.svg"), fig.render())?;
    Ok(rep)
}

fn variant_result(v: &VariantSpec, cfg: &ExperimentConfig, outcomes: &[RunOutcome]) -> VariantResult {
    let r = report(cfg, outcomes);
    let mse_drop = 1.0 - r.final_mse.mean / r.initial_mse.mean;
    VariantResult {
        name: v.name.clone(),
        initial_mse: r.initial_mse,
        final_mse: r.final_mse,
        mse_drop,
        slow_convergence: !(mse_drop >= SLOW_CONVERGENCE_DROP),
        runs: r.runs,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingReport {
    pub name: String,
    pub estimates: FrozenThetaEstimates,
    pub agreement: DirectionAgreement,
    pub lyapunov: LyapunovDiagnostic,
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub config: ExperimentConfig,
    pub master_seed: u64,
    pub data_seed: u64,
    pub theta: Vec<f64>,
    pub settings: Vec<SettingReport>,
}

#[derive(Serialize)]
struct VectorRow {
    component: usize,
    theta: f64,
    g_bar: f64,
    g_bar_std_err: f64,
    dbar: f64,
    f_nsg: f64,
    f_ss: f64,
    f_adam_standard: f64,
    f_adam_sign_sign: f64,
}

/// Frozen-parameter estimates under the standard and the sign-sign
/// settings; writes `analysis.json` and `vectors.csv` under `out`.
pub fn cmd_analyze(cfg: &ExperimentConfig, out: &Path) -> Result<AnalysisReport, CliError> {
    let a = match &cfg.analysis {
        Some(a) if a.enabled => a,
        _ => return Err(CliError::Config("analyze needs an enabled `analysis` block".into())),
    };
    let data_seed = run_seed(cfg.monte_carlo.master_seed, 0);
    let model = &cfg.run.model;
    let theta = match &a.theta {
        Some(t) => t.clone(),
        None => cfg.run.theta_init.initial_theta(model, data_seed)?,
    };
    let data = generate_data(&cfg.plant, &cfg.input, a.n_samples, data_seed)?;
    let mut settings = Vec::new();
    for (name, hp) in [("standard", &a.standard), ("sign_sign", &a.sign_sign)] {
        let estimates = estimate_frozen(model, &theta, &data, a.n_samples, a.burn_in, hp)?;
        settings.push(SettingReport {
            name: name.to_string(),
            agreement: direction_agreement(&estimates),
            lyapunov: lyapunov_derivative(&estimates),
            estimates,
        });
    }

    fs::create_dir_all(out)?;
    let (std_est, ss_est) = (&settings[0].estimates, &settings[1].estimates);
    let mut w = csv::Writer::from_path(out.join("vectors.csv"))?;
    for i in 0..theta.len() {
        w.serialize(VectorRow {
            component: i,
            theta: theta[i],
            g_bar: std_est.g_bar[i],
            g_bar_std_err: std_est.g_bar_std_err[i],
            dbar: std_est.dbar[i],
            f_nsg: std_est.f_nsg[i],
            f_ss: std_est.f_ss[i],
            f_adam_standard: std_est.f_adam[i],
            f_adam_sign_sign: ss_est.f_adam[i],
        })?;
    }
    w.flush()?;
    let rep =
        AnalysisReport { config: cfg.clone(), master_seed: cfg.monte_carlo.master_seed, data_seed, theta, settings };
    write_json(&out.join("analysis.json"), &rep)?;
    Ok(rep)
}
