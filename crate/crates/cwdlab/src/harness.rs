//! Experiment runner: deterministic discrete-optimizer runs with CSV/JSON
//! emission, config sweeps, the convergence-rate experiment, the
//! decay-variant ablation suite, and the three-way toy comparison of
//! plain / decoupled / cautious decay.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, X0Spec};
use crate::flow::{fixed_point_check, pareto_check, FlowFamily, FlowSample, ParetoVerdict};
use crate::linalg;
use crate::lyapunov::{h_value, LyapunovSpec};
use crate::objectives::{objective_by_name, Objective, ObjectiveError, StochasticGradientSource};
use crate::optim::{
    mask_ratio, step, DecayMode, EtaSchedule, Family, KMap, OptState, OptimError, OptimizerSpec,
};
use crate::rng::{stream_rng, STREAM_INIT, STREAM_NOISE, STREAM_RANDOM_MASK};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Optimizer(#[from] OptimError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("rate experiment needs at least 3 grid points, got {0}")]
    GridTooSmall(usize),
    #[error("no config files found in {0}")]
    EmptySweep(String),
    #[error("{0}")]
    Other(String),
}

fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One logged trajectory row.
#[derive(Debug, Clone)]
pub struct TrajRow {
    pub step: u64,
    pub time: f64,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub h: Option<f64>,
    pub mask_ratio: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RunSummary {
    pub objective: String,
    pub family: String,
    pub decay: String,
    pub seed: u64,
    pub steps: u64,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub final_x: Vec<f64>,
    pub mean_mask_ratio: f64,
    pub truncated: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<TrajRow>,
    pub summary: RunSummary,
    pub final_x: Vec<f64>,
    /// Inclusive cautious-mask activation ratio at every step (the r_t
    /// diagnostic), regardless of which decay mode actually ran.
    pub mask_ratio_series: Vec<f64>,
    /// Strict-inequality variant of the same diagnostic.
    pub strict_mask_ratio_series: Vec<f64>,
}

/// Maps a discrete optimizer family onto the flow family whose energy is
/// used for the report-only `H` column. Rate constants follow the
/// per-step drift of the discrete moments.
fn lyapunov_spec_for(spec: &OptimizerSpec) -> Option<LyapunovSpec> {
    let (family, alpha, beta, gamma) = match spec.family {
        Family::Sgd => (FlowFamily::Sgd, 1.0, 1.0, 1.0),
        Family::Sgdm => (FlowFamily::Sgdm, 1.0, 1.0 - spec.beta, 1.0),
        Family::Adam => (FlowFamily::Adam, 1.0 - spec.beta1, 1.0, 1.0 - spec.beta2),
        Family::Lion | Family::LionK | Family::Muon => {
            (FlowFamily::LionK, 1.0 - spec.beta2, 1.0, 1.0 - spec.beta2)
        }
    };
    let ls = LyapunovSpec {
        family,
        alpha,
        beta,
        gamma,
        lambda: spec.lambda,
        epsilon: spec.epsilon,
        k: match spec.family {
            Family::Muon => KMap::Trace,
            _ => spec.k.unwrap_or(KMap::L1),
        },
        shape: spec.shape,
    };
    ls.validate().ok().map(|_| ls)
}

/// Executes one discrete run. Deterministic given the config seed: init,
/// gradient noise, and random masks each draw from their own named
/// stream.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    config.validate()?;
    let started = Instant::now();
    let obj = config.objective()?;
    let dim = obj.dim();
    let x0 = match &config.x0 {
        X0Spec::Explicit(v) => {
            if v.len() != dim {
                return Err(HarnessError::Other(format!(
                    "x0 has {} coordinates, objective {} needs {dim}",
                    v.len(),
                    obj.name()
                )));
            }
            v.clone()
        }
        X0Spec::RandomBox { lo, hi } => {
            let mut rng = stream_rng(config.seed, STREAM_INIT);
            (0..dim).map(|_| rng.gen_range(*lo..*hi)).collect()
        }
    };
    let mut source = StochasticGradientSource::new(
        obj.clone(),
        config.noise_sigma,
        config.n_batch,
        stream_rng(config.seed, STREAM_NOISE),
    );
    let mut state = OptState::new(dim, stream_rng(config.seed, STREAM_RANDOM_MASK));
    let lyap = if config.emit_lyapunov {
        lyapunov_spec_for(&config.optimizer)
    } else {
        None
    };

    let mut x = x0.clone();
    let mut time = 0.0;
    let mut rows = Vec::new();
    let mut mask_series = Vec::with_capacity(config.steps as usize);
    let mut strict_series = Vec::with_capacity(config.steps as usize);
    let mut truncated = false;

    let log_row = |rows: &mut Vec<TrajRow>,
                   step_idx: u64,
                   time: f64,
                   x: &[f64],
                   state: &OptState,
                   ratio: f64| {
        let g = obj.grad(x);
        let h = lyap.as_ref().and_then(|ls| {
            if time <= 0.0 && ls.family == FlowFamily::Adam {
                return None;
            }
            let sample = FlowSample {
                t: time.max(f64::MIN_POSITIVE),
                x: x.to_vec(),
                m: state.m.clone(),
                v: state.v.clone(),
            };
            h_value(ls, &obj, &sample).ok()
        });
        rows.push(TrajRow {
            step: step_idx,
            time,
            x: x.to_vec(),
            m: state.m.clone(),
            loss: obj.eval(x),
            grad_norm: linalg::l2_of(&g),
            h,
            mask_ratio: ratio,
        });
    };

    log_row(&mut rows, 0, time, &x, &state, 0.0);
    for t in 1..=config.steps {
        let g = source.sample(&x);
        let eta = config.optimizer.eta.eta(t);
        match step(&config.optimizer, &mut state, &x, &g) {
            Ok(next) => x = next,
            Err(OptimError::NonFiniteUpdate { .. }) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e.into()),
        }
        time += eta;
        let (incl, strict) = mask_ratio(&state);
        mask_series.push(incl);
        strict_series.push(strict);
        if x.iter().any(|c| c.abs() > crate::flow::DIVERGENCE_BOX) {
            truncated = true;
            break;
        }
        if t % config.stride == 0 || t == config.steps {
            log_row(&mut rows, t, time, &x, &state, incl);
        }
    }
    if truncated {
        // make the truncation visible in the artifact
        let ratio = mask_series.last().copied().unwrap_or(0.0);
        let step_idx = mask_series.len() as u64;
        if rows.last().map(|r| r.step) != Some(step_idx) {
            log_row(&mut rows, step_idx, time, &x, &state, ratio);
        }
    }

    let logged: Vec<&TrajRow> = rows.iter().filter(|r| r.step > 0).collect();
    let mean_mask_ratio = if logged.is_empty() {
        0.0
    } else {
        logged.iter().map(|r| r.mask_ratio).sum::<f64>() / logged.len() as f64
    };
    let last = rows.last().expect("at least the initial row");
    let summary = RunSummary {
        objective: config.objective_name.clone(),
        family: config.optimizer.family.as_str().into(),
        decay: config.optimizer.decay.as_str().into(),
        seed: config.seed,
        steps: config.steps,
        final_loss: last.loss,
        final_grad_norm: last.grad_norm,
        final_x: last.x.clone(),
        mean_mask_ratio,
        truncated,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    let out = RunOutput {
        rows,
        summary,
        final_x: x,
        mask_ratio_series: mask_series,
        strict_mask_ratio_series: strict_series,
    };
    if let Some(path) = &config.out {
        write_outputs(path, &out)?;
    }
    Ok(out)
}

/// Renders the trajectory CSV. Floats are formatted with full round-trip
/// precision so identical runs produce byte-identical files.
pub fn trajectory_csv(rows: &[TrajRow]) -> String {
    let d = rows.first().map(|r| r.x.len()).unwrap_or(0);
    let mut s = String::from("step,time");
    for i in 0..d {
        s.push_str(&format!(",x_{i}"));
    }
    for i in 0..d {
        s.push_str(&format!(",m_{i}"));
    }
    s.push_str(",loss,grad_norm,H,mask_ratio\n");
    for r in rows {
        s.push_str(&format!("{},{:?}", r.step, r.time));
        for v in &r.x {
            s.push_str(&format!(",{v:?}"));
        }
        for v in &r.m {
            s.push_str(&format!(",{v:?}"));
        }
        s.push_str(&format!(",{:?},{:?},", r.loss, r.grad_norm));
        if let Some(h) = r.h {
            s.push_str(&format!("{h:?}"));
        }
        s.push_str(&format!(",{:?}\n", r.mask_ratio));
    }
    s
}

fn write_outputs(csv_path: &Path, out: &RunOutput) -> Result<(), HarnessError> {
    if let Some(parent) = csv_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    std::fs::write(csv_path, trajectory_csv(&out.rows)).map_err(|e| io_err(csv_path, e))?;
    let json_path = csv_path.with_extension("summary.json");
    let json = serde_json::to_string_pretty(&out.summary)
        .map_err(|e| HarnessError::Other(e.to_string()))?;
    std::fs::write(&json_path, json).map_err(|e| io_err(&json_path, e))?;
    Ok(())
}

/// Cross-checks a summary against its trajectory rows (the CSV is the
/// source of truth; the summary must be recomputable from it).
pub fn summary_consistent(rows: &[TrajRow], summary: &RunSummary) -> bool {
    let Some(last) = rows.last() else {
        return false;
    };
    let logged: Vec<&TrajRow> = rows.iter().filter(|r| r.step > 0).collect();
    let mean = if logged.is_empty() {
        0.0
    } else {
        logged.iter().map(|r| r.mask_ratio).sum::<f64>() / logged.len() as f64
    };
    last.loss == summary.final_loss
        && last.grad_norm == summary.final_grad_norm
        && last.x == summary.final_x
        && (mean - summary.mean_mask_ratio).abs() <= 1e-15
}

/// Runs every `.ini` config in a directory, in parallel, writing each
/// trajectory CSV next to its config (or under `out_dir`).
pub fn sweep(dir: &Path, out_dir: Option<&Path>) -> Result<Vec<(PathBuf, RunSummary)>, HarnessError> {
    let mut configs = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.extension().map(|e| e == "ini").unwrap_or(false) {
            configs.push(path);
        }
    }
    configs.sort();
    if configs.is_empty() {
        return Err(HarnessError::EmptySweep(dir.display().to_string()));
    }
    let results: Vec<Result<(PathBuf, RunSummary), HarnessError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|path| {
                scope.spawn(move || {
                    let mut cfg = ExperimentConfig::from_file(path)?;
                    let csv_name = path.with_extension("csv");
                    let csv_path = match out_dir {
                        Some(d) => d.join(csv_name.file_name().expect("config has file name")),
                        None => csv_name,
                    };
                    cfg.out = Some(csv_path);
                    let out = run(&cfg)?;
                    Ok((path.clone(), out.summary))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker does not panic"))
            .collect()
    });
    results.into_iter().collect()
}

/// Stationarity measure of the convergence analysis:
/// `||grad f(x)||^2 + lambda ||(grad f(x) (.) x)^+||_1`.
pub fn stationarity_measure(obj: &Objective, x: &[f64], lambda: f64) -> f64 {
    let g = obj.grad(x);
    let sq: f64 = g.iter().map(|v| v * v).sum();
    let pen: f64 = g
        .iter()
        .zip(x.iter())
        .map(|(gi, xi)| (gi * xi).max(0.0))
        .sum();
    sq + lambda * pen
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RateRow {
    pub t: u64,
    pub eta: f64,
    pub n_batch: usize,
    pub s_avg: f64,
    pub s_stderr: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    pub slope: f64,
    pub slope_ci95: (f64, f64),
    pub lambda: f64,
    /// Empirical iterate and gradient sup-bounds across all runs; the
    /// analysis constants depend on these but are existence-only, so they
    /// are reported as diagnostics.
    pub empirical_r: f64,
    pub empirical_g: f64,
}

fn t_quantile_975(dof: usize) -> f64 {
    const TABLE: [f64; 10] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
    ];
    if dof == 0 {
        f64::INFINITY
    } else if dof <= TABLE.len() {
        TABLE[dof - 1]
    } else {
        1.96 + 2.4 / dof as f64
    }
}

/// Scaling experiment for the averaged stationarity measure: for each
/// horizon `T` set `eta = c_eta / sqrt(T)` and `n_batch = ceil(T /
/// c_batch)`, average `S` over the run and over seeds, then fit the
/// log-log slope of `S_avg` against `T`. The theory predicts slope `-1/2`.
#[allow(clippy::too_many_arguments)]
pub fn rate_experiment(
    objective_name: &str,
    base: &OptimizerSpec,
    x0: &X0Spec,
    t_grid: &[u64],
    seeds: &[u64],
    sigma: f64,
    c_eta: f64,
    c_batch: f64,
) -> Result<RateReport, HarnessError> {
    if t_grid.len() < 3 {
        return Err(HarnessError::GridTooSmall(t_grid.len()));
    }
    let obj = objective_by_name(objective_name)?;
    let lambda = base.lambda;
    let mut rows = Vec::new();
    let mut emp_r: f64 = 0.0;
    let mut emp_g: f64 = 0.0;
    for &t_total in t_grid {
        let eta = c_eta / (t_total as f64).sqrt();
        let n_batch = ((t_total as f64) / c_batch).ceil() as usize;
        let mut per_seed = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut spec = base.clone();
            spec.eta = EtaSchedule::Constant(eta);
            let mut x = match x0 {
                X0Spec::Explicit(v) => v.clone(),
                X0Spec::RandomBox { lo, hi } => {
                    let mut rng = stream_rng(seed, STREAM_INIT);
                    (0..obj.dim()).map(|_| rng.gen_range(*lo..*hi)).collect()
                }
            };
            let mut source = StochasticGradientSource::new(
                obj.clone(),
                sigma,
                n_batch,
                stream_rng(seed, STREAM_NOISE),
            );
            let mut state = OptState::new(obj.dim(), stream_rng(seed, STREAM_RANDOM_MASK));
            let mut s_sum = 0.0;
            for _ in 0..t_total {
                s_sum += stationarity_measure(&obj, &x, lambda);
                emp_r = emp_r.max(linalg::linf_of(&x));
                emp_g = emp_g.max(linalg::linf_of(&obj.grad(&x)));
                let g = source.sample(&x);
                x = step(&spec, &mut state, &x, &g)?;
            }
            per_seed.push(s_sum / t_total as f64);
        }
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        rows.push(RateRow {
            t: t_total,
            eta,
            n_batch,
            s_avg: mean,
            s_stderr: (var / n).sqrt(),
        });
    }
    // OLS fit of ln(S_avg) on ln(T)
    let xs: Vec<f64> = rows.iter().map(|r| (r.t as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.s_avg.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let dof = xs.len().saturating_sub(2);
    let se = if dof > 0 {
        (ss_res / dof as f64 / sxx).sqrt()
    } else {
        0.0
    };
    let half = t_quantile_975(dof) * se;
    Ok(RateReport {
        rows,
        slope,
        slope_ci95: (slope - half, slope + half),
        lambda,
        empirical_r: emp_r,
        empirical_g: emp_g,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub final_losses: Vec<f64>,
    pub mean_final_loss: f64,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct AblationTable {
    pub objective: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    /// Per-seed mask-ratio schedule recorded from the cautious reference
    /// run; the random-mask variant replays exactly these ratios.
    pub recorded_ratios: Vec<Vec<f64>>,
    pub random_mask_ratios: Vec<Vec<f64>>,
    /// Seeds where the cautious final loss is <= the decoupled one.
    pub cautious_beats_decoupled: usize,
}

/// Decay-mode ablation: runs the cautious reference and four comparison
/// variants with identical seeds (hence identical inits and gradient
/// noise). The random-mask variant replays the cautious run's recorded
/// per-step activation ratio.
pub fn ablation_suite(
    objective_name: &str,
    base: &OptimizerSpec,
    x0: &X0Spec,
    steps: u64,
    sigma: f64,
    n_batch: usize,
    seeds: &[u64],
) -> Result<AblationTable, HarnessError> {
    if base.decay != DecayMode::Cautious {
        return Err(HarnessError::Other(
            "ablation base spec must use cautious decay".into(),
        ));
    }
    let make_config = |spec: OptimizerSpec, seed: u64| ExperimentConfig {
        objective_name: objective_name.into(),
        optimizer: spec,
        x0: x0.clone(),
        steps,
        noise_sigma: sigma,
        n_batch,
        stride: steps,
        seed,
        out: None,
        emit_lyapunov: false,
    };
    let variants = [
        "decoupled",
        "cautious",
        "random_mask",
        "gradient_mask",
        "none",
    ];
    let mut losses: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
    let mut recorded = Vec::new();
    let mut replayed = Vec::new();
    for &seed in seeds {
        let cautious_out = run(&make_config(base.clone(), seed))?;
        let schedule = cautious_out.mask_ratio_series.clone();
        for (vi, name) in variants.iter().enumerate() {
            let final_loss = match *name {
                "cautious" => cautious_out.summary.final_loss,
                _ => {
                    let mut spec = base.clone();
                    spec.decay = match *name {
                        "decoupled" => DecayMode::Decoupled,
                        "random_mask" => DecayMode::RandomMask(schedule.clone()),
                        "gradient_mask" => DecayMode::CautiousGradientMask,
                        "none" => DecayMode::None,
                        _ => unreachable!(),
                    };
                    run(&make_config(spec, seed))?.summary.final_loss
                }
            };
            losses[vi].push(final_loss);
        }
        replayed.push(schedule.clone());
        recorded.push(schedule);
    }
    let rows: Vec<AblationRow> = variants
        .iter()
        .zip(losses.iter())
        .map(|(name, ls)| AblationRow {
            variant: (*name).into(),
            final_losses: ls.clone(),
            mean_final_loss: ls.iter().sum::<f64>() / ls.len() as f64,
        })
        .collect();
    let cautious = &losses[1];
    let decoupled = &losses[0];
    let wins = cautious
        .iter()
        .zip(decoupled.iter())
        .filter(|(c, d)| c <= d)
        .count();
    Ok(AblationTable {
        objective: objective_name.into(),
        seeds: seeds.to_vec(),
        rows,
        recorded_ratios: recorded,
        random_mask_ratios: replayed,
        cautious_beats_decoupled: wins,
    })
}

#[derive(Debug, Clone)]
pub struct Fig3Run {
    pub objective: String,
    pub init: Vec<f64>,
    pub variant: String,
    pub final_x: Vec<f64>,
    pub grad_linf: f64,
    pub x_linf: f64,
    pub fixed_point_ok: bool,
    pub pareto: Option<ParetoVerdict>,
}

#[derive(Debug, Clone)]
pub struct Fig3Report {
    pub lambda: f64,
    pub runs: Vec<Fig3Run>,
}

/// Learning-rate schedule used by the toy comparison: hold, then anneal
/// geometrically so the iterates freeze onto the stationary manifold.
pub fn fig3_schedule() -> EtaSchedule {
    EtaSchedule::GeometricAnneal {
        eta0: 0.01,
        hold: 4000,
        factor: 0.995,
    }
}

pub const FIG3_STEPS: u64 = 8000;
/// Init box for the toy comparison, spanning both sides of the manifolds.
pub const FIG3_INIT_BOX: (f64, f64) = (0.0, 6.0);

/// Three-way comparison on the toy objectives: the same Adam
/// hyperparameters with no decay, decoupled decay, and cautious decay,
/// started from shared random inits. Each limit gets a stationarity
/// verdict; cautious limits additionally get a Pareto verdict.
pub fn figure3_repro(
    lambda: f64,
    seed: u64,
    n_inits: usize,
    out_dir: Option<&Path>,
) -> Result<Fig3Report, HarnessError> {
    if lambda <= 0.0 {
        return Err(HarnessError::Other("fig3 comparison needs lambda > 0".into()));
    }
    let mut runs = Vec::new();
    let mut init_rng = stream_rng(seed, STREAM_INIT);
    for obj_name in ["toy_hyperbola", "toy_parabola"] {
        let obj = objective_by_name(obj_name)?;
        for init_idx in 0..n_inits {
            let init: Vec<f64> = (0..obj.dim())
                .map(|_| init_rng.gen_range(FIG3_INIT_BOX.0..FIG3_INIT_BOX.1))
                .collect();
            for (variant, decay, lam) in [
                ("adam", DecayMode::None, 0.0),
                ("adamw", DecayMode::Decoupled, lambda),
                ("adam_cwd", DecayMode::Cautious, lambda),
            ] {
                let mut spec = OptimizerSpec::new(Family::Adam, 0.01);
                spec.eta = fig3_schedule();
                spec.beta1 = 0.9;
                spec.beta2 = 0.95;
                spec.epsilon = 1e-8;
                spec.lambda = lam;
                spec.decay = decay.clone();
                let cfg = ExperimentConfig {
                    objective_name: obj_name.into(),
                    optimizer: spec,
                    x0: X0Spec::Explicit(init.clone()),
                    steps: FIG3_STEPS,
                    noise_sigma: 0.0,
                    n_batch: 1,
                    stride: 10,
                    seed,
                    out: out_dir.map(|d| {
                        d.join(format!("fig3_{obj_name}_{variant}_init{init_idx}.csv"))
                    }),
                    emit_lyapunov: false,
                };
                let out = run(&cfg)?;
                let x = out.final_x.clone();
                let tol = if decay == DecayMode::Decoupled { 1e-2 } else { 1e-5 };
                let fp = fixed_point_check(&x, &decay, lam, &obj, tol);
                let pareto = if decay != DecayMode::Decoupled {
                    let mut prng = stream_rng(seed ^ init_idx as u64, "pareto");
                    Some(pareto_check(&x, &obj, 0.3, 200, &mut prng))
                } else {
                    None
                };
                runs.push(Fig3Run {
                    objective: obj_name.into(),
                    init: init.clone(),
                    variant: variant.into(),
                    final_x: x.clone(),
                    grad_linf: fp.grad_linf,
                    x_linf: fp.x_linf,
                    fixed_point_ok: fp.satisfied,
                    pareto,
                });
            }
        }
    }
    Ok(Fig3Report { lambda, runs })
}
