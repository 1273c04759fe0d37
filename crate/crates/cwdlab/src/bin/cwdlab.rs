//! Command-line front end: discrete runs, config sweeps, flow
//! integration, the rate experiment, the decay ablation, the three-way
//! toy comparison, and Pareto verdicts on saved trajectories.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical divergence.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::Rng;

use cwdlab::config::{parse_ini, ExperimentConfig, Sections, X0Spec};
use cwdlab::flow::{integrate, pareto_check, FlowFamily, FlowSpec, Integrator};
use cwdlab::harness;
use cwdlab::linalg;
use cwdlab::lyapunov::{h_value, LyapunovSpec};
use cwdlab::objectives::objective_by_name;
use cwdlab::optim::{DecayMode, KMap, OptimizerSpec};
use cwdlab::rng::{stream_rng, STREAM_INIT};

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "cwdlab", about = "Sign-selective weight-decay laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one discrete optimization experiment from a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        stride: Option<u64>,
        #[arg(long)]
        emit_lyapunov: bool,
    },
    /// Run every .ini config in a directory.
    Sweep {
        config_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Integrate a continuous-time flow from a config file.
    Ode {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        #[arg(long)]
        emit_lyapunov: bool,
    },
    /// Stationarity-measure scaling experiment over a horizon grid.
    Rate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decay-mode ablation with shared seeds and replayed mask ratios.
    Ablate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Adam / decoupled / cautious comparison on the toy objectives.
    Fig3 {
        lambda: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        inits: usize,
    },
    /// Pareto verdict for the final point of a saved trajectory CSV.
    Pareto {
        trajectory: PathBuf,
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = 0.3)]
        delta: f64,
        #[arg(long, default_value_t = 200)]
        probes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode, String> {
    match cmd {
        Command::Run {
            config,
            seed,
            out,
            stride,
            emit_lyapunov,
        } => {
            let mut cfg = ExperimentConfig::from_file(&config).map_err(|e| e.to_string())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out = Some(o);
            }
            if let Some(s) = stride {
                cfg.stride = s;
            }
            if emit_lyapunov {
                cfg.emit_lyapunov = true;
            }
            cfg.validate().map_err(|e| e.to_string())?;
            let result = harness::run(&cfg).map_err(|e| e.to_string())?;
            println!(
                "{}",
                serde_json::to_string_pretty(&result.summary).map_err(|e| e.to_string())?
            );
            if result.summary.truncated {
                return Ok(ExitCode::from(EXIT_DIVERGED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { config_dir, out } => {
            let results =
                harness::sweep(&config_dir, out.as_deref()).map_err(|e| e.to_string())?;
            let mut any_truncated = false;
            for (path, summary) in &results {
                any_truncated |= summary.truncated;
                println!(
                    "{}: final_loss={:?} final_grad_norm={:?} truncated={}",
                    path.display(),
                    summary.final_loss,
                    summary.final_grad_norm,
                    summary.truncated
                );
            }
            if any_truncated {
                return Ok(ExitCode::from(EXIT_DIVERGED));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Ode {
            config,
            seed,
            out,
            stride,
            emit_lyapunov,
        } => run_ode(&config, seed, out.as_deref(), stride.max(1), emit_lyapunov),
        Command::Rate { config, seed, out } => run_rate(&config, seed, out.as_deref()),
        Command::Ablate { config, seed, out } => run_ablate(&config, seed, out.as_deref()),
        Command::Fig3 {
            lambda,
            seed,
            out,
            inits,
        } => {
            let report = harness::figure3_repro(lambda, seed, inits, out.as_deref())
                .map_err(|e| e.to_string())?;
            for r in &report.runs {
                let pareto = match &r.pareto {
                    Some(v) if v.inconclusive => "inconclusive",
                    Some(v) if v.locally_pareto => "true",
                    Some(_) => "false",
                    None => "-",
                };
                println!(
                    "{} init={:?} {}: grad_linf={:.3e} x_linf={:.4} fixed_point={} pareto={}",
                    r.objective, r.init, r.variant, r.grad_linf, r.x_linf, r.fixed_point_ok, pareto
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Pareto {
            trajectory,
            objective,
            delta,
            probes,
            seed,
        } => run_pareto(&trajectory, &objective, delta, probes, seed),
    }
}

fn section<'a>(
    sections: &'a Sections,
    name: &str,
) -> Result<&'a std::collections::BTreeMap<String, String>, String> {
    sections
        .get(name)
        .ok_or_else(|| format!("missing section [{name}]"))
}

fn get_f64(
    sec: &std::collections::BTreeMap<String, String>,
    key: &str,
    default: f64,
) -> Result<f64, String> {
    match sec.get(key) {
        Some(v) => v.parse().map_err(|_| format!("bad {key}: {v}")),
        None => Ok(default),
    }
}

fn run_ode(
    config: &Path,
    seed: Option<u64>,
    out: Option<&Path>,
    stride: u64,
    emit_lyapunov: bool,
) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(config).map_err(|e| e.to_string())?;
    let sections = parse_ini(&text).map_err(|e| e.to_string())?;
    let obj_sec = section(&sections, "objective")?;
    let obj_name = obj_sec.get("name").ok_or("missing objective name")?;
    let obj = objective_by_name(obj_name).map_err(|e| e.to_string())?;
    let flow_sec = section(&sections, "flow")?;
    let family = flow_sec
        .get("family")
        .and_then(|s| FlowFamily::parse(s))
        .ok_or("missing or bad flow family")?;
    let mut spec = FlowSpec::new(family);
    spec.alpha = get_f64(flow_sec, "alpha", spec.alpha)?;
    spec.beta = get_f64(flow_sec, "beta", spec.beta)?;
    spec.gamma = get_f64(flow_sec, "gamma", spec.gamma)?;
    spec.lambda = get_f64(flow_sec, "lambda", spec.lambda)?;
    spec.epsilon = get_f64(flow_sec, "epsilon", spec.epsilon)?;
    spec.h = get_f64(flow_sec, "h", spec.h)?;
    spec.horizon = get_f64(flow_sec, "horizon", spec.horizon)?;
    if let Some(k) = flow_sec.get("k") {
        spec.k = KMap::parse(k).ok_or_else(|| format!("bad k: {k}"))?;
    }
    if let Some(integrator) = flow_sec.get("integrator") {
        spec.integrator = match integrator.as_str() {
            "euler" => Integrator::Euler,
            "rk4" => Integrator::Rk4,
            other => return Err(format!("bad integrator: {other}")),
        };
    }
    spec.validate().map_err(|e| e.to_string())?;
    let run_sec = section(&sections, "run")?;
    let x0_spec = X0Spec::parse(run_sec.get("x0").ok_or("missing x0")?).map_err(|e| e.to_string())?;
    let seed = seed
        .or_else(|| run_sec.get("seed").and_then(|s| s.parse().ok()))
        .unwrap_or(0);
    let x0 = match x0_spec {
        X0Spec::Explicit(v) => v,
        X0Spec::RandomBox { lo, hi } => {
            let mut rng = stream_rng(seed, STREAM_INIT);
            (0..obj.dim()).map(|_| rng.gen_range(lo..hi)).collect()
        }
    };
    let zeros = vec![0.0; obj.dim()];
    let traj = integrate(&spec, &obj, &x0, &zeros, &zeros).map_err(|e| e.to_string())?;
    let lyap = if emit_lyapunov {
        let ls = LyapunovSpec::from_flow(&spec);
        ls.validate().ok().map(|_| ls)
    } else {
        None
    };
    let mut csv = String::from("step,time");
    let d = obj.dim();
    for i in 0..d {
        csv.push_str(&format!(",x_{i}"));
    }
    for i in 0..d {
        csv.push_str(&format!(",m_{i}"));
    }
    csv.push_str(",loss,grad_norm,H,mask_ratio\n");
    for (i, s) in traj.samples.iter().enumerate() {
        if i as u64 % stride != 0 && i + 1 != traj.samples.len() {
            continue;
        }
        let g = obj.grad(&s.x);
        let mask: f64 = match spec.family {
            FlowFamily::Sgd => {
                g.iter().zip(&s.x).filter(|(a, b)| **a * **b >= 0.0).count() as f64 / d as f64
            }
            FlowFamily::LionK => {
                s.m.iter().zip(&s.x).filter(|(a, b)| **a * **b <= 0.0).count() as f64 / d as f64
            }
            _ => s.m.iter().zip(&s.x).filter(|(a, b)| **a * **b >= 0.0).count() as f64 / d as f64,
        };
        csv.push_str(&format!("{},{:?}", i, s.t));
        for v in &s.x {
            csv.push_str(&format!(",{v:?}"));
        }
        for v in &s.m {
            csv.push_str(&format!(",{v:?}"));
        }
        csv.push_str(&format!(
            ",{:?},{:?},",
            obj.eval(&s.x),
            linalg::l2_of(&g)
        ));
        if let Some(ls) = &lyap {
            if let Ok(h) = h_value(ls, &obj, s) {
                csv.push_str(&format!("{h:?}"));
            }
        }
        csv.push_str(&format!(",{mask:?}\n"));
    }
    match out {
        Some(path) => std::fs::write(path, csv).map_err(|e| e.to_string())?,
        None => print!("{csv}"),
    }
    let last = traj.last();
    eprintln!(
        "final t={:?} x={:?} grad_norm={:?} truncated={}",
        last.t,
        last.x,
        linalg::l2_of(&obj.grad(&last.x)),
        traj.truncated
    );
    if traj.truncated {
        return Ok(ExitCode::from(EXIT_DIVERGED));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_rate(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(config).map_err(|e| e.to_string())?;
    let sections = parse_ini(&text).map_err(|e| e.to_string())?;
    let obj_sec = section(&sections, "objective")?;
    let obj_name = obj_sec.get("name").ok_or("missing objective name")?;
    let opt_sec = section(&sections, "optimizer")?;
    let spec = OptimizerSpec::from_kv(opt_sec).map_err(|e| e.to_string())?;
    let rate_sec = section(&sections, "rate")?;
    let t_grid: Vec<u64> = rate_sec
        .get("t_grid")
        .ok_or("missing t_grid")?
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| format!("bad t_grid entry {s}")))
        .collect::<Result<_, _>>()?;
    let n_seeds = get_f64(rate_sec, "seeds", 10.0)? as u64;
    let base_seed = seed.unwrap_or(get_f64(rate_sec, "seed", 0.0)? as u64);
    let seeds: Vec<u64> = (0..n_seeds).map(|i| base_seed + i).collect();
    let sigma = get_f64(rate_sec, "sigma", 1.0)?;
    let c_eta = get_f64(rate_sec, "c_eta", 0.5)?;
    let c_batch = get_f64(rate_sec, "c_batch", 10.0)?;
    let x0 = match rate_sec.get("x0") {
        Some(s) => X0Spec::parse(s).map_err(|e| e.to_string())?,
        None => X0Spec::Explicit(vec![0.0, 0.0]),
    };
    let report = harness::rate_experiment(
        obj_name, &spec, &x0, &t_grid, &seeds, sigma, c_eta, c_batch,
    )
    .map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
    match out {
        Some(path) => std::fs::write(path, &json).map_err(|e| e.to_string())?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_ablate(config: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<ExitCode, String> {
    let text = std::fs::read_to_string(config).map_err(|e| e.to_string())?;
    let sections = parse_ini(&text).map_err(|e| e.to_string())?;
    let obj_sec = section(&sections, "objective")?;
    let obj_name = obj_sec.get("name").ok_or("missing objective name")?;
    let opt_sec = section(&sections, "optimizer")?;
    let mut spec = OptimizerSpec::from_kv(opt_sec).map_err(|e| e.to_string())?;
    spec.decay = DecayMode::Cautious;
    let ab_sec = section(&sections, "ablate")?;
    let steps = get_f64(ab_sec, "steps", 1000.0)? as u64;
    let sigma = get_f64(ab_sec, "sigma", 0.1)?;
    let n_batch = get_f64(ab_sec, "n_batch", 4.0)? as usize;
    let n_seeds = get_f64(ab_sec, "seeds", 10.0)? as u64;
    let base_seed = seed.unwrap_or(get_f64(ab_sec, "seed", 0.0)? as u64);
    let seeds: Vec<u64> = (0..n_seeds).map(|i| base_seed + i).collect();
    let x0 = match ab_sec.get("x0") {
        Some(s) => X0Spec::parse(s).map_err(|e| e.to_string())?,
        None => X0Spec::RandomBox { lo: -4.0, hi: 4.0 },
    };
    let table = harness::ablation_suite(obj_name, &spec, &x0, steps, sigma, n_batch, &seeds)
        .map_err(|e| e.to_string())?;
    let json = serde_json::to_string_pretty(&table).map_err(|e| e.to_string())?;
    match out {
        Some(path) => std::fs::write(path, &json).map_err(|e| e.to_string())?,
        None => println!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run_pareto(
    trajectory: &Path,
    objective: &str,
    delta: f64,
    probes: usize,
    seed: u64,
) -> Result<ExitCode, String> {
    let obj = objective_by_name(objective).map_err(|e| e.to_string())?;
    let text = std::fs::read_to_string(trajectory).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty trajectory file")?;
    let cols: Vec<&str> = header.split(',').collect();
    let xcols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("x_"))
        .map(|(i, _)| i)
        .collect();
    if xcols.is_empty() {
        return Err("trajectory has no x_* columns".into());
    }
    let last = lines.last().ok_or("trajectory has no data rows")?;
    let fields: Vec<&str> = last.split(',').collect();
    let x: Vec<f64> = xcols
        .iter()
        .map(|&i| {
            fields
                .get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| format!("bad x value in final row, column {i}"))
        })
        .collect::<Result<_, _>>()?;
    let mut rng = stream_rng(seed, "pareto");
    let verdict = pareto_check(&x, &obj, delta, probes, &mut rng);
    let json = serde_json::json!({
        "point": verdict.point,
        "on_manifold": verdict.on_manifold,
        "locally_pareto": verdict.locally_pareto,
        "inconclusive": verdict.inconclusive,
        "witness": verdict.witness,
        "probes_used": verdict.probes_used,
        "probes_discarded": verdict.probes_discarded,
    });
    println!("{}", serde_json::to_string_pretty(&json).expect("serializable"));
    Ok(ExitCode::SUCCESS)
}
