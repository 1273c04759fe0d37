//! Discrete-time update rules for six optimizer families, each composable
//! with a weight-decay mode.
//!
//! Every family reduces to the same generic step
//! `x' = x - eta * (u + lambda * mask * x)` where `u` is the family's raw
//! update and `mask` depends on the decay mode: all-ones for decoupled
//! decay, the sign-agreement indicator `I(u x >= 0)` for cautious decay,
//! the gradient-based indicator `I(g x >= 0)` for the ablation variant, or
//! a Bernoulli draw with a prescribed per-step ratio. When `lambda == 0`
//! (or the mode is `None`) the decay branch is skipped entirely, so all
//! modes produce bit-identical iterates.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{self, sign, LinalgError, MatrixShape, ParamVector};

#[derive(Debug, Error)]
pub enum OptimError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("dimension mismatch: x has {x}, g has {g}")]
    DimMismatch { x: usize, g: usize },
    #[error("division by zero in update at coordinate {0} (epsilon=0 with zero second moment)")]
    ZeroDenominator(usize),
    #[error("nonfinite update at coordinate {index}")]
    NonFiniteUpdate { index: usize },
    #[error("random mask ratio schedule missing entry for step {0}")]
    MissingRatio(u64),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sgd,
    Sgdm,
    Adam,
    Lion,
    LionK,
    Muon,
}

impl Family {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sgd" => Some(Self::Sgd),
            "sgdm" => Some(Self::Sgdm),
            "adam" => Some(Self::Adam),
            "lion" => Some(Self::Lion),
            "lionk" | "lion_k" => Some(Self::LionK),
            "muon" => Some(Self::Muon),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Sgdm => "sgdm",
            Self::Adam => "adam",
            Self::Lion => "lion",
            Self::LionK => "lionk",
            Self::Muon => "muon",
        }
    }
}

/// Convex map whose subgradient preconditions the momentum step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMap {
    /// `K = ||.||_1`, subgradient `sgn`.
    L1,
    /// `K = ||.||_tr` on the reshaped matrix, subgradient the semi-orthogonal factor.
    Trace,
}

impl KMap {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "l1" => Some(Self::L1),
            "trace" => Some(Self::Trace),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::L1 => "l1",
            Self::Trace => "trace",
        }
    }
}

/// Weight-decay mode.
#[derive(Debug, Clone, PartialEq)]
pub enum DecayMode {
    /// No decay term.
    None,
    /// Decay every coordinate (AdamW-style).
    Decoupled,
    /// Decay only where update and parameter signs align: `I(u x >= 0)`.
    Cautious,
    /// Ablation: mask from the raw gradient, `I(g x >= 0)`.
    CautiousGradientMask,
    /// Ablation: i.i.d. Bernoulli mask with a prescribed per-step ratio,
    /// indexed by `t - 1`.
    RandomMask(Vec<f64>),
}

impl DecayMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Decoupled => "decoupled",
            Self::Cautious => "cautious",
            Self::CautiousGradientMask => "gradient_mask",
            Self::RandomMask(_) => "random_mask",
        }
    }
}

/// Learning-rate schedule.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum EtaSchedule {
    Constant(f64),
    /// Constant `eta0` for `hold` steps, then multiplied by `factor` each step.
    GeometricAnneal { eta0: f64, hold: u64, factor: f64 },
}

impl EtaSchedule {
    pub fn eta(&self, t: u64) -> f64 {
        match *self {
            Self::Constant(e) => e,
            Self::GeometricAnneal { eta0, hold, factor } => {
                if t <= hold {
                    eta0
                } else {
                    eta0 * factor.powi((t - hold) as i32)
                }
            }
        }
    }
}

/// Optimizer family plus hyperparameters, decay mode, and (for matrix
/// families) the parameter shape.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub family: Family,
    pub eta: EtaSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lambda: f64,
    pub decay: DecayMode,
    pub k: Option<KMap>,
    pub shape: Option<MatrixShape>,
}

impl OptimizerSpec {
    pub fn new(family: Family, eta: f64) -> Self {
        Self {
            family,
            eta: EtaSchedule::Constant(eta),
            beta1: 0.9,
            beta2: 0.95,
            beta: 0.9,
            epsilon: 1e-8,
            lambda: 0.0,
            decay: DecayMode::None,
            k: None,
            shape: None,
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        let unit = |v: f64, name: &str| -> Result<(), OptimError> {
            if !(0.0..1.0).contains(&v) {
                return Err(OptimError::InvalidSpec(format!("{name}={v} must be in [0,1)")));
            }
            Ok(())
        };
        match self.family {
            Family::Adam => {
                unit(self.beta1, "beta1")?;
                unit(self.beta2, "beta2")?;
                if self.beta1 > self.beta2 {
                    return Err(OptimError::InvalidSpec(format!(
                        "adam requires beta1 <= beta2 (got {} > {})",
                        self.beta1, self.beta2
                    )));
                }
            }
            Family::Sgdm | Family::Muon => unit(self.beta, "beta")?,
            Family::Lion | Family::LionK => {
                unit(self.beta1, "beta1")?;
                unit(self.beta2, "beta2")?;
            }
            Family::Sgd => {}
        }
        if self.lambda < 0.0 {
            return Err(OptimError::InvalidSpec("lambda must be >= 0".into()));
        }
        if self.epsilon < 0.0 {
            return Err(OptimError::InvalidSpec("epsilon must be >= 0".into()));
        }
        if self.family == Family::LionK && self.k.is_none() {
            return Err(OptimError::InvalidSpec("lionk requires k".into()));
        }
        let needs_shape = self.family == Family::Muon
            || (self.family == Family::LionK && self.k == Some(KMap::Trace));
        if needs_shape && self.shape.is_none() {
            return Err(OptimError::InvalidSpec(format!(
                "{} requires a matrix shape",
                self.family.as_str()
            )));
        }
        if let DecayMode::RandomMask(r) = &self.decay {
            if r.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(OptimError::InvalidSpec(
                    "random mask ratios must lie in [0,1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// key=value form used by the config files. The random-mask ratio
    /// schedule is stored out of band (it comes from a recorded run).
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut kv = BTreeMap::new();
        kv.insert("family".into(), self.family.as_str().into());
        match self.eta {
            EtaSchedule::Constant(e) => {
                kv.insert("eta".into(), format!("{e}"));
            }
            EtaSchedule::GeometricAnneal { eta0, hold, factor } => {
                kv.insert("eta".into(), format!("{eta0}"));
                kv.insert("eta_hold".into(), format!("{hold}"));
                kv.insert("eta_factor".into(), format!("{factor}"));
            }
        }
        kv.insert("beta1".into(), format!("{}", self.beta1));
        kv.insert("beta2".into(), format!("{}", self.beta2));
        kv.insert("beta".into(), format!("{}", self.beta));
        kv.insert("epsilon".into(), format!("{}", self.epsilon));
        kv.insert("lambda".into(), format!("{}", self.lambda));
        kv.insert("decay".into(), self.decay.as_str().into());
        if let Some(k) = self.k {
            kv.insert("k".into(), k.as_str().into());
        }
        if let Some(s) = self.shape {
            kv.insert("shape".into(), format!("{}x{}", s.rows, s.cols));
        }
        kv
    }

    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self, OptimError> {
        let get = |k: &str| kv.get(k).map(|s| s.as_str());
        let parse_f = |k: &str, default: f64| -> Result<f64, OptimError> {
            match get(k) {
                Some(s) => s
                    .parse()
                    .map_err(|_| OptimError::InvalidSpec(format!("bad {k}: {s}"))),
                None => Ok(default),
            }
        };
        let family = get("family")
            .and_then(Family::parse)
            .ok_or_else(|| OptimError::InvalidSpec("missing or bad family".into()))?;
        let eta0 = parse_f("eta", 0.01)?;
        let eta = match (get("eta_hold"), get("eta_factor")) {
            (Some(h), Some(f)) => EtaSchedule::GeometricAnneal {
                eta0,
                hold: h
                    .parse()
                    .map_err(|_| OptimError::InvalidSpec(format!("bad eta_hold: {h}")))?,
                factor: f
                    .parse()
                    .map_err(|_| OptimError::InvalidSpec(format!("bad eta_factor: {f}")))?,
            },
            (None, None) => EtaSchedule::Constant(eta0),
            _ => {
                return Err(OptimError::InvalidSpec(
                    "eta_hold and eta_factor must appear together".into(),
                ))
            }
        };
        let decay = match get("decay").unwrap_or("none") {
            "none" => DecayMode::None,
            "decoupled" => DecayMode::Decoupled,
            "cautious" => DecayMode::Cautious,
            "gradient_mask" => DecayMode::CautiousGradientMask,
            "random_mask" => DecayMode::RandomMask(Vec::new()),
            other => return Err(OptimError::InvalidSpec(format!("bad decay: {other}"))),
        };
        let k = match get("k") {
            Some(s) => Some(
                KMap::parse(s).ok_or_else(|| OptimError::InvalidSpec(format!("bad k: {s}")))?,
            ),
            None => None,
        };
        let shape = match get("shape") {
            Some(s) => {
                let (r, c) = s
                    .split_once('x')
                    .ok_or_else(|| OptimError::InvalidSpec(format!("bad shape: {s}")))?;
                let rows = r
                    .parse()
                    .map_err(|_| OptimError::InvalidSpec(format!("bad shape: {s}")))?;
                let cols = c
                    .parse()
                    .map_err(|_| OptimError::InvalidSpec(format!("bad shape: {s}")))?;
                Some(MatrixShape::new(rows, cols)?)
            }
            None => None,
        };
        let spec = Self {
            family,
            eta,
            beta1: parse_f("beta1", 0.9)?,
            beta2: parse_f("beta2", 0.95)?,
            beta: parse_f("beta", 0.9)?,
            epsilon: parse_f("epsilon", 1e-8)?,
            lambda: parse_f("lambda", 0.0)?,
            decay,
            k,
            shape,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Mutable per-run optimizer state.
#[derive(Debug, Clone)]
pub struct OptState {
    /// Step counter of the *next* step, starting at 1.
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Raw update `u` of the last step (descent convention).
    pub last_update: Vec<f64>,
    /// Decay mask applied at the last step (all zeros when no decay ran).
    pub last_mask: Vec<f64>,
    /// `I(u x >= 0)` diagnostic of the last step, regardless of mode.
    pub last_cautious_mask: Vec<f64>,
    /// `I(u x > 0)` strict-variant diagnostic of the last step.
    pub last_strict_mask: Vec<f64>,
    mask_rng: ChaCha8Rng,
}

impl OptState {
    pub fn new(dim: usize, mask_rng: ChaCha8Rng) -> Self {
        Self {
            t: 1,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            last_update: vec![0.0; dim],
            last_mask: vec![0.0; dim],
            last_cautious_mask: vec![0.0; dim],
            last_strict_mask: vec![0.0; dim],
            mask_rng,
        }
    }
}

/// `mask_i = 1` iff `u_i * x_i >= 0` (inclusive at zero).
pub fn cwd_mask(u: &[f64], x: &[f64]) -> Vec<f64> {
    assert_eq!(u.len(), x.len());
    u.iter()
        .zip(x.iter())
        .map(|(ui, xi)| if ui * xi >= 0.0 { 1.0 } else { 0.0 })
        .collect()
}

fn strict_mask(u: &[f64], x: &[f64]) -> Vec<f64> {
    u.iter()
        .zip(x.iter())
        .map(|(ui, xi)| if ui * xi > 0.0 { 1.0 } else { 0.0 })
        .collect()
}

/// Resolves the decay mask for one step. `u_for_mask` is the family's
/// listed mask input (momentum for the momentum families, the raw update
/// otherwise); `g` is the raw gradient.
pub fn apply_ablation_mask(
    mode: &DecayMode,
    u_for_mask: &[f64],
    g: &[f64],
    x: &[f64],
    t: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, OptimError> {
    match mode {
        DecayMode::None => Ok(vec![0.0; x.len()]),
        DecayMode::Decoupled => Ok(vec![1.0; x.len()]),
        DecayMode::Cautious => Ok(cwd_mask(u_for_mask, x)),
        DecayMode::CautiousGradientMask => Ok(cwd_mask(g, x)),
        DecayMode::RandomMask(sched) => {
            let idx = (t - 1) as usize;
            let ratio = *sched.get(idx).ok_or(OptimError::MissingRatio(t))?;
            Ok((0..x.len())
                .map(|_| if rng.gen::<f64>() < ratio { 1.0 } else { 0.0 })
                .collect())
        }
    }
}

/// Mask activation ratios of the last step: `(inclusive, strict)`, where
/// inclusive uses `u x >= 0` and strict uses `u x > 0`.
pub fn mask_ratio(state: &OptState) -> (f64, f64) {
    let d = state.last_cautious_mask.len() as f64;
    let incl = state.last_cautious_mask.iter().sum::<f64>() / d;
    let strict = state.last_strict_mask.iter().sum::<f64>() / d;
    (incl, strict)
}

/// One optimizer step. Returns the next parameter vector; `state` is
/// advanced in place.
pub fn step(
    spec: &OptimizerSpec,
    state: &mut OptState,
    x: &[f64],
    g: &[f64],
) -> Result<Vec<f64>, OptimError> {
    if x.len() != g.len() {
        return Err(OptimError::DimMismatch {
            x: x.len(),
            g: g.len(),
        });
    }
    let t = state.t;
    let eta = spec.eta.eta(t);
    let d = x.len();

    // Raw update u (descent convention) and the family's mask input.
    let (u, mask_input): (Vec<f64>, Vec<f64>) = match spec.family {
        Family::Sgd => (g.to_vec(), g.to_vec()),
        Family::Sgdm => {
            for i in 0..d {
                state.m[i] = spec.beta * state.m[i] + (1.0 - spec.beta) * g[i];
            }
            (state.m.clone(), state.m.clone())
        }
        Family::Adam => {
            let bc1 = 1.0 - spec.beta1.powi(t as i32);
            let bc2 = 1.0 - spec.beta2.powi(t as i32);
            let mut u = vec![0.0; d];
            for i in 0..d {
                state.m[i] = spec.beta1 * state.m[i] + (1.0 - spec.beta1) * g[i];
                state.v[i] = spec.beta2 * state.v[i] + (1.0 - spec.beta2) * g[i] * g[i];
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                let denom = vhat.sqrt() + spec.epsilon;
                if denom == 0.0 {
                    return Err(OptimError::ZeroDenominator(i));
                }
                u[i] = mhat / denom;
            }
            (u, state.m.clone())
        }
        Family::Lion => {
            // m-tilde drives both the sign update and the mask; the slower
            // moment is written back afterwards.
            let mtilde: Vec<f64> = (0..d)
                .map(|i| spec.beta1 * state.m[i] + (1.0 - spec.beta1) * g[i])
                .collect();
            for i in 0..d {
                state.m[i] = spec.beta2 * state.m[i] + (1.0 - spec.beta2) * g[i];
            }
            (mtilde.iter().map(|&v| sign(v)).collect(), mtilde)
        }
        Family::LionK => {
            // Ascent-form listing: both moments filter the *negated*
            // gradient, and the step adds the subgradient of K.
            let mtilde: Vec<f64> = (0..d)
                .map(|i| spec.beta1 * state.m[i] - (1.0 - spec.beta1) * g[i])
                .collect();
            for i in 0..d {
                state.m[i] = spec.beta2 * state.m[i] - (1.0 - spec.beta2) * g[i];
            }
            let kgrad = k_subgradient(spec, &mtilde)?;
            let u: Vec<f64> = kgrad.iter().map(|&v| -v).collect();
            (u, mtilde)
        }
        Family::Muon => {
            let shape = spec
                .shape
                .ok_or_else(|| OptimError::InvalidSpec("muon requires shape".into()))?;
            shape.check(d)?;
            // Momentum accumulates the raw gradient without a (1 - beta) factor.
            for i in 0..d {
                state.m[i] = spec.beta * state.m[i] + g[i];
            }
            let o = linalg::newton_schulz_sign(
                &ParamVector::new(state.m.clone())?,
                shape,
                linalg::NEWTON_SCHULZ_ITERS,
            )?;
            let o = o.into_vec();
            (o.clone(), o)
        }
    };

    // Mask input for the cautious rule: Lion-K's listing masks on the
    // subgradient of K (= -u), which matches I(u x >= 0) exactly.
    let cautious_input: &[f64] = if spec.family == Family::LionK {
        &u
    } else {
        &mask_input
    };
    state.last_cautious_mask = cwd_mask(cautious_input, x);
    state.last_strict_mask = strict_mask(cautious_input, x);

    let decay_active = spec.lambda > 0.0 && spec.decay != DecayMode::None;
    let mut next = vec![0.0; d];
    if decay_active {
        let mask = match &spec.decay {
            DecayMode::Cautious => state.last_cautious_mask.clone(),
            other => apply_ablation_mask(other, cautious_input, g, x, t, &mut state.mask_rng)?,
        };
        for i in 0..d {
            next[i] = x[i] - eta * (u[i] + spec.lambda * (mask[i] * x[i]));
        }
        state.last_mask = mask;
    } else {
        for i in 0..d {
            next[i] = x[i] - eta * u[i];
        }
        state.last_mask = vec![0.0; d];
    }
    for (i, v) in next.iter().enumerate() {
        if !v.is_finite() {
            return Err(OptimError::NonFiniteUpdate { index: i });
        }
    }
    state.last_update = u;
    state.t += 1;
    Ok(next)
}

fn k_subgradient(spec: &OptimizerSpec, m: &[f64]) -> Result<Vec<f64>, OptimError> {
    match spec.k {
        Some(KMap::L1) => Ok(m.iter().map(|&v| sign(v)).collect()),
        Some(KMap::Trace) => {
            let shape = spec
                .shape
                .ok_or_else(|| OptimError::InvalidSpec("trace K requires shape".into()))?;
            Ok(linalg::newton_schulz_sign(
                &ParamVector::new(m.to_vec())?,
                shape,
                linalg::NEWTON_SCHULZ_ITERS,
            )?
            .into_vec())
        }
        None => Err(OptimError::InvalidSpec("missing K map".into())),
    }
}

/// Evaluates `K(m)` itself (for the Lyapunov functions).
pub fn k_value(k: KMap, m: &[f64], shape: Option<MatrixShape>) -> f64 {
    match k {
        KMap::L1 => m.iter().map(|v| v.abs()).sum(),
        KMap::Trace => {
            let shape = shape.expect("trace K requires shape");
            // nuclear norm via singular values of the small matrix
            let mat = nalgebra::DMatrix::from_row_slice(shape.rows, shape.cols, m);
            mat.svd(false, false).singular_values.iter().sum()
        }
    }
}

/// Writes `coordinate,m,v` rows for a resumable run.
pub fn write_checkpoint(path: &std::path::Path, state: &OptState) -> Result<(), OptimError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "coordinate,m,v")?;
    for i in 0..state.m.len() {
        writeln!(f, "{},{:?},{:?}", i, state.m[i], state.v[i])?;
    }
    Ok(())
}

/// Restores the moment buffers of a checkpoint into a fresh state.
pub fn read_checkpoint(path: &std::path::Path, mask_rng: ChaCha8Rng) -> Result<OptState, OptimError> {
    let text = std::fs::read_to_string(path)?;
    let mut m = Vec::new();
    let mut v = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1) {
        let mut it = line.split(',');
        let _coord = it
            .next()
            .ok_or_else(|| OptimError::BadCheckpoint(format!("line {ln}: missing coord")))?;
        let mv: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| OptimError::BadCheckpoint(format!("line {ln}: bad m")))?;
        let vv: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| OptimError::BadCheckpoint(format!("line {ln}: bad v")))?;
        m.push(mv);
        v.push(vv);
    }
    if m.is_empty() {
        return Err(OptimError::BadCheckpoint("no rows".into()));
    }
    let mut st = OptState::new(m.len(), mask_rng);
    st.m = m;
    st.v = v;
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn cwd_mask_sign_cases() {
        assert_eq!(
            cwd_mask(&[1.0, -1.0, 0.0], &[2.0, 3.0, 5.0]),
            vec![1.0, 0.0, 1.0]
        );
        let x = [1.5, -2.5, 0.25];
        assert_eq!(cwd_mask(&x, &x), vec![1.0; 3]);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(cwd_mask(&neg, &x), vec![0.0; 3]);
    }

    #[test]
    fn sgd_cautious_hand_example() {
        let mut spec = OptimizerSpec::new(Family::Sgd, 0.1);
        spec.lambda = 1.0;
        spec.decay = DecayMode::Cautious;
        let mut st = OptState::new(2, rng());
        let next = step(&spec, &mut st, &[1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(next[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], -1.1, epsilon = 1e-15);
    }

    #[test]
    fn sgd_lambda_zero_modes_identical() {
        for decay in [DecayMode::None, DecayMode::Decoupled, DecayMode::Cautious] {
            let mut spec = OptimizerSpec::new(Family::Sgd, 0.05);
            spec.lambda = 0.0;
            spec.decay = decay;
            let mut st = OptState::new(2, rng());
            let next = step(&spec, &mut st, &[1.0, 2.0], &[0.3, -0.4]).unwrap();
            assert_eq!(next, vec![1.0 - 0.05 * 0.3, 2.0 - 0.05 * (-0.4)]);
        }
    }

    #[test]
    fn sgdm_first_step_and_beta_zero() {
        let mut spec = OptimizerSpec::new(Family::Sgdm, 0.1);
        spec.beta = 0.9;
        let mut st = OptState::new(2, rng());
        let g = [2.0, -4.0];
        step(&spec, &mut st, &[0.0, 0.0], &g).unwrap();
        // m1 = (1 - beta) g1
        assert_abs_diff_eq!(st.m[0], 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(st.m[1], -0.4, epsilon = 1e-15);

        // beta = 0 reduces exactly to sgd
        let mut sm = OptimizerSpec::new(Family::Sgdm, 0.1);
        sm.beta = 0.0;
        let sg = OptimizerSpec::new(Family::Sgd, 0.1);
        let mut st_m = OptState::new(2, rng());
        let mut st_g = OptState::new(2, rng());
        let a = step(&sm, &mut st_m, &[1.0, 1.0], &g).unwrap();
        let b = step(&sg, &mut st_g, &[1.0, 1.0], &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sgdm_momentum_geometric_relaxation() {
        let mut spec = OptimizerSpec::new(Family::Sgdm, 1e-9);
        spec.beta = 0.9;
        let mut st = OptState::new(1, rng());
        let c = 3.0;
        let mut x = vec![0.0];
        for t in 1..=40u32 {
            x = step(&spec, &mut st, &x, &[c]).unwrap();
            let expect_gap = spec.beta.powi(t as i32) * c;
            assert_abs_diff_eq!(c - st.m[0], expect_gap, epsilon = 1e-10);
        }
    }

    #[test]
    fn adam_first_step_bias_correction() {
        let mut spec = OptimizerSpec::new(Family::Adam, 0.1);
        spec.beta1 = 0.9;
        spec.beta2 = 0.95;
        spec.epsilon = 1e-8;
        let mut st = OptState::new(1, rng());
        let next = step(&spec, &mut st, &[0.0], &[1.0]).unwrap();
        // mhat = vhat = 1 at t=1, update direction 1/(1+eps)
        let expect = -0.1 * (1.0 / (1.0 + 1e-8));
        assert_abs_diff_eq!(next[0], expect, epsilon = 1e-16);
    }

    #[test]
    fn adam_mask_uses_uncorrected_momentum_same_sign_as_update() {
        let mut spec = OptimizerSpec::new(Family::Adam, 0.01);
        spec.lambda = 0.5;
        spec.decay = DecayMode::Cautious;
        let mut st = OptState::new(3, rng());
        let mut x = vec![1.0, -2.0, 0.5];
        let mut r = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let g: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
            x = step(&spec, &mut st, &x, &g).unwrap();
            for i in 0..3 {
                assert_eq!(sign(st.m[i]), sign(st.last_update[i]), "sign pattern differs");
            }
        }
    }

    #[test]
    fn adam_zero_epsilon_zero_v_errors() {
        let mut spec = OptimizerSpec::new(Family::Adam, 0.1);
        spec.epsilon = 0.0;
        let mut st = OptState::new(1, rng());
        let err = step(&spec, &mut st, &[1.0], &[0.0]).unwrap_err();
        assert!(matches!(err, OptimError::ZeroDenominator(0)));
    }

    #[test]
    fn lion_hand_example() {
        // x=(2,-2), mtilde=(1,1) via beta1=0, g=(1,1), eta=0.1, lambda=1
        let mut spec = OptimizerSpec::new(Family::Lion, 0.1);
        spec.beta1 = 0.0;
        spec.beta2 = 0.5;
        spec.lambda = 1.0;
        spec.decay = DecayMode::Cautious;
        let mut st = OptState::new(2, rng());
        let next = step(&spec, &mut st, &[2.0, -2.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(next[0], 1.7, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], -2.1, epsilon = 1e-15);
    }

    #[test]
    fn lion_equal_betas_moments_coincide() {
        let mut spec = OptimizerSpec::new(Family::Lion, 0.01);
        spec.beta1 = 0.8;
        spec.beta2 = 0.8;
        let mut st = OptState::new(2, rng());
        let mut x = vec![0.3, -0.7];
        let mut m_prev = vec![0.0, 0.0];
        let mut r = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let g: Vec<f64> = (0..2).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mtilde: Vec<f64> = (0..2)
                .map(|i| 0.8 * m_prev[i] + (1.0 - 0.8) * g[i])
                .collect();
            x = step(&spec, &mut st, &x, &g).unwrap();
            assert_eq!(st.m, mtilde);
            m_prev = st.m.clone();
        }
    }

    #[test]
    fn lionk_l1_no_decay_is_ascent_by_sign() {
        let mut spec = OptimizerSpec::new(Family::LionK, 0.1);
        spec.k = Some(KMap::L1);
        spec.beta1 = 0.0;
        spec.beta2 = 0.0;
        let mut st = OptState::new(2, rng());
        // mtilde = -g, K-subgradient = sgn(-g); step adds it
        let next = step(&spec, &mut st, &[0.0, 0.0], &[1.0, -2.0]).unwrap();
        assert_abs_diff_eq!(next[0], -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn lionk_mask_condition_matches_generic_rule() {
        // I(grad-K x <= 0) must equal cwd_mask(-grad-K, x) exactly
        let k = [1.0, -1.0, 0.0];
        let x = [2.0, 2.0, 5.0];
        let listing: Vec<f64> = k
            .iter()
            .zip(x.iter())
            .map(|(ki, xi)| if ki * xi <= 0.0 { 1.0 } else { 0.0 })
            .collect();
        let neg: Vec<f64> = k.iter().map(|v| -v).collect();
        assert_eq!(listing, cwd_mask(&neg, &x));
    }

    #[test]
    fn muon_scalar_reduces_to_sign_momentum() {
        let mut spec = OptimizerSpec::new(Family::Muon, 0.1);
        spec.beta = 0.5;
        spec.shape = Some(MatrixShape::new(1, 1).unwrap());
        let mut st = OptState::new(1, rng());
        let next = step(&spec, &mut st, &[3.0], &[-2.0]).unwrap();
        // M = -2, sign(M) = -1 up to newton-schulz accuracy
        assert_abs_diff_eq!(st.last_update[0], -1.0, epsilon = 0.31);
        assert!(next[0] > 3.0);
    }

    #[test]
    fn muon_stateless_step_matches_sign_of_gradient() {
        let mut spec = OptimizerSpec::new(Family::Muon, 0.1);
        spec.beta = 0.0;
        spec.shape = Some(MatrixShape::new(2, 2).unwrap());
        let mut st = OptState::new(4, rng());
        let g = [2.0, 0.0, 0.0, 0.5];
        let x = [0.0; 4];
        let next = step(&spec, &mut st, &x, &g).unwrap();
        // O approx identity for diag(2, 0.5) input
        assert!((next[0] + 0.1).abs() < 0.04);
        assert!((next[3] + 0.1).abs() < 0.04);
    }

    #[test]
    fn ablation_mask_extremes_and_concentration() {
        let mut r = rng();
        let x = vec![1.0; 8];
        let g = vec![1.0; 8];
        let ones = apply_ablation_mask(&DecayMode::RandomMask(vec![1.0]), &g, &g, &x, 1, &mut r)
            .unwrap();
        assert_eq!(ones, vec![1.0; 8]);
        let zeros = apply_ablation_mask(&DecayMode::RandomMask(vec![0.0]), &g, &g, &x, 1, &mut r)
            .unwrap();
        assert_eq!(zeros, vec![0.0; 8]);

        let big = vec![1.0; 100_000];
        let m = apply_ablation_mask(
            &DecayMode::RandomMask(vec![0.7]),
            &big,
            &big,
            &big,
            1,
            &mut r,
        )
        .unwrap();
        let mean = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 0.7).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn random_mask_missing_ratio_errors() {
        let mut spec = OptimizerSpec::new(Family::Sgd, 0.1);
        spec.lambda = 0.5;
        spec.decay = DecayMode::RandomMask(vec![]);
        let mut st = OptState::new(1, rng());
        let err = step(&spec, &mut st, &[1.0], &[1.0]).unwrap_err();
        assert!(matches!(err, OptimError::MissingRatio(1)));
    }

    #[test]
    fn mask_ratio_cases() {
        let mut spec = OptimizerSpec::new(Family::Sgd, 0.0);
        spec.lambda = 1.0;
        spec.decay = DecayMode::Cautious;
        let mut st = OptState::new(2, rng());
        step(&spec, &mut st, &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        let (incl, strict) = mask_ratio(&st);
        assert_eq!(incl, 0.5);
        assert_eq!(strict, 0.5);
    }

    #[test]
    fn masked_decay_never_flips_sign() {
        let mut spec = OptimizerSpec::new(Family::Sgd, 0.5);
        spec.lambda = 1.0; // eta*lambda = 0.5 <= 1
        spec.decay = DecayMode::Cautious;
        let mut st = OptState::new(1, rng());
        // zero gradient isolates the decay contraction
        let x = [4.0];
        let next = step(&spec, &mut st, &x, &[0.0]).unwrap();
        assert!(next[0] > 0.0 && next[0] < x[0]);
    }

    #[test]
    fn spec_kv_roundtrip() {
        let mut spec = OptimizerSpec::new(Family::Adam, 0.01);
        spec.lambda = 0.5;
        spec.decay = DecayMode::Cautious;
        spec.eta = EtaSchedule::GeometricAnneal {
            eta0: 0.01,
            hold: 100,
            factor: 0.99,
        };
        let kv = spec.to_kv();
        let back = OptimizerSpec::from_kv(&kv).unwrap();
        assert_eq!(spec, back);
    }

    #[test]
    fn spec_validation_rejects_bad_betas() {
        let mut spec = OptimizerSpec::new(Family::Adam, 0.01);
        spec.beta1 = 0.99;
        spec.beta2 = 0.9;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.csv");
        let mut st = OptState::new(3, rng());
        st.m = vec![0.1, -0.2, 0.3];
        st.v = vec![1.0, 2.0, 3.0];
        write_checkpoint(&path, &st).unwrap();
        let back = read_checkpoint(&path, rng()).unwrap();
        assert_eq!(back.m, st.m);
        assert_eq!(back.v, st.v);
    }
}
