//! Differentiable test objectives, stochastic-gradient wrappers, and a
//! finite-difference oracle.
//!
//! The built-in suite contains two 2-d quartic toys whose minimizers form
//! curves rather than isolated points, plus degenerate quadratics
//! `f(x) = 1/2 (x-b)^T A (x-b)` whose stationary set is the affine subspace
//! `b + null(A)`. Those manifolds are what the sliding-mode and Pareto
//! machinery probes.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("matrix is not symmetric at ({i},{j}): {a} vs {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("unknown objective name: {0}")]
    UnknownName(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad matrix file {path}: {reason}")]
    BadMatrixFile { path: String, reason: String },
}

pub type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type HessFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;

/// Evaluation bundle: `f`, its analytic gradient, and an optional dense
/// Hessian (row-major `dim x dim`).
#[derive(Clone)]
pub struct Objective {
    name: String,
    dim: usize,
    eval: EvalFn,
    grad: GradFn,
    hess: Option<HessFn>,
}

impl std::fmt::Debug for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Objective")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl Objective {
    /// Assembles an objective from closures (analytic gradient required,
    /// Hessian optional).
    pub fn from_parts(
        name: impl Into<String>,
        dim: usize,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hess: Option<HessFn>,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            hess,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (self.grad)(x)
    }

    pub fn has_hessian(&self) -> bool {
        self.hess.is_some()
    }

    /// Analytic Hessian when available, otherwise central differences of the
    /// analytic gradient.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        match &self.hess {
            Some(h) => h(x),
            None => finite_diff_hessian(self, x, 1e-5),
        }
    }
}

/// Fig.-3 left toy: `f(x,y) = ((y-3)^2 - (x-3)^2 - 1)^2`.
/// Minimizer manifold: the hyperbola `(y-3)^2 - (x-3)^2 = 1`.
pub fn toy_hyperbola() -> Objective {
    let r = |x: &[f64]| (x[1] - 3.0).powi(2) - (x[0] - 3.0).powi(2) - 1.0;
    Objective {
        name: "toy_hyperbola".into(),
        dim: 2,
        eval: Arc::new(move |x| r(x).powi(2)),
        grad: Arc::new(move |x| {
            let rv = r(x);
            vec![-4.0 * rv * (x[0] - 3.0), 4.0 * rv * (x[1] - 3.0)]
        }),
        hess: Some(Arc::new(move |x| {
            let rv = r(x);
            let (dx, dy) = (x[0] - 3.0, x[1] - 3.0);
            // H = 2 (grad r)(grad r)^T + 2 r * hess r, grad r = (-2dx, 2dy)
            vec![
                8.0 * dx * dx - 4.0 * rv,
                -8.0 * dx * dy,
                -8.0 * dx * dy,
                8.0 * dy * dy + 4.0 * rv,
            ]
        })),
    }
}

/// Fig.-3 right toy: `f(x,y) = (y - 3 - (x-3)^2)^2`.
/// Minimizer manifold: the parabola `y = 3 + (x-3)^2`.
pub fn toy_parabola() -> Objective {
    let r = |x: &[f64]| x[1] - 3.0 - (x[0] - 3.0).powi(2);
    Objective {
        name: "toy_parabola".into(),
        dim: 2,
        eval: Arc::new(move |x| r(x).powi(2)),
        grad: Arc::new(move |x| {
            let rv = r(x);
            vec![-4.0 * rv * (x[0] - 3.0), 2.0 * rv]
        }),
        hess: Some(Arc::new(move |x| {
            let rv = r(x);
            let dx = x[0] - 3.0;
            // grad r = (-2dx, 1), hess r = [[-2,0],[0,0]]
            vec![8.0 * dx * dx - 4.0 * rv, -4.0 * dx, -4.0 * dx, 2.0]
        })),
    }
}

/// Quadratic `f(x) = 1/2 (x-b)^T A (x-b)` with symmetric PSD `A`.
/// The stationary set is `b + null(A)`.
pub fn quadratic_manifold(a: Vec<f64>, b: Vec<f64>) -> Result<Objective, ObjectiveError> {
    let dim = b.len();
    assert_eq!(a.len(), dim * dim, "A must be dim x dim");
    for i in 0..dim {
        for j in (i + 1)..dim {
            let (u, v) = (a[i * dim + j], a[j * dim + i]);
            if (u - v).abs() > 1e-12 * (1.0 + u.abs().max(v.abs())) {
                return Err(ObjectiveError::NotSymmetric { i, j, a: u, b: v });
            }
        }
    }
    let a = Arc::new(a);
    let b = Arc::new(b);
    let (ae, be) = (a.clone(), b.clone());
    let (ag, bg) = (a.clone(), b.clone());
    let ah = a.clone();
    Ok(Objective {
        name: "quadratic_manifold".into(),
        dim,
        eval: Arc::new(move |x| {
            let d: Vec<f64> = x.iter().zip(be.iter()).map(|(xi, bi)| xi - bi).collect();
            let mut acc = 0.0;
            for i in 0..dim {
                for j in 0..dim {
                    acc += d[i] * ae[i * dim + j] * d[j];
                }
            }
            0.5 * acc
        }),
        grad: Arc::new(move |x| {
            let d: Vec<f64> = x.iter().zip(bg.iter()).map(|(xi, bi)| xi - bi).collect();
            (0..dim)
                .map(|i| (0..dim).map(|j| ag[i * dim + j] * d[j]).sum())
                .collect()
        }),
        hess: Some(Arc::new(move |_| ah.as_ref().clone())),
    })
}

/// `f_hat(x) = f(x) + (lambda/2) ||x||^2` with the matching analytic gradient
/// `grad f + lambda x`.
pub fn ell2_regularize(base: Objective, lambda: f64) -> Objective {
    let name = format!("{}+l2({})", base.name, lambda);
    let dim = base.dim;
    let be = base.clone();
    let bg = base.clone();
    let bh = base.clone();
    Objective {
        name,
        dim,
        eval: Arc::new(move |x| {
            be.eval(x) + 0.5 * lambda * x.iter().map(|v| v * v).sum::<f64>()
        }),
        grad: Arc::new(move |x| {
            let mut g = bg.grad(x);
            for (gi, xi) in g.iter_mut().zip(x.iter()) {
                *gi += lambda * *xi;
            }
            g
        }),
        hess: if base.has_hessian() {
            Some(Arc::new(move |x| {
                let mut h = bh.hessian(x);
                for i in 0..dim {
                    h[i * dim + i] += lambda;
                }
                h
            }))
        } else {
            None
        },
    }
}

/// Central-difference gradient: `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn finite_diff_grad(obj: &Objective, x: &[f64], h: f64) -> Vec<f64> {
    assert!(h > 0.0);
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let xi = x[i];
        xp[i] = xi + h;
        let fp = obj.eval(&xp);
        xp[i] = xi - h;
        let fm = obj.eval(&xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central differences of the analytic gradient; symmetrized.
pub fn finite_diff_hessian(obj: &Objective, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut hess = vec![0.0; d * d];
    let mut xp = x.to_vec();
    for j in 0..d {
        let xj = x[j];
        xp[j] = xj + h;
        let gp = obj.grad(&xp);
        xp[j] = xj - h;
        let gm = obj.grad(&xp);
        xp[j] = xj;
        for i in 0..d {
            hess[i * d + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let s = 0.5 * (hess[i * d + j] + hess[j * d + i]);
            hess[i * d + j] = s;
            hess[j * d + i] = s;
        }
    }
    hess
}

/// Max of `||grad(y) - grad(x)|| / ||y - x||` over sampled pairs inside
/// `[-box_half, box_half]^dim`; a numeric stand-in for the smoothness
/// constant.
pub fn estimate_smoothness(obj: &Objective, box_half: f64, pairs: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut best = 0.0f64;
    for _ in 0..pairs {
        let x: Vec<f64> = (0..obj.dim())
            .map(|_| rng.gen_range(-box_half..box_half))
            .collect();
        let y: Vec<f64> = (0..obj.dim())
            .map(|_| rng.gen_range(-box_half..box_half))
            .collect();
        let dx = crate::linalg::l2_of(
            &x.iter().zip(y.iter()).map(|(a, b)| a - b).collect::<Vec<_>>(),
        );
        if dx < 1e-12 {
            continue;
        }
        let gx = obj.grad(&x);
        let gy = obj.grad(&y);
        let dg = crate::linalg::l2_of(
            &gx.iter()
                .zip(gy.iter())
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        best = best.max(dg / dx);
    }
    best
}

/// Unbiased gradient sampler: `grad f(x) + zeta`, where `zeta` is isotropic
/// Gaussian with total variance `sigma^2 / n_batch`. Deterministic given the
/// seed and draw order.
pub struct StochasticGradientSource {
    base: Objective,
    noise_scale: f64,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl StochasticGradientSource {
    pub fn new(base: Objective, noise_scale: f64, batch_size: usize, rng: ChaCha8Rng) -> Self {
        assert!(noise_scale >= 0.0);
        assert!(batch_size >= 1);
        Self {
            base,
            noise_scale,
            batch_size,
            rng,
        }
    }

    pub fn objective(&self) -> &Objective {
        &self.base
    }

    /// Draws one stochastic gradient at `x`.
    pub fn sample(&mut self, x: &[f64]) -> Vec<f64> {
        let mut g = self.base.grad(x);
        if self.noise_scale > 0.0 {
            // total variance sigma^2/n_batch split evenly over coordinates
            let per_coord_sd = self.noise_scale
                / ((self.batch_size as f64) * (self.base.dim() as f64)).sqrt();
            let normal = Normal::new(0.0, per_coord_sd).expect("valid stddev");
            for gi in g.iter_mut() {
                *gi += normal.sample(&mut self.rng);
            }
        }
        g
    }
}

/// Resolves an objective from its CLI name: `toy_hyperbola`, `toy_parabola`,
/// or `quadratic:<csv-path>` where the file holds `dim` rows of `A` followed
/// by one row `b`, comma-separated and header-free.
pub fn objective_by_name(name: &str) -> Result<Objective, ObjectiveError> {
    match name {
        "toy_hyperbola" => Ok(toy_hyperbola()),
        "toy_parabola" => Ok(toy_parabola()),
        _ => {
            if let Some(path) = name.strip_prefix("quadratic:") {
                load_quadratic_csv(Path::new(path))
            } else {
                Err(ObjectiveError::UnknownName(name.into()))
            }
        }
    }
}

fn load_quadratic_csv(path: &Path) -> Result<Objective, ObjectiveError> {
    let text = std::fs::read_to_string(path).map_err(|e| ObjectiveError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
        })
        .collect::<Result<_, _>>()
        .map_err(|e| ObjectiveError::BadMatrixFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
    if rows.len() < 2 {
        return Err(ObjectiveError::BadMatrixFile {
            path: path.display().to_string(),
            reason: "need dim rows of A plus one row b".into(),
        });
    }
    let dim = rows.len() - 1;
    let mut a = Vec::with_capacity(dim * dim);
    for (i, row) in rows[..dim].iter().enumerate() {
        if row.len() != dim {
            return Err(ObjectiveError::BadMatrixFile {
                path: path.display().to_string(),
                reason: format!("row {i} has {} entries, expected {dim}", row.len()),
            });
        }
        a.extend_from_slice(row);
    }
    if rows[dim].len() != dim {
        return Err(ObjectiveError::BadMatrixFile {
            path: path.display().to_string(),
            reason: format!("b row has {} entries, expected {dim}", rows[dim].len()),
        });
    }
    quadratic_manifold(a, rows[dim].clone())
}

/// Random rank-deficient PSD quadratic `A = B^T B / dim` with `B` of the
/// given rank; used by the verification suites.
pub fn random_psd_quadratic(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> Objective {
    assert!(rank <= dim && rank >= 1);
    let b_mat: Vec<f64> = (0..rank * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut a = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for k in 0..rank {
                acc += b_mat[k * dim + i] * b_mat[k * dim + j];
            }
            a[i * dim + j] = acc / dim as f64;
        }
    }
    let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    quadratic_manifold(a, b).expect("constructed symmetric")
}

/// The built-in verification suite.
pub fn builtin_suite(seed: u64) -> Vec<Objective> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let identity = quadratic_manifold(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
    vec![
        toy_hyperbola(),
        toy_parabola(),
        identity,
        random_psd_quadratic(3, 2, &mut rng),
        random_psd_quadratic(4, 2, &mut rng),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn hyperbola_values() {
        let f = toy_hyperbola();
        assert_abs_diff_eq!(f.eval(&[3.0, 4.0]), 0.0);
        assert_abs_diff_eq!(f.eval(&[3.0, 3.0]), 1.0);
        let g = f.grad(&[3.0, 3.0]);
        assert_abs_diff_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[1], 0.0);
        let fd = finite_diff_grad(&f, &[3.0, 3.0], 1e-6);
        assert_abs_diff_eq!(fd[0], 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(fd[1], 0.0, epsilon = 1e-6);
    }

    #[test]
    fn parabola_values() {
        let f = toy_parabola();
        assert_abs_diff_eq!(f.eval(&[3.0, 3.0]), 0.0);
        assert_abs_diff_eq!(f.eval(&[0.0, 0.0]), 144.0);
        assert_abs_diff_eq!(f.eval(&[4.0, 4.0]), 0.0);
    }

    #[test]
    fn quadratic_manifold_cases() {
        let f = quadratic_manifold(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(f.eval(&[1.0, 2.0]), 2.5);
        assert_eq!(f.grad(&[1.0, 2.0]), vec![1.0, 2.0]);

        let f = quadratic_manifold(vec![1.0, 0.0, 0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.eval(&[1.0, 77.0]), 0.0);
        assert_abs_diff_eq!(f.eval(&[2.0, 5.0]), 0.5);
        assert_eq!(f.grad(&[2.0, 5.0]), vec![1.0, 0.0]);

        assert!(quadratic_manifold(vec![1.0, 2.0, 3.0, 1.0], vec![0.0, 0.0]).is_err());
    }

    #[test]
    fn ell2_cases() {
        let zero = quadratic_manifold(vec![0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0]).unwrap();
        let f = ell2_regularize(zero, 2.0);
        assert_abs_diff_eq!(f.eval(&[1.0, 1.0]), 2.0);
        assert_eq!(f.grad(&[1.0, 1.0]), vec![2.0, 2.0]);

        let base = toy_parabola();
        let same = ell2_regularize(base.clone(), 0.0);
        let x = [0.7, -1.3];
        assert_eq!(same.eval(&x), base.eval(&x));
        assert_eq!(same.grad(&x), base.grad(&x));

        let f = ell2_regularize(toy_parabola(), 1.0);
        assert_abs_diff_eq!(f.eval(&[3.0, 3.0]), 9.0);
        let g = f.grad(&[3.0, 3.0]);
        assert_abs_diff_eq!(g[0], 3.0);
        assert_abs_diff_eq!(g[1], 3.0);
    }

    #[test]
    fn finite_diff_exact_on_linear_gradient() {
        let f = quadratic_manifold(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let x = [0.37, -2.11];
        let fd = finite_diff_grad(&f, &x, 1e-6);
        assert_abs_diff_eq!(fd[0], x[0], epsilon = 1e-8);
        assert_abs_diff_eq!(fd[1], x[1], epsilon = 1e-8);
    }

    #[test]
    fn finite_diff_matches_analytic_hyperbola() {
        let f = toy_hyperbola();
        let x = [5.0, 5.0];
        let g = f.grad(&x);
        let fd = finite_diff_grad(&f, &x, 1e-6);
        for i in 0..2 {
            let rel = (g[i] - fd[i]).abs() / (1.0 + g[i].abs());
            assert!(rel <= 1e-5, "coord {i}: {} vs {}", g[i], fd[i]);
        }
    }

    #[test]
    fn hessians_match_finite_differences() {
        for obj in [toy_hyperbola(), toy_parabola()] {
            let x = [1.3, -0.8];
            let ha = obj.hessian(&x);
            let hf = finite_diff_hessian(&obj, &x, 1e-5);
            for i in 0..4 {
                assert_abs_diff_eq!(ha[i], hf[i], epsilon = 1e-4);
            }
        }
    }

    #[test]
    fn noiseless_sampler_is_exact() {
        let rng = ChaCha8Rng::seed_from_u64(1);
        let mut src = StochasticGradientSource::new(toy_parabola(), 0.0, 1, rng);
        let x = [1.0, 2.0];
        assert_eq!(src.sample(&x), src.objective().grad(&x));
    }

    #[test]
    fn sampler_variance_matches_assumption() {
        // total variance sigma^2/n_batch = 0.25 for sigma=1, n_batch=4
        let rng = ChaCha8Rng::seed_from_u64(7);
        let obj = quadratic_manifold(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        let mut src = StochasticGradientSource::new(obj.clone(), 1.0, 4, rng);
        let x = [0.5, -0.5];
        let g = obj.grad(&x);
        let n = 100_000;
        let mut sq = 0.0;
        for _ in 0..n {
            let s = src.sample(&x);
            sq += (s[0] - g[0]).powi(2) + (s[1] - g[1]).powi(2);
        }
        let var = sq / n as f64;
        assert!((var - 0.25).abs() < 0.0125, "total variance {var}");
    }

    #[test]
    fn sampler_mean_converges() {
        let rng = ChaCha8Rng::seed_from_u64(11);
        let obj = toy_parabola();
        let mut src = StochasticGradientSource::new(obj.clone(), 1.0, 1, rng);
        let x = [2.0, 1.0];
        let g = obj.grad(&x);
        let n = 1_000_000u64;
        let mut acc = [0.0f64; 2];
        for _ in 0..n {
            let s = src.sample(&x);
            acc[0] += s[0];
            acc[1] += s[1];
        }
        for i in 0..2 {
            let mean = acc[i] / n as f64;
            // CLT bound: 3 sigma / sqrt(N), per coordinate sd = 1/sqrt(2)
            assert!((mean - g[i]).abs() < 3e-3, "coord {i}: {mean} vs {}", g[i]);
        }
    }

    #[test]
    fn objective_by_name_roundtrip() {
        assert_eq!(objective_by_name("toy_parabola").unwrap().name(), "toy_parabola");
        assert!(objective_by_name("nope").is_err());
    }
}
