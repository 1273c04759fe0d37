//! Flat-vector and small dense-matrix arithmetic used by every optimizer.
//!
//! Parameters, gradients, and moment buffers are all flat `ParamVector`s.
//! Matrix-shaped parameters (for the orthogonalized-momentum optimizer) are
//! the same flat storage reinterpreted row-major through a [`MatrixShape`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("nonfinite value at coordinate {index}: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("division by zero at coordinate {index}")]
    DivisionByZero { index: usize },
    #[error("shape {rows}x{cols} does not match vector of dim {dim}")]
    ShapeMismatch { rows: usize, cols: usize, dim: usize },
    #[error("empty vector")]
    Empty,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Flat vector of real coordinates. All public operations keep every
/// coordinate finite; a nonfinite result is a hard error carrying the
/// offending coordinate index.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    data: Vec<f64>,
}

impl ParamVector {
    pub fn new(data: Vec<f64>) -> Result<Self, LinalgError> {
        if data.is_empty() {
            return Err(LinalgError::Empty);
        }
        for (i, &v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(LinalgError::NonFinite { index: i, value: v });
            }
        }
        Ok(Self { data })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

/// Row-major reshape of a flat vector into an `rows x cols` matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MatrixShape {
    pub rows: usize,
    pub cols: usize,
}

impl MatrixShape {
    pub fn new(rows: usize, cols: usize) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::InvalidArgument(
                "matrix shape must have positive rows and cols".into(),
            ));
        }
        Ok(Self { rows, cols })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn check(&self, dim: usize) -> Result<(), LinalgError> {
        if self.len() != dim {
            return Err(LinalgError::ShapeMismatch {
                rows: self.rows,
                cols: self.cols,
                dim,
            });
        }
        Ok(())
    }
}

/// Coordinate-wise operation selector for [`elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    Div,
    Sqrt,
    Abs,
    Sign,
    Max0,
}

/// Second operand of a coordinate-wise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Vector(&'a ParamVector),
    Scalar(f64),
    None,
}

/// sgn with sgn(0) = 0.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Coordinate-wise arithmetic. Unary ops (`Sqrt`, `Abs`, `Sign`, `Max0`)
/// ignore `b`; binary ops require matching dims when `b` is a vector.
pub fn elementwise(
    op: ElementwiseOp,
    a: &ParamVector,
    b: Operand<'_>,
) -> Result<ParamVector, LinalgError> {
    let rhs = |i: usize| -> Result<f64, LinalgError> {
        match b {
            Operand::Vector(v) => {
                if v.dim() != a.dim() {
                    return Err(LinalgError::DimensionMismatch {
                        left: a.dim(),
                        right: v.dim(),
                    });
                }
                Ok(v[i])
            }
            Operand::Scalar(s) => Ok(s),
            Operand::None => Err(LinalgError::InvalidArgument(
                "binary op requires a second operand".into(),
            )),
        }
    };
    let mut out = Vec::with_capacity(a.dim());
    for i in 0..a.dim() {
        let x = a[i];
        let y = match op {
            ElementwiseOp::Add => x + rhs(i)?,
            ElementwiseOp::Sub => x - rhs(i)?,
            ElementwiseOp::Mul => x * rhs(i)?,
            ElementwiseOp::Div => {
                let d = rhs(i)?;
                if d == 0.0 {
                    return Err(LinalgError::DivisionByZero { index: i });
                }
                x / d
            }
            ElementwiseOp::Sqrt => x.sqrt(),
            ElementwiseOp::Abs => x.abs(),
            ElementwiseOp::Sign => sign(x),
            ElementwiseOp::Max0 => x.max(0.0),
        };
        if !y.is_finite() {
            return Err(LinalgError::NonFinite { index: i, value: y });
        }
        out.push(y);
    }
    Ok(ParamVector { data: out })
}

/// Norm bundle returned by [`norms`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Norms {
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub rms: f64,
}

pub fn norms(a: &ParamVector) -> Norms {
    norms_of(a.as_slice())
}

pub fn norms_of(a: &[f64]) -> Norms {
    let l1 = a.iter().map(|v| v.abs()).sum::<f64>();
    let l2 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let linf = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rms = l2 / (a.len() as f64).sqrt();
    Norms { l1, l2, linf, rms }
}

pub fn linf_of(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn l2_of(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Row-major matmul: `a` is `ar x ac`, `b` is `ac x bc`.
pub fn matmul(a: &[f64], ar: usize, ac: usize, b: &[f64], bc: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), ar * ac);
    debug_assert_eq!(b.len(), ac * bc);
    let mut out = vec![0.0; ar * bc];
    for i in 0..ar {
        for k in 0..ac {
            let aik = a[i * ac + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..bc {
                out[i * bc + j] += aik * b[k * bc + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Quintic Newton-Schulz coefficients, the de-facto standard for
/// orthogonalized-momentum optimizers.
pub const NEWTON_SCHULZ_COEFFS: (f64, f64, f64) = (3.4445, -4.7750, 2.0315);

/// Default iteration count for [`newton_schulz_sign`].
pub const NEWTON_SCHULZ_ITERS: usize = 5;

/// Maximum number of cubic polishing rounds run after the quintic warm-up.
const NEWTON_SCHULZ_POLISH_ITERS: usize = 16;

/// Relative semi-orthogonality residual at which polishing stops early.
const NEWTON_SCHULZ_POLISH_TOL: f64 = 1e-9;

/// Approximates the semi-orthogonal factor `U V^T` of `M = U S V^T`, after
/// normalizing the input by its Frobenius norm. A zero matrix maps to the
/// zero matrix.
///
/// The computation runs `iters` rounds of the aggressive quintic iteration
/// `X <- aX + b(XX^T)X + c(XX^T)^2 X`, which drives every singular value into
/// a band around 1 quickly but oscillates inside that band indefinitely. It
/// is therefore followed by cubic polishing rounds `X <- 1.5X - 0.5(XX^T)X`,
/// which contract the band quadratically onto 1, stopping once the
/// semi-orthogonality residual `||XX^T X - X||_F` stalls below a small
/// relative tolerance. Zero singular values stay exactly zero throughout, so
/// rank-deficient inputs converge on their nonzero singular space only.
pub fn newton_schulz_sign(
    m: &ParamVector,
    shape: MatrixShape,
    iters: usize,
) -> Result<ParamVector, LinalgError> {
    shape.check(m.dim())?;
    if iters == 0 {
        return Err(LinalgError::InvalidArgument("iters must be >= 1".into()));
    }
    let frob = l2_of(m.as_slice());
    if frob == 0.0 {
        return Ok(ParamVector::zeros(m.dim()));
    }
    // Work on the transpose when rows > cols so the Gram matrix stays small.
    let flip = shape.rows > shape.cols;
    let (r, c) = if flip {
        (shape.cols, shape.rows)
    } else {
        (shape.rows, shape.cols)
    };
    let mut x: Vec<f64> = if flip {
        transpose(m.as_slice(), shape.rows, shape.cols)
    } else {
        m.as_slice().to_vec()
    };
    for v in &mut x {
        *v /= frob;
    }
    let (a, b, cc) = NEWTON_SCHULZ_COEFFS;
    for _ in 0..iters {
        let xt = transpose(&x, r, c);
        let g = matmul(&x, r, c, &xt, r); // r x r Gram matrix
        let g2 = matmul(&g, r, r, &g, r);
        let mut next = vec![0.0; r * c];
        let gx = matmul(&g, r, r, &x, c);
        let g2x = matmul(&g2, r, r, &x, c);
        for i in 0..r * c {
            next[i] = a * x[i] + b * gx[i] + cc * g2x[i];
        }
        x = next;
    }
    for _ in 0..NEWTON_SCHULZ_POLISH_ITERS {
        let xt = transpose(&x, r, c);
        let g = matmul(&x, r, c, &xt, r);
        let gx = matmul(&g, r, r, &x, c);
        let mut residual_sq = 0.0;
        let mut norm_sq = 0.0;
        for i in 0..r * c {
            let d = gx[i] - x[i];
            residual_sq += d * d;
            norm_sq += x[i] * x[i];
        }
        if residual_sq.sqrt() <= NEWTON_SCHULZ_POLISH_TOL * norm_sq.sqrt().max(1.0) {
            break;
        }
        for i in 0..r * c {
            x[i] = 1.5 * x[i] - 0.5 * gx[i];
        }
    }
    let out = if flip { transpose(&x, r, c) } else { x };
    ParamVector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn elementwise_mul() {
        let r = elementwise(
            ElementwiseOp::Mul,
            &pv(&[1.0, -2.0]),
            Operand::Vector(&pv(&[3.0, 4.0])),
        )
        .unwrap();
        assert_eq!(r.as_slice(), &[3.0, -8.0]);
    }

    #[test]
    fn elementwise_max0_positive_part() {
        let r = elementwise(ElementwiseOp::Max0, &pv(&[-1.0, 0.0, 2.0]), Operand::None).unwrap();
        assert_eq!(r.as_slice(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn elementwise_sign_convention() {
        let r = elementwise(ElementwiseOp::Sign, &pv(&[-0.5, 0.0, 3.0]), Operand::None).unwrap();
        assert_eq!(r.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn elementwise_dim_mismatch() {
        let err = elementwise(
            ElementwiseOp::Add,
            &pv(&[1.0, 2.0]),
            Operand::Vector(&pv(&[1.0])),
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::DimensionMismatch { .. }));
    }

    #[test]
    fn elementwise_div_by_zero() {
        let err = elementwise(
            ElementwiseOp::Div,
            &pv(&[1.0]),
            Operand::Vector(&pv(&[0.0])),
        )
        .unwrap_err();
        assert!(matches!(err, LinalgError::DivisionByZero { index: 0 }));
    }

    #[test]
    fn norms_three_four_five() {
        let n = norms(&pv(&[3.0, 4.0]));
        assert_eq!(n.l1, 7.0);
        assert_eq!(n.l2, 5.0);
        assert_eq!(n.linf, 4.0);
    }

    #[test]
    fn norms_zero_vector() {
        let n = norms(&pv(&[0.0, 0.0, 0.0]));
        assert_eq!(n.l1, 0.0);
        assert_eq!(n.l2, 0.0);
        assert_eq!(n.linf, 0.0);
        assert_eq!(n.rms, 0.0);
    }

    #[test]
    fn norms_constant_vector_rms() {
        let n = norms(&pv(&[1.0, 1.0, 1.0, 1.0]));
        assert_abs_diff_eq!(n.rms, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn nonfinite_input_rejected() {
        assert!(matches!(
            ParamVector::new(vec![1.0, f64::NAN]),
            Err(LinalgError::NonFinite { index: 1, .. })
        ));
    }

    #[test]
    fn newton_schulz_diagonal_two_by_two() {
        // diag(2, 0.5): the semi-orthogonal factor is the identity.
        let m = pv(&[2.0, 0.0, 0.0, 0.5]);
        let shape = MatrixShape::new(2, 2).unwrap();
        let o = newton_schulz_sign(&m, shape, NEWTON_SCHULZ_ITERS).unwrap();
        let id = [1.0, 0.0, 0.0, 1.0];
        for i in 0..4 {
            assert!(
                (o[i] - id[i]).abs() <= 0.35,
                "entry {i}: {} vs {}",
                o[i],
                id[i]
            );
        }
    }

    #[test]
    fn newton_schulz_scaled_orthogonal_stays_proportional() {
        // c*Q for a rotation Q: the sign of a scaled orthogonal matrix is Q.
        let th = 0.7f64;
        let q = [th.cos(), -th.sin(), th.sin(), th.cos()];
        let m = pv(&q.iter().map(|v| 3.0 * v).collect::<Vec<_>>());
        let shape = MatrixShape::new(2, 2).unwrap();
        let o = newton_schulz_sign(&m, shape, NEWTON_SCHULZ_ITERS).unwrap();
        for i in 0..4 {
            assert_abs_diff_eq!(o[i], q[i], epsilon = 1e-8);
        }
    }

    #[test]
    fn newton_schulz_rank_deficient() {
        // M = [[1,0],[0,0]]: acts on the nonzero singular space only.
        let m = pv(&[1.0, 0.0, 0.0, 0.0]);
        let shape = MatrixShape::new(2, 2).unwrap();
        let o = newton_schulz_sign(&m, shape, NEWTON_SCHULZ_ITERS).unwrap();
        assert_abs_diff_eq!(o[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(o[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(o[2], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(o[3], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn newton_schulz_zero_matrix() {
        let m = ParamVector::zeros(4);
        let shape = MatrixShape::new(2, 2).unwrap();
        let o = newton_schulz_sign(&m, shape, 5).unwrap();
        assert_eq!(o.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn newton_schulz_tall_matrix() {
        // 3x1 column: factor is the normalized column.
        let m = pv(&[1.0, 2.0, 2.0]);
        let shape = MatrixShape::new(3, 1).unwrap();
        let o = newton_schulz_sign(&m, shape, NEWTON_SCHULZ_ITERS).unwrap();
        assert_abs_diff_eq!(o[0], 1.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(o[1], 2.0 / 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(o[2], 2.0 / 3.0, epsilon = 1e-8);
    }
}
