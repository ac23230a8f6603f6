//! Small dense matrix algebra and the numerical kernels the controller needs:
//! fixed-point DARE solver, LQR gain, Moore-Penrose pseudo-inverse of a column,
//! closed-form eigenvalues for n <= 3, and a Perron-root power iteration for
//! nonnegative matrices.
//!
//! Everything here works on matrices of dimension at most 8 and is written for
//! determinism rather than asymptotic speed. All functions are pure.

use std::fmt;

/// Default absolute tolerance for the DARE fixed-point iteration.
pub const DARE_DEFAULT_TOL: f64 = 1e-12;
/// Default iteration cap for the DARE fixed-point iteration.
pub const DARE_DEFAULT_MAX_ITER: usize = 100_000;
/// Margin used by [`is_schur`]: radii above `1 - SCHUR_MARGIN` are not Schur.
pub const SCHUR_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum NumericsError {
    DimensionMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    NonConvergence {
        iterations: usize,
        residual: f64,
    },
    SingularInnerMatrix,
    SingularMatrix {
        det: f64,
    },
    ZeroVector,
    UnsupportedDimension {
        n: usize,
    },
    NonFinite {
        op: &'static str,
    },
    InvalidInput {
        op: &'static str,
        what: &'static str,
    },
}

impl fmt::Display for NumericsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionMismatch { op, lhs, rhs } => {
                write!(f, "{op}: dimension mismatch {}x{} vs {}x{}", lhs.0, lhs.1, rhs.0, rhs.1)
            }
            Self::NonConvergence { iterations, residual } => {
                write!(f, "no convergence after {iterations} iterations (residual {residual:e})")
            }
            Self::SingularInnerMatrix => write!(f, "R + B'PB is not invertible"),
            Self::SingularMatrix { det } => write!(f, "matrix is singular (det {det:e})"),
            Self::ZeroVector => write!(f, "pseudo-inverse of the zero vector"),
            Self::UnsupportedDimension { n } => write!(f, "unsupported dimension {n} (max 3)"),
            Self::NonFinite { op } => write!(f, "{op}: non-finite value encountered"),
            Self::InvalidInput { op, what } => write!(f, "{op}: invalid input ({what})"),
        }
    }
}

impl std::error::Error for NumericsError {}

/// Complex number with the handful of operations the eigen routines need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }

    pub fn conj(self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }

    pub fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }

    pub fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }
}

/// Dense row-major matrix. Rows and columns are fixed at construction and all
/// entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(NumericsError::DimensionMismatch {
                op: "Mat::new",
                lhs: (rows, cols),
                rhs: (data.len(), 1),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { op: "Mat::new" });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from row slices. Panics on ragged or empty input; meant
    /// for literals where the shape is known at the call site.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        assert!(!rows.is_empty() && !rows[0].is_empty(), "empty matrix literal");
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged matrix literal");
            data.extend_from_slice(r);
        }
        Self { rows: rows.len(), cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn scalar(v: f64) -> Self {
        Self { rows: 1, cols: 1, data: vec![v] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self, NumericsError> {
        if self.cols != rhs.rows {
            return Err(NumericsError::DimensionMismatch {
                op: "matmul",
                lhs: (self.rows, self.cols),
                rhs: (rhs.rows, rhs.cols),
            });
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[r * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                for c in 0..rhs.cols {
                    out.data[r * rhs.cols + c] += a * rhs.data[k * rhs.cols + c];
                }
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, NumericsError> {
        self.zip(rhs, "sub", |a, b| a - b)
    }

    fn zip(&self, rhs: &Self, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Self, NumericsError> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(NumericsError::DimensionMismatch {
                op,
                lhs: (self.rows, self.cols),
                rhs: (rhs.rows, rhs.cols),
            });
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect(),
        })
    }
}

/// Elementwise absolute value.
pub fn elementwise_abs(m: &Mat) -> Mat {
    Mat {
        rows: m.rows,
        cols: m.cols,
        data: m.data.iter().map(|v| v.abs()).collect(),
    }
}

fn det2(m: &Mat) -> f64 {
    m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0)
}

fn det3(m: &Mat) -> f64 {
    m.get(0, 0) * (m.get(1, 1) * m.get(2, 2) - m.get(1, 2) * m.get(2, 1))
        - m.get(0, 1) * (m.get(1, 0) * m.get(2, 2) - m.get(1, 2) * m.get(2, 0))
        + m.get(0, 2) * (m.get(1, 0) * m.get(2, 1) - m.get(1, 1) * m.get(2, 0))
}

/// Inverse of a square matrix with n <= 3, by adjugate. Errors when
/// `|det| <= 1e-14 * max_abs^n`.
pub fn mat_inverse(m: &Mat) -> Result<Mat, NumericsError> {
    if m.rows != m.cols {
        return Err(NumericsError::DimensionMismatch {
            op: "mat_inverse",
            lhs: (m.rows, m.cols),
            rhs: (m.cols, m.rows),
        });
    }
    let n = m.rows;
    if n > 3 {
        return Err(NumericsError::UnsupportedDimension { n });
    }
    let det = match n {
        1 => m.get(0, 0),
        2 => det2(m),
        _ => det3(m),
    };
    let scale = m.max_abs().powi(n as i32);
    if det.abs() <= 1e-14 * scale || det == 0.0 {
        return Err(NumericsError::SingularMatrix { det });
    }
    let inv = match n {
        1 => Mat::scalar(1.0 / det),
        2 => Mat::from_rows(&[
            &[m.get(1, 1) / det, -m.get(0, 1) / det],
            &[-m.get(1, 0) / det, m.get(0, 0) / det],
        ]),
        _ => {
            let c = |r1: usize, c1: usize, r2: usize, c2: usize| {
                m.get(r1, c1) * m.get(r2, c2) - m.get(r1, c2) * m.get(r2, c1)
            };
            // adjugate / det, written out
            Mat::from_rows(&[
                &[c(1, 1, 2, 2) / det, -c(0, 1, 2, 2) / det, c(0, 1, 1, 2) / det],
                &[-c(1, 0, 2, 2) / det, c(0, 0, 2, 2) / det, -c(0, 0, 1, 2) / det],
                &[c(1, 0, 2, 1) / det, -c(0, 0, 2, 1) / det, c(0, 0, 1, 1) / det],
            ])
        }
    };
    if !inv.is_finite() {
        return Err(NumericsError::NonFinite { op: "mat_inverse" });
    }
    Ok(inv)
}

/// Gauss-Jordan inverse with partial pivoting, for internal use on matrices
/// whose entries span many orders of magnitude (Riccati intermediates). Fails
/// only on a vanishing pivot; scale-free, unlike the determinant test of
/// [`mat_inverse`].
fn gauss_inverse(m: &Mat) -> Result<Mat, NumericsError> {
    if m.rows != m.cols {
        return Err(NumericsError::DimensionMismatch {
            op: "gauss_inverse",
            lhs: (m.rows, m.cols),
            rhs: (m.cols, m.rows),
        });
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut inv = Mat::identity(n);
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = a.get(col, col).abs();
        for r in (col + 1)..n {
            let v = a.get(r, col).abs();
            if v > pivot_val {
                pivot_val = v;
                pivot_row = r;
            }
        }
        if pivot_val == 0.0 || !pivot_val.is_finite() {
            return Err(NumericsError::SingularMatrix { det: 0.0 });
        }
        if pivot_row != col {
            for c in 0..n {
                let (x, y) = (a.get(col, c), a.get(pivot_row, c));
                a.set(col, c, y);
                a.set(pivot_row, c, x);
                let (x, y) = (inv.get(col, c), inv.get(pivot_row, c));
                inv.set(col, c, y);
                inv.set(pivot_row, c, x);
            }
        }
        let p = a.get(col, col);
        for c in 0..n {
            a.set(col, c, a.get(col, c) / p);
            inv.set(col, c, inv.get(col, c) / p);
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for c in 0..n {
                a.set(r, c, a.get(r, c) - f * a.get(col, c));
                inv.set(r, c, inv.get(r, c) - f * inv.get(col, c));
            }
        }
    }
    if !inv.is_finite() {
        return Err(NumericsError::NonFinite { op: "gauss_inverse" });
    }
    Ok(inv)
}

/// One application of the DARE map `A'PA - (A'PB)(R+B'PB)^-1(B'PA) + Q`.
fn dare_map(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat, NumericsError> {
    let at = a.transpose();
    let bt = b.transpose();
    let pa = p.matmul(a)?;
    let pb = p.matmul(b)?;
    let at_pa = at.matmul(&pa)?;
    let at_pb = at.matmul(&pb)?;
    let bt_pa = bt.matmul(&pa)?;
    let inner = r.add(&bt.matmul(&pb)?)?;
    let inner_inv = gauss_inverse(&inner).map_err(|_| NumericsError::SingularInnerMatrix)?;
    at_pa.sub(&at_pb.matmul(&inner_inv)?.matmul(&bt_pa)?)?.add(q)
}

/// Solves the discrete algebraic Riccati equation by iterating the Riccati
/// difference equation `P <- A'PA - (A'PB)(R+B'PB)^-1(B'PA) + Q` from
/// `P0 = Q`. The iterate sequence is advanced in doubled horizons (1, 2, 4,
/// 8, ... steps of the same recursion), which reaches the near-marginal
/// closed-loop modes of weakly actuated systems in tens of rounds instead of
/// hundreds of thousands of single steps. `max_iter` bounds the equivalent
/// single-step horizon.
///
/// The returned `P` carries an explicit certificate: one application of the
/// Riccati map is substituted at the end and the residual
/// `max_abs(A'PA - (A'PB)(R+B'PB)^-1(B'PA) + Q - P)` must come out at or
/// below the hybrid bound `tol * (1 + max_abs(P))`. The relative term matters
/// for weakly actuated systems, whose cost matrices reach 1e10 and whose
/// absolute residual floor is correspondingly above machine epsilon.
pub fn dare_solve(
    a: &Mat,
    b: &Mat,
    q: &Mat,
    r: &Mat,
    tol: f64,
    max_iter: usize,
) -> Result<Mat, NumericsError> {
    let n = a.rows();
    if a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != b.cols() || r.cols() != b.cols() {
        return Err(NumericsError::DimensionMismatch {
            op: "dare_solve",
            lhs: (a.rows(), a.cols()),
            rhs: (b.rows(), b.cols()),
        });
    }
    // Doubling recursion: with G0 = B R^-1 B', H0 = Q, A0 = A and
    //   A_{k+1} = A_k (I + G_k H_k)^-1 A_k
    //   G_{k+1} = G_k + A_k (I + G_k H_k)^-1 G_k A_k'
    //   H_{k+1} = H_k + A_k' H_k (I + G_k H_k)^-1 A_k
    // H_k equals the difference-equation iterate after 2^k steps.
    let r_inv = gauss_inverse(r).map_err(|_| NumericsError::SingularInnerMatrix)?;
    let g0 = b.matmul(&r_inv)?.matmul(&b.transpose())?;
    let mut a_k = a.clone();
    let mut g_k = g0;
    let mut h_k = q.clone();
    let mut horizon: usize = 1;
    let identity = Mat::identity(n);
    loop {
        let m_inv = match gauss_inverse(&identity.add(&g_k.matmul(&h_k)?)?) {
            Ok(m) => m,
            Err(_) => return Err(NumericsError::SingularInnerMatrix),
        };
        let a_next = a_k.matmul(&m_inv)?.matmul(&a_k)?;
        let g_next = g_k.add(&a_k.matmul(&m_inv)?.matmul(&g_k)?.matmul(&a_k.transpose())?)?;
        let h_next = h_k.add(&a_k.transpose().matmul(&h_k)?.matmul(&m_inv)?.matmul(&a_k)?)?;
        if !h_next.is_finite() || !g_next.is_finite() || !a_next.is_finite() {
            return Err(NumericsError::NonFinite { op: "dare_solve" });
        }
        let increment = h_next.sub(&h_k)?.max_abs();
        a_k = a_next;
        g_k = g_next;
        h_k = h_next;
        if increment <= 0.01 * tol * (1.0 + h_k.max_abs()) {
            break;
        }
        horizon = horizon.saturating_mul(2);
        if horizon > max_iter {
            return Err(NumericsError::NonConvergence { iterations: max_iter, residual: increment });
        }
    }
    // Certify by direct substitution into the Riccati map. A few plain
    // iterations polish away the doubling recursion's slightly different
    // roundoff floor when the tolerance sits near machine precision.
    let mut p = h_k;
    let mut residual = f64::INFINITY;
    for _ in 0..64 {
        let mapped = dare_map(a, b, q, r, &p)?;
        residual = mapped.sub(&p)?.max_abs();
        if residual <= tol * (1.0 + p.max_abs()) {
            return Ok(p);
        }
        p = mapped;
    }
    Err(NumericsError::NonConvergence { iterations: horizon, residual })
}

/// LQR gain `K = (R + B'PB)^-1 B'PA` for a DARE solution `P`. The `q` weight
/// is taken only to validate that dimensions are consistent with the solve
/// that produced `P`.
pub fn lqr_gain(a: &Mat, b: &Mat, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat, NumericsError> {
    let n = a.rows();
    if q.rows() != n || q.cols() != n || p.rows() != n || p.cols() != n {
        return Err(NumericsError::DimensionMismatch {
            op: "lqr_gain",
            lhs: (q.rows(), q.cols()),
            rhs: (n, n),
        });
    }
    let bt = b.transpose();
    let inner = r.add(&bt.matmul(&p.matmul(b)?)?)?;
    let inner_inv = gauss_inverse(&inner).map_err(|_| NumericsError::SingularInnerMatrix)?;
    inner_inv.matmul(&bt.matmul(&p.matmul(a)?)?)
}

/// Moore-Penrose pseudo-inverse of a nonzero column vector: `B+ = B'/(B'B)`.
pub fn pinv_col(b: &Mat) -> Result<Mat, NumericsError> {
    if b.cols() != 1 {
        return Err(NumericsError::DimensionMismatch {
            op: "pinv_col",
            lhs: (b.rows(), b.cols()),
            rhs: (b.rows(), 1),
        });
    }
    let btb: f64 = b.data().iter().map(|v| v * v).sum();
    if btb == 0.0 {
        return Err(NumericsError::ZeroVector);
    }
    Ok(b.transpose().scale(1.0 / btb))
}

/// Roots of `t^3 + p t + q = 0`.
fn depressed_cubic_roots(p: f64, q: f64) -> [Complex; 3] {
    if p == 0.0 && q == 0.0 {
        return [Complex::new(0.0, 0.0); 3];
    }
    let disc = (q / 2.0) * (q / 2.0) + (p / 3.0) * (p / 3.0) * (p / 3.0);
    if disc > 0.0 {
        // One real root, one complex pair. Pick the cube-root branch that
        // avoids cancellation.
        let s = disc.sqrt();
        let w = if q >= 0.0 { -q / 2.0 - s } else { -q / 2.0 + s };
        let u = w.cbrt();
        let v = if u != 0.0 { -p / (3.0 * u) } else { 0.0 };
        let t0 = u + v;
        // Deflate: t^3 + pt + q = (t - t0)(t^2 + t0 t + (p + t0^2)).
        let gamma = p + t0 * t0;
        let quad_disc = t0 * t0 - 4.0 * gamma;
        let im = (-quad_disc).max(0.0).sqrt() / 2.0;
        [
            Complex::new(t0, 0.0),
            Complex::new(-t0 / 2.0, -im),
            Complex::new(-t0 / 2.0, im),
        ]
    } else {
        // Three real roots (trigonometric form); p < 0 here.
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt();
        let phi = arg.clamp(-1.0, 1.0).acos() / 3.0;
        let mut out = [Complex::new(0.0, 0.0); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = Complex::new(
                m * (phi - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos(),
                0.0,
            );
        }
        out
    }
}

/// Newton polish of a real root of `x^3 + a2 x^2 + a1 x + a0`.
fn polish_real_root(a2: f64, a1: f64, a0: f64, mut x: f64) -> f64 {
    for _ in 0..3 {
        let f = ((x + a2) * x + a1) * x + a0;
        let df = (3.0 * x + 2.0 * a2) * x + a1;
        if df == 0.0 {
            break;
        }
        let step = f / df;
        if !step.is_finite() {
            break;
        }
        x -= step;
    }
    x
}

/// Eigenvalues of a real matrix with n in {1, 2, 3} via the closed-form roots
/// of the characteristic polynomial. Complex eigenvalues come in conjugate
/// pairs; the result is sorted by (re, im).
pub fn eigenvalues_small(m: &Mat) -> Result<Vec<Complex>, NumericsError> {
    if m.rows != m.cols {
        return Err(NumericsError::DimensionMismatch {
            op: "eigenvalues_small",
            lhs: (m.rows, m.cols),
            rhs: (m.cols, m.rows),
        });
    }
    let n = m.rows;
    let mut eig = match n {
        1 => vec![Complex::new(m.get(0, 0), 0.0)],
        2 => {
            let tr = m.get(0, 0) + m.get(1, 1);
            let det = det2(m);
            let disc = tr * tr - 4.0 * det;
            if disc >= 0.0 {
                let s = disc.sqrt();
                // Larger-magnitude root first to avoid cancellation in the other.
                let l1 = if tr >= 0.0 { (tr + s) / 2.0 } else { (tr - s) / 2.0 };
                let l2 = if l1 != 0.0 { det / l1 } else { (tr - l1.signum() * s) / 2.0 };
                vec![Complex::new(l1, 0.0), Complex::new(l2, 0.0)]
            } else {
                let im = (-disc).sqrt() / 2.0;
                vec![Complex::new(tr / 2.0, -im), Complex::new(tr / 2.0, im)]
            }
        }
        3 => {
            // lambda^3 + a2 lambda^2 + a1 lambda + a0
            let tr = m.get(0, 0) + m.get(1, 1) + m.get(2, 2);
            let minors = m.get(1, 1) * m.get(2, 2) - m.get(1, 2) * m.get(2, 1)
                + m.get(0, 0) * m.get(2, 2) - m.get(0, 2) * m.get(2, 0)
                + m.get(0, 0) * m.get(1, 1) - m.get(0, 1) * m.get(1, 0);
            let det = det3(m);
            let (a2, a1, a0) = (-tr, minors, -det);
            let p = a1 - a2 * a2 / 3.0;
            let q = 2.0 * a2 * a2 * a2 / 27.0 - a2 * a1 / 3.0 + a0;
            let shift = -a2 / 3.0;
            depressed_cubic_roots(p, q)
                .iter()
                .map(|t| {
                    if t.im == 0.0 {
                        Complex::new(polish_real_root(a2, a1, a0, t.re + shift), 0.0)
                    } else {
                        Complex::new(t.re + shift, t.im)
                    }
                })
                .collect()
        }
        n => return Err(NumericsError::UnsupportedDimension { n }),
    };
    eig.sort_by(|a, b| {
        a.re.partial_cmp(&b.re)
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    Ok(eig)
}

/// `|det(M - lambda I)|`, the characteristic-polynomial residual of a
/// candidate eigenvalue. Used to verify [`eigenvalues_small`] output.
pub fn char_poly_residual(m: &Mat, lambda: Complex) -> f64 {
    let n = m.rows;
    let at = |r: usize, c: usize| -> Complex {
        let d = m.get(r, c);
        if r == c {
            Complex::new(d - lambda.re, -lambda.im)
        } else {
            Complex::new(d, 0.0)
        }
    };
    let det = match n {
        1 => at(0, 0),
        2 => at(0, 0).mul(at(1, 1)).sub(at(0, 1).mul(at(1, 0))),
        3 => {
            let c0 = at(1, 1).mul(at(2, 2)).sub(at(1, 2).mul(at(2, 1)));
            let c1 = at(1, 0).mul(at(2, 2)).sub(at(1, 2).mul(at(2, 0)));
            let c2 = at(1, 0).mul(at(2, 1)).sub(at(1, 1).mul(at(2, 0)));
            at(0, 0).mul(c0).sub(at(0, 1).mul(c1)).add(at(0, 2).mul(c2))
        }
        _ => Complex::new(f64::NAN, 0.0),
    };
    det.abs()
}

/// Spectral radius for n <= 3.
pub fn spectral_radius(m: &Mat) -> Result<f64, NumericsError> {
    Ok(eigenvalues_small(m)?
        .iter()
        .fold(0.0f64, |acc, l| acc.max(l.abs())))
}

/// True iff the spectral radius is strictly below `1 - 1e-12`.
pub fn is_schur(m: &Mat) -> Result<bool, NumericsError> {
    Ok(spectral_radius(m)? < 1.0 - SCHUR_MARGIN)
}

/// Perron root of an entrywise-nonnegative matrix by power iteration on
/// `M + I` (the shift removes periodicity). Converges geometrically for the
/// strictly positive matrices produced by the stability analysis.
pub fn perron_root(m: &Mat, tol: f64, max_iter: usize) -> Result<f64, NumericsError> {
    if m.rows != m.cols {
        return Err(NumericsError::DimensionMismatch {
            op: "perron_root",
            lhs: (m.rows, m.cols),
            rhs: (m.cols, m.rows),
        });
    }
    if m.data.iter().any(|v| *v < 0.0) {
        return Err(NumericsError::InvalidInput { op: "perron_root", what: "negative entry" });
    }
    let n = m.rows;
    let mut x = vec![1.0f64; n];
    let mut est_prev = f64::NAN;
    let mut est = 0.0;
    for it in 0..max_iter {
        let mut y = vec![0.0f64; n];
        for r in 0..n {
            let mut acc = x[r]; // the +I shift
            for c in 0..n {
                acc += m.data[r * n + c] * x[c];
            }
            y[r] = acc;
        }
        let ymax = y.iter().fold(0.0f64, |a, v| a.max(*v));
        if ymax == 0.0 {
            return Ok(0.0);
        }
        est = ymax - 1.0; // x was normalized to max 1
        if it > 0 && (est - est_prev).abs() <= tol * est.abs().max(1.0) {
            return Ok(est);
        }
        est_prev = est;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ymax;
        }
    }
    Err(NumericsError::NonConvergence { iterations: max_iter, residual: (est - est_prev).abs() })
}
