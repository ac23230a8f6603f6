//! Linear parameter varying embedding of the plant.
//!
//! The states are the concentration ratios
//! `x1 = c_t2 c_t5 / (c_t3 c_t4)` (tank) and `x2 = c_c2 c_c5 / (c_c3 c_c4)`
//! (cell). Their dynamics are exactly linear in the flow and current once the
//! nonlinearities are folded into five measurable varying parameters:
//!
//! ```text
//! x1' = rho1 * Q
//! x2' = rho2 * x2 + rho3 * Q + rho4 * I
//! y_p = rho5 * x1            (conversion per pass)
//! ```
//!
//! Euler discretization at period tau gives
//! `A = [[1, 0], [0, 1 + tau rho2]]`, `B = [tau rho1; tau rho3]`,
//! `E = [0; tau rho4]`, `C = [rho5, 0]`. Bounding rho in a box embeds the
//! system in a 32-vertex convex polytope; tensor-product barycentric weights
//! reconstruct any in-box matrix exactly from the vertex matrices because
//! every entry is affine in a single rho component.

use std::fmt;

use crate::numerics::Mat;
use crate::plant::{Concentrations, PlantParams};

/// Number of varying parameters.
pub const N_RHO: usize = 5;
/// Number of polytope vertices, 2^N_RHO.
pub const N_VERTICES: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum LpvError {
    NonPositiveConcentration { value: f64 },
    NonPositiveState { value: f64 },
    OcvOutOfRange { exponent: f64 },
    DegenerateBox { component: usize },
    InvalidInput(&'static str),
}

impl fmt::Display for LpvError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NonPositiveConcentration { value } => {
                write!(f, "non-positive concentration {value} in LPV computation")
            }
            Self::NonPositiveState { value } => write!(f, "non-positive LPV state {value}"),
            Self::OcvOutOfRange { exponent } => {
                write!(f, "OCV reconstruction exponent {exponent} out of range (sensor fault?)")
            }
            Self::DegenerateBox { component } => {
                write!(f, "rho box is degenerate in component {}", component + 1)
            }
            Self::InvalidInput(what) => write!(f, "invalid input: {what}"),
        }
    }
}

impl std::error::Error for LpvError {}

/// Charging or discharging operation; selects the conversion-per-pass output
/// model and hence the rho5 formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Charging,
    Discharging,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Charging => write!(f, "charging"),
            Self::Discharging => write!(f, "discharging"),
        }
    }
}

/// The two LPV states, both strictly positive concentration ratios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpvState {
    pub x1: f64,
    pub x2: f64,
}

/// The five varying parameters, tagged with the mode whose rho5 formula
/// produced them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rho {
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub rho4: f64,
    pub rho5: f64,
    pub mode: Mode,
}

impl Rho {
    pub fn as_array(&self) -> [f64; N_RHO] {
        [self.rho1, self.rho2, self.rho3, self.rho4, self.rho5]
    }

    pub fn from_array(v: [f64; N_RHO], mode: Mode) -> Self {
        Self { rho1: v[0], rho2: v[1], rho3: v[2], rho4: v[3], rho5: v[4], mode }
    }
}

/// Componentwise bounds on rho.
#[derive(Debug, Clone, PartialEq)]
pub struct RhoBox {
    pub min: [f64; N_RHO],
    pub max: [f64; N_RHO],
}

impl RhoBox {
    pub fn new(min: [f64; N_RHO], max: [f64; N_RHO]) -> Result<Self, LpvError> {
        let b = Self { min, max };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), LpvError> {
        for i in 0..N_RHO {
            if !(self.min[i] < self.max[i]) || !self.min[i].is_finite() || !self.max[i].is_finite() {
                return Err(LpvError::DegenerateBox { component: i });
            }
        }
        Ok(())
    }

    pub fn center(&self) -> [f64; N_RHO] {
        let mut c = [0.0; N_RHO];
        for i in 0..N_RHO {
            c[i] = 0.5 * (self.min[i] + self.max[i]);
        }
        c
    }

    pub fn contains(&self, rho: &[f64; N_RHO]) -> bool {
        (0..N_RHO).all(|i| self.min[i] <= rho[i] && rho[i] <= self.max[i])
    }

    /// Clamps componentwise into the box; returns the number of components
    /// that were outside.
    pub fn clamp(&self, rho: &[f64; N_RHO]) -> ([f64; N_RHO], u32) {
        let mut out = *rho;
        let mut clamps = 0;
        for i in 0..N_RHO {
            let c = rho[i].clamp(self.min[i], self.max[i]);
            if c != rho[i] {
                clamps += 1;
            }
            out[i] = c;
        }
        (out, clamps)
    }
}

/// Discrete-time scheduled state-space matrices at one rho value.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledMatrices {
    pub a: Mat,
    pub b: Mat,
    pub e: Mat,
    pub c: Mat,
    pub tau: f64,
}

/// The 32 corner rho values of a box, ordered so that vertex j (1-based) puts
/// parameter i at its maximum iff bit (i-1) of (j-1) is set. Vertex 1 is
/// all-min, vertex 2 flips rho1 to max, vertex 32 is all-max.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    vertices: Vec<[f64; N_RHO]>,
    pub bounds: RhoBox,
}

impl Polytope {
    pub fn vertices(&self) -> &[[f64; N_RHO]] {
        &self.vertices
    }

    /// Corner rho for 0-based vertex index.
    pub fn vertex(&self, idx: usize) -> [f64; N_RHO] {
        self.vertices[idx]
    }
}

/// Barycentric weights for one rho value, plus how many components had to be
/// clamped into the box first.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexWeights {
    pub xi: [f64; N_VERTICES],
    pub clamp_count: u32,
}

fn check_positive_conc(c: &Concentrations) -> Result<(), LpvError> {
    if !c.all_positive() {
        return Err(LpvError::NonPositiveConcentration { value: c.min() });
    }
    Ok(())
}

/// LPV states from true concentrations.
pub fn state_from_conc(c: &Concentrations) -> Result<LpvState, LpvError> {
    check_positive_conc(c)?;
    Ok(LpvState {
        x1: c.tank[0] * c.tank[3] / (c.tank[1] * c.tank[2]),
        x2: c.cell[0] * c.cell[3] / (c.cell[1] * c.cell[2]),
    })
}

/// LPV states reconstructed from the OCV sensors:
/// `x = exp((nF/RT) (E - E0'))`. Exponents beyond +-700 indicate a sensor
/// fault and are rejected rather than silently over/underflowed.
pub fn state_from_ocv(e_in: f64, e_out: f64, p: &PlantParams) -> Result<LpvState, LpvError> {
    let inv = 1.0 / p.nernst_factor();
    let ex1 = inv * (e_in - p.e0_formal);
    let ex2 = inv * (e_out - p.e0_formal);
    for ex in [ex1, ex2] {
        if !ex.is_finite() || ex.abs() > 700.0 {
            return Err(LpvError::OcvOutOfRange { exponent: ex });
        }
    }
    Ok(LpvState { x1: ex1.exp(), x2: ex2.exp() })
}

/// `(sqrt(x) - x) / (1 - x)`, the balanced charged-species fraction, with its
/// analytic limit 1/2 at x = 1.
fn balanced_fraction(x: f64) -> f64 {
    if (x - 1.0).abs() < 1e-9 {
        0.5
    } else {
        (x.sqrt() - x) / (1.0 - x)
    }
}

/// Concentrations of the fully balanced model matching the given states:
/// `c2 = c5 = c_bar (sqrt(x) - x)/(1 - x)`, `c3 = c4 = c_bar - c2`, with tank
/// from x1 and cell from x2.
pub fn balanced_conc_from_state(x: &LpvState, p: &PlantParams) -> Result<Concentrations, LpvError> {
    if !(x.x1 > 0.0) || !(x.x2 > 0.0) {
        return Err(LpvError::NonPositiveState { value: x.x1.min(x.x2) });
    }
    let t2 = p.c_bar * balanced_fraction(x.x1);
    let c2 = p.c_bar * balanced_fraction(x.x2);
    Ok(Concentrations {
        cell: [c2, p.c_bar - c2, p.c_bar - c2, c2],
        tank: [t2, p.c_bar - t2, p.c_bar - t2, t2],
    })
}

/// Varying parameters from concentrations.
///
/// `paper_literal_rho1` selects the denominator of the last rho1 term: the
/// printed form divides by the cell product `c_c3 c_c4`, which is
/// inconsistent with differentiating x1 (all other terms are tank-side). The
/// default `false` uses the derivative-consistent `c_t3 c_t4`, which makes
/// `x1' = rho1 Q` exact against the plant.
pub fn rho_from_conc(
    c: &Concentrations,
    p: &PlantParams,
    mode: Mode,
    paper_literal_rho1: bool,
) -> Result<Rho, LpvError> {
    check_positive_conc(c)?;
    let [c2, c3, c4, c5] = c.cell;
    let [t2, t3, t4, t5] = c.tank;

    let rho1_last_denom = if paper_literal_rho1 { c3 * c4 } else { t3 * t4 };
    let rho1 = (1.0 / p.v_t)
        * (t5 / (t3 * t4) * (c2 - t2)
            - t2 * t5 / (t3 * t3 * t4) * (c3 - t3)
            - t2 * t5 / (t3 * t4 * t4) * (c4 - t4)
            + t2 / rho1_last_denom * (c5 - t5));

    let rho2 = -(1.0 / p.w_pe)
        * ((p.k2_d + p.k4_d * c4 / c2 + 2.0 * p.k5_d * c5 / c2)
            - (p.k3_d - 2.0 * p.k4_d * c4 / c3 - 3.0 * p.k5_d * c5 / c3)
            - (-3.0 * p.k2_d * c2 / c4 - 2.0 * p.k3_d * c3 / c4 + p.k4_d)
            + (2.0 * p.k2_d * c2 / c5 + p.k3_d * c3 / c5 + p.k5_d));

    let rho3 = (1.0 / p.cell_volume())
        * (c5 / (c3 * c4) * (t2 - c2)
            - c2 * c5 / (c3 * c3 * c4) * (t3 - c3)
            - c2 * c5 / (c3 * c4 * c4) * (t4 - c4)
            + c2 / (c3 * c4) * (t5 - c5));

    let rho4 = (1.0 / p.current_denom())
        * (c5 / (c3 * c4) + c2 * c5 / (c3 * c3 * c4) + c2 * c5 / (c3 * c4 * c4) + c2 / (c3 * c4));

    let x = state_from_conc(c)?;
    let rho5 = rho5_from_state(&x, mode);

    Ok(Rho { rho1, rho2, rho3, rho4, rho5, mode })
}

/// Output gain rho5 such that `y_p = rho5 * x1` equals the conversion per
/// pass of the active mode.
pub fn rho5_from_state(x: &LpvState, mode: Mode) -> f64 {
    let s1 = x.x1.sqrt();
    let s2 = x.x2.sqrt();
    match mode {
        Mode::Charging => (s2 - s1) / (x.x1 * (1.0 + s2)),
        Mode::Discharging => (1.0 - s2 / s1) / (x.x1 * (1.0 + s2)),
    }
}

/// Discrete-time scheduled matrices at one rho value.
pub fn scheduled_matrices(rho: &Rho, tau: f64) -> ScheduledMatrices {
    ScheduledMatrices {
        a: Mat::from_rows(&[&[1.0, 0.0], &[0.0, 1.0 + tau * rho.rho2]]),
        b: Mat::from_rows(&[&[tau * rho.rho1], &[tau * rho.rho3]]),
        e: Mat::from_rows(&[&[0.0], &[tau * rho.rho4]]),
        c: Mat::from_rows(&[&[rho.rho5, 0.0]]),
        tau,
    }
}

/// Conversion per pass:
/// charging `X_c = 1 - (1 + sqrt(x1))/(1 + sqrt(x2))`,
/// discharging `X_d = (1 - sqrt(x2/x1))/(1 + sqrt(x2))`.
pub fn conversion_per_pass(x: &LpvState, mode: Mode) -> f64 {
    let s1 = x.x1.sqrt();
    let s2 = x.x2.sqrt();
    match mode {
        Mode::Charging => 1.0 - (1.0 + s1) / (1.0 + s2),
        Mode::Discharging => (1.0 - s2 / s1) / (1.0 + s2),
    }
}

/// State of charge from the tank state: `SOC = sqrt(x1)/(1 + sqrt(x1))`.
pub fn soc_from_x1(x1: f64) -> f64 {
    let s = x1.sqrt();
    s / (1.0 + s)
}

/// Enumerates the 32 box corners in the fixed bit order.
pub fn vertex_enumeration(bounds: &RhoBox) -> Result<Polytope, LpvError> {
    bounds.validate()?;
    let mut vertices = Vec::with_capacity(N_VERTICES);
    for j in 0..N_VERTICES {
        let mut v = [0.0; N_RHO];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = if (j >> i) & 1 == 1 { bounds.max[i] } else { bounds.min[i] };
        }
        vertices.push(v);
    }
    Ok(Polytope { vertices, bounds: bounds.clone() })
}

/// Tensor-product barycentric weights at one rho value. The parameter is
/// clamped into the box first (clamp events counted), then
/// `phi_i = (max_i - rho_i)/(max_i - min_i)` and vertex j's weight is the
/// product of `phi_i` (bit clear) or `1 - phi_i` (bit set).
pub fn convex_weights(rho: &Rho, bounds: &RhoBox) -> Result<ConvexWeights, LpvError> {
    bounds.validate()?;
    let (clamped, clamp_count) = bounds.clamp(&rho.as_array());
    let mut phi = [0.0; N_RHO];
    for i in 0..N_RHO {
        phi[i] = (bounds.max[i] - clamped[i]) / (bounds.max[i] - bounds.min[i]);
    }
    let mut xi = [0.0; N_VERTICES];
    for (j, w) in xi.iter_mut().enumerate() {
        let mut prod = 1.0;
        for (i, f) in phi.iter().enumerate() {
            prod *= if (j >> i) & 1 == 1 { 1.0 - f } else { *f };
        }
        *w = prod;
    }
    Ok(ConvexWeights { xi, clamp_count })
}
