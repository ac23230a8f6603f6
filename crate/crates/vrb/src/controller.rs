//! Gain-scheduled flow-rate tracking controller.
//!
//! The design model augments the plant with an integral state, giving the
//! 3-state system
//!
//! ```text
//! A_zeta = [ A(rho)      0 ]      B_zeta = [ B(rho) ]
//!          [ -tau C(rho) 1 ]               [   0    ]
//! ```
//!
//! LQR gains are synthesized once at the 32 corners of the rho box and
//! blended online by the barycentric weights; a feedforward `K_w = B+ E`
//! cancels the measured current disturbance through the input channel. An
//! online variant re-solves the Riccati equation at the measured rho every
//! step for comparison.
//!
//! At runtime the integral accumulates the tracking error oriented per mode
//! (see [`control_step`]): the design model routes the output through the
//! tank state, whose flow-response sign flips between charging and
//! discharging while the true conversion response does not, and the stable
//! loop needs the orientation that matches the physics.

use std::fmt;

use crate::analysis::controllability_check;
use crate::logging::log_warn;
use crate::lpv::{
    balanced_conc_from_state, conversion_per_pass, convex_weights, rho_from_conc,
    scheduled_matrices, vertex_enumeration, LpvError, LpvState, Mode, Polytope, Rho, RhoBox,
    ScheduledMatrices, N_VERTICES,
};
use crate::numerics::{
    dare_solve, lqr_gain, pinv_col, spectral_radius, Mat, NumericsError,
};
use crate::plant::PlantParams;

/// Synthesized vertex closed loops must have spectral radius below 1 minus
/// this margin.
pub const VERTEX_SCHUR_MARGIN: f64 = 1e-6;

/// Hybrid tolerance handed to the Riccati solver: the certified residual is
/// `DARE_TOL * (1 + max_abs(P))`. Weakly actuated vertices produce cost
/// matrices up to ~1e10 whose absolute residual floor scales with them; the
/// induced gain error stays below 1e-6 in every channel.
pub const DARE_TOL: f64 = 1e-10;

/// Guard below which the reference input computation refuses to divide by
/// tau * rho3.
pub const RHO3_GUARD: f64 = 1e-15;

/// Horizon bound handed to the Riccati solver. Weakly actuated vertices have
/// closed-loop poles within 1e-5 of the unit circle and need equivalent
/// horizons around 1e6; the doubling recursion covers this bound in at most
/// 40 rounds.
pub const DARE_MAX_HORIZON: usize = 1 << 40;

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerError {
    VertexNotStabilizable { vertex: usize },
    VertexNotSchur { vertex: usize, spectral_radius: f64 },
    DareFailure { vertex: usize, source: NumericsError },
    DegenerateRho { rho3: f64 },
    InvalidInput(&'static str),
    Numerics(NumericsError),
    Lpv(LpvError),
}

impl fmt::Display for ControllerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::VertexNotStabilizable { vertex } => {
                write!(f, "vertex {vertex} is not stabilizable")
            }
            Self::VertexNotSchur { vertex, spectral_radius } => write!(
                f,
                "vertex {vertex} closed loop is not Schur (radius {spectral_radius})"
            ),
            Self::DareFailure { vertex, source } => {
                write!(f, "Riccati solve failed at vertex {vertex}: {source}")
            }
            Self::DegenerateRho { rho3 } => {
                write!(f, "reference rho3 {rho3:e} too small to solve for the input")
            }
            Self::InvalidInput(what) => write!(f, "invalid input: {what}"),
            Self::Numerics(e) => write!(f, "{e}"),
            Self::Lpv(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for ControllerError {}

impl From<NumericsError> for ControllerError {
    fn from(e: NumericsError) -> Self {
        Self::Numerics(e)
    }
}

impl From<LpvError> for ControllerError {
    fn from(e: LpvError) -> Self {
        Self::Lpv(e)
    }
}

/// Model-form switches for cross-checking against the originally published
/// calibration. Defaults use the derivative-consistent forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModelFlags {
    /// Evaluate rho1's last term with the cell-side denominator as printed in
    /// the original source instead of the tank-side derivative-consistent one.
    pub paper_literal_rho1: bool,
    /// Use `1 - tau rho2` instead of `1 + tau rho2` in the reference input.
    pub paper_literal_ustar: bool,
}

/// Augmented 3-state matrices plus the disturbance and reference input
/// columns `[E; 0]` and `[0; tau]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedMatrices {
    pub a_zeta: Mat,
    pub b_zeta: Mat,
    pub e_zeta: Mat,
    pub r_zeta: Mat,
}

/// Builds the augmented matrices from the scheduled 2-state ones.
pub fn augment(sm: &ScheduledMatrices) -> AugmentedMatrices {
    let a = &sm.a;
    let c = &sm.c;
    let tau = sm.tau;
    AugmentedMatrices {
        a_zeta: Mat::from_rows(&[
            &[a.get(0, 0), a.get(0, 1), 0.0],
            &[a.get(1, 0), a.get(1, 1), 0.0],
            &[-tau * c.get(0, 0), -tau * c.get(0, 1), 1.0],
        ]),
        b_zeta: Mat::from_rows(&[&[sm.b.get(0, 0)], &[sm.b.get(1, 0)], &[0.0]]),
        e_zeta: Mat::from_rows(&[&[sm.e.get(0, 0)], &[sm.e.get(1, 0)], &[0.0]]),
        r_zeta: Mat::from_rows(&[&[0.0], &[0.0], &[tau]]),
    }
}

/// Per-vertex LQR weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexWeights {
    q: Vec<Mat>,
    r: Vec<f64>,
}

impl VertexWeights {
    /// The same diagonal state weight and scalar input weight at every vertex.
    pub fn uniform(q_diag: [f64; 3], r: f64) -> Self {
        let q = Mat::from_rows(&[
            &[q_diag[0], 0.0, 0.0],
            &[0.0, q_diag[1], 0.0],
            &[0.0, 0.0, q_diag[2]],
        ]);
        Self { q: vec![q; N_VERTICES], r: vec![r; N_VERTICES] }
    }

    /// Replaces the weight at a single 1-based vertex.
    pub fn override_vertex(&mut self, vertex: usize, q_diag: Option<[f64; 3]>, r: Option<f64>) {
        assert!((1..=N_VERTICES).contains(&vertex), "vertex index out of range");
        if let Some(d) = q_diag {
            self.q[vertex - 1] = Mat::from_rows(&[
                &[d[0], 0.0, 0.0],
                &[0.0, d[1], 0.0],
                &[0.0, 0.0, d[2]],
            ]);
        }
        if let Some(rv) = r {
            self.r[vertex - 1] = rv;
        }
    }

    pub fn q(&self, idx: usize) -> &Mat {
        &self.q[idx]
    }

    pub fn r(&self, idx: usize) -> f64 {
        self.r[idx]
    }
}

/// The 32 vertex feedback gains and disturbance gains, plus everything needed
/// to blend and audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub k_zeta: Vec<Mat>,
    pub k_w: Vec<f64>,
    pub rho_box: RhoBox,
    pub tau: f64,
    pub weights: VertexWeights,
    pub mode: Mode,
    /// Closed-loop spectral radius at each vertex, for reporting.
    pub vertex_radii: Vec<f64>,
}

impl GainSchedule {
    /// Blends the vertex gains with barycentric weights.
    pub fn combined_gain(&self, xi: &[f64; N_VERTICES]) -> (Mat, f64) {
        let mut k = Mat::zeros(1, 3);
        let mut kw = 0.0;
        for j in 0..N_VERTICES {
            if xi[j] == 0.0 {
                continue;
            }
            k = k.add(&self.k_zeta[j].scale(xi[j])).expect("gain dims");
            kw += xi[j] * self.k_w[j];
        }
        (k, kw)
    }

    /// Blended LQR weights at the same barycentric coordinates.
    pub fn combined_weights(&self, xi: &[f64; N_VERTICES]) -> (Mat, f64) {
        let mut q = Mat::zeros(3, 3);
        let mut r = 0.0;
        for j in 0..N_VERTICES {
            if xi[j] == 0.0 {
                continue;
            }
            q = q.add(&self.weights.q(j).scale(xi[j])).expect("weight dims");
            r += xi[j] * self.weights.r(j);
        }
        (q, r)
    }

    pub fn polytope(&self) -> Polytope {
        vertex_enumeration(&self.rho_box).expect("schedule box validated at synthesis")
    }
}

/// Synthesizes the 32 vertex gains: scheduled matrices -> augmentation ->
/// controllability check -> Riccati solve -> LQR gain, with the closed loop
/// verified Schur at every vertex. `K_w = B+ E` at each vertex.
pub fn synthesize(
    bounds: &RhoBox,
    tau: f64,
    weights: &VertexWeights,
    mode: Mode,
) -> Result<GainSchedule, ControllerError> {
    if !(tau > 0.0) {
        return Err(ControllerError::InvalidInput("tau must be > 0"));
    }
    let poly = vertex_enumeration(bounds)?;
    let mut k_zeta = Vec::with_capacity(N_VERTICES);
    let mut k_w = Vec::with_capacity(N_VERTICES);
    let mut vertex_radii = Vec::with_capacity(N_VERTICES);
    for idx in 0..N_VERTICES {
        let vertex = idx + 1; // 1-based in all reporting
        let rho = Rho::from_array(poly.vertex(idx), mode);
        // Constant-parameter controllability needs rho1, rho2, rho3 nonzero;
        // the integral channel additionally needs rho5 nonzero (eigenvalue-1
        // mode reachable only through C).
        if controllability_check(&rho, &rho, tau) < 2 || rho.rho5 == 0.0 {
            return Err(ControllerError::VertexNotStabilizable { vertex });
        }
        let aug = augment(&scheduled_matrices(&rho, tau));
        let q = weights.q(idx);
        let r = Mat::scalar(weights.r(idx));
        let p = dare_solve(&aug.a_zeta, &aug.b_zeta, q, &r, DARE_TOL, DARE_MAX_HORIZON)
            .map_err(|source| ControllerError::DareFailure { vertex, source })?;
        let k = lqr_gain(&aug.a_zeta, &aug.b_zeta, q, &r, &p)?;
        let closed = aug.a_zeta.sub(&aug.b_zeta.matmul(&k)?)?;
        let radius = spectral_radius(&closed)?;
        if radius >= 1.0 - VERTEX_SCHUR_MARGIN {
            return Err(ControllerError::VertexNotSchur { vertex, spectral_radius: radius });
        }
        let b = Mat::from_rows(&[&[tau * rho.rho1], &[tau * rho.rho3]]);
        let e = Mat::from_rows(&[&[0.0], &[tau * rho.rho4]]);
        let kw = pinv_col(&b)?.matmul(&e)?.get(0, 0);
        k_zeta.push(k);
        k_w.push(kw);
        vertex_radii.push(radius);
    }
    Ok(GainSchedule {
        k_zeta,
        k_w,
        rho_box: bounds.clone(),
        tau,
        weights: weights.clone(),
        mode,
        vertex_radii,
    })
}

/// Desired operating point for one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePoint {
    /// Frozen tank state, x1*(k+1) = x1*(k) = x1(k).
    pub x1_star: f64,
    /// Current cell state, x2*(k) = x2(k).
    pub x2_now: f64,
    /// Cell state that delivers the conversion setpoint at the frozen x1.
    pub x2_next: f64,
    /// Reference flow solving the frozen one-step model (unclamped).
    pub u_star: f64,
    /// `u_star` clamped into [Q_min, Q_max].
    pub u_star_clamped: f64,
    /// Varying parameters at the reference state.
    pub rho_star: Rho,
}

impl ReferencePoint {
    /// zeta* = (x1*, x2*(k+1), 0); the integral state has no setpoint.
    pub fn zeta_star(&self) -> [f64; 3] {
        [self.x1_star, self.x2_next, 0.0]
    }
}

/// Next-step cell-state target for a conversion setpoint at frozen x1:
/// charging `((1 + sqrt(x1))/(1 - X_s) - 1)^2`, discharging
/// `((1 - X_s)/(X_s + 1/sqrt(x1)))^2`.
pub fn reference_x2_next(x1: f64, x_s: f64, mode: Mode) -> f64 {
    let s1 = x1.sqrt();
    match mode {
        Mode::Charging => ((1.0 + s1) / (1.0 - x_s) - 1.0).powi(2),
        Mode::Discharging => ((1.0 - x_s) / (x_s + 1.0 / s1)).powi(2),
    }
}

/// Computes the frozen-model reference: the target pair (x1*, x2*(k+1)), the
/// balanced reference concentrations and rho* at that pair, and the flow
/// u* = (x2*(k+1) - A22(rho*) x2*(k) - tau rho4* I) / (tau rho3*).
///
/// rho* is evaluated at the target pair rather than at the measured state so
/// that the reference stays well defined from a fully balanced start, where
/// the measured cell/tank difference (and hence rho3) is exactly zero.
pub fn reference(
    x: &LpvState,
    x_s: f64,
    current: f64,
    p: &PlantParams,
    tau: f64,
    mode: Mode,
    flags: &ModelFlags,
) -> Result<ReferencePoint, ControllerError> {
    if !(x.x1 > 0.0) || !(x.x2 > 0.0) {
        return Err(ControllerError::InvalidInput("reference needs positive states"));
    }
    if !(x_s > 0.0 && x_s < 1.0) {
        return Err(ControllerError::InvalidInput("X_s must lie in (0, 1)"));
    }
    let x2_next = reference_x2_next(x.x1, x_s, mode);
    let target = LpvState { x1: x.x1, x2: x2_next };
    let conc_star = balanced_conc_from_state(&target, p)?;
    let rho_star = rho_from_conc(&conc_star, p, mode, flags.paper_literal_rho1)?;
    if (tau * rho_star.rho3).abs() < RHO3_GUARD || rho_star.rho3.abs() < RHO3_GUARD {
        return Err(ControllerError::DegenerateRho { rho3: rho_star.rho3 });
    }
    let a22 = if flags.paper_literal_ustar {
        1.0 - tau * rho_star.rho2
    } else {
        1.0 + tau * rho_star.rho2
    };
    let u_star = (x2_next - a22 * x.x2 - tau * rho_star.rho4 * current) / (tau * rho_star.rho3);
    Ok(ReferencePoint {
        x1_star: x.x1,
        x2_now: x.x2,
        x2_next,
        u_star,
        u_star_clamped: u_star.clamp(p.q_min, p.q_max),
        rho_star,
    })
}

/// Controller memory carried between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    /// Integral of the tracking error [dimensionless * s].
    pub sigma: f64,
    pub mode: Mode,
    /// Whether the previous step's command saturated.
    pub saturated: bool,
    /// Last successful online-LQR gain, reused if a step's solve fails.
    pub online_gain: Option<Mat>,
}

impl ControllerState {
    pub fn new(mode: Mode) -> Self {
        Self { sigma: 0.0, mode, saturated: false, online_gain: None }
    }
}

/// One control step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutcome {
    /// Applied flow command, clamped into [Q_min, Q_max].
    pub u: f64,
    /// Raw command before saturation.
    pub u_unsat: f64,
    pub saturated: bool,
    /// rho components clamped into the box when forming weights.
    pub weight_clamps: u32,
    pub state: ControllerState,
}

#[allow(clippy::too_many_arguments)]
fn finish_step(
    u_unsat: f64,
    tau: f64,
    x: &LpvState,
    x_s: f64,
    cs: &ControllerState,
    weight_clamps: u32,
    online_gain: Option<Mat>,
    q_min: f64,
    q_max: f64,
) -> ControlOutcome {
    let u = u_unsat.clamp(q_min, q_max);
    let excess = u_unsat - u;
    let y_p = conversion_per_pass(x, cs.mode);
    // Integral orientation. The design model couples the output to the flow
    // through the tank state (gain sign = sign of rho1: positive charging,
    // negative discharging), while the true sustained conversion response to
    // flow is negative in both modes (flow dilutes the conversion per pass).
    // The scheduled sigma-gains inherit the model's sign, so the raw error
    // integral closes a positive low-frequency loop during charging and walks
    // the command rail to rail; mirroring the accumulated error in charging
    // mode realizes the stable direction with the same vertex gains while
    // keeping tracking offset-free. Discharging already agrees.
    let oriented_err = match cs.mode {
        Mode::Charging => y_p - x_s,
        Mode::Discharging => x_s - y_p,
    };
    // Conditional integration: the error integrates only while the command is
    // inside the actuator range; with an infeasible setpoint the integral
    // would otherwise wind until the opposite rail.
    let sigma = if excess != 0.0 { cs.sigma } else { cs.sigma + tau * oriented_err };
    ControlOutcome {
        u,
        u_unsat,
        saturated: excess != 0.0,
        weight_clamps,
        state: ControllerState {
            sigma,
            mode: cs.mode,
            saturated: excess != 0.0,
            online_gain,
        },
    }
}

fn feedback(k: &Mat, kw: f64, x: &LpvState, sigma: f64, refp: &ReferencePoint, w: f64) -> f64 {
    let zs = refp.zeta_star();
    let dz = [x.x1 - zs[0], x.x2 - zs[1], sigma - zs[2]];
    let corr = k.get(0, 0) * dz[0] + k.get(0, 1) * dz[1] + k.get(0, 2) * dz[2] + kw * w;
    refp.u_star - corr
}

/// Convex-combination control step: weights from the measured rho, gains
/// blended from the schedule, saturation applied to the whole command, and
/// the integral updated by `tau (X_s - y_p)` with conditional anti-windup.
pub fn control_step(
    x: &LpvState,
    rho: &Rho,
    w: f64,
    refp: &ReferencePoint,
    cs: &ControllerState,
    gs: &GainSchedule,
    x_s: f64,
    p: &PlantParams,
) -> Result<ControlOutcome, ControllerError> {
    debug_assert!(rho.mode == gs.mode && cs.mode == gs.mode, "mode mismatch");
    let weights = convex_weights(rho, &gs.rho_box)?;
    let (k, kw) = gs.combined_gain(&weights.xi);
    let u_unsat = feedback(&k, kw, x, cs.sigma, refp, w);
    Ok(finish_step(
        u_unsat,
        gs.tau,
        x,
        x_s,
        cs,
        weights.clamp_count,
        cs.online_gain.clone(),
        p.q_min,
        p.q_max,
    ))
}

/// Online-LQR step: identical contract to [`control_step`] but the feedback
/// gain comes from a fresh Riccati solve at the measured (box-clamped) rho.
/// A failed solve logs and falls back to the previous online gain, or to the
/// blended vertex gain on the first step.
pub fn online_lqr_step(
    x: &LpvState,
    rho: &Rho,
    w: f64,
    refp: &ReferencePoint,
    cs: &ControllerState,
    gs: &GainSchedule,
    x_s: f64,
    p: &PlantParams,
) -> Result<ControlOutcome, ControllerError> {
    debug_assert!(rho.mode == gs.mode && cs.mode == gs.mode, "mode mismatch");
    let weights = convex_weights(rho, &gs.rho_box)?;
    let (clamped, _) = gs.rho_box.clamp(&rho.as_array());
    let rho_c = Rho::from_array(clamped, rho.mode);
    let aug = augment(&scheduled_matrices(&rho_c, gs.tau));
    let (q, r) = gs.combined_weights(&weights.xi);
    let r_mat = Mat::scalar(r);
    let k = match dare_solve(&aug.a_zeta, &aug.b_zeta, &q, &r_mat, DARE_TOL, DARE_MAX_HORIZON)
        .and_then(|p_mat| lqr_gain(&aug.a_zeta, &aug.b_zeta, &q, &r_mat, &p_mat))
    {
        Ok(k) => k,
        Err(e) => match &cs.online_gain {
            Some(prev) => {
                log_warn!("online Riccati solve failed ({e}); reusing previous gain");
                prev.clone()
            }
            None => {
                log_warn!("online Riccati solve failed ({e}); using blended vertex gain");
                gs.combined_gain(&weights.xi).0
            }
        },
    };
    let b = Mat::from_rows(&[&[gs.tau * rho_c.rho1], &[gs.tau * rho_c.rho3]]);
    let e = Mat::from_rows(&[&[0.0], &[gs.tau * rho_c.rho4]]);
    let kw = match pinv_col(&b) {
        Ok(bp) => bp.matmul(&e)?.get(0, 0),
        Err(_) => gs.combined_gain(&weights.xi).1,
    };
    let u_unsat = feedback(&k, kw, x, cs.sigma, refp, w);
    Ok(finish_step(
        u_unsat,
        gs.tau,
        x,
        x_s,
        cs,
        weights.clamp_count,
        Some(k),
        p.q_min,
        p.q_max,
    ))
}

/// One row per vertex: `j, K1, K2, K3, Kw, spectral_radius`.
pub fn gains_table(gs: &GainSchedule) -> String {
    let mut out = String::from("j,K1,K2,K3,Kw,spectral_radius\n");
    for j in 0..N_VERTICES {
        let k = &gs.k_zeta[j];
        out.push_str(&format!(
            "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}\n",
            j + 1,
            k.get(0, 0),
            k.get(0, 1),
            k.get(0, 2),
            gs.k_w[j],
            gs.vertex_radii[j],
        ));
    }
    out
}

/// A compact charging-envelope rho box used across the test suite; values
/// bracket the parameters seen in mid-range charging operation.
#[cfg(test)]
pub(crate) fn test_box() -> RhoBox {
    RhoBox::new(
        [0.02, -5.0e-4, -0.9, 1.0e-4, 0.05],
        [0.40, -1.0e-4, -0.05, 3.0e-2, 0.50],
    )
    .unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpv::state_from_conc;
    use crate::numerics::mat_inverse;
    use crate::plant::Concentrations;
    use crate::rng::Prng;

    fn pilot() -> PlantParams {
        PlantParams::pilot()
    }

    fn default_weights() -> VertexWeights {
        VertexWeights::uniform([1.0, 1.0, 5.0e3], 1.0e4)
    }

    fn test_schedule() -> GainSchedule {
        static CACHE: std::sync::OnceLock<GainSchedule> = std::sync::OnceLock::new();
        CACHE
            .get_or_init(|| synthesize(&test_box(), 1.0, &default_weights(), Mode::Charging).unwrap())
            .clone()
    }

    #[test]
    fn augment_identity_case() {
        let rho = Rho::from_array([0.0; 5], Mode::Charging);
        let aug = augment(&scheduled_matrices(&rho, 1.0));
        assert_eq!(aug.a_zeta, Mat::identity(3));
        assert_eq!(aug.b_zeta.max_abs(), 0.0);
        assert_eq!(aug.r_zeta.get(2, 0), 1.0);
    }

    #[test]
    fn augment_integral_row() {
        let rho = Rho::from_array([0.0, 0.0, 0.0, 0.0, 0.5], Mode::Charging);
        let aug = augment(&scheduled_matrices(&rho, 2.0));
        assert_eq!(aug.a_zeta.get(2, 0), -1.0);
        assert_eq!(aug.a_zeta.get(2, 1), 0.0);
        assert_eq!(aug.a_zeta.get(2, 2), 1.0);
        assert_eq!(aug.r_zeta.get(2, 0), 2.0);
    }

    #[test]
    fn augment_block_structure() {
        let rho = Rho::from_array([0.1, -3e-4, -0.4, 1e-3, 0.2], Mode::Charging);
        let sm = scheduled_matrices(&rho, 1.5);
        let aug = augment(&sm);
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(aug.a_zeta.get(r, c), sm.a.get(r, c));
            }
            assert_eq!(aug.a_zeta.get(r, 2), 0.0);
            assert_eq!(aug.b_zeta.get(r, 0), sm.b.get(r, 0));
            assert_eq!(aug.e_zeta.get(r, 0), sm.e.get(r, 0));
        }
        assert_eq!(aug.a_zeta.get(2, 0), -1.5 * rho.rho5);
        assert_eq!(aug.b_zeta.get(2, 0), 0.0);
    }

    #[test]
    fn synthesize_all_vertices_schur() {
        let gs = test_schedule();
        assert_eq!(gs.k_zeta.len(), N_VERTICES);
        for (j, radius) in gs.vertex_radii.iter().enumerate() {
            assert!(*radius < 1.0 - VERTEX_SCHUR_MARGIN, "vertex {} radius {radius}", j + 1);
        }
    }

    #[test]
    fn synthesize_dare_residual_certified() {
        // Substitute each vertex Riccati solution back into the equation.
        let gs = test_schedule();
        let poly = gs.polytope();
        for j in 0..N_VERTICES {
            let rho = Rho::from_array(poly.vertex(j), gs.mode);
            let aug = augment(&scheduled_matrices(&rho, gs.tau));
            let q = gs.weights.q(j);
            let r = Mat::scalar(gs.weights.r(j));
            let p = dare_solve(&aug.a_zeta, &aug.b_zeta, q, &r, DARE_TOL, DARE_MAX_HORIZON).unwrap();
            // Residual by direct substitution.
            let bt = aug.b_zeta.transpose();
            let at = aug.a_zeta.transpose();
            let inner = r.add(&bt.matmul(&p.matmul(&aug.b_zeta).unwrap()).unwrap()).unwrap();
            let inner_inv = mat_inverse(&inner).unwrap();
            let t2 = at
                .matmul(&p.matmul(&aug.b_zeta).unwrap())
                .unwrap()
                .matmul(&inner_inv)
                .unwrap()
                .matmul(&bt.matmul(&p.matmul(&aug.a_zeta).unwrap()).unwrap())
                .unwrap();
            let resid = at
                .matmul(&p.matmul(&aug.a_zeta).unwrap())
                .unwrap()
                .sub(&t2)
                .unwrap()
                .add(q)
                .unwrap()
                .sub(&p)
                .unwrap()
                .max_abs();
            let bound = DARE_TOL * (1.0 + p.max_abs());
            assert!(resid <= bound, "vertex {} residual {resid} > {bound}", j + 1);
            let asym = p.sub(&p.transpose()).unwrap().max_abs();
            assert!(asym <= 1e-10 * p.max_abs());
        }
    }

    #[test]
    fn disturbance_gain_closed_form() {
        let gs = test_schedule();
        let poly = gs.polytope();
        for j in 0..N_VERTICES {
            let v = poly.vertex(j);
            let (rho1, rho3, rho4) = (v[0], v[2], v[3]);
            let tau = gs.tau;
            let expected =
                (tau * rho3) * (tau * rho4) / ((tau * rho1).powi(2) + (tau * rho3).powi(2));
            assert!((gs.k_w[j] - expected).abs() <= 1e-12 * expected.abs().max(1.0));
            // B Kw is the projection of E onto span(B); check the residual
            // matches the least-squares optimum.
            let b = Mat::from_rows(&[&[tau * rho1], &[tau * rho3]]);
            let e = Mat::from_rows(&[&[0.0], &[tau * rho4]]);
            let resid = b.scale(gs.k_w[j]).sub(&e).unwrap();
            let bt_resid = b.transpose().matmul(&resid).unwrap().get(0, 0);
            assert!(bt_resid.abs() <= 1e-12 * e.max_abs().max(1.0), "residual not orthogonal to B");
        }
    }

    #[test]
    fn disturbance_gain_exact_when_b_aligned() {
        // rho1 = 0 aligns B with E's support; the projection is exact.
        let b = Mat::from_rows(&[&[0.0], &[-0.5]]);
        let e = Mat::from_rows(&[&[0.0], &[0.02]]);
        let kw = pinv_col(&b).unwrap().matmul(&e).unwrap().get(0, 0);
        let resid = b.scale(kw).sub(&e).unwrap().max_abs();
        assert!(resid <= 1e-12);
    }

    #[test]
    fn synthesize_rejects_zero_corner() {
        // A box whose rho1 range crosses zero exactly at the lower corner.
        let bad = RhoBox::new(
            [0.0, -5.0e-4, -0.9, 1.0e-4, 0.05],
            [0.40, -1.0e-4, -0.05, 3.0e-2, 0.50],
        )
        .unwrap();
        let e = synthesize(&bad, 1.0, &default_weights(), Mode::Charging);
        assert!(matches!(e, Err(ControllerError::VertexNotStabilizable { vertex: 1 })));
    }

    #[test]
    fn reference_examples() {
        assert!((reference_x2_next(1.0, 1e-12, Mode::Charging) - 1.0).abs() < 1e-9);

        let x2c = reference_x2_next(1.0 / 81.0, 0.14, Mode::Charging);
        assert!((x2c - 0.08526).abs() < 1e-5, "x2* = {x2c}");
        let xc = conversion_per_pass(&LpvState { x1: 1.0 / 81.0, x2: x2c }, Mode::Charging);
        assert!((xc - 0.14).abs() <= 1e-9);

        let x2d = reference_x2_next(81.0, 0.10, Mode::Discharging);
        assert!((x2d - 18.1745).abs() < 1e-4, "x2* = {x2d}");
        let xd = conversion_per_pass(&LpvState { x1: 81.0, x2: x2d }, Mode::Discharging);
        assert!((xd - 0.10).abs() <= 1e-9);
    }

    #[test]
    fn reference_consistency_property() {
        let mut rng = Prng::new(61);
        for _ in 0..1000 {
            let x1 = 0.012 + 35.0 * rng.next_unit();
            let x_s = 0.01 + 0.5 * rng.next_unit();
            let mode = if rng.next_unit() < 0.5 { Mode::Charging } else { Mode::Discharging };
            let x2n = reference_x2_next(x1, x_s, mode);
            let back = conversion_per_pass(&LpvState { x1, x2: x2n }, mode);
            assert!((back - x_s).abs() <= 1e-9, "{mode}: {back} vs {x_s}");
        }
    }

    #[test]
    fn reference_from_balanced_start_is_well_defined() {
        // x1 == x2 (zero conversion) must not trip the rho3 division guard.
        let p = pilot();
        let c = Concentrations::balanced(0.1, p.c_bar);
        let x = state_from_conc(&c).unwrap();
        let refp = reference(&x, 0.14, 20.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        assert!(refp.rho_star.rho3 < 0.0, "charging reference rho3 = {}", refp.rho_star.rho3);
        assert!(refp.u_star.is_finite());
        assert!(refp.u_star_clamped >= p.q_min && refp.u_star_clamped <= p.q_max);
        let x_back = conversion_per_pass(
            &LpvState { x1: refp.x1_star, x2: refp.x2_next },
            Mode::Charging,
        );
        assert!((x_back - 0.14).abs() <= 1e-9);
    }

    #[test]
    fn reference_literal_ustar_flag_changes_a22() {
        let p = pilot();
        let x = LpvState { x1: 1.0, x2: 1.1 };
        let base = reference(&x, 0.14, 20.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let literal = reference(
            &x,
            0.14,
            20.0,
            &p,
            1.0,
            Mode::Charging,
            &ModelFlags { paper_literal_ustar: true, ..Default::default() },
        )
        .unwrap();
        // rho2* < 0, so the sign flip moves u*.
        assert!(base.u_star != literal.u_star);
        let delta = (base.u_star - literal.u_star).abs();
        let expected = (2.0 * base.rho_star.rho2 * x.x2 / base.rho_star.rho3).abs();
        assert!((delta - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn control_step_zero_error_returns_clamped_reference() {
        let p = pilot();
        let gs = test_schedule();
        let rho = Rho::from_array(gs.rho_box.center(), Mode::Charging);
        // Put the plant exactly at the reference with zero integral state.
        let x1 = 1.0;
        let x2n = reference_x2_next(x1, 0.14, Mode::Charging);
        let x = LpvState { x1, x2: x2n };
        let refp = reference(&x, 0.14, 0.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let cs = ControllerState::new(Mode::Charging);
        let out = control_step(&x, &rho, 0.0, &refp, &cs, &gs, 0.14, &p).unwrap();
        assert!((out.u_unsat - refp.u_star).abs() <= 1e-12 * refp.u_star.abs().max(1.0));
        assert_eq!(out.u, refp.u_star.clamp(p.q_min, p.q_max));
    }

    #[test]
    fn control_step_corner_collapse() {
        let p = pilot();
        let gs = test_schedule();
        for corner in [0usize, 31] {
            let poly = gs.polytope();
            let rho = Rho::from_array(poly.vertex(corner), Mode::Charging);
            let x = LpvState { x1: 0.5, x2: 0.6 };
            let refp = reference(&x, 0.12, 5.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
            let cs = ControllerState { sigma: 0.3, ..ControllerState::new(Mode::Charging) };
            let out = control_step(&x, &rho, 5.0, &refp, &cs, &gs, 0.12, &p).unwrap();
            // Hand-evaluate with the single vertex gain.
            let k = &gs.k_zeta[corner];
            let zs = refp.zeta_star();
            let corr = k.get(0, 0) * (x.x1 - zs[0])
                + k.get(0, 1) * (x.x2 - zs[1])
                + k.get(0, 2) * (cs.sigma - zs[2])
                + gs.k_w[corner] * 5.0;
            let expect = refp.u_star - corr;
            assert!((out.u_unsat - expect).abs() <= 1e-12 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn integral_updates_when_unsaturated() {
        let p = pilot();
        let gs = test_schedule();
        let rho = Rho::from_array(gs.rho_box.center(), Mode::Charging);
        let x1 = 1.0;
        let x2n = reference_x2_next(x1, 0.14, Mode::Charging);
        let x = LpvState { x1, x2: x2n };
        let refp = reference(&x, 0.14, 0.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let cs = ControllerState::new(Mode::Charging);
        let out = control_step(&x, &rho, 0.0, &refp, &cs, &gs, 0.14, &p).unwrap();
        let y_p = conversion_per_pass(&x, Mode::Charging);
        if !out.saturated {
            // Charging accumulates the mirrored error (see finish_step).
            assert!((out.state.sigma - (y_p - 0.14)).abs() <= 1e-15);
        }
        // Off target and unsaturated: the magnitude of one update is tau*err.
        let x_off = LpvState { x1, x2: 0.9 * x2n };
        let ref_off = reference(&x_off, 0.14, 0.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let out_off = control_step(&x_off, &rho, 0.0, &ref_off, &cs, &gs, 0.14, &p).unwrap();
        if !out_off.saturated {
            let y_off = conversion_per_pass(&x_off, Mode::Charging);
            assert!((out_off.state.sigma - gs.tau * (y_off - 0.14)).abs() <= 1e-15);
        }
    }

    #[test]
    fn integral_frozen_while_saturated() {
        let p = pilot();
        let gs = test_schedule();
        let rho = Rho::from_array(gs.rho_box.center(), Mode::Charging);
        // A state far below target forces a large reference correction and a
        // pinned command.
        let x = LpvState { x1: 1.0, x2: 1.0 + 1e-6 };
        let refp = reference(&x, 0.5, 20.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let cs = ControllerState { sigma: 0.25, ..ControllerState::new(Mode::Charging) };
        let out = control_step(&x, &rho, 20.0, &refp, &cs, &gs, 0.5, &p).unwrap();
        assert!(out.saturated);
        assert_eq!(out.state.sigma, 0.25);
    }

    #[test]
    fn anti_windup_freezes_integral_into_limit() {
        let p = pilot();
        let gs = test_schedule();
        let rho = Rho::from_array(gs.rho_box.center(), Mode::Charging);
        // Conversion far below setpoint: the controller pushes the flow down
        // (charging authority is negative), pinning at Q_min. Integrating the
        // positive error would push it further down, so sigma must hold.
        let x = LpvState { x1: 1.0, x2: 1.0 + 1e-9 };
        let refp = reference(&x, 0.5, 20.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let mut cs = ControllerState::new(Mode::Charging);
        let mut last_sigma = cs.sigma;
        for _ in 0..50 {
            let out = control_step(&x, &rho, 20.0, &refp, &cs, &gs, 0.5, &p).unwrap();
            if out.saturated && out.u == p.q_min {
                assert_eq!(out.state.sigma, last_sigma, "integral moved while pinned at Q_min");
            }
            last_sigma = out.state.sigma;
            cs = out.state;
        }
        assert!(cs.saturated);
    }

    #[test]
    fn online_gain_matches_vertex_at_corner() {
        let p = pilot();
        let gs = test_schedule();
        let poly = gs.polytope();
        let rho = Rho::from_array(poly.vertex(5), Mode::Charging);
        let x = LpvState { x1: 0.8, x2: 0.9 };
        let refp = reference(&x, 0.1, 10.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let cs = ControllerState { sigma: -0.2, ..ControllerState::new(Mode::Charging) };
        let online = online_lqr_step(&x, &rho, 10.0, &refp, &cs, &gs, 0.1, &p).unwrap();
        let convex = control_step(&x, &rho, 10.0, &refp, &cs, &gs, 0.1, &p).unwrap();
        assert!(
            (online.u_unsat - convex.u_unsat).abs() <= 1e-9 * convex.u_unsat.abs().max(1.0),
            "online {} vs vertex {}",
            online.u_unsat,
            convex.u_unsat
        );
    }

    #[test]
    fn online_gain_constant_for_constant_rho() {
        let p = pilot();
        let gs = test_schedule();
        let rho = Rho::from_array(gs.rho_box.center(), Mode::Charging);
        let x = LpvState { x1: 0.8, x2: 0.9 };
        let refp = reference(&x, 0.1, 10.0, &p, 1.0, Mode::Charging, &ModelFlags::default()).unwrap();
        let mut cs = ControllerState::new(Mode::Charging);
        let mut gains = Vec::new();
        for _ in 0..3 {
            let out = online_lqr_step(&x, &rho, 10.0, &refp, &cs, &gs, 0.1, &p).unwrap();
            gains.push(out.state.online_gain.clone().unwrap());
            cs = out.state;
        }
        assert_eq!(gains[0], gains[1]);
        assert_eq!(gains[1], gains[2]);
    }

    #[test]
    fn gains_table_format() {
        let gs = test_schedule();
        let table = gains_table(&gs);
        let mut lines = table.lines();
        assert_eq!(lines.next().unwrap(), "j,K1,K2,K3,Kw,spectral_radius");
        assert_eq!(table.lines().count(), 33);
        let first = lines.next().unwrap();
        assert!(first.starts_with("1,"));
    }
}
