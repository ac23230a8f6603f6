//! Scenario orchestration: initial conditions, pseudo-random square-wave
//! current profiles, the measure -> embed -> control -> actuate loop at the
//! controller period, the shut-off supervisor, rho-box calibration sweeps,
//! and CSV logging.
//!
//! Every run is a deterministic function of its configuration, including the
//! seed: identical configs produce byte-identical CSV output.

use std::fmt;
use std::io::Write;

use crate::controller::{
    control_step, online_lqr_step, reference, synthesize, ControllerError, ControllerState,
    GainSchedule, ModelFlags, VertexWeights,
};
use crate::logging::log_info;
use crate::lpv::{
    balanced_conc_from_state, conversion_per_pass, rho_from_conc, soc_from_x1, state_from_conc,
    state_from_ocv, LpvError, Mode, Rho, RhoBox, N_VERTICES,
};
use crate::plant::{integrate_step, measure_ocv, Concentrations, PlantError, PlantParams, PumpModel};

pub use crate::rng::Prng;

/// Integrator substep ceiling within one controller period \[s\].
pub const MAX_SUBSTEP: f64 = 0.1;
/// Hard cap on controller steps; a run that long has stalled (for example a
/// shut-off holding the state short of an unreachable target).
pub const MAX_STEPS: usize = 2_000_000;
/// Supervisor shut-off thresholds on the state of charge.
pub const SHUTOFF_SOC_HIGH: f64 = 0.9;
pub const SHUTOFF_SOC_LOW: f64 = 0.1;
/// A run that makes no progress toward its target for this many steps is
/// declared stalled (the supervisor shut-off holds the state of charge just
/// below its threshold indefinitely when the target lies beyond it).
pub const STALL_STEPS: usize = 20_000;
/// Transient horizon and sampling interval of the calibration sweep \[s\].
const SWEEP_TRANSIENT: f64 = 300.0;
const SWEEP_SAMPLE: f64 = 5.0;
/// Near-zero floor on the transport components (rho1, rho3, rho5) as a
/// fraction of their far bound. Two corner pathologies set it: the vertex
/// controllability test measures the normalized determinant of the two-step
/// reachability matrix against a 1e-10 singular-value threshold, which
/// couples the smallest corner magnitudes to the largest (needs ~4e-4 here);
/// and the vertex disturbance gain Kw = B+E grows like rho4_max/|rho3_floor|
/// at the weak-flow corners, far beyond its physical ratio, feeding a large
/// spurious current feedforward into the blend (needs ~1e-2).
const SWEEP_REL_FLOOR: f64 = 2e-2;
/// Decorrelates the measurement-noise stream from the current profile.
const NOISE_STREAM_SALT: u64 = 0x4E4F_4953_4553_5452;

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Plant(PlantError),
    Lpv(LpvError),
    Controller(ControllerError),
    InvalidConfig(&'static str),
    EmptyGrid,
    MaxStepsExceeded { steps: usize },
    Stalled { soc: f64, held_steps: usize },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Plant(e) => write!(f, "plant: {e}"),
            Self::Lpv(e) => write!(f, "lpv: {e}"),
            Self::Controller(e) => write!(f, "controller: {e}"),
            Self::InvalidConfig(what) => write!(f, "invalid scenario config: {what}"),
            Self::EmptyGrid => write!(f, "sweep grids must be non-empty"),
            Self::MaxStepsExceeded { steps } => {
                write!(f, "scenario did not terminate within {steps} steps")
            }
            Self::Stalled { soc, held_steps } => write!(
                f,
                "no progress toward the target for {held_steps} steps (state of charge {soc:.4}); the target is unreachable"
            ),
        }
    }
}

impl std::error::Error for SimError {}

impl From<PlantError> for SimError {
    fn from(e: PlantError) -> Self {
        Self::Plant(e)
    }
}

impl From<LpvError> for SimError {
    fn from(e: LpvError) -> Self {
        Self::Lpv(e)
    }
}

impl From<ControllerError> for SimError {
    fn from(e: ControllerError) -> Self {
        Self::Controller(e)
    }
}

/// How the controller observes the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measurement {
    /// True states and true concentrations (oracle path for tests).
    Ideal,
    /// States from the OCV sensors, rho from the balanced reconstruction
    /// (the experimental path).
    BalancedOcv,
}

/// Which feedback-gain computation runs in the loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    ConvexCombination,
    OnlineLqr,
}

/// Complete description of one simulation scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub soc0: f64,
    pub soc_target: f64,
    pub x_s: f64,
    /// Nominal current \[A\]; positive charges, negative discharges.
    pub i_s: f64,
    /// Half-width of the uniform current fluctuation, as a fraction of i_s.
    pub k_range: f64,
    /// Fluctuation dwell time \[s\].
    pub dwell: f64,
    /// Controller period \[s\].
    pub tau: f64,
    pub seed: u64,
    pub measurement: Measurement,
    pub controller: ControllerKind,
    /// OCV sensor noise standard deviation \[V\].
    pub noise_sd: f64,
    pub rho_box: RhoBox,
    pub plant: PlantParams,
    pub pump: PumpModel,
    pub paper_literal_rho1: bool,
    pub paper_literal_ustar: bool,
    /// Diagonal state weight applied at every vertex unless overridden.
    pub weights_q_diag: [f64; 3],
    pub weights_r: f64,
    /// Per-vertex (1-based) weight overrides.
    pub q_overrides: Vec<(usize, [f64; 3])>,
    pub r_overrides: Vec<(usize, f64)>,
}

impl ScenarioConfig {
    /// Nominal charging scenario: 10% to 85% state of charge at 20 A with
    /// 25% fluctuation, tracking a conversion per pass of 0.14.
    pub fn charging(rho_box: RhoBox) -> Self {
        Self {
            mode: Mode::Charging,
            soc0: 0.1,
            soc_target: 0.85,
            x_s: 0.14,
            i_s: 20.0,
            k_range: 0.25,
            dwell: 600.0,
            tau: 1.0,
            seed: 1,
            measurement: Measurement::BalancedOcv,
            controller: ControllerKind::ConvexCombination,
            noise_sd: 0.0,
            rho_box,
            plant: PlantParams::pilot(),
            pump: PumpModel::default(),
            paper_literal_rho1: false,
            paper_literal_ustar: false,
            weights_q_diag: [1.0, 1.0, 5.0e3],
            weights_r: 1.0e4,
            q_overrides: Vec::new(),
            r_overrides: Vec::new(),
        }
    }

    /// Nominal discharging scenario: 90% down to 10% at -20 A, tracking a
    /// conversion per pass of 0.10.
    pub fn discharging(rho_box: RhoBox) -> Self {
        Self {
            mode: Mode::Discharging,
            soc0: 0.9,
            soc_target: 0.1,
            x_s: 0.1,
            i_s: -20.0,
            ..Self::charging(rho_box)
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.plant.validate()?;
        self.pump.validate()?;
        self.rho_box.validate().map_err(SimError::Lpv)?;
        if !(self.soc0 > 0.0 && self.soc0 < 1.0) {
            return Err(SimError::InvalidConfig("soc0 must lie in (0, 1)"));
        }
        if !(self.soc_target > 0.0 && self.soc_target < 1.0) {
            return Err(SimError::InvalidConfig("soc_target must lie in (0, 1)"));
        }
        if !(self.x_s > 0.0 && self.x_s < 1.0) {
            return Err(SimError::InvalidConfig("X_s must lie in (0, 1)"));
        }
        if !(self.dwell > 0.0) {
            return Err(SimError::InvalidConfig("dwell must be > 0"));
        }
        if !(self.tau > 0.0) {
            return Err(SimError::InvalidConfig("tau must be > 0"));
        }
        if !(self.k_range >= 0.0) {
            return Err(SimError::InvalidConfig("k_range must be >= 0"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(SimError::InvalidConfig("noise_sd must be >= 0"));
        }
        match self.mode {
            Mode::Charging if self.i_s <= 0.0 => {
                return Err(SimError::InvalidConfig("charging needs i_s > 0"))
            }
            Mode::Discharging if self.i_s >= 0.0 => {
                return Err(SimError::InvalidConfig("discharging needs i_s < 0"))
            }
            _ => {}
        }
        for (v, _) in self.q_overrides.iter().map(|(v, q)| (*v, q)) {
            if !(1..=N_VERTICES).contains(&v) {
                return Err(SimError::InvalidConfig("weight override vertex out of range"));
            }
        }
        for (v, _) in &self.r_overrides {
            if !(1..=N_VERTICES).contains(v) {
                return Err(SimError::InvalidConfig("weight override vertex out of range"));
            }
        }
        Ok(())
    }

    pub fn vertex_weights(&self) -> VertexWeights {
        let mut w = VertexWeights::uniform(self.weights_q_diag, self.weights_r);
        for (v, q) in &self.q_overrides {
            w.override_vertex(*v, Some(*q), None);
        }
        for (v, r) in &self.r_overrides {
            w.override_vertex(*v, None, Some(*r));
        }
        w
    }

    pub fn model_flags(&self) -> ModelFlags {
        ModelFlags {
            paper_literal_rho1: self.paper_literal_rho1,
            paper_literal_ustar: self.paper_literal_ustar,
        }
    }
}

/// One controller-period snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub t: f64,
    pub soc: f64,
    /// Measured conversion per pass.
    pub conversion: f64,
    pub x_s: f64,
    /// Applied flow \[L/s\].
    pub q: f64,
    /// Raw flow command before saturation.
    pub q_unsat: f64,
    /// Applied current \[A\].
    pub i: f64,
    pub e_in: f64,
    pub e_out: f64,
    pub x1: f64,
    pub x2: f64,
    /// Integral state used at this step.
    pub sigma: f64,
    pub saturated: bool,
    /// Cumulative rho-box and concentration clamp events so far.
    pub clamp_count: u64,
    /// Measured varying parameters (before any box clamping).
    pub rho: [f64; 5],
}

/// Pseudo-random square-wave current: `I = (1 + k_i) I_s` with `k_i` uniform
/// in [-k_range, k_range], redrawn at each dwell boundary and clamped into
/// the plant's current limits.
pub struct CurrentProfile {
    i_s: f64,
    k_range: f64,
    dwell: f64,
    i_min: f64,
    i_max: f64,
    rng: Prng,
    drawn_through: i64,
    value: f64,
}

impl CurrentProfile {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            i_s: cfg.i_s,
            k_range: cfg.k_range,
            dwell: cfg.dwell,
            i_min: cfg.plant.i_min,
            i_max: cfg.plant.i_max,
            rng: Prng::new(cfg.seed),
            drawn_through: -1,
            value: 0.0,
        }
    }

    /// Current at time `t`; must be called with non-decreasing `t`.
    pub fn sample(&mut self, t: f64) -> f64 {
        let idx = (t / self.dwell).floor() as i64;
        while self.drawn_through < idx {
            let k_i = (2.0 * self.rng.next_unit() - 1.0) * self.k_range;
            self.value = ((1.0 + k_i) * self.i_s).clamp(self.i_min, self.i_max);
            self.drawn_through += 1;
        }
        self.value
    }
}

/// Fully balanced initial concentrations at the configured state of charge;
/// cell equals tank, so the initial conversion per pass is zero.
pub fn init_state(cfg: &ScenarioConfig) -> Concentrations {
    Concentrations::balanced(cfg.soc0, cfg.plant.c_bar)
}

/// Synthesizes gains for the configured box and runs the scenario.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Vec<SimRecord>, SimError> {
    cfg.validate()?;
    let gs = synthesize(&cfg.rho_box, cfg.tau, &cfg.vertex_weights(), cfg.mode)?;
    run_scenario_with_schedule(cfg, &gs)
}

/// Runs the control loop with an already-synthesized schedule.
///
/// Each period: measure the OCVs, reconstruct the states and rho, build the
/// frozen-model reference, compute the flow command, integrate the plant over
/// one period with the held flow and current, and append a record. The
/// supervisor ends the run once the state of charge crosses the target and
/// forces `Q = Q_min, I = 0` beyond the 90%/10% shut-off thresholds.
pub fn run_scenario_with_schedule(
    cfg: &ScenarioConfig,
    gs: &GainSchedule,
) -> Result<Vec<SimRecord>, SimError> {
    cfg.validate()?;
    let flags = cfg.model_flags();
    let mut conc = init_state(cfg);
    let mut profile = CurrentProfile::new(cfg);
    let mut noise_rng = Prng::new(cfg.seed ^ NOISE_STREAM_SALT);
    let mut cs = ControllerState::new(cfg.mode);
    let mut clamp_total: u64 = 0;
    let mut last_action: Option<(f64, f64, f64, bool)> = None;
    let mut records = Vec::new();
    let mut best_soc: Option<f64> = None;
    let mut last_progress_step = 0usize;

    for step in 0..=MAX_STEPS {
        let t = step as f64 * cfg.tau;
        let (e_in, e_out) = measure_ocv(&conc, &cfg.plant, cfg.noise_sd, &mut noise_rng)?;
        let x = match cfg.measurement {
            Measurement::Ideal => state_from_conc(&conc)?,
            Measurement::BalancedOcv => state_from_ocv(e_in, e_out, &cfg.plant)?,
        };
        let soc = soc_from_x1(x.x1);
        let conversion = conversion_per_pass(&x, cfg.mode);
        let rho = match cfg.measurement {
            Measurement::Ideal => rho_from_conc(&conc, &cfg.plant, cfg.mode, flags.paper_literal_rho1)?,
            Measurement::BalancedOcv => {
                let balanced = balanced_conc_from_state(&x, &cfg.plant)?;
                rho_from_conc(&balanced, &cfg.plant, cfg.mode, flags.paper_literal_rho1)?
            }
        };

        let reached = match cfg.mode {
            Mode::Charging => soc >= cfg.soc_target,
            Mode::Discharging => soc <= cfg.soc_target,
        };
        if reached {
            // Terminal snapshot: the measured state at crossing, with the
            // last applied action for the actuator columns.
            let (q, q_unsat, i, saturated) =
                last_action.unwrap_or((cfg.plant.q_min, cfg.plant.q_min, 0.0, false));
            records.push(SimRecord {
                t,
                soc,
                conversion,
                x_s: cfg.x_s,
                q,
                q_unsat,
                i,
                e_in,
                e_out,
                x1: x.x1,
                x2: x.x2,
                sigma: cs.sigma,
                saturated,
                clamp_count: clamp_total,
                rho: rho.as_array(),
            });
            log_info!("scenario reached target SOC {:.3} at t = {t} s", soc);
            return Ok(records);
        }

        let improved = match (cfg.mode, best_soc) {
            (_, None) => true,
            (Mode::Charging, Some(best)) => soc > best + 1e-12,
            (Mode::Discharging, Some(best)) => soc < best - 1e-12,
        };
        if improved {
            best_soc = Some(soc);
            last_progress_step = step;
        } else if step - last_progress_step > STALL_STEPS {
            return Err(SimError::Stalled { soc, held_steps: step - last_progress_step });
        }

        let mut i_k = profile.sample(t);
        let shutoff = match cfg.mode {
            Mode::Charging => soc >= SHUTOFF_SOC_HIGH,
            Mode::Discharging => soc <= SHUTOFF_SOC_LOW,
        };
        if shutoff {
            i_k = 0.0;
        }

        let refp = reference(&x, cfg.x_s, i_k, &cfg.plant, cfg.tau, cfg.mode, &flags)?;
        let out = match cfg.controller {
            ControllerKind::ConvexCombination => {
                control_step(&x, &rho, i_k, &refp, &cs, gs, cfg.x_s, &cfg.plant)?
            }
            ControllerKind::OnlineLqr => {
                online_lqr_step(&x, &rho, i_k, &refp, &cs, gs, cfg.x_s, &cfg.plant)?
            }
        };
        clamp_total += u64::from(out.weight_clamps);
        let mut next_state = out.state;
        let q_applied = if shutoff {
            // The maintenance controller holds minimum flow with the current
            // cut; the integral is held with it.
            next_state.sigma = cs.sigma;
            cfg.plant.q_min
        } else {
            out.u
        };

        let integrated = integrate_step(&conc, q_applied, i_k, &cfg.plant, cfg.tau, MAX_SUBSTEP)?;
        clamp_total += integrated.clamp_events;

        records.push(SimRecord {
            t,
            soc,
            conversion,
            x_s: cfg.x_s,
            q: q_applied,
            q_unsat: out.u_unsat,
            i: i_k,
            e_in,
            e_out,
            x1: x.x1,
            x2: x.x2,
            sigma: cs.sigma,
            saturated: out.saturated,
            clamp_count: clamp_total,
            rho: rho.as_array(),
        });
        last_action = Some((q_applied, out.u_unsat, i_k, out.saturated));
        cs = next_state;
        conc = integrated.concentrations;
    }
    Err(SimError::MaxStepsExceeded { steps: MAX_STEPS })
}

/// Default calibration grids.
pub fn default_soc_grid() -> Vec<f64> {
    (1..=19).map(|k| 0.05 * k as f64).collect()
}

pub fn default_q_grid(p: &PlantParams) -> Vec<f64> {
    vec![p.q_min, p.q_max]
}

/// Full bipolar current envelope.
pub fn default_i_grid(p: &PlantParams) -> Vec<f64> {
    vec![p.i_min, 0.0, p.i_max]
}

/// Current grid restricted to the scenario's operating direction. A box swept
/// over both current signs puts corners of the wrong authority sign into the
/// polytope and the blended gains lose sign consistency with the actual
/// trajectory; scenario boxes therefore only span the current range the mode
/// can see.
pub fn scenario_i_grid(p: &PlantParams, mode: Mode) -> Vec<f64> {
    match mode {
        Mode::Charging => vec![0.0, p.i_max],
        Mode::Discharging => vec![p.i_min, 0.0],
    }
}

/// State-of-charge band over which the flow stays inside its actuator range
/// while holding the conversion setpoint across the whole fluctuating-current
/// envelope, i.e. where the controller actually regulates. Outside this band
/// one of the rails is active regardless of the gains, so calibrating the
/// rho box to the band keeps its corners representative of closed-loop
/// operation. Derived from the quasi-steady conversion balance
/// `X * c_swing = M I / (n F Q)` with `c_swing = c_bar (1 - soc)` charging
/// and `c_bar soc` discharging.
pub fn tracking_soc_band(cfg: &ScenarioConfig) -> (f64, f64) {
    let p = &cfg.plant;
    let per_amp = p.m_cells as f64 / (p.n_electrons as f64 * p.faraday * p.c_bar * cfg.x_s);
    let i_lo = cfg.i_s.abs() * (1.0 - cfg.k_range);
    let i_hi = (cfg.i_s.abs() * (1.0 + cfg.k_range)).min(p.i_max.abs().max(p.i_min.abs()));
    let (lo, hi) = match cfg.mode {
        // Below lo even the largest current cannot reach X_s at Q_min; above
        // hi even the smallest current overshoots X_s at Q_max.
        Mode::Charging => (
            1.0 - per_amp * i_hi / p.q_min,
            1.0 - per_amp * i_lo / p.q_max,
        ),
        Mode::Discharging => (per_amp * i_lo / p.q_max, per_amp * i_hi / p.q_min),
    };
    let lo = lo.clamp(0.1, 0.9);
    let hi = hi.clamp(0.1, 0.9);
    if lo < hi {
        (lo, hi)
    } else {
        (0.1, 0.9)
    }
}

/// Nine-point grid across the scenario's tracking band.
pub fn scenario_soc_grid(cfg: &ScenarioConfig) -> Vec<f64> {
    let (lo, hi) = tracking_soc_band(cfg);
    (0..9).map(|k| lo + (hi - lo) * k as f64 / 8.0).collect()
}

/// Sweeps the scenario's own operating envelope: the tracking-band soc grid,
/// the full flow range, and the mode-matched current range.
pub fn sweep_scenario_box(cfg: &ScenarioConfig, margin: f64) -> Result<RhoBox, SimError> {
    sweep_rho_box(
        cfg,
        &scenario_soc_grid(cfg),
        &default_q_grid(&cfg.plant),
        &scenario_i_grid(&cfg.plant, cfg.mode),
        margin,
    )
}

/// Sweeps rho over balanced states on `soc_grid x q_grid x i_grid` plus a
/// short constant-input transient from each grid point (which populates the
/// cell/tank differences driving rho1 and rho3), takes the componentwise
/// min/max, and inflates the range symmetrically by `margin`. Zero-width
/// components are widened to +-1e-12.
pub fn sweep_rho_box(
    cfg: &ScenarioConfig,
    soc_grid: &[f64],
    q_grid: &[f64],
    i_grid: &[f64],
    margin: f64,
) -> Result<RhoBox, SimError> {
    if soc_grid.is_empty() || q_grid.is_empty() || i_grid.is_empty() {
        return Err(SimError::EmptyGrid);
    }
    if !(margin >= 0.0) {
        return Err(SimError::InvalidConfig("margin must be >= 0"));
    }
    let p = &cfg.plant;
    p.validate()?;
    let literal = cfg.paper_literal_rho1;
    let mut min = [f64::INFINITY; 5];
    let mut max = [f64::NEG_INFINITY; 5];
    // Smallest-magnitude samples of each sign, for the sign-definite
    // restriction below.
    let mut min_pos = [f64::INFINITY; 5];
    let mut max_neg = [f64::NEG_INFINITY; 5];
    let mut absorb = |rho: &Rho| {
        for (i, v) in rho.as_array().iter().enumerate() {
            min[i] = min[i].min(*v);
            max[i] = max[i].max(*v);
            if *v > 0.0 {
                min_pos[i] = min_pos[i].min(*v);
            }
            if *v < 0.0 {
                max_neg[i] = max_neg[i].max(*v);
            }
        }
    };
    // Transient samples are only taken inside the operating concentration
    // band; outside it the ratio parameters blow up toward states the
    // supervisor never admits.
    let floor = p.c_min;
    let ceiling = p.c_max;
    let samples = (SWEEP_TRANSIENT / SWEEP_SAMPLE).round() as usize;
    for &soc in soc_grid {
        if !(soc > 0.0 && soc < 1.0) {
            return Err(SimError::InvalidConfig("soc grid values must lie in (0, 1)"));
        }
        for &q in q_grid {
            for &i in i_grid {
                let mut conc = Concentrations::balanced(soc, p.c_bar);
                absorb(&rho_from_conc(&conc, p, cfg.mode, literal)?);
                for _ in 0..samples {
                    let step = integrate_step(&conc, q, i, p, SWEEP_SAMPLE, MAX_SUBSTEP)?;
                    conc = step.concentrations;
                    if conc.min() < floor || conc.max() > ceiling {
                        break;
                    }
                    absorb(&rho_from_conc(&conc, p, cfg.mode, literal)?);
                }
            }
        }
    }
    // Sign-definite restriction: vertex gains flip sign discontinuously where
    // a coupling parameter crosses zero, so a box corner of the wrong sign
    // poisons every blended gain in its weight shadow. Each component keeps
    // only its dominant-sign side (balanced grid points contribute exact
    // zeros and diffusion-only drift contributes tiny wrong-sign tails), and
    // inflation never pushes a bound across zero.
    let mut lo = [0.0; 5];
    let mut hi = [0.0; 5];
    for i in 0..5 {
        let positive_dominant = max[i] >= -min[i];
        let (mut lo_raw, mut hi_raw) = if max[i] > 0.0 && positive_dominant {
            (min_pos[i], max[i])
        } else if min[i] < 0.0 {
            (min[i], max_neg[i])
        } else {
            (min[i], max[i])
        };
        if matches!(i, 0 | 2 | 4) && lo_raw.is_finite() && hi_raw.is_finite() {
            if lo_raw > 0.0 {
                lo_raw = lo_raw.max(SWEEP_REL_FLOOR * hi_raw);
            } else if hi_raw < 0.0 {
                hi_raw = hi_raw.min(SWEEP_REL_FLOOR * lo_raw);
            }
        }
        if lo_raw.is_finite() && hi_raw.is_finite() && lo_raw < hi_raw {
            let half = 0.5 * margin * (hi_raw - lo_raw);
            if lo_raw > 0.0 {
                lo[i] = (lo_raw - half).max(0.5 * lo_raw);
                hi[i] = hi_raw + half;
            } else if hi_raw < 0.0 {
                lo[i] = lo_raw - half;
                hi[i] = (hi_raw + half).min(0.5 * hi_raw);
            } else {
                lo[i] = lo_raw - half;
                hi[i] = hi_raw + half;
            }
        }
        if !(lo[i] < hi[i]) {
            // Degenerate calibration (no variation seen): widen minimally.
            lo[i] = min[i] - 1e-12;
            hi[i] = max[i] + 1e-12;
        }
    }
    log_info!("sweep-derived rho box: min {lo:?}, max {hi:?}");
    RhoBox::new(lo, hi).map_err(SimError::Lpv)
}

/// Exact CSV column set of the scenario log.
pub const CSV_HEADER: &str =
    "t,soc,X,X_s,Q,Q_unsat,I,E_in,E_out,x1,x2,sigma,saturated,clamp_count,rho1,rho2,rho3,rho4,rho5";

/// Scientific notation with nine significant digits.
fn fmt_sig9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// Renders records as CSV with LF line endings, nine-significant-digit
/// floats, and `saturated` as 0/1.
pub fn records_to_csv(records: &[SimRecord]) -> String {
    let mut out = String::with_capacity(128 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let fields = [
            fmt_sig9(r.t),
            fmt_sig9(r.soc),
            fmt_sig9(r.conversion),
            fmt_sig9(r.x_s),
            fmt_sig9(r.q),
            fmt_sig9(r.q_unsat),
            fmt_sig9(r.i),
            fmt_sig9(r.e_in),
            fmt_sig9(r.e_out),
            fmt_sig9(r.x1),
            fmt_sig9(r.x2),
            fmt_sig9(r.sigma),
            String::from(if r.saturated { "1" } else { "0" }),
            r.clamp_count.to_string(),
            fmt_sig9(r.rho[0]),
            fmt_sig9(r.rho[1]),
            fmt_sig9(r.rho[2]),
            fmt_sig9(r.rho[3]),
            fmt_sig9(r.rho[4]),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Writes the CSV log to any sink.
pub fn write_csv<W: Write>(records: &[SimRecord], mut w: W) -> std::io::Result<()> {
    w.write_all(records_to_csv(records).as_bytes())
}
