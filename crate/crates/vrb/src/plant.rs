//! Ground-truth nonlinear VRB model: the eight coupled cell/tank vanadium
//! concentration ODEs, the Nernst open-circuit voltage sensors, and the pump
//! voltage map of the laboratory rig.
//!
//! Units follow the pilot-plant parameter table: lengths in dm, volumes in L
//! (1 dm^3 = 1 L), concentrations in mol/L, flow in L/s, current in A,
//! temperature in K. With those choices every term of the concentration
//! balance comes out in mol/(L s) with no hidden conversion factors.

use std::fmt;

use crate::rng::Prng;

#[derive(Debug, Clone, PartialEq)]
pub enum PlantError {
    InvalidParams(&'static str),
    NonFinite,
    NonPositiveConcentration { value: f64 },
}

impl fmt::Display for PlantError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::InvalidParams(what) => write!(f, "invalid plant parameters: {what}"),
            Self::NonFinite => write!(f, "non-finite value during integration"),
            Self::NonPositiveConcentration { value } => {
                write!(f, "non-positive concentration {value} in OCV computation")
            }
        }
    }
}

impl std::error::Error for PlantError {}

/// Physical constants of the pilot VRB system.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    /// Porous electrode length \[dm\].
    pub l_pe: f64,
    /// Porous electrode width \[dm\].
    pub w_pe: f64,
    /// Porous electrode height \[dm\].
    pub h_pe: f64,
    /// Membrane-thickness-normalized diffusivities k_i/d \[dm/s\], species 2..5.
    pub k2_d: f64,
    pub k3_d: f64,
    pub k4_d: f64,
    pub k5_d: f64,
    /// Electrons transferred per reaction.
    pub n_electrons: u32,
    /// Faraday constant \[C/mol\].
    pub faraday: f64,
    /// Total vanadium concentration per half cell \[mol/L\].
    pub c_bar: f64,
    /// Operating concentration bounds \[mol/L\].
    pub c_min: f64,
    pub c_max: f64,
    /// Cells in the stack.
    pub m_cells: u32,
    /// Formal potential \[V\].
    pub e0_formal: f64,
    /// Gas constant \[J/(mol K)\].
    pub r_gas: f64,
    /// Half-cell tank electrolyte volume \[L\].
    pub v_t: f64,
    /// Current bounds \[A\]; charging positive.
    pub i_min: f64,
    pub i_max: f64,
    /// Flow bounds \[L/s\].
    pub q_min: f64,
    pub q_max: f64,
    /// Operating temperature \[K\].
    pub temperature: f64,
}

impl PlantParams {
    /// Pilot-plant values.
    pub fn pilot() -> Self {
        Self {
            l_pe: 3.0,
            w_pe: 0.03,
            h_pe: 2.0,
            k2_d: 3.17e-7,
            k3_d: 7.16e-8,
            k4_d: 2.0e-7,
            k5_d: 1.25e-7,
            n_electrons: 1,
            faraday: 96485.0,
            c_bar: 1.6,
            c_min: 0.16,
            c_max: 1.44,
            m_cells: 9,
            e0_formal: 1.4,
            r_gas: 8.314,
            v_t: 3.88,
            i_min: -30.0,
            i_max: 30.0,
            q_min: 0.013,
            q_max: 0.0286,
            temperature: 293.15,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            self.l_pe,
            self.w_pe,
            self.h_pe,
            self.faraday,
            self.c_bar,
            self.c_min,
            self.c_max,
            self.e0_formal,
            self.r_gas,
            self.v_t,
            self.temperature,
        ];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(PlantError::InvalidParams("geometric/physical value not > 0"));
        }
        if self.k2_d < 0.0 || self.k3_d < 0.0 || self.k4_d < 0.0 || self.k5_d < 0.0 {
            return Err(PlantError::InvalidParams("negative diffusivity"));
        }
        if self.n_electrons == 0 || self.m_cells == 0 {
            return Err(PlantError::InvalidParams("zero count"));
        }
        if !(self.c_min < self.c_max && self.c_max <= self.c_bar) {
            return Err(PlantError::InvalidParams("need c_min < c_max <= c_bar"));
        }
        if !(self.q_min < self.q_max) {
            return Err(PlantError::InvalidParams("need Q_min < Q_max"));
        }
        if !(self.i_min < 0.0 && 0.0 < self.i_max) {
            return Err(PlantError::InvalidParams("need I_min < 0 < I_max"));
        }
        Ok(())
    }

    /// Stack half-cell electrolyte volume M * L * W * H \[L\].
    pub fn cell_volume(&self) -> f64 {
        self.m_cells as f64 * self.l_pe * self.w_pe * self.h_pe
    }

    /// n * L * W * H * F, the denominator of the current source term.
    pub fn current_denom(&self) -> f64 {
        self.n_electrons as f64 * self.l_pe * self.w_pe * self.h_pe * self.faraday
    }

    /// RT/nF \[V\].
    pub fn nernst_factor(&self) -> f64 {
        self.r_gas * self.temperature / (self.n_electrons as f64 * self.faraday)
    }
}

/// The eight vanadium ion concentrations \[mol/L\]. Index 0..=3 holds species
/// V2+, V3+, V4+, V5+ in that order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Concentrations {
    pub cell: [f64; 4],
    pub tank: [f64; 4],
}

impl Concentrations {
    /// Fully balanced state at the given state of charge, identical in cell
    /// and tank: c2 = c5 = c_bar*soc, c3 = c4 = c_bar*(1-soc).
    pub fn balanced(soc: f64, c_bar: f64) -> Self {
        let charged = c_bar * soc;
        let discharged = c_bar * (1.0 - soc);
        let half = [charged, discharged, discharged, charged];
        Self { cell: half, tank: half }
    }

    pub fn min(&self) -> f64 {
        self.cell.iter().chain(&self.tank).fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn max(&self) -> f64 {
        self.cell.iter().chain(&self.tank).fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn all_positive(&self) -> bool {
        self.min() > 0.0
    }

    fn to_array(self) -> [f64; 8] {
        [
            self.cell[0], self.cell[1], self.cell[2], self.cell[3],
            self.tank[0], self.tank[1], self.tank[2], self.tank[3],
        ]
    }

    fn from_array(a: [f64; 8]) -> Self {
        Self {
            cell: [a[0], a[1], a[2], a[3]],
            tank: [a[4], a[5], a[6], a[7]],
        }
    }
}

/// Right-hand sides of the concentration balance at the given flow and
/// current. Diffusion crossover in the cell, transport exchange between cell
/// and tank, and the Faradaic source split across the stack.
pub fn derivatives(c: &Concentrations, q: f64, i: f64, p: &PlantParams) -> Concentrations {
    let w = 1.0 / p.w_pe;
    let vol_cell = p.cell_volume();
    let cur = i / p.current_denom();
    let [c2, c3, c4, c5] = c.cell;
    let [t2, t3, t4, t5] = c.tank;

    let d2 = -w * (p.k2_d * c2 + p.k4_d * c4 + 2.0 * p.k5_d * c5);
    let d3 = -w * (p.k3_d * c3 - 2.0 * p.k4_d * c4 - 3.0 * p.k5_d * c5);
    let d4 = -w * (-3.0 * p.k2_d * c2 - 2.0 * p.k3_d * c3 + p.k4_d * c4);
    let d5 = -w * (2.0 * p.k2_d * c2 + p.k3_d * c3 + p.k5_d * c5);

    let cell = [
        d2 + (t2 - c2) * q / vol_cell + cur,
        d3 + (t3 - c3) * q / vol_cell - cur,
        d4 + (t4 - c4) * q / vol_cell - cur,
        d5 + (t5 - c5) * q / vol_cell + cur,
    ];
    let tank = [
        (c2 - t2) * q / p.v_t,
        (c3 - t3) * q / p.v_t,
        (c4 - t4) * q / p.v_t,
        (c5 - t5) * q / p.v_t,
    ];
    Concentrations { cell, tank }
}

/// Result of one zero-order-hold integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub concentrations: Concentrations,
    /// Entries clamped into [0, c_bar] by more than 1e-9, over all substeps.
    pub clamp_events: u64,
}

/// Integrates the plant over `duration` with constant (Q, I) using classical
/// fourth-order Runge-Kutta. The substep is `duration / ceil(duration /
/// max_substep)`. After each substep concentrations are clamped into
/// [0, c_bar]; clamps beyond 1e-9 are counted.
pub fn integrate_step(
    c: &Concentrations,
    q: f64,
    i: f64,
    p: &PlantParams,
    duration: f64,
    max_substep: f64,
) -> Result<StepResult, PlantError> {
    if !(duration > 0.0) || !(max_substep > 0.0) {
        return Err(PlantError::InvalidParams("duration and max_substep must be > 0"));
    }
    let n_sub = (duration / max_substep).ceil().max(1.0) as usize;
    let h = duration / n_sub as f64;
    let mut state = *c;
    let mut clamp_events = 0u64;
    for _ in 0..n_sub {
        let y = state.to_array();
        let k1 = derivatives(&state, q, i, p).to_array();
        let k2 = derivatives(&Concentrations::from_array(axpy(&y, &k1, h / 2.0)), q, i, p).to_array();
        let k3 = derivatives(&Concentrations::from_array(axpy(&y, &k2, h / 2.0)), q, i, p).to_array();
        let k4 = derivatives(&Concentrations::from_array(axpy(&y, &k3, h)), q, i, p).to_array();
        let mut next = [0.0f64; 8];
        for j in 0..8 {
            next[j] = y[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            if !next[j].is_finite() {
                return Err(PlantError::NonFinite);
            }
            let clamped = next[j].clamp(0.0, p.c_bar);
            if (clamped - next[j]).abs() > 1e-9 {
                clamp_events += 1;
            }
            next[j] = clamped;
        }
        state = Concentrations::from_array(next);
    }
    Ok(StepResult { concentrations: state, clamp_events })
}

fn axpy(y: &[f64; 8], k: &[f64; 8], h: f64) -> [f64; 8] {
    let mut out = [0.0f64; 8];
    for j in 0..8 {
        out[j] = y[j] + h * k[j];
    }
    out
}

/// Inlet and outlet open-circuit voltages from the Nernst equation:
/// `E = E0' + (RT/nF) ln(c2 c5 / (c3 c4))` with tank concentrations at the
/// inlet and cell concentrations at the outlet. Optional additive Gaussian
/// measurement noise is drawn from `rng` (inlet first) when `noise_sd > 0`.
pub fn measure_ocv(
    c: &Concentrations,
    p: &PlantParams,
    noise_sd: f64,
    rng: &mut Prng,
) -> Result<(f64, f64), PlantError> {
    if !c.all_positive() {
        return Err(PlantError::NonPositiveConcentration { value: c.min() });
    }
    let f = p.nernst_factor();
    let ratio_in = c.tank[0] * c.tank[3] / (c.tank[1] * c.tank[2]);
    let ratio_out = c.cell[0] * c.cell[3] / (c.cell[1] * c.cell[2]);
    let mut e_in = p.e0_formal + f * ratio_in.ln();
    let mut e_out = p.e0_formal + f * ratio_out.ln();
    if noise_sd > 0.0 {
        e_in += noise_sd * rng.next_gaussian();
        e_out += noise_sd * rng.next_gaussian();
    }
    Ok((e_in, e_out))
}

/// Linear pump calibration `V_p = m_p Q + b_p` with voltage saturation.
#[derive(Debug, Clone, PartialEq)]
pub struct PumpModel {
    /// Slope \[V per (L/s)\].
    pub m_p: f64,
    /// Offset \[V\].
    pub b_p: f64,
    pub vp_min: f64,
    pub vp_max: f64,
}

impl Default for PumpModel {
    /// Experimental calibration of the laboratory rig. Note that these
    /// constants map the whole feasible flow range below vp_min; the reading
    /// carries a saturation flag for exactly that reason.
    fn default() -> Self {
        Self { m_p: 1.838, b_p: 1.743, vp_min: 3.176, vp_max: 4.892 }
    }
}

impl PumpModel {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.m_p > 0.0) {
            return Err(PlantError::InvalidParams("pump slope must be > 0"));
        }
        if !(self.vp_min < self.vp_max) {
            return Err(PlantError::InvalidParams("need Vp_min < Vp_max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpReading {
    /// Voltage clamped into [vp_min, vp_max].
    pub v_p: f64,
    /// True when the raw linear map fell outside the voltage range.
    pub saturated: bool,
}

/// Pump voltage for a flow command. The caller is expected to pass a flow
/// already inside [Q_min, Q_max]; the voltage is clamped and flagged here.
pub fn pump_voltage(q: f64, pm: &PumpModel) -> PumpReading {
    let raw = pm.m_p * q + pm.b_p;
    let v_p = raw.clamp(pm.vp_min, pm.vp_max);
    PumpReading { v_p, saturated: raw != v_p }
}

/// Exact inverse of the linear pump map on the unclamped range.
pub fn flow_from_voltage(v_p: f64, pm: &PumpModel) -> f64 {
    (v_p - pm.b_p) / pm.m_p
}
