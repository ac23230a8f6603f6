//! Flat `key = value` configuration files with `[plant]`, `[pump]`,
//! `[controller]`, `[scenario]`, and `[rho_box]` sections. Every key maps to
//! a scenario field of the same name; unknown sections or keys are errors.
//! Lines starting with `#` are comments.
//!
//! ```text
//! [scenario]
//! mode = charging
//! soc0 = 0.1
//! soc_target = 0.85
//! X_s = 0.14
//! I_s = 20.0
//! k_range = 0.25
//! dwell = 600
//! tau = 1.0
//! seed = 1
//! measurement = balanced_ocv
//! noise_sd = 0.0
//!
//! [controller]
//! controller = convex_combination
//! weights_q_diag = 1, 1, 5e3
//! weights_r = 1e4
//! paper_literal_rho1 = false
//! paper_literal_ustar = false
//!
//! [rho_box]
//! rho1_min = ...
//! rho1_max = ...
//! ```
//!
//! `[plant]` and `[pump]` accept every physical constant by field name and
//! default to the pilot-plant values. The `[rho_box]` section is required by
//! `simulate`, `gains`, and `analyze`, and ignored by `sweep-bounds` (which
//! produces one). `[controller]` also accepts per-vertex weight overrides
//! `weights_q_diag_j<N>` / `weights_r_j<N>` with N in 1..=32.

use std::fmt;

use crate::lpv::{Mode, RhoBox, N_RHO, N_VERTICES};
use crate::sim::{ControllerKind, Measurement, ScenarioConfig};

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    Syntax { line: usize, what: String },
    UnknownSection { line: usize, section: String },
    UnknownKey { line: usize, key: String },
    BadValue { line: usize, key: String, what: String },
    MissingRhoBox,
    Invalid(String),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Syntax { line, what } => write!(f, "line {line}: {what}"),
            Self::UnknownSection { line, section } => {
                write!(f, "line {line}: unknown section [{section}]")
            }
            Self::UnknownKey { line, key } => write!(f, "line {line}: unknown key `{key}`"),
            Self::BadValue { line, key, what } => {
                write!(f, "line {line}: bad value for `{key}`: {what}")
            }
            Self::MissingRhoBox => write!(f, "config has no [rho_box] section (run sweep-bounds first)"),
            Self::Invalid(what) => write!(f, "invalid config: {what}"),
        }
    }
}

impl std::error::Error for ConfigError {}

/// A parsed configuration: scenario defaults overridden by the file, with the
/// rho box kept optional so calibration commands can run before one exists.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    scenario: ScenarioConfig,
    rho_box: Option<RhoBox>,
}

impl ParsedConfig {
    /// The scenario with its rho box; errors when the file had none.
    pub fn scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        let rho_box = self.rho_box.clone().ok_or(ConfigError::MissingRhoBox)?;
        let mut cfg = self.scenario.clone();
        cfg.rho_box = rho_box;
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    /// The scenario without requiring a rho box (a placeholder box is kept);
    /// used by the calibration sweep.
    pub fn scenario_for_sweep(&self) -> Result<ScenarioConfig, ConfigError> {
        let cfg = self.scenario.clone();
        cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(cfg)
    }

    pub fn has_rho_box(&self) -> bool {
        self.rho_box.is_some()
    }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64, ConfigError> {
    v.trim().parse::<f64>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        what: format!("`{v}` is not a number"),
    })
}

fn parse_u64(line: usize, key: &str, v: &str) -> Result<u64, ConfigError> {
    v.trim().parse::<u64>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        what: format!("`{v}` is not an unsigned integer"),
    })
}

fn parse_u32(line: usize, key: &str, v: &str) -> Result<u32, ConfigError> {
    v.trim().parse::<u32>().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        what: format!("`{v}` is not an unsigned integer"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        other => Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            what: format!("`{other}` is not a bool"),
        }),
    }
}

fn parse_diag(line: usize, key: &str, v: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            what: "expected three comma-separated numbers".to_string(),
        });
    }
    Ok([
        parse_f64(line, key, parts[0])?,
        parse_f64(line, key, parts[1])?,
        parse_f64(line, key, parts[2])?,
    ])
}

/// Parses configuration text. Missing keys keep the nominal defaults of the
/// scenario mode (charging unless `mode = discharging` appears).
pub fn parse(text: &str) -> Result<ParsedConfig, ConfigError> {
    // The mode decides which default set applies, so find it first.
    let mut mode = Mode::Charging;
    for raw in text.lines() {
        let line = strip_comment(raw);
        if let Some((k, v)) = line.split_once('=') {
            if k.trim() == "mode" {
                mode = match v.trim() {
                    "charging" => Mode::Charging,
                    "discharging" => Mode::Discharging,
                    _ => mode,
                };
            }
        }
    }
    let placeholder = RhoBox::new([-1.0; N_RHO], [1.0; N_RHO]).expect("placeholder box");
    let mut cfg = match mode {
        Mode::Charging => ScenarioConfig::charging(placeholder),
        Mode::Discharging => ScenarioConfig::discharging(placeholder),
    };
    let mut box_min = [f64::NAN; N_RHO];
    let mut box_max = [f64::NAN; N_RHO];
    let mut saw_box_key = false;

    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let Some(name) = rest.strip_suffix(']') else {
                return Err(ConfigError::Syntax { line: lineno, what: "unterminated section header".into() });
            };
            let name = name.trim();
            if !matches!(name, "plant" | "pump" | "controller" | "scenario" | "rho_box") {
                return Err(ConfigError::UnknownSection { line: lineno, section: name.to_string() });
            }
            section = name.to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Syntax { line: lineno, what: format!("expected `key = value`, got `{line}`") });
        };
        let key = key.trim();
        let value = value.trim();
        match section.as_str() {
            "plant" => apply_plant_key(&mut cfg, lineno, key, value)?,
            "pump" => apply_pump_key(&mut cfg, lineno, key, value)?,
            "scenario" => apply_scenario_key(&mut cfg, lineno, key, value)?,
            "controller" => apply_controller_key(&mut cfg, lineno, key, value)?,
            "rho_box" => {
                apply_box_key(&mut box_min, &mut box_max, lineno, key, value)?;
                saw_box_key = true;
            }
            _ => {
                return Err(ConfigError::Syntax {
                    line: lineno,
                    what: format!("key `{key}` appears before any section header"),
                })
            }
        }
    }

    let rho_box = if saw_box_key {
        if box_min.iter().chain(box_max.iter()).any(|v| v.is_nan()) {
            return Err(ConfigError::Invalid("incomplete [rho_box]: all rho{1..5}_min/_max required".into()));
        }
        Some(
            RhoBox::new(box_min, box_max)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        )
    } else {
        None
    };
    Ok(ParsedConfig { scenario: cfg, rho_box })
}

fn strip_comment(raw: &str) -> &str {
    let t = raw.trim();
    if t.starts_with('#') {
        ""
    } else {
        t
    }
}

fn apply_plant_key(cfg: &mut ScenarioConfig, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    let p = &mut cfg.plant;
    match key {
        "l_pe" => p.l_pe = parse_f64(line, key, v)?,
        "w_pe" => p.w_pe = parse_f64(line, key, v)?,
        "h_pe" => p.h_pe = parse_f64(line, key, v)?,
        "k2_d" => p.k2_d = parse_f64(line, key, v)?,
        "k3_d" => p.k3_d = parse_f64(line, key, v)?,
        "k4_d" => p.k4_d = parse_f64(line, key, v)?,
        "k5_d" => p.k5_d = parse_f64(line, key, v)?,
        "n_electrons" => p.n_electrons = parse_u32(line, key, v)?,
        "faraday" => p.faraday = parse_f64(line, key, v)?,
        "c_bar" => p.c_bar = parse_f64(line, key, v)?,
        "c_min" => p.c_min = parse_f64(line, key, v)?,
        "c_max" => p.c_max = parse_f64(line, key, v)?,
        "m_cells" => p.m_cells = parse_u32(line, key, v)?,
        "e0_formal" => p.e0_formal = parse_f64(line, key, v)?,
        "r_gas" => p.r_gas = parse_f64(line, key, v)?,
        "v_t" => p.v_t = parse_f64(line, key, v)?,
        "i_min" => p.i_min = parse_f64(line, key, v)?,
        "i_max" => p.i_max = parse_f64(line, key, v)?,
        "q_min" => p.q_min = parse_f64(line, key, v)?,
        "q_max" => p.q_max = parse_f64(line, key, v)?,
        "temperature" => p.temperature = parse_f64(line, key, v)?,
        _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
    }
    Ok(())
}

fn apply_pump_key(cfg: &mut ScenarioConfig, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    let p = &mut cfg.pump;
    match key {
        "m_p" => p.m_p = parse_f64(line, key, v)?,
        "b_p" => p.b_p = parse_f64(line, key, v)?,
        "vp_min" => p.vp_min = parse_f64(line, key, v)?,
        "vp_max" => p.vp_max = parse_f64(line, key, v)?,
        _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
    }
    Ok(())
}

fn apply_scenario_key(cfg: &mut ScenarioConfig, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "mode" => {
            cfg.mode = match v {
                "charging" => Mode::Charging,
                "discharging" => Mode::Discharging,
                other => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        what: format!("`{other}` is not `charging` or `discharging`"),
                    })
                }
            }
        }
        "soc0" => cfg.soc0 = parse_f64(line, key, v)?,
        "soc_target" => cfg.soc_target = parse_f64(line, key, v)?,
        "X_s" => cfg.x_s = parse_f64(line, key, v)?,
        "I_s" => cfg.i_s = parse_f64(line, key, v)?,
        "k_range" => cfg.k_range = parse_f64(line, key, v)?,
        "dwell" => cfg.dwell = parse_f64(line, key, v)?,
        "tau" => cfg.tau = parse_f64(line, key, v)?,
        "seed" => cfg.seed = parse_u64(line, key, v)?,
        "measurement" => {
            cfg.measurement = match v {
                "ideal" => Measurement::Ideal,
                "balanced_ocv" => Measurement::BalancedOcv,
                other => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        what: format!("`{other}` is not `ideal` or `balanced_ocv`"),
                    })
                }
            }
        }
        "noise_sd" => cfg.noise_sd = parse_f64(line, key, v)?,
        _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
    }
    Ok(())
}

fn apply_controller_key(cfg: &mut ScenarioConfig, line: usize, key: &str, v: &str) -> Result<(), ConfigError> {
    match key {
        "controller" => {
            cfg.controller = match v {
                "convex_combination" => ControllerKind::ConvexCombination,
                "online_lqr" => ControllerKind::OnlineLqr,
                other => {
                    return Err(ConfigError::BadValue {
                        line,
                        key: key.to_string(),
                        what: format!("`{other}` is not `convex_combination` or `online_lqr`"),
                    })
                }
            }
        }
        "weights_q_diag" => cfg.weights_q_diag = parse_diag(line, key, v)?,
        "weights_r" => cfg.weights_r = parse_f64(line, key, v)?,
        "paper_literal_rho1" => cfg.paper_literal_rho1 = parse_bool(line, key, v)?,
        "paper_literal_ustar" => cfg.paper_literal_ustar = parse_bool(line, key, v)?,
        _ => {
            if let Some(rest) = key.strip_prefix("weights_q_diag_j") {
                let vertex = parse_vertex(line, key, rest)?;
                let diag = parse_diag(line, key, v)?;
                cfg.q_overrides.push((vertex, diag));
            } else if let Some(rest) = key.strip_prefix("weights_r_j") {
                let vertex = parse_vertex(line, key, rest)?;
                cfg.r_overrides.push((vertex, parse_f64(line, key, v)?));
            } else {
                return Err(ConfigError::UnknownKey { line, key: key.to_string() });
            }
        }
    }
    Ok(())
}

fn parse_vertex(line: usize, key: &str, rest: &str) -> Result<usize, ConfigError> {
    let vertex: usize = rest.parse().map_err(|_| ConfigError::BadValue {
        line,
        key: key.to_string(),
        what: "vertex suffix must be an integer".to_string(),
    })?;
    if !(1..=N_VERTICES).contains(&vertex) {
        return Err(ConfigError::BadValue {
            line,
            key: key.to_string(),
            what: format!("vertex {vertex} out of 1..=32"),
        });
    }
    Ok(vertex)
}

fn apply_box_key(
    min: &mut [f64; N_RHO],
    max: &mut [f64; N_RHO],
    line: usize,
    key: &str,
    v: &str,
) -> Result<(), ConfigError> {
    for i in 0..N_RHO {
        if key == format!("rho{}_min", i + 1) {
            min[i] = parse_f64(line, key, v)?;
            return Ok(());
        }
        if key == format!("rho{}_max", i + 1) {
            max[i] = parse_f64(line, key, v)?;
            return Ok(());
        }
    }
    Err(ConfigError::UnknownKey { line, key: key.to_string() })
}

/// Renders a rho box as a `[rho_box]` section, the format `sweep-bounds`
/// writes and `parse` reads back.
pub fn render_rho_box(b: &RhoBox) -> String {
    let mut out = String::from("[rho_box]\n");
    for i in 0..N_RHO {
        out.push_str(&format!("rho{}_min = {:e}\n", i + 1, b.min[i]));
        out.push_str(&format!("rho{}_max = {:e}\n", i + 1, b.max[i]));
    }
    out
}
