//! Command-line frontend: scenario simulation, gain-table export, stability
//! analysis, and rho-box calibration.
//!
//! ```text
//! vrb simulate     --config <file> --out <csv>
//! vrb gains        --config <file>
//! vrb analyze      --config <file>
//! vrb sweep-bounds --config <file> --out <file>
//! ```
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 synthesis or
//! analysis failure. `VRB_LOG_LEVEL` in {error, warn, info, debug} controls
//! stderr verbosity.

use std::process::ExitCode;

use vrb::analysis::certify;
use vrb::config;
use vrb::controller::{gains_table, synthesize};
use vrb::lpv::Rho;
use vrb::sim::{run_scenario_with_schedule, sweep_scenario_box, write_csv, ScenarioConfig};

const USAGE: &str = "usage: vrb <simulate|gains|analyze|sweep-bounds> --config <file> [--out <file>]";

const EXIT_CONFIG: u8 = 2;
const EXIT_ANALYSIS: u8 = 3;

struct Args {
    command: String,
    config: String,
    out: Option<String>,
}

fn parse_args(argv: &[String]) -> Result<Args, String> {
    let mut command = None;
    let mut config = None;
    let mut out = None;
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "--config" => config = Some(it.next().ok_or("--config needs a path")?.clone()),
            "--out" => out = Some(it.next().ok_or("--out needs a path")?.clone()),
            "simulate" | "gains" | "analyze" | "sweep-bounds" if command.is_none() => {
                command = Some(a.clone())
            }
            other => return Err(format!("unexpected argument `{other}`")),
        }
    }
    Ok(Args {
        command: command.ok_or("missing subcommand")?,
        config: config.ok_or("missing --config")?,
        out,
    })
}

fn load_config(path: &str) -> Result<config::ParsedConfig, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
    config::parse(&text).map_err(|e| format!("{path}: {e}"))
}

fn fail(code: u8, msg: &str) -> ExitCode {
    eprintln!("vrb: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let args = match parse_args(&argv) {
        Ok(a) => a,
        Err(e) => return fail(EXIT_CONFIG, &format!("{e}\n{USAGE}")),
    };
    let parsed = match load_config(&args.config) {
        Ok(p) => p,
        Err(e) => return fail(EXIT_CONFIG, &e),
    };

    match args.command.as_str() {
        "simulate" => {
            let Some(out_path) = args.out else {
                return fail(EXIT_CONFIG, "simulate requires --out <csv>");
            };
            let cfg = match parsed.scenario() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, &e.to_string()),
            };
            let gs = match synthesize(&cfg.rho_box, cfg.tau, &cfg.vertex_weights(), cfg.mode) {
                Ok(g) => g,
                Err(e) => return fail(EXIT_ANALYSIS, &format!("gain synthesis failed: {e}")),
            };
            let records = match run_scenario_with_schedule(&cfg, &gs) {
                Ok(r) => r,
                Err(e) => return fail(EXIT_ANALYSIS, &format!("simulation failed: {e}")),
            };
            let file = match std::fs::File::create(&out_path) {
                Ok(f) => f,
                Err(e) => return fail(EXIT_CONFIG, &format!("cannot create {out_path}: {e}")),
            };
            if let Err(e) = write_csv(&records, file) {
                return fail(EXIT_CONFIG, &format!("cannot write {out_path}: {e}"));
            }
            println!(
                "wrote {} records to {out_path} (final SOC {:.4})",
                records.len(),
                records.last().map(|r| r.soc).unwrap_or(f64::NAN)
            );
            ExitCode::SUCCESS
        }
        "gains" => {
            let cfg = match parsed.scenario() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, &e.to_string()),
            };
            match synthesize(&cfg.rho_box, cfg.tau, &cfg.vertex_weights(), cfg.mode) {
                Ok(gs) => {
                    print!("{}", gains_table(&gs));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_ANALYSIS, &format!("gain synthesis failed: {e}")),
            }
        }
        "analyze" => {
            let cfg = match parsed.scenario() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, &e.to_string()),
            };
            let gs = match synthesize(&cfg.rho_box, cfg.tau, &cfg.vertex_weights(), cfg.mode) {
                Ok(g) => g,
                Err(e) => return fail(EXIT_ANALYSIS, &format!("gain synthesis failed: {e}")),
            };
            // Controllability along a sampled closed-loop rho trajectory.
            match run_scenario_with_schedule(&cfg, &gs) {
                Ok(records) => {
                    let mut min_rank = 2;
                    let mut deficient = 0usize;
                    for pair in records.windows(2) {
                        let r0 = Rho::from_array(pair[0].rho, cfg.mode);
                        let r1 = Rho::from_array(pair[1].rho, cfg.mode);
                        let rank = vrb::analysis::controllability_check(&r0, &r1, cfg.tau);
                        min_rank = min_rank.min(rank);
                        if rank < 2 {
                            deficient += 1;
                        }
                    }
                    println!(
                        "controllability over {} sampled steps: min rank {min_rank}, {} rank-deficient instants",
                        records.len().saturating_sub(1),
                        deficient
                    );
                }
                Err(e) => return fail(EXIT_ANALYSIS, &format!("trajectory sampling failed: {e}")),
            }
            let w_bar = disturbance_bound(&cfg);
            let cert = match certify(&gs, w_bar, cfg.x_s) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_ANALYSIS, &format!("analysis failed: {e}")),
            };
            println!(
                "vertex closed-loop radii: max {:.9}",
                gs.vertex_radii.iter().fold(0.0f64, |a, b| a.max(*b))
            );
            println!("transform V degenerate: {}", cert.v_degenerate);
            println!("Lambda =");
            for r in 0..3 {
                println!(
                    "  [{:+.6e} {:+.6e} {:+.6e}]",
                    cert.lambda.get(r, 0),
                    cert.lambda.get(r, 1),
                    cert.lambda.get(r, 2)
                );
            }
            println!("Perron root = {:.9}", cert.perron_root);
            println!("Schur: {}", cert.schur);
            match cert.zeta_bar {
                Some(zb) => println!(
                    "ultimate bound zeta_bar = [{:.6e}, {:.6e}, {:.6e}] for |w| <= {:.3}, |r| <= {:.3}",
                    zb[0], zb[1], zb[2], cert.w_bar, cert.r_bar
                ),
                None => println!("ultimate bound unavailable (contraction matrix not Schur)"),
            }
            if cert.schur {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_ANALYSIS)
            }
        }
        "sweep-bounds" => {
            let Some(out_path) = args.out else {
                return fail(EXIT_CONFIG, "sweep-bounds requires --out <file>");
            };
            let cfg = match parsed.scenario_for_sweep() {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, &e.to_string()),
            };
            match sweep_scenario_box(&cfg, 0.1) {
                Ok(bounds) => {
                    let text = config::render_rho_box(&bounds);
                    if let Err(e) = std::fs::write(&out_path, text) {
                        return fail(EXIT_CONFIG, &format!("cannot write {out_path}: {e}"));
                    }
                    println!("wrote calibrated rho box to {out_path}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_ANALYSIS, &format!("sweep failed: {e}")),
            }
        }
        other => fail(EXIT_CONFIG, &format!("unknown subcommand `{other}`\n{USAGE}")),
    }
}

/// Disturbance magnitude bound for the certificate: the largest |current| the
/// profile can command.
fn disturbance_bound(cfg: &ScenarioConfig) -> f64 {
    let fluct = (cfg.i_s * (1.0 + cfg.k_range))
        .abs()
        .max((cfg.i_s * (1.0 - cfg.k_range)).abs());
    fluct.min(cfg.plant.i_max.abs().max(cfg.plant.i_min.abs()))
}
