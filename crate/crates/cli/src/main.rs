//! Batch front end: certify gain sets, synthesize new ones, and run
//! formation simulations and size sweeps from a JSON configuration.

mod config;
mod csvio;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use muxnet::certifier::{self, Certificate};
use muxnet::halanay::ScalabilityBoundCoeffs;
use muxnet::simulator::{self, RecordMode, SimMetrics};
use muxnet::synthesis;

use config::ConfigFile;
use manifest::RunManifest;

/// Exit codes: 0 success, 1 infeasible/empty result, 2 configuration error,
/// 3 simulation blow-up.
const EXIT_OK: u8 = 0;
const EXIT_INFEASIBLE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BLOWUP: u8 = 3;

#[derive(Parser)]
#[command(name = "muxnet", version, about = "Scalability certification, gain synthesis and formation simulation for delayed multiplex control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for result files.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Seed for all randomized behavior (recorded in the manifest).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run simulations even when the gains fail certification.
    #[arg(long, default_value_t = false)]
    allow_uncertified: bool,
    /// Override the integration step (seconds).
    #[arg(long)]
    step: Option<f64>,
    /// Override the simulation duration (seconds).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Certify the configured gain set and print the certificate JSON.
    Certify {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Sweep the transformation grid for the lowest-cost feasible gains.
    Synthesize {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate the configured formation and write metrics CSVs.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Simulate over a range of formation sizes and aggregate deviations.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1)]
        circles_min: usize,
        #[arg(long, default_value_t = 10)]
        circles_max: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Certify { common } => cmd_certify(&common),
        Command::Synthesize { common } => cmd_synthesize(&common),
        Command::Simulate { common } => cmd_simulate(&common),
        Command::Sweep { common, circles_min, circles_max } => {
            cmd_sweep(&common, circles_min, circles_max)
        }
    };
    ExitCode::from(code)
}

fn load_config(path: &Path) -> Result<(ConfigFile, String), u8> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("config error: cannot read {}: {e}", path.display());
            return Err(EXIT_CONFIG);
        }
    };
    let digest = manifest::sha256_hex(&bytes);
    match serde_json::from_slice::<ConfigFile>(&bytes) {
        Ok(cfg) => Ok((cfg, digest)),
        Err(e) => {
            eprintln!(
                "config error at line {} column {}: {e}",
                e.line(),
                e.column()
            );
            Err(EXIT_CONFIG)
        }
    }
}

fn cmd_certify(common: &CommonArgs) -> u8 {
    let (cfg, _) = match load_config(&common.config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let gains = cfg.gains;
    let n_bar = cfg.topology.n_bar;
    let tau = cfg.delay.tau_max;
    let cert = match certifier::certify(&gains, n_bar, tau) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return EXIT_CONFIG;
        }
    };
    println!("{}", serde_json::to_string_pretty(&cert).unwrap());
    if cert.feasible {
        EXIT_OK
    } else {
        eprintln!(
            "infeasible: sigma_bar = {:.6e}, sigma_under = {:.6e}, margin = {:.6e}",
            cert.sigma_bar,
            cert.sigma_under,
            cert.margin()
        );
        EXIT_INFEASIBLE
    }
}

fn cmd_synthesize(common: &CommonArgs) -> u8 {
    let (cfg, digest) = match load_config(&common.config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let start = Instant::now();
    let mut problem = cfg.synthesis_problem();
    problem.seed = common.seed;
    let result = synthesis::grid_sweep(&problem);

    if std::fs::create_dir_all(&common.out).is_err() {
        eprintln!("cannot create output directory {}", common.out.display());
        return EXIT_CONFIG;
    }
    let result_path = common.out.join("synthesis_result.json");
    let table_path = common.out.join("per_alpha.csv");
    std::fs::write(&result_path, serde_json::to_string_pretty(&result).unwrap()).unwrap();
    csvio::write_per_alpha(&table_path, &result.per_alpha).unwrap();

    let mut manifest = RunManifest::new("synthesize", digest, common.seed, start.elapsed());
    manifest.outputs = vec![
        result_path.display().to_string(),
        table_path.display().to_string(),
    ];
    manifest.write(&common.out.join("run_manifest.json"));

    match &result.best_gains {
        Some(gains) => {
            println!("{}", serde_json::to_string_pretty(gains).unwrap());
            EXIT_OK
        }
        None => {
            eprintln!("no feasible gains on the configured grid");
            EXIT_INFEASIBLE
        }
    }
}

/// Certification gate shared by simulate/sweep: returns the certificate (for
/// the bound check) or an exit code.
fn certification_gate(
    cfg: &ConfigFile,
    common: &CommonArgs,
    warnings: &mut Vec<String>,
) -> Result<Option<Certificate>, u8> {
    let cert = match certifier::certify(&cfg.gains, cfg.topology.n_bar, cfg.delay.tau_max) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return Err(EXIT_CONFIG);
        }
    };
    if cert.feasible {
        return Ok(Some(cert));
    }
    if common.allow_uncertified {
        warnings.push(format!(
            "gains are not certified (margin {:.6e}); running anyway",
            cert.margin()
        ));
        Ok(None)
    } else {
        eprintln!(
            "gains fail certification (margin {:.6e}); pass --allow-uncertified to run anyway",
            cert.margin()
        );
        Err(EXIT_INFEASIBLE)
    }
}

fn sim_exit(e: &simulator::SimError) -> u8 {
    match e {
        simulator::SimError::NonFinite { .. } => {
            eprintln!("simulation blow-up: {e}");
            EXIT_BLOWUP
        }
        _ => {
            eprintln!("config error: {e}");
            EXIT_CONFIG
        }
    }
}

fn bound_coeffs_for(
    cfg: &ConfigFile,
    cert: &Option<Certificate>,
) -> Option<(ScalabilityBoundCoeffs, f64, f64)> {
    let coeffs = cert.as_ref()?.bound_coeffs(cfg.delay.tau_max)?;
    let w_sup = cfg
        .disturbance_specs_iter()
        .map(|d| d.residual_sup_2norm())
        .fold(0.0_f64, f64::max);
    let zeta0_sup = cfg
        .disturbance_specs_iter()
        .map(|d| d.initial_zeta_sup(muxnet::protocol::ROBOT_LAYERS, cfg.delay.tau_max))
        .fold(0.0_f64, f64::max);
    Some((coeffs, w_sup, zeta0_sup))
}

fn cmd_simulate(common: &CommonArgs) -> u8 {
    let (cfg, digest) = match load_config(&common.config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let start = Instant::now();
    let mut warnings = Vec::new();
    let cert = match certification_gate(&cfg, common, &mut warnings) {
        Ok(c) => c,
        Err(code) => return code,
    };
    let topology = cfg.build_topology();
    let sim_config = match cfg.sim_config(&topology, common, RecordMode::Full) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return EXIT_CONFIG;
        }
    };
    let metrics = match simulator::run(&sim_config, &cfg.gains, &topology) {
        Ok(m) => m,
        Err(e) => return sim_exit(&e),
    };
    warnings.extend(metrics.warnings.iter().cloned());

    if std::fs::create_dir_all(&common.out).is_err() {
        eprintln!("cannot create output directory {}", common.out.display());
        return EXIT_CONFIG;
    }
    let metrics_path = common.out.join("metrics.csv");
    let summary_path = common.out.join("circle_summary.csv");
    csvio::write_metrics(&metrics_path, &metrics, &topology).unwrap();
    csvio::write_circle_summary(&summary_path, &metrics.per_circle_max).unwrap();

    let mut manifest = RunManifest::new("simulate", digest, common.seed, start.elapsed());
    manifest.outputs = vec![
        metrics_path.display().to_string(),
        summary_path.display().to_string(),
    ];
    if let Some((coeffs, w_sup, zeta0_sup)) = bound_coeffs_for(&cfg, &cert) {
        let check = simulator::check_iss_bound(&metrics, &coeffs, w_sup, 0.0, zeta0_sup);
        if check.violations > 0 {
            warnings.push(format!(
                "deviation bound violated at {} samples (max ratio {:.3})",
                check.violations, check.max_ratio
            ));
        }
    }
    manifest.warnings = warnings;
    manifest.write(&common.out.join("run_manifest.json"));

    println!(
        "simulated {} agents for {:.2} s: global max deviation {:.6e} m",
        topology.agent_count(),
        sim_config.duration,
        metrics.global_max()
    );
    EXIT_OK
}

fn cmd_sweep(common: &CommonArgs, circles_min: usize, circles_max: usize) -> u8 {
    if circles_min == 0 || circles_min > circles_max {
        eprintln!("config error: need 1 <= circles_min <= circles_max");
        return EXIT_CONFIG;
    }
    let (cfg, digest) = match load_config(&common.config) {
        Ok(v) => v,
        Err(code) => return code,
    };
    let start = Instant::now();
    let mut warnings = Vec::new();
    if let Err(code) = certification_gate(&cfg, common, &mut warnings) {
        return code;
    }

    if std::fs::create_dir_all(&common.out).is_err() {
        eprintln!("cannot create output directory {}", common.out.display());
        return EXIT_CONFIG;
    }
    let mut rows = Vec::new();
    let mut per_circle_agg: Vec<f64> = vec![0.0; circles_max];
    let mut outputs = Vec::new();
    for n in circles_min..=circles_max {
        let topology = cfg.build_topology_with_circles(n);
        let sim_config = match cfg.sim_config(&topology, common, RecordMode::Summary) {
            Ok(c) => c,
            Err(msg) => {
                eprintln!("config error: {msg}");
                return EXIT_CONFIG;
            }
        };
        let metrics: SimMetrics = match simulator::run(&sim_config, &cfg.gains, &topology) {
            Ok(m) => m,
            Err(e) => return sim_exit(&e),
        };
        warnings.extend(metrics.warnings.iter().cloned());
        for (c, v) in metrics.per_circle_max.iter().enumerate() {
            per_circle_agg[c] = per_circle_agg[c].max(*v);
        }
        let run_summary = common.out.join(format!("circle_summary_n{n}.csv"));
        csvio::write_circle_summary(&run_summary, &metrics.per_circle_max).unwrap();
        outputs.push(run_summary.display().to_string());
        rows.push((n, metrics.global_max()));
    }
    let sweep_path = common.out.join("sweep_summary.csv");
    let agg_path = common.out.join("circle_summary.csv");
    csvio::write_sweep_summary(&sweep_path, &rows).unwrap();
    csvio::write_circle_summary(&agg_path, &per_circle_agg).unwrap();
    outputs.push(sweep_path.display().to_string());
    outputs.push(agg_path.display().to_string());

    let mut manifest = RunManifest::new("sweep", digest, common.seed, start.elapsed());
    manifest.outputs = outputs;
    manifest.warnings = warnings;
    manifest.write(&common.out.join("run_manifest.json"));

    for (n, gmax) in &rows {
        println!("n_circles = {n:2}: global max deviation {gmax:.6e} m");
    }
    EXIT_OK
}
