//! Thin command-line front end: environment generation, latency-model
//! calibration, single missions, the benchmark suite, and report
//! regeneration. All logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use aerovox::bench::{run_suite, write_outputs, SuiteConfig, SuiteReport};
use aerovox::config::SimConfig;
use aerovox::governor::{calibrate, default_calibration_grid, real_stage_executors, LatencyModel};
use aerovox::runtime::{run_mission, LatencySource, RuntimeMode};
use aerovox::world::{env_id, generate_environment, suite_27, EnvSpec};
use aerovox::SimError;

#[derive(Parser)]
#[command(name = "aerovox", version, about = "Desk-scale drone navigation benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write the 27 suite environments as spec and obstacle CSV files.
    Gen {
        /// Geometric scale factor in (0, 1].
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Base seed for the suite's derived environment seeds.
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "envs")]
        out: PathBuf,
    },
    /// Fit the per-stage latency model on the real stage executors.
    Calibrate {
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Repetitions per grid cell (the median is kept); at least 5.
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value = "model.txt")]
        out: PathBuf,
    },
    /// Fly a single mission and write its decision log.
    Run {
        /// Suite environment id (like d45_s080_g0900) or a spec file path.
        #[arg(long)]
        env: String,
        /// baseline, adaptive, or pinned.
        #[arg(long, default_value = "adaptive")]
        mode: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// modeled or measured stage latencies.
        #[arg(long, default_value = "modeled")]
        latency: String,
        /// Model file path, or "reference" for the built-in pinned model.
        #[arg(long, default_value = "reference")]
        model: String,
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        /// Base seed used to locate suite environments by id.
        #[arg(long, default_value_t = 1)]
        suite_seed: u64,
        /// Output CSV path; defaults to <env>_<mode>_s<seed>.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the benchmark suite and write mission logs, report, and figures.
    Suite {
        #[arg(long, default_value_t = 0.1)]
        scale: f64,
        #[arg(long, default_value_t = 5)]
        seeds: u32,
        /// Comma-separated mode labels.
        #[arg(long, default_value = "baseline,adaptive")]
        modes: String,
        #[arg(long, default_value = "modeled")]
        latency: String,
        /// Worker threads; 0 picks the rayon default.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long, default_value = "reference")]
        model: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "suite_out")]
        out: PathBuf,
        /// Evaluate the suite-level thresholds; exit 2 if any fail.
        #[arg(long)]
        check: bool,
    },
    /// Regenerate report.csv and the SVG figures from stored mission logs.
    Report {
        #[arg(long, default_value = "suite_out")]
        dir: PathBuf,
    },
}

fn parse_latency(s: &str) -> Result<LatencySource, SimError> {
    match s {
        "modeled" => Ok(LatencySource::Modeled),
        "measured" => Ok(LatencySource::Measured),
        other => Err(SimError::Config(format!("unknown latency source {other:?} (use modeled or measured)"))),
    }
}

fn parse_modes(s: &str) -> Result<Vec<RuntimeMode>, SimError> {
    s.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| RuntimeMode::from_label(m).ok_or_else(|| SimError::Config(format!("unknown mode {m:?}"))))
        .collect()
}

fn load_model(spec: &str) -> Result<LatencyModel, SimError> {
    if spec == "reference" {
        Ok(LatencyModel::reference())
    } else {
        LatencyModel::load(std::path::Path::new(spec))
    }
}

fn resolve_env(env: &str, scale: f64, suite_seed: u64) -> Result<EnvSpec, SimError> {
    let path = std::path::Path::new(env);
    if path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{env}: {e}")))?;
        return EnvSpec::from_key_values(&text);
    }
    let cfg = SimConfig::with_scale(scale);
    suite_27(&cfg, suite_seed)
        .into_iter()
        .find(|s| env_id(s) == env)
        .ok_or_else(|| SimError::Config(format!("{env:?} is neither a spec file nor a suite environment id")))
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode, SimError> {
    match cli.cmd {
        Cmd::Gen { scale, seed, out } => {
            let cfg = SimConfig::with_scale(scale);
            std::fs::create_dir_all(&out).map_err(|e| SimError::Io(format!("{}: {e}", out.display())))?;
            for spec in suite_27(&cfg, seed) {
                let id = env_id(&spec);
                let gt = generate_environment(&spec);
                let spec_path = out.join(format!("{id}.env"));
                std::fs::write(&spec_path, spec.to_key_values())
                    .map_err(|e| SimError::Io(format!("{}: {e}", spec_path.display())))?;
                gt.write_obstacles_csv(&out.join(format!("{id}_obstacles.csv")))?;
                println!("{id}: {} obstacles", gt.obstacles.len());
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Calibrate { scale, reps, out } => {
            let cfg = SimConfig::with_scale(scale);
            let (precisions, volumes) = default_calibration_grid(&cfg);
            let mut executors = real_stage_executors(&cfg);
            let (model, samples) = calibrate(&mut executors, &precisions, &volumes, reps)?;
            model.save(&out)?;
            println!("fit relative MSE {:.5} over {} samples -> {}", model.fit_mse, samples.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { env, mode, seed, latency, model, scale, suite_seed, out } => {
            let cfg = SimConfig::with_scale(scale);
            let spec = resolve_env(&env, scale, suite_seed)?;
            let mut rt = RuntimeMode::from_label(&mode)
                .ok_or_else(|| SimError::Config(format!("unknown mode {mode:?}")))?;
            rt.latency_source = parse_latency(&latency)?;
            let model = load_model(&model)?;
            let gt = generate_environment(&spec);
            let log = run_mission(&gt, rt, &model, &cfg, seed);
            let path = out.unwrap_or_else(|| PathBuf::from(format!("{}_{}_s{seed}.csv", env_id(&spec), rt.label())));
            log.write_csv(&path)?;
            println!(
                "{} reached {} collided {} time {:.1}s avg velocity {:.3} m/s -> {}",
                env_id(&spec),
                log.reached,
                log.collided,
                log.flight_time_s,
                log.avg_velocity(),
                path.display()
            );
            if log.collided || (!log.reached && log.timed_out) {
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Suite { scale, seeds, modes, latency, jobs, model, seed, out, check } => {
            let model = load_model(&model)?;
            let suite = SuiteConfig {
                scale,
                seeds_per_env: seeds,
                modes: parse_modes(&modes)?,
                latency_source: parse_latency(&latency)?,
                output_dir: out.clone(),
                jobs,
                base_seed: seed,
            };
            let report = run_suite(&suite, &model)?;
            for mode in report.mode_labels() {
                println!(
                    "{mode}: mean time {:.1}s velocity {:.3} m/s collision rate {:.2}",
                    report.mean(&mode, |r| r.mission_time_s),
                    report.mean(&mode, |r| r.avg_velocity_mps),
                    report.collision_rate(&mode),
                );
            }
            println!("report -> {}", out.join("report.csv").display());
            if check {
                let fails = report.check();
                if !fails.is_empty() {
                    for f in &fails {
                        eprintln!("check failed: {f}");
                    }
                    return Ok(ExitCode::from(2));
                }
                println!("all suite checks passed");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { dir } => {
            let report = SuiteReport::from_dir(&dir)?;
            write_outputs(&report, &dir)?;
            println!("regenerated report and figures in {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
