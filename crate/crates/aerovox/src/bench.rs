//! Benchmark suite over the 27-environment grid: parallel mission
//! orchestration, metric aggregation into a flat CSV report, sensitivity
//! and compute-proxy comparisons, and deterministic SVG figures.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::SimConfig;
use crate::error::SimError;
use crate::governor::LatencyModel;
use crate::runtime::{run_mission, LatencySource, MissionLog, RuntimeMode};
use crate::world::{env_id, generate_environment, suite_27};

/// Adaptive mean mission time must be at most this fraction of baseline's.
pub const TIME_RATIO_MAX: f64 = 0.5;
/// Adaptive mean velocity must be at least this multiple of baseline's.
pub const VELOCITY_RATIO_MIN: f64 = 2.0;
/// Per-mode collision rate ceiling.
pub const COLLISION_RATE_MAX: f64 = 0.2;

/// Suite-level configuration: grid scale, modes, seeds, and output layout.
#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub scale: f64,
    pub seeds_per_env: u32,
    pub modes: Vec<RuntimeMode>,
    pub latency_source: LatencySource,
    pub output_dir: PathBuf,
    /// Worker threads for the mission pool; 0 picks the rayon default.
    pub jobs: usize,
    /// Base seed deriving both environment seeds and mission seeds.
    pub base_seed: u64,
}

impl SuiteConfig {
    /// Default full suite: desk scale, both modes, 5 seeds, modeled latency.
    pub fn new(output_dir: PathBuf) -> Self {
        SuiteConfig {
            scale: 0.1,
            seeds_per_env: 5,
            modes: vec![RuntimeMode::baseline(), RuntimeMode::adaptive()],
            latency_source: LatencySource::Modeled,
            output_dir,
            jobs: 0,
            base_seed: 1,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.seeds_per_env < 1 {
            return Err(SimError::Config("seeds_per_env must be >= 1".into()));
        }
        if !(self.scale > 0.0 && self.scale <= 1.0) {
            return Err(SimError::Config(format!("scale {} outside (0, 1]", self.scale)));
        }
        if self.modes.is_empty() {
            return Err(SimError::Config("no modes selected".into()));
        }
        Ok(())
    }
}

/// One finished (environment, mode, seed) mission as a report row.
#[derive(Debug, Clone, PartialEq)]
pub struct MissionRow {
    pub env: String,
    /// Suite knob levels, in full-scale units (density as a percentage).
    pub density_pct: u32,
    pub spread_full_m: u32,
    pub goal_full_m: u32,
    pub mode: String,
    pub seed: u64,
    pub reached: bool,
    pub collided: bool,
    pub timed_out: bool,
    pub mission_time_s: f64,
    pub avg_velocity_mps: f64,
    pub energy_j: f64,
    pub decisions: usize,
    pub replans: u32,
    pub deadline_violations: usize,
    pub mean_latency_s: f64,
    pub cpu_per_decision_s: f64,
}

/// Column order of `report.csv`.
pub const REPORT_CSV_HEADER: &str = "env,density,spread_m,goal_m,mode,seed,reached,collided,timed_out,mission_time_s,avg_velocity_mps,energy_j,decisions,replans,deadline_violations,mean_latency_s,cpu_per_decision_s";

/// Quantizes a metric to its six-decimal CSV representation so that
/// write, parse, and write again is a fixed point.
fn q6(x: f64) -> f64 {
    format!("{x:.6}").parse().unwrap_or(x)
}

impl MissionRow {
    /// Builds a row from a stored mission log and its file name.
    pub fn from_log(env: &str, mode: &str, seed: u64, log: &MissionLog) -> Result<Self, SimError> {
        let (density_pct, spread_full_m, goal_full_m) = parse_env_id(env)?;
        let n = log.records.len();
        let mean_latency_s = if n > 0 {
            log.records.iter().map(|r| r.latency()).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let cpu_per_decision_s = if n > 0 { log.cpu_proxy_s / n as f64 } else { 0.0 };
        Ok(MissionRow {
            env: env.to_string(),
            density_pct,
            spread_full_m,
            goal_full_m,
            mode: mode.to_string(),
            seed,
            reached: log.reached,
            collided: log.collided,
            timed_out: log.timed_out,
            mission_time_s: q6(log.flight_time_s),
            avg_velocity_mps: q6(log.avg_velocity()),
            energy_j: q6(log.energy_j),
            decisions: n,
            replans: log.replans,
            deadline_violations: log.deadline_violations(),
            mean_latency_s: q6(mean_latency_s),
            cpu_per_decision_s: q6(cpu_per_decision_s),
        })
    }

    fn csv_line(&self) -> String {
        format!(
            "{},{:.2},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{},{},{},{:.6},{:.6}",
            self.env,
            self.density_pct as f64 / 100.0,
            self.spread_full_m,
            self.goal_full_m,
            self.mode,
            self.seed,
            self.reached as u8,
            self.collided as u8,
            self.timed_out as u8,
            self.mission_time_s,
            self.avg_velocity_mps,
            self.energy_j,
            self.decisions,
            self.replans,
            self.deadline_violations,
            self.mean_latency_s,
            self.cpu_per_decision_s,
        )
    }
}

/// A suite knob axis of the 27-environment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteKnob {
    Density,
    Spread,
    GoalDistance,
}

impl SuiteKnob {
    pub fn label(self) -> &'static str {
        match self {
            SuiteKnob::Density => "density",
            SuiteKnob::Spread => "spread",
            SuiteKnob::GoalDistance => "goal_distance",
        }
    }

    fn level(self, row: &MissionRow) -> u32 {
        match self {
            SuiteKnob::Density => row.density_pct,
            SuiteKnob::Spread => row.spread_full_m,
            SuiteKnob::GoalDistance => row.goal_full_m,
        }
    }
}

/// Mean mission time per knob level for one mode, plus the worst-case
/// max/min ratio across levels.
#[derive(Debug, Clone)]
pub struct SensitivitySeries {
    pub mode: String,
    pub levels: Vec<(u32, f64)>,
    pub worst_ratio: f64,
}

/// Aggregated suite results: one row per (environment, mode, seed).
#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub rows: Vec<MissionRow>,
}

impl SuiteReport {
    /// Mode labels present, in fixed preference order.
    pub fn mode_labels(&self) -> Vec<String> {
        let mut set: BTreeSet<&str> = self.rows.iter().map(|r| r.mode.as_str()).collect();
        let mut out = Vec::new();
        for m in ["baseline", "adaptive", "pinned"] {
            if set.remove(m) {
                out.push(m.to_string());
            }
        }
        out.extend(set.into_iter().map(|m| m.to_string()));
        out
    }

    /// Mean of a row metric over one mode's rows (0 when none).
    pub fn mean(&self, mode: &str, f: impl Fn(&MissionRow) -> f64) -> f64 {
        let vals: Vec<f64> = self.rows.iter().filter(|r| r.mode == mode).map(f).collect();
        if vals.is_empty() {
            0.0
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    /// Fraction of one mode's missions that collided.
    pub fn collision_rate(&self, mode: &str) -> f64 {
        self.mean(mode, |r| if r.collided { 1.0 } else { 0.0 })
    }

    /// Mean mission time per knob level and worst-case ratio, per mode.
    pub fn sensitivity(&self, knob: SuiteKnob) -> Vec<SensitivitySeries> {
        let levels: BTreeSet<u32> = self.rows.iter().map(|r| knob.level(r)).collect();
        self.mode_labels()
            .into_iter()
            .map(|mode| {
                let pts: Vec<(u32, f64)> = levels
                    .iter()
                    .map(|&lv| {
                        let vals: Vec<f64> = self
                            .rows
                            .iter()
                            .filter(|r| r.mode == mode && knob.level(r) == lv)
                            .map(|r| r.mission_time_s)
                            .collect();
                        let mean = if vals.is_empty() {
                            0.0
                        } else {
                            vals.iter().sum::<f64>() / vals.len() as f64
                        };
                        (lv, mean)
                    })
                    .collect();
                let hi = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
                let lo = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
                let worst_ratio = if lo > 0.0 { hi / lo } else { 1.0 };
                SensitivitySeries { mode, levels: pts, worst_ratio }
            })
            .collect()
    }

    /// Percent reduction in mean per-decision modeled compute of `mode`
    /// relative to `baseline` (positive = cheaper).
    pub fn cpu_reduction_percent(&self, mode: &str, baseline: &str) -> f64 {
        let a = self.mean(mode, |r| r.cpu_per_decision_s);
        let b = self.mean(baseline, |r| r.cpu_per_decision_s);
        if b > 0.0 {
            100.0 * (1.0 - a / b)
        } else {
            0.0
        }
    }

    /// The median-mission-time adaptive run of the mid-difficulty
    /// environment, used for the per-decision figures.
    pub fn representative(&self) -> Option<(String, u64)> {
        let mut cands: Vec<&MissionRow> = self
            .rows
            .iter()
            .filter(|r| r.mode == "adaptive" && r.env == "d45_s080_g0900")
            .collect();
        if cands.is_empty() {
            return None;
        }
        cands.sort_by(|a, b| a.mission_time_s.total_cmp(&b.mission_time_s).then(a.seed.cmp(&b.seed)));
        let mid = cands[(cands.len() - 1) / 2];
        Some((mid.env.clone(), mid.seed))
    }

    /// Serializes rows plus a derived `#`-prefixed summary footer.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(REPORT_CSV_HEADER);
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.csv_line());
            s.push('\n');
        }
        for mode in self.mode_labels() {
            let n = self.rows.iter().filter(|r| r.mode == mode).count();
            let _ = writeln!(
                s,
                "# mode {} missions {} time_s {:.6} velocity_mps {:.6} energy_j {:.6} collision_rate {:.6} latency_s {:.6} cpu_s {:.6}",
                mode,
                n,
                self.mean(&mode, |r| r.mission_time_s),
                self.mean(&mode, |r| r.avg_velocity_mps),
                self.mean(&mode, |r| r.energy_j),
                self.collision_rate(&mode),
                self.mean(&mode, |r| r.mean_latency_s),
                self.mean(&mode, |r| r.cpu_per_decision_s),
            );
        }
        let has = |m: &str| self.rows.iter().any(|r| r.mode == m);
        if has("baseline") && has("adaptive") {
            let tb = self.mean("baseline", |r| r.mission_time_s);
            let ta = self.mean("adaptive", |r| r.mission_time_s);
            let vb = self.mean("baseline", |r| r.avg_velocity_mps);
            let va = self.mean("adaptive", |r| r.avg_velocity_mps);
            let eb = self.mean("baseline", |r| r.energy_j);
            let ea = self.mean("adaptive", |r| r.energy_j);
            let _ = writeln!(
                s,
                "# ratio adaptive/baseline time {:.6} velocity {:.6} energy {:.6}",
                if tb > 0.0 { ta / tb } else { 0.0 },
                if vb > 0.0 { va / vb } else { 0.0 },
                if eb > 0.0 { ea / eb } else { 0.0 },
            );
            let _ = writeln!(s, "# cpu_reduction_percent {:.6}", self.cpu_reduction_percent("adaptive", "baseline"));
            for knob in [SuiteKnob::Density, SuiteKnob::Spread, SuiteKnob::GoalDistance] {
                for series in self.sensitivity(knob) {
                    let _ = writeln!(s, "# sensitivity {} {} worst_ratio {:.6}", knob.label(), series.mode, series.worst_ratio);
                }
            }
        }
        s
    }

    /// Parses `report.csv` rows back; the summary footer is derived data
    /// and is ignored.
    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let bad = |line: &str, what: &str| SimError::Io(format!("report: bad {what} in line {line:?}"));
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if ln == 0 {
                if line != REPORT_CSV_HEADER {
                    return Err(SimError::Io("report: unexpected header".into()));
                }
                continue;
            }
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 17 {
                return Err(bad(line, "column count"));
            }
            let fl = |i: usize| -> Result<f64, SimError> { f[i].parse().map_err(|_| bad(line, "float")) };
            rows.push(MissionRow {
                env: f[0].to_string(),
                density_pct: (fl(1)? * 100.0).round() as u32,
                spread_full_m: f[2].parse().map_err(|_| bad(line, "int"))?,
                goal_full_m: f[3].parse().map_err(|_| bad(line, "int"))?,
                mode: f[4].to_string(),
                seed: f[5].parse().map_err(|_| bad(line, "int"))?,
                reached: f[6] == "1",
                collided: f[7] == "1",
                timed_out: f[8] == "1",
                mission_time_s: fl(9)?,
                avg_velocity_mps: fl(10)?,
                energy_j: fl(11)?,
                decisions: f[12].parse().map_err(|_| bad(line, "int"))?,
                replans: f[13].parse().map_err(|_| bad(line, "int"))?,
                deadline_violations: f[14].parse().map_err(|_| bad(line, "int"))?,
                mean_latency_s: fl(15)?,
                cpu_per_decision_s: fl(16)?,
            });
        }
        Ok(SuiteReport { rows })
    }

    /// Rebuilds the report by parsing every stored mission log under
    /// `dir/missions`; the report is a pure aggregation of those logs.
    pub fn from_dir(dir: &Path) -> Result<Self, SimError> {
        let missions = dir.join("missions");
        let rd = fs::read_dir(&missions).map_err(|e| SimError::Io(format!("{}: {e}", missions.display())))?;
        let mut paths: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        paths.sort();
        let mut rows = Vec::with_capacity(paths.len());
        for path in &paths {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| SimError::Io(format!("{}: bad file name", path.display())))?;
            let (env, mode, seed) = parse_mission_name(stem)?;
            let log = MissionLog::load(path)?;
            rows.push(MissionRow::from_log(&env, &mode, seed, &log)?);
        }
        rows.sort_by(|a, b| a.env.cmp(&b.env).then(a.mode.cmp(&b.mode)).then(a.seed.cmp(&b.seed)));
        Ok(SuiteReport { rows })
    }

    /// Evaluates the suite-level thresholds; returns one message per
    /// failed check (empty = all pass).
    pub fn check(&self) -> Vec<String> {
        let mut fails = Vec::new();
        for mode in self.mode_labels() {
            let rate = self.collision_rate(&mode);
            if rate > COLLISION_RATE_MAX + 1e-12 {
                fails.push(format!("collision rate {rate:.3} for {mode} exceeds {COLLISION_RATE_MAX}"));
            }
        }
        let has = |m: &str| self.rows.iter().any(|r| r.mode == m);
        if !(has("baseline") && has("adaptive")) {
            fails.push("threshold check needs both baseline and adaptive runs".into());
            return fails;
        }
        let tb = self.mean("baseline", |r| r.mission_time_s);
        let ta = self.mean("adaptive", |r| r.mission_time_s);
        if !(ta <= TIME_RATIO_MAX * tb) {
            fails.push(format!("mission time ratio {:.3} exceeds {TIME_RATIO_MAX}", if tb > 0.0 { ta / tb } else { f64::INFINITY }));
        }
        let vb = self.mean("baseline", |r| r.avg_velocity_mps);
        let va = self.mean("adaptive", |r| r.avg_velocity_mps);
        if !(va >= VELOCITY_RATIO_MIN * vb) {
            fails.push(format!("velocity ratio {:.3} below {VELOCITY_RATIO_MIN}", if vb > 0.0 { va / vb } else { 0.0 }));
        }
        let eb = self.mean("baseline", |r| r.energy_j);
        let ea = self.mean("adaptive", |r| r.energy_j);
        if tb > 0.0 && eb > 0.0 {
            let tr = ta / tb;
            let er = ea / eb;
            if (er - tr).abs() > 0.01 * tr {
                fails.push(format!("energy ratio {er:.4} deviates from time ratio {tr:.4} by more than 1%"));
            }
        }
        let viols: usize = self.rows.iter().filter(|r| r.mode == "adaptive").map(|r| r.deadline_violations).sum();
        if viols > 0 {
            fails.push(format!("{viols} adaptive deadline violations"));
        }
        let red = self.cpu_reduction_percent("adaptive", "baseline");
        if !(red > 0.0) {
            fails.push(format!("cpu reduction {red:.2}% is not positive"));
        }
        let ratio_of = |series: &[SensitivitySeries], mode: &str| {
            series.iter().find(|s| s.mode == mode).map_or(1.0, |s| s.worst_ratio)
        };
        let dens = self.sensitivity(SuiteKnob::Density);
        if !(ratio_of(&dens, "adaptive") > ratio_of(&dens, "baseline")) {
            fails.push("density sensitivity ordering violated (adaptive should vary more)".into());
        }
        let goal = self.sensitivity(SuiteKnob::GoalDistance);
        if !(ratio_of(&goal, "baseline") > ratio_of(&goal, "adaptive")) {
            fails.push("goal-distance sensitivity ordering violated (baseline should vary more)".into());
        }
        fails
    }
}

/// Splits `d45_s080_g0900_adaptive_s3` into (env, mode, seed).
pub fn parse_mission_name(stem: &str) -> Result<(String, String, u64), SimError> {
    let parts: Vec<&str> = stem.split('_').collect();
    if parts.len() != 5 {
        return Err(SimError::Io(format!("mission file name {stem:?}: expected env_mode_sN")));
    }
    let env = format!("{}_{}_{}", parts[0], parts[1], parts[2]);
    let seed = parts[4]
        .strip_prefix('s')
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| SimError::Io(format!("mission file name {stem:?}: bad seed")))?;
    Ok((env, parts[3].to_string(), seed))
}

/// Recovers (density %, spread m, goal m) levels from an environment id.
pub fn parse_env_id(env: &str) -> Result<(u32, u32, u32), SimError> {
    let parts: Vec<&str> = env.split('_').collect();
    let field = |s: &str, prefix: char| -> Option<u32> { s.strip_prefix(prefix).and_then(|v| v.parse().ok()) };
    if parts.len() == 3 {
        if let (Some(d), Some(s), Some(g)) = (field(parts[0], 'd'), field(parts[1], 's'), field(parts[2], 'g')) {
            return Ok((d, s, g));
        }
    }
    Err(SimError::Io(format!("bad environment id {env:?}")))
}

/// Runs the full suite (27 environments x modes x seeds), writes one CSV
/// per mission plus `report.csv` and the SVG figures, and returns the
/// aggregated report. Deterministic for a fixed configuration and model.
pub fn run_suite(cfg: &SuiteConfig, model: &LatencyModel) -> Result<SuiteReport, SimError> {
    cfg.validate()?;
    let sim = SimConfig::with_scale(cfg.scale);
    let missions_dir = cfg.output_dir.join("missions");
    if missions_dir.exists() {
        fs::remove_dir_all(&missions_dir).map_err(|e| SimError::Io(format!("{}: {e}", missions_dir.display())))?;
    }
    fs::create_dir_all(&missions_dir).map_err(|e| SimError::Io(format!("{}: {e}", missions_dir.display())))?;

    let specs = suite_27(&sim, cfg.base_seed);
    let mut tasks = Vec::new();
    for spec in &specs {
        for mode in &cfg.modes {
            let mode = RuntimeMode { latency_source: cfg.latency_source, ..*mode };
            for s in 0..cfg.seeds_per_env {
                tasks.push((spec.clone(), mode, cfg.base_seed.wrapping_add(s as u64)));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| SimError::Config(format!("worker pool: {e}")))?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|(spec, mode, seed)| {
                let gt = generate_environment(spec);
                let log = run_mission(&gt, *mode, model, &sim, *seed);
                let path = missions_dir.join(format!("{}_{}_s{}.csv", env_id(spec), mode.label(), seed));
                log.write_csv(&path)
            })
            .collect::<Result<Vec<_>, _>>()
    })?;

    let report = SuiteReport::from_dir(&cfg.output_dir)?;
    let expected = specs.len() * cfg.modes.len() * cfg.seeds_per_env as usize;
    if report.rows.len() != expected {
        return Err(SimError::Io(format!("suite produced {} rows, expected {expected}", report.rows.len())));
    }
    write_outputs(&report, &cfg.output_dir)?;
    Ok(report)
}

/// Writes `report.csv` and regenerates every SVG figure from the report
/// (and the stored representative mission log). Idempotent and
/// byte-deterministic for a fixed report.
pub fn write_outputs(report: &SuiteReport, dir: &Path) -> Result<(), SimError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |e: std::io::Error| SimError::Io(format!("{}: {e}", p.display()))
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let rp = dir.join("report.csv");
    fs::write(&rp, report.to_csv()).map_err(io(&rp))?;
    let mp = dir.join("fig_metrics.svg");
    fs::write(&mp, svg_metrics(report)).map_err(io(&mp))?;
    let sp = dir.join("fig_sensitivity.svg");
    fs::write(&sp, svg_sensitivity(report)).map_err(io(&sp))?;
    if let Some((env, seed)) = report.representative() {
        let log_path = dir.join("missions").join(format!("{env}_adaptive_s{seed}.csv"));
        if log_path.exists() {
            let log = MissionLog::load(&log_path)?;
            let title = format!("{env} adaptive seed {seed}");
            let lp = dir.join("fig_latency_breakdown.svg");
            fs::write(&lp, svg_latency_breakdown(&log, &title)).map_err(io(&lp))?;
            let tp = dir.join("fig_trajectory.svg");
            fs::write(&tp, svg_trajectory(&log, &title)).map_err(io(&tp))?;
        }
    }
    Ok(())
}

fn mode_color(mode: &str) -> &'static str {
    match mode {
        "baseline" => "#b5503c",
        "adaptive" => "#3c64b5",
        "pinned" => "#5c9e54",
        _ => "#777777",
    }
}

const SPEED_RAMP: [&str; 8] = [
    "#2c3e90", "#2f64ad", "#3e8bbf", "#5fb0c4", "#8fcf9f", "#c8e07a", "#eec45a", "#e8743c",
];

fn svg_head(w: u32, h: u32) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"Helvetica, Arial, sans-serif\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n"
    )
}

fn rect(s: &mut String, x: f64, y: f64, w: f64, h: f64, fill: &str) {
    let _ = writeln!(s, "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>");
}

fn line(s: &mut String, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
    let _ = writeln!(
        s,
        "<line x1=\"{x1:.2}\" y1=\"{y1:.2}\" x2=\"{x2:.2}\" y2=\"{y2:.2}\" stroke=\"{stroke}\" stroke-width=\"{width:.2}\"/>"
    );
}

fn text(s: &mut String, x: f64, y: f64, size: u32, anchor: &str, msg: &str) {
    let _ = writeln!(
        s,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" text-anchor=\"{anchor}\" fill=\"#222222\">{msg}</text>"
    );
}

fn fmt_val(v: f64) -> String {
    if v.abs() >= 1000.0 {
        format!("{v:.0}")
    } else if v.abs() >= 10.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

/// Grouped bars of the six suite-mean metrics per mode.
pub fn svg_metrics(report: &SuiteReport) -> String {
    type Metric = (&'static str, &'static str, fn(&MissionRow) -> f64);
    let metrics: [Metric; 6] = [
        ("Mission time", "s", |r| r.mission_time_s),
        ("Average velocity", "m/s", |r| r.avg_velocity_mps),
        ("Energy", "J", |r| r.energy_j),
        ("Collision rate", "", |r| if r.collided { 1.0 } else { 0.0 }),
        ("Decision latency", "s", |r| r.mean_latency_s),
        ("Compute per decision", "s", |r| r.cpu_per_decision_s),
    ];
    let modes = report.mode_labels();
    let (pw, ph) = (306.0, 230.0);
    let mut s = svg_head(940, 510);
    text(&mut s, 470.0, 24.0, 16, "middle", "Suite means per mode");
    for (i, (title, unit, f)) in metrics.iter().enumerate() {
        let px = 10.0 + (i % 3) as f64 * pw;
        let py = 40.0 + (i / 3) as f64 * ph;
        let label = if unit.is_empty() { (*title).to_string() } else { format!("{title} ({unit})") };
        text(&mut s, px + pw / 2.0, py + 14.0, 12, "middle", &label);
        let base_y = py + 190.0;
        line(&mut s, px + 16.0, base_y, px + pw - 16.0, base_y, "#444444", 1.0);
        let vals: Vec<f64> = modes.iter().map(|m| report.mean(m, f)).collect();
        let vmax = vals.iter().fold(0.0f64, |a, &b| a.max(b)).max(1e-12);
        let bw = 56.0;
        let span = modes.len() as f64 * (bw + 26.0) - 26.0;
        for (j, mode) in modes.iter().enumerate() {
            let x = px + (pw - span) / 2.0 + j as f64 * (bw + 26.0);
            let h = 150.0 * vals[j] / vmax;
            rect(&mut s, x, base_y - h, bw, h, mode_color(mode));
            text(&mut s, x + bw / 2.0, base_y - h - 5.0, 10, "middle", &fmt_val(vals[j]));
            text(&mut s, x + bw / 2.0, base_y + 14.0, 10, "middle", mode);
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Mean mission time against each suite knob, one line per mode.
pub fn svg_sensitivity(report: &SuiteReport) -> String {
    let knobs = [SuiteKnob::Density, SuiteKnob::Spread, SuiteKnob::GoalDistance];
    let pw = 306.0;
    let mut s = svg_head(940, 350);
    text(&mut s, 470.0, 24.0, 16, "middle", "Mission time sensitivity to suite knobs");
    for (i, knob) in knobs.iter().enumerate() {
        let px = 10.0 + i as f64 * pw;
        let py = 40.0;
        text(&mut s, px + pw / 2.0, py + 12.0, 12, "middle", knob.label());
        let series = report.sensitivity(*knob);
        let ymax = series
            .iter()
            .flat_map(|sr| sr.levels.iter().map(|p| p.1))
            .fold(0.0f64, f64::max)
            .max(1e-12);
        let base_y = py + 210.0;
        let x_at = |k: usize, n: usize| px + 50.0 + k as f64 * ((pw - 90.0) / (n.max(2) - 1) as f64);
        line(&mut s, px + 40.0, base_y, px + pw - 30.0, base_y, "#444444", 1.0);
        line(&mut s, px + 40.0, base_y, px + 40.0, py + 24.0, "#444444", 1.0);
        text(&mut s, px + 36.0, py + 30.0, 9, "end", &fmt_val(ymax));
        text(&mut s, px + 36.0, base_y + 3.0, 9, "end", "0");
        for (row, sr) in series.iter().enumerate() {
            let n = sr.levels.len();
            let mut pts = String::new();
            for (k, (_, v)) in sr.levels.iter().enumerate() {
                let x = x_at(k, n);
                let y = base_y - 180.0 * v / ymax;
                let _ = write!(pts, "{x:.2},{y:.2} ");
                let _ = writeln!(
                    s,
                    "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"3\" fill=\"{}\"/>",
                    mode_color(&sr.mode)
                );
            }
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>",
                pts.trim_end(),
                mode_color(&sr.mode)
            );
            text(
                &mut s,
                px + 40.0,
                base_y + 36.0 + 13.0 * row as f64,
                10,
                "start",
                &format!("{} worst/best {:.2}", sr.mode, sr.worst_ratio),
            );
            if row == 0 {
                for (k, (lv, _)) in sr.levels.iter().enumerate() {
                    text(&mut s, x_at(k, n), base_y + 14.0, 9, "middle", &lv.to_string());
                }
            }
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Stacked per-decision stage latencies with the deadline overlaid, for
/// one mission.
pub fn svg_latency_breakdown(log: &MissionLog, title: &str) -> String {
    let n = log.records.len().max(1);
    let (x0, w, base_y, hmax) = (60.0, 860.0, 290.0, 230.0);
    let ymax = log
        .records
        .iter()
        .map(|r| (r.d0 + r.d1 + r.d2 + r.pc).max(r.deadline))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let stages: [(&str, fn(&crate::runtime::DecisionRecord) -> f64, &str); 4] = [
        ("mapping", |r| r.d0, "#3c64b5"),
        ("handoff", |r| r.d1, "#5c9e54"),
        ("planning", |r| r.d2, "#8064a2"),
        ("pointcloud", |r| r.pc, "#c0504d"),
    ];
    let mut s = svg_head(960, 340);
    text(&mut s, 480.0, 20.0, 14, "middle", &format!("Per-decision latency breakdown: {title}"));
    let bw = w / n as f64;
    for (i, r) in log.records.iter().enumerate() {
        let x = x0 + i as f64 * bw;
        let mut y = base_y;
        for (_, f, color) in &stages {
            let h = hmax * f(r) / ymax;
            if h > 0.0 {
                rect(&mut s, x, y - h, bw.max(0.4), h, color);
            }
            y -= h;
        }
    }
    let mut pts = String::new();
    for (i, r) in log.records.iter().enumerate() {
        let x = x0 + (i as f64 + 0.5) * bw;
        let y = base_y - hmax * r.deadline / ymax;
        let _ = write!(pts, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(
        s,
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#111111\" stroke-width=\"1.2\"/>",
        pts.trim_end()
    );
    line(&mut s, x0, base_y, x0 + w, base_y, "#444444", 1.0);
    line(&mut s, x0, base_y, x0, base_y - hmax, "#444444", 1.0);
    text(&mut s, x0 - 6.0, base_y - hmax + 4.0, 9, "end", &format!("{ymax:.2} s"));
    text(&mut s, x0 - 6.0, base_y + 3.0, 9, "end", "0");
    text(&mut s, x0 + w / 2.0, base_y + 24.0, 11, "middle", "decision");
    let mut lx = x0 + 10.0;
    for (name, _, color) in &stages {
        rect(&mut s, lx, 30.0, 10.0, 10.0, color);
        text(&mut s, lx + 14.0, 39.0, 10, "start", name);
        lx += 90.0;
    }
    line(&mut s, lx, 35.0, lx + 18.0, 35.0, "#111111", 1.2);
    text(&mut s, lx + 22.0, 39.0, 10, "start", "deadline");
    s.push_str("</svg>\n");
    s
}

/// The flown XY path colored by speed, with start and goal markers.
pub fn svg_trajectory(log: &MissionLog, title: &str) -> String {
    let mut s = svg_head(960, 380);
    text(&mut s, 480.0, 20.0, 14, "middle", &format!("Trajectory speed map: {title}"));
    if log.records.is_empty() {
        s.push_str("</svg>\n");
        return s;
    }
    let xs: Vec<f64> = log.records.iter().map(|r| r.x).collect();
    let ys: Vec<f64> = log.records.iter().map(|r| r.y).collect();
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (ymin, ymax) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let dx = (xmax - xmin).max(1e-6);
    let dy = (ymax - ymin).max(1e-6);
    let (aw, ah) = (840.0, 300.0);
    let scale = (aw / dx).min(ah / dy);
    let ox = 40.0 + (aw - scale * dx) / 2.0;
    let oy = 40.0 + (ah - scale * dy) / 2.0;
    let map = |x: f64, y: f64| (ox + scale * (x - xmin), oy + scale * (ymax - y));
    let vmax = log.records.iter().map(|r| r.speed).fold(0.0f64, f64::max).max(1e-9);
    for pair in log.records.windows(2) {
        let (x1, y1) = map(pair[0].x, pair[0].y);
        let (x2, y2) = map(pair[1].x, pair[1].y);
        let bucket = ((pair[1].speed / vmax) * 8.0).floor().clamp(0.0, 7.0) as usize;
        line(&mut s, x1, y1, x2, y2, SPEED_RAMP[bucket], 2.0);
    }
    let (sx, sy) = map(log.records[0].x, log.records[0].y);
    let last = log.records.last().unwrap();
    let (gx, gy) = map(last.x, last.y);
    let _ = writeln!(s, "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"5\" fill=\"none\" stroke=\"#111111\" stroke-width=\"1.5\"/>");
    let _ = writeln!(s, "<circle cx=\"{gx:.2}\" cy=\"{gy:.2}\" r=\"5\" fill=\"#111111\"/>");
    text(&mut s, sx + 8.0, sy - 6.0, 10, "start", "start");
    text(&mut s, gx + 8.0, gy - 6.0, 10, "start", "end");
    for (i, color) in SPEED_RAMP.iter().enumerate() {
        rect(&mut s, 890.0, 60.0 + 18.0 * (7 - i) as f64, 14.0, 18.0, color);
    }
    text(&mut s, 886.0, 210.0, 9, "end", "0");
    text(&mut s, 886.0, 68.0, 9, "end", &format!("{vmax:.2} m/s"));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(env: &str, mode: &str, seed: u64, t: f64, cpu: f64) -> MissionRow {
        let (density_pct, spread_full_m, goal_full_m) = parse_env_id(env).unwrap();
        MissionRow {
            env: env.to_string(),
            density_pct,
            spread_full_m,
            goal_full_m,
            mode: mode.to_string(),
            seed,
            reached: true,
            collided: false,
            timed_out: false,
            mission_time_s: q6(t),
            avg_velocity_mps: q6(60.0 / t.max(1e-9)),
            energy_j: q6(478.0 * t),
            decisions: 100,
            replans: 5,
            deadline_violations: 0,
            mean_latency_s: 0.3,
            cpu_per_decision_s: cpu,
        }
    }

    #[test]
    fn env_id_parses_back_to_suite_levels() {
        let cfg = SimConfig::default();
        for spec in suite_27(&cfg, 7) {
            let id = env_id(&spec);
            let (d, s, g) = parse_env_id(&id).unwrap();
            assert_eq!(d as f64 / 100.0, spec.obstacle_density);
            assert_eq!(s as f64, (spec.spread / spec.scale).round());
            assert_eq!(g as f64, (spec.goal_distance / spec.scale).round());
        }
    }

    #[test]
    fn mission_name_roundtrip() {
        let (env, mode, seed) = parse_mission_name("d45_s080_g0900_adaptive_s3").unwrap();
        assert_eq!(env, "d45_s080_g0900");
        assert_eq!(mode, "adaptive");
        assert_eq!(seed, 3);
        assert!(parse_mission_name("weird_name").is_err());
    }

    #[test]
    fn single_level_sensitivity_ratio_is_one() {
        let report = SuiteReport {
            rows: vec![row("d45_s080_g0900", "adaptive", 0, 100.0, 0.5), row("d45_s080_g0900", "adaptive", 1, 140.0, 0.5)],
        };
        for series in report.sensitivity(SuiteKnob::Density) {
            assert_eq!(series.worst_ratio, 1.0);
            assert_eq!(series.levels.len(), 1);
        }
    }

    #[test]
    fn identical_compute_gives_zero_reduction() {
        let report = SuiteReport {
            rows: vec![row("d45_s080_g0900", "baseline", 0, 400.0, 1.25), row("d45_s080_g0900", "pinned", 0, 150.0, 1.25)],
        };
        assert_eq!(report.cpu_reduction_percent("pinned", "baseline"), 0.0);
    }

    #[test]
    fn report_csv_roundtrips_bit_identical() {
        let report = SuiteReport {
            rows: vec![
                row("d30_s040_g0600", "adaptive", 1, 101.5, 0.52),
                row("d30_s040_g0600", "baseline", 1, 410.25, 1.25),
                row("d60_s120_g1200", "adaptive", 2, 220.125, 0.61),
                row("d60_s120_g1200", "baseline", 2, 835.5, 1.25),
            ],
        };
        let text = report.to_csv();
        let back = SuiteReport::from_csv(&text).unwrap();
        assert_eq!(back.to_csv(), text);
        assert_eq!(back.rows, report.rows);
    }

    #[test]
    fn check_flags_slow_adaptive() {
        let report = SuiteReport {
            rows: vec![row("d45_s080_g0900", "baseline", 0, 100.0, 1.25), row("d45_s080_g0900", "adaptive", 0, 90.0, 0.5)],
        };
        let fails = report.check();
        assert!(fails.iter().any(|f| f.contains("mission time ratio")), "{fails:?}");
    }

    #[test]
    fn sensitivity_orderings_detected() {
        // Adaptive varies strongly with density, baseline barely.
        let rows = vec![
            row("d30_s080_g0900", "adaptive", 0, 100.0, 0.5),
            row("d60_s080_g0900", "adaptive", 0, 180.0, 0.5),
            row("d30_s080_g0900", "baseline", 0, 400.0, 1.25),
            row("d60_s080_g0900", "baseline", 0, 410.0, 1.25),
        ];
        let report = SuiteReport { rows };
        let series = report.sensitivity(SuiteKnob::Density);
        let get = |m: &str| series.iter().find(|s| s.mode == m).unwrap().worst_ratio;
        assert!(get("adaptive") > get("baseline"));
    }

    #[test]
    fn representative_is_median_time_run() {
        let rows = vec![
            row("d45_s080_g0900", "adaptive", 0, 140.0, 0.5),
            row("d45_s080_g0900", "adaptive", 1, 100.0, 0.5),
            row("d45_s080_g0900", "adaptive", 2, 120.0, 0.5),
            row("d45_s080_g0900", "baseline", 0, 400.0, 1.25),
        ];
        let report = SuiteReport { rows };
        assert_eq!(report.representative(), Some(("d45_s080_g0900".to_string(), 2)));
    }

    #[test]
    fn svgs_are_deterministic() {
        let report = SuiteReport {
            rows: vec![row("d45_s080_g0900", "baseline", 0, 400.0, 1.25), row("d45_s080_g0900", "adaptive", 0, 120.0, 0.5)],
        };
        let a = svg_metrics(&report);
        let b = svg_metrics(&report);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg "));
        assert!(a.ends_with("</svg>\n"));
        let c = svg_sensitivity(&report);
        assert!(c.starts_with("<svg ") && c.ends_with("</svg>\n"));
    }
}
