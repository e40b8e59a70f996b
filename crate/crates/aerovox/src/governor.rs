//! The governor: per-decision deadline computation, stage latency models
//! with offline calibration, and the constrained knob solver that picks
//! per-stage precision and volume under the current deadline.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::SimConfig;
use crate::error::SimError;
use crate::geom::{Aabb, Vec3};
use crate::mapping::{integrate, MapBudget, OccupancyTree, PointCloud};
use crate::planning::{handoff, plan, PlanParams, PlannerView, Trajectory};
use crate::profilers::ProfileSnapshot;
use crate::vehicle::stopping_distance;

/// One decision's knob assignment: per-stage precision (m) and volume (m^3)
/// plus the deadline the assignment was solved against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnobPolicy {
    pub p0: f64,
    pub p1: f64,
    pub p2: f64,
    pub v0: f64,
    pub v1: f64,
    pub v2: f64,
    pub deadline: f64,
}

impl KnobPolicy {
    /// The static worst-case assignment used by the baseline mode.
    pub fn static_policy(cfg: &SimConfig, model: &LatencyModel) -> Self {
        let p = cfg.static_precision_full * cfg.scale;
        let vs = cfg.volume_scale();
        let mut policy = KnobPolicy {
            p0: p,
            p1: p,
            p2: p,
            v0: cfg.static_v0_full * vs,
            v1: cfg.static_v1_full * vs,
            v2: cfg.static_v2_full * vs,
            deadline: 0.0,
        };
        // The baseline's budget is its own fixed accounted latency.
        policy.deadline = policy.stage_latency_sum(model) + cfg.pointcloud_overhead();
        policy
    }

    pub fn stage_latency_sum(&self, model: &LatencyModel) -> f64 {
        stage_latency(model, 0, self.p0, self.v0)
            + stage_latency(model, 1, self.p1, self.v1)
            + stage_latency(model, 2, self.p2, self.v2)
    }

    pub fn total_volume(&self) -> f64 {
        self.v0 + self.v1 + self.v2
    }
}

/// Running state of the budgeting walk along a trajectory.
#[derive(Debug, Clone, Copy)]
pub struct BudgetState {
    /// Accumulated admitted budget (the return value).
    pub b_g: f64,
    /// Remaining budget at the walk's current waypoint.
    pub b_r: f64,
    /// Local budget at the most recent waypoint.
    pub b_l: f64,
}

/// Maximum time the drone may spend on one decision while guaranteeing it
/// can still stop inside the free distance `d` at speed `v`:
/// (d - d_stop(v)) / v, clamped below at zero. A stationary or crawling
/// drone is evaluated at the hover floor speed.
pub fn local_budget(d: f64, v: f64, cfg: &SimConfig) -> f64 {
    let v_eff = v.max(cfg.v_floor());
    ((d - stopping_distance(v_eff, cfg)) / v_eff).max(0.0)
}

/// Walks the remaining trajectory, admitting flight time while the running
/// budget stays positive: starting from the local budget at the current
/// state, each segment's flight time is subtracted, the running budget is
/// clamped to the waypoint's own local budget, and the walk stops once the
/// running budget is exhausted. Returns the admitted flight-time total.
pub fn time_budget(traj: &Trajectory, snapshot: &ProfileSnapshot, arc: f64, cfg: &SimConfig) -> f64 {
    if traj.waypoints.is_empty() {
        return 0.0;
    }
    let arcs = traj.arcs();
    let mut st = BudgetState {
        b_g: 0.0,
        b_r: local_budget(snapshot.d_unknown, snapshot.speed, cfg),
        b_l: local_budget(snapshot.d_unknown, snapshot.speed, cfg),
    };
    let mut prev_pos = traj.point_at(arc);
    let mut prev_v = snapshot.speed;
    for (i, w) in traj.waypoints.iter().enumerate() {
        if arcs[i] <= arc + 1e-9 {
            continue;
        }
        let seg = prev_pos.distance(w.position);
        let v_seg = (0.5 * (prev_v + w.velocity)).max(cfg.v_floor());
        let flight_time = seg / v_seg;
        st.b_r -= flight_time;
        if st.b_r <= 0.0 {
            break;
        }
        st.b_l = local_budget(w.visibility, w.velocity, cfg);
        st.b_r = st.b_r.min(st.b_l);
        st.b_g += flight_time;
        prev_pos = w.position;
        prev_v = w.velocity;
    }
    st.b_g
}

/// Per-stage latency model: latency_i(p, v) = (q0/p^3 + q1/p^2 + q2/p) * q3 * v.
/// Working in inverse precision keeps the fit well conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    pub q: [[f64; 4]; 3],
    pub fit_mse: f64,
}

impl LatencyModel {
    /// Frozen reference coefficients used by deterministic benchmarks; a
    /// real calibration on the host replaces them for Measured runs.
    pub fn reference() -> Self {
        LatencyModel {
            q: [
                [1.2e-6, 2.0e-7, 5.0e-8, 1.0],
                [1.5e-7, 3.0e-8, 1.0e-8, 1.0],
                [2.0e-7, 4.0e-8, 1.5e-8, 1.0],
            ],
            fit_mse: 0.0,
        }
    }

    /// Plain-text serialization: three coefficient lines, one mse line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in &self.q {
            let _ = writeln!(s, "{:.12e} {:.12e} {:.12e} {:.12e}", row[0], row[1], row[2], row[3]);
        }
        let _ = writeln!(s, "mse {:.12e}", self.fit_mse);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, SimError> {
        let mut q = [[0.0; 4]; 3];
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        for row in &mut q {
            let line = lines.next().ok_or_else(|| SimError::Model("missing coefficient line".into()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| SimError::Model(format!("bad coefficient {t:?}: {e}"))))
                .collect::<Result<_, _>>()?;
            if vals.len() != 4 {
                return Err(SimError::Model(format!("expected 4 coefficients per line, got {}", vals.len())));
            }
            row.copy_from_slice(&vals);
        }
        let mse_line = lines.next().ok_or_else(|| SimError::Model("missing mse line".into()))?;
        let mut parts = mse_line.split_whitespace();
        if parts.next() != Some("mse") {
            return Err(SimError::Model("expected trailing 'mse <value>' line".into()));
        }
        let fit_mse = parts
            .next()
            .ok_or_else(|| SimError::Model("missing mse value".into()))?
            .parse::<f64>()
            .map_err(|e| SimError::Model(format!("bad mse value: {e}")))?;
        Ok(LatencyModel { q, fit_mse })
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.to_text()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Io(format!("{}: {e} (run `calibrate` to create a model file)", path.display())))?;
        Self::from_text(&text)
    }
}

/// Modeled latency of one unit of volume at precision p for stage i.
pub fn volume_rate(model: &LatencyModel, stage: usize, p: f64) -> f64 {
    let q = model.q[stage];
    let ip = 1.0 / p;
    (q[0] * ip * ip * ip + q[1] * ip * ip + q[2] * ip) * q[3]
}

/// Modeled latency of stage i at precision p over volume v.
pub fn stage_latency(model: &LatencyModel, stage: usize, p: f64, v: f64) -> f64 {
    volume_rate(model, stage, p) * v
}

/// One measured calibration cell repetition.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationSample {
    pub stage: usize,
    pub p: f64,
    pub v: f64,
    pub rep: usize,
    pub latency_s: f64,
}

pub fn calibration_csv(samples: &[CalibrationSample]) -> String {
    let mut s = String::from("stage,p,v,rep,latency_s\n");
    for c in samples {
        let _ = writeln!(s, "{},{:.6},{:.6},{},{:.9}", c.stage, c.p, c.v, c.rep, c.latency_s);
    }
    s
}

/// Least-squares over the three inverse-precision basis columns with
/// non-negativity, solved exactly by enumerating active sets.
fn nnls_fit(rows: &[([f64; 3], f64)]) -> [f64; 3] {
    let mut best = [0.0; 3];
    let mut best_sse = rows.iter().map(|(_, y)| y * y).sum::<f64>();
    for mask in 1usize..8 {
        let cols: Vec<usize> = (0..3).filter(|i| mask & (1 << i) != 0).collect();
        let k = cols.len();
        let mut ata = [[0.0f64; 3]; 3];
        let mut aty = [0.0f64; 3];
        for (x, y) in rows {
            for (a, &ca) in cols.iter().enumerate() {
                aty[a] += x[ca] * y;
                for (b, &cb) in cols.iter().enumerate() {
                    ata[a][b] += x[ca] * x[cb];
                }
            }
        }
        let Some(sol) = solve_spd(&mut ata, &mut aty, k) else {
            continue;
        };
        if sol.iter().take(k).any(|&c| c < 0.0) {
            continue;
        }
        let mut coeffs = [0.0; 3];
        for (a, &ca) in cols.iter().enumerate() {
            coeffs[ca] = sol[a];
        }
        let sse: f64 = rows
            .iter()
            .map(|(x, y)| {
                let pred = coeffs[0] * x[0] + coeffs[1] * x[1] + coeffs[2] * x[2];
                (pred - y) * (pred - y)
            })
            .sum();
        if sse < best_sse {
            best_sse = sse;
            best = coeffs;
        }
    }
    best
}

/// Gaussian elimination with partial pivoting on a k-by-k system.
fn solve_spd(a: &mut [[f64; 3]; 3], b: &mut [f64; 3], k: usize) -> Option<[f64; 3]> {
    for col in 0..k {
        let pivot = (col..k).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for c in col..k {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..k).rev() {
        let mut s = b[col];
        for c in col + 1..k {
            s -= a[col][c] * x[c];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

/// Fits the latency model from measured stage executors over a knob grid.
/// `executors[i](p, v)` runs stage i once and returns its latency in
/// seconds; each cell is repeated and the median kept. Fails when the
/// relative fit error reaches 0.08, listing the worst cells.
pub fn calibrate(
    executors: &mut [Box<dyn FnMut(f64, f64) -> f64 + '_>; 3],
    precisions: &[f64],
    volumes: &[Vec<f64>; 3],
    reps: usize,
) -> Result<(LatencyModel, Vec<CalibrationSample>), SimError> {
    if reps < 5 {
        return Err(SimError::Calibration(format!("need at least 5 repetitions per cell, got {reps}")));
    }
    if precisions.len() < 2 {
        return Err(SimError::Calibration("need at least 2 precision levels".into()));
    }
    for (i, v) in volumes.iter().enumerate() {
        if v.len() < 4 {
            return Err(SimError::Calibration(format!("stage {i}: need at least 4 volume levels, got {}", v.len())));
        }
    }
    let mut samples = Vec::new();
    let mut q = [[0.0; 4]; 3];
    let mut sse_total = 0.0;
    let mut ref_total = 0.0;
    let mut cells: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
    for stage in 0..3 {
        let mut rows: Vec<(f64, f64, [f64; 3], f64)> = Vec::new();
        for &p in precisions {
            for &v in &volumes[stage] {
                let mut measured = Vec::with_capacity(reps);
                for rep in 0..reps {
                    let latency_s = executors[stage](p, v);
                    samples.push(CalibrationSample { stage, p, v, rep, latency_s });
                    measured.push(latency_s);
                }
                measured.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = measured[measured.len() / 2];
                let ip = 1.0 / p;
                rows.push((p, v, [ip * ip * ip * v, ip * ip * v, ip * v], median));
            }
        }
        let fit_rows: Vec<([f64; 3], f64)> = rows.iter().map(|&(_, _, x, y)| (x, y)).collect();
        let c = nnls_fit(&fit_rows);
        q[stage] = [c[0], c[1], c[2], 1.0];
        for &(p, v, x, y) in &rows {
            let pred = c[0] * x[0] + c[1] * x[1] + c[2] * x[2];
            sse_total += (pred - y) * (pred - y);
            ref_total += y * y;
            cells.push((stage, p, v, pred, y));
        }
    }
    let fit_mse = if ref_total > 0.0 { sse_total / ref_total } else { 0.0 };
    if fit_mse >= 0.08 {
        cells.sort_by(|a, b| {
            let ea = (a.3 - a.4).abs();
            let eb = (b.3 - b.4).abs();
            eb.partial_cmp(&ea).unwrap()
        });
        let mut diag = String::new();
        for (stage, p, v, pred, y) in cells.iter().take(5) {
            let _ = write!(diag, " [stage {stage} p={p:.3} v={v:.1}: predicted {pred:.6}, measured {y:.6}]");
        }
        return Err(SimError::Calibration(format!(
            "relative fit error {fit_mse:.4} >= 0.08; worst cells:{diag}"
        )));
    }
    Ok((LatencyModel { q, fit_mse }, samples))
}

/// The precision grid and per-stage volume levels used by default
/// calibration runs. Tops are sized so every cell is budget-bound: the
/// planner explores one altitude layer, so its touched volume saturates
/// near arena_area * precision, and levels above that ceiling at the
/// finest rung would measure the iteration cap instead of the volume law.
pub fn default_calibration_grid(cfg: &SimConfig) -> (Vec<f64>, [Vec<f64>; 3]) {
    let vs = cfg.volume_scale();
    let levels = |top: f64| -> Vec<f64> { (1..=4).map(|k| top * vs * k as f64 / 4.0).collect() };
    (cfg.precision_ladder(), [levels(800.0), levels(800.0), levels(1200.0)])
}

/// Measured executors for the three real pipeline stages. Workloads are
/// prebuilt so the timed section covers only the stage body.
pub fn real_stage_executors(cfg: &SimConfig) -> [Box<dyn FnMut(f64, f64) -> f64>; 3] {
    let scale = cfg.scale;
    let range = cfg.sensor_range();
    let side = 45.0 * scale;
    let bounds = Aabb::new(
        Vec3::new(-side, -side, -side),
        Vec3::new(side, side, side),
    );
    let vox = cfg.vox_min();

    // Stage 0 workload: a dense synthetic scan with enough rays to supply
    // any grid volume at the finest precision.
    let mut cloud = PointCloud::empty(Vec3::ZERO, 0.0, range);
    let rays = 1200usize;
    for i in 0..rays {
        let az = i as f64 / rays as f64 * std::f64::consts::TAU;
        let elev = ((i % 5) as f64 - 2.0) * 0.12;
        let dir = Vec3::new(az.cos() * elev.cos(), az.sin() * elev.cos(), elev.sin());
        cloud.points.push(dir * (range * 0.98));
        cloud.rays_total += 1;
    }
    let b0 = bounds;
    let stage0 = Box::new(move |p: f64, v: f64| -> f64 {
        let mut tree = OccupancyTree::new(b0, vox);
        let t = Instant::now();
        integrate(&mut tree, &cloud, MapBudget { precision: p, volume: v }, &[Vec3::ZERO], 0);
        t.elapsed().as_secs_f64()
    });

    // Stage 1 workload: a fully built source map whose known volume exceeds
    // the top calibration level.
    let mut source = OccupancyTree::new(bounds, vox);
    let mut filled = 0.0;
    let top1 = default_calibration_grid(cfg).1[1].last().copied().unwrap_or(1.0);
    let coarse = vox * 4.0;
    let mut x = -side + coarse / 2.0;
    'fill: while x < side {
        let mut y = -side + coarse / 2.0;
        while y < side {
            let mut z = -side + coarse / 2.0;
            while z < side {
                filled += source.mark_free(Vec3::new(x, y, z), coarse, 0);
                if filled > 1.3 * top1 {
                    break 'fill;
                }
                z += coarse;
            }
            y += coarse;
        }
        x += coarse;
    }
    let stage1 = Box::new(move |p: f64, v: f64| -> f64 {
        let t = Instant::now();
        let _ = source.pruned_copy(p, v, Vec3::ZERO);
        t.elapsed().as_secs_f64()
    });

    // Stage 2 workload: per-precision all-free views large enough that the
    // exploration monitor, not geometry, halts the planner. The fill walks
    // the tree's own aligned cell grid so every mark lands on a whole cell.
    let mut step = vox;
    while step * 4.0 <= side {
        step *= 2.0;
    }
    let views: Vec<(f64, PlannerView)> = cfg
        .precision_ladder()
        .iter()
        .map(|&p| {
            let mut tree = OccupancyTree::new(bounds, vox);
            let mut x = -side + step / 2.0;
            while x < side {
                let mut y = -side + step / 2.0;
                while y < side {
                    let mut z = -side + step / 2.0;
                    while z < side {
                        tree.mark_free(Vec3::new(x, y, z), step, 0);
                        z += step;
                    }
                    y += step;
                }
                x += step;
            }
            (p, handoff(&tree, p, f64::INFINITY, Vec3::ZERO))
        })
        .collect();
    let body = cfg.body_radius();
    let goal_dist = side * 0.9;
    let stage2 = Box::new(move |p: f64, v: f64| -> f64 {
        let view = &views
            .iter()
            .min_by(|a, b| (a.0 - p).abs().partial_cmp(&(b.0 - p).abs()).unwrap())
            .unwrap()
            .1;
        let params = PlanParams {
            precision: p,
            volume_cap: v,
            body_radius: body,
            goal_bias: 0.05,
            steer_factor: 4.0,
            gamma_factor: 6.0,
            max_iters: 4_000_000,
        };
        let t = Instant::now();
        let _ = plan(view, Vec3::new(-goal_dist, 0.0, 0.0), Vec3::new(goal_dist, 0.0, 0.0), &params, 7);
        t.elapsed().as_secs_f64()
    });

    [stage0, stage1, stage2]
}

/// Result of one solver invocation.
#[derive(Debug, Clone, Copy)]
pub struct SolveOutcome {
    pub policy: KnobPolicy,
    /// True when the policy satisfies every constraint including the hard
    /// deadline feasibility filter.
    pub feasible: bool,
    /// True when the solver fell back to the safe defaults.
    pub degraded: bool,
    /// Squared residual (deadline - predicted stage latency sum)^2.
    pub objective: f64,
}

fn snap_down(ladder: &[f64], value: f64) -> Option<f64> {
    let eps = ladder[0] * 1e-9;
    ladder.iter().rev().find(|&&p| p <= value + eps).copied()
}

fn snap_up(ladder: &[f64], value: f64) -> f64 {
    let eps = ladder[0] * 1e-9;
    ladder
        .iter()
        .find(|&&p| p >= value - eps)
        .copied()
        .unwrap_or_else(|| *ladder.last().unwrap())
}

/// Exact solution of the volume sub-problem for fixed precisions: push the
/// predicted latency as close to `target` as the caps allow, never past
/// it; among latency-equal assignments prefer the largest total volume.
/// Rates must be non-negative. Returns (volumes, predicted latency).
fn fill_volumes(rates: [f64; 3], hi: [f64; 3], target: f64) -> ([f64; 3], f64) {
    let dot = |v: &[f64; 3]| rates[0] * v[0] + rates[1] * v[1] + rates[2] * v[2];
    let full = dot(&hi);
    if full <= target {
        return (hi, full);
    }
    let eps_t = 1e-12 * (1.0 + target.abs());
    let mut best: Option<([f64; 3], f64)> = None;
    let mut consider = |cand: [f64; 3]| {
        if cand.iter().zip(&hi).any(|(&c, &h)| c < -1e-9 || c > h * (1.0 + 1e-9) + 1e-15) {
            return;
        }
        if cand[0] > cand[1] + 1e-9 * (1.0 + cand[1]) {
            return;
        }
        let v = [
            cand[0].clamp(0.0, hi[0]),
            cand[1].clamp(0.0, hi[1]),
            cand[2].clamp(0.0, hi[2]),
        ];
        if dot(&v) > target + eps_t {
            return;
        }
        let sum = v[0] + v[1] + v[2];
        let better = match &best {
            None => true,
            Some((bv, bsum)) => {
                sum > *bsum + 1e-12
                    || (sum >= *bsum - 1e-12
                        && (v[0], v[1], v[2]) > (bv[0], bv[1], bv[2]))
            }
        };
        if better {
            best = Some((v, sum));
        }
    };

    // One stage floats, the others sit on box corners.
    for free in 0..3 {
        let others: [usize; 2] = match free {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        for corners in 0..4u8 {
            let mut v = [0.0; 3];
            v[others[0]] = if corners & 1 != 0 { hi[others[0]] } else { 0.0 };
            v[others[1]] = if corners & 2 != 0 { hi[others[1]] } else { 0.0 };
            let rem = target - (rates[others[0]] * v[others[0]] + rates[others[1]] * v[others[1]]);
            if rates[free] <= 0.0 {
                if rem.abs() <= eps_t {
                    v[free] = hi[free];
                    consider(v);
                }
                continue;
            }
            v[free] = rem / rates[free];
            consider(v);
        }
    }
    // The map/handoff pair moves together (chain active), planner volume on
    // a corner or floating against the pair at its joint cap.
    let pair_rate = rates[0] + rates[1];
    for &v2 in &[0.0, hi[2]] {
        let rem = target - rates[2] * v2;
        if pair_rate > 0.0 {
            let w = rem / pair_rate;
            consider([w, w, v2]);
        } else if rem.abs() <= eps_t {
            consider([hi[0], hi[0], v2]);
        }
    }
    let w = hi[0].min(hi[1]);
    if rates[2] > 0.0 {
        let v2 = (target - pair_rate * w) / rates[2];
        consider([w, w, v2]);
    }
    // Zero volumes are always admissible under the hard filter.
    consider([0.0, 0.0, 0.0]);

    let (v, _) = best.expect("zero assignment is always feasible");
    let lat = dot(&v);
    (v, lat)
}

/// Per-decision volume upper bounds. The current scan bounds ingestion
/// (mapping cannot learn more new volume than the sensor covered) and the
/// accumulated known map bounds the handoff (the view cannot hold more
/// than the map knows); the planner volume is capped only by its knob
/// range, since it is an effort budget rather than a copy of space.
pub fn volume_bounds(snapshot: &ProfileSnapshot, cfg: &SimConfig) -> [f64; 3] {
    let vs = cfg.volume_scale();
    let v1_hi = snapshot.v_map.min(cfg.v1_cap_full * vs).max(0.0);
    let v0_hi = snapshot.v_sensor.min(cfg.v0_cap_full * vs).min(v1_hi).max(0.0);
    let v2_hi = cfg.v2_cap_full * vs;
    [v0_hi, v1_hi, v2_hi]
}

/// Solves the knob assignment for one decision: enumerates ladder pairs
/// (p0, p1 = p2) under the gap and clearance bounds (quantized toward the
/// safe side), solves each pair's volume sub-problem exactly, applies the
/// hard feasibility filter (predicted latency never exceeds the deadline),
/// and breaks ties toward finer mapping, finer planning, larger volume.
/// Infeasible inputs produce a degraded safe policy with zero volumes.
pub fn solve(snapshot: &ProfileSnapshot, deadline: f64, model: &LatencyModel, cfg: &SimConfig) -> SolveOutcome {
    let ladder = cfg.precision_ladder();
    let [v0_hi, v1_hi, v2_hi] = volume_bounds(snapshot, cfg);

    let upper_raw = snapshot.g_avg.min(snapshot.d_obs);
    let p_upper = snap_down(&ladder, upper_raw);
    let degraded_policy = |reason_deadline: f64| -> SolveOutcome {
        let p = snap_up(&ladder, snapshot.g_min);
        SolveOutcome {
            policy: KnobPolicy { p0: p, p1: p, p2: p, v0: 0.0, v1: 0.0, v2: 0.0, deadline: reason_deadline },
            feasible: false,
            degraded: true,
            objective: f64::INFINITY,
        }
    };
    let Some(p_upper) = p_upper else {
        return degraded_policy(deadline);
    };
    if deadline < 0.0 {
        return degraded_policy(deadline);
    }
    let p_lower = snap_down(&ladder, snapshot.g_min).unwrap_or(ladder[0]).min(p_upper);

    let eps_p = ladder[0] * 1e-9;
    let mut best: Option<(f64, f64, f64, [f64; 3], f64)> = None; // (objective, p0, p1, volumes, latency)
    for &p0 in ladder.iter().filter(|&&p| p >= p_lower - eps_p && p <= p_upper + eps_p) {
        for &p1 in ladder.iter().filter(|&&p| p >= p0 - eps_p) {
            let rates = [
                volume_rate(model, 0, p0),
                volume_rate(model, 1, p1),
                volume_rate(model, 2, p1),
            ];
            let (v, lat) = fill_volumes(rates, [v0_hi, v1_hi, v2_hi], deadline);
            let obj = (deadline - lat) * (deadline - lat);
            let better = match &best {
                None => true,
                Some((bobj, bp0, bp1, bv, _)) => {
                    let sum = v[0] + v[1] + v[2];
                    let bsum = bv[0] + bv[1] + bv[2];
                    obj < bobj - 1e-15 * (1.0 + bobj)
                        || (obj <= bobj + 1e-15 * (1.0 + bobj)
                            && (p0 < bp0 - eps_p
                                || (p0 <= bp0 + eps_p
                                    && (p1 < bp1 - eps_p || (p1 <= bp1 + eps_p && sum > bsum + 1e-12)))))
                }
            };
            if better {
                best = Some((obj, p0, p1, v, lat));
            }
        }
    }
    let Some((objective, p0, p1, v, _)) = best else {
        return degraded_policy(deadline);
    };
    SolveOutcome {
        policy: KnobPolicy { p0, p1: p1, p2: p1, v0: v[0], v1: v[1], v2: v[2], deadline },
        feasible: true,
        degraded: false,
        objective,
    }
}

/// Brute-force reference for the solver: a dense grid over precision pairs
/// and evenly spaced volume levels, returning the best objective found, or
/// None when no grid point passes the feasibility filter.
pub fn grid_objective(
    snapshot: &ProfileSnapshot,
    deadline: f64,
    model: &LatencyModel,
    cfg: &SimConfig,
    volume_levels: usize,
) -> Option<f64> {
    if deadline < 0.0 {
        return None;
    }
    let ladder = cfg.precision_ladder();
    let [v0_hi, v1_hi, v2_hi] = volume_bounds(snapshot, cfg);
    let upper_raw = snapshot.g_avg.min(snapshot.d_obs);
    let p_upper = snap_down(&ladder, upper_raw)?;
    let p_lower = snap_down(&ladder, snapshot.g_min).unwrap_or(ladder[0]).min(p_upper);
    let eps_p = ladder[0] * 1e-9;
    let levels = |hi: f64| -> Vec<f64> {
        (0..volume_levels)
            .map(|k| hi * k as f64 / (volume_levels - 1) as f64)
            .collect()
    };
    let mut best: Option<f64> = None;
    for &p0 in ladder.iter().filter(|&&p| p >= p_lower - eps_p && p <= p_upper + eps_p) {
        for &p1 in ladder.iter().filter(|&&p| p >= p0 - eps_p) {
            let rates = [
                volume_rate(model, 0, p0),
                volume_rate(model, 1, p1),
                volume_rate(model, 2, p1),
            ];
            for &v1 in &levels(v1_hi) {
                for &v0 in &levels(v0_hi.min(v1)) {
                    for &v2 in &levels(v2_hi) {
                        let lat = rates[0] * v0 + rates[1] * v1 + rates[2] * v2;
                        if lat > deadline + 1e-12 * (1.0 + deadline) {
                            continue;
                        }
                        let obj = (deadline - lat) * (deadline - lat);
                        if best.map_or(true, |b| obj < b) {
                            best = Some(obj);
                        }
                    }
                }
            }
        }
    }
    best
}

/// Independent constraint checker used by tests: re-derives every bound
/// from the snapshot and verifies the policy against it.
pub fn check_policy(
    policy: &KnobPolicy,
    snapshot: &ProfileSnapshot,
    model: &LatencyModel,
    cfg: &SimConfig,
) -> Result<(), String> {
    let ladder = cfg.precision_ladder();
    let eps_p = ladder[0] * 1e-9;
    let on_ladder = |p: f64| ladder.iter().any(|&l| (l - p).abs() <= eps_p);
    if !on_ladder(policy.p0) || !on_ladder(policy.p1) || !on_ladder(policy.p2) {
        return Err(format!("precision off ladder: {:?}", (policy.p0, policy.p1, policy.p2)));
    }
    if (policy.p1 - policy.p2).abs() > eps_p {
        return Err("p1 != p2".into());
    }
    let lower = snap_down(&ladder, snapshot.g_min).unwrap_or(ladder[0]);
    let upper = snap_down(&ladder, snapshot.g_avg.min(snapshot.d_obs)).ok_or("no admissible precision")?;
    if policy.p0 < lower.min(upper) - eps_p {
        return Err(format!("p0 {} below gap bound {}", policy.p0, lower));
    }
    if policy.p0 > upper + eps_p {
        return Err(format!("p0 {} above clearance bound {}", policy.p0, upper));
    }
    if policy.p0 > policy.p1 + eps_p {
        return Err("p0 coarser than p1".into());
    }
    let tol = 1e-9;
    let [v0_hi, v1_hi, v2_hi] = volume_bounds(snapshot, cfg);
    if policy.v0 < -tol || policy.v1 < -tol || policy.v2 < -tol {
        return Err("negative volume".into());
    }
    if policy.v0 > policy.v1 + tol * (1.0 + policy.v1) {
        return Err(format!("v0 {} exceeds v1 {}", policy.v0, policy.v1));
    }
    if policy.v0 > v0_hi * (1.0 + tol) + tol {
        return Err(format!("v0 {} exceeds bound {}", policy.v0, v0_hi));
    }
    if policy.v1 > v1_hi * (1.0 + tol) + tol {
        return Err(format!("v1 {} exceeds bound {}", policy.v1, v1_hi));
    }
    if policy.v2 > v2_hi * (1.0 + tol) + tol {
        return Err(format!("v2 {} exceeds bound {}", policy.v2, v2_hi));
    }
    let lat = policy.stage_latency_sum(model);
    if lat > policy.deadline + 1e-9 * (1.0 + policy.deadline.abs()) {
        return Err(format!("predicted latency {lat} exceeds deadline {}", policy.deadline));
    }
    Ok(())
}

/// Randomized but plausible profile snapshot, for solver stress tests.
pub fn sample_snapshot(rng: &mut ChaCha8Rng, cfg: &SimConfig) -> ProfileSnapshot {
    let s = cfg.scale;
    let vs = cfg.volume_scale();
    let sentinel = cfg.precision_max();
    let g_min = if rng.gen::<f64>() < 0.2 {
        sentinel
    } else {
        rng.gen_range(0.05 * s..=sentinel)
    };
    let g_avg = (g_min * rng.gen_range(1.0..3.0)).min(sentinel);
    let d_obs = if rng.gen::<f64>() < 0.2 {
        f64::INFINITY
    } else {
        rng.gen_range(0.05 * s..30.0 * s)
    };
    ProfileSnapshot {
        scan: 0,
        speed: rng.gen_range(0.0..6.0 * s),
        g_min,
        g_avg,
        d_obs,
        d_unknown: rng.gen_range(0.0..20.0 * s),
        v_sensor: rng.gen_range(0.0..1200.0 * vs),
        v_map: rng.gen_range(0.0..200_000.0 * vs),
    }
}
