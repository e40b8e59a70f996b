//! Map handoff, sampling-based planning, shortcut smoothing, and
//! per-waypoint visibility annotation.
//!
//! Planning is planar: the drone holds one flight altitude, obstacles are
//! full-height pillars, so samples and collision discs live in the z plane
//! of the start pose while voxel queries stay 3-D.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::SimError;
use crate::geom::{Aabb, Vec3};
use crate::mapping::{CellState, OccupancyTree};

/// Pruned copy of the map handed to the planner.
#[derive(Debug, Clone)]
pub struct PlannerView {
    pub tree: OccupancyTree,
    /// Collapse precision: no leaf in `tree` is finer than this.
    pub precision: f64,
    /// Known source volume included by the handoff monitor.
    pub included_volume: f64,
    /// Bounding box of known-Free leaves, if any.
    pub free_bounds: Option<Aabb>,
}

/// Copies the known subtrees nearest the drone into a planner view until
/// their cumulative known volume reaches `volume_cap`, collapsing every
/// included region to leaves no finer than `precision`. Excluded space
/// reads Unknown.
pub fn handoff(source: &OccupancyTree, precision: f64, volume_cap: f64, drone_pos: Vec3) -> PlannerView {
    let (tree, included_volume) = source.pruned_copy(precision, volume_cap, drone_pos);
    let mut free_bounds: Option<Aabb> = None;
    for (center, size, state) in tree.leaves() {
        if state == CellState::Free {
            let half = Vec3::new(size / 2.0, size / 2.0, size / 2.0);
            match &mut free_bounds {
                None => free_bounds = Some(Aabb::new(center - half, center + half)),
                Some(b) => {
                    b.expand_to(center - half);
                    b.expand_to(center + half);
                }
            }
        }
    }
    PlannerView { tree, precision: source.snapped_size(precision.max(source.vox_min())), included_volume, free_bounds }
}

#[derive(Debug, Clone, Copy)]
pub struct Waypoint {
    pub position: Vec3,
    /// Planned speed at this waypoint from the trapezoidal profile.
    pub velocity: f64,
    /// Free distance along the remaining path, set by annotate_visibility.
    pub visibility: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub waypoints: Vec<Waypoint>,
    /// True when the path connects all the way to the mission goal.
    pub reaches_goal: bool,
}

impl Trajectory {
    pub fn total_length(&self) -> f64 {
        self.waypoints.windows(2).map(|w| w[0].position.distance(w[1].position)).sum()
    }

    /// Cumulative arc length at each waypoint.
    pub fn arcs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.waypoints.len());
        let mut acc = 0.0;
        for (i, w) in self.waypoints.iter().enumerate() {
            if i > 0 {
                acc += self.waypoints[i - 1].position.distance(w.position);
            }
            out.push(acc);
        }
        out
    }

    pub fn point_at(&self, arc: f64) -> Vec3 {
        if self.waypoints.is_empty() {
            return Vec3::ZERO;
        }
        if arc <= 0.0 {
            return self.waypoints[0].position;
        }
        let mut remaining = arc;
        for w in self.waypoints.windows(2) {
            let seg = w[0].position.distance(w[1].position);
            if remaining <= seg {
                if seg < 1e-12 {
                    return w[0].position;
                }
                return w[0].position + (w[1].position - w[0].position) * (remaining / seg);
            }
            remaining -= seg;
        }
        self.waypoints.last().unwrap().position
    }

    /// Planned speed at an arc position. Interpolates the squared speed
    /// between waypoints: under constant acceleration v^2 is linear in arc
    /// length, so this reproduces the ramp exactly (a linear blend of v
    /// would undercut it badly right after a standing start).
    pub fn velocity_at(&self, arc: f64) -> f64 {
        if self.waypoints.is_empty() {
            return 0.0;
        }
        if arc <= 0.0 {
            return self.waypoints[0].velocity;
        }
        let mut remaining = arc;
        for w in self.waypoints.windows(2) {
            let seg = w[0].position.distance(w[1].position);
            if remaining <= seg {
                if seg < 1e-12 {
                    return w[0].velocity;
                }
                let t = remaining / seg;
                let v2 = w[0].velocity.powi(2) * (1.0 - t) + w[1].velocity.powi(2) * t;
                return v2.max(0.0).sqrt();
            }
            remaining -= seg;
        }
        self.waypoints.last().unwrap().velocity
    }

    /// CSV export: t_index,x,y,z,v_planned,visibility_m.
    pub fn csv(&self) -> String {
        let mut s = String::from("t_index,x,y,z,v_planned,visibility_m\n");
        for (i, w) in self.waypoints.iter().enumerate() {
            let _ = writeln!(
                s,
                "{i},{:.6},{:.6},{:.6},{:.6},{:.6}",
                w.position.x, w.position.y, w.position.z, w.velocity, w.visibility
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.csv()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }
}

/// Planner knobs for one invocation.
#[derive(Debug, Clone, Copy)]
pub struct PlanParams {
    /// Collision-check resolution; equals the handoff collapse precision.
    pub precision: f64,
    /// Exploration cap: union volume of voxels touched by checks, m^3.
    pub volume_cap: f64,
    pub body_radius: f64,
    pub goal_bias: f64,
    /// Steering step as a multiple of precision.
    pub steer_factor: f64,
    /// Rewire radius coefficient: gamma = factor * steer step.
    pub gamma_factor: f64,
    pub max_iters: usize,
}

impl PlanParams {
    pub fn from_config(cfg: &crate::config::SimConfig, precision: f64, volume_cap: f64) -> Self {
        PlanParams {
            precision,
            volume_cap,
            body_radius: cfg.body_radius(),
            goal_bias: cfg.goal_bias,
            steer_factor: cfg.steer_factor,
            gamma_factor: cfg.rewire_gamma_factor,
            max_iters: cfg.max_plan_iters,
        }
    }
}

#[derive(Debug, Clone)]
pub enum PlanResult {
    /// Geometric path from start; `reaches_goal` false means it ends at the
    /// explored frontier nearest the goal.
    Path { points: Vec<Vec3>, reaches_goal: bool },
    NoPath,
}

struct CheckContext<'a> {
    view: &'a PlannerView,
    p: f64,
    disc: Vec<(i64, i64)>,
    touched: HashSet<(i64, i64, i64)>,
}

impl<'a> CheckContext<'a> {
    fn new(view: &'a PlannerView, params: &PlanParams) -> Self {
        let p = params.precision;
        let k = (params.body_radius / p).ceil() as i64;
        let mut disc = Vec::new();
        for dx in -k..=k {
            for dy in -k..=k {
                let d = ((dx * dx + dy * dy) as f64).sqrt() * p;
                if d <= params.body_radius + p * std::f64::consts::FRAC_1_SQRT_2 {
                    disc.push((dx, dy));
                }
            }
        }
        CheckContext { view, p, disc, touched: HashSet::new() }
    }

    fn key(&self, pt: Vec3) -> (i64, i64, i64) {
        (
            (pt.x / self.p).floor() as i64,
            (pt.y / self.p).floor() as i64,
            (pt.z / self.p).floor() as i64,
        )
    }

    /// Body disc around the point must be entirely known Free.
    fn blocked(&mut self, pt: Vec3) -> bool {
        let (ix, iy, iz) = self.key(pt);
        for &(dx, dy) in &self.disc {
            let key = (ix + dx, iy + dy, iz);
            self.touched.insert(key);
            let probe = Vec3::new(
                (key.0 as f64 + 0.5) * self.p,
                (key.1 as f64 + 0.5) * self.p,
                pt.z,
            );
            if self.view.tree.query(probe, self.p) != CellState::Free {
                return true;
            }
        }
        false
    }

    /// Point-sample check without the body disc (start validity, visibility).
    fn state_at(&mut self, pt: Vec3) -> CellState {
        self.touched.insert(self.key(pt));
        self.view.tree.query(pt, self.p)
    }

    fn edge_free(&mut self, a: Vec3, b: Vec3) -> bool {
        let d = b - a;
        let len = d.norm();
        let steps = (len / self.p).ceil().max(1.0) as usize;
        for k in 1..=steps {
            let t = k as f64 / steps as f64;
            if self.blocked(a + d * t) {
                return false;
            }
        }
        true
    }

    fn explored_volume(&self) -> f64 {
        self.touched.len() as f64 * self.p.powi(3)
    }
}

/// RRT* over the known-Free region of the view, planar at the start's
/// altitude. Samples only Free space (goal-biased), halts when the touched
/// voxel volume reaches the cap, and falls back to the frontier node
/// nearest the goal when the goal is not yet connectable.
pub fn plan(view: &PlannerView, start: Vec3, goal: Vec3, params: &PlanParams, seed: u64) -> PlanResult {
    let mut ctx = CheckContext::new(view, params);
    let Some(free_bounds) = view.free_bounds else {
        return PlanResult::NoPath;
    };
    if ctx.state_at(start) != CellState::Free {
        return PlanResult::NoPath;
    }
    let goal = Vec3::new(goal.x, goal.y, start.z);
    let steer = params.steer_factor * params.precision;
    let gamma = params.gamma_factor * steer;

    struct RrtNode {
        pos: Vec3,
        parent: usize,
        cost: f64,
        children: Vec<usize>,
    }
    let mut nodes = vec![RrtNode { pos: start, parent: usize::MAX, cost: 0.0, children: Vec::new() }];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut halted = false;

    let sample_lo = Vec3::new(free_bounds.min.x - steer, free_bounds.min.y - steer, start.z);
    let sample_hi = Vec3::new(free_bounds.max.x + steer, free_bounds.max.y + steer, start.z);

    for _ in 0..params.max_iters {
        if ctx.explored_volume() >= params.volume_cap {
            halted = true;
            break;
        }
        let target = if rng.gen::<f64>() < params.goal_bias {
            goal
        } else {
            Vec3::new(
                rng.gen_range(sample_lo.x..=sample_hi.x),
                rng.gen_range(sample_lo.y..=sample_hi.y),
                start.z,
            )
        };
        // Nearest node, ties to the lower index.
        let mut nearest = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, n) in nodes.iter().enumerate() {
            let d = n.pos.distance(target);
            if d < best_d {
                best_d = d;
                nearest = i;
            }
        }
        if best_d < 1e-9 {
            continue;
        }
        let dir = (target - nodes[nearest].pos).unit().unwrap();
        let new_pos = nodes[nearest].pos + dir * best_d.min(steer);
        if ctx.blocked(new_pos) {
            continue;
        }

        let n = nodes.len() as f64;
        let radius = (gamma * ((n.max(2.0)).ln() / n).powf(1.0 / 3.0)).max(steer);
        let mut neighbor_ids: Vec<usize> = (0..nodes.len())
            .filter(|&i| nodes[i].pos.distance(new_pos) <= radius)
            .collect();
        if !neighbor_ids.contains(&nearest) {
            neighbor_ids.push(nearest);
        }

        // Choose the cheapest collision-free parent.
        let mut parent = usize::MAX;
        let mut cost = f64::INFINITY;
        for &i in &neighbor_ids {
            let c = nodes[i].cost + nodes[i].pos.distance(new_pos);
            if c < cost && ctx.edge_free(nodes[i].pos, new_pos) {
                cost = c;
                parent = i;
            }
        }
        if parent == usize::MAX {
            continue;
        }
        let new_id = nodes.len();
        nodes.push(RrtNode { pos: new_pos, parent, cost, children: Vec::new() });
        nodes[parent].children.push(new_id);

        // Rewire neighbors through the new node when cheaper.
        for &i in &neighbor_ids {
            if i == parent {
                continue;
            }
            let via = cost + new_pos.distance(nodes[i].pos);
            if via + 1e-12 < nodes[i].cost && ctx.edge_free(new_pos, nodes[i].pos) {
                let old_parent = nodes[i].parent;
                if old_parent != usize::MAX {
                    nodes[old_parent].children.retain(|&c| c != i);
                }
                nodes[i].parent = new_id;
                nodes[new_id].children.push(i);
                let delta = via - nodes[i].cost;
                // Propagate the improvement to the whole subtree.
                let mut stack = vec![i];
                while let Some(j) = stack.pop() {
                    nodes[j].cost += delta;
                    stack.extend(nodes[j].children.iter().copied());
                }
            }
        }
    }
    let _ = halted;

    // Best goal attachment among nodes within steering range.
    let mut goal_parent = usize::MAX;
    let mut candidates: Vec<usize> = (0..nodes.len())
        .filter(|&i| nodes[i].pos.distance(goal) <= steer)
        .collect();
    candidates.sort_by(|&a, &b| {
        let ca = nodes[a].cost + nodes[a].pos.distance(goal);
        let cb = nodes[b].cost + nodes[b].pos.distance(goal);
        ca.partial_cmp(&cb).unwrap().then(a.cmp(&b))
    });
    for &i in candidates.iter().take(20) {
        if !ctx.blocked(goal) && ctx.edge_free(nodes[i].pos, goal) {
            goal_parent = i;
            break; // candidates are cost-sorted; the first free edge is best
        }
    }

    let chain = |mut i: usize, nodes: &[RrtNode]| -> Vec<Vec3> {
        let mut pts = Vec::new();
        while i != usize::MAX {
            pts.push(nodes[i].pos);
            i = nodes[i].parent;
        }
        pts.reverse();
        pts
    };

    if goal_parent != usize::MAX {
        let mut points = chain(goal_parent, &nodes);
        points.push(goal);
        return PlanResult::Path { points, reaches_goal: true };
    }
    // Frontier fallback: the node nearest the goal.
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, n) in nodes.iter().enumerate() {
        let d = n.pos.distance(goal);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    let points = chain(best, &nodes);
    if points.len() < 2 {
        return PlanResult::NoPath;
    }
    PlanResult::Path { points, reaches_goal: false }
}

/// Greedy shortcutting followed by resampling and a trapezoidal velocity
/// profile: ramp from `v_start`, cruise at most `v_max`, stop at the end.
pub fn smooth(
    points: &[Vec3],
    reaches_goal: bool,
    view: &PlannerView,
    params: &PlanParams,
    v_max: f64,
    a_max: f64,
    v_start: f64,
) -> Trajectory {
    assert!(points.len() >= 2);
    let mut ctx = CheckContext::new(view, params);
    let mut kept = vec![points[0]];
    let mut i = 0usize;
    while i + 1 < points.len() {
        let mut j = points.len() - 1;
        while j > i + 1 {
            if ctx.edge_free(points[i], points[j]) {
                break;
            }
            j -= 1;
        }
        kept.push(points[j]);
        i = j;
    }

    // Resample to a regular spacing so budgeting sees real waypoints.
    let total: f64 = kept.windows(2).map(|w| w[0].distance(w[1])).sum();
    let spacing = (2.0 * params.precision).max(total / 256.0);
    let mut positions = vec![kept[0]];
    for w in kept.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len < 1e-12 {
            continue;
        }
        let n = (len / spacing).ceil().max(1.0) as usize;
        for k in 1..=n {
            positions.push(w[0] + seg * (k as f64 / len * (len / n as f64)));
        }
    }

    let mut arcs = Vec::with_capacity(positions.len());
    let mut acc = 0.0;
    for (k, p) in positions.iter().enumerate() {
        if k > 0 {
            acc += positions[k - 1].distance(*p);
        }
        arcs.push(acc);
    }
    let total = acc;
    let waypoints = positions
        .iter()
        .zip(&arcs)
        .map(|(p, &s)| {
            let ramp_up = (v_start * v_start + 2.0 * a_max * s).sqrt();
            let ramp_down = (2.0 * a_max * (total - s).max(0.0)).sqrt();
            Waypoint { position: *p, velocity: ramp_up.min(ramp_down).min(v_max), visibility: 0.0 }
        })
        .collect();
    Trajectory { waypoints, reaches_goal }
}

/// Sets each waypoint's visibility: free distance along the remaining path
/// to the first non-Free voxel of the view, capped by the remaining length
/// and the sensor range.
pub fn annotate_visibility(traj: &mut Trajectory, view: &PlannerView, max_range: f64) {
    let p = view.precision;
    let n = traj.waypoints.len();
    if n == 0 {
        return;
    }
    let arcs = traj.arcs();
    let total = *arcs.last().unwrap();
    // March once from the start, recording the first blocked arc.
    let steps = (total / p).ceil() as usize;
    let mut first_blocked = f64::INFINITY;
    for k in 0..=steps {
        let s = (k as f64 * p).min(total);
        if view.tree.query(traj.point_at(s), p) != CellState::Free {
            first_blocked = s;
            break;
        }
    }
    for (i, w) in traj.waypoints.iter_mut().enumerate() {
        let s = arcs[i];
        let vis = if first_blocked <= s { 0.0 } else { (first_blocked - s).min(total - s) };
        w.visibility = vis.min(max_range);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::geom::Vec3;
    use crate::mapping::OccupancyTree;

    /// Free corridor carved in a fresh tree at fine precision.
    fn corridor_view(len: f64, halfwidth: f64) -> PlannerView {
        let mut tree = OccupancyTree::new(
            Aabb::new(Vec3::new(-2.0, -6.0, -2.0), Vec3::new(len + 4.0, 6.0, 4.0)),
            0.3,
        );
        let p = 0.3;
        let nx = ((len + 2.0) / p) as i64;
        let ny = (halfwidth / p) as i64;
        for ix in -3..nx {
            for iy in -ny..=ny {
                for iz in -2..3 {
                    let pt = Vec3::new(ix as f64 * p + p / 2.0, iy as f64 * p + p / 2.0, 1.0 + iz as f64 * p);
                    tree.mark_free(pt, p, 0);
                }
            }
        }
        handoff(&tree, 0.3, f64::INFINITY, Vec3::new(0.0, 0.0, 1.0))
    }

    fn base_params(p: f64) -> PlanParams {
        PlanParams {
            precision: p,
            volume_cap: f64::INFINITY,
            body_radius: 0.45,
            goal_bias: 0.05,
            steer_factor: 4.0,
            gamma_factor: 6.0,
            max_iters: 800,
        }
    }

    #[test]
    fn empty_corridor_paths_are_near_straight() {
        let view = corridor_view(12.0, 3.6);
        let params = base_params(0.3);
        let start = Vec3::new(0.15, 0.0, 1.0);
        let goal = Vec3::new(11.85, 0.0, 1.0);
        let straight = start.distance(goal);
        for seed in 0..20 {
            match plan(&view, start, goal, &params, seed) {
                PlanResult::Path { points, reaches_goal } => {
                    assert!(reaches_goal, "seed {seed} failed to reach the goal");
                    let len: f64 = points.windows(2).map(|w| w[0].distance(w[1])).sum();
                    assert!(len <= 1.2 * straight, "seed {seed}: length {len} vs straight {straight}");
                }
                PlanResult::NoPath => panic!("seed {seed}: no path in an empty corridor"),
            }
        }
    }

    #[test]
    fn plan_is_deterministic_per_seed() {
        let view = corridor_view(8.0, 3.0);
        let params = base_params(0.3);
        let start = Vec3::new(0.15, 0.0, 1.0);
        let goal = Vec3::new(7.5, 0.0, 1.0);
        let a = plan(&view, start, goal, &params, 42);
        let b = plan(&view, start, goal, &params, 42);
        match (a, b) {
            (PlanResult::Path { points: pa, .. }, PlanResult::Path { points: pb, .. }) => {
                assert_eq!(pa.len(), pb.len());
                for (x, y) in pa.iter().zip(&pb) {
                    assert!(x.distance(*y) < 1e-12);
                }
            }
            _ => panic!("expected identical paths"),
        }
    }

    #[test]
    fn zero_volume_cap_returns_no_path() {
        let view = corridor_view(8.0, 3.0);
        let mut params = base_params(0.3);
        params.volume_cap = 0.0;
        let result = plan(&view, Vec3::new(0.15, 0.0, 1.0), Vec3::new(7.5, 0.0, 1.0), &params, 1);
        assert!(matches!(result, PlanResult::NoPath));
    }

    #[test]
    fn unknown_goal_region_yields_frontier_path() {
        // Free corridor only reaches x ~ 6; goal far beyond in Unknown space.
        let view = corridor_view(6.0, 3.0);
        let params = base_params(0.3);
        let start = Vec3::new(0.15, 0.0, 1.0);
        let goal = Vec3::new(30.0, 0.0, 1.0);
        match plan(&view, start, goal, &params, 3) {
            PlanResult::Path { points, reaches_goal } => {
                assert!(!reaches_goal);
                let end = points.last().unwrap();
                assert!(end.x > 3.0, "frontier path should advance toward the goal, ended at {end:?}");
            }
            PlanResult::NoPath => panic!("expected a frontier path"),
        }
    }

    #[test]
    fn occupied_goal_never_entered() {
        let mut view = corridor_view(10.0, 3.6);
        // Occupy a block around the goal.
        let goal = Vec3::new(9.15, 0.0, 1.0);
        for dx in -2..=2i64 {
            for dy in -2..=2i64 {
                view.tree.mark_occupied(goal + Vec3::new(dx as f64 * 0.3, dy as f64 * 0.3, 0.0), 0.3, 1);
            }
        }
        let params = base_params(0.3);
        match plan(&view, Vec3::new(0.15, 0.0, 1.0), goal, &params, 5) {
            PlanResult::Path { points, reaches_goal } => {
                assert!(!reaches_goal);
                for w in points.windows(2) {
                    let d = w[0].distance(w[1]);
                    let n = (d / 0.05).ceil() as usize;
                    for k in 0..=n {
                        let pt = w[0] + (w[1] - w[0]) * (k as f64 / n.max(1) as f64);
                        assert_ne!(view.tree.query(pt, 0.3), CellState::Occupied, "path enters occupied at {pt:?}");
                    }
                }
            }
            PlanResult::NoPath => {} // acceptable degenerate outcome
        }
    }

    #[test]
    fn handoff_zero_volume_is_all_unknown() {
        let view = corridor_view(6.0, 3.0);
        let pruned = handoff(&view.tree, 0.3, 0.0, Vec3::ZERO);
        assert_eq!(pruned.tree.known_volume(), 0.0);
        assert!(pruned.free_bounds.is_none());
    }

    #[test]
    fn handoff_without_cap_is_state_equivalent() {
        let mut tree = OccupancyTree::new(Aabb::new(Vec3::ZERO, Vec3::new(9.6, 9.6, 9.6)), 0.3);
        tree.mark_occupied(Vec3::new(1.35, 1.35, 1.35), 0.3, 0);
        tree.mark_free(Vec3::new(2.55, 1.35, 1.35), 0.3, 0);
        tree.mark_free(Vec3::new(5.0, 5.0, 5.0), 1.2, 0);
        let view = handoff(&tree, 0.3, f64::INFINITY, Vec3::ZERO);
        for ix in 0..16 {
            for iy in 0..16 {
                let p = Vec3::new(0.3 + 0.6 * ix as f64, 0.3 + 0.6 * iy as f64, 1.35);
                assert_eq!(view.tree.state_at(p), tree.state_at(p), "mismatch at {p:?}");
            }
        }
        assert!((view.included_volume - tree.known_volume()).abs() < 1e-9);
    }

    #[test]
    fn handoff_prefers_regions_near_the_drone() {
        let mut tree = OccupancyTree::new(Aabb::new(Vec3::ZERO, Vec3::new(38.4, 38.4, 38.4)), 0.3);
        // Two known slabs: one near the drone, one far.
        for i in 0..8 {
            for j in 0..8 {
                tree.mark_free(Vec3::new(0.15 + 0.3 * i as f64, 0.15 + 0.3 * j as f64, 0.15), 0.3, 0);
                tree.mark_free(Vec3::new(30.15 + 0.3 * i as f64, 30.15 + 0.3 * j as f64, 30.15), 0.3, 0);
            }
        }
        // Cap below one slab: inclusion exhausts inside the near slab, so
        // the far slab stays entirely Unknown.
        let one_slab = 64.0 * 0.027;
        let cap = one_slab * 0.9;
        let view = handoff(&tree, 0.3, cap, Vec3::ZERO);
        assert_eq!(view.tree.state_at(Vec3::new(0.15, 0.15, 0.15)), CellState::Free);
        for i in 0..8 {
            for j in 0..8 {
                let p = Vec3::new(30.15 + 0.3 * i as f64, 30.15 + 0.3 * j as f64, 30.15);
                assert_eq!(view.tree.state_at(p), CellState::Unknown, "far slab leaked at {p:?}");
            }
        }
        // Monitor never exceeds the cap by more than one leaf volume.
        assert!(view.included_volume >= cap - 1e-9);
        assert!(view.included_volume <= cap + 0.027 + 1e-9);
    }

    #[test]
    fn coarse_collapse_never_frees_occupied_regions() {
        // Exhaustive over a small tree: every occupied fine cell must stay
        // Occupied (never Free) at every coarser collapse precision.
        let mut tree = OccupancyTree::new(Aabb::new(Vec3::ZERO, Vec3::new(2.4, 2.4, 2.4)), 0.3);
        for i in 0..8 {
            let p = Vec3::new(0.15 + 0.3 * i as f64, 0.15, 0.15);
            if i % 3 == 0 {
                tree.mark_occupied(p, 0.3, 0);
            } else {
                tree.mark_free(p, 0.3, 0);
            }
        }
        for precision in [0.3, 0.6, 1.2, 2.4] {
            let view = handoff(&tree, precision, f64::INFINITY, Vec3::ZERO);
            for i in 0..8 {
                let p = Vec3::new(0.15 + 0.3 * i as f64, 0.15, 0.15);
                if tree.state_at(p) == CellState::Occupied {
                    assert_eq!(
                        view.tree.query(p, precision),
                        CellState::Occupied,
                        "occupied cell read {:?} at collapse {precision}",
                        view.tree.query(p, precision)
                    );
                }
            }
        }
    }

    #[test]
    fn smooth_shortcuts_a_dogleg() {
        let view = corridor_view(10.0, 4.0);
        let params = base_params(0.3);
        let dogleg = vec![
            Vec3::new(0.15, -2.0, 1.0),
            Vec3::new(8.0, -2.0, 1.0),
            Vec3::new(8.0, 2.0, 1.0),
        ];
        let raw_len: f64 = dogleg.windows(2).map(|w| w[0].distance(w[1])).sum();
        let traj = smooth(&dogleg, true, &view, &params, 2.0, 2.0, 0.0);
        let len = traj.total_length();
        assert!(len < raw_len - 0.5, "shortcut failed: {len} vs {raw_len}");
        assert!((len - dogleg[0].distance(dogleg[2])).abs() < 0.2, "expected near-diagonal, got {len}");
    }

    #[test]
    fn smooth_keeps_straight_segments_straight() {
        let view = corridor_view(10.0, 3.0);
        let params = base_params(0.3);
        let line = vec![Vec3::new(0.15, 0.0, 1.0), Vec3::new(9.0, 0.0, 1.0)];
        let traj = smooth(&line, true, &view, &params, 2.0, 2.0, 0.0);
        assert!((traj.total_length() - line[0].distance(line[1])).abs() < 1e-9);
        for w in &traj.waypoints {
            assert!(w.position.y.abs() < 1e-9);
        }
    }

    #[test]
    fn trapezoid_profile_respects_limits() {
        let view = corridor_view(20.0, 3.0);
        let params = base_params(0.3);
        let line = vec![Vec3::new(0.15, 0.0, 1.0), Vec3::new(18.0, 0.0, 1.0)];
        let v_max = 2.0;
        let a_max = 2.0;
        let traj = smooth(&line, true, &view, &params, v_max, a_max, 0.0);
        assert!(traj.waypoints.first().unwrap().velocity.abs() < 1e-9);
        assert!(traj.waypoints.last().unwrap().velocity.abs() < 1e-9);
        let arcs = traj.arcs();
        for (i, w) in traj.waypoints.iter().enumerate() {
            assert!(w.velocity <= v_max + 1e-9);
            let s = arcs[i];
            let bound = (2.0 * a_max * s).sqrt().min((2.0 * a_max * (traj.total_length() - s)).sqrt());
            assert!(w.velocity <= bound + 1e-9, "waypoint {i} velocity {} above ramp {bound}", w.velocity);
        }
        // Long enough corridor: the plateau actually reaches v_max.
        assert!(traj.waypoints.iter().any(|w| (w.velocity - v_max).abs() < 1e-6));
    }

    #[test]
    fn visibility_caps_at_remaining_length_and_range() {
        let cfg = SimConfig::full_scale();
        let _ = &cfg;
        let view = corridor_view(14.0, 3.0);
        let params = base_params(0.3);
        let line = vec![Vec3::new(0.15, 0.0, 1.0), Vec3::new(12.15, 0.0, 1.0)];
        let mut traj = smooth(&line, true, &view, &params, 2.0, 2.0, 0.0);
        annotate_visibility(&mut traj, &view, 20.0);
        let first = traj.waypoints.first().unwrap().visibility;
        assert!((first - 12.0).abs() < 0.5, "visibility {first}, expected remaining length");
        let last = traj.waypoints.last().unwrap().visibility;
        assert!(last <= 0.5, "terminal visibility {last}");

        let mut short = traj.clone();
        annotate_visibility(&mut short, &view, 5.0);
        assert!(short.waypoints[0].visibility <= 5.0 + 1e-9);
    }

    #[test]
    fn visibility_is_zero_on_an_empty_view() {
        let empty = handoff(
            &OccupancyTree::new(Aabb::new(Vec3::ZERO, Vec3::new(9.6, 9.6, 9.6)), 0.3),
            0.3,
            f64::INFINITY,
            Vec3::ZERO,
        );
        let mut traj = Trajectory {
            waypoints: vec![
                Waypoint { position: Vec3::new(1.0, 1.0, 1.0), velocity: 1.0, visibility: 9.0 },
                Waypoint { position: Vec3::new(4.0, 1.0, 1.0), velocity: 1.0, visibility: 9.0 },
            ],
            reaches_goal: false,
        };
        annotate_visibility(&mut traj, &empty, 20.0);
        for w in &traj.waypoints {
            assert_eq!(w.visibility, 0.0);
        }
    }
}
