//! Synthetic 2.5-D arenas: cylindrical pillar fields clustered around
//! centroids, with an open stretch between a start cluster and a goal
//! cluster.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::SimConfig;
use crate::error::SimError;
use crate::geom::{Aabb, Vec3};

/// Vertical pillar. `base` sits on the arena floor; the axis is +z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub base: Vec3,
    pub radius: f64,
    pub height: f64,
}

impl Obstacle {
    /// Shortest distance from a point to the pillar surface (negative inside).
    pub fn surface_distance(&self, p: Vec3) -> f64 {
        let radial = (p - self.base).norm_xy() - self.radius;
        if p.z < self.base.z {
            let dz = self.base.z - p.z;
            (radial.max(0.0).powi(2) + dz * dz).sqrt()
        } else if p.z > self.base.z + self.height {
            let dz = p.z - (self.base.z + self.height);
            (radial.max(0.0).powi(2) + dz * dz).sqrt()
        } else {
            radial
        }
    }
}

/// Generator parameters. All lengths are in scaled (world) units.
#[derive(Debug, Clone)]
pub struct EnvSpec {
    /// Peak spawn probability at a centroid, in (0, 1].
    pub obstacle_density: f64,
    /// Cluster radius: spawn probability decays to ~0 at this distance.
    pub spread: f64,
    /// Straight-line start-to-goal distance.
    pub goal_distance: f64,
    pub grid_size: f64,
    pub gap_size: f64,
    /// Cluster centers. First = start platform, last = goal platform.
    pub centroids: Vec<Vec3>,
    pub seed: u64,
    /// Geometric scale the values above were derived with (recorded).
    pub scale: f64,
    /// Arena height, in grid cells.
    pub height_cells: f64,
}

impl EnvSpec {
    /// Standard two-cluster arena for the given suite knobs.
    pub fn clustered(density: f64, spread: f64, goal_distance: f64, seed: u64, cfg: &SimConfig) -> Self {
        let z_fly = cfg.grid_size() * cfg.arena_height_cells / 2.0;
        EnvSpec {
            obstacle_density: density,
            spread,
            goal_distance,
            grid_size: cfg.grid_size(),
            gap_size: cfg.gap_size(),
            centroids: vec![Vec3::new(0.0, 0.0, z_fly), Vec3::new(goal_distance, 0.0, z_fly)],
            seed,
            scale: cfg.scale,
            height_cells: cfg.arena_height_cells,
        }
    }

    pub fn arena_height(&self) -> f64 {
        self.grid_size * self.height_cells
    }

    /// Serialize as the plain-text key=value config format.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "density={}", fmt_f64(self.obstacle_density));
        let _ = writeln!(s, "spread_m={}", fmt_f64(self.spread));
        let _ = writeln!(s, "goal_distance_m={}", fmt_f64(self.goal_distance));
        let _ = writeln!(s, "grid_size_m={}", fmt_f64(self.grid_size));
        let _ = writeln!(s, "gap_size_m={}", fmt_f64(self.gap_size));
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "scale={}", fmt_f64(self.scale));
        s
    }

    /// Parse the key=value format. Unknown keys are rejected; missing keys
    /// fall back to defaults derived from `scale`.
    pub fn from_key_values(text: &str) -> Result<Self, SimError> {
        let mut density = None;
        let mut spread = None;
        let mut goal_distance = None;
        let mut grid_size = None;
        let mut gap_size = None;
        let mut seed = 0u64;
        let mut scale = 0.1f64;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SimError::Config(format!("line {}: expected key=value, got {:?}", lineno + 1, line)))?;
            let key = key.trim();
            let value = value.trim();
            let parse = |v: &str| -> Result<f64, SimError> {
                v.parse::<f64>().map_err(|_| SimError::Config(format!("line {}: bad number {:?}", lineno + 1, v)))
            };
            match key {
                "density" => density = Some(parse(value)?),
                "spread_m" => spread = Some(parse(value)?),
                "goal_distance_m" => goal_distance = Some(parse(value)?),
                "grid_size_m" => grid_size = Some(parse(value)?),
                "gap_size_m" => gap_size = Some(parse(value)?),
                "seed" => {
                    seed = value
                        .parse::<u64>()
                        .map_err(|_| SimError::Config(format!("line {}: bad seed {:?}", lineno + 1, value)))?
                }
                "scale" => scale = parse(value)?,
                other => return Err(SimError::Config(format!("line {}: unknown key {:?}", lineno + 1, other))),
            }
        }
        let cfg = SimConfig::with_scale(scale);
        let density = density.unwrap_or(0.6);
        if !(density > 0.0 && density <= 1.0) {
            return Err(SimError::Config(format!("density must be in (0, 1], got {density}")));
        }
        let mut spec = EnvSpec::clustered(
            density,
            spread.unwrap_or(50.0 * scale),
            goal_distance.unwrap_or(900.0 * scale),
            seed,
            &cfg,
        );
        if let Some(g) = grid_size {
            spec.grid_size = g;
        }
        if let Some(g) = gap_size {
            spec.gap_size = g;
        }
        Ok(spec)
    }
}

fn fmt_f64(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

/// Fully generated arena: obstacle list plus mission endpoints.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub obstacles: Vec<Obstacle>,
    pub start: Vec3,
    pub goal: Vec3,
    /// x-coordinates separating zone A / zone B / zone C.
    pub zone_boundaries: [f64; 2],
    pub bounds: Aabb,
    pub grid_size: f64,
    pub spec: EnvSpec,
}

impl GroundTruth {
    pub fn zone_of(&self, p: Vec3) -> char {
        if p.x < self.zone_boundaries[0] {
            'A'
        } else if p.x < self.zone_boundaries[1] {
            'B'
        } else {
            'C'
        }
    }

    /// Minimum surface-to-surface distance between distinct pillars.
    pub fn measured_min_gap(&self) -> f64 {
        let mut min = f64::INFINITY;
        for (i, a) in self.obstacles.iter().enumerate() {
            for b in &self.obstacles[i + 1..] {
                let d = (a.base - b.base).norm_xy() - a.radius - b.radius;
                if d < min {
                    min = d;
                }
            }
        }
        min
    }

    /// CSV export, one obstacle per row. `cz` is the pillar base elevation.
    pub fn obstacles_csv(&self) -> String {
        let mut s = String::from("cx,cy,cz,r,h\n");
        for o in &self.obstacles {
            let _ = writeln!(
                s,
                "{:.6},{:.6},{:.6},{:.6},{:.6}",
                o.base.x, o.base.y, o.base.z, o.radius, o.height
            );
        }
        s
    }

    pub fn write_obstacles_csv(&self, path: &Path) -> Result<(), SimError> {
        std::fs::write(path, self.obstacles_csv()).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }
}

/// Spawn pillars on a grid with per-cell Gaussian acceptance around each
/// centroid (sigma = spread / 2, peak = obstacle_density). Start and goal
/// cells plus a one-cell buffer always stay free.
pub fn generate_environment(spec: &EnvSpec) -> GroundTruth {
    assert!(!spec.centroids.is_empty(), "at least one centroid required");
    assert!(spec.obstacle_density > 0.0 && spec.obstacle_density <= 1.0);
    let g = spec.grid_size;
    let height = spec.arena_height();
    let margin = 2.0 * g;
    let mut bounds = Aabb::new(spec.centroids[0], spec.centroids[0]);
    for c in &spec.centroids {
        bounds.expand_to(*c);
    }
    let bounds = Aabb::new(
        Vec3::new(bounds.min.x - spec.spread - margin, bounds.min.y - spec.spread - margin, 0.0),
        Vec3::new(bounds.max.x + spec.spread + margin, bounds.max.y + spec.spread + margin, height),
    );

    let start = *spec.centroids.first().unwrap();
    let goal = *spec.centroids.last().unwrap();
    let sigma = spec.spread / 2.0;
    let cell_of = |p: Vec3| -> (i64, i64) { ((p.x / g).floor() as i64, (p.y / g).floor() as i64) };
    let start_cell = cell_of(start);
    let goal_cell = cell_of(goal);

    let ix_min = (bounds.min.x / g).floor() as i64;
    let ix_max = (bounds.max.x / g).ceil() as i64;
    let iy_min = (bounds.min.y / g).floor() as i64;
    let iy_max = (bounds.max.y / g).ceil() as i64;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut obstacles = Vec::new();
    for ix in ix_min..ix_max {
        for iy in iy_min..iy_max {
            let u: f64 = rng.gen();
            let platform = (ix - start_cell.0).abs() <= 1 && (iy - start_cell.1).abs() <= 1
                || (ix - goal_cell.0).abs() <= 1 && (iy - goal_cell.1).abs() <= 1;
            if platform {
                continue;
            }
            let center = Vec3::new((ix as f64 + 0.5) * g, (iy as f64 + 0.5) * g, 0.0);
            let mut p_spawn: f64 = 0.0;
            for c in &spec.centroids {
                let d2 = (center - *c).norm_xy().powi(2);
                p_spawn += spec.obstacle_density * (-d2 / (2.0 * sigma * sigma)).exp();
            }
            if u < p_spawn.min(spec.obstacle_density) {
                obstacles.push(Obstacle { base: center, radius: g / 4.0, height });
            }
        }
    }

    let zone_boundaries = [start.x + spec.spread, goal.x - spec.spread];
    GroundTruth { obstacles, start, goal, zone_boundaries, bounds, grid_size: g, spec: spec.clone() }
}

/// Occupancy ratio of the `window_cells` x `window_cells` cell neighborhood
/// centered on the cell containing `center`: fraction of cells holding a
/// pillar center.
pub fn measure_density(gt: &GroundTruth, center: Vec3, window_cells: i64) -> f64 {
    assert!(window_cells > 0);
    let g = gt.grid_size;
    let cx = (center.x / g).floor() as i64;
    let cy = (center.y / g).floor() as i64;
    let half = window_cells / 2;
    let mut occupied = 0usize;
    let mut total = 0usize;
    for ix in (cx - half)..=(cx + half) {
        for iy in (cy - half)..=(cy + half) {
            total += 1;
            let hit = gt.obstacles.iter().any(|o| {
                (o.base.x / g).floor() as i64 == ix && (o.base.y / g).floor() as i64 == iy
            });
            if hit {
                occupied += 1;
            }
        }
    }
    occupied as f64 / total as f64
}

/// The benchmark suite: the Cartesian product of three densities, three
/// spreads and three goal distances, with one derived seed per cell.
pub fn suite_27(cfg: &SimConfig, base_seed: u64) -> Vec<EnvSpec> {
    let densities = [0.3, 0.45, 0.6];
    let spreads_full = [40.0, 80.0, 120.0];
    let goals_full = [600.0, 900.0, 1200.0];
    let mut specs = Vec::with_capacity(27);
    for (i, &d) in densities.iter().enumerate() {
        for (j, &s) in spreads_full.iter().enumerate() {
            for (k, &gd) in goals_full.iter().enumerate() {
                let seed = base_seed
                    .wrapping_mul(1_000_003)
                    .wrapping_add((i * 9 + j * 3 + k) as u64);
                specs.push(EnvSpec::clustered(d, s * cfg.scale, gd * cfg.scale, seed, cfg));
            }
        }
    }
    specs
}

/// Stable identifier for a suite cell, used in file names and reports.
pub fn env_id(spec: &EnvSpec) -> String {
    format!(
        "d{:02}_s{:03}_g{:04}",
        (spec.obstacle_density * 100.0).round() as u32,
        (spec.spread / spec.scale).round() as u32,
        (spec.goal_distance / spec.scale).round() as u32
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn full_cfg() -> SimConfig {
        SimConfig::full_scale()
    }

    #[test]
    fn platforms_stay_free() {
        let cfg = full_cfg();
        for seed in 0..20 {
            let spec = EnvSpec::clustered(0.6, 50.0, 300.0, seed, &cfg);
            let gt = generate_environment(&spec);
            for o in &gt.obstacles {
                let ds = (o.base - gt.start).norm_xy();
                let dg = (o.base - gt.goal).norm_xy();
                // 1-cell buffer: nearest spawnable cell center is >= 1 cell away.
                assert!(ds > spec.grid_size, "obstacle {ds} m from start");
                assert!(dg > spec.grid_size, "obstacle {dg} m from goal");
            }
        }
    }

    #[test]
    fn start_goal_distance_matches_spec() {
        let cfg = full_cfg();
        let spec = EnvSpec::clustered(0.45, 80.0, 900.0, 7, &cfg);
        let gt = generate_environment(&spec);
        assert!((gt.start.distance(gt.goal) - 900.0).abs() < 1e-9);
    }

    #[test]
    fn same_seed_is_deterministic() {
        let cfg = full_cfg();
        let spec = EnvSpec::clustered(0.45, 40.0, 600.0, 99, &cfg);
        let a = generate_environment(&spec);
        let b = generate_environment(&spec);
        assert_eq!(a.obstacles.len(), b.obstacles.len());
        for (x, y) in a.obstacles.iter().zip(&b.obstacles) {
            assert_eq!(x, y);
        }
    }

    /// Measured occupancy near a cluster centroid tracks the requested
    /// density. Uses a third mid-arena centroid so the start/goal platforms
    /// do not shadow the measurement window.
    #[test]
    fn density_accuracy_at_centroid() {
        let cfg = full_cfg();
        let mid = Vec3::new(600.0, 0.0, 10.0);
        let mut sum = 0.0;
        let n = 100;
        for seed in 0..n {
            let mut spec = EnvSpec::clustered(0.6, 50.0, 1200.0, seed, &cfg);
            spec.centroids.insert(1, mid);
            let gt = generate_environment(&spec);
            sum += measure_density(&gt, mid, 3);
        }
        let mean = sum / n as f64;
        assert!((mean - 0.6).abs() <= 0.10, "mean density {mean} not within 0.10 of 0.6");
    }

    #[test]
    fn density_monotone_in_knobs() {
        let cfg = full_cfg();
        let count_avg = |density: f64, spread: f64| -> f64 {
            let mut total = 0usize;
            for seed in 0..20 {
                let spec = EnvSpec::clustered(density, spread, 600.0, seed, &cfg);
                total += generate_environment(&spec).obstacles.len();
            }
            total as f64 / 20.0
        };
        let lo = count_avg(0.3, 80.0);
        let hi = count_avg(0.6, 80.0);
        assert!(hi >= lo, "density up should not reduce obstacle count ({lo} -> {hi})");
        let narrow = count_avg(0.45, 40.0);
        let wide = count_avg(0.45, 120.0);
        assert!(wide >= narrow, "spread up should not reduce obstacle count ({narrow} -> {wide})");
    }

    #[test]
    fn middle_zone_is_nearly_empty() {
        let cfg = full_cfg();
        let mut centroid_sum = 0.0;
        let mut mid_sum = 0.0;
        for seed in 0..20 {
            let mut spec = EnvSpec::clustered(0.6, 50.0, 1200.0, seed, &cfg);
            // Extra cluster so the centroid window is not a free platform.
            let probe = Vec3::new(300.0, 0.0, 10.0);
            spec.centroids.insert(1, probe);
            let gt = generate_environment(&spec);
            centroid_sum += measure_density(&gt, probe, 3);
            mid_sum += measure_density(&gt, Vec3::new(750.0, 0.0, 10.0), 5);
        }
        assert!(
            mid_sum / 20.0 < 0.1 * (centroid_sum / 20.0),
            "zone B density {} vs centroid {}",
            mid_sum / 20.0,
            centroid_sum / 20.0
        );
    }

    #[test]
    fn suite_covers_the_cartesian_product() {
        let cfg = SimConfig::default();
        let specs = suite_27(&cfg, 1);
        assert_eq!(specs.len(), 27);
        let goals: Vec<f64> = specs.iter().map(|s| s.goal_distance).collect();
        assert!(goals.iter().any(|&g| (g - 60.0).abs() < 1e-9));
        assert!(goals.iter().any(|&g| (g - 90.0).abs() < 1e-9));
        assert!(goals.iter().any(|&g| (g - 120.0).abs() < 1e-9));
        let ids: std::collections::BTreeSet<String> = specs.iter().map(env_id).collect();
        assert_eq!(ids.len(), 27, "env ids must be unique");
    }

    #[test]
    fn key_value_roundtrip() {
        let cfg = SimConfig::default();
        let spec = EnvSpec::clustered(0.45, 8.0, 90.0, 42, &cfg);
        let text = spec.to_key_values();
        let parsed = EnvSpec::from_key_values(&text).unwrap();
        assert_eq!(parsed.seed, 42);
        assert!((parsed.obstacle_density - 0.45).abs() < 1e-12);
        assert!((parsed.spread - 8.0).abs() < 1e-12);
        assert!((parsed.goal_distance - 90.0).abs() < 1e-12);
        assert!(EnvSpec::from_key_values("nonsense=1\n").is_err());
        assert!(EnvSpec::from_key_values("density=2.0\n").is_err());
    }

    #[test]
    fn measured_min_gap_reflects_grid_geometry() {
        let cfg = full_cfg();
        let spec = EnvSpec::clustered(0.6, 50.0, 600.0, 3, &cfg);
        let gt = generate_environment(&spec);
        // Adjacent cells: centers 10 m apart, radii 2.5 m -> 5 m surface gap.
        let min_gap = gt.measured_min_gap();
        assert!(min_gap >= 5.0 - 1e-9, "min gap {min_gap}");
    }
}
