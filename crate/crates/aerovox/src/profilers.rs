//! Spatial profilers: lightweight, read-only extractors that turn the map,
//! the latest scan, and the current trajectory into the features the
//! governor consumes (gap widths, clearance distances, space volumes).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::config::SimConfig;
use crate::geom::Vec3;
use crate::mapping::{CellState, OccupancyTree, PointCloud};
use crate::planning::Trajectory;

/// One decision's worth of spatial features.
#[derive(Debug, Clone, Copy)]
pub struct ProfileSnapshot {
    pub scan: u32,
    pub speed: f64,
    /// Narrowest gap between angularly adjacent obstacle clusters ahead.
    pub g_min: f64,
    /// Mean gap between angularly adjacent obstacle clusters ahead.
    pub g_avg: f64,
    /// Distance to the nearest known-occupied voxel surface.
    pub d_obs: f64,
    /// Free distance along the current trajectory before unknown space.
    pub d_unknown: f64,
    /// Volume of the current sensor frustum, truncated at hits.
    pub v_sensor: f64,
    /// Total known volume in the map.
    pub v_map: f64,
}

pub fn profile_csv_header() -> &'static str {
    "scan,speed,g_min,g_avg,d_obs,d_unknown,v_sensor,v_map"
}

impl ProfileSnapshot {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.scan, self.speed, self.g_min, self.g_avg, self.d_obs, self.d_unknown, self.v_sensor, self.v_map
        );
        s
    }
}

/// Gap profile: clusters occupied leaves near the drone (single linkage in
/// the horizontal plane at twice the finest voxel), orders the clusters
/// ahead of the drone by bearing, and measures the horizontal distance
/// between angularly adjacent clusters. Returns (g_min, g_avg); both fall
/// back to `sentinel` when fewer than two clusters lie ahead.
pub fn profile_gaps(
    tree: &OccupancyTree,
    pos: Vec3,
    heading: f64,
    sensor_range: f64,
    vox_min: f64,
    sentinel: f64,
) -> (f64, f64) {
    // Every distance below is horizontal, so occupied leaves stacked in the
    // same XY column are redundant; keeping one per column turns a tall
    // fine-voxel pillar shell into its footprint ring.
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    let centers: Vec<Vec3> = tree
        .occupied_leaves_within(pos, sensor_range)
        .into_iter()
        .map(|(center, _size)| Vec3::new(center.x, center.y, 0.0))
        .filter(|c| seen.insert((c.x.to_bits(), c.y.to_bits())))
        .collect();
    if centers.len() < 2 {
        return (sentinel, sentinel);
    }

    // Single-linkage clustering via a bucket grid at the linking distance.
    let link = 2.0 * vox_min;
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (i, c) in centers.iter().enumerate() {
        buckets.entry(((c.x / link).floor() as i64, (c.y / link).floor() as i64)).or_default().push(i);
    }
    let mut cluster = vec![usize::MAX; centers.len()];
    let mut n_clusters = 0usize;
    for start in 0..centers.len() {
        if cluster[start] != usize::MAX {
            continue;
        }
        let id = n_clusters;
        n_clusters += 1;
        let mut stack = vec![start];
        cluster[start] = id;
        while let Some(i) = stack.pop() {
            let c = centers[i];
            let (bx, by) = ((c.x / link).floor() as i64, (c.y / link).floor() as i64);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(ids) = buckets.get(&(bx + dx, by + dy)) {
                        for &j in ids {
                            if cluster[j] == usize::MAX && (centers[j] - c).norm_xy() <= link {
                                cluster[j] = id;
                                stack.push(j);
                            }
                        }
                    }
                }
            }
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &cid) in cluster.iter().enumerate() {
        members[cid].push(i);
    }
    // Keep clusters whose centroid lies in the forward half-space.
    let fwd = Vec3::new(heading.cos(), heading.sin(), 0.0);
    let mut ahead: Vec<(f64, usize)> = Vec::new();
    for (cid, ids) in members.iter().enumerate() {
        let mut centroid = Vec3::ZERO;
        for &i in ids {
            centroid = centroid + centers[i];
        }
        centroid = centroid / ids.len() as f64;
        let rel = centroid - pos;
        if rel.x * fwd.x + rel.y * fwd.y >= 0.0 {
            ahead.push((rel.y.atan2(rel.x), cid));
        }
    }
    if ahead.len() < 2 {
        return (sentinel, sentinel);
    }
    ahead.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

    let mut gaps = Vec::with_capacity(ahead.len() - 1);
    for pair in ahead.windows(2) {
        let (a, b) = (pair[0].1, pair[1].1);
        let mut best = f64::INFINITY;
        for &i in &members[a] {
            for &j in &members[b] {
                best = best.min((centers[i] - centers[j]).norm_xy());
            }
        }
        gaps.push(best.min(sentinel));
    }
    let g_min = gaps.iter().cloned().fold(f64::INFINITY, f64::min);
    let g_avg = gaps.iter().sum::<f64>() / gaps.len() as f64;
    (g_min, g_avg)
}

/// Distance profile: (d_obs, d_unknown). d_obs is the free-space radius to
/// the nearest known-occupied surface; d_unknown is how far the drone can
/// ride its current trajectory through known-Free space, capped at the
/// remaining path length. Without a trajectory it is zero.
pub fn profile_distances(
    tree: &OccupancyTree,
    pos: Vec3,
    traj_arc: Option<(&Trajectory, f64)>,
    vox_min: f64,
) -> (f64, f64) {
    let d_obs = tree.nearest_occupied_distance(pos);
    let d_unknown = match traj_arc {
        None => 0.0,
        Some((traj, arc)) => {
            let total = traj.total_length();
            let remaining = (total - arc).max(0.0);
            let steps = (remaining / vox_min).ceil() as usize;
            let mut d = remaining;
            for k in 0..=steps {
                let s = (arc + k as f64 * vox_min).min(total);
                if tree.state_at(traj.point_at(s)) != CellState::Free {
                    d = (s - arc).max(0.0);
                    break;
                }
            }
            d
        }
    };
    (d_obs, d_unknown)
}

/// Volume profile: (v_sensor, v_map). v_sensor integrates the latest scan's
/// per-ray cones truncated at their hit distances; v_map is the map's known
/// volume. Both are read-only.
pub fn profile_volumes(tree: &OccupancyTree, cloud: &PointCloud) -> (f64, f64) {
    let mut sum = 0.0;
    for p in &cloud.points {
        let d = (*p - cloud.origin).norm();
        sum += d.powi(3);
    }
    sum += cloud.miss_dirs.len() as f64 * cloud.max_range.powi(3);
    let v_sensor = cloud.ray_solid_angle * sum / 3.0;
    (v_sensor, tree.known_volume())
}

/// Runs all three profilers and assembles a snapshot.
pub fn profile(
    cfg: &SimConfig,
    tree: &OccupancyTree,
    cloud: &PointCloud,
    pos: Vec3,
    heading: f64,
    speed: f64,
    traj_arc: Option<(&Trajectory, f64)>,
    scan: u32,
) -> ProfileSnapshot {
    profile_with(cfg, tree, cloud, pos, heading, speed, traj_arc, scan, true)
}

/// `profile` with the gap clustering made optional. Gap features feed only
/// the adaptive governor; a static-knob mode can skip the scan-wide
/// clustering pass and carry the open-space sentinels instead.
#[allow(clippy::too_many_arguments)]
pub fn profile_with(
    cfg: &SimConfig,
    tree: &OccupancyTree,
    cloud: &PointCloud,
    pos: Vec3,
    heading: f64,
    speed: f64,
    traj_arc: Option<(&Trajectory, f64)>,
    scan: u32,
    gap_features: bool,
) -> ProfileSnapshot {
    let sentinel = cfg.precision_max();
    let (g_min, g_avg) = if gap_features {
        profile_gaps(tree, pos, heading, cfg.sensor_range(), cfg.vox_min(), sentinel)
    } else {
        (sentinel, sentinel)
    };
    let (d_obs, d_unknown) = profile_distances(tree, pos, traj_arc, cfg.vox_min());
    let (v_sensor, v_map) = profile_volumes(tree, cloud);
    ProfileSnapshot { scan, speed, g_min, g_avg, d_obs, d_unknown, v_sensor, v_map }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Aabb;
    use crate::mapping::{downsample_cloud, integrate, sense, MapBudget, SensorRig};
    use crate::planning::Waypoint;
    use crate::world::{generate_environment, EnvSpec};
    use approx::assert_relative_eq;

    fn fresh_tree() -> OccupancyTree {
        OccupancyTree::new(Aabb::new(Vec3::new(-20.0, -20.0, 0.0), Vec3::new(20.0, 20.0, 10.0)), 0.3)
    }

    fn column(tree: &mut OccupancyTree, x: f64, y: f64) {
        for k in 0..3 {
            tree.mark_occupied(Vec3::new(x, y, 1.0 + 0.3 * k as f64), 0.3, 0);
        }
    }

    #[test]
    fn two_clusters_give_their_separation() {
        let mut tree = fresh_tree();
        column(&mut tree, 5.0, -3.0);
        column(&mut tree, 5.0, 3.0);
        let (g_min, g_avg) = profile_gaps(&tree, Vec3::new(0.0, 0.0, 1.0), 0.0, 20.0, 0.3, 9.6);
        assert!((g_min - 6.0).abs() <= 2.0 * 0.3, "g_min {g_min}");
        assert_relative_eq!(g_avg, g_min);
    }

    #[test]
    fn three_clusters_average_adjacent_gaps() {
        let mut tree = fresh_tree();
        // Separations chosen as multiples of the voxel pitch so the snapped
        // centers sit exactly 4.2 and 7.8 apart.
        column(&mut tree, 5.0, -6.0);
        column(&mut tree, 5.0, -1.8);
        column(&mut tree, 5.0, 6.0);
        let (g_min, g_avg) = profile_gaps(&tree, Vec3::new(0.0, 0.0, 1.0), 0.0, 20.0, 0.3, 9.6);
        assert_relative_eq!(g_min, 4.2, max_relative = 1e-12);
        assert_relative_eq!(g_avg, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn clustering_links_nearby_voxels() {
        let mut tree = fresh_tree();
        // One ragged pillar: all within the linking distance, one cluster.
        column(&mut tree, 5.0, 0.0);
        column(&mut tree, 5.3, 0.3);
        column(&mut tree, 5.6, 0.0);
        let (g_min, g_avg) = profile_gaps(&tree, Vec3::new(0.0, 0.0, 1.0), 0.0, 20.0, 0.3, 9.6);
        assert_eq!((g_min, g_avg), (9.6, 9.6), "a single cluster has no gaps");
    }

    #[test]
    fn gaps_ignore_structure_behind_the_drone() {
        let mut tree = fresh_tree();
        column(&mut tree, -5.0, -3.0);
        column(&mut tree, -5.0, 3.0);
        let (g_min, g_avg) = profile_gaps(&tree, Vec3::new(0.0, 0.0, 1.0), 0.0, 20.0, 0.3, 9.6);
        assert_eq!((g_min, g_avg), (9.6, 9.6));
    }

    #[test]
    fn empty_map_profiles_to_sentinels_and_infinite_clearance() {
        let tree = fresh_tree();
        let (g_min, g_avg) = profile_gaps(&tree, Vec3::new(0.0, 0.0, 1.0), 0.0, 20.0, 0.3, 9.6);
        assert_eq!((g_min, g_avg), (9.6, 9.6));
        let (d_obs, d_unknown) = profile_distances(&tree, Vec3::new(0.0, 0.0, 1.0), None, 0.3);
        assert_eq!(d_obs, f64::INFINITY);
        assert_eq!(d_unknown, 0.0);
    }

    #[test]
    fn clearance_reaches_the_nearest_voxel_surface() {
        let mut tree = fresh_tree();
        tree.mark_occupied(Vec3::new(3.0, 0.0, 1.0), 0.3, 0);
        let (d_obs, _) = profile_distances(&tree, Vec3::new(0.0, 0.0, 1.0), None, 0.3);
        let center = tree.state_at(Vec3::new(3.0, 0.0, 1.0));
        assert_eq!(center, CellState::Occupied);
        // Distance to the voxel surface: center distance minus half a voxel.
        let expect = Vec3::new(3.0, 0.0, 1.0).distance(Vec3::new(0.0, 0.0, 1.0));
        assert!((d_obs - expect).abs() <= 0.3, "d_obs {d_obs} vs center {expect}");
        assert!(d_obs < expect);
    }

    fn straight_traj(from: Vec3, to: Vec3) -> Trajectory {
        Trajectory {
            waypoints: vec![
                Waypoint { position: from, velocity: 1.0, visibility: 0.0 },
                Waypoint { position: to, velocity: 1.0, visibility: 0.0 },
            ],
            reaches_goal: true,
        }
    }

    #[test]
    fn unknown_distance_stops_at_the_free_frontier() {
        let mut tree = fresh_tree();
        for k in 0..20 {
            tree.mark_free(Vec3::new(0.15 + 0.3 * k as f64, 0.15, 1.05), 0.3, 0);
        }
        let traj = straight_traj(Vec3::new(0.15, 0.15, 1.05), Vec3::new(12.15, 0.15, 1.05));
        let (_, d_unknown) = profile_distances(&tree, traj.waypoints[0].position, Some((&traj, 0.0)), 0.3);
        assert!((d_unknown - 6.0).abs() <= 0.3, "frontier at ~6, got {d_unknown}");
        let (_, from_two) = profile_distances(&tree, Vec3::new(2.15, 0.15, 1.05), Some((&traj, 2.0)), 0.3);
        assert!((from_two - 4.0).abs() <= 0.3, "frontier at ~4 from arc 2, got {from_two}");
    }

    #[test]
    fn unknown_distance_caps_at_remaining_length() {
        let mut tree = fresh_tree();
        for k in 0..40 {
            tree.mark_free(Vec3::new(0.15 + 0.3 * k as f64, 0.15, 1.05), 0.3, 0);
        }
        let traj = straight_traj(Vec3::new(0.15, 0.15, 1.05), Vec3::new(3.15, 0.15, 1.05));
        let (_, d_unknown) = profile_distances(&tree, traj.waypoints[0].position, Some((&traj, 1.0)), 0.3);
        assert_relative_eq!(d_unknown, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn sensor_volume_truncates_at_hits() {
        let cloud_all_miss = PointCloud {
            origin: Vec3::ZERO,
            heading: 0.0,
            max_range: 10.0,
            points: vec![],
            miss_dirs: vec![Vec3::new(1.0, 0.0, 0.0); 8],
            ray_solid_angle: 0.01,
            rays_total: 8,
        };
        let tree = fresh_tree();
        let (v_all, _) = profile_volumes(&tree, &cloud_all_miss);
        assert_relative_eq!(v_all, cloud_all_miss.frustum_volume(), max_relative = 1e-12);
        assert_relative_eq!(v_all, 8.0 * 0.01 * 1000.0 / 3.0, max_relative = 1e-12);

        let cloud_hit = PointCloud {
            origin: Vec3::ZERO,
            heading: 0.0,
            max_range: 10.0,
            points: vec![Vec3::new(2.0, 0.0, 0.0)],
            miss_dirs: vec![Vec3::new(1.0, 0.0, 0.0); 7],
            ray_solid_angle: 0.01,
            rays_total: 8,
        };
        let (v_hit, _) = profile_volumes(&tree, &cloud_hit);
        assert!(v_hit < v_all);
        assert_relative_eq!(v_hit, 0.01 * (7.0 * 1000.0 + 8.0) / 3.0, max_relative = 1e-12);
    }

    #[test]
    fn map_volume_is_nondecreasing_and_profiling_is_readonly() {
        let cfg = SimConfig::full_scale();
        let spec = EnvSpec::clustered(0.3, 4.0, 60.0, 11, &cfg);
        let gt = generate_environment(&spec);
        let mut tree = OccupancyTree::new(gt.bounds, cfg.vox_min());
        let rig = SensorRig::from_config(&cfg);
        let mut prev = 0.0;
        let mut pos = gt.start;
        let dir = (gt.goal - gt.start).unit().unwrap();
        for scan in 0..5 {
            let cloud = sense(&gt, pos, 0.0, &rig);
            let ds = downsample_cloud(&cloud, cfg.vox_min());
            integrate(
                &mut tree,
                &ds,
                MapBudget { precision: cfg.vox_min(), volume: f64::INFINITY },
                &[pos],
                scan,
            );
            let before_leaves = tree.leaf_count();
            let before_known = tree.known_volume();
            let snap = profile(&cfg, &tree, &cloud, pos, 0.0, 1.0, None, scan);
            assert_eq!(tree.leaf_count(), before_leaves, "profiling must not touch the map");
            assert_eq!(tree.known_volume(), before_known);
            assert!(snap.v_map >= prev, "known volume shrank: {} -> {}", prev, snap.v_map);
            assert!(snap.v_sensor <= cloud.frustum_volume() + 1e-9);
            prev = snap.v_map;
            pos = pos + dir * 2.0;
        }
        assert!(prev > 0.0);
    }

    #[test]
    fn snapshot_csv_row_matches_header_arity() {
        let snap = ProfileSnapshot {
            scan: 3,
            speed: 1.0,
            g_min: 2.0,
            g_avg: 3.0,
            d_obs: 4.0,
            d_unknown: 5.0,
            v_sensor: 6.0,
            v_map: 7.0,
        };
        let header_fields = profile_csv_header().split(',').count();
        assert_eq!(snap.csv_row().split(',').count(), header_fields);
        assert!(snap.csv_row().starts_with("3,1.000000,2.000000"));
    }
}
