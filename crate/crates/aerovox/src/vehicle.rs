//! Vehicle dynamics: stopping-distance model, acceleration-limited path
//! following, ground-truth collision checks, and mission energy.

use crate::config::SimConfig;
use crate::geom::Vec3;
use crate::planning::Trajectory;
use crate::world::GroundTruth;

/// Kinematic state of the drone.
#[derive(Debug, Clone, Copy)]
pub struct VehicleState {
    pub position: Vec3,
    /// Speed along the current trajectory, world units/s.
    pub speed: f64,
    /// Yaw in radians, from the last motion direction.
    pub heading: f64,
}

impl VehicleState {
    pub fn at_rest(position: Vec3, heading: f64) -> Self {
        VehicleState { position, speed: 0.0, heading }
    }
}

/// Worst-case distance to a full stop from speed `v`, covering reaction,
/// braking, and controller margins. Quadratic in speed; covariant with the
/// world scale so the same model serves any arena size.
pub fn stopping_distance(v: f64, cfg: &SimConfig) -> f64 {
    let s = cfg.scale;
    let [c0, c1, c2] = cfg.d_stop_coeffs;
    let vf = v / s;
    s * (c0 + c1 * vf + c2 * vf * vf)
}

/// Result of advancing along a trajectory for a time slice.
#[derive(Debug, Clone)]
pub struct AdvanceOutcome {
    pub arc: f64,
    pub speed: f64,
    pub traveled: f64,
    /// True when the vehicle reached the end of the trajectory.
    pub arrived: bool,
    /// Sampled positions swept during the slice, for collision checks.
    pub sweep: Vec<Vec3>,
}

/// Advances along `traj` from arc position `arc` at current `speed` for
/// `dt` seconds. The tracked target speed at arc s is
/// min(v_cmd, planned velocity at s); acceleration is clamped to ±a_max.
/// Integration uses short analytic constant-acceleration substeps.
pub fn advance_along(
    traj: &Trajectory,
    arc: f64,
    speed: f64,
    v_cmd: f64,
    a_max: f64,
    dt: f64,
) -> AdvanceOutcome {
    let total = traj.total_length();
    let mut s = arc;
    let mut v = speed.max(0.0);
    let mut traveled = 0.0;
    let mut sweep = vec![traj.point_at(s)];
    if total - s < 1e-12 || dt <= 0.0 {
        return AdvanceOutcome { arc: s, speed: if total - s < 1e-12 { 0.0 } else { v }, traveled, arrived: total - s < 1e-12, sweep };
    }
    let n = (dt / 0.01).ceil().max(1.0) as usize;
    let h = dt / n as f64;
    let mut arrived = false;
    for _ in 0..n {
        // Sample the planned envelope at the position this sub-step could
        // reach, not at the current arc: a profile that ramps from rest is
        // zero exactly where it starts rising, and chasing that value would
        // pin the vehicle at the start forever.
        let probe = (s + v * h + 0.5 * a_max * h * h).min(total);
        let target = v_cmd.min(traj.velocity_at(probe)).max(0.0);
        let a = ((target - v) / h).clamp(-a_max, a_max);
        let disp = (v * h + 0.5 * a * h * h).max(0.0);
        v = (v + a * h).max(0.0);
        s += disp;
        traveled += disp;
        if s >= total - 1e-12 {
            traveled -= s - total;
            s = total;
            v = 0.0;
            arrived = true;
            sweep.push(traj.point_at(s));
            break;
        }
        sweep.push(traj.point_at(s));
    }
    AdvanceOutcome { arc: s, speed: v, traveled, arrived, sweep }
}

/// True when the body sphere swept along segment a->b intersects any pillar
/// (open intersection: touching exactly does not count).
pub fn check_collision(gt: &GroundTruth, a: Vec3, b: Vec3, body_radius: f64) -> bool {
    for obs in &gt.obstacles {
        let z_lo = obs.base.z;
        let z_hi = obs.base.z + obs.height;
        let seg_lo = a.z.min(b.z) - body_radius;
        let seg_hi = a.z.max(b.z) + body_radius;
        if seg_hi <= z_lo || seg_lo >= z_hi {
            continue;
        }
        let center = Vec3::new(obs.base.x, obs.base.y, 0.0);
        let a2 = Vec3::new(a.x, a.y, 0.0);
        let b2 = Vec3::new(b.x, b.y, 0.0);
        if center.distance_to_segment(a2, b2) < obs.radius + body_radius {
            return true;
        }
    }
    false
}

/// Energy spent airborne: hover power times flight time.
pub fn mission_energy(flight_time_s: f64, cfg: &SimConfig) -> f64 {
    cfg.hover_power_w * flight_time_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Aabb;
    use crate::planning::Waypoint;
    use crate::world::{EnvSpec, Obstacle};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn full_cfg() -> SimConfig {
        SimConfig::full_scale()
    }

    #[test]
    fn stopping_distance_reference_points() {
        let cfg = full_cfg();
        assert_relative_eq!(stopping_distance(0.0, &cfg), 0.20, max_relative = 1e-12);
        assert_relative_eq!(stopping_distance(2.0, &cfg), 1.14, max_relative = 1e-12);
        assert_relative_eq!(stopping_distance(6.0, &cfg), 4.34, max_relative = 1e-12);
    }

    #[test]
    fn stopping_distance_is_scale_covariant() {
        let full = full_cfg();
        let desk = SimConfig::default();
        for v_full in [0.0, 1.0, 2.0, 4.0, 6.0] {
            let d_full = stopping_distance(v_full, &full);
            let d_desk = stopping_distance(v_full * desk.scale, &desk);
            assert_relative_eq!(d_desk, d_full * desk.scale, max_relative = 1e-12);
        }
    }

    #[test]
    fn braking_capability_covers_the_model() {
        // Kinematic braking distance stays within the modeled stop distance
        // for every speed the governor can command.
        let cfg = full_cfg();
        for i in 0..=60 {
            let v = i as f64 * 0.1;
            assert!(
                v * v / (2.0 * cfg.a_max_full) <= stopping_distance(v, &cfg) + 1e-12,
                "braking from {v} exceeds the model"
            );
        }
    }

    fn line_traj(len: f64, v_plan: f64) -> Trajectory {
        Trajectory {
            waypoints: vec![
                Waypoint { position: Vec3::ZERO, velocity: v_plan, visibility: 0.0 },
                Waypoint { position: Vec3::new(len, 0.0, 0.0), velocity: v_plan, visibility: 0.0 },
            ],
            reaches_goal: true,
        }
    }

    #[test]
    fn advance_from_rest_matches_constant_acceleration() {
        let traj = line_traj(100.0, 10.0);
        let out = advance_along(&traj, 0.0, 0.0, 2.0, 2.0, 1.0);
        assert_relative_eq!(out.speed, 2.0, max_relative = 1e-9);
        assert_relative_eq!(out.traveled, 1.0, max_relative = 1e-6);
        assert!(!out.arrived);
    }

    #[test]
    fn advance_clamps_at_the_path_end() {
        let traj = line_traj(0.5, 5.0);
        let out = advance_along(&traj, 0.0, 2.0, 5.0, 100.0, 10.0);
        assert!(out.arrived);
        assert_eq!(out.speed, 0.0);
        assert_relative_eq!(out.arc, 0.5, max_relative = 1e-12);
        assert_relative_eq!(out.traveled, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn advance_on_a_finished_trajectory_is_a_no_op() {
        let traj = line_traj(1.0, 2.0);
        let out = advance_along(&traj, 1.0, 0.0, 2.0, 2.0, 1.0);
        assert!(out.arrived);
        assert_eq!(out.traveled, 0.0);
        assert_eq!(out.arc, 1.0);
    }

    #[test]
    fn zero_command_brakes_to_a_stop() {
        let traj = line_traj(100.0, 10.0);
        let out = advance_along(&traj, 0.0, 4.0, 0.0, 2.0, 5.0);
        assert!(out.speed < 1e-9);
        // Braking distance v^2/2a = 4.0.
        assert_relative_eq!(out.traveled, 4.0, max_relative = 1e-2);
    }

    #[test]
    fn collision_respects_body_radius_and_height() {
        let spec = EnvSpec::clustered(0.3, 4.0, 60.0, 7, &full_cfg());
        let gt = GroundTruth {
            obstacles: vec![Obstacle { base: Vec3::new(5.0, 0.0, 0.0), radius: 1.0, height: 10.0 }],
            start: Vec3::ZERO,
            goal: Vec3::new(10.0, 0.0, 0.0),
            zone_boundaries: [3.0, 6.0],
            bounds: Aabb::new(Vec3::new(-10.0, -10.0, 0.0), Vec3::new(20.0, 10.0, 10.0)),
            grid_size: 10.0,
            spec,
        };
        // Straight through the pillar.
        assert!(check_collision(&gt, Vec3::new(0.0, 0.0, 5.0), Vec3::new(10.0, 0.0, 5.0), 0.5));
        // Passing wide of it.
        assert!(!check_collision(&gt, Vec3::new(0.0, 3.0, 5.0), Vec3::new(10.0, 3.0, 5.0), 0.5));
        // Grazing at exactly radius + body is an open intersection: no hit.
        assert!(!check_collision(&gt, Vec3::new(0.0, 1.5, 5.0), Vec3::new(10.0, 1.5, 5.0), 0.5));
        assert!(check_collision(&gt, Vec3::new(0.0, 1.45, 5.0), Vec3::new(10.0, 1.45, 5.0), 0.5));
        // Flying above the pillar clears it.
        assert!(!check_collision(&gt, Vec3::new(0.0, 0.0, 11.0), Vec3::new(10.0, 0.0, 11.0), 0.5));
    }

    #[test]
    fn mission_energy_is_power_times_time() {
        let cfg = full_cfg();
        assert_relative_eq!(mission_energy(10.0, &cfg), cfg.hover_power_w * 10.0);
    }

    proptest! {
        #[test]
        fn stopping_distance_is_monotone_and_convex(v in 0.0f64..6.0, dv in 0.01f64..1.0) {
            let cfg = full_cfg();
            let d0 = stopping_distance(v, &cfg);
            let d1 = stopping_distance(v + dv, &cfg);
            let d2 = stopping_distance(v + 2.0 * dv, &cfg);
            prop_assert!(d1 > d0);
            prop_assert!(d2 - d1 >= d1 - d0 - 1e-12);
        }

        #[test]
        fn advance_never_exceeds_command_or_plan(
            v0 in 0.0f64..3.0,
            v_cmd in 0.0f64..4.0,
            dt in 0.01f64..2.0,
        ) {
            let v_plan = 2.5;
            let traj = line_traj(50.0, v_plan);
            let out = advance_along(&traj, 0.0, v0, v_cmd, 3.0, dt);
            let cap = v_cmd.min(v_plan).max(v0);
            prop_assert!(out.speed <= cap + 1e-9);
            prop_assert!(out.traveled <= cap.max(v0) * dt + 1e-9);
            prop_assert!(out.traveled >= 0.0);
        }
    }
}
