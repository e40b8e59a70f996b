//! Simulation constants and the global scale model.
//!
//! Every distance-valued parameter is stored at full scale and converted on
//! access: lengths, velocities and accelerations multiply by `scale`, volumes
//! by `scale^3`. Times are scale-invariant, so a desk-scale run (default
//! scale 0.1) is an exact miniature of the full-scale system: voxel counts,
//! stage workloads and mission durations all match.

/// Number of admissible precision levels: vox_min * 2^n for n in 0..6.
pub const PRECISION_LEVELS: usize = 6;

#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Global geometric scale (1.0 = full scale, 0.1 = desk scale).
    pub scale: f64,
    /// Finest voxel size at full scale, bottom of the precision ladder.
    pub vox_min_full: f64,
    /// Dynamic-range caps for the three stage volumes, full-scale m^3.
    pub v0_cap_full: f64,
    pub v1_cap_full: f64,
    pub v2_cap_full: f64,
    /// Static pipeline knobs, full-scale units.
    pub static_precision_full: f64,
    pub static_v0_full: f64,
    pub static_v1_full: f64,
    pub static_v2_full: f64,
    /// Velocity caps per mode and acceleration limit, full-scale m/s, m/s^2.
    pub v_max_baseline_full: f64,
    pub v_max_adaptive_full: f64,
    pub a_max_full: f64,
    /// Velocity floor substituted when budgeting at hover.
    pub v_floor_full: f64,
    /// Sensor geometry: range and angular resolution derived from vox_min.
    pub sensor_range_full: f64,
    pub elevation_rings: usize,
    /// Fixed latency overheads, seconds (multiplied by `latency_scale`).
    pub pointcloud_overhead_s: f64,
    pub runtime_reserve_s: f64,
    pub latency_scale: f64,
    /// Vehicle body and energy model.
    pub body_radius_full: f64,
    pub hover_power_w: f64,
    /// Stopping-distance polynomial |c2| v^2 + |c1| v + |c0|, full scale.
    pub d_stop_coeffs: [f64; 3],
    /// World generator defaults, full-scale meters.
    pub grid_size_full: f64,
    pub gap_size_full: f64,
    pub arena_height_cells: f64,
    /// Planner parameters.
    pub goal_bias: f64,
    pub steer_factor: f64,
    pub rewire_gamma_factor: f64,
    pub max_plan_iters: usize,
    /// Mission time cap as a multiple of straight-line distance / v_max.
    pub sim_time_cap_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            scale: 0.1,
            vox_min_full: 0.3,
            v0_cap_full: 60_000.0,
            v1_cap_full: 1_000_000.0,
            v2_cap_full: 1_000_000.0,
            static_precision_full: 0.3,
            static_v0_full: 46_000.0,
            static_v1_full: 150_000.0,
            static_v2_full: 150_000.0,
            v_max_baseline_full: 0.5,
            v_max_adaptive_full: 6.0,
            a_max_full: 4.5,
            v_floor_full: 0.1,
            sensor_range_full: 20.0,
            elevation_rings: 3,
            pointcloud_overhead_s: 0.210,
            runtime_reserve_s: 0.050,
            latency_scale: 1.0,
            body_radius_full: 0.6,
            hover_power_w: 478.0,
            d_stop_coeffs: [0.20, 0.36, 0.055],
            grid_size_full: 10.0,
            gap_size_full: 6.0,
            arena_height_cells: 2.0,
            goal_bias: 0.05,
            steer_factor: 4.0,
            rewire_gamma_factor: 6.0,
            max_plan_iters: 600,
            sim_time_cap_factor: 8.0,
        }
    }
}

impl SimConfig {
    pub fn full_scale() -> Self {
        SimConfig { scale: 1.0, ..Default::default() }
    }

    pub fn with_scale(scale: f64) -> Self {
        SimConfig { scale, ..Default::default() }
    }

    pub fn vox_min(&self) -> f64 {
        self.vox_min_full * self.scale
    }

    /// Admissible precision ladder in scaled meters, finest first.
    pub fn precision_ladder(&self) -> Vec<f64> {
        (0..PRECISION_LEVELS).map(|n| self.vox_min() * (1u32 << n) as f64).collect()
    }

    /// Coarsest admissible precision; also the profiler gap sentinel.
    pub fn precision_max(&self) -> f64 {
        self.vox_min() * (1u32 << (PRECISION_LEVELS - 1)) as f64
    }

    pub fn sensor_range(&self) -> f64 {
        self.sensor_range_full * self.scale
    }

    pub fn body_radius(&self) -> f64 {
        self.body_radius_full * self.scale
    }

    pub fn grid_size(&self) -> f64 {
        self.grid_size_full * self.scale
    }

    pub fn gap_size(&self) -> f64 {
        self.gap_size_full * self.scale
    }

    pub fn a_max(&self) -> f64 {
        self.a_max_full * self.scale
    }

    pub fn v_floor(&self) -> f64 {
        self.v_floor_full * self.scale
    }

    pub fn v_max(&self, adaptive: bool) -> f64 {
        if adaptive { self.v_max_adaptive_full * self.scale } else { self.v_max_baseline_full * self.scale }
    }

    pub fn volume_scale(&self) -> f64 {
        self.scale * self.scale * self.scale
    }

    /// Azimuth step sized so adjacent rays are one fine voxel apart at max range.
    pub fn sensor_azimuth_step(&self) -> f64 {
        self.vox_min_full / self.sensor_range_full
    }

    pub fn pointcloud_overhead(&self) -> f64 {
        self.pointcloud_overhead_s * self.latency_scale
    }

    pub fn runtime_reserve(&self) -> f64 {
        self.runtime_reserve_s * self.latency_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_spans_fine_to_coarse() {
        let cfg = SimConfig::full_scale();
        let ladder = cfg.precision_ladder();
        assert_eq!(ladder.len(), 6);
        assert!((ladder[0] - 0.3).abs() < 1e-12);
        assert!((ladder[5] - 9.6).abs() < 1e-12);
    }

    #[test]
    fn desk_scale_shrinks_ladder_tenfold() {
        let cfg = SimConfig::default();
        assert!((cfg.vox_min() - 0.03).abs() < 1e-12);
        assert!((cfg.precision_max() - 0.96).abs() < 1e-12);
        assert!((cfg.sensor_range() - 2.0).abs() < 1e-12);
    }
}
