use aerovox::config::SimConfig;
use aerovox::mapping::{integrate, sense, CellState, MapBudget, OccupancyTree, SensorRig};
use aerovox::world::{env_id, generate_environment, suite_27};
use aerovox::Vec3;

fn main() {
    let cfg = SimConfig::with_scale(0.1);
    let spec = suite_27(&cfg, 1)
        .into_iter()
        .find(|s| env_id(s) == "d30_s080_g0600")
        .unwrap();
    let gt = generate_environment(&spec);

    let text = std::fs::read_to_string("/tmp/suite_smoke/missions/d30_s080_g0600_adaptive_s1.csv").unwrap();
    let mut rows: Vec<(f64, f64, Vec3)> = Vec::new();
    for line in text.lines().skip(1).take(40) {
        if line.starts_with('#') {
            break;
        }
        let f: Vec<f64> = line.split(',').filter_map(|t| t.parse().ok()).collect();
        // zone column is a letter, so numeric fields shift by one.
        let p0 = f[11];
        let v0 = f[14];
        let pos = Vec3::new(f[25], f[26], f[27]);
        rows.push((p0, v0, pos));
    }

    let rig = SensorRig::from_config(&cfg);
    let mut tree = OccupancyTree::new(gt.bounds, cfg.vox_min());
    for (i, (p0, v0, pos)) in rows.iter().enumerate() {
        let cloud = sense(&gt, *pos, 0.0, &rig);
        integrate(&mut tree, &cloud, MapBudget { precision: *p0, volume: *v0 }, &[gt.goal], i as u32);
    }
    let last = rows.last().unwrap().2;
    println!("replayed {} scans, final pos {:?}", rows.len(), last);

    let occ = tree.occupied_leaves_within(last, 0.5);
    println!("occupied leaves within 0.5:");
    let mut sorted: Vec<(f64, Vec3, f64)> = occ
        .iter()
        .map(|(min, size)| {
            let c = *min + Vec3::new(size / 2.0, size / 2.0, size / 2.0);
            // distance from pos to the cube surface
            let dx = (min.x - last.x).max(last.x - (min.x + size)).max(0.0);
            let dy = (min.y - last.y).max(last.y - (min.y + size)).max(0.0);
            let dz = (min.z - last.z).max(last.z - (min.z + size)).max(0.0);
            ((dx * dx + dy * dy + dz * dz).sqrt(), c, *size)
        })
        .collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for (d, c, size) in sorted.iter().take(8) {
        let real = gt
            .obstacles
            .iter()
            .map(|o| ((Vec3::new(c.x, c.y, 0.0) - o.base).norm_xy() - o.radius))
            .fold(f64::INFINITY, f64::min);
        println!("  surf_d {:.4} center ({:.3},{:.3},{:.3}) size {:.2} real_pillar_clearance {:.3}", d, c.x, c.y, c.z, size, real);
    }

    // Now hover-scan 5 more times at fine precision from the final pose and
    // see whether the nearest block heals.
    for extra in 0..5u32 {
        let cloud = sense(&gt, last, 0.0, &rig);
        integrate(
            &mut tree,
            &cloud,
            MapBudget { precision: cfg.vox_min(), volume: 1.0 },
            &[gt.goal],
            rows.len() as u32 + extra,
        );
        let occ = tree.occupied_leaves_within(last, 0.5);
        let nearest = occ
            .iter()
            .map(|(min, size)| {
                let dx = (min.x - last.x).max(last.x - (min.x + size)).max(0.0);
                let dy = (min.y - last.y).max(last.y - (min.y + size)).max(0.0);
                let dz = (min.z - last.z).max(last.z - (min.z + size)).max(0.0);
                (dx * dx + dy * dy + dz * dz).sqrt()
            })
            .fold(f64::INFINITY, f64::min);
        println!("after extra fine scan {extra}: occupied within 0.5 = {}, nearest surf {:.4}", occ.len(), nearest);
    }

    // What does the planner see at its own position?
    for p in [0.03, 0.06, 0.12] {
        println!("query at drone cell, precision {p}: {:?}", tree.query(last, p));
    }
    let _ = CellState::Free;
}
