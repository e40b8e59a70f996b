use aerovox::config::SimConfig;
use aerovox::governor::LatencyModel;
use aerovox::runtime::{run_mission, LatencySource, RuntimeMode};
use aerovox::world::{generate_environment, EnvSpec};
use std::time::Instant;

fn main() {
    let cfg = SimConfig::with_scale(0.1);
    let model = LatencyModel::reference();
    for (density, mode, label) in [
        (0.001, RuntimeMode::adaptive(), "adaptive open"),
        (0.45, RuntimeMode::adaptive(), "adaptive mid"),
        (0.6, RuntimeMode::adaptive(), "adaptive dense"),
        (0.45, RuntimeMode::baseline(), "baseline mid"),
        (0.6, RuntimeMode::baseline(), "baseline dense"),
    ] {
        let gt = generate_environment(&EnvSpec::clustered(density, 8.0, 60.0, 9, &cfg));
        let t = Instant::now();
        let log = run_mission(&gt, mode, &model, &cfg, 3);
        println!(
            "{label:15} wall {:7.2}s reached {} collided {} timed_out {} decisions {:5} sim {:8.1}s",
            t.elapsed().as_secs_f64(),
            log.reached,
            log.collided,
            log.timed_out,
            log.records.len(),
            log.flight_time_s
        );
    }
    // Wall-clock stage breakdown via Measured mode.
    let gt = generate_environment(&EnvSpec::clustered(0.45, 8.0, 60.0, 9, &cfg));
    let mode = RuntimeMode { latency_source: LatencySource::Measured, ..RuntimeMode::baseline() };
    let t = Instant::now();
    let log = run_mission(&gt, mode, &model, &cfg, 3);
    let n = log.records.len().max(1) as f64;
    let sum = |f: fn(&aerovox::runtime::DecisionRecord) -> f64| log.records.iter().map(f).sum::<f64>();
    println!(
        "baseline measured wall {:.2}s decisions {} replans {} mean_ms d0 {:.2} d1 {:.2} d2 {:.2}",
        t.elapsed().as_secs_f64(),
        log.records.len(),
        log.replans,
        1e3 * sum(|r| r.d0) / n,
        1e3 * sum(|r| r.d1) / n,
        1e3 * sum(|r| r.d2) / n,
    );
}
