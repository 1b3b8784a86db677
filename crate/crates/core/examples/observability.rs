//! Rank of the observability matrix with and without horizontal motion, and
//! along a trajectory containing a stationary hold.

use gpsvio::cli::trajectory_points;
use gpsvio::config::RunConfig;
use gpsvio::observability::{classify_directions, AnalysisState, Excitation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), gpsvio::error::Error> {
    let cfg = RunConfig::parse("sim.duration=20\nsim.holds=8:4\nobservability.step=1")?;
    let cam = cfg.scenario.sensor.camera.extrinsics;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for (name, exc) in [
        ("horizontal motion", Excitation::Horizontal { min_speed: 0.1 }),
        ("vertical motion only", Excitation::VerticalOnly),
    ] {
        let r = classify_directions(&AnalysisState::sample(&mut rng, exc), &cam);
        println!(
            "{name}: rank {}, null dim {}, translation unobservable {}, yaw observable {}",
            r.rank, r.null_dim, r.translation_null, r.psi_observable
        );
    }

    println!("\n   t  |v_h|  null  yaw");
    for (t, s) in trajectory_points(&cfg)? {
        let r = classify_directions(&s, &cam);
        println!(
            "{t:4.0} {:6.2} {:5} {:>5}",
            r.horizontal_speed, r.null_dim, r.psi_observable
        );
    }
    Ok(())
}
