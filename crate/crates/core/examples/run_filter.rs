//! Runs the filter with a 120 degree initial yaw error and prints the
//! calibration as it converges.

use gpsvio::evaluation::{ate, yaw_error_series, Alignment};
use gpsvio::experiment::Scenario;

fn main() -> Result<(), gpsvio::error::Error> {
    let sc = Scenario::euroc(60.0).with_seed(4).with_psi_error(120f64.to_radians());
    let sim = sc.simulate()?;
    let out = sc.run(&sim)?;

    println!("initialized at {:?} s, stats {:?}", out.initialized_at, out.stats);
    let series = yaw_error_series(&out.calib_trace(), sc.sensor.psi_true)?;
    for e in series.iter().step_by(50) {
        println!(
            "t {:5.1} s  yaw error {:9.3} deg  sigma {:8.3} deg",
            e.t,
            e.error.to_degrees(),
            e.sigma.to_degrees()
        );
    }
    let a = ate(&out.trajectory(), &sc.groundtruth(&sim), Alignment::None)?;
    println!(
        "ATE {:.3} m, {:.3} deg over {} poses",
        a.translation_rmse, a.rotation_rmse_deg, a.pairs
    );
    Ok(())
}
