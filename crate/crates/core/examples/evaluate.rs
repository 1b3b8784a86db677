//! Trajectory error of the fused estimate against raw GPS, and the effect of
//! estimating the yaw online versus keeping a wrong initial value.

use gpsvio::evaluation::{ate, position_rmse, Alignment};
use gpsvio::experiment::{raw_gps, Scenario};

fn main() -> Result<(), gpsvio::error::Error> {
    let sc = Scenario::kaist(100.0).with_seed(1).with_psi_error(10f64.to_radians());
    let sim = sc.simulate()?;
    let gt = sc.groundtruth(&sim);

    let online = sc.run(&sim)?;
    let mut fixed = sc.clone();
    fixed.filter.flags.psi = false;
    let fixed = fixed.run(&sim)?;

    for (name, out) in [("online yaw", &online), ("fixed yaw", &fixed)] {
        for align in [Alignment::None, Alignment::YawTranslation, Alignment::Se3] {
            let a = ate(&out.trajectory(), &gt, align)?;
            println!(
                "{name:>10} {align:?}: {:.3} m, {:.3} deg",
                a.translation_rmse, a.rotation_rmse_deg
            );
        }
    }
    let raw = position_rmse(&raw_gps(&sim), &sc.antenna_groundtruth(&sim))?;
    println!("   raw GPS: {raw:.3} m");
    Ok(())
}
