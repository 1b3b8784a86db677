//! Yaw uncertainty before, during and after a 20 s stationary hold.

use gpsvio::experiment::Scenario;
use gpsvio::sim::{Hold, SensorConfig, TrajectoryModel};

fn main() -> Result<(), gpsvio::error::Error> {
    let hold = Hold {
        start: 21.0,
        duration: 20.0,
    };
    let model = TrajectoryModel::with_holds(TrajectoryModel::sinusoid(60.0), vec![hold], 2.0)?;
    let sc = Scenario::new(model, SensorConfig::euroc_sim()).with_psi_error(20f64.to_radians());
    let out = sc.run(&sc.simulate()?)?;
    for r in out.records.iter().step_by(20) {
        println!(
            "t {:5.1} s {} sigma_psi {:.4} deg",
            r.t,
            if sc.trajectory.is_stationary(r.t) {
                "hold  "
            } else {
                "moving"
            },
            r.var_psi.sqrt().to_degrees()
        );
    }
    Ok(())
}
