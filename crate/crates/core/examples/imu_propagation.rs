//! Dead-reckons noiseless IMU samples from the true initial state and
//! reports the drift against groundtruth.

use gpsvio::experiment::Scenario;
use gpsvio::propagation::propagate_imu;
use gpsvio::state::rotation_difference;

fn main() -> Result<(), gpsvio::error::Error> {
    let mut sc = Scenario::euroc(10.0);
    sc.sensor = sc.sensor.noiseless();
    let sim = sc.simulate()?;
    let mut imu = sim.groundtruth[0].imu_state();
    for t in [1.0, 2.0, 5.0, 10.0] {
        propagate_imu(&mut imu, &sim.stream.imu, t, &sc.filter.imu_noise)?;
        let truth = sim.truth_at(t).imu_state();
        let dp = (imu.p_vi - truth.p_vi).norm();
        let dth = rotation_difference(&imu.q_vi, &truth.q_vi).norm().to_degrees();
        println!("t {t:5.1} s: position drift {dp:.2e} m, attitude drift {dth:.2e} deg");
    }
    Ok(())
}
