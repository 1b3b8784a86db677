//! Small Monte Carlo consistency check: average yaw NEES over a few runs
//! with initial states drawn from the filter prior.

use gpsvio::evaluation::{nees, nees_band, NeesSample};
use gpsvio::experiment::{perturbed_initial_state, Scenario};
use gpsvio::so3::wrap_angle;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> Result<(), gpsvio::error::Error> {
    let runs = 5;
    let sigma = 10f64.to_radians();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut samples = Vec::new();
    for k in 0..runs {
        let e = rng.sample::<f64, _>(StandardNormal) * sigma;
        let mut sc = Scenario::euroc(60.0).with_seed(200 + k).with_psi_error(e);
        sc.filter.sigma_psi0 = sigma;
        let sim = sc.simulate()?;
        let init = perturbed_initial_state(&sim.groundtruth[0].imu_state(), &sc.filter.initial_sigma, &mut rng);
        let out = sc.run_from(&sim, &init)?;
        samples.extend(out.records.iter().map(|r| NeesSample {
            error: DVector::from_element(1, wrap_angle(r.psi - sc.sensor.psi_true)),
            cov: DMatrix::from_element(1, 1, r.var_psi),
        }));
        println!("run {k}: initial yaw error {:+.2} deg", e.to_degrees());
    }
    let (lo, hi) = nees_band(1, runs as usize, 0.95);
    println!("yaw NEES {:.2}, 95% band [{lo:.2}, {hi:.2}]", nees(&samples).mean);
    Ok(())
}
