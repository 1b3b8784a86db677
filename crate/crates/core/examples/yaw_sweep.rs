//! Initial yaw error sweep on the planar vehicle preset.

use gpsvio::experiment::{sweep, Scenario, SWEEP_ERRORS_DEG};

fn main() -> Result<(), gpsvio::error::Error> {
    let errors: Vec<f64> = SWEEP_ERRORS_DEG.iter().map(|e| e.to_radians()).collect();
    let rows = sweep(&Scenario::kaist(100.0), &errors, 2f64.to_radians())?;
    println!("{:>8} {:>10} {:>10} {:>12}", "initial", "final", "sigma", "converged");
    for r in rows {
        let conv = r.convergence_time.map_or("never".into(), |t| format!("{t:.1} s"));
        println!(
            "{:>8.0} {:>10.3} {:>10.3} {:>12}{}",
            r.initial_error.to_degrees(),
            r.final_error.to_degrees(),
            r.final_sigma.to_degrees(),
            conv,
            if r.diverged { "  diverged" } else { "" }
        );
    }
    Ok(())
}
