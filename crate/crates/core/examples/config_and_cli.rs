//! Drives the command layer from a configuration text: simulate, run and
//! evaluate, the same steps the `gpsvio` binary performs.

use gpsvio::cli;
use gpsvio::config::RunConfig;
use gpsvio::evaluation::Alignment;

fn main() -> Result<(), gpsvio::error::Error> {
    let root = std::env::temp_dir().join("gpsvio_config_example");
    let text = "
        # planar vehicle, 40 s, 70 degree initial yaw error
        sim.preset = kaist
        sim.duration = 40
        sim.seed = 5
        filter.psi_error_deg = 70
    ";
    let sim_dir = root.join("sim");
    let run_dir = root.join("run");
    let base = RunConfig::parse(text)?;
    let sim_cfg = base.with_overrides([("output.dir", sim_dir.to_str().unwrap())])?;
    let run_cfg = base.with_overrides([("output.dir", run_dir.to_str().unwrap())])?;
    print!("{}", sim_cfg.to_text());

    let s = cli::cmd_simulate(&sim_cfg)?;
    println!("simulated {} imu samples, {} gps fixes", s.imu_samples, s.gps_fixes);
    let r = cli::cmd_run(&run_cfg, &sim_dir)?;
    println!("filter kept {} poses", r.output.records.len());

    let report = cli::cmd_eval(
        &run_dir.join(cli::TRAJ_FILE),
        &sim_dir.join(cli::GROUNDTRUTH_ENU_FILE),
        Alignment::None,
        Some((&run_dir.join(cli::CALIB_FILE), run_cfg.scenario.sensor.psi_true)),
    )?;
    print!("{}", report.to_text());
    Ok(())
}
