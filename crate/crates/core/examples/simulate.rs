//! Generates IMU, camera and GPS streams for both presets and writes the
//! euroc-style one to disk.
//!
//!     cargo run --release --example simulate -- [output_dir]

use gpsvio::experiment::Scenario;
use gpsvio::io;
use std::path::PathBuf;

fn main() -> Result<(), gpsvio::error::Error> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gpsvio_simulate"));

    for (name, sc) in [("euroc", Scenario::euroc(60.0)), ("kaist", Scenario::kaist(60.0))] {
        let sim = sc.simulate()?;
        let s = &sim.stream;
        let features: usize = s.frames.iter().map(|f| f.features.len()).sum();
        println!(
            "{name}: {} imu samples, {} frames ({:.1} features/frame), {} gps fixes, psi_true {:.1} deg",
            s.imu.len(),
            s.frames.len(),
            features as f64 / s.frames.len().max(1) as f64,
            s.gps.len(),
            sc.sensor.psi_true.to_degrees()
        );
        if name == "euroc" {
            io::create_dir(&dir)?;
            io::write_stream(&dir, s)?;
            println!("streams written to {}", dir.display());
        }
    }
    Ok(())
}
