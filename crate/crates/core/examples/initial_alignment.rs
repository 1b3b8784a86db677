//! Least-squares yaw and translation alignment of a VIO path onto GPS fixes.

use gpsvio::experiment::Scenario;
use gpsvio::gps::{init_alignment, match_positions, Alignment};

fn main() -> Result<(), gpsvio::error::Error> {
    let sc = Scenario::kaist(30.0).with_seed(2);
    let sim = sc.simulate()?;
    let vio: Vec<_> = sim
        .groundtruth
        .iter()
        .map(|g| (g.t, g.p + g.q_vi.rotation().transpose() * sc.sensor.p_g_in_i))
        .collect();
    for seconds in [2.0, 5.0, 10.0, 30.0] {
        let gps: Vec<_> = sim.stream.gps.iter().filter(|m| m.t <= seconds).cloned().collect();
        let pairs = match_positions(&gps, &vio, sc.sensor.t_g_true);
        match init_alignment(&pairs, 20.0) {
            Alignment::Ready { psi, p_ev } => println!(
                "{seconds:4.0} s: yaw error {:.3} deg, translation error {:.3} m",
                (psi - sc.sensor.psi_true).to_degrees(),
                (p_ev - sc.sensor.p_ev_true).norm()
            ),
            Alignment::NotReady(why) => println!("{seconds:4.0} s: not ready ({why:?})"),
        }
    }
    Ok(())
}
