//! Sharpen/Trim preparation: final Δ against ε and the fitted exponent.

use gkp_core::gkp::GkpLattice;
use gkp_core::prep::{run_ensemble, scaling_exponent, PrepSchedule};
use gkp_core::readout::AncillaModel;

fn main() -> gkp_core::Result<()> {
    let lat = GkpLattice::square();
    let mut points = Vec::new();
    for eps in [0.16, 0.09] {
        let e = run_ensemble(&lat, &PrepSchedule::new(eps, 40), &AncillaModel::noiseless(), 40, 7)?;
        let s = &e.summary;
        println!(
            "ε={eps}: Δ_x {:.4}  Δ_z {:.4}  logical error {:.4}  accepted {}/{}",
            s.delta_x_mean, s.delta_z_mean, s.logical_error, s.accepted, s.trajectories
        );
        points.push((eps, 0.5 * (s.delta_x_mean + s.delta_z_mean)));
    }
    println!("Δ ∝ ε^k with k = {:.3}", scaling_exponent(&points));
    Ok(())
}
