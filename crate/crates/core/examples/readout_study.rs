//! Homodyne misidentification and phase-estimation readout errors for the
//! square code.

use gkp_core::gkp::{CodewordOptions, GkpLattice};
use gkp_core::readout::{
    improved_error_formula, logical_eigenstate, majority_error_exact, misid_probability, optimize_lambda, readout_dim,
    round_kraus, simple_error_formula, Axis, Scheme, VoteMode, improved_half_epsilon,
};
use gkp_core::C64;

fn main() -> gkp_core::Result<()> {
    let lat = GkpLattice::square();
    println!("homodyne misidentification");
    for (delta, eta) in [(0.3, 0.75), (0.2, 0.75), (0.3, 0.9), (0.2, 0.9)] {
        println!("  delta={delta} eta={eta}: {:.4}%", 100.0 * misid_probability(delta, eta, &lat, Axis::Z)?);
    }
    for delta in [0.3, 0.25, 0.2] {
        let dim = readout_dim(&lat, delta)?;
        let st = logical_eigenstate(&lat, delta, Axis::Z, dim, &CodewordOptions::default())?;
        let (mp, mm) = round_kraus(Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), dim);
        let simple: Vec<f64> = [1, 3, 5]
            .iter()
            .map(|&n| majority_error_exact(&st, n, &mp, &mm, VoteMode::Reuse))
            .collect::<Result<_, _>>()?;
        println!("delta={delta} dim={dim}");
        println!("  simple n=1,3,5: {:.3e} {:.3e} {:.3e} (closed form {:.3e})", simple[0], simple[1], simple[2], simple_error_formula(delta));
        for n in [1, 3, 5] {
            let (lam, p) = optimize_lambda(&st, &lat, Axis::Z, delta, n)?;
            let (mp, mm) = round_kraus(Scheme::Improved { lambda: lam }, lat.beta(), improved_half_epsilon(&lat, Axis::Z, lam), dim);
            let fresh = majority_error_exact(&st, n, &mp, &mm, VoteMode::Fresh)?;
            println!(
                "  improved n={n}: lambda*={lam:.5} p_err={p:.3e} fresh={fresh:.3e} closed form {:.3e}",
                improved_error_formula(delta, lam)
            );
        }
    }
    Ok(())
}
