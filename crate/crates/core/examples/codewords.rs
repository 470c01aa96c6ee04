//! Approximate codewords on three lattices: squeezing, photon number and the
//! Wigner negativity of |0̃⟩.

use gkp_core::fock::{wigner, PhaseSpaceGrid};
use gkp_core::gkp::{approx_codeword, code_report, suggest_dim, ApproxParams, CodewordOptions, GkpLattice, Normalization};

fn main() -> gkp_core::Result<()> {
    let lattices = [
        ("square", GkpLattice::square(), Normalization::LatticeNormalized),
        ("hexagonal", GkpLattice::hexagonal(), Normalization::SquareReference),
        ("rectangular 1.5", GkpLattice::rectangular(1.5)?, Normalization::LatticeNormalized),
    ];
    for (name, lat, norm) in &lattices {
        for delta in [0.4, 0.3] {
            let dim = suggest_dim(lat, delta, 1e-10, 600)?;
            let r = code_report(lat, delta, dim, &CodewordOptions::default(), *norm)?;
            println!("{name:<16} Δ={delta}: dim {dim:>3}  S_X {:.2} dB  S_Z {:.2} dB  n_code {:.2}", r.s_x_db, r.s_z_db, r.n_code);
        }
    }
    let lat = GkpLattice::square();
    let zero = approx_codeword(&lat, ApproxParams::new(0.3, 0)?, 120)?;
    let w = wigner(&zero, &PhaseSpaceGrid::square(5.0, 81))?;
    let min = w.values.iter().copied().fold(f64::INFINITY, f64::min);
    println!("square |0̃⟩ at Δ=0.3: Wigner minimum {min:.4} on an 81x81 grid");
    Ok(())
}
