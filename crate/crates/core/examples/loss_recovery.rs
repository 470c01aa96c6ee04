//! Optimal recovery of the square code under loss and dephasing, against the
//! best unencoded qubit.

use gkp_core::channels::{gkp_recovery_point, trivial_encoding_baseline, NoiseParams};

fn main() -> gkp_core::Result<()> {
    let dim = 60;
    for (label, params) in [("loss κt=0.01", NoiseParams::new(0.01, 0.0)?), ("dephasing κφt=0.01", NoiseParams::new(0.0, 0.01)?)] {
        println!("{label}: trivial encoding F_avg = {:.6}", trivial_encoding_baseline(params)?);
        for delta in [0.55, 0.5, 0.45] {
            let row = gkp_recovery_point(params, delta, dim)?;
            println!("  Δ={delta}: n_code {:.2}  F_avg {:.6}", row.n_code, row.f_gkp);
        }
    }
    Ok(())
}
