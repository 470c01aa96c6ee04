//! Steane and Knill shift correction with noisy ancillas, then a small
//! surface-code threshold scan with both decoder weightings.

use gkp_core::gkp::GkpLattice;
use gkp_core::shift_ec::{knill_ec, knill_pairing, logical_decision, steane_ec, threshold_scan, DecoderMode, MeasurementNoise, ShiftFrame};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gkp_core::Result<()> {
    let lat = GkpLattice::square();
    let frame = ShiftFrame::new(&lat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for sigma in [0.3, 0.4, 0.5] {
        let (mut fails, mut disagree) = (0, 0);
        let trials = 20_000;
        for _ in 0..trials {
            let (d, a, b) = (frame.sample(sigma, &mut rng), frame.sample(sigma, &mut rng), frame.sample(sigma, &mut rng));
            let st = steane_ec(d, a, b, MeasurementNoise::default());
            let (plus, zero, m) = knill_pairing(a, b, MeasurementNoise::default());
            let k = knill_ec(d, plus, zero, m);
            fails += usize::from(logical_decision(st.corrected) != [false, false]);
            disagree += usize::from(logical_decision(k.output) != logical_decision(st.corrected));
        }
        println!("σ={sigma}: Steane logical error {:.4}, Knill disagreements {disagree}", fails as f64 / trials as f64);
    }
    let sigmas = [0.50, 0.54, 0.58, 0.62];
    for mode in [DecoderMode::Analog, DecoderMode::Binary] {
        let scan = threshold_scan(&[3, 5], &sigmas, 5_000, 3, mode, &lat)?;
        let curve: Vec<String> = scan.rates.iter().map(|r| format!("d{}@{}={:.3}", r.d, r.sigma, r.p_l)).collect();
        println!("{mode:?}: {}  σ_th {:?}", curve.join(" "), scan.sigma_th);
    }
    Ok(())
}
