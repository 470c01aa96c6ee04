//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release --test acceptance`. Set `ACCEPT_ONLY=2,5`
//! to run a subset. The process exits non-zero only if a criterion cannot be
//! evaluated at all; a FAIL line is a measured result, analysed in the README.

use std::f64::consts::PI;
use std::time::Instant;

use gkp_core::channels::{encoded_kraus, loss_dephasing_channel, orthonormalize_code, seesaw_optimal_recovery, trivial_encoding_baseline, NoiseParams};
use gkp_core::clifford::{compile_to_frame, random_clifford_circuit, soundness};
use gkp_core::gkp::{approx_codeword_with, code_report, suggest_dim, ApproxParams, CodewordOptions, GkpLattice, Normalization};
use gkp_core::prep::{run_ensemble, scaling_exponent, PrepSchedule};
use gkp_core::readout::{
    logical_eigenstate, majority_error_exact, misid_probability, optimize_lambda, readout_dim, round_kraus, simple_error_formula,
    AncillaModel, Axis, Scheme, VoteMode,
};
use gkp_core::shift_ec::{
    brute_force_matching, knill_ec, knill_pairing, logical_decision, min_weight_matching, spacing, steane_ec, threshold_scan,
    DecoderMode, MeasurementNoise, ShiftFrame, ShiftVector,
};
use gkp_core::{Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 2024;

struct Verdict {
    pass: bool,
    detail: String,
}

fn rel(x: f64, target: f64) -> f64 {
    (x - target).abs() / target.abs()
}

fn c1_squeezing() -> Result<Verdict> {
    let opts = CodewordOptions::default();
    let sq = GkpLattice::square();
    let dim = suggest_dim(&sq, 0.3, 1e-10, 600)?;
    let r = code_report(&sq, 0.3, dim, &opts, Normalization::LatticeNormalized)?;
    let hex = GkpLattice::hexagonal();
    let hdim = suggest_dim(&hex, 0.3, 1e-10, 600)?;
    let h = code_report(&hex, 0.3, hdim, &opts, Normalization::SquareReference)?;
    let pass = (r.s_x_db - 10.1).abs() <= 0.1
        && (r.s_z_db - 10.1).abs() <= 0.1
        && (h.s_x_db - 9.48).abs() <= 0.1
        && (h.s_z_db - 9.48).abs() <= 0.1
        && (r.n_code - 4.6).abs() <= 0.1;
    Ok(Verdict {
        pass,
        detail: format!(
            "square S_X={:.3} S_Z={:.3} dB (10.1±0.1); hexagonal S_X={:.3} S_Z={:.3} dB (9.48±0.1); n_code={:.3} (4.6±0.1)",
            r.s_x_db, r.s_z_db, h.s_x_db, h.s_z_db, r.n_code
        ),
    })
}

fn c2_homodyne() -> Result<Verdict> {
    let lat = GkpLattice::square();
    let mut pass = true;
    let mut parts = Vec::new();
    for (delta, eta, target) in [(0.3, 0.75, 0.056), (0.2, 0.75, 0.041), (0.3, 0.90, 0.0061), (0.2, 0.90, 0.0015)] {
        let p = misid_probability(delta, eta, &lat, Axis::Z)?;
        let ok = rel(p, target) <= 0.10;
        pass &= ok;
        parts.push(format!("({delta},{eta})={:.3}% vs {:.2}%{}", 100.0 * p, 100.0 * target, if ok { "" } else { " [out]" }));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn c3_phase_estimation() -> Result<Verdict> {
    let lat = GkpLattice::square();
    let mut pass = true;
    let mut parts = Vec::new();
    let cases: [(&str, f64, [f64; 3]); 3] =
        [("a", 0.3, [3.7e-2, 1.0e-2, 0.4e-2]), ("b", 0.3, [2.6e-4, 1.6e-4, 1.5e-4]), ("b", 0.2, [1.9e-5, 6.2e-6, 2.5e-6])];
    for (scheme, delta, targets) in cases {
        let dim = readout_dim(&lat, delta)?;
        let st = logical_eigenstate(&lat, delta, Axis::Z, dim, &CodewordOptions::default())?;
        let mut got = Vec::new();
        for (n, target) in [1usize, 3, 5].into_iter().zip(targets) {
            let p = if scheme == "a" {
                let (mp, mm) = round_kraus(Scheme::Simple, Axis::Z.gamma(&lat), C64::new(0.0, 0.0), dim);
                majority_error_exact(&st, n, &mp, &mm, VoteMode::Reuse)?
            } else {
                optimize_lambda(&st, &lat, Axis::Z, delta, n)?.1
            };
            let ok = rel(p, target) <= 0.15;
            pass &= ok;
            got.push(format!("n={n} {p:.2e}/{target:.1e}{}", if ok { "" } else { "[out]" }));
        }
        parts.push(format!("({scheme}) Δ={delta}: {}", got.join(" ")));
    }
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn c4_asymptotics() -> Result<Verdict> {
    let lat = GkpLattice::square();
    let mut pass = true;
    let mut parts = Vec::new();
    for delta in [0.15, 0.2, 0.25, 0.3] {
        let dim = readout_dim(&lat, delta)?;
        let st = logical_eigenstate(&lat, delta, Axis::Z, dim, &CodewordOptions::default())?;
        let (mp, mm) = round_kraus(Scheme::Simple, Axis::Z.gamma(&lat), C64::new(0.0, 0.0), dim);
        let circuit = majority_error_exact(&st, 1, &mp, &mm, VoteMode::Reuse)?;
        let formula = simple_error_formula(delta);
        let ok = rel(formula, circuit) <= 0.10;
        pass &= ok;
        parts.push(format!("Δ={delta}: formula/circuit={:.3}", formula / circuit));
    }
    let delta = 0.2;
    let dim = readout_dim(&lat, delta)?;
    let st = logical_eigenstate(&lat, delta, Axis::Z, dim, &CodewordOptions::default())?;
    let (lam, p) = optimize_lambda(&st, &lat, Axis::Z, delta, 1)?;
    let lam_ref = PI.sqrt() * delta * delta / 2.0;
    let p_ref = 0.4 * delta.powi(6);
    let ok_lam = rel(lam, lam_ref) <= 0.25;
    let ok_p = p / p_ref <= 2.0 && p_ref / p <= 2.0;
    pass &= ok_lam && ok_p;
    parts.push(format!("λ*={lam:.4} vs {lam_ref:.4}; p_err(λ*)={p:.2e} vs 0.4Δ⁶={p_ref:.2e}"));
    Ok(Verdict { pass, detail: parts.join("; ") })
}

fn c5_threshold() -> Result<Verdict> {
    let lat = GkpLattice::square();
    let sigmas = [0.52, 0.55, 0.58, 0.61, 0.64];
    let analog = threshold_scan(&[3, 5, 7], &sigmas, 100_000, SEED, DecoderMode::Analog, &lat)?;
    let binary = threshold_scan(&[3, 5, 7], &sigmas, 100_000, SEED, DecoderMode::Binary, &lat)?;
    let fmt = |s: &gkp_core::shift_ec::ThresholdScan| {
        let c: Vec<String> = s.crossings.iter().map(|(a, b, x)| format!("{a}/{b}@{x:.4}")).collect();
        format!("σ_th={} [{}]", s.sigma_th.map_or("none".into(), |x| format!("{x:.4}")), c.join(", "))
    };
    let pass = analog.sigma_th.is_some_and(|s| (0.51..=0.57).contains(&s));
    Ok(Verdict {
        pass,
        detail: format!("analog {} (band [0.51, 0.57]); binary-weight decoder for reference {}", fmt(&analog), fmt(&binary)),
    })
}

fn c6_shift_ec() -> Result<Verdict> {
    let z = ShiftVector::default();
    let h = spacing() / 2.0;
    let n = 101;
    let mut failures = 0;
    for i in 0..n {
        for j in 0..n {
            let u = (i + 1) as f64 * spacing() / (n + 1) as f64 - h;
            let v = (j + 1) as f64 * spacing() / (n + 1) as f64 - h;
            let out = steane_ec(ShiftVector::new(u, v), z, z, MeasurementNoise::default());
            if logical_decision(out.corrected) != [false, false] || out.decision() != [false, false] {
                failures += 1;
            }
        }
    }
    let frame = ShiftFrame::new(&GkpLattice::square())?;
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut disagree = 0;
    let trials = 100_000;
    for _ in 0..trials {
        let (d, a, b) = (frame.sample(0.3, &mut rng), frame.sample(0.3, &mut rng), frame.sample(0.3, &mut rng));
        let st = steane_ec(d, a, b, MeasurementNoise::default());
        let (plus, zero, kn) = knill_pairing(a, b, MeasurementNoise::default());
        let k = knill_ec(d, plus, zero, kn);
        if logical_decision(k.output) != logical_decision(st.corrected) || k.frame != st.decision() {
            disagree += 1;
        }
    }
    Ok(Verdict {
        pass: failures == 0 && disagree == 0,
        detail: format!("{failures} logical errors on the {n}x{n} grid; {disagree} Knill/Steane disagreements in {trials} draws at σ=0.3"),
    })
}

fn c7_compiler() -> Result<Verdict> {
    let mut bad = 0;
    let mut total_gates = 0;
    for k in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(SEED);
        rng.set_stream(k);
        let n = 1 + (k as usize % 4);
        let gates = rng.gen_range(4..16);
        let c = random_clifford_circuit(&mut rng, n, gates, k % 2 == 1);
        let out = compile_to_frame(&c)?;
        let s = soundness(&c, &out)?;
        total_gates += s.two_qubit;
        if !(s.exact && s.counts_match) {
            bad += 1;
        }
    }
    Ok(Verdict {
        pass: bad == 0,
        detail: format!("{bad} of 200 circuits differ (exact distributions, per-branch CX/measurement counts); {total_gates} two-qubit gates checked"),
    })
}

struct RecoveryPoint {
    delta: f64,
    n_code: f64,
    f_gkp: f64,
    /// Largest fidelity decrease between consecutive see-saw iterations.
    max_drop: f64,
}

fn recovery_point(params: NoiseParams, delta: f64, dim: usize) -> Result<RecoveryPoint> {
    let lat = GkpLattice::square();
    let opts = CodewordOptions::unchecked();
    let c0 = approx_codeword_with(&lat, ApproxParams::new(delta, 0)?, dim, &opts)?;
    let c1 = approx_codeword_with(&lat, ApproxParams::new(delta, 1)?, dim, &opts)?;
    let n_code = 0.5 * (c0.mean_photon() + c1.mean_photon());
    let code = orthonormalize_code(&[c0, c1])?;
    let enc = encoded_kraus(&loss_dephasing_channel(params, dim)?, &code)?;
    let res = seesaw_optimal_recovery(&enc, 500, 1e-9)?;
    let max_drop = res.history.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
    Ok(RecoveryPoint { delta, n_code, f_gkp: res.f_avg, max_drop })
}

fn c8_recovery() -> Result<Verdict> {
    let dim = 100;
    let loss = NoiseParams::new(0.01, 0.0)?;
    let deph = NoiseParams::new(0.0, 0.01)?;
    let (f_loss, f_deph) = (trivial_encoding_baseline(loss)?, trivial_encoding_baseline(deph)?);
    let loss_pts: Vec<RecoveryPoint> = [0.55, 0.5, 0.45, 0.4, 0.35, 0.3].iter().map(|&d| recovery_point(loss, d, dim)).collect::<Result<_>>()?;
    let deph_pts: Vec<RecoveryPoint> = [0.35, 0.3, 0.27, 0.25].iter().map(|&d| recovery_point(deph, d, dim)).collect::<Result<_>>()?;
    let best_loss = loss_pts.iter().filter(|p| p.n_code <= 8.0).max_by(|a, b| a.f_gkp.total_cmp(&b.f_gkp)).expect("points with n_code <= 8");
    let loss_ok = best_loss.f_gkp > f_loss;
    let large: Vec<&RecoveryPoint> = deph_pts.iter().filter(|p| p.n_code >= 6.0).collect();
    let deph_ok = !large.is_empty() && large.iter().all(|p| p.f_gkp <= f_deph);
    // Entanglement fidelities sit within 1e-6 of 1, so 1e-13 is a few hundred ulps.
    let max_drop = loss_pts.iter().chain(&deph_pts).map(|p| p.max_drop).fold(0.0, f64::max);
    let monotone = max_drop <= 1e-13;
    let list = |pts: &[RecoveryPoint]| pts.iter().map(|p| format!("Δ={} n={:.2} F={:.6}", p.delta, p.n_code, p.f_gkp)).collect::<Vec<_>>().join(", ");
    Ok(Verdict {
        pass: loss_ok && deph_ok && monotone,
        detail: format!(
            "loss κt=0.01: trivial {f_loss:.6}, GKP [{}]; dephasing κφt=0.01: trivial {f_deph:.6}, GKP [{}]; largest see-saw fidelity drop {max_drop:.1e}",
            list(&loss_pts),
            list(&deph_pts)
        ),
    })
}

fn c9_prep_scaling() -> Result<Verdict> {
    let lat = GkpLattice::square();
    let mut pts = Vec::new();
    for eps in [0.04, 0.09, 0.16] {
        let e = run_ensemble(&lat, &PrepSchedule::new(eps, 40), &AncillaModel::noiseless(), 500, SEED)?;
        pts.push((eps, 0.5 * (e.summary.delta_x_mean + e.summary.delta_z_mean)));
    }
    let k = scaling_exponent(&pts);
    let p: Vec<String> = pts.iter().map(|(e, d)| format!("ε={e}: Δ={d:.4}")).collect();
    Ok(Verdict { pass: (0.4..=0.6).contains(&k), detail: format!("exponent {k:.4} (band [0.4, 0.6]); {}", p.join(", ")) })
}

fn c10_matching() -> Result<Verdict> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut bad = 0;
    let mut max_k = 0;
    for _ in 0..500 {
        let k = rng.gen_range(0..=12);
        max_k = max_k.max(k);
        let mut pair = vec![vec![0i64; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let c = rng.gen_range(0..5_000_000);
                pair[i][j] = c;
                pair[j][i] = c;
            }
        }
        let boundary: Vec<i64> = (0..k).map(|_| rng.gen_range(0..5_000_000)).collect();
        if min_weight_matching(&pair, &boundary)?.cost != brute_force_matching(&pair, &boundary)?.cost {
            bad += 1;
        }
    }
    Ok(Verdict { pass: bad == 0, detail: format!("{bad} of 500 instances differ from enumeration (up to {max_k} defects)") })
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ACCEPT_ONLY").ok().map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Result<Verdict>); 10] = [
        (1, "squeezing metrics", c1_squeezing),
        (2, "homodyne misidentification", c2_homodyne),
        (3, "phase estimation", c3_phase_estimation),
        (4, "asymptotic formulas", c4_asymptotics),
        (5, "code-capacity threshold", c5_threshold),
        (6, "shift-EC exactness", c6_shift_ec),
        (7, "compiler soundness", c7_compiler),
        (8, "recovery vs trivial encoding", c8_recovery),
        (9, "Sharpen/Trim scaling", c9_prep_scaling),
        (10, "MWPM correctness", c10_matching),
    ];
    let mut passed = 0;
    let mut ran = 0;
    let mut broken = false;
    for (id, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        match f() {
            Ok(v) => {
                passed += usize::from(v.pass);
                println!("{} {id:>2} {name} ({:.1} s): {}", if v.pass { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64(), v.detail);
            }
            Err(e) => {
                broken = true;
                println!("FAIL {id:>2} {name}: could not evaluate: {e}");
            }
        }
    }
    println!("acceptance: {passed}/{ran} criteria pass");
    if broken {
        std::process::exit(1);
    }
}
