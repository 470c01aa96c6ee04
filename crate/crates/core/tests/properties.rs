//! Property-based checks of the algebraic and decoding invariants.

use std::f64::consts::PI;

use gkp_core::clifford::{
    compile_to_frame, random_clifford_circuit, soundness, verify_error_spread, CircuitIR, CliffordFrame, Pauli, ShiftVector, SignedPauli,
};
use gkp_core::numerics::{centered_mod, round_half_even};
use gkp_core::shift_ec::{
    brute_force_matching, centered, knill_ec, knill_pairing, logical_decision, logical_from_shift, min_weight_matching, spacing,
    steane_ec, MeasurementNoise,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn frame() -> impl Strategy<Value = CliffordFrame> {
    let all = CliffordFrame::all();
    (0..all.len()).prop_map(move |i| all[i])
}

fn signed() -> impl Strategy<Value = SignedPauli> {
    (0..3usize, any::<bool>()).prop_map(|(i, n)| SignedPauli { pauli: Pauli::ALL[i], negative: n })
}

fn shift() -> impl Strategy<Value = ShiftVector> {
    (-4.0..4.0f64, -4.0..4.0f64).prop_map(|(u, v)| ShiftVector::new(u, v))
}

fn pauli() -> impl Strategy<Value = Pauli> {
    (0..3usize).prop_map(|i| Pauli::ALL[i])
}

fn close(a: ShiftVector, b: ShiftVector) -> bool {
    (a.u - b.u).abs() < 1e-12 && (a.v - b.v).abs() < 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn frames_form_a_group(a in frame(), b in frame(), c in frame(), p in signed()) {
        prop_assert_eq!(a.compose(&b).compose(&c), a.compose(&b.compose(&c)));
        prop_assert!(a.compose(&a.inverse()).is_identity());
        prop_assert!(a.inverse().compose(&a).is_identity());
        prop_assert_eq!(a.compose(&b).apply(p), a.apply(b.apply(p)));
        prop_assert_eq!(a.apply(p.negated()), a.apply(p).negated());
    }

    #[test]
    fn frames_preserve_anticommutation(f in frame(), p in pauli(), q in pauli()) {
        let (fp, fq) = (f.apply(SignedPauli::plus(p)), f.apply(SignedPauli::plus(q)));
        prop_assert_eq!(p == q, fp.pauli == fq.pauli);
    }

    #[test]
    fn error_spread_is_linear(c in pauli(), t in pauli(), a in shift(), b in shift(), x in shift(), y in shift(), k in -3.0..3.0f64) {
        let sum = verify_error_spread(c, t, [ShiftVector::new(a.u + k * x.u, a.v + k * x.v), ShiftVector::new(b.u + k * y.u, b.v + k * y.v)]);
        let sa = verify_error_spread(c, t, [a, b]);
        let sx = verify_error_spread(c, t, [x, y]);
        for m in 0..2 {
            prop_assert!(close(sum[m], ShiftVector::new(sa[m].u + k * sx[m].u, sa[m].v + k * sx[m].v)));
        }
    }

    #[test]
    fn centered_mod_lands_in_the_half_open_window(x in -1e3..1e3f64, s in 0.1..5.0f64) {
        let r = centered_mod(x, s);
        prop_assert!(r > -s / 2.0 && r <= s / 2.0 + 1e-12 * s, "{} -> {}", x, r);
        let k = (x - r) / s;
        prop_assert!((k - k.round()).abs() < 1e-6);
    }

    #[test]
    fn round_half_even_is_nearest_and_symmetric(x in -1e6..1e6f64) {
        let r = round_half_even(x);
        prop_assert!((x - r).abs() <= 0.5);
        prop_assert_eq!(round_half_even(-x), -r);
        prop_assert_eq!(round_half_even(x.trunc() + 0.5), if (x.trunc() as i64) % 2 == 0 { x.trunc() } else { x.trunc() + 1.0 });
    }

    #[test]
    fn logical_shift_decomposes_the_input(u in -20.0..20.0f64) {
        let l = logical_from_shift(u);
        let k = (u - l.residual) / spacing();
        prop_assert!((k - k.round()).abs() < 1e-9);
        prop_assert!(l.residual.abs() <= spacing() / 2.0 + 1e-12);
        prop_assert_eq!(l.flip, (k.round() as i64).rem_euclid(2) == 1);
        prop_assert!((centered(u) - l.residual).abs() < 1e-9);
    }

    #[test]
    fn clean_steane_round_corrects_inside_the_window(u in -0.886..0.886f64, v in -0.886..0.886f64) {
        let z = ShiftVector::default();
        let out = steane_ec(ShiftVector::new(u, v), z, z, MeasurementNoise::default());
        prop_assert!(out.corrected.u.abs() < 1e-12 && out.corrected.v.abs() < 1e-12);
        prop_assert_eq!(out.decision(), [false, false]);
    }

    #[test]
    fn paired_knill_equals_steane(d in shift(), a in shift(), b in shift(), mq in -1.0..1.0f64, mp in -1.0..1.0f64) {
        let noise = MeasurementNoise { q: mq, p: mp };
        let st = steane_ec(d, a, b, noise);
        let (plus, zero, kn) = knill_pairing(a, b, noise);
        let k = knill_ec(d, plus, zero, kn);
        prop_assert!(close(k.output, ShiftVector::new(-st.corrected.u, -st.corrected.v)));
        prop_assert_eq!(k.frame, st.decision());
        prop_assert_eq!(logical_decision(k.output), logical_decision(st.corrected));
    }

    #[test]
    fn blossom_matches_enumeration(k in 0usize..9, seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pair = vec![vec![0i64; k]; k];
        for i in 0..k {
            for j in i + 1..k {
                let c = rng.gen_range(0..1000);
                pair[i][j] = c;
                pair[j][i] = c;
            }
        }
        let boundary: Vec<i64> = (0..k).map(|_| rng.gen_range(0..1000)).collect();
        let fast = min_weight_matching(&pair, &boundary).unwrap();
        let slow = brute_force_matching(&pair, &boundary).unwrap();
        prop_assert_eq!(fast.cost, slow.cost);
        let mut seen = vec![0; k];
        for &(a, b) in &fast.pairs {
            seen[a] += 1;
            seen[b] += 1;
        }
        for &a in &fast.to_boundary {
            seen[a] += 1;
        }
        prop_assert!(seen.iter().all(|&n| n == 1));
        let cost: i64 = fast.pairs.iter().map(|&(a, b)| pair[a][b]).sum::<i64>() + fast.to_boundary.iter().map(|&a| boundary[a]).sum::<i64>();
        prop_assert_eq!(cost, fast.cost);
    }

    #[test]
    fn circuit_text_round_trips_and_compiles_soundly(seed in any::<u64>(), n in 1usize..4, gates in 1usize..10, control in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = random_clifford_circuit(&mut rng, n, gates, control);
        let back = CircuitIR::parse(&c.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), c.to_text());
        let out = compile_to_frame(&c).unwrap();
        let again = CircuitIR::parse(&out.to_text()).unwrap();
        prop_assert_eq!(again.to_text(), out.to_text());
        let s = soundness(&c, &out).unwrap();
        prop_assert!(s.exact && s.counts_match);
    }
}

#[test]
fn spacing_is_root_pi() {
    assert_eq!(spacing(), PI.sqrt());
}
