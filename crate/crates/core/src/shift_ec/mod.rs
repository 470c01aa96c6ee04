//! Displacement-only ("shift model") error correction.
//!
//! Every mode carries a real pair `(u, v)` standing for the shift
//! `exp(i(vQ̂ − uP̂))`. `u` moves `Q̂` and turns into `X̄` flips when it
//! reaches `√π`; `v` does the same for `P̂` and `Z̄`. Ancillas are ideal
//! codewords plus their own shifts, so the flow through a circuit is linear
//! and exact.
//!
//! Modular reduction uses [`centered`], i.e. the interval `(−√π/2, √π/2]`.
//! The final logical decision uses [`logical_from_shift`], which rounds ties
//! to even; the two rules differ only on exact half-spacing values.

pub mod hybrid;
pub mod matching;
pub mod surface;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use crate::clifford::ShiftVector;
use crate::error::{Error, Result};
use crate::gkp::GkpLattice;
use crate::numerics::{centered_mod, normal_cdf, round_half_even};

pub use hybrid::{hybrid_check_circuit, hybrid_check_error, optimal_hybrid_check, CheckScheme};
pub use matching::{brute_force_matching, max_weight_matching, min_weight_matching, DefectMatching};
pub use surface::{
    analog_edge_weights, bias_study, decode_sample, estimate_logical_rate, locate_crossings, mwpm_decode, p_flip, point_seed,
    sample_code_capacity, threshold_scan, BiasPoint,
    Check, DecoderMode, LogicalRate, MatchingGraph, Sector, SurfaceLayout, SyndromeSample, ThresholdScan,
};

/// Lattice spacing `√π` in shift units.
pub fn spacing() -> f64 {
    PI.sqrt()
}

/// Reduce into `(−√π/2, √π/2]`.
pub fn centered(x: f64) -> f64 {
    centered_mod(x, spacing())
}

/// Number of lattice steps removed by [`centered`].
fn steps(x: f64) -> i64 {
    ((x - centered(x)) / spacing()).round() as i64
}

/// Logical content of a single shift component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicalShift {
    pub flip: bool,
    pub residual: f64,
}

/// `flip` iff `round(u/√π)` is odd, with ties to even.
pub fn logical_from_shift(u: f64) -> LogicalShift {
    let k = round_half_even(u / spacing());
    LogicalShift { flip: k.rem_euclid(2.0) == 1.0, residual: u - spacing() * k }
}

/// Logical `[X̄ flip, Z̄ flip]` carried by a shift.
pub fn logical_decision(s: ShiftVector) -> [bool; 2] {
    [logical_from_shift(s.u).flip, logical_from_shift(s.v).flip]
}

/// Additive noise on the two homodyne readouts of an EC round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub q: f64,
    pub p: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteaneOutcome {
    pub corrected: ShiftVector,
    /// Raw `Q̂` readout of the first ancilla and `P̂` readout of the second.
    pub syndrome: [f64; 2],
}

impl SteaneOutcome {
    /// Parities of the lattice steps the corrections skipped over.
    pub fn decision(&self) -> [bool; 2] {
        [steps(self.syndrome[0]).rem_euclid(2) == 1, steps(self.syndrome[1]).rem_euclid(2) == 1]
    }
}

/// Steane round: `|+̃⟩` ancilla as `CX` target then `Q̂` readout, followed by
/// a `|0̃⟩` ancilla as `CX` control then `P̂` readout.
///
/// `anc_q` feeds its `v` back into the data, and `anc_p` its `u`. Each
/// correction subtracts the centered syndrome.
pub fn steane_ec(data: ShiftVector, anc_q: ShiftVector, anc_p: ShiftVector, noise: MeasurementNoise) -> SteaneOutcome {
    let s_q = data.u + anc_q.u + noise.q;
    let u = data.u - centered(s_q) + anc_p.u;
    let v_mid = data.v - anc_q.v;
    let s_p = anc_p.v - v_mid + noise.p;
    let v = v_mid + centered(s_p);
    SteaneOutcome { corrected: ShiftVector::new(u, v), syndrome: [s_q, s_p] }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnillOutcome {
    /// `[X̄, Z̄]` byproducts to record in the Pauli frame.
    pub frame: [bool; 2],
    /// Shift on the output rail once the frame is accounted for.
    pub output: ShiftVector,
    pub syndrome: [f64; 2],
}

/// Teleportation round: a Bell pair from `|+̃⟩` (shift `plus`) and `|0̃⟩`
/// (shift `zero`), a Bell measurement of data and the `|+̃⟩` half, and
/// no correction on the output rail.
///
/// The output carries a reflected copy of the data (`Q̂ ↦ −Q̂`), which is
/// the identity on the logical qubit.
pub fn knill_ec(data: ShiftVector, plus: ShiftVector, zero: ShiftVector, noise: MeasurementNoise) -> KnillOutcome {
    let s_q = data.u + plus.u + noise.q;
    let s_p = data.v - plus.v + zero.v + noise.p;
    let output = ShiftVector::new(centered(s_q) - data.u + zero.u, centered(s_p) - data.v + plus.v);
    KnillOutcome {
        frame: [steps(s_q).rem_euclid(2) == 1, steps(s_p).rem_euclid(2) == 1],
        output,
        syndrome: [s_q, s_p],
    }
}

/// Knill inputs that reproduce a Steane round on the same draws.
///
/// The output rail's `|0̃⟩` and the `P̂` readout enter the teleported state
/// with opposite sign, so Knill's output is exactly the negated Steane output.
pub fn knill_pairing(anc_q: ShiftVector, anc_p: ShiftVector, noise: MeasurementNoise) -> (ShiftVector, ShiftVector, MeasurementNoise) {
    (anc_q, ShiftVector::new(-anc_p.u, -anc_p.v), MeasurementNoise { q: noise.q, p: -noise.p })
}

/// Probability that an ideal round misreads a Gaussian shift of width
/// `sigma`, i.e. that it lands in an odd `√π` window.
///
/// Equal to `1 − Σ_{|k|≤6} [Φ((2k+½)√π/σ) − Φ((2k−½)√π/σ)]`, but summed over
/// the odd windows with upper tails to keep precision for small `sigma`.
pub fn ideal_ec_error_rate(sigma: f64) -> Result<f64> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(0.0);
    }
    let tail = |x: f64| normal_cdf(-x);
    let s = spacing();
    let p = (0..=6)
        .map(|k| {
            let m = (2 * k + 1) as f64;
            tail((m - 0.5) * s / sigma) - tail((m + 0.5) * s / sigma)
        })
        .sum::<f64>();
    Ok(2.0 * p)
}

/// Isotropic Gaussian displacement noise, `sigma` per physical quadrature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
}

impl GaussianNoise {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::invalid(format!("sigma must be finite and non-negative, got {sigma}")));
        }
        Ok(Self { sigma })
    }

    /// Squeezing of a codeword with `Δ² = 2σ²`, in dB.
    pub fn squeezing_db(&self) -> f64 {
        -10.0 * (2.0 * self.sigma * self.sigma).log10()
    }
}

/// Map between physical `(q, p)` displacements and lattice shifts `(u, v)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftFrame {
    to_shift: [[f64; 2]; 2],
}

impl ShiftFrame {
    pub fn new(lattice: &GkpLattice) -> Result<Self> {
        // (q, p) = √(2/π) [[Re α, Re β], [Im α, Im β]] (u, v).
        let c = (2.0 / PI).sqrt();
        let (a, b) = (lattice.alpha(), lattice.beta());
        let m = [[c * a.re, c * b.re], [c * a.im, c * b.im]];
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() < 1e-12 {
            return Err(Error::invalid("degenerate lattice"));
        }
        Ok(Self { to_shift: [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]] })
    }

    pub fn shift(&self, q: f64, p: f64) -> ShiftVector {
        let m = &self.to_shift;
        ShiftVector::new(m[0][0] * q + m[0][1] * p, m[1][0] * q + m[1][1] * p)
    }

    /// Marginal standard deviations of `(u, v)` under isotropic noise.
    pub fn marginal_sigmas(&self, sigma: f64) -> (f64, f64) {
        let m = &self.to_shift;
        (sigma * m[0][0].hypot(m[0][1]), sigma * m[1][0].hypot(m[1][1]))
    }

    pub fn sample<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> ShiftVector {
        let q: f64 = rng.sample(StandardNormal);
        let p: f64 = rng.sample(StandardNormal);
        self.shift(sigma * q, sigma * p)
    }
}
