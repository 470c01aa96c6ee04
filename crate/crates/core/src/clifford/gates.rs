//! Oscillator-level Clifford gates, shift propagation and one-bit teleportation.

use num_complex::ComplexFloat;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::Pauli;
use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, guard_dim, hermitian_exp, quadratures, CMatrix, CVector, TruncatedState};
use crate::gkp::{approx_codeword, ApproxParams, GkpLattice};
use crate::readout::{DisplacementCache, HybridQubitMode};
use crate::C64;

/// Smallest per-mode cutoff accepted for gate construction.
pub const MIN_GATE_DIM: usize = 8;

/// Guard-band population above which a gate output is rejected.
pub const GATE_LEAK_TOL: f64 = 1e-6;

fn check_dim(dim: usize) -> Result<()> {
    if dim < MIN_GATE_DIM {
        return Err(Error::Truncation(format!("gate cutoff {dim} below minimum {MIN_GATE_DIM}")));
    }
    Ok(())
}

/// Quadrature `ŝ` for a Pauli axis: `ŝ_X = −P̂`, `ŝ_Y = Q̂ − P̂`, `ŝ_Z = Q̂`.
fn axis_quadrature(p: Pauli, q: &CMatrix, pm: &CMatrix) -> CMatrix {
    match p {
        Pauli::X => -pm,
        Pauli::Y => q - pm,
        Pauli::Z => q.clone(),
    }
}

/// `(a, b)` with `ŝ = a Q̂ + b P̂`.
fn axis_coefficients(p: Pauli) -> (f64, f64) {
    match p {
        Pauli::X => (0.0, -1.0),
        Pauli::Y => (1.0, -1.0),
        Pauli::Z => (1.0, 0.0),
    }
}

/// Applies a single-mode gate and rejects outputs that reach the guard band.
pub fn guarded_apply(u: &CMatrix, psi: &TruncatedState) -> Result<TruncatedState> {
    if u.nrows() != psi.dim() {
        return Err(Error::DimensionMismatch { expected: u.nrows(), got: psi.dim() });
    }
    let out = TruncatedState::from_vector(u * psi.amplitudes())?;
    let g = guard_dim(out.dim());
    let leak: f64 = out.amplitudes().iter().skip(g).map(|a| a.norm_sqr()).sum();
    if leak > GATE_LEAK_TOL {
        return Err(Error::Truncation(format!("gate output has {leak:.2e} population in the guard band")));
    }
    Ok(out)
}

/// `exp(i t A ⊗ B)` stored through the eigenbases of `A` and `B`, so that it
/// acts on `N × N` two-mode amplitude matrices in `O(N³)`.
#[derive(Clone, Debug)]
pub struct TwoModeOperator {
    dim: usize,
    va: CMatrix,
    vb: CMatrix,
    phase: CMatrix,
}

impl TwoModeOperator {
    pub fn from_generators(a: &CMatrix, b: &CMatrix, t: f64) -> Self {
        let ea = a.clone().symmetric_eigen();
        let eb = b.clone().symmetric_eigen();
        let n = a.nrows();
        let phase = CMatrix::from_fn(n, n, |k, l| C64::from_polar(1.0, t * ea.eigenvalues[k] * eb.eigenvalues[l]));
        Self { dim: n, va: ea.eigenvectors, vb: eb.eigenvectors, phase }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Acts on `Ψ[m, n]`, the amplitude of `|m⟩ ⊗ |n⟩`.
    pub fn apply(&self, psi: &CMatrix) -> Result<CMatrix> {
        if psi.nrows() != self.dim || psi.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: psi.nrows() });
        }
        let mut x = self.va.adjoint() * psi * self.vb.conjugate();
        x.component_mul_assign(&self.phase);
        Ok(&self.va * x * self.vb.transpose())
    }

    /// `ψ_a ⊗ ψ_b` as an amplitude matrix.
    pub fn product(a: &TruncatedState, b: &TruncatedState) -> CMatrix {
        a.amplitudes() * b.amplitudes().transpose()
    }

    /// Dense `N² × N²` matrix, index `m N + n`. Only for small cutoffs.
    pub fn to_matrix(&self) -> CMatrix {
        let n = self.dim;
        let mut out = CMatrix::zeros(n * n, n * n);
        for col in 0..n * n {
            let mut e = CMatrix::zeros(n, n);
            e[(col / n, col % n)] = C64::new(1.0, 0.0);
            let img = self.apply(&e).expect("matching dims");
            for row in 0..n * n {
                out[(row, col)] = img[(row / n, row % n)];
            }
        }
        out
    }

    /// Population of the two-mode state outside the guard-banded block.
    pub fn guard_leakage(psi: &CMatrix) -> f64 {
        let g = guard_dim(psi.nrows());
        let total = psi.norm_squared();
        let mut inside = 0.0;
        for m in 0..g {
            for n in 0..g {
                inside += psi[(m, n)].norm_sqr();
            }
        }
        (total - inside) / total
    }
}

/// `H̄`, `S̄` as single-mode matrices and `C̄_X` as a two-mode operator.
#[derive(Clone, Debug)]
pub struct CliffordUnitaries {
    pub h: CMatrix,
    pub s: CMatrix,
    pub cx: TwoModeOperator,
}

/// `H̄ = exp(iπ(Q̂² + P̂²)/4)`, `S̄ = exp(iQ̂²/2)`, `C̄_X = exp(−iQ̂⊗P̂)`.
/// Squares are formed at `dim + 2` and cropped, so their matrix elements
/// inside the cutoff are exact.
pub fn clifford_unitaries(lattice: &GkpLattice, dim: usize) -> Result<CliffordUnitaries> {
    check_dim(dim)?;
    let (qb, pb) = quadratures(lattice, dim + 2);
    let crop = |m: CMatrix| m.view((0, 0), (dim, dim)).into_owned();
    let q2 = crop(qb.matrix() * qb.matrix());
    let p2 = crop(pb.matrix() * pb.matrix());
    let h = hermitian_exp(&(&q2 + &p2), PI / 4.0);
    let s = hermitian_exp(&q2, 0.5);
    let (q, p) = quadratures(lattice, dim);
    let cx = TwoModeOperator::from_generators(q.matrix(), p.matrix(), -1.0);
    Ok(CliffordUnitaries { h, s, cx })
}

/// `C̄_{σσ'} = exp(i ŝ_σ ⊗ ŝ_σ')`.
pub fn generalized_cp(control: Pauli, target: Pauli, lattice: &GkpLattice, dim: usize) -> Result<TwoModeOperator> {
    check_dim(dim)?;
    let (q, p) = quadratures(lattice, dim);
    let a = axis_quadrature(control, q.matrix(), p.matrix());
    let b = axis_quadrature(target, q.matrix(), p.matrix());
    Ok(TwoModeOperator::from_generators(&a, &b, 1.0))
}

/// A gate restricted to a two-dimensional code space.
#[derive(Clone, Debug, PartialEq)]
pub struct LogicalAction {
    /// `M[a][b] = ⟨ã|U|b̃⟩`.
    pub matrix: [[C64; 2]; 2],
    /// Weight of `U|b̃⟩` outside the code space.
    pub leakage: [f64; 2],
}

impl LogicalAction {
    /// Average gate fidelity of the compressed map `M` against a unitary `G`:
    /// `(tr M†M + |tr G†M|²)/6`.
    pub fn fidelity(&self, g: &[[C64; 2]; 2]) -> f64 {
        let mut tr = C64::new(0.0, 0.0);
        let mut mm = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                tr += g[a][b].conj() * self.matrix[a][b];
                mm += self.matrix[a][b].norm_sqr();
            }
        }
        (mm + tr.norm_sqr()) / 6.0
    }
}

/// Compresses `u` onto orthonormal codewords.
pub fn logical_action(u: &CMatrix, code: &[TruncatedState; 2]) -> Result<LogicalAction> {
    let mut matrix = [[C64::new(0.0, 0.0); 2]; 2];
    let mut leakage = [0.0; 2];
    for b in 0..2 {
        if code[b].dim() != u.ncols() {
            return Err(Error::DimensionMismatch { expected: u.ncols(), got: code[b].dim() });
        }
        let img = u * code[b].amplitudes();
        let mut kept = 0.0;
        for a in 0..2 {
            matrix[a][b] = code[a].amplitudes().dotc(&img);
            kept += matrix[a][b].norm_sqr();
        }
        leakage[b] = (img.norm_squared() - kept).max(0.0);
    }
    Ok(LogicalAction { matrix, leakage })
}

/// Shift `exp(i(vQ̂ − uP̂))`, i.e. `D((uα + vβ)/√π)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ShiftVector {
    pub u: f64,
    pub v: f64,
}

impl ShiftVector {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn displacement(&self, lattice: &GkpLattice) -> C64 {
        lattice.shift(self.u, self.v)
    }
}

/// Linear map on `(u₁, v₁, u₂, v₂)` for a shift applied before
/// `C̄_{σσ'}`, pushed to after it: `E ↦ U E U†`.
pub fn spread_matrix(control: Pauli, target: Pauli) -> [[f64; 4]; 4] {
    let (a, b) = axis_coefficients(control);
    let (a2, b2) = axis_coefficients(target);
    // u₁' = u₁ − b(a'u₂ + b'v₂), v₁' = v₁ + a(a'u₂ + b'v₂), and symmetrically.
    [
        [1.0, 0.0, -b * a2, -b * b2],
        [0.0, 1.0, a * a2, a * b2],
        [-b2 * a, -b2 * b, 1.0, 0.0],
        [a2 * a, a2 * b, 0.0, 1.0],
    ]
}

pub fn verify_error_spread(control: Pauli, target: Pauli, shifts: [ShiftVector; 2]) -> [ShiftVector; 2] {
    let m = spread_matrix(control, target);
    let x = [shifts[0].u, shifts[0].v, shifts[1].u, shifts[1].v];
    let y: Vec<f64> = m.iter().map(|row| row.iter().zip(&x).map(|(r, v)| r * v).sum()).collect();
    [ShiftVector::new(y[0], y[1]), ShiftVector::new(y[2], y[3])]
}

/// Result of [`one_bit_teleport`].
#[derive(Clone, Debug)]
pub struct TeleportResult {
    pub state: TruncatedState,
    /// Ancilla `X` outcome `±1`; `−1` triggered the `Z̄` correction.
    pub outcome: i8,
    pub p_outcome: f64,
}

/// Moves `a|0⟩ + b|1⟩` from a two-level ancilla onto a GKP mode.
///
/// The mode starts in `|0̃⟩`. `CD(α)` acts as an ancilla-controlled `X̄`
/// (its `D(α/2)` offset is undone afterwards), the ancilla is read out in
/// the `X` basis and a `−1` outcome is fixed with `Z̄`.
pub fn one_bit_teleport<R: Rng + ?Sized>(
    ancilla: [C64; 2],
    lattice: &GkpLattice,
    delta: f64,
    dim: usize,
    rng: &mut R,
) -> Result<TeleportResult> {
    let norm = (ancilla[0].norm_sqr() + ancilla[1].norm_sqr()).sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("ancilla state must be normalized, norm = {norm}")));
    }
    let zero = approx_codeword(lattice, ApproxParams::new(delta, 0)?, dim)?;
    let mut amps = CVector::zeros(2 * dim);
    amps.rows_mut(0, dim).copy_from(&(zero.amplitudes() * ancilla[0]));
    amps.rows_mut(dim, dim).copy_from(&(zero.amplitudes() * ancilla[1]));
    let mut hybrid = HybridQubitMode::from_vector(amps)?;
    let alpha = lattice.alpha();
    // After the D(−α/2) fix the |1⟩ branch carries D(−α) ≈ X̄.
    hybrid.controlled_displace(alpha, &mut DisplacementCache::new());
    let plus = hybrid.project_x(1);
    let p_plus = plus.norm_squared();
    let outcome: i8 = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
    let (branch, p) = if outcome > 0 { (plus, p_plus) } else { (hybrid.project_x(-1), 1.0 - p_plus) };
    let mut fix = displacement_matrix(-alpha / 2.0, dim);
    if outcome < 0 {
        fix = displacement_matrix(lattice.beta(), dim) * fix;
    }
    let state = TruncatedState::from_vector(fix * branch)?;
    Ok(TeleportResult { state, outcome, p_outcome: p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::orthonormalize_code;
    use crate::fock::fidelity;
    use crate::gkp::plus_minus_codeword;
    use crate::gkp::{suggest_dim, CodewordOptions};
    use crate::readout::{decoded_bloch, decoded_parity_correlation, Axis};

    fn code(delta: f64, dim: usize) -> [TruncatedState; 2] {
        let lat = GkpLattice::square();
        [
            approx_codeword(&lat, ApproxParams::new(delta, 0).unwrap(), dim).unwrap(),
            approx_codeword(&lat, ApproxParams::new(delta, 1).unwrap(), dim).unwrap(),
        ]
    }

    #[test]
    fn factorized_operator_matches_dense_exponential() {
        let lat = GkpLattice::square();
        let n = 12;
        let (q, p) = quadratures(&lat, n);
        let kron = q.matrix().kronecker(p.matrix());
        let dense = hermitian_exp(&kron, -1.0);
        let cx = clifford_unitaries(&lat, n).unwrap().cx.to_matrix();
        assert!((&dense - &cx).camax() < 1e-10);
        let zx = generalized_cp(Pauli::Z, Pauli::X, &lat, n).unwrap().to_matrix();
        assert!((&zx - &cx).camax() < 1e-8);
    }

    #[test]
    fn czz_is_swap_symmetric() {
        let lat = GkpLattice::square();
        let n = 10;
        let m = generalized_cp(Pauli::Z, Pauli::Z, &lat, n).unwrap().to_matrix();
        let swap = |i: usize| (i % n) * n + i / n;
        let mut worst: f64 = 0.0;
        for r in 0..n * n {
            for c in 0..n * n {
                worst = worst.max((m[(r, c)] - m[(swap(r), swap(c))]).abs());
            }
        }
        assert!(worst < 1e-10);
    }

    #[test]
    fn hadamard_on_the_code() {
        let lat = GkpLattice::square();
        let dim = 320;
        let g = clifford_unitaries(&lat, dim).unwrap();
        let cw = orthonormalize_code(&code(0.2, dim)).unwrap();
        let h2 = logical_action(&(&g.h * &g.h), &cw).unwrap();
        let id = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]];
        assert!(1.0 - h2.fidelity(&id) < 1e-3, "{}", h2.fidelity(&id));
        let plus = plus_minus_codeword(&lat, 0.2, 1, dim, &CodewordOptions::default()).unwrap();
        let moved = guarded_apply(&g.h, &cw[0]).unwrap();
        assert!(fidelity(&moved, &plus).unwrap() > 0.99);
    }

    #[test]
    fn phase_gate_is_approximate_at_finite_delta() {
        let lat = GkpLattice::square();
        let dim = 160;
        let g = clifford_unitaries(&lat, dim).unwrap();
        let cw = orthonormalize_code(&code(0.3, dim)).unwrap();
        let act = logical_action(&g.s, &cw).unwrap();
        let s = [[C64::new(1.0, 0.0), C64::new(0.0, 0.0)], [C64::new(0.0, 0.0), C64::new(0.0, 1.0)]];
        assert!(act.leakage.iter().all(|&l| l > 1e-6), "{:?}", act.leakage);
        assert!(act.fidelity(&s) > 0.8 && act.fidelity(&s) < 1.0 - 1e-6, "{}", act.fidelity(&s));
    }

    /// Logical fidelity `(1 + Σ ⟨g⟩)/4` of a two-qubit stabilizer state from decoded correlations.
    fn decoded_stabilizer_fidelity(psi: &CMatrix, gens: [[Option<Axis>; 2]; 3]) -> f64 {
        let lat = GkpLattice::square();
        (1.0 + gens.iter().map(|g| decoded_parity_correlation(psi, &lat, *g).unwrap()).sum::<f64>()) / 4.0
    }

    #[test]
    fn czz_acts_as_cz_on_codewords() {
        let lat = GkpLattice::square();
        let dim = 400;
        let opts = CodewordOptions::default();
        let cz = generalized_cp(Pauli::Z, Pauli::Z, &lat, dim).unwrap();
        let c = code(0.2, dim);
        let plus = plus_minus_codeword(&lat, 0.2, 1, dim, &opts).unwrap();
        let (x, y, z) = (Some(Axis::X), Some(Axis::Y), Some(Axis::Z));

        // |0⟩|+⟩ is left alone: stabilizers Z₁, X₂, Z₁X₂.
        let out = cz.apply(&TwoModeOperator::product(&c[0], &plus)).unwrap();
        assert!(TwoModeOperator::guard_leakage(&out) < 1e-6);
        let f = decoded_stabilizer_fidelity(&out, [[z, None], [None, x], [z, x]]);
        assert!(f > 0.98, "{f}");

        // |+⟩|+⟩ becomes the cluster pair: X₁Z₂, Z₁X₂, Y₁Y₂.
        let out = cz.apply(&TwoModeOperator::product(&plus, &plus)).unwrap();
        let f = decoded_stabilizer_fidelity(&out, [[x, z], [z, x], [y, y]]);
        assert!(f > 0.98, "{f}");
        // The same state is far from the X₁X₂ eigenstate.
        assert!(decoded_parity_correlation(&out, &lat, [x, x]).unwrap().abs() < 0.1);
    }

    #[test]
    fn spread_maps_are_symplectic() {
        for c in Pauli::ALL {
            for t in Pauli::ALL {
                let m = spread_matrix(c, t);
                let mat = nalgebra::Matrix4::from_fn(|i, j| m[i][j]);
                assert_eq!(mat.determinant(), 1.0);
                let j = nalgebra::Matrix4::new(0., 1., 0., 0., -1., 0., 0., 0., 0., 0., 0., 1., 0., 0., -1., 0.);
                assert_eq!(mat.transpose() * j * mat, j);
            }
        }
    }

    #[test]
    fn cx_spread_examples() {
        let z = ShiftVector::default();
        let out = verify_error_spread(Pauli::Z, Pauli::X, [ShiftVector::new(0.0, 0.3), z]);
        assert_eq!(out, [ShiftVector::new(0.0, 0.3), z]);
        let out = verify_error_spread(Pauli::Z, Pauli::X, [ShiftVector::new(0.2, 0.0), z]);
        assert_eq!(out, [ShiftVector::new(0.2, 0.0), ShiftVector::new(0.2, 0.0)]);
        assert_eq!(verify_error_spread(Pauli::Y, Pauli::Y, [z, z]), [z, z]);
    }

    #[test]
    fn spread_matches_fock_conjugation() {
        let lat = GkpLattice::square();
        let dim = 100;
        let psi = TwoModeOperator::product(
            &TruncatedState::coherent(C64::new(0.4, -0.2), dim).unwrap(),
            &TruncatedState::coherent(C64::new(-0.3, 0.1), dim).unwrap(),
        );
        let cases = [[0.2, 0.0, 0.0, 0.0], [0.0, 0.2, 0.0, 0.0], [0.0, 0.0, 0.2, 0.0], [0.0, 0.0, 0.0, -0.2], [0.15, -0.1, 0.05, 0.2]];
        for (c, t) in [(Pauli::Z, Pauli::X), (Pauli::X, Pauli::Y), (Pauli::Z, Pauli::Z)] {
            let u = generalized_cp(c, t, &lat, dim).unwrap();
            for x in cases {
                let shifts = [ShiftVector::new(x[0], x[1]), ShiftVector::new(x[2], x[3])];
                let out = verify_error_spread(c, t, shifts);
                let disp = |s: [ShiftVector; 2], m: &CMatrix| {
                    displacement_matrix(s[0].displacement(&lat), dim) * m * displacement_matrix(s[1].displacement(&lat), dim).transpose()
                };
                let lhs = u.apply(&disp(shifts, &psi)).unwrap();
                let rhs = disp(out, &u.apply(&psi).unwrap());
                let ov = lhs.iter().zip(rhs.iter()).map(|(a, b)| a.conj() * b).sum::<C64>().abs();
                assert!(1.0 - ov < 1e-4, "{c:?}{t:?} {x:?}: {ov}");
            }
        }
    }

    /// The two ancilla branches carry envelopes offset by `√π`, so the
    /// decoded coherence is damped by `e^{−πΔ²/4}` whatever the correction.
    #[test]
    fn teleport_examples() {
        let lat = GkpLattice::square();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        let plus = [C64::new(h, 0.0), C64::new(h, 0.0)];
        let zero = [C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let magic = [C64::new(h, 0.0), C64::from_polar(h, std::f64::consts::FRAC_PI_4)];

        let delta = 0.2;
        let dim = suggest_dim(&lat, delta, 1e-10, 600).unwrap();
        let damp = (-std::f64::consts::PI * delta * delta / 4.0).exp();
        let mut seen = [false; 2];
        for _ in 0..4 {
            let r = one_bit_teleport(plus, &lat, delta, dim, &mut rng).unwrap();
            seen[(r.outcome < 0) as usize] = true;
            let b = decoded_bloch(&r.state, &lat).unwrap();
            assert!((b[0] - damp).abs() < 3e-3 && b[1].abs() < 1e-3 && b[2].abs() < 1e-3, "{b:?}");

            let b = decoded_bloch(&one_bit_teleport(zero, &lat, delta, dim, &mut rng).unwrap().state, &lat).unwrap();
            assert!(b[2] > 0.99, "{b:?}");

            let b = decoded_bloch(&one_bit_teleport(magic, &lat, delta, dim, &mut rng).unwrap().state, &lat).unwrap();
            assert!((b[0] - h * damp).abs() < 3e-3 && (b[1] - h * damp).abs() < 3e-3, "{b:?}");
        }
        assert!(seen[0] && seen[1], "both outcomes should occur");

        let delta = 0.15;
        let dim = suggest_dim(&lat, delta, 1e-10, 600).unwrap();
        let r = one_bit_teleport(plus, &lat, delta, dim, &mut rng).unwrap();
        let b = decoded_bloch(&r.state, &lat).unwrap();
        assert!(0.5 * (1.0 + b[0]) > 0.99, "{b:?}");

        let bad = [C64::new(1.0, 0.0), C64::new(1.0, 0.0)];
        assert!(one_bit_teleport(bad, &lat, delta, dim, &mut rng).is_err());
    }
}
