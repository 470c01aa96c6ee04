//! Logical readout: binned homodyne detection and ancilla-based phase
//! estimation of displacement operators.
//!
//! Homodyne inefficiency `η` is pure loss before an ideal quadrature
//! measurement. For a quadrature `O` this is the same as drawing
//! `y = √η x + c √(1−η) v` with `x` from the ideal distribution and vacuum
//! noise `v ~ N(0, 1/2)`, where `c` is the axis scale; both views are
//! exposed and cross-checked in the tests.

use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, guard_dim, hermite_functions, CMatrix, CVector, DenseOperator, OperatorKind, TruncatedState};
use crate::gkp::{approx_codeword_with, suggest_dim, ApproxParams, CodewordOptions, GkpLattice};
use crate::numerics::{gauss_legendre, golden_section, normal_cdf, round_half_even};

/// Which logical Pauli a readout targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// `−P̂`, eigenvalues of `X̄ = D(α)`.
    X,
    /// `Q̂ − P̂`, eigenvalues of `Ȳ = D(α+β)`.
    Y,
    /// `Q̂`, eigenvalues of `Z̄ = D(β)`.
    Z,
}

impl Axis {
    /// Lattice vector `γ` with `exp(i√π O_γ)` the logical Pauli.
    pub fn gamma(self, lattice: &GkpLattice) -> C64 {
        match self {
            Axis::X => lattice.alpha(),
            Axis::Y => lattice.alpha() + lattice.beta(),
            Axis::Z => lattice.beta(),
        }
    }
}

/// `O_γ = c · q_θ` with `q_θ` the position quadrature of `e^{−iθn}ψ`.
fn axis_frame(lattice: &GkpLattice, axis: Axis) -> (f64, f64) {
    let g = axis.gamma(lattice);
    let theta = g.arg() - PI / 2.0;
    let c = 2f64.sqrt() * g.norm() / PI.sqrt();
    (theta, c)
}

/// Half-width of the interval that carries a `dim`-level state along an axis.
fn axis_half_width(dim: usize, c: f64) -> f64 {
    c * ((2 * dim + 1) as f64).sqrt() + 8.0 * c
}

/// Probability density of the quadrature `O_γ` of `state` at each point.
///
/// Fails when the density does not integrate to 1 within `1e-4` over its
/// natural support (a sign that the state is not normalized).
pub fn quadrature_pdf(state: &TruncatedState, lattice: &GkpLattice, axis: Axis, xs: &[f64]) -> Result<Vec<f64>> {
    let (theta, c) = axis_frame(lattice, axis);
    let rotated = state.rotated(theta);
    let norm = state.norm();
    let amps = rotated.amplitudes();
    let mut buf = Vec::with_capacity(amps.len());
    let pdf: Vec<f64> = xs
        .iter()
        .map(|&x| {
            hermite_functions(x / c, amps.len(), &mut buf);
            let psi: C64 = amps.iter().zip(&buf).map(|(a, h)| a * *h).sum();
            psi.norm_sqr() / (c * norm * norm)
        })
        .collect();
    Ok(pdf)
}

fn check_coverage(total: f64) -> Result<()> {
    if (total - 1.0).abs() > 1e-4 {
        return Err(Error::Numerical(format!("quadrature grid captures probability {total:.6}, expected 1 within 1e-4")));
    }
    Ok(())
}

/// Logical eigenstate with eigenvalue `+1` along `axis`.
pub fn logical_eigenstate(lattice: &GkpLattice, delta: f64, axis: Axis, dim: usize, opts: &CodewordOptions) -> Result<TruncatedState> {
    let zero = approx_codeword_with(lattice, ApproxParams::new(delta, 0)?, dim, opts)?;
    if axis == Axis::Z {
        return Ok(zero);
    }
    let one = approx_codeword_with(lattice, ApproxParams::new(delta, 1)?, dim, opts)?;
    let phase = if axis == Axis::X { C64::new(1.0, 0.0) } else { C64::new(0.0, 1.0) };
    let d = displacement_matrix(axis.gamma(lattice), dim);
    let mut best: Option<(f64, TruncatedState)> = None;
    for s in [1.0, -1.0] {
        let v = zero.amplitudes() + one.amplitudes() * (phase * s);
        let st = TruncatedState::from_vector(v)?.normalized()?;
        let ev = st.amplitudes().dotc(&(&d * st.amplitudes())).re;
        if best.as_ref().map_or(true, |(b, _)| ev > *b) {
            best = Some((ev, st));
        }
    }
    Ok(best.expect("two candidates").1)
}

/// Bin width and efficiency for homodyne readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningRule {
    /// Ideal bin width, `√π` for logical readout.
    pub spacing: f64,
    /// Detection efficiency in `(0, 1]`.
    pub eta: f64,
}

impl BinningRule {
    pub fn new(eta: f64) -> Result<Self> {
        let r = Self { spacing: PI.sqrt(), eta };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.spacing > 0.0) {
            return Err(Error::invalid("bin spacing must be positive"));
        }
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::invalid("efficiency must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Bin width after rescaling for the signal shrinkage `√η`.
    pub fn effective_spacing(&self) -> f64 {
        self.spacing * self.eta.sqrt()
    }

    /// `±1` from the parity of the nearest bin, ties to even.
    pub fn outcome(&self, raw: f64) -> i8 {
        let k = round_half_even(raw / self.effective_spacing());
        if k.rem_euclid(2.0) == 0.0 {
            1
        } else {
            -1
        }
    }
}

/// Result of one homodyne readout.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinnedOutcome {
    pub outcome: i8,
    /// Measured quadrature value, kept for analog decoding.
    pub raw: f64,
}

/// Inverse-CDF sampler for an ideal quadrature measurement.
#[derive(Clone, Debug)]
pub struct QuadratureSampler {
    xs: Vec<f64>,
    cdf: Vec<f64>,
    scale: f64,
}

/// Points in the sampling grid.
pub const SAMPLER_POINTS: usize = 1 << 14;

impl QuadratureSampler {
    pub fn new(state: &TruncatedState, lattice: &GkpLattice, axis: Axis) -> Result<Self> {
        let (_, c) = axis_frame(lattice, axis);
        let half = axis_half_width(state.dim(), c);
        let n = SAMPLER_POINTS;
        let h = 2.0 * half / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| -half + i as f64 * h).collect();
        let pdf = quadrature_pdf(state, lattice, axis, &xs)?;
        let mut cdf = Vec::with_capacity(n);
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..n {
            acc += 0.5 * h * (pdf[i - 1] + pdf[i]);
            cdf.push(acc);
        }
        check_coverage(acc)?;
        for v in &mut cdf {
            *v /= acc;
        }
        Ok(Self { xs, cdf, scale: c })
    }

    /// Axis scale `c` in `O_γ = c q_θ`.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&v| v < u).clamp(1, self.xs.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.xs[i - 1] + t * (self.xs[i] - self.xs[i - 1])
    }
}

/// Homodyne readout along `axis` with efficiency `rule.eta`, binned to
/// `rule.effective_spacing()`.
pub fn binned_measure<R: Rng + ?Sized>(
    state: &TruncatedState,
    lattice: &GkpLattice,
    axis: Axis,
    rule: &BinningRule,
    rng: &mut R,
) -> Result<BinnedOutcome> {
    rule.validate()?;
    let sampler = QuadratureSampler::new(state, lattice, axis)?;
    Ok(binned_sample(&sampler, rule, rng))
}

/// One draw from a prepared sampler; reuse the sampler for repeated shots.
pub fn binned_sample<R: Rng + ?Sized>(sampler: &QuadratureSampler, rule: &BinningRule, rng: &mut R) -> BinnedOutcome {
    let x = sampler.sample(rng);
    let s = sampler.scale() * ((1.0 - rule.eta) / 2.0).sqrt();
    let noise = if s > 0.0 { Normal::new(0.0, s).expect("positive width").sample(rng) } else { 0.0 };
    let raw = rule.eta.sqrt() * x + noise;
    BinnedOutcome { outcome: rule.outcome(raw), raw }
}

/// Probability that homodyne readout of `state` returns `−1`.
///
/// Integrates the ideal density with Gauss–Legendre panels aligned to the
/// bins and folds in the vacuum noise of the loss analytically.
pub fn wrong_parity_probability(state: &TruncatedState, lattice: &GkpLattice, axis: Axis, rule: &BinningRule) -> Result<f64> {
    rule.validate()?;
    let (_, c) = axis_frame(lattice, axis);
    let half = axis_half_width(state.dim(), c);
    let sp = rule.spacing;
    let panels_per_bin = 8;
    let (gx, gw) = gauss_legendre(12);
    let kmax = (half / sp).ceil() as i64 + 1;
    let s = c * ((1.0 - rule.eta) / 2.0).sqrt();
    let se = rule.effective_spacing();
    let sqe = rule.eta.sqrt();
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for k in -kmax..=kmax {
        let lo = (k as f64 - 0.5) * sp;
        let pw = sp / panels_per_bin as f64;
        for p in 0..panels_per_bin {
            let a = lo + p as f64 * pw;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(a + 0.5 * pw * (x + 1.0));
                weights.push(0.5 * pw * w);
            }
        }
    }
    let pdf = quadrature_pdf(state, lattice, axis, &nodes)?;
    let total: f64 = pdf.iter().zip(&weights).map(|(p, w)| p * w).sum();
    check_coverage(total)?;
    let mut wrong = 0.0;
    for ((&x, &p), &w) in nodes.iter().zip(&pdf).zip(&weights) {
        let mass = p * w;
        if mass == 0.0 {
            continue;
        }
        let y = sqe * x;
        let frac = if s == 0.0 {
            if rule.outcome(y) < 0 {
                1.0
            } else {
                0.0
            }
        } else {
            let centre = (y / se).round() as i64;
            let reach = (10.0 * s / se).ceil() as i64 + 1;
            let mut f = 0.0;
            for k in centre - reach..=centre + reach {
                if k.rem_euclid(2) == 1 {
                    let a = ((k as f64 - 0.5) * se - y) / s;
                    let b = ((k as f64 + 0.5) * se - y) / s;
                    f += normal_cdf(b) - normal_cdf(a);
                }
            }
            f
        };
        wrong += mass * frac;
    }
    Ok((wrong / total).clamp(0.0, 1.0))
}

/// Cutoff used for readout studies at envelope `delta`.
pub fn readout_dim(lattice: &GkpLattice, delta: f64) -> Result<usize> {
    suggest_dim(lattice, delta, 1e-10, 600)
}

/// Homodyne misidentification probability of the `+1` logical eigenstate.
pub fn misid_probability(delta: f64, eta: f64, lattice: &GkpLattice, axis: Axis) -> Result<f64> {
    let dim = readout_dim(lattice, delta)?;
    let state = logical_eigenstate(lattice, delta, axis, dim, &CodewordOptions::default())?;
    wrong_parity_probability(&state, lattice, axis, &BinningRule::new(eta)?)
}

/// Logical Bloch vector `(⟨X̄⟩, ⟨Ȳ⟩, ⟨Z̄⟩)` seen by ideal (`η = 1`) binning.
///
/// This is envelope-agnostic: it scores what a perfect homodyne decoder would
/// read, not the overlap with a particular choice of finite-Δ codewords.
pub fn decoded_bloch(state: &TruncatedState, lattice: &GkpLattice) -> Result<[f64; 3]> {
    let rule = BinningRule::new(1.0)?;
    let mut out = [0.0; 3];
    for (k, axis) in [Axis::X, Axis::Y, Axis::Z].into_iter().enumerate() {
        out[k] = 1.0 - 2.0 * wrong_parity_probability(state, lattice, axis, &rule)?;
    }
    Ok(out)
}

/// Rows `√(w_i/c) φ_m(x_i/c) e^{−iθm}` mapping Fock amplitudes to weighted
/// quadrature amplitudes, plus the bin sign of each node.
fn axis_sampling(lattice: &GkpLattice, axis: Axis, dim: usize) -> (CMatrix, Vec<f64>) {
    let (theta, c) = axis_frame(lattice, axis);
    let sp = PI.sqrt();
    let half = axis_half_width(dim, c);
    let kmax = (half / sp).ceil() as i64 + 1;
    let (gx, gw) = gauss_legendre(8);
    let panels = 4;
    let pw = sp / panels as f64;
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for k in -kmax..=kmax {
        for p in 0..panels {
            let a = (k as f64 - 0.5) * sp + p as f64 * pw;
            for (x, w) in gx.iter().zip(&gw) {
                nodes.push(a + 0.5 * pw * (x + 1.0));
                weights.push(0.5 * pw * w);
            }
        }
    }
    let rule = BinningRule { spacing: sp, eta: 1.0 };
    let signs = nodes.iter().map(|&x| rule.outcome(x) as f64).collect();
    let mut buf = Vec::with_capacity(dim);
    let mut m = CMatrix::zeros(nodes.len(), dim);
    for (i, (&x, &w)) in nodes.iter().zip(&weights).enumerate() {
        hermite_functions(x / c, dim, &mut buf);
        let s = (w / c).sqrt();
        for n in 0..dim {
            m[(i, n)] = C64::from_polar(s * buf[n], -theta * n as f64);
        }
    }
    (m, signs)
}

/// `⟨s₁ s₂⟩` of ideal bin signs for a two-mode amplitude matrix `Ψ[m, n]`;
/// `None` leaves that mode unmeasured.
pub fn decoded_parity_correlation(psi: &CMatrix, lattice: &GkpLattice, axes: [Option<Axis>; 2]) -> Result<f64> {
    let dim = psi.nrows();
    if psi.ncols() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: psi.ncols() });
    }
    let sample = |a: Option<Axis>| match a {
        Some(axis) => axis_sampling(lattice, axis, dim),
        None => (CMatrix::identity(dim, dim), vec![1.0; dim]),
    };
    let (a1, s1) = sample(axes[0]);
    let (a2, s2) = sample(axes[1]);
    let phi = &a1 * psi * a2.transpose();
    let (mut total, mut signed) = (0.0, 0.0);
    for j in 0..phi.ncols() {
        for i in 0..phi.nrows() {
            let p = phi[(i, j)].norm_sqr();
            total += p;
            signed += p * s1[i] * s2[j];
        }
    }
    check_coverage(total / psi.norm_squared())?;
    Ok(signed / total)
}

/// Two-level ancilla tensored with a truncated mode, stored as
/// `[ψ_0; ψ_1]` with `ψ_a` the mode amplitudes paired with ancilla `|a⟩`.
#[derive(Clone, Debug, PartialEq)]
pub struct HybridQubitMode {
    amps: CVector,
    dim: usize,
}

impl HybridQubitMode {
    /// `|+⟩ ⊗ ψ`.
    pub fn plus(mode: &TruncatedState) -> Self {
        let n = mode.dim();
        let v = mode.amplitudes() / (C64::new(2f64.sqrt() * mode.norm(), 0.0));
        let mut amps = CVector::zeros(2 * n);
        amps.rows_mut(0, n).copy_from(&v);
        amps.rows_mut(n, n).copy_from(&v);
        Self { amps, dim: n }
    }

    pub fn from_vector(amps: CVector) -> Result<Self> {
        if amps.len() % 2 != 0 || amps.is_empty() {
            return Err(Error::invalid("hybrid state needs an even, non-zero length"));
        }
        let dim = amps.len() / 2;
        Ok(Self { amps, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn branch(&self, a: usize) -> CVector {
        self.amps.rows(a * self.dim, self.dim).into_owned()
    }

    /// Reduced ancilla density matrix.
    pub fn ancilla_rho(&self) -> [[C64; 2]; 2] {
        let (b0, b1) = (self.branch(0), self.branch(1));
        [[b0.dotc(&b0), b1.dotc(&b0)], [b0.dotc(&b1), b1.dotc(&b1)]]
    }

    fn set_branches(&mut self, b0: CVector, b1: CVector) {
        let n = self.dim;
        self.amps.rows_mut(0, n).copy_from(&b0);
        self.amps.rows_mut(n, n).copy_from(&b1);
    }

    /// Apply `D(ζ/2)` to the `|0⟩` branch and `D(−ζ/2)` to the `|1⟩` branch.
    pub fn controlled_displace(&mut self, zeta: C64, cache: &mut DisplacementCache) {
        let b0 = cache.get(zeta / 2.0, self.dim) * self.branch(0);
        let b1 = cache.get(-zeta / 2.0, self.dim) * self.branch(1);
        self.set_branches(b0, b1);
    }

    /// `R_x = exp(−iπσ_x/4)` on the ancilla.
    pub fn rx(&mut self) {
        let (b0, b1) = (self.branch(0), self.branch(1));
        let r = C64::new(1.0 / 2f64.sqrt(), 0.0);
        let mi = C64::new(0.0, -1.0 / 2f64.sqrt());
        self.set_branches(&b0 * r + &b1 * mi, &b0 * mi + &b1 * r);
    }

    /// `S = diag(1, i)` on the ancilla.
    pub fn s_gate(&mut self) {
        let b1 = self.branch(1) * C64::new(0.0, 1.0);
        let b0 = self.branch(0);
        self.set_branches(b0, b1);
    }

    pub fn ancilla_pauli(&mut self, p: AncillaPauli) {
        let (b0, b1) = (self.branch(0), self.branch(1));
        let i = C64::new(0.0, 1.0);
        match p {
            AncillaPauli::X => self.set_branches(b1, b0),
            AncillaPauli::Y => self.set_branches(&b1 * (-i), &b0 * i),
            AncillaPauli::Z => self.set_branches(b0, -b1),
        }
    }

    /// Unnormalized mode state for an `X`-basis outcome `±1`.
    pub fn project_x(&self, outcome: i8) -> CVector {
        let s = if outcome > 0 { 1.0 } else { -1.0 };
        (self.branch(0) + self.branch(1) * C64::new(s, 0.0)) / C64::new(2f64.sqrt(), 0.0)
    }
}

/// Memoized displacement matrices keyed by rounded argument.
#[derive(Default, Debug)]
pub struct DisplacementCache {
    map: HashMap<(i64, i64, usize), CMatrix>,
}

impl DisplacementCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&mut self, z: C64, dim: usize) -> &CMatrix {
        let key = ((z.re * 1e12).round() as i64, (z.im * 1e12).round() as i64, dim);
        self.map.entry(key).or_insert_with(|| displacement_matrix(z, dim))
    }
}

/// `CD(ζ) = D(ζ/2) ⊗ |0⟩⟨0| + D(−ζ/2) ⊗ |1⟩⟨1|` as a `2N × 2N` operator.
pub fn controlled_displacement(zeta: C64, dim: usize) -> Result<DenseOperator> {
    let d0 = displacement_matrix(zeta / 2.0, dim);
    let d1 = displacement_matrix(-zeta / 2.0, dim);
    let g = guard_dim(dim);
    let leak: f64 = (g..dim).map(|m| d0[(m, 0)].norm_sqr().max(d1[(m, 0)].norm_sqr())).sum();
    if leak > 1e-6 {
        return Err(Error::Truncation(format!("controlled displacement by {zeta} exceeds the cutoff {dim}")));
    }
    let mut m = CMatrix::zeros(2 * dim, 2 * dim);
    m.view_mut((0, 0), (dim, dim)).copy_from(&d0);
    m.view_mut((dim, dim), (dim, dim)).copy_from(&d1);
    DenseOperator::new(m, OperatorKind::Unitary)
}

/// Pauli error on the ancilla.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AncillaPauli {
    X,
    Y,
    Z,
}

/// Where ancilla errors strike.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorPlacement {
    BeforeCd,
    DuringCdUniform,
    BeforeMeasurement,
}

/// Pauli error model for the two-level ancilla.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AncillaModel {
    pub p_x: f64,
    pub p_y: f64,
    pub p_z: f64,
    pub placement: ErrorPlacement,
}

impl AncillaModel {
    pub fn new(p_x: f64, p_y: f64, p_z: f64, placement: ErrorPlacement) -> Result<Self> {
        let m = Self { p_x, p_y, p_z, placement };
        m.validate()?;
        Ok(m)
    }

    pub fn noiseless() -> Self {
        Self { p_x: 0.0, p_y: 0.0, p_z: 0.0, placement: ErrorPlacement::DuringCdUniform }
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_x, self.p_y, self.p_z];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || ps.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err(Error::invalid("ancilla error probabilities must lie in [0, 1] and sum to at most 1"));
        }
        Ok(())
    }

    /// `p_z / (p_x + p_y)`; infinite for a pure dephasing ancilla.
    pub fn bias(&self) -> f64 {
        self.p_z / (self.p_x + self.p_y)
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<AncillaPauli> {
        let u: f64 = rng.gen();
        if u < self.p_x {
            Some(AncillaPauli::X)
        } else if u < self.p_x + self.p_y {
            Some(AncillaPauli::Y)
        } else if u < self.p_x + self.p_y + self.p_z {
            Some(AncillaPauli::Z)
        } else {
            None
        }
    }
}

/// Phase-estimation circuit variant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "lowercase")]
pub enum Scheme {
    /// `CD(ζ)` then an `X`-basis readout.
    Simple,
    /// `CD(ε)`, `R_x`, `CD(ζ)`, `X` readout, with `D(ε/2)` along the
    /// conjugate quadrature and strength `lambda`.
    Improved { lambda: f64 },
}

/// `D(ε/2)` for the improved scheme: `e^{iλP̂}` for `Z̄`, `e^{−iλQ̂}` for `X̄`.
///
/// For `Ȳ` the direction is the quadrature orthogonal to `α+β`, rotated by
/// `+π/2` as for `Z̄`.
pub fn improved_half_epsilon(lattice: &GkpLattice, axis: Axis, lambda: f64) -> C64 {
    let sp = PI.sqrt();
    match axis {
        Axis::Z => -lambda * lattice.alpha() / sp,
        Axis::X => -lambda * lattice.beta() / sp,
        Axis::Y => {
            let g = axis.gamma(lattice);
            let unit = C64::new(0.0, 1.0) * g / g.norm();
            lambda * unit * (lattice.alpha().norm() / sp)
        }
    }
}

/// Kraus pair `(M_+, M_−)` on the mode for one noiseless round, with the
/// `ζ/2` offset of the controlled displacement undone.
pub fn round_kraus(scheme: Scheme, zeta: C64, half_eps: C64, dim: usize) -> (CMatrix, CMatrix) {
    let zp = displacement_matrix(zeta / 2.0, dim);
    let zm = displacement_matrix(-zeta / 2.0, dim);
    let half = C64::new(0.5, 0.0);
    let (mp, mm) = match scheme {
        Scheme::Simple => ((&zp + &zm) * half, (&zp - &zm) * half),
        Scheme::Improved { .. } => {
            let e = displacement_matrix(half_eps, dim);
            let ed = displacement_matrix(-half_eps, dim);
            let i = C64::new(0.0, 1.0);
            let a = &zp * (&e - &ed * i);
            let b = &zm * (&ed - &e * i);
            let k = C64::new(1.0 / (2.0 * 2f64.sqrt()), 0.0);
            ((&a + &b) * k, (&a - &b) * k)
        }
    };
    (&zp * mp, &zp * mm)
}

/// Outcome probabilities and post-measurement states of one round.
#[derive(Clone, Debug)]
pub struct PhaseEstResult {
    pub p_plus: f64,
    /// Normalized mode states for outcomes `+1` and `−1` (`None` if impossible).
    pub post_plus: Option<TruncatedState>,
    pub post_minus: Option<TruncatedState>,
    /// Displacement undone on the post states; the raw circuit output sits at
    /// `D(−offset)` relative to them.
    pub offset: C64,
}

fn post_states(psi: &CVector, mp: &CMatrix, mm: &CMatrix) -> Result<(f64, Option<TruncatedState>, Option<TruncatedState>)> {
    let (vp, vm) = (mp * psi, mm * psi);
    let (pp, pm) = (vp.norm_squared(), vm.norm_squared());
    let tot = pp + pm;
    let make = |v: CVector, p: f64| -> Result<Option<TruncatedState>> {
        if p <= 1e-300 {
            Ok(None)
        } else {
            Ok(Some(TruncatedState::from_vector(v / C64::new(p.sqrt(), 0.0))?))
        }
    };
    Ok((pp / tot, make(vp, pp)?, make(vm, pm)?))
}

/// One noiseless round of the simple scheme, `p(±) = ½[1 ± Re⟨D(ζ)⟩]`.
pub fn phase_est_simple(state: &TruncatedState, zeta: C64) -> Result<PhaseEstResult> {
    let (mp, mm) = round_kraus(Scheme::Simple, zeta, C64::new(0.0, 0.0), state.dim());
    let psi = state.amplitudes() / C64::new(state.norm(), 0.0);
    let (p_plus, post_plus, post_minus) = post_states(&psi, &mp, &mm)?;
    Ok(PhaseEstResult { p_plus, post_plus, post_minus, offset: zeta / 2.0 })
}

/// One noiseless round of the improved scheme with `D(ε/2) = half_eps`.
pub fn phase_est_improved(state: &TruncatedState, zeta: C64, half_eps: C64) -> Result<PhaseEstResult> {
    let (mp, mm) = round_kraus(Scheme::Improved { lambda: 0.0 }, zeta, half_eps, state.dim());
    let psi = state.amplitudes() / C64::new(state.norm(), 0.0);
    let (p_plus, post_plus, post_minus) = post_states(&psi, &mp, &mm)?;
    Ok(PhaseEstResult { p_plus, post_plus, post_minus, offset: zeta / 2.0 })
}

/// `p(+)` from the analytic formula for the simple scheme.
pub fn simple_p_plus_analytic(state: &TruncatedState, zeta: C64) -> f64 {
    let d = displacement_matrix(zeta, state.dim());
    let psi = state.amplitudes();
    let ev = psi.dotc(&(&d * psi)) / psi.norm_squared();
    0.5 * (1.0 + ev.re)
}

/// Whether majority-vote rounds act on the evolving state or fresh copies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoteMode {
    #[default]
    Reuse,
    Fresh,
}

/// Exact probability that an `n`-round majority vote returns `−1`.
///
/// In reuse mode every outcome sequence is followed through the Kraus tree;
/// fresh mode is the binomial tail of the single-round error.
pub fn majority_error_exact(state: &TruncatedState, n_rounds: usize, mp: &CMatrix, mm: &CMatrix, mode: VoteMode) -> Result<f64> {
    if n_rounds % 2 == 0 {
        return Err(Error::invalid("majority vote needs an odd number of rounds"));
    }
    let psi = state.amplitudes() / C64::new(state.norm(), 0.0);
    match mode {
        VoteMode::Reuse => {
            fn walk(v: CVector, depth: usize, minus: usize, n: usize, mp: &CMatrix, mm: &CMatrix) -> f64 {
                if minus > n / 2 {
                    return v.norm_squared();
                }
                if depth == n || (depth - minus) > n / 2 {
                    return 0.0;
                }
                walk(mp * &v, depth + 1, minus, n, mp, mm) + walk(mm * &v, depth + 1, minus + 1, n, mp, mm)
            }
            Ok(walk(psi, 0, 0, n_rounds, mp, mm))
        }
        VoteMode::Fresh => {
            let p = (mm * &psi).norm_squared();
            let mut tail = 0.0;
            for k in n_rounds / 2 + 1..=n_rounds {
                tail += binomial(n_rounds, k) * p.powi(k as i32) * (1.0 - p).powi((n_rounds - k) as i32);
            }
            Ok(tail)
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Minimize the single-round error of the improved scheme over `λ ∈ [0, 3√π Δ²]`.
pub fn optimize_lambda(state: &TruncatedState, lattice: &GkpLattice, axis: Axis, delta: f64, n_rounds: usize) -> Result<(f64, f64)> {
    let zeta = axis.gamma(lattice);
    let mut err = None;
    let (lam, p) = golden_section(
        |lam| {
            let he = improved_half_epsilon(lattice, axis, lam);
            let (mp, mm) = round_kraus(Scheme::Improved { lambda: lam }, zeta, he, state.dim());
            match majority_error_exact(state, n_rounds, &mp, &mm, VoteMode::Reuse) {
                Ok(v) => v,
                Err(e) => {
                    err = Some(e);
                    f64::INFINITY
                }
            }
        },
        0.0,
        3.0 * PI.sqrt() * delta * delta,
        1e-7,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok((lam, p))
}

/// Closed-form single-round error of the simple scheme, `½(1 − e^{−πΔ²/4})`.
pub fn simple_error_formula(delta: f64) -> f64 {
    0.5 * (1.0 - (-PI * delta * delta / 4.0).exp())
}

/// Closed-form improved-scheme error `½{1 − e^{−πΔ²/4}[e^{−λ²/Δ²} + sin(√π λ)]}`.
pub fn improved_error_formula(delta: f64, lambda: f64) -> f64 {
    let d2 = delta * delta;
    0.5 * (1.0 - (-PI * d2 / 4.0).exp() * ((-lambda * lambda / d2).exp() + (PI.sqrt() * lambda).sin()))
}

/// Record of an ancilla error that was injected into a round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectedError {
    pub pauli: AncillaPauli,
    pub placement: ErrorPlacement,
    /// Fraction of `CD(ζ)` completed before the error (during-CD placement).
    pub fraction: Option<f64>,
    /// Nominal mode displacement caused by the error: the part of `ζ` applied
    /// with the wrong sign.
    pub shift: C64,
}

/// One round in a sampled trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub outcome: i8,
    pub p_plus: f64,
    pub injected: Option<InjectedError>,
}

/// Sampled majority vote.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub outcome: i8,
    pub rounds: Vec<RoundRecord>,
}

/// Run one sampled round on the hybrid circuit, injecting at most one
/// ancilla error drawn from `model`.
///
/// Returns the record and the normalized post state with the `ζ/2` offset
/// undone.
pub fn sampled_round<R: Rng + ?Sized>(
    state: &TruncatedState,
    scheme: Scheme,
    zeta: C64,
    half_eps: C64,
    model: &AncillaModel,
    cache: &mut DisplacementCache,
    rng: &mut R,
) -> Result<(RoundRecord, TruncatedState)> {
    model.validate()?;
    let dim = state.dim();
    let mut h = HybridQubitMode::plus(state);
    let pauli = model.draw(rng);
    let mut injected = None;
    let mut inject = |h: &mut HybridQubitMode, fraction: Option<f64>, shift: C64| {
        if let Some(p) = pauli {
            h.ancilla_pauli(p);
            injected = Some(InjectedError { pauli: p, placement: model.placement, fraction, shift });
        }
    };
    if model.placement == ErrorPlacement::BeforeCd {
        inject(&mut h, None, C64::new(0.0, 0.0));
    }
    if let Scheme::Improved { .. } = scheme {
        h.controlled_displace(2.0 * half_eps, cache);
        h.rx();
    }
    if model.placement == ErrorPlacement::DuringCdUniform && pauli.is_some() {
        let t: f64 = rng.gen();
        h.controlled_displace(zeta * t, cache);
        let flips = !matches!(pauli, Some(AncillaPauli::Z));
        let shift = if flips { zeta * (1.0 - t) } else { C64::new(0.0, 0.0) };
        inject(&mut h, Some(t), shift);
        h.controlled_displace(zeta * (1.0 - t), cache);
    } else {
        h.controlled_displace(zeta, cache);
    }
    if model.placement == ErrorPlacement::BeforeMeasurement {
        inject(&mut h, None, C64::new(0.0, 0.0));
    }
    let vp = h.project_x(1);
    let vm = h.project_x(-1);
    let (pp, pm) = (vp.norm_squared(), vm.norm_squared());
    let p_plus = pp / (pp + pm);
    let outcome: i8 = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
    let v = if outcome > 0 { vp } else { vm };
    let corrected = cache.get(zeta / 2.0, dim) * v;
    let post = TruncatedState::from_vector(corrected)?.normalized()?;
    Ok((RoundRecord { round: 0, outcome, p_plus, injected }, post))
}

/// Sampled `n`-round majority vote; rounds reuse the evolving state or a
/// fresh copy per `mode`.
#[allow(clippy::too_many_arguments)]
pub fn majority_vote<R: Rng + ?Sized>(
    state: &TruncatedState,
    n_rounds: usize,
    scheme: Scheme,
    zeta: C64,
    half_eps: C64,
    model: &AncillaModel,
    mode: VoteMode,
    rng: &mut R,
) -> Result<VoteRecord> {
    if n_rounds % 2 == 0 {
        return Err(Error::invalid("majority vote needs an odd number of rounds"));
    }
    let mut cache = DisplacementCache::new();
    let mut current = state.clone();
    let mut rounds = Vec::with_capacity(n_rounds);
    let mut sum = 0i32;
    for r in 0..n_rounds {
        let input = if mode == VoteMode::Reuse { &current } else { state };
        let (mut rec, post) = sampled_round(input, scheme, zeta, half_eps, model, &mut cache, rng)?;
        rec.round = r;
        sum += rec.outcome as i32;
        rounds.push(rec);
        current = post;
    }
    Ok(VoteRecord { outcome: if sum > 0 { 1 } else { -1 }, rounds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channels::pure_loss;
    use rand::SeedableRng;

    fn code(delta: f64, dim: usize) -> TruncatedState {
        approx_codeword_with(&GkpLattice::square(), ApproxParams::new(delta, 0).unwrap(), dim, &CodewordOptions::unchecked()).unwrap()
    }

    #[test]
    fn vacuum_pdf_is_unit_gaussian() {
        let lat = GkpLattice::square();
        let vac = TruncatedState::vacuum(10).unwrap();
        let xs = [-1.0, 0.0, 0.7];
        let pdf = quadrature_pdf(&vac, &lat, Axis::Z, &xs).unwrap();
        for (x, p) in xs.iter().zip(pdf) {
            assert!((p - (-x * x).exp() / PI.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn codeword_peaks_on_even_multiples() {
        let lat = GkpLattice::square();
        let s = PI.sqrt();
        let zero = code(0.3, 140);
        let pdf = quadrature_pdf(&zero, &lat, Axis::Z, &[0.0, s, 2.0 * s]).unwrap();
        assert!(pdf[0] > 50.0 * pdf[1] && pdf[2] > 50.0 * pdf[1]);
        let plus = logical_eigenstate(&lat, 0.3, Axis::X, 100, &CodewordOptions::unchecked()).unwrap();
        let pdf = quadrature_pdf(&plus, &lat, Axis::X, &[0.0, s, 2.0 * s]).unwrap();
        assert!(pdf[0] > 50.0 * pdf[1] && pdf[2] > 50.0 * pdf[1]);
    }

    #[test]
    fn convolution_matches_kraus_mixture() {
        // Loss then ideal homodyne equals the rescaled pdf smeared by vacuum noise.
        let lat = GkpLattice::square();
        let dim = 80;
        let st = code(0.35, dim);
        let eta = 0.8;
        let ch = pure_loss(eta, dim).unwrap();
        let y = 0.9;
        let mut mix = 0.0;
        for k in ch.ops() {
            let v = k * st.amplitudes();
            if v.norm() > 1e-14 {
                let b = TruncatedState::from_vector(v).unwrap();
                mix += b.norm().powi(2) * quadrature_pdf(&b, &lat, Axis::Z, &[y]).unwrap()[0];
            }
        }
        let (xs, ws) = gauss_legendre(400);
        let s = ((1.0 - eta) / 2.0).sqrt();
        let nodes: Vec<f64> = xs.iter().map(|x| 12.0 * x).collect();
        let pdf = quadrature_pdf(&st, &lat, Axis::Z, &nodes).unwrap();
        let conv: f64 = nodes
            .iter()
            .zip(&pdf)
            .zip(&ws)
            .map(|((x, p), w)| 12.0 * w * p * (-(y - eta.sqrt() * x).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
            .sum();
        assert!((mix - conv).abs() < 1e-8, "{mix} {conv}");
    }

    #[test]
    fn tie_break_and_bins() {
        let r = BinningRule::new(1.0).unwrap();
        let s = PI.sqrt();
        assert_eq!(r.outcome(0.5 * s), 1);
        assert_eq!(r.outcome(1.5 * s), 1);
        assert_eq!(r.outcome(s), -1);
        assert_eq!(r.outcome(-s), -1);
        assert!(BinningRule::new(0.0).is_err());
    }

    #[test]
    fn sharp_codeword_reads_correctly() {
        let p = misid_probability(0.15, 1.0, &GkpLattice::square(), Axis::Z).unwrap();
        assert!(p < 1e-4, "{p}");
    }

    #[test]
    fn misid_monotone_in_efficiency() {
        let lat = GkpLattice::square();
        let st = code(0.3, 140);
        let mut prev = 1.0;
        for eta in [0.6, 0.7, 0.8, 0.9, 1.0] {
            let p = wrong_parity_probability(&st, &lat, Axis::Z, &BinningRule::new(eta).unwrap()).unwrap();
            assert!(p <= prev + 1e-12);
            prev = p;
        }
    }

    #[test]
    fn sampled_readout_matches_integral() {
        let lat = GkpLattice::square();
        let st = code(0.3, 140);
        let rule = BinningRule::new(0.75).unwrap();
        let exact = wrong_parity_probability(&st, &lat, Axis::Z, &rule).unwrap();
        let sampler = QuadratureSampler::new(&st, &lat, Axis::Z).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let m = 40_000;
        let wrong = (0..m).filter(|_| binned_sample(&sampler, &rule, &mut rng).outcome < 0).count() as f64 / m as f64;
        let se = (exact * (1.0 - exact) / m as f64).sqrt();
        assert!((wrong - exact).abs() < 4.0 * se, "{wrong} {exact}");
    }

    #[test]
    fn controlled_displacement_properties() {
        let dim = 60;
        let id = controlled_displacement(C64::new(0.0, 0.0), dim).unwrap();
        assert!(id.unitarity_defect(dim) < 1e-14);
        let z = C64::new(0.0, 0.8);
        let cd = controlled_displacement(z, dim).unwrap();
        let sq = cd.matrix() * cd.matrix();
        let d = displacement_matrix(z, dim);
        let b = 20;
        let diff = (sq.view((0, 0), (b, b)) - d.view((0, 0), (b, b))).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(diff < 1e-9);
        // |+⟩|0⟩: ancilla coherence equals ⟨D(ζ)⟩/2 ... of the vacuum, e^{−|ζ|²/2}/2.
        let vac = TruncatedState::vacuum(dim).unwrap();
        let mut h = HybridQubitMode::plus(&vac);
        h.controlled_displace(z, &mut DisplacementCache::new());
        let rho = h.ancilla_rho();
        assert!((rho[0][1].norm() - 0.5 * (-0.32f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn simple_round_matches_formula() {
        let lat = GkpLattice::square();
        let st = code(0.3, 140);
        let r = phase_est_simple(&st, lat.beta()).unwrap();
        assert!((r.p_plus - simple_p_plus_analytic(&st, lat.beta())).abs() < 1e-8);
        let p_err = 1.0 - r.p_plus;
        assert!((p_err / simple_error_formula(0.3) - 1.0).abs() < 0.1);
        // The hybrid circuit reproduces the Kraus-operator probability.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let (rec, _) = sampled_round(&st, Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), &AncillaModel::noiseless(), &mut DisplacementCache::new(), &mut rng).unwrap();
        assert!((rec.p_plus - r.p_plus).abs() < 1e-10);
    }

    #[test]
    fn improved_with_zero_lambda_is_simple() {
        let lat = GkpLattice::square();
        let st = code(0.3, 140);
        let a = phase_est_simple(&st, lat.beta()).unwrap();
        let b = phase_est_improved(&st, lat.beta(), C64::new(0.0, 0.0)).unwrap();
        assert!((a.p_plus - b.p_plus).abs() < 1e-9);
        let he = improved_half_epsilon(&lat, Axis::Z, 0.05);
        let (mp, mm) = round_kraus(Scheme::Improved { lambda: 0.05 }, lat.beta(), he, 140);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let (rec, _) = sampled_round(&st, Scheme::Improved { lambda: 0.05 }, lat.beta(), he, &AncillaModel::noiseless(), &mut DisplacementCache::new(), &mut rng).unwrap();
        let p = (&mp * st.amplitudes()).norm_squared();
        assert!((rec.p_plus - p).abs() < 1e-10);
        let total = p + (&mm * st.amplitudes()).norm_squared();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn majority_modes() {
        let lat = GkpLattice::square();
        let st = code(0.3, 140);
        let (mp, mm) = round_kraus(Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), 140);
        let one = majority_error_exact(&st, 1, &mp, &mm, VoteMode::Reuse).unwrap();
        let fresh1 = majority_error_exact(&st, 1, &mp, &mm, VoteMode::Fresh).unwrap();
        assert!((one - fresh1).abs() < 1e-14);
        let three = majority_error_exact(&st, 3, &mp, &mm, VoteMode::Reuse).unwrap();
        assert!(three < one);
        assert!(majority_error_exact(&st, 2, &mp, &mm, VoteMode::Reuse).is_err());
    }

    #[test]
    fn ancilla_error_injection() {
        let lat = GkpLattice::square();
        let st = code(0.3, 140);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut cache = DisplacementCache::new();
        // A certain Z flip before readout always flips the outcome of an ideal-ish +1 state.
        let flip = AncillaModel::new(0.0, 0.0, 1.0, ErrorPlacement::BeforeMeasurement).unwrap();
        let clean = phase_est_simple(&st, lat.beta()).unwrap();
        let (rec, _) = sampled_round(&st, Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), &flip, &mut cache, &mut rng).unwrap();
        assert!((rec.p_plus - (1.0 - clean.p_plus)).abs() < 1e-10);
        // Bit flips mid-CD leave a shift along β of length at most |β|.
        let bits = AncillaModel::new(1.0, 0.0, 0.0, ErrorPlacement::DuringCdUniform).unwrap();
        for _ in 0..20 {
            let (rec, _) = sampled_round(&st, Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), &bits, &mut cache, &mut rng).unwrap();
            let inj = rec.injected.unwrap();
            assert!(inj.shift.norm() <= lat.beta().norm() + 1e-12);
            assert!((inj.shift.arg() - lat.beta().arg()).abs() < 1e-12 || inj.shift.norm() == 0.0);
        }
        // Z errors commute with the controlled displacement: the post state's
        // code-space weight is unchanged.
        let z_mid = AncillaModel::new(0.0, 0.0, 1.0, ErrorPlacement::DuringCdUniform).unwrap();
        let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let (_, post_z) = sampled_round(&st, Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), &z_mid, &mut cache, &mut r1).unwrap();
        let weight = |s: &TruncatedState| s.amplitudes().dotc(st.amplitudes()).norm_sqr();
        let expect = [clean.post_plus.as_ref(), clean.post_minus.as_ref()];
        let w = weight(&post_z);
        assert!(expect.iter().flatten().any(|e| (weight(e) - w).abs() < 1e-9));
        assert!((AncillaModel::new(0.01, 0.0, 0.1, ErrorPlacement::BeforeCd).unwrap().bias() - 10.0).abs() < 1e-12);
    }

    #[test]
    fn ideal_state_never_errs() {
        // Fresh sampled votes on a sharp codeword with a clean ancilla.
        let lat = GkpLattice::square();
        let st = code(0.15, 300);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in [1, 3] {
            let rec = majority_vote(&st, n, Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), &AncillaModel::noiseless(), VoteMode::Reuse, &mut rng).unwrap();
            assert_eq!(rec.rounds.len(), n);
        }
        let (mp, mm) = round_kraus(Scheme::Simple, lat.beta(), C64::new(0.0, 0.0), 300);
        let p = majority_error_exact(&st, 5, &mp, &mm, VoteMode::Reuse).unwrap();
        assert!(p < 1e-3);
    }

    #[test]
    fn decoded_correlations_factor_on_products() {
        let lat = GkpLattice::square();
        let dim = 90;
        let opts = CodewordOptions::default();
        let a = logical_eigenstate(&lat, 0.4, Axis::X, dim, &opts).unwrap();
        let b = logical_eigenstate(&lat, 0.4, Axis::Z, dim, &opts).unwrap();
        let psi = a.amplitudes() * b.amplitudes().transpose();
        let (ba, bb) = (decoded_bloch(&a, &lat).unwrap(), decoded_bloch(&b, &lat).unwrap());
        let xz = decoded_parity_correlation(&psi, &lat, [Some(Axis::X), Some(Axis::Z)]).unwrap();
        assert!((xz - ba[0] * bb[2]).abs() < 1e-6, "{xz} vs {}", ba[0] * bb[2]);
        let x_only = decoded_parity_correlation(&psi, &lat, [Some(Axis::X), None]).unwrap();
        assert!((x_only - ba[0]).abs() < 1e-6);
        assert!(ba[0] > 0.8 && ba[2].abs() < 1e-2, "{ba:?}");
    }
}
