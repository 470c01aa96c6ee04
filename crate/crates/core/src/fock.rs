//! Truncated Fock-space states and operators.
//!
//! Everything here lives in an `N`-dimensional truncation of the oscillator
//! Hilbert space. Quadratures use the convention `[q, p] = i`, so
//! `q = (a + a†)/√2` and a displacement `D(α)` shifts `(q, p)` by
//! `√2 (Re α, Im α)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gkp::GkpLattice;
use crate::numerics::ln_factorials;

pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

const I: C64 = C64::new(0.0, 1.0);

/// Fraction of the top Fock levels excluded from unitarity and commutator checks.
pub const GUARD_FRACTION: f64 = 0.15;

/// Number of levels below the guard band for a cutoff `dim`.
pub fn guard_dim(dim: usize) -> usize {
    dim - ((dim as f64) * GUARD_FRACTION).ceil() as usize
}

/// A pure state in a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedState {
    amps: CVector,
}

/// JSON form of a state: `{dim, re[], im[]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct StateRecord {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl TruncatedState {
    pub fn from_vector(amps: CVector) -> Result<Self> {
        if amps.is_empty() {
            return Err(Error::invalid("state dimension must be positive"));
        }
        Ok(Self { amps })
    }

    pub fn from_amplitudes(amps: Vec<C64>) -> Result<Self> {
        Self::from_vector(CVector::from_vec(amps))
    }

    /// Fock state `|n⟩`.
    pub fn fock(n: usize, dim: usize) -> Result<Self> {
        if n >= dim {
            return Err(Error::invalid(format!("Fock level {n} outside cutoff {dim}")));
        }
        let mut v = CVector::zeros(dim);
        v[n] = C64::new(1.0, 0.0);
        Ok(Self { amps: v })
    }

    pub fn vacuum(dim: usize) -> Result<Self> {
        Self::fock(0, dim)
    }

    /// Coherent state `|z⟩` truncated to `dim` levels (not renormalized).
    pub fn coherent_unnormalized(z: C64, dim: usize) -> Self {
        let mut v = CVector::zeros(dim);
        let mut c = C64::new((-0.5 * z.norm_sqr()).exp(), 0.0);
        v[0] = c;
        for n in 1..dim {
            c = c * z / (n as f64).sqrt();
            v[n] = c;
        }
        Self { amps: v }
    }

    /// Coherent state `|z⟩`, renormalized after truncation.
    pub fn coherent(z: C64, dim: usize) -> Result<Self> {
        Self::coherent_unnormalized(z, dim).normalized()
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amps
    }

    pub fn into_vector(self) -> CVector {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let n = self.norm();
        if !(n > 1e-300) || !n.is_finite() {
            return Err(Error::Numerical("cannot normalize a zero or non-finite state".into()));
        }
        self.amps.unscale_mut(n);
        Ok(self)
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Self) -> Result<C64> {
        check_dims(self.dim(), other.dim())?;
        Ok(self.amps.dotc(&other.amps))
    }

    /// Probability mass in the top 10% of Fock levels.
    pub fn leakage(&self) -> f64 {
        let n = self.dim();
        let start = n - (n as f64 * 0.1).ceil() as usize;
        self.amps.rows(start, n - start).norm_squared() / self.amps.norm_squared()
    }

    pub fn mean_photon(&self) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .map(|(n, a)| n as f64 * a.norm_sqr())
            .sum::<f64>()
            / self.amps.norm_squared()
    }

    /// Pad with zeros or truncate to `dim` levels.
    pub fn resized(&self, dim: usize) -> Self {
        let mut v = CVector::zeros(dim);
        let k = dim.min(self.dim());
        v.rows_mut(0, k).copy_from(&self.amps.rows(0, k));
        Self { amps: v }
    }

    /// Phase-space rotation `e^{-iθ n̂}`.
    pub fn rotated(&self, theta: f64) -> Self {
        let amps = CVector::from_iterator(
            self.dim(),
            self.amps
                .iter()
                .enumerate()
                .map(|(n, a)| a * C64::from_polar(1.0, -theta * n as f64)),
        );
        Self { amps }
    }

    pub fn to_record(&self) -> StateRecord {
        StateRecord {
            dim: self.dim(),
            re: self.amps.iter().map(|a| a.re).collect(),
            im: self.amps.iter().map(|a| a.im).collect(),
        }
    }

    pub fn from_record(r: &StateRecord) -> Result<Self> {
        if r.re.len() != r.dim || r.im.len() != r.dim {
            return Err(Error::invalid("state record lengths disagree with dim"));
        }
        Self::from_amplitudes(r.re.iter().zip(&r.im).map(|(&a, &b)| C64::new(a, b)).collect())
    }
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// What an operator is promised to be; checked by [`DenseOperator::check`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    General,
    Hermitian,
    Unitary,
}

/// A dense operator on a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    mat: CMatrix,
    kind: OperatorKind,
}

impl DenseOperator {
    pub fn new(mat: CMatrix, kind: OperatorKind) -> Result<Self> {
        if !mat.is_square() || mat.nrows() == 0 {
            return Err(Error::invalid("operator matrix must be square and non-empty"));
        }
        Ok(Self { mat, kind })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mat: CMatrix::identity(dim, dim),
            kind: OperatorKind::Unitary,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn into_matrix(self) -> CMatrix {
        self.mat
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self {
            mat: self.mat.adjoint(),
            kind: self.kind,
        }
    }

    /// `self · other`.
    pub fn compose(&self, other: &Self) -> Result<Self> {
        check_dims(self.dim(), other.dim())?;
        let kind = match (self.kind, other.kind) {
            (OperatorKind::Unitary, OperatorKind::Unitary) => OperatorKind::Unitary,
            _ => OperatorKind::General,
        };
        Ok(Self {
            mat: &self.mat * &other.mat,
            kind,
        })
    }

    /// Unnormalized action on a state.
    pub fn apply(&self, psi: &TruncatedState) -> Result<TruncatedState> {
        check_dims(self.dim(), psi.dim())?;
        Ok(TruncatedState {
            amps: &self.mat * &psi.amps,
        })
    }

    pub fn expectation(&self, psi: &TruncatedState) -> Result<C64> {
        expectation(self, psi)
    }

    /// Largest entry of `U†U − I` on the lowest `block` levels.
    pub fn unitarity_defect(&self, block: usize) -> f64 {
        let g = &self.mat.adjoint() * &self.mat;
        max_identity_defect(&g, block)
    }

    /// Largest entry of `H − H†`.
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.mat - self.mat.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Verify the promise made by [`Self::kind`] on the guard-banded block.
    pub fn check(&self, tol: f64) -> Result<()> {
        let defect = match self.kind {
            OperatorKind::General => 0.0,
            OperatorKind::Hermitian => self.hermiticity_defect(),
            OperatorKind::Unitary => self.unitarity_defect(guard_dim(self.dim())),
        };
        if defect > tol {
            return Err(Error::Numerical(format!(
                "{:?} operator violates its flag by {defect:.3e}",
                self.kind
            )));
        }
        Ok(())
    }
}

pub(crate) fn max_identity_defect(g: &CMatrix, block: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..block {
        for j in 0..block {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).norm());
        }
    }
    worst
}

/// `⟨ψ|A|ψ⟩ / ⟨ψ|ψ⟩`.
pub fn expectation(op: &DenseOperator, psi: &TruncatedState) -> Result<C64> {
    check_dims(op.dim(), psi.dim())?;
    Ok(psi.amps.dotc(&(&op.mat * &psi.amps)) / psi.amps.norm_squared())
}

/// Annihilation and creation operators `(a, a†)`.
pub fn ladder_ops(dim: usize) -> Result<(DenseOperator, DenseOperator)> {
    if dim < 2 {
        return Err(Error::invalid("ladder operators need dim >= 2"));
    }
    let a = annihilation_matrix(dim);
    let ad = a.adjoint();
    Ok((
        DenseOperator { mat: a, kind: OperatorKind::General },
        DenseOperator { mat: ad, kind: OperatorKind::General },
    ))
}

pub(crate) fn annihilation_matrix(dim: usize) -> CMatrix {
    let mut a = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    a
}

pub fn number_op(dim: usize) -> DenseOperator {
    DenseOperator {
        mat: CMatrix::from_diagonal(&CVector::from_iterator(dim, (0..dim).map(|n| C64::new(n as f64, 0.0)))),
        kind: OperatorKind::Hermitian,
    }
}

/// Visit every matrix element `⟨m|D(α)|n⟩` of the truncated displacement.
///
/// Uses the closed form with associated Laguerre polynomials, evaluated by
/// the upward three-term recurrence in `n` for each fixed `m − n`, with a
/// running log-scale to keep the polynomial in range.
pub(crate) fn visit_displacement<F: FnMut(usize, usize, C64)>(alpha: C64, dim: usize, lnfact: &[f64], mut f: F) {
    let r = alpha.norm();
    if r == 0.0 {
        for n in 0..dim {
            f(n, n, C64::new(1.0, 0.0));
        }
        return;
    }
    let x = r * r;
    let lnr = r.ln();
    let theta = alpha.arg();
    const BIG: f64 = 1e100;
    let ln_big = BIG.ln();
    for k in 0..dim {
        let lower = C64::from_polar(1.0, k as f64 * theta);
        let upper = if k % 2 == 0 { lower.conj() } else { -lower.conj() };
        let kf = k as f64;
        let (mut l_prev, mut l_cur, mut scale) = (0.0f64, 1.0f64, 0.0f64);
        for j in 0..dim - k {
            if l_cur != 0.0 {
                let logmag = 0.5 * (lnfact[j] - lnfact[j + k]) + kf * lnr - 0.5 * x + scale + l_cur.abs().ln();
                let mag = logmag.exp() * l_cur.signum();
                f(j + k, j, lower * mag);
                if k > 0 {
                    f(j, j + k, upper * mag);
                }
            }
            let jf = j as f64;
            let l_next = ((2.0 * jf + 1.0 + kf - x) * l_cur - (jf + kf) * l_prev) / (jf + 1.0);
            l_prev = l_cur;
            l_cur = l_next;
            if l_cur.abs() > BIG {
                l_cur /= BIG;
                l_prev /= BIG;
                scale += ln_big;
            }
        }
    }
}

/// Raw displacement matrix, no guard checks.
pub fn displacement_matrix(alpha: C64, dim: usize) -> CMatrix {
    let lnfact = ln_factorials(dim + 1);
    let mut m = CMatrix::zeros(dim, dim);
    visit_displacement(alpha, dim, &lnfact, |i, j, v| m[(i, j)] = v);
    m
}

/// Displacement operator `D(α) = exp(α a† − α* a)`.
///
/// Warns when `|α|² ≥ dim/4` or when the displaced vacuum puts more than
/// `1e-8` of its weight in the guard band.
pub fn displacement(alpha: C64, dim: usize) -> Result<DenseOperator> {
    if dim == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if !alpha.re.is_finite() || !alpha.im.is_finite() {
        return Err(Error::invalid("displacement amplitude must be finite"));
    }
    if alpha.norm_sqr() >= dim as f64 / 4.0 {
        log::warn!("|alpha|^2 = {:.3} is not small against dim/4 = {:.1}", alpha.norm_sqr(), dim as f64 / 4.0);
    }
    let mat = displacement_matrix(alpha, dim);
    let g = guard_dim(dim);
    let leak: f64 = (g..dim).map(|m| mat[(m, 0)].norm_sqr()).sum();
    if leak > 1e-8 {
        log::warn!("displaced vacuum leaks {leak:.2e} into the guard band (dim {dim})");
    }
    Ok(DenseOperator { mat, kind: OperatorKind::Unitary })
}

/// Generalized quadrature `O_γ = i(γ* a − γ a†)/√π`, so `exp(i√π O_γ) = D(γ)`.
pub fn quadrature_op(gamma: C64, dim: usize) -> DenseOperator {
    let a = annihilation_matrix(dim);
    let mat = (a.map(|z| z * gamma.conj()) - a.adjoint().map(|z| z * gamma)).map(|z| z * I / PI.sqrt());
    DenseOperator { mat, kind: OperatorKind::Hermitian }
}

/// `(Q̂, P̂)` for a lattice: `Q̂ = O_β`, `P̂ = −O_α`.
pub fn quadratures(lattice: &GkpLattice, dim: usize) -> (DenseOperator, DenseOperator) {
    let q = quadrature_op(lattice.beta(), dim);
    let mut p = quadrature_op(lattice.alpha(), dim);
    p.mat.neg_mut();
    (q, p)
}

/// Position `q = (a + a†)/√2`.
pub fn position_op(dim: usize) -> DenseOperator {
    quadrature_op(C64::new(0.0, (PI / 2.0).sqrt()), dim)
}

/// Momentum `p = i(a† − a)/√2`.
pub fn momentum_op(dim: usize) -> DenseOperator {
    let mut p = quadrature_op(C64::new((PI / 2.0).sqrt(), 0.0), dim);
    p.mat.neg_mut();
    p
}

/// `exp(i t H)` for Hermitian `H` via eigendecomposition.
pub fn hermitian_exp(h: &CMatrix, t: f64) -> CMatrix {
    let eig = h.clone().symmetric_eigen();
    let u = &eig.eigenvectors;
    let phases = CVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, t * l)));
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= phases[j];
    }
    scaled * u.adjoint()
}

/// Hermite functions `φ_n(x)` for `n < len`.
pub fn hermite_functions(x: f64, len: usize, out: &mut Vec<f64>) {
    out.clear();
    if len == 0 {
        return;
    }
    let mut prev = PI.powf(-0.25) * (-0.5 * x * x).exp();
    out.push(prev);
    if len == 1 {
        return;
    }
    let mut cur = 2f64.sqrt() * x * prev;
    out.push(cur);
    for n in 1..len - 1 {
        let nf = n as f64;
        let next = (2.0 / (nf + 1.0)).sqrt() * x * cur - (nf / (nf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
        out.push(cur);
    }
}

/// Position-space wavefunction `⟨x|ψ⟩` at each point.
pub fn position_wavefunction(psi: &TruncatedState, xs: &[f64]) -> Vec<C64> {
    let mut buf = Vec::with_capacity(psi.dim());
    xs.iter()
        .map(|&x| {
            hermite_functions(x, psi.dim(), &mut buf);
            psi.amps.iter().zip(&buf).map(|(a, h)| a * *h).sum()
        })
        .collect()
}

/// Rectangular sampling grid in `(q, p)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub q_min: f64,
    pub q_max: f64,
    pub nq: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub np: usize,
}

impl PhaseSpaceGrid {
    /// Symmetric square grid `[-half, half]²` with `n` points per axis.
    pub fn square(half: f64, n: usize) -> Self {
        Self { q_min: -half, q_max: half, nq: n, p_min: -half, p_max: half, np: n }
    }

    /// Grid wide enough for honest rendering at cutoff `dim`: `±3√N/√2`.
    pub fn for_dim(dim: usize, n: usize) -> Self {
        Self::square(3.0 * (dim as f64).sqrt() / 2f64.sqrt(), n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nq < 2 || self.np < 2 || !(self.q_max > self.q_min) || !(self.p_max > self.p_min) {
            return Err(Error::invalid("phase-space grid needs positive steps and >= 2 points per axis"));
        }
        Ok(())
    }

    pub fn dq(&self) -> f64 {
        (self.q_max - self.q_min) / (self.nq - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.np - 1) as f64
    }

    pub fn q(&self, i: usize) -> f64 {
        self.q_min + i as f64 * self.dq()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }
}

/// Wigner function samples, indexed `[iq * np + ip]`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WignerField {
    pub grid: PhaseSpaceGrid,
    pub values: Vec<f64>,
}

impl WignerField {
    pub fn at(&self, iq: usize, ip: usize) -> f64 {
        self.values[iq * self.grid.np + ip]
    }

    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for i in 0..g.nq {
            let wi = if i == 0 || i == g.nq - 1 { 0.5 } else { 1.0 };
            for j in 0..g.np {
                let wj = if j == 0 || j == g.np - 1 { 0.5 } else { 1.0 };
                s += wi * wj * self.at(i, j);
            }
        }
        s * g.dq() * g.dp()
    }

    /// Marginal over `p` at each `q` sample.
    pub fn q_marginal(&self) -> Vec<f64> {
        let g = &self.grid;
        (0..g.nq)
            .map(|i| {
                (0..g.np)
                    .map(|j| if j == 0 || j == g.np - 1 { 0.5 } else { 1.0 } * self.at(i, j))
                    .sum::<f64>()
                    * g.dp()
            })
            .collect()
    }

    pub fn boundary_max(&self) -> f64 {
        let g = &self.grid;
        let mut m: f64 = 0.0;
        for i in 0..g.nq {
            for j in 0..g.np {
                if i == 0 || j == 0 || i == g.nq - 1 || j == g.np - 1 {
                    m = m.max(self.at(i, j).abs());
                }
            }
        }
        m
    }
}

/// Wigner function `W(q, p)` of a pure state, normalized so `∬ W dq dp = 1`.
///
/// Evaluated exactly for the truncated state as
/// `W(α) = (1/π) Σ ψ_m* ⟨m|D(2α)|n⟩ (−1)^n ψ_n` with `α = (q + ip)/√2`.
pub fn wigner(psi: &TruncatedState, grid: &PhaseSpaceGrid) -> Result<WignerField> {
    grid.validate()?;
    let dim = psi.dim();
    let lnfact = ln_factorials(dim + 1);
    let amps = psi.amps.unscale(psi.norm());
    let parity: Vec<C64> = amps.iter().enumerate().map(|(n, a)| if n % 2 == 0 { *a } else { -*a }).collect();
    let mut values = vec![0.0; grid.nq * grid.np];
    for i in 0..grid.nq {
        for j in 0..grid.np {
            let alpha = C64::new(grid.q(i), grid.p(j)) / 2f64.sqrt();
            let mut acc = C64::new(0.0, 0.0);
            visit_displacement(2.0 * alpha, dim, &lnfact, |m, n, d| acc += amps[m].conj() * d * parity[n]);
            values[i * grid.np + j] = acc.re / PI;
        }
    }
    let field = WignerField { grid: grid.clone(), values };
    let b = field.boundary_max();
    if b > 1e-4 {
        log::warn!("Wigner grid too small: boundary |W| = {b:.2e}");
    }
    Ok(field)
}

/// Mixed state on a truncated Fock space.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    rho: CMatrix,
}

impl DensityMatrix {
    pub fn new(rho: CMatrix) -> Result<Self> {
        if !rho.is_square() || rho.nrows() == 0 {
            return Err(Error::invalid("density matrix must be square"));
        }
        Ok(Self { rho })
    }

    pub fn from_pure(psi: &TruncatedState) -> Self {
        let v = psi.amps.unscale(psi.norm());
        Self { rho: &v * v.adjoint() }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.rho
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.rho.trace().re
    }

    pub fn expectation(&self, op: &DenseOperator) -> Result<C64> {
        check_dims(op.dim(), self.dim())?;
        Ok((&op.mat * &self.rho).trace() / self.trace())
    }
}

/// `|⟨a|b⟩|²` for normalized pure states.
pub fn fidelity(a: &TruncatedState, b: &TruncatedState) -> Result<f64> {
    let ov = a.inner(b)?;
    Ok((ov.norm_sqr() / (a.amps.norm_squared() * b.amps.norm_squared())).clamp(0.0, 1.0))
}

/// `⟨ψ|ρ|ψ⟩`.
pub fn fidelity_pure_mixed(psi: &TruncatedState, rho: &DensityMatrix) -> Result<f64> {
    check_dims(psi.dim(), rho.dim())?;
    let v = psi.amps.unscale(psi.norm());
    Ok((v.dotc(&(&rho.rho * &v)).re / rho.trace()).clamp(0.0, 1.0))
}

/// Uhlmann fidelity `(tr √(√ρ σ √ρ))²`.
pub fn fidelity_mixed(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dims(rho.dim(), sigma.dim())?;
    let sr = psd_sqrt(&rho.rho);
    let inner = &sr * &sigma.rho * &sr;
    let eig = inner.symmetric_eigen();
    let t: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok((t * t / (rho.trace() * sigma.trace())).clamp(0.0, 1.0))
}

pub(crate) fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let eig = m.clone().symmetric_eigen();
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::new(eig.eigenvalues[j].max(0.0).sqrt(), 0.0);
    }
    scaled * u.adjoint()
}

/// Average gate fidelity of a `d`-level channel with the identity,
/// `F_avg = (d F_e + 1)/(d + 1)` with `F_e = Σ|tr K|²/d²`.
pub fn average_gate_fidelity(kraus: &[CMatrix]) -> Result<f64> {
    let d = kraus.first().ok_or_else(|| Error::invalid("empty Kraus list"))?.nrows();
    let mut completeness = CMatrix::zeros(d, d);
    for k in kraus {
        if k.nrows() != d || k.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: k.nrows() });
        }
        completeness += k.adjoint() * k;
    }
    let defect = max_identity_defect(&completeness, d);
    if defect > 1e-8 {
        return Err(Error::Numerical(format!("channel is not trace preserving (defect {defect:.2e})")));
    }
    let fe = entanglement_fidelity(kraus);
    let df = d as f64;
    Ok((df * fe + 1.0) / (df + 1.0))
}

/// Entanglement fidelity with the identity, `Σ|tr K|²/d²`.
pub fn entanglement_fidelity(kraus: &[CMatrix]) -> f64 {
    let d = kraus.first().map_or(1, |k| k.nrows()) as f64;
    kraus.iter().map(|k| k.trace().norm_sqr()).sum::<f64>() / (d * d)
}

/// Row-banded copy of a dense matrix with negligible entries dropped.
///
/// Each row keeps the contiguous span between its first and last entry above
/// `drop`; displacements of moderate size are close to banded, so products
/// cost far less than the dense ones.
#[derive(Clone, Debug)]
pub struct BandedOperator {
    dim: usize,
    rows: Vec<(usize, Vec<C64>)>,
}

impl BandedOperator {
    pub fn from_dense(m: &CMatrix, drop: f64) -> Self {
        let rows = (0..m.nrows())
            .map(|r| {
                let row = m.row(r);
                let first = row.iter().position(|z| z.norm() > drop);
                match first {
                    None => (0, Vec::new()),
                    Some(lo) => {
                        let hi = row.iter().rposition(|z| z.norm() > drop).unwrap_or(lo);
                        (lo, row.iter().skip(lo).take(hi + 1 - lo).copied().collect())
                    }
                }
            })
            .collect();
        Self { dim: m.ncols(), rows }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored entries over `dim²`.
    pub fn fill(&self) -> f64 {
        self.rows.iter().map(|r| r.1.len()).sum::<usize>() as f64 / (self.dim * self.dim) as f64
    }

    pub fn mul(&self, v: &CVector) -> CVector {
        CVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|(lo, vals)| vals.iter().zip(v.rows(*lo, vals.len()).iter()).map(|(a, b)| a * b).sum()),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn ladder_dim_two() {
        let (a, ad) = ladder_ops(2).unwrap();
        assert_eq!(a.matrix()[(0, 1)], c(1.0, 0.0));
        assert_eq!(a.matrix().iter().filter(|z| z.norm() > 0.0).count(), 1);
        assert_eq!(ad.matrix()[(1, 0)], c(1.0, 0.0));
        assert!(ladder_ops(1).is_err());
    }

    #[test]
    fn commutator_diagonal() {
        let n = 7;
        let (a, ad) = ladder_ops(n).unwrap();
        let comm = a.matrix() * ad.matrix() - ad.matrix() * a.matrix();
        for i in 0..n {
            let want = if i == n - 1 { 1.0 - n as f64 } else { 1.0 };
            assert!((comm[(i, i)] - c(want, 0.0)).norm() < 1e-14);
            let num = ad.matrix() * a.matrix();
            assert!((num[(i, i)].re - i as f64).abs() < 1e-12);
        }
    }

    // Oracle: Taylor series of exp(α a† − α* a) in a larger space, then truncated.
    fn series_displacement(alpha: C64, dim: usize) -> CMatrix {
        let big = dim + 60;
        let a = annihilation_matrix(big);
        let g = a.adjoint().map(|z| z * alpha) - a.map(|z| z * alpha.conj());
        let mut term = CMatrix::identity(big, big);
        let mut sum = term.clone();
        for k in 1..200 {
            term = &term * &g / C64::new(k as f64, 0.0);
            sum += &term;
            if term.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-18 {
                break;
            }
        }
        sum.view((0, 0), (dim, dim)).into_owned()
    }

    #[test]
    fn displacement_matches_series_oracle() {
        for &alpha in &[c(0.7, 0.3), c(-1.1, 0.4), c(0.0, 1.3)] {
            let d = displacement_matrix(alpha, 30);
            let o = series_displacement(alpha, 30);
            let err = (&d - &o).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(err < 1e-10, "alpha {alpha}: {err}");
        }
        let d = displacement_matrix(c(0.7, 0.3), 20);
        assert!((d[(0, 0)].re - (-0.5f64 * 0.58).exp()).abs() < 1e-14);
    }

    #[test]
    fn displacement_identity_and_composition() {
        let id = displacement_matrix(c(0.0, 0.0), 10);
        assert_eq!(id, CMatrix::identity(10, 10));
        let dim = 120;
        let lhs = displacement_matrix(c(0.0, 1.0), dim) * displacement_matrix(c(1.0, 0.0), dim);
        let rhs = displacement_matrix(c(1.0, 1.0), dim) * C64::from_polar(1.0, 1.0);
        for i in 0..40 {
            for j in 0..40 {
                assert!((lhs[(i, j)] - rhs[(i, j)]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn displacement_unitary_on_guard_block() {
        let d = displacement(c(0.08, -0.06), 80).unwrap();
        assert!(d.unitarity_defect(guard_dim(80)) < 1e-8);
        d.check(1e-8).unwrap();
        // Larger shifts need a block further from the cutoff.
        let d = displacement(c(1.6, -1.2), 200).unwrap();
        assert!(d.unitarity_defect(80) < 1e-8);
    }

    #[test]
    fn large_displacement_stays_finite() {
        let d = displacement_matrix(c(6.0, -3.0), 300);
        assert!(d.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
        let col = d.column(0).norm_squared();
        assert!((col - 1.0).abs() < 1e-10);
    }

    #[test]
    fn square_quadratures_are_position_momentum() {
        let lat = GkpLattice::square();
        let (q, p) = quadratures(&lat, 30);
        let q0 = position_op(30);
        let p0 = momentum_op(30);
        assert!((q.matrix() - q0.matrix()).iter().all(|z| z.norm() < 1e-14));
        assert!((p.matrix() - p0.matrix()).iter().all(|z| z.norm() < 1e-14));
        let comm = q.matrix() * p.matrix() - p.matrix() * q.matrix();
        let g = guard_dim(30);
        for i in 0..g {
            for j in 0..g {
                let want = if i == j { I } else { c(0.0, 0.0) };
                assert!((comm[(i, j)] - want).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn hexagonal_quadratures_hermitian_canonical() {
        let lat = GkpLattice::hexagonal();
        let (q, p) = quadratures(&lat, 40);
        assert!(q.hermiticity_defect() < 1e-14 && p.hermiticity_defect() < 1e-14);
        let comm = q.matrix() * p.matrix() - p.matrix() * q.matrix();
        for i in 0..guard_dim(40) {
            assert!((comm[(i, i)] - I).norm() < 1e-8);
        }
    }

    #[test]
    fn vacuum_and_fock_one_wigner() {
        let grid = PhaseSpaceGrid::square(1.0, 3);
        let w0 = wigner(&TruncatedState::vacuum(10).unwrap(), &grid).unwrap();
        assert!((w0.at(1, 1) - 1.0 / PI).abs() < 1e-12);
        assert!((w0.at(0, 0) - (-2.0f64).exp() / PI).abs() < 1e-12);
        let w1 = wigner(&TruncatedState::fock(1, 10).unwrap(), &grid).unwrap();
        assert!((w1.at(1, 1) + 1.0 / PI).abs() < 1e-12);
        // Laguerre-series oracle: W_1(q,p) = -(1/π)(1 - 2r²) e^{-r²}
        let r2: f64 = 2.0;
        assert!((w1.at(2, 2) + (1.0 - 2.0 * r2) * (-r2).exp() / PI).abs() < 1e-12);
    }

    #[test]
    fn hermite_functions_orthonormal() {
        let (x, w) = crate::numerics::gauss_legendre(200);
        let mut buf = Vec::new();
        let mut gram = [[0.0; 6]; 6];
        for (xi, wi) in x.iter().zip(&w) {
            let xs = 12.0 * xi;
            hermite_functions(xs, 6, &mut buf);
            for a in 0..6 {
                for b in 0..6 {
                    gram[a][b] += 12.0 * wi * buf[a] * buf[b];
                }
            }
        }
        for a in 0..6 {
            for b in 0..6 {
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a][b] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fidelities() {
        let a = TruncatedState::fock(0, 5).unwrap();
        let b = TruncatedState::fock(1, 5).unwrap();
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(fidelity(&a, &b).unwrap(), 0.0);
        let rho = DensityMatrix::from_pure(&a);
        assert!((fidelity_mixed(&rho, &rho).unwrap() - 1.0).abs() < 1e-10);
        assert!(fidelity(&a, &TruncatedState::vacuum(6).unwrap()).is_err());
    }

    #[test]
    fn gate_fidelity_oracles() {
        let id = vec![CMatrix::identity(2, 2)];
        assert!((average_gate_fidelity(&id).unwrap() - 1.0).abs() < 1e-15);
        let z = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
        assert!((average_gate_fidelity(&[z.clone()]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let x = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let y = CMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]);
        let dep: Vec<CMatrix> = [CMatrix::identity(2, 2), x, y, z].iter().map(|k| k * C64::new(0.5, 0.0)).collect();
        assert!((average_gate_fidelity(&dep).unwrap() - 0.5).abs() < 1e-15);
        assert!(average_gate_fidelity(&[CMatrix::identity(2, 2) * C64::new(0.5, 0.0)]).is_err());
    }

    // Oracle: average of |⟨ψ|Z|ψ⟩|² over a dense set of Bloch-sphere states.
    #[test]
    fn z_channel_twirl_integral() {
        let (x, w) = crate::numerics::gauss_legendre(40);
        let mut acc = 0.0;
        for (ct, wt) in x.iter().zip(&w) {
            // |⟨ψ|Z|ψ⟩|² = cos²θ, independent of φ
            acc += wt * ct * ct / 2.0;
        }
        assert!((acc - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn state_record_roundtrip() {
        let s = TruncatedState::coherent(c(0.5, 0.2), 12).unwrap();
        let json = serde_json::to_string(&s.to_record()).unwrap();
        let back: StateRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(TruncatedState::from_record(&back).unwrap(), s);
    }

    #[test]
    fn banded_product_matches_dense() {
        let d = displacement_matrix(C64::new(0.8, -0.3), 120);
        let b = BandedOperator::from_dense(&d, 1e-18);
        let v = TruncatedState::coherent(C64::new(0.5, 0.5), 120).unwrap().into_vector();
        assert!((b.mul(&v) - &d * &v).norm() < 1e-15);
        assert!(b.fill() < 0.9);
    }
}
