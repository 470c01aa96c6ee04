//! Bosonic noise channels and recovery maps.
//!
//! Channels act on dense density matrices. Recovery is computed on the
//! code-restricted channel: the noise is composed with the encoding isometry
//! and factored into `N × 2` Kraus operators before Petz or see-saw recovery.

use nalgebra::SymmetricEigen;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, guard_dim, max_identity_defect, CMatrix, CVector, TruncatedState};
use crate::gkp::GkpLattice;
use crate::numerics::{gauss_hermite, ln_factorials};

/// Anything that maps density matrices to density matrices.
pub trait ChannelMap {
    fn dim(&self) -> usize;
    fn apply(&self, rho: &CMatrix) -> CMatrix;
}

/// Channel in Kraus form, `ρ ↦ Σ K ρ K†`.
#[derive(Clone, Debug)]
pub struct KrausChannel {
    ops: Vec<CMatrix>,
    dim: usize,
}

impl KrausChannel {
    pub fn new(ops: Vec<CMatrix>) -> Result<Self> {
        let first = ops.first().ok_or_else(|| Error::invalid("a channel needs at least one Kraus operator"))?;
        let dim = first.ncols();
        if ops.iter().any(|k| k.ncols() != dim) {
            return Err(Error::invalid("Kraus operators must share an input dimension"));
        }
        Ok(Self { ops, dim })
    }

    pub fn identity(dim: usize) -> Self {
        Self { ops: vec![CMatrix::identity(dim, dim)], dim }
    }

    pub fn ops(&self) -> &[CMatrix] {
        &self.ops
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// `max |Σ K†K − I|` over the lowest `block` input levels.
    pub fn completeness_defect(&self, block: usize) -> f64 {
        let mut s = CMatrix::zeros(self.dim, self.dim);
        for k in &self.ops {
            s += k.adjoint() * k;
        }
        max_identity_defect(&s, block.min(self.dim))
    }

    /// Trace preservation on the guard-banded block within `tol`.
    pub fn check_trace_preserving(&self, tol: f64) -> Result<()> {
        let d = self.completeness_defect(guard_dim(self.dim));
        if d > tol {
            return Err(Error::Numerical(format!("Kraus completeness violated by {d:.2e}")));
        }
        Ok(())
    }

    pub fn apply_pure(&self, psi: &TruncatedState) -> CMatrix {
        let v = psi.amplitudes();
        let mut out = CMatrix::zeros(self.ops[0].nrows(), self.ops[0].nrows());
        for k in &self.ops {
            let w = k * v;
            out += &w * w.adjoint();
        }
        out
    }

    /// `self ∘ first`.
    pub fn after(&self, first: &KrausChannel) -> Result<KrausChannel> {
        let mut ops = Vec::with_capacity(self.ops.len() * first.ops.len());
        for a in &self.ops {
            for b in &first.ops {
                if a.ncols() != b.nrows() {
                    return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.nrows() });
                }
                ops.push(a * b);
            }
        }
        KrausChannel::new(ops)
    }
}

impl ChannelMap for KrausChannel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        let n = self.ops[0].nrows();
        let mut out = CMatrix::zeros(n, n);
        for k in &self.ops {
            out += k * rho * k.adjoint();
        }
        out
    }
}

/// Dimensionless loss and dephasing strengths `κt`, `κ_φ t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub kappa_t: f64,
    pub kappa_phi_t: f64,
}

impl NoiseParams {
    pub fn new(kappa_t: f64, kappa_phi_t: f64) -> Result<Self> {
        let p = Self { kappa_t, kappa_phi_t };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_t >= 0.0) || !(self.kappa_phi_t >= 0.0) {
            return Err(Error::invalid("noise strengths must be non-negative"));
        }
        if self.kappa_t > 1.0 || self.kappa_phi_t > 1.0 {
            return Err(Error::invalid("noise strengths above 1 are outside the integrator's validated range"));
        }
        Ok(())
    }
}

/// Independent Gaussian shifts of standard deviation `σ` on each of `Q̂`, `P̂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianNoise {
    pub sigma: f64,
}

impl GaussianNoise {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::invalid("sigma must be positive"));
        }
        Ok(Self { sigma })
    }

    /// `𝒮 = −10 log10(2σ²)`.
    pub fn s_db(&self) -> f64 {
        -10.0 * (2.0 * self.sigma * self.sigma).log10()
    }

    pub fn from_db(s_db: f64) -> Result<Self> {
        Self::new((10f64.powf(-s_db / 10.0) / 2.0).sqrt())
    }

    /// Envelope parameter with the same dB label, `Δ² = 2σ²`.
    pub fn equivalent_delta(&self) -> f64 {
        2f64.sqrt() * self.sigma
    }
}

/// Draw `(u, v)`, each `N(0, σ²)`.
pub fn sample_shift<R: Rng + ?Sized>(noise: &GaussianNoise, rng: &mut R) -> (f64, f64) {
    let n = Normal::new(0.0, noise.sigma).expect("sigma validated on construction");
    (n.sample(rng), n.sample(rng))
}

/// Pure loss with transmissivity `η`: `K_l = Σ_n √(C(n,l) η^{n−l} (1−η)^l) |n−l⟩⟨n|`.
pub fn pure_loss(eta: f64, dim: usize) -> Result<KrausChannel> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(Error::invalid("transmissivity must lie in (0, 1]"));
    }
    if eta == 1.0 {
        return Ok(KrausChannel::identity(dim));
    }
    Ok(KrausChannel::new(pure_loss_ops(eta, dim, 0.0))?)
}

/// Loss Kraus operators, dropping those whose largest weight is below `drop_below`.
pub(crate) fn pure_loss_ops(eta: f64, dim: usize, drop_below: f64) -> Vec<CMatrix> {
    let lnf = ln_factorials(dim + 1);
    let (le, lg) = (eta.ln(), (1.0 - eta).ln());
    let mut ops = Vec::new();
    for l in 0..dim {
        let mut k = CMatrix::zeros(dim, dim);
        let mut biggest: f64 = 0.0;
        for n in l..dim {
            let logw = lnf[n] - lnf[l] - lnf[n - l] + (n - l) as f64 * le + if l > 0 { l as f64 * lg } else { 0.0 };
            let w = (0.5 * logw).exp();
            biggest = biggest.max(w * w);
            k[(n - l, n)] = C64::new(w, 0.0);
        }
        if l == 0 || biggest >= drop_below {
            ops.push(k);
        }
    }
    ops
}

/// Simultaneous loss and dephasing from the master equation
/// `dρ/dt = κ D[a]ρ + κ_φ D[n]ρ`, integrated to the given `κt`, `κ_φ t`.
///
/// The generator preserves `m − n`, so each diagonal of `ρ` evolves under
/// its own bidiagonal generator; the propagator for each diagonal offset is
/// integrated with RK4, halving the step until two successive step sizes agree
/// to `1e-10` entrywise.
#[derive(Clone, Debug)]
pub struct LossDephasingChannel {
    dim: usize,
    params: NoiseParams,
    /// `props[k]` maps the `k`-th diagonal `(i + k, i)` at time 0 to time t.
    props: Vec<CMatrix>,
    steps: usize,
}

impl LossDephasingChannel {
    pub fn params(&self) -> NoiseParams {
        self.params
    }

    /// RK4 steps used for the final propagators.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Factor the Choi matrix into Kraus operators.
    ///
    /// The Choi matrix splits into blocks labelled by the photon-number drop
    /// `j`; each block is diagonalized separately and eigenvalues below
    /// `−1e-9` abort.
    pub fn to_kraus(&self) -> Result<KrausChannel> {
        let n = self.dim;
        let mut ops = Vec::new();
        for j in 0..n {
            let m = n - j;
            // B[a][b] = coefficient of |a−j⟩⟨b−j| in E(|a⟩⟨b|), a, b ≥ j
            let mut b = CMatrix::zeros(m, m);
            for a in j..n {
                for bb in j..n {
                    let k = a.abs_diff(bb);
                    let (lo_in, lo_out) = (a.min(bb), a.min(bb) - j);
                    let v = self.props[k][(lo_out, lo_in)];
                    b[(a - j, bb - j)] = v;
                }
            }
            let eig = SymmetricEigen::new(b);
            let scale = eig.eigenvalues.iter().fold(0.0f64, |s, &l| s.max(l.abs())).max(1e-300);
            for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
                if lam < -1e-9 {
                    return Err(Error::Numerical(format!("Choi eigenvalue {lam:.2e} in block {j}; integration too coarse")));
                }
                if lam <= 1e-14 * scale.max(1.0) {
                    continue;
                }
                let v = eig.eigenvectors.column(idx);
                let mut kop = CMatrix::zeros(n, n);
                for a in j..n {
                    kop[(a - j, a)] = v[a - j] * lam.sqrt();
                }
                ops.push(kop);
            }
        }
        KrausChannel::new(ops)
    }
}

impl ChannelMap for LossDephasingChannel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        let n = self.dim;
        let mut out = CMatrix::zeros(n, n);
        for k in 0..n {
            let p = &self.props[k];
            let len = n - k;
            let lower = CVector::from_iterator(len, (0..len).map(|i| rho[(i + k, i)]));
            let y = p * lower;
            for i in 0..len {
                out[(i + k, i)] = y[i];
            }
            if k > 0 {
                let upper = CVector::from_iterator(len, (0..len).map(|i| rho[(i, i + k)]));
                let y = p * upper;
                for i in 0..len {
                    out[(i, i + k)] = y[i];
                }
            }
        }
        out
    }
}

/// Upper-bidiagonal generator of one diagonal: `diag` on the diagonal,
/// `upper[i]` at `(i, i + 1)`.
struct Bidiagonal {
    diag: Vec<f64>,
    upper: Vec<f64>,
}

impl Bidiagonal {
    fn new(n: usize, k: usize, kappa: f64, kappa_phi: f64) -> Self {
        let len = n - k;
        let diag = (0..len).map(|i| -0.5 * kappa * (2 * i + k) as f64 - 0.5 * kappa_phi * (k * k) as f64).collect();
        let upper = (0..len.saturating_sub(1)).map(|i| kappa * (((i + 1) * (i + 1 + k)) as f64).sqrt()).collect();
        Self { diag, upper }
    }

    fn norm(&self) -> f64 {
        self.diag.iter().chain(&self.upper).fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `out = G p` for a real upper-triangular `p`.
    fn mul(&self, p: &[f64], len: usize, out: &mut [f64]) {
        for i in 0..len {
            for j in i..len {
                let mut v = self.diag[i] * p[i * len + j];
                if i + 1 < len {
                    v += self.upper[i] * p[(i + 1) * len + j];
                }
                out[i * len + j] = v;
            }
        }
    }

    /// RK4 propagator over unit time; the result is upper triangular.
    fn propagator(&self, steps: usize) -> Vec<f64> {
        let len = self.diag.len();
        let h = 1.0 / steps as f64;
        let mut p = vec![0.0; len * len];
        for i in 0..len {
            p[i * len + i] = 1.0;
        }
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; len * len], vec![0.0; len * len], vec![0.0; len * len], vec![0.0; len * len]);
        let mut tmp = vec![0.0; len * len];
        for _ in 0..steps {
            self.mul(&p, len, &mut k1);
            for (t, (a, b)) in tmp.iter_mut().zip(p.iter().zip(&k1)) {
                *t = a + 0.5 * h * b;
            }
            self.mul(&tmp, len, &mut k2);
            for (t, (a, b)) in tmp.iter_mut().zip(p.iter().zip(&k2)) {
                *t = a + 0.5 * h * b;
            }
            self.mul(&tmp, len, &mut k3);
            for (t, (a, b)) in tmp.iter_mut().zip(p.iter().zip(&k3)) {
                *t = a + h * b;
            }
            self.mul(&tmp, len, &mut k4);
            for idx in 0..len * len {
                p[idx] += h / 6.0 * (k1[idx] + 2.0 * k2[idx] + 2.0 * k3[idx] + k4[idx]);
            }
        }
        p
    }
}

fn to_cmatrix(p: &[f64], len: usize) -> CMatrix {
    CMatrix::from_fn(len, len, |i, j| C64::new(p[i * len + j], 0.0))
}

/// Integrate the loss–dephasing master equation on a `dim`-level space.
pub fn loss_dephasing_channel(params: NoiseParams, dim: usize) -> Result<LossDephasingChannel> {
    params.validate()?;
    if dim < 2 {
        return Err(Error::invalid("cutoff must be at least 2"));
    }
    // Time is absorbed into the rates: integrate to t = 1 with κ → κt.
    let gens: Vec<Bidiagonal> = (0..dim).map(|k| Bidiagonal::new(dim, k, params.kappa_t, params.kappa_phi_t)).collect();
    let stiffness = gens.iter().map(Bidiagonal::norm).fold(0.0, f64::max);
    let mut steps = ((stiffness * 2.0).ceil() as usize).max(4);
    let mut props: Vec<Vec<f64>> = gens.iter().map(|g| g.propagator(steps)).collect();
    for _ in 0..20 {
        let finer: Vec<Vec<f64>> = gens.iter().map(|g| g.propagator(2 * steps)).collect();
        let diff = props
            .iter()
            .zip(&finer)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        props = finer;
        steps *= 2;
        if diff < 1e-10 {
            let props = props.iter().enumerate().map(|(k, p)| to_cmatrix(p, dim - k)).collect();
            return Ok(LossDephasingChannel { dim, params, props, steps });
        }
    }
    Err(Error::Numerical("master-equation integration did not converge".into()))
}

/// Gauss–Hermite discretization of the Gaussian shift channel,
/// `K_ij = √(w_i w_j) D((u_i α + v_j β)/√π)` with `u, v ~ N(0, σ²)`.
pub fn gaussian_displacement_channel(noise: &GaussianNoise, lattice: &GkpLattice, dim: usize, order: usize) -> Result<KrausChannel> {
    if noise.sigma > 0.8 {
        return Err(Error::invalid("sigma above 0.8 exceeds the validated cutoff range"));
    }
    if order < 2 {
        return Err(Error::invalid("Gauss–Hermite order must be at least 2"));
    }
    let (x, w) = gauss_hermite(order);
    let total: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|wi| wi / total).collect();
    let mut ops = Vec::with_capacity(order * order);
    for i in 0..order {
        for j in 0..order {
            let u = 2f64.sqrt() * noise.sigma * x[i];
            let v = 2f64.sqrt() * noise.sigma * x[j];
            let d = displacement_matrix(lattice.shift(u, v), dim);
            ops.push(d * C64::new((w[i] * w[j]).sqrt(), 0.0));
        }
    }
    let ch = KrausChannel::new(ops)?;
    let defect = ch.completeness_defect(guard_dim(dim));
    if defect > 1e-7 {
        return Err(Error::Numerical(format!(
            "Gaussian channel completeness defect {defect:.2e}; raise the cutoff or the quadrature order"
        )));
    }
    Ok(ch)
}

/// Twirl grid `(i/n − ½) 2α + (j/n − ½) 2β`, centred on the origin so the
/// conjugations stay as short as possible.
fn twirl_grid(lattice: &GkpLattice, n_points: usize) -> Vec<C64> {
    let n = n_points as f64;
    let mut out = Vec::with_capacity(n_points * n_points);
    for i in 0..n_points {
        for j in 0..n_points {
            out.push(2.0 * lattice.alpha() * (i as f64 / n - 0.5) + 2.0 * lattice.beta() * (j as f64 / n - 0.5));
        }
    }
    out
}

/// Average `ℰ` over conjugation by displacements on an `n × n` grid
/// covering the stabilizer cell spanned by `2α`, `2β`.
///
/// Grid points `s·2α + t·2β` pick up phases that cancel any component of
/// `ℰ(D(ξ))` along `D(ξ')` when `ξ − ξ'` is a nonzero lattice vector
/// `aα + bβ` with `a, b` not multiples of `n`.
pub fn twirl_channel(channel: &KrausChannel, lattice: &GkpLattice, n_points: usize) -> Result<KrausChannel> {
    if n_points == 0 {
        return Err(Error::invalid("twirl grid must be non-empty"));
    }
    channel.check_trace_preserving(1e-7)?;
    let dim = channel.dim();
    let scale = C64::new(1.0 / n_points as f64, 0.0);
    let mut ops = Vec::with_capacity(channel.len() * n_points * n_points);
    for z in twirl_grid(lattice, n_points) {
        let d = displacement_matrix(z, dim);
        let dd = d.adjoint();
        for k in channel.ops() {
            ops.push(&dd * k * &d * scale);
        }
    }
    KrausChannel::new(ops)
}

/// Displacement twirl applied on the fly, `ρ ↦ Σ_g D_g† ℰ(D_g ρ D_g†) D_g / n²`.
///
/// Same map as [`twirl_channel`] without materializing `n²` copies of the
/// Kraus set.
pub struct TwirledChannel<'a> {
    inner: &'a dyn ChannelMap,
    grid: Vec<CMatrix>,
}

impl<'a> TwirledChannel<'a> {
    pub fn new(inner: &'a dyn ChannelMap, lattice: &GkpLattice, n_points: usize) -> Result<Self> {
        if n_points == 0 {
            return Err(Error::invalid("twirl grid must be non-empty"));
        }
        let dim = inner.dim();
        let grid = twirl_grid(lattice, n_points).into_iter().map(|z| displacement_matrix(z, dim)).collect();
        Ok(Self { inner, grid })
    }
}

impl ChannelMap for TwirledChannel<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        let dim = self.dim();
        let mut out = CMatrix::zeros(dim, dim);
        for d in &self.grid {
            let inner = self.inner.apply(&(d * rho * d.adjoint()));
            out += d.adjoint() * inner * d;
        }
        out / C64::new(self.grid.len() as f64, 0.0)
    }
}

/// Pauli transfer matrix in the displacement basis,
/// `R[P][P'] = tr(D_{P'}† ℰ(D_P) ρ_w)` over `D_P ∈ {I, D(α), D(α+β), D(β)}`.
///
/// The reference weight `ρ_w` is thermal with mean photon number `nbar`;
/// distinct Pauli displacements then overlap only by
/// `exp(−(nbar + ½)|ξ − ξ'|²)`, so off-diagonal entries measure genuine
/// coherences between displacements.
pub fn pauli_transfer(channel: &dyn ChannelMap, lattice: &GkpLattice, nbar: f64) -> [[C64; 4]; 4] {
    let dim = channel.dim();
    let shifts = [C64::new(0.0, 0.0), lattice.alpha(), lattice.alpha() + lattice.beta(), lattice.beta()];
    let ds: Vec<CMatrix> = shifts.iter().map(|&z| displacement_matrix(z, dim)).collect();
    let q = nbar / (nbar + 1.0);
    let w: Vec<f64> = (0..dim).map(|n| q.powi(n as i32) / (nbar + 1.0)).collect();
    let mut r = [[C64::new(0.0, 0.0); 4]; 4];
    for p in 0..4 {
        let out = channel.apply(&ds[p]);
        for qi in 0..4 {
            let prod = ds[qi].adjoint() * &out;
            r[p][qi] = (0..dim).map(|n| prod[(n, n)] * w[n]).sum();
        }
    }
    r
}

/// Largest off-diagonal magnitude of [`pauli_transfer`].
pub fn pauli_offdiag_residue(channel: &dyn ChannelMap, lattice: &GkpLattice, nbar: f64) -> f64 {
    let r = pauli_transfer(channel, lattice, nbar);
    let mut m: f64 = 0.0;
    for p in 0..4 {
        for q in 0..4 {
            if p != q {
                m = m.max(r[p][q].norm());
            }
        }
    }
    m
}

/// Symmetric (Löwdin) orthonormalization of a codeword pair.
///
/// Finite-energy codewords overlap slightly; `S^{-1/2}` mixing keeps the pair
/// as close as possible to the originals and treats both equally.
pub fn orthonormalize_code(codewords: &[TruncatedState; 2]) -> Result<[TruncatedState; 2]> {
    let (a, b) = (codewords[0].amplitudes(), codewords[1].amplitudes());
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let gram = CMatrix::from_fn(2, 2, |i, j| {
        let (u, v) = ([a, b][i], [a, b][j]);
        u.dotc(v)
    });
    let s = psd_inv_sqrt(&gram)?;
    let c0 = a * s[(0, 0)] + b * s[(1, 0)];
    let c1 = a * s[(0, 1)] + b * s[(1, 1)];
    Ok([TruncatedState::from_vector(c0)?, TruncatedState::from_vector(c1)?])
}

/// Noise composed with the encoding `|μ⟩ ↦ |c_μ⟩`, as `N × 2` Kraus operators.
///
/// The codewords must be orthonormal to `1e-9`; see [`orthonormalize_code`].
pub fn encoded_kraus(channel: &dyn ChannelMap, codewords: &[TruncatedState; 2]) -> Result<Vec<CMatrix>> {
    let n = channel.dim();
    for c in codewords {
        if c.dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: c.dim() });
        }
    }
    let (a, b) = (codewords[0].amplitudes(), codewords[1].amplitudes());
    let defect = (a.norm_squared() - 1.0).abs().max((b.norm_squared() - 1.0).abs()).max(a.dotc(b).norm());
    if defect > 1e-9 {
        return Err(Error::invalid(format!("codewords are not orthonormal (defect {defect:.2e})")));
    }
    let mut choi = CMatrix::zeros(2 * n, 2 * n);
    for i in 0..2 {
        for j in 0..2 {
            let op = codewords[i].amplitudes() * codewords[j].amplitudes().adjoint();
            let out = channel.apply(&op);
            choi.view_mut((i * n, j * n), (n, n)).copy_from(&out);
        }
    }
    let herm = (&choi + choi.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let top = eig.eigenvalues.iter().fold(0.0f64, |s, &l| s.max(l));
    let mut ops = Vec::new();
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam < -1e-9 * top.max(1.0) {
            return Err(Error::Numerical(format!("restricted Choi eigenvalue {lam:.2e} is negative")));
        }
        if lam <= 1e-15 * top {
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let mut a = CMatrix::zeros(n, 2);
        for i in 0..2 {
            for m in 0..n {
                a[(m, i)] = v[i * n + m] * lam.sqrt();
            }
        }
        ops.push(a);
    }
    Ok(ops)
}

/// A recovery map on the noisy Fock space back to the qubit.
#[derive(Clone, Debug)]
pub struct Recovery {
    /// `2 × N` Kraus operators, including rejection elements.
    pub ops: Vec<CMatrix>,
    /// True when ℰ(P) needed a pseudo-inverse.
    pub singular: bool,
}

/// Qubit-level channel `R ∘ ℰ ∘ encode` as `2 × 2` Kraus operators.
pub fn logical_channel(recovery: &Recovery, encoded: &[CMatrix]) -> Vec<CMatrix> {
    let mut out = Vec::with_capacity(recovery.ops.len() * encoded.len());
    for r in &recovery.ops {
        for a in encoded {
            out.push(r * a);
        }
    }
    out
}

/// Entanglement fidelity `Σ |tr(R_k A_j)|² / 4`.
pub fn recovery_entanglement_fidelity(recovery: &Recovery, encoded: &[CMatrix]) -> f64 {
    let mut s = 0.0;
    for r in &recovery.ops {
        for a in encoded {
            s += (r * a).trace().norm_sqr();
        }
    }
    s / 4.0
}

pub fn f_avg_from_fe(fe: f64) -> f64 {
    (2.0 * fe + 1.0) / 3.0
}

struct Support {
    basis: CMatrix,
    complement: CMatrix,
    inv_sqrt: CMatrix,
    singular: bool,
}

fn output_support(encoded: &[CMatrix], cutoff: f64) -> Result<Support> {
    let n = encoded.first().ok_or_else(|| Error::invalid("empty encoded channel"))?.nrows();
    let mut ep = CMatrix::zeros(n, n);
    for a in encoded {
        ep += a * a.adjoint();
    }
    let tr = ep.trace().re;
    if tr < 1e-6 {
        return Err(Error::Numerical("channel annihilates the code".into()));
    }
    let herm = (&ep + ep.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let top = eig.eigenvalues.iter().fold(0.0f64, |s, &l| s.max(l));
    let keep: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > cutoff * top).collect();
    let drop: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= cutoff * top).collect();
    let basis = CMatrix::from_columns(&keep.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>());
    let complement = if drop.is_empty() {
        CMatrix::zeros(n, 0)
    } else {
        CMatrix::from_columns(&drop.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>())
    };
    let r = keep.len();
    let mut inv_sqrt = CMatrix::zeros(r, r);
    for (c, &i) in keep.iter().enumerate() {
        inv_sqrt[(c, c)] = C64::new(eig.eigenvalues[i].powf(-0.5), 0.0);
    }
    let singular = eig.eigenvalues.iter().any(|&l| l <= cutoff * top && l.abs() > 0.0) && !drop.is_empty();
    Ok(Support { basis, complement, inv_sqrt, singular })
}

fn rejection_ops(complement: &CMatrix) -> Vec<CMatrix> {
    complement
        .column_iter()
        .map(|phi| {
            let mut r = CMatrix::zeros(2, phi.len());
            for (m, z) in phi.iter().enumerate() {
                r[(0, m)] = z.conj();
            }
            r
        })
        .collect()
}

/// Petz (transpose-channel) recovery `R_k = A_k† ℰ(P)^{−1/2}`, completed
/// with rejection elements on the kernel of `ℰ(P)`.
pub fn petz_recovery(encoded: &[CMatrix]) -> Result<Recovery> {
    let sup = output_support(encoded, 1e-10)?;
    if sup.singular {
        log::debug!("Petz recovery used a pseudo-inverse");
    }
    // ℰ(P)^{-1/2} restricted to its support: U diag U†
    let pinv = &sup.basis * &sup.inv_sqrt * sup.basis.adjoint();
    let mut ops: Vec<CMatrix> = encoded.iter().map(|a| a.adjoint() * &pinv).collect();
    ops.extend(rejection_ops(&sup.complement));
    Ok(Recovery { ops, singular: sup.singular })
}

/// Outcome of [`seesaw_optimal_recovery`].
#[derive(Clone, Debug)]
pub struct SeesawResult {
    pub recovery: Recovery,
    pub f_avg: f64,
    pub f_avg_petz: f64,
    pub iterations: usize,
    /// Entanglement fidelity after each iteration, starting from Petz.
    pub history: Vec<f64>,
}

/// Iterative optimal recovery for a fixed encoded channel.
///
/// Alternates `X ← Λ^{−1/2} (X M X) Λ^{−1/2}` over the recovery Choi matrix
/// `X`, where `M` is the fidelity operator and `Λ` the partial trace that
/// restores trace preservation. `M` is shifted by its spectral norm, which
/// leaves the maximizer unchanged and keeps `Λ` well conditioned. The
/// iteration starts from Petz and is checked to never lose fidelity.
pub fn seesaw_optimal_recovery(encoded: &[CMatrix], max_iters: usize, tol: f64) -> Result<SeesawResult> {
    let sup = output_support(encoded, 1e-10)?;
    let r = sup.basis.ncols();
    let b: Vec<CMatrix> = encoded.iter().map(|a| sup.basis.adjoint() * a).collect();
    // Petz on the support.
    let mut ep = CMatrix::zeros(r, r);
    for bk in &b {
        ep += bk * bk.adjoint();
    }
    let inv_sqrt = psd_inv_sqrt(&ep)?;
    let petz: Vec<CMatrix> = b.iter().map(|bk| bk.adjoint() * &inv_sqrt).collect();

    // Vectorize with index (a, n) -> a * r + n.
    let dimx = 2 * r;
    let mut m = CMatrix::zeros(dimx, dimx);
    for bk in &b {
        let w = CVector::from_iterator(dimx, (0..2).flat_map(|a| (0..r).map(move |n| (a, n))).map(|(a, n)| bk[(n, a)]));
        m += w.conjugate() * w.transpose();
    }
    let mut x = CMatrix::zeros(dimx, dimx);
    for rk in &petz {
        let v = CVector::from_iterator(dimx, (0..2).flat_map(|a| (0..r).map(move |n| (a, n))).map(|(a, n)| rk[(a, n)]));
        x += &v * v.adjoint();
    }
    // Eigensolver error on an ill-conditioned ℰ(P) leaves Petz slightly off
    // trace preservation; project it back before measuring anything.
    x = normalize_recovery_choi(&x, r)?;
    let fid = |x: &CMatrix| (x * &m).trace().re / 4.0;
    let shift = SymmetricEigen::new(m.clone()).eigenvalues.iter().fold(0.0f64, |s, &l| s.max(l));
    let ms = &m + CMatrix::identity(dimx, dimx) * C64::new(shift.max(1e-12), 0.0);

    let f_petz = fid(&x);
    let mut f = f_petz;
    let mut history = vec![f];
    let mut iterations = 0;
    for it in 0..max_iters {
        let xn = normalize_recovery_choi(&(&x * &ms * &x), r)?;
        let fn_ = fid(&xn);
        if fn_ < f - 1e-10 {
            return Err(Error::NonMonotone { iteration: it + 1, before: f, after: fn_ });
        }
        iterations = it + 1;
        let gain = fn_ - f;
        x = xn;
        f = fn_;
        history.push(f);
        if gain <= tol * (1.0 - f).max(1e-300) {
            break;
        }
    }
    // Read Kraus operators back out of X and lift to the full space.
    let eig = SymmetricEigen::new(x.clone());
    let top = eig.eigenvalues.iter().fold(0.0f64, |s, &l| s.max(l));
    let mut ops = Vec::new();
    for (idx, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam <= 1e-14 * top {
            continue;
        }
        let v = eig.eigenvectors.column(idx);
        let mut rk = CMatrix::zeros(2, r);
        for a in 0..2 {
            for n in 0..r {
                rk[(a, n)] = v[a * r + n] * lam.sqrt();
            }
        }
        ops.push(rk * sup.basis.adjoint());
    }
    ops.extend(rejection_ops(&sup.complement));
    Ok(SeesawResult {
        recovery: Recovery { ops, singular: sup.singular },
        f_avg: f_avg_from_fe(f),
        f_avg_petz: f_avg_from_fe(f_petz),
        iterations,
        history,
    })
}

/// `(I ⊗ Λ^{-1/2}) Y (I ⊗ Λ^{-1/2})†` with `Λ = Σ_a Y_aa`, which makes the
/// recovery encoded by `Y` trace preserving.
fn normalize_recovery_choi(y: &CMatrix, r: usize) -> Result<CMatrix> {
    let mut lam = CMatrix::zeros(r, r);
    for a in 0..2 {
        lam += y.view((a * r, a * r), (r, r));
    }
    let li = psd_inv_sqrt(&lam)?;
    let mut big = CMatrix::zeros(2 * r, 2 * r);
    for a in 0..2 {
        big.view_mut((a * r, a * r), (r, r)).copy_from(&li);
    }
    let xn = &big * y * big.adjoint();
    Ok((&xn + xn.adjoint()) * C64::new(0.5, 0.0))
}

fn psd_inv_sqrt(m: &CMatrix) -> Result<CMatrix> {
    let herm = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(herm);
    let top = eig.eigenvalues.iter().fold(0.0f64, |s, &l| s.max(l));
    if eig.eigenvalues.iter().any(|&l| l <= 1e-15 * top) {
        return Err(Error::Numerical("normalization operator became singular".into()));
    }
    let u = &eig.eigenvectors;
    let mut scaled = u.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= C64::new(eig.eigenvalues[j].powf(-0.5), 0.0);
    }
    Ok(scaled * u.adjoint())
}

/// Average gate fidelity with no recovery: project onto the codewords.
pub fn unrecovered_f_avg(encoded: &[CMatrix], codewords: &[TruncatedState; 2]) -> f64 {
    let n = codewords[0].dim();
    let mut proj = CMatrix::zeros(2, n);
    for i in 0..2 {
        for m in 0..n {
            proj[(i, m)] = codewords[i].amplitudes()[m].conj();
        }
    }
    let rec = Recovery { ops: vec![proj], singular: false };
    f_avg_from_fe(recovery_entanglement_fidelity(&rec, encoded))
}

/// See-saw recovered fidelity of the Fock encoding `{|0⟩, |1⟩}`.
pub fn trivial_encoding_baseline(params: NoiseParams) -> Result<f64> {
    // The channel never raises photon number, so two levels are exact.
    let dim = 2;
    let ch = loss_dephasing_channel(params, dim)?;
    let code = [TruncatedState::fock(0, dim)?, TruncatedState::fock(1, dim)?];
    let enc = encoded_kraus(&ch, &code)?;
    Ok(seesaw_optimal_recovery(&enc, 500, 1e-9)?.f_avg)
}

/// One row of a fidelity scan.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FidelityRow {
    pub kappa_t: f64,
    pub kappa_phi_t: f64,
    pub delta: f64,
    pub n_code: f64,
    pub f_gkp: f64,
    pub f_trivial: f64,
}

/// Optimal-recovery fidelity of the square GKP code at one `(noise, Δ)` point.
pub fn gkp_recovery_point(params: NoiseParams, delta: f64, dim: usize) -> Result<FidelityRow> {
    let lat = GkpLattice::square();
    let opts = crate::gkp::CodewordOptions::unchecked();
    let c0 = crate::gkp::approx_codeword_with(&lat, crate::gkp::ApproxParams::new(delta, 0)?, dim, &opts)?;
    let c1 = crate::gkp::approx_codeword_with(&lat, crate::gkp::ApproxParams::new(delta, 1)?, dim, &opts)?;
    let n_code = 0.5 * (c0.mean_photon() + c1.mean_photon());
    let code = orthonormalize_code(&[c0, c1])?;
    let ch = loss_dephasing_channel(params, dim)?;
    let enc = encoded_kraus(&ch, &code)?;
    let res = seesaw_optimal_recovery(&enc, 500, 1e-9)?;
    Ok(FidelityRow {
        kappa_t: params.kappa_t,
        kappa_phi_t: params.kappa_phi_t,
        delta,
        n_code,
        f_gkp: res.f_avg,
        f_trivial: trivial_encoding_baseline(params)?,
    })
}

/// `⟨n̂⟩` of `ρ`.
pub fn mean_photon_rho(rho: &CMatrix) -> f64 {
    (0..rho.nrows()).map(|n| n as f64 * rho[(n, n)].re).sum::<f64>() / rho.trace().re
}

/// Closed-form loss then dephasing, used as an independent check of the integrator.
pub fn loss_dephasing_closed_form(params: NoiseParams, rho: &CMatrix) -> CMatrix {
    let n = rho.nrows();
    let eta = (-params.kappa_t).exp();
    let out = if params.kappa_t == 0.0 {
        rho.clone()
    } else {
        KrausChannel { ops: pure_loss_ops(eta, n, 0.0), dim: n }.apply(rho)
    };
    CMatrix::from_fn(n, n, |i, j| {
        let d = i as f64 - j as f64;
        out[(i, j)] * (-0.5 * params.kappa_phi_t * d * d).exp()
    })
}
