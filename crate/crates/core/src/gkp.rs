//! GKP lattices, approximate codewords and modular squeezing.
//!
//! A single-mode GKP code is fixed by two complex numbers `α`, `β` with
//! `βα* − β*α = iπ`. Logical operators are `X̄ = D(α)`, `Z̄ = D(β)` and the
//! stabilizers are `S_X = D(2α)`, `S_Z = D(2β)`.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fock::{displacement, displacement_matrix, hermite_functions, CVector, DenseOperator, TruncatedState};
use crate::numerics::{gauss_legendre, ln_factorials};

/// Lattice family tag.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LatticeKind {
    Square,
    Rectangular { lambda: f64 },
    Hexagonal,
    Custom,
}

/// The pair `(α, β)` defining a single-mode GKP code.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GkpLattice {
    alpha: C64,
    beta: C64,
    kind: LatticeKind,
}

impl GkpLattice {
    pub fn square() -> Self {
        let s = (PI / 2.0).sqrt();
        Self { alpha: C64::new(s, 0.0), beta: C64::new(0.0, s), kind: LatticeKind::Square }
    }

    pub fn hexagonal() -> Self {
        let s = (PI / 3f64.sqrt()).sqrt();
        Self {
            alpha: C64::new(s, 0.0),
            beta: C64::from_polar(s, 2.0 * PI / 3.0),
            kind: LatticeKind::Hexagonal,
        }
    }

    /// Rectangular lattice with aspect `λ`; `λ = 1` is the square lattice.
    pub fn rectangular(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::invalid("rectangular aspect must be positive"));
        }
        let s = (PI / 2.0).sqrt();
        Ok(Self {
            alpha: C64::new(lambda * s, 0.0),
            beta: C64::new(0.0, s / lambda),
            kind: LatticeKind::Rectangular { lambda },
        })
    }

    /// Arbitrary lattice; rejected unless `βα* − β*α = iπ` to `1e-12`.
    pub fn custom(alpha: C64, beta: C64) -> Result<Self> {
        let l = Self { alpha, beta, kind: LatticeKind::Custom };
        let defect = (l.symplectic_form() - C64::new(0.0, PI)).norm();
        if defect > 1e-12 {
            return Err(Error::invalid(format!(
                "lattice vectors violate the unit-cell condition by {defect:.3e}"
            )));
        }
        Ok(l)
    }

    pub fn from_kind(kind: LatticeKind) -> Result<Self> {
        match kind {
            LatticeKind::Square => Ok(Self::square()),
            LatticeKind::Hexagonal => Ok(Self::hexagonal()),
            LatticeKind::Rectangular { lambda } => Self::rectangular(lambda),
            LatticeKind::Custom => Err(Error::invalid("custom lattices need explicit vectors")),
        }
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn beta(&self) -> C64 {
        self.beta
    }

    pub fn kind(&self) -> LatticeKind {
        self.kind
    }

    /// `βα* − β*α`, equal to `iπ` for a valid lattice.
    pub fn symplectic_form(&self) -> C64 {
        self.beta * self.alpha.conj() - self.beta.conj() * self.alpha
    }

    /// Phase-space point `(uα + vβ)/√π`.
    pub fn shift(&self, u: f64, v: f64) -> C64 {
        (self.alpha * u + self.beta * v) / PI.sqrt()
    }
}

/// Stabilizers and logical Paulis as Fock matrices.
#[derive(Clone, Debug)]
pub struct CodeOperators {
    pub s_x: DenseOperator,
    pub s_z: DenseOperator,
    pub x: DenseOperator,
    pub y: DenseOperator,
    pub z: DenseOperator,
}

/// `S_X = D(2α)`, `S_Z = D(2β)`, `X̄ = D(α)`, `Z̄ = D(β)`, `Ȳ = iX̄Z̄ = D(α + β)`.
pub fn stabilizers_and_logicals(lattice: &GkpLattice, dim: usize) -> Result<CodeOperators> {
    let (a, b) = (lattice.alpha(), lattice.beta());
    if (2.0 * a).norm_sqr().max((2.0 * b).norm_sqr()) > dim as f64 / 4.0 {
        log::warn!("stabilizer displacement is large compared with cutoff {dim}");
    }
    Ok(CodeOperators {
        s_x: displacement(2.0 * a, dim)?,
        s_z: displacement(2.0 * b, dim)?,
        x: displacement(a, dim)?,
        y: displacement(a + b, dim)?,
        z: displacement(b, dim)?,
    })
}

/// Envelope parameter and logical label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    pub delta: f64,
    pub mu: u8,
}

impl ApproxParams {
    pub fn new(delta: f64, mu: u8) -> Result<Self> {
        let p = Self { delta, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if self.mu > 1 {
            return Err(Error::invalid("logical label must be 0 or 1"));
        }
        Ok(())
    }
}

/// How each coherent component `|ζ⟩` of the ideal sum is damped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Envelope {
    /// `e^{−Δ²|ζ|²} |e^{−Δ²} ζ⟩`, the small-Δ form of the envelope.
    #[default]
    Simplified,
    /// `e^{−Δ² n̂}` applied literally: `e^{−(1 − e^{−2Δ²})|ζ|²/2} |e^{−Δ²} ζ⟩`.
    Exact,
}

/// Construction knobs for [`approx_codeword_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodewordOptions {
    pub envelope: Envelope,
    /// Terms whose envelope weight `e^{−Δ²|ζ|²}` falls below this are dropped.
    pub weight_cutoff: f64,
    /// Maximum allowed top-decile leakage; `None` disables the check.
    pub leakage_tol: Option<f64>,
}

impl Default for CodewordOptions {
    fn default() -> Self {
        Self { envelope: Envelope::Simplified, weight_cutoff: 1e-12, leakage_tol: Some(1e-9) }
    }
}

impl CodewordOptions {
    pub fn unchecked() -> Self {
        Self { leakage_tol: None, ..Self::default() }
    }
}

/// Approximate codeword with default options.
pub fn approx_codeword(lattice: &GkpLattice, params: ApproxParams, dim: usize) -> Result<TruncatedState> {
    approx_codeword_with(lattice, params, dim, &CodewordOptions::default())
}

/// Enveloped sum of coherent states
/// `Σ_{k,l} phase(k,l) · env(ζ) |e^{−Δ²} ζ⟩` with `ζ = (2k + μ)α + lβ`,
/// where the phase comes from splitting `D((2k+μ)α + lβ)` into lattice steps.
pub fn approx_codeword_with(
    lattice: &GkpLattice,
    params: ApproxParams,
    dim: usize,
    opts: &CodewordOptions,
) -> Result<TruncatedState> {
    params.validate()?;
    if dim < 2 {
        return Err(Error::invalid("cutoff must be at least 2"));
    }
    let d2 = params.delta * params.delta;
    let max_log_weight = -opts.weight_cutoff.ln();
    let lnfact = ln_factorials(dim + 1);
    let shrink = (-d2).exp();
    let (a, b) = (lattice.alpha(), lattice.beta());
    let mu = params.mu as i64;

    // Bound the index ranges from the smallest singular value of [2α, β].
    let area = (2.0 * a * b.conj()).im.abs();
    let big = ((2.0 * a).norm_sqr() + b.norm_sqr()).sqrt();
    let smin = area / big;
    let rmax = (max_log_weight / d2).sqrt();
    let kmax = (rmax / smin).ceil() as i64 + 2;
    let lmax = (rmax / smin).ceil() as i64 + 2;

    let mut amps = CVector::zeros(dim);
    let mut logs = vec![0.0; dim];
    for k in -kmax..=kmax {
        for l in -lmax..=lmax {
            let zeta = a * (2 * k + mu) as f64 + b * l as f64;
            let r2 = zeta.norm_sqr();
            if d2 * r2 > max_log_weight {
                continue;
            }
            let log_env = match opts.envelope {
                Envelope::Simplified => -d2 * r2,
                Envelope::Exact => -0.5 * (1.0 - (-2.0 * d2).exp()) * r2,
            };
            let sign = if (k * l).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let phase = C64::from_polar(sign, -PI * (mu * l) as f64 / 2.0);
            let z = zeta * shrink;
            let zr = z.norm();
            let zt = z.arg();
            for n in 0..dim {
                let ln_mag = if zr > 0.0 { n as f64 * zr.ln() } else if n == 0 { 0.0 } else { f64::NEG_INFINITY };
                logs[n] = log_env - 0.5 * zr * zr + ln_mag - 0.5 * lnfact[n];
            }
            for n in 0..dim {
                if logs[n] > -745.0 {
                    amps[n] += phase * C64::from_polar(logs[n].exp(), n as f64 * zt);
                }
            }
        }
    }
    let state = TruncatedState::from_vector(amps)?.normalized()?;
    check_leakage(&state, opts.leakage_tol)?;
    Ok(state)
}

fn check_leakage(state: &TruncatedState, tol: Option<f64>) -> Result<()> {
    if let Some(tol) = tol {
        let leak = state.leakage();
        if leak > tol {
            return Err(Error::Truncation(format!(
                "codeword leaks {leak:.2e} into the top decile at dim {} (tolerance {tol:.1e})",
                state.dim()
            )));
        }
    }
    Ok(())
}

/// `|±̃⟩ ∝ |0̃⟩ ± |1̃⟩`.
pub fn plus_minus_codeword(
    lattice: &GkpLattice,
    delta: f64,
    sign: i8,
    dim: usize,
    opts: &CodewordOptions,
) -> Result<TruncatedState> {
    let zero = approx_codeword_with(lattice, ApproxParams::new(delta, 0)?, dim, opts)?;
    let one = approx_codeword_with(lattice, ApproxParams::new(delta, 1)?, dim, opts)?;
    let s = if sign >= 0 { 1.0 } else { -1.0 };
    let v = zero.amplitudes() + one.amplitudes() * C64::new(s, 0.0);
    TruncatedState::from_vector(v)?.normalized()
}

/// Smallest cutoff (in steps of 10, up to `max_dim`) whose codewords
/// satisfy the leakage tolerance.
pub fn suggest_dim(lattice: &GkpLattice, delta: f64, tol: f64, max_dim: usize) -> Result<usize> {
    let opts = CodewordOptions { leakage_tol: Some(tol), ..CodewordOptions::default() };
    let mut dim = 40;
    while dim <= max_dim {
        let ok = (0..2u8).all(|mu| approx_codeword_with(lattice, ApproxParams { delta, mu }, dim, &opts).is_ok());
        if ok {
            return Ok(dim);
        }
        dim += 10;
    }
    Err(Error::Truncation(format!("no cutoff up to {max_dim} meets leakage {tol:.1e} at delta {delta}")))
}

/// Square-lattice codeword built as a Gaussian-enveloped comb of squeezed
/// position wave packets, projected onto the Fock basis.
pub fn approx_codeword_comb(lattice: &GkpLattice, delta: f64, mu: u8, dim: usize) -> Result<TruncatedState> {
    if lattice.kind() != LatticeKind::Square {
        return Err(Error::invalid("the comb construction is defined for the square lattice"));
    }
    ApproxParams::new(delta, mu)?;
    let sp = PI.sqrt();
    let half = (2.0 * dim as f64 + 1.0).sqrt() + 8.0;
    let jmax = (half / (2.0 * sp)).ceil() as i64 + 1;
    let wavefunction = |x: f64| -> f64 {
        (-jmax..=jmax)
            .map(|j| {
                let c = (2 * j + mu as i64) as f64;
                (-delta * delta * PI * c * c / 2.0 - (x - c * sp).powi(2) / (2.0 * delta * delta)).exp()
            })
            .sum()
    };
    // Piecewise Gauss–Legendre, panels narrower than the packet width.
    let (gx, gw) = gauss_legendre(16);
    let panel = delta.min(0.25);
    let panels = (2.0 * half / panel).ceil() as usize;
    let h = 2.0 * half / panels as f64;
    let mut amps = vec![C64::new(0.0, 0.0); dim];
    let mut buf = Vec::with_capacity(dim);
    for p in 0..panels {
        let x0 = -half + p as f64 * h;
        for (xi, wi) in gx.iter().zip(&gw) {
            let x = x0 + 0.5 * h * (xi + 1.0);
            let f = wavefunction(x);
            if f.abs() < 1e-300 {
                continue;
            }
            hermite_functions(x, dim, &mut buf);
            for n in 0..dim {
                amps[n] += 0.5 * h * wi * f * buf[n];
            }
        }
    }
    let state = TruncatedState::from_amplitudes(amps)?.normalized()?;
    Ok(state)
}

/// How the modular squeezing is normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `Δ_X = √(−ln|⟨S_X⟩|²) / (2|α|)` and likewise for Z.
    #[default]
    LatticeNormalized,
    /// Divide by the square-lattice spacing `2√(π/2)` regardless of lattice.
    SquareReference,
}

/// Modular squeezing summary for one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqueezingReport {
    pub delta_x: f64,
    pub delta_z: f64,
    pub s_x_db: f64,
    pub s_z_db: f64,
    pub n_mean: f64,
    /// Mean photon number averaged over both codewords when computed via
    /// [`code_report`]; equals `n_mean` otherwise.
    pub n_code: f64,
    /// Set when `|tr S ρ| ≥ 1` had to be clipped.
    pub clipped: bool,
}

/// `−10 log10(δ²)`.
pub fn db_from_delta(delta: f64) -> f64 {
    -10.0 * (delta * delta).log10()
}

pub fn squeezing_metrics(state: &TruncatedState, lattice: &GkpLattice) -> Result<SqueezingReport> {
    squeezing_metrics_with(state, lattice, Normalization::LatticeNormalized)
}

pub fn squeezing_metrics_with(state: &TruncatedState, lattice: &GkpLattice, norm: Normalization) -> Result<SqueezingReport> {
    let dim = state.dim();
    let psi = state.amplitudes().unscale(state.norm());
    let expect = |z: C64| -> f64 {
        let d = displacement_matrix(z, dim);
        psi.dotc(&(&d * &psi)).norm()
    };
    let ex = expect(2.0 * lattice.alpha());
    let ez = expect(2.0 * lattice.beta());
    let mut clipped = false;
    let mut metric = |e: f64, len: f64| -> f64 {
        if e >= 1.0 {
            clipped = true;
            return 0.0;
        }
        (-(e * e).ln()).sqrt() / len
    };
    let (lx, lz) = match norm {
        Normalization::LatticeNormalized => (2.0 * lattice.alpha().norm(), 2.0 * lattice.beta().norm()),
        Normalization::SquareReference => ((2.0 * PI).sqrt(), (2.0 * PI).sqrt()),
    };
    let delta_x = metric(ex, lx);
    let delta_z = metric(ez, lz);
    let n_mean = state.mean_photon();
    Ok(SqueezingReport {
        delta_x,
        delta_z,
        s_x_db: db_from_delta(delta_x),
        s_z_db: db_from_delta(delta_z),
        n_mean,
        n_code: n_mean,
        clipped,
    })
}

/// Squeezing of `|0̃⟩` plus `n_code`, the photon number averaged over both codewords.
pub fn code_report(
    lattice: &GkpLattice,
    delta: f64,
    dim: usize,
    opts: &CodewordOptions,
    norm: Normalization,
) -> Result<SqueezingReport> {
    let zero = approx_codeword_with(lattice, ApproxParams::new(delta, 0)?, dim, opts)?;
    let one = approx_codeword_with(lattice, ApproxParams::new(delta, 1)?, dim, opts)?;
    let mut r = squeezing_metrics_with(&zero, lattice, norm)?;
    r.n_code = 0.5 * (zero.mean_photon() + one.mean_photon());
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{expectation, fidelity, guard_dim, hermitian_exp, quadratures};

    #[test]
    fn lattice_vectors() {
        let s = GkpLattice::square();
        assert!((s.alpha() - C64::new((PI / 2.0).sqrt(), 0.0)).norm() < 1e-15);
        assert!((s.symplectic_form() - C64::new(0.0, PI)).norm() < 1e-12);
        let h = GkpLattice::hexagonal();
        assert!((h.symplectic_form() - C64::new(0.0, PI)).norm() < 1e-12);
        let r = GkpLattice::rectangular(1.0).unwrap();
        assert!((r.alpha() - s.alpha()).norm() < 1e-15 && (r.beta() - s.beta()).norm() < 1e-15);
        assert!(GkpLattice::rectangular(-1.0).is_err());
        assert!(GkpLattice::custom(C64::new(1.0, 0.0), C64::new(0.0, 1.0)).is_err());
        assert!(GkpLattice::custom(s.alpha(), s.beta()).is_ok());
    }

    #[test]
    fn logical_algebra() {
        let dim = 80;
        let ops = stabilizers_and_logicals(&GkpLattice::square(), dim).unwrap();
        let xz = ops.x.matrix() * ops.z.matrix();
        let zx = ops.z.matrix() * ops.x.matrix();
        let sz = ops.s_x.matrix() * ops.z.matrix();
        let zs = ops.z.matrix() * ops.s_x.matrix();
        let g = guard_dim(dim) / 2;
        for i in 0..g {
            for j in 0..g {
                assert!((xz[(i, j)] + zx[(i, j)]).norm() < 1e-7);
                assert!((sz[(i, j)] - zs[(i, j)]).norm() < 1e-7);
            }
        }
    }

    #[test]
    fn z_logical_is_exponentiated_position() {
        // Build √π q in a larger space so truncation stays out of the compared block.
        let big = 200;
        let (q, _) = quadratures(&GkpLattice::square(), big);
        let u = hermitian_exp(q.matrix(), PI.sqrt());
        let z = displacement_matrix(GkpLattice::square().beta(), big);
        for i in 0..40 {
            for j in 0..40 {
                assert!((u[(i, j)] - z[(i, j)]).norm() < 1e-7, "{i} {j}");
            }
        }
    }

    #[test]
    fn codeword_signs_and_overlap() {
        let lat = GkpLattice::square();
        let dim = 120;
        let opts = CodewordOptions::unchecked();
        let zero = approx_codeword_with(&lat, ApproxParams::new(0.3, 0).unwrap(), dim, &opts).unwrap();
        let one = approx_codeword_with(&lat, ApproxParams::new(0.3, 1).unwrap(), dim, &opts).unwrap();
        let ops = stabilizers_and_logicals(&lat, dim).unwrap();
        let z0 = expectation(&ops.z, &zero).unwrap();
        let z1 = expectation(&ops.z, &one).unwrap();
        assert!(z0.re > 0.0 && z0.im.abs() < 1e-10);
        assert!(z1.re < 0.0 && z1.im.abs() < 1e-10);
        let sx = expectation(&ops.s_x, &zero).unwrap();
        assert!(sx.re > 0.0 && sx.im.abs() < 1e-10);
        // small-Δ estimate of ⟨Z̄⟩
        assert!((z0.re / (-PI * 0.09 / 4.0).exp() - 1.0).abs() < 0.02);
    }

    #[test]
    fn comb_matches_coherent_sum() {
        let lat = GkpLattice::square();
        let opts = CodewordOptions { envelope: Envelope::Exact, ..CodewordOptions::unchecked() };
        let a = approx_codeword_with(&lat, ApproxParams::new(0.3, 0).unwrap(), 120, &opts).unwrap();
        let b = approx_codeword_comb(&lat, 0.3, 0, 120).unwrap();
        assert!(fidelity(&a, &b).unwrap() > 0.999);
    }

    #[test]
    fn vacuum_squeezing_is_isotropic() {
        let v = TruncatedState::vacuum(30).unwrap();
        let r = squeezing_metrics(&v, &GkpLattice::square()).unwrap();
        assert!((r.delta_x - r.delta_z).abs() < 1e-12);
        // ⟨D(ζ)⟩_vac = e^{-|ζ|²/2} with |2α|² = 2π, so Δ = 1.
        assert!((r.delta_x - 1.0).abs() < 1e-10);
    }

    #[test]
    fn db_consistency() {
        let r = squeezing_metrics(&TruncatedState::coherent(C64::new(0.1, 0.0), 30).unwrap(), &GkpLattice::square()).unwrap();
        assert!((r.s_x_db + 10.0 * (r.delta_x * r.delta_x).log10()).abs() < 1e-9);
    }
}
