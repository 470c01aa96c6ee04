//! Sharpen/Trim stabilizer steering from vacuum, simulated as sampled
//! measurement-backaction trajectories.
//!
//! A round with circuit displacement `x` and feedback `f` prepares the ancilla
//! in `|+⟩`, applies `CD(x)` and an `S` gate, and reads out `X`. The mode sees
//! `M_± = [D(x/2) ± i D(−x/2)] / 2`, so `p(±) = ½[1 ± Im⟨D(x)⟩]`, followed
//! by the feedback `D(±f/2)`.
//!
//! Sharpen uses `x = ζ` with feedback along `ε̂ = ε·iζ/|ζ|`; trim uses
//! `x = ε̂` with feedback `−ζ`, so a misread trim costs a stabilizer.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{displacement_matrix, guard_dim, BandedOperator, CVector, TruncatedState};
use crate::gkp::{suggest_dim, GkpLattice};
use crate::readout::{
    wrong_parity_probability, AncillaModel, AncillaPauli, Axis, BinningRule, ErrorPlacement,
    HybridQubitMode, InjectedError,
};

/// Which stabilizer a round targets: `S_X = D(2α)` or `S_Z = D(2β)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stabilizer {
    #[serde(rename = "S_X")]
    X,
    #[serde(rename = "S_Z")]
    Z,
}

impl Stabilizer {
    pub fn zeta(self, lattice: &GkpLattice) -> C64 {
        match self {
            Stabilizer::X => 2.0 * lattice.alpha(),
            Stabilizer::Z => 2.0 * lattice.beta(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundKind {
    Sharpen,
    Trim,
}

/// One entry of the repeating cycle pattern.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CycleStep {
    pub stabilizer: Stabilizer,
    pub kind: RoundKind,
}

impl CycleStep {
    pub fn tag(&self) -> String {
        let s = match self.stabilizer {
            Stabilizer::X => "S_X",
            Stabilizer::Z => "S_Z",
        };
        let k = match self.kind {
            RoundKind::Sharpen => "sharpen",
            RoundKind::Trim => "trim",
        };
        format!("{s}-{k}")
    }

    /// Circuit displacement and feedback scale `(x, f)`.
    pub fn displacements(&self, lattice: &GkpLattice, epsilon: f64) -> (C64, C64) {
        let zeta = self.stabilizer.zeta(lattice);
        let e_hat = C64::new(0.0, epsilon) * zeta / zeta.norm();
        match self.kind {
            RoundKind::Sharpen => (zeta, e_hat),
            RoundKind::Trim => (e_hat, -zeta),
        }
    }
}

/// `S_X` sharpen, `S_X` trim, `S_Z` sharpen, `S_Z` trim.
pub fn default_pattern() -> Vec<CycleStep> {
    let mut p = Vec::with_capacity(4);
    for stabilizer in [Stabilizer::X, Stabilizer::Z] {
        for kind in [RoundKind::Sharpen, RoundKind::Trim] {
            p.push(CycleStep { stabilizer, kind });
        }
    }
    p
}

/// Preparation schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepSchedule {
    pub epsilon: f64,
    pub cycles: usize,
    pub pattern: Vec<CycleStep>,
    /// Repeats of the final `Z̄` phase estimation; more than one means the
    /// run is accepted only if all outcomes agree. Zero skips it.
    pub final_repeats: usize,
    /// Acceptance band for the final `Δ_X, Δ_Z` in units of `√ε`.
    pub band: (f64, f64),
    /// Fock cutoff; chosen from `ε` when absent.
    pub dim: Option<usize>,
    /// Largest tolerated population in the top tenth of the cutoff.
    pub leak_tol: f64,
}

impl Default for PrepSchedule {
    fn default() -> Self {
        Self { epsilon: 0.09, cycles: 40, pattern: default_pattern(), final_repeats: 1, band: (0.5, 1.6), dim: None, leak_tol: 1e-3 }
    }
}

impl PrepSchedule {
    pub fn new(epsilon: f64, cycles: usize) -> Self {
        Self { epsilon, cycles, ..Self::default() }
    }

    pub fn validate(&self, lattice: &GkpLattice) -> Result<()> {
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        for st in [Stabilizer::X, Stabilizer::Z] {
            let z = st.zeta(lattice).norm();
            if self.epsilon * z >= 0.5 {
                return Err(Error::invalid(format!("epsilon·|ζ| = {:.3} must stay below 0.5", self.epsilon * z)));
            }
        }
        if self.cycles > 0 && self.pattern.is_empty() {
            return Err(Error::invalid("cycle pattern is empty"));
        }
        if !(0.0 < self.band.0 && self.band.0 < self.band.1) {
            return Err(Error::invalid("squeezing band must satisfy 0 < lo < hi"));
        }
        if !(self.leak_tol > 0.0 && self.leak_tol < 1.0) {
            return Err(Error::invalid("leak_tol must lie in (0, 1)"));
        }
        if let Some(d) = self.dim {
            if d < 20 {
                return Err(Error::invalid("cutoff below 20 cannot hold a prepared state"));
            }
        }
        Ok(())
    }

    /// Cutoff: explicit, or `40 + 16/ε` rounded up to a multiple of ten,
    /// at most 600, and never below what a code at `0.6√ε` needs.
    pub fn resolve_dim(&self, lattice: &GkpLattice) -> Result<usize> {
        match self.dim {
            Some(d) => Ok(d),
            None => {
                let rule = ((40.0 + 16.0 / self.epsilon) / 10.0).ceil() as usize * 10;
                let floor = suggest_dim(lattice, 0.6 * self.epsilon.sqrt(), 1e-6, 600)?;
                Ok(rule.clamp(floor, 600.max(floor)))
            }
        }
    }
}

/// One sampled round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepRound {
    pub cycle: usize,
    pub tag: String,
    pub outcome: i8,
    pub p_plus: f64,
    pub feedback: C64,
    pub delta_x: f64,
    pub delta_z: f64,
    /// `|tr S_X ρ|`, `|tr S_Z ρ|` after the round.
    pub s_x_abs: f64,
    pub s_z_abs: f64,
    pub mean_photon: f64,
    pub injected: Option<InjectedError>,
}

/// Full record of one trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub index: u64,
    pub epsilon: f64,
    pub rounds: Vec<PrepRound>,
    pub final_outcomes: Vec<i8>,
    /// Logical label `±1` reported by the final measurement.
    pub label: Option<i8>,
    /// False when repeated final outcomes disagreed.
    pub accepted: bool,
    pub delta_x: f64,
    pub delta_z: f64,
    pub mean_photon: f64,
    /// Worst population seen in the top tenth of the cutoff.
    pub max_leakage: f64,
    /// Stopped early because population reached the top of the cutoff.
    pub truncated: bool,
    /// Inside the `Δ` acceptance band; a miss is flagged, not an error.
    pub converged: bool,
    /// Probability that ideal `Q̂` homodyne of the final state contradicts
    /// the `+1` label it was corrected to.
    pub logical_error: Option<f64>,
}

/// Precomputed operators shared across trajectories.
pub struct PrepKernel {
    lattice: GkpLattice,
    schedule: PrepSchedule,
    dim: usize,
    /// Per pattern step: `D(x/2)`, `D(−x/2)`, `D(f/2)`, `D(−f/2)`.
    steps: Vec<[BandedOperator; 4]>,
    s_x: BandedOperator,
    s_z: BandedOperator,
    /// `D(β/2)`, `D(−β/2)` for the final `Z̄` readout.
    final_half: [BandedOperator; 2],
    logical_x: BandedOperator,
}

impl PrepKernel {
    pub fn new(lattice: &GkpLattice, schedule: &PrepSchedule) -> Result<Self> {
        schedule.validate(lattice)?;
        let dim = schedule.resolve_dim(lattice)?;
        let op = |z: C64| BandedOperator::from_dense(&displacement_matrix(z, dim), BAND_DROP);
        let steps = schedule
            .pattern
            .iter()
            .map(|s| {
                let (x, f) = s.displacements(lattice, schedule.epsilon);
                [op(x / 2.0), op(-x / 2.0), op(f / 2.0), op(-f / 2.0)]
            })
            .collect();
        let beta = lattice.beta();
        Ok(Self {
            lattice: *lattice,
            schedule: schedule.clone(),
            dim,
            steps,
            s_x: op(2.0 * lattice.alpha()),
            s_z: op(2.0 * beta),
            final_half: [op(beta / 2.0), op(-beta / 2.0)],
            logical_x: op(lattice.alpha()),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn schedule(&self) -> &PrepSchedule {
        &self.schedule
    }

    /// `(Δ_X, Δ_Z, |⟨S_X⟩|, |⟨S_Z⟩|)` of a normalized state.
    pub fn metrics(&self, psi: &CVector) -> (f64, f64, f64, f64) {
        let ex = psi.dotc(&self.s_x.mul(psi)).norm();
        let ez = psi.dotc(&self.s_z.mul(psi)).norm();
        let d = |e: f64, len: f64| if e >= 1.0 { 0.0 } else { (-(e * e).ln()).sqrt() / len };
        (
            d(ex, 2.0 * self.lattice.alpha().norm()),
            d(ez, 2.0 * self.lattice.beta().norm()),
            ex,
            ez,
        )
    }
}

fn mean_photon(psi: &CVector) -> f64 {
    psi.iter().enumerate().map(|(n, a)| n as f64 * a.norm_sqr()).sum()
}

/// Entries below this are dropped from the banded displacements.
const BAND_DROP: f64 = 1e-18;

/// Renormalizes trajectory states and tracks population near the cutoff.
struct LeakGuard {
    tol: f64,
    max: f64,
}

impl LeakGuard {
    fn new(tol: f64) -> Self {
        Self { tol, max: 0.0 }
    }

    fn normalize(&mut self, v: CVector) -> Result<CVector> {
        let dim = v.len();
        let n = v.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Numerical("trajectory state vanished".into()));
        }
        let v = v.unscale(n);
        let leak: f64 = v.rows(guard_dim(dim), dim - guard_dim(dim)).norm_squared();
        self.max = self.max.max(leak);
        if leak > self.tol {
            return Err(Error::Truncation(format!("trajectory leaked {leak:.2e} into the top of cutoff {dim}")));
        }
        Ok(v)
    }
}

/// Outcome of one round before feedback.
struct RawRound {
    outcome: i8,
    p_plus: f64,
    post: CVector,
    injected: Option<InjectedError>,
}

/// Noiseless round via the Kraus pair.
fn kraus_round<R: Rng + ?Sized>(psi: &CVector, dp: &BandedOperator, dm: &BandedOperator, with_s: bool, rng: &mut R) -> RawRound {
    let a = dp.mul(psi);
    let b = dm.mul(psi);
    let ph = if with_s { C64::new(0.0, 1.0) } else { C64::new(1.0, 0.0) };
    let half = C64::new(0.5, 0.0);
    let vp = (&a + &b * ph) * half;
    let vm = (&a - &b * ph) * half;
    let (pp, pm) = (vp.norm_squared(), vm.norm_squared());
    let p_plus = pp / (pp + pm);
    let outcome: i8 = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
    RawRound { outcome, p_plus, post: if outcome > 0 { vp } else { vm }, injected: None }
}

/// Round on the explicit ancilla–mode state with one possible Pauli error.
///
/// `d_half` holds `D(±x/2)`; the during-`CD` placement splits the gate at a
/// uniform fraction and builds the two pieces on the fly.
fn hybrid_round<R: Rng + ?Sized>(
    psi: &CVector,
    x: C64,
    d_half: (&BandedOperator, &BandedOperator),
    with_s: bool,
    model: &AncillaModel,
    rng: &mut R,
) -> Result<RawRound> {
    let dim = psi.len();
    let mode = TruncatedState::from_vector(psi.clone())?;
    let mut h = HybridQubitMode::plus(&mode);
    let pauli = if is_noiseless(model) { None } else { model.draw(rng) };
    let mut injected = None;
    let cd = |h: &HybridQubitMode, p: &BandedOperator, m: &BandedOperator| -> Result<HybridQubitMode> {
        let mut v = CVector::zeros(2 * dim);
        v.rows_mut(0, dim).copy_from(&p.mul(&h.branch(0)));
        v.rows_mut(dim, dim).copy_from(&m.mul(&h.branch(1)));
        HybridQubitMode::from_vector(v)
    };
    let record = |p: AncillaPauli, fraction: Option<f64>, shift: C64| InjectedError {
        pauli: p,
        placement: model.placement,
        fraction,
        shift,
    };
    match (pauli, model.placement) {
        (Some(p), ErrorPlacement::BeforeCd) => {
            h.ancilla_pauli(p);
            injected = Some(record(p, None, C64::new(0.0, 0.0)));
            h = cd(&h, d_half.0, d_half.1)?;
        }
        (Some(p), ErrorPlacement::DuringCdUniform) => {
            let t: f64 = rng.gen();
            let op = |z: C64| BandedOperator::from_dense(&displacement_matrix(z, dim), BAND_DROP);
            let first = (op(x * t / 2.0), op(-x * t / 2.0));
            let rest = (op(x * (1.0 - t) / 2.0), op(-x * (1.0 - t) / 2.0));
            h = cd(&h, &first.0, &first.1)?;
            h.ancilla_pauli(p);
            h = cd(&h, &rest.0, &rest.1)?;
            let shift = if p == AncillaPauli::Z { C64::new(0.0, 0.0) } else { x * (1.0 - t) };
            injected = Some(record(p, Some(t), shift));
        }
        _ => h = cd(&h, d_half.0, d_half.1)?,
    }
    if with_s {
        h.s_gate();
    }
    if let (Some(p), ErrorPlacement::BeforeMeasurement) = (pauli, model.placement) {
        h.ancilla_pauli(p);
        injected = Some(record(p, None, C64::new(0.0, 0.0)));
    }
    let vp = h.project_x(1);
    let vm = h.project_x(-1);
    let (pp, pm) = (vp.norm_squared(), vm.norm_squared());
    let p_plus = pp / (pp + pm);
    let outcome: i8 = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
    Ok(RawRound { outcome, p_plus, post: if outcome > 0 { vp } else { vm }, injected })
}

fn is_noiseless(model: &AncillaModel) -> bool {
    model.p_x == 0.0 && model.p_y == 0.0 && model.p_z == 0.0
}

fn step_round<R: Rng + ?Sized>(
    kernel: &PrepKernel,
    psi: &CVector,
    step_idx: usize,
    model: &AncillaModel,
    force_hybrid: bool,
    guard: &mut LeakGuard,
    rng: &mut R,
) -> Result<(RawRound, C64, CVector)> {
    let step = &kernel.schedule.pattern[step_idx];
    let [dp, dm, fp, fm] = &kernel.steps[step_idx];
    let (x, f) = step.displacements(&kernel.lattice, kernel.schedule.epsilon);
    let raw = if is_noiseless(model) && !force_hybrid {
        kraus_round(psi, dp, dm, true, rng)
    } else {
        hybrid_round(psi, x, (dp, dm), true, model, rng)?
    };
    let (feedback, fb) = if raw.outcome > 0 { (f / 2.0, fp) } else { (-f / 2.0, fm) };
    let next = guard.normalize(fb.mul(&raw.post))?;
    Ok((raw, feedback, next))
}

/// One sharpen round on `state` with stabilizer displacement `zeta`.
pub fn sharpen_round<R: Rng + ?Sized>(state: &TruncatedState, zeta: C64, epsilon: f64, rng: &mut R) -> Result<(i8, TruncatedState)> {
    let e_hat = C64::new(0.0, epsilon) * zeta / zeta.norm();
    single_round(state, zeta, e_hat, rng)
}

/// One trim round: phase estimation of `D(ε̂)` with feedback `D(∓ζ/2)`.
pub fn trim_round<R: Rng + ?Sized>(state: &TruncatedState, zeta: C64, epsilon: f64, rng: &mut R) -> Result<(i8, TruncatedState)> {
    let e_hat = C64::new(0.0, epsilon) * zeta / zeta.norm();
    single_round(state, e_hat, -zeta, rng)
}

fn single_round<R: Rng + ?Sized>(state: &TruncatedState, x: C64, f: C64, rng: &mut R) -> Result<(i8, TruncatedState)> {
    let dim = state.dim();
    let psi = state.amplitudes().unscale(state.norm());
    let op = |z: C64| BandedOperator::from_dense(&displacement_matrix(z, dim), BAND_DROP);
    let raw = kraus_round(&psi, &op(x / 2.0), &op(-x / 2.0), true, rng);
    let s = raw.outcome as f64;
    let post = displacement_matrix(f * (s / 2.0), dim) * raw.post;
    let post = LeakGuard::new(PrepSchedule::default().leak_tol).normalize(post)?;
    Ok((raw.outcome, TruncatedState::from_vector(post)?))
}

/// Run one trajectory from vacuum; the seed stream is `(seed, index)`.
pub fn run_trajectory(kernel: &PrepKernel, model: &AncillaModel, seed: u64, index: u64) -> Result<(TruncatedState, TrajectoryRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    trajectory_inner(kernel, model, false, &mut rng, index)
}

#[allow(clippy::too_many_arguments)]
fn evolve<R: Rng + ?Sized>(
    kernel: &PrepKernel,
    model: &AncillaModel,
    force_hybrid: bool,
    rng: &mut R,
    guard: &mut LeakGuard,
    psi: &mut CVector,
    rounds: &mut Vec<PrepRound>,
    final_outcomes: &mut Vec<i8>,
) -> Result<()> {
    let sched = &kernel.schedule;
    for cycle in 0..sched.cycles {
        for k in 0..sched.pattern.len() {
            let (raw, feedback, next) = step_round(kernel, psi, k, model, force_hybrid, guard, rng)?;
            *psi = next;
            let (dx, dz, sx, sz) = kernel.metrics(psi);
            rounds.push(PrepRound {
                cycle,
                tag: sched.pattern[k].tag(),
                outcome: raw.outcome,
                p_plus: raw.p_plus,
                feedback,
                delta_x: dx,
                delta_z: dz,
                s_x_abs: sx,
                s_z_abs: sz,
                mean_photon: mean_photon(psi),
                injected: raw.injected,
            });
        }
    }
    for _ in 0..sched.final_repeats {
        let [hp, hm] = &kernel.final_half;
        let raw = if is_noiseless(model) && !force_hybrid {
            kraus_round(psi, hp, hm, false, rng)
        } else {
            hybrid_round(psi, kernel.lattice.beta(), (hp, hm), false, model, rng)?
        };
        final_outcomes.push(raw.outcome);
        // Undo the β/2 offset left by the controlled displacement.
        *psi = guard.normalize(hp.mul(&raw.post))?;
    }
    if final_outcomes.first() == Some(&-1) {
        *psi = guard.normalize(kernel.logical_x.mul(psi))?;
    }
    Ok(())
}

fn trajectory_inner<R: Rng + ?Sized>(
    kernel: &PrepKernel,
    model: &AncillaModel,
    force_hybrid: bool,
    rng: &mut R,
    index: u64,
) -> Result<(TruncatedState, TrajectoryRecord)> {
    model.validate()?;
    let dim = kernel.dim;
    let sched = &kernel.schedule;
    let mut psi = DVector::from_element(dim, C64::new(0.0, 0.0));
    psi[0] = C64::new(1.0, 0.0);
    let mut guard = LeakGuard::new(sched.leak_tol);
    let mut rounds = Vec::with_capacity(sched.cycles * sched.pattern.len());
    let mut final_outcomes = Vec::with_capacity(sched.final_repeats);
    let evolved = evolve(kernel, model, force_hybrid, rng, &mut guard, &mut psi, &mut rounds, &mut final_outcomes);
    if let Err(e) = evolved {
        if !matches!(e, Error::Truncation(_)) {
            return Err(e);
        }
        // Escaped weight hit the cutoff: keep the partial record, flagged.
        log::debug!("trajectory {index} stopped: {e}");
        let state = TruncatedState::from_vector(psi)?;
        let record = TrajectoryRecord {
            index,
            epsilon: sched.epsilon,
            rounds,
            final_outcomes,
            label: None,
            accepted: false,
            delta_x: f64::NAN,
            delta_z: f64::NAN,
            mean_photon: state.mean_photon(),
            max_leakage: guard.max,
            truncated: true,
            converged: false,
            logical_error: None,
        };
        return Ok((state, record));
    }
    let accepted = final_outcomes.windows(2).all(|w| w[0] == w[1]);
    let label = final_outcomes.first().copied();
    let (delta_x, delta_z, _, _) = kernel.metrics(&psi);
    let root = sched.epsilon.sqrt();
    let in_band = |d: f64| d >= sched.band.0 * root && d <= sched.band.1 * root;
    let state = TruncatedState::from_vector(psi)?;
    let logical_error = if label.is_some() && accepted {
        Some(wrong_parity_probability(&state, &kernel.lattice, Axis::Z, &BinningRule::new(1.0)?)?)
    } else {
        None
    };
    let record = TrajectoryRecord {
        index,
        epsilon: sched.epsilon,
        rounds,
        final_outcomes,
        label,
        accepted,
        delta_x,
        delta_z,
        mean_photon: state.mean_photon(),
        max_leakage: guard.max,
        truncated: false,
        converged: in_band(delta_x) && in_band(delta_z),
        logical_error,
    };
    Ok((state, record))
}

/// Noiseless preparation from vacuum.
pub fn prepare_logical<R: Rng + ?Sized>(lattice: &GkpLattice, schedule: &PrepSchedule, rng: &mut R) -> Result<(TruncatedState, TrajectoryRecord)> {
    let kernel = PrepKernel::new(lattice, schedule)?;
    trajectory_inner(&kernel, &AncillaModel::noiseless(), false, rng, 0)
}

/// Preparation with ancilla Pauli errors injected per round.
pub fn prepare_with_noisy_ancilla<R: Rng + ?Sized>(
    lattice: &GkpLattice,
    schedule: &PrepSchedule,
    model: &AncillaModel,
    rng: &mut R,
) -> Result<(TruncatedState, TrajectoryRecord)> {
    let kernel = PrepKernel::new(lattice, schedule)?;
    trajectory_inner(&kernel, model, false, rng, 0)
}

/// Ensemble summary, one CSV row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub epsilon: f64,
    pub cycles: usize,
    pub delta_x_mean: f64,
    pub delta_z_mean: f64,
    /// Mean logical error over accepted trajectories.
    pub logical_error: f64,
    pub bias: f64,
    pub trajectories: usize,
    pub accepted: usize,
    pub converged: usize,
    /// Trajectories stopped by the cutoff guard; excluded from the means.
    pub truncated: usize,
}

/// Per-cycle ensemble mean and standard error of `|tr S ρ|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleStat {
    pub cycle: usize,
    pub s_x_mean: f64,
    pub s_x_se: f64,
    pub s_z_mean: f64,
    pub s_z_se: f64,
}

#[derive(Clone, Debug)]
pub struct Ensemble {
    pub records: Vec<TrajectoryRecord>,
    pub summary: EnsembleSummary,
    pub cycle_stats: Vec<CycleStat>,
}

fn mean_se(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = xs.collect();
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (m, 0.0);
    }
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Largest fraction of cutoff-stopped trajectories an ensemble tolerates.
pub const MAX_TRUNCATED_FRACTION: f64 = 0.05;

/// Run `n` independent trajectories in parallel on the current rayon pool.
///
/// Trajectories stopped by the cutoff guard are kept but flagged; more than
/// [`MAX_TRUNCATED_FRACTION`] of them is a truncation error.
pub fn run_ensemble(lattice: &GkpLattice, schedule: &PrepSchedule, model: &AncillaModel, n: usize, seed: u64) -> Result<Ensemble> {
    let kernel = PrepKernel::new(lattice, schedule)?;
    let records = (0..n as u64)
        .into_par_iter()
        .map(|i| run_trajectory(&kernel, model, seed, i).map(|(_, r)| r))
        .collect::<Result<Vec<_>>>()?;
    let truncated = records.iter().filter(|r| r.truncated).count();
    if truncated as f64 > MAX_TRUNCATED_FRACTION * n as f64 {
        return Err(Error::Truncation(format!(
            "{truncated} of {n} trajectories reached the top of cutoff {}",
            kernel.dim
        )));
    }
    let good: Vec<&TrajectoryRecord> = records.iter().filter(|r| !r.truncated).collect();
    let per = schedule.pattern.len();
    let cycle_stats = (0..schedule.cycles)
        .map(|c| {
            let last = (c + 1) * per - 1;
            let (s_x_mean, s_x_se) = mean_se(good.iter().map(|r| r.rounds[last].s_x_abs));
            let (s_z_mean, s_z_se) = mean_se(good.iter().map(|r| r.rounds[last].s_z_abs));
            CycleStat { cycle: c, s_x_mean, s_x_se, s_z_mean, s_z_se }
        })
        .collect();
    let accepted: Vec<&&TrajectoryRecord> = good.iter().filter(|r| r.accepted).collect();
    let errs: Vec<f64> = accepted.iter().filter_map(|r| r.logical_error).collect();
    let summary = EnsembleSummary {
        epsilon: schedule.epsilon,
        cycles: schedule.cycles,
        delta_x_mean: mean_se(good.iter().map(|r| r.delta_x)).0,
        delta_z_mean: mean_se(good.iter().map(|r| r.delta_z)).0,
        logical_error: if errs.is_empty() { f64::NAN } else { errs.iter().sum::<f64>() / errs.len() as f64 },
        bias: model.bias(),
        trajectories: n,
        accepted: accepted.len(),
        converged: good.iter().filter(|r| r.converged).count(),
        truncated,
    };
    Ok(Ensemble { records, summary, cycle_stats })
}

/// Least-squares slope of `ln Δ` against `ln ε`.
pub fn scaling_exponent(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vacuum(dim: usize) -> TruncatedState {
        TruncatedState::vacuum(dim).unwrap()
    }

    #[test]
    fn vacuum_outcome_law() {
        let lat = GkpLattice::square();
        let zeta = 2.0 * lat.alpha();
        let dim = 80;
        let psi = vacuum(dim).amplitudes().clone();
        let d = displacement_matrix(zeta, dim);
        let want = 0.5 * (1.0 + psi.dotc(&(&d * &psi)).im);
        let raw = kraus_round(
            &psi,
            &BandedOperator::from_dense(&displacement_matrix(zeta / 2.0, dim), 0.0),
            &BandedOperator::from_dense(&displacement_matrix(-zeta / 2.0, dim), 0.0),
            true,
            &mut ChaCha8Rng::seed_from_u64(1),
        );
        assert!((raw.p_plus - want).abs() < 1e-8);
    }

    #[test]
    fn tiny_trim_is_nearly_identity() {
        let lat = GkpLattice::square();
        let zeta = 2.0 * lat.alpha();
        let st = TruncatedState::coherent(C64::new(0.4, 0.2), 60).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut plus = 0;
        for _ in 0..2000 {
            let (o, _) = trim_round(&st, zeta, 1e-9, &mut rng).unwrap();
            plus += (o > 0) as i32;
        }
        assert!((plus as f64 / 2000.0 - 0.5).abs() < 0.04);
        // With ε → 0 the circuit acts trivially apart from the ζ/2 feedback.
        let (o, post) = trim_round(&st, zeta, 1e-9, &mut rng).unwrap();
        let back = displacement_matrix(zeta * (o as f64 / 2.0), 60) * post.amplitudes();
        assert!((back.dotc(st.amplitudes()).norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn feedback_follows_outcome_sign() {
        let lat = GkpLattice::square();
        let sched = PrepSchedule { cycles: 3, dim: Some(100), ..PrepSchedule::default() };
        let (_, rec) = prepare_logical(&lat, &sched, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for r in &rec.rounds {
            let step = sched.pattern.iter().find(|s| s.tag() == r.tag).unwrap();
            let (_, f) = step.displacements(&lat, sched.epsilon);
            assert!((r.feedback - f * (r.outcome as f64 / 2.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_rounds_pass_vacuum_through() {
        let lat = GkpLattice::square();
        let sched = PrepSchedule { cycles: 0, final_repeats: 0, dim: Some(60), ..PrepSchedule::default() };
        let (st, rec) = prepare_logical(&lat, &sched, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((st.inner(&vacuum(60)).unwrap().norm() - 1.0).abs() < 1e-14);
        let k = PrepKernel::new(&lat, &sched).unwrap();
        let (dx, dz, _, _) = k.metrics(vacuum(60).amplitudes());
        assert_eq!((rec.delta_x, rec.delta_z), (dx, dz));
        assert!(rec.rounds.is_empty() && rec.label.is_none());
    }

    #[test]
    fn schedule_guards() {
        let lat = GkpLattice::square();
        assert!(PrepSchedule::new(0.25, 10).validate(&lat).is_err());
        assert!(PrepSchedule::new(0.0, 10).validate(&lat).is_err());
        assert!(PrepSchedule::new(0.09, 10).validate(&lat).is_ok());
    }

    #[test]
    fn hybrid_circuit_matches_kraus_form() {
        let lat = GkpLattice::square();
        let sched = PrepSchedule { cycles: 4, dim: Some(100), final_repeats: 3, ..PrepSchedule::default() };
        let k = PrepKernel::new(&lat, &sched).unwrap();
        let m = AncillaModel::noiseless();
        let (a, ra) = trajectory_inner(&k, &m, false, &mut ChaCha8Rng::seed_from_u64(9), 0).unwrap();
        let (b, rb) = trajectory_inner(&k, &m, true, &mut ChaCha8Rng::seed_from_u64(9), 0).unwrap();
        assert_eq!(ra.final_outcomes, rb.final_outcomes);
        for (x, y) in ra.rounds.iter().zip(&rb.rounds) {
            assert_eq!(x.outcome, y.outcome);
            assert!((x.p_plus - y.p_plus).abs() < 1e-10);
        }
        assert!((a.inner(&b).unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn determinism_and_zero_rate_model() {
        let lat = GkpLattice::square();
        let sched = PrepSchedule { cycles: 5, dim: Some(100), ..PrepSchedule::default() };
        let k = PrepKernel::new(&lat, &sched).unwrap();
        let zero = AncillaModel::new(0.0, 0.0, 0.0, ErrorPlacement::BeforeMeasurement).unwrap();
        let (_, a) = run_trajectory(&k, &AncillaModel::noiseless(), 11, 4).unwrap();
        let (_, b) = run_trajectory(&k, &zero, 11, 4).unwrap();
        let (_, c) = run_trajectory(&k, &AncillaModel::noiseless(), 11, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        let (_, d) = run_trajectory(&k, &AncillaModel::noiseless(), 11, 5).unwrap();
        assert_ne!(a.rounds, d.rounds);
    }

    #[test]
    fn states_stay_normalized() {
        let lat = GkpLattice::square();
        let sched = PrepSchedule { cycles: 10, dim: Some(120), ..PrepSchedule::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = vacuum(120);
        for _ in 0..10 {
            let (_, s) = sharpen_round(&st, 2.0 * lat.alpha(), sched.epsilon, &mut rng).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-8);
            let (_, s) = trim_round(&s, 2.0 * lat.alpha(), sched.epsilon, &mut rng).unwrap();
            assert!((s.norm() - 1.0).abs() < 1e-8);
            st = s;
        }
    }

    fn small_schedule() -> PrepSchedule {
        PrepSchedule { epsilon: 0.16, cycles: 25, ..PrepSchedule::default() }
    }

    #[test]
    fn trim_limits_photon_growth() {
        let lat = GkpLattice::square();
        let sharpen_only: Vec<CycleStep> = default_pattern().into_iter().filter(|s| s.kind == RoundKind::Sharpen).collect();
        let base = PrepSchedule { epsilon: 0.16, cycles: 12, final_repeats: 0, dim: Some(300), leak_tol: 0.5, ..PrepSchedule::default() };
        let no_trim = PrepSchedule { pattern: sharpen_only, ..base.clone() };
        let median_n = |s: &PrepSchedule| {
            let e = run_ensemble(&lat, s, &AncillaModel::noiseless(), 30, 21).unwrap();
            let mut n: Vec<f64> = e.records.iter().map(|r| r.mean_photon).collect();
            n.sort_by(f64::total_cmp);
            n[15]
        };
        let (with, without) = (median_n(&base), median_n(&no_trim));
        assert!(with < 0.5 * without, "trimmed {with} vs untrimmed {without}");
    }

    #[test]
    fn stabilizer_expectations_grow_over_cycles() {
        let lat = GkpLattice::square();
        let e = run_ensemble(&lat, &small_schedule(), &AncillaModel::noiseless(), 60, 3).unwrap();
        for w in e.cycle_stats.windows(2) {
            let slack = 3.0 * (w[0].s_x_se.hypot(w[1].s_x_se)) + 1e-12;
            assert!(w[1].s_x_mean >= w[0].s_x_mean - slack, "{:?}", w);
            let slack = 3.0 * (w[0].s_z_se.hypot(w[1].s_z_se)) + 1e-12;
            assert!(w[1].s_z_mean >= w[0].s_z_mean - slack, "{:?}", w);
        }
        assert!(e.cycle_stats.last().unwrap().s_x_mean > 0.5);
        assert_eq!(e.summary.converged, 60);
    }

    #[test]
    fn postselected_final_readout_lowers_mislabels() {
        let lat = GkpLattice::square();
        let single = run_ensemble(&lat, &small_schedule(), &AncillaModel::noiseless(), 80, 5).unwrap();
        let triple = PrepSchedule { final_repeats: 3, ..small_schedule() };
        let triple = run_ensemble(&lat, &triple, &AncillaModel::noiseless(), 80, 5).unwrap();
        assert!(triple.summary.accepted < 80);
        assert!(triple.summary.logical_error < single.summary.logical_error);
    }

    #[test]
    fn biased_ancilla_beats_depolarizing() {
        let lat = GkpLattice::square();
        // A single-shot final readout turns every ancilla Z flip into a mislabel;
        // the post-selected triple readout isolates the steering rounds.
        let sched = PrepSchedule { epsilon: 0.09, cycles: 25, final_repeats: 3, ..PrepSchedule::default() };
        let place = ErrorPlacement::DuringCdUniform;
        let n = 150;
        let clean = run_ensemble(&lat, &sched, &AncillaModel::noiseless(), n, 8).unwrap();
        let pure_z = run_ensemble(&lat, &sched, &AncillaModel::new(0.0, 0.0, 0.02, place).unwrap(), n, 8).unwrap();
        let p = 0.02 / 3.0;
        let depol = run_ensemble(&lat, &sched, &AncillaModel::new(p, p, p, place).unwrap(), n, 8).unwrap();
        assert!(pure_z.summary.bias.is_infinite());
        assert!((depol.summary.bias - 0.5).abs() < 1e-12);
        assert!(pure_z.summary.logical_error <= 2.0 * clean.summary.logical_error, "{:?} {:?}", clean.summary, pure_z.summary);
        assert!(depol.summary.logical_error > pure_z.summary.logical_error, "{:?} {:?} {:?}", clean.summary, pure_z.summary, depol.summary);
    }

    #[test]
    fn scaling_fit_recovers_known_exponent() {
        let pts: Vec<(f64, f64)> = [0.04, 0.09, 0.16].iter().map(|&e: &f64| (e, 0.7 * e.sqrt())).collect();
        assert!((scaling_exponent(&pts) - 0.5).abs() < 1e-12);
    }
}
