//! Code-capacity GKP⊳surface simulation with analog-weighted MWPM.
//!
//! Noise model: i.i.d. Gaussian displacements on the data modes only. Each
//! data mode first gets an ideal GKP round, which reveals its shift modulo
//! `√π` exactly and snaps it to the nearest lattice point. The surface checks
//! are then ideal and read the sum of the snapped shifts over their support.
//! The per-mode residuals are the analog information fed to the decoder.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matching::min_weight_matching;
use super::{centered, ideal_ec_error_rate, spacing, steps, GaussianNoise, ShiftFrame, ShiftVector};
use crate::error::{Error, Result};
use crate::gkp::GkpLattice;
use crate::numerics::wilson_interval;

/// Clipping range for edge weights.
pub const MIN_WEIGHT: f64 = 1e-4;
pub const MAX_WEIGHT: f64 = 50.0;

/// Fixed-point scale used to turn real weights into exact integers.
const WEIGHT_SCALE: f64 = 1e6;

/// Trials per deterministic work unit.
const BLOCK: u64 = 1024;

/// A stabilizer check and the sign of each data shift in its readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub support: Vec<usize>,
    pub signs: Vec<i8>,
}

/// Which error type a decoding pass handles.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sector {
    /// `u` shifts, `X̄` flips, detected by `Z`-type checks.
    BitFlip,
    /// `v` shifts, `Z̄` flips, detected by `X`-type checks.
    PhaseFlip,
}

impl Sector {
    pub const BOTH: [Sector; 2] = [Sector::BitFlip, Sector::PhaseFlip];

    fn component(self, s: &ShiftVector) -> f64 {
        match self {
            Sector::BitFlip => s.u,
            Sector::PhaseFlip => s.v,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecoderMode {
    /// Per-mode flip likelihoods from the analog residuals.
    #[default]
    Analog,
    /// Uniform weights; analog residuals ignored.
    Binary,
}

impl DecoderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DecoderMode::Analog => "analog",
            DecoderMode::Binary => "binary",
        }
    }
}

/// Rotated CSS surface code on a `d × d` grid of data modes.
///
/// Qubit `(r, c)` has index `r·d + c`. Plaquette `(r, c)` with
/// `r, c ∈ −1..d−1` touches qubits `(r..=r+1, c..=c+1)` and is `X`-type when
/// `r + c` is even. Two-body `X` plaquettes sit on the top and bottom edges,
/// two-body `Z` plaquettes on the left and right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceLayout {
    pub d: usize,
    pub coords: Vec<(usize, usize)>,
    pub x_checks: Vec<Check>,
    pub z_checks: Vec<Check>,
    /// Support of `X̄_L` (a column); `Z̄_L` is a row.
    pub logical_x: Vec<usize>,
    pub logical_z: Vec<usize>,
}

impl SurfaceLayout {
    pub fn rotated(d: usize) -> Result<Self> {
        if d < 3 || d % 2 == 0 {
            return Err(Error::invalid(format!("surface-code distance must be odd and at least 3, got {d}")));
        }
        let n = d as i64;
        let mut x_checks = Vec::new();
        let mut z_checks = Vec::new();
        for r in -1..n {
            for c in -1..n {
                let mut support = Vec::new();
                for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    let (qr, qc) = (r + dr, c + dc);
                    if (0..n).contains(&qr) && (0..n).contains(&qc) {
                        support.push((qr * n + qc) as usize);
                    }
                }
                let x_type = (r + c).rem_euclid(2) == 0;
                let keep = match support.len() {
                    4 => true,
                    2 => {
                        let horizontal_edge = r == -1 || r == n - 1;
                        if x_type {
                            horizontal_edge
                        } else {
                            !horizontal_edge
                        }
                    }
                    _ => false,
                };
                if !keep {
                    continue;
                }
                if x_type {
                    let signs = (0..support.len()).map(|i| if i < support.len() / 2 { 1 } else { -1 }).collect();
                    x_checks.push(Check { support, signs });
                } else {
                    let signs = vec![1; support.len()];
                    z_checks.push(Check { support, signs });
                }
            }
        }
        Ok(Self {
            d,
            coords: (0..d * d).map(|q| (q / d, q % d)).collect(),
            x_checks,
            z_checks,
            logical_x: (0..d).map(|r| r * d).collect(),
            logical_z: (0..d).collect(),
        })
    }

    pub fn n_data(&self) -> usize {
        self.d * self.d
    }

    pub fn checks(&self, sector: Sector) -> &[Check] {
        match sector {
            Sector::BitFlip => &self.z_checks,
            Sector::PhaseFlip => &self.x_checks,
        }
    }

    /// Logical operator whose parity detects an uncorrected chain.
    pub fn witness(&self, sector: Sector) -> &[usize] {
        match sector {
            Sector::BitFlip => &self.logical_z,
            Sector::PhaseFlip => &self.logical_x,
        }
    }

    /// One edge per data qubit between its checks; a qubit on a single check
    /// connects to the boundary node, which has index `checks(sector).len()`.
    pub fn decoding_edges(&self, sector: Sector) -> Vec<(usize, usize)> {
        let checks = self.checks(sector);
        let boundary = checks.len();
        let mut touch: Vec<Vec<usize>> = vec![Vec::new(); self.n_data()];
        for (i, ch) in checks.iter().enumerate() {
            for &q in &ch.support {
                touch[q].push(i);
            }
        }
        touch
            .into_iter()
            .map(|t| match t.as_slice() {
                [a] => (*a, boundary),
                [a, b] => (*a, *b),
                other => unreachable!("rotated layout gives each qubit one or two checks per type, got {other:?}"),
            })
            .collect()
    }
}

/// One code-capacity draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyndromeSample {
    pub seed: u64,
    pub index: u64,
    pub shifts: Vec<ShiftVector>,
    /// Signed sum of the snapped shifts over each check's support.
    pub z_values: Vec<f64>,
    pub x_values: Vec<f64>,
    pub z_defects: Vec<bool>,
    pub x_defects: Vec<bool>,
}

impl SyndromeSample {
    pub fn defects(&self, sector: Sector) -> &[bool] {
        match sector {
            Sector::BitFlip => &self.z_defects,
            Sector::PhaseFlip => &self.x_defects,
        }
    }

    pub fn flips(&self, sector: Sector) -> Vec<bool> {
        self.shifts.iter().map(|s| steps(sector.component(s)).rem_euclid(2) == 1).collect()
    }
}

fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn check_values(checks: &[Check], shifts: &[ShiftVector], sector: Sector) -> (Vec<f64>, Vec<bool>) {
    let values: Vec<f64> = checks
        .iter()
        .map(|ch| {
            ch.support
                .iter()
                .zip(&ch.signs)
                .map(|(&q, &s)| {
                    let x = sector.component(&shifts[q]);
                    f64::from(s) * (x - centered(x))
                })
                .sum()
        })
        .collect();
    let defects = values.iter().map(|v| ((v / spacing()).round() as i64).rem_euclid(2) == 1).collect();
    (values, defects)
}

/// Draw trial `index` of the stream `seed`.
///
/// [`estimate_logical_rate`] uses the same streams, so a dumped sample
/// replays exactly the trial it came from.
pub fn sample_code_capacity(layout: &SurfaceLayout, noise: GaussianNoise, lattice: &GkpLattice, seed: u64, index: u64) -> Result<SyndromeSample> {
    let frame = ShiftFrame::new(lattice)?;
    let mut rng = trial_rng(seed, index);
    let shifts: Vec<ShiftVector> = (0..layout.n_data()).map(|_| frame.sample(noise.sigma, &mut rng)).collect();
    let (z_values, z_defects) = check_values(&layout.z_checks, &shifts, Sector::BitFlip);
    let (x_values, x_defects) = check_values(&layout.x_checks, &shifts, Sector::PhaseFlip);
    Ok(SyndromeSample { seed, index, shifts, z_values, x_values, z_defects, x_defects })
}

/// Posterior probability that a mode with residual `r` sits in an odd window.
pub fn p_flip(r: f64, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return if r.abs() < spacing() / 2.0 { 0.0 } else { 0.5 };
    }
    let s = spacing();
    let kmax = (8.0 * sigma / s).ceil() as i64 + 1;
    let expo = |k: i64| -(r + k as f64 * s).powi(2) / (2.0 * sigma * sigma);
    let top = (-kmax..=kmax).map(expo).fold(f64::NEG_INFINITY, f64::max);
    let (mut odd, mut all) = (0.0, 0.0);
    for k in -kmax..=kmax {
        let w = (expo(k) - top).exp();
        all += w;
        if k.rem_euclid(2) == 1 {
            odd += w;
        }
    }
    odd / all
}

fn weight_from_p(p: f64) -> f64 {
    let w = ((1.0 - p) / p).ln();
    if w.is_nan() {
        MAX_WEIGHT
    } else {
        w.clamp(MIN_WEIGHT, MAX_WEIGHT)
    }
}

/// Decoding graph of one sector: checks plus a boundary node, one edge per
/// data mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchingGraph {
    pub n_checks: usize,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub defects: Vec<usize>,
}

impl MatchingGraph {
    pub fn boundary(&self) -> usize {
        self.n_checks
    }
}

/// Edge weights `−log(p/(1−p))` from each mode's residual, clipped to
/// `[MIN_WEIGHT, MAX_WEIGHT]`. `sigma` is the width of the relevant shift
/// component.
pub fn analog_edge_weights(layout: &SurfaceLayout, sample: &SyndromeSample, sector: Sector, sigma: f64, mode: DecoderMode) -> MatchingGraph {
    let components: Vec<f64> = sample.shifts.iter().map(|s| sector.component(s)).collect();
    build_graph(layout.decoding_edges(sector), layout.checks(sector).len(), &components, sample.defects(sector), sigma, mode)
}

fn build_graph(edges: Vec<(usize, usize)>, n_checks: usize, components: &[f64], defects: &[bool], sigma: f64, mode: DecoderMode) -> MatchingGraph {
    let weights = match mode {
        DecoderMode::Analog => components.iter().map(|&x| weight_from_p(p_flip(centered(x), sigma))).collect(),
        DecoderMode::Binary => {
            let w = weight_from_p(ideal_ec_error_rate(sigma).unwrap_or(0.5));
            vec![w; components.len()]
        }
    };
    let defects = defects.iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| i).collect();
    MatchingGraph { n_checks, edges, weights, defects }
}

/// Shortest paths from `src`; returns distances and the edge used to reach
/// each node.
fn dijkstra(adj: &[Vec<(usize, usize)>], w: &[i64], src: usize) -> (Vec<i64>, Vec<usize>) {
    let mut dist = vec![i64::MAX; adj.len()];
    let mut via = vec![usize::MAX; adj.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0;
    heap.push(Reverse((0i64, src)));
    while let Some(Reverse((d, n))) = heap.pop() {
        if d > dist[n] {
            continue;
        }
        for &(m, e) in &adj[n] {
            let nd = d + w[e];
            if nd < dist[m] {
                dist[m] = nd;
                via[m] = e;
                heap.push(Reverse((nd, m)));
            }
        }
    }
    (dist, via)
}

/// Exact MWPM over the defects; returns the sorted data modes to flip.
pub fn mwpm_decode(graph: &MatchingGraph) -> Result<Vec<usize>> {
    if graph.weights.len() != graph.edges.len() {
        return Err(Error::invalid("one weight per edge required"));
    }
    if graph.defects.is_empty() {
        return Ok(Vec::new());
    }
    let n_nodes = graph.n_checks + 1;
    let mut adj = vec![Vec::new(); n_nodes];
    for (e, &(a, b)) in graph.edges.iter().enumerate() {
        if a >= n_nodes || b >= n_nodes {
            return Err(Error::invalid(format!("edge {e} leaves the graph")));
        }
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    let w: Vec<i64> = graph
        .weights
        .iter()
        .map(|&x| {
            if x.is_finite() && x >= 0.0 {
                Ok((x * WEIGHT_SCALE).round() as i64)
            } else {
                Err(Error::invalid(format!("edge weight {x} is not finite and non-negative")))
            }
        })
        .collect::<Result<_>>()?;
    let trees: Vec<(Vec<i64>, Vec<usize>)> = graph.defects.iter().map(|&s| dijkstra(&adj, &w, s)).collect();
    let k = graph.defects.len();
    let boundary = graph.boundary();
    let mut pair = vec![vec![0i64; k]; k];
    let mut to_b = vec![0i64; k];
    for i in 0..k {
        to_b[i] = trees[i].0[boundary];
        if to_b[i] == i64::MAX {
            return Err(Error::Numerical(format!("defect at check {} has no path to the boundary", graph.defects[i])));
        }
        for j in 0..k {
            pair[i][j] = trees[i].0[graph.defects[j]];
        }
    }
    let m = min_weight_matching(&pair, &to_b)?;
    let mut flip = vec![false; graph.edges.len()];
    let mut walk = |tree: &(Vec<i64>, Vec<usize>), src: usize, mut node: usize| {
        while node != src {
            let e = tree.1[node];
            flip[e] ^= true;
            let (a, b) = graph.edges[e];
            node = if a == node { b } else { a };
        }
    };
    for &(i, j) in &m.pairs {
        walk(&trees[i], graph.defects[i], graph.defects[j]);
    }
    for &i in &m.to_boundary {
        walk(&trees[i], graph.defects[i], boundary);
    }
    Ok(flip.iter().enumerate().filter(|(_, &f)| f).map(|(e, _)| e).collect())
}

/// Precomputed per-sector structure for the Monte Carlo loop.
struct SectorPlan {
    sector: Sector,
    edges: Vec<(usize, usize)>,
    n_checks: usize,
    witness: Vec<bool>,
    sigma: f64,
}

impl SectorPlan {
    fn new(layout: &SurfaceLayout, sector: Sector, sigma: f64) -> Self {
        let mut witness = vec![false; layout.n_data()];
        for &q in layout.witness(sector) {
            witness[q] = true;
        }
        Self { sector, edges: layout.decoding_edges(sector), n_checks: layout.checks(sector).len(), witness, sigma }
    }

    /// True when the decoded correction leaves a logical error.
    fn fails(&self, shifts: &[ShiftVector], mode: DecoderMode) -> Result<bool> {
        let comps: Vec<f64> = shifts.iter().map(|s| self.sector.component(s)).collect();
        let mut residual: Vec<bool> = comps.iter().map(|&x| steps(x).rem_euclid(2) == 1).collect();
        let mut defects = vec![false; self.n_checks + 1];
        for (q, &(a, b)) in self.edges.iter().enumerate() {
            if residual[q] {
                defects[a] ^= true;
                defects[b] ^= true;
            }
        }
        defects.truncate(self.n_checks);
        let graph = build_graph(self.edges.clone(), self.n_checks, &comps, &defects, self.sigma, mode);
        for q in mwpm_decode(&graph)? {
            residual[q] ^= true;
        }
        debug_assert!({
            let mut syn = vec![false; self.n_checks + 1];
            for (q, &(a, b)) in self.edges.iter().enumerate() {
                if residual[q] {
                    syn[a] ^= true;
                    syn[b] ^= true;
                }
            }
            syn[..self.n_checks].iter().all(|s| !s)
        });
        Ok(residual.iter().zip(&self.witness).filter(|(r, w)| **r && **w).count() % 2 == 1)
    }
}

/// Monte Carlo estimate at one `(d, σ)` point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogicalRate {
    pub d: usize,
    pub sigma: f64,
    pub s_db: f64,
    pub trials: u64,
    /// Trials with an error in either sector.
    pub failures: u64,
    pub failures_x: u64,
    pub failures_z: u64,
    pub p_l: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub decoder_mode: DecoderMode,
}

impl LogicalRate {
    pub fn p_x(&self) -> f64 {
        self.failures_x as f64 / self.trials as f64
    }

    pub fn p_z(&self) -> f64 {
        self.failures_z as f64 / self.trials as f64
    }
}

/// Estimate the logical error rate with `trials` draws of stream `seed`.
///
/// Trials are split into fixed blocks and counted in parallel; counts are
/// integers, so the result does not depend on the thread count.
pub fn estimate_logical_rate(
    layout: &SurfaceLayout,
    lattice: &GkpLattice,
    sigma: f64,
    trials: u64,
    seed: u64,
    mode: DecoderMode,
) -> Result<LogicalRate> {
    if trials == 0 {
        return Err(Error::invalid("trials must be positive"));
    }
    let noise = GaussianNoise::new(sigma)?;
    let frame = ShiftFrame::new(lattice)?;
    let (su, sv) = frame.marginal_sigmas(sigma);
    let plans = [SectorPlan::new(layout, Sector::BitFlip, su), SectorPlan::new(layout, Sector::PhaseFlip, sv)];
    let n_blocks = trials.div_ceil(BLOCK);
    let counts = (0..n_blocks)
        .into_par_iter()
        .map(|b| -> Result<[u64; 3]> {
            let mut c = [0u64; 3];
            let mut shifts = vec![ShiftVector::default(); layout.n_data()];
            for t in b * BLOCK..((b + 1) * BLOCK).min(trials) {
                let mut rng = trial_rng(seed, t);
                for s in shifts.iter_mut() {
                    *s = frame.sample(sigma, &mut rng);
                }
                let fx = plans[0].fails(&shifts, mode)?;
                let fz = plans[1].fails(&shifts, mode)?;
                c[0] += u64::from(fx || fz);
                c[1] += u64::from(fx);
                c[2] += u64::from(fz);
            }
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold([0u64; 3], |a, c| [a[0] + c[0], a[1] + c[1], a[2] + c[2]]);
    let (ci_low, ci_high) = wilson_interval(counts[0], trials);
    Ok(LogicalRate {
        d: layout.d,
        sigma,
        s_db: noise.squeezing_db(),
        trials,
        failures: counts[0],
        failures_x: counts[1],
        failures_z: counts[2],
        p_l: counts[0] as f64 / trials as f64,
        ci_low,
        ci_high,
        decoder_mode: mode,
    })
}

/// Decode a stored sample with the same pipeline as the Monte Carlo loop;
/// returns `[X̄ failure, Z̄ failure]`.
pub fn decode_sample(layout: &SurfaceLayout, lattice: &GkpLattice, sample: &SyndromeSample, sigma: f64, mode: DecoderMode) -> Result<[bool; 2]> {
    let (su, sv) = ShiftFrame::new(lattice)?.marginal_sigmas(sigma);
    Ok([
        SectorPlan::new(layout, Sector::BitFlip, su).fails(&sample.shifts, mode)?,
        SectorPlan::new(layout, Sector::PhaseFlip, sv).fails(&sample.shifts, mode)?,
    ])
}

/// Per-point seed derived from the master seed.
pub fn point_seed(seed: u64, d: usize, sigma_index: usize) -> u64 {
    let mut z = seed ^ ((d as u64) << 32) ^ (sigma_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    pub rates: Vec<LogicalRate>,
    /// `(d_small, d_large, σ)` where the two curves cross.
    pub crossings: Vec<(usize, usize, f64)>,
    /// Mean of the crossings, if every adjacent pair crosses.
    pub sigma_th: Option<f64>,
}

/// Crossing of `ln p_L` curves between adjacent distances, by linear
/// interpolation in `σ`. Zero counts are floored at half an event.
pub fn locate_crossings(rates: &[LogicalRate]) -> Vec<(usize, usize, f64)> {
    let mut ds: Vec<usize> = rates.iter().map(|r| r.d).collect();
    ds.sort_unstable();
    ds.dedup();
    let curve = |d: usize| -> Vec<(f64, f64)> {
        let mut c: Vec<(f64, f64)> = rates
            .iter()
            .filter(|r| r.d == d)
            .map(|r| (r.sigma, ((r.failures as f64).max(0.5) / r.trials as f64).ln()))
            .collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        c
    };
    let mut out = Vec::new();
    for w in ds.windows(2) {
        let (lo, hi) = (curve(w[0]), curve(w[1]));
        let gaps: Vec<(f64, f64)> = lo
            .iter()
            .filter_map(|&(s, a)| hi.iter().find(|(t, _)| *t == s).map(|&(_, b)| (s, b - a)))
            .collect();
        if let Some(pair) = gaps.windows(2).find(|p| p[0].1 < 0.0 && p[1].1 >= 0.0) {
            let ((s0, g0), (s1, g1)) = (pair[0], pair[1]);
            out.push((w[0], w[1], s0 + (s1 - s0) * (-g0) / (g1 - g0)));
        }
    }
    out
}

/// Scan every `(d, σ)` pair and locate the threshold.
pub fn threshold_scan(
    d_list: &[usize],
    sigmas: &[f64],
    trials: u64,
    seed: u64,
    mode: DecoderMode,
    lattice: &GkpLattice,
) -> Result<ThresholdScan> {
    if d_list.is_empty() || sigmas.is_empty() {
        return Err(Error::invalid("threshold scan needs at least one distance and one sigma"));
    }
    let mut rates = Vec::with_capacity(d_list.len() * sigmas.len());
    for &d in d_list {
        let layout = SurfaceLayout::rotated(d)?;
        for (i, &s) in sigmas.iter().enumerate() {
            let r = estimate_logical_rate(&layout, lattice, s, trials, point_seed(seed, d, i), mode)?;
            log::info!("d={d} sigma={s:.3} p_L={:.4e} ({} / {})", r.p_l, r.failures, r.trials);
            rates.push(r);
        }
    }
    let crossings = locate_crossings(&rates);
    let mut distinct = d_list.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    let sigma_th = (!crossings.is_empty() && crossings.len() + 1 == distinct.len())
        .then(|| crossings.iter().map(|c| c.2).sum::<f64>() / crossings.len() as f64);
    Ok(ThresholdScan { rates, crossings, sigma_th })
}

/// Logical error rates by type on a rectangular lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasPoint {
    pub lambda: f64,
    /// Ideal-round flip rates of a single mode.
    pub p_x_mode: f64,
    pub p_z_mode: f64,
    pub rate: LogicalRate,
}

impl BiasPoint {
    pub fn mode_bias(&self) -> f64 {
        self.p_z_mode / self.p_x_mode
    }
}

/// Rates for each aspect `λ` at fixed isotropic noise.
pub fn bias_study(lambdas: &[f64], sigma: f64, d: usize, trials: u64, seed: u64, mode: DecoderMode) -> Result<Vec<BiasPoint>> {
    let layout = SurfaceLayout::rotated(d)?;
    lambdas
        .iter()
        .enumerate()
        .map(|(i, &lambda)| {
            let lattice = GkpLattice::rectangular(lambda)?;
            let (su, sv) = ShiftFrame::new(&lattice)?.marginal_sigmas(sigma);
            Ok(BiasPoint {
                lambda,
                p_x_mode: ideal_ec_error_rate(su)?,
                p_z_mode: ideal_ec_error_rate(sv)?,
                rate: estimate_logical_rate(&layout, &lattice, sigma, trials, point_seed(seed, d, i), mode)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::matching::brute_force_matching;
    use super::*;

    fn overlap(a: &[usize], b: &[usize]) -> usize {
        a.iter().filter(|q| b.contains(q)).count()
    }

    #[test]
    fn layout_counts_and_commutation() {
        for d in [3, 5, 7, 9] {
            let l = SurfaceLayout::rotated(d).unwrap();
            assert_eq!(l.n_data(), d * d);
            assert_eq!(l.x_checks.len() + l.z_checks.len(), d * d - 1);
            assert_eq!(l.x_checks.len(), l.z_checks.len());
            for x in &l.x_checks {
                assert_eq!(x.signs.iter().filter(|&&s| s > 0).count(), x.signs.len() / 2);
                for z in &l.z_checks {
                    assert_eq!(overlap(&x.support, &z.support) % 2, 0);
                }
                assert_eq!(overlap(&x.support, &l.logical_z) % 2, 0);
            }
            for z in &l.z_checks {
                assert_eq!(overlap(&z.support, &l.logical_x) % 2, 0);
            }
            assert_eq!(overlap(&l.logical_x, &l.logical_z), 1);
            for s in Sector::BOTH {
                let edges = l.decoding_edges(s);
                assert_eq!(edges.iter().filter(|e| e.1 == l.checks(s).len()).count(), 2 * d);
            }
        }
        assert!(SurfaceLayout::rotated(4).is_err());
        assert!(SurfaceLayout::rotated(1).is_err());
    }

    #[test]
    fn sampling_examples() {
        let l = SurfaceLayout::rotated(5).unwrap();
        let lat = GkpLattice::square();
        let s = sample_code_capacity(&l, GaussianNoise::new(1e-9).unwrap(), &lat, 3, 0).unwrap();
        assert!(s.z_defects.iter().chain(&s.x_defects).all(|d| !d));

        // A full X̄ on a bulk qubit lights its two Z plaquettes.
        let mut s = s.clone();
        let q = 2 * 5 + 2;
        s.shifts[q].u = spacing();
        let (vals, defects) = check_values(&l.z_checks, &s.shifts, Sector::BitFlip);
        let lit: Vec<usize> = defects.iter().enumerate().filter(|(_, &d)| d).map(|(i, _)| i).collect();
        assert_eq!(lit.len(), 2);
        for i in lit {
            assert!(l.z_checks[i].support.contains(&q));
            assert!((vals[i].abs() - spacing()).abs() < 1e-12);
        }
    }

    #[test]
    fn defects_match_recomputation() {
        let l = SurfaceLayout::rotated(5).unwrap();
        let lat = GkpLattice::square();
        let noise = GaussianNoise::new(0.6).unwrap();
        for i in 0..1000 {
            let s = sample_code_capacity(&l, noise, &lat, 11, i).unwrap();
            for sector in Sector::BOTH {
                let flips = s.flips(sector);
                for (c, ch) in l.checks(sector).iter().enumerate() {
                    let parity = ch.support.iter().filter(|&&q| flips[q]).count() % 2 == 1;
                    assert_eq!(parity, s.defects(sector)[c]);
                }
            }
        }
    }

    #[test]
    fn flip_likelihood_and_weights() {
        let s = spacing();
        assert!(p_flip(0.0, 0.5) < p_flip(0.3, 0.5));
        assert!((p_flip(s / 2.0, 0.5) - 0.5).abs() < 1e-12);
        assert!((p_flip(s / 2.0, 0.01) - 0.5).abs() < 1e-12, "stable for narrow noise");
        assert_eq!(weight_from_p(p_flip(0.0, 0.05)), MAX_WEIGHT);
        assert_eq!(weight_from_p(p_flip(s / 2.0, 0.5)), MIN_WEIGHT);
        let l = SurfaceLayout::rotated(3).unwrap();
        let sample = sample_code_capacity(&l, GaussianNoise::new(0.5).unwrap(), &GkpLattice::square(), 1, 0).unwrap();
        let g = analog_edge_weights(&l, &sample, Sector::BitFlip, 0.5, DecoderMode::Binary);
        assert!(g.weights.windows(2).all(|w| w[0] == w[1]));
        let g = analog_edge_weights(&l, &sample, Sector::BitFlip, 0.5, DecoderMode::Analog);
        assert!(g.weights.iter().all(|w| (MIN_WEIGHT..=MAX_WEIGHT).contains(w)));
    }

    #[test]
    fn single_errors_are_corrected() {
        for d in [3, 5] {
            let l = SurfaceLayout::rotated(d).unwrap();
            let lat = GkpLattice::square();
            let base = sample_code_capacity(&l, GaussianNoise::new(0.0).unwrap(), &lat, 0, 0).unwrap();
            for q in 0..l.n_data() {
                for sector in Sector::BOTH {
                    let mut s = base.clone();
                    match sector {
                        Sector::BitFlip => s.shifts[q].u = spacing() + 0.05,
                        Sector::PhaseFlip => s.shifts[q].v = -spacing() + 0.05,
                    }
                    for mode in [DecoderMode::Analog, DecoderMode::Binary] {
                        assert_eq!(decode_sample(&l, &lat, &s, 0.3, mode).unwrap(), [false, false], "q={q} {sector:?} {mode:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn logical_string_is_detected() {
        let l = SurfaceLayout::rotated(3).unwrap();
        let lat = GkpLattice::square();
        let mut s = sample_code_capacity(&l, GaussianNoise::new(0.0).unwrap(), &lat, 0, 0).unwrap();
        for &q in &l.logical_x {
            s.shifts[q].u = spacing();
        }
        let (_, defects) = check_values(&l.z_checks, &s.shifts, Sector::BitFlip);
        assert!(defects.iter().all(|d| !d));
        assert_eq!(decode_sample(&l, &lat, &s, 0.3, DecoderMode::Analog).unwrap(), [true, false]);
    }

    #[test]
    fn decoder_matches_brute_force_on_surface_graphs() {
        let l = SurfaceLayout::rotated(7).unwrap();
        let lat = GkpLattice::square();
        let mut checked = 0;
        for i in 0..400 {
            let s = sample_code_capacity(&l, GaussianNoise::new(0.55).unwrap(), &lat, 21, i).unwrap();
            let g = analog_edge_weights(&l, &s, Sector::BitFlip, 0.55, DecoderMode::Analog);
            if g.defects.len() > 10 {
                continue;
            }
            let corr = mwpm_decode(&g).unwrap();
            let cost: i64 = corr.iter().map(|&e| (g.weights[e] * WEIGHT_SCALE).round() as i64).sum();
            let adj = {
                let mut a = vec![Vec::new(); g.n_checks + 1];
                for (e, &(x, y)) in g.edges.iter().enumerate() {
                    a[x].push((y, e));
                    a[y].push((x, e));
                }
                a
            };
            let w: Vec<i64> = g.weights.iter().map(|x| (x * WEIGHT_SCALE).round() as i64).collect();
            let k = g.defects.len();
            let trees: Vec<_> = g.defects.iter().map(|&d| dijkstra(&adj, &w, d).0).collect();
            let pair: Vec<Vec<i64>> = (0..k).map(|i| (0..k).map(|j| trees[i][g.defects[j]]).collect()).collect();
            let bnd: Vec<i64> = (0..k).map(|i| trees[i][g.n_checks]).collect();
            let best = brute_force_matching(&pair, &bnd).unwrap();
            assert_eq!(min_weight_matching(&pair, &bnd).unwrap().cost, best.cost, "sample {i}");
            // Overlapping paths cancel, so the correction never costs more than the matching.
            assert!(cost <= best.cost, "sample {i}");
            checked += 1;
        }
        assert!(checked > 300);
    }

    #[test]
    fn rate_validation_and_determinism() {
        let l = SurfaceLayout::rotated(3).unwrap();
        let lat = GkpLattice::square();
        assert!(estimate_logical_rate(&l, &lat, 0.5, 0, 1, DecoderMode::Analog).is_err());
        let a = estimate_logical_rate(&l, &lat, 0.5, 3000, 7, DecoderMode::Analog).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| estimate_logical_rate(&l, &lat, 0.5, 3000, 7, DecoderMode::Analog).unwrap());
        assert_eq!(a, b);
        assert!(a.ci_low <= a.p_l && a.p_l <= a.ci_high);
    }

    #[test]
    fn replayed_sample_matches_trial() {
        let l = SurfaceLayout::rotated(3).unwrap();
        let lat = GkpLattice::square();
        let r = estimate_logical_rate(&l, &lat, 0.6, 200, 5, DecoderMode::Analog).unwrap();
        let replay: u64 = (0..200)
            .map(|i| {
                let s = sample_code_capacity(&l, GaussianNoise::new(0.6).unwrap(), &lat, 5, i).unwrap();
                let f = decode_sample(&l, &lat, &s, 0.6, DecoderMode::Analog).unwrap();
                u64::from(f[0] || f[1])
            })
            .sum();
        assert_eq!(replay, r.failures);
    }

    #[test]
    fn distance_ordering_flips_across_threshold() {
        let lat = GkpLattice::square();
        let (l3, l5) = (SurfaceLayout::rotated(3).unwrap(), SurfaceLayout::rotated(5).unwrap());
        let low3 = estimate_logical_rate(&l3, &lat, 0.45, 100_000, 1, DecoderMode::Analog).unwrap();
        let low5 = estimate_logical_rate(&l5, &lat, 0.45, 100_000, 2, DecoderMode::Analog).unwrap();
        assert!(low5.ci_high < low3.ci_low, "{low5:?} {low3:?}");
        let hi3 = estimate_logical_rate(&l3, &lat, 0.7, 20000, 3, DecoderMode::Analog).unwrap();
        let hi5 = estimate_logical_rate(&l5, &lat, 0.7, 20000, 4, DecoderMode::Analog).unwrap();
        assert!(hi5.ci_low > hi3.ci_high, "{hi5:?} {hi3:?}");
    }

    #[test]
    fn crossing_interpolation() {
        let mk = |d, sigma, failures| LogicalRate {
            d,
            sigma,
            s_db: 0.0,
            trials: 1000,
            failures,
            failures_x: 0,
            failures_z: 0,
            p_l: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            decoder_mode: DecoderMode::Analog,
        };
        let rates = vec![mk(3, 0.5, 100), mk(3, 0.6, 200), mk(5, 0.5, 50), mk(5, 0.6, 400)];
        let c = locate_crossings(&rates);
        assert_eq!(c.len(), 1);
        // ln gap goes from ln(1/2) to ln 2, so the crossing is midway.
        assert!((c[0].2 - 0.55).abs() < 1e-12);
    }

    #[test]
    fn rectangular_lattice_biases_towards_phase_flips() {
        let pts = bias_study(&[1.0, 1.3, 3f64.sqrt()], 0.45, 3, 20000, 9, DecoderMode::Analog).unwrap();
        assert!((pts[0].mode_bias() - 1.0).abs() < 1e-9);
        assert!(pts[1].mode_bias() > 5.0 && pts[2].mode_bias() > 10.0 * pts[1].mode_bias());
        let r = &pts[2].rate;
        assert!(r.failures_z > 20 * r.failures_x.max(1), "{r:?}");
    }
}
