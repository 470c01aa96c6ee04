//! One runner per experiment kind. Grid points run in parallel and are
//! collected in grid order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::Serialize;

use super::config::*;
use super::{OutputSink, Schema};
use crate::channels::{gkp_recovery_point, FidelityRow, NoiseParams};
use crate::clifford::{compile_to_frame, random_clifford_circuit, soundness, CircuitIR};
use crate::error::{Error, Result};
use crate::fock::{wigner, PhaseSpaceGrid};
use crate::gkp::{approx_codeword, code_report, suggest_dim, ApproxParams, CodewordOptions, Normalization};
use crate::prep::{run_ensemble, scaling_exponent, PrepSchedule};
use crate::readout::{
    improved_error_formula, improved_half_epsilon, logical_eigenstate, majority_error_exact, misid_probability,
    optimize_lambda, readout_dim, round_kraus, simple_error_formula, AncillaModel, Axis, Scheme, VoteMode,
};
use crate::shift_ec::{
    hybrid_check_circuit, hybrid_check_error, ideal_ec_error_rate, knill_ec, knill_pairing, locate_crossings, logical_decision,
    optimal_hybrid_check, point_seed, sample_code_capacity, steane_ec, threshold_scan, CheckScheme, GaussianNoise,
    MeasurementNoise, ShiftFrame, ShiftVector, SurfaceLayout,
};
use crate::C64;

pub const WIGNER: Schema = Schema { name: "wigner", version: 1, columns: &["delta", "codeword", "q", "p", "w"] };
pub const SQUEEZING: Schema =
    Schema { name: "squeezing", version: 1, columns: &["lattice", "delta", "codeword", "dim", "s_x_db", "s_z_db", "n_mean", "n_code"] };
pub const FIDELITY: Schema =
    Schema { name: "fidelity", version: 1, columns: &["kappa_t", "kappa_phi_t", "delta", "n_code", "f_gkp", "f_trivial"] };
pub const HOMODYNE: Schema = Schema { name: "homodyne", version: 1, columns: &["delta", "eta", "p_err"] };
pub const PHASE_EST: Schema =
    Schema { name: "phase_est", version: 1, columns: &["delta", "scheme", "rounds", "vote", "lambda", "p_err", "formula"] };
pub const PREP: Schema = Schema {
    name: "prep",
    version: 1,
    columns: &[
        "epsilon", "cycles", "delta_x_mean", "delta_z_mean", "logical_error", "bias", "trajectories", "accepted", "converged", "truncated",
    ],
};
pub const PREP_CYCLES: Schema =
    Schema { name: "prep_cycles", version: 1, columns: &["epsilon", "cycle", "s_x_mean", "s_x_se", "s_z_mean", "s_z_se"] };
pub const COMPILE: Schema = Schema {
    name: "compile",
    version: 1,
    columns: &["index", "qubits", "lines_in", "lines_out", "two_qubit", "measurements", "max_prob_diff", "exact", "counts_match"],
};
pub const SHIFT_EC: Schema = Schema {
    name: "shift_ec",
    version: 1,
    columns: &["sigma", "s_db", "trials", "p_ideal", "p_steane_x", "p_steane_z", "p_knill_x", "p_knill_z", "disagreements"],
};
pub const THRESHOLD: Schema =
    Schema { name: "threshold", version: 1, columns: &["d", "sigma", "s_db", "trials", "p_l", "ci_low", "ci_high", "decoder_mode"] };
pub const CROSSINGS: Schema = Schema { name: "crossings", version: 1, columns: &["decoder_mode", "d_small", "d_large", "sigma_cross"] };
pub const HYBRID: Schema = Schema { name: "hybrid", version: 1, columns: &["delta", "weight", "scheme", "lambda", "p_circuit", "p_law"] };

pub fn dispatch(cfg: &ExperimentConfig, sink: &mut OutputSink) -> Result<()> {
    match &cfg.params {
        Params::Wigner(p) => run_wigner(p, sink),
        Params::FidelityScan(p) => run_fidelity(p, sink),
        Params::HomodyneMisid(p) => run_homodyne(p, sink),
        Params::PhaseEst(p) => run_phase_est(p, sink),
        Params::Prep(p) => run_prep(p, cfg.seed, sink),
        Params::Compile(p) => run_compile(p, cfg.seed, sink),
        Params::ShiftEc(p) => run_shift_ec(p, cfg.seed, sink),
        Params::SurfaceThreshold(p) => run_threshold(p, cfg.seed, sink),
        Params::HybridCheck(p) => run_hybrid(p, sink),
    }
}

#[derive(Serialize)]
struct WignerRow {
    delta: f64,
    codeword: u8,
    q: f64,
    p: f64,
    w: f64,
}

#[derive(Serialize)]
struct SqueezingRow {
    lattice: String,
    delta: f64,
    codeword: u8,
    dim: usize,
    s_x_db: f64,
    s_z_db: f64,
    n_mean: f64,
    n_code: f64,
}

#[derive(Serialize)]
struct StateEntry {
    lattice: String,
    delta: f64,
    codeword: u8,
    state: crate::fock::StateRecord,
}

fn run_wigner(p: &WignerParams, sink: &mut OutputSink) -> Result<()> {
    let lat = p.lattice.build()?;
    let grid = PhaseSpaceGrid::square(p.grid_half_width, p.grid_points);
    let jobs: Vec<(f64, u8)> = p.delta.iter().flat_map(|&d| p.codewords.iter().map(move |&m| (d, m))).collect();
    let done = jobs
        .par_iter()
        .map(|&(delta, mu)| {
            let dim = match p.dim {
                Some(d) => d,
                None => suggest_dim(&lat, delta, 1e-10, 600)?,
            };
            let state = approx_codeword(&lat, ApproxParams::new(delta, mu)?, dim)?;
            let field = wigner(&state, &grid)?;
            let rep = code_report(&lat, delta, dim, &CodewordOptions::default(), Normalization::LatticeNormalized)?;
            Ok((delta, mu, dim, state, field, rep))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut sq = Vec::new();
    let mut states = Vec::new();
    for (delta, mu, dim, state, field, rep) in done {
        for i in 0..grid.nq {
            for j in 0..grid.np {
                rows.push(WignerRow { delta, codeword: mu, q: grid.q(i), p: grid.p(j), w: field.at(i, j) });
            }
        }
        sq.push(SqueezingRow {
            lattice: p.lattice.label(),
            delta,
            codeword: mu,
            dim,
            s_x_db: rep.s_x_db,
            s_z_db: rep.s_z_db,
            n_mean: state.mean_photon(),
            n_code: rep.n_code,
        });
        states.push(StateEntry { lattice: p.lattice.label(), delta, codeword: mu, state: state.to_record() });
    }
    sink.csv(&WIGNER, &rows)?;
    sink.csv(&SQUEEZING, &sq)?;
    sink.json("states.json", &states)
}

fn run_fidelity(p: &FidelityParams, sink: &mut OutputSink) -> Result<()> {
    let jobs: Vec<(NoisePoint, f64)> = p.noise.iter().flat_map(|&n| p.delta.iter().map(move |&d| (n, d))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(n, delta)| {
            let row = gkp_recovery_point(NoiseParams::new(n.kappa_t, n.kappa_phi_t)?, delta, p.dim)?;
            log::info!("kappa_t={} kappa_phi_t={} delta={delta}: F={:.6}", n.kappa_t, n.kappa_phi_t, row.f_gkp);
            Ok(row)
        })
        .collect::<Result<Vec<FidelityRow>>>()?;
    sink.csv(&FIDELITY, &rows)
}

#[derive(Serialize)]
struct HomodyneRow {
    delta: f64,
    eta: f64,
    p_err: f64,
}

fn run_homodyne(p: &HomodyneParams, sink: &mut OutputSink) -> Result<()> {
    let lat = p.lattice.build()?;
    let jobs: Vec<(f64, f64)> = p.delta.iter().flat_map(|&d| p.eta.iter().map(move |&e| (d, e))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(delta, eta)| Ok(HomodyneRow { delta, eta, p_err: misid_probability(delta, eta, &lat, Axis::Z)? }))
        .collect::<Result<Vec<_>>>()?;
    sink.csv(&HOMODYNE, &rows)
}

#[derive(Serialize)]
struct PhaseEstRow {
    delta: f64,
    scheme: &'static str,
    rounds: usize,
    vote: &'static str,
    lambda: Option<f64>,
    p_err: f64,
    /// Closed-form single-round error, when one exists.
    formula: Option<f64>,
}

fn run_phase_est(p: &PhaseEstParams, sink: &mut OutputSink) -> Result<()> {
    let lat = p.lattice.build()?;
    let vote = match p.vote {
        VoteMode::Reuse => "reuse",
        VoteMode::Fresh => "fresh",
    };
    let per_delta = p
        .delta
        .par_iter()
        .map(|&delta| {
            let dim = readout_dim(&lat, delta)?;
            let st = logical_eigenstate(&lat, delta, Axis::Z, dim, &CodewordOptions::default())?;
            let zeta = Axis::Z.gamma(&lat);
            let mut rows = Vec::new();
            for &scheme in &p.schemes {
                for &n in &p.rounds {
                    let row = match scheme {
                        SchemeChoice::Simple => {
                            let (mp, mm) = round_kraus(Scheme::Simple, zeta, C64::new(0.0, 0.0), dim);
                            PhaseEstRow {
                                delta,
                                scheme: scheme.as_str(),
                                rounds: n,
                                vote,
                                lambda: None,
                                p_err: majority_error_exact(&st, n, &mp, &mm, p.vote)?,
                                formula: (n == 1).then(|| simple_error_formula(delta)),
                            }
                        }
                        SchemeChoice::Improved => {
                            let (lam, mut p_err) = optimize_lambda(&st, &lat, Axis::Z, delta, n)?;
                            if p.vote == VoteMode::Fresh {
                                let he = improved_half_epsilon(&lat, Axis::Z, lam);
                                let (mp, mm) = round_kraus(Scheme::Improved { lambda: lam }, zeta, he, dim);
                                p_err = majority_error_exact(&st, n, &mp, &mm, VoteMode::Fresh)?;
                            }
                            PhaseEstRow {
                                delta,
                                scheme: scheme.as_str(),
                                rounds: n,
                                vote,
                                lambda: Some(lam),
                                p_err,
                                formula: (n == 1).then(|| improved_error_formula(delta, lam)),
                            }
                        }
                    };
                    rows.push(row);
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    sink.csv(&PHASE_EST, &per_delta.into_iter().flatten().collect::<Vec<_>>())
}

#[derive(Serialize)]
struct CycleRow {
    epsilon: f64,
    cycle: usize,
    s_x_mean: f64,
    s_x_se: f64,
    s_z_mean: f64,
    s_z_se: f64,
}

#[derive(Serialize)]
struct PrepFit {
    /// Least-squares slope of ln Δ against ln ε, with Δ = (Δ_X + Δ_Z)/2.
    exponent: Option<f64>,
    points: Vec<(f64, f64)>,
}

fn run_prep(p: &PrepParams, seed: u64, sink: &mut OutputSink) -> Result<()> {
    let lat = p.lattice.build()?;
    let a = p.ancilla;
    let model = AncillaModel::new(a.p_x, a.p_y, a.p_z, a.placement)?;
    let mut summaries = Vec::new();
    let mut cycles = Vec::new();
    let mut traces = Vec::new();
    let mut points = Vec::new();
    for (i, &eps) in p.epsilon.iter().enumerate() {
        let schedule = PrepSchedule::new(eps, p.cycles);
        let ens = run_ensemble(&lat, &schedule, &model, p.trajectories, point_seed(seed, 0, i))?;
        log::info!("epsilon={eps}: mean delta_x={:.4}", ens.summary.delta_x_mean);
        points.push((eps, 0.5 * (ens.summary.delta_x_mean + ens.summary.delta_z_mean)));
        cycles.extend(ens.cycle_stats.iter().map(|c| CycleRow {
            epsilon: eps,
            cycle: c.cycle,
            s_x_mean: c.s_x_mean,
            s_x_se: c.s_x_se,
            s_z_mean: c.s_z_mean,
            s_z_se: c.s_z_se,
        }));
        traces.extend(ens.records.into_iter().take(p.traces));
        summaries.push(ens.summary);
    }
    sink.csv(&PREP, &summaries)?;
    sink.csv(&PREP_CYCLES, &cycles)?;
    sink.jsonl("traces.jsonl", &traces)?;
    let exponent = (points.len() >= 2).then(|| scaling_exponent(&points));
    sink.json("fit.json", &PrepFit { exponent, points })
}

#[derive(Serialize)]
struct CompileRow {
    index: usize,
    qubits: usize,
    lines_in: usize,
    lines_out: usize,
    two_qubit: usize,
    measurements: usize,
    max_prob_diff: f64,
    exact: bool,
    counts_match: bool,
}

fn compile_row(index: usize, c: &CircuitIR) -> Result<(CompileRow, CircuitIR)> {
    let out = compile_to_frame(c)?;
    let s = soundness(c, &out)?;
    let row = CompileRow {
        index,
        qubits: c.n_qubits,
        lines_in: c.lines.len(),
        lines_out: out.lines.len(),
        two_qubit: s.two_qubit,
        measurements: s.measurements,
        max_prob_diff: s.max_prob_diff,
        exact: s.exact,
        counts_match: s.counts_match,
    };
    Ok((row, out))
}

fn run_compile(p: &CompileParams, seed: u64, sink: &mut OutputSink) -> Result<()> {
    let text = match (&p.circuit, &p.circuit_file) {
        (Some(t), _) => Some(t.clone()),
        (None, Some(f)) => Some(std::fs::read_to_string(f).map_err(|e| Error::config("params.circuit_file", format!("{}: {e}", f.display())))?),
        (None, None) => None,
    };
    let mut rows = Vec::new();
    if let Some(text) = text {
        let c = CircuitIR::parse(&text).map_err(|e| Error::config("params.circuit", e.to_string()))?;
        let (row, out) = compile_row(0, &c)?;
        rows.push(row);
        sink.text("compiled.cir", &out.to_text())?;
    }
    let offset = rows.len();
    let random = (0..p.random_circuits)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let n = 1 + k % p.max_qubits;
            let c = random_clifford_circuit(&mut rng, n, p.max_gates, k % 2 == 1);
            compile_row(offset + k, &c).map(|r| r.0)
        })
        .collect::<Result<Vec<_>>>()?;
    rows.extend(random);
    sink.csv(&COMPILE, &rows)?;
    if let Some(bad) = rows.iter().find(|r| !r.exact || !r.counts_match) {
        return Err(Error::Numerical(format!("compiled circuit {} differs from its source", bad.index)));
    }
    Ok(())
}

#[derive(Serialize)]
struct ShiftEcRow {
    sigma: f64,
    s_db: f64,
    trials: u64,
    /// Clean-ancilla rate, i.e. one ideal round.
    p_ideal: f64,
    p_steane_x: f64,
    p_steane_z: f64,
    p_knill_x: f64,
    p_knill_z: f64,
    /// Trials where the paired Knill and Steane decisions differ.
    disagreements: u64,
}

const SHIFT_BLOCK: u64 = 4096;

fn run_shift_ec(p: &ShiftEcParams, seed: u64, sink: &mut OutputSink) -> Result<()> {
    let frame = ShiftFrame::new(&crate::gkp::GkpLattice::square())?;
    let meas = Normal::new(0.0, p.measurement_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut rows = Vec::new();
    for (i, &sigma) in p.sigma.iter().enumerate() {
        let stream_seed = point_seed(seed, 1, i);
        let counts = (0..p.trials.div_ceil(SHIFT_BLOCK))
            .into_par_iter()
            .map(|b| {
                let mut c = [0u64; 5];
                for t in b * SHIFT_BLOCK..((b + 1) * SHIFT_BLOCK).min(p.trials) {
                    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
                    rng.set_stream(t);
                    let data = frame.sample(sigma, &mut rng);
                    let (aq, ap) = if p.noisy_ancillas {
                        (frame.sample(sigma, &mut rng), frame.sample(sigma, &mut rng))
                    } else {
                        (ShiftVector::default(), ShiftVector::default())
                    };
                    let noise = MeasurementNoise { q: meas.sample(&mut rng), p: meas.sample(&mut rng) };
                    let st = logical_decision(steane_ec(data, aq, ap, noise).corrected);
                    let (plus, zero, kn) = knill_pairing(aq, ap, noise);
                    let kl = logical_decision(knill_ec(data, plus, zero, kn).output);
                    c[0] += u64::from(st[0]);
                    c[1] += u64::from(st[1]);
                    c[2] += u64::from(kl[0]);
                    c[3] += u64::from(kl[1]);
                    c[4] += u64::from(st != kl);
                }
                c
            })
            .reduce(|| [0u64; 5], |a, c| std::array::from_fn(|k| a[k] + c[k]));
        let n = p.trials as f64;
        let (su, _) = frame.marginal_sigmas(sigma);
        rows.push(ShiftEcRow {
            sigma,
            s_db: GaussianNoise::new(sigma)?.squeezing_db(),
            trials: p.trials,
            p_ideal: ideal_ec_error_rate(su)?,
            p_steane_x: counts[0] as f64 / n,
            p_steane_z: counts[1] as f64 / n,
            p_knill_x: counts[2] as f64 / n,
            p_knill_z: counts[3] as f64 / n,
            disagreements: counts[4],
        });
    }
    sink.csv(&SHIFT_EC, &rows)
}

#[derive(Serialize)]
struct ThresholdRow {
    d: usize,
    sigma: f64,
    s_db: f64,
    trials: u64,
    p_l: f64,
    ci_low: f64,
    ci_high: f64,
    decoder_mode: &'static str,
}

#[derive(Serialize)]
struct CrossingRow {
    decoder_mode: &'static str,
    d_small: usize,
    d_large: usize,
    sigma_cross: f64,
}

#[derive(Serialize)]
struct ThresholdSummary {
    decoder_mode: &'static str,
    sigma_th: Option<f64>,
    s_db_th: Option<f64>,
}

fn run_threshold(p: &SurfaceParams, seed: u64, sink: &mut OutputSink) -> Result<()> {
    let lat = p.lattice.build()?;
    let mut rows = Vec::new();
    let mut crossings = Vec::new();
    let mut summary = Vec::new();
    for &mode in &p.decoders {
        let scan = threshold_scan(&p.d_list, &p.sigma, p.trials, seed, mode, &lat)?;
        debug_assert_eq!(scan.crossings, locate_crossings(&scan.rates));
        rows.extend(scan.rates.iter().map(|r| ThresholdRow {
            d: r.d,
            sigma: r.sigma,
            s_db: r.s_db,
            trials: r.trials,
            p_l: r.p_l,
            ci_low: r.ci_low,
            ci_high: r.ci_high,
            decoder_mode: mode.as_str(),
        }));
        crossings.extend(scan.crossings.iter().map(|&(a, b, s)| CrossingRow { decoder_mode: mode.as_str(), d_small: a, d_large: b, sigma_cross: s }));
        summary.push(ThresholdSummary {
            decoder_mode: mode.as_str(),
            sigma_th: scan.sigma_th,
            s_db_th: scan.sigma_th.map(|s| -10.0 * (2.0 * s * s).log10()),
        });
    }
    sink.csv(&THRESHOLD, &rows)?;
    sink.csv(&CROSSINGS, &crossings)?;
    sink.json("summary.json", &summary)?;
    if p.dump_samples > 0 {
        let mut samples = Vec::new();
        for &d in &p.d_list {
            let layout = SurfaceLayout::rotated(d)?;
            for (i, &s) in p.sigma.iter().enumerate() {
                let noise = GaussianNoise::new(s)?;
                let ps = point_seed(seed, d, i);
                for t in 0..p.dump_samples.min(p.trials) {
                    samples.push(sample_code_capacity(&layout, noise, &lat, ps, t)?);
                }
            }
        }
        sink.jsonl("samples.jsonl", &samples)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct HybridRow {
    delta: f64,
    weight: usize,
    scheme: &'static str,
    lambda: Option<f64>,
    p_circuit: f64,
    /// Small-Δ law for the weight-4 check.
    p_law: f64,
}

fn run_hybrid(p: &HybridParams, sink: &mut OutputSink) -> Result<()> {
    let lat = p.lattice.build()?;
    let jobs: Vec<(f64, usize, SchemeChoice)> = p
        .delta
        .iter()
        .flat_map(|&d| p.weights.iter().flat_map(move |&w| p.schemes.iter().map(move |&s| (d, w, s))))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(delta, weight, scheme)| {
            let dim = readout_dim(&lat, delta)?;
            let (lambda, p_circuit, law) = match scheme {
                SchemeChoice::Simple => (None, hybrid_check_circuit(&lat, delta, weight, Scheme::Simple, dim)?, CheckScheme::Simple),
                SchemeChoice::Improved => {
                    let (l, pe) = optimal_hybrid_check(&lat, delta, weight, dim)?;
                    (Some(l), pe, CheckScheme::Improved)
                }
            };
            Ok(HybridRow { delta, weight, scheme: scheme.as_str(), lambda, p_circuit, p_law: hybrid_check_error(delta, law)? })
        })
        .collect::<Result<Vec<_>>>()?;
    sink.csv(&HYBRID, &rows)
}
