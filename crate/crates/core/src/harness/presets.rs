//! Named experiment presets.

use std::path::PathBuf;

use super::config::*;

#[derive(Clone, Debug)]
pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    pub config: ExperimentConfig,
}

pub const DEFAULT_SEED: u64 = 2024;

fn preset(name: &'static str, description: &'static str, params: Params) -> Preset {
    let mut config = ExperimentConfig::new(params, DEFAULT_SEED);
    config.output.dir = PathBuf::from("out").join(name);
    Preset { name, description, config }
}

/// Every preset, in display order.
pub fn catalog() -> Vec<Preset> {
    vec![
        preset("wigner-codewords", "Wigner functions of the square Δ = 0.3 codewords", Params::Wigner(WignerParams::default())),
        preset(
            "recovery-fidelity",
            "See-saw recovery fidelity vs n_code under loss or dephasing, against the Fock encoding",
            Params::FidelityScan(FidelityParams::default()),
        ),
        preset("homodyne-misid", "Homodyne misidentification probability over (Δ, η)", Params::HomodyneMisid(HomodyneParams::default())),
        preset(
            "phase-est-readout",
            "Phase-estimation readout error, simple and ε-assisted, with majority voting",
            Params::PhaseEst(PhaseEstParams { delta: vec![0.2, 0.25, 0.3, 0.35, 0.4], ..Default::default() }),
        ),
        preset("shift-ec-rounds", "Steane and Knill rounds in the shift model vs Gaussian σ", Params::ShiftEc(ShiftEcParams::default())),
        preset(
            "surface-threshold",
            "Code-capacity threshold of the GKP surface code, analog and binary MWPM",
            Params::SurfaceThreshold(SurfaceParams::default()),
        ),
        preset(
            "prep-scaling",
            "Sharpen/Trim preparation: final Δ vs ε",
            Params::Prep(PrepParams { trajectories: 500, ..Default::default() }),
        ),
        preset("hybrid-check", "Qubit-read parity checks of weight 1 and 4", Params::HybridCheck(HybridParams::default())),
        preset(
            "compile-random",
            "Clifford-frame compilation checked on random circuits",
            Params::Compile(CompileParams { random_circuits: 200, max_qubits: 4, max_gates: 12, ..Default::default() }),
        ),
    ]
}

pub fn find(name: &str) -> Option<Preset> {
    catalog().into_iter().find(|p| p.name == name)
}
