//! Compile a circuit with classically controlled Paulis into frame updates
//! and check that the output distribution is unchanged.

use gkp_core::clifford::{compile_to_frame, soundness, CircuitIR};

const CIRCUIT: &str = "\
QUBITS 2
PREP0 0
PREP0 1
H 0
CX 0 1
M Z 1 -> m0
X 0 ; cond=m0:1
H 0
S 0
M Z 0 -> m1
";

fn main() -> gkp_core::Result<()> {
    let c = CircuitIR::parse(CIRCUIT)?;
    let out = compile_to_frame(&c)?;
    print!("compiled:\n{}", out.to_text());
    let s = soundness(&c, &out)?;
    println!("exact {}  max |Δp| {:.1e}  two-qubit gates {}  measurements {}", s.exact, s.max_prob_diff, s.two_qubit, s.measurements);
    Ok(())
}
