//! Clifford-frame compilation.
//!
//! Convention: the ideal state is `F φ` where `φ` is the physical state and
//! `F = ⊗ F_q` the tracked frame. A `CX` on the ideal state becomes
//! `C_{σσ'}` on the physical one with `±σ = F_c⁻¹(Z)` and `±σ' = F_t⁻¹(X)`.
//! A minus sign on the control side leaves a `σ'` byproduct on the target and
//! vice versa; byproducts are commuted into the frame, never emitted.
//!
//! Classical control is handled by compiling once per assignment of the
//! measurements that conditions refer to, then merging the branches. Lines
//! that differ between branches are emitted once per variant with a
//! condition built from a disjoint cover of the branches that select it.

use std::collections::BTreeMap;

use super::circuit::{CircuitIR, Cond, FrameNote, Instr, Line};
use super::{CliffordFrame, Pauli, SignedPauli};
use crate::error::{Error, Result};

/// Branching is exponential in the number of condition-referenced outcomes.
pub const MAX_CONTROL_BITS: usize = 12;

struct Branch {
    out: Vec<Option<Instr>>,
    frames: Vec<CliffordFrame>,
}

fn compile_branch(c: &CircuitIR, record: &BTreeMap<String, u8>) -> Branch {
    let mut frames = vec![CliffordFrame::IDENTITY; c.n_qubits];
    let mut out = Vec::with_capacity(c.lines.len());
    for line in &c.lines {
        if !line.cond.iter().all(|(id, b)| record.get(id) == Some(b)) {
            out.push(None);
            continue;
        }
        let emitted = match &line.instr {
            Instr::Prep0(q) | Instr::PrepA(q) => {
                frames[*q] = CliffordFrame::IDENTITY;
                Some(line.instr.clone())
            }
            Instr::H(q) => {
                frames[*q] = CliffordFrame::hadamard().compose(&frames[*q]);
                None
            }
            Instr::S(q) => {
                frames[*q] = CliffordFrame::phase().compose(&frames[*q]);
                None
            }
            Instr::Pauli(p, q) => {
                frames[*q] = CliffordFrame::pauli(*p).compose(&frames[*q]);
                None
            }
            Instr::Cp { a, b, .. } => {
                let sc = frames[*a].inverse().apply(SignedPauli::plus(Pauli::Z));
                let st = frames[*b].inverse().apply(SignedPauli::plus(Pauli::X));
                if sc.negative {
                    frames[*b] = frames[*b].compose(&CliffordFrame::pauli(st.pauli));
                }
                if st.negative {
                    frames[*a] = frames[*a].compose(&CliffordFrame::pauli(sc.pauli));
                }
                Some(Instr::Cp { control: sc.pauli, target: st.pauli, a: *a, b: *b })
            }
            Instr::Measure { qubit, id, .. } => {
                let basis = frames[*qubit].inverse().apply(SignedPauli::plus(Pauli::Z));
                Some(Instr::Measure { basis, qubit: *qubit, id: id.clone() })
            }
        };
        out.push(emitted);
    }
    Branch { out, frames }
}

/// Disjoint cubes over `vars` whose union is exactly `members`.
fn cover(members: &[bool], vars: &[usize], fixed: &mut Vec<(usize, u8)>, out: &mut Vec<Vec<(usize, u8)>>) {
    let consistent = |a: usize| fixed.iter().all(|&(v, b)| ((a >> v) & 1) as u8 == b);
    let (mut any, mut all) = (false, true);
    for (a, &m) in members.iter().enumerate() {
        if consistent(a) {
            any |= m;
            all &= m;
        }
    }
    if !any {
        return;
    }
    if all {
        out.push(fixed.clone());
        return;
    }
    let (&v, rest) = vars.split_first().expect("branch variant depends only on earlier outcomes");
    for b in [0u8, 1] {
        fixed.push((v, b));
        cover(members, rest, fixed, out);
        fixed.pop();
    }
}

fn conds_for(members: &[bool], vars: &[usize], names: &[String]) -> Vec<Cond> {
    let mut cubes = Vec::new();
    cover(members, vars, &mut Vec::new(), &mut cubes);
    cubes.into_iter().map(|cube| cube.into_iter().map(|(v, b)| (names[v].clone(), b)).collect()).collect()
}

fn check_supported(c: &CircuitIR) -> Result<()> {
    for (i, line) in c.lines.iter().enumerate() {
        let ok = match &line.instr {
            Instr::Cp { control, target, .. } => *control == Pauli::Z && *target == Pauli::X,
            Instr::Measure { basis, .. } => *basis == SignedPauli::plus(Pauli::Z),
            _ => true,
        };
        if !ok {
            return Err(Error::Parse {
                line: c.location(i),
                message: format!("`{}` is not accepted by the frame compiler (use CX and M Z)", line.instr),
            });
        }
    }
    Ok(())
}

/// Rewrites a circuit over `{PREP0, PREPA, H, S, Pauli, CX, M Z}` into one
/// over `{PREP0, PREPA, C_{σσ'}, M ±P}` with the final frames as metadata.
pub fn compile_to_frame(c: &CircuitIR) -> Result<CircuitIR> {
    c.validate()?;
    check_supported(c)?;
    let mut names: Vec<String> = Vec::new();
    let mut first_line: Vec<usize> = Vec::new();
    for id in c.measurement_ids() {
        if c.lines.iter().any(|l| l.cond.iter().any(|(r, _)| *r == id)) {
            let pos = c.lines.iter().position(|l| matches!(&l.instr, Instr::Measure { id: m, .. } if *m == id));
            first_line.push(pos.expect("referenced id is measured"));
            names.push(id);
        }
    }
    if names.len() > MAX_CONTROL_BITS {
        return Err(Error::invalid(format!(
            "{} condition-referenced measurements exceed the compiler limit of {MAX_CONTROL_BITS}",
            names.len()
        )));
    }
    let n_assign = 1usize << names.len();
    let branches: Vec<Branch> = (0..n_assign)
        .map(|a| {
            let record = names.iter().enumerate().map(|(v, id)| (id.clone(), ((a >> v) & 1) as u8)).collect();
            compile_branch(c, &record)
        })
        .collect();

    let mut out = CircuitIR::new(c.n_qubits);
    for (i, src) in c.lines.iter().enumerate() {
        let earlier: Vec<usize> = (0..names.len()).filter(|&v| first_line[v] < i).collect();
        let mut variants: Vec<(Option<Instr>, Vec<bool>)> = Vec::new();
        for (a, br) in branches.iter().enumerate() {
            let v = &br.out[i];
            match variants.iter_mut().find(|(x, _)| x == v) {
                Some((_, m)) => m[a] = true,
                None => {
                    let mut m = vec![false; n_assign];
                    m[a] = true;
                    variants.push((v.clone(), m));
                }
            }
        }
        for (instr, members) in variants {
            let Some(instr) = instr else { continue };
            for cond in conds_for(&members, &earlier, &names) {
                out.lines.push(Line { instr: instr.clone(), cond, source_line: src.source_line });
            }
        }
    }
    let all_vars: Vec<usize> = (0..names.len()).collect();
    for q in 0..c.n_qubits {
        let mut groups: Vec<(CliffordFrame, Vec<bool>)> = Vec::new();
        for (a, br) in branches.iter().enumerate() {
            let f = br.frames[q];
            match groups.iter_mut().find(|(g, _)| *g == f) {
                Some((_, m)) => m[a] = true,
                None => {
                    let mut m = vec![false; n_assign];
                    m[a] = true;
                    groups.push((f, m));
                }
            }
        }
        for (frame, members) in groups {
            for cond in conds_for(&members, &all_vars, &names) {
                out.frames.push(FrameNote { qubit: q, frame, cond });
            }
        }
    }
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(c: &CircuitIR) -> String {
        c.lines.iter().map(|l| format!("{}{:?}\n", l.instr, l.cond)).collect()
    }

    #[test]
    fn hadamard_on_control_becomes_xx() {
        let c = CircuitIR::parse("QUBITS 2\nH 0\nCX 0 1\nM Z 0 -> m0\n").unwrap();
        let out = compile_to_frame(&c).unwrap();
        let text: Vec<String> = out.lines.iter().map(|l| l.instr.to_string()).collect();
        assert_eq!(text, vec!["C_XX 0 1", "M X 0 -> m0"]);
        assert_eq!(out.frames[0].frame, CliffordFrame::hadamard());
        assert!(out.frames[1].frame.is_identity());
    }

    #[test]
    fn circuits_without_single_qubit_gates_are_fixed_points() {
        let c = CircuitIR::parse("QUBITS 3\nPREP0 0\nPREPA 1\nCX 0 1\nCX 1 2\nM Z 0 -> a\nM Z 2 -> b\n").unwrap();
        let out = compile_to_frame(&c).unwrap();
        assert_eq!(strip(&out), strip(&c));
        assert!(out.frames.iter().all(|f| f.frame.is_identity() && f.cond.is_empty()));
    }

    #[test]
    fn gadget_branches_on_its_outcome() {
        let c = CircuitIR::parse("QUBITS 2\nPREPA 1\nCX 0 1\nM Z 1 -> m0\nS 0 ; cond=m0:1\nH 0\nM Z 0 -> out\n").unwrap();
        let out = compile_to_frame(&c).unwrap();
        let finals: Vec<&Line> = out.lines.iter().filter(|l| matches!(&l.instr, Instr::Measure { id, .. } if id == "out")).collect();
        assert_eq!(finals.len(), 2);
        assert_eq!(finals[0].cond, vec![("m0".to_string(), 0)]);
        assert_eq!(finals[1].cond, vec![("m0".to_string(), 1)]);
        assert_eq!(finals[0].instr.to_string(), "M X 0 -> out");
        assert_eq!(finals[1].instr.to_string(), "M -Y 0 -> out");
        assert!(compile_to_frame(&out).is_err(), "compiled output uses general bases");
    }

    #[test]
    fn rejects_unsupported_input_with_location() {
        let c = CircuitIR::parse("QUBITS 2\nH 0\nC_XX 0 1\n").unwrap();
        match compile_to_frame(&c) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let m = CircuitIR::parse("QUBITS 1\nM X 0 -> a\n").unwrap();
        assert!(matches!(compile_to_frame(&m), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn negative_frames_move_byproducts_into_the_frame() {
        // X on the control flips the sign of its Z image; the byproduct X lands on the target frame.
        let c = CircuitIR::parse("QUBITS 2\nX 0\nCX 0 1\n").unwrap();
        let out = compile_to_frame(&c).unwrap();
        assert_eq!(out.lines[0].instr, Instr::cx(0, 1));
        assert_eq!(out.frames[1].frame, CliffordFrame::pauli(Pauli::X));
        assert_eq!(out.frames[0].frame, CliffordFrame::pauli(Pauli::X));
    }
}
