//! Qubit-level circuit representation and its line-oriented text format.
//!
//! The grammar is documented in `docs/circuit_ir.md`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use super::{CliffordFrame, Pauli, SignedPauli};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Instr {
    Prep0(usize),
    /// `|A⟩ = (|0⟩ + e^{iπ/4}|1⟩)/√2`.
    PrepA(usize),
    H(usize),
    S(usize),
    Pauli(Pauli, usize),
    /// `C_{σσ'} = I − ½(I − σ)⊗(I − σ')`; `CX` is `Cp { Z, X }`.
    Cp { control: Pauli, target: Pauli, a: usize, b: usize },
    Measure { basis: SignedPauli, qubit: usize, id: String },
}

impl Instr {
    pub fn cx(control: usize, target: usize) -> Self {
        Instr::Cp { control: Pauli::Z, target: Pauli::X, a: control, b: target }
    }

    pub fn measure_z(qubit: usize, id: impl Into<String>) -> Self {
        Instr::Measure { basis: SignedPauli::plus(Pauli::Z), qubit, id: id.into() }
    }

    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Instr::Prep0(q) | Instr::PrepA(q) | Instr::H(q) | Instr::S(q) | Instr::Pauli(_, q) => vec![*q],
            Instr::Cp { a, b, .. } => vec![*a, *b],
            Instr::Measure { qubit, .. } => vec![*qubit],
        }
    }

    pub fn is_two_qubit(&self) -> bool {
        matches!(self, Instr::Cp { .. })
    }

    pub fn is_measurement(&self) -> bool {
        matches!(self, Instr::Measure { .. })
    }

    fn is_prep(&self) -> bool {
        matches!(self, Instr::Prep0(_) | Instr::PrepA(_))
    }
}

impl fmt::Display for Instr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instr::Prep0(q) => write!(f, "PREP0 {q}"),
            Instr::PrepA(q) => write!(f, "PREPA {q}"),
            Instr::H(q) => write!(f, "H {q}"),
            Instr::S(q) => write!(f, "S {q}"),
            Instr::Pauli(p, q) => write!(f, "{} {q}", p.symbol()),
            Instr::Cp { control: Pauli::Z, target: Pauli::X, a, b } => write!(f, "CX {a} {b}"),
            Instr::Cp { control, target, a, b } => write!(f, "C_{}{} {a} {b}", control.symbol(), target.symbol()),
            Instr::Measure { basis, qubit, id } => {
                let sign = if basis.negative { "-" } else { "" };
                write!(f, "M {sign}{} {qubit} -> {id}", basis.pauli.symbol())
            }
        }
    }
}

/// Conjunction of `(measurement id, bit)` requirements; empty means always.
/// Bit 0 is the `+1` eigenvalue.
pub type Cond = Vec<(String, u8)>;

#[derive(Clone, Debug, PartialEq)]
pub struct Line {
    pub instr: Instr,
    pub cond: Cond,
    /// Source line, 0 when built in code.
    pub source_line: usize,
}

/// Tracked frame of one qubit at the end of the circuit.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameNote {
    pub qubit: usize,
    pub frame: CliffordFrame,
    pub cond: Cond,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct CircuitIR {
    pub n_qubits: usize,
    pub lines: Vec<Line>,
    pub frames: Vec<FrameNote>,
}

pub(crate) fn cond_holds(cond: &Cond, record: &BTreeMap<String, u8>) -> bool {
    cond.iter().all(|(id, bit)| record.get(id) == Some(bit))
}

fn fmt_cond(cond: &Cond) -> String {
    if cond.is_empty() {
        return String::new();
    }
    let parts: Vec<String> = cond.iter().map(|(id, b)| format!("{id}:{b}")).collect();
    format!(" ; cond={}", parts.join(","))
}

impl CircuitIR {
    pub fn new(n_qubits: usize) -> Self {
        Self { n_qubits, ..Self::default() }
    }

    pub fn push(&mut self, instr: Instr) -> &mut Self {
        self.lines.push(Line { instr, cond: Vec::new(), source_line: 0 });
        self
    }

    pub fn push_if(&mut self, instr: Instr, cond: Cond) -> &mut Self {
        self.lines.push(Line { instr, cond, source_line: 0 });
        self
    }

    /// Human-facing location of instruction `i`.
    pub fn location(&self, i: usize) -> usize {
        match self.lines[i].source_line {
            0 => i + 1,
            l => l,
        }
    }

    fn err(&self, i: usize, message: impl Into<String>) -> Error {
        Error::Parse { line: self.location(i), message: message.into() }
    }

    /// Distinct measurement ids in first-appearance order.
    pub fn measurement_ids(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for l in &self.lines {
            if let Instr::Measure { id, .. } = &l.instr {
                if !out.contains(id) {
                    out.push(id.clone());
                }
            }
        }
        out
    }

    /// Instructions that run for a given outcome record.
    pub fn executed<'a>(&'a self, record: &'a BTreeMap<String, u8>) -> impl Iterator<Item = &'a Instr> + 'a {
        self.lines.iter().filter(move |l| cond_holds(&l.cond, record)).map(|l| &l.instr)
    }

    /// Checks targets, condition references and measured-qubit reuse.
    pub fn validate(&self) -> Result<()> {
        if self.n_qubits == 0 {
            return Err(Error::Parse { line: 0, message: "circuit needs at least one qubit".into() });
        }
        let mut measured: Vec<Option<String>> = vec![None; self.n_qubits];
        let mut ids: HashMap<String, usize> = HashMap::new();
        for (i, line) in self.lines.iter().enumerate() {
            for (id, bit) in &line.cond {
                if !ids.contains_key(id) {
                    return Err(self.err(i, format!("condition on unknown or later measurement `{id}`")));
                }
                if *bit > 1 {
                    return Err(self.err(i, format!("condition bit must be 0 or 1, got {bit}")));
                }
            }
            let qs = line.instr.qubits();
            for &q in &qs {
                if q >= self.n_qubits {
                    return Err(self.err(i, format!("qubit {q} out of range (QUBITS {})", self.n_qubits)));
                }
            }
            if qs.len() == 2 && qs[0] == qs[1] {
                return Err(self.err(i, "two-qubit gate needs distinct qubits"));
            }
            match &line.instr {
                Instr::Measure { qubit, id, .. } => {
                    match (&measured[*qubit], ids.get(id)) {
                        (Some(prev), _) if !(prev == id && !line.cond.is_empty()) => {
                            return Err(self.err(i, format!("qubit {qubit} measured again without re-preparation")));
                        }
                        (None, Some(_)) => {
                            return Err(self.err(i, format!("measurement id `{id}` reused")));
                        }
                        (_, Some(&q)) if q != *qubit => {
                            return Err(self.err(i, format!("measurement id `{id}` reused on another qubit")));
                        }
                        _ => {}
                    }
                    ids.insert(id.clone(), *qubit);
                    measured[*qubit] = Some(id.clone());
                }
                instr if instr.is_prep() => measured[qs[0]] = None,
                _ => {
                    for &q in &qs {
                        if measured[q].is_some() {
                            return Err(self.err(i, format!("qubit {q} used after measurement without re-preparation")));
                        }
                    }
                }
            }
        }
        for n in &self.frames {
            if n.qubit >= self.n_qubits {
                return Err(Error::Parse { line: 0, message: format!("frame note for qubit {} out of range", n.qubit) });
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("QUBITS {}\n", self.n_qubits);
        for l in &self.lines {
            s.push_str(&format!("{}{}\n", l.instr, fmt_cond(&l.cond)));
        }
        for n in &self.frames {
            s.push_str(&format!("FRAME {} {}{}\n", n.qubit, n.frame, fmt_cond(&n.cond)));
        }
        s
    }

    /// Parses and validates the text format.
    pub fn parse(text: &str) -> Result<Self> {
        let mut circ: Option<CircuitIR> = None;
        for (k, raw) in text.lines().enumerate() {
            let line_no = k + 1;
            let perr = |m: String| Error::Parse { line: line_no, message: m };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (stmt, cond) = match body.split_once(';') {
                Some((a, b)) => (a.trim(), parse_cond(b.trim()).map_err(perr)?),
                None => (body, Vec::new()),
            };
            let toks: Vec<&str> = stmt.split_whitespace().collect();
            let op = toks[0];
            if op == "QUBITS" {
                if circ.is_some() {
                    return Err(perr("QUBITS declared twice".into()));
                }
                let n = toks.get(1).and_then(|t| t.parse().ok()).filter(|_| toks.len() == 2);
                circ = Some(CircuitIR::new(n.ok_or_else(|| perr("expected `QUBITS <n>`".into()))?));
                continue;
            }
            let c = circ.as_mut().ok_or_else(|| perr("first statement must be `QUBITS <n>`".into()))?;
            if op == "FRAME" {
                c.frames.push(parse_frame(&toks, cond).map_err(perr)?);
                continue;
            }
            let instr = parse_instr(&toks).map_err(perr)?;
            c.lines.push(Line { instr, cond, source_line: line_no });
        }
        let c = circ.ok_or(Error::Parse { line: 0, message: "missing `QUBITS <n>` header".into() })?;
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for CircuitIR {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CircuitIR::parse(s)
    }
}

impl fmt::Display for CircuitIR {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

fn qubit(tok: Option<&&str>) -> std::result::Result<usize, String> {
    let t = tok.ok_or("missing qubit index")?;
    t.parse().map_err(|_| format!("bad qubit index `{t}`"))
}

fn arity(toks: &[&str], n: usize) -> std::result::Result<(), String> {
    if toks.len() != n + 1 {
        return Err(format!("`{}` takes {n} operand(s)", toks[0]));
    }
    Ok(())
}

fn parse_instr(toks: &[&str]) -> std::result::Result<Instr, String> {
    let op = toks[0];
    let one = |f: fn(usize) -> Instr| -> std::result::Result<Instr, String> {
        arity(toks, 1)?;
        Ok(f(qubit(toks.get(1))?))
    };
    match op {
        "PREP0" => one(Instr::Prep0),
        "PREPA" => one(Instr::PrepA),
        "H" => one(Instr::H),
        "S" => one(Instr::S),
        "X" | "Y" | "Z" => {
            arity(toks, 1)?;
            Ok(Instr::Pauli(op.parse().map_err(|e: Error| e.to_string())?, qubit(toks.get(1))?))
        }
        "CX" => {
            arity(toks, 2)?;
            Ok(Instr::cx(qubit(toks.get(1))?, qubit(toks.get(2))?))
        }
        "M" => {
            if toks.len() != 5 || toks[3] != "->" {
                return Err("expected `M <basis> <qubit> -> <id>`".into());
            }
            let basis: SignedPauli = toks[1].parse().map_err(|e: Error| e.to_string())?;
            let id = toks[4];
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(format!("bad measurement id `{id}`"));
            }
            Ok(Instr::Measure { basis, qubit: qubit(toks.get(2))?, id: id.to_string() })
        }
        _ if op.len() == 4 && op.starts_with("C_") => {
            arity(toks, 2)?;
            let control = op[2..3].parse().map_err(|e: Error| e.to_string())?;
            let target = op[3..4].parse().map_err(|e: Error| e.to_string())?;
            Ok(Instr::Cp { control, target, a: qubit(toks.get(1))?, b: qubit(toks.get(2))? })
        }
        _ => Err(format!("unknown instruction `{op}`")),
    }
}

fn parse_cond(s: &str) -> std::result::Result<Cond, String> {
    let rest = s.strip_prefix("cond=").ok_or_else(|| format!("expected `cond=...`, got `{s}`"))?;
    rest.split(',')
        .map(|term| {
            let (id, bit) = term.trim().split_once(':').ok_or_else(|| format!("bad condition term `{term}`"))?;
            let bit: u8 = bit.trim().parse().map_err(|_| format!("bad condition bit in `{term}`"))?;
            Ok((id.trim().to_string(), bit))
        })
        .collect()
}

fn parse_frame(toks: &[&str], cond: Cond) -> std::result::Result<FrameNote, String> {
    arity(toks, 3)?;
    let q = qubit(toks.get(1))?;
    let img = |t: &str, key: &str| -> std::result::Result<SignedPauli, String> {
        let v = t.strip_prefix(key).ok_or_else(|| format!("expected `{key}<±P>`"))?;
        v.parse().map_err(|e: Error| e.to_string())
    };
    let frame = CliffordFrame::new(img(toks[2], "X=")?, img(toks[3], "Z=")?).map_err(|e| e.to_string())?;
    Ok(FrameNote { qubit: q, frame, cond })
}
