//! Exact discrete-qubit references for circuit equivalence.
//!
//! Both simulators enumerate every measurement branch and return the full
//! outcome distribution. The tableau backend is exact for stabilizer
//! circuits: its branch probabilities are powers of two, so two
//! distributions can be compared with `==`. Circuits containing `PREPA`
//! need the state-vector backend.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use super::circuit::{cond_holds, CircuitIR, Instr};
use super::{CliffordFrame, Gate1, Pauli, SignedPauli};
use crate::error::{Error, Result};
use crate::C64;

/// Outcome record (sorted by id) to probability.
pub type Distribution = BTreeMap<Vec<(String, u8)>, f64>;

/// State-vector size limit for enumeration.
pub const MAX_STATEVECTOR_QUBITS: usize = 12;

trait Backend: Clone + Sized {
    fn gate1(&mut self, g: Gate1, q: usize);
    fn pauli(&mut self, p: Pauli, q: usize);
    fn cx(&mut self, c: usize, t: usize);
    /// Branches `(bit, probability, post-state)` of a `Z` measurement.
    fn measure_z(&self, q: usize) -> Vec<(u8, f64, Self)>;
    fn prep_a(&mut self, q: usize) -> Result<()>;

    fn frame(&mut self, f: &CliffordFrame, q: usize) {
        for g in f.word() {
            self.gate1(g, q);
        }
    }

    /// `C_{σσ'} = (U_c ⊗ U_t)† CX (U_c ⊗ U_t)` with `U_c σ U_c† = Z`, `U_t σ' U_t† = X`.
    fn cp(&mut self, sc: Pauli, st: Pauli, a: usize, b: usize) {
        let uc = CliffordFrame::mapping(SignedPauli::plus(sc), SignedPauli::plus(Pauli::Z));
        let ut = CliffordFrame::mapping(SignedPauli::plus(st), SignedPauli::plus(Pauli::X));
        self.frame(&uc, a);
        self.frame(&ut, b);
        self.cx(a, b);
        self.frame(&uc.inverse(), a);
        self.frame(&ut.inverse(), b);
    }

    fn measure(&self, basis: SignedPauli, q: usize) -> Vec<(u8, f64, Self)> {
        let v = CliffordFrame::mapping(basis, SignedPauli::plus(Pauli::Z));
        let mut rot = self.clone();
        rot.frame(&v, q);
        let back = v.inverse();
        rot.measure_z(q)
            .into_iter()
            .map(|(b, p, mut s)| {
                s.frame(&back, q);
                (b, p, s)
            })
            .collect()
    }

    fn reset(&self, q: usize) -> Vec<(f64, Self)> {
        self.measure_z(q)
            .into_iter()
            .map(|(b, p, mut s)| {
                if b == 1 {
                    s.pauli(Pauli::X, q);
                }
                (p, s)
            })
            .collect()
    }
}

fn enumerate<B: Backend>(
    c: &CircuitIR,
    start: usize,
    mut state: B,
    record: &mut BTreeMap<String, u8>,
    prob: f64,
    out: &mut Distribution,
) -> Result<()> {
    for i in start..c.lines.len() {
        let line = &c.lines[i];
        if !cond_holds(&line.cond, record) {
            continue;
        }
        match &line.instr {
            Instr::H(q) => state.gate1(Gate1::H, *q),
            Instr::S(q) => state.gate1(Gate1::S, *q),
            Instr::Pauli(p, q) => state.pauli(*p, *q),
            Instr::Cp { control, target, a, b } => state.cp(*control, *target, *a, *b),
            Instr::Prep0(q) | Instr::PrepA(q) => {
                let magic = matches!(line.instr, Instr::PrepA(_));
                for (p, mut s) in state.reset(*q) {
                    if magic {
                        s.prep_a(*q)?;
                    }
                    enumerate(c, i + 1, s, record, prob * p, out)?;
                }
                return Ok(());
            }
            Instr::Measure { basis, qubit, id } => {
                for (bit, p, s) in state.measure(*basis, *qubit) {
                    let prev = record.insert(id.clone(), bit);
                    enumerate(c, i + 1, s, record, prob * p, out)?;
                    match prev {
                        Some(b) => record.insert(id.clone(), b),
                        None => record.remove(id),
                    };
                }
                return Ok(());
            }
        }
    }
    let key: Vec<(String, u8)> = record.iter().map(|(k, v)| (k.clone(), *v)).collect();
    *out.entry(key).or_insert(0.0) += prob;
    Ok(())
}

/// CHP stabilizer tableau over at most 64 qubits.
#[derive(Clone, Debug)]
struct Tableau {
    n: usize,
    x: Vec<u64>,
    z: Vec<u64>,
    r: Vec<bool>,
}

impl Tableau {
    fn new(n: usize) -> Self {
        let rows = 2 * n + 1;
        let (mut x, mut z) = (vec![0u64; rows], vec![0u64; rows]);
        for i in 0..n {
            x[i] = 1 << i;
            z[i + n] = 1 << i;
        }
        Self { n, x, z, r: vec![false; rows] }
    }

    fn g(x1: bool, z1: bool, x2: bool, z2: bool) -> i32 {
        match (x1, z1) {
            (false, false) => 0,
            (true, true) => z2 as i32 - x2 as i32,
            (true, false) => z2 as i32 * (2 * x2 as i32 - 1),
            (false, true) => x2 as i32 * (1 - 2 * z2 as i32),
        }
    }

    fn rowsum(&mut self, h: usize, i: usize) {
        let mut sum = 2 * self.r[h] as i32 + 2 * self.r[i] as i32;
        for j in 0..self.n {
            let bit = |v: u64| (v >> j) & 1 == 1;
            sum += Self::g(bit(self.x[i]), bit(self.z[i]), bit(self.x[h]), bit(self.z[h]));
        }
        self.r[h] = sum.rem_euclid(4) == 2;
        self.x[h] ^= self.x[i];
        self.z[h] ^= self.z[i];
    }

    fn measure_forced(&mut self, a: usize, forced: bool) -> bool {
        let n = self.n;
        let m = 1u64 << a;
        if let Some(p) = (n..2 * n).find(|&p| self.x[p] & m != 0) {
            for i in 0..2 * n {
                if i != p && self.x[i] & m != 0 {
                    self.rowsum(i, p);
                }
            }
            self.x[p - n] = self.x[p];
            self.z[p - n] = self.z[p];
            self.r[p - n] = self.r[p];
            self.x[p] = 0;
            self.z[p] = m;
            self.r[p] = forced;
            forced
        } else {
            let s = 2 * n;
            self.x[s] = 0;
            self.z[s] = 0;
            self.r[s] = false;
            for i in 0..n {
                if self.x[i] & m != 0 {
                    self.rowsum(s, i + n);
                }
            }
            self.r[s]
        }
    }

    fn is_random(&self, a: usize) -> bool {
        (self.n..2 * self.n).any(|p| self.x[p] & (1 << a) != 0)
    }
}

impl Backend for Tableau {
    fn gate1(&mut self, g: Gate1, q: usize) {
        let m = 1u64 << q;
        for i in 0..2 * self.n {
            let (xa, za) = (self.x[i] & m != 0, self.z[i] & m != 0);
            self.r[i] ^= xa && za;
            match g {
                Gate1::H => {
                    self.x[i] = (self.x[i] & !m) | if za { m } else { 0 };
                    self.z[i] = (self.z[i] & !m) | if xa { m } else { 0 };
                }
                Gate1::S => {
                    if xa {
                        self.z[i] ^= m;
                    }
                }
            }
        }
    }

    fn pauli(&mut self, p: Pauli, q: usize) {
        let m = 1u64 << q;
        for i in 0..2 * self.n {
            let (xa, za) = (self.x[i] & m != 0, self.z[i] & m != 0);
            self.r[i] ^= match p {
                Pauli::X => za,
                Pauli::Z => xa,
                Pauli::Y => xa ^ za,
            };
        }
    }

    fn cx(&mut self, c: usize, t: usize) {
        let (mc, mt) = (1u64 << c, 1u64 << t);
        for i in 0..2 * self.n {
            let (xc, zc, xt, zt) = (self.x[i] & mc != 0, self.z[i] & mc != 0, self.x[i] & mt != 0, self.z[i] & mt != 0);
            self.r[i] ^= xc && zt && !(xt ^ zc);
            if xc {
                self.x[i] ^= mt;
            }
            if zt {
                self.z[i] ^= mc;
            }
        }
    }

    fn measure_z(&self, q: usize) -> Vec<(u8, f64, Self)> {
        if self.is_random(q) {
            [false, true]
                .into_iter()
                .map(|f| {
                    let mut s = self.clone();
                    s.measure_forced(q, f);
                    (f as u8, 0.5, s)
                })
                .collect()
        } else {
            let mut s = self.clone();
            let b = s.measure_forced(q, false);
            vec![(b as u8, 1.0, s)]
        }
    }

    fn prep_a(&mut self, _q: usize) -> Result<()> {
        Err(Error::invalid("PREPA needs the state-vector backend"))
    }
}

#[derive(Clone, Debug)]
struct StateVector {
    amps: Vec<C64>,
}

impl StateVector {
    fn new(n: usize) -> Self {
        let mut amps = vec![C64::new(0.0, 0.0); 1 << n];
        amps[0] = C64::new(1.0, 0.0);
        Self { amps }
    }

    fn apply1(&mut self, u: [[C64; 2]; 2], q: usize) {
        let m = 1usize << q;
        for i in 0..self.amps.len() {
            if i & m == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | m]);
                self.amps[i] = u[0][0] * a0 + u[0][1] * a1;
                self.amps[i | m] = u[1][0] * a0 + u[1][1] * a1;
            }
        }
    }
}

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

impl Backend for StateVector {
    fn gate1(&mut self, g: Gate1, q: usize) {
        let u = match g {
            Gate1::H => {
                let h = C64::new(FRAC_1_SQRT_2, 0.0);
                [[h, h], [h, -h]]
            }
            Gate1::S => [[ONE, ZERO], [ZERO, C64::new(0.0, 1.0)]],
        };
        self.apply1(u, q);
    }

    fn pauli(&mut self, p: Pauli, q: usize) {
        let i = C64::new(0.0, 1.0);
        let u = match p {
            Pauli::X => [[ZERO, ONE], [ONE, ZERO]],
            Pauli::Y => [[ZERO, -i], [i, ZERO]],
            Pauli::Z => [[ONE, ZERO], [ZERO, -ONE]],
        };
        self.apply1(u, q);
    }

    fn cx(&mut self, c: usize, t: usize) {
        let (mc, mt) = (1usize << c, 1usize << t);
        for i in 0..self.amps.len() {
            if i & mc != 0 && i & mt == 0 {
                self.amps.swap(i, i | mt);
            }
        }
    }

    fn measure_z(&self, q: usize) -> Vec<(u8, f64, Self)> {
        let m = 1usize << q;
        let mut out = Vec::with_capacity(2);
        for bit in [0u8, 1] {
            let keep = |i: usize| ((i & m != 0) as u8) == bit;
            let p: f64 = self.amps.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, a)| a.norm_sqr()).sum();
            if p > 1e-14 {
                let s = 1.0 / p.sqrt();
                let amps = self.amps.iter().enumerate().map(|(i, a)| if keep(i) { a * s } else { ZERO }).collect();
                out.push((bit, p, Self { amps }));
            }
        }
        out
    }

    fn prep_a(&mut self, q: usize) -> Result<()> {
        self.gate1(Gate1::H, q);
        self.apply1([[ONE, ZERO], [ZERO, C64::from_polar(1.0, std::f64::consts::FRAC_PI_4)]], q);
        Ok(())
    }
}

/// Exact outcome distribution of a stabilizer circuit.
pub fn distribution_tableau(c: &CircuitIR) -> Result<Distribution> {
    c.validate()?;
    if c.n_qubits > 64 {
        return Err(Error::invalid("tableau backend supports at most 64 qubits"));
    }
    let mut out = Distribution::new();
    enumerate(c, 0, Tableau::new(c.n_qubits), &mut BTreeMap::new(), 1.0, &mut out)?;
    Ok(out)
}

/// Outcome distribution from a dense state vector; handles `PREPA`.
pub fn distribution_statevector(c: &CircuitIR) -> Result<Distribution> {
    c.validate()?;
    if c.n_qubits > MAX_STATEVECTOR_QUBITS {
        return Err(Error::invalid(format!("state-vector backend supports at most {MAX_STATEVECTOR_QUBITS} qubits")));
    }
    let mut out = Distribution::new();
    enumerate(c, 0, StateVector::new(c.n_qubits), &mut BTreeMap::new(), 1.0, &mut out)?;
    Ok(out)
}

/// Largest probability difference over the union of outcome records.
pub fn distribution_distance(a: &Distribution, b: &Distribution) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Random Clifford circuit over `{H, S, Pauli, CX}` ending in `M Z` on every
/// qubit. With `control`, a mid-circuit measurement, re-preparation and
/// outcome-conditioned single-qubit gates are mixed in.
pub fn random_clifford_circuit<R: Rng + ?Sized>(rng: &mut R, n_qubits: usize, n_gates: usize, control: bool) -> CircuitIR {
    let mut c = CircuitIR::new(n_qubits);
    let mid = if control && n_qubits >= 2 { Some(rng.gen_range(0..=n_gates)) } else { None };
    let mut mid_id: Option<String> = None;
    let single = |rng: &mut R, q: usize| match rng.gen_range(0..5) {
        0 => Instr::H(q),
        1 => Instr::S(q),
        k => Instr::Pauli(Pauli::ALL[k - 2], q),
    };
    for g in 0..n_gates {
        if mid == Some(g) {
            let q = rng.gen_range(0..n_qubits);
            c.push(Instr::measure_z(q, "mid"));
            c.push(Instr::Prep0(q));
            mid_id = Some("mid".into());
        }
        let instr = if n_qubits >= 2 && rng.gen_bool(0.35) {
            let a = rng.gen_range(0..n_qubits);
            let b = (a + rng.gen_range(1..n_qubits)) % n_qubits;
            Instr::cx(a, b)
        } else {
            let q = rng.gen_range(0..n_qubits);
            single(rng, q)
        };
        match (&mid_id, instr.is_two_qubit()) {
            (Some(id), false) if rng.gen_bool(0.5) => {
                let bit = rng.gen_range(0..2u8);
                c.push_if(instr, vec![(id.clone(), bit)]);
            }
            _ => {
                c.push(instr);
            }
        }
    }
    for q in 0..n_qubits {
        c.push(Instr::measure_z(q, format!("q{q}")));
    }
    c
}

/// Outcome-distribution and resource comparison of a circuit with its
/// compiled form.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Soundness {
    /// Largest absolute probability difference over all outcome records.
    pub max_prob_diff: f64,
    /// Distributions equal as maps of exact dyadic probabilities.
    pub exact: bool,
    /// Per outcome record, the executed two-qubit gates, measurements and
    /// preparations agree.
    pub counts_match: bool,
    pub two_qubit: usize,
    pub measurements: usize,
}

fn resource_counts(c: &CircuitIR, record: &[(String, u8)]) -> [usize; 3] {
    let rec: BTreeMap<String, u8> = record.iter().cloned().collect();
    c.executed(&rec).fold([0; 3], |mut n, i| {
        n[0] += usize::from(i.is_two_qubit());
        n[1] += usize::from(i.is_measurement());
        n[2] += usize::from(matches!(i, Instr::Prep0(_) | Instr::PrepA(_)));
        n
    })
}

/// Compare `original` with `compiled` on the exact reference simulator
/// (tableau, or state vector when `PREPA` appears).
pub fn soundness(original: &CircuitIR, compiled: &CircuitIR) -> Result<Soundness> {
    let magic = original.lines.iter().any(|l| matches!(l.instr, Instr::PrepA(_)));
    let dist = |c: &CircuitIR| if magic { distribution_statevector(c) } else { distribution_tableau(c) };
    let (a, b) = (dist(original)?, dist(compiled)?);
    let counts: Vec<[usize; 3]> = a.keys().map(|r| resource_counts(original, r)).collect();
    let counts_match = a.keys().zip(&counts).all(|(r, n)| resource_counts(compiled, r) == *n);
    let max_prob_diff = distribution_distance(&a, &b);
    Ok(Soundness {
        max_prob_diff,
        exact: if magic { max_prob_diff < 1e-12 } else { a == b },
        counts_match,
        two_qubit: counts.iter().map(|n| n[0]).max().unwrap_or(0),
        measurements: counts.iter().map(|n| n[1]).max().unwrap_or(0),
    })
}
