//! Logical Clifford gates, Clifford frames and the frame compiler.
//!
//! Single-qubit Cliffords are never applied physically. They are kept as a
//! per-qubit frame and absorbed into the basis labels of the remaining
//! two-qubit gates and measurements.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub mod circuit;
pub mod compile;
pub mod gates;
pub mod sim;

pub use circuit::{CircuitIR, Cond, FrameNote, Instr, Line};
pub use compile::compile_to_frame;
pub use gates::{
    clifford_unitaries, generalized_cp, logical_action, one_bit_teleport, spread_matrix, verify_error_spread,
    CliffordUnitaries, LogicalAction, ShiftVector, TeleportResult, TwoModeOperator,
};
pub use sim::{distribution_statevector, distribution_tableau, random_clifford_circuit, soundness, Distribution, Soundness};

/// Non-identity Pauli axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];

    fn index(self) -> usize {
        match self {
            Pauli::X => 0,
            Pauli::Y => 1,
            Pauli::Z => 2,
        }
    }

    fn from_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }

    /// The third axis, given two distinct ones.
    fn other(self, b: Pauli) -> Pauli {
        Pauli::from_index(3 - self.index() - b.index())
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

impl FromStr for Pauli {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" => Ok(Pauli::X),
            "Y" => Ok(Pauli::Y),
            "Z" => Ok(Pauli::Z),
            _ => Err(Error::invalid(format!("unknown Pauli `{s}`"))),
        }
    }
}

/// `±P` for a non-identity Pauli `P`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SignedPauli {
    pub pauli: Pauli,
    pub negative: bool,
}

impl SignedPauli {
    pub const fn plus(pauli: Pauli) -> Self {
        Self { pauli, negative: false }
    }

    pub fn negated(self) -> Self {
        Self { negative: !self.negative, ..self }
    }

    fn with_sign(self, flip: bool) -> Self {
        Self { negative: self.negative ^ flip, ..self }
    }
}

impl fmt::Display for SignedPauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", if self.negative { '-' } else { '+' }, self.pauli.symbol())
    }
}

impl FromStr for SignedPauli {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (neg, rest) = match s.as_bytes().first() {
            Some(b'-') => (true, &s[1..]),
            Some(b'+') => (false, &s[1..]),
            _ => (false, s),
        };
        Ok(Self { pauli: rest.parse()?, negative: neg })
    }
}

/// Generators used to spell every frame element as a gate word.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate1 {
    H,
    S,
}

/// Element of the single-qubit Clifford group modulo phase, stored as the
/// conjugation images `C X C†` and `C Z C†`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CliffordFrame {
    pub x: SignedPauli,
    pub z: SignedPauli,
}

impl Default for CliffordFrame {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl CliffordFrame {
    pub const IDENTITY: Self = Self { x: SignedPauli::plus(Pauli::X), z: SignedPauli::plus(Pauli::Z) };

    pub fn new(x: SignedPauli, z: SignedPauli) -> Result<Self> {
        if x.pauli == z.pauli {
            return Err(Error::invalid("frame images of X and Z must anticommute"));
        }
        Ok(Self { x, z })
    }

    pub fn hadamard() -> Self {
        Self { x: SignedPauli::plus(Pauli::Z), z: SignedPauli::plus(Pauli::X) }
    }

    pub fn phase() -> Self {
        Self { x: SignedPauli::plus(Pauli::Y), z: SignedPauli::plus(Pauli::Z) }
    }

    /// Conjugation by a Pauli: anticommuting axes flip sign.
    pub fn pauli(p: Pauli) -> Self {
        let mut f = Self::IDENTITY;
        f.x.negative = p != Pauli::X;
        f.z.negative = p != Pauli::Z;
        f
    }

    /// All 24 elements in a fixed order.
    pub fn all() -> Vec<Self> {
        let mut out = Vec::with_capacity(24);
        for px in Pauli::ALL {
            for pz in Pauli::ALL {
                if px == pz {
                    continue;
                }
                for sx in [false, true] {
                    for sz in [false, true] {
                        out.push(Self {
                            x: SignedPauli { pauli: px, negative: sx },
                            z: SignedPauli { pauli: pz, negative: sz },
                        });
                    }
                }
            }
        }
        out
    }

    /// `C Y C† = i C(X) C(Z)`.
    fn image_y(&self) -> SignedPauli {
        let (a, b) = (self.x.pauli, self.z.pauli);
        let cyclic = (b.index() + 3 - a.index()) % 3 == 1;
        let sign = self.x.negative ^ self.z.negative ^ cyclic;
        SignedPauli { pauli: a.other(b), negative: sign }
    }

    pub fn apply(&self, p: SignedPauli) -> SignedPauli {
        let img = match p.pauli {
            Pauli::X => self.x,
            Pauli::Y => self.image_y(),
            Pauli::Z => self.z,
        };
        img.with_sign(p.negative)
    }

    /// `self ∘ inner`: conjugate by `inner` first, then by `self`.
    pub fn compose(&self, inner: &Self) -> Self {
        Self { x: self.apply(inner.x), z: self.apply(inner.z) }
    }

    pub fn inverse(&self) -> Self {
        let mut x = None;
        let mut z = None;
        for p in Pauli::ALL {
            let img = self.apply(SignedPauli::plus(p));
            match img.pauli {
                Pauli::X => x = Some(SignedPauli { pauli: p, negative: img.negative }),
                Pauli::Z => z = Some(SignedPauli { pauli: p, negative: img.negative }),
                Pauli::Y => {}
            }
        }
        Self { x: x.expect("frame is a bijection"), z: z.expect("frame is a bijection") }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// Shortest `H`/`S` word `w` with `self = w[last] ∘ … ∘ w[0]`.
    pub fn word(&self) -> Vec<Gate1> {
        let mut seen = vec![(Self::IDENTITY, Vec::new())];
        let mut head = 0;
        while head < seen.len() {
            let (f, w) = seen[head].clone();
            if f == *self {
                return w;
            }
            for (g, gf) in [(Gate1::H, Self::hadamard()), (Gate1::S, Self::phase())] {
                let next = gf.compose(&f);
                if !seen.iter().any(|(s, _)| *s == next) {
                    let mut nw = w.clone();
                    nw.push(g);
                    seen.push((next, nw));
                }
            }
            head += 1;
        }
        unreachable!("H and S generate the whole group")
    }

    /// Any element mapping `from` to `to` under conjugation.
    pub fn mapping(from: SignedPauli, to: SignedPauli) -> Self {
        Self::all().into_iter().find(|c| c.apply(from) == to).expect("group acts transitively on signed Paulis")
    }
}

impl fmt::Display for CliffordFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "X={} Z={}", self.x, self.z)
    }
}
