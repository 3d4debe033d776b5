//! Boolean netlists: representation, plain evaluation, validation and
//! positional partitioning into sub-netlists.
//!
//! Wire ids and gate outputs share one dense integer space. Wires
//! `0..n_inputs` are circuit inputs (garbler block first, then evaluator
//! block); every other wire is driven by exactly one gate.

mod builder;
mod format;

use std::collections::HashSet;
use std::fmt;

pub use builder::{Bit, Builder};
pub use format::{parse_netlist, write_netlist, ParseError};

pub type WireId = u32;

#[derive(Debug, thiserror::Error)]
pub enum CircuitError {
    #[error("expected {expected} {what} bits, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("gates_per_batch must be at least 1")]
    ZeroBatch,
    #[error("invalid netlist: {0}")]
    Invalid(ValidationReport),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    And,
    Or,
    Xor,
    Xnor,
    Nand,
    Nor,
    Not,
    Buf,
}

impl GateKind {
    pub const ALL: [GateKind; 8] = [
        GateKind::And,
        GateKind::Or,
        GateKind::Xor,
        GateKind::Xnor,
        GateKind::Nand,
        GateKind::Nor,
        GateKind::Not,
        GateKind::Buf,
    ];

    pub fn is_unary(self) -> bool {
        matches!(self, GateKind::Not | GateKind::Buf)
    }

    /// Gates that cost no garbled table.
    pub fn is_free(self) -> bool {
        matches!(
            self,
            GateKind::Xor | GateKind::Xnor | GateKind::Not | GateKind::Buf
        )
    }

    #[inline]
    pub fn eval(self, a: bool, b: bool) -> bool {
        match self {
            GateKind::And => a & b,
            GateKind::Or => a | b,
            GateKind::Xor => a ^ b,
            GateKind::Xnor => !(a ^ b),
            GateKind::Nand => !(a & b),
            GateKind::Nor => !(a | b),
            GateKind::Not => !a,
            GateKind::Buf => a,
        }
    }

    #[inline]
    pub fn eval_word(self, a: u64, b: u64) -> u64 {
        match self {
            GateKind::And => a & b,
            GateKind::Or => a | b,
            GateKind::Xor => a ^ b,
            GateKind::Xnor => !(a ^ b),
            GateKind::Nand => !(a & b),
            GateKind::Nor => !(a | b),
            GateKind::Not => !a,
            GateKind::Buf => a,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GateKind::And => "AND",
            GateKind::Or => "OR",
            GateKind::Xor => "XOR",
            GateKind::Xnor => "XNOR",
            GateKind::Nand => "NAND",
            GateKind::Nor => "NOR",
            GateKind::Not => "NOT",
            GateKind::Buf => "BUF",
        }
    }

    pub fn from_name(s: &str) -> Option<GateKind> {
        GateKind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for GateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Gate {
    pub id: u32,
    pub kind: GateKind,
    pub in0: WireId,
    pub in1: Option<WireId>,
    pub out: WireId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    IdMismatch { position: usize, id: u32 },
    Arity { gate: u32, kind: GateKind },
    OutOfRange { gate: Option<u32>, wire: WireId },
    DuplicateDriver { wire: WireId, first: u32, second: u32 },
    InputDriven { gate: u32, wire: WireId },
    UnassignedWire { wire: WireId },
    TopologicalOrder { gate: u32, wire: WireId, driver: u32 },
    Cycle { gates: Vec<u32> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::IdMismatch { position, id } => {
                write!(f, "gate at position {position} carries id {id}")
            }
            Violation::Arity { gate, kind } => {
                write!(f, "gate {gate}: arity mismatch for {kind}")
            }
            Violation::OutOfRange { gate: Some(g), wire } => {
                write!(f, "gate {g}: wire {wire} out of range")
            }
            Violation::OutOfRange { gate: None, wire } => {
                write!(f, "output wire {wire} out of range")
            }
            Violation::DuplicateDriver {
                wire,
                first,
                second,
            } => write!(f, "wire {wire} driven by gates {first} and {second}"),
            Violation::InputDriven { gate, wire } => {
                write!(f, "gate {gate} drives input wire {wire}")
            }
            Violation::UnassignedWire { wire } => write!(f, "wire {wire} is never assigned"),
            Violation::TopologicalOrder { gate, wire, driver } => write!(
                f,
                "topological order: gate {gate} reads wire {wire} produced by later gate {driver}"
            ),
            Violation::Cycle { gates } => write!(f, "cycle through gates {gates:?}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize)]
pub struct GateCounts {
    pub total: usize,
    pub free: usize,
    pub nonfree: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Netlist {
    n_garbler_inputs: u32,
    n_evaluator_inputs: u32,
    gates: Vec<Gate>,
    outputs: Vec<WireId>,
    valid: bool,
}

impl Netlist {
    /// Builds a netlist without rejecting structural problems; use
    /// [`Netlist::validate`] to inspect them. Evaluation and garbling refuse
    /// invalid netlists.
    pub fn new(
        n_garbler_inputs: u32,
        n_evaluator_inputs: u32,
        gates: Vec<Gate>,
        outputs: Vec<WireId>,
    ) -> Netlist {
        let mut n = Netlist {
            n_garbler_inputs,
            n_evaluator_inputs,
            gates,
            outputs,
            valid: false,
        };
        n.valid = n.validate().is_ok();
        n
    }

    /// Like [`Netlist::new`] but fails on any violation.
    pub fn checked(
        n_garbler_inputs: u32,
        n_evaluator_inputs: u32,
        gates: Vec<Gate>,
        outputs: Vec<WireId>,
    ) -> Result<Netlist, CircuitError> {
        let n = Netlist::new(n_garbler_inputs, n_evaluator_inputs, gates, outputs);
        if n.valid {
            Ok(n)
        } else {
            Err(CircuitError::Invalid(n.validate()))
        }
    }

    pub fn n_garbler_inputs(&self) -> usize {
        self.n_garbler_inputs as usize
    }

    pub fn n_evaluator_inputs(&self) -> usize {
        self.n_evaluator_inputs as usize
    }

    pub fn n_inputs(&self) -> usize {
        self.n_garbler_inputs() + self.n_evaluator_inputs()
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_wires(&self) -> usize {
        self.n_inputs() + self.gates.len()
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn output_wires(&self) -> &[WireId] {
        &self.outputs
    }

    pub fn is_valid(&self) -> bool {
        self.valid
    }

    pub fn ensure_valid(&self) -> Result<(), CircuitError> {
        if self.valid {
            Ok(())
        } else {
            Err(CircuitError::Invalid(self.validate()))
        }
    }

    pub fn validate(&self) -> ValidationReport {
        let n_in = self.n_inputs() as u64;
        let n_wires = self.n_wires() as u64;
        let mut violations = Vec::new();
        let mut driver: Vec<Option<u32>> = vec![None; self.n_wires()];

        for (pos, g) in self.gates.iter().enumerate() {
            if g.id as usize != pos {
                violations.push(Violation::IdMismatch {
                    position: pos,
                    id: g.id,
                });
            }
            if g.kind.is_unary() != g.in1.is_none() {
                violations.push(Violation::Arity {
                    gate: g.id,
                    kind: g.kind,
                });
            }
            let out = g.out as u64;
            if out >= n_wires {
                violations.push(Violation::OutOfRange {
                    gate: Some(g.id),
                    wire: g.out,
                });
            } else if out < n_in {
                violations.push(Violation::InputDriven {
                    gate: g.id,
                    wire: g.out,
                });
            } else if let Some(first) = driver[g.out as usize] {
                violations.push(Violation::DuplicateDriver {
                    wire: g.out,
                    first,
                    second: g.id,
                });
            } else {
                driver[g.out as usize] = Some(pos as u32);
            }
        }

        let mut forward_refs = false;
        for (pos, g) in self.gates.iter().enumerate() {
            for w in std::iter::once(g.in0).chain(g.in1) {
                if w as u64 >= n_wires {
                    violations.push(Violation::OutOfRange {
                        gate: Some(g.id),
                        wire: w,
                    });
                } else if (w as u64) >= n_in {
                    match driver[w as usize] {
                        None => violations.push(Violation::UnassignedWire { wire: w }),
                        Some(d) if d as usize >= pos => {
                            forward_refs = true;
                            violations.push(Violation::TopologicalOrder {
                                gate: g.id,
                                wire: w,
                                driver: d,
                            });
                        }
                        Some(_) => {}
                    }
                }
            }
        }

        for &w in &self.outputs {
            if w as u64 >= n_wires {
                violations.push(Violation::OutOfRange {
                    gate: None,
                    wire: w,
                });
            } else if w as u64 >= n_in && driver[w as usize].is_none() {
                violations.push(Violation::UnassignedWire { wire: w });
            }
        }

        if forward_refs {
            if let Some(cycle) = self.find_cycle(&driver) {
                violations.push(Violation::Cycle { gates: cycle });
            }
        }

        ValidationReport { violations }
    }

    fn find_cycle(&self, driver: &[Option<u32>]) -> Option<Vec<u32>> {
        // Iterative DFS over gate -> driving gates of its inputs.
        const WHITE: u8 = 0;
        const GREY: u8 = 1;
        const BLACK: u8 = 2;
        let n = self.gates.len();
        let n_wires = self.n_wires();
        let preds = |g: usize| -> Vec<usize> {
            let gate = &self.gates[g];
            std::iter::once(gate.in0)
                .chain(gate.in1)
                .filter(|&w| (w as usize) < n_wires)
                .filter_map(|w| driver[w as usize].map(|d| d as usize))
                .collect()
        };
        let mut color = vec![WHITE; n];
        for start in 0..n {
            if color[start] != WHITE {
                continue;
            }
            let mut stack: Vec<(usize, Vec<usize>)> = vec![(start, preds(start))];
            color[start] = GREY;
            while let Some((node, pending)) = stack.last_mut() {
                if let Some(next) = pending.pop() {
                    match color[next] {
                        WHITE => {
                            color[next] = GREY;
                            let p = preds(next);
                            stack.push((next, p));
                        }
                        GREY => {
                            let pos = stack.iter().position(|(n, _)| *n == next).unwrap_or(0);
                            return Some(
                                stack[pos..]
                                    .iter()
                                    .map(|(n, _)| self.gates[*n].id)
                                    .collect(),
                            );
                        }
                        _ => {}
                    }
                } else {
                    color[*node] = BLACK;
                    stack.pop();
                }
            }
        }
        None
    }

    fn check_lengths(&self, garbler: usize, evaluator: usize) -> Result<(), CircuitError> {
        if garbler != self.n_garbler_inputs() {
            return Err(CircuitError::LengthMismatch {
                what: "garbler input",
                expected: self.n_garbler_inputs(),
                got: garbler,
            });
        }
        if evaluator != self.n_evaluator_inputs() {
            return Err(CircuitError::LengthMismatch {
                what: "evaluator input",
                expected: self.n_evaluator_inputs(),
                got: evaluator,
            });
        }
        Ok(())
    }

    /// Plain (unprotected) forward evaluation.
    pub fn eval_plain(
        &self,
        x_garbler: &[bool],
        x_evaluator: &[bool],
    ) -> Result<Vec<bool>, CircuitError> {
        self.ensure_valid()?;
        self.check_lengths(x_garbler.len(), x_evaluator.len())?;
        let mut wires = vec![false; self.n_wires()];
        wires[..x_garbler.len()].copy_from_slice(x_garbler);
        wires[x_garbler.len()..self.n_inputs()].copy_from_slice(x_evaluator);
        for g in &self.gates {
            let a = wires[g.in0 as usize];
            let b = g.in1.is_some_and(|w| wires[w as usize]);
            wires[g.out as usize] = g.kind.eval(a, b);
        }
        Ok(self.outputs.iter().map(|&w| wires[w as usize]).collect())
    }

    /// Bit-sliced evaluation: bit `k` of every word belongs to input vector `k`.
    pub fn eval_plain_packed(
        &self,
        x_garbler: &[u64],
        x_evaluator: &[u64],
    ) -> Result<Vec<u64>, CircuitError> {
        self.ensure_valid()?;
        self.check_lengths(x_garbler.len(), x_evaluator.len())?;
        let mut wires = vec![0u64; self.n_wires()];
        wires[..x_garbler.len()].copy_from_slice(x_garbler);
        wires[x_garbler.len()..self.n_inputs()].copy_from_slice(x_evaluator);
        for g in &self.gates {
            let a = wires[g.in0 as usize];
            let b = g.in1.map_or(0, |w| wires[w as usize]);
            wires[g.out as usize] = g.kind.eval_word(a, b);
        }
        Ok(self.outputs.iter().map(|&w| wires[w as usize]).collect())
    }

    pub fn count_gates(&self) -> GateCounts {
        let free = self.gates.iter().filter(|g| g.kind.is_free()).count();
        GateCounts {
            total: self.gates.len(),
            free,
            nonfree: self.gates.len() - free,
        }
    }

    /// Splits the gate list positionally into `ceil(N / gates_per_batch)`
    /// consecutive sub-netlists.
    pub fn partition(&self, gates_per_batch: usize) -> Result<Vec<SubNetlist<'_>>, CircuitError> {
        if gates_per_batch == 0 {
            return Err(CircuitError::ZeroBatch);
        }
        self.ensure_valid()?;
        let n_in = self.n_inputs();
        let n_gates = self.gates.len();
        // Position of the producing gate and of the last reader, per wire.
        let mut producer = vec![usize::MAX; self.n_wires()];
        let mut last_read = vec![None::<usize>; self.n_wires()];
        for (pos, g) in self.gates.iter().enumerate() {
            producer[g.out as usize] = pos;
            for w in std::iter::once(g.in0).chain(g.in1) {
                last_read[w as usize] = Some(pos);
            }
        }
        let outputs: HashSet<WireId> = self.outputs.iter().copied().collect();

        let mut subs = Vec::with_capacity(n_gates.div_ceil(gates_per_batch));
        for (index, start) in (0..n_gates).step_by(gates_per_batch).enumerate() {
            let end = (start + gates_per_batch).min(n_gates);
            let slice = &self.gates[start..end];
            let mut boundary_in: Vec<WireId> = slice
                .iter()
                .flat_map(|g| std::iter::once(g.in0).chain(g.in1))
                .filter(|&w| (w as usize) < n_in || producer[w as usize] < start)
                .collect();
            boundary_in.sort_unstable();
            boundary_in.dedup();
            let boundary_out: Vec<WireId> = slice
                .iter()
                .map(|g| g.out)
                .filter(|w| {
                    outputs.contains(w) || last_read[*w as usize].is_some_and(|r| r >= end)
                })
                .collect();
            subs.push(SubNetlist {
                index,
                gates: slice,
                boundary_in,
                boundary_out,
            });
        }
        Ok(subs)
    }
}

/// A contiguous slice of a parent netlist plus the wires crossing its cut.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubNetlist<'a> {
    pub index: usize,
    pub gates: &'a [Gate],
    /// Wires read here but produced earlier (or circuit inputs), sorted.
    pub boundary_in: Vec<WireId>,
    /// Wires produced here and consumed later or exported as outputs.
    pub boundary_out: Vec<WireId>,
}

impl SubNetlist<'_> {
    /// Evaluates this slice given values for `boundary_in` (same order) and
    /// returns values for `boundary_out`.
    pub fn eval_plain(&self, inputs: &[bool]) -> Result<Vec<bool>, CircuitError> {
        if inputs.len() != self.boundary_in.len() {
            return Err(CircuitError::LengthMismatch {
                what: "boundary",
                expected: self.boundary_in.len(),
                got: inputs.len(),
            });
        }
        let mut values: std::collections::HashMap<WireId, bool> =
            self.boundary_in.iter().copied().zip(inputs.iter().copied()).collect();
        for g in self.gates {
            let a = values[&g.in0];
            let b = g.in1.is_some_and(|w| values[&w]);
            values.insert(g.out, g.kind.eval(a, b));
        }
        Ok(self.boundary_out.iter().map(|w| values[w]).collect())
    }
}
