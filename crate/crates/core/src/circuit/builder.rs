//! Incremental netlist construction with constant folding, structural
//! hashing and dead-gate removal.

use std::collections::HashMap;

use super::{Gate, GateKind, Netlist, WireId};

/// A value during construction: a known constant or a wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Bit {
    Const(bool),
    Wire(WireId),
}

impl Bit {
    pub const ZERO: Bit = Bit::Const(false);
    pub const ONE: Bit = Bit::Const(true);

    pub fn as_const(self) -> Option<bool> {
        match self {
            Bit::Const(c) => Some(c),
            Bit::Wire(_) => None,
        }
    }
}

/// Gate-emitting builder. Constants never reach the netlist unless they are
/// exported as outputs, in which case they are materialized from input 0.
/// Identical gates are emitted once, and gates that do not reach an output
/// are dropped by [`Builder::finish`].
#[derive(Debug, Clone)]
pub struct Builder {
    n_garbler: u32,
    n_evaluator: u32,
    gates: Vec<Gate>,
    memo: HashMap<(GateKind, WireId, Option<WireId>), WireId>,
}

impl Builder {
    pub fn new(n_garbler: u32, n_evaluator: u32) -> Builder {
        Builder {
            n_garbler,
            n_evaluator,
            gates: Vec::new(),
            memo: HashMap::new(),
        }
    }

    pub fn garbler_input(&self, i: u32) -> Bit {
        assert!(i < self.n_garbler, "garbler input {i} out of range");
        Bit::Wire(i)
    }

    pub fn evaluator_input(&self, i: u32) -> Bit {
        assert!(i < self.n_evaluator, "evaluator input {i} out of range");
        Bit::Wire(self.n_garbler + i)
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    fn emit(&mut self, kind: GateKind, a: WireId, b: Option<WireId>) -> Bit {
        let (a, b) = match b {
            Some(b) if b < a => (b, Some(a)),
            _ => (a, b),
        };
        if let Some(&w) = self.memo.get(&(kind, a, b)) {
            return Bit::Wire(w);
        }
        let id = self.gates.len() as u32;
        let out = self.n_garbler + self.n_evaluator + id;
        self.gates.push(Gate {
            id,
            kind,
            in0: a,
            in1: b,
            out,
        });
        self.memo.insert((kind, a, b), out);
        Bit::Wire(out)
    }

    pub fn not(&mut self, a: Bit) -> Bit {
        match a {
            Bit::Const(c) => Bit::Const(!c),
            Bit::Wire(w) => self.emit(GateKind::Not, w, None),
        }
    }

    pub fn xor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x ^ y),
            (Bit::Const(false), w) | (w, Bit::Const(false)) => w,
            (Bit::Const(true), w) | (w, Bit::Const(true)) => self.not(w),
            (Bit::Wire(x), Bit::Wire(y)) if x == y => Bit::ZERO,
            (Bit::Wire(x), Bit::Wire(y)) => self.emit(GateKind::Xor, x, Some(y)),
        }
    }

    pub fn xnor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Wire(x), Bit::Wire(y)) if x != y => self.emit(GateKind::Xnor, x, Some(y)),
            _ => {
                let t = self.xor(a, b);
                self.not(t)
            }
        }
    }

    pub fn and(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x & y),
            (Bit::Const(false), _) | (_, Bit::Const(false)) => Bit::ZERO,
            (Bit::Const(true), w) | (w, Bit::Const(true)) => w,
            (Bit::Wire(x), Bit::Wire(y)) if x == y => a,
            (Bit::Wire(x), Bit::Wire(y)) => self.emit(GateKind::And, x, Some(y)),
        }
    }

    pub fn or(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Const(x), Bit::Const(y)) => Bit::Const(x | y),
            (Bit::Const(true), _) | (_, Bit::Const(true)) => Bit::ONE,
            (Bit::Const(false), w) | (w, Bit::Const(false)) => w,
            (Bit::Wire(x), Bit::Wire(y)) if x == y => a,
            (Bit::Wire(x), Bit::Wire(y)) => self.emit(GateKind::Or, x, Some(y)),
        }
    }

    pub fn nand(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Wire(x), Bit::Wire(y)) if x != y => self.emit(GateKind::Nand, x, Some(y)),
            _ => {
                let t = self.and(a, b);
                self.not(t)
            }
        }
    }

    pub fn nor(&mut self, a: Bit, b: Bit) -> Bit {
        match (a, b) {
            (Bit::Wire(x), Bit::Wire(y)) if x != y => self.emit(GateKind::Nor, x, Some(y)),
            _ => {
                let t = self.or(a, b);
                self.not(t)
            }
        }
    }

    /// `sel ? b : a`, one AND.
    pub fn mux(&mut self, sel: Bit, a: Bit, b: Bit) -> Bit {
        if a == b {
            return a;
        }
        let d = self.xor(a, b);
        let t = self.and(sel, d);
        self.xor(a, t)
    }

    pub fn gate(&mut self, kind: GateKind, a: Bit, b: Bit) -> Bit {
        match kind {
            GateKind::And => self.and(a, b),
            GateKind::Or => self.or(a, b),
            GateKind::Xor => self.xor(a, b),
            GateKind::Xnor => self.xnor(a, b),
            GateKind::Nand => self.nand(a, b),
            GateKind::Nor => self.nor(a, b),
            GateKind::Not => self.not(a),
            GateKind::Buf => a,
        }
    }

    /// Finishes the netlist. Constant outputs become `XOR(w,w)` or
    /// `XNOR(w,w)` over input 0; a builder without inputs cannot export
    /// constants and panics.
    pub fn finish(mut self, outputs: &[Bit]) -> Netlist {
        let mut zero = None;
        let mut one = None;
        let mut wires = Vec::with_capacity(outputs.len());
        for &o in outputs {
            let w = match o {
                Bit::Wire(w) => w,
                Bit::Const(c) => {
                    assert!(
                        self.n_garbler + self.n_evaluator > 0,
                        "constant output needs at least one input wire"
                    );
                    let slot = if c { &mut one } else { &mut zero };
                    match *slot {
                        Some(w) => w,
                        None => {
                            let kind = if c { GateKind::Xnor } else { GateKind::Xor };
                            let Bit::Wire(w) = self.emit(kind, 0, Some(0)) else {
                                unreachable!()
                            };
                            *slot = Some(w);
                            w
                        }
                    }
                }
            };
            wires.push(w);
        }
        let (gates, wires) = self.prune(wires);
        let n = Netlist::new(self.n_garbler, self.n_evaluator, gates, wires);
        debug_assert!(n.is_valid());
        n
    }

    fn prune(&self, outputs: Vec<WireId>) -> (Vec<Gate>, Vec<WireId>) {
        let n_in = self.n_garbler + self.n_evaluator;
        let mut live = vec![false; self.gates.len()];
        for &w in &outputs {
            if w >= n_in {
                live[(w - n_in) as usize] = true;
            }
        }
        for g in self.gates.iter().rev() {
            if live[g.id as usize] {
                for w in std::iter::once(g.in0).chain(g.in1) {
                    if w >= n_in {
                        live[(w - n_in) as usize] = true;
                    }
                }
            }
        }
        let mut remap = vec![u32::MAX; self.gates.len()];
        let mut kept = Vec::with_capacity(live.iter().filter(|&&l| l).count());
        let map = |w: WireId, remap: &[u32]| {
            if w < n_in {
                w
            } else {
                n_in + remap[(w - n_in) as usize]
            }
        };
        for g in &self.gates {
            if !live[g.id as usize] {
                continue;
            }
            let id = kept.len() as u32;
            remap[g.id as usize] = id;
            kept.push(Gate {
                id,
                kind: g.kind,
                in0: map(g.in0, &remap),
                in1: g.in1.map(|w| map(w, &remap)),
                out: n_in + id,
            });
        }
        let outputs = outputs.into_iter().map(|w| map(w, &remap)).collect();
        (kept, outputs)
    }
}
