//! Per-copy garbling and evaluation of the chained step circuit.
//!
//! One copy is one independent garbling of the whole T-step execution: a
//! global offset, a 0-label per state bit at the start and 32 fresh
//! instruction labels per step, all drawn from a ChaCha20 stream keyed by
//! the copy seed. Step `t` uses gate tweaks `t * n_wires + gate`. The
//! 0-labels of step `t`'s outputs are the state 0-labels of step `t + 1`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::circuit::{Gate, Netlist};
use crate::garble::{random_label, sample_offset, FixedKeyAes, GarbleError, GarbledTable};
use crate::mips::{build_step_netlist, layout, CpuStepConfig, MipsError};

/// Stored bytes per garbled table on the wire: three rows, no gate id.
pub const ROW_BYTES: usize = 48;
/// Instruction word width, the garbler-input block of the step circuit.
pub const INSTR_BITS: usize = 32;

/// The universal step circuit with the indexes a session needs.
pub struct StepCircuit {
    pub cfg: CpuStepConfig,
    pub netlist: Netlist,
    /// Ids of the non-free gates in order, to rebuild tables from rows.
    pub nonfree_ids: Vec<u32>,
}

impl StepCircuit {
    pub fn new(cfg: CpuStepConfig) -> Result<StepCircuit, MipsError> {
        let cfg = CpuStepConfig {
            trace_hooks: false,
            ..cfg
        };
        let netlist = build_step_netlist(&cfg)?;
        let nonfree_ids = netlist
            .gates()
            .iter()
            .filter(|g| !g.kind.is_free())
            .map(|g| g.id)
            .collect();
        Ok(StepCircuit {
            cfg,
            netlist,
            nonfree_ids,
        })
    }

    pub fn nonfree(&self) -> usize {
        self.nonfree_ids.len()
    }

    pub fn state_bits(&self) -> usize {
        self.cfg.state_bits()
    }

    pub fn tweak_base(&self, step: u64) -> u64 {
        step * self.netlist.n_wires() as u64
    }

    /// State-bit range holding `count` data words from `base`.
    pub fn word_bits(&self, (base, count): (u32, u32)) -> std::ops::Range<usize> {
        layout::dmem(base as usize)..layout::dmem((base + count) as usize)
    }
}

/// Derives a 32-byte subkey of `seed` for one purpose.
pub fn derive(seed: &[u8; 32], purpose: &[u8]) -> [u8; 32] {
    *blake3::keyed_hash(seed, purpose).as_bytes()
}

pub fn copy_seed(seed: &[u8; 32], copy: u32) -> [u8; 32] {
    let mut p = b"copy".to_vec();
    p.extend_from_slice(&copy.to_le_bytes());
    derive(seed, &p)
}

/// Decode entry for one output label.
pub fn label_hash(label: u128) -> [u8; 16] {
    let mut h = blake3::Hasher::new();
    h.update(b"hwgn2/decode");
    h.update(&label.to_le_bytes());
    h.finalize().as_bytes()[..16].try_into().unwrap()
}

pub fn write_rows(tables: &[GarbledTable], out: &mut Vec<u8>) {
    out.reserve(tables.len() * ROW_BYTES);
    for t in tables {
        for r in t.rows {
            out.extend_from_slice(&r.to_le_bytes());
        }
    }
}

/// Garbler side of one copy.
pub struct CopyGarbler<'a> {
    circ: &'a StepCircuit,
    prp: &'a FixedKeyAes,
    rng: ChaCha20Rng,
    r: u128,
    initial: Vec<u128>,
    state: Vec<u128>,
    inputs: Vec<u128>,
    wires: Vec<u128>,
    tables: Vec<GarbledTable>,
    instr: [u128; INSTR_BITS],
    step: u64,
}

impl<'a> CopyGarbler<'a> {
    pub fn new(circ: &'a StepCircuit, prp: &'a FixedKeyAes, seed: [u8; 32]) -> CopyGarbler<'a> {
        let mut rng = ChaCha20Rng::from_seed(seed);
        let r = sample_offset(&mut rng);
        let initial: Vec<u128> = (0..circ.state_bits()).map(|_| random_label(&mut rng)).collect();
        CopyGarbler {
            circ,
            prp,
            rng,
            r,
            state: initial.clone(),
            initial,
            inputs: Vec::with_capacity(circ.netlist.n_inputs()),
            wires: Vec::new(),
            tables: Vec::with_capacity(circ.nonfree()),
            instr: [0; INSTR_BITS],
            step: 0,
        }
    }

    pub fn offset(&self) -> u128 {
        self.r
    }

    /// 0-labels of the state before the first step.
    pub fn initial_zero(&self) -> &[u128] {
        &self.initial
    }

    /// 0-labels of the current state.
    pub fn state_zero(&self) -> &[u128] {
        &self.state
    }

    pub fn active(&self, zero: u128, bit: bool) -> u128 {
        if bit {
            zero ^ self.r
        } else {
            zero
        }
    }

    /// Garbles the next step; returns its tables.
    pub fn garble_step(&mut self) -> Result<&[GarbledTable], GarbleError> {
        for l in self.instr.iter_mut() {
            *l = random_label(&mut self.rng);
        }
        self.inputs.clear();
        self.inputs.extend_from_slice(&self.instr);
        self.inputs.extend_from_slice(&self.state);
        self.tables.clear();
        crate::garble::garble_into(
            self.prp,
            &self.circ.netlist,
            self.r,
            &self.inputs,
            self.circ.tweak_base(self.step),
            &mut self.wires,
            &mut self.tables,
        )?;
        for (s, &w) in self.state.iter_mut().zip(self.circ.netlist.output_wires()) {
            *s = self.wires[w as usize];
        }
        self.step += 1;
        Ok(&self.tables)
    }

    /// Active instruction labels of the last garbled step for `word`.
    pub fn instruction_labels(&self, word: u32) -> [u128; INSTR_BITS] {
        std::array::from_fn(|j| self.active(self.instr[j], (word >> j) & 1 == 1))
    }

    /// `(H(Z0), H(Z1))` per output bit of the current state. `corrupt`
    /// swaps the entries of the first bit, a fault that flips it.
    pub fn decode_entries(&self, output: (u32, u32), corrupt: bool) -> Vec<([u8; 16], [u8; 16])> {
        let mut d: Vec<_> = self.circ.word_bits(output)
            .map(|i| (label_hash(self.state[i]), label_hash(self.state[i] ^ self.r)))
            .collect();
        if corrupt {
            if let Some(e) = d.first_mut() {
                std::mem::swap(&mut e.0, &mut e.1);
            }
        }
        d
    }
}

/// Digest a copy is committed to: every step's rows then its decode
/// entries. Regarbling from the seed reproduces it.
pub fn copy_digest(
    circ: &StepCircuit,
    prp: &FixedKeyAes,
    seed: [u8; 32],
    steps: u64,
    output: (u32, u32),
    corrupt: bool,
) -> Result<[u8; 32], GarbleError> {
    let mut g = CopyGarbler::new(circ, prp, seed);
    let mut h = blake3::Hasher::new();
    let mut buf = Vec::with_capacity(circ.nonfree() * ROW_BYTES);
    for _ in 0..steps {
        buf.clear();
        write_rows(g.garble_step()?, &mut buf);
        h.update(&buf);
    }
    for (a, b) in g.decode_entries(output, corrupt) {
        h.update(&a);
        h.update(&b);
    }
    Ok(*h.finalize().as_bytes())
}

/// Evaluator side of one copy.
pub struct CopyEvaluator<'a> {
    circ: &'a StepCircuit,
    prp: &'a FixedKeyAes,
    state: Vec<u128>,
    inputs: Vec<u128>,
    wires: Vec<u128>,
    tables: Vec<GarbledTable>,
    step: u64,
    hasher: Option<blake3::Hasher>,
}

impl<'a> CopyEvaluator<'a> {
    /// `state` holds one active label per state bit. With `hash` set every
    /// received row is fed to a running digest.
    pub fn new(circ: &'a StepCircuit, prp: &'a FixedKeyAes, state: Vec<u128>, hash: bool) -> CopyEvaluator<'a> {
        debug_assert_eq!(state.len(), circ.state_bits());
        CopyEvaluator {
            circ,
            prp,
            state,
            inputs: Vec::with_capacity(circ.netlist.n_inputs()),
            wires: Vec::new(),
            tables: Vec::with_capacity(circ.nonfree()),
            step: 0,
            hasher: hash.then(blake3::Hasher::new),
        }
    }

    pub fn state(&self) -> &[u128] {
        &self.state
    }

    /// Evaluates one step from wire-format rows.
    pub fn eval_rows(&mut self, instr: &[u128; INSTR_BITS], rows: &[u8]) -> Result<(), GarbleError> {
        if rows.len() != self.circ.nonfree() * ROW_BYTES {
            return Err(GarbleError::LengthMismatch {
                what: "table bytes",
                expected: self.circ.nonfree() * ROW_BYTES,
                got: rows.len(),
            });
        }
        if let Some(h) = &mut self.hasher {
            h.update(rows);
        }
        let mut tables = std::mem::take(&mut self.tables);
        tables.clear();
        tables.extend(rows.chunks_exact(ROW_BYTES).zip(&self.circ.nonfree_ids).map(|(c, &id)| {
            GarbledTable {
                gate_id: id,
                rows: std::array::from_fn(|k| u128::from_le_bytes(c[16 * k..16 * k + 16].try_into().unwrap())),
            }
        }));
        let r = self.eval_tables(instr, &tables, |_, _, _| {});
        self.tables = tables;
        r
    }

    /// Evaluates one step; `observe` sees every gate's output label and
    /// the row it fetched.
    pub fn eval_tables<F: FnMut(&Gate, u128, Option<u128>)>(
        &mut self,
        instr: &[u128; INSTR_BITS],
        tables: &[GarbledTable],
        observe: F,
    ) -> Result<(), GarbleError> {
        self.inputs.clear();
        self.inputs.extend_from_slice(instr);
        self.inputs.extend_from_slice(&self.state);
        crate::garble::evaluate_into(
            self.prp,
            &self.circ.netlist,
            &self.inputs,
            tables,
            self.circ.tweak_base(self.step),
            &mut self.wires,
            observe,
        )?;
        for (s, &w) in self.state.iter_mut().zip(self.circ.netlist.output_wires()) {
            *s = self.wires[w as usize];
        }
        self.step += 1;
        Ok(())
    }

    /// Decodes the output words; `Err(bit)` names the first output bit
    /// whose label matches neither entry.
    pub fn decode(&self, output: (u32, u32), entries: &[([u8; 16], [u8; 16])]) -> Result<Vec<u32>, usize> {
        let bits = self.circ.word_bits(output);
        let mut words = vec![0u32; output.1 as usize];
        for (k, (i, e)) in bits.zip(entries).enumerate() {
            let h = label_hash(self.state[i]);
            let v = if h == e.0 {
                0
            } else if h == e.1 {
                1
            } else {
                return Err(k);
            };
            words[k / 32] |= v << (k % 32);
        }
        Ok(words)
    }

    /// Digest of the received rows followed by the decode entries.
    pub fn finish_digest(&mut self, entries: &[([u8; 16], [u8; 16])]) -> Option<[u8; 32]> {
        let mut h = self.hasher.take()?;
        for (a, b) in entries {
            h.update(a);
            h.update(b);
        }
        Some(*h.finalize().as_bytes())
    }
}

/// Fixed-key permutation shared by every session.
pub fn default_prp() -> FixedKeyAes {
    FixedKeyAes::new()
}

impl std::fmt::Debug for StepCircuit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StepCircuit")
            .field("cfg", &self.cfg)
            .field("nonfree", &self.nonfree())
            .finish()
    }
}
