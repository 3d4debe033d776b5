//! Shared test oracles: a second MIPS interpreter written straight from the
//! encoding table, random machine-state generators, a bit-sliced
//! emulator-vs-netlist checker and random netlists with their own evaluator.
#![allow(dead_code)]

use hwgn2::circuit::{Gate, GateKind, Netlist};
use hwgn2::mips::{CpuState, CpuStepConfig};
use rand::Rng;

/// Minimal interpreter over raw fields. Independent of `hwgn2::mips`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RefCpu {
    pub pc: u32,
    pub r: [u32; 32],
    pub lo: u32,
    pub mem: Vec<u32>,
    pub halted: bool,
    pub mult: bool,
}

impl RefCpu {
    pub fn from_state(s: &CpuState, mult: bool) -> RefCpu {
        RefCpu {
            pc: s.pc,
            r: s.regs,
            lo: s.lo,
            mem: s.dmem.clone(),
            halted: s.halted,
            mult,
        }
    }

    pub fn to_state(&self) -> CpuState {
        CpuState {
            pc: self.pc,
            regs: self.r,
            lo: self.lo,
            dmem: self.mem.clone(),
            halted: self.halted,
        }
    }

    /// `Err` on an encoding outside the subset or a bad address.
    pub fn exec(&mut self, w: u32) -> Result<(), String> {
        if self.halted {
            return Ok(());
        }
        let op = w >> 26;
        let rs = ((w >> 21) & 31) as usize;
        let rt = ((w >> 16) & 31) as usize;
        let rd = ((w >> 11) & 31) as usize;
        let sh = (w >> 6) & 31;
        let funct = w & 63;
        let imm = w & 0xFFFF;
        let simm = imm as u16 as i16 as i32 as u32;
        let a = self.r[rs];
        let b = self.r[rt];
        let next = self.pc.wrapping_add(1);
        let mut pc = next;
        let mut dst: Option<(usize, u32)> = None;
        match op {
            0 => match funct {
                0x00 => dst = Some((rd, b << sh)),
                0x02 => dst = Some((rd, b >> sh)),
                0x03 => dst = Some((rd, ((b as i32) >> sh) as u32)),
                0x08 => pc = a,
                0x12 if self.mult => dst = Some((rd, self.lo)),
                0x18 if self.mult => self.lo = (a as u64 * b as u64) as u32,
                0x20 | 0x21 => dst = Some((rd, a.wrapping_add(b))),
                0x22 => dst = Some((rd, a.wrapping_sub(b))),
                0x24 => dst = Some((rd, a & b)),
                0x25 => dst = Some((rd, a | b)),
                0x26 => dst = Some((rd, a ^ b)),
                0x27 => dst = Some((rd, !(a | b))),
                0x2A => dst = Some((rd, ((a as i32) < (b as i32)) as u32)),
                0x2B => dst = Some((rd, (a < b) as u32)),
                0x3F => {
                    self.halted = true;
                    pc = self.pc;
                }
                _ => return Err(format!("funct {funct:#x}")),
            },
            0x02 => pc = w & 0x03FF_FFFF,
            0x03 => {
                dst = Some((31, next));
                pc = w & 0x03FF_FFFF;
            }
            0x04 if a == b => pc = next.wrapping_add(simm),
            0x05 if a != b => pc = next.wrapping_add(simm),
            0x04 | 0x05 => {}
            0x08 | 0x09 => dst = Some((rt, a.wrapping_add(simm))),
            0x0A => dst = Some((rt, ((a as i32) < (simm as i32)) as u32)),
            0x0C => dst = Some((rt, a & imm)),
            0x0D => dst = Some((rt, a | imm)),
            0x0E => dst = Some((rt, a ^ imm)),
            0x0F => dst = Some((rt, imm << 16)),
            0x23 | 0x2B => {
                let addr = a.wrapping_add(simm) as usize;
                if addr >= self.mem.len() {
                    return Err(format!("address {addr}"));
                }
                if op == 0x23 {
                    dst = Some((rt, self.mem[addr]));
                } else {
                    self.mem[addr] = b;
                }
            }
            _ => return Err(format!("opcode {op:#x}")),
        }
        if let Some((d, v)) = dst {
            if d != 0 {
                self.r[d] = v;
            }
        }
        self.pc = pc;
        Ok(())
    }
}

/// (opcode, funct) of every supported instruction; funct is ignored for
/// non-zero opcodes.
pub const ENCODINGS: [(u32, u32); 29] = [
    (0, 0x00),
    (0, 0x02),
    (0, 0x03),
    (0, 0x08),
    (0, 0x12),
    (0, 0x18),
    (0, 0x20),
    (0, 0x21),
    (0, 0x22),
    (0, 0x24),
    (0, 0x25),
    (0, 0x26),
    (0, 0x27),
    (0, 0x2A),
    (0, 0x2B),
    (0, 0x3F),
    (0x02, 0),
    (0x03, 0),
    (0x04, 0),
    (0x05, 0),
    (0x08, 0),
    (0x09, 0),
    (0x0A, 0),
    (0x0C, 0),
    (0x0D, 0),
    (0x0E, 0),
    (0x0F, 0),
    (0x23, 0),
    (0x2B, 0),
];

fn interesting_word(rng: &mut impl Rng) -> u32 {
    match rng.gen_range(0..6) {
        0 => 0,
        1 => u32::MAX,
        2 => 1 << rng.gen_range(0..32),
        3 => rng.gen_range(0..64),
        4 => (rng.gen_range(-64i32..64)) as u32,
        _ => rng.gen(),
    }
}

pub fn random_state(rng: &mut impl Rng, cfg: &CpuStepConfig) -> CpuState {
    let mut s = CpuState::reset(cfg);
    s.pc = if rng.gen_bool(0.5) {
        rng.gen_range(0..1024)
    } else {
        rng.gen()
    };
    s.lo = interesting_word(rng);
    for r in 1..32 {
        s.regs[r] = interesting_word(rng);
    }
    for w in s.dmem.iter_mut() {
        *w = rng.gen();
    }
    s.halted = rng.gen_bool(0.05);
    s
}

/// An instruction word with the given encoding and random free fields.
/// Memory operations get a base register arranged so the address is in
/// range; the state is adjusted accordingly.
pub fn random_instr(
    rng: &mut impl Rng,
    cfg: &CpuStepConfig,
    s: &mut CpuState,
    (op, funct): (u32, u32),
) -> u32 {
    let mut w: u32 = rng.gen();
    w = (w & 0x03FF_FFFF) | (op << 26);
    if op == 0 {
        w = (w & !63) | funct;
    }
    if rng.gen_bool(0.2) {
        // Make rs and rt coincide to exercise equal-operand paths.
        let rs = (w >> 21) & 31;
        w = (w & !(31 << 16)) | (rs << 16);
    }
    if op == 0x23 || op == 0x2B {
        let rs = ((w >> 21) & 31) as usize;
        let addr = rng.gen_range(0..cfg.dmem_words as u32);
        let simm = (w & 0xFFFF) as u16 as i16 as i32 as u32;
        if rs == 0 {
            w = (w & !0xFFFF) | addr;
        } else {
            s.regs[rs] = addr.wrapping_sub(simm);
        }
    }
    w
}

pub fn random_case(rng: &mut impl Rng, cfg: &CpuStepConfig) -> (CpuState, u32) {
    let mut s = random_state(rng, cfg);
    let encodings: Vec<(u32, u32)> = ENCODINGS
        .iter()
        .copied()
        .filter(|&(op, f)| cfg.include_mult || !(op == 0 && (f == 0x12 || f == 0x18)))
        .collect();
    let enc = encodings[rng.gen_range(0..encodings.len())];
    let w = random_instr(rng, cfg, &mut s, enc);
    (s, w)
}

/// One hand-picked vector per supported encoding.
pub fn directed_cases(cfg: &CpuStepConfig) -> Vec<(CpuState, u32)> {
    let mut base = CpuState::reset(cfg);
    base.pc = 10;
    base.regs[1] = 0x8000_0001;
    base.regs[2] = 0x0000_0007;
    base.regs[3] = 5;
    base.regs[4] = 0xFFFF_FFF0;
    base.lo = 0x1234_5678;
    for (a, w) in base.dmem.iter_mut().enumerate() {
        *w = (a as u32).wrapping_mul(0x9E37_79B9);
    }
    let r = |f: u32, rd: u32, rs: u32, rt: u32, sh: u32| rs << 21 | rt << 16 | rd << 11 | sh << 6 | f;
    let i = |op: u32, rt: u32, rs: u32, imm: u32| op << 26 | rs << 21 | rt << 16 | (imm & 0xFFFF);
    let words = [
        r(0x00, 5, 0, 1, 4),
        r(0x02, 5, 0, 1, 4),
        r(0x03, 5, 0, 1, 4),
        r(0x08, 0, 3, 0, 0),
        r(0x12, 6, 0, 0, 0),
        r(0x18, 0, 1, 2, 0),
        r(0x20, 7, 1, 2, 0),
        r(0x21, 7, 1, 4, 0),
        r(0x22, 7, 2, 1, 0),
        r(0x24, 8, 1, 2, 0),
        r(0x25, 8, 1, 2, 0),
        r(0x26, 8, 1, 2, 0),
        r(0x27, 8, 1, 2, 0),
        r(0x2A, 9, 1, 2, 0),
        r(0x2B, 9, 1, 2, 0),
        r(0x3F, 0, 0, 0, 0),
        0x02 << 26 | 0x123,
        0x03 << 26 | 0x3FF_FFFF,
        i(0x04, 0, 0, 3),
        i(0x05, 2, 1, (-4i32) as u32),
        i(0x08, 1, 0, 5),
        i(0x09, 10, 4, 0x8000),
        i(0x0A, 11, 1, 0xFFFF),
        i(0x0C, 12, 1, 0xF0F0),
        i(0x0D, 12, 1, 0xF0F0),
        i(0x0E, 12, 1, 0xF0F0),
        i(0x0F, 13, 0, 0xBEEF),
        i(0x23, 14, 3, 2),
        i(0x2B, 2, 3, (cfg.dmem_words as u32 - 6) & 0xFFFF),
    ];
    words
        .iter()
        .filter(|&&w| {
            cfg.include_mult || !(w >> 26 == 0 && matches!(w & 63, 0x12 | 0x18))
        })
        .map(|&w| (base.clone(), w))
        .collect()
}

/// Evaluates the step netlist on up to 64 cases at once per pass and
/// returns the next states it computes.
pub fn netlist_steps(net: &Netlist, cases: &[(CpuState, u32)]) -> Vec<CpuState> {
    let mut out = Vec::with_capacity(cases.len());
    for chunk in cases.chunks(64) {
        let mut g = vec![0u64; 32];
        let mut e = vec![0u64; net.n_evaluator_inputs()];
        for (lane, (s, w)) in chunk.iter().enumerate() {
            for (bit, slot) in g.iter_mut().enumerate() {
                *slot |= (((w >> bit) & 1) as u64) << lane;
            }
            for (bit, v) in s.to_bits().into_iter().enumerate() {
                e[bit] |= (v as u64) << lane;
            }
        }
        let y = net.eval_plain_packed(&g, &e).expect("eval");
        for lane in 0..chunk.len() {
            let bits: Vec<bool> = y.iter().map(|v| (v >> lane) & 1 == 1).collect();
            let words = chunk[0].0.dmem.len();
            out.push(
                CpuState::from_bits(&CpuStepConfig { dmem_words: words, ..Default::default() }, &bits)
                    .expect("state width"),
            );
        }
    }
    out
}

/// A valid random netlist: `n_in` inputs split at random between the
/// parties, `n_gates` gates over earlier wires, 1..=8 outputs.
pub fn random_netlist(rng: &mut impl Rng, n_in: u32, n_gates: u32) -> Netlist {
    let n_g = rng.gen_range(0..=n_in);
    let gates: Vec<Gate> = (0..n_gates)
        .map(|id| {
            let kind = GateKind::ALL[rng.gen_range(0..GateKind::ALL.len())];
            let avail = n_in + id;
            Gate {
                id,
                kind,
                in0: rng.gen_range(0..avail),
                in1: (!kind.is_unary()).then(|| rng.gen_range(0..avail)),
                out: avail,
            }
        })
        .collect();
    let n_wires = n_in + n_gates;
    let outputs = (0..rng.gen_range(1..=8)).map(|_| rng.gen_range(0..n_wires)).collect();
    Netlist::checked(n_g, n_in - n_g, gates, outputs).expect("generator builds valid netlists")
}

/// Truth-table evaluation keyed by gate name, independent of
/// `GateKind::eval`.
pub fn oracle_eval(n: &Netlist, x: &[bool]) -> Vec<bool> {
    let mut w = vec![false; n.n_wires()];
    w[..x.len()].copy_from_slice(x);
    for g in n.gates() {
        let a = w[g.in0 as usize] as usize;
        let b = g.in1.map_or(0, |i| w[i as usize] as usize);
        // Rows indexed by 2a + b.
        let table: [bool; 4] = match g.kind.name() {
            "AND" => [false, false, false, true],
            "OR" => [false, true, true, true],
            "XOR" => [false, true, true, false],
            "XNOR" => [true, false, false, true],
            "NAND" => [true, true, true, false],
            "NOR" => [true, false, false, false],
            "NOT" => [true, true, false, false],
            "BUF" => [false, false, true, true],
            k => panic!("unknown gate {k}"),
        };
        w[g.out as usize] = table[2 * a + b];
    }
    n.output_wires().iter().map(|&o| w[o as usize]).collect()
}

/// Input vector number `v` of `n` bits, bit `i` is input wire `i`.
pub fn input_vector(v: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| (v >> i) & 1 == 1).collect()
}
