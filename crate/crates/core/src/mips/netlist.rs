//! The combinational single-step CPU netlist.
//!
//! Inputs: 32 instruction bits (garbler block) followed by the state block
//! (evaluator block). Outputs: the next state block. Every unit is computed
//! on every step and results are selected with one-hot decode signals, so
//! the evaluated gate sequence never depends on data. Memories are read
//! through multiplexer trees and written through decoded enables.

use crate::circuit::{Bit, Builder, Netlist};

use super::isa::Op;
use super::machine::{layout, CpuStepConfig};
use super::MipsError;

pub type Word = Vec<Bit>;

pub fn const_word(v: u32) -> Word {
    (0..32).map(|i| Bit::Const((v >> i) & 1 == 1)).collect()
}

pub fn xor_w(b: &mut Builder, x: &[Bit], y: &[Bit]) -> Word {
    x.iter().zip(y).map(|(&p, &q)| b.xor(p, q)).collect()
}

pub fn and_w(b: &mut Builder, x: &[Bit], y: &[Bit]) -> Word {
    x.iter().zip(y).map(|(&p, &q)| b.and(p, q)).collect()
}

pub fn or_w(b: &mut Builder, x: &[Bit], y: &[Bit]) -> Word {
    x.iter().zip(y).map(|(&p, &q)| b.or(p, q)).collect()
}

pub fn not_w(b: &mut Builder, x: &[Bit]) -> Word {
    x.iter().map(|&p| b.not(p)).collect()
}

/// `x & s` bitwise with a scalar.
pub fn gate_w(b: &mut Builder, s: Bit, x: &[Bit]) -> Word {
    x.iter().map(|&p| b.and(s, p)).collect()
}

/// `s ? y : x`.
pub fn mux_w(b: &mut Builder, s: Bit, x: &[Bit], y: &[Bit]) -> Word {
    x.iter().zip(y).map(|(&p, &q)| b.mux(s, p, q)).collect()
}

/// Ripple-carry adder, one AND per bit.
pub fn add_w(b: &mut Builder, x: &[Bit], y: &[Bit], cin: Bit) -> (Word, Bit) {
    let mut c = cin;
    let mut sum = Vec::with_capacity(x.len());
    for (&p, &q) in x.iter().zip(y) {
        let pc = b.xor(p, c);
        let qc = b.xor(q, c);
        let s = b.xor(pc, q);
        let t = b.and(pc, qc);
        c = b.xor(c, t);
        sum.push(s);
    }
    (sum, c)
}

pub fn inc_w(b: &mut Builder, x: &[Bit]) -> Word {
    let mut c = Bit::ONE;
    x.iter()
        .map(|&p| {
            let s = b.xor(p, c);
            c = b.and(p, c);
            s
        })
        .collect()
}

pub fn or_reduce(b: &mut Builder, bits: &[Bit]) -> Bit {
    match bits.len() {
        0 => Bit::ZERO,
        1 => bits[0],
        n => {
            let (l, r) = bits.split_at(n / 2);
            let l = or_reduce(b, l);
            let r = or_reduce(b, r);
            b.or(l, r)
        }
    }
}

/// One-hot decoder: output `k` is set iff `sel` (LSB first) equals `k`.
pub fn decoder(b: &mut Builder, sel: &[Bit]) -> Vec<Bit> {
    let mut outs = vec![Bit::ONE];
    for (i, &s) in sel.iter().enumerate() {
        let half = 1 << i;
        let mut next = vec![Bit::ZERO; half * 2];
        for k in 0..half {
            let hi = b.and(outs[k], s);
            next[k | half] = hi;
            next[k] = b.xor(outs[k], hi);
        }
        outs = next;
    }
    outs
}

/// `items[sel]` through a binary multiplexer tree; `items.len()` must be
/// `2^sel.len()`.
pub fn mux_tree(b: &mut Builder, sel: &[Bit], items: &[Word]) -> Word {
    assert_eq!(items.len(), 1 << sel.len());
    let mut level: Vec<Word> = items.to_vec();
    for &s in sel {
        level = level
            .chunks(2)
            .map(|p| mux_w(b, s, &p[0], &p[1]))
            .collect();
    }
    level.pop().unwrap()
}

/// Logical/arithmetic right shift by a 5-bit amount, filling with `fill`.
pub fn shift_right(b: &mut Builder, x: &[Bit], amount: &[Bit], fill: Bit) -> Word {
    let mut y: Word = x.to_vec();
    for (k, &s) in amount.iter().enumerate() {
        let d = 1usize << k;
        let shifted: Word = (0..y.len())
            .map(|i| if i + d < y.len() { y[i + d] } else { fill })
            .collect();
        y = mux_w(b, s, &y, &shifted);
    }
    y
}

/// Low 32 bits of an array multiplier.
pub fn mul_low(b: &mut Builder, x: &[Bit], y: &[Bit]) -> Word {
    let n = x.len();
    let mut acc: Word = vec![Bit::ZERO; n];
    for (i, &yi) in y.iter().enumerate() {
        let pp: Word = (0..n - i).map(|j| b.and(x[j], yi)).collect();
        let (sum, _) = add_w(b, &acc[i..], &pp, Bit::ZERO);
        acc[i..].copy_from_slice(&sum);
    }
    acc
}

/// The bitwise unit for one logic op, shared with the step netlist.
pub fn logic_unit(b: &mut Builder, op: Op, x: &[Bit], y: &[Bit]) -> Word {
    match op {
        Op::And | Op::Andi => and_w(b, x, y),
        Op::Or | Op::Ori => or_w(b, x, y),
        Op::Xor | Op::Xori => xor_w(b, x, y),
        Op::Nor => {
            let o = or_w(b, x, y);
            not_w(b, &o)
        }
        _ => panic!("{op} is not a logic op"),
    }
}

/// A standalone 32-bit logic unit (`x op y`), for cost comparisons.
pub fn logic_unit_netlist(op: Op) -> Netlist {
    let mut b = Builder::new(32, 32);
    let x: Word = (0..32).map(|i| b.garbler_input(i)).collect();
    let y: Word = (0..32).map(|i| b.evaluator_input(i)).collect();
    let out = logic_unit(&mut b, op, &x, &y);
    b.finish(&out)
}

fn xor_all(b: &mut Builder, bits: &[Bit]) -> Bit {
    bits.iter().fold(Bit::ZERO, |acc, &x| b.xor(acc, x))
}

pub fn build_step_netlist(cfg: &CpuStepConfig) -> Result<Netlist, MipsError> {
    cfg.validate()?;
    let w_words = cfg.dmem_words;
    let state_bits = cfg.state_bits();
    let mut b = Builder::new(32, state_bits as u32);

    let instr: Word = (0..32).map(|i| b.garbler_input(i)).collect();
    let st = |b: &Builder, off: usize| -> Word {
        (0..32).map(|i| b.evaluator_input((off + i) as u32)).collect()
    };
    let pc = st(&b, layout::PC);
    let halted = b.evaluator_input(layout::HALTED as u32);
    let lo = st(&b, layout::LO);
    let mut regs: Vec<Word> = vec![const_word(0)];
    for r in 1..32 {
        regs.push(st(&b, layout::reg(r)));
    }
    let dmem: Vec<Word> = (0..w_words).map(|a| st(&b, layout::dmem(a))).collect();

    // Fields.
    let funct = &instr[0..6];
    let shamt = &instr[6..11];
    let rd = &instr[11..16];
    let rt = &instr[16..21];
    let rs = &instr[21..26];
    let opcode = &instr[26..32];
    let imm = &instr[0..16];
    let sext: Word = (0..32).map(|i| instr[i.min(15)]).collect();
    let zext: Word = (0..32).map(|i| if i < 16 { instr[i] } else { Bit::ZERO }).collect();
    let target: Word = (0..32).map(|i| if i < 26 { instr[i] } else { Bit::ZERO }).collect();

    // One-hot decode.
    let op_dec = decoder(&mut b, opcode);
    let funct_dec = decoder(&mut b, funct);
    let mut sig = std::collections::HashMap::new();
    for op in Op::ALL {
        let s = if !cfg.supports(op) {
            Bit::ZERO
        } else if let Some(f) = op.funct() {
            b.and(op_dec[0], funct_dec[f as usize])
        } else {
            op_dec[op.opcode() as usize]
        };
        sig.insert(op, s);
    }
    let is = |op: Op| sig[&op];
    let any = |b: &mut Builder, ops: &[Op]| {
        let bits: Vec<Bit> = ops.iter().map(|&o| is(o)).collect();
        xor_all(b, &bits)
    };
    let active = b.not(halted);

    // Register reads.
    let rs_val = mux_tree(&mut b, rs, &regs);
    let rt_val = mux_tree(&mut b, rt, &regs);

    // Adder shared by arithmetic, compares and address generation.
    let imm_arith = any(&mut b, &[Op::Addi, Op::Addiu, Op::Slti, Op::Lw, Op::Sw]);
    let invert = any(&mut b, &[Op::Sub, Op::Slt, Op::Sltu, Op::Slti]);
    let opnd = mux_w(&mut b, imm_arith, &rt_val, &sext);
    let opnd_x: Word = opnd.iter().map(|&p| b.xor(p, invert)).collect();
    let (sum, carry) = add_w(&mut b, &rs_val, &opnd_x, invert);
    let sign_diff = b.xor(rs_val[31], opnd[31]);
    let slt = b.mux(sign_diff, sum[31], rs_val[31]);
    let sltu = b.not(carry);

    // Logic.
    let logic_imm = any(&mut b, &[Op::Andi, Op::Ori, Op::Xori]);
    let lopnd = mux_w(&mut b, logic_imm, &rt_val, &zext);
    let and_r = logic_unit(&mut b, Op::And, &rs_val, &lopnd);
    let or_r = logic_unit(&mut b, Op::Or, &rs_val, &lopnd);
    let xor_r = logic_unit(&mut b, Op::Xor, &rs_val, &lopnd);
    let nor_r = logic_unit(&mut b, Op::Nor, &rs_val, &lopnd);

    // Shifter: SLL runs through the right shifter on bit-reversed data.
    let is_sll = is(Op::Sll);
    let rev: Word = rt_val.iter().rev().copied().collect();
    let sh_in = mux_w(&mut b, is_sll, &rt_val, &rev);
    let fill = b.and(is(Op::Sra), rt_val[31]);
    let sh = shift_right(&mut b, &sh_in, shamt, fill);
    let sh_rev: Word = sh.iter().rev().copied().collect();
    let shift_r = mux_w(&mut b, is_sll, &sh, &sh_rev);

    let lui_r: Word = (0..32).map(|i| if i < 16 { Bit::ZERO } else { imm[i - 16] }).collect();

    // Data memory read.
    let addr = &sum[..cfg.addr_bits()];
    let lw_r = mux_tree(&mut b, addr, &dmem);

    let pc1 = inc_w(&mut b, &pc);

    // Register write data: one-hot selection combined by XOR.
    let sel_word = |b: &mut Builder, ops: &[Op], value: &Word| -> (Bit, Word) {
        let s = any(b, ops);
        (s, gate_w(b, s, value))
    };
    let mut slt_word = const_word(0);
    slt_word[0] = slt;
    let mut sltu_word = const_word(0);
    sltu_word[0] = sltu;
    let mut candidates = vec![
        sel_word(&mut b, &[Op::Add, Op::Addu, Op::Sub, Op::Addi, Op::Addiu], &sum),
        sel_word(&mut b, &[Op::Slt, Op::Slti], &slt_word),
        sel_word(&mut b, &[Op::Sltu], &sltu_word),
        sel_word(&mut b, &[Op::And, Op::Andi], &and_r),
        sel_word(&mut b, &[Op::Or, Op::Ori], &or_r),
        sel_word(&mut b, &[Op::Xor, Op::Xori], &xor_r),
        sel_word(&mut b, &[Op::Nor], &nor_r),
        sel_word(&mut b, &[Op::Sll, Op::Srl, Op::Sra], &shift_r),
        sel_word(&mut b, &[Op::Lui], &lui_r),
        sel_word(&mut b, &[Op::Lw], &lw_r),
        sel_word(&mut b, &[Op::Jal], &pc1),
    ];
    if cfg.include_mult {
        candidates.push(sel_word(&mut b, &[Op::Mflo], &lo));
    }
    let mut wdata = const_word(0);
    let mut writes = Bit::ZERO;
    for (s, v) in &candidates {
        wdata = xor_w(&mut b, &wdata, v);
        writes = b.xor(writes, *s);
    }
    let reg_we = b.and(writes, active);

    // Destination: rd for R-type, rt for I-type, r31 for JAL.
    let r_dest = any(
        &mut b,
        &[
            Op::Add,
            Op::Addu,
            Op::Sub,
            Op::And,
            Op::Or,
            Op::Xor,
            Op::Nor,
            Op::Slt,
            Op::Sltu,
            Op::Sll,
            Op::Srl,
            Op::Sra,
            Op::Mflo,
        ],
    );
    let dest = mux_w(&mut b, r_dest, rt, rd);
    let dest = mux_w(&mut b, is(Op::Jal), &dest, &[Bit::ONE; 5]);
    let dest_dec = decoder(&mut b, &dest);
    let mut new_regs = Vec::with_capacity(31);
    for r in 1..32 {
        let en = b.and(dest_dec[r], reg_we);
        new_regs.push(mux_w(&mut b, en, &regs[r], &wdata));
    }

    // Data memory write.
    let mem_we = b.and(is(Op::Sw), active);
    let addr_dec = decoder(&mut b, addr);
    let mut new_dmem = Vec::with_capacity(w_words);
    for (a, word) in dmem.iter().enumerate() {
        let en = b.and(addr_dec[a], mem_we);
        new_dmem.push(mux_w(&mut b, en, word, &rt_val));
    }

    // LO.
    let new_lo = if cfg.include_mult {
        let product = mul_low(&mut b, &rs_val, &rt_val);
        let lo_we = b.and(is(Op::Mult), active);
        mux_w(&mut b, lo_we, &lo, &product)
    } else {
        lo.clone()
    };

    // Next PC.
    let (btarget, _) = add_w(&mut b, &pc1, &sext, Bit::ZERO);
    let diff = xor_w(&mut b, &rs_val, &rt_val);
    let ne = or_reduce(&mut b, &diff);
    let eq = b.not(ne);
    let t_eq = b.and(is(Op::Beq), eq);
    let t_ne = b.and(is(Op::Bne), ne);
    let taken = b.xor(t_eq, t_ne);
    let jump = any(&mut b, &[Op::J, Op::Jal]);
    let stay = b.or(halted, is(Op::Halt));
    let npc = mux_w(&mut b, taken, &pc1, &btarget);
    let npc = mux_w(&mut b, jump, &npc, &target);
    let npc = mux_w(&mut b, is(Op::Jr), &npc, &rs_val);
    let new_pc = mux_w(&mut b, stay, &npc, &pc);

    let mut outputs = Vec::with_capacity(state_bits);
    outputs.extend(new_pc);
    outputs.push(stay);
    outputs.extend(new_lo);
    for r in new_regs {
        outputs.extend(r);
    }
    for w in new_dmem {
        outputs.extend(w);
    }
    debug_assert_eq!(outputs.len(), state_bits);
    Ok(b.finish(&outputs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mips::machine::{read_word, word_bits};

    fn eval_words(n: &Netlist, g: &[u32], e: &[u32]) -> Vec<u32> {
        let gb: Vec<bool> = g.iter().flat_map(|&w| word_bits(w)).collect();
        let eb: Vec<bool> = e.iter().flat_map(|&w| word_bits(w)).collect();
        n.eval_plain(&gb, &eb)
            .unwrap()
            .chunks(32)
            .map(read_word)
            .collect()
    }

    fn binop(f: impl Fn(&mut Builder, &[Bit], &[Bit]) -> Word) -> Netlist {
        let mut b = Builder::new(32, 32);
        let x: Word = (0..32).map(|i| b.garbler_input(i)).collect();
        let y: Word = (0..32).map(|i| b.evaluator_input(i)).collect();
        let o = f(&mut b, &x, &y);
        b.finish(&o)
    }

    #[test]
    fn adder_and_multiplier() {
        let add = binop(|b, x, y| add_w(b, x, y, Bit::ZERO).0);
        let mul = binop(mul_low);
        for &(x, y) in &[(0u32, 0u32), (1, u32::MAX), (0xDEAD_BEEF, 0x1234_5678), (7, 9)] {
            assert_eq!(eval_words(&add, &[x], &[y]), vec![x.wrapping_add(y)]);
            assert_eq!(eval_words(&mul, &[x], &[y]), vec![x.wrapping_mul(y)]);
        }
    }

    #[test]
    fn shifter() {
        let n = binop(|b, x, y| shift_right(b, x, &y[..5], x[31]));
        for &(x, s) in &[(0x8000_0000u32, 4u32), (0x1234_5678, 31), (0xFFFF_0000, 0)] {
            assert_eq!(eval_words(&n, &[x], &[s]), vec![((x as i32) >> s) as u32]);
        }
    }

    #[test]
    fn decoder_is_one_hot() {
        let mut b = Builder::new(3, 0);
        let sel: Vec<Bit> = (0..3).map(|i| b.garbler_input(i)).collect();
        let outs = decoder(&mut b, &sel);
        let n = b.finish(&outs);
        for v in 0..8usize {
            let bits: Vec<bool> = (0..3).map(|i| (v >> i) & 1 == 1).collect();
            let y = n.eval_plain(&bits, &[]).unwrap();
            assert_eq!(y.iter().filter(|&&x| x).count(), 1);
            assert!(y[v]);
        }
    }

    #[test]
    fn shape_at_w16() {
        let cfg = CpuStepConfig::new(16);
        let n = build_step_netlist(&cfg).unwrap();
        assert!(n.validate().is_ok());
        assert_eq!(n.n_garbler_inputs(), 32);
        assert_eq!(n.n_evaluator_inputs(), cfg.state_bits());
        assert_eq!(n.n_outputs(), cfg.state_bits());
    }

    #[test]
    fn xor_path_is_free() {
        let xor = logic_unit_netlist(Op::Xor).count_gates();
        let and = logic_unit_netlist(Op::And).count_gates();
        assert_eq!(xor.nonfree, 0);
        assert!(and.nonfree > xor.nonfree);
    }
}
