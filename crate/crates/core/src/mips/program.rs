//! Programs, the assembler and the disassembler.
//!
//! Assembly grammar, one item per line, `#` or `;` starts a comment:
//!
//! ```text
//! .config dmem=<W> mult=<on|off>     # defaults: dmem=256 mult=on
//! .input <base> <count>               # evaluator input words
//! .output <base> <count>              # words read back after HALT
//! .dmem <addr> <word> [<word> ...]    # garbler-private initial data
//! .word <value>                       # raw instruction word
//! label:
//! ADD rd, rs, rt      SLL rd, rt, shamt     JR rs     MULT rs, rt
//! MFLO rd             HALT
//! ADDI rt, rs, simm   ANDI rt, rs, uimm     LUI rt, uimm
//! LW rt, simm(rs)     SW rt, simm(rs)
//! BEQ rs, rt, label|offset                  J label|index
//! ```
//!
//! Numbers are decimal (optionally negative) or `0x` hex. Branch offsets
//! are relative to `pc + 1`; jump targets are absolute word indices.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use super::isa::{Instr, Op};
use super::machine::{CpuState, CpuStepConfig};
use super::MipsError;

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct MipsProgram {
    pub instructions: Vec<u32>,
    pub dmem_init_garbler: BTreeMap<u32, u32>,
    /// `(base, count)` in data words.
    pub evaluator_input_region: (u32, u32),
    pub output_region: (u32, u32),
    pub dmem_words: usize,
    pub include_mult: bool,
}

impl MipsProgram {
    pub fn new(dmem_words: usize) -> MipsProgram {
        MipsProgram {
            dmem_words,
            include_mult: true,
            ..MipsProgram::default()
        }
    }

    pub fn step_config(&self) -> CpuStepConfig {
        CpuStepConfig {
            dmem_words: self.dmem_words,
            include_mult: self.include_mult,
            trace_hooks: false,
        }
    }

    pub fn validate(&self) -> Result<(), MipsError> {
        self.step_config().validate()?;
        let w = self.dmem_words as u64;
        let region_ok = |(b, c): (u32, u32)| b as u64 + c as u64 <= w;
        if !region_ok(self.evaluator_input_region) {
            return Err(MipsError::Region(format!(
                "input region {:?} exceeds {w} words",
                self.evaluator_input_region
            )));
        }
        if !region_ok(self.output_region) {
            return Err(MipsError::Region(format!(
                "output region {:?} exceeds {w} words",
                self.output_region
            )));
        }
        let (ib, ic) = self.evaluator_input_region;
        for &a in self.dmem_init_garbler.keys() {
            if a as u64 >= w {
                return Err(MipsError::Region(format!(
                    "garbler data at {a} exceeds {w} words"
                )));
            }
            if a >= ib && a < ib + ic {
                return Err(MipsError::Region(format!(
                    "garbler data at {a} overlaps the input region"
                )));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self, input_words: &[u32]) -> Result<CpuState, MipsError> {
        self.validate()?;
        let (base, count) = self.evaluator_input_region;
        if input_words.len() != count as usize {
            return Err(MipsError::Length {
                what: "input words",
                expected: count as usize,
                got: input_words.len(),
            });
        }
        let mut s = CpuState::reset(&self.step_config());
        for (&a, &v) in &self.dmem_init_garbler {
            s.dmem[a as usize] = v;
        }
        s.dmem[base as usize..(base + count) as usize].copy_from_slice(input_words);
        Ok(s)
    }

    pub fn read_output(&self, s: &CpuState) -> Vec<u32> {
        let (b, c) = self.output_region;
        s.dmem[b as usize..(b + c) as usize].to_vec()
    }
}

fn parse_num(tok: &str) -> Option<i64> {
    let (neg, body) = match tok.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, tok),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16).ok()?
    } else {
        body.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

struct Line {
    no: usize,
}

impl Line {
    fn err(&self, message: impl Into<String>) -> MipsError {
        MipsError::Asm {
            line: self.no,
            message: message.into(),
        }
    }

    fn num(&self, tok: &str, lo: i64, hi: i64) -> Result<i64, MipsError> {
        let v = parse_num(tok).ok_or_else(|| self.err(format!("bad number `{tok}`")))?;
        if v < lo || v > hi {
            return Err(self.err(format!("value {v} out of range {lo}..={hi}")));
        }
        Ok(v)
    }

    fn reg(&self, tok: &str) -> Result<usize, MipsError> {
        tok.strip_prefix('r')
            .or_else(|| tok.strip_prefix('$'))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n < 32)
            .ok_or_else(|| self.err(format!("bad register `{tok}`")))
    }
}

fn operands(s: &str) -> Vec<&str> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .collect()
}

/// Parses assembly text.
pub fn assemble(text: &str) -> Result<MipsProgram, MipsError> {
    let mut prog = MipsProgram::new(256);
    let mut labels: HashMap<String, u32> = HashMap::new();
    let mut body: Vec<(Line, &str, &str)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let no = idx + 1;
        let mut rest = raw.split(['#', ';']).next().unwrap_or("").trim();
        // Leading labels.
        while let Some(colon) = rest.find(':') {
            let name = rest[..colon].trim();
            if name.is_empty()
                || !name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.')
                || name.starts_with('.')
            {
                break;
            }
            if labels
                .insert(name.to_string(), body.len() as u32)
                .is_some()
            {
                return Err(MipsError::Asm {
                    line: no,
                    message: format!("duplicate label `{name}`"),
                });
            }
            rest = rest[colon + 1..].trim();
        }
        if rest.is_empty() {
            continue;
        }
        let line = Line { no };
        let (head, tail) = match rest.find(char::is_whitespace) {
            Some(p) => (&rest[..p], rest[p..].trim()),
            None => (rest, ""),
        };
        if let Some(dir) = head.strip_prefix('.') {
            let args: Vec<&str> = tail.split_whitespace().collect();
            match dir {
                "config" => {
                    for a in args {
                        let (k, v) = a
                            .split_once('=')
                            .ok_or_else(|| line.err(format!("bad config item `{a}`")))?;
                        match k {
                            "dmem" => prog.dmem_words = line.num(v, 1, 1 << 20)? as usize,
                            "mult" => {
                                prog.include_mult = match v {
                                    "on" => true,
                                    "off" => false,
                                    _ => return Err(line.err(format!("bad mult `{v}`"))),
                                }
                            }
                            _ => return Err(line.err(format!("unknown config key `{k}`"))),
                        }
                    }
                }
                "input" | "output" => {
                    if args.len() != 2 {
                        return Err(line.err(format!(".{dir} takes <base> <count>")));
                    }
                    let r = (
                        line.num(args[0], 0, u32::MAX as i64)? as u32,
                        line.num(args[1], 0, u32::MAX as i64)? as u32,
                    );
                    if dir == "input" {
                        prog.evaluator_input_region = r;
                    } else {
                        prog.output_region = r;
                    }
                }
                "dmem" => {
                    if args.len() < 2 {
                        return Err(line.err(".dmem takes <addr> <word>..."));
                    }
                    let base = line.num(args[0], 0, u32::MAX as i64)? as u32;
                    for (k, a) in args[1..].iter().enumerate() {
                        let v = line.num(a, i32::MIN as i64, u32::MAX as i64)? as u32;
                        prog.dmem_init_garbler.insert(base + k as u32, v);
                    }
                }
                "word" => {
                    line.num(tail, 0, u32::MAX as i64)?;
                    body.push((line, ".word", tail));
                }
                _ => return Err(line.err(format!("unknown directive `.{dir}`"))),
            }
            continue;
        }
        body.push((line, head, tail));
    }

    for (pc, (line, head, tail)) in body.iter().enumerate() {
        let word = if *head == ".word" {
            line.num(tail, 0, u32::MAX as i64)? as u32
        } else {
            encode_line(line, head, tail, pc as u32, &labels)?
        };
        prog.instructions.push(word);
    }
    prog.validate()?;
    Ok(prog)
}

fn encode_line(
    line: &Line,
    head: &str,
    tail: &str,
    pc: u32,
    labels: &HashMap<String, u32>,
) -> Result<u32, MipsError> {
    let op = Op::from_mnemonic(head)
        .ok_or_else(|| line.err(format!("unknown mnemonic `{head}`")))?;
    let ops = operands(tail);
    let want = |n: usize| -> Result<(), MipsError> {
        if ops.len() == n {
            Ok(())
        } else {
            Err(line.err(format!("{op} takes {n} operands, got {}", ops.len())))
        }
    };
    let simm = |t: &str| line.num(t, -32768, 32767).map(|v| v as u32);
    let uimm = |t: &str| line.num(t, 0, 0xFFFF).map(|v| v as u32);
    let target = |t: &str| -> Result<u32, MipsError> {
        match labels.get(t) {
            Some(&l) => Ok(l),
            None => line.num(t, 0, (1 << 26) - 1).map(|v| v as u32),
        }
    };
    let w = match op {
        Op::Add
        | Op::Addu
        | Op::Sub
        | Op::And
        | Op::Or
        | Op::Xor
        | Op::Nor
        | Op::Slt
        | Op::Sltu => {
            want(3)?;
            Instr::r(op, line.reg(ops[0])?, line.reg(ops[1])?, line.reg(ops[2])?, 0)
        }
        Op::Sll | Op::Srl | Op::Sra => {
            want(3)?;
            let sh = line.num(ops[2], 0, 31)? as u32;
            Instr::r(op, line.reg(ops[0])?, 0, line.reg(ops[1])?, sh)
        }
        Op::Jr => {
            want(1)?;
            Instr::r(op, 0, line.reg(ops[0])?, 0, 0)
        }
        Op::Mult => {
            want(2)?;
            Instr::r(op, 0, line.reg(ops[0])?, line.reg(ops[1])?, 0)
        }
        Op::Mflo => {
            want(1)?;
            Instr::r(op, line.reg(ops[0])?, 0, 0, 0)
        }
        Op::Halt => {
            want(0)?;
            Instr::halt()
        }
        Op::Addi | Op::Addiu | Op::Slti => {
            want(3)?;
            Instr::i(op, line.reg(ops[0])?, line.reg(ops[1])?, simm(ops[2])?)
        }
        Op::Andi | Op::Ori | Op::Xori => {
            want(3)?;
            Instr::i(op, line.reg(ops[0])?, line.reg(ops[1])?, uimm(ops[2])?)
        }
        Op::Lui => {
            want(2)?;
            Instr::i(op, line.reg(ops[0])?, 0, uimm(ops[1])?)
        }
        Op::Lw | Op::Sw => {
            want(2)?;
            let m = ops[1];
            let open = m
                .find('(')
                .filter(|_| m.ends_with(')'))
                .ok_or_else(|| line.err(format!("expected offset(base), got `{m}`")))?;
            let off = if open == 0 { 0 } else { simm(m[..open].trim())? };
            let base = line.reg(m[open + 1..m.len() - 1].trim())?;
            Instr::i(op, line.reg(ops[0])?, base, off)
        }
        Op::Beq | Op::Bne => {
            want(3)?;
            let off = match labels.get(ops[2]) {
                Some(&l) => {
                    let d = l as i64 - (pc as i64 + 1);
                    if !(-32768..=32767).contains(&d) {
                        return Err(line.err(format!("branch to `{}` out of range", ops[2])));
                    }
                    d as u32
                }
                None => simm(ops[2])?,
            };
            Instr::i(op, line.reg(ops[1])?, line.reg(ops[0])?, off)
        }
        Op::J | Op::Jal => {
            want(1)?;
            Instr::j(op, target(ops[0])?)
        }
    };
    Ok(w.0)
}

/// Canonical text of one instruction word, or `None` if the word is not the
/// canonical encoding of any supported instruction.
pub fn disassemble_word(word: u32) -> Option<String> {
    let i = Instr(word);
    let op = i.op()?;
    let text = match op {
        Op::Add
        | Op::Addu
        | Op::Sub
        | Op::And
        | Op::Or
        | Op::Xor
        | Op::Nor
        | Op::Slt
        | Op::Sltu => format!("{op} r{}, r{}, r{}", i.rd(), i.rs(), i.rt()),
        Op::Sll | Op::Srl | Op::Sra => format!("{op} r{}, r{}, {}", i.rd(), i.rt(), i.shamt()),
        Op::Jr => format!("JR r{}", i.rs()),
        Op::Mult => format!("MULT r{}, r{}", i.rs(), i.rt()),
        Op::Mflo => format!("MFLO r{}", i.rd()),
        Op::Halt => "HALT".to_string(),
        Op::Addi | Op::Addiu | Op::Slti => {
            format!("{op} r{}, r{}, {}", i.rt(), i.rs(), i.simm())
        }
        Op::Andi | Op::Ori | Op::Xori => {
            format!("{op} r{}, r{}, 0x{:x}", i.rt(), i.rs(), i.imm16())
        }
        Op::Lui => format!("LUI r{}, 0x{:x}", i.rt(), i.imm16()),
        Op::Lw | Op::Sw => format!("{op} r{}, {}(r{})", i.rt(), i.simm(), i.rs()),
        Op::Beq | Op::Bne => format!("{op} r{}, r{}, {}", i.rs(), i.rt(), i.simm()),
        Op::J | Op::Jal => format!("{op} {}", i.target26()),
    };
    // Only claim the mnemonic form if it re-encodes to the same word.
    let line = Line { no: 0 };
    let (head, tail) = text.split_once(' ').unwrap_or((&text, ""));
    match encode_line(&line, head, tail, 0, &HashMap::new()) {
        Ok(w) if w == word => Some(text),
        _ => None,
    }
}

/// Canonical program text; `assemble(disassemble(p)) == p`.
pub fn disassemble(p: &MipsProgram) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        ".config dmem={} mult={}",
        p.dmem_words,
        if p.include_mult { "on" } else { "off" }
    );
    let _ = writeln!(
        s,
        ".input {} {}",
        p.evaluator_input_region.0, p.evaluator_input_region.1
    );
    let _ = writeln!(s, ".output {} {}", p.output_region.0, p.output_region.1);
    // Runs of consecutive addresses, at most eight words per line.
    let mut run: Vec<(u32, u32)> = Vec::new();
    let flush = |s: &mut String, run: &mut Vec<(u32, u32)>| {
        if let Some(&(a, _)) = run.first() {
            let _ = write!(s, ".dmem {a}");
            for (_, v) in run.iter() {
                let _ = write!(s, " 0x{v:08x}");
            }
            s.push('\n');
        }
        run.clear();
    };
    for (&a, &v) in &p.dmem_init_garbler {
        let contiguous = run.last().is_some_and(|&(la, _)| la + 1 == a);
        if !contiguous || run.len() == 8 {
            flush(&mut s, &mut run);
        }
        run.push((a, v));
    }
    flush(&mut s, &mut run);
    for &w in &p.instructions {
        match disassemble_word(w) {
            Some(t) => s.push_str(&t),
            None => {
                let _ = write!(s, ".word 0x{w:08x}");
            }
        }
        s.push('\n');
    }
    s
}
