//! Lowering of models to straight-line MIPS programs.
//!
//! Programs contain no branches, so the executed instruction sequence and
//! the step count depend only on the architecture. Every model-dependent
//! constant is loaded with a fixed-length sequence (one `ADDI` for a
//! weight, `LUI`+`ORI` for wider values), so two models of the same shape
//! compile to programs of the same length.
//!
//! MLP programs take inputs as unsigned bytes packed four per word (byte
//! `k` of word `i` is input `4i + k`), which covers pixel-like inputs in
//! `[0, 1)` and lets a 784-input network fit a 256-word memory. Weights are
//! instruction immediates, not data words: keeping them out of data memory
//! keeps the memory, and so every garbled step, small.
//!
//! BNN programs take inputs as bits packed 32 per word and compute
//! `popcount(w xor x)` with a SWAR shift-and-mask sequence, since the
//! subset has no popcount instruction and the BNN target omits the
//! multiplier.

use crate::mips::{CpuStepConfig, Instr, MipsProgram, Op};

use super::model::{Activation, BnnModel, MlpModel};
use super::{fixed, NnError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CompileOptions {
    /// Data-memory size; the smallest fitting power of two when `None`.
    pub dmem_words: Option<usize>,
}

const R_WORD: usize = 1;
const R_X: usize = 2;
const R_T: usize = 3;
const R_W: usize = 4;
const R_M: usize = 5;
const R_U: usize = 6;
const R_C: usize = 7;
const R_ACC: usize = 8;
const R_MAX: usize = 24;
const R_MIN: usize = 25;

const MLP_BLOCK: usize = 16;

#[derive(Default)]
struct Asm {
    code: Vec<u32>,
}

impl Asm {
    fn r(&mut self, op: Op, rd: usize, rs: usize, rt: usize) {
        self.code.push(Instr::r(op, rd, rs, rt, 0).0);
    }

    fn shift(&mut self, op: Op, rd: usize, rt: usize, sh: u32) {
        self.code.push(Instr::r(op, rd, 0, rt, sh).0);
    }

    fn i(&mut self, op: Op, rt: usize, rs: usize, imm: i32) {
        debug_assert!((-32768..=65535).contains(&imm));
        self.code.push(Instr::i(op, rt, rs, imm as u32).0);
    }

    /// Always two instructions.
    fn li32(&mut self, r: usize, v: u32) {
        self.i(Op::Lui, r, 0, (v >> 16) as i32);
        self.i(Op::Ori, r, r, (v & 0xFFFF) as i32);
    }

    fn zero(&mut self, r: usize) {
        self.r(Op::Addu, r, 0, 0);
    }

    /// `a = min(a, c)` for a constant held in `c`.
    fn min_reg(&mut self, a: usize, c: usize) {
        self.r(Op::Slt, R_M, a, c);
        self.r(Op::Sub, R_M, 0, R_M);
        self.r(Op::Xor, R_U, a, c);
        self.r(Op::And, R_U, R_U, R_M);
        self.r(Op::Xor, a, c, R_U);
    }

    /// `a = max(a, c)`.
    fn max_reg(&mut self, a: usize, c: usize) {
        self.r(Op::Slt, R_M, a, c);
        self.r(Op::Sub, R_M, 0, R_M);
        self.r(Op::Xor, R_U, a, c);
        self.r(Op::And, R_U, R_U, R_M);
        self.r(Op::Xor, a, a, R_U);
    }

    fn halt(&mut self) {
        self.code.push(Instr::halt().0);
    }
}

fn memory_size(required: usize, opts: CompileOptions) -> Result<usize, NnError> {
    let fit = required.next_power_of_two().max(16);
    if fit > 4096 {
        return Err(NnError::DmemOverflow { required: fit });
    }
    match opts.dmem_words {
        None => Ok(fit),
        Some(w) if w >= required => {
            CpuStepConfig::new(w)
                .validate()
                .map_err(|e| NnError::Config(e.to_string()))?;
            Ok(w)
        }
        Some(_) => Err(NnError::DmemOverflow { required: fit }),
    }
}

/// Worst-case accumulator magnitude must fit a signed 32-bit register.
fn check_accumulators(m: &MlpModel) -> Result<(), NnError> {
    let mut x_max: i64 = 255;
    for (l, layer) in m.layers.iter().enumerate() {
        for (o, (row, &b)) in layer.weights.iter().zip(&layer.biases).enumerate() {
            let bound = (b as i64).abs() * fixed::ONE as i64
                + row.iter().map(|&w| (w as i64).abs()).sum::<i64>() * x_max;
            if bound > i32::MAX as i64 {
                return Err(NnError::Accumulator { layer: l, neuron: o });
            }
        }
        x_max = layer.activation.max_abs();
    }
    Ok(())
}

pub fn mlp_input_words(n_inputs: usize) -> usize {
    n_inputs.div_ceil(4)
}

pub fn compile_mlp(m: &MlpModel, opts: CompileOptions) -> Result<MipsProgram, NnError> {
    m.validate()?;
    check_accumulators(m)?;
    let in_words = mlp_input_words(m.n_inputs());
    let mut bases = Vec::new();
    let mut next = in_words;
    for &n in &m.layer_sizes[1..] {
        bases.push(next);
        next += n;
    }
    let dmem_words = memory_size(next, opts)?;

    let mut a = Asm::default();
    a.i(Op::Addi, R_MAX, 0, fixed::MAX);
    a.i(Op::Addi, R_MIN, 0, fixed::MIN);
    for (l, layer) in m.layers.iter().enumerate() {
        let n_in = m.layer_sizes[l];
        let n_out = m.layer_sizes[l + 1];
        for block in (0..n_out).step_by(MLP_BLOCK) {
            let neurons = block..(block + MLP_BLOCK).min(n_out);
            for o in neurons.clone() {
                a.li32(R_ACC + o - block, ((layer.biases[o] as i64) << fixed::FRAC_BITS) as u32);
            }
            let mac = |a: &mut Asm, j: usize| {
                for o in neurons.clone() {
                    let acc = R_ACC + o - block;
                    a.i(Op::Addi, R_W, 0, layer.weights[o][j]);
                    a.r(Op::Mult, 0, R_X, R_W);
                    a.r(Op::Mflo, R_T, 0, 0);
                    a.r(Op::Addu, acc, acc, R_T);
                }
            };
            if l == 0 {
                for w in 0..in_words {
                    a.i(Op::Lw, R_WORD, 0, w as i32);
                    for k in 0..4 {
                        let j = 4 * w + k;
                        if j >= n_in {
                            break;
                        }
                        match k {
                            0 => a.i(Op::Andi, R_X, R_WORD, 0xFF),
                            3 => a.shift(Op::Srl, R_X, R_WORD, 24),
                            _ => {
                                a.shift(Op::Srl, R_X, R_WORD, 8 * k as u32);
                                a.i(Op::Andi, R_X, R_X, 0xFF);
                            }
                        }
                        mac(&mut a, j);
                    }
                }
            } else {
                let src = bases[l - 1];
                for j in 0..n_in {
                    a.i(Op::Lw, R_X, 0, (src + j) as i32);
                    mac(&mut a, j);
                }
            }
            for o in neurons {
                let acc = R_ACC + o - block;
                a.shift(Op::Sra, acc, acc, fixed::FRAC_BITS);
                a.min_reg(acc, R_MAX);
                a.max_reg(acc, R_MIN);
                match layer.activation {
                    Activation::Relu => a.max_reg(acc, 0),
                    Activation::HardSigmoid => {
                        a.shift(Op::Sra, acc, acc, 2);
                        a.i(Op::Addi, acc, acc, fixed::ONE / 2);
                        a.max_reg(acc, 0);
                        a.i(Op::Addi, R_C, 0, fixed::ONE);
                        a.min_reg(acc, R_C);
                    }
                    Activation::None => {}
                }
                a.i(Op::Sw, acc, 0, (bases[l] + o) as i32);
            }
        }
    }
    a.halt();

    Ok(MipsProgram {
        instructions: a.code,
        dmem_init_garbler: Default::default(),
        evaluator_input_region: (0, in_words as u32),
        output_region: (*bases.last().unwrap() as u32, m.n_outputs() as u32),
        dmem_words,
        include_mult: true,
    })
}

/// Packs inputs four bytes to a word; every input must lie in `0..=255`.
pub fn encode_mlp_input(x: &[i32]) -> Result<Vec<u32>, NnError> {
    if let Some((i, &v)) = x.iter().enumerate().find(|(_, &v)| !(0..=255).contains(&v)) {
        return Err(NnError::InputRange { index: i, value: v });
    }
    Ok(x.chunks(4)
        .map(|c| c.iter().enumerate().fold(0u32, |w, (k, &v)| w | (v as u32) << (8 * k)))
        .collect())
}

pub fn decode_output(words: &[u32]) -> Vec<i32> {
    words.iter().map(|&w| w as i32).collect()
}

const BNN_BLOCK: usize = 8;
const R_TOT: usize = R_ACC + BNN_BLOCK;
const R_BITS: usize = 24;
const R_M8: usize = 25;
/// Byte lanes hold at most 8 per word, so 31 words fit before folding.
const FOLD_EVERY: usize = 31;

pub fn bnn_words(n: usize) -> usize {
    n.div_ceil(32)
}

pub fn pack_bits(bits: &[bool]) -> Vec<u32> {
    bits.chunks(32)
        .map(|c| c.iter().enumerate().fold(0u32, |w, (k, &b)| w | (b as u32) << k))
        .collect()
}

pub fn encode_bnn_input(bits: &[bool]) -> Vec<u32> {
    pack_bits(bits)
}

pub fn compile_bnn(m: &BnnModel, opts: CompileOptions) -> Result<MipsProgram, NnError> {
    m.validate()?;
    let n_layers = m.layers.len();
    let in_words = bnn_words(m.n_inputs());
    let mut bases = Vec::new();
    let mut next = in_words;
    for (l, &n) in m.layer_sizes[1..].iter().enumerate() {
        bases.push(next);
        next += if l + 1 == n_layers { n } else { bnn_words(n) };
    }
    let dmem_words = memory_size(next, opts)?;

    let mut a = Asm::default();
    a.li32(R_M, 0x5555_5555);
    a.li32(R_U, 0x3333_3333);
    a.li32(R_C, 0x0F0F_0F0F);
    a.li32(R_M8, 0x00FF_00FF);
    let src_base = |l: usize| if l == 0 { 0 } else { bases[l - 1] };

    for (l, layer) in m.layers.iter().enumerate() {
        let n_in = m.layer_sizes[l];
        let n_out = m.layer_sizes[l + 1];
        let words = bnn_words(n_in);
        let last = l + 1 == n_layers;
        let packed: Vec<Vec<u32>> = layer.weights.iter().map(|w| pack_bits(w)).collect();
        for block in (0..n_out).step_by(BNN_BLOCK) {
            let neurons = block..(block + BNN_BLOCK).min(n_out);
            for o in neurons.clone() {
                a.zero(R_ACC + o - block);
                a.zero(R_TOT + o - block);
            }
            let fold = |a: &mut Asm, acc: usize, tot: usize| {
                a.r(Op::And, R_T, acc, R_M8);
                a.shift(Op::Srl, acc, acc, 8);
                a.r(Op::And, acc, acc, R_M8);
                a.r(Op::Addu, acc, acc, R_T);
                a.i(Op::Andi, R_T, acc, 0xFFFF);
                a.shift(Op::Srl, acc, acc, 16);
                a.r(Op::Addu, acc, acc, R_T);
                a.r(Op::Addu, tot, tot, acc);
                a.zero(acc);
            };
            for w in 0..words {
                a.i(Op::Lw, R_WORD, 0, (src_base(l) + w) as i32);
                for o in neurons.clone() {
                    let acc = R_ACC + o - block;
                    a.li32(R_W, packed[o][w]);
                    a.r(Op::Xor, R_X, R_WORD, R_W);
                    a.shift(Op::Srl, R_T, R_X, 1);
                    a.r(Op::And, R_T, R_T, R_M);
                    a.r(Op::Sub, R_X, R_X, R_T);
                    a.shift(Op::Srl, R_T, R_X, 2);
                    a.r(Op::And, R_T, R_T, R_U);
                    a.r(Op::And, R_X, R_X, R_U);
                    a.r(Op::Addu, R_X, R_X, R_T);
                    a.shift(Op::Srl, R_T, R_X, 4);
                    a.r(Op::Addu, R_X, R_X, R_T);
                    a.r(Op::And, R_X, R_X, R_C);
                    a.r(Op::Addu, acc, acc, R_X);
                }
                if (w + 1) % FOLD_EVERY == 0 && w + 1 != words {
                    for o in neurons.clone() {
                        fold(&mut a, R_ACC + o - block, R_TOT + o - block);
                    }
                }
            }
            for o in neurons {
                let (acc, tot) = (R_ACC + o - block, R_TOT + o - block);
                fold(&mut a, acc, tot);
                // `tot` now holds the disagreement count d; acc = n - 2d.
                let theta = layer.thresholds[o] as i64;
                let n = n_in as i64;
                if last {
                    a.r(Op::Addu, R_X, tot, tot);
                    a.li32(R_T, (n - theta) as u32);
                    a.r(Op::Sub, R_X, R_T, R_X);
                    a.i(Op::Sw, R_X, 0, (bases[l] + o) as i32);
                } else {
                    // n - 2d >= theta  <=>  d < floor((n - theta) / 2) + 1
                    let limit = ((n - theta).div_euclid(2) + 1).clamp(-1, 32767);
                    if o % 32 == 0 {
                        a.zero(R_BITS);
                    }
                    a.i(Op::Slti, R_X, tot, limit as i32);
                    a.shift(Op::Sll, R_X, R_X, (o % 32) as u32);
                    a.r(Op::Or, R_BITS, R_BITS, R_X);
                    if o % 32 == 31 || o + 1 == n_out {
                        a.i(Op::Sw, R_BITS, 0, (bases[l] + o / 32) as i32);
                    }
                }
            }
        }
    }
    a.halt();

    Ok(MipsProgram {
        instructions: a.code,
        dmem_init_garbler: Default::default(),
        evaluator_input_region: (0, in_words as u32),
        output_region: (*bases.last().unwrap() as u32, m.n_outputs() as u32),
        dmem_words,
        include_mult: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mips::{run_plain, RunOptions};
    use crate::nncompile::infer::{infer_plain, infer_plain_bnn};
    use crate::nncompile::model::{BnnLayer, DenseLayer};

    #[test]
    fn one_neuron_program_is_small() {
        let m = MlpModel {
            layer_sizes: vec![1, 1],
            layers: vec![DenseLayer {
                weights: vec![vec![300]],
                biases: vec![-20],
                activation: Activation::None,
            }],
        };
        let p = compile_mlp(&m, CompileOptions::default()).unwrap();
        assert!(p.instructions.len() < 64, "{}", p.instructions.len());
        let x = [200];
        let out = run_plain(&p, &encode_mlp_input(&x).unwrap(), RunOptions::default()).unwrap();
        assert_eq!(decode_output(&out.output_words), infer_plain(&m, &x).unwrap());
    }

    #[test]
    fn memory_overflow_names_required_size() {
        let m = MlpModel {
            layer_sizes: vec![100, 1],
            layers: vec![DenseLayer {
                weights: vec![vec![1; 100]],
                biases: vec![0],
                activation: Activation::None,
            }],
        };
        let err = compile_mlp(&m, CompileOptions { dmem_words: Some(16) }).unwrap_err();
        assert_eq!(err, NnError::DmemOverflow { required: 32 });
    }

    #[test]
    fn accumulator_bound_is_enforced() {
        let m = MlpModel {
            layer_sizes: vec![1, 400, 1],
            layers: vec![
                DenseLayer {
                    weights: vec![vec![1]; 400],
                    biases: vec![0; 400],
                    activation: Activation::Relu,
                },
                DenseLayer {
                    weights: vec![vec![fixed::MAX; 400]],
                    biases: vec![0],
                    activation: Activation::None,
                },
            ],
        };
        assert_eq!(
            compile_mlp(&m, CompileOptions::default()).unwrap_err(),
            NnError::Accumulator { layer: 1, neuron: 0 }
        );
    }

    #[test]
    fn bnn_folds_long_rows() {
        // 40 words per row exercises the intermediate fold.
        let n = 40 * 32;
        let w: Vec<bool> = (0..n).map(|i| (i * 7) % 3 == 0).collect();
        let x: Vec<bool> = (0..n).map(|i| (i * 5) % 4 == 1).collect();
        let m = BnnModel {
            layer_sizes: vec![n, 1],
            layers: vec![BnnLayer {
                weights: vec![w],
                thresholds: vec![3],
            }],
        };
        let p = compile_bnn(&m, CompileOptions::default()).unwrap();
        let out = run_plain(&p, &encode_bnn_input(&x), RunOptions::default()).unwrap();
        assert_eq!(decode_output(&out.output_words), infer_plain_bnn(&m, &x).unwrap());
    }

    #[test]
    fn input_range_checked() {
        assert_eq!(
            encode_mlp_input(&[1, 256]).unwrap_err(),
            NnError::InputRange { index: 1, value: 256 }
        );
        assert_eq!(encode_mlp_input(&[1, 2, 3, 4, 5]).unwrap(), vec![0x0403_0201, 5]);
    }
}
