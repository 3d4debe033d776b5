//! Closed-form communication accounting.
//!
//! Mirrors the payload layouts byte for byte, so a session's measured
//! counters equal the prediction exactly.

use super::channel::FRAME_HEADER;
use super::engine::INSTR_BITS;
use super::session::prepare;
use super::wire;
use super::{CommStats, Mode, Security, SessionConfig, SessionError, SideInfo};
use crate::mips::MipsProgram;

/// Round trips of a `steps`-step session: one per delivery of steps in
/// stream mode, plus the input-label round and the output round, plus the
/// challenge round under cut-and-choose.
pub fn predict_rounds(mode: Mode, security: Security, steps: u64) -> u64 {
    let m = match mode {
        Mode::Stream(k) => steps.div_ceil(k as u64),
        Mode::Full => 0,
    };
    let challenge = matches!(security, Security::Malicious(_)) as u64;
    m + 2 + challenge
}

/// Expected counters of the evaluator for a program with side information
/// `side` (after any hiding epilogue).
pub fn predict(cfg: &SessionConfig, side: &SideInfo) -> CommStats {
    let f = |len: usize| (FRAME_HEADER + len) as u64;
    let t = side.step_count;
    let s = cfg.security.copies() as usize;
    let c = cfg.security.checked() as usize;
    let e = cfg.security.evaluated() as usize;
    let malicious = matches!(cfg.security, Security::Malicious(_));
    let el = cfg.ot_profile.element_len();
    let state_bits = side.netlist_inputs as usize - INSTR_BITS;
    let in_bits = 32 * side.input_region.1 as usize;
    let n_ot = e * in_bits;
    let out_bits = 32 * side.output_region.1 as usize;
    let nonfree = side.netlist_nonfree as usize;

    let mut down = f(wire::HELLO_LEN) + f(wire::PHI_LEN);
    let mut up = 0;
    if malicious {
        down += f(wire::commit_len(s)) + f(wire::open_len(c));
        up += f(wire::challenge_len(s));
    }
    down += f(2 + el) + f(4 + 64 * n_ot);
    up += f(4 + n_ot * el);
    down += f(wire::init_len(e, state_bits - in_bits));
    down += t * f(wire::batch_len(e, nonfree));
    if let Mode::Stream(k) = cfg.mode {
        up += t.div_ceil(k as u64) * f(wire::YBACK_LEN);
    }
    down += f(wire::decode_len(e, out_bits));
    let out_words = if cfg.output_hiding { side.output_region.1 as usize } else { 0 };
    up += f(wire::output_len(out_words));
    if malicious {
        up += f(wire::VERDICT_LEN);
    }
    let chunk = cfg.mode.chunk(t);
    CommStats {
        ot_rounds: predict_rounds(cfg.mode, cfg.security, t),
        bytes_garbler_to_evaluator: down,
        bytes_evaluator_to_garbler: up,
        peak_resident_tables: chunk * (e * nonfree) as u64,
        peak_resident_labels: (e * state_bits) as u64 + chunk * (e * INSTR_BITS) as u64,
    }
}

/// Predicts the counters of running `program` under `cfg` without running
/// a session; returns the side information too.
pub fn account(cfg: &SessionConfig, program: &MipsProgram) -> Result<(CommStats, SideInfo), SessionError> {
    cfg.validate()?;
    let prep = prepare(cfg, program)?;
    Ok((predict(cfg, &prep.side), prep.side))
}

/// Copies needed so that `t` executions sharing one cut-and-choose stay at
/// security `s`: `s + ceil(log2 t)`.
pub fn copies_for_multi_execution(s: u32, t: u32) -> u32 {
    s + t.max(1).next_power_of_two().trailing_zeros()
}

/// Chance that a garbler corrupting `c` of `s` copies makes the evaluator
/// accept a wrong output: no corrupted copy is among the `floor(s/2)`
/// opened ones, and the corrupted copies are a strict majority of the rest.
pub fn undetected_cheat_probability(s: u32, c: u32) -> f64 {
    let k = s / 2;
    let e = s - k;
    if c > s || 2 * c <= e {
        return 0.0;
    }
    binomial(s - c, k) / binomial(s, k)
}

fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}
