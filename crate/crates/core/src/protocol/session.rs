//! Garbler and evaluator state machines.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::channel::{Channel, ChannelError, Tag, PROTOCOL_VERSION};
use super::engine::{copy_digest, copy_seed, derive, write_rows, CopyEvaluator, CopyGarbler, StepCircuit, INSTR_BITS};
use super::hiding::{unhide_output, with_hiding_epilogue, HidingKeys};
use super::wire::{self, Entry, Hello};
use super::{CommStats, EvaluatorReport, GarblerReport, Mode, SessionConfig, SessionError, Security, SideInfo, Verdict};
use crate::garble::FixedKeyAes;
use crate::mips::{run_plain, CpuStepConfig, MipsProgram, RunOptions};
use crate::ot::{ot_receive, Message, ProfileSender};

/// Program as the garbler will run it, with its shadow execution.
pub(crate) struct Prepared {
    pub program: MipsProgram,
    pub executed: Vec<u32>,
    pub circ: StepCircuit,
    pub side: SideInfo,
    pub keys: Option<HidingKeys>,
    pub initial_bits: Vec<bool>,
}

/// Applies output hiding and runs the program on a zero input to learn the
/// instruction sequence. Control flow must not depend on the evaluator's
/// input, which holds for compiled networks.
pub(crate) fn prepare(cfg: &SessionConfig, program: &MipsProgram) -> Result<Prepared, SessionError> {
    program.validate()?;
    let keys = cfg.output_hiding.then(|| {
        HidingKeys::derive(derive(&cfg.fresh_seed, b"hiding"), program.output_region.1 as usize)
    });
    let program = match &keys {
        Some(k) => with_hiding_epilogue(program, k)?,
        None => program.clone(),
    };
    if let Some(c) = cfg.cpu {
        check_cpu(&c, &program.step_config())?;
    }
    let zero = vec![0; program.evaluator_input_region.1 as usize];
    let shadow = run_plain(
        &program,
        &zero,
        RunOptions {
            step_limit: cfg.step_limit,
            hooks: false,
        },
    )?;
    let circ = StepCircuit::new(program.step_config())?;
    let side = side_info(&circ, &program, shadow.step_count);
    let initial_bits = program.initial_state(&zero)?.to_bits();
    Ok(Prepared {
        program,
        executed: shadow.executed,
        circ,
        side,
        keys,
        initial_bits,
    })
}

fn check_cpu(want: &CpuStepConfig, got: &CpuStepConfig) -> Result<(), SessionError> {
    if want.dmem_words != got.dmem_words || want.include_mult != got.include_mult {
        return Err(SessionError::Mismatch(format!(
            "step circuit dmem={} mult={}, expected dmem={} mult={}",
            got.dmem_words, got.include_mult, want.dmem_words, want.include_mult
        )));
    }
    Ok(())
}

pub(crate) fn side_info(circ: &StepCircuit, p: &MipsProgram, steps: u64) -> SideInfo {
    let c = circ.netlist.count_gates();
    SideInfo {
        step_count: steps,
        netlist_inputs: circ.netlist.n_inputs() as u64,
        netlist_outputs: circ.netlist.n_outputs() as u64,
        netlist_gates: c.total as u64,
        netlist_nonfree: c.nonfree as u64,
        dmem_words: p.dmem_words as u32,
        include_mult: p.include_mult,
        input_region: p.evaluator_input_region,
        output_region: p.output_region,
    }
}

/// Table bytes the evaluator holds at its peak.
pub(crate) fn resident_bytes(mode: Mode, side: &SideInfo, copies: u32) -> u64 {
    mode.chunk(side.step_count) * copies as u64 * side.netlist_nonfree * super::engine::ROW_BYTES as u64
}

/// Half of the memory the kernel reports available, or 4 GiB.
pub fn default_resident_limit() -> u64 {
    std::fs::read_to_string("/proc/meminfo")
        .ok()
        .and_then(|m| {
            m.lines()
                .find(|l| l.starts_with("MemAvailable:"))
                .and_then(|l| l.split_whitespace().nth(1))
                .and_then(|kb| kb.parse::<u64>().ok())
        })
        .map_or(4 << 30, |kb| kb * 1024 / 2)
}

/// Receives `tag`, turning a VERDICT from the evaluator into
/// [`SessionError::CheatReported`].
fn expect(ch: &mut Channel, tag: Tag) -> Result<(Vec<u8>, u64), SessionError> {
    let frame = ch.position();
    let (got, payload) = ch.recv_any()?;
    if got == tag {
        return Ok((payload, frame));
    }
    match got {
        Tag::Verdict => match wire::decode_verdict(&payload, frame)? {
            Verdict::Cheat { copy } => Err(SessionError::CheatReported(copy)),
            Verdict::Ok => Err(SessionError::Protocol {
                frame,
                message: format!("early VERDICT where {tag} was expected"),
            }),
        },
        Tag::Err => Err(ChannelError::Remote(String::from_utf8_lossy(&payload).into_owned()).into()),
        got => Err(ChannelError::Unexpected { expected: tag, got, frame }.into()),
    }
}

fn abort(ch: &mut Channel, e: &SessionError) {
    let remote = matches!(
        e,
        SessionError::Channel(ChannelError::Remote(_) | ChannelError::Closed)
            | SessionError::Ot(crate::ot::OtError::Channel(ChannelError::Remote(_) | ChannelError::Closed))
            | SessionError::CheatReported(_)
    );
    if !remote {
        ch.send_error(&e.to_string());
    }
}

fn hello(cfg: &SessionConfig) -> Hello {
    Hello {
        version: PROTOCOL_VERSION,
        mode: cfg.mode,
        security: cfg.security,
        profile: cfg.ot_profile,
        hiding: cfg.output_hiding,
    }
}

pub fn run_garbler(cfg: &SessionConfig, program: &MipsProgram, ch: &mut Channel) -> Result<GarblerReport, SessionError> {
    let r = garbler(cfg, program, ch);
    if let Err(e) = &r {
        abort(ch, e);
    }
    r
}

fn garbler(cfg: &SessionConfig, program: &MipsProgram, ch: &mut Channel) -> Result<GarblerReport, SessionError> {
    cfg.validate()?;
    if cfg.record_transcript {
        ch.record_transcript();
    }
    let prep = prepare(cfg, program)?;
    let circ = &prep.circ;
    let t = prep.side.step_count;
    let out = prep.program.output_region;
    let prp = FixedKeyAes::new();
    let s = cfg.security.copies();
    let corrupt = |i: u32| cfg.corrupt_copies.contains(&i);
    let seeds: Vec<[u8; 32]> = (0..s).map(|i| copy_seed(&cfg.fresh_seed, i)).collect();
    let mut rounds = 0u64;

    ch.send(Tag::Hello, &hello(cfg).encode())?;
    ch.send(Tag::PhiMeta, &wire::encode_phi(&prep.side))?;

    let eval_copies: Vec<u32> = match cfg.security {
        Security::Hbc => vec![0],
        Security::Malicious(_) => {
            ch.flush()?;
            let digests = seeds
                .par_iter()
                .enumerate()
                .map(|(i, &seed)| copy_digest(circ, &prp, seed, t, out, corrupt(i as u32)))
                .collect::<Result<Vec<_>, _>>()?;
            ch.send(Tag::Commit, &wire::encode_commit(&digests))?;
            let (payload, frame) = expect(ch, Tag::Challenge)?;
            rounds += 1;
            let check = wire::decode_challenge(&payload, s, cfg.security.checked(), frame)?;
            let opened: Vec<(u32, [u8; 32])> = (0..s).filter(|&i| check[i as usize]).map(|i| (i, seeds[i as usize])).collect();
            ch.send(Tag::OpenSeed, &wire::encode_open(&opened))?;
            (0..s).filter(|&i| !check[i as usize]).collect()
        }
    };
    let e = eval_copies.len();
    let mut gs: Vec<CopyGarbler> = eval_copies.iter().map(|&i| CopyGarbler::new(circ, &prp, seeds[i as usize])).collect();

    // Input labels by OT.
    let in_bits = circ.word_bits(prep.program.evaluator_input_region);
    let pairs: Vec<(Message, Message)> = gs
        .iter()
        .flat_map(|g| {
            in_bits.clone().map(move |b| {
                let z = g.initial_zero()[b];
                (z.to_le_bytes(), (z ^ g.offset()).to_le_bytes())
            })
        })
        .collect();
    let mut ot_rng = ChaCha20Rng::from_seed(derive(&cfg.fresh_seed, b"ot"));
    let (sender, ot1) = ProfileSender::start(cfg.ot_profile, &mut ot_rng)?;
    ch.send(Tag::Ot1, &ot1)?;
    let (ot2, frame) = expect(ch, Tag::Ot2)?;
    rounds += 1;
    ch.send(Tag::Ot3, &sender.respond(&ot2, &pairs, frame)?)?;

    // Labels of the state bits the garbler knows.
    let init: Vec<Vec<u128>> = gs
        .iter()
        .map(|g| {
            (0..circ.state_bits())
                .filter(|b| !in_bits.contains(b))
                .map(|b| g.active(g.initial_zero()[b], prep.initial_bits[b]))
                .collect()
        })
        .collect();
    ch.send(Tag::Init, &wire::encode_init(&init))?;

    let chunk = cfg.mode.chunk(t);
    let mut frame_buf = Vec::with_capacity(wire::batch_len(e, circ.nonfree()));
    let mut step = 0u64;
    let mut batch = 0u32;
    while step < t {
        let end = (step + chunk).min(t);
        for st in step..end {
            frame_buf.clear();
            wire::batch_header(&mut frame_buf, st, e);
            let word = prep.executed[st as usize];
            for g in gs.iter_mut() {
                write_rows(g.garble_step()?, &mut frame_buf);
                for l in g.instruction_labels(word) {
                    frame_buf.extend_from_slice(&l.to_le_bytes());
                }
            }
            ch.send(Tag::Batch, &frame_buf)?;
        }
        step = end;
        if let Mode::Stream(_) = cfg.mode {
            let (p, frame) = expect(ch, Tag::Yback)?;
            rounds += 1;
            let got = wire::decode_u32(&p, Tag::Yback, frame)?;
            if got != batch {
                return Err(SessionError::Protocol {
                    frame,
                    message: format!("YBACK for batch {got}, expected {batch}"),
                });
            }
            batch += 1;
        }
    }

    let entries: Vec<Vec<Entry>> = gs
        .iter()
        .zip(&eval_copies)
        .map(|(g, &i)| g.decode_entries(out, corrupt(i)))
        .collect();
    ch.send(Tag::Decode, &wire::encode_decode(&entries))?;
    let (p, frame) = expect(ch, Tag::Output)?;
    rounds += 1;
    let words = wire::decode_words(&p, frame)?;
    let y = match &prep.keys {
        Some(k) => Some(unhide_output(&words, k)?),
        None if words.is_empty() => None,
        None => {
            return Err(SessionError::Protocol {
                frame,
                message: "OUTPUT carries words without output hiding".into(),
            })
        }
    };
    if let Security::Malicious(_) = cfg.security {
        let (p, frame) = expect(ch, Tag::Verdict)?;
        if let Verdict::Cheat { copy } = wire::decode_verdict(&p, frame)? {
            return Err(SessionError::CheatReported(copy));
        }
    }
    let c = ch.counters();
    Ok(GarblerReport {
        y,
        stats: CommStats {
            ot_rounds: rounds,
            bytes_garbler_to_evaluator: c.bytes_sent,
            bytes_evaluator_to_garbler: c.bytes_received,
            peak_resident_tables: (e * circ.nonfree()) as u64,
            peak_resident_labels: (e * (circ.state_bits() + INSTR_BITS)) as u64,
        },
        side_info: prep.side,
        transcript: ch.take_transcript(),
    })
}

pub fn run_evaluator(cfg: &SessionConfig, x: &[u32], ch: &mut Channel) -> Result<EvaluatorReport, SessionError> {
    let r = evaluator(cfg, x, ch);
    if let Err(e) = &r {
        abort(ch, e);
    }
    r
}

/// Batch payloads held between delivery and evaluation.
enum Held {
    Memory(Vec<Vec<u8>>),
    Spool { file: BufWriter<File>, lens: Vec<usize> },
}

impl Held {
    fn new(spool: Option<&std::path::Path>) -> Result<Held, SessionError> {
        Ok(match spool {
            None => Held::Memory(Vec::new()),
            Some(dir) => Held::Spool {
                file: BufWriter::with_capacity(1 << 20, tempfile::tempfile_in(dir)?),
                lens: Vec::new(),
            },
        })
    }

    fn push(&mut self, p: Vec<u8>) -> Result<(), SessionError> {
        match self {
            Held::Memory(v) => v.push(p),
            Held::Spool { file, lens } => {
                file.write_all(&p)?;
                lens.push(p.len());
            }
        }
        Ok(())
    }

    /// Hands every held payload to `f` in order and empties the store.
    fn drain(&mut self, mut f: impl FnMut(&[u8]) -> Result<(), SessionError>) -> Result<(), SessionError> {
        match self {
            Held::Memory(v) => {
                for p in v.drain(..) {
                    f(&p)?;
                }
            }
            Held::Spool { file, lens } => {
                file.flush()?;
                let mut r = BufReader::with_capacity(1 << 20, file.get_ref().try_clone()?);
                r.seek(SeekFrom::Start(0))?;
                let mut buf = Vec::new();
                for &n in lens.iter() {
                    buf.resize(n, 0);
                    r.read_exact(&mut buf)?;
                    f(&buf)?;
                }
                lens.clear();
                file.get_mut().set_len(0)?;
                file.seek(SeekFrom::Start(0))?;
            }
        }
        Ok(())
    }
}

fn evaluator(cfg: &SessionConfig, x: &[u32], ch: &mut Channel) -> Result<EvaluatorReport, SessionError> {
    cfg.validate()?;
    if cfg.record_transcript {
        ch.record_transcript();
    }
    let mut rng = ChaCha20Rng::from_seed(derive(&cfg.fresh_seed, b"evaluator"));
    let mut rounds = 0u64;

    let frame = ch.position();
    let h = Hello::decode(&ch.recv(Tag::Hello)?, frame)?;
    let mine = hello(cfg);
    if h != mine {
        return Err(SessionError::Mismatch(format!("garbler offers {h:?}, evaluator expects {mine:?}")));
    }
    let frame = ch.position();
    let side = wire::decode_phi(&ch.recv(Tag::PhiMeta)?, frame)?;
    let cpu = CpuStepConfig {
        dmem_words: side.dmem_words as usize,
        include_mult: side.include_mult,
        trace_hooks: false,
    };
    cpu.validate()?;
    if let Some(c) = cfg.cpu {
        check_cpu(&c, &cpu)?;
    }
    let circ = StepCircuit::new(cpu)?;
    let fits = |(b, c): (u32, u32)| b as u64 + c as u64 <= side.dmem_words as u64;
    let counts = circ.netlist.count_gates();
    let shape = (
        circ.netlist.n_inputs() as u64,
        circ.netlist.n_outputs() as u64,
        counts.total as u64,
        counts.nonfree as u64,
    );
    if (side.netlist_inputs, side.netlist_outputs, side.netlist_gates, side.netlist_nonfree) != shape
        || !fits(side.input_region)
        || !fits(side.output_region)
    {
        return Err(SessionError::Protocol {
            frame,
            message: "PHI_META does not describe the agreed step circuit".into(),
        });
    }
    if x.len() != side.input_region.1 as usize {
        return Err(SessionError::Config(format!(
            "input has {} words, the program reads {}",
            x.len(),
            side.input_region.1
        )));
    }

    let s = cfg.security.copies();
    let e = cfg.security.evaluated() as usize;
    let required = resident_bytes(cfg.mode, &side, e as u32);
    let limit = cfg.resident_limit.unwrap_or_else(default_resident_limit);
    let spool = match (&cfg.spill_dir, cfg.mode) {
        _ if required <= limit => None,
        (Some(dir), Mode::Full) => Some(dir.as_path()),
        _ => return Err(SessionError::ResourceLimit { required, limit }),
    };
    let prp = FixedKeyAes::new();
    let t = side.step_count;
    let out = side.output_region;

    let report = |verdict, y, hidden, stats, side: &SideInfo, ch: &mut Channel, digests| EvaluatorReport {
        y,
        hidden,
        stats,
        side_info: side.clone(),
        verdict,
        transcript: ch.take_transcript(),
        label_digests: digests,
    };
    let stats = |ch: &Channel, rounds, tables, labels| {
        let c = ch.counters();
        CommStats {
            ot_rounds: rounds,
            bytes_garbler_to_evaluator: c.bytes_received,
            bytes_evaluator_to_garbler: c.bytes_sent,
            peak_resident_tables: tables,
            peak_resident_labels: labels,
        }
    };

    let mut commitments = Vec::new();
    let eval_copies: Vec<u32> = match cfg.security {
        Security::Hbc => vec![0],
        Security::Malicious(_) => {
            let frame = ch.position();
            commitments = wire::decode_commit(&ch.recv(Tag::Commit)?, s, frame)?;
            let mut check = vec![false; s as usize];
            for i in rand::seq::index::sample(&mut rng, s as usize, cfg.security.checked() as usize) {
                check[i] = true;
            }
            ch.send(Tag::Challenge, &wire::encode_challenge(&check))?;
            rounds += 1;
            let frame = ch.position();
            let opened = wire::decode_open(&ch.recv(Tag::OpenSeed)?, frame)?;
            let want: Vec<u32> = (0..s).filter(|&i| check[i as usize]).collect();
            if opened.iter().map(|o| o.0).collect::<Vec<_>>() != want {
                return Err(SessionError::Protocol {
                    frame,
                    message: "opened copies differ from the challenge".into(),
                });
            }
            let bad = opened
                .par_iter()
                .map(|&(i, seed)| Ok((i, copy_digest(&circ, &prp, seed, t, out, false)? != commitments[i as usize])))
                .collect::<Result<Vec<_>, SessionError>>()?
                .into_iter()
                .find(|&(_, bad)| bad);
            if let Some((copy, _)) = bad {
                let v = Verdict::Cheat { copy };
                ch.send(Tag::Verdict, &wire::encode_verdict(v))?;
                ch.flush()?;
                let st = stats(ch, rounds, 0, 0);
                return Ok(report(v, None, None, st, &side, ch, Vec::new()));
            }
            (0..s).filter(|&i| !check[i as usize]).collect()
        }
    };

    // Input labels.
    let in_bits = circ.word_bits(side.input_region);
    let choices: Vec<bool> = (0..e)
        .flat_map(|_| (0..in_bits.len()).map(|k| (x[k / 32] >> (k % 32)) & 1 == 1))
        .collect();
    let got = ot_receive(cfg.ot_profile, &choices, ch, &mut rng)?;
    rounds += 1;
    let frame = ch.position();
    let other = circ.state_bits() - in_bits.len();
    let init = wire::decode_init(&ch.recv(Tag::Init)?, e, other, frame)?;
    let mut digests = Vec::new();
    let mut evs: Vec<CopyEvaluator> = init
        .into_iter()
        .enumerate()
        .map(|(c, known)| {
            let mut known = known.into_iter();
            let mut ot = got[c * in_bits.len()..(c + 1) * in_bits.len()].iter();
            let state: Vec<u128> = (0..circ.state_bits())
                .map(|b| {
                    if in_bits.contains(&b) {
                        u128::from_le_bytes(*ot.next().unwrap())
                    } else {
                        known.next().unwrap()
                    }
                })
                .collect();
            if cfg.collect_label_digests {
                digests.extend(state.iter().map(|&l| l as u64));
            }
            CopyEvaluator::new(&circ, &prp, state, !commitments.is_empty())
        })
        .collect();

    let chunk = cfg.mode.chunk(t);
    let tables_per_frame = (e * circ.nonfree()) as u64;
    let base_labels = (e * circ.state_bits()) as u64;
    let mut peak_tables = 0u64;
    let mut peak_labels = base_labels;
    let mut held = Held::new(spool)?;
    let mut step = 0u64;
    let mut batch = 0u32;
    while step < t {
        let end = (step + chunk).min(t);
        let first_frame = ch.position();
        for k in 1..=end - step {
            let frame = ch.position();
            let p = ch.recv(Tag::Batch)?;
            if p.len() != wire::batch_len(e, circ.nonfree()) {
                return Err(SessionError::Protocol {
                    frame,
                    message: format!("BATCH of {} bytes", p.len()),
                });
            }
            held.push(p)?;
            peak_tables = peak_tables.max(k * tables_per_frame);
            peak_labels = peak_labels.max(base_labels + k * (e * INSTR_BITS) as u64);
        }
        let mut st = step;
        held.drain(|p| {
            let frame = first_frame + (st - step);
            for (ev, (rows, labels)) in evs.iter_mut().zip(wire::split_batch(p, st, e, circ.nonfree(), frame)?) {
                if cfg.collect_label_digests {
                    digests.extend(labels.iter().map(|&l| l as u64));
                }
                ev.eval_rows(&labels, rows)?;
            }
            st += 1;
            Ok(())
        })?;
        step = end;
        if let Mode::Stream(_) = cfg.mode {
            ch.send(Tag::Yback, &wire::encode_u32(batch))?;
            rounds += 1;
            batch += 1;
        }
    }

    let bits = 32 * out.1 as usize;
    let frame = ch.position();
    let entries = wire::decode_decode(&ch.recv(Tag::Decode)?, e, bits, frame)?;
    let mut outputs: Vec<Vec<u32>> = Vec::with_capacity(e);
    for (k, (ev, ent)) in evs.iter_mut().zip(&entries).enumerate() {
        let copy = eval_copies[k];
        let cheat = |ch: &mut Channel| -> Result<Verdict, SessionError> {
            let v = Verdict::Cheat { copy };
            ch.send(Tag::Verdict, &wire::encode_verdict(v))?;
            ch.flush()?;
            Ok(v)
        };
        if let Some(d) = ev.finish_digest(ent) {
            if d != commitments[copy as usize] {
                let v = cheat(ch)?;
                let st = stats(ch, rounds, peak_tables, peak_labels);
                return Ok(report(v, None, None, st, &side, ch, digests));
            }
        }
        match ev.decode(out, ent) {
            Ok(w) => outputs.push(w),
            Err(bit) if commitments.is_empty() => return Err(SessionError::Integrity { copy, bit }),
            Err(_) => {
                let v = cheat(ch)?;
                let st = stats(ch, rounds, peak_tables, peak_labels);
                return Ok(report(v, None, None, st, &side, ch, digests));
            }
        }
    }
    let y = majority(&outputs)?;
    let (y, hidden) = if cfg.output_hiding {
        ch.send(Tag::Output, &wire::encode_words(&y))?;
        (None, Some(y))
    } else {
        ch.send(Tag::Output, &wire::encode_words(&[]))?;
        (Some(y), None)
    };
    rounds += 1;
    if let Security::Malicious(_) = cfg.security {
        ch.send(Tag::Verdict, &wire::encode_verdict(Verdict::Ok))?;
    }
    ch.flush()?;
    let st = stats(ch, rounds, peak_tables, peak_labels);
    Ok(report(Verdict::Ok, y, hidden, st, &side, ch, digests))
}

/// The output more than half of the copies agree on.
fn majority(outputs: &[Vec<u32>]) -> Result<Vec<u32>, SessionError> {
    for cand in outputs {
        let n = outputs.iter().filter(|o| *o == cand).count();
        if 2 * n > outputs.len() {
            return Ok(cand.clone());
        }
    }
    Err(SessionError::MajorityTie)
}

/// Runs both roles in one process over a loopback channel.
pub fn run_loopback(
    garbler_cfg: &SessionConfig,
    evaluator_cfg: &SessionConfig,
    program: &MipsProgram,
    x: &[u32],
) -> (Result<GarblerReport, SessionError>, Result<EvaluatorReport, SessionError>) {
    let (mut a, b) = Channel::loopback_pair();
    std::thread::scope(|sc| {
        let g = sc.spawn(move || run_garbler(garbler_cfg, program, &mut a));
        let ev = {
            let mut b = b;
            run_evaluator(evaluator_cfg, x, &mut b)
        };
        let gr = g.join().expect("garbler thread panicked");
        (gr, ev)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_needs_more_than_half() {
        assert_eq!(majority(&[vec![1], vec![1], vec![2]]).unwrap(), vec![1]);
        assert!(matches!(majority(&[vec![1], vec![2]]), Err(SessionError::MajorityTie)));
        assert!(matches!(majority(&[vec![1], vec![2], vec![3]]), Err(SessionError::MajorityTie)));
    }

    #[test]
    fn meminfo_limit_is_positive() {
        assert!(default_resident_limit() > 0);
    }
}
