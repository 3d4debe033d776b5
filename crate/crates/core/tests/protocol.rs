use std::collections::HashSet;
use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};

use hwgn2::mips::{assemble, run_plain, MipsProgram, RunOptions};
use hwgn2::nncompile::synth::random_input;
use hwgn2::nncompile::*;
use hwgn2::protocol::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfgs(mode: Mode, security: Security, g: u8, e: u8) -> (SessionConfig, SessionConfig) {
    (SessionConfig::new(mode, security, [g; 32]), SessionConfig::new(mode, security, [e; 32]))
}

fn plain(p: &MipsProgram, x: &[u32]) -> Vec<u32> {
    run_plain(p, x, RunOptions::default()).unwrap().output_words
}

fn session(g: &SessionConfig, e: &SessionConfig, p: &MipsProgram, x: &[u32]) -> (GarblerReport, EvaluatorReport) {
    let (gr, er) = run_loopback(g, e, p, x);
    (gr.unwrap(), er.unwrap())
}

fn small_mlp(rng: &mut ChaCha8Rng) -> MlpModel {
    let mut sizes = vec![rng.gen_range(1..=6)];
    for _ in 0..rng.gen_range(1..=2) {
        sizes.push(rng.gen_range(1..=4));
    }
    let acts = [Activation::Relu, Activation::HardSigmoid, Activation::None];
    MlpModel {
        layer_sizes: sizes.clone(),
        layers: sizes
            .windows(2)
            .enumerate()
            .map(|(l, io)| DenseLayer {
                weights: (0..io[1])
                    .map(|_| (0..io[0]).map(|_| rng.gen_range(-300..=300)).collect())
                    .collect(),
                biases: (0..io[1]).map(|_| rng.gen_range(-300..=300)).collect(),
                activation: if l + 2 == sizes.len() {
                    Activation::None
                } else {
                    acts[rng.gen_range(0..3)]
                },
            })
            .collect(),
    }
}

/// Straight-line arithmetic with a fixed-count loop; control flow never
/// depends on the input.
fn random_asm(rng: &mut ChaCha8Rng) -> MipsProgram {
    let mult = rng.gen_bool(0.5);
    let n_in = rng.gen_range(0..=2);
    let n_out = rng.gen_range(1..=3);
    let mut s = format!(".config dmem=16 mult={}\n.input 0 {n_in}\n.output 8 {n_out}\n", if mult { "on" } else { "off" });
    for i in 0..n_in {
        s += &format!("LW r{}, {i}(r0)\n", i + 1);
    }
    s += &format!("ADDI r9, r0, {}\nloop:\n", rng.gen_range(1..=3));
    let rr = ["ADD", "SUB", "AND", "OR", "XOR", "NOR", "SLT", "SLTU"];
    let ri = ["ADDI", "ANDI", "ORI", "XORI"];
    let reg = |rng: &mut ChaCha8Rng| rng.gen_range(1..=5);
    for _ in 0..rng.gen_range(3..=12) {
        match rng.gen_range(0..4) {
            0 => s += &format!("{} r{}, r{}, r{}\n", rr[rng.gen_range(0..rr.len())], reg(rng), reg(rng), reg(rng)),
            1 => s += &format!("{} r{}, r{}, {}\n", ri[rng.gen_range(0..ri.len())], reg(rng), reg(rng), rng.gen_range(0..1000)),
            2 => s += &format!("{} r{}, r{}, {}\n", ["SLL", "SRL", "SRA"][rng.gen_range(0..3)], reg(rng), reg(rng), rng.gen_range(0..32)),
            _ if mult => s += &format!("MULT r{}, r{}\nMFLO r{}\n", reg(rng), reg(rng), reg(rng)),
            _ => s += &format!("LUI r{}, {}\n", reg(rng), rng.gen_range(0..65536)),
        }
    }
    s += "ADDI r9, r9, -1\nBNE r9, r0, loop\n";
    for i in 0..n_out {
        s += &format!("SW r{}, {}(r0)\n", i + 1, 8 + i);
    }
    s += "HALT\n";
    assemble(&s).unwrap()
}

fn bm_like(rng: &mut ChaCha8Rng) -> (MlpModel, MipsProgram) {
    let m = small_mlp(rng);
    let p = compile_mlp(&m, CompileOptions::default()).unwrap();
    (m, p)
}

const MODES: [Mode; 3] = [Mode::Stream(1), Mode::Stream(3), Mode::Full];
const SECURITY: [Security; 3] = [Security::Hbc, Security::Malicious(2), Security::Malicious(4)];

#[test]
fn sessions_match_plain_runs_and_accounting() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..54 {
        let mode = MODES[i % 3];
        let security = SECURITY[(i / 3) % 3];
        let (g, e) = cfgs(mode, security, i as u8, 200 - i as u8);
        let (p, x, reference) = if i % 2 == 0 {
            let (m, p) = bm_like(&mut rng);
            let xi = random_input(m.n_inputs(), &mut rng);
            let x = encode_mlp_input(&xi).unwrap();
            (p, x, Some(infer_plain(&m, &xi).unwrap()))
        } else {
            let p = random_asm(&mut rng);
            let x: Vec<u32> = (0..p.evaluator_input_region.1).map(|_| rng.gen()).collect();
            (p, x, None)
        };
        let (gr, er) = session(&g, &e, &p, &x);
        let y = er.y.clone().unwrap();
        assert_eq!(y, plain(&p, &x), "case {i} {mode} {security}");
        if let Some(r) = reference {
            assert_eq!(decode_output(&y), r, "case {i}");
        }
        assert_eq!(er.verdict, Verdict::Ok);
        let (predicted, side) = account(&e, &p).unwrap();
        assert_eq!(side, er.side_info);
        assert_eq!(er.stats, predicted, "case {i} {mode} {security}");
        assert_eq!(gr.stats.ot_rounds, predicted.ot_rounds);
        assert_eq!(gr.stats.bytes_garbler_to_evaluator, predicted.bytes_garbler_to_evaluator);
        assert_eq!(gr.stats.bytes_evaluator_to_garbler, predicted.bytes_evaluator_to_garbler);
        assert_eq!(er.stats.ot_rounds, predict_rounds(mode, security, side.step_count));
    }
}

#[test]
fn streaming_holds_one_step_of_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (m, p) = bm_like(&mut rng);
    let x = encode_mlp_input(&random_input(m.n_inputs(), &mut rng)).unwrap();
    let (g, e) = cfgs(Mode::Stream(1), Security::Hbc, 1, 2);
    let (_, s1) = session(&g, &e, &p, &x);
    let nonfree = s1.side_info.netlist_nonfree;
    assert_eq!(s1.stats.peak_resident_tables, nonfree);
    let (g, e) = cfgs(Mode::Full, Security::Hbc, 1, 2);
    let (_, full) = session(&g, &e, &p, &x);
    assert_eq!(full.stats.peak_resident_tables, nonfree * full.side_info.step_count);
    assert!(full.stats.peak_resident_labels > s1.stats.peak_resident_labels);
}

#[test]
fn zero_step_program_decodes_initial_state() {
    let p = assemble(".config dmem=16 mult=off\n.input 0 1\n.output 0 1\n").unwrap();
    assert!(p.instructions.is_empty());
    let (g, e) = cfgs(Mode::Stream(1), Security::Hbc, 1, 2);
    let (gr, er) = session(&g, &e, &p, &[0xDEAD_BEEF]);
    assert_eq!(er.y.unwrap(), vec![0xDEAD_BEEF]);
    assert_eq!(er.stats.ot_rounds, 2);
    assert_eq!(gr.stats.ot_rounds, 2);
}

#[test]
fn modes_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let (m, p) = bm_like(&mut rng);
        let x = encode_mlp_input(&random_input(m.n_inputs(), &mut rng)).unwrap();
        let runs: Vec<EvaluatorReport> = [Mode::Stream(1), Mode::Stream(4), Mode::Full]
            .into_iter()
            .map(|mode| {
                let (g, e) = cfgs(mode, Security::Hbc, 5, 6);
                session(&g, &e, &p, &x).1
            })
            .collect();
        for r in &runs[1..] {
            assert_eq!(r.y, runs[0].y);
            assert_eq!(r.side_info, runs[0].side_info);
        }
    }
}

#[test]
fn traffic_does_not_depend_on_the_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (m, p) = bm_like(&mut rng);
    let n = encode_mlp_input(&vec![0; m.n_inputs()]).unwrap().len();
    for mode in [Mode::Stream(2), Mode::Full] {
        let (g, e) = cfgs(mode, Security::Hbc, 7, 8);
        let (_, zeros) = session(&g, &e, &p, &vec![0; n]);
        let (_, ones) = session(&g, &e, &p, &vec![u32::MAX; n]);
        assert_eq!(zeros.stats, ones.stats);
    }
}

#[test]
fn traffic_shape_depends_only_on_public_metadata() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = small_mlp(&mut rng);
    let mut b = a.clone();
    for w in b.layers.iter_mut().flat_map(|l| l.weights.iter_mut().flatten()) {
        *w = rng.gen_range(-300..=300);
    }
    let pa = compile_mlp(&a, CompileOptions::default()).unwrap();
    let pb = compile_mlp(&b, CompileOptions::default()).unwrap();
    assert_ne!(pa, pb);
    // Two unrelated programs with equal step counts and regions.
    let pc = assemble(".config dmem=16 mult=on\n.input 0 1\n.output 4 1\nLW r1, 0(r0)\nADD r2, r1, r1\nSW r2, 4(r0)\nHALT\n").unwrap();
    let pd = assemble(".config dmem=16 mult=on\n.input 0 1\n.output 4 1\nLUI r3, 7\nMULT r3, r3\nMFLO r2\nHALT\n").unwrap();
    for (p1, p2) in [(&pa, &pb), (&pc, &pd)] {
        let x = vec![3; p1.evaluator_input_region.1 as usize];
        for security in [Security::Hbc, Security::Malicious(4)] {
            let (mut g, mut e) = cfgs(Mode::Stream(2), security, 9, 10);
            e.record_transcript = true;
            g.record_transcript = true;
            let (g1, e1) = session(&g, &e, p1, &x);
            let (g2, e2) = session(&g, &e, p2, &x);
            let (t1, t2) = (e1.transcript.unwrap(), e2.transcript.unwrap());
            assert_eq!(t1.shape(), t2.shape());
            assert_ne!(t1, t2, "ciphertexts should differ");
            assert_eq!(g1.transcript.unwrap().shape(), g2.transcript.unwrap().shape());
        }
    }
}

#[test]
fn fresh_seeds_share_no_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (m, p) = bm_like(&mut rng);
    let x = encode_mlp_input(&random_input(m.n_inputs(), &mut rng)).unwrap();
    let digests = |seed: u8| {
        let (g, mut e) = cfgs(Mode::Stream(1), Security::Hbc, seed, 1);
        e.collect_label_digests = true;
        session(&g, &e, &p, &x).1.label_digests
    };
    let a = digests(20);
    let b: HashSet<u64> = digests(21).into_iter().collect();
    assert!(a.len() > 1000);
    assert!(a.iter().all(|d| !b.contains(d)));
}

#[test]
fn equal_seeds_replay_identical_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (m, p) = bm_like(&mut rng);
    let x = encode_mlp_input(&random_input(m.n_inputs(), &mut rng)).unwrap();
    for security in [Security::Hbc, Security::Malicious(4)] {
        let (mut g, mut e) = cfgs(Mode::Stream(3), security, 30, 31);
        g.record_transcript = true;
        e.record_transcript = true;
        let (g1, e1) = session(&g, &e, &p, &x);
        let (g2, e2) = session(&g, &e, &p, &x);
        assert_eq!(e1.transcript, e2.transcript);
        assert_eq!(g1.transcript, g2.transcript);
    }
}

#[test]
fn honest_cut_and_choose_verdicts_ok() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (m, p) = bm_like(&mut rng);
    let xi = random_input(m.n_inputs(), &mut rng);
    let x = encode_mlp_input(&xi).unwrap();
    for seed in 0..4 {
        let (g, e) = cfgs(Mode::Full, Security::Malicious(8), seed, 100 + seed);
        let (_, er) = session(&g, &e, &p, &x);
        assert_eq!(er.verdict, Verdict::Ok);
        assert_eq!(decode_output(&er.y.unwrap()), infer_plain(&m, &xi).unwrap());
    }
}

#[test]
fn corrupted_copy_is_caught_or_outvoted() {
    let p = random_asm(&mut ChaCha8Rng::seed_from_u64(9));
    let x = vec![5; p.evaluator_input_region.1 as usize];
    let want = plain(&p, &x);
    let (mut caught, mut outvoted) = (0, 0);
    for seed in 0..12u8 {
        let (mut g, e) = cfgs(Mode::Stream(2), Security::Malicious(8), seed, seed.wrapping_add(50));
        g.corrupt_copies = vec![1];
        let (gr, er) = run_loopback(&g, &e, &p, &x);
        let er = er.unwrap();
        match er.verdict {
            Verdict::Cheat { copy } => {
                assert_eq!(copy, 1);
                assert!(matches!(gr, Err(SessionError::CheatReported(1))));
                caught += 1;
            }
            Verdict::Ok => {
                assert_eq!(er.y.unwrap(), want);
                outvoted += 1;
            }
        }
    }
    // Opened half the time, outvoted three to one otherwise.
    assert!(caught > 0 && outvoted > 0, "{caught} caught, {outvoted} outvoted");
}

#[test]
fn split_vote_aborts() {
    let p = random_asm(&mut ChaCha8Rng::seed_from_u64(16));
    let x = vec![2; p.evaluator_input_region.1 as usize];
    let (mut ties, mut caught) = (0, 0);
    for seed in 0..12u8 {
        let (mut g, e) = cfgs(Mode::Full, Security::Malicious(4), seed, seed + 9);
        g.corrupt_copies = vec![3];
        match run_loopback(&g, &e, &p, &x).1 {
            Err(SessionError::MajorityTie) => ties += 1,
            Ok(r) => {
                assert_eq!(r.verdict, Verdict::Cheat { copy: 3 });
                caught += 1;
            }
            Err(e) => panic!("{e}"),
        }
    }
    assert!(ties > 0 && caught > 0);
}

#[test]
fn lone_evaluated_copy_is_trusted() {
    // s = 2 opens one copy and evaluates the other, so a single bad copy
    // goes unnoticed half the time.
    let p = random_asm(&mut ChaCha8Rng::seed_from_u64(10));
    let x = vec![1; p.evaluator_input_region.1 as usize];
    let want = plain(&p, &x);
    let (mut caught, mut fooled) = (0, 0);
    for seed in 0..16u8 {
        let (mut g, e) = cfgs(Mode::Full, Security::Malicious(2), seed, seed + 1);
        g.corrupt_copies = vec![0];
        let r = run_loopback(&g, &e, &p, &x).1.unwrap();
        match r.verdict {
            Verdict::Cheat { copy: 0 } => caught += 1,
            Verdict::Ok => {
                assert_ne!(r.y.unwrap(), want);
                fooled += 1;
            }
            v => panic!("{v:?}"),
        }
    }
    assert!(caught > 0 && fooled > 0, "{caught} caught, {fooled} fooled");
}

#[test]
fn hidden_output_reaches_only_the_garbler() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (m, p) = bm_like(&mut rng);
    let xi = random_input(m.n_inputs(), &mut rng);
    let x = encode_mlp_input(&xi).unwrap();
    let want = plain(&p, &x);
    for security in [Security::Hbc, Security::Malicious(3)] {
        let (mut g, mut e) = cfgs(Mode::Stream(5), security, 40, 41);
        g.output_hiding = true;
        e.output_hiding = true;
        let (gr, er) = session(&g, &e, &p, &x);
        assert_eq!(gr.y.unwrap(), want);
        assert!(er.y.is_none());
        let hidden = er.hidden.unwrap();
        assert_eq!(hidden.len(), want.len() + 1);
        assert_ne!(&hidden[..want.len()], &want[..]);
        let (predicted, _) = account(&e, &p).unwrap();
        assert_eq!(er.stats, predicted);
    }
}

#[test]
fn over_limit_full_mode_spills_to_disk() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (m, p) = bm_like(&mut rng);
    let x = encode_mlp_input(&random_input(m.n_inputs(), &mut rng)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (g, mut e) = cfgs(Mode::Full, Security::Malicious(2), 1, 2);
    e.resident_limit = Some(1024);
    let (gr, er) = run_loopback(&g, &e, &p, &x);
    assert!(matches!(er, Err(SessionError::ResourceLimit { limit: 1024, .. })));
    assert!(gr.is_err());
    e.spill_dir = Some(dir.path().to_path_buf());
    let (_, er) = session(&g, &e, &p, &x);
    assert_eq!(er.y.unwrap(), plain(&p, &x));
    // Streaming never spills.
    let (g, mut e) = cfgs(Mode::Stream(1), Security::Hbc, 1, 2);
    e.resident_limit = Some(16);
    e.spill_dir = Some(dir.path().to_path_buf());
    assert!(matches!(run_loopback(&g, &e, &p, &x).1, Err(SessionError::ResourceLimit { .. })));
}

#[test]
fn mismatched_settings_are_refused() {
    let p = random_asm(&mut ChaCha8Rng::seed_from_u64(14));
    let x = vec![0; p.evaluator_input_region.1 as usize];
    let g = SessionConfig::new(Mode::Full, Security::Hbc, [1; 32]);
    let e = SessionConfig::new(Mode::Stream(1), Security::Hbc, [2; 32]);
    let (gr, er) = run_loopback(&g, &e, &p, &x);
    assert!(matches!(er, Err(SessionError::Mismatch(_))));
    assert!(gr.is_err());
    let e = SessionConfig::new(Mode::Full, Security::Hbc, [2; 32]);
    let (_, er) = run_loopback(&g, &e, &p, &[0; 7]);
    assert!(matches!(er, Err(SessionError::Config(_))));
}

fn read_frame(s: &mut TcpStream) -> Option<(u8, Vec<u8>)> {
    let mut h = [0u8; 5];
    s.read_exact(&mut h).ok()?;
    let mut p = vec![0u8; u32::from_le_bytes(h[1..].try_into().unwrap()) as usize];
    s.read_exact(&mut p).ok()?;
    Some((h[0], p))
}

fn write_frame(s: &mut TcpStream, tag: u8, p: &[u8]) -> std::io::Result<()> {
    s.write_all(&[tag])?;
    s.write_all(&(p.len() as u32).to_le_bytes())?;
    s.write_all(p)
}

/// Forwards both directions, flipping every table byte of the final BATCH
/// sent to the evaluator.
fn tampering_relay(garbler: TcpStream, evaluator: TcpStream, rows: usize) {
    let (mut g_in, mut e_out) = (garbler.try_clone().unwrap(), evaluator.try_clone().unwrap());
    let (mut e_in, mut g_out) = (evaluator, garbler);
    std::thread::spawn(move || {
        while let Some((tag, p)) = read_frame(&mut e_in) {
            if write_frame(&mut g_out, tag, &p).is_err() {
                break;
            }
        }
    });
    std::thread::spawn(move || {
        let mut held: Option<Vec<u8>> = None;
        while let Some((tag, p)) = read_frame(&mut g_in) {
            if let Some(mut b) = held.take() {
                if tag == Tag::Decode as u8 {
                    for byte in &mut b[12..12 + rows] {
                        *byte ^= 0xA5;
                    }
                }
                if write_frame(&mut e_out, Tag::Batch as u8, &b).is_err() {
                    return;
                }
            }
            if tag == Tag::Batch as u8 {
                held = Some(p);
            } else if write_frame(&mut e_out, tag, &p).is_err() {
                return;
            }
        }
    });
}

#[test]
fn tampered_tables_fail_decoding() {
    let p = assemble(".config dmem=16 mult=off\n.input 0 1\n.output 1 1\nLW r1, 0(r0)\nADDI r1, r1, 3\nSW r1, 1(r0)\nHALT\n").unwrap();
    let (_, side) = account(&SessionConfig::new(Mode::Full, Security::Hbc, [0; 32]), &p).unwrap();
    let rows = side.netlist_nonfree as usize * 48;
    let to_relay = TcpListener::bind("127.0.0.1:0").unwrap();
    let to_eval = TcpListener::bind("127.0.0.1:0").unwrap();
    let (ra, ea) = (to_relay.local_addr().unwrap(), to_eval.local_addr().unwrap());
    let relay = std::thread::spawn(move || {
        let (g, _) = to_relay.accept().unwrap();
        let e = TcpStream::connect(ea).unwrap();
        tampering_relay(g, e, rows);
    });
    let (g, e) = cfgs(Mode::Full, Security::Hbc, 3, 4);
    let garbler = std::thread::spawn(move || {
        let mut ch = Channel::tcp(TcpStream::connect(ra).unwrap()).unwrap();
        run_garbler(&g, &p, &mut ch)
    });
    let (s, _) = to_eval.accept().unwrap();
    relay.join().unwrap();
    let mut ch = Channel::tcp(s).unwrap();
    let er = run_evaluator(&e, &[9], &mut ch);
    assert!(matches!(er, Err(SessionError::Integrity { copy: 0, .. })), "{er:?}");
    assert!(garbler.join().unwrap().is_err());
}

#[test]
fn tcp_session_matches_loopback() {
    let p = random_asm(&mut ChaCha8Rng::seed_from_u64(15));
    let x = vec![77; p.evaluator_input_region.1 as usize];
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    let (g, e) = cfgs(Mode::Stream(2), Security::Malicious(2), 3, 4);
    let p2 = p.clone();
    let g2 = g.clone();
    let garbler = std::thread::spawn(move || run_garbler(&g2, &p2, &mut Channel::tcp(TcpStream::connect(addr).unwrap()).unwrap()));
    let mut ch = Channel::tcp(l.accept().unwrap().0).unwrap();
    let er = run_evaluator(&e, &x, &mut ch).unwrap();
    let gr = garbler.join().unwrap().unwrap();
    let (lg, le) = session(&g, &e, &p, &x);
    assert_eq!(er.y, le.y);
    assert_eq!(er.stats, le.stats);
    assert_eq!(gr.stats, lg.stats);
}

#[test]
fn multi_execution_and_cheat_bounds() {
    assert_eq!(copies_for_multi_execution(40, 16), 44);
    for s in [2, 4, 8, 16] {
        let c = s / 4 + 1;
        assert!(undetected_cheat_probability(s, c) <= 0.5);
    }
}
