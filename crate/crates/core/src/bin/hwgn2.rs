//! `hwgn2`: compile models, run garbled sessions, leakage campaigns and
//! communication accounting.
//!
//! Every command prints a JSON report on standard output and a short human
//! summary on standard error. Exit codes: 0 ok, 1 protocol or verdict
//! failure, 2 usage or input error.

use std::fs;
use std::io::Write;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use hwgn2::leakage::{
    run_campaign, CampaignConfig, LeakageError, Population, Target, TraceWriter, DEFAULT_WINDOW_STEPS,
};
use hwgn2::mips::{assemble, disassemble, MipsProgram};
use hwgn2::nncompile::{binarize, compile_bnn, compile_mlp, encode_bnn_input, encode_mlp_input, CompileOptions, Model};
use hwgn2::ot::OtProfile;
use hwgn2::protocol::engine::derive;
use hwgn2::protocol::{
    account, predict_rounds, run_evaluator, run_garbler, run_loopback, Channel, CommStats, Mode, Security,
    SessionConfig, SessionError, SideInfo, Verdict,
};

#[derive(Parser)]
#[command(name = "hwgn2", version, about = "Oblivious inference on a garbled MIPS-subset processor")]
struct Cli {
    /// Seed for all randomness: 64 hex digits, or any text (hashed).
    /// Defaults to fresh OS entropy; the seed used is echoed in the report.
    #[arg(long, global = true)]
    seed: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a JSON model into an assembly program.
    Compile(CompileArgs),
    /// Run a two-party session.
    Run(RunArgs),
    /// Fixed-vs-random leakage campaign.
    Leakage(LeakageArgs),
    /// Predicted rounds and bytes, without running.
    Account(AccountArgs),
}

#[derive(Args)]
struct CompileArgs {
    model: PathBuf,
    /// Binarize an MLP (or take a BNN as is) and compile XNOR-popcount code.
    #[arg(long)]
    bnn: bool,
    /// Output program; defaults to the model path with extension `.s`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dmem: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Garbler,
    Evaluator,
}

#[derive(Clone, Copy, ValueEnum)]
enum InputFormat {
    /// 32-bit words, decimal or 0x hex.
    Words,
    /// MLP pixel values 0..=255, packed four per word.
    Pixels,
    /// BNN input bits 0/1.
    Bits,
}

#[derive(Args)]
struct RunArgs {
    /// Program (garbler side).
    program: Option<PathBuf>,
    /// Evaluator input.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "words")]
    input_format: InputFormat,
    #[arg(long, default_value = "stream:1")]
    mode: Mode,
    #[arg(long, default_value = "hbc")]
    security: Security,
    /// Both roles in this process.
    #[arg(long, conflicts_with_all = ["listen", "connect"])]
    loopback: bool,
    #[arg(long, conflicts_with = "connect")]
    listen: Option<SocketAddr>,
    #[arg(long)]
    connect: Option<SocketAddr>,
    /// Role of this process when networked.
    #[arg(long, value_enum)]
    role: Option<Role>,
    /// Mask and authenticate the output so only the garbler learns it.
    #[arg(long)]
    output_hiding: bool,
    /// Spool tables here when full mode exceeds the memory limit.
    #[arg(long)]
    spill_dir: Option<PathBuf>,
    /// Table bytes the evaluator may hold in memory.
    #[arg(long)]
    resident_limit: Option<u64>,
    /// Include wall-clock timing in the report (makes it non-reproducible).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum LeakTarget {
    Unprotected,
    Garbled,
    GarbledReusedSeed,
}

#[derive(Args)]
struct LeakageArgs {
    program: PathBuf,
    #[arg(long, value_enum)]
    target: LeakTarget,
    /// Total traces, split evenly between the fixed and random populations.
    #[arg(long, default_value_t = 10_000)]
    traces: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Prefix for `<out>.fixed.trc`, `<out>.random.trc` and `<out>.tscores.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed-population input; defaults to words drawn from the seed.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "words")]
    input_format: InputFormat,
    /// Garbled targets: samples per observed step.
    #[arg(long, default_value_t = 16)]
    samples_per_step: usize,
    /// Garbled targets: steps observed from the start; 0 observes the whole run.
    #[arg(long, default_value_t = DEFAULT_WINDOW_STEPS)]
    window: u64,
}

#[derive(Args)]
struct AccountArgs {
    /// Program to account; without it only rounds are computed from --steps.
    program: Option<PathBuf>,
    #[arg(long, default_value = "stream:1")]
    mode: Mode,
    #[arg(long, default_value = "hbc")]
    security: Security,
    #[arg(long, required_unless_present = "program")]
    steps: Option<u64>,
    #[arg(long)]
    output_hiding: bool,
}

#[derive(Debug)]
enum Failure {
    /// Exit code 2.
    Usage(String),
    /// Exit code 1.
    Protocol(String),
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Failure {
        match e {
            SessionError::Config(_) | SessionError::Mips(_) | SessionError::Hiding(_) => Failure::Usage(e.to_string()),
            SessionError::Ot(hwgn2::ot::OtError::ProfileUnavailable(_) | hwgn2::ot::OtError::UnknownProfile(_)) => {
                Failure::Usage(e.to_string())
            }
            e => Failure::Protocol(e.to_string()),
        }
    }
}

impl From<LeakageError> for Failure {
    fn from(e: LeakageError) -> Failure {
        Failure::Usage(e.to_string())
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

struct Seed {
    bytes: [u8; 32],
    text: String,
}

fn seed(arg: &Option<String>) -> Seed {
    match arg {
        None => {
            let mut b = [0u8; 32];
            rand::rngs::OsRng.fill_bytes(&mut b);
            Seed {
                bytes: b,
                text: hex::encode(b),
            }
        }
        Some(s) => {
            let bytes = match hex::decode(s) {
                Ok(v) if v.len() == 32 => v.try_into().unwrap(),
                _ => *blake3::hash(s.as_bytes()).as_bytes(),
            };
            Seed {
                bytes,
                text: s.clone(),
            }
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_program(path: &Path) -> Result<MipsProgram, Failure> {
    assemble(&read(path)?).map_err(|e| usage(format!("{}: {e}", path.display())))
}

/// Numbers separated by whitespace or commas; `#` starts a comment.
fn parse_numbers(path: &Path) -> Result<Vec<i64>, Failure> {
    let text = read(path)?;
    let mut v = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for tok in line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()) {
            let parsed = match tok.strip_prefix("0x").or_else(|| tok.strip_prefix("0X")) {
                Some(h) => i64::from_str_radix(h, 16),
                None => tok.parse::<i64>(),
            };
            v.push(parsed.map_err(|_| usage(format!("{}:{}: bad number `{tok}`", path.display(), no + 1)))?);
        }
    }
    Ok(v)
}

fn load_input(path: &Path, format: InputFormat) -> Result<Vec<u32>, Failure> {
    let nums = parse_numbers(path)?;
    let bad = |what: &str| usage(format!("{}: {what}", path.display()));
    match format {
        InputFormat::Words => nums
            .iter()
            .map(|&n| {
                if (i32::MIN as i64..=u32::MAX as i64).contains(&n) {
                    Ok(n as u32)
                } else {
                    Err(bad(&format!("{n} does not fit 32 bits")))
                }
            })
            .collect(),
        InputFormat::Pixels => {
            let px: Vec<i32> = nums.iter().map(|&n| n.clamp(-1, 256) as i32).collect();
            encode_mlp_input(&px).map_err(|e| bad(&e.to_string()))
        }
        InputFormat::Bits => {
            if let Some(n) = nums.iter().find(|&&n| n != 0 && n != 1) {
                return Err(bad(&format!("bit value {n}")));
            }
            Ok(encode_bnn_input(&nums.iter().map(|&n| n == 1).collect::<Vec<_>>()))
        }
    }
}

fn emit<T: Serialize>(report: &T) {
    let mut out = std::io::stdout().lock();
    let _ = serde_json::to_writer_pretty(&mut out, report);
    let _ = writeln!(out);
}

#[derive(Serialize)]
struct CompileReport {
    command: &'static str,
    model: String,
    kind: &'static str,
    program: String,
    instructions: usize,
    dmem_words: usize,
    include_mult: bool,
    input_region: (u32, u32),
    output_region: (u32, u32),
}

fn cmd_compile(a: &CompileArgs) -> Result<(), Failure> {
    let text = read(&a.model)?;
    let model = Model::from_json(&text).map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    let opts = CompileOptions { dmem_words: a.dmem };
    let (kind, program) = match (&model, a.bnn) {
        (Model::Mlp(m), false) => ("mlp", compile_mlp(m, opts)),
        (Model::Mlp(m), true) => ("bnn", compile_bnn(&binarize(m), opts)),
        (Model::Bnn(m), _) => ("bnn", compile_bnn(m, opts)),
    };
    let program = program.map_err(|e| usage(format!("{}: {e}", a.model.display())))?;
    let out = a.out.clone().unwrap_or_else(|| a.model.with_extension("s"));
    fs::write(&out, disassemble(&program)).map_err(|e| usage(format!("{}: {e}", out.display())))?;
    eprintln!(
        "{} instructions, {} data words -> {}",
        program.instructions.len(),
        program.dmem_words,
        out.display()
    );
    emit(&CompileReport {
        command: "compile",
        model: a.model.display().to_string(),
        kind,
        program: out.display().to_string(),
        instructions: program.instructions.len(),
        dmem_words: program.dmem_words,
        include_mult: program.include_mult,
        input_region: program.evaluator_input_region,
        output_region: program.output_region,
    });
    Ok(())
}

#[derive(Serialize)]
struct ConfigEcho {
    mode: String,
    security: String,
    ot_profile: String,
    output_hiding: bool,
    role: &'static str,
}

#[derive(Serialize)]
struct Timing {
    wall_ms: f64,
}

#[derive(Serialize)]
struct RunReport {
    command: &'static str,
    seed: String,
    config: ConfigEcho,
    y: Option<Vec<u32>>,
    hidden_output: Option<Vec<u32>>,
    verdict: Option<String>,
    stats: CommStats,
    side_info: SideInfo,
    timing: Option<Timing>,
}

fn verdict_text(v: Verdict) -> String {
    match v {
        Verdict::Ok => "OK".into(),
        Verdict::Cheat { copy } => format!("CHEAT copy {copy}"),
    }
}

fn session_cfg(a: &RunArgs, seed: [u8; 32], profile: OtProfile) -> SessionConfig {
    let mut c = SessionConfig::new(a.mode, a.security, seed);
    c.ot_profile = profile;
    c.output_hiding = a.output_hiding;
    c.spill_dir = a.spill_dir.clone();
    c.resident_limit = a.resident_limit;
    c
}

fn connect(addr: SocketAddr) -> Result<TcpStream, Failure> {
    let deadline = Instant::now() + Duration::from_secs(10);
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(Failure::Protocol(format!("connect {addr}: {e}"))),
            Err(_) => std::thread::sleep(Duration::from_millis(100)),
        }
    }
}

fn cmd_run(a: &RunArgs, seed: &Seed) -> Result<(), Failure> {
    let profile = OtProfile::from_env().map_err(usage)?;
    let gseed = derive(&seed.bytes, b"garbler");
    let eseed = derive(&seed.bytes, b"evaluator");
    let program = a.program.as_deref().map(load_program).transpose()?;
    let x = a.input.as_deref().map(|p| load_input(p, a.input_format)).transpose()?;
    let need_program = || program.as_ref().ok_or_else(|| usage("the garbler needs a program"));
    let need_input = || x.as_deref().ok_or_else(|| usage("the evaluator needs --input"));
    let echo = |role| ConfigEcho {
        mode: a.mode.to_string(),
        security: a.security.to_string(),
        ot_profile: format!("{profile:?}").to_lowercase(),
        output_hiding: a.output_hiding,
        role,
    };
    let start = Instant::now();
    let timing = |t: Instant| a.timing.then(|| Timing {
        wall_ms: t.elapsed().as_secs_f64() * 1e3,
    });

    let role = match (a.loopback, a.listen, a.connect, a.role) {
        (true, ..) => None,
        (false, None, None, _) => return Err(usage("choose --loopback, --listen ADDR or --connect ADDR")),
        (false, _, _, None) => return Err(usage("--role is required with --listen or --connect")),
        (false, _, _, Some(r)) => Some(r),
    };
    let report = match role {
        None => {
            let (p, x) = (need_program()?, need_input()?);
            let gcfg = session_cfg(a, gseed, profile);
            let ecfg = session_cfg(a, eseed, profile);
            let (gr, er) = run_loopback(&gcfg, &ecfg, p, x);
            let er = er?;
            let y = match (gr, a.output_hiding) {
                (Ok(g), true) => g.y,
                (Ok(_), false) => er.y.clone(),
                (Err(e), _) if er.verdict == Verdict::Ok => return Err(e.into()),
                (Err(_), _) => None,
            };
            RunReport {
                command: "run",
                seed: seed.text.clone(),
                config: echo("loopback"),
                y,
                hidden_output: er.hidden,
                verdict: matches!(a.security, Security::Malicious(_)).then(|| verdict_text(er.verdict)),
                stats: er.stats,
                side_info: er.side_info,
                timing: timing(start),
            }
        }
        Some(r) => {
            let stream = match (a.listen, a.connect) {
                (Some(addr), _) => {
                    let l = TcpListener::bind(addr).map_err(|e| Failure::Protocol(format!("listen {addr}: {e}")))?;
                    eprintln!("listening on {}", l.local_addr().map_or(addr, |a| a));
                    l.accept().map_err(|e| Failure::Protocol(e.to_string()))?.0
                }
                (None, Some(addr)) => connect(addr)?,
                (None, None) => unreachable!(),
            };
            let mut ch = Channel::tcp(stream).map_err(|e| Failure::Protocol(e.to_string()))?;
            match r {
                Role::Garbler => {
                    let g = run_garbler(&session_cfg(a, gseed, profile), need_program()?, &mut ch)?;
                    RunReport {
                        command: "run",
                        seed: seed.text.clone(),
                        config: echo("garbler"),
                        y: g.y,
                        hidden_output: None,
                        verdict: None,
                        stats: g.stats,
                        side_info: g.side_info,
                        timing: timing(start),
                    }
                }
                Role::Evaluator => {
                    let e = run_evaluator(&session_cfg(a, eseed, profile), need_input()?, &mut ch)?;
                    RunReport {
                        command: "run",
                        seed: seed.text.clone(),
                        config: echo("evaluator"),
                        y: e.y,
                        hidden_output: e.hidden,
                        verdict: matches!(a.security, Security::Malicious(_)).then(|| verdict_text(e.verdict)),
                        stats: e.stats,
                        side_info: e.side_info,
                        timing: timing(start),
                    }
                }
            }
        }
    };
    eprintln!(
        "{} steps, {} rounds, {} bytes down, {} bytes up{}",
        report.side_info.step_count,
        report.stats.ot_rounds,
        report.stats.bytes_garbler_to_evaluator,
        report.stats.bytes_evaluator_to_garbler,
        report.verdict.as_ref().map(|v| format!(", verdict {v}")).unwrap_or_default()
    );
    let cheated = report.verdict.as_deref().is_some_and(|v| v != "OK");
    emit(&report);
    if cheated {
        return Err(Failure::Protocol("cut-and-choose detected cheating".into()));
    }
    Ok(())
}

#[derive(Serialize)]
struct LeakageReport {
    command: &'static str,
    seed: String,
    target: &'static str,
    traces_per_population: usize,
    sigma: f64,
    n_samples: usize,
    pass: bool,
    max_abs_t: f64,
    max_index: Option<usize>,
    offending_samples: usize,
    first_offending: Vec<usize>,
    files: Vec<String>,
}

fn cmd_leakage(a: &LeakageArgs, seed: &Seed) -> Result<bool, Failure> {
    let program = load_program(&a.program)?;
    if a.traces < 4 {
        return Err(usage("need at least 4 traces"));
    }
    let fixed = match &a.input {
        Some(p) => load_input(p, a.input_format)?,
        None => {
            let mut rng = ChaCha20Rng::from_seed(derive(&seed.bytes, b"fixed-input"));
            (0..program.evaluator_input_region.1).map(|_| rng.gen()).collect()
        }
    };
    let window = (a.window > 0).then_some(a.window);
    let (target, name) = match a.target {
        LeakTarget::Unprotected => (Target::Unprotected, "unprotected"),
        LeakTarget::Garbled => (Target::Garbled { window_steps: window, reuse_seed: false }, "garbled"),
        LeakTarget::GarbledReusedSeed => (Target::Garbled { window_steps: window, reuse_seed: true }, "garbled-reused-seed"),
    };
    let cfg = CampaignConfig {
        target,
        traces_per_population: a.traces / 2,
        samples_per_step: a.samples_per_step,
        sigmas: vec![a.sigma],
        seed: seed.bytes,
        fixed_input: fixed,
    };
    let path = |suffix: &str| {
        let mut p = a.out.clone().unwrap_or_default().into_os_string();
        p.push(suffix);
        PathBuf::from(p)
    };
    let mut writers: [Option<TraceWriter>; 2] = [None, None];
    let mut sink = |pop: Population, row: &[f32]| -> Result<(), LeakageError> {
        let w = &mut writers[pop.tag() as usize];
        if w.is_none() {
            let suffix = if pop == Population::Fixed { ".fixed.trc" } else { ".random.trc" };
            *w = Some(TraceWriter::create(&path(suffix), pop, row.len())?);
        }
        w.as_mut().unwrap().push(row)
    };
    let sink: Option<&mut dyn FnMut(Population, &[f32]) -> Result<(), LeakageError>> =
        if a.out.is_some() { Some(&mut sink) } else { None };
    let report = run_campaign(&program, &cfg, sink)?;
    let mut files = Vec::new();
    if a.out.is_some() {
        for (w, suffix) in writers.into_iter().zip([".fixed.trc", ".random.trc"]) {
            if let Some(w) = w {
                w.finish()?;
                files.push(path(suffix).display().to_string());
            }
        }
        let csv = path(".tscores.csv");
        let mut text = String::from("sample,t\n");
        for (i, t) in report.results[0].series.t.iter().enumerate() {
            text += &format!("{i},{t}\n");
        }
        fs::write(&csv, text).map_err(|e| usage(format!("{}: {e}", csv.display())))?;
        files.push(csv.display().to_string());
    }
    let r = &report.results[0];
    eprintln!(
        "{name}: {} traces per population, {} samples, max |t| = {:.3} -> {}",
        report.traces_per_population,
        report.n_samples,
        r.verdict.max_abs_t,
        if r.verdict.pass { "PASS" } else { "FAIL" }
    );
    emit(&LeakageReport {
        command: "leakage",
        seed: seed.text.clone(),
        target: name,
        traces_per_population: report.traces_per_population,
        sigma: a.sigma,
        n_samples: report.n_samples,
        pass: r.verdict.pass,
        max_abs_t: r.verdict.max_abs_t,
        max_index: r.verdict.max_index,
        offending_samples: r.verdict.offending.len(),
        first_offending: r.verdict.offending.iter().copied().take(20).collect(),
        files,
    });
    Ok(r.verdict.pass)
}

#[derive(Serialize)]
struct AccountReport {
    command: &'static str,
    mode: String,
    security: String,
    steps: u64,
    deliveries: u64,
    rounds: u64,
    stats: Option<CommStats>,
    side_info: Option<SideInfo>,
}

fn cmd_account(a: &AccountArgs) -> Result<(), Failure> {
    let (steps, stats, side) = match &a.program {
        Some(p) => {
            let program = load_program(p)?;
            let mut cfg = SessionConfig::new(a.mode, a.security, [0; 32]);
            cfg.output_hiding = a.output_hiding;
            cfg.ot_profile = OtProfile::from_env().map_err(usage)?;
            let (stats, side) = account(&cfg, &program)?;
            if let Some(t) = a.steps.filter(|&t| t != side.step_count) {
                return Err(usage(format!("--steps {t} but the program runs {} steps", side.step_count)));
            }
            (side.step_count, Some(stats), Some(side))
        }
        None => (a.steps.unwrap(), None, None),
    };
    let deliveries = match a.mode {
        Mode::Stream(k) => steps.div_ceil(k as u64),
        Mode::Full => 0,
    };
    let rounds = predict_rounds(a.mode, a.security, steps);
    eprintln!("T = {steps}, M = {deliveries}, rounds = {rounds}");
    emit(&AccountReport {
        command: "account",
        mode: a.mode.to_string(),
        security: a.security.to_string(),
        steps,
        deliveries,
        rounds,
        stats,
        side_info: side,
    });
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let seed = seed(&cli.seed);
    let r = match &cli.cmd {
        Cmd::Compile(a) => cmd_compile(a),
        Cmd::Run(a) => cmd_run(a, &seed),
        Cmd::Leakage(a) => cmd_leakage(a, &seed).and_then(|pass| {
            if pass {
                Ok(())
            } else {
                Err(Failure::Protocol("TVLA threshold exceeded".into()))
            }
        }),
        Cmd::Account(a) => cmd_account(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Protocol(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
