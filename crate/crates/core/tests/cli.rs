use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hwgn2::nncompile::synth::{bm2, random_input, random_mlp};
use hwgn2::nncompile::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn hwgn2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hwgn2"))
        .args(args)
        .env_remove("HWGN2_PROFILE")
        .output()
        .unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
    model: MlpModel,
    x: Vec<i32>,
}

impl Fixture {
    fn small(seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_mlp(&[6, 3, 2], Activation::Relu, &mut rng);
        let x = random_input(6, &mut rng);
        Fixture {
            dir: tempfile::tempdir().unwrap(),
            model,
            x,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    /// Writes model, program and pixel input; returns (program, input).
    fn files(&self) -> (PathBuf, PathBuf) {
        let m = self.path("m.json");
        std::fs::write(&m, Model::Mlp(self.model.clone()).to_json()).unwrap();
        let o = hwgn2(&["compile", s(&m)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let x = self.path("x.txt");
        let text: Vec<String> = self.x.iter().map(|v| v.to_string()).collect();
        std::fs::write(&x, text.join(" ")).unwrap();
        (self.path("m.s"), x)
    }

    fn expected(&self) -> Vec<i32> {
        infer_plain(&self.model, &self.x).unwrap()
    }
}

fn logits(report: &Value) -> Vec<i32> {
    let words: Vec<u32> = serde_json::from_value(report["y"].clone()).unwrap();
    decode_output(&words)
}

#[test]
fn compile_reports_counts_and_bnn_is_shorter() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bm2.json");
    std::fs::write(&m, Model::Mlp(bm2(&mut ChaCha8Rng::seed_from_u64(1))).to_json()).unwrap();
    let o = hwgn2(&["compile", s(&m)]);
    assert_eq!(code(&o), 0);
    let mlp = json(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("instructions"));
    let text = std::fs::read_to_string(dir.path().join("bm2.s")).unwrap();
    let p = hwgn2::mips::assemble(&text).unwrap();
    assert_eq!(mlp["instructions"], p.instructions.len());
    assert_eq!(mlp["dmem_words"], p.dmem_words);

    let out = dir.path().join("bnn.s");
    let b = json(&hwgn2(&["compile", s(&m), "--bnn", "-o", s(&out)]));
    assert_eq!(b["kind"], "bnn");
    assert!(b["instructions"].as_u64() < mlp["instructions"].as_u64());
    assert!(out.exists());
}

#[test]
fn malformed_model_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("bad.json");
    std::fs::write(&m, "{\n  \"kind\": \"mlp\",\n  \"layer_sizes\": [2, 1\n}\n").unwrap();
    let o = hwgn2(&["compile", s(&m)]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.json") && err.contains("line"), "{err}");
    assert!(o.stdout.is_empty());

    let missing = hwgn2(&["compile", s(&dir.path().join("none.json"))]);
    assert_eq!(code(&missing), 2);
    assert_eq!(code(&hwgn2(&["run", "--mode", "stream:0"])), 2);
}

#[test]
fn account_follows_the_round_formula() {
    let r = json(&hwgn2(&["account", "--steps", "1629", "--mode", "stream:1"]));
    assert_eq!(r["rounds"], 1631);
    let r = json(&hwgn2(&["account", "--steps", "2345", "--mode", "stream:4"]));
    assert_eq!((r["deliveries"].as_u64(), r["rounds"].as_u64()), (Some(587), Some(589)));
    let r = json(&hwgn2(&["account", "--steps", "2345", "--mode", "full"]));
    assert_eq!(r["rounds"], 2);
    let r = json(&hwgn2(&["account", "--steps", "10", "--security", "malicious:4"]));
    assert_eq!(r["rounds"], 13);

    let f = Fixture::small(2);
    let (prog, _) = f.files();
    let r = json(&hwgn2(&["account", s(&prog)]));
    let t = r["steps"].as_u64().unwrap();
    assert_eq!(r["rounds"].as_u64(), Some(t + 2));
    assert_eq!(r["stats"]["ot_rounds"].as_u64(), Some(t + 2));
    assert!(r["stats"]["bytes_garbler_to_evaluator"].as_u64().unwrap() > 0);
    assert_eq!(code(&hwgn2(&["account", s(&prog), "--steps", &(t + 1).to_string()])), 2);
}

#[test]
fn loopback_runs_match_plain_inference() {
    let f = Fixture::small(3);
    let (prog, x) = f.files();
    let mut steps = None;
    for mode in ["full", "stream:1", "stream:3"] {
        let o = hwgn2(&["run", s(&prog), "--input", s(&x), "--input-format", "pixels", "--loopback", "--mode", mode, "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r = json(&o);
        assert_eq!(logits(&r), f.expected(), "{mode}");
        assert_eq!(r["config"]["mode"], mode);
        assert_eq!(r["seed"], "7");
        assert!(r.get("timing").unwrap().is_null());
        let t = r["side_info"]["step_count"].as_u64().unwrap();
        steps = Some(t);
        let rounds = r["stats"]["ot_rounds"].as_u64().unwrap();
        match mode {
            "full" => assert_eq!(rounds, 2),
            "stream:1" => assert_eq!(rounds, t + 2),
            _ => assert_eq!(rounds, t.div_ceil(3) + 2),
        }
    }
    assert!(steps.unwrap() > 0);
}

#[test]
fn honest_malicious_run_verdicts_ok() {
    let f = Fixture::small(4);
    let (prog, x) = f.files();
    let o = hwgn2(&[
        "run", s(&prog), "--input", s(&x), "--input-format", "pixels", "--loopback", "--mode", "stream:4", "--security",
        "malicious:8", "--seed", "m",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["verdict"], "OK");
    assert_eq!(logits(&r), f.expected());
}

#[test]
fn seeded_reports_are_byte_stable() {
    let f = Fixture::small(5);
    let (prog, x) = f.files();
    let args = ["run", s(&prog), "--input", s(&x), "--input-format", "pixels", "--loopback", "--seed", "replay"];
    let a = hwgn2(&args);
    let b = hwgn2(&args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let unseeded = json(&hwgn2(&args[..args.len() - 2]));
    assert_eq!(unseeded["seed"].as_str().unwrap().len(), 64);
}

#[test]
fn wrong_input_size_is_a_usage_error() {
    let f = Fixture::small(6);
    let (prog, _) = f.files();
    let x = f.path("long.txt");
    std::fs::write(&x, "1 2 3 4 5 6 7 8 9 10").unwrap();
    let o = hwgn2(&["run", s(&prog), "--input", s(&x), "--loopback"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    std::fs::write(&x, "1 zwei 3").unwrap();
    assert_eq!(code(&hwgn2(&["run", s(&prog), "--input", s(&x), "--loopback"])), 2);
    assert_eq!(code(&hwgn2(&["run", s(&prog), "--input", s(&x)])), 2);
}

#[test]
fn tcp_roles_agree() {
    let f = Fixture::small(7);
    let (prog, x) = f.files();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let garbler = Command::new(env!("CARGO_BIN_EXE_hwgn2"))
        .args(["run", s(&prog), "--listen", &addr, "--role", "garbler", "--mode", "stream:2", "--seed", "g"])
        .env_remove("HWGN2_PROFILE")
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let e = hwgn2(&[
        "run", "--input", s(&x), "--input-format", "pixels", "--connect", &addr, "--role", "evaluator", "--mode", "stream:2",
        "--seed", "e",
    ]);
    let g = garbler.wait_with_output().unwrap();
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    assert_eq!(code(&g), 0, "{}", String::from_utf8_lossy(&g.stderr));
    let (e, g) = (json(&e), json(&g));
    assert_eq!(logits(&e), f.expected());
    for k in ["ot_rounds", "bytes_garbler_to_evaluator", "bytes_evaluator_to_garbler"] {
        assert_eq!(g["stats"][k], e["stats"][k], "{k}");
    }
    assert_eq!(g["config"]["role"], "garbler");
}

#[test]
fn leakage_command_writes_traces_and_verdicts() {
    let f = Fixture::small(8);
    let (prog, _) = f.files();
    let out = f.path("campaign");
    let o = hwgn2(&["leakage", s(&prog), "--target", "unprotected", "--traces", "400", "--sigma", "1", "--out", s(&out), "--seed", "1"]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&o);
    assert_eq!(r["pass"], false);
    assert!(r["max_abs_t"].as_f64().unwrap() > 4.5);
    let fixed = hwgn2::leakage::import_traces(&f.path("campaign.fixed.trc")).unwrap();
    let random = hwgn2::leakage::import_traces(&f.path("campaign.random.trc")).unwrap();
    assert_eq!((fixed.n_traces(), random.n_traces()), (200, 200));
    let csv = std::fs::read_to_string(f.path("campaign.tscores.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + fixed.n_samples);
    let t = hwgn2::leakage::welch_t(&fixed, &random).unwrap();
    let max = t.t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((max - r["max_abs_t"].as_f64().unwrap()).abs() < 1e-6 * max);

    let g = hwgn2(&["leakage", s(&prog), "--target", "garbled", "--traces", "200", "--sigma", "1", "--window", "2", "--seed", "2"]);
    assert_eq!(code(&g), 0, "{}", String::from_utf8_lossy(&g.stdout));
    assert_eq!(json(&g)["n_samples"], 32);
    let n = hwgn2(&["leakage", s(&prog), "--target", "garbled-reused-seed", "--traces", "100", "--sigma", "0", "--window", "2"]);
    assert_eq!(code(&n), 1);
}
