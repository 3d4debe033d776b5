use hwgn2::leakage::*;
use hwgn2::mips::assemble;
use hwgn2::nncompile::synth::{bm2, random_input};
use hwgn2::nncompile::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::statistics::Statistics;

fn gaussian_set(pop: Population, n: usize, samples: usize, mu: f64, rng: &mut ChaCha8Rng) -> TraceSet {
    let d = Normal::new(mu, 1.0).unwrap();
    let mut s = TraceSet::new(pop, samples);
    s.data = (0..n * samples).map(|_| d.sample(rng) as f32).collect();
    s
}

/// Two-pass Welch t via statrs means and variances.
fn two_pass(a: &TraceSet, b: &TraceSet) -> Vec<f64> {
    let col = |s: &TraceSet, j: usize| s.traces().map(|r| r[j] as f64).collect::<Vec<_>>();
    (0..a.n_samples)
        .map(|j| {
            let (x, y) = (col(a, j), col(b, j));
            let (n1, n2) = (x.len() as f64, y.len() as f64);
            let (m1, m2) = (x.clone().mean(), y.clone().mean());
            let (v1, v2) = (x.variance(), y.variance());
            (m1 - m2) / (v1 / n1 + v2 / n2).sqrt()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn welch_matches_two_pass_oracle(seed in any::<u64>(), n1 in 2usize..60, n2 in 2usize..60, m in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shift = rng.gen_range(-3.0..3.0);
        let a = gaussian_set(Population::Fixed, n1, m, 0.0, &mut rng);
        let b = gaussian_set(Population::Random, n2, m, shift, &mut rng);
        let t = welch_t(&a, &b).unwrap();
        prop_assert_eq!((t.n1, t.n2), (n1 as u64, n2 as u64));
        for (got, want) in t.t.iter().zip(two_pass(&a, &b)) {
            prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-300), "{} vs {}", got, want);
        }
    }

    #[test]
    fn trace_files_round_trip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = TraceSet::new(Population::Random, 100);
        s.data = (0..10 * 100).map(|_| rng.gen_range(-1e6f32..1e6)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.trc");
        export_traces(&s, &p).unwrap();
        let back = import_traces(&p).unwrap();
        prop_assert_eq!(back.n_traces(), 10);
        prop_assert!(back.data.iter().zip(&s.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        prop_assert_eq!(back, s);
    }
}

#[test]
fn unit_shift_gives_closed_form_t() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = gaussian_set(Population::Fixed, 10_000, 4, 0.0, &mut rng);
    let b = gaussian_set(Population::Random, 10_000, 4, 1.0, &mut rng);
    let expect = -1.0 / (2.0f64 / 1e4).sqrt();
    for t in welch_t(&a, &b).unwrap().t {
        assert!((t - expect).abs() < 0.05 * expect.abs(), "{t} vs {expect}");
    }
}

#[test]
fn squared_n_denominator_scales_by_root_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = gaussian_set(Population::Fixed, 400, 3, 0.0, &mut rng);
    let b = gaussian_set(Population::Random, 400, 3, 0.2, &mut rng);
    let t = welch_t(&a, &b).unwrap();
    let p = welch_t_squared_n(&a, &b).unwrap();
    for (x, y) in t.t.iter().zip(&p.t) {
        assert!((y / x - 20.0).abs() < 1e-9);
    }
}

#[test]
fn same_distribution_stays_under_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = gaussian_set(Population::Fixed, 10_000, 2000, 0.0, &mut rng);
    let b = gaussian_set(Population::Random, 10_000, 2000, 0.0, &mut rng);
    let t = welch_t(&a, &b).unwrap();
    let inside = t.t.iter().filter(|v| v.abs() < TVLA_THRESHOLD).count();
    assert!(inside as f64 / t.t.len() as f64 > 0.9999);
}

#[test]
fn all_ones_write_leaks_thirty_two() {
    let p = assemble(".config dmem=16 mult=off\nADDI r1, r0, -1\nHALT\n").unwrap();
    let s = simulate_unprotected(&p, &InputPolicy::Fixed(vec![]), 3, &LeakageModel::new(0.0), [0; 32]).unwrap();
    assert_eq!(s.n_samples, 1);
    assert!(s.data.iter().all(|&v| v == 32.0));
    let noisy = simulate_unprotected(&p, &InputPolicy::Fixed(vec![]), 4000, &LeakageModel::new(1.0), [0; 32]).unwrap();
    let mean = noisy.data.iter().map(|&v| v as f64).mean();
    assert!((mean - 32.0).abs() < 0.1, "{mean}");
}

#[test]
fn model_is_validated() {
    assert!(LeakageModel::new(-1.0).validate().is_err());
    assert!(LeakageModel::new(f64::NAN).validate().is_err());
    let m = LeakageModel {
        samples_per_step: 0,
        ..LeakageModel::new(1.0)
    };
    assert!(m.validate().is_err());
}

fn bm2_program() -> (hwgn2::mips::MipsProgram, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = bm2(&mut rng);
    let p = compile_mlp(&m, CompileOptions::default()).unwrap();
    let x = encode_mlp_input(&random_input(784, &mut rng)).unwrap();
    (p, x)
}

#[test]
fn plain_bm2_leaks_quickly() {
    let (p, x) = bm2_program();
    let cfg = CampaignConfig {
        target: Target::Unprotected,
        traces_per_population: 300,
        samples_per_step: 1,
        sigmas: vec![1.0],
        seed: [1; 32],
        fixed_input: x,
    };
    let r = run_campaign(&p, &cfg, None).unwrap();
    assert!(!r.results[0].verdict.pass);
    assert!(r.results[0].verdict.max_abs_t > 50.0);
}

#[test]
fn garbled_bm2_fresh_and_reused() {
    let (p, x) = bm2_program();
    let mut cfg = CampaignConfig {
        target: Target::Garbled {
            window_steps: Some(2),
            reuse_seed: false,
        },
        traces_per_population: 400,
        samples_per_step: 16,
        sigmas: vec![0.0, 1.0],
        seed: [2; 32],
        fixed_input: x,
    };
    let r = run_campaign(&p, &cfg, None).unwrap();
    assert_eq!(r.n_samples, 32);
    assert!(r.results.iter().all(|s| s.verdict.pass), "{:?}", r.results.iter().map(|s| s.verdict.max_abs_t).collect::<Vec<_>>());
    cfg.target = Target::Garbled {
        window_steps: Some(2),
        reuse_seed: true,
    };
    cfg.traces_per_population = 50;
    let r = run_campaign(&p, &cfg, None).unwrap();
    assert!(!r.results[0].verdict.pass);
}

#[test]
fn fresh_garbling_changes_every_trace() {
    let (p, x) = bm2_program();
    let s = simulate_garbled(&p, &InputPolicy::Fixed(x), 2, &LeakageModel::new(0.0), [3; 32], Some(1), false).unwrap();
    assert_ne!(s.trace(0), s.trace(1));
    let mean = s.data.iter().map(|&v| v as f64).mean();
    assert!((mean - 64.0).abs() < 1.0, "{mean}");
}

#[test]
fn campaign_streams_to_trace_files() {
    let p = assemble(".config dmem=16 mult=off\n.input 0 2\nLW r1, 0(r0)\nLW r2, 1(r0)\nXOR r3, r1, r2\nHALT\n").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = CampaignConfig {
        target: Target::Unprotected,
        traces_per_population: 20,
        samples_per_step: 1,
        sigmas: vec![0.5],
        seed: [4; 32],
        fixed_input: vec![1, 2],
    };
    let mut writers: Vec<Option<TraceWriter>> = vec![None, None];
    let mut sink = |pop: Population, row: &[f32]| {
        let w = &mut writers[pop.tag() as usize];
        if w.is_none() {
            *w = Some(TraceWriter::create(&dir.path().join(format!("{pop:?}.trc")), pop, row.len())?);
        }
        w.as_mut().unwrap().push(row)
    };
    let report = run_campaign(&p, &cfg, Some(&mut sink)).unwrap();
    for w in writers {
        assert_eq!(w.unwrap().finish().unwrap(), 20);
    }
    let f = import_traces(&dir.path().join("Fixed.trc")).unwrap();
    let r = import_traces(&dir.path().join("Random.trc")).unwrap();
    assert_eq!((f.population, f.n_traces(), f.n_samples), (Population::Fixed, 20, 3));
    let t = welch_t(&f, &r).unwrap();
    for (a, b) in t.t.iter().zip(&report.results[0].series.t) {
        assert!((a - b).abs() < 1e-4 * b.abs().max(1.0));
    }
}
