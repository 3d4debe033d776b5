//! Trace generation and fixed-vs-random campaigns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::stats::{tvla_verdict, TScoreSeries, TvlaVerdict, WelchAccumulator};
use super::{InputPolicy, LeakageError, LeakageModel, Population, TraceSet};
use crate::garble::{FixedKeyAes, GarbledTable};
use crate::mips::{run_plain, step_plain, MipsProgram, RunOptions};
use crate::protocol::engine::{derive, CopyEvaluator, CopyGarbler, StepCircuit};

/// Steps of a garbled run observed by default. The whole machine state
/// passes through every step, so input-dependent wires appear from the
/// first step on.
pub const DEFAULT_WINDOW_STEPS: u64 = 4;

const CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Target {
    /// Plain emulator: one sample per architectural write.
    Unprotected,
    /// Garbled evaluator with ideal OT. `window_steps = None` observes the
    /// whole run; `reuse_seed` garbles every trace identically.
    Garbled { window_steps: Option<u64>, reuse_seed: bool },
}

#[derive(Clone, Debug)]
pub struct CampaignConfig {
    pub target: Target,
    pub traces_per_population: usize,
    pub samples_per_step: usize,
    /// Noise levels evaluated on the same raw traces; the first one is
    /// what the trace sink receives.
    pub sigmas: Vec<f64>,
    pub seed: [u8; 32],
    pub fixed_input: Vec<u32>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SigmaResult {
    pub sigma: f64,
    pub series: TScoreSeries,
    pub verdict: TvlaVerdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct CampaignReport {
    pub target: Target,
    pub traces_per_population: usize,
    pub n_samples: usize,
    pub results: Vec<SigmaResult>,
}

/// Raw leakage and standard-normal noise of one trace.
struct Trace {
    raw: Vec<f32>,
    noise: Vec<f32>,
}

impl Trace {
    fn row(&self, sigma: f64) -> impl Iterator<Item = f64> + '_ {
        self.raw.iter().zip(&self.noise).map(move |(&r, &z)| r as f64 + sigma * z as f64)
    }
}

struct Lab<'a> {
    program: &'a MipsProgram,
    target: Target,
    seed: [u8; 32],
    fixed: &'a [u32],
    spp: usize,
    circ: Option<StepCircuit>,
    prp: FixedKeyAes,
    width: usize,
}

impl<'a> Lab<'a> {
    fn new(
        program: &'a MipsProgram,
        target: Target,
        seed: [u8; 32],
        fixed: &'a [u32],
        spp: usize,
    ) -> Result<Lab<'a>, LeakageError> {
        program.validate()?;
        if fixed.len() != program.evaluator_input_region.1 as usize {
            return Err(LeakageError::Config(format!(
                "fixed input has {} words, the program reads {}",
                fixed.len(),
                program.evaluator_input_region.1
            )));
        }
        if spp == 0 {
            return Err(LeakageError::Config("samples per step must be at least 1".into()));
        }
        let circ = match target {
            Target::Unprotected => None,
            Target::Garbled { window_steps, .. } => {
                let c = StepCircuit::new(program.step_config())?;
                if spp > c.netlist.gates().len() {
                    return Err(LeakageError::Config(format!(
                        "{spp} samples per step exceed the {} gates of a step",
                        c.netlist.gates().len()
                    )));
                }
                if window_steps == Some(0) {
                    return Err(LeakageError::Config("window must cover at least one step".into()));
                }
                Some(c)
            }
        };
        let mut lab = Lab {
            program,
            target,
            seed,
            fixed,
            spp,
            circ,
            prp: FixedKeyAes::new(),
            width: 0,
        };
        if let Target::Garbled { window_steps, .. } = target {
            let steps = match window_steps {
                Some(w) => w,
                None => run_plain(program, fixed, RunOptions::default())?.step_count,
            };
            lab.width = steps as usize * spp;
        }
        Ok(lab)
    }

    fn trace_rng(&self, pop: Population, i: usize) -> ChaCha20Rng {
        let mut tag = b"trace".to_vec();
        tag.push(pop.tag());
        tag.extend_from_slice(&(i as u64).to_le_bytes());
        ChaCha20Rng::from_seed(derive(&self.seed, &tag))
    }

    fn input(&self, pop: Population, rng: &mut ChaCha20Rng) -> Vec<u32> {
        match pop {
            Population::Fixed => self.fixed.to_vec(),
            Population::Random => (0..self.fixed.len()).map(|_| rng.gen()).collect(),
        }
    }

    /// Unpadded raw leakage of trace `i`, and its noise generator.
    fn raw(&self, pop: Population, i: usize) -> Result<(Vec<f32>, ChaCha20Rng), LeakageError> {
        let mut rng = self.trace_rng(pop, i);
        let x = self.input(pop, &mut rng);
        let raw = match self.target {
            Target::Unprotected => {
                let out = run_plain(
                    self.program,
                    &x,
                    RunOptions {
                        hooks: true,
                        ..RunOptions::default()
                    },
                )?;
                out.events.iter().map(|e| e.hamming_weight() as f32).collect()
            }
            Target::Garbled { reuse_seed, .. } => {
                let gseed = if reuse_seed { derive(&self.seed, b"garble") } else { rng.gen() };
                self.garbled(&x, gseed)?
            }
        };
        Ok((raw, rng))
    }

    fn garbled(&self, x: &[u32], gseed: [u8; 32]) -> Result<Vec<f32>, LeakageError> {
        let circ = self.circ.as_ref().expect("garbled target has a circuit");
        let cfg = self.program.step_config();
        let mut state = self.program.initial_state(x)?;
        let bits = state.to_bits();
        let mut g = CopyGarbler::new(circ, &self.prp, gseed);
        let labels: Vec<u128> = bits.iter().enumerate().map(|(b, &v)| g.active(g.initial_zero()[b], v)).collect();
        // Ideal OT: the evaluator holds its input labels from the start.
        let mut ev = CopyEvaluator::new(circ, &self.prp, labels, false);
        let n_gates = circ.netlist.gates().len();
        let steps = self.width / self.spp;
        let mut out = Vec::with_capacity(self.width);
        let mut tables: Vec<GarbledTable> = Vec::with_capacity(circ.nonfree());
        let mut sum = vec![0u64; self.spp];
        let mut count = vec![0u32; self.spp];
        for _ in 0..steps {
            if state.halted {
                break;
            }
            let Some(&word) = self.program.instructions.get(state.pc as usize) else {
                break;
            };
            tables.clear();
            tables.extend_from_slice(g.garble_step()?);
            let instr = g.instruction_labels(word);
            sum.fill(0);
            count.fill(0);
            let mut k = 0usize;
            ev.eval_tables(&instr, &tables, |_, label, row| {
                let bin = k * self.spp / n_gates;
                sum[bin] += label.count_ones() as u64;
                count[bin] += 1;
                // Row zero is implicit and never fetched.
                if let Some(r) = row.filter(|&r| r != 0) {
                    sum[bin] += r.count_ones() as u64;
                    count[bin] += 1;
                }
                k += 1;
            })?;
            out.extend(sum.iter().zip(&count).map(|(&s, &c)| s as f32 / c as f32));
            state = step_plain(&cfg, &state, word)?;
        }
        Ok(out)
    }

    /// Trace `i` padded to the campaign width; padding samples are
    /// noise only.
    fn trace(&self, pop: Population, i: usize) -> Result<Trace, LeakageError> {
        let (mut raw, mut rng) = self.raw(pop, i)?;
        raw.resize(self.width, 0.0);
        let noise = (0..self.width).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Ok(Trace { raw, noise })
    }

    /// Plain traces are as wide as the most writes any trace makes.
    fn measure_width(&mut self, pops: &[Population], n: usize) -> Result<(), LeakageError> {
        if self.target != Target::Unprotected {
            return Ok(());
        }
        let jobs: Vec<(Population, usize)> = pops.iter().flat_map(|&p| (0..n).map(move |i| (p, i))).collect();
        self.width = jobs
            .par_iter()
            .map(|&(p, i)| self.raw(p, i).map(|r| r.0.len()))
            .try_reduce(|| 0, |a, b| Ok(a.max(b)))?;
        Ok(())
    }
}

fn materialize(lab: &mut Lab, pop: Population, n: usize, sigma: f64) -> Result<TraceSet, LeakageError> {
    lab.measure_width(&[pop], n)?;
    let rows = (0..n)
        .into_par_iter()
        .map(|i| lab.trace(pop, i))
        .collect::<Result<Vec<_>, _>>()?;
    let mut set = TraceSet::new(pop, lab.width);
    set.data.reserve(n * lab.width);
    for t in rows {
        set.data.extend(t.row(sigma).map(|v| v as f32));
    }
    Ok(set)
}

fn fixed_words(program: &MipsProgram, policy: &InputPolicy) -> Vec<u32> {
    match policy {
        InputPolicy::Fixed(x) => x.clone(),
        InputPolicy::Random => vec![0; program.evaluator_input_region.1 as usize],
    }
}

/// Plain-emulator traces: each write contributes `HW(value) + N(0, sigma)`
/// at its own sample; shorter traces are padded with noise.
pub fn simulate_unprotected(
    program: &MipsProgram,
    policy: &InputPolicy,
    n_traces: usize,
    model: &LeakageModel,
    seed: [u8; 32],
) -> Result<TraceSet, LeakageError> {
    model.validate()?;
    let fixed = fixed_words(program, policy);
    let mut lab = Lab::new(program, Target::Unprotected, seed, &fixed, model.samples_per_step)?;
    materialize(&mut lab, policy.population(), n_traces, model.noise_sigma)
}

/// Garbled-evaluator traces. Every trace garbles with a fresh seed unless
/// `reuse_seed`; each observed step yields `samples_per_step` samples, the
/// mean Hamming weight of the labels and fetched rows in consecutive runs
/// of gates.
pub fn simulate_garbled(
    program: &MipsProgram,
    policy: &InputPolicy,
    n_traces: usize,
    model: &LeakageModel,
    seed: [u8; 32],
    window_steps: Option<u64>,
    reuse_seed: bool,
) -> Result<TraceSet, LeakageError> {
    model.validate()?;
    let fixed = fixed_words(program, policy);
    let target = Target::Garbled { window_steps, reuse_seed };
    let mut lab = Lab::new(program, target, seed, &fixed, model.samples_per_step)?;
    materialize(&mut lab, policy.population(), n_traces, model.noise_sigma)
}

/// Fixed-vs-random campaign with streaming statistics. `sink` receives
/// every trace at the first noise level, in a deterministic order.
pub fn run_campaign(
    program: &MipsProgram,
    cfg: &CampaignConfig,
    mut sink: Option<&mut dyn FnMut(Population, &[f32]) -> Result<(), LeakageError>>,
) -> Result<CampaignReport, LeakageError> {
    if cfg.sigmas.is_empty() {
        return Err(LeakageError::Config("no noise level given".into()));
    }
    for &s in &cfg.sigmas {
        LeakageModel {
            samples_per_step: cfg.samples_per_step,
            ..LeakageModel::new(s)
        }
        .validate()?;
    }
    let n = cfg.traces_per_population;
    let pops = [Population::Fixed, Population::Random];
    let mut lab = Lab::new(program, cfg.target, cfg.seed, &cfg.fixed_input, cfg.samples_per_step)?;
    lab.measure_width(&pops, n)?;
    let width = lab.width;
    let mut acc: Vec<[WelchAccumulator; 2]> = cfg
        .sigmas
        .iter()
        .map(|_| [WelchAccumulator::new(width), WelchAccumulator::new(width)])
        .collect();
    let mut row = vec![0f32; width];
    for start in (0..n).step_by(CHUNK) {
        let end = (start + CHUNK).min(n);
        let jobs: Vec<(Population, usize)> = (start..end).flat_map(|i| pops.map(|p| (p, i))).collect();
        let traces = jobs
            .par_iter()
            .map(|&(p, i)| lab.trace(p, i))
            .collect::<Result<Vec<_>, _>>()?;
        for (&(p, _), t) in jobs.iter().zip(&traces) {
            let k = p.tag() as usize;
            for (a, &s) in acc.iter_mut().zip(&cfg.sigmas) {
                a[k].push(t.row(s));
            }
            if let Some(f) = sink.as_mut() {
                for (r, v) in row.iter_mut().zip(t.row(cfg.sigmas[0])) {
                    *r = v as f32;
                }
                f(p, &row)?;
            }
        }
    }
    let results = acc
        .iter()
        .zip(&cfg.sigmas)
        .map(|([f, r], &sigma)| {
            let series = f.t_against(r)?;
            let verdict = tvla_verdict(&series);
            Ok(SigmaResult { sigma, series, verdict })
        })
        .collect::<Result<_, LeakageError>>()?;
    Ok(CampaignReport {
        target: cfg.target,
        traces_per_population: n,
        n_samples: width,
        results,
    })
}
