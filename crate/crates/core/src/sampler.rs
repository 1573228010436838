//! Multiplicity-weighted Hopfield energy, its exact score, and unadjusted
//! Langevin chains over it.
//!
//! The weights enter only as a log-bias on the attention logits:
//! `softmax(beta * X^T xi + log r)`. The bias is stored shifted by its
//! maximum, which leaves every softmax unchanged and makes a uniform `r`
//! contribute exact zeros, so uniform weighting reproduces the unweighted
//! sampler bit for bit.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::FunctionalSplit;
use crate::encoder::MemoryMatrix;
use crate::error::{HopgenError, Result};
use crate::numeric::{logsumexp, softmax_into};

/// Positive per-pattern weights `r` and their logarithms.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplicityVector {
    r: Vec<f64>,
    log_r: Vec<f64>,
    logit_bias: Vec<f64>,
}

impl MultiplicityVector {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.is_empty() {
            return Err(HopgenError::Config("empty multiplicity vector".into()));
        }
        if let Some(bad) = r.iter().find(|&&x| !(x > 0.0 && x.is_finite())) {
            return Err(HopgenError::Config(format!(
                "multiplicity weights must be positive and finite, got {bad}"
            )));
        }
        let log_r: Vec<f64> = r.iter().map(|x| x.ln()).collect();
        let top = log_r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let logit_bias = log_r.iter().map(|l| l - top).collect();
        Ok(MultiplicityVector { r, log_r, logit_bias })
    }

    pub fn uniform(k: usize) -> Self {
        MultiplicityVector::new(vec![1.0; k]).expect("unit weights are valid")
    }

    pub fn weights(&self) -> &[f64] {
        &self.r
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

fn check_dims(xi_len: usize, memory: &MemoryMatrix, r: &MultiplicityVector) {
    assert_eq!(xi_len, memory.dim(), "state dimension does not match memory");
    assert_eq!(r.len(), memory.num_patterns(), "weights do not match pattern count");
}

/// Scratch buffers for one attention evaluation.
#[derive(Debug, Clone)]
pub struct Attention {
    logits: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Attention {
    pub fn new(k: usize) -> Self {
        Attention {
            logits: vec![0.0; k],
            weights: vec![0.0; k],
        }
    }

    /// Fills `weights` with `softmax(beta * X^T xi + log r)`.
    pub fn evaluate(&mut self, xi: &[f64], memory: &MemoryMatrix, beta: f64, r: &MultiplicityVector) {
        for (k, l) in self.logits.iter_mut().enumerate() {
            let sim: f64 = memory.pattern(k).iter().zip(xi).map(|(a, b)| a * b).sum();
            *l = beta * sim + r.logit_bias[k];
        }
        softmax_into(&self.logits, &mut self.weights);
    }

    /// `X * weights` accumulated into `out` scaled by `scale`.
    fn accumulate_readout(&self, memory: &MemoryMatrix, scale: f64, out: &mut [f64]) {
        for (k, &w) in self.weights.iter().enumerate() {
            let s = scale * w;
            for (o, m) in out.iter_mut().zip(memory.pattern(k)) {
                *o += s * m;
            }
        }
    }
}

/// Softmax attention over the stored patterns.
pub fn attention(xi: &DVector<f64>, memory: &MemoryMatrix, beta: f64, r: &MultiplicityVector) -> Vec<f64> {
    check_dims(xi.len(), memory, r);
    let mut att = Attention::new(memory.num_patterns());
    att.evaluate(xi.as_slice(), memory, beta, r);
    att.weights
}

/// `E_r(xi) = |xi|^2 / 2 - (1/beta) logsumexp_k(beta m_k^T xi + log r_k)`.
pub fn energy(xi: &DVector<f64>, memory: &MemoryMatrix, beta: f64, r: &MultiplicityVector) -> f64 {
    check_dims(xi.len(), memory, r);
    let logits: Vec<f64> = (0..memory.num_patterns())
        .map(|k| {
            let sim: f64 = memory.pattern(k).iter().zip(xi.iter()).map(|(a, b)| a * b).sum();
            beta * sim + r.log_r[k]
        })
        .collect();
    0.5 * xi.norm_squared() - logsumexp(&logits) / beta
}

/// Score of the Boltzmann density `exp(-beta E_r)`, scaled by `1/beta`:
/// `X softmax(beta X^T xi + log r) - xi`, i.e. `-grad E_r`.
pub fn score(xi: &DVector<f64>, memory: &MemoryMatrix, beta: f64, r: &MultiplicityVector) -> DVector<f64> {
    check_dims(xi.len(), memory, r);
    let mut att = Attention::new(memory.num_patterns());
    att.evaluate(xi.as_slice(), memory, beta, r);
    let mut out = -xi.clone();
    att.accumulate_readout(memory, 1.0, out.as_mut_slice());
    out
}

/// One weighted ULA update with caller-supplied standard-normal `noise`:
/// `(1 - alpha) xi + alpha X softmax(beta X^T xi + log r) + sqrt(2 alpha / beta) noise`.
pub fn ula_step(
    xi: &DVector<f64>,
    memory: &MemoryMatrix,
    beta: f64,
    r: &MultiplicityVector,
    alpha: f64,
    noise: &DVector<f64>,
) -> DVector<f64> {
    check_dims(xi.len(), memory, r);
    let mut att = Attention::new(memory.num_patterns());
    let mut out = xi.clone();
    step_in_place(out.as_mut_slice(), memory, beta, r, alpha, noise.as_slice(), &mut att);
    out
}

/// Advances `xi` by one step; leaves the attention used for the step in
/// `att.weights`.
fn step_in_place(
    xi: &mut [f64],
    memory: &MemoryMatrix,
    beta: f64,
    r: &MultiplicityVector,
    alpha: f64,
    noise: &[f64],
    att: &mut Attention,
) {
    att.evaluate(xi, memory, beta, r);
    let noise_scale = (2.0 * alpha / beta).sqrt();
    for (x, n) in xi.iter_mut().zip(noise) {
        *x = (1.0 - alpha) * *x + noise_scale * n;
    }
    att.accumulate_readout(memory, alpha, xi);
}

/// Source of the Gaussian increments driving a chain.
pub trait NoiseSource {
    fn fill(&mut self, buf: &mut [f64]);
}

/// Standard-normal draws from any RNG.
pub struct GaussianNoise<R>(pub R);

impl<R: Rng> NoiseSource for GaussianNoise<R> {
    fn fill(&mut self, buf: &mut [f64]) {
        for b in buf.iter_mut() {
            *b = self.0.sample(StandardNormal);
        }
    }
}

/// Deterministic zero noise: turns the sampler into gradient descent.
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn fill(&mut self, buf: &mut [f64]) {
        buf.fill(0.0);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub alpha: f64,
    pub beta: f64,
    pub steps: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub chains: usize,
    pub seed: u64,
    pub init_sigma: f64,
    /// Record the energy at every step (for trace dumps).
    #[serde(default)]
    pub record_energy: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            alpha: 0.01,
            beta: 1.0,
            steps: 5000,
            burn_in: 2000,
            thin: 100,
            chains: 30,
            seed: 0,
            init_sigma: 0.1,
            record_energy: false,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HopgenError::Config(m));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return fail(format!("beta must be positive, got {}", self.beta));
        }
        if self.burn_in >= self.steps {
            return fail(format!("burn_in {} must be below steps {}", self.burn_in, self.steps));
        }
        if self.thin == 0 || self.chains == 0 {
            return fail("thin and chains must be at least 1".into());
        }
        if !(self.init_sigma >= 0.0) {
            return fail(format!("init_sigma must be nonnegative, got {}", self.init_sigma));
        }
        Ok(())
    }

    /// Samples kept per chain: states at `burn_in, burn_in + thin, ...`
    /// up to and including `steps`.
    pub fn samples_per_chain(&self) -> usize {
        (self.steps - self.burn_in) / self.thin + 1
    }
}

/// Post-burn-in output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub chain_id: usize,
    pub seed_used: u64,
    pub start_pattern: usize,
    /// Thinned states `xi_t` for `t = burn_in, burn_in + thin, ...`.
    pub samples: Vec<DVector<f64>>,
    /// Attention mass on designated patterns at state `xi_t`, `t = 0..steps`.
    pub attention_designated: Vec<f64>,
    /// Energy of `xi_t`, `t = 0..steps`, when requested.
    pub energy: Option<Vec<f64>>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of a master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index)
}

/// Runs one chain from `init` and records attention, thinned samples and
/// optionally energies.
pub fn run_chain<N: NoiseSource>(
    memory: &MemoryMatrix,
    designated: &[bool],
    config: &SamplerConfig,
    r: &MultiplicityVector,
    init: DVector<f64>,
    noise: &mut N,
) -> (Vec<DVector<f64>>, Vec<f64>, Option<Vec<f64>>) {
    check_dims(init.len(), memory, r);
    let mut xi = init;
    let mut att = Attention::new(memory.num_patterns());
    let mut eps = vec![0.0; memory.dim()];
    let mut samples = Vec::with_capacity(config.samples_per_chain());
    let mut attention_designated = Vec::with_capacity(config.steps);
    let mut energies = config.record_energy.then(|| Vec::with_capacity(config.steps + 1));

    for t in 0..=config.steps {
        if t >= config.burn_in && (t - config.burn_in) % config.thin == 0 {
            samples.push(xi.clone());
        }
        if let Some(e) = energies.as_mut() {
            e.push(energy(&xi, memory, config.beta, r));
        }
        if t == config.steps {
            break;
        }
        noise.fill(&mut eps);
        step_in_place(xi.as_mut_slice(), memory, config.beta, r, config.alpha, &eps, &mut att);
        let mass: f64 = att
            .weights
            .iter()
            .zip(designated)
            .filter(|(_, &d)| d)
            .map(|(w, _)| w)
            .sum();
        attention_designated.push(mass.clamp(0.0, 1.0));
    }
    (samples, attention_designated, energies)
}

/// Runs `config.chains` independent chains in parallel.
///
/// Chain `c` seeds its own generator with `derive_seed(config.seed, c)`,
/// starts at a uniformly chosen stored pattern plus `N(0, init_sigma^2 I)`
/// and is fully reproducible on its own; output order is by chain id.
pub fn run_chains(
    memory: &MemoryMatrix,
    split: &FunctionalSplit,
    config: &SamplerConfig,
    r: &MultiplicityVector,
) -> Result<Vec<ChainTrace>> {
    config.validate()?;
    if split.num_seqs != memory.num_patterns() || r.len() != memory.num_patterns() {
        return Err(HopgenError::Config(format!(
            "split covers {} patterns and weights {}, memory holds {}",
            split.num_seqs,
            r.len(),
            memory.num_patterns()
        )));
    }
    let designated = split.mask();
    let traces = (0..config.chains)
        .into_par_iter()
        .map(|c| {
            let seed = derive_seed(config.seed, c as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let start = rng.random_range(0..memory.num_patterns());
            let mut init = DVector::from_column_slice(memory.pattern(start));
            for v in init.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *v += config.init_sigma * z;
            }
            let mut noise = GaussianNoise(rng);
            let (samples, attention_designated, energy) = run_chain(memory, &designated, config, r, init, &mut noise);
            ChainTrace {
                chain_id: c,
                seed_used: seed,
                start_pattern: start,
                samples,
                attention_designated,
                energy,
            }
        })
        .collect();
    Ok(traces)
}

/// TSV dump of one chain: step, energy, designated attention mass.
///
/// Energies are only present when the run recorded them; otherwise the
/// column holds `NA`.
pub fn write_trace_tsv<W: Write>(trace: &ChainTrace, mut out: W) -> std::io::Result<()> {
    writeln!(out, "step\tenergy\tattention_designated")?;
    for (t, a) in trace.attention_designated.iter().enumerate() {
        match trace.energy.as_ref().and_then(|e| e.get(t)) {
            Some(e) => writeln!(out, "{t}\t{e}\t{a}")?,
            None => writeln!(out, "{t}\tNA\t{a}")?,
        }
    }
    Ok(())
}
