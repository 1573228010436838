//! Phenotype, diversity and composition metrics, the Fisher separation
//! index, the calibration-gap decomposition and an exact permutation test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::FunctionalSplit;
use crate::alphabet::{AsResidue, ResidueSet, ALPHABET_SIZE};
use crate::encoder::MemoryMatrix;
use crate::error::{HopgenError, Result};
use crate::numeric::{dot, norm};
use crate::sampler::ChainTrace;

pub const DEFAULT_DIVERSITY_PAIRS: usize = 500;
pub const KL_PSEUDOCOUNT: f64 = 1e-6;
pub const DEFAULT_MAX_EXHAUSTIVE: u64 = 200_000;
pub const MONTE_CARLO_RESAMPLES: usize = 100_000;

/// Fraction of sequences carrying a marker residue at `marker_position`.
pub fn phenotype_fraction<S, R>(seqs: &[S], marker_position: usize, residues: ResidueSet) -> Result<f64>
where
    S: AsRef<[R]>,
    R: AsResidue,
{
    if seqs.is_empty() {
        return Err(HopgenError::Numerical("phenotype fraction of an empty set".into()));
    }
    let mut hits = 0usize;
    for s in seqs {
        let s = s.as_ref();
        let cell = s.get(marker_position).ok_or_else(|| {
            HopgenError::Alignment(format!(
                "sequence of length {} has no position {}",
                s.len(),
                marker_position + 1
            ))
        })?;
        hits += usize::from(residues.matches(*cell));
    }
    Ok(hits as f64 / seqs.len() as f64)
}

/// Mean designated attention over all steps `t >= burn_in` of all chains.
pub fn mean_designated_attention(traces: &[ChainTrace], burn_in: usize) -> Result<f64> {
    let (sum, n) = traces
        .iter()
        .flat_map(|t| t.attention_designated.iter().skip(burn_in))
        .fold((0.0, 0usize), |(s, n), a| (s + a, n + 1));
    if n == 0 {
        return Err(HopgenError::Numerical("no post-burn-in attention records".into()));
    }
    Ok(sum / n as f64)
}

fn identity<R: AsResidue>(a: &[R], b: &[R]) -> f64 {
    let same = a.iter().zip(b).filter(|(x, y)| x.amino() == y.amino()).count();
    same as f64 / a.len().max(1) as f64
}

/// One minus mean pairwise identity. All pairs are used when there are at
/// most `n_pairs` of them; otherwise `n_pairs` random pairs of distinct
/// indices are drawn with replacement.
pub fn pairwise_diversity<S, R>(seqs: &[S], n_pairs: usize, seed: u64) -> Result<f64>
where
    S: AsRef<[R]>,
    R: AsResidue,
{
    let n = seqs.len();
    if n < 2 {
        return Err(HopgenError::Numerical(format!(
            "diversity needs at least 2 sequences, got {n}"
        )));
    }
    let total_pairs = n * (n - 1) / 2;
    let mean_identity = if total_pairs <= n_pairs {
        let mut sum = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                sum += identity(seqs[i].as_ref(), seqs[j].as_ref());
            }
        }
        sum / total_pairs as f64
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sum = 0.0;
        for _ in 0..n_pairs {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            sum += identity(seqs[i].as_ref(), seqs[j].as_ref());
        }
        sum / n_pairs as f64
    };
    Ok(1.0 - mean_identity)
}

/// Residue frequencies pooled over every position of every sequence,
/// gaps excluded.
pub fn composition_frequencies<S, R>(seqs: &[S]) -> Result<[f64; ALPHABET_SIZE]>
where
    S: AsRef<[R]>,
    R: AsResidue,
{
    let mut counts = [0usize; ALPHABET_SIZE];
    for s in seqs {
        for a in s.as_ref().iter().filter_map(|r| r.amino()) {
            counts[a.index()] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(HopgenError::Numerical("composition of an all-gap input".into()));
    }
    Ok(counts.map(|c| c as f64 / total as f64))
}

/// `KL(gen || ref)` after adding [`KL_PSEUDOCOUNT`] to every channel of
/// both distributions and renormalizing.
pub fn kl_divergence(gen: &[f64; ALPHABET_SIZE], reference: &[f64; ALPHABET_SIZE]) -> f64 {
    let smooth = |p: &[f64; ALPHABET_SIZE]| {
        let total: f64 = p.iter().map(|x| x + KL_PSEUDOCOUNT).sum();
        p.map(|x| (x + KL_PSEUDOCOUNT) / total)
    };
    let (p, q) = (smooth(gen), smooth(reference));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub s_index: f64,
    pub mean_within: f64,
    pub mean_between: f64,
    pub sd_within: f64,
    pub sd_between: f64,
    pub n_within_pairs: usize,
    pub n_between_pairs: usize,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

/// Standardized gap between within-group and between-group cosine
/// similarity of the encoded patterns:
/// `S = (mean_within - mean_between) / (0.5 (sd_within + sd_between))`.
///
/// Within-group pairs from both groups are pooled; standard deviations use
/// the `n - 1` denominator.
pub fn fisher_separation(memory: &MemoryMatrix, split: &FunctionalSplit) -> Result<SeparationReport> {
    if split.num_seqs != memory.num_patterns() {
        return Err(HopgenError::Config("split does not match memory size".into()));
    }
    let des = &split.designated;
    let bg = split.background();
    if des.len() < 2 || bg.len() < 2 {
        return Err(HopgenError::Numerical(format!(
            "separation needs >= 2 members per group, got {} designated and {} background",
            des.len(),
            bg.len()
        )));
    }
    let mut within = Vec::new();
    for group in [des.as_slice(), bg.as_slice()] {
        for (a, &i) in group.iter().enumerate() {
            for &j in &group[a + 1..] {
                within.push(cosine(memory.pattern(i), memory.pattern(j)));
            }
        }
    }
    let mut between = Vec::with_capacity(des.len() * bg.len());
    for &i in des {
        for &j in &bg {
            between.push(cosine(memory.pattern(i), memory.pattern(j)));
        }
    }
    let (mean_within, sd_within) = mean_sd(&within);
    let (mean_between, sd_between) = mean_sd(&between);
    let pooled = 0.5 * (sd_within + sd_between);
    if !(pooled > 0.0) {
        return Err(HopgenError::Numerical("zero pooled standard deviation".into()));
    }
    Ok(SeparationReport {
        s_index: (mean_within - mean_between) / pooled,
        mean_within,
        mean_between,
        sd_within,
        sd_between,
        n_within_pairs: within.len(),
        n_between_pairs: between.len(),
    })
}

/// Telescoping split of `f_eff - f_obs` into attention, PCA and argmax
/// losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapDecomposition {
    pub f_eff: f64,
    pub a_des_mean: f64,
    pub f_soft_mean: f64,
    pub f_obs: f64,
    pub delta_attn: f64,
    pub delta_pca: f64,
    pub delta_argmax: f64,
    pub delta_total: f64,
}

pub fn gap_decomposition(f_eff: f64, a_des_mean: f64, f_soft_mean: f64, f_obs: f64) -> GapDecomposition {
    GapDecomposition {
        f_eff,
        a_des_mean,
        f_soft_mean,
        f_obs,
        delta_attn: f_eff - a_des_mean,
        delta_pca: a_des_mean - f_soft_mean,
        delta_argmax: f_soft_mean - f_obs,
        delta_total: f_eff - f_obs,
    }
}

/// `C(n, k)`, saturating at `u64::MAX`.
pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * u128::from(n - i) / u128::from(i + 1);
        if acc > u128::from(u64::MAX) {
            return u64::MAX;
        }
    }
    acc as u64
}

/// Two-sided permutation test on the difference of group means, with the
/// fixed Monte Carlo seed 0 when enumeration is too large.
pub fn permutation_test(group_a: &[f64], group_b: &[f64], max_exhaustive: u64) -> Result<f64> {
    permutation_test_seeded(group_a, group_b, max_exhaustive, 0)
}

/// Exact when `C(n_a + n_b, n_a) <= max_exhaustive`, otherwise
/// [`MONTE_CARLO_RESAMPLES`] seeded random relabelings. The observed
/// labeling always counts, so `p > 0`.
pub fn permutation_test_seeded(group_a: &[f64], group_b: &[f64], max_exhaustive: u64, seed: u64) -> Result<f64> {
    let (na, nb) = (group_a.len(), group_b.len());
    if na == 0 || nb == 0 {
        return Err(HopgenError::Numerical(
            "permutation test needs two nonempty groups".into(),
        ));
    }
    let pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let n = pooled.len();
    let total: f64 = pooled.iter().sum();
    let stat = |sum_a: f64| (sum_a / na as f64 - (total - sum_a) / nb as f64).abs();
    let observed = stat(group_a.iter().sum());
    let tol = 1e-12 * observed.abs().max(1.0);

    let combos = binomial(n as u64, na as u64);
    if combos <= max_exhaustive {
        let mut idx: Vec<usize> = (0..na).collect();
        let mut hits = 0u64;
        let mut count = 0u64;
        loop {
            let sum_a: f64 = idx.iter().map(|&i| pooled[i]).sum();
            count += 1;
            if stat(sum_a) >= observed - tol {
                hits += 1;
            }
            // next combination in lexicographic order
            let Some(pos) = (0..na).rev().find(|&i| idx[i] != i + n - na) else {
                break;
            };
            idx[pos] += 1;
            for j in pos + 1..na {
                idx[j] = idx[j - 1] + 1;
            }
        }
        debug_assert_eq!(count, combos);
        Ok(hits as f64 / count as f64)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut hits = 1usize;
        for _ in 0..MONTE_CARLO_RESAMPLES {
            // partial Fisher-Yates: the first na slots form group a
            for i in 0..na {
                let j = rng.random_range(i..n);
                perm.swap(i, j);
            }
            let sum_a: f64 = perm[..na].iter().map(|&i| pooled[i]).sum();
            if stat(sum_a) >= observed - tol {
                hits += 1;
            }
        }
        Ok(hits as f64 / (MONTE_CARLO_RESAMPLES + 1) as f64)
    }
}
