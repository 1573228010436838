//! Multiplicity algebra for a binary designated/background split and the
//! weighted attention-entropy curve used to place the sampling temperature.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::MemoryMatrix;
use crate::error::{HopgenError, Result};
use crate::numeric::{entropy, softmax_into};
use crate::sampler::MultiplicityVector;

/// Softmax mass on the designated patterns when every pattern is equally
/// similar to the query: `K_des rho / (K_des rho + K_bg)`.
pub fn f_eff(k_des: usize, k_bg: usize, rho: f64) -> f64 {
    let des = k_des as f64 * rho;
    des / (des + k_bg as f64)
}

/// Multiplicity ratio that yields effective fraction `f`; inverse of
/// [`f_eff`].
pub fn rho_for_target(f: f64, k_des: usize, k_bg: usize) -> Result<f64> {
    if !(f > 0.0 && f < 1.0) {
        return Err(HopgenError::Config(format!("target fraction {f} outside (0, 1)")));
    }
    if k_des == 0 {
        return Err(HopgenError::Config("no designated patterns".into()));
    }
    Ok(f * k_bg as f64 / (k_des as f64 * (1.0 - f)))
}

/// Effective number of patterns `(sum r)^2 / sum r^2`.
pub fn k_eff(r: &MultiplicityVector) -> f64 {
    let w = r.weights();
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|x| x * x).sum();
    s * s / s2
}

/// `r_k = rho` on designated patterns and 1 elsewhere.
pub fn multiplicity_vector(k: usize, designated: &[usize], rho: f64) -> Result<MultiplicityVector> {
    if designated.iter().any(|&i| i >= k) {
        return Err(HopgenError::Config(format!(
            "designated index out of range for K = {k}"
        )));
    }
    if designated.is_empty() && rho != 1.0 {
        return Err(HopgenError::Config(
            "multiplicity ratio given but the designated set is empty".into(),
        ));
    }
    let mut r = vec![1.0; k];
    for &i in designated {
        r[i] = rho;
    }
    MultiplicityVector::new(r)
}

/// Entropy of the weighted attention at `beta = 0`: Shannon entropy of the
/// normalized weights.
pub fn entropy_at_zero(r: &MultiplicityVector) -> f64 {
    let total: f64 = r.weights().iter().sum();
    let p: Vec<f64> = r.weights().iter().map(|w| w / total).collect();
    entropy(&p)
}

/// Strictly increasing, log-spaced inverse temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaGrid {
    values: Vec<f64>,
}

pub const DEFAULT_GRID_POINTS: usize = 55;
pub const DEFAULT_BETA_MIN: f64 = 0.1;
pub const DEFAULT_BETA_MAX: f64 = 500.0;

impl BetaGrid {
    pub fn log_spaced(n: usize, lo: f64, hi: f64) -> Result<Self> {
        if n < 3 || !(lo > 0.0) || !(hi > lo) {
            return Err(HopgenError::Config(format!(
                "beta grid needs >= 3 points over 0 < lo < hi, got {n} over [{lo}, {hi}]"
            )));
        }
        let (a, b) = (lo.ln(), hi.ln());
        let step = (b - a) / (n - 1) as f64;
        let mut values: Vec<f64> = (0..n).map(|i| (a + step * i as f64).exp()).collect();
        values[0] = lo;
        values[n - 1] = hi;
        Ok(BetaGrid { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

impl Default for BetaGrid {
    fn default() -> Self {
        BetaGrid::log_spaced(DEFAULT_GRID_POINTS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).expect("default grid is valid")
    }
}

/// Attention entropy for each query column at inverse temperature `beta`.
pub fn attention_entropies(
    memory: &MemoryMatrix,
    r: &MultiplicityVector,
    beta: f64,
    queries: &DMatrix<f64>,
) -> Vec<f64> {
    assert_eq!(queries.nrows(), memory.dim(), "query dimension does not match memory");
    let k = memory.num_patterns();
    let log_w = r.log_weights();
    let sims = memory.patterns().tr_mul(queries);
    let mut logits = vec![0.0; k];
    let mut p = vec![0.0; k];
    (0..queries.ncols())
        .map(|q| {
            for (j, l) in logits.iter_mut().enumerate() {
                *l = beta * sims[(j, q)] + log_w[j];
            }
            softmax_into(&logits, &mut p);
            entropy(&p)
        })
        .collect()
}

/// Mean weighted attention entropy over the query columns.
pub fn attention_entropy(
    memory: &MemoryMatrix,
    r: &MultiplicityVector,
    beta: f64,
    queries: &DMatrix<f64>,
) -> Result<f64> {
    if queries.ncols() == 0 {
        return Err(HopgenError::Config("no queries for attention entropy".into()));
    }
    let h = attention_entropies(memory, r, beta, queries);
    Ok(h.iter().sum::<f64>() / h.len() as f64)
}

/// `1.57 + 0.28 sqrt(d)`: the fitted unweighted transition temperature.
pub fn analytic_beta_star(d: usize) -> f64 {
    1.57 + 0.28 * (d as f64).sqrt()
}

/// Entropy curve over a beta grid and its steepest point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyCurve {
    pub beta: Vec<f64>,
    pub entropy: Vec<f64>,
    /// Exact entropy at beta = 0 (Shannon entropy of normalized weights).
    pub h0: f64,
    pub log_k: f64,
    pub k_eff: f64,
    pub beta_star: f64,
    pub beta_star_index: usize,
    /// Vertex of a parabola through the slope magnitudes around the peak.
    pub beta_star_refined: f64,
    /// Unweighted analytic baseline for the memory's dimension.
    pub analytic_beta_star: f64,
}

impl EntropyCurve {
    pub fn normalized(&self) -> Vec<f64> {
        self.entropy.iter().map(|h| h / self.log_k).collect()
    }

    /// Columns: beta, H, H_norm, is_beta_star.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "beta\tH\tH_norm\tis_beta_star")?;
        for (i, (b, h)) in self.beta.iter().zip(&self.entropy).enumerate() {
            let norm = if self.log_k > 0.0 { h / self.log_k } else { 0.0 };
            writeln!(out, "{b}\t{h}\t{norm}\t{}", u8::from(i == self.beta_star_index))?;
        }
        Ok(())
    }
}

/// Evaluates the weighted attention entropy on the grid, using the stored
/// patterns as queries, and places `beta*` at the largest
/// `|dH / d log beta|` by central differences. Ties go to the smaller beta.
pub fn find_beta_star(memory: &MemoryMatrix, r: &MultiplicityVector, grid: &BetaGrid) -> Result<EntropyCurve> {
    if r.len() != memory.num_patterns() {
        return Err(HopgenError::Config("weights do not match pattern count".into()));
    }
    let queries = memory.patterns();
    let beta = grid.values().to_vec();
    let entropy: Vec<f64> = beta
        .par_iter()
        .map(|&b| {
            let h = attention_entropies(memory, r, b, queries);
            h.iter().sum::<f64>() / h.len() as f64
        })
        .collect();

    let spread = entropy.iter().map(|h| (h - entropy[0]).abs()).fold(0.0, f64::max);
    if spread <= 1e-12 {
        return Err(HopgenError::Numerical(
            "no transition in range: entropy curve is flat".into(),
        ));
    }

    let logb: Vec<f64> = beta.iter().map(|b| b.ln()).collect();
    let n = beta.len();
    let mut slope = vec![0.0; n];
    for i in 1..n - 1 {
        slope[i] = ((entropy[i + 1] - entropy[i - 1]) / (logb[i + 1] - logb[i - 1])).abs();
    }
    let mut best = 1;
    for i in 2..n - 1 {
        if slope[i] > slope[best] {
            best = i;
        }
    }

    let refined = if best >= 2 && best + 2 <= n - 1 {
        let (x0, x1, x2) = (logb[best - 1], logb[best], logb[best + 1]);
        let (y0, y1, y2) = (slope[best - 1], slope[best], slope[best + 1]);
        let denom = (x0 - x1) * (x0 - x2) * (x1 - x2);
        let a = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / denom;
        let b = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / denom;
        if a < 0.0 {
            (-b / (2.0 * a)).clamp(x0, x2).exp()
        } else {
            beta[best]
        }
    } else {
        beta[best]
    };

    Ok(EntropyCurve {
        h0: entropy_at_zero(r),
        log_k: (memory.num_patterns() as f64).ln(),
        k_eff: k_eff(r),
        beta_star: beta[best],
        beta_star_index: best,
        beta_star_refined: refined,
        analytic_beta_star: analytic_beta_star(memory.dim()),
        beta,
        entropy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_memory(seed: u64, d: usize, k: usize) -> MemoryMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        MemoryMatrix::normalized(DMatrix::from_fn(d, k, |_, _| StandardNormal.sample(&mut rng))).unwrap()
    }

    #[test]
    fn f_eff_table_values() {
        assert!((f_eff(32, 67, 1.0) - 0.323).abs() < 5e-4);
        assert!((f_eff(32, 67, 1000.0) - 0.998).abs() < 5e-4);
        assert_eq!(f_eff(5, 0, 3.0), 1.0);
    }

    #[test]
    fn rho_inverse() {
        assert!((rho_for_target(0.827, 32, 67).unwrap() - 10.0).abs() < 0.02);
        let natural = 32.0 / 99.0;
        assert!((rho_for_target(natural, 32, 67).unwrap() - 1.0).abs() < 1e-12);
        for rho in [1.0, 10.0, 1000.0] {
            let back = rho_for_target(f_eff(32, 67, rho), 32, 67).unwrap();
            assert!((back - rho).abs() / rho < 1e-12);
        }
        assert!(rho_for_target(1.0, 32, 67).is_err());
        assert!(rho_for_target(0.0, 32, 67).is_err());
    }

    #[test]
    fn k_eff_values() {
        assert!((k_eff(&MultiplicityVector::uniform(99)) - 99.0).abs() < 1e-9);
        let des: Vec<usize> = (0..32).collect();
        let r = multiplicity_vector(99, &des, 1000.0).unwrap();
        assert!((k_eff(&r) - 32.1).abs() < 0.05);
        let skewed = MultiplicityVector::new(vec![1e9, 1.0, 1.0]).unwrap();
        assert!((k_eff(&skewed) - 1.0).abs() < 1e-6);
        let small = multiplicity_vector(3, &[0], 5.0).unwrap();
        assert_eq!(small.weights(), &[5.0, 1.0, 1.0]);
        assert!((k_eff(&small) - 49.0 / 27.0).abs() < 1e-12);
        assert!(multiplicity_vector(3, &[], 5.0).is_err());
        assert_eq!(
            multiplicity_vector(3, &[], 1.0).unwrap(),
            MultiplicityVector::uniform(3)
        );
    }

    #[test]
    fn entropy_at_beta_zero() {
        let mem = random_memory(1, 8, 12);
        let q = mem.patterns().clone();
        let uniform = MultiplicityVector::uniform(12);
        assert!((attention_entropy(&mem, &uniform, 0.0, &q).unwrap() - 12f64.ln()).abs() < 1e-12);

        let r = multiplicity_vector(12, &[0, 3, 5], 7.0).unwrap();
        let h0 = attention_entropy(&mem, &r, 0.0, &q).unwrap();
        assert!((h0 - entropy_at_zero(&r)).abs() < 1e-12);
        // Renyi-2 <= Shannon <= log K
        assert!(k_eff(&r).ln() <= h0 + 1e-12 && h0 <= 12f64.ln());
    }

    #[test]
    fn retrieval_limit_entropy_vanishes() {
        // orthonormal patterns
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = DMatrix::from_fn(20, 10, |_, _| StandardNormal.sample(&mut rng));
        let q = raw.qr().q();
        let mem = MemoryMatrix::normalized(q.columns(0, 10).into_owned()).unwrap();
        let h = attention_entropy(&mem, &MultiplicityVector::uniform(10), 1e4, &mem.patterns().clone()).unwrap();
        assert!(h <= 0.01);
    }

    #[test]
    fn analytic_law() {
        assert!((analytic_beta_star(80) - 4.0744).abs() < 1e-3);
        assert!((analytic_beta_star(1) - 1.85).abs() < 1e-12);
        assert!(analytic_beta_star(10) < analytic_beta_star(11));
    }

    #[test]
    fn grid_defaults() {
        let g = BetaGrid::default();
        assert_eq!(g.values().len(), 55);
        assert_eq!(g.values()[0], 0.1);
        assert_eq!(*g.values().last().unwrap(), 500.0);
        assert!(g.values().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn beta_star_is_located_and_shifts_with_rho() {
        let mem = random_memory(3, 30, 40);
        let grid = BetaGrid::default();
        let des: Vec<usize> = (0..12).collect();
        let mut last = 0.0;
        for rho in [1.0, 10.0, 100.0, 1000.0] {
            let c = find_beta_star(&mem, &multiplicity_vector(40, &des, rho).unwrap(), &grid).unwrap();
            assert!(c.beta_star >= last);
            assert!(c.entropy.iter().all(|&h| h >= -1e-12 && h <= c.log_k + 1e-12));
            let lo = grid.values()[c.beta_star_index - 1];
            let hi = grid.values()[c.beta_star_index + 1];
            assert!(c.beta_star_refined >= lo && c.beta_star_refined <= hi);
            last = c.beta_star;
        }
    }

    #[test]
    fn flat_curve_is_an_error() {
        let mem = MemoryMatrix::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0])).unwrap();
        assert!(matches!(
            find_beta_star(&mem, &MultiplicityVector::uniform(1), &BetaGrid::default()),
            Err(HopgenError::Numerical(_))
        ));
    }

    #[test]
    fn curve_tsv_marks_beta_star() {
        let mem = random_memory(4, 10, 15);
        let c = find_beta_star(&mem, &MultiplicityVector::uniform(15), &BetaGrid::default()).unwrap();
        let mut buf = Vec::new();
        c.write_tsv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 56);
        assert_eq!(text.lines().filter(|l| l.ends_with("\t1")).count(), 1);
        let first: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
        assert!((first[2].parse::<f64>().unwrap() - 1.0).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn f_eff_monotone_and_k_eff_bounded(k_des in 1usize..50, k_bg in 1usize..80, rho in 1.0f64..1e4) {
            let f = f_eff(k_des, k_bg, rho);
            prop_assert!(f_eff(k_des, k_bg, rho * 1.5) > f);
            let des: Vec<usize> = (0..k_des).collect();
            let r = multiplicity_vector(k_des + k_bg, &des, rho).unwrap();
            let ke = k_eff(&r);
            prop_assert!(ke >= k_des as f64 - 1e-9 && ke <= (k_des + k_bg) as f64 + 1e-9);
            let r2 = multiplicity_vector(k_des + k_bg, &des, rho * 2.0).unwrap();
            prop_assert!(k_eff(&r2) <= ke + 1e-9);
        }

        #[test]
        fn unweighted_entropy_non_increasing_per_query(seed in 0u64..200) {
            let mem = random_memory(seed, 6, 9);
            let r = MultiplicityVector::uniform(9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let q = DMatrix::from_fn(6, 3, |_, _| StandardNormal.sample(&mut rng));
            let grid = BetaGrid::default();
            let mut prev = attention_entropies(&mem, &r, grid.values()[0], &q);
            for &b in &grid.values()[1..] {
                let cur = attention_entropies(&mem, &r, b, &q);
                for (c, p) in cur.iter().zip(&prev) {
                    prop_assert!(*c <= p + 1e-9);
                }
                prev = cur;
            }
        }
    }
}
