use serde::{Deserialize, Serialize};

use crate::alignment::{make_split, Alignment, FunctionalSplit};
use crate::alphabet::{AminoAcid, ResidueSet, ALPHABET_SIZE};
use crate::conditioning::{f_eff, find_beta_star, k_eff, multiplicity_vector, BetaGrid, EntropyCurve};
use crate::encoder::{
    build_memory, decode_state, fit_pca, one_hot_encode, soft_marker_probability, MemoryMatrix, PcaModel,
};
use crate::error::{HopgenError, Result};
use crate::metrics::{
    composition_frequencies, gap_decomposition, kl_divergence, mean_designated_attention, pairwise_diversity,
    phenotype_fraction, GapDecomposition,
};
use crate::sampler::{run_chains, ChainTrace, MultiplicityVector, SamplerConfig};

/// Alignment encoded into a PCA model and unit-norm memory, with its
/// marker split.
#[derive(Debug, Clone)]
pub struct PreparedMemory {
    pub alignment: Alignment,
    pub model: PcaModel,
    pub memory: MemoryMatrix,
    pub split: FunctionalSplit,
}

impl PreparedMemory {
    pub fn new(
        alignment: Alignment,
        marker_position: usize,
        marker_residues: ResidueSet,
        variance_target: f64,
    ) -> Result<Self> {
        if alignment.num_seqs() < 2 {
            return Err(HopgenError::Alignment(format!(
                "{} sequence(s) is too few to fit PCA",
                alignment.num_seqs()
            )));
        }
        let split = make_split(&alignment, marker_position, marker_residues)?;
        let model = fit_pca(&one_hot_encode(&alignment), variance_target)?;
        let memory = build_memory(&alignment, &model)?;
        Ok(PreparedMemory {
            alignment,
            model,
            memory,
            split,
        })
    }

    /// Weights with `rho` on the designated rows; uniform when `rho = 1`.
    pub fn weights(&self, rho: f64) -> Result<MultiplicityVector> {
        if rho == 1.0 {
            return Ok(MultiplicityVector::uniform(self.memory.num_patterns()));
        }
        multiplicity_vector(self.memory.num_patterns(), &self.split.designated, rho)
    }

    pub fn entropy_curve(&self, rho: f64, grid: &BetaGrid) -> Result<EntropyCurve> {
        find_beta_star(&self.memory, &self.weights(rho)?, grid)
    }

    pub fn f_eff(&self, rho: f64) -> f64 {
        f_eff(self.split.k_des(), self.split.k_bg(), rho)
    }
}

/// Chains, their decoded samples and the soft marker probability of each
/// sample, in chain-major order.
#[derive(Debug, Clone)]
pub struct Generation {
    pub traces: Vec<ChainTrace>,
    pub sequences: Vec<Vec<AminoAcid>>,
    pub soft_marker: Vec<f64>,
}

pub fn generate(prepared: &PreparedMemory, r: &MultiplicityVector, sampler: &SamplerConfig) -> Result<Generation> {
    let traces = run_chains(&prepared.memory, &prepared.split, sampler, r)?;
    let n = traces.iter().map(|t| t.samples.len()).sum();
    let mut sequences = Vec::with_capacity(n);
    let mut soft_marker = Vec::with_capacity(n);
    for xi in traces.iter().flat_map(|t| &t.samples) {
        let (seq, soft) = decode_state(&prepared.model, xi);
        soft_marker.push(soft_marker_probability(
            &soft,
            prepared.split.marker_position,
            prepared.split.marker_residues,
        ));
        sequences.push(seq);
    }
    Ok(Generation {
        traces,
        sequences,
        soft_marker,
    })
}

/// Metrics of one generated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub gap: GapDecomposition,
    pub diversity: Option<f64>,
    pub kl: f64,
    pub n_samples: usize,
}

pub fn evaluate_generation(
    gen: &Generation,
    prepared: &PreparedMemory,
    rho: f64,
    burn_in: usize,
    reference: &[f64; ALPHABET_SIZE],
    n_pairs: usize,
    diversity_seed: u64,
) -> Result<ConditionMetrics> {
    let a_des = mean_designated_attention(&gen.traces, burn_in)?;
    let f_soft = gen.soft_marker.iter().sum::<f64>() / gen.soft_marker.len().max(1) as f64;
    let f_obs = phenotype_fraction(
        &gen.sequences,
        prepared.split.marker_position,
        prepared.split.marker_residues,
    )?;
    let diversity = if gen.sequences.len() >= 2 {
        Some(pairwise_diversity(&gen.sequences, n_pairs, diversity_seed)?)
    } else {
        None
    };
    let kl = kl_divergence(&composition_frequencies(&gen.sequences)?, reference);
    Ok(ConditionMetrics {
        gap: gap_decomposition(prepared.f_eff(rho), a_des, f_soft, f_obs),
        diversity,
        kl,
        n_samples: gen.sequences.len(),
    })
}

/// Effective pattern count of the weights used for `rho`.
pub fn effective_count(prepared: &PreparedMemory, rho: f64) -> Result<f64> {
    Ok(k_eff(&prepared.weights(rho)?))
}
