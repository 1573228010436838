use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::Alignment;
use crate::alphabet::AminoAcid;
use crate::error::{HopgenError, Result};

/// Marker residue carried by every designated row.
pub const DESIGNATED_MARKER: AminoAcid = AminoAcid::Lys;
/// Marker residue carried by every background row.
pub const BACKGROUND_MARKER: AminoAcid = AminoAcid::Gly;
/// Residues available at each variable column.
pub const COLUMN_POOL_SIZE: usize = 4;

/// Parameters of a desk-scale synthetic family.
///
/// Rows belong to latent clusters. Each variable column has a small residue
/// pool and one motif residue per cluster, and a row copies its cluster's
/// motif with probability `motif_fidelity`, otherwise drawing uniformly from
/// the pool. Background rows are dealt round-robin over all clusters. A
/// `separation` fraction of the designated rows is anchored: those rows copy
/// cluster 0's motif exactly. The remaining designated rows are dealt
/// round-robin like the background. At `separation = 0` the covariation is
/// shared and independent of the marker; at 1 every designated row carries
/// the same conserved motif.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFamilySpec {
    pub num_seqs: usize,
    pub num_designated: usize,
    pub width: usize,
    /// Number of variable columns.
    pub signal_columns: usize,
    /// 0-based marker column.
    pub marker_position: usize,
    pub num_clusters: usize,
    pub motif_fidelity: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for SyntheticFamilySpec {
    fn default() -> Self {
        SyntheticFamilySpec {
            num_seqs: 60,
            num_designated: 20,
            width: 60,
            signal_columns: 40,
            marker_position: 10,
            num_clusters: 4,
            motif_fidelity: 0.75,
            separation: 0.0,
            seed: 0,
        }
    }
}

impl SyntheticFamilySpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HopgenError::Config(m));
        if self.num_designated == 0 || self.num_designated >= self.num_seqs {
            return fail(format!(
                "need 0 < K_des < K, got K_des = {} and K = {}",
                self.num_designated, self.num_seqs
            ));
        }
        if self.marker_position >= self.width {
            return fail(format!(
                "marker column {} outside width {}",
                self.marker_position + 1,
                self.width
            ));
        }
        if self.signal_columns >= self.width {
            return fail(format!(
                "{} variable columns do not fit beside the marker in width {}",
                self.signal_columns, self.width
            ));
        }
        if !(2..=COLUMN_POOL_SIZE).contains(&self.num_clusters) {
            return fail(format!(
                "num_clusters must lie in 2..={COLUMN_POOL_SIZE}, got {}",
                self.num_clusters
            ));
        }
        for (name, v) in [("separation", self.separation), ("motif_fidelity", self.motif_fidelity)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

fn anchored_count(spec: &SyntheticFamilySpec) -> usize {
    (spec.separation * spec.num_designated as f64).round() as usize
}

/// Builds the family. Rows `0..num_designated` are designated (ids
/// `des_NNN`), the rest background (`bg_NNN`). No gaps are emitted.
pub fn generate_synthetic_family(spec: &SyntheticFamilySpec) -> Result<Alignment> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // Marker residues never appear outside the marker column, so the marker
    // is also the column found by a frequency search.
    let filler: Vec<AminoAcid> = AminoAcid::ALL
        .into_iter()
        .filter(|&a| a != DESIGNATED_MARKER && a != BACKGROUND_MARKER)
        .collect();
    let residue = |i: usize| filler[i];

    let scaffold: Vec<AminoAcid> = (0..spec.width)
        .map(|_| residue(rng.random_range(0..filler.len())))
        .collect();

    let candidates: Vec<usize> = (0..spec.width).filter(|&c| c != spec.marker_position).collect();
    let mut variable: Vec<usize> = sample(&mut rng, candidates.len(), spec.signal_columns)
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    variable.sort_unstable();
    // Cluster c's motif at variable column j is pools[j][c].
    let pools: Vec<Vec<AminoAcid>> = variable
        .iter()
        .map(|_| {
            sample(&mut rng, filler.len(), COLUMN_POOL_SIZE)
                .into_iter()
                .map(residue)
                .collect()
        })
        .collect();

    let mut ids = Vec::with_capacity(spec.num_seqs);
    let mut rows = Vec::with_capacity(spec.num_seqs);
    for k in 0..spec.num_seqs {
        let designated = k < spec.num_designated;
        let anchored = designated && k < anchored_count(spec);
        let cluster = if anchored {
            0
        } else if designated {
            (k - anchored_count(spec)) % spec.num_clusters
        } else {
            (k - spec.num_designated) % spec.num_clusters
        };
        let mut row: Vec<Option<AminoAcid>> = scaffold.iter().map(|&a| Some(a)).collect();
        for (&col, pool) in variable.iter().zip(&pools) {
            let a = if anchored || rng.random_bool(spec.motif_fidelity) {
                pool[cluster]
            } else {
                pool[rng.random_range(0..COLUMN_POOL_SIZE)]
            };
            row[col] = Some(a);
        }
        row[spec.marker_position] = Some(if designated {
            DESIGNATED_MARKER
        } else {
            BACKGROUND_MARKER
        });
        ids.push(if designated {
            format!("des_{:03}", k + 1)
        } else {
            format!("bg_{:03}", k + 1 - spec.num_designated)
        });
        rows.push(row);
    }
    Alignment::new(ids, rows)
}
