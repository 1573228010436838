//! One-hot encoding, PCA by economy SVD, the unit-norm memory matrix and
//! decoding of continuous states back to sequences.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::alignment::Alignment;
use crate::alphabet::{AminoAcid, ResidueSet, ALPHABET_SIZE, CHANNEL_ORDER};
use crate::error::{HopgenError, Result};

/// Relative cutoff below which a singular value counts as zero.
const RANK_TOL: f64 = 1e-12;
const MIN_PROJECTION_NORM: f64 = 1e-12;
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.95;

/// `20L x K` indicator matrix; column k encodes alignment row k.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotMatrix {
    pub data: DMatrix<f64>,
    pub width: usize,
}

impl OneHotMatrix {
    pub fn num_seqs(&self) -> usize {
        self.data.ncols()
    }
}

pub fn one_hot_encode(aln: &Alignment) -> OneHotMatrix {
    let width = aln.width();
    let mut data = DMatrix::zeros(ALPHABET_SIZE * width, aln.num_seqs());
    for (k, row) in aln.rows().iter().enumerate() {
        let mut col = data.column_mut(k);
        for (pos, cell) in row.iter().enumerate() {
            if let Some(a) = cell {
                col[ALPHABET_SIZE * pos + a.index()] = 1.0;
            }
        }
    }
    OneHotMatrix { data, width }
}

/// Gap-free one-hot vector for a decoded or stored sequence.
pub fn one_hot_sequence<R: crate::alphabet::AsResidue>(seq: &[R]) -> DVector<f64> {
    let mut v = DVector::zeros(ALPHABET_SIZE * seq.len());
    for (pos, r) in seq.iter().enumerate() {
        if let Some(a) = r.amino() {
            v[ALPHABET_SIZE * pos + a.index()] = 1.0;
        }
    }
    v
}

/// Fitted PCA: mean profile, retained principal directions and the full
/// singular spectrum of the centered data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `20L x d`, orthonormal columns ordered by decreasing singular value.
    pub basis: DMatrix<f64>,
    /// All `r` nonzero singular values, nonincreasing.
    pub singular_values: Vec<f64>,
    pub variance_retained: f64,
    pub width: usize,
    pub num_seqs: usize,
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    /// Unnormalized projection `W_d^T (x - mean)`.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.basis.tr_mul(&(x - &self.mean))
    }

    pub fn reconstruct(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.mean + &self.basis * xi
    }
}

/// Centers the one-hot matrix, takes its economy SVD and keeps the smallest
/// number of components whose squared singular values reach
/// `variance_target` of the total.
pub fn fit_pca(x: &OneHotMatrix, variance_target: f64) -> Result<PcaModel> {
    let k = x.num_seqs();
    if k < 2 {
        return Err(HopgenError::Numerical(format!(
            "PCA needs at least 2 sequences, got {k}"
        )));
    }
    if !(variance_target > 0.0 && variance_target <= 1.0) {
        return Err(HopgenError::Config(format!(
            "variance target {variance_target} outside (0, 1]"
        )));
    }
    let mean = x.data.column_mean();
    let mut centered = x.data.clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    let svd = centered.svd(true, false);
    let u = svd
        .u
        .ok_or_else(|| HopgenError::Numerical("SVD did not return left vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let sigma_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    if !(sigma_max > 0.0) {
        return Err(HopgenError::Numerical(
            "centered data has rank 0 (all sequences identical)".into(),
        ));
    }
    let ranked: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > RANK_TOL * sigma_max)
        .collect();
    let singular_values: Vec<f64> = ranked.iter().map(|&i| svd.singular_values[i]).collect();

    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut cumulative = 0.0;
    let mut d = singular_values.len();
    for (j, s) in singular_values.iter().enumerate() {
        cumulative += s * s;
        if cumulative / total >= variance_target - 1e-12 {
            d = j + 1;
            break;
        }
    }
    let variance_retained = singular_values[..d].iter().map(|s| s * s).sum::<f64>() / total;

    let mut basis = DMatrix::zeros(x.data.nrows(), d);
    for (j, &src) in ranked[..d].iter().enumerate() {
        let mut col = u.column(src).into_owned();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        if pivot < 0.0 {
            col.neg_mut();
        }
        basis.set_column(j, &col);
    }

    Ok(PcaModel {
        mean,
        basis,
        singular_values,
        variance_retained,
        width: x.width,
        num_seqs: k,
    })
}

/// Unit-norm PCA encoding of a one-hot vector.
pub fn encode_pattern(model: &PcaModel, x: &DVector<f64>) -> Result<DVector<f64>> {
    let z = model.project(x);
    let n = z.norm();
    if !(n > MIN_PROJECTION_NORM) {
        return Err(HopgenError::Numerical(
            "sequence projects onto the mean profile (zero-norm encoding)".into(),
        ));
    }
    Ok(z / n)
}

/// `d x K` matrix of unit-norm stored patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMatrix {
    patterns: DMatrix<f64>,
}

impl MemoryMatrix {
    /// Wraps a matrix whose columns must already have unit norm.
    pub fn new(patterns: DMatrix<f64>) -> Result<Self> {
        if patterns.ncols() == 0 || patterns.nrows() == 0 {
            return Err(HopgenError::Numerical("empty memory matrix".into()));
        }
        for (k, col) in patterns.column_iter().enumerate() {
            if (col.norm() - 1.0).abs() > 1e-10 {
                return Err(HopgenError::Numerical(format!(
                    "memory column {k} has norm {}",
                    col.norm()
                )));
            }
        }
        Ok(MemoryMatrix { patterns })
    }

    /// Normalizes every column to unit length.
    pub fn normalized(mut patterns: DMatrix<f64>) -> Result<Self> {
        for mut col in patterns.column_iter_mut() {
            let n = col.norm();
            if !(n > MIN_PROJECTION_NORM) {
                return Err(HopgenError::Numerical("zero column in memory matrix".into()));
            }
            col /= n;
        }
        MemoryMatrix::new(patterns)
    }

    pub fn dim(&self) -> usize {
        self.patterns.nrows()
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.ncols()
    }

    pub fn patterns(&self) -> &DMatrix<f64> {
        &self.patterns
    }

    /// Contiguous column slice of pattern `k`.
    #[inline]
    pub fn pattern(&self, k: usize) -> &[f64] {
        let d = self.patterns.nrows();
        &self.patterns.as_slice()[k * d..(k + 1) * d]
    }

    /// Keeps the columns at `indices`.
    pub fn select(&self, indices: &[usize]) -> Result<MemoryMatrix> {
        MemoryMatrix::new(self.patterns.select_columns(indices))
    }
}

pub fn build_memory(aln: &Alignment, model: &PcaModel) -> Result<MemoryMatrix> {
    if aln.width() != model.width {
        return Err(HopgenError::Alignment(format!(
            "alignment width {} does not match model width {}",
            aln.width(),
            model.width
        )));
    }
    let onehot = one_hot_encode(aln);
    let mut patterns = DMatrix::zeros(model.dim(), aln.num_seqs());
    for k in 0..aln.num_seqs() {
        let x = onehot.data.column(k).into_owned();
        let m = encode_pattern(model, &x)
            .map_err(|_| HopgenError::Numerical(format!("sequence '{}' has a zero-norm PCA encoding", aln.ids()[k])))?;
        patterns.set_column(k, &m);
    }
    MemoryMatrix::new(patterns)
}

/// Inverse-PCA reconstruction followed by per-position argmax over the 20
/// amino-acid channels. Ties resolve to the lower channel index.
pub fn decode_state(model: &PcaModel, xi: &DVector<f64>) -> (Vec<AminoAcid>, DVector<f64>) {
    let soft = model.reconstruct(xi);
    let seq = soft
        .as_slice()
        .chunks_exact(ALPHABET_SIZE)
        .map(|block| {
            let mut best = 0;
            for (a, &v) in block.iter().enumerate().skip(1) {
                if v > block[best] {
                    best = a;
                }
            }
            AminoAcid::ALL[best]
        })
        .collect();
    (seq, soft)
}

/// Marker-residue probability read off a reconstructed one-hot block:
/// negative channels are clamped to zero before normalizing.
pub fn soft_marker_probability(soft: &DVector<f64>, marker_position: usize, residues: ResidueSet) -> f64 {
    let block = &soft.as_slice()[ALPHABET_SIZE * marker_position..ALPHABET_SIZE * (marker_position + 1)];
    let total: f64 = block.iter().map(|v| v.max(0.0)).sum();
    if total <= 0.0 {
        return 0.0;
    }
    let hit: f64 = residues.iter().map(|a| block[a.index()].max(0.0)).sum();
    (hit / total).clamp(0.0, 1.0)
}

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    alphabet: String,
    width: usize,
    num_seqs: usize,
    d: usize,
    rank: usize,
    variance_retained: f64,
    /// Order of the f64 little-endian arrays in the sidecar.
    layout: Vec<String>,
}

fn sidecar_paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

impl PcaModel {
    /// Writes `<stem>.json` (header) and `<stem>.bin` (mean, column-major
    /// basis, singular values as little-endian f64).
    pub fn save(&self, stem: &Path) -> Result<()> {
        let (json_path, bin_path) = sidecar_paths(stem);
        let header = ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            alphabet: CHANNEL_ORDER.to_string(),
            width: self.width,
            num_seqs: self.num_seqs,
            d: self.dim(),
            rank: self.rank(),
            variance_retained: self.variance_retained,
            layout: vec![
                "mean[20L]".into(),
                "basis[20L*d, column-major]".into(),
                "singular_values[rank]".into(),
            ],
        };
        let json = serde_json::to_string_pretty(&header).map_err(|e| HopgenError::Serde(e.to_string()))?;
        fs::write(&json_path, json).map_err(|e| HopgenError::io(&json_path, e))?;

        let values = self
            .mean
            .iter()
            .chain(self.basis.iter())
            .chain(self.singular_values.iter());
        let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&bin_path, bytes).map_err(|e| HopgenError::io(&bin_path, e))
    }

    pub fn load(stem: &Path) -> Result<PcaModel> {
        let (json_path, bin_path) = sidecar_paths(stem);
        let text = fs::read_to_string(&json_path).map_err(|e| HopgenError::io(&json_path, e))?;
        let header: ModelHeader = serde_json::from_str(&text).map_err(|e| HopgenError::Serde(e.to_string()))?;
        if header.format_version != MODEL_FORMAT_VERSION || header.alphabet != CHANNEL_ORDER {
            return Err(HopgenError::Serde(format!(
                "unsupported model format {} / alphabet {}",
                header.format_version, header.alphabet
            )));
        }
        let bytes = fs::read(&bin_path).map_err(|e| HopgenError::io(&bin_path, e))?;
        let full = ALPHABET_SIZE * header.width;
        let expected = full + full * header.d + header.rank;
        if bytes.len() != expected * 8 {
            return Err(HopgenError::Serde(format!(
                "model sidecar holds {} bytes, expected {}",
                bytes.len(),
                expected * 8
            )));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let mean = DVector::from_column_slice(&values[..full]);
        let basis = DMatrix::from_column_slice(full, header.d, &values[full..full + full * header.d]);
        let singular_values = values[full + full * header.d..].to_vec();
        Ok(PcaModel {
            mean,
            basis,
            singular_values,
            variance_retained: header.variance_retained,
            width: header.width,
            num_seqs: header.num_seqs,
        })
    }
}
