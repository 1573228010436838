use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{HopgenError, Result};

/// Externally scored columns kept in the table layout and always `NA` here.
pub const RESERVED_COLUMNS: [&str; 3] = ["plddt", "ptm", "pseudo_perplexity"];

/// One generated condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub condition: String,
    pub replicate: usize,
    pub subsample_size: Option<usize>,
    pub k: usize,
    pub k_des: usize,
    pub k_bg: usize,
    pub d: usize,
    pub rho: f64,
    pub beta_mult: Option<f64>,
    pub beta: f64,
    pub beta_star: f64,
    pub k_eff: f64,
    pub f_eff: f64,
    pub a_des: f64,
    pub f_soft: f64,
    pub f_obs: f64,
    pub delta_attn: f64,
    pub delta_pca: f64,
    pub delta_argmax: f64,
    pub delta: f64,
    pub diversity: Option<f64>,
    pub kl: f64,
    pub n_samples: usize,
    pub seed: u64,
}

const METRIC_COLUMNS: [&str; 24] = [
    "condition",
    "replicate",
    "subsample_size",
    "K",
    "K_des",
    "K_bg",
    "d",
    "rho",
    "beta_mult",
    "beta",
    "beta_star",
    "K_eff",
    "f_eff",
    "a_des",
    "f_soft",
    "f_obs",
    "delta_attn",
    "delta_pca",
    "delta_argmax",
    "delta",
    "diversity",
    "kl",
    "n_samples",
    "seed",
];

fn opt<T: Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

pub fn write_metrics_tsv<W: Write>(rows: &[MetricsRow], mut out: W) -> std::io::Result<()> {
    let header: Vec<&str> = METRIC_COLUMNS.iter().chain(RESERVED_COLUMNS.iter()).copied().collect();
    writeln!(out, "{}", header.join("\t"))?;
    for r in rows {
        let cells = [
            r.condition.clone(),
            r.replicate.to_string(),
            opt(r.subsample_size),
            r.k.to_string(),
            r.k_des.to_string(),
            r.k_bg.to_string(),
            r.d.to_string(),
            r.rho.to_string(),
            opt(r.beta_mult),
            r.beta.to_string(),
            r.beta_star.to_string(),
            r.k_eff.to_string(),
            r.f_eff.to_string(),
            r.a_des.to_string(),
            r.f_soft.to_string(),
            r.f_obs.to_string(),
            r.delta_attn.to_string(),
            r.delta_pca.to_string(),
            r.delta_argmax.to_string(),
            r.delta.to_string(),
            opt(r.diversity),
            r.kl.to_string(),
            r.n_samples.to_string(),
            r.seed.to_string(),
        ];
        let reserved = RESERVED_COLUMNS.iter().map(|_| "NA".to_string());
        let line: Vec<String> = cells.into_iter().chain(reserved).collect();
        writeln!(out, "{}", line.join("\t"))?;
    }
    Ok(())
}

/// Summary of one entropy curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub condition: String,
    pub rho: f64,
    pub k_eff: f64,
    /// Shannon entropy at beta = 0 over log K.
    pub h0_norm: f64,
    /// log K_eff over log K.
    pub log_k_eff_norm: f64,
    pub beta_star: f64,
    pub beta_star_refined: f64,
    pub analytic_beta_star: f64,
    pub file: String,
}

pub fn write_curve_summary_tsv<W: Write>(rows: &[CurveSummary], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "condition\trho\tK_eff\tH0_norm\tlogKeff_norm\tbeta_star\tbeta_star_refined\tanalytic_beta_star\tfile"
    )?;
    for c in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.condition,
            c.rho,
            c.k_eff,
            c.h0_norm,
            c.log_k_eff_norm,
            c.beta_star,
            c.beta_star_refined,
            c.analytic_beta_star,
            c.file
        )?;
    }
    Ok(())
}

/// Consolidated JSON written next to the TSVs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsDocument {
    pub experiment: String,
    pub rows: Vec<MetricsRow>,
    pub curves: Vec<CurveSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    /// Sampler seed of replicate `i` (common to every condition).
    pub replicate_seeds: Vec<u64>,
    pub subsample_stream: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    pub k_raw: usize,
    pub l_raw: usize,
    pub k: usize,
    pub l: usize,
    pub d: usize,
    pub variance_retained: f64,
    /// 1-based.
    pub marker_position: usize,
    pub marker_residues: String,
    pub k_des: usize,
    pub k_bg: usize,
    pub f_nat: f64,
    pub separation: Option<f64>,
    pub beta_star_uniform: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format_version: u32,
    pub tool_version: String,
    pub git_revision: Option<String>,
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub input_bytes: u64,
    pub input_fnv1a64: String,
    pub seeds: SeedRecord,
    pub derived: DerivedQuantities,
}

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

impl RunManifest {
    pub fn new(config: ExperimentConfig, input: &[u8], seeds: SeedRecord, derived: DerivedQuantities) -> Self {
        RunManifest {
            format_version: MANIFEST_FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            git_revision: option_env!("HOPGEN_GIT_REV").map(str::to_string),
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            config,
            input_bytes: input.len() as u64,
            input_fnv1a64: format!("{:016x}", fnv1a64(input)),
            seeds,
            derived,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HopgenError::io(path, e))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| HopgenError::Config(format!("{}: {e}", path.display())))?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(HopgenError::Config(format!(
                "unsupported manifest version {}",
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, self)?;
        Ok(path)
    }
}

/// 64-bit FNV-1a, used to pin the input file in the manifest.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HopgenError::Serde(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| HopgenError::io(path, e))
}

pub(crate) fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| HopgenError::io(path, e))?;
    fs::write(path, buf).map_err(|e| HopgenError::io(path, e))
}
