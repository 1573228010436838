use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::alignment::{DEFAULT_COL_GAP_MAX, DEFAULT_SEQ_GAP_MAX};
use crate::alphabet::{AminoAcid, ResidueSet};
use crate::conditioning::{BetaGrid, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_GRID_POINTS};
use crate::encoder::DEFAULT_VARIANCE_TARGET;
use crate::error::{HopgenError, Result};
use crate::metrics::DEFAULT_DIVERSITY_PAIRS;
use crate::sampler::SamplerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    HardCuration,
    RhoSweep,
    BetaSweep,
    Scaling,
    EntropyCurves,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::HardCuration => "hard_curation",
            ExperimentKind::RhoSweep => "rho_sweep",
            ExperimentKind::BetaSweep => "beta_sweep",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::EntropyCurves => "entropy_curves",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    HardCuratedDesignated,
    HardCuratedBackground,
    Multiplicity,
}

impl std::str::FromStr for Mode {
    type Err = HopgenError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Mode::Full),
            "hard_curated_designated" => Ok(Mode::HardCuratedDesignated),
            "hard_curated_background" => Ok(Mode::HardCuratedBackground),
            "multiplicity" => Ok(Mode::Multiplicity),
            other => Err(HopgenError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentFormat {
    Stockholm,
    Fasta,
}

impl AlignmentFormat {
    /// Guess from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "sto" | "stk" | "sth" | "stockholm" => Some(AlignmentFormat::Stockholm),
            "fa" | "fasta" | "afa" | "fas" | "aln" => Some(AlignmentFormat::Fasta),
            _ => None,
        }
    }
}

fn default_rho() -> Vec<f64> {
    vec![1.0]
}
fn default_beta_mult() -> Vec<f64> {
    vec![1.0]
}
fn default_one() -> usize {
    1
}
fn default_out() -> PathBuf {
    PathBuf::from("hopgen_out")
}
fn default_variance_target() -> f64 {
    DEFAULT_VARIANCE_TARGET
}
fn default_col_gap_max() -> f64 {
    DEFAULT_COL_GAP_MAX
}
fn default_seq_gap_max() -> f64 {
    DEFAULT_SEQ_GAP_MAX
}
fn default_n_pairs() -> usize {
    DEFAULT_DIVERSITY_PAIRS
}
fn default_grid_points() -> usize {
    DEFAULT_GRID_POINTS
}
fn default_beta_min() -> f64 {
    DEFAULT_BETA_MIN
}
fn default_beta_max() -> f64 {
    DEFAULT_BETA_MAX
}
fn default_true() -> bool {
    true
}
fn default_sampler() -> SamplerConfig {
    SamplerConfig::default()
}

/// Flat key/value experiment description, read from TOML.
///
/// Marker positions are 1-based here and 0-based everywhere else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub input: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<AlignmentFormat>,
    /// 1-based marker column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_pos: Option<usize>,
    /// Pick the column where this residue is most frequent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_auto: Option<char>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub marker_res: Option<ResidueSet>,
    pub mode: Mode,
    #[serde(default = "default_rho")]
    pub rho: Vec<f64>,
    #[serde(default = "default_beta_mult")]
    pub beta_mult: Vec<f64>,
    /// Fixed inverse temperature, bypassing beta*.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "default_sampler_alpha")]
    pub alpha: f64,
    #[serde(default = "default_sampler_steps")]
    pub steps: usize,
    #[serde(default = "default_sampler_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_sampler_thin")]
    pub thin: usize,
    #[serde(default = "default_sampler_chains")]
    pub chains: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_sampler_init_sigma")]
    pub init_sigma: f64,
    #[serde(default = "default_one")]
    pub replicates: usize,
    #[serde(default)]
    pub subsample_sizes: Vec<usize>,
    /// Also curate the background group in `hard_curation`.
    #[serde(default)]
    pub also_background: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default = "default_variance_target")]
    pub variance_target: f64,
    #[serde(default = "default_col_gap_max")]
    pub col_gap_max: f64,
    #[serde(default = "default_seq_gap_max")]
    pub seq_gap_max: f64,
    #[serde(default = "default_n_pairs")]
    pub n_pairs: usize,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_beta_min")]
    pub beta_min: f64,
    #[serde(default = "default_beta_max")]
    pub beta_max: f64,
    /// Write per-chain step traces (energy and designated attention).
    #[serde(default)]
    pub trace: bool,
    #[serde(default = "default_true")]
    pub write_sequences: bool,
    /// Worker threads; the global pool when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

fn default_sampler_alpha() -> f64 {
    default_sampler().alpha
}
fn default_sampler_steps() -> usize {
    default_sampler().steps
}
fn default_sampler_burn_in() -> usize {
    default_sampler().burn_in
}
fn default_sampler_thin() -> usize {
    default_sampler().thin
}
fn default_sampler_chains() -> usize {
    default_sampler().chains
}
fn default_sampler_init_sigma() -> f64 {
    default_sampler().init_sigma
}

/// How the marker column is located.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerSpec {
    Position(usize),
    Auto(AminoAcid),
}

impl ExperimentConfig {
    /// A config with every optional key at its default.
    pub fn new(experiment: ExperimentKind, mode: Mode, input: impl Into<PathBuf>) -> Self {
        ExperimentConfig {
            experiment,
            input: input.into(),
            format: None,
            marker_pos: None,
            marker_auto: None,
            marker_res: None,
            mode,
            rho: default_rho(),
            beta_mult: default_beta_mult(),
            beta: None,
            alpha: default_sampler_alpha(),
            steps: default_sampler_steps(),
            burn_in: default_sampler_burn_in(),
            thin: default_sampler_thin(),
            chains: default_sampler_chains(),
            seed: 0,
            init_sigma: default_sampler_init_sigma(),
            replicates: 1,
            subsample_sizes: Vec::new(),
            also_background: false,
            out: default_out(),
            variance_target: default_variance_target(),
            col_gap_max: default_col_gap_max(),
            seq_gap_max: default_seq_gap_max(),
            n_pairs: default_n_pairs(),
            grid_points: default_grid_points(),
            beta_min: default_beta_min(),
            beta_max: default_beta_max(),
            trace: false,
            write_sequences: true,
            threads: None,
        }
    }

    /// Parses TOML. Relative `input` and `out` paths are resolved against
    /// `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HopgenError::Config(e.to_string()))?;
        if cfg.input.is_relative() {
            cfg.input = base_dir.join(&cfg.input);
        }
        if cfg.out.is_relative() {
            cfg.out = base_dir.join(&cfg.out);
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HopgenError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HopgenError::Serde(e.to_string()))
    }

    pub fn sampler(&self, beta: f64, seed: u64) -> SamplerConfig {
        SamplerConfig {
            alpha: self.alpha,
            beta,
            steps: self.steps,
            burn_in: self.burn_in,
            thin: self.thin,
            chains: self.chains,
            seed,
            init_sigma: self.init_sigma,
            record_energy: self.trace,
        }
    }

    pub fn grid(&self) -> Result<BetaGrid> {
        BetaGrid::log_spaced(self.grid_points, self.beta_min, self.beta_max)
    }

    pub fn resolved_format(&self) -> Result<AlignmentFormat> {
        self.format
            .or_else(|| AlignmentFormat::from_path(&self.input))
            .ok_or_else(|| {
                HopgenError::Config(format!(
                    "cannot infer alignment format of {}; set format = \"stockholm\" or \"fasta\"",
                    self.input.display()
                ))
            })
    }

    pub fn marker(&self) -> Result<MarkerSpec> {
        match (self.marker_pos, self.marker_auto) {
            (Some(_), Some(_)) => Err(HopgenError::Config("set only one of marker_pos and marker_auto".into())),
            (None, None) => Err(HopgenError::Config(
                "a marker is required: set marker_pos or marker_auto".into(),
            )),
            (Some(0), None) => Err(HopgenError::Config("marker_pos is 1-based".into())),
            (Some(p), None) => Ok(MarkerSpec::Position(p - 1)),
            (None, Some(c)) => AminoAcid::from_char(c)
                .map(MarkerSpec::Auto)
                .ok_or_else(|| HopgenError::Config(format!("marker_auto '{c}' is not an amino acid"))),
        }
    }

    /// Marker residues, defaulting to the `marker_auto` residue.
    pub fn marker_residues(&self) -> Result<ResidueSet> {
        match (self.marker_res, self.marker()?) {
            (Some(set), _) => Ok(set),
            (None, MarkerSpec::Auto(a)) => Ok(ResidueSet::from_residues([a])),
            (None, MarkerSpec::Position(_)) => {
                Err(HopgenError::Config("marker_res is required with marker_pos".into()))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(HopgenError::Config(m));
        self.marker_residues()?;
        self.resolved_format()?;
        self.sampler(1.0, self.seed).validate()?;
        self.grid()?;
        if self.replicates == 0 {
            return fail("replicates must be at least 1".into());
        }
        if let Some(bad) = self.rho.iter().find(|r| !(**r >= 1.0 && r.is_finite())) {
            return fail(format!("rho entries must be finite and >= 1, got {bad}"));
        }
        if let Some(bad) = self.beta_mult.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return fail(format!("beta_mult entries must be positive, got {bad}"));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b.is_finite()) {
                return fail(format!("beta must be positive, got {b}"));
            }
        }
        if !(self.variance_target > 0.0 && self.variance_target <= 1.0) {
            return fail(format!(
                "variance_target must lie in (0, 1], got {}",
                self.variance_target
            ));
        }
        if self.threads == Some(0) {
            return fail("threads must be at least 1".into());
        }
        match self.experiment {
            ExperimentKind::HardCuration => {
                if self.mode == Mode::Multiplicity {
                    return fail(
                        "hard_curation needs mode full, hard_curated_designated or hard_curated_background".into(),
                    );
                }
            }
            ExperimentKind::RhoSweep => {
                if self.mode != Mode::Multiplicity {
                    return fail("rho_sweep needs mode = multiplicity".into());
                }
                if self.rho.is_empty() {
                    return fail("rho_sweep needs a non-empty rho list".into());
                }
            }
            ExperimentKind::BetaSweep => {
                if self.mode != Mode::Multiplicity {
                    return fail("beta_sweep needs mode = multiplicity".into());
                }
                if self.rho.is_empty() || self.beta_mult.is_empty() {
                    return fail("beta_sweep needs non-empty rho and beta_mult lists".into());
                }
                if self.beta.is_some() {
                    return fail("beta_sweep scales beta*; remove the fixed beta".into());
                }
            }
            ExperimentKind::Scaling => {
                if self.mode != Mode::HardCuratedDesignated {
                    return fail("scaling needs mode = hard_curated_designated".into());
                }
                if self.subsample_sizes.is_empty() {
                    return fail("scaling needs subsample_sizes".into());
                }
                if let Some(s) = self.subsample_sizes.iter().find(|&&s| s < 2) {
                    return fail(format!("subsample size {s} is too small for PCA"));
                }
            }
            ExperimentKind::EntropyCurves => {
                if self.mode != Mode::Multiplicity {
                    return fail("entropy_curves needs mode = multiplicity".into());
                }
                if self.rho.is_empty() {
                    return fail("entropy_curves needs a non-empty rho list".into());
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_toml_str(text, Path::new("/data"))
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse(
            r#"
experiment = "rho_sweep"
input = "fam.sto"
mode = "multiplicity"
marker_pos = 15
marker_res = "KR"
rho = [1, 10, 100]
"#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.input, PathBuf::from("/data/fam.sto"));
        assert_eq!(cfg.resolved_format().unwrap(), AlignmentFormat::Stockholm);
        assert_eq!(cfg.marker().unwrap(), MarkerSpec::Position(14));
        assert_eq!(cfg.rho, vec![1.0, 10.0, 100.0]);
        assert_eq!((cfg.steps, cfg.burn_in, cfg.thin, cfg.chains), (5000, 2000, 100, 30));
        assert_eq!(cfg.sampler(2.0, 7).samples_per_chain(), 31);
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::new(ExperimentKind::BetaSweep, Mode::Multiplicity, "/x/a.fasta");
        cfg.marker_auto = Some('K');
        cfg.beta_mult = vec![0.5, 1.0, 3.0];
        cfg.rho = vec![1.0, 200.0];
        cfg.out = PathBuf::from("/x/out");
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = parse("experiment = \"rho_sweep\"\ninput = \"a.sto\"\nmode = \"multiplicity\"\nrhoo = [1]\n");
        assert!(matches!(err, Err(HopgenError::Config(_))));
    }

    #[test]
    fn invariants_enforced() {
        let base = {
            let mut c = ExperimentConfig::new(ExperimentKind::RhoSweep, Mode::Multiplicity, "a.sto");
            c.marker_pos = Some(3);
            c.marker_res = Some("K".parse().unwrap());
            c
        };
        base.validate().unwrap();
        let cases: Vec<Box<dyn Fn(&mut ExperimentConfig)>> = vec![
            Box::new(|c| c.rho = vec![0.5]),
            Box::new(|c| c.replicates = 0),
            Box::new(|c| c.mode = Mode::Full),
            Box::new(|c| c.marker_pos = None),
            Box::new(|c| c.marker_auto = Some('K')),
            Box::new(|c| c.marker_pos = Some(0)),
            Box::new(|c| c.marker_res = None),
            Box::new(|c| c.burn_in = c.steps),
            Box::new(|c| c.input = "a.txt".into()),
            Box::new(|c| c.experiment = ExperimentKind::Scaling),
            Box::new(|c| {
                c.experiment = ExperimentKind::BetaSweep;
                c.beta = Some(2.0);
            }),
        ];
        for (i, mutate) in cases.iter().enumerate() {
            let mut c = base.clone();
            mutate(&mut c);
            assert!(matches!(c.validate(), Err(HopgenError::Config(_))), "case {i} accepted");
        }
    }

    #[test]
    fn marker_auto_defaults_residue_set() {
        let mut c = ExperimentConfig::new(ExperimentKind::HardCuration, Mode::HardCuratedDesignated, "a.fa");
        c.marker_auto = Some('k');
        assert_eq!(c.marker_residues().unwrap(), "K".parse().unwrap());
        c.validate().unwrap();
    }
}
