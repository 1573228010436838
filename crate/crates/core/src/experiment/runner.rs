use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{AlignmentFormat, ExperimentConfig, ExperimentKind, MarkerSpec, Mode};
use super::output::{
    fnv1a64, write_curve_summary_tsv, write_json, write_metrics_tsv, write_with, CurveSummary, DerivedQuantities,
    MetricsRow, ResultsDocument, RunManifest, SeedRecord,
};
use super::pipeline::{effective_count, evaluate_generation, generate, Generation, PreparedMemory};
use crate::alignment::{clean_alignment, find_marker_column, parse_fasta, parse_stockholm, Alignment};
use crate::alphabet::{sequence_string, ALPHABET_SIZE};
use crate::conditioning::{BetaGrid, EntropyCurve};
use crate::error::{HopgenError, Result};
use crate::metrics::{composition_frequencies, fisher_separation};
use crate::sampler::{derive_seed, write_trace_tsv, ChainTrace};

/// Stream index reserved for subsample draws.
const SUBSAMPLE_STREAM: u64 = 0x5355_4253_414d_504c;
/// Stream index for the diversity pair sampler within a replicate.
const DIVERSITY_STREAM: u64 = 0x4449_5645_5253_4954;

/// Input family after parsing, cleaning and encoding.
#[derive(Debug, Clone)]
pub struct Family {
    pub raw_k: usize,
    pub raw_l: usize,
    pub full: PreparedMemory,
    /// Residue composition of the cleaned family; the KL reference for
    /// every mode.
    pub reference: [f64; ALPHABET_SIZE],
    pub input_bytes: Vec<u8>,
}

pub fn read_alignment(path: &Path, format: AlignmentFormat) -> Result<(Alignment, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| HopgenError::io(path, e))?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| HopgenError::Alignment(format!("{} is not valid UTF-8", path.display())))?;
    let aln = match format {
        AlignmentFormat::Stockholm => parse_stockholm(text)?,
        AlignmentFormat::Fasta => parse_fasta(text)?,
    };
    Ok((aln, bytes))
}

pub fn load_family(config: &ExperimentConfig) -> Result<Family> {
    let (raw, input_bytes) = read_alignment(&config.input, config.resolved_format()?)?;
    let cleaned = clean_alignment(&raw, config.col_gap_max, config.seq_gap_max)?;
    let marker_position = match config.marker()? {
        MarkerSpec::Position(p) => p,
        MarkerSpec::Auto(a) => find_marker_column(&cleaned, a)?,
    };
    let full = PreparedMemory::new(
        cleaned,
        marker_position,
        config.marker_residues()?,
        config.variance_target,
    )?;
    let reference = composition_frequencies(full.alignment.rows())?;
    Ok(Family {
        raw_k: raw.num_seqs(),
        raw_l: raw.width(),
        full,
        reference,
        input_bytes,
    })
}

pub fn replicate_seed(master: u64, replicate: usize) -> u64 {
    derive_seed(master, replicate as u64)
}

/// One independent unit of generation.
#[derive(Debug, Clone)]
struct Job<'a> {
    condition: String,
    prepared: &'a PreparedMemory,
    curve_beta_star: f64,
    rho: f64,
    beta_mult: Option<f64>,
    replicate: usize,
    subsample_size: Option<usize>,
}

impl Job<'_> {
    fn tag(&self) -> String {
        let mut tag = format!("{}_rho{}", self.condition, self.rho);
        if let Some(m) = self.beta_mult {
            tag.push_str(&format!("_mult{m}"));
        }
        if let Some(n) = self.subsample_size {
            tag.push_str(&format!("_n{n}"));
        }
        format!("{tag}_rep{}", self.replicate)
    }
}

/// Metrics row plus the raw material behind it.
#[derive(Debug, Clone)]
pub struct ConditionOutput {
    pub tag: String,
    pub row: MetricsRow,
    pub sequences: Vec<String>,
    pub traces: Vec<ChainTrace>,
}

fn run_jobs(config: &ExperimentConfig, family: &Family, jobs: &[Job<'_>]) -> Result<Vec<ConditionOutput>> {
    jobs.par_iter()
        .map(|job| {
            let seed = replicate_seed(config.seed, job.replicate);
            let beta = config
                .beta
                .unwrap_or(job.curve_beta_star * job.beta_mult.unwrap_or(1.0));
            let sampler = config.sampler(beta, seed);
            info!("{}: beta = {beta:.4}, {} chains", job.tag(), sampler.chains);
            let r = job.prepared.weights(job.rho)?;
            let gen: Generation = generate(job.prepared, &r, &sampler)?;
            let m = evaluate_generation(
                &gen,
                job.prepared,
                job.rho,
                sampler.burn_in,
                &family.reference,
                config.n_pairs,
                derive_seed(seed, DIVERSITY_STREAM),
            )?;
            let split = &job.prepared.split;
            let row = MetricsRow {
                condition: job.condition.clone(),
                replicate: job.replicate,
                subsample_size: job.subsample_size,
                k: split.num_seqs,
                k_des: split.k_des(),
                k_bg: split.k_bg(),
                d: job.prepared.memory.dim(),
                rho: job.rho,
                beta_mult: job.beta_mult,
                beta,
                beta_star: job.curve_beta_star,
                k_eff: effective_count(job.prepared, job.rho)?,
                f_eff: m.gap.f_eff,
                a_des: m.gap.a_des_mean,
                f_soft: m.gap.f_soft_mean,
                f_obs: m.gap.f_obs,
                delta_attn: m.gap.delta_attn,
                delta_pca: m.gap.delta_pca,
                delta_argmax: m.gap.delta_argmax,
                delta: m.gap.delta_total,
                diversity: m.diversity,
                kl: m.kl,
                n_samples: m.n_samples,
                seed,
            };
            Ok(ConditionOutput {
                tag: job.tag(),
                row,
                sequences: gen.sequences.iter().map(|s| sequence_string(s)).collect(),
                traces: if config.trace { gen.traces } else { Vec::new() },
            })
        })
        .collect()
}

fn curve_for(prepared: &PreparedMemory, rho: f64, grid: &BetaGrid) -> Result<EntropyCurve> {
    let curve = prepared.entropy_curve(rho, grid)?;
    info!(
        "beta*(rho = {rho}) = {:.4} (K = {}, d = {})",
        curve.beta_star,
        prepared.memory.num_patterns(),
        prepared.memory.dim()
    );
    Ok(curve)
}

fn curated(family: &Family, rows: &[usize], config: &ExperimentConfig, what: &str) -> Result<PreparedMemory> {
    if rows.len() < 2 {
        return Err(HopgenError::Alignment(format!(
            "{what} subset has {} sequence(s); PCA needs at least 2",
            rows.len()
        )));
    }
    let split = &family.full.split;
    PreparedMemory::new(
        family.full.alignment.subset(rows)?,
        split.marker_position,
        split.marker_residues,
        config.variance_target,
    )
}

/// Fresh PCA and memory per curated subset, uniform weights, beta* per
/// matrix.
pub fn run_hard_curation(config: &ExperimentConfig, family: &Family) -> Result<Vec<ConditionOutput>> {
    let split = &family.full.split;
    let mut subsets: Vec<(&str, Option<Vec<usize>>)> = match config.mode {
        Mode::Full => vec![("full", None)],
        Mode::HardCuratedDesignated => vec![("designated", Some(split.designated.clone()))],
        Mode::HardCuratedBackground => vec![("background", Some(split.background()))],
        Mode::Multiplicity => {
            return Err(HopgenError::Config(
                "hard_curation does not run in multiplicity mode".into(),
            ));
        }
    };
    if config.also_background && config.mode != Mode::HardCuratedBackground {
        subsets.push(("background", Some(split.background())));
    }
    let grid = config.grid()?;
    let mut prepared = Vec::with_capacity(subsets.len());
    for (name, rows) in &subsets {
        let p = match rows {
            None => family.full.clone(),
            Some(rows) => curated(family, rows, config, name)?,
        };
        let beta_star = curve_for(&p, 1.0, &grid)?.beta_star;
        prepared.push((name.to_string(), p, beta_star));
    }
    let mut jobs = Vec::new();
    for (name, p, beta_star) in &prepared {
        for replicate in 0..config.replicates {
            jobs.push(Job {
                condition: name.clone(),
                prepared: p,
                curve_beta_star: *beta_star,
                rho: 1.0,
                beta_mult: None,
                replicate,
                subsample_size: None,
            });
        }
    }
    run_jobs(config, family, &jobs)
}

fn run_sweep(config: &ExperimentConfig, family: &Family, with_mult: bool) -> Result<Vec<ConditionOutput>> {
    let grid = config.grid()?;
    let mut curves = Vec::with_capacity(config.rho.len());
    for &rho in &config.rho {
        curves.push(curve_for(&family.full, rho, &grid)?.beta_star);
    }
    let mults: Vec<Option<f64>> = if with_mult {
        config.beta_mult.iter().map(|&m| Some(m)).collect()
    } else {
        vec![None]
    };
    let mut jobs = Vec::new();
    for (&rho, &beta_star) in config.rho.iter().zip(&curves) {
        for &beta_mult in &mults {
            for replicate in 0..config.replicates {
                jobs.push(Job {
                    condition: "multiplicity".into(),
                    prepared: &family.full,
                    curve_beta_star: beta_star,
                    rho,
                    beta_mult,
                    replicate,
                    subsample_size: None,
                });
            }
        }
    }
    run_jobs(config, family, &jobs)
}

/// One row per (rho, replicate) at `beta = beta*(r)` or the fixed `beta`.
pub fn run_rho_sweep(config: &ExperimentConfig, family: &Family) -> Result<Vec<ConditionOutput>> {
    if config.mode != Mode::Multiplicity {
        return Err(HopgenError::Config("rho_sweep needs mode = multiplicity".into()));
    }
    run_sweep(config, family, false)
}

/// One row per (rho, beta multiplier, replicate) at `beta = mult * beta*(r)`.
pub fn run_beta_sweep(config: &ExperimentConfig, family: &Family) -> Result<Vec<ConditionOutput>> {
    if config.mode != Mode::Multiplicity {
        return Err(HopgenError::Config("beta_sweep needs mode = multiplicity".into()));
    }
    run_sweep(config, family, true)
}

/// Designated rows drawn for subsample `size`, replicate `replicate`.
///
/// The draw depends only on the master seed, the size and the replicate,
/// never on sampler settings.
pub fn subsample_rows(designated: &[usize], size: usize, master: u64, replicate: usize) -> Result<Vec<usize>> {
    if size > designated.len() {
        return Err(HopgenError::Config(format!(
            "subsample size {size} exceeds K_des = {}",
            designated.len()
        )));
    }
    let stream = derive_seed(derive_seed(master, SUBSAMPLE_STREAM), size as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(stream, replicate as u64));
    let mut rows: Vec<usize> = sample(&mut rng, designated.len(), size)
        .into_iter()
        .map(|i| designated[i])
        .collect();
    rows.sort_unstable();
    Ok(rows)
}

/// Hard curation on seeded subsets of the designated group.
pub fn run_scaling_study(config: &ExperimentConfig, family: &Family) -> Result<Vec<ConditionOutput>> {
    if config.mode != Mode::HardCuratedDesignated {
        return Err(HopgenError::Config(
            "scaling needs mode = hard_curated_designated".into(),
        ));
    }
    let grid = config.grid()?;
    let designated = &family.full.split.designated;
    let mut prepared = Vec::new();
    for &size in &config.subsample_sizes {
        for replicate in 0..config.replicates {
            let rows = subsample_rows(designated, size, config.seed, replicate)?;
            let p = curated(family, &rows, config, "subsample")?;
            let beta_star = curve_for(&p, 1.0, &grid)?.beta_star;
            prepared.push((size, replicate, p, beta_star));
        }
    }
    let jobs: Vec<Job<'_>> = prepared
        .iter()
        .map(|(size, replicate, p, beta_star)| Job {
            condition: "scaling".into(),
            prepared: p,
            curve_beta_star: *beta_star,
            rho: 1.0,
            beta_mult: None,
            replicate: *replicate,
            subsample_size: Some(*size),
        })
        .collect();
    run_jobs(config, family, &jobs)
}

/// Entropy curve per rho on the full family.
pub fn export_entropy_curves(config: &ExperimentConfig, family: &Family) -> Result<Vec<(CurveSummary, EntropyCurve)>> {
    let grid = config.grid()?;
    let log_k = (family.full.memory.num_patterns() as f64).ln();
    config
        .rho
        .iter()
        .map(|&rho| {
            let curve = curve_for(&family.full, rho, &grid)?;
            let summary = CurveSummary {
                condition: "full".into(),
                rho,
                k_eff: curve.k_eff,
                h0_norm: curve.h0 / log_k,
                log_k_eff_norm: curve.k_eff.ln() / log_k,
                beta_star: curve.beta_star,
                beta_star_refined: curve.beta_star_refined,
                analytic_beta_star: curve.analytic_beta_star,
                file: format!("entropy_rho{rho}.tsv"),
            };
            Ok((summary, curve))
        })
        .collect()
}

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub conditions: Vec<ConditionOutput>,
    pub curves: Vec<(CurveSummary, EntropyCurve)>,
}

impl RunOutput {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.conditions.iter().map(|c| c.row.clone()).collect()
    }
}

fn derived_quantities(family: &Family, config: &ExperimentConfig) -> Result<DerivedQuantities> {
    let full = &family.full;
    let split = &full.split;
    let beta_star_uniform = curve_for(full, 1.0, &config.grid()?)?.beta_star;
    Ok(DerivedQuantities {
        k_raw: family.raw_k,
        l_raw: family.raw_l,
        k: full.alignment.num_seqs(),
        l: full.alignment.width(),
        d: full.memory.dim(),
        variance_retained: full.model.variance_retained,
        marker_position: split.marker_position + 1,
        marker_residues: split.marker_residues.to_string(),
        k_des: split.k_des(),
        k_bg: split.k_bg(),
        f_nat: split.k_des() as f64 / split.num_seqs as f64,
        separation: fisher_separation(&full.memory, split).ok().map(|s| s.s_index),
        beta_star_uniform,
    })
}

/// Validates, loads the family, writes the manifest, runs the experiment
/// and writes every output file.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    run_inner(config, None)
}

/// Re-runs the configuration stored in a manifest. With `out` set the
/// outputs go there, otherwise to the recorded directory. The manifest is
/// rewritten unchanged, so every output file matches the original run.
pub fn replay(manifest_path: &Path, out: Option<&Path>) -> Result<RunOutput> {
    let original = RunManifest::load(manifest_path)?;
    let mut config = original.config.clone();
    if let Some(dir) = out {
        config.out = dir.to_path_buf();
    }
    let result = run_inner(&config, Some(&original))?;
    Ok(result)
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HopgenError::Config(format!("cannot build worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn run_inner(config: &ExperimentConfig, original: Option<&RunManifest>) -> Result<RunOutput> {
    config.validate()?;
    with_pool(config.threads, || run_validated(config, original))?
}

fn run_validated(config: &ExperimentConfig, original: Option<&RunManifest>) -> Result<RunOutput> {
    let family = load_family(config)?;
    if let Some(m) = original {
        let hash = format!("{:016x}", fnv1a64(&family.input_bytes));
        if hash != m.input_fnv1a64 || family.input_bytes.len() as u64 != m.input_bytes {
            return Err(HopgenError::Alignment(format!(
                "{} differs from the recorded input (fnv1a64 {} vs {})",
                config.input.display(),
                hash,
                m.input_fnv1a64
            )));
        }
    }
    if matches!(config.mode, Mode::Multiplicity) && !family.full.split.is_usable_for_conditioning() {
        return Err(HopgenError::Alignment(format!(
            "marker column {} splits the family into {} designated and {} background sequences; both must be non-empty",
            family.full.split.marker_position + 1,
            family.full.split.k_des(),
            family.full.split.k_bg()
        )));
    }

    let derived = derived_quantities(&family, config)?;
    if let Some(m) = original {
        if m.derived != derived {
            return Err(HopgenError::Numerical(
                "replayed derived quantities differ from the manifest".into(),
            ));
        }
    }
    let seeds = SeedRecord {
        master: config.seed,
        replicate_seeds: (0..config.replicates).map(|i| replicate_seed(config.seed, i)).collect(),
        subsample_stream: derive_seed(config.seed, SUBSAMPLE_STREAM),
    };
    let manifest = match original {
        Some(m) => RunManifest {
            config: config.clone(),
            ..m.clone()
        },
        None => RunManifest::new(config.clone(), &family.input_bytes, seeds, derived),
    };

    let out = &config.out;
    fs::create_dir_all(out).map_err(|e| HopgenError::io(out, e))?;
    manifest.write(out)?;
    info!(
        "manifest written to {}",
        out.join(super::output::MANIFEST_FILE).display()
    );

    family.full.model.save(&out.join("model"))?;
    fs::write(out.join("cleaned.fasta"), family.full.alignment.to_fasta()).map_err(|e| HopgenError::io(out, e))?;

    let (conditions, curves) = match config.experiment {
        ExperimentKind::HardCuration => (run_hard_curation(config, &family)?, Vec::new()),
        ExperimentKind::RhoSweep => (run_rho_sweep(config, &family)?, Vec::new()),
        ExperimentKind::BetaSweep => (run_beta_sweep(config, &family)?, Vec::new()),
        ExperimentKind::Scaling => (run_scaling_study(config, &family)?, Vec::new()),
        ExperimentKind::EntropyCurves => (Vec::new(), export_entropy_curves(config, &family)?),
    };

    let name = config.experiment.name();
    let rows: Vec<MetricsRow> = conditions.iter().map(|c| c.row.clone()).collect();
    if config.experiment == ExperimentKind::EntropyCurves {
        let summaries: Vec<CurveSummary> = curves.iter().map(|(s, _)| s.clone()).collect();
        write_with(&out.join(format!("{name}.tsv")), |w| {
            write_curve_summary_tsv(&summaries, w)
        })?;
        for (summary, curve) in &curves {
            write_with(&out.join(&summary.file), |w| curve.write_tsv(w))?;
        }
    } else {
        write_with(&out.join(format!("{name}.tsv")), |w| write_metrics_tsv(&rows, w))?;
    }
    write_json(
        &out.join("results.json"),
        &ResultsDocument {
            experiment: name.to_string(),
            rows,
            curves: curves.iter().map(|(s, _)| s.clone()).collect(),
        },
    )?;

    if config.write_sequences && !conditions.is_empty() {
        let dir = out.join("sequences");
        fs::create_dir_all(&dir).map_err(|e| HopgenError::io(&dir, e))?;
        for c in &conditions {
            let mut text = String::new();
            for (i, s) in c.sequences.iter().enumerate() {
                text.push_str(&format!(">{}_{}\n{s}\n", c.tag, i + 1));
            }
            let path = dir.join(format!("{}.fasta", c.tag));
            fs::write(&path, text).map_err(|e| HopgenError::io(&path, e))?;
        }
    }
    if config.trace {
        let dir = out.join("traces");
        fs::create_dir_all(&dir).map_err(|e| HopgenError::io(&dir, e))?;
        for c in &conditions {
            for t in &c.traces {
                let path = dir.join(format!("{}_chain{}.tsv", c.tag, t.chain_id));
                write_with(&path, |w| write_trace_tsv(t, w))?;
            }
        }
    }
    info!("{name}: {} condition(s) written to {}", conditions.len(), out.display());

    Ok(RunOutput {
        out_dir: out.clone(),
        manifest,
        conditions,
        curves,
    })
}
