use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hopgen_core::experiment::runner::{read_alignment, RunOutput};
use hopgen_core::experiment::{
    generate_synthetic_family, replay, run_experiment, AlignmentFormat, ExperimentConfig, Mode, SyntheticFamilySpec,
};
use hopgen_core::{clean_alignment, AminoAcid, HopgenError, ResidueSet};

#[derive(Parser)]
#[command(
    name = "hopgen",
    version,
    about = "Multiplicity-weighted stochastic attention for protein families"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a config file.
    Run(RunArgs),
    /// Re-run the experiment recorded in a manifest.
    Replay {
        manifest: PathBuf,
        /// Write outputs here instead of the recorded directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Clean an alignment and write it as FASTA.
    Clean {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: Option<AlignmentFormat>,
        #[arg(long, default_value_t = 0.5)]
        col_gap_max: f64,
        #[arg(long, default_value_t = 0.3)]
        seq_gap_max: f64,
    },
    /// Write a synthetic family with a tunable separation.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RunArgs {
    config: PathBuf,
    /// Comma-separated multiplicity ratios.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Comma-separated multiples of beta*.
    #[arg(long, value_delimiter = ',')]
    beta_mult: Option<Vec<f64>>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    /// 1-based marker column.
    #[arg(long)]
    marker_pos: Option<usize>,
    #[arg(long, value_parser = parse_residues)]
    marker_res: Option<ResidueSet>,
    #[arg(long)]
    init_sigma: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dump per-chain traces.
    #[arg(long)]
    trace: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long)]
    output: PathBuf,
    /// Fraction of designated rows sharing one conserved motif.
    #[arg(long, default_value_t = 0.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 60)]
    num_seqs: usize,
    #[arg(long, default_value_t = 20)]
    num_designated: usize,
    #[arg(long, default_value_t = 60)]
    width: usize,
    #[arg(long, default_value_t = 40)]
    signal_columns: usize,
    /// 1-based marker column.
    #[arg(long, default_value_t = 11)]
    marker_pos: usize,
    #[arg(long, default_value_t = 4)]
    num_clusters: usize,
    #[arg(long, default_value_t = 0.75)]
    motif_fidelity: f64,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: HopgenError| e.to_string())
}

fn parse_residues(s: &str) -> Result<ResidueSet, String> {
    s.parse().map_err(|e: HopgenError| e.to_string())
}

fn parse_format(s: &str) -> Result<AlignmentFormat, String> {
    match s {
        "stockholm" | "sto" => Ok(AlignmentFormat::Stockholm),
        "fasta" | "fa" => Ok(AlignmentFormat::Fasta),
        other => Err(format!("unknown format '{other}'")),
    }
}

fn exit_code(err: &HopgenError) -> u8 {
    match err {
        HopgenError::Config(_) | HopgenError::Serde(_) => 2,
        HopgenError::Numerical(_) => 4,
        e if e.is_data_error() => 3,
        _ => 1,
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: RunArgs) {
    if let Some(v) = args.rho {
        cfg.rho = v;
    }
    if let Some(v) = args.beta_mult {
        cfg.beta_mult = v;
    }
    if let Some(v) = args.chains {
        cfg.chains = v;
    }
    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.mode {
        cfg.mode = v;
    }
    if let Some(v) = args.marker_pos {
        if cfg.marker_res.is_none() {
            cfg.marker_res = cfg
                .marker_auto
                .and_then(AminoAcid::from_char)
                .map(|a| ResidueSet::from_residues([a]));
        }
        cfg.marker_pos = Some(v);
        cfg.marker_auto = None;
    }
    if let Some(v) = args.marker_res {
        cfg.marker_res = Some(v);
    }
    if let Some(v) = args.init_sigma {
        cfg.init_sigma = v;
    }
    if let Some(v) = args.threads {
        cfg.threads = Some(v);
    }
    if let Some(v) = args.out {
        cfg.out = v;
    }
    cfg.trace |= args.trace;
}

fn report(out: &RunOutput) {
    println!(
        "{:<48} {:>8} {:>8} {:>8} {:>8}",
        "condition", "f_eff", "a_des", "f_obs", "delta"
    );
    for c in &out.conditions {
        let r = &c.row;
        println!(
            "{:<48} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            c.tag, r.f_eff, r.a_des, r.f_obs, r.delta
        );
    }
    for (s, _) in &out.curves {
        println!(
            "entropy curve rho={} K_eff={:.2} beta*={:.3} -> {}",
            s.rho, s.k_eff, s.beta_star, s.file
        );
    }
    println!("outputs written to {}", out.out_dir.display());
}

fn write_file(path: &Path, text: &str) -> Result<(), HopgenError> {
    fs::write(path, text).map_err(|source| HopgenError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn run(cli: Cli) -> Result<(), HopgenError> {
    match cli.command {
        Command::Run(args) => {
            let mut cfg = ExperimentConfig::load(&args.config)?;
            apply_overrides(&mut cfg, args);
            let out = run_experiment(&cfg)?;
            report(&out);
        }
        Command::Replay { manifest, out } => {
            let out = replay(&manifest, out.as_deref())?;
            report(&out);
        }
        Command::Clean {
            input,
            output,
            format,
            col_gap_max,
            seq_gap_max,
        } => {
            let format = match format {
                Some(f) => f,
                None => AlignmentFormat::from_path(&input).ok_or_else(|| {
                    HopgenError::Config(format!("cannot infer format of {}; pass --format", input.display()))
                })?,
            };
            let (raw, _) = read_alignment(&input, format)?;
            let cleaned = clean_alignment(&raw, col_gap_max, seq_gap_max)?;
            write_file(&output, &cleaned.to_fasta())?;
            log::info!(
                "{} x {} -> {} x {}",
                raw.num_seqs(),
                raw.width(),
                cleaned.num_seqs(),
                cleaned.width()
            );
        }
        Command::Synth(a) => {
            if a.marker_pos == 0 {
                return Err(HopgenError::Config("marker positions are 1-based".into()));
            }
            let spec = SyntheticFamilySpec {
                num_seqs: a.num_seqs,
                num_designated: a.num_designated,
                width: a.width,
                signal_columns: a.signal_columns,
                marker_position: a.marker_pos - 1,
                num_clusters: a.num_clusters,
                motif_fidelity: a.motif_fidelity,
                separation: a.separation,
                seed: a.seed,
            };
            let family = generate_synthetic_family(&spec)?;
            write_file(&a.output, &family.to_fasta())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hopgen: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
