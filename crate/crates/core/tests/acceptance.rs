//! Acceptance suite. Prints one `criterion N: PASS|FAIL|SKIP` line per
//! criterion and exits non-zero when any criterion fails.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use hopgen_core::alignment::Alignment;
use hopgen_core::alphabet::{AminoAcid, ResidueSet};
use hopgen_core::conditioning::{
    analytic_beta_star, f_eff, find_beta_star, k_eff, multiplicity_vector, rho_for_target, BetaGrid, DEFAULT_BETA_MAX,
    DEFAULT_BETA_MIN, DEFAULT_GRID_POINTS,
};
use hopgen_core::encoder::{decode_state, fit_pca, one_hot_encode, MemoryMatrix};
use hopgen_core::experiment::synthetic::DESIGNATED_MARKER;
use hopgen_core::experiment::{
    evaluate_generation, generate, generate_synthetic_family, run_experiment, ExperimentConfig, ExperimentKind, Mode,
    PreparedMemory, SyntheticFamilySpec,
};
use hopgen_core::metrics::{
    composition_frequencies, fisher_separation, gap_decomposition, kl_divergence, mean_designated_attention,
    pairwise_diversity, permutation_test, phenotype_fraction, DEFAULT_MAX_EXHAUSTIVE,
};
use hopgen_core::sampler::{energy, score, MultiplicityVector, SamplerConfig};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn within_budget(outcome: Outcome, elapsed: Duration, budget: Duration) -> Outcome {
    let note = format!("{:.2}s of {}s", elapsed.as_secs_f64(), budget.as_secs());
    match outcome {
        Outcome::Pass(d) if elapsed <= budget => Outcome::Pass(format!("{d}; {note}")),
        Outcome::Pass(d) => Outcome::Fail(format!("{d}; over time budget: {note}")),
        Outcome::Fail(d) => Outcome::Fail(format!("{d}; {note}")),
        skip => skip,
    }
}

fn default_grid() -> BetaGrid {
    BetaGrid::log_spaced(DEFAULT_GRID_POINTS, DEFAULT_BETA_MIN, DEFAULT_BETA_MAX).unwrap()
}

fn random_memory(rng: &mut ChaCha8Rng, d: usize, k: usize) -> MemoryMatrix {
    let m = DMatrix::from_fn(d, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    MemoryMatrix::normalized(m).unwrap()
}

fn random_vector(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn random_designated(rng: &mut ChaCha8Rng, k: usize) -> Vec<usize> {
    let n = rng.random_range(1..k);
    let mut idx = sample(rng, k, n).into_vec();
    idx.sort_unstable();
    idx
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-5;
    let betas = [0.5, 5.0, 50.0];
    let mut worst: f64 = 0.0;
    for instance in 0..50 {
        let d = rng.random_range(2..=10);
        let k = rng.random_range(2..=20);
        let beta = betas[instance % 3];
        let rho = if instance % 2 == 0 { 1.0 } else { 50.0 };
        let memory = random_memory(&mut rng, d, k);
        let designated = random_designated(&mut rng, k);
        let r = multiplicity_vector(k, &designated, rho).unwrap();
        let xi = random_vector(&mut rng, d, 0.5);
        let s = score(&xi, &memory, beta, &r);
        for i in 0..d {
            let mut plus = xi.clone();
            let mut minus = xi.clone();
            plus[i] += h;
            minus[i] -= h;
            let grad = (energy(&plus, &memory, beta, &r) - energy(&minus, &memory, beta, &r)) / (2.0 * h);
            worst = worst.max((s[i] + grad).abs());
        }
    }
    verdict(
        worst <= 1e-6,
        format!("max |score + dE/dxi| = {worst:.2e} (limit 1e-6)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = rng.random_range(2..=10);
        let k = rng.random_range(2..=10);
        let beta = [0.5, 5.0, 50.0][rng.random_range(0..3)];
        let memory = random_memory(&mut rng, d, k);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..=5)).collect();
        let r = MultiplicityVector::new(counts.iter().map(|&c| c as f64).collect()).unwrap();
        let columns: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
            .collect();
        let duplicated = memory.select(&columns).unwrap();
        let xi = random_vector(&mut rng, d, 0.5);
        let weighted = score(&xi, &memory, beta, &r);
        let literal = score(&xi, &duplicated, beta, &MultiplicityVector::uniform(columns.len()));
        worst = worst.max((weighted - literal).amax());
    }
    verdict(
        worst <= 1e-12,
        format!("max |weighted - duplicated| = {worst:.2e} (limit 1e-12)"),
    )
}

/// Kunitz rho sweep: (rho, listed f_eff).
const KUNITZ_F_EFF: [(f64, f64); 8] = [
    (1.0, 0.323),
    (5.0, 0.705),
    (10.0, 0.827),
    (50.0, 0.962),
    (100.0, 0.980),
    (200.0, 0.990),
    (500.0, 0.996),
    (1000.0, 0.998),
];

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut round_trip: f64 = 0.0;
    for _ in 0..1000 {
        let k_des = rng.random_range(1..200);
        let k_bg = rng.random_range(1..200);
        let f = rng.random_range(0.01..0.99);
        let rho = rho_for_target(f, k_des, k_bg).unwrap();
        round_trip = round_trip.max((f_eff(k_des, k_bg, rho) - f).abs());
    }
    let mismatched: Vec<String> = KUNITZ_F_EFF
        .iter()
        .filter(|(rho, listed)| (f_eff(32, 67, *rho) - listed).abs() > 5e-4)
        .map(|(rho, listed)| format!("rho={rho}: {:.5} vs {listed}", f_eff(32, 67, *rho)))
        .collect();
    let designated: Vec<usize> = (0..32).collect();
    let keff = k_eff(&multiplicity_vector(99, &designated, 1000.0).unwrap());
    let ok = round_trip <= 1e-12 && mismatched.is_empty() && (keff - 32.1).abs() <= 0.05;
    verdict(
        ok,
        format!(
            "round trip {round_trip:.1e}; table rows matched {}/8{}; K_eff(rho=1000) = {keff:.3}",
            8 - mismatched.len(),
            if mismatched.is_empty() {
                String::new()
            } else {
                format!(" (mismatch {})", mismatched.join(", "))
            }
        ),
    )
}

fn prepare(spec: &SyntheticFamilySpec) -> PreparedMemory {
    let aln = generate_synthetic_family(spec).unwrap();
    PreparedMemory::new(
        aln,
        spec.marker_position,
        ResidueSet::from_residues([DESIGNATED_MARKER]),
        0.95,
    )
    .unwrap()
}

fn criterion_4() -> Outcome {
    let prepared = prepare(&SyntheticFamilySpec::default());
    let grid = default_grid();
    let mut parts = Vec::new();
    let mut worst: f64 = 0.0;
    for rho in [1.0, 10.0, 100.0] {
        let beta = prepared.entropy_curve(rho, &grid).unwrap().beta_star;
        let sampler = SamplerConfig {
            beta,
            chains: 50,
            ..Default::default()
        };
        let gen = generate(&prepared, &prepared.weights(rho).unwrap(), &sampler).unwrap();
        let a_des = mean_designated_attention(&gen.traces, sampler.burn_in).unwrap();
        let dev = (a_des - prepared.f_eff(rho)).abs();
        worst = worst.max(dev);
        parts.push(format!("rho={rho}: a_des={a_des:.4} f_eff={:.4}", prepared.f_eff(rho)));
    }
    verdict(
        worst <= 0.02,
        format!(
            "d={}; {}; max dev {worst:.4} (limit 0.02)",
            prepared.memory.dim(),
            parts.join(", ")
        ),
    )
}

fn criterion_5() -> Outcome {
    let spec = SyntheticFamilySpec::default();
    let full = generate_synthetic_family(&spec).unwrap();
    let designated: Vec<usize> = (0..spec.num_designated).collect();
    let subset = full.subset(&designated).unwrap();
    let prepared = PreparedMemory::new(
        subset,
        spec.marker_position,
        ResidueSet::from_residues([DESIGNATED_MARKER]),
        0.95,
    )
    .unwrap();
    let beta = prepared.entropy_curve(1.0, &default_grid()).unwrap().beta_star;
    let sampler = SamplerConfig {
        beta,
        ..Default::default()
    };
    let gen = generate(&prepared, &prepared.weights(1.0).unwrap(), &sampler).unwrap();
    let f_obs = phenotype_fraction(&gen.sequences, spec.marker_position, prepared.split.marker_residues).unwrap();
    let n = gen.sequences.len();
    verdict(
        n >= 500 && f_obs == 1.0,
        format!("{n} sequences, phenotype fraction {f_obs}"),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let grid = default_grid();
    let designated: Vec<usize> = (0..16).collect();
    let mut law = Vec::new();
    let mut law_ok = true;
    let mut monotone_ok = true;
    for d in [16, 36, 64, 100] {
        let memory = random_memory(&mut rng, d, 50);
        let fitted = find_beta_star(&memory, &MultiplicityVector::uniform(50), &grid)
            .unwrap()
            .beta_star;
        let predicted = analytic_beta_star(d);
        let rel = (fitted - predicted).abs() / predicted;
        law_ok &= rel <= 0.25;
        law.push(format!(
            "d={d}: {fitted:.2} vs {predicted:.2} ({:+.0}%)",
            100.0 * (fitted - predicted) / predicted
        ));
        let path: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
            .iter()
            .map(|&rho| {
                let r = multiplicity_vector(50, &designated, rho).unwrap();
                find_beta_star(&memory, &r, &grid).unwrap().beta_star
            })
            .collect();
        if path.windows(2).any(|w| w[1] < w[0]) {
            monotone_ok = false;
            law.push(format!("d={d}: beta*(rho) not monotone {path:.2?}"));
        }
    }
    verdict(
        law_ok && monotone_ok,
        format!("{}; beta*(rho) non-decreasing: {monotone_ok}", law.join(", ")),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let g = gap_decomposition(rng.random(), rng.random(), rng.random(), rng.random());
        worst = worst.max((g.delta_attn + g.delta_pca + g.delta_argmax - g.delta_total).abs());
    }
    // f_soft is not listed for this row; any value telescopes away.
    let kunitz = gap_decomposition(0.979, 0.981, 0.7, 0.587).delta_total;
    verdict(
        worst <= 1e-15 && (kunitz - 0.39).abs() <= 0.005,
        format!("telescoping residual {worst:.1e}; Kunitz rho=100 delta = {kunitz:.4}"),
    )
}

fn random_sequences(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<Vec<AminoAcid>> {
    (0..n)
        .map(|_| (0..len).map(|_| AminoAcid::ALL[rng.random_range(0..4)]).collect())
        .collect()
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut diversity_ok = true;
    for n in 2..=6 {
        for _ in 0..20 {
            // Length 16 keeps every per-pair identity a dyadic fraction, so
            // the reference below is exact in floating point.
            let seqs = random_sequences(&mut rng, n, 16);
            let mut matches_ordered = 0usize;
            for (i, a) in seqs.iter().enumerate() {
                for (j, b) in seqs.iter().enumerate() {
                    if i != j {
                        matches_ordered += a.iter().zip(b).filter(|(x, y)| x == y).count();
                    }
                }
            }
            let pairs = (n * (n - 1) / 2) as f64;
            let expected = 1.0 - (matches_ordered as f64 / 2.0 / 16.0) / pairs;
            diversity_ok &= pairwise_diversity(&seqs, 500, 0).unwrap() == expected;
        }
    }
    let mut kl_self: f64 = 0.0;
    let mut kl_min = f64::INFINITY;
    for _ in 0..1000 {
        let p = composition_frequencies(&random_sequences(&mut rng, 3, 10)).unwrap();
        let q = composition_frequencies(&random_sequences(&mut rng, 3, 10)).unwrap();
        kl_self = kl_self.max(kl_divergence(&p, &p).abs());
        kl_min = kl_min.min(kl_divergence(&p, &q));
    }
    let p_value = permutation_test(&[0.0, 0.0], &[1.0, 1.0], DEFAULT_MAX_EXHAUSTIVE).unwrap();
    verdict(
        diversity_ok && kl_self <= 1e-9 && kl_min >= 0.0 && p_value == 1.0 / 3.0,
        format!("diversity exact: {diversity_ok}; max KL(p,p) {kl_self:.1e}; min KL {kl_min:.3}; p = {p_value}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let records: Vec<(String, String)> = (0..12)
        .map(|i| {
            let seq: String = (0..30)
                .map(|_| AminoAcid::ALL[rng.random_range(0..20)].to_char())
                .collect();
            (format!("s{i}"), seq)
        })
        .collect();
    let aln = Alignment::from_strings(&records).unwrap();
    let x = one_hot_encode(&aln);
    let model = fit_pca(&x, 1.0).unwrap();
    let mut exact = 0;
    for (k, (_, seq)) in records.iter().enumerate() {
        let xi = model.project(&x.data.column(k).into_owned());
        let (decoded, _) = decode_state(&model, &xi);
        exact += usize::from(decoded.iter().map(|a| a.to_char()).collect::<String>() == *seq);
    }
    verdict(
        exact == 12,
        format!("{exact}/12 sequences reconstructed at d = {}", model.dim()),
    )
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        for &o in &order[i..=j] {
            r[o] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

/// Families per knob setting; S and the gap are averaged over them.
const FAMILY_SEEDS: [u64; 3] = [0, 1, 2];

fn criterion_10() -> Outcome {
    let knobs = [0.0, 0.25, 0.5, 0.75, 1.0];
    let rho = 500.0;
    let grid = default_grid();
    let reference = [0.0; 20];
    let mut s_mean = Vec::new();
    let mut gap_mean = Vec::new();
    let mut per_seed = vec![(Vec::new(), Vec::new()); FAMILY_SEEDS.len()];
    for &separation in &knobs {
        let (mut s_sum, mut gap_sum) = (0.0, 0.0);
        for (i, &seed) in FAMILY_SEEDS.iter().enumerate() {
            let prepared = prepare(&SyntheticFamilySpec {
                separation,
                seed,
                ..Default::default()
            });
            let s = fisher_separation(&prepared.memory, &prepared.split).unwrap().s_index;
            let beta = prepared.entropy_curve(rho, &grid).unwrap().beta_star;
            let sampler = SamplerConfig {
                beta,
                ..Default::default()
            };
            let gen = generate(&prepared, &prepared.weights(rho).unwrap(), &sampler).unwrap();
            let metrics = evaluate_generation(&gen, &prepared, rho, sampler.burn_in, &reference, 0, 0).unwrap();
            s_sum += s;
            gap_sum += metrics.gap.delta_total;
            per_seed[i].0.push(s);
            per_seed[i].1.push(metrics.gap.delta_total);
        }
        s_mean.push(s_sum / FAMILY_SEEDS.len() as f64);
        gap_mean.push(gap_sum / FAMILY_SEEDS.len() as f64);
    }
    let rho_s = spearman(&s_mean, &gap_mean);
    let single: Vec<String> = per_seed.iter().map(|(s, g)| format!("{:.2}", spearman(s, g))).collect();
    verdict(
        rho_s <= -0.8,
        format!(
            "S = {s_mean:.3?}, delta = {gap_mean:.3?}, Spearman = {rho_s:.2} (limit -0.8; single families {})",
            single.join(" ")
        ),
    )
}

fn kunitz_path() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("HOPGEN_PF00014") {
        return Some(PathBuf::from(p));
    }
    let local = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/PF00014.sto");
    local.exists().then_some(local)
}

fn criterion_11() -> Outcome {
    let Some(input) = kunitz_path() else {
        return Outcome::Skip("PF00014 alignment not found (set HOPGEN_PF00014 or add data/PF00014.sto)".into());
    };
    let out = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(ExperimentKind::HardCuration, Mode::Full, input);
    cfg.marker_auto = Some('K');
    cfg.marker_res = Some("KR".parse().unwrap());
    cfg.out = out.path().to_path_buf();
    let run = match run_experiment(&cfg) {
        Ok(run) => run,
        Err(e) => return Outcome::Fail(format!("pipeline failed: {e}")),
    };
    let derived = &run.manifest.derived;
    let f_obs = run.conditions[0].row.f_obs;
    let s = derived.separation.unwrap_or(f64::NAN);
    let beta_1 = derived.beta_star_uniform;
    let family = hopgen_core::experiment::load_family(&cfg).unwrap();
    let beta_1000 = family
        .full
        .entropy_curve(1000.0, &cfg.grid().unwrap())
        .unwrap()
        .beta_star;
    let ok = (derived.k, derived.l, derived.d) == (99, 53, 80)
        && (derived.f_nat - 0.32).abs() <= 0.01
        && (f_obs - 0.41).abs() <= 0.05
        && (beta_1 - 4.4).abs() <= 1.0
        && (beta_1000 - 9.3).abs() <= 1.5
        && (s - 0.20).abs() <= 0.03;
    verdict(
        ok,
        format!(
            "K={} L={} d={} f_nat={:.3} f_obs={f_obs:.3} beta*(1)={beta_1:.2} beta*(1000)={beta_1000:.2} S={s:.3}",
            derived.k, derived.l, derived.d, derived.f_nat
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(fn() -> Outcome, Option<u64>); 11] = [
        (criterion_1, Some(1)),
        (criterion_2, Some(1)),
        (criterion_3, None),
        (criterion_4, Some(30)),
        (criterion_5, Some(30)),
        (criterion_6, Some(60)),
        (criterion_7, None),
        (criterion_8, None),
        (criterion_9, None),
        (criterion_10, Some(300)),
        (criterion_11, Some(600)),
    ];
    let mut failed = 0;
    for (i, (check, budget)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = check();
        if let Some(secs) = budget {
            outcome = within_budget(outcome, start.elapsed(), Duration::from_secs(*secs));
        }
        match outcome {
            Outcome::Pass(d) => println!("criterion {}: PASS {d}", i + 1),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {}: FAIL {d}", i + 1);
            }
            Outcome::Skip(d) => println!("criterion {}: SKIP {d}", i + 1),
        }
    }
    println!("acceptance: {} failed of {}", failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
