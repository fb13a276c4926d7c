//! Acceptance criteria 1-11. Each test prints one PASS/FAIL line to the
//! real stderr so the summary survives output capture.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use pharmatimeline::adr::MonthBucket;
use pharmatimeline::episodes::{build_episodes, EpisodeThreshold};
use pharmatimeline::extraction::{
    collapse_daily, extract_mentions, ClinicalDocument, CueConfig, DailyEvent, MentionKind,
};
use pharmatimeline::lexicon::bundled;
use pharmatimeline::pipeline::{
    compare_with_sider, run_pipeline, run_stages, RunConfig, SiderVerdict, Stage,
};
use pharmatimeline::stats::{
    bonferroni, chi_square, chi_square_pvalue, cohen_kappa, ContingencyTable, Dimension,
    PrevalenceTable,
};
use pharmatimeline::synth::{generate, SynthSpec};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn report(id: u32, title: &str, outcome: Outcome) {
    let line = match &outcome {
        Ok(detail) => format!("acceptance {id:>2} PASS  {title}: {detail}"),
        Err(why) => format!("acceptance {id:>2} FAIL  {title}: {why}"),
    };
    let _ = writeln!(std::io::stderr(), "{line}");
    if let Err(why) = outcome {
        panic!("criterion {id} failed: {why}");
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2010, 1, 1).unwrap() + chrono::Duration::days(n)
}

fn drug_days(days: &[NaiveDate]) -> Vec<DailyEvent> {
    days.iter()
        .map(|&date| DailyEvent {
            patient_id: "P1".into(),
            date,
            kind: MentionKind::Drug,
            canonical: "clozapine".into(),
        })
        .collect()
}

/// Maximal runs by exhaustive search: [i, j] is an episode iff every inner
/// gap is at most `gap` and both outer gaps (if any) exceed it.
fn brute_force_episodes(dates: &[NaiveDate], gap: i64) -> Vec<(NaiveDate, NaiveDate, u32)> {
    let mut d = dates.to_vec();
    d.sort();
    d.dedup();
    let n = d.len();
    let g = |a: usize, b: usize| (d[b] - d[a]).num_days();
    let mut out = Vec::new();
    for i in 0..n {
        for j in i..n {
            let inner = (i..j).all(|k| g(k, k + 1) <= gap);
            let left = i == 0 || g(i - 1, i) > gap;
            let right = j + 1 == n || g(j, j + 1) > gap;
            if inner && left && right {
                out.push((d[i], d[j], (j - i + 1) as u32));
            }
        }
    }
    out
}

#[test]
fn criterion_01_episode_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cases: Vec<(Vec<NaiveDate>, u32)> = (0..1000)
        .map(|_| {
            let n = rng.random_range(1..=50);
            let span = rng.random_range(0..=1095);
            let dates = (0..n).map(|_| day(rng.random_range(0..=span))).collect();
            let gap = if rng.random_bool(0.5) {
                42
            } else {
                rng.random_range(1..=120)
            };
            (dates, gap)
        })
        .collect();
    let start = Instant::now();
    let mut mismatches = 0;
    for (dates, gap) in &cases {
        let got: Vec<_> = build_episodes(&drug_days(dates), &EpisodeThreshold::new(*gap).unwrap())
            .into_iter()
            .map(|e| (e.start, e.stop, e.evidence_count))
            .collect();
        if got != brute_force_episodes(dates, i64::from(*gap)) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    let outcome = ensure(mismatches == 0, || {
        format!("{mismatches} of 1000 sequences differ")
    })
    .and_then(|_| {
        ensure(elapsed < Duration::from_secs(1), || {
            format!("took {elapsed:?}")
        })
    })
    .map(|_| format!("1000/1000 sequences match in {elapsed:.2?}"));
    report(1, "episode segmentation vs brute force", outcome);
}

#[test]
fn criterion_02_gap_boundary() {
    let t = EpisodeThreshold::default();
    let joined = build_episodes(&drug_days(&[day(0), day(42)]), &t);
    let split = build_episodes(&drug_days(&[day(0), day(43)]), &t);
    let outcome = ensure(joined.len() == 1, || {
        format!("42 days gave {} episodes", joined.len())
    })
    .and_then(|_| {
        ensure(split.len() == 2, || {
            format!("43 days gave {} episodes", split.len())
        })
    })
    .map(|_| "42 days joins, 43 days splits".to_string());
    report(2, "gap boundary", outcome);
}

struct Corpus {
    _dir: tempfile::TempDir,
    cfg: RunConfig,
    bundle: pharmatimeline::pipeline::ReportBundle,
    elapsed: Duration,
    qualifying: usize,
}

fn run_corpus(spec: SynthSpec, stage: Stage) -> Corpus {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let corpus = generate(&spec, &bundled::ades()).unwrap();
    corpus.write_to(dir.path()).unwrap();
    let cfg = RunConfig {
        base_dir: dir.path().to_path_buf(),
        seed: spec.seed,
        ..RunConfig::default()
    };
    let bundle = run_stages(&cfg, stage).unwrap();
    Corpus {
        _dir: dir,
        cfg,
        bundle,
        elapsed: start.elapsed(),
        qualifying: corpus.qualifying_count(),
    }
}

fn oxford() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| run_corpus(SynthSpec::oxford_calibration(), Stage::CompareSider))
}

fn planted_2000() -> &'static Corpus {
    static C: OnceLock<Corpus> = OnceLock::new();
    C.get_or_init(|| {
        let mut spec = SynthSpec {
            n_patients: 2000,
            seed: 2000,
            negation_rate: 0.0,
            distractor_rate: 0.2,
            ..SynthSpec::default()
        };
        spec.rates
            .insert("sedation".into(), [0.08, 0.09, 0.10, 0.30, 0.22, 0.18]);
        run_corpus(spec, Stage::Prevalence)
    })
}

#[test]
fn criterion_03_reference_prevalence_fixture() {
    let c = oxford();
    let csv = c.bundle.file("prevalence.csv").unwrap();
    let row = csv
        .lines()
        .find(|l| l.starts_with("agitation,Oxford,trust_total,all,"))
        .unwrap_or("");
    let m1 = row.split(',').nth(7).unwrap_or("");
    let cell = c.bundle.prevalence[0]
        .1
        .cells
        .iter()
        .find(|x| {
            x.ade == "agitation"
                && x.dimension == Dimension::TrustTotal
                && x.bucket == MonthBucket::Plus1
        })
        .cloned();
    let outcome = ensure(
        cell.as_ref().map(|x| (x.numerator, x.denominator)) == Some((176, 514)),
        || format!("cell {cell:?}"),
    )
    .and_then(|_| ensure(m1 == "34.24", || format!("m+1 column is `{m1}` in `{row}`")))
    .map(|_| format!("176/514 -> `{m1}`"));
    report(3, "reference prevalence fixture", outcome);
}

/// ∫₀ˣ chi-square density by Simpson's rule after x = u², which removes
/// the df = 1 singularity. Γ(k/2) values are supplied in closed form.
fn simpson_upper_tail(x: f64, k: u32, gamma_half_k: f64) -> f64 {
    let kf = f64::from(k);
    let f = |u: f64| {
        2.0 * u.powf(kf - 1.0) * (-u * u / 2.0).exp() / (2f64.powf(kf / 2.0) * gamma_half_k)
    };
    let b = x.sqrt();
    let n = 20_000;
    let h = b / n as f64;
    let mut s = f(0.0) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    1.0 - s * h / 3.0
}

fn random_table(rng: &mut ChaCha8Rng) -> Vec<Vec<u64>> {
    let r = rng.random_range(2..=6);
    let c = rng.random_range(2..=4);
    (0..r)
        .map(|_| (0..c).map(|_| rng.random_range(0..=60)).collect())
        .collect()
}

#[test]
fn criterion_04_chi_square() {
    let mut checks = Vec::new();
    let mut outcome: Result<(), String> = Ok(());
    let (stat, df) = chi_square(&ContingencyTable::new(vec![vec![20, 30], vec![30, 20]])).unwrap();
    outcome = outcome.and_then(|_| {
        ensure((stat - 4.0).abs() < 1e-12 && df == 1, || {
            format!("statistic {stat}, df {df}")
        })
    });
    checks.push(format!("[[20,30],[30,20]] -> {stat}"));

    let pi_sqrt = std::f64::consts::PI.sqrt();
    for (x, k, g) in [
        (3.841459, 1, pi_sqrt),
        (7.814728, 3, pi_sqrt / 2.0),
        (14.067140, 7, 15.0 * pi_sqrt / 8.0),
        (2.0, 2, 1.0),
    ] {
        let oracle = simpson_upper_tail(x, k, g);
        let p = chi_square_pvalue(x, k);
        outcome = outcome.and_then(|_| {
            ensure((p - oracle).abs() < 1e-6, || {
                format!("p({x},{k}) = {p}, oracle {oracle}")
            })
        });
    }
    let p = chi_square_pvalue(3.841459, 1);
    outcome = outcome.and_then(|_| ensure((p - 0.05).abs() < 1e-4, || format!("p = {p}")));
    checks.push(format!("p(3.841459, 1) = {p:.6}"));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tested = 0;
    while tested < 200 {
        let cells = random_table(&mut rng);
        let Ok((s0, _)) = chi_square(&ContingencyTable::new(cells.clone())) else {
            continue;
        };
        tested += 1;
        let mut rows: Vec<usize> = (0..cells.len()).collect();
        let mut cols: Vec<usize> = (0..cells[0].len()).collect();
        rows.shuffle(&mut rng);
        cols.shuffle(&mut rng);
        let permuted: Vec<Vec<u64>> = rows
            .iter()
            .map(|&r| cols.iter().map(|&c| cells[r][c]).collect())
            .collect();
        let k = rng.random_range(2..=7u64);
        let scaled: Vec<Vec<u64>> = cells
            .iter()
            .map(|r| r.iter().map(|x| x * k).collect())
            .collect();
        let (sp, _) = chi_square(&ContingencyTable::new(permuted)).unwrap();
        let (sk, _) = chi_square(&ContingencyTable::new(scaled)).unwrap();
        let tol = 1e-9 * s0.max(1.0);
        outcome = outcome.and_then(|_| {
            ensure((sp - s0).abs() < tol, || {
                format!("permutation changed {s0} to {sp}")
            })
        });
        outcome = outcome.and_then(|_| {
            ensure((sk - k as f64 * s0).abs() < tol * k as f64, || {
                format!("scaling by {k}: {s0} -> {sk}")
            })
        });
    }
    checks.push("200 random tables invariant".into());
    report(4, "chi-square", outcome.map(|_| checks.join("; ")));
}

#[test]
fn criterion_05_bonferroni() {
    let mut outcome = Ok(());
    for p in [0.0, 1e-6, 0.01, 0.2, 1.0] {
        for m in [1u32, 33, 1000] {
            let want = (f64::from(m) * p).min(1.0);
            let got = bonferroni(p, m);
            outcome = outcome
                .and_then(|_| ensure(got == want, || format!("bonferroni({p}, {m}) = {got}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10_000 {
        let (p, q) = (rng.random::<f64>(), rng.random::<f64>());
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let m = rng.random_range(1..=1000);
        let n = rng.random_range(m..=1000);
        outcome = outcome.and_then(|_| {
            ensure(
                bonferroni(lo, m) <= bonferroni(hi, m)
                    && bonferroni(lo, m) <= bonferroni(lo, n)
                    && bonferroni(lo, m) >= lo,
                || format!("monotonicity fails at p={lo}, q={hi}, m={m}, n={n}"),
            )
        });
    }
    report(
        5,
        "Bonferroni",
        outcome.map(|_| "15-point grid exact, 10000 monotonicity draws".into()),
    );
}

#[test]
fn criterion_06_kappa() {
    let perfect = cohen_kappa([[50, 0], [0, 50]]).unwrap().kappa;
    let k8 = cohen_kappa([[45, 5], [5, 45]]).unwrap().kappa;
    let mut outcome = ensure((perfect - 1.0).abs() < 1e-12, || {
        format!("perfect -> {perfect}")
    })
    .and_then(|_| {
        ensure((k8 - 0.8).abs() < 1e-12, || {
            format!("[[45,5],[5,45]] -> {k8}")
        })
    });
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut tested = 0;
    while tested < 100 {
        let t = [
            [rng.random_range(0..40), rng.random_range(0..40)],
            [rng.random_range(0..40), rng.random_range(0..40)],
        ];
        let Ok(a) = cohen_kappa(t) else { continue };
        tested += 1;
        let b = cohen_kappa([[t[0][0], t[1][0]], [t[0][1], t[1][1]]]).unwrap();
        outcome = outcome.and_then(|_| {
            ensure((a.kappa - b.kappa).abs() < 1e-12, || {
                format!("{t:?}: {} vs {}", a.kappa, b.kappa)
            })
        });
    }
    report(
        6,
        "Cohen's kappa",
        outcome.map(|_| format!("1.0, {k8:.1}, 100 transposes equal")),
    );
}

#[test]
fn criterion_07_negation_fixture() {
    let doc = ClinicalDocument {
        patient_id: "P1".into(),
        doc_id: "D1".into(),
        date: day(0),
        text: "No evidence of tremor. Denies headache. Discussed risk of seizures. Complains of sedation.".into(),
    };
    let mentions = extract_mentions(
        &doc,
        &bundled::drugs(),
        &bundled::ades(),
        &CueConfig::default(),
    );
    let daily = collapse_daily(&mentions);
    let got: Vec<(&str, MentionKind)> = daily
        .iter()
        .map(|e| (e.canonical.as_str(), e.kind))
        .collect();
    let outcome = ensure(mentions.len() == 4, || {
        format!("{} mentions extracted", mentions.len())
    })
    .and_then(|_| {
        ensure(got == vec![("sedation", MentionKind::Ade)], || {
            format!("daily events {got:?}")
        })
    })
    .map(|_| "4 mentions, 1 positive daily event (sedation)".to_string());
    report(7, "negation and hedge filtering", outcome);
}

fn pooled_pct(tables: &[(String, PrevalenceTable)], ade: &str, bucket: MonthBucket) -> (u64, u64) {
    tables
        .iter()
        .flat_map(|(_, t)| &t.cells)
        .filter(|c| c.ade == ade && c.bucket == bucket && c.dimension == Dimension::TrustTotal)
        .fold((0, 0), |(n, d), c| (n + c.numerator, d + c.denominator))
}

#[test]
fn criterion_08_planted_rate_recovery() {
    let c = planted_2000();
    let (num, den) = pooled_pct(&c.bundle.prevalence, "sedation", MonthBucket::Plus1);
    let pct = 100.0 * num as f64 / den as f64;
    let outcome = ensure((pct - 30.0).abs() <= 3.0, || {
        format!("measured {pct:.2}% ({num}/{den})")
    })
    .and_then(|_| {
        ensure(c.elapsed < Duration::from_secs(30), || {
            format!("took {:?}", c.elapsed)
        })
    })
    .and_then(|_| {
        ensure(den as usize == c.qualifying, || {
            format!("cohort {den} != planted qualifying {}", c.qualifying)
        })
    })
    .map(|_| {
        format!(
            "sedation m+1 {pct:.2}% vs planted 30.00% (n={den}) in {:.2?}",
            c.elapsed
        )
    });
    report(8, "planted-rate recovery", outcome);
}

fn partition_violations(tables: &[(String, PrevalenceTable)]) -> (usize, Vec<String>) {
    let mut checked = 0;
    let mut bad = Vec::new();
    for (trust, t) in tables {
        let mut total = BTreeMap::new();
        let mut sum: BTreeMap<(&str, MonthBucket), u64> = BTreeMap::new();
        for c in &t.cells {
            match (c.dimension, c.level.as_str()) {
                (Dimension::TrustTotal, _) => {
                    total.insert((c.ade.as_str(), c.bucket), c.numerator);
                }
                (Dimension::Gender, "male" | "female") => {
                    *sum.entry((c.ade.as_str(), c.bucket)).or_default() += c.numerator;
                }
                _ => {}
            }
        }
        for (key, n) in &total {
            checked += 1;
            if sum.get(key).copied().unwrap_or(0) != *n {
                bad.push(format!("{trust} {key:?}"));
            }
        }
    }
    (checked, bad)
}

#[test]
fn criterion_09_partition_consistency() {
    let mut outcome = Ok(());
    let mut checked = 0;
    for c in [oxford(), planted_2000()] {
        let (n, bad) = partition_violations(&c.bundle.prevalence);
        checked += n;
        outcome = outcome.and_then(|_| {
            ensure(bad.is_empty(), || {
                format!("male+female != total at {bad:?}")
            })
        });
        outcome = outcome.and_then(|_| {
            ensure(c.bundle.manifest.all_passed(), || {
                "manifest invariant failed".into()
            })
        });
    }
    report(
        9,
        "partition consistency",
        outcome.map(|_| format!("{checked} (trust, ade, bucket) cells")),
    );
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn criterion_10_determinism() {
    let base = &oxford().cfg;
    let out = tempfile::tempdir().unwrap();
    let mut bundles = Vec::new();
    for name in ["a", "b"] {
        let cfg = RunConfig {
            output_dir: out.path().join(name),
            ..base.clone()
        };
        run_pipeline(&cfg).unwrap();
        bundles.push(read_dir_sorted(&out.path().join(name)));
    }
    let digest = |files: &[(String, Vec<u8>)]| {
        files
            .iter()
            .find(|(n, _)| n == "run_manifest.json")
            .map(|(_, b)| pharmatimeline::pipeline::sha256_hex(b))
    };
    let outcome = ensure(bundles[0].len() >= 11, || {
        format!("only {} files", bundles[0].len())
    })
    .and_then(|_| ensure(bundles[0] == bundles[1], || "bundles differ".into()))
    .and_then(|_| {
        ensure(digest(&bundles[0]) == digest(&bundles[1]), || {
            "manifest hashes differ".into()
        })
    })
    .map(|_| {
        format!(
            "{} files byte-identical, manifest sha256 {}",
            bundles[0].len(),
            &digest(&bundles[0]).unwrap()[..12]
        )
    });
    report(10, "determinism", outcome);
}

#[test]
fn criterion_11_sider_comparison() {
    let c = oxford();
    let cells = &c.bundle.prevalence[0].1.cells;
    let rows = compare_with_sider(cells, &bundled::sider());
    let find = |ade: &str| {
        rows.iter()
            .find(|r| r.ade == ade && r.bucket == MonthBucket::Plus1)
            .map(|r| (r.pct.clone(), r.verdict))
    };
    let want = [
        ("sedation", "31.52", SiderVerdict::Within),
        ("agitation", "34.24", SiderVerdict::Above),
        ("fatigue", "35.21", SiderVerdict::NoReference),
    ];
    let mut outcome = Ok(());
    for (ade, pct, verdict) in want {
        let got = find(ade);
        outcome = outcome.and_then(|_| {
            ensure(got == Some((pct.to_string(), verdict)), || {
                format!("{ade}: {got:?}")
            })
        });
    }
    let csv = c.bundle.file("sider_compare.csv").unwrap();
    outcome = outcome.and_then(|_| {
        ensure(
            csv.contains("sedation,Oxford,m+1,31.52,25.00,46.00,within"),
            || "sider_compare.csv row".into(),
        )
    });
    report(
        11,
        "SIDER comparison",
        outcome.map(|_| "sedation within, agitation above, fatigue no_reference".into()),
    );
}
