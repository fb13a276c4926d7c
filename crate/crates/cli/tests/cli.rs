use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pharmatimeline"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env("PHARMATIMELINE_LOG", "error")
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A small synthetic corpus with its generated config.
fn corpus(dir: &Path) -> PathBuf {
    let spec = dir.join("spec.toml");
    fs::write(&spec, "[synth]\nn_patients = 80\nseed = 11\n").unwrap();
    let out = dir.join("corpus");
    let o = run(&[
        "synth",
        "--config",
        spec.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("pharmatimeline.toml")
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn run_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let (fa, fb) = (files(&a), files(&b));
    let names: Vec<&str> = fa.iter().map(|(n, _)| n.as_str()).collect();
    for want in [
        "prevalence.csv",
        "chisq_per_trust.csv",
        "chisq_combined.csv",
        "sider_compare.csv",
        "run_manifest.json",
    ] {
        assert!(names.contains(&want), "{want} missing from {names:?}");
    }
    assert_eq!(fa, fb);
}

#[test]
fn seed_flag_changes_synthetic_output() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let o = run(&[
            "synth",
            "--preset",
            "default",
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_ne!(
        fs::read(a.join("documents.jsonl")).unwrap(),
        fs::read(b.join("documents.jsonl")).unwrap()
    );
}

#[test]
fn missing_patients_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus(tmp.path());
    let patients = cfg.parent().unwrap().join("patients.csv");
    fs::remove_file(&patients).unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains(patients.to_str().unwrap()),
        "{}",
        stderr(&o)
    );
}

#[test]
fn schema_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus(tmp.path());
    let patients = cfg.parent().unwrap().join("patients.csv");
    let text = fs::read_to_string(&patients)
        .unwrap()
        .replacen("dob,", "birth,", 1);
    fs::write(&patients, text).unwrap();
    let o = run(&["adr", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("dob"), "{}", stderr(&o));
}

#[test]
fn empty_cohort() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus(tmp.path());
    let text = fs::read_to_string(&cfg)
        .unwrap()
        .replace("drug = \"clozapine\"", "drug = \"lithium\"");
    fs::write(&cfg, text).unwrap();
    let o = run(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
    assert!(stderr(&o).contains("lithium"));
}

#[test]
fn invalid_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "max_gap_days = 0\n").unwrap();
    let o = run(&["extract", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(7));
    fs::write(&cfg, "[synth]\nnegation_rate = 1.5\n").unwrap();
    let o = run(&[
        "synth",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("s").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(7));
}

#[test]
fn stage_subcommands_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus(tmp.path());
    let cases: [(&str, &[&str]); 7] = [
        ("extract", &["mentions.csv", "daily_events.csv"]),
        ("episodes", &["episodes.csv"]),
        ("adr", &["cohort.csv", "adr_events.csv"]),
        ("prevalence", &["prevalence.csv"]),
        ("stats", &["chisq_per_trust.csv", "chisq_combined.csv"]),
        ("compare-sider", &["sider_compare.csv"]),
        ("validate-sample", &["validation_sample.csv"]),
    ];
    for (cmd, outputs) in cases {
        let out = tmp.path().join(cmd);
        let o = run(&[
            cmd,
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
        let got: Vec<String> = files(&out).into_iter().map(|(n, _)| n).collect();
        let mut want: Vec<String> = outputs.iter().map(|s| s.to_string()).collect();
        want.sort();
        assert_eq!(got, want, "{cmd}");
    }
    let header = fs::read_to_string(tmp.path().join("adr/adr_events.csv")).unwrap();
    assert!(header.starts_with("patient_id,ade,date,bucket,concurrent_drugs\n"));
    let header = fs::read_to_string(tmp.path().join("stats/chisq_combined.csv")).unwrap();
    assert!(
        header.starts_with("ade,dimension,bucket,statistic,df,p,p_adjusted,significant,warnings\n")
    );
}

#[test]
fn strict_attribution_flag_is_recorded() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = corpus(tmp.path());
    let hash = |extra: &[&str]| {
        let out = tmp.path().join(format!("o{}", extra.len()));
        let mut args = vec![
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        assert!(run(&args).status.success());
        let m: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("run_manifest.json")).unwrap())
                .unwrap();
        m["config_sha256"].as_str().unwrap().to_string()
    };
    assert_ne!(hash(&[]), hash(&["--strict-attribution"]));
}

#[test]
fn scores_a_filled_worksheet() {
    let tmp = tempfile::tempdir().unwrap();
    let sheet = tmp.path().join("sheet.csv");
    let mut text = String::from("case_id,ade_present,drug_episode_correct\n");
    for i in 0..100 {
        let ok = if i < 89 { "y" } else { "n" };
        text.push_str(&format!("{i},{ok},y\n"));
    }
    fs::write(&sheet, text).unwrap();
    let o = run(&["validate-sample", "--score", sheet.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((m["ppv"].as_f64().unwrap() - 0.89).abs() < 1e-12);
    assert!((m["fdr"].as_f64().unwrap() - 0.11).abs() < 1e-12);
}
