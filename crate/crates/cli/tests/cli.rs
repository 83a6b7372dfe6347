use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use fuseid_core::evaluation::{
    run_experiment, synthesize_dataset, ExperimentConfig, SplitPolicy, SynthSpec,
};
use fuseid_core::fusion::fuse;
use fuseid_core::imaging::{preprocess, PreprocessConfig, RawImage};
use fuseid_core::matching::{distance_to_similarity, euclidean_distance};
use fuseid_core::store;
use fuseid_core::subspace::{project, train_with_report, ComponentPolicy};
use fuseid_core::Modality;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

impl Run {
    /// Value of a `key = value` or `key=value` output line.
    fn value(&self, key: &str) -> String {
        self.stdout
            .lines()
            .find_map(|l| {
                let (k, v) = l.split_once('=')?;
                (k.trim() == key).then(|| v.trim().to_string())
            })
            .unwrap_or_else(|| panic!("no '{key}' in output:\n{}", self.stdout))
    }

    fn number(&self, key: &str) -> f64 {
        self.value(key).parse().unwrap()
    }
}

fn fuseid(dir: &Path, args: &[&str]) -> Run {
    let out = Command::new(env!("CARGO_BIN_EXE_fuseid"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().expect("exit code"),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

fn ok(dir: &Path, args: &[&str]) -> Run {
    let run = fuseid(dir, args);
    assert_eq!(
        run.code, 0,
        "{args:?} failed:\n{}\n{}",
        run.stdout, run.stderr
    );
    run
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    fs::read(&path).unwrap(),
                );
            }
        }
    }
    files
}

/// Synthesizes a dataset, trains on the first `train` samples of each
/// subject and enrolls those same samples.
fn enrolled_system(dir: &Path, subjects: usize, train: usize) {
    let subjects = subjects.to_string();
    ok(
        dir,
        &[
            "synth",
            "--out",
            "data",
            "--subjects",
            &subjects,
            "--samples",
            "4",
        ],
    );
    for m in ["face", "palm"] {
        fs::create_dir_all(dir.join(format!("train_{m}"))).unwrap();
        for entry in fs::read_dir(dir.join("data").join(m)).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap().to_str().unwrap().to_string();
            let index: usize = name
                .trim_end_matches(".pgm")
                .rsplit('_')
                .next()
                .unwrap()
                .parse()
                .unwrap();
            if index < train {
                fs::copy(&path, dir.join(format!("train_{m}")).join(name)).unwrap();
            }
        }
    }
    ok(
        dir,
        &[
            "train",
            "--face-dir",
            "train_face",
            "--palm-dir",
            "train_palm",
        ],
    );
    let per = train.to_string();
    ok(
        dir,
        &[
            "enroll",
            "--manifest",
            "data",
            "--per-subject",
            &per,
            "--enrolled-at",
            "0",
        ],
    );
}

#[test]
fn synth_is_deterministic_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(
            tmp.path(),
            &[
                "synth",
                "--out",
                out,
                "--subjects",
                "2",
                "--samples",
                "2",
                "--seed",
                "5",
            ],
        );
    }
    let a = tree(&tmp.path().join("a"));
    assert_eq!(a, tree(&tmp.path().join("b")));
    assert_eq!(
        a.keys()
            .filter(|p| p.extension().is_some_and(|e| e == "pgm"))
            .count(),
        8
    );
    let manifest = String::from_utf8(a[Path::new("manifest.csv")].clone()).unwrap();
    let mut lines = manifest.lines();
    assert_eq!(lines.next(), Some("subject_id,modality,sample_index,path"));
    assert_eq!(lines.count(), 2 * 2 * 2);

    ok(
        tmp.path(),
        &[
            "synth",
            "--out",
            "c",
            "--subjects",
            "2",
            "--samples",
            "2",
            "--seed",
            "6",
        ],
    );
    assert_ne!(a, tree(&tmp.path().join("c")));
}

#[test]
fn train_smoke_and_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--out",
            "data",
            "--subjects",
            "2",
            "--samples",
            "2",
        ],
    );
    let run = ok(
        dir,
        &[
            "train",
            "--face-dir",
            "data/face",
            "--palm-dir",
            "data/palm",
            "--k",
            "2",
        ],
    );
    assert!(
        run.stdout.contains("face: n=1024 N=4 K=2"),
        "{}",
        run.stdout
    );
    assert!(dir.join("models/face.model").is_file() && dir.join("models/palm.model").is_file());
    assert!(dir.join("models/policy.bin").is_file());

    fs::create_dir(dir.join("empty")).unwrap();
    let run = fuseid(
        dir,
        &["train", "--face-dir", "empty", "--palm-dir", "data/palm"],
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("empty"), "{}", run.stderr);

    fs::create_dir(dir.join("broken")).unwrap();
    fs::write(dir.join("broken/x.pgm"), b"P5\n2 2\n255\n").unwrap();
    fs::write(dir.join("broken/y.pgm"), b"not an image").unwrap();
    let run = fuseid(
        dir,
        &["train", "--face-dir", "broken", "--palm-dir", "data/palm"],
    );
    assert_eq!(run.code, 2);
    assert!(
        run.stderr.contains("x.pgm") && run.stderr.contains("y.pgm"),
        "{}",
        run.stderr
    );
}

#[test]
fn train_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(dir, &["synth", "--out", "data"]);
    let run = ok(
        dir,
        &[
            "train",
            "--face-dir",
            "data/face",
            "--palm-dir",
            "data/palm",
        ],
    );

    let dataset = synthesize_dataset(&SynthSpec::default()).unwrap();
    for modality in Modality::ALL {
        // the CLI reads files sorted by name, i.e. subject then sample
        let images: Vec<_> = dataset
            .subjects
            .iter()
            .flat_map(|s| s.samples(modality))
            .map(|img| preprocess(img, modality, &PreprocessConfig::default()).unwrap())
            .collect();
        let (model, report) =
            train_with_report(&images, modality, ComponentPolicy::default()).unwrap();
        let line = format!(
            "{modality}: n={} N={} K={} retained_energy={}",
            report.pixels, report.samples, report.components, report.retained_energy
        );
        assert!(
            run.stdout.contains(&line),
            "missing '{line}' in\n{}",
            run.stdout
        );
        let saved = store::load_model(dir.join(format!("models/{modality}.model"))).unwrap();
        assert_eq!(saved, model);
    }
}

#[test]
fn verify_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    enrolled_system(dir, 4, 2);

    // enrolled image pair against its own identity
    let run = ok(
        dir,
        &[
            "verify",
            "--face",
            "data/face/s001_0.pgm",
            "--palm",
            "data/palm/s001_0.pgm",
            "--claim",
            "s001",
        ],
    );
    assert_eq!(run.value("verdict"), "genuine");
    assert_eq!(run.number("MS_FINAL"), 1.0);

    let run = fuseid(
        dir,
        &[
            "verify",
            "--face",
            "data/face/s001_0.pgm",
            "--palm",
            "data/palm/s001_0.pgm",
            "--claim",
            "nobody",
        ],
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("unknown subject"), "{}", run.stderr);

    // a demanding threshold turns a held-out genuine probe into a rejection
    let run = fuseid(
        dir,
        &[
            "verify",
            "--face",
            "data/face/s001_3.pgm",
            "--palm",
            "data/palm/s001_3.pgm",
            "--claim",
            "s001",
            "--threshold",
            "0.99",
        ],
    );
    assert_eq!(run.code, 1, "{}", run.stdout);
    assert_eq!(run.value("verdict"), "impostor");

    let run = fuseid(
        dir,
        &[
            "verify",
            "--face",
            "data/face/s001_3.pgm",
            "--palm",
            "data/palm/s001_3.pgm",
            "--claim",
            "s001",
            "--models",
            "nowhere",
        ],
    );
    assert_eq!(run.code, 2);
}

#[test]
fn fuse_hand_case() {
    let tmp = tempfile::tempdir().unwrap();
    let args = [
        "fuse",
        "--face-score",
        "0.8",
        "--palm-score",
        "0.6",
        "--alpha",
        "0.4",
        "--beta",
        "1.6",
        "--threshold",
        "0.6",
    ];
    let run = ok(tmp.path(), &args);
    assert!((run.number("MS_FINAL") - 0.64).abs() < 1e-12);
    assert_eq!(run.number("alpha"), 0.4);
    assert_eq!(run.value("verdict"), "genuine");

    let run = fuseid(
        tmp.path(),
        &["fuse", "--face-score", "0.2", "--palm-score", "0.3"],
    );
    assert_eq!(run.code, 1);
    assert_eq!(run.number("MS_FINAL"), 0.25);

    let run = fuseid(
        tmp.path(),
        &["fuse", "--face-score", "1.2", "--palm-score", "0.3"],
    );
    assert_eq!(run.code, 2);
}

#[test]
fn identify_matches_exhaustive_search() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    enrolled_system(dir, 5, 2);

    let face_model = store::load_model(dir.join("models/face.model")).unwrap();
    let palm_model = store::load_model(dir.join("models/palm.model")).unwrap();
    let policy = store::load_policy(dir.join("models/policy.bin")).unwrap();
    let gallery = store::load_gallery(dir.join("models/gallery.bin")).unwrap();

    for subject in 0..5 {
        for sample in [0, 2, 3] {
            let face_path = format!("data/face/s{subject:03}_{sample}.pgm");
            let palm_path = format!("data/palm/s{subject:03}_{sample}.pgm");
            let run = ok(
                dir,
                &[
                    "identify", "--face", &face_path, "--palm", &palm_path, "--top", "5",
                ],
            );
            let rows: Vec<&str> = run
                .stdout
                .lines()
                .filter(|l| !l.starts_with('#'))
                .skip(1)
                .collect();
            assert_eq!(rows.len(), 5);

            // brute force: min distance over every enrolled sample, fused per subject
            let probe = |path: &str, m| {
                let model = if m == Modality::Face {
                    &face_model
                } else {
                    &palm_model
                };
                let img = RawImage::load(dir.join(path)).unwrap();
                project(
                    model,
                    &preprocess(&img, m, &PreprocessConfig::default()).unwrap(),
                )
                .unwrap()
            };
            let (pf, pp) = (
                probe(&face_path, Modality::Face),
                probe(&palm_path, Modality::Palm),
            );
            let best = gallery
                .records
                .iter()
                .map(|r| {
                    let min = |list: &[_], p| {
                        list.iter()
                            .map(|f| euclidean_distance(p, f).unwrap())
                            .fold(f64::INFINITY, f64::min)
                    };
                    let sf =
                        distance_to_similarity(min(&r.face, &pf), &policy.face_normalizer).unwrap();
                    let sp =
                        distance_to_similarity(min(&r.palm, &pp), &policy.palm_normalizer).unwrap();
                    (fuse(sf, sp, &policy.policy).unwrap(), r.subject_id.clone())
                })
                .fold(None::<(f64, String)>, |acc, (s, id)| match acc {
                    Some((bs, bid)) if bs > s || (bs == s && bid < id) => Some((bs, bid)),
                    _ => Some((s, id)),
                })
                .unwrap();
            let top: Vec<&str> = rows[0].split(',').collect();
            assert_eq!(top[1], best.1, "probe {face_path}");
            assert_eq!(top[4].parse::<f64>().unwrap(), best.0);
            if sample == 0 {
                assert_eq!(top[1], format!("s{subject:03}"));
            }
        }
    }
}

#[test]
fn identify_single_subject_and_empty_gallery() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        dir,
        &[
            "synth",
            "--out",
            "data",
            "--subjects",
            "3",
            "--samples",
            "2",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--face-dir",
            "data/face",
            "--palm-dir",
            "data/palm",
        ],
    );
    ok(
        dir,
        &[
            "enroll",
            "--id",
            "solo",
            "--face",
            "data/face/s000_0.pgm",
            "--palm",
            "data/palm/s000_0.pgm",
            "--enrolled-at",
            "7",
        ],
    );
    let run = ok(
        dir,
        &[
            "identify",
            "--face",
            "data/face/s001_0.pgm",
            "--palm",
            "data/palm/s001_0.pgm",
        ],
    );
    let rows: Vec<&str> = run.stdout.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].starts_with("1,solo,"));
    let gallery = store::load_gallery(dir.join("models/gallery.bin")).unwrap();
    assert_eq!(gallery.records[0].enrolled_at, 7);

    store::save_gallery(&store::Gallery::default(), dir.join("models/gallery.bin")).unwrap();
    let run = fuseid(
        dir,
        &[
            "identify",
            "--face",
            "data/face/s001_0.pgm",
            "--palm",
            "data/palm/s001_0.pgm",
        ],
    );
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("empty"), "{}", run.stderr);
}

fn summary_row<'a>(summary: &'a str, name: &str) -> Vec<&'a str> {
    let line = summary.lines().find(|l| l.starts_with(name)).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    fields[fields.len() - 3..].to_vec()
}

#[test]
fn evaluate_matches_library_default_run() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let run = ok(dir, &["evaluate", "--synth", "--out", "reports", "--save"]);
    let lib = run_experiment(
        &synthesize_dataset(&SynthSpec::default()).unwrap(),
        SplitPolicy::Halves,
        &ExperimentConfig::default(),
    )
    .unwrap();
    assert_eq!(run.number("face_eer"), lib.test.face.eer);
    assert_eq!(run.number("palm_eer"), lib.test.palm.eer);
    assert_eq!(run.number("fused_eer"), lib.test.fused.eer);
    assert_eq!(
        fs::read_to_string(dir.join("reports/summary.txt")).unwrap(),
        lib.summary_table()
    );
    for name in ["face_roc.csv", "palm_roc.csv", "fused_roc.csv"] {
        assert!(fs::read_to_string(dir.join("reports").join(name))
            .unwrap()
            .starts_with("threshold,far,frr\n"));
    }
    let policy = store::load_policy(dir.join("models/policy.bin")).unwrap();
    assert_eq!(policy.policy, lib.system.policy);
    assert_eq!(
        store::load_model(dir.join("models/face.model")).unwrap(),
        lib.system.face_model
    );

    // the same dataset read back from disk gives the same report
    ok(dir, &["synth", "--out", "data"]);
    let from_disk = ok(dir, &["evaluate", "--dataset", "data", "--out", "reports2"]);
    assert_eq!(from_disk.number("fused_eer"), lib.test.fused.eer);
}

#[test]
fn evaluate_degenerate_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let small = ["--subjects", "10", "--samples", "4"];

    let mut args = vec!["evaluate", "--synth", "--out", "sep", "--sigma", "0.002"];
    args.extend(small);
    ok(dir, &args);
    let summary = fs::read_to_string(dir.join("sep/summary.txt")).unwrap();
    assert_eq!(summary_row(&summary, "Fused")[2], "100.00%");

    let mut args = vec![
        "evaluate",
        "--synth",
        "--out",
        "face_only",
        "--alpha",
        "1",
        "--beta",
        "0",
    ];
    args.extend(small);
    ok(dir, &args);
    let read = |n: &str| fs::read_to_string(dir.join("face_only").join(n)).unwrap();
    assert_eq!(read("fused_roc.csv"), read("face_roc.csv"));
    let summary = read("summary.txt");
    assert_eq!(
        summary_row(&summary, "Fused"),
        summary_row(&summary, "Face")
    );

    let mut args = vec![
        "evaluate", "--synth", "--out", "bad", "--train", "3", "--tune", "1",
    ];
    args.extend(small);
    let run = fuseid(dir, &args);
    assert_eq!(run.code, 2);
    assert!(run.stderr.contains("split"), "{}", run.stderr);
}

#[test]
fn config_file_precedence_is_echoed() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("run.toml"),
        "alpha = 1.0\nbeta = 3.0\nthreshold = 0.9\nseed = 4\n",
    )
    .unwrap();
    let run = fuseid(
        dir,
        &[
            "fuse",
            "--face-score",
            "0.8",
            "--palm-score",
            "0.8",
            "--config",
            "run.toml",
            "--threshold",
            "0.7",
        ],
    );
    assert_eq!(run.code, 0);
    assert_eq!(run.value("# threshold"), "0.7");
    assert_eq!(run.value("# seed"), "4");
    assert_eq!(run.value("# weights"), "alpha 1, beta 3");
    assert_eq!(run.number("alpha"), 0.5);

    fs::write(dir.join("bad.toml"), "colour = 3\n").unwrap();
    let run = fuseid(
        dir,
        &[
            "fuse",
            "--face-score",
            "0.8",
            "--palm-score",
            "0.8",
            "--config",
            "bad.toml",
        ],
    );
    assert_eq!(run.code, 2);
    let run = fuseid(dir, &["fuse", "--face-score", "0.8"]);
    assert_eq!(run.code, 2, "usage errors exit 2");
}
