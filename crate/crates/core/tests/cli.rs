use std::fs;
use std::path::{Path, PathBuf};

use avdb::container::{Model, ModelContainer};
use avdb::report::{parse_csv, CSV_HEADER};

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn avdb(args: &[&str]) -> Run {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("avdb").chain(args.iter().copied());
    let code = avdb::cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, count: usize) -> PathBuf {
    let data = dir.join("data");
    let r = avdb(&[
        "gen",
        "--out",
        s(&data),
        "--count",
        &count.to_string(),
        "--size",
        "64",
        "--seed",
        "7",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    data
}

fn files_under(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in walk(dir) {
        out.push((
            entry.strip_prefix(dir).unwrap().to_path_buf(),
            fs::read(&entry).unwrap(),
        ));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn gen_writes_corpus_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let a = corpus(tmp.path(), 250);
    let files = files_under(&a);
    let images = files
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "pgm"))
        .count();
    assert_eq!(images, 500);
    let manifest = fs::read_to_string(a.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1 + 500);

    let b = tmp.path().join("again");
    let r = avdb(&[
        "gen",
        "--out",
        s(&b),
        "--count",
        "250",
        "--size",
        "64",
        "--seed",
        "7",
    ]);
    assert_eq!(r.code, 0);
    assert_eq!(files, files_under(&b), "second run differs");
}

#[test]
fn gen_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let r = avdb(&["gen", "--out", s(tmp.path()), "--count", "0"]);
    assert_eq!(r.code, 2);

    let blocker = tmp.path().join("file");
    fs::write(&blocker, b"x").unwrap();
    let r = avdb(&["gen", "--out", s(&blocker.join("sub")), "--count", "2"]);
    assert_eq!(r.code, 2, "{}", r.stderr);
}

#[test]
fn knn_train_stores_training_split() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 5);
    let model = tmp.path().join("knn.avdb");
    let r = avdb(&[
        "train",
        "--model",
        "knn",
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stdout.contains("train=8 test=2"), "{}", r.stdout);
    let c = ModelContainer::load(&model).unwrap();
    match c.model {
        Model::Knn(m) => assert_eq!(m.train().len(), 8),
        other => panic!("unexpected model {:?}", other.kind()),
    }
}

#[test]
fn cnn_train_logs_each_epoch() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 5);
    let model = tmp.path().join("cnn.avdb");
    let r = avdb(&[
        "train",
        "--model",
        "cnn",
        "--data",
        s(&data),
        "--config",
        "epochs=2",
        "--config",
        "conv_channels=2,2",
        "--config",
        "fc_hidden=4",
        "--out",
        s(&model),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let epochs: Vec<&str> = r
        .stdout
        .lines()
        .filter(|l| l.starts_with("epoch "))
        .collect();
    assert_eq!(epochs.len(), 2, "{}", r.stdout);
    assert!(epochs[1].starts_with("epoch 2/2 "));
}

#[test]
fn corrupted_image_is_a_dataset_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 5);
    fs::write(data.join("bird/bird_00003.pgm"), b"P5\n64 64\n255\nshort").unwrap();
    let r = avdb(&[
        "train",
        "--model",
        "svm",
        "--data",
        s(&data),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(r.code, 3);
    assert!(r.stderr.contains("bird_00003.pgm"), "{}", r.stderr);

    let r = avdb(&[
        "train",
        "--model",
        "svm",
        "--data",
        s(&tmp.path().join("nowhere")),
        "--out",
        s(&tmp.path().join("m")),
    ]);
    assert_eq!(r.code, 3);
}

#[test]
fn config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 5);
    let out = tmp.path().join("m");
    for bad in ["colour=blue", "k=zero", "train_fraction=1.5", "not-a-file"] {
        let r = avdb(&[
            "train",
            "--model",
            "knn",
            "--data",
            s(&data),
            "--config",
            bad,
            "--out",
            s(&out),
        ]);
        assert_eq!(r.code, 4, "{bad}: {}", r.stderr);
    }
    let file = tmp.path().join("run.conf");
    fs::write(&file, "# tuned\nk = 3\nlearning_rate = 0.1\n").unwrap();
    let r = avdb(&[
        "train",
        "--model",
        "knn",
        "--data",
        s(&data),
        "--config",
        s(&file),
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 4);
    assert!(r.stderr.contains("learning_rate"), "{}", r.stderr);
    // k larger than the training split
    let r = avdb(&[
        "train",
        "--model",
        "knn",
        "--data",
        s(&data),
        "--config",
        "k=9",
        "--out",
        s(&out),
    ]);
    assert_eq!(r.code, 4, "{}", r.stderr);
    assert!(!out.exists());
}

#[test]
fn eval_reports_metrics_and_appends_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 10);
    let model = tmp.path().join("svm.avdb");
    assert_eq!(
        avdb(&[
            "train",
            "--model",
            "svm",
            "--data",
            s(&data),
            "--out",
            s(&model)
        ])
        .code,
        0
    );
    let csv = tmp.path().join("rows.csv");
    for _ in 0..2 {
        let r = avdb(&[
            "eval",
            "--model-file",
            s(&model),
            "--data",
            s(&data),
            "--csv",
            s(&csv),
        ]);
        assert_eq!(r.code, 0, "{}", r.stderr);
        assert!(r.stdout.contains("accuracy="), "{}", r.stdout);
        assert!(r.stdout.contains("misclassified ("), "{}", r.stdout);
    }
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
    assert_eq!(
        text.lines().next().unwrap(),
        "classifier,seed,params,tp,tn,fp,fn,accuracy,sensitivity,precision,wall_time_ms"
    );
    let rows = parse_csv(text.as_bytes()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].classifier, "SVM");
    assert_eq!(rows[0].confusion.total(), 4);
    assert_eq!(rows[0].without_timing(), rows[1].without_timing());
}

#[test]
fn eval_rejects_mismatched_models() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 5);
    let knn = tmp.path().join("knn.avdb");
    assert_eq!(
        avdb(&[
            "train",
            "--model",
            "knn",
            "--data",
            s(&data),
            "--out",
            s(&knn)
        ])
        .code,
        0
    );
    let r = avdb(&[
        "eval",
        "--model-file",
        s(&knn),
        "--data",
        s(&data),
        "--config",
        "image_size=32",
    ]);
    assert_eq!(r.code, 5, "{}", r.stderr);

    let cnn = tmp.path().join("cnn.avdb");
    let r = avdb(&[
        "train",
        "--model",
        "cnn",
        "--data",
        s(&data),
        "--config",
        "epochs=1",
        "--config",
        "conv_channels=2,2",
        "--out",
        s(&cnn),
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let r = avdb(&[
        "eval",
        "--model-file",
        s(&cnn),
        "--data",
        s(&data),
        "--config",
        "image_size=32",
    ]);
    assert_eq!(r.code, 5, "{}", r.stderr);

    let garbage = tmp.path().join("garbage.avdb");
    fs::write(&garbage, b"not a model").unwrap();
    assert_eq!(
        avdb(&["eval", "--model-file", s(&garbage), "--data", s(&data)]).code,
        5
    );

    // the split is part of the model and cannot be overridden
    let r = avdb(&[
        "eval",
        "--model-file",
        s(&knn),
        "--data",
        s(&data),
        "--config",
        "seed=2",
    ]);
    assert_eq!(r.code, 4, "{}", r.stderr);
}

#[test]
fn gradcheck_passes_and_negative_control_fails() {
    let a = avdb(&["gradcheck"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    let line = a.stdout.lines().next().unwrap();
    let err: f64 = line
        .strip_prefix("max relative error ")
        .unwrap()
        .split(' ')
        .next()
        .unwrap()
        .parse()
        .unwrap();
    assert!(err < 1e-4, "{line}");
    assert_eq!(avdb(&["gradcheck"]).stdout, a.stdout);

    let bad = avdb(&["gradcheck", "--perturb", "0.01"]);
    assert_eq!(bad.code, 1);
    assert!(bad.stderr.contains("worst parameter"), "{}", bad.stderr);
}

#[test]
fn bench_emits_nine_rows_per_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = corpus(tmp.path(), 5);
    let csv = tmp.path().join("bench.csv");
    let r = avdb(&[
        "bench",
        "--data",
        s(&data),
        "--seeds",
        "3",
        "--csv",
        s(&csv),
        "--config",
        "image_size=32",
        "--config",
        "conv_channels=2,2,2",
        "--config",
        "fc_hidden=4",
        "--config",
        "epochs=3",
        "--config",
        "k=3",
    ]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let rows = parse_csv(fs::read(&csv).unwrap().as_slice()).unwrap();
    assert_eq!(rows.len(), 3 * (3 + 6));
    for seed in 1..=3 {
        let names: Vec<&str> = rows
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.classifier.as_str())
            .collect();
        assert_eq!(names[..3], ["KNN", "SVM", "CNN"]);
        assert_eq!(names.iter().filter(|&&n| n == "CNN-sweep").count(), 6);
    }
    let ranking: Vec<&str> = r
        .stdout
        .lines()
        .filter(|l| l.starts_with("seed="))
        .collect();
    assert_eq!(ranking.len(), 3);
    assert!(ranking[0].starts_with("seed=1 rank="));
    // the printed table is the same data as the CSV file
    let printed: String = r
        .stdout
        .lines()
        .filter(|l| !l.starts_with("seed="))
        .map(|l| format!("{l}\n"))
        .collect();
    assert_eq!(parse_csv(printed.as_bytes()).unwrap(), rows);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(avdb(&[]).code, 2);
    assert_eq!(avdb(&["frobnicate"]).code, 2);
    assert_eq!(
        avdb(&["train", "--model", "forest", "--data", "x", "--out", "y"]).code,
        2
    );
    assert_eq!(avdb(&["--help"]).code, 0);
}
