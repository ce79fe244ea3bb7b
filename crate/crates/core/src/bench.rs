//! Classifier comparison and the CNN depth/epoch sweep.
//!
//! For every seed the corpus is split once; KNN, SVM and the configured CNN
//! are trained on the same training ids and scored on the same test ids.
//! The sweep trains one network per depth for the longest sweep length and
//! scores a snapshot after each shorter length: with a constant step size
//! and per-epoch shuffles, the state after epoch `e` is exactly the model an
//! `e`-epoch run produces, and its row reports the time spent up to there.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::cnn::{cnn_train_observed, CnnModel, CnnTrainConfig};
use crate::config::RunConfig;
use crate::container::{Model, ModelKind};
use crate::dataset::{featurize, split_train_test, Dataset, FeatureMode, LabeledImage};
use crate::metrics::Metric;
use crate::pipeline::{
    channels_for_depth, check_disjoint, cnn_params, params_string, score, train_model,
    validate_config, PipelineError,
};
use crate::report::ResultRow;

pub const SWEEP_DEPTHS: [usize; 3] = [2, 3, 4];
pub const SWEEP_EPOCHS: [usize; 2] = [60, 80];
/// Classifier column of sweep rows.
pub const SWEEP_NAME: &str = "CNN-sweep";

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    /// KNN, SVM, CNN, then the sweep ordered by depth and epoch count.
    pub rows: Vec<ResultRow>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl SeedReport {
    pub fn row(&self, classifier: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.classifier == classifier)
    }

    pub fn sweep_row(&self, depth: usize, epochs: usize) -> Option<&ResultRow> {
        let prefix = format!("depth={depth};epochs={epochs};");
        self.rows
            .iter()
            .find(|r| r.classifier == SWEEP_NAME && r.params.starts_with(&prefix))
    }

    /// `seed=7 rank=CNN>SVM>KNN`, with `=` between equal accuracies.
    pub fn ranking_line(&self) -> String {
        let mut entries: Vec<(&str, f64)> = ["CNN", "SVM", "KNN"]
            .iter()
            .filter_map(|&name| {
                self.row(name)
                    .map(|r| (name, r.accuracy.value().unwrap_or(f64::NAN)))
            })
            .collect();
        entries.sort_by(|a, b| b.1.total_cmp(&a.1));
        let mut rank = String::new();
        for (i, (name, acc)) in entries.iter().enumerate() {
            if i > 0 {
                rank.push(if *acc == entries[i - 1].1 { '=' } else { '>' });
            }
            rank.push_str(name);
        }
        format!("seed={} rank={rank}", self.seed)
    }
}

pub type Job<'a, T> = Box<dyn FnOnce() -> T + Send + 'a>;

/// Runs `jobs` on up to `threads` worker threads (0 runs them inline) and
/// returns the results in job order.
pub fn run_jobs<'a, T: Send>(jobs: Vec<Job<'a, T>>, threads: usize) -> Vec<T> {
    if threads == 0 {
        return jobs.into_iter().map(|j| j()).collect();
    }
    let n = jobs.len();
    let queue: Vec<Mutex<Option<Job<'a, T>>>> =
        jobs.into_iter().map(|j| Mutex::new(Some(j))).collect();
    let results: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..threads.min(n) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let job = queue[i]
                    .lock()
                    .expect("job lock")
                    .take()
                    .expect("each job runs once");
                *results[i].lock().expect("result lock") = Some(job());
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.into_inner().expect("result lock").expect("every job ran"))
        .collect()
}

struct Split {
    train: Dataset,
    test: Dataset,
}

fn split(ds: &Dataset, cfg: &RunConfig) -> Result<Split, PipelineError> {
    let (train, test) = split_train_test(ds, cfg.split());
    check_disjoint(&train, &test)?;
    Ok(Split { train, test })
}

fn millis(d: Duration) -> u64 {
    d.as_millis() as u64
}

fn classic_row(kind: ModelKind, data: &Split, cfg: &RunConfig) -> Result<ResultRow, PipelineError> {
    let start = Instant::now();
    let model = train_model(kind, &data.train, cfg, |_| {})?;
    let (cm, _) = score(&model, &data.test)?;
    Ok(ResultRow::new(
        kind.display_name(),
        cfg.seed,
        params_string(kind, cfg),
        cm,
        millis(start.elapsed()),
    ))
}

/// One training run with snapshots. `targets` holds `(epochs, classifier)`
/// pairs; each yields a row scored on the model after that many epochs.
fn cnn_rows(
    data: &Split,
    cfg: &RunConfig,
    channels: Vec<usize>,
    targets: &[(usize, &str)],
) -> Result<Vec<ResultRow>, PipelineError> {
    let longest = targets
        .iter()
        .map(|t| t.0)
        .max()
        .expect("at least one target");
    let train_cfg = CnnTrainConfig {
        epochs: longest,
        conv_channels: channels.clone(),
        ..cfg.cnn_config()
    };
    let mut rows: Vec<Option<ResultRow>> = vec![None; targets.len()];
    let mut scoring = Duration::ZERO;
    let mut failure = None;
    let start = Instant::now();
    // Scores `model` for every unfilled target of exactly `epoch` epochs, or
    // of at least `epoch` once training has ended early.
    let mut snapshot =
        |epoch: usize, model: &CnnModel, finished: bool, rows: &mut [Option<ResultRow>]| {
            let trained = start.elapsed() - scoring;
            for (slot, &(epochs, name)) in targets.iter().enumerate() {
                let due = epochs == epoch || (finished && epochs > epoch);
                if !due || rows[slot].is_some() {
                    continue;
                }
                let t = Instant::now();
                match score(&Model::Cnn(model.clone()), &data.test) {
                    Ok((cm, _)) => {
                        let spent = t.elapsed();
                        scoring += spent;
                        rows[slot] = Some(ResultRow::new(
                            name,
                            cfg.seed,
                            cnn_params(&channels, epochs),
                            cm,
                            millis(trained + spent),
                        ));
                    }
                    Err(e) => failure = Some(e),
                }
            }
        };
    let (final_model, log) = cnn_train_observed(&data.train, &train_cfg, |e, m| {
        snapshot(e.epoch, m, false, &mut rows)
    })
    .map_err(|e| PipelineError::Training(e.to_string()))?;
    let last = log.epochs.last().map_or(0, |e| e.epoch);
    snapshot(last, &final_model, true, &mut rows);
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(rows
        .into_iter()
        .map(|r| r.expect("every target scored"))
        .collect())
}

/// Runs the comparison for every seed. `progress` receives one line per
/// finished cell.
pub fn run_bench(
    images: &[LabeledImage],
    base: &RunConfig,
    seeds: &[u64],
    threads: usize,
    progress: &(dyn Fn(&str) + Sync),
) -> Result<Vec<SeedReport>, PipelineError> {
    for kind in ModelKind::ALL {
        validate_config(base, kind)?;
    }
    let features = featurize(images, &base.feature_mode())?;
    let pixels = match base.feature_mode() {
        FeatureMode::RawPixels => features.clone(),
        FeatureMode::Hog(_) => featurize(images, &FeatureMode::RawPixels)?,
    };
    let main_depth = base.cnn.conv_channels.len();

    let mut splits = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = RunConfig {
            seed,
            ..base.clone()
        };
        let f = split(&features, &cfg)?;
        let p = split(&pixels, &cfg)?;
        if f.test.ids().ne(p.test.ids()) || f.train.ids().ne(p.train.ids()) {
            return Err(PipelineError::Leakage(format!(
                "seed {seed}: feature sets were split differently"
            )));
        }
        splits.push((cfg, f, p));
    }

    let mut jobs: Vec<Job<'_, Result<Vec<ResultRow>, PipelineError>>> = Vec::new();
    for (cfg, f, p) in &splits {
        for kind in [ModelKind::Knn, ModelKind::Svm] {
            jobs.push(Box::new(move || {
                let row = classic_row(kind, f, cfg)?;
                progress(&format!(
                    "seed={} {} accuracy={} wall_time_ms={}",
                    cfg.seed, row.classifier, row.accuracy, row.wall_time_ms
                ));
                Ok(vec![row])
            }));
        }
        for depth in SWEEP_DEPTHS {
            jobs.push(Box::new(move || {
                let mut targets: Vec<(usize, &str)> =
                    SWEEP_EPOCHS.iter().map(|&e| (e, SWEEP_NAME)).collect();
                if depth == main_depth {
                    targets.insert(0, (cfg.cnn.epochs, "CNN"));
                }
                let rows = cnn_rows(
                    p,
                    cfg,
                    channels_for_depth(&cfg.cnn.conv_channels, depth),
                    &targets,
                )?;
                for r in &rows {
                    progress(&format!(
                        "seed={} {} {} accuracy={} wall_time_ms={}",
                        cfg.seed, r.classifier, r.params, r.accuracy, r.wall_time_ms
                    ));
                }
                Ok(rows)
            }));
        }
    }
    let mut results = run_jobs(jobs, threads).into_iter();

    let mut reports = Vec::with_capacity(seeds.len());
    for (cfg, f, _) in &splits {
        let mut classic = Vec::new();
        let mut main = Vec::new();
        let mut sweep = Vec::new();
        for _ in 0..2 + SWEEP_DEPTHS.len() {
            for row in results.next().expect("one result per job")? {
                match row.classifier.as_str() {
                    "CNN" => main.push(row),
                    SWEEP_NAME => sweep.push(row),
                    _ => classic.push(row),
                }
            }
        }
        let mut rows = classic;
        rows.append(&mut main);
        rows.append(&mut sweep);
        reports.push(SeedReport {
            seed: cfg.seed,
            rows,
            train_ids: f.train.ids().map(str::to_string).collect(),
            test_ids: f.test.ids().map(str::to_string).collect(),
        });
    }
    Ok(reports)
}

/// Accuracy of a row as a plain number (undefined counts as NaN).
pub fn accuracy(row: &ResultRow) -> f64 {
    match row.accuracy {
        Metric::Defined(v) => v,
        Metric::Undefined => f64::NAN,
    }
}
