use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use edsh::codes::{self, PackedCodes};
use edsh::data::{self, load_matrix, save_matrix, Dataset, Modality, SynthSpec};
use edsh::eval::{self, NormalizerRule};
use edsh::{DenseMatrix, EdshModel, Hyperparams};
use log::info;
use serde::{Deserialize, Serialize};

use crate::{
    BenchArgs, EncodeArgs, EvalArgs, HyperArgs, ImportCsvArgs, RetrieveArgs, SplitArgs, SynthArgs,
    TopM, TrainArgs,
};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_RUNTIME: u8 = 2;
pub const EXIT_FORMAT: u8 = 3;

pub struct CmdError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl From<edsh::Error> for CmdError {
    fn from(e: edsh::Error) -> Self {
        let code = if e.is_io_or_format() {
            EXIT_FORMAT
        } else {
            EXIT_RUNTIME
        };
        CmdError {
            code,
            error: e.into(),
        }
    }
}

trait Classify<T> {
    fn exit(self, code: u8) -> Result<T, CmdError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn exit(self, code: u8) -> Result<T, CmdError> {
        self.map_err(|e| CmdError {
            code,
            error: e.into(),
        })
    }
}

/// Attaches the offending path to a core error without losing its exit class.
fn at<T>(path: &Path, r: edsh::Result<T>) -> Result<T, CmdError> {
    r.map_err(|e| {
        let mut err = CmdError::from(e);
        err.error = err.error.context(path.display().to_string());
        err
    })
}

type CmdResult = Result<(), CmdError>;

fn usage(msg: impl Into<String>) -> CmdError {
    CmdError {
        code: EXIT_USAGE,
        error: anyhow!(msg.into()),
    }
}

fn require_exists(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(CmdError {
            code: EXIT_FORMAT,
            error: anyhow!("{}: no such file or directory", path.display()),
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CmdResult {
    let mut text = serde_json::to_string_pretty(value).exit(EXIT_RUNTIME)?;
    text.push('\n');
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .exit(EXIT_FORMAT)
}

fn hyperparams(h: &HyperArgs) -> Result<Hyperparams, CmdError> {
    let hyper = Hyperparams {
        lambda1: h.lambda1,
        lambda2: h.lambda2,
        gamma: h.gamma,
        alpha: h.alpha,
        beta1: h.beta1,
        beta2: h.beta2,
        mu: h.mu,
        k: h.bits,
        miter: h.miter,
        seed: h.seed,
        rel_tol: h.rel_tol,
    };
    hyper.validate().map_err(|e| usage(e.to_string()))?;
    Ok(hyper)
}

pub fn synth(a: SynthArgs) -> CmdResult {
    let spec = SynthSpec {
        n: a.n,
        classes: a.classes,
        d1: a.d1,
        d2: a.d2,
        noise_sigma: a.noise,
        seed: a.seed,
    };
    let ds = match data::synth(&spec) {
        Err(edsh::Error::Argument(msg)) => return Err(usage(msg)),
        other => other?,
    };
    at(&a.out, ds.save(&a.out))?;
    info!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

pub fn split(a: SplitArgs) -> CmdResult {
    require_exists(&a.data)?;
    let ds = at(&a.data, Dataset::load(&a.data))?;
    let (train, query) = match data::split(&ds, a.query_fraction, a.seed) {
        Err(edsh::Error::Argument(msg)) => return Err(usage(msg)),
        other => other?,
    };
    at(&a.train_out, train.save(&a.train_out))?;
    at(&a.query_out, query.save(&a.query_out))?;
    Ok(())
}

pub fn import_csv(a: ImportCsvArgs) -> CmdResult {
    require_exists(&a.input)?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(a.header)
        .from_path(&a.input)
        .exit(EXIT_FORMAT)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.exit(EXIT_FORMAT)?;
        let row = record
            .iter()
            .map(|field| field.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .with_context(|| format!("{}: record {}", a.input.display(), line + 1))
            .exit(EXIT_FORMAT)?;
        rows.push(row);
    }
    let m = DenseMatrix::from_rows(&rows).map_err(|e| CmdError {
        code: EXIT_FORMAT,
        error: anyhow!("{}: {e}", a.input.display()),
    })?;
    let m = if a.as_is { m } else { m.transpose() };
    at(&a.out, save_matrix(&a.out, &m))
}

#[derive(Serialize, Deserialize)]
struct TrainReportFile {
    n_train: usize,
    k: usize,
    iterations_run: usize,
    initial_objective: f64,
    objective_trace: Vec<f64>,
    wall_seconds: f64,
    loop_seconds: f64,
    seconds_per_iteration: f64,
}

pub fn train(a: TrainArgs) -> CmdResult {
    let hyper = hyperparams(&a.hyper)?;
    require_exists(&a.data)?;
    let ds = at(&a.data, Dataset::load(&a.data))?;
    let (model, report) = edsh::train(&ds, &hyper)?;
    at(&a.out, model.save(&a.out))?;
    let report_path = a.report.unwrap_or_else(|| a.out.join("train_report.json"));
    write_json(
        &report_path,
        &TrainReportFile {
            n_train: ds.len(),
            k: hyper.k,
            iterations_run: report.iterations_run,
            initial_objective: report.initial_objective,
            seconds_per_iteration: report.seconds_per_iteration(),
            objective_trace: report.objective_trace,
            wall_seconds: report.wall_seconds,
            loop_seconds: report.loop_seconds,
        },
    )?;
    info!(
        "trained {}-bit model in {} iterations ({:.3}s)",
        hyper.k, report.iterations_run, report.wall_seconds
    );
    Ok(())
}

pub fn encode(a: EncodeArgs) -> CmdResult {
    require_exists(&a.model)?;
    require_exists(&a.input)?;
    let model = at(&a.model, EdshModel::load(&a.model))?;
    let x = at(&a.input, load_matrix(&a.input))?;
    let modality = Modality::from_index(a.modality as usize).map_err(|e| usage(e.to_string()))?;
    let codes = codes::encode(&model, &x, modality, !a.no_rotation)?;
    at(&a.out, codes.save(&a.out))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RankingsFile {
    pub k: usize,
    pub db_size: usize,
    pub rankings: Vec<QueryRanking>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueryRanking {
    pub query: usize,
    /// `(database index, Hamming distance)`, best first.
    pub results: Vec<(usize, u32)>,
}

pub fn retrieve(a: RetrieveArgs) -> CmdResult {
    if a.threads == 0 {
        return Err(usage("--threads must be >= 1"));
    }
    require_exists(&a.query)?;
    require_exists(&a.db)?;
    let queries = at(&a.query, PackedCodes::load(&a.query))?;
    let db = at(&a.db, PackedCodes::load(&a.db))?;
    if queries.bits() != db.bits() {
        return Err(CmdError {
            code: EXIT_RUNTIME,
            error: anyhow!(
                "shape error: query codes have {} bits, database codes {}",
                queries.bits(),
                db.bits()
            ),
        });
    }
    let top_m = match a.top_m {
        TopM::All => db.len().max(1),
        TopM::Count(m) => m,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.threads)
        .build()
        .exit(EXIT_RUNTIME)?;
    let hits = pool.install(|| codes::rank_all(&queries, &db, top_m))?;
    let file = RankingsFile {
        k: db.bits(),
        db_size: db.len(),
        rankings: hits
            .into_iter()
            .enumerate()
            .map(|(query, hits)| QueryRanking {
                query,
                results: hits.into_iter().map(|h| (h.index, h.distance)).collect(),
            })
            .collect(),
    };
    write_json(&a.out, &file)
}

pub fn eval(a: EvalArgs) -> CmdResult {
    require_exists(&a.rankings)?;
    require_exists(&a.query_labels)?;
    require_exists(&a.db_labels)?;
    if a.m == 0 {
        return Err(usage("--m must be >= 1"));
    }
    let text = fs::read_to_string(&a.rankings).exit(EXIT_FORMAT)?;
    let file: RankingsFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", a.rankings.display()))
        .exit(EXIT_FORMAT)?;
    let query_labels = at(&a.query_labels, load_matrix(&a.query_labels))?;
    let db_labels = at(&a.db_labels, load_matrix(&a.db_labels))?;
    if query_labels.rows() != db_labels.rows() {
        return Err(CmdError {
            code: EXIT_RUNTIME,
            error: anyhow!(
                "shape error: query labels have {} classes, database labels {}",
                query_labels.rows(),
                db_labels.rows()
            ),
        });
    }
    if file.db_size != db_labels.cols() {
        return Err(CmdError {
            code: EXIT_RUNTIME,
            error: anyhow!(
                "shape error: rankings cover {} database items, database labels have {} columns",
                file.db_size,
                db_labels.cols()
            ),
        });
    }
    let mut rankings = vec![Vec::new(); file.rankings.len()];
    for q in file.rankings {
        let slot = rankings.get_mut(q.query).ok_or_else(|| CmdError {
            code: EXIT_FORMAT,
            error: anyhow!("query index {} out of range", q.query),
        })?;
        *slot = q.results.into_iter().map(|(i, _)| i).collect();
    }
    let rule = match a.normalizer.as_str() {
        "all" => NormalizerRule::AllRelevant,
        _ => NormalizerRule::MinCutoff,
    };
    let report = eval::evaluate(&rankings, &query_labels, &db_labels, a.m, &a.ks, rule)?;
    fs::create_dir_all(&a.out).exit(EXIT_FORMAT)?;
    write_json(&a.out.join("metrics.json"), &report)?;
    fs::write(a.out.join("topk.csv"), report.topk_csv()).exit(EXIT_FORMAT)?;
    fs::write(a.out.join("pr.csv"), report.pr_csv()).exit(EXIT_FORMAT)?;
    println!("mAP@{} = {:.4}", a.m, report.map_at_m);
    Ok(())
}

#[derive(Serialize)]
struct BenchRow {
    n: usize,
    iterations: Vec<usize>,
    wall_seconds: Vec<f64>,
    seconds_per_iteration: Vec<f64>,
    median_seconds_per_iteration: f64,
}

#[derive(Serialize)]
struct BenchReport {
    k: usize,
    d1: usize,
    d2: usize,
    classes: usize,
    rows: Vec<BenchRow>,
    /// Median per-iteration time of each size relative to the smallest.
    per_iteration_ratio: Vec<f64>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

pub fn bench(a: BenchArgs) -> CmdResult {
    let hyper = hyperparams(&a.hyper)?;
    if a.sizes.is_empty() || a.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(usage("--sizes must be nonempty and strictly ascending"));
    }
    if a.repeats == 0 {
        return Err(usage("--repeats must be >= 1"));
    }
    let mut rows = Vec::with_capacity(a.sizes.len());
    for &n in &a.sizes {
        let spec = SynthSpec {
            n,
            classes: a.classes,
            d1: a.d1,
            d2: a.d2,
            noise_sigma: a.noise,
            seed: hyper.seed.wrapping_add(n as u64),
        };
        let ds = match data::synth(&spec) {
            Err(edsh::Error::Argument(msg)) => return Err(usage(msg)),
            other => other?,
        };
        let mut row = BenchRow {
            n,
            iterations: Vec::new(),
            wall_seconds: Vec::new(),
            seconds_per_iteration: Vec::new(),
            median_seconds_per_iteration: 0.0,
        };
        for _ in 0..a.repeats {
            let start = Instant::now();
            let (_, report) = edsh::train(&ds, &hyper)?;
            row.wall_seconds.push(start.elapsed().as_secs_f64());
            row.iterations.push(report.iterations_run);
            row.seconds_per_iteration
                .push(report.seconds_per_iteration());
        }
        row.median_seconds_per_iteration = median(&row.seconds_per_iteration);
        println!(
            "n = {n}: {:.4} s/iteration (median of {})",
            row.median_seconds_per_iteration, a.repeats
        );
        rows.push(row);
    }
    let base = rows[0].median_seconds_per_iteration;
    let report = BenchReport {
        k: hyper.k,
        d1: a.d1,
        d2: a.d2,
        classes: a.classes,
        per_iteration_ratio: rows
            .iter()
            .map(|r| r.median_seconds_per_iteration / base)
            .collect(),
        rows,
    };
    write_json(&a.out, &report)
}
