//! Command orchestration behind the CLI.
//!
//! Every command takes a TOML config, an explicit seed and an output
//! directory. Each run writes its outputs atomically plus a
//! `manifest.toml` holding the tool version, the seed and the fully
//! resolved config (input paths made absolute), from which `replay`
//! reproduces the outputs bit for bit.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::active::{run_al_experiment, svm_queries, AlConfig, SvmConfig};
use crate::dataset::{gen_synthetic, ingest, DataFormat, SyntheticKind};
use crate::error::{Error, Result};
use crate::eval::{brute_force_search, evaluate_scheme, hyperplane_angle, write_eval_csv};
use crate::geometry::{Dataset, HyperplaneQuery};
use crate::index::{HammingIndex, HashFamily, Scheme};
use crate::io::write_atomic;
use crate::learn::{train_lbh, LbhConfig, LearnedHashFamily};
use crate::rand_hash::{collision_prob, estimate_collision, lsh_params, RandomFamily};
use crate::rng::{derive_seed, gaussian_vec, rng_from_seed};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// A dataset file plus the preprocessing applied on load.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSource {
    pub path: PathBuf,
    /// Defaults to the file extension: `.csv` is CSV, anything else binary.
    pub format: Option<DataFormat>,
    /// Scale every row to unit ℓ₂ norm.
    pub normalize: bool,
    /// Append a constant 1 to every row (after normalization).
    pub augment: bool,
}

impl DataSource {
    fn resolve(&mut self) -> Result<()> {
        if self.path.as_os_str().is_empty() {
            return Err(Error::InvalidConfig("data.path is required".into()));
        }
        self.path = absolute(&self.path)?;
        Ok(())
    }

    /// Returns the dataset after normalization and the points after
    /// optional augmentation.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let fmt = self.format.unwrap_or_else(|| DataFormat::from_path(&self.path));
        let mut ds = ingest(&self.path, fmt)?;
        if self.normalize {
            ds.normalize();
        }
        let points = if self.augment { ds.augmented() } else { ds.clone() };
        Ok((ds, points))
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::InvalidConfig(format!("cannot resolve {}: {e}", p.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub kind: SyntheticKind,
    pub n: usize,
    pub d: usize,
    pub classes: usize,
    pub normalize: bool,
    pub format: DataFormat,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            kind: SyntheticKind::GaussianBlobs,
            n: 1000,
            d: 16,
            classes: 4,
            normalize: false,
            format: DataFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub data: DataSource,
    pub output_format: DataFormat,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            output_format: DataFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchCollisionConfig {
    pub families: Vec<RandomFamily>,
    /// Angles between point and hyperplane, in radians within [0, π/2].
    pub alphas: Vec<f64>,
    pub trials: u64,
    pub dim: usize,
}

impl Default for BenchCollisionConfig {
    fn default() -> Self {
        Self {
            families: RandomFamily::ALL.to_vec(),
            alphas: (0..=4).map(|i| i as f64 * PI / 8.0).collect(),
            trials: 100_000,
            dim: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RhoCurveConfig {
    pub families: Vec<RandomFamily>,
    pub epsilon: f64,
    /// Explicit grid; when empty, `steps` evenly spaced points in
    /// `[r_min, r_max]` are used.
    pub r_values: Vec<f64>,
    pub r_min: f64,
    pub r_max: f64,
    pub steps: usize,
    /// Database size and approximation factor for the table layout columns.
    pub n: u64,
    pub c: f64,
}

impl Default for RhoCurveConfig {
    fn default() -> Self {
        Self {
            families: RandomFamily::ALL.to_vec(),
            epsilon: 3.0,
            r_values: Vec::new(),
            r_min: 0.01,
            r_max: 1.0,
            steps: 100,
            n: 10_000,
            c: 2.0,
        }
    }
}

impl RhoCurveConfig {
    pub fn grid(&self) -> Vec<f64> {
        if !self.r_values.is_empty() {
            return self.r_values.clone();
        }
        match self.steps {
            0 => Vec::new(),
            1 => vec![self.r_min],
            s => (0..s)
                .map(|i| self.r_min + (self.r_max - self.r_min) * i as f64 / (s - 1) as f64)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainLbhConfig {
    pub data: DataSource,
    pub lbh: LbhConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildIndexConfig {
    pub data: DataSource,
    pub scheme: Scheme,
    /// Bits per table for EH, BH and LBH; hash functions (two bits each)
    /// for AH.
    pub bits: usize,
    pub tables: usize,
    /// Pre-trained LBH family; only valid with a single table. When absent
    /// LBH families are trained with `lbh`.
    pub lbh_family: Option<PathBuf>,
    pub lbh: LbhConfig,
}

impl Default for BuildIndexConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            scheme: Scheme::Bh,
            bits: 16,
            tables: 1,
            lbh_family: None,
            lbh: LbhConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QueryConfig {
    pub data: DataSource,
    pub index: PathBuf,
    /// CSV of hyperplane normals (header `x0,...`). When absent, queries
    /// come from one-vs-all SVMs on labelled data (needs `augment`), or
    /// are Gaussian normals for unlabelled data.
    pub query_file: Option<PathBuf>,
    pub num_queries: usize,
    pub svm_per_class: usize,
    pub svm: SvmConfig,
    pub radius: u32,
    pub top_n: usize,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            index: PathBuf::new(),
            query_file: None,
            num_queries: 50,
            svm_per_class: 10,
            svm: SvmConfig::default(),
            radius: 3,
            top_n: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunAlConfig {
    /// `augment` is ignored: active learning always augments.
    pub data: DataSource,
    pub al: AlConfig,
    /// Independent repetitions; run `i` uses `derive_seed(seed, i)`.
    pub runs: usize,
    pub target_accuracy: f64,
}

impl Default for RunAlConfig {
    fn default() -> Self {
        Self {
            data: DataSource::default(),
            al: AlConfig::default(),
            runs: 1,
            target_accuracy: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Run {
    Gen(GenConfig),
    Ingest(IngestConfig),
    BenchCollision(BenchCollisionConfig),
    RhoCurve(RhoCurveConfig),
    TrainLbh(TrainLbhConfig),
    BuildIndex(BuildIndexConfig),
    Query(QueryConfig),
    RunAl(RunAlConfig),
}

impl Run {
    pub fn name(&self) -> &'static str {
        match self {
            Run::Gen(_) => "gen",
            Run::Ingest(_) => "ingest",
            Run::BenchCollision(_) => "bench-collision",
            Run::RhoCurve(_) => "rho-curve",
            Run::TrainLbh(_) => "train-lbh",
            Run::BuildIndex(_) => "build-index",
            Run::Query(_) => "query",
            Run::RunAl(_) => "run-al",
        }
    }

    /// Parses the config of command `name` from TOML text; empty text
    /// yields the defaults.
    pub fn parse(name: &str, text: &str) -> Result<Self> {
        Ok(match name {
            "gen" => Run::Gen(toml::from_str(text)?),
            "ingest" => Run::Ingest(toml::from_str(text)?),
            "bench-collision" => Run::BenchCollision(toml::from_str(text)?),
            "rho-curve" => Run::RhoCurve(toml::from_str(text)?),
            "train-lbh" => Run::TrainLbh(toml::from_str(text)?),
            "build-index" => Run::BuildIndex(toml::from_str(text)?),
            "query" => Run::Query(toml::from_str(text)?),
            "run-al" => Run::RunAl(toml::from_str(text)?),
            _ => return Err(Error::InvalidConfig(format!("unknown command `{name}`"))),
        })
    }

    /// Makes input paths absolute so the manifest replays from anywhere.
    fn resolve(&mut self) -> Result<()> {
        match self {
            Run::Gen(_) | Run::BenchCollision(_) | Run::RhoCurve(_) => {}
            Run::Ingest(c) => c.data.resolve()?,
            Run::TrainLbh(c) => c.data.resolve()?,
            Run::BuildIndex(c) => {
                c.data.resolve()?;
                if let Some(p) = &mut c.lbh_family {
                    *p = absolute(p)?;
                }
            }
            Run::Query(c) => {
                c.data.resolve()?;
                if c.index.as_os_str().is_empty() {
                    return Err(Error::InvalidConfig("index is required".into()));
                }
                c.index = absolute(&c.index)?;
                if let Some(p) = &mut c.query_file {
                    *p = absolute(p)?;
                }
            }
            Run::RunAl(c) => c.data.resolve()?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub run: Run,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let m: Manifest = toml::from_str(&fs::read_to_string(path)?)?;
        if m.tool != TOOL {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("manifest written by `{}`", m.tool),
            });
        }
        Ok(m)
    }
}

/// Runs a command and writes its outputs and manifest under `out`.
/// Returns the written files, manifest last.
pub fn execute(run: Run, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let mut run = run;
    run.resolve()?;
    fs::create_dir_all(out)?;
    let outputs: Vec<(String, Vec<u8>)> = match &run {
        Run::Gen(c) => cmd_gen(c, seed)?,
        Run::Ingest(c) => cmd_ingest(c)?,
        Run::BenchCollision(c) => vec![("collision.csv".into(), cmd_bench_collision(c, seed)?)],
        Run::RhoCurve(c) => vec![("rho.csv".into(), cmd_rho_curve(c)?)],
        Run::TrainLbh(c) => cmd_train_lbh(c, seed)?,
        Run::BuildIndex(c) => cmd_build_index(c, seed)?,
        Run::Query(c) => cmd_query(c, seed)?,
        Run::RunAl(c) => cmd_run_al(c, seed)?,
    };
    let mut written = Vec::with_capacity(outputs.len() + 1);
    for (name, bytes) in outputs {
        let p = out.join(name);
        write_atomic(&p, &bytes)?;
        written.push(p);
    }
    let manifest = Manifest {
        tool: TOOL.into(),
        version: VERSION.into(),
        seed,
        run,
    };
    let p = out.join(MANIFEST_FILE);
    write_atomic(&p, toml::to_string(&manifest)?.as_bytes())?;
    written.push(p);
    Ok(written)
}

/// Re-executes the run recorded in a manifest.
pub fn replay(manifest: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let m = Manifest::load(manifest)?;
    execute(m.run, m.seed, out)
}

fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn dataset_bytes(ds: &Dataset, format: DataFormat) -> Result<(String, Vec<u8>)> {
    Ok(match format {
        DataFormat::Binary => ("dataset.bin".into(), crate::dataset::to_binary(ds)),
        DataFormat::Csv => {
            let mut buf = Vec::new();
            crate::dataset::write_csv(ds, &mut buf)?;
            ("dataset.csv".into(), buf)
        }
    })
}

#[derive(Serialize)]
struct SummaryRow {
    n: usize,
    d: usize,
    labelled: bool,
    classes: usize,
}

fn summary(ds: &Dataset) -> Result<Vec<u8>> {
    csv_bytes([SummaryRow {
        n: ds.len(),
        d: ds.dim(),
        labelled: ds.labels().is_some(),
        classes: ds.classes().len(),
    }])
}

pub fn cmd_gen(c: &GenConfig, seed: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let ds = gen_synthetic(c.kind, c.n, c.d, c.classes, seed, c.normalize)?;
    Ok(vec![dataset_bytes(&ds, c.format)?, ("summary.csv".into(), summary(&ds)?)])
}

pub fn cmd_ingest(c: &IngestConfig) -> Result<Vec<(String, Vec<u8>)>> {
    let (_, ds) = c.data.load()?;
    Ok(vec![dataset_bytes(&ds, c.output_format)?, ("summary.csv".into(), summary(&ds)?)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionRow {
    pub family: RandomFamily,
    pub alpha: f64,
    pub r: f64,
    pub analytic_p: f64,
    pub empirical_p: f64,
    pub trials: u64,
    pub abs_error: f64,
}

pub fn collision_rows(c: &BenchCollisionConfig, seed: u64) -> Result<Vec<CollisionRow>> {
    let mut rows = Vec::new();
    for (fi, &family) in c.families.iter().enumerate() {
        for (ai, &alpha) in c.alphas.iter().enumerate() {
            let analytic_p = collision_prob(family, alpha)?;
            let s = derive_seed(seed, (fi * c.alphas.len() + ai) as u64);
            let empirical_p = estimate_collision(family, alpha, c.trials, c.dim, s)?;
            rows.push(CollisionRow {
                family,
                alpha,
                r: alpha * alpha,
                analytic_p,
                empirical_p,
                trials: c.trials,
                abs_error: (analytic_p - empirical_p).abs(),
            });
        }
    }
    Ok(rows)
}

pub fn cmd_bench_collision(c: &BenchCollisionConfig, seed: u64) -> Result<Vec<u8>> {
    csv_bytes(collision_rows(c, seed)?)
}

/// One grid point; parameter columns are empty when `valid` is false.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoRow {
    pub family: RandomFamily,
    pub r: f64,
    pub epsilon: f64,
    pub valid: bool,
    pub p1: Option<f64>,
    pub p2: Option<f64>,
    pub rho: Option<f64>,
    pub k_bits: Option<u32>,
    pub num_tables: Option<u64>,
}

pub fn rho_rows(c: &RhoCurveConfig) -> Vec<RhoRow> {
    let grid = c.grid();
    let mut rows = Vec::with_capacity(grid.len() * c.families.len());
    for &family in &c.families {
        for &r in &grid {
            let p = lsh_params(family, r, c.epsilon, c.n, c.c).ok();
            rows.push(RhoRow {
                family,
                r,
                epsilon: c.epsilon,
                valid: p.is_some(),
                p1: p.as_ref().map(|p| p.p1),
                p2: p.as_ref().map(|p| p.p2),
                rho: p.as_ref().map(|p| p.rho),
                k_bits: p.as_ref().map(|p| p.k_bits),
                num_tables: p.as_ref().map(|p| p.num_tables),
            });
        }
    }
    rows
}

pub fn cmd_rho_curve(c: &RhoCurveConfig) -> Result<Vec<u8>> {
    csv_bytes(rho_rows(c))
}

#[derive(Serialize)]
struct BitRow {
    bit: usize,
    iterations: usize,
    init_surrogate: f64,
    final_surrogate: f64,
    init_quantized: f64,
    quantized: f64,
    nonpositive_gain: bool,
    stop: String,
}

pub fn cmd_train_lbh(c: &TrainLbhConfig, seed: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let (_, points) = c.data.load()?;
    let out = train_lbh(&points, &c.lbh, seed)?;
    let bits = out.family.meta.bits.iter().enumerate().map(|(bit, b)| BitRow {
        bit,
        iterations: b.iterations,
        init_surrogate: b.init_surrogate,
        final_surrogate: b.final_surrogate,
        init_quantized: b.init_quantized,
        quantized: b.quantized,
        nonpositive_gain: b.nonpositive_gain,
        stop: format!("{:?}", b.stop),
    });
    let bits = csv_bytes(bits)?;
    Ok(vec![
        ("lbh.json".into(), out.family.to_json()?.into_bytes()),
        ("lbh_bits.csv".into(), bits),
    ])
}

pub fn build_families(c: &BuildIndexConfig, points: &Dataset, seed: u64) -> Result<Vec<HashFamily>> {
    if c.tables == 0 || c.bits == 0 {
        return Err(Error::InvalidConfig("bits and tables must be at least 1".into()));
    }
    if c.lbh_family.is_some() && (c.scheme != Scheme::Lbh || c.tables != 1) {
        return Err(Error::InvalidConfig("lbh_family needs scheme = \"LBH\" and tables = 1".into()));
    }
    let d = points.dim();
    (0..c.tables)
        .map(|t| {
            let s = derive_seed(seed, t as u64);
            match c.scheme {
                Scheme::Ah => HashFamily::ah(d, c.bits, s),
                Scheme::Eh => HashFamily::eh(d, c.bits, s),
                Scheme::Bh => HashFamily::bh(d, c.bits, s),
                Scheme::Lbh => {
                    let fam = match &c.lbh_family {
                        Some(p) => LearnedHashFamily::load(p)?,
                        None => {
                            let cfg = LbhConfig {
                                k: c.bits,
                                ..c.lbh.clone()
                            };
                            train_lbh(points, &cfg, s)?.family
                        }
                    };
                    HashFamily::lbh(&fam)
                }
            }
        })
        .collect()
}

#[derive(Serialize)]
struct TableRow {
    table: usize,
    bits: usize,
    buckets: usize,
    max_bucket: usize,
    mean_bucket: f64,
}

pub fn cmd_build_index(c: &BuildIndexConfig, seed: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let (_, points) = c.data.load()?;
    let index = HammingIndex::build(&points, build_families(c, &points, seed)?)?;
    let rows = index.tables().iter().enumerate().map(|(table, t)| {
        let sizes: Vec<usize> = t.buckets().map(|b| b.len()).collect();
        TableRow {
            table,
            bits: t.family.num_bits(),
            buckets: sizes.len(),
            max_bucket: sizes.iter().copied().max().unwrap_or(0),
            mean_bucket: points.len() as f64 / sizes.len().max(1) as f64,
        }
    });
    let rows = csv_bytes(rows)?;
    Ok(vec![
        ("index.json".into(), index.to_json()?.into_bytes()),
        ("index_tables.csv".into(), rows),
    ])
}

/// Query normals per the config: from file, from SVMs, or Gaussian.
pub fn make_queries(c: &QueryConfig, base: &Dataset, points: &Dataset, seed: u64) -> Result<Vec<HyperplaneQuery>> {
    if let Some(p) = &c.query_file {
        let qs = ingest(p, DataFormat::Csv)?;
        return qs.points().map(|w| HyperplaneQuery::new(w.to_vec())).collect();
    }
    if base.labels().is_some() {
        if !c.data.augment {
            return Err(Error::InvalidConfig(
                "SVM queries live in augmented space; set data.augment = true or give query_file".into(),
            ));
        }
        return svm_queries(base, c.num_queries, c.svm_per_class, &c.svm, seed);
    }
    let mut rng = rng_from_seed(seed);
    (0..c.num_queries)
        .map(|_| HyperplaneQuery::new(gaussian_vec(&mut rng, points.dim())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRow {
    pub query: usize,
    pub best_id: Option<u32>,
    pub best_margin: Option<f64>,
    pub best_angle: Option<f64>,
    pub oracle_id: u32,
    pub oracle_margin: f64,
    pub candidates: usize,
    pub buckets_probed: usize,
    pub fallback: bool,
}

pub fn cmd_query(c: &QueryConfig, seed: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let (base, points) = c.data.load()?;
    let index = HammingIndex::load(&c.index)?;
    if index.len() != points.len() || index.dim() != points.dim() {
        return Err(Error::InvalidConfig(format!(
            "index covers {} points of dimension {}, dataset has {} of dimension {}",
            index.len(),
            index.dim(),
            points.len(),
            points.dim()
        )));
    }
    let queries = make_queries(c, &base, &points, seed)?;
    let rows: Vec<QueryRow> = queries
        .par_iter()
        .enumerate()
        .map(|(query, w)| {
            let res = index.query_hyperplane(w, c.radius, &points)?;
            let oracle = brute_force_search(w, &points, 1)?;
            Ok(QueryRow {
                query,
                best_id: res.best_id,
                best_margin: res.best_margin,
                best_angle: res.best_id.map(|id| hyperplane_angle(w, points.point(id as usize))),
                oracle_id: oracle[0].id,
                oracle_margin: oracle[0].margin,
                candidates: res.candidate_ids.len(),
                buckets_probed: res.buckets_probed,
                fallback: res.fallback_used,
            })
        })
        .collect::<Result<_>>()?;
    let report = evaluate_scheme(&index, &queries, &points, c.radius, c.top_n)?;
    let mut eval = Vec::new();
    write_eval_csv(&[report], &mut eval)?;
    Ok(vec![("results.csv".into(), csv_bytes(rows)?), ("eval.csv".into(), eval)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub run: usize,
    pub iteration: usize,
    pub class: i64,
    pub labeled: usize,
    pub ap: Option<f64>,
    pub accuracy: Option<f64>,
    pub selected: usize,
    pub margin: f64,
    pub nonempty_flag: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlSummaryRow {
    pub run: usize,
    pub class: i64,
    pub selector: String,
    /// Labels in hand when held-out accuracy first reached the target,
    /// censored at `initial + iterations` when it never did.
    pub labels_to_target: usize,
    pub reached: bool,
    pub mean_ap: Option<f64>,
    /// Mean margin of non-fallback selections.
    pub mean_margin: Option<f64>,
    pub nonempty_rate: f64,
}

pub fn al_tables(c: &RunAlConfig, ds: &Dataset, seed: u64) -> Result<(Vec<HistoryRow>, Vec<AlSummaryRow>)> {
    if c.runs == 0 {
        return Err(Error::InvalidConfig("runs must be at least 1".into()));
    }
    let mut history = Vec::new();
    let mut summary = Vec::new();
    for run in 0..c.runs {
        let out = run_al_experiment(ds, &c.al, derive_seed(seed, run as u64))?;
        let reach = out.labels_to_reach(c.target_accuracy, c.al.iterations);
        for (class, labels, reached) in reach {
            let arm: Vec<_> = out.arm(class).collect();
            let aps: Vec<f64> = arm.iter().filter_map(|r| r.ap).collect();
            let margins: Vec<f64> = arm.iter().filter(|r| !r.fallback).map(|r| r.margin).collect();
            let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
            summary.push(AlSummaryRow {
                run,
                class,
                selector: c.al.selector.kind.to_string(),
                labels_to_target: labels,
                reached,
                mean_ap: mean(&aps),
                mean_margin: mean(&margins),
                nonempty_rate: arm.iter().filter(|r| r.nonempty).count() as f64 / arm.len().max(1) as f64,
            });
        }
        history.extend(out.records.into_iter().map(|r| HistoryRow {
            run,
            iteration: r.iteration,
            class: r.class,
            labeled: r.labeled,
            ap: r.ap,
            accuracy: r.accuracy,
            selected: r.selected,
            margin: r.margin,
            nonempty_flag: r.nonempty,
            fallback: r.fallback,
        }));
    }
    Ok((history, summary))
}

pub fn cmd_run_al(c: &RunAlConfig, seed: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let (ds, _) = c.data.load()?;
    let (history, summary) = al_tables(c, &ds, seed)?;
    Ok(vec![
        ("history.csv".into(), csv_bytes(history)?),
        ("summary.csv".into(), csv_bytes(summary)?),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_toml_roundtrip() {
        for run in [
            Run::Gen(GenConfig::default()),
            Run::BenchCollision(BenchCollisionConfig::default()),
            Run::RhoCurve(RhoCurveConfig::default()),
            Run::RunAl(RunAlConfig::default()),
            Run::Query(QueryConfig {
                query_file: Some("/tmp/q.csv".into()),
                ..Default::default()
            }),
            Run::BuildIndex(BuildIndexConfig::default()),
        ] {
            let m = Manifest {
                tool: TOOL.into(),
                version: VERSION.into(),
                seed: u64::MAX,
                run,
            };
            let text = toml::to_string(&m).unwrap();
            assert_eq!(toml::from_str::<Manifest>(&text).unwrap(), m, "{text}");
        }
    }

    #[test]
    fn config_parsing() {
        let r = Run::parse("gen", "kind = \"unit_sphere\"\nn = 10\n").unwrap();
        match r {
            Run::Gen(c) => {
                assert_eq!(c.kind, SyntheticKind::UnitSphere);
                assert_eq!(c.n, 10);
                assert_eq!(c.d, GenConfig::default().d);
            }
            _ => panic!(),
        }
        assert!(Run::parse("gen", "bogus = 1").is_err());
        assert!(Run::parse("nope", "").is_err());
        assert_eq!(Run::parse("rho-curve", "").unwrap().name(), "rho-curve");
    }

    #[test]
    fn rho_rows_mark_invalid_points() {
        let c = RhoCurveConfig {
            families: vec![RandomFamily::Bh],
            r_values: vec![0.5, 1.0],
            ..Default::default()
        };
        let rows = rho_rows(&c);
        assert!(rows[0].valid);
        assert!((rows[0].rho.unwrap() - 0.390).abs() < 0.005);
        assert!(!rows[1].valid);
        assert!(rows[1].rho.is_none());
    }

    #[test]
    fn grid_endpoints() {
        let c = RhoCurveConfig {
            r_min: 0.1,
            r_max: 0.5,
            steps: 5,
            ..Default::default()
        };
        let g = c.grid();
        assert_eq!(g.len(), 5);
        assert_eq!(g[0], 0.1);
        assert_eq!(g[4], 0.5);
    }

    #[test]
    fn collision_rows_spot_values() {
        let c = BenchCollisionConfig {
            trials: 20_000,
            ..Default::default()
        };
        let rows = collision_rows(&c, 1).unwrap();
        assert_eq!(rows.len(), 15);
        let eh = rows
            .iter()
            .find(|r| r.family == RandomFamily::Eh && (r.alpha - PI / 4.0).abs() < 1e-12)
            .unwrap();
        assert!((eh.analytic_p - 1.0 / 3.0).abs() < 1e-12);
        for r in rows.iter().filter(|r| r.family == RandomFamily::Ah) {
            assert_eq!(r.analytic_p, 0.25 - r.alpha * r.alpha / (PI * PI));
        }
    }

    #[test]
    fn missing_paths_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = execute(Run::TrainLbh(TrainLbhConfig::default()), 0, dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
