//! Margin-based SVM active learning with pluggable sample selectors.
//!
//! Every point is augmented with a constant 1 so the linear model
//! `f(x) = wᵀ[x; 1]` is a hyperplane through the origin. The selection
//! criterion picks the unlabeled point with the smallest
//! `|wᵀ[x; 1]| / ‖w‖`, either exactly, uniformly at random, or through a
//! hashing index built once over the pool and masked as points get
//! labelled.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::geometry::{dot, Dataset, HyperplaneQuery};
use crate::index::{HammingIndex, HashFamily, Scheme};
use crate::learn::{train_lbh, LbhConfig, TrainingMeta};
use crate::rng::{derive_seed, rng_from_seed, sample_indices, SeededRng};

/// `f(x) = wᵀx` over augmented inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub w: Vec<f64>,
}

impl LinearModel {
    pub fn score(&self, x: &[f64]) -> f64 {
        dot(&self.w, x)
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.w.iter().any(|v| *v != 0.0) && self.w.iter().all(|v| v.is_finite()))
    }

    pub fn hyperplane(&self) -> Result<HyperplaneQuery> {
        HyperplaneQuery::new(self.w.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-4,
            epochs: 20,
        }
    }
}

/// `λ/2 ‖w‖² + mean hinge loss`.
pub fn svm_objective(model: &LinearModel, x: &Dataset, y: &[i8], lambda: f64) -> f64 {
    let hinge: f64 = x
        .points()
        .zip(y)
        .map(|(p, &yi)| (1.0 - f64::from(yi) * model.score(p)).max(0.0))
        .sum();
    0.5 * lambda * dot(&model.w, &model.w) + hinge / x.len() as f64
}

/// Pegasos stochastic subgradient descent on the hinge loss with step
/// `1/(λt)` and projection onto the ball of radius `1/√λ`. Each epoch is
/// a seeded shuffle of the data. At every epoch end both the current
/// iterate and the running average of all iterates are scored; the one
/// with the lowest training objective over all epochs is returned, so the
/// result never scores worse than the first epoch.
pub fn train_linear_svm(x: &Dataset, y: &[i8], cfg: &SvmConfig, seed: u64) -> Result<LinearModel> {
    if x.len() != y.len() {
        return Err(invalid_input("one label per training point is required"));
    }
    if y.iter().any(|&v| v != 1 && v != -1) {
        return Err(invalid_input("labels must be +1 or -1"));
    }
    if !(y.contains(&1) && y.contains(&-1)) {
        return Err(invalid_input("training needs both a positive and a negative example"));
    }
    if !(cfg.lambda > 0.0 && cfg.lambda.is_finite()) {
        return Err(Error::InvalidConfig("lambda must be positive".into()));
    }
    let d = x.dim();
    let mut w = vec![0.0; d];
    let mut avg = vec![0.0; d];
    let mut best: Option<(f64, Vec<f64>)> = None;
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut rng = rng_from_seed(seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let p = x.point(i);
            let yi = f64::from(y[i]);
            let violated = yi * dot(&w, p) < 1.0;
            let shrink = 1.0 - eta * cfg.lambda;
            w.iter_mut().for_each(|v| *v *= shrink);
            if violated {
                w.iter_mut().zip(p).for_each(|(v, xi)| *v += eta * yi * xi);
            }
            let nw = dot(&w, &w).sqrt();
            if nw > radius {
                let s = radius / nw;
                w.iter_mut().for_each(|v| *v *= s);
            }
            let a = 1.0 / t as f64;
            avg.iter_mut().zip(&w).for_each(|(m, v)| *m += a * (v - *m));
        }
        for cand in [&w, &avg] {
            let model = LinearModel { w: cand.clone() };
            let obj = svm_objective(&model, x, y, cfg.lambda);
            if best.as_ref().is_none_or(|(b, _)| obj < *b) {
                best = Some((obj, cand.clone()));
            }
        }
    }
    Ok(LinearModel {
        w: best.map_or(w, |b| b.1),
    })
}

/// Mean of precision@rank over the positive positions, ranking by
/// descending score with ties broken by ascending index.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(invalid_input("one label per score is required"));
    }
    let total = positive.iter().filter(|p| **p).count();
    if total == 0 {
        return Err(Error::UndefinedMetric("average precision needs at least one positive".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SelectorKind {
    Exhaustive,
    Random,
    #[serde(rename = "AH")]
    Ah,
    #[serde(rename = "EH")]
    Eh,
    #[serde(rename = "BH")]
    Bh,
    #[serde(rename = "LBH")]
    Lbh,
}

impl SelectorKind {
    pub const ALL: [SelectorKind; 6] = [
        SelectorKind::Exhaustive,
        SelectorKind::Random,
        SelectorKind::Ah,
        SelectorKind::Eh,
        SelectorKind::Bh,
        SelectorKind::Lbh,
    ];

    pub fn scheme(self) -> Option<Scheme> {
        match self {
            SelectorKind::Exhaustive | SelectorKind::Random => None,
            SelectorKind::Ah => Some(Scheme::Ah),
            SelectorKind::Eh => Some(Scheme::Eh),
            SelectorKind::Bh => Some(Scheme::Bh),
            SelectorKind::Lbh => Some(Scheme::Lbh),
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectorKind::Exhaustive => "Exhaustive",
            SelectorKind::Random => "Random",
            SelectorKind::Ah => "AH",
            SelectorKind::Eh => "EH",
            SelectorKind::Bh => "BH",
            SelectorKind::Lbh => "LBH",
        })
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid_input(format!("unknown selector `{s}`")))
    }
}

/// Selector settings. `bits` is the code length per table for EH, BH and
/// LBH; AH uses `bits` hash functions, i.e. twice as many bits. The `k`
/// field of `lbh` is ignored in favour of `bits`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectorConfig {
    pub kind: SelectorKind,
    pub bits: usize,
    pub radius: u32,
    pub tables: usize,
    pub lbh: LbhConfig,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            kind: SelectorKind::Exhaustive,
            bits: 16,
            radius: 3,
            tables: 1,
            lbh: LbhConfig::default(),
        }
    }
}

/// A selector ready to run: random families drawn, LBH trained, index
/// built over the (augmented) points it will be queried against.
#[derive(Debug, Clone)]
pub struct Selector {
    pub kind: SelectorKind,
    pub radius: u32,
    index: Option<HammingIndex>,
    lbh_meta: Option<TrainingMeta>,
}

impl Selector {
    /// `points` are augmented; the hashing families are drawn from `seed`
    /// and LBH is trained on `train_ids ⊆ points`.
    pub fn build(cfg: &SelectorConfig, points: &Dataset, train_ids: &[usize], seed: u64) -> Result<Self> {
        let Some(scheme) = cfg.kind.scheme() else {
            return Ok(Self {
                kind: cfg.kind,
                radius: cfg.radius,
                index: None,
                lbh_meta: None,
            });
        };
        if cfg.tables == 0 || cfg.bits == 0 {
            return Err(Error::InvalidConfig("hashing selectors need bits ≥ 1 and tables ≥ 1".into()));
        }
        let d = points.dim();
        let mut lbh_meta = None;
        let families = (0..cfg.tables)
            .map(|t| {
                let s = derive_seed(seed, t as u64);
                match scheme {
                    Scheme::Ah => HashFamily::ah(d, cfg.bits, s),
                    Scheme::Eh => HashFamily::eh(d, cfg.bits, s),
                    Scheme::Bh => HashFamily::bh(d, cfg.bits, s),
                    Scheme::Lbh => {
                        let lcfg = LbhConfig {
                            k: cfg.bits,
                            ..cfg.lbh.clone()
                        };
                        let out = train_lbh(&points.subset(train_ids), &lcfg, s)?;
                        let fam = HashFamily::lbh(&out.family);
                        if lbh_meta.is_none() {
                            lbh_meta = Some(out.family.meta);
                        }
                        fam
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let index = HammingIndex::build(points, families)?;
        let k = index.bits_per_table() as u32;
        if cfg.radius > k {
            return Err(Error::InvalidConfig(format!("radius {} exceeds {k} bits", cfg.radius)));
        }
        Ok(Self {
            kind: cfg.kind,
            radius: cfg.radius,
            index: Some(index),
            lbh_meta,
        })
    }

    pub fn index(&self) -> Option<&HammingIndex> {
        self.index.as_ref()
    }

    pub fn lbh_meta(&self) -> Option<&TrainingMeta> {
        self.lbh_meta.as_ref()
    }

    /// Picks the next point to label. Hashing selectors fall back to a
    /// uniform draw when the masked lookup is empty.
    pub fn select(
        &self,
        pool: &Pool,
        model: &LinearModel,
        points: &Dataset,
        rng: &mut SeededRng,
    ) -> Result<Selection> {
        if pool.is_empty() {
            return Err(Error::InvalidState("the unlabeled pool is empty".into()));
        }
        let random = |rng: &mut SeededRng, fallback: bool| -> Selection {
            let id = pool.ids[rng.random_range(0..pool.ids.len())];
            let margin = HyperplaneQuery::new(model.w.clone())
                .map(|w| w.margin(points.point(id)))
                .unwrap_or(f64::NAN);
            Selection {
                id,
                margin,
                lookup_nonempty: !fallback,
                fallback_used: fallback,
                candidates: if fallback { 0 } else { pool.len() },
            }
        };
        if self.kind == SelectorKind::Random {
            return Ok(random(rng, false));
        }
        let w = model.hyperplane()?;
        match &self.index {
            None => {
                let (id, margin) = exhaustive_argmin(&w, pool, points);
                Ok(Selection {
                    id,
                    margin,
                    lookup_nonempty: true,
                    fallback_used: false,
                    candidates: pool.len(),
                })
            }
            Some(index) => {
                let res = index.query_hyperplane_filtered(&w, self.radius, points, |id| {
                    pool.contains(id as usize)
                })?;
                match (res.best_id, res.best_margin) {
                    (Some(id), Some(margin)) => Ok(Selection {
                        id: id as usize,
                        margin,
                        lookup_nonempty: true,
                        fallback_used: false,
                        candidates: res.candidate_ids.len(),
                    }),
                    _ => Ok(random(rng, true)),
                }
            }
        }
    }
}

fn exhaustive_argmin(w: &HyperplaneQuery, pool: &Pool, points: &Dataset) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for &id in &pool.ids {
        let m = w.margin(points.point(id));
        if m < best.1 || (m == best.1 && id < best.0) {
            best = (id, m);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub id: usize,
    /// Margin of the selected point; for fallback draws this is the margin
    /// of the random pick and is excluded from margin averages.
    pub margin: f64,
    pub lookup_nonempty: bool,
    pub fallback_used: bool,
    pub candidates: usize,
}

/// The unlabeled ids; membership is tracked separately for O(1) masking.
#[derive(Debug, Clone, PartialEq)]
pub struct Pool {
    ids: Vec<usize>,
    member: Vec<bool>,
}

impl Pool {
    pub fn new(universe: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut member = vec![false; universe];
        let mut v = Vec::new();
        for id in ids {
            if !member[id] {
                member[id] = true;
                v.push(id);
            }
        }
        v.sort_unstable();
        Self { ids: v, member }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: usize) -> bool {
        self.member.get(id).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn remove(&mut self, id: usize) -> Result<()> {
        if !self.contains(id) {
            return Err(Error::InvalidState(format!("id {id} is not in the pool")));
        }
        self.member[id] = false;
        let pos = self.ids.binary_search(&id).expect("member ids are listed");
        self.ids.remove(pos);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlConfig {
    pub selector: SelectorConfig,
    pub iterations: usize,
    /// Labelled seed points drawn per class from the pool.
    pub initial_per_class: usize,
    /// Fraction of points held out for accuracy; 0 disables accuracy.
    pub holdout_fraction: f64,
    pub svm: SvmConfig,
}

impl Default for AlConfig {
    fn default() -> Self {
        Self {
            selector: SelectorConfig::default(),
            iterations: 300,
            initial_per_class: 5,
            holdout_fraction: 0.0,
            svm: SvmConfig::default(),
        }
    }
}

/// One AL iteration of one arm: the model trained on `labeled` points is
/// evaluated, then `selected` is queried and labelled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlRecord {
    pub iteration: usize,
    pub class: i64,
    pub labeled: usize,
    /// `None` when the unlabeled pool holds no positive of this arm.
    pub ap: Option<f64>,
    pub accuracy: Option<f64>,
    pub selected: usize,
    pub margin: f64,
    pub nonempty: bool,
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct AlOutcome {
    pub records: Vec<AlRecord>,
    pub classes: Vec<i64>,
    pub pool_size: usize,
    pub holdout_size: usize,
    pub initial_labeled: usize,
    pub lbh_meta: Option<TrainingMeta>,
}

impl AlOutcome {
    pub fn arm(&self, class: i64) -> impl Iterator<Item = &AlRecord> + '_ {
        self.records.iter().filter(move |r| r.class == class)
    }

    /// Labels needed by each arm before its held-out accuracy first reaches
    /// `target`; arms that never get there are censored at
    /// `initial + iterations`.
    pub fn labels_to_reach(&self, target: f64, iterations: usize) -> Vec<(i64, usize, bool)> {
        self.classes
            .iter()
            .map(|&c| {
                match self.arm(c).find(|r| r.accuracy.is_some_and(|a| a >= target)) {
                    Some(r) => (c, r.labeled, true),
                    None => (c, self.initial_labeled + iterations, false),
                }
            })
            .collect()
    }

    /// Mean margin over non-fallback selections.
    pub fn mean_margin(&self) -> Option<f64> {
        let m: Vec<f64> = self.records.iter().filter(|r| !r.fallback).map(|r| r.margin).collect();
        (!m.is_empty()).then(|| m.iter().sum::<f64>() / m.len() as f64)
    }

    pub fn nonempty_rate(&self) -> f64 {
        self.records.iter().filter(|r| r.nonempty).count() as f64 / self.records.len().max(1) as f64
    }
}

/// Classes given their own one-vs-all arm; two-class data runs a single
/// arm for the larger label.
pub fn arm_classes(classes: &[i64]) -> Vec<i64> {
    if classes.len() == 2 {
        vec![classes[1]]
    } else {
        classes.to_vec()
    }
}

fn binary_labels(ds: &Dataset, ids: &[usize], class: i64) -> Vec<i8> {
    ids.iter()
        .map(|&i| if ds.label(i) == Some(class) { 1 } else { -1 })
        .collect()
}

/// Runs margin-based active learning on a labelled dataset. Points are
/// augmented internally; the selector's hashing index is built once over
/// the pool and LBH is trained once on the initial pool.
pub fn run_al_experiment(ds: &Dataset, cfg: &AlConfig, seed: u64) -> Result<AlOutcome> {
    let labels = ds
        .labels()
        .ok_or_else(|| invalid_input("active learning needs a labelled dataset"))?;
    let classes = ds.classes();
    if classes.len() < 2 {
        return Err(invalid_input("active learning needs at least two classes"));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::InvalidConfig("holdout_fraction must lie in [0, 1)".into()));
    }
    if cfg.initial_per_class == 0 {
        return Err(Error::InvalidConfig("initial_per_class must be at least 1".into()));
    }
    let n = ds.len();
    let aug = ds.augmented();

    let mut split_rng = rng_from_seed(derive_seed(seed, 0));
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut split_rng);
    let n_test = (cfg.holdout_fraction * n as f64).round() as usize;
    let mut test: Vec<usize> = perm[..n_test].to_vec();
    test.sort_unstable();
    let mut pool_ids: Vec<usize> = perm[n_test..].to_vec();
    pool_ids.sort_unstable();

    let mut initial = Vec::new();
    for &c in &classes {
        let members: Vec<usize> = pool_ids.iter().copied().filter(|&i| labels[i] == c).collect();
        if members.len() < cfg.initial_per_class {
            return Err(Error::InvalidConfig(format!(
                "class {c} has only {} pool points for {} initial labels",
                members.len(),
                cfg.initial_per_class
            )));
        }
        initial.extend(
            sample_indices(&mut split_rng, members.len(), cfg.initial_per_class)
                .into_iter()
                .map(|j| members[j]),
        );
    }
    initial.sort_unstable();
    let start_pool = Pool::new(n, pool_ids.iter().copied().filter(|i| initial.binary_search(i).is_err()));
    if start_pool.len() < cfg.iterations {
        return Err(Error::InvalidConfig(format!(
            "{} iterations requested but only {} unlabeled points",
            cfg.iterations,
            start_pool.len()
        )));
    }

    let selector = Selector::build(&cfg.selector, &aug, start_pool.ids(), derive_seed(seed, 1))?;
    let test_aug = aug.subset(&test);
    let arms = arm_classes(&classes);

    let per_arm: Vec<Result<Vec<AlRecord>>> = arms
        .par_iter()
        .enumerate()
        .map(|(a, &class)| {
            let test_y = binary_labels(ds, &test, class);
            let mut pool = start_pool.clone();
            let mut labeled = initial.clone();
            let mut rng = rng_from_seed(derive_seed(seed, 1000 + a as u64));
            let mut records = Vec::with_capacity(cfg.iterations);
            for it in 0..cfg.iterations {
                let y = binary_labels(ds, &labeled, class);
                let model = train_linear_svm(
                    &aug.subset(&labeled),
                    &y,
                    &cfg.svm,
                    derive_seed(seed, (2000 + a * 100_000 + it) as u64),
                )?;
                let scores: Vec<f64> = pool.ids().iter().map(|&i| model.score(aug.point(i))).collect();
                let pos: Vec<bool> = pool.ids().iter().map(|&i| labels[i] == class).collect();
                let ap = match average_precision(&scores, &pos) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                };
                let accuracy = (!test.is_empty()).then(|| {
                    let correct = test_aug
                        .points()
                        .zip(&test_y)
                        .filter(|(p, &t)| (model.score(p) > 0.0) == (t > 0))
                        .count();
                    correct as f64 / test.len() as f64
                });
                let sel = if model.is_degenerate() {
                    let random = Selector {
                        kind: SelectorKind::Random,
                        radius: 0,
                        index: None,
                        lbh_meta: None,
                    };
                    let mut s = random.select(&pool, &model, &aug, &mut rng)?;
                    s.fallback_used = true;
                    s.lookup_nonempty = false;
                    s
                } else {
                    selector.select(&pool, &model, &aug, &mut rng)?
                };
                pool.remove(sel.id)?;
                labeled.push(sel.id);
                records.push(AlRecord {
                    iteration: it,
                    class,
                    labeled: labeled.len() - 1,
                    ap,
                    accuracy,
                    selected: sel.id,
                    margin: sel.margin,
                    nonempty: sel.lookup_nonempty,
                    fallback: sel.fallback_used,
                });
            }
            Ok(records)
        })
        .collect();
    let mut records = Vec::new();
    for r in per_arm {
        records.extend(r?);
    }
    Ok(AlOutcome {
        records,
        classes: arms,
        pool_size: pool_ids.len(),
        holdout_size: test.len(),
        initial_labeled: initial.len(),
        lbh_meta: selector.lbh_meta.clone(),
    })
}

/// Hyperplane queries from one-vs-all SVMs, each trained on a fresh small
/// labelled sample: `per_class` points of every class, query `q` using
/// class `classes[q mod C]` as the positive side. Points are augmented;
/// the returned normals live in `d + 1` dimensions.
pub fn svm_queries(
    ds: &Dataset,
    count: usize,
    per_class: usize,
    svm: &SvmConfig,
    seed: u64,
) -> Result<Vec<HyperplaneQuery>> {
    let labels = ds
        .labels()
        .ok_or_else(|| invalid_input("query generation needs a labelled dataset"))?;
    let classes = ds.classes();
    if classes.len() < 2 {
        return Err(invalid_input("query generation needs at least two classes"));
    }
    let aug = ds.augmented();
    let by_class: Vec<Vec<usize>> = classes
        .iter()
        .map(|&c| (0..ds.len()).filter(|&i| labels[i] == c).collect())
        .collect();
    (0..count)
        .map(|q| {
            let mut rng = rng_from_seed(derive_seed(seed, q as u64));
            let mut ids = Vec::new();
            for members in &by_class {
                let take = per_class.min(members.len());
                ids.extend(sample_indices(&mut rng, members.len(), take).into_iter().map(|j| members[j]));
            }
            let class = classes[q % classes.len()];
            let y = binary_labels(ds, &ids, class);
            let model = train_linear_svm(&aug.subset(&ids), &y, svm, rng.random())?;
            model.hyperplane()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{gen_synthetic, SyntheticKind};
    use crate::eval::brute_force_search;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn blobs_2d() -> (Dataset, Vec<i8>) {
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut rng = rng_from_seed(4);
        for i in 0..200 {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            let g = crate::rng::gaussian_vec(&mut rng, 2);
            rows.push(vec![3.0 * s + 0.5 * g[0], 1.0 + 0.5 * g[1]]);
            y.push(s as i8);
        }
        (Dataset::from_rows(rows, None).unwrap().augmented(), y)
    }

    fn accuracy(m: &LinearModel, x: &Dataset, y: &[i8]) -> f64 {
        x.points()
            .zip(y)
            .filter(|(p, &t)| (m.score(p) > 0.0) == (t > 0))
            .count() as f64
            / y.len() as f64
    }

    #[test]
    fn svm_separates_blobs() {
        let (x, y) = blobs_2d();
        let m = train_linear_svm(&x, &y, &SvmConfig::default(), 1).unwrap();
        assert_eq!(accuracy(&m, &x, &y), 1.0);
    }

    #[test]
    fn svm_zero_epochs_is_zero() {
        let (x, y) = blobs_2d();
        let cfg = SvmConfig { epochs: 0, ..Default::default() };
        let m = train_linear_svm(&x, &y, &cfg, 1).unwrap();
        assert!(m.w.iter().all(|v| *v == 0.0));
        assert!(m.is_degenerate());
        assert!(m.hyperplane().is_err());
    }

    #[test]
    fn svm_rejects_bad_input() {
        let (x, _) = blobs_2d();
        let ones = vec![1i8; x.len()];
        assert!(train_linear_svm(&x, &ones, &SvmConfig::default(), 1).is_err());
        assert!(train_linear_svm(&x, &ones[1..], &SvmConfig::default(), 1).is_err());
    }

    #[test]
    fn svm_deterministic_and_objective_not_worse_than_first_epoch() {
        let ds = gen_synthetic(SyntheticKind::TwoClassSeparable, 300, 6, 2, 5, false).unwrap();
        let x = ds.augmented();
        let y: Vec<i8> = ds.labels().unwrap().iter().map(|&l| if l == 1 { 1 } else { -1 }).collect();
        let cfg = SvmConfig::default();
        let a = train_linear_svm(&x, &y, &cfg, 3).unwrap();
        assert_eq!(a, train_linear_svm(&x, &y, &cfg, 3).unwrap());
        let first = train_linear_svm(&x, &y, &SvmConfig { epochs: 1, ..cfg.clone() }, 3).unwrap();
        assert!(svm_objective(&a, &x, &y, cfg.lambda) <= svm_objective(&first, &x, &y, cfg.lambda));
    }

    #[test]
    fn svm_test_accuracy_stable_across_seeds() {
        let ds = gen_synthetic(SyntheticKind::TwoClassSeparable, 1000, 8, 2, 11, false).unwrap();
        let x = ds.augmented();
        let y: Vec<i8> = ds.labels().unwrap().iter().map(|&l| if l == 1 { 1 } else { -1 }).collect();
        let train: Vec<usize> = (0..500).collect();
        let test: Vec<usize> = (500..1000).collect();
        let accs: Vec<f64> = (0..5)
            .map(|s| {
                let m = train_linear_svm(&x.subset(&train), &y[..500], &SvmConfig::default(), s).unwrap();
                accuracy(&m, &x.subset(&test), &y[500..])
            })
            .collect();
        let mean = accs.iter().sum::<f64>() / 5.0;
        let sd = (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!(sd < 0.05, "{accs:?}");
        assert!(mean > 0.9, "{accs:?}");
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[3.0, 2.0, 1.0], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(average_precision(&[2.0, 1.0], &[false, true]).unwrap(), 0.5);
        assert!(matches!(average_precision(&[1.0], &[false]), Err(Error::UndefinedMetric(_))));
        // Tied scores rank the lower index first.
        assert_eq!(average_precision(&[1.0, 1.0], &[false, true]).unwrap(), 0.5);
        assert_eq!(average_precision(&[1.0, 1.0], &[true, false]).unwrap(), 1.0);
        // Positives at ranks 1 and 3: (1/1 + 2/3) / 2.
        assert_abs_diff_eq!(
            average_precision(&[0.9, 0.5, 0.1], &[true, false, true]).unwrap(),
            (1.0 + 2.0 / 3.0) / 2.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn ap_of_random_scores_is_positive_fraction() {
        let mut rng = rng_from_seed(8);
        let n = 20_000;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let pos: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let frac = pos.iter().filter(|p| **p).count() as f64 / n as f64;
        assert!((average_precision(&scores, &pos).unwrap() - frac).abs() < 0.05);
    }

    #[test]
    fn selector_kind_parses() {
        for k in SelectorKind::ALL {
            assert_eq!(k.to_string().parse::<SelectorKind>().unwrap(), k);
        }
        assert!("nope".parse::<SelectorKind>().is_err());
    }

    fn toy(seed: u64) -> (Dataset, LinearModel) {
        let ds = gen_synthetic(SyntheticKind::GaussianBlobs, 300, 6, 3, seed, false).unwrap();
        let aug = ds.augmented();
        let mut rng = rng_from_seed(seed + 100);
        let w = crate::rng::gaussian_vec(&mut rng, aug.dim());
        (aug, LinearModel { w })
    }

    #[test]
    fn pool_of_one_any_selector() {
        let (aug, model) = toy(1);
        let pool = Pool::new(aug.len(), [42]);
        let all: Vec<usize> = (0..aug.len()).collect();
        for kind in SelectorKind::ALL {
            let cfg = SelectorConfig {
                kind,
                bits: 8,
                radius: 0,
                lbh: LbhConfig { m: 50, ..Default::default() },
                ..Default::default()
            };
            let sel = Selector::build(&cfg, &aug, &all, 2).unwrap();
            let s = sel.select(&pool, &model, &aug, &mut rng_from_seed(0)).unwrap();
            assert_eq!(s.id, 42, "{kind}");
        }
    }

    #[test]
    fn empty_pool_is_invalid_state() {
        let (aug, model) = toy(1);
        let sel = Selector::build(&SelectorConfig::default(), &aug, &[], 0).unwrap();
        let pool = Pool::new(aug.len(), []);
        assert!(matches!(
            sel.select(&pool, &model, &aug, &mut rng_from_seed(0)),
            Err(Error::InvalidState(_))
        ));
    }

    #[test]
    fn exhaustive_matches_brute_force() {
        for seed in 0..5 {
            let (aug, model) = toy(seed);
            let sel = Selector::build(&SelectorConfig::default(), &aug, &[], 0).unwrap();
            let pool = Pool::new(aug.len(), 0..aug.len());
            let s = sel.select(&pool, &model, &aug, &mut rng_from_seed(0)).unwrap();
            let bf = brute_force_search(&model.hyperplane().unwrap(), &aug, 1).unwrap();
            assert_eq!(s.id, bf[0].id as usize);
            assert_eq!(s.margin, bf[0].margin);
        }
    }

    #[test]
    fn full_radius_hashing_matches_exhaustive_on_masked_pool() {
        for seed in 0..4 {
            let (aug, model) = toy(seed);
            let pool = Pool::new(aug.len(), (0..aug.len()).filter(|i| i % 3 != 0));
            let all: Vec<usize> = (0..aug.len()).collect();
            let exact = Selector::build(&SelectorConfig::default(), &aug, &all, 0)
                .unwrap()
                .select(&pool, &model, &aug, &mut rng_from_seed(0))
                .unwrap();
            for kind in [SelectorKind::Ah, SelectorKind::Eh, SelectorKind::Bh, SelectorKind::Lbh] {
                let bits = 6;
                let radius = if kind == SelectorKind::Ah { 2 * bits } else { bits } as u32;
                let cfg = SelectorConfig {
                    kind,
                    bits,
                    radius,
                    tables: 2,
                    lbh: LbhConfig { m: 40, ..Default::default() },
                };
                let s = Selector::build(&cfg, &aug, &all, seed)
                    .unwrap()
                    .select(&pool, &model, &aug, &mut rng_from_seed(0))
                    .unwrap();
                assert_eq!(s.id, exact.id, "{kind}");
                assert!(!s.fallback_used);
            }
        }
    }

    #[test]
    fn exhaustive_selection_is_scale_invariant() {
        let (aug, model) = toy(3);
        let sel = Selector::build(&SelectorConfig::default(), &aug, &[], 0).unwrap();
        let pool = Pool::new(aug.len(), 0..aug.len());
        let a = sel.select(&pool, &model, &aug, &mut rng_from_seed(0)).unwrap();
        for beta in [1e-3, 0.5, 7.0, 1e4] {
            let scaled = LinearModel {
                w: model.w.iter().map(|v| v * beta).collect(),
            };
            let b = sel.select(&pool, &scaled, &aug, &mut rng_from_seed(0)).unwrap();
            assert_eq!(a.id, b.id);
            assert!((a.margin - b.margin).abs() <= 1e-12 * a.margin.max(1e-300));
            let raw_a = model.score(aug.point(a.id)).abs();
            let raw_b = scaled.score(aug.point(b.id)).abs();
            assert!((raw_b - beta * raw_a).abs() <= 1e-9 * raw_b.max(1e-12));
        }
    }

    #[test]
    fn empty_lookup_falls_back_to_random() {
        let (aug, model) = toy(2);
        let all: Vec<usize> = (0..aug.len()).collect();
        let cfg = SelectorConfig {
            kind: SelectorKind::Bh,
            bits: 16,
            radius: 0,
            ..Default::default()
        };
        let sel = Selector::build(&cfg, &aug, &all, 0).unwrap();
        // A pool of a single id whose bucket is not the query's key.
        let index = sel.index().unwrap();
        let key = index.query_keys(&model.hyperplane().unwrap()).unwrap()[0];
        let outside = (0..aug.len())
            .find(|&i| index.point_codes(aug.point(i)).unwrap()[0] != key)
            .unwrap();
        let pool = Pool::new(aug.len(), [outside]);
        let s = sel.select(&pool, &model, &aug, &mut rng_from_seed(0)).unwrap();
        assert!(s.fallback_used && !s.lookup_nonempty);
        assert_eq!(s.id, outside);
    }

    #[test]
    fn pool_bookkeeping() {
        let mut p = Pool::new(10, [3, 1, 7, 3]);
        assert_eq!(p.ids(), &[1, 3, 7]);
        p.remove(3).unwrap();
        assert!(!p.contains(3));
        assert!(p.remove(3).is_err());
        assert_eq!(p.len(), 2);
    }

    fn small_cfg(kind: SelectorKind, iterations: usize) -> AlConfig {
        AlConfig {
            selector: SelectorConfig {
                kind,
                bits: 8,
                radius: 2,
                tables: 1,
                lbh: LbhConfig { m: 60, ..Default::default() },
            },
            iterations,
            initial_per_class: 3,
            holdout_fraction: 0.2,
            svm: SvmConfig { epochs: 5, ..Default::default() },
        }
    }

    #[test]
    fn al_history_and_pool_conservation() {
        let ds = gen_synthetic(SyntheticKind::GaussianBlobs, 400, 5, 3, 2, false).unwrap();
        for kind in SelectorKind::ALL {
            let cfg = small_cfg(kind, 25);
            let out = run_al_experiment(&ds, &cfg, 9).unwrap();
            assert_eq!(out.classes, vec![0, 1, 2]);
            assert_eq!(out.records.len(), 25 * 3);
            assert_eq!(out.pool_size + out.holdout_size, 400);
            for &c in &out.classes {
                let arm: Vec<_> = out.arm(c).collect();
                assert_eq!(arm.len(), 25);
                let mut seen = std::collections::HashSet::new();
                for (i, r) in arm.iter().enumerate() {
                    assert_eq!(r.iteration, i);
                    assert_eq!(r.labeled, out.initial_labeled + i);
                    assert!(seen.insert(r.selected), "re-selected {}", r.selected);
                    assert!(r.accuracy.is_some());
                }
            }
            // Deterministic per seed.
            let again = run_al_experiment(&ds, &cfg, 9).unwrap();
            assert_eq!(out.records, again.records);
        }
    }

    #[test]
    fn two_classes_run_a_single_arm() {
        let ds = gen_synthetic(SyntheticKind::TwoClassSeparable, 300, 4, 2, 1, false).unwrap();
        let out = run_al_experiment(&ds, &small_cfg(SelectorKind::Exhaustive, 10), 1).unwrap();
        assert_eq!(out.classes, vec![1]);
        assert_eq!(out.records.len(), 10);
        let reach = out.labels_to_reach(2.0, 10);
        assert_eq!(reach, vec![(1, out.initial_labeled + 10, false)]);
    }

    #[test]
    fn al_rejects_bad_configs() {
        let ds = gen_synthetic(SyntheticKind::TwoClassSeparable, 50, 4, 2, 1, false).unwrap();
        let unl = Dataset::new(4, ds.values().to_vec(), None).unwrap();
        assert!(run_al_experiment(&unl, &AlConfig::default(), 0).is_err());
        assert!(run_al_experiment(&ds, &small_cfg(SelectorKind::Random, 500), 0).is_err());
        let mut cfg = small_cfg(SelectorKind::Random, 5);
        cfg.holdout_fraction = 1.0;
        assert!(run_al_experiment(&ds, &cfg, 0).is_err());
    }

    #[test]
    fn svm_queries_are_deterministic() {
        let ds = gen_synthetic(SyntheticKind::GaussianBlobs, 300, 5, 4, 3, false).unwrap();
        let a = svm_queries(&ds, 6, 5, &SvmConfig::default(), 1).unwrap();
        assert_eq!(a, svm_queries(&ds, 6, 5, &SvmConfig::default(), 1).unwrap());
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|q| q.dim() == 6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ap_in_unit_interval(
            scores in prop::collection::vec(-10.0f64..10.0, 1..40),
            seed in any::<u64>(),
        ) {
            let mut rng = rng_from_seed(seed);
            let mut pos: Vec<bool> = scores.iter().map(|_| rng.random_bool(0.4)).collect();
            pos[0] = true;
            let ap = average_precision(&scores, &pos).unwrap();
            prop_assert!(ap > 0.0 && ap <= 1.0);
            // Ranking all positives first yields exactly 1.
            let perfect: Vec<f64> = pos.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
            prop_assert_eq!(average_precision(&perfect, &pos).unwrap(), 1.0);
        }
    }
}
