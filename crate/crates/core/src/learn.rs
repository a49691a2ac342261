//! Learning compact bilinear hash functions from sampled database points.
//!
//! The target code correlations `S` come from thresholded absolute cosines
//! between the samples. Bits are fitted greedily: bit `j` minimizes
//! `-bᵀ R_{j-1} b` over bilinear sign patterns, where the residue
//! `R_{j-1} = kS - Σ_{j'<j} b_{j'} b_{j'}ᵀ`. The sign is relaxed to
//! `φ(x) = 2/(1+e^{-x}) - 1` and the relaxed cost is minimized with an
//! accelerated gradient method warm-started from a Gaussian pair.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::geometry::{dot, norm, Dataset};
use crate::rand_hash::{random_pairs, sgn, ProjectionPair};
use crate::rng::{derive_seed, rng_from_seed, sample_indices};

/// `(t1, t2)` from the absolute-cosine matrix between `samples` and `pool`:
/// per sample row, the mean of the top and bottom `fraction` of values,
/// each averaged over rows.
pub fn select_thresholds(samples: &Dataset, pool: &Dataset, fraction: f64) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(invalid_input("threshold selection needs at least 2 samples"));
    }
    if pool.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if samples.dim() != pool.dim() {
        return Err(invalid_input("samples and pool dimensions differ"));
    }
    if !(fraction > 0.0 && fraction < 0.5) {
        return Err(invalid_input(format!("fraction {fraction} outside (0, 0.5)")));
    }
    let n = pool.len();
    let take = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let pool_norms: Vec<f64> = pool.points().map(norm).collect();

    let rows: Vec<Result<(f64, f64)>> = (0..samples.len())
        .into_par_iter()
        .map(|i| {
            let x = samples.point(i);
            let nx = norm(x);
            if !(nx > 0.0) {
                return Err(invalid_input(format!("sample {i} has zero norm")));
            }
            let mut row: Vec<f64> = pool
                .points()
                .zip(&pool_norms)
                .map(|(p, &np)| {
                    if np > 0.0 {
                        (dot(x, p).abs() / (nx * np)).min(1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            row.sort_unstable_by(f64::total_cmp);
            let bottom = row[..take].iter().sum::<f64>() / take as f64;
            let top = row[n - take..].iter().sum::<f64>() / take as f64;
            Ok((top, bottom))
        })
        .collect();

    let (mut t1, mut t2) = (0.0, 0.0);
    for r in rows {
        let (top, bottom) = r?;
        t1 += top;
        t2 += bottom;
    }
    t1 /= samples.len() as f64;
    t2 /= samples.len() as f64;
    if !(0.0 < t2 && t2 < t1 && t1 < 1.0) {
        return Err(Error::DegenerateThresholds { t1, t2 });
    }
    Ok((t1, t2))
}

/// Target code-correlation matrix over `m` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTarget {
    pub s: Array2<f64>,
    pub t1: f64,
    pub t2: f64,
}

impl SimilarityTarget {
    pub fn build(samples: &Dataset, t1: f64, t2: f64) -> Result<Self> {
        if !(0.0 < t2 && t2 < t1 && t1 < 1.0) {
            return Err(Error::DegenerateThresholds { t1, t2 });
        }
        let m = samples.len();
        let norms: Vec<f64> = samples.points().map(norm).collect();
        if let Some(i) = norms.iter().position(|n| !(*n > 0.0)) {
            return Err(invalid_input(format!("sample {i} has zero norm")));
        }
        let mut s = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            s[[i, i]] = 1.0;
            for j in i + 1..m {
                let c = (dot(samples.point(i), samples.point(j)).abs() / (norms[i] * norms[j]))
                    .min(1.0);
                let v = target_entry(c, t1, t2);
                s[[i, j]] = v;
                s[[j, i]] = v;
            }
        }
        Ok(Self { s, t1, t2 })
    }

    pub fn len(&self) -> usize {
        self.s.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }
}

/// Three-case rule: `1` at or above `t1`, `-1` at or below `t2`, linear in
/// between.
pub fn target_entry(abs_cos: f64, t1: f64, t2: f64) -> f64 {
    if abs_cos >= t1 {
        1.0
    } else if abs_cos <= t2 {
        -1.0
    } else {
        2.0 * abs_cos - 1.0
    }
}

/// `2/(1+e^{-x}) - 1`, evaluated as `tanh(x/2)`.
#[inline]
pub fn sigmoid_phi(x: f64) -> f64 {
    (0.5 * x).tanh()
}

/// A `±1` vector, one entry per training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitVector(pub Vec<i8>);

impl BitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_f64(&self) -> Array1<f64> {
        self.0.iter().map(|&b| b as f64).collect()
    }
}

/// `bᵀ R b`.
pub fn quadratic_form(b: &ArrayView1<f64>, r: &Array2<f64>) -> f64 {
    b.dot(&r.dot(b))
}

/// Relaxed single-bit cost and its gradient over a fixed residue.
pub struct BitObjective<'a> {
    x: &'a Array2<f64>,
    r: &'a Array2<f64>,
    scale: f64,
}

impl<'a> BitObjective<'a> {
    /// `x` holds one sample per row; `r` is the current residue.
    pub fn new(x: &'a Array2<f64>, r: &'a Array2<f64>, scale: f64) -> Result<Self> {
        let m = x.nrows();
        if r.shape() != [m, m] {
            return Err(invalid_input(format!(
                "residue shape {:?} does not match {m} samples",
                r.shape()
            )));
        }
        Ok(Self { x, r, scale })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn projections(&self, u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> (Array1<f64>, Array1<f64>) {
        (self.x.dot(u), self.x.dot(v))
    }

    /// Relaxed bits `φ(s · uᵀxᵢxᵢᵀv)`.
    pub fn relaxed_bits(&self, u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> Array1<f64> {
        let (xu, xv) = self.projections(u, v);
        (&xu * &xv).mapv(|a| sigmoid_phi(self.scale * a))
    }

    /// Sign bits `sgn(uᵀxᵢxᵢᵀv)`.
    pub fn bits(&self, u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> BitVector {
        let (xu, xv) = self.projections(u, v);
        BitVector(xu.iter().zip(xv.iter()).map(|(a, b)| sgn(a * b)).collect())
    }

    /// `-b̃ᵀ R b̃`.
    pub fn cost(&self, u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> f64 {
        let b = self.relaxed_bits(u, v);
        -quadratic_form(&b.view(), self.r)
    }

    /// `-bᵀ R b` on the sign-quantized bits.
    pub fn quantized_cost(&self, u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> f64 {
        let b = self.bits(u, v).as_f64();
        -quadratic_form(&b.view(), self.r)
    }

    /// Cost and the gradient with respect to `[u; v]`:
    /// `-s [X Σ Xᵀ v ; X Σ Xᵀ u]`, `Σ = diag((R b̃) ⊙ (1 - b̃ ⊙ b̃))`.
    pub fn cost_and_gradient(&self, u: &ArrayView1<f64>, v: &ArrayView1<f64>) -> (f64, Array1<f64>) {
        let (xu, xv) = self.projections(u, v);
        let b = (&xu * &xv).mapv(|a| sigmoid_phi(self.scale * a));
        let rb = self.r.dot(&b);
        let cost = -b.dot(&rb);
        let sigma = &rb * &b.mapv(|t| 1.0 - t * t);
        let gu = self.x.t().dot(&(&sigma * &xv)) * (-self.scale);
        let gv = self.x.t().dot(&(&sigma * &xu)) * (-self.scale);
        let d = self.dim();
        let mut g = Array1::zeros(2 * d);
        g.slice_mut(ndarray::s![..d]).assign(&gu);
        g.slice_mut(ndarray::s![d..]).assign(&gv);
        (cost, g)
    }
}

/// Accelerated gradient settings for one bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    pub grad_tol: f64,
    pub rel_tol: f64,
    /// Global factor `s` inside `φ(s · uᵀxxᵀv)`.
    pub scale: f64,
}

impl Default for OptConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            initial_step: 1.0,
            grad_tol: 1e-6,
            rel_tol: 1e-8,
            scale: 1.0,
        }
    }
}

impl OptConfig {
    fn validate(&self) -> Result<()> {
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return Err(Error::InvalidConfig("initial_step must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidConfig("scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    RelativeChange,
    StepUnderflow,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub pair: ProjectionPair,
    pub bits: BitVector,
    /// Relaxed cost of every accepted iterate, starting with the warm start.
    pub surrogate_trace: Vec<f64>,
    pub iterations: usize,
    pub quantized_cost: f64,
    pub init_quantized_cost: f64,
    pub stop: StopReason,
}

impl FitOutcome {
    pub fn init_surrogate(&self) -> f64 {
        self.surrogate_trace[0]
    }

    pub fn final_surrogate(&self) -> f64 {
        *self.surrogate_trace.last().unwrap()
    }
}

const MIN_STEP: f64 = 1e-30;

/// Fits one bilinear bit against residue `r`.
///
/// Steps use Nesterov momentum with a backtracked step size that is only
/// ever halved. A step that raises the cost above the current iterate is
/// discarded and momentum restarts, so the accepted costs never increase.
/// Among the accepted iterates, the one with the lowest quantized cost is
/// returned; ties keep the earlier iterate.
pub fn fit_bit(
    r: &Array2<f64>,
    samples: &Array2<f64>,
    init: &ProjectionPair,
    opt: &OptConfig,
) -> Result<FitOutcome> {
    opt.validate()?;
    let d = samples.ncols();
    if init.dim() != d {
        return Err(invalid_input(format!(
            "warm start has dimension {}, samples have {d}",
            init.dim()
        )));
    }
    let obj = BitObjective::new(samples, r, opt.scale)?;
    let split = |t: &Array1<f64>| (t.slice(ndarray::s![..d]).to_owned(), t.slice(ndarray::s![d..]).to_owned());
    let cost_of = |t: &Array1<f64>| {
        let (u, v) = split(t);
        obj.cost(&u.view(), &v.view())
    };
    let quant_of = |t: &Array1<f64>| {
        let (u, v) = split(t);
        obj.quantized_cost(&u.view(), &v.view())
    };

    let mut x: Array1<f64> = init.u.iter().chain(&init.v).copied().collect();
    let mut x_prev = x.clone();
    let mut fx = cost_of(&x);
    if !fx.is_finite() {
        return Err(Error::Diverged { iteration: 0, cost: fx });
    }
    let mut trace = vec![fx];
    let init_quantized = quant_of(&x);
    let mut best = (init_quantized, x.clone());

    let mut t = 1.0f64;
    let mut step = opt.initial_step;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < opt.max_iters {
        iterations += 1;
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = (t - 1.0) / t_next;
        let y = &x + &((&x - &x_prev) * beta);
        let (yu, yv) = split(&y);
        let (fy, gy) = obj.cost_and_gradient(&yu.view(), &yv.view());
        if !fy.is_finite() {
            return Err(Error::Diverged { iteration: iterations, cost: fy });
        }
        let gnorm2 = gy.dot(&gy);
        if gnorm2.sqrt() < opt.grad_tol {
            if fy <= fx && beta > 0.0 {
                x = y;
                trace.push(fy);
                let q = quant_of(&x);
                if q < best.0 {
                    best = (q, x.clone());
                }
            }
            stop = StopReason::GradientTolerance;
            break;
        }

        let mut z;
        let mut fz;
        loop {
            z = &y - &(&gy * step);
            fz = cost_of(&z);
            if fz.is_finite() && fz <= fy - 0.5 * step * gnorm2 {
                break;
            }
            step *= 0.5;
            if step < MIN_STEP {
                break;
            }
        }
        if step < MIN_STEP {
            if beta > 0.0 {
                // retry from the plain iterate with a fresh step budget
                t = 1.0;
                x_prev = x.clone();
                step = opt.initial_step;
                continue;
            }
            stop = StopReason::StepUnderflow;
            break;
        }

        if fz > fx {
            t = 1.0;
            x_prev = x.clone();
            continue;
        }

        let rel = (fx - fz).abs() / fx.abs().max(1e-12);
        x_prev = std::mem::replace(&mut x, z);
        fx = fz;
        t = t_next;
        trace.push(fx);
        let q = quant_of(&x);
        if q < best.0 {
            best = (q, x.clone());
        }
        if rel < opt.rel_tol {
            stop = StopReason::RelativeChange;
            break;
        }
    }

    let (best_cost, theta) = best;
    let (u, v) = split(&theta);
    let pair = ProjectionPair {
        u: u.to_vec(),
        v: v.to_vec(),
    };
    let bits = obj.bits(&u.view(), &v.view());
    Ok(FitOutcome {
        pair,
        bits,
        surrogate_trace: trace,
        iterations,
        quantized_cost: best_cost,
        init_quantized_cost: init_quantized,
        stop,
    })
}

/// Per-bit training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitMeta {
    pub iterations: usize,
    pub init_surrogate: f64,
    pub final_surrogate: f64,
    pub init_quantized: f64,
    pub quantized: f64,
    /// `bᵀ R b <= 0`: the bit did not reduce the residue.
    pub nonpositive_gain: bool,
    pub stop: StopReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub m: usize,
    pub t1: f64,
    pub t2: f64,
    pub scale: f64,
    /// Objective `‖BBᵀ/k - S‖²_F` of the warm-start codes.
    pub q_before: f64,
    pub q_after: f64,
    pub bits: Vec<BitMeta>,
}

/// `k` learned projection pairs; bit `j` of `z` is `sgn(u_jᵀ z zᵀ v_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnedHashFamily {
    pub dim: usize,
    pub pairs: Vec<ProjectionPair>,
    pub meta: TrainingMeta,
}

const FAMILY_FORMAT: &str = "hyperhash-lbh-family";
const FAMILY_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct FamilyFile {
    format: String,
    version: u32,
    #[serde(flatten)]
    family: LearnedHashFamily,
}

impl LearnedHashFamily {
    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&FamilyFile {
            format: FAMILY_FORMAT.into(),
            version: FAMILY_VERSION,
            family: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FamilyFile = serde_json::from_str(s)?;
        if f.format != FAMILY_FORMAT || f.version != FAMILY_VERSION {
            return Err(invalid_input(format!(
                "unsupported family file {} v{}",
                f.format, f.version
            )));
        }
        let fam = f.family;
        if fam.pairs.is_empty() || fam.pairs.iter().any(|p| p.u.len() != fam.dim || p.v.len() != fam.dim) {
            return Err(invalid_input("family pairs do not match its dimension"));
        }
        Ok(fam)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Samples as an `m × d` matrix.
pub fn sample_matrix(samples: &Dataset) -> Array2<f64> {
    Array2::from_shape_vec((samples.len(), samples.dim()), samples.values().to_vec())
        .expect("dataset values are row-major")
}

/// Sign codes of `pairs` on every sample, one `BitVector` per pair.
pub fn codes_for(samples: &Array2<f64>, pairs: &[ProjectionPair]) -> Vec<BitVector> {
    pairs
        .iter()
        .map(|p| {
            let u = ArrayView1::from(&p.u[..]);
            let v = ArrayView1::from(&p.v[..]);
            let xu = samples.dot(&u);
            let xv = samples.dot(&v);
            BitVector(xu.iter().zip(xv.iter()).map(|(a, b)| sgn(a * b)).collect())
        })
        .collect()
}

/// `‖BBᵀ/k - S‖²_F` for bit vectors `codes` (the columns of `B`).
pub fn objective_q(codes: &[BitVector], s: &Array2<f64>) -> f64 {
    let k = codes.len() as f64;
    let m = s.nrows();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            let inner: f64 = codes.iter().map(|b| (b.0[i] * b.0[j]) as f64).sum();
            let diff = inner / k - s[[i, j]];
            total += diff * diff;
        }
    }
    total
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub family: LearnedHashFamily,
    pub codes: Vec<BitVector>,
    /// `R_k = kS - Σ b_j b_jᵀ`.
    pub residue: Array2<f64>,
    pub fits: Vec<FitOutcome>,
}

/// Greedy bit-by-bit learning of `init.len()` bilinear functions.
pub fn learn_family(
    samples: &Dataset,
    target: &SimilarityTarget,
    init: &[ProjectionPair],
    opt: &OptConfig,
    seed: u64,
) -> Result<LearnOutcome> {
    let k = init.len();
    let m = samples.len();
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if m <= k {
        return Err(Error::InvalidConfig(format!(
            "need more samples than bits (m = {m}, k = {k})"
        )));
    }
    if target.len() != m {
        return Err(invalid_input("similarity target does not match samples"));
    }
    let x = sample_matrix(samples);
    let q_before = objective_q(&codes_for(&x, init), &target.s);

    let mut residue = &target.s * k as f64;
    let mut pairs = Vec::with_capacity(k);
    let mut codes = Vec::with_capacity(k);
    let mut metas = Vec::with_capacity(k);
    let mut fits = Vec::with_capacity(k);
    for start in init {
        let fit = fit_bit(&residue, &x, start, opt)?;
        let b = fit.bits.as_f64();
        let gain = quadratic_form(&b.view(), &residue);
        let outer = b
            .view()
            .insert_axis(Axis(1))
            .dot(&b.view().insert_axis(Axis(0)));
        residue -= &outer;
        metas.push(BitMeta {
            iterations: fit.iterations,
            init_surrogate: fit.init_surrogate(),
            final_surrogate: fit.final_surrogate(),
            init_quantized: fit.init_quantized_cost,
            quantized: fit.quantized_cost,
            nonpositive_gain: gain <= 0.0,
            stop: fit.stop,
        });
        pairs.push(fit.pair.clone());
        codes.push(fit.bits.clone());
        fits.push(fit);
    }
    let q_after = objective_q(&codes, &target.s);
    Ok(LearnOutcome {
        family: LearnedHashFamily {
            dim: samples.dim(),
            pairs,
            meta: TrainingMeta {
                seed,
                m,
                t1: target.t1,
                t2: target.t2,
                scale: opt.scale,
                q_before,
                q_after,
                bits: metas,
            },
        },
        codes,
        residue,
        fits,
    })
}

/// End-to-end training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbhConfig {
    pub k: usize,
    /// Number of database points sampled for training.
    pub m: usize,
    pub threshold_fraction: f64,
    /// Replace `opt.scale` by `1 / mean ‖x‖²` over the training samples.
    pub auto_scale: bool,
    pub opt: OptConfig,
}

impl Default for LbhConfig {
    fn default() -> Self {
        Self {
            k: 16,
            m: 500,
            threshold_fraction: 0.05,
            auto_scale: false,
            opt: OptConfig::default(),
        }
    }
}

/// Samples `m` points of `pool` uniformly without replacement, picks the
/// thresholds against the whole pool and learns `k` bits warm-started
/// from `random_pairs(d, k, seed)`.
pub fn train_lbh(pool: &Dataset, cfg: &LbhConfig, seed: u64) -> Result<LearnOutcome> {
    if cfg.m > pool.len() {
        return Err(Error::InvalidConfig(format!(
            "m = {} exceeds pool size {}",
            cfg.m,
            pool.len()
        )));
    }
    let mut rng = rng_from_seed(derive_seed(seed, 1));
    let mut ids = sample_indices(&mut rng, pool.len(), cfg.m);
    ids.sort_unstable();
    let samples = pool.subset(&ids);
    let (t1, t2) = select_thresholds(&samples, pool, cfg.threshold_fraction)?;
    let target = SimilarityTarget::build(&samples, t1, t2)?;
    let init = random_pairs(pool.dim(), cfg.k, seed);
    let mut opt = cfg.opt.clone();
    if cfg.auto_scale {
        let ms = samples.points().map(|p| dot(p, p)).sum::<f64>() / samples.len() as f64;
        if ms > 0.0 {
            opt.scale = 1.0 / ms;
        }
    }
    learn_family(&samples, &target, &init, &opt, seed)
}
