//! Randomized hyperplane hash families.
//!
//! * **AH** (angle-hyperplane): two linear sign bits per function, with the
//!   second bit negated for hyperplane normals.
//! * **EH** (embedding-hyperplane): one sign bit of a Gaussian projection of
//!   the rank-one embedding `vec(zzᵀ)`, negated for hyperplane normals.
//! * **BH** (bilinear-hyperplane): `sgn(uᵀz · zᵀv)`; a hyperplane query takes
//!   the negated bit of its normal.
//!
//! `sgn(0)` is `-1` everywhere in this crate.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::geometry::{dot, norm};
use crate::rng::{derive_seed, gaussian_vec, rng_from_seed};

/// Which side of the query/database split a vector is hashed as.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum InputRole {
    DatabasePoint,
    HyperplaneNormal,
}

/// `+1` for strictly positive arguments, `-1` otherwise.
#[inline]
pub fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else {
        -1
    }
}

/// One pair `(u, v)` of projection vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ProjectionPair {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() || u.is_empty() {
            return Err(invalid_input(format!(
                "projection pair dimensions {} and {} must match and be nonzero",
                u.len(),
                v.len()
            )));
        }
        Ok(Self { u, v })
    }

    /// Draws `u` then `v` i.i.d. from the standard `dim`-variate Gaussian.
    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let u = gaussian_vec(rng, dim);
        let v = gaussian_vec(rng, dim);
        Self { u, v }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// `uᵀz · zᵀv`.
    #[inline]
    pub fn bilinear(&self, z: &[f64]) -> f64 {
        dot(&self.u, z) * dot(z, &self.v)
    }
}

/// `count` Gaussian pairs from one seeded stream. AH, BH and the LBH warm
/// start all draw from this, so equal seeds give shared projections.
pub fn random_pairs(dim: usize, count: usize, seed: u64) -> Vec<ProjectionPair> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| ProjectionPair::random(dim, &mut rng))
        .collect()
}

/// Projection vector `U` over the `d²` embedding. Entry `c·d + r` pairs with
/// `z_r z_c`, i.e. `vec(zzᵀ)` stacks the columns of `zzᵀ` (column-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EhProjection {
    pub dim: usize,
    pub u: Vec<f64>,
}

impl EhProjection {
    pub fn new(dim: usize, u: Vec<f64>) -> Result<Self> {
        if dim == 0 || u.len() != dim * dim {
            return Err(invalid_input(format!(
                "EH projection needs {} entries for dimension {dim}, got {}",
                dim * dim,
                u.len()
            )));
        }
        Ok(Self { dim, u })
    }

    pub fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        Self {
            dim,
            u: gaussian_vec(rng, dim * dim),
        }
    }

    /// `Uᵀ vec(zzᵀ)` as the quadratic form `Σ_c z_c Σ_r U[c·d+r] z_r`.
    pub fn project(&self, z: &[f64]) -> f64 {
        let d = self.dim;
        self.u
            .chunks_exact(d)
            .zip(z)
            .map(|(col, zc)| zc * dot(col, z))
            .sum()
    }
}

fn check_input(z: &[f64], dim: usize) -> Result<()> {
    if z.len() != dim {
        return Err(invalid_input(format!(
            "input has dimension {}, hash expects {dim}",
            z.len()
        )));
    }
    if !(norm(z) > 0.0) {
        return Err(invalid_input("hash input must have nonzero norm"));
    }
    Ok(())
}

pub fn ah_hash(z: &[f64], role: InputRole, pp: &ProjectionPair) -> Result<[i8; 2]> {
    check_input(z, pp.dim())?;
    Ok(ah_bits(z, role, pp))
}

#[inline]
pub(crate) fn ah_bits(z: &[f64], role: InputRole, pp: &ProjectionPair) -> [i8; 2] {
    let pu = dot(&pp.u, z);
    let pv = dot(&pp.v, z);
    match role {
        InputRole::DatabasePoint => [sgn(pu), sgn(pv)],
        InputRole::HyperplaneNormal => [sgn(pu), sgn(-pv)],
    }
}

pub fn eh_hash(z: &[f64], role: InputRole, ep: &EhProjection) -> Result<i8> {
    check_input(z, ep.dim)?;
    Ok(eh_bit(z, role, ep))
}

#[inline]
pub(crate) fn eh_bit(z: &[f64], role: InputRole, ep: &EhProjection) -> i8 {
    let p = ep.project(z);
    match role {
        InputRole::DatabasePoint => sgn(p),
        InputRole::HyperplaneNormal => sgn(-p),
    }
}

/// Bilinear bit of `z` itself; a hyperplane query uses the negation.
pub fn bh_hash(z: &[f64], pp: &ProjectionPair) -> Result<i8> {
    check_input(z, pp.dim())?;
    Ok(sgn(pp.bilinear(z)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RandomFamily {
    #[serde(rename = "AH")]
    Ah,
    #[serde(rename = "EH")]
    Eh,
    #[serde(rename = "BH")]
    Bh,
}

impl RandomFamily {
    pub const ALL: [RandomFamily; 3] = [RandomFamily::Ah, RandomFamily::Eh, RandomFamily::Bh];
}

impl fmt::Display for RandomFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RandomFamily::Ah => "AH",
            RandomFamily::Eh => "EH",
            RandomFamily::Bh => "BH",
        })
    }
}

impl FromStr for RandomFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AH" => Ok(RandomFamily::Ah),
            "EH" => Ok(RandomFamily::Eh),
            "BH" => Ok(RandomFamily::Bh),
            _ => Err(invalid_input(format!("unknown random hash family `{s}`"))),
        }
    }
}

/// Closed-form probability that a hyperplane query and a point at angle
/// `alpha` from it land on the same hash value.
pub fn collision_prob(family: RandomFamily, alpha: f64) -> Result<f64> {
    if !(0.0..=FRAC_PI_2).contains(&alpha) {
        return Err(invalid_input(format!("alpha = {alpha} outside [0, π/2]")));
    }
    let a2 = alpha * alpha / (PI * PI);
    Ok(match family {
        RandomFamily::Ah => 0.25 - a2,
        RandomFamily::Eh => alpha.sin().powi(2).clamp(0.0, 1.0).acos() / PI,
        RandomFamily::Bh => 0.5 - 2.0 * a2,
    }
    .max(0.0))
}

/// Sensitivity parameters `(r, r(1+ε), p₁, p₂)` of a family with respect
/// to the squared angle `α²`, and the table layout they imply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LshParams {
    pub family: RandomFamily,
    pub r: f64,
    pub epsilon: f64,
    pub n: u64,
    pub c: f64,
    pub p1: f64,
    pub p2: f64,
    pub rho: f64,
    pub k_bits: u32,
    pub num_tables: u64,
}

impl LshParams {
    /// Success probability with the bound read literally as `1 − 1/c − 1/ε`.
    pub fn success_prob_literal(&self) -> f64 {
        1.0 - 1.0 / self.c - 1.0 / self.epsilon
    }

    /// Success probability with the second term read as `1/e`.
    pub fn success_prob_euler(&self) -> f64 {
        1.0 - 1.0 / self.c - (-1.0f64).exp()
    }
}

pub fn lsh_params(family: RandomFamily, r: f64, epsilon: f64, n: u64, c: f64) -> Result<LshParams> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidParameters(format!("r = {r} must be positive")));
    }
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameters(format!(
            "epsilon = {epsilon} must be positive"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameters(format!("n = {n} must be at least 2")));
    }
    if !(c >= 2.0) {
        return Err(Error::InvalidParameters(format!("c = {c} must be at least 2")));
    }
    let far = r * (1.0 + epsilon);
    if far > PI * PI / 4.0 {
        return Err(Error::InvalidParameters(format!(
            "r(1+ε) = {far} exceeds π²/4"
        )));
    }
    let p1 = collision_prob(family, r.sqrt())?;
    let p2 = collision_prob(family, far.sqrt())?;
    if !(p2 > 0.0) || !(p1 > p2) {
        return Err(Error::InvalidParameters(format!(
            "need p1 > p2 > 0, got p1 = {p1}, p2 = {p2}"
        )));
    }
    let rho = p1.ln() / p2.ln();
    let nf = n as f64;
    let k_bits = (nf.ln() / (1.0 / p2).ln()).ceil().max(1.0) as u32;
    let num_tables = nf.powf(rho).ceil().max(1.0) as u64;
    Ok(LshParams {
        family,
        r,
        epsilon,
        n,
        c,
        p1,
        p2,
        rho,
        k_bits,
        num_tables,
    })
}

const TRIALS_PER_CHUNK: u64 = 4096;

/// Monte-Carlo collision frequency between `w = e₁` and a unit point at
/// angle `alpha` from the hyperplane, over `trials` fresh hash functions.
///
/// Trials are split into fixed-size chunks seeded by `derive_seed(seed,
/// chunk)`, so the result does not depend on the thread count.
pub fn estimate_collision(
    family: RandomFamily,
    alpha: f64,
    trials: u64,
    dim: usize,
    seed: u64,
) -> Result<f64> {
    if trials == 0 {
        return Err(invalid_input("trials must be at least 1"));
    }
    if dim < 2 {
        return Err(invalid_input("estimation needs dimension >= 2"));
    }
    if !(0.0..=FRAC_PI_2).contains(&alpha) {
        return Err(invalid_input(format!("alpha = {alpha} outside [0, π/2]")));
    }
    let mut w = vec![0.0; dim];
    w[0] = 1.0;
    let mut x = vec![0.0; dim];
    x[0] = (FRAC_PI_2 - alpha).cos();
    x[1] = (FRAC_PI_2 - alpha).sin();

    let chunks = trials.div_ceil(TRIALS_PER_CHUNK);
    let hits: u64 = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut rng = rng_from_seed(derive_seed(seed, chunk));
            let len = TRIALS_PER_CHUNK.min(trials - chunk * TRIALS_PER_CHUNK);
            (0..len)
                .filter(|_| match family {
                    RandomFamily::Ah => {
                        let pp = ProjectionPair::random(dim, &mut rng);
                        ah_bits(&w, InputRole::HyperplaneNormal, &pp)
                            == ah_bits(&x, InputRole::DatabasePoint, &pp)
                    }
                    RandomFamily::Eh => {
                        let ep = EhProjection::random(dim, &mut rng);
                        eh_bit(&w, InputRole::HyperplaneNormal, &ep)
                            == eh_bit(&x, InputRole::DatabasePoint, &ep)
                    }
                    RandomFamily::Bh => {
                        let pp = ProjectionPair::random(dim, &mut rng);
                        -sgn(pp.bilinear(&w)) == sgn(pp.bilinear(&x))
                    }
                })
                .count() as u64
        })
        .sum();
    Ok(hits as f64 / trials as f64)
}
