//! Bit-packed hash codes and Hamming-ball indexes over them.
//!
//! A hyperplane query is hashed under the hyperplane convention of its
//! family. For the bilinear schemes (BH, LBH) and EH that code is the bitwise
//! NOT of the normal's own database-role code, so probing a small Hamming
//! ball around it retrieves the points whose codes are farthest from the
//! normal's code.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Error, Result};
use crate::geometry::{norm, Dataset, HyperplaneQuery};
use crate::learn::LearnedHashFamily;
use crate::rand_hash::{
    ah_bits, eh_bit, random_pairs, sgn, EhProjection, InputRole, LshParams, ProjectionPair,
};
use crate::rng::rng_from_seed;

pub const MAX_BITS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "AH")]
    Ah,
    #[serde(rename = "EH")]
    Eh,
    #[serde(rename = "BH")]
    Bh,
    #[serde(rename = "LBH")]
    Lbh,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Ah => "AH",
            Scheme::Eh => "EH",
            Scheme::Bh => "BH",
            Scheme::Lbh => "LBH",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AH" => Ok(Scheme::Ah),
            "EH" => Ok(Scheme::Eh),
            "BH" => Ok(Scheme::Bh),
            "LBH" => Ok(Scheme::Lbh),
            _ => Err(invalid_input(format!("unknown scheme `{s}`"))),
        }
    }
}

/// `k`-bit code packed into one word; bit `j` is set iff hash `j` gave `+1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashCode {
    bits: u64,
    k: u32,
}

fn mask(k: u32) -> u64 {
    if k as usize >= MAX_BITS {
        u64::MAX
    } else {
        (1u64 << k) - 1
    }
}

impl HashCode {
    pub fn new(bits: u64, k: u32) -> Result<Self> {
        if k == 0 || k as usize > MAX_BITS {
            return Err(invalid_input(format!("code length {k} outside 1..=64")));
        }
        if bits & !mask(k) != 0 {
            return Err(invalid_input(format!("bits {bits:#x} exceed {k}-bit code")));
        }
        Ok(Self { bits, k })
    }

    /// Packs `±1` signs; `-1` becomes a 0 bit.
    pub fn from_signs(signs: &[i8]) -> Result<Self> {
        if signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(invalid_input("signs must be ±1"));
        }
        let bits = signs
            .iter()
            .enumerate()
            .fold(0u64, |acc, (j, &s)| if s > 0 { acc | (1 << j) } else { acc });
        Self::new(bits, signs.len() as u32)
    }

    pub fn to_signs(&self) -> Vec<i8> {
        (0..self.k)
            .map(|j| if self.bits >> j & 1 == 1 { 1 } else { -1 })
            .collect()
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    pub fn len(&self) -> u32 {
        self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn flipped(&self) -> HashCode {
        HashCode {
            bits: !self.bits & mask(self.k),
            k: self.k,
        }
    }

    pub fn hamming(&self, other: &HashCode) -> u32 {
        (self.bits ^ other.bits).count_ones()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum FamilyKind {
    /// Two bits per pair.
    Ah(Vec<ProjectionPair>),
    Eh(Vec<EhProjection>),
    Bilinear(Vec<ProjectionPair>),
}

/// The hash functions behind one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HashFamily {
    pub scheme: Scheme,
    pub dim: usize,
    pub kind: FamilyKind,
}

impl HashFamily {
    fn checked(scheme: Scheme, dim: usize, kind: FamilyKind) -> Result<Self> {
        let fam = Self { scheme, dim, kind };
        let bits = fam.num_bits();
        if bits == 0 || bits > MAX_BITS {
            return Err(invalid_input(format!(
                "{scheme} family yields {bits} bits; need 1..=64"
            )));
        }
        let dims_ok = match &fam.kind {
            FamilyKind::Ah(p) | FamilyKind::Bilinear(p) => p.iter().all(|p| p.dim() == dim),
            FamilyKind::Eh(p) => p.iter().all(|p| p.dim == dim && p.u.len() == dim * dim),
        };
        if !dims_ok || dim == 0 {
            return Err(invalid_input("family projections do not match its dimension"));
        }
        Ok(fam)
    }

    /// `functions` Gaussian pairs from `random_pairs(dim, functions, seed)`,
    /// `2 · functions` bits.
    pub fn ah(dim: usize, functions: usize, seed: u64) -> Result<Self> {
        Self::checked(Scheme::Ah, dim, FamilyKind::Ah(random_pairs(dim, functions, seed)))
    }

    pub fn eh(dim: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = rng_from_seed(seed);
        let p = (0..k).map(|_| EhProjection::random(dim, &mut rng)).collect();
        Self::checked(Scheme::Eh, dim, FamilyKind::Eh(p))
    }

    /// Same projections as `ah(dim, k, seed)`, one XNOR bit per pair.
    pub fn bh(dim: usize, k: usize, seed: u64) -> Result<Self> {
        Self::checked(Scheme::Bh, dim, FamilyKind::Bilinear(random_pairs(dim, k, seed)))
    }

    pub fn lbh(family: &LearnedHashFamily) -> Result<Self> {
        Self::checked(Scheme::Lbh, family.dim, FamilyKind::Bilinear(family.pairs.clone()))
    }

    pub fn num_bits(&self) -> usize {
        match &self.kind {
            FamilyKind::Ah(p) => 2 * p.len(),
            FamilyKind::Eh(p) => p.len(),
            FamilyKind::Bilinear(p) => p.len(),
        }
    }

    pub fn encode(&self, z: &[f64], role: InputRole) -> Result<HashCode> {
        if z.len() != self.dim {
            return Err(invalid_input(format!(
                "vector of dimension {} for a {}-dimensional family",
                z.len(),
                self.dim
            )));
        }
        if !(norm(z) > 0.0) {
            return Err(invalid_input("cannot hash a zero vector"));
        }
        Ok(self.encode_unchecked(z, role))
    }

    pub(crate) fn encode_unchecked(&self, z: &[f64], role: InputRole) -> HashCode {
        let mut bits = 0u64;
        match &self.kind {
            FamilyKind::Ah(pairs) => {
                for (j, p) in pairs.iter().enumerate() {
                    let [a, b] = ah_bits(z, role, p);
                    if a > 0 {
                        bits |= 1 << (2 * j);
                    }
                    if b > 0 {
                        bits |= 1 << (2 * j + 1);
                    }
                }
            }
            FamilyKind::Eh(projs) => {
                for (j, p) in projs.iter().enumerate() {
                    if eh_bit(z, role, p) > 0 {
                        bits |= 1 << j;
                    }
                }
            }
            FamilyKind::Bilinear(pairs) => {
                for (j, p) in pairs.iter().enumerate() {
                    if sgn(p.bilinear(z)) > 0 {
                        bits |= 1 << j;
                    }
                }
                if role == InputRole::HyperplaneNormal {
                    bits = !bits & mask(pairs.len() as u32);
                }
            }
        }
        HashCode {
            bits,
            k: self.num_bits() as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub family: HashFamily,
    buckets: HashMap<u64, Vec<u32>>,
}

impl Table {
    pub fn bucket(&self, key: u64) -> &[u32] {
        self.buckets.get(&key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn num_buckets(&self) -> usize {
        self.buckets.len()
    }

    /// Nonempty buckets in unspecified order.
    pub fn buckets(&self) -> impl Iterator<Item = &[u32]> + '_ {
        self.buckets.values().map(Vec::as_slice)
    }

    /// Calls `visit` on every nonempty bucket within `radius` of `key`.
    /// Returns the number of keys or buckets examined.
    fn for_each_in_ball(&self, key: u64, radius: u32, mut visit: impl FnMut(&[u32])) -> usize {
        let k = self.family.num_bits() as u32;
        if ball_size(k, radius) > self.buckets.len() as u128 {
            for (b, ids) in &self.buckets {
                if (b ^ key).count_ones() <= radius {
                    visit(ids);
                }
            }
            return self.buckets.len();
        }
        let mut probed = 0usize;
        let mut probe = |m: u64| {
            probed += 1;
            if let Some(ids) = self.buckets.get(&(key ^ m)) {
                visit(ids);
            }
        };
        for weight in 0..=radius {
            for_each_mask(k, weight, 0, 0, &mut probe);
        }
        probed
    }
}

/// `Σ_{i ≤ radius} C(k, i)`.
pub fn ball_size(k: u32, radius: u32) -> u128 {
    let mut total = 0u128;
    let mut c = 1u128;
    for i in 0..=radius.min(k) {
        total += c;
        c = c * (k - i) as u128 / (i + 1) as u128;
    }
    total
}

fn for_each_mask(k: u32, weight: u32, start: u32, acc: u64, f: &mut impl FnMut(u64)) {
    if weight == 0 {
        f(acc);
        return;
    }
    for bit in start..=k - weight {
        for_each_mask(k, weight - 1, bit + 1, acc | (1 << bit), f);
    }
}

/// One or more hash tables over the same point set.
#[derive(Debug, Clone, PartialEq)]
pub struct HammingIndex {
    scheme: Scheme,
    n: usize,
    tables: Vec<Table>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lookup {
    /// Ascending, deduplicated across tables.
    pub ids: Vec<u32>,
    pub buckets_probed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub candidate_ids: Vec<u32>,
    pub best_id: Option<u32>,
    pub best_margin: Option<f64>,
    pub buckets_probed: usize,
    pub fallback_used: bool,
}

impl HammingIndex {
    /// Encodes every point with every family. Families must share scheme
    /// and dimension.
    pub fn build(points: &Dataset, families: Vec<HashFamily>) -> Result<Self> {
        let first = families
            .first()
            .ok_or_else(|| invalid_input("an index needs at least one table"))?;
        let scheme = first.scheme;
        let dim = first.dim;
        if families.iter().any(|f| f.scheme != scheme || f.dim != dim) {
            return Err(invalid_input("all tables must share scheme and dimension"));
        }
        if !points.is_empty() && points.dim() != dim {
            return Err(invalid_input(format!(
                "points have dimension {}, families {dim}",
                points.dim()
            )));
        }
        if points.len() > u32::MAX as usize {
            return Err(invalid_input("too many points for 32-bit ids"));
        }
        if let Some(i) = points.points().position(|p| !(norm(p) > 0.0)) {
            return Err(invalid_input(format!("point {i} has zero norm")));
        }
        let tables = families
            .into_iter()
            .map(|family| {
                let codes: Vec<u64> = (0..points.len())
                    .into_par_iter()
                    .map(|i| family.encode_unchecked(points.point(i), InputRole::DatabasePoint).bits)
                    .collect();
                let mut buckets: HashMap<u64, Vec<u32>> = HashMap::new();
                for (id, code) in codes.into_iter().enumerate() {
                    buckets.entry(code).or_default().push(id as u32);
                }
                Table { family, buckets }
            })
            .collect();
        Ok(Self {
            scheme,
            n: points.len(),
            tables,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.tables[0].family.dim
    }

    pub fn tables(&self) -> &[Table] {
        &self.tables
    }

    pub fn bits_per_table(&self) -> usize {
        self.tables[0].family.num_bits()
    }

    /// Database-role codes of `z`, one per table.
    pub fn point_codes(&self, z: &[f64]) -> Result<Vec<HashCode>> {
        self.tables
            .iter()
            .map(|t| t.family.encode(z, InputRole::DatabasePoint))
            .collect()
    }

    /// Lookup keys for a hyperplane query, one per table.
    pub fn query_keys(&self, w: &HyperplaneQuery) -> Result<Vec<HashCode>> {
        self.tables
            .iter()
            .map(|t| t.family.encode(w.normal(), InputRole::HyperplaneNormal))
            .collect()
    }

    /// Union over tables of the buckets within `radius` of that table's key.
    pub fn ball_lookup(&self, keys: &[HashCode], radius: u32) -> Result<Lookup> {
        self.ball_lookup_filtered(keys, radius, |_| true)
    }

    /// As `ball_lookup`, keeping only ids accepted by `keep`.
    pub fn ball_lookup_filtered(
        &self,
        keys: &[HashCode],
        radius: u32,
        keep: impl Fn(u32) -> bool,
    ) -> Result<Lookup> {
        if keys.len() != self.tables.len() {
            return Err(invalid_input(format!(
                "{} keys for {} tables",
                keys.len(),
                self.tables.len()
            )));
        }
        let k = self.bits_per_table() as u32;
        if radius > k {
            return Err(invalid_input(format!("radius {radius} exceeds code length {k}")));
        }
        let mut seen = vec![false; self.n];
        let mut ids = Vec::new();
        let mut probed = 0;
        for (table, key) in self.tables.iter().zip(keys) {
            if key.len() != k {
                return Err(invalid_input("key length does not match the table"));
            }
            probed += table.for_each_in_ball(key.bits, radius, |bucket| {
                for &id in bucket {
                    if !seen[id as usize] && keep(id) {
                        seen[id as usize] = true;
                        ids.push(id);
                    }
                }
            });
        }
        ids.sort_unstable();
        Ok(Lookup {
            ids,
            buckets_probed: probed,
        })
    }

    /// Flipped-code lookup followed by an exact margin scan of the candidates.
    pub fn query_hyperplane(
        &self,
        w: &HyperplaneQuery,
        radius: u32,
        points: &Dataset,
    ) -> Result<QueryResult> {
        self.query_hyperplane_filtered(w, radius, points, |_| true)
    }

    pub fn query_hyperplane_filtered(
        &self,
        w: &HyperplaneQuery,
        radius: u32,
        points: &Dataset,
        keep: impl Fn(u32) -> bool,
    ) -> Result<QueryResult> {
        if points.len() != self.n {
            return Err(invalid_input("point store does not match the index"));
        }
        let keys = self.query_keys(w)?;
        let lookup = self.ball_lookup_filtered(&keys, radius, keep)?;
        let mut best: Option<(u32, f64)> = None;
        for &id in &lookup.ids {
            let m = w.margin(points.point(id as usize));
            if best.is_none_or(|(_, bm)| m < bm) {
                best = Some((id, m));
            }
        }
        Ok(QueryResult {
            fallback_used: lookup.ids.is_empty(),
            candidate_ids: lookup.ids,
            best_id: best.map(|b| b.0),
            best_margin: best.map(|b| b.1),
            buckets_probed: lookup.buckets_probed,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let file = IndexFile {
            format: INDEX_FORMAT.into(),
            version: INDEX_VERSION,
            scheme: self.scheme,
            n: self.n,
            bits_per_table: self.bits_per_table(),
            tables: self
                .tables
                .iter()
                .map(|t| {
                    let mut buckets: Vec<(u64, Vec<u32>)> =
                        t.buckets.iter().map(|(k, v)| (*k, v.clone())).collect();
                    buckets.sort_unstable_by_key(|b| b.0);
                    TableFile {
                        family: t.family.clone(),
                        buckets,
                    }
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: IndexFile = serde_json::from_str(s)?;
        if file.format != INDEX_FORMAT || file.version != INDEX_VERSION {
            return Err(invalid_input(format!(
                "unsupported index file {} v{}",
                file.format, file.version
            )));
        }
        if file.tables.is_empty() {
            return Err(invalid_input("index file has no tables"));
        }
        let mut tables = Vec::with_capacity(file.tables.len());
        for t in file.tables {
            let family = HashFamily::checked(t.family.scheme, t.family.dim, t.family.kind)?;
            if family.scheme != file.scheme || family.num_bits() != file.bits_per_table {
                return Err(invalid_input("table family disagrees with index header"));
            }
            let mut count = 0;
            for (key, ids) in &t.buckets {
                if key & !mask(file.bits_per_table as u32) != 0 || ids.iter().any(|&i| i as usize >= file.n) {
                    return Err(invalid_input("bucket out of range"));
                }
                count += ids.len();
            }
            if count != file.n {
                return Err(invalid_input(format!(
                    "table stores {count} ids for {} points",
                    file.n
                )));
            }
            tables.push(Table {
                family,
                buckets: t.buckets.into_iter().collect(),
            });
        }
        Ok(Self {
            scheme: file.scheme,
            n: file.n,
            tables,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

const INDEX_FORMAT: &str = "hyperhash-index";
const INDEX_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    scheme: Scheme,
    n: usize,
    bits_per_table: usize,
    tables: Vec<TableFile>,
}

#[derive(Serialize, Deserialize)]
struct TableFile {
    family: HashFamily,
    buckets: Vec<(u64, Vec<u32>)>,
}

/// Table layout and query cost implied by sensitivity parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TablePlan {
    pub num_tables: u64,
    pub k_bits: u32,
    /// `n^ρ · log_{1/p₂} n` hash evaluations per query.
    pub hash_evaluations: f64,
    /// `c · n^ρ` distance computations per query.
    pub distance_computations: f64,
    pub success_prob_literal: f64,
    pub success_prob_euler: f64,
}

pub fn theoretical_table_plan(params: &LshParams) -> TablePlan {
    let n = params.n as f64;
    let n_rho = n.powf(params.rho);
    TablePlan {
        num_tables: params.num_tables,
        k_bits: params.k_bits,
        hash_evaluations: n_rho * n.ln() / (1.0 / params.p2).ln(),
        distance_computations: params.c * n_rho,
        success_prob_literal: params.success_prob_literal(),
        success_prob_euler: params.success_prob_euler(),
    }
}
