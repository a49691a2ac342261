//! Vector arithmetic, point-to-hyperplane measures and the dataset type
//! shared by every other module.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_input, Result};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn nonzero_norm(a: &[f64], what: &str) -> Result<f64> {
    let n = norm(a);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(invalid_input(format!("{what} must have finite nonzero norm")))
    }
}

fn same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(invalid_input(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// The normal vector `w` of a hyperplane through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperplaneQuery {
    normal: Vec<f64>,
    norm: f64,
}

impl HyperplaneQuery {
    pub fn new(normal: Vec<f64>) -> Result<Self> {
        let norm = nonzero_norm(&normal, "hyperplane normal")?;
        Ok(Self { normal, norm })
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.normal.len()
    }

    /// `|wᵀx| / ‖w‖`, without the zero-norm check on `x`.
    #[inline]
    pub fn margin(&self, x: &[f64]) -> f64 {
        dot(&self.normal, x).abs() / self.norm
    }
}

/// `theta` is the angle between a point and the hyperplane normal, `alpha`
/// the angle between the point and the hyperplane itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Angles {
    pub theta: f64,
    pub alpha: f64,
}

pub fn angle_between(x: &[f64], w: &HyperplaneQuery) -> Result<Angles> {
    same_dim(x, w.normal())?;
    let nx = nonzero_norm(x, "data point")?;
    let cos = (dot(x, w.normal()) / (nx * w.norm())).clamp(-1.0, 1.0);
    let theta = cos.acos();
    Ok(Angles {
        theta,
        alpha: (theta - FRAC_PI_2).abs(),
    })
}

pub fn point_to_hyperplane_distance(x: &[f64], w: &HyperplaneQuery) -> Result<f64> {
    same_dim(x, w.normal())?;
    Ok(w.margin(x))
}

pub fn abs_cosine(x: &[f64], y: &[f64]) -> Result<f64> {
    same_dim(x, y)?;
    let nx = nonzero_norm(x, "first vector")?;
    let ny = nonzero_norm(y, "second vector")?;
    Ok((dot(x, y).abs() / (nx * ny)).clamp(0.0, 1.0))
}

/// Point-to-hyperplane angle computed from precomputed norms; returns
/// `alpha` in `[0, π/2]`.
#[inline]
pub(crate) fn alpha_from_parts(wx: f64, nw: f64, nx: f64) -> f64 {
    (wx.abs() / (nw * nx)).clamp(0.0, 1.0).asin()
}

/// Dense row-major dataset with optional integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    dim: usize,
    values: Vec<f64>,
    labels: Option<Vec<i64>>,
}

impl Dataset {
    pub fn new(dim: usize, values: Vec<f64>, labels: Option<Vec<i64>>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid_input("dataset dimension must be positive"));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(invalid_input(format!(
                "{} values do not form rows of dimension {dim}",
                values.len()
            )));
        }
        let n = values.len() / dim;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(invalid_input(format!(
                    "{} labels for {n} rows",
                    l.len()
                )));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(crate::Error::NonFinite {
                row: pos / dim,
                col: pos % dim,
            });
        }
        Ok(Self { dim, values, labels })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>, labels: Option<Vec<i64>>) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 {
            return Err(crate::Error::EmptyDataset);
        }
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(crate::Error::DimensionMismatch {
                    row: i,
                    expected: dim,
                    found: r.len(),
                });
            }
            values.extend_from_slice(r);
        }
        Self::new(dim, values, labels)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, id: usize) -> &[f64] {
        &self.values[id * self.dim..(id + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn labels(&self) -> Option<&[i64]> {
        self.labels.as_deref()
    }

    pub fn label(&self, id: usize) -> Option<i64> {
        self.labels.as_ref().map(|l| l[id])
    }

    /// Sorted distinct labels.
    pub fn classes(&self) -> Vec<i64> {
        let mut c: Vec<i64> = self.labels.clone().unwrap_or_default();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Appends a constant 1 to every row, so a linear model `wᵀx + b`
    /// becomes a hyperplane through the origin.
    pub fn augmented(&self) -> Dataset {
        let d = self.dim + 1;
        let mut values = Vec::with_capacity(self.len() * d);
        for p in self.points() {
            values.extend_from_slice(p);
            values.push(1.0);
        }
        Dataset {
            dim: d,
            values,
            labels: self.labels.clone(),
        }
    }

    /// ℓ₂-normalizes every nonzero row in place.
    pub fn normalize(&mut self) {
        for row in self.values.chunks_exact_mut(self.dim) {
            let n = norm(row);
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    /// Rows `ids` (in the given order) as a new dataset.
    pub fn subset(&self, ids: &[usize]) -> Dataset {
        let mut values = Vec::with_capacity(ids.len() * self.dim);
        for &i in ids {
            values.extend_from_slice(self.point(i));
        }
        Dataset {
            dim: self.dim,
            values,
            labels: self
                .labels
                .as_ref()
                .map(|l| ids.iter().map(|&i| l[i]).collect()),
        }
    }
}
