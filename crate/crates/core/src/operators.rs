//! Discretized observation operators: rows of weights over grid points.

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Pointwise,
    Weighted,
    Fourier,
    Gravity,
    Stacked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FourierPart {
    Real,
    Imag,
}

/// Per-row metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowLabel {
    Index(usize),
    Weights,
    Frequency { u: usize, v: usize, part: FourierPart },
    Station([f64; 3]),
}

/// A `p x m` real observation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: DMatrix<f64>,
    labels: Vec<RowLabel>,
    kind: OperatorKind,
}

impl Operator {
    pub fn new(matrix: DMatrix<f64>, labels: Vec<RowLabel>, kind: OperatorKind) -> Result<Self> {
        if labels.len() != matrix.nrows() {
            return Err(Error::invalid("one label per operator row"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("operator rows must be finite"));
        }
        Ok(Operator {
            matrix,
            labels,
            kind,
        })
    }

    /// Operator from a bare matrix with generic labels.
    pub fn from_matrix(matrix: DMatrix<f64>) -> Result<Self> {
        let labels = vec![RowLabel::Weights; matrix.nrows()];
        Self::new(matrix, labels, OperatorKind::Weighted)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn labels(&self) -> &[RowLabel] {
        &self.labels
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    /// Number of observations `p`.
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    /// Grid size `m`.
    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, field: &DVector<f64>) -> DVector<f64> {
        &self.matrix * field
    }

    pub fn apply_mat(&self, fields: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * fields
    }

    pub fn transpose(&self) -> DMatrix<f64> {
        self.matrix.transpose()
    }

    /// Indices of all-zero rows.
    pub fn degenerate_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .filter(|&i| self.matrix.row(i).iter().all(|v| *v == 0.0))
            .collect()
    }

    pub fn is_degenerate(&self) -> bool {
        !self.degenerate_rows().is_empty()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Operator {
        Operator {
            matrix: self.matrix.select_rows(rows),
            labels: rows.iter().map(|&i| self.labels[i].clone()).collect(),
            kind: self.kind,
        }
    }

    /// Vertical concatenation.
    pub fn stack(ops: &[&Operator]) -> Result<Operator> {
        let m = ops
            .first()
            .ok_or_else(|| Error::invalid("cannot stack zero operators"))?
            .cols();
        if ops.iter().any(|o| o.cols() != m) {
            return Err(Error::invalid("stacked operators must share the grid"));
        }
        let p: usize = ops.iter().map(|o| o.rows()).sum();
        let mut matrix = DMatrix::zeros(p, m);
        let mut labels = Vec::with_capacity(p);
        let mut at = 0;
        for o in ops {
            matrix.rows_mut(at, o.rows()).copy_from(&o.matrix);
            labels.extend(o.labels.iter().cloned());
            at += o.rows();
        }
        let kind = match ops {
            [one] => one.kind,
            _ => OperatorKind::Stacked,
        };
        Ok(Operator {
            matrix,
            labels,
            kind,
        })
    }
}

/// Dirac observations of the field at the given flat indices, in order.
pub fn pointwise_operator(grid: &Grid, indices: &[usize]) -> Result<Operator> {
    let m = grid.len();
    let mut seen = HashSet::with_capacity(indices.len());
    for &i in indices {
        if i >= m {
            return Err(Error::invalid(format!("index {i} out of range for grid of {m} points")));
        }
        if !seen.insert(i) {
            return Err(Error::invalid(format!("duplicate observation index {i}")));
        }
    }
    let mut matrix = DMatrix::zeros(indices.len(), m);
    for (row, &i) in indices.iter().enumerate() {
        matrix[(row, i)] = 1.0;
    }
    Operator::new(
        matrix,
        indices.iter().map(|&i| RowLabel::Index(i)).collect(),
        OperatorKind::Pointwise,
    )
}

/// One row per weight list; repeated indices within a row accumulate.
pub fn weighted_operator(grid: &Grid, rows: &[Vec<(usize, f64)>]) -> Result<Operator> {
    let m = grid.len();
    let mut matrix = DMatrix::zeros(rows.len(), m);
    for (r, weights) in rows.iter().enumerate() {
        for &(i, w) in weights {
            if i >= m {
                return Err(Error::invalid(format!("index {i} out of range for grid of {m} points")));
            }
            matrix[(r, i)] += w;
        }
    }
    Operator::new(matrix, vec![RowLabel::Weights; rows.len()], OperatorKind::Weighted)
}

/// Real and imaginary rows of the 2D DFT coefficients `F_uv` on an `M x M`
/// grid, with node `(k, l)` (1-based) at flat index `(k-1) * M + (l-1)` and
/// `F_uv = sum_kl Z_kl exp(-2 pi i (u k + v l) / M)`, `1 <= u, v <= M`.
pub fn dft_operator(grid: &Grid, freqs: &[(usize, usize)]) -> Result<Operator> {
    let mside = square_side(grid)?;
    for &(u, v) in freqs {
        if !(1..=mside).contains(&u) || !(1..=mside).contains(&v) {
            return Err(Error::invalid(format!(
                "frequency ({u},{v}) outside 1..={mside}"
            )));
        }
    }
    let m = grid.len();
    let mut matrix = DMatrix::zeros(2 * freqs.len(), m);
    let mut labels = Vec::with_capacity(2 * freqs.len());
    for (f, &(u, v)) in freqs.iter().enumerate() {
        for k in 1..=mside {
            for l in 1..=mside {
                // reduce mod M before scaling to keep the angle exact
                let (sin, cos) = unit_root((u * k + v * l) % mside, mside);
                let col = (k - 1) * mside + (l - 1);
                matrix[(2 * f, col)] = cos;
                matrix[(2 * f + 1, col)] = -sin;
            }
        }
        labels.push(RowLabel::Frequency { u, v, part: FourierPart::Real });
        labels.push(RowLabel::Frequency { u, v, part: FourierPart::Imag });
    }
    Operator::new(matrix, labels, OperatorKind::Fourier)
}

/// `(sin, cos)` of `2 pi phase / n`, exact at quarter turns so that
/// self-conjugate imaginary rows come out as exact zeros.
fn unit_root(phase: usize, n: usize) -> (f64, f64) {
    if (4 * phase) % n == 0 {
        match 4 * phase / n {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        (2.0 * PI * phase as f64 / n as f64).sin_cos()
    }
}

fn square_side(grid: &Grid) -> Result<usize> {
    match grid.shape() {
        [a, b] if a == b => Ok(*a),
        _ => Err(Error::invalid("Fourier operator needs a square 2D grid")),
    }
}

/// Signed frequency of index `u` on an `M`-periodic axis, in `(-M/2, M/2]`.
pub fn centered_frequency(u: usize, mside: usize) -> i64 {
    let r = (u % mside) as i64;
    let m = mside as i64;
    if 2 * r > m {
        r - m
    } else {
        r
    }
}

/// Frequencies `(u, v)`, `1 <= u, v <= M`, ordered by increasing l-infinity
/// norm of the centered frequency pair, ties broken lexicographically on the
/// signed pair. The zero frequency `(M, M)` comes first.
pub fn frequencies_by_linf(mside: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (1..=mside)
        .flat_map(|u| (1..=mside).map(move |v| (u, v)))
        .collect();
    out.sort_by_key(|&(u, v)| {
        let (a, b) = (centered_frequency(u, mside), centered_frequency(v, mside));
        (a.abs().max(b.abs()), a, b)
    });
    out
}

/// One representative per conjugate pair `F_uv = conj(F_{M-u, M-v})`, in
/// l-infinity order, together with whether its imaginary row is non-zero.
/// The rows kept this way span the same space as the full DFT without
/// duplicated rows.
pub fn independent_frequencies(mside: usize) -> Vec<((usize, usize), bool)> {
    let partner = |x: usize| (mside - x % mside) % mside;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (u, v) in frequencies_by_linf(mside) {
        let key = (u % mside, v % mside);
        let conj = (partner(u), partner(v));
        if seen.contains(&key) || seen.contains(&conj) {
            continue;
        }
        seen.insert(key);
        out.push(((u, v), key != conj));
    }
    out
}

/// Axis-aligned rectangular prism.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prism {
    pub x_l: f64,
    pub x_h: f64,
    pub y_l: f64,
    pub y_h: f64,
    pub z_l: f64,
    pub z_h: f64,
}

impl Prism {
    pub fn new(x: (f64, f64), y: (f64, f64), z: (f64, f64)) -> Result<Self> {
        if !(x.0 < x.1 && y.0 < y.1 && z.0 < z.1) {
            return Err(Error::invalid("prism bounds must satisfy low < high on every axis"));
        }
        Ok(Prism {
            x_l: x.0,
            x_h: x.1,
            y_l: y.0,
            y_h: y.1,
            z_l: z.0,
            z_h: z.1,
        })
    }

    pub fn volume(&self) -> f64 {
        (self.x_h - self.x_l) * (self.y_h - self.y_l) * (self.z_h - self.z_l)
    }

    /// True when the point lies in the closed prism.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (self.x_l..=self.x_h).contains(&p[0])
            && (self.y_l..=self.y_h).contains(&p[1])
            && (self.z_l..=self.z_h).contains(&p[2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GravityConfig {
    /// Gravitational constant, m^3 kg^-1 s^-2.
    pub gamma_n: f64,
    /// mGal per m/s^2.
    pub output_unit: f64,
}

impl Default for GravityConfig {
    fn default() -> Self {
        GravityConfig {
            gamma_n: 6.674e-11,
            output_unit: 1e5,
        }
    }
}

/// `log((r + a) / (r - a))` where `others_sq = r^2 - a^2`, evaluated
/// without cancellation.
fn log_ratio(a: f64, r: f64, others_sq: f64) -> f64 {
    if a.abs() < 0.9 * r {
        2.0 * (a / r).atanh()
    } else if a > 0.0 {
        2.0 * (r + a).ln() - others_sq.ln()
    } else {
        others_sq.ln() - 2.0 * (r - a).ln()
    }
}

/// Corner antiderivative of the vertical attraction.
fn corner_term(x: f64, y: f64, z: f64) -> f64 {
    let (x2, y2, z2) = (x * x, y * y, z * z);
    let r = (x2 + y2 + z2).sqrt();
    let mut t = 0.0;
    if x != 0.0 {
        t += x * log_ratio(y, r, x2 + z2);
    }
    if y != 0.0 {
        t += y * log_ratio(x, r, y2 + z2);
    }
    // z * atan(.) -> 0 as z -> 0
    if z != 0.0 {
        t -= 2.0 * z * (x * y / (z * r)).atan();
    }
    t
}

/// Vertical gravity (mGal) at `station` from a prism of uniform density
/// `rho` (kg/m^3). Positive `z` points up, so mass below the station gives a
/// negative value.
pub fn banerjee_gz(prism: &Prism, station: [f64; 3], rho: f64, cfg: &GravityConfig) -> Result<f64> {
    if prism.contains(station) {
        return Err(Error::invalid("station lies inside the closed prism"));
    }
    Ok(banerjee_unchecked(prism, station) * 0.5 * cfg.gamma_n * rho * cfg.output_unit)
}

fn banerjee_unchecked(prism: &Prism, s: [f64; 3]) -> f64 {
    let xs = [(prism.x_l - s[0], -1.0), (prism.x_h - s[0], 1.0)];
    let ys = [(prism.y_l - s[1], -1.0), (prism.y_h - s[1], 1.0)];
    let zs = [(prism.z_l - s[2], -1.0), (prism.z_h - s[2], 1.0)];
    let mut total = 0.0;
    for &(x, sx) in &xs {
        for &(y, sy) in &ys {
            for &(z, sz) in &zs {
                // lower-minus-upper differencing matches the sign of the
                // Green kernel (x3 - s3) / |x - s|^3
                total -= sx * sy * sz * corner_term(x, y, z);
            }
        }
    }
    total
}

/// Gravimetric forward operator on a 3D grid of cells: entry `(i, j)` is the
/// response at station `i` to unit density in cell `j`.
pub fn gravity_operator(grid: &Grid, stations: &[[f64; 3]], cfg: &GravityConfig) -> Result<Operator> {
    if grid.dim() != 3 {
        return Err(Error::invalid("gravity operator needs a 3D grid"));
    }
    let m = grid.len();
    let prisms: Vec<Prism> = (0..m)
        .map(|j| {
            let b = grid.cell_bounds(j);
            Prism {
                x_l: b[0].0,
                x_h: b[0].1,
                y_l: b[1].0,
                y_h: b[1].1,
                z_l: b[2].0,
                z_h: b[2].1,
            }
        })
        .collect();
    for (i, s) in stations.iter().enumerate() {
        if let Some(j) = prisms.iter().position(|p| p.contains(*s)) {
            return Err(Error::StationInsideCell { station: i, cell: j });
        }
    }
    let scale = 0.5 * cfg.gamma_n * cfg.output_unit;
    let rows: Vec<Vec<f64>> = stations
        .par_iter()
        .map(|s| prisms.iter().map(|p| scale * banerjee_unchecked(p, *s)).collect())
        .collect();
    let mut matrix = DMatrix::zeros(stations.len(), m);
    for (i, row) in rows.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            matrix[(i, j)] = *v;
        }
    }
    Operator::new(
        matrix,
        stations.iter().map(|s| RowLabel::Station(*s)).collect(),
        OperatorKind::Gravity,
    )
}
