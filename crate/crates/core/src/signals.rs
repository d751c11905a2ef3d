//! Finite-horizon vector sequences and their ℓp norms.
//!
//! A [`Signal`] stores `len` vectors of dimension `dim` contiguously. Anything
//! past the stored horizon is an implicit zero tail, so padding a signal with
//! zeros never changes its norm.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Inner norm |·| applied to each vector of a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VectorNorm {
    #[default]
    Euclidean,
    Max,
}

impl VectorNorm {
    pub fn eval(self, v: &[f64]) -> f64 {
        match self {
            VectorNorm::Euclidean => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            VectorNorm::Max => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
        }
    }
}

/// Exponent of an ℓp norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exponent {
    Finite(f64),
    Infinity,
}

/// An ℓp sequence norm: outer exponent plus inner vector norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PNorm {
    pub p: Exponent,
    #[serde(default)]
    pub vector_norm: VectorNorm,
}

impl PNorm {
    pub fn new(p: Exponent, vector_norm: VectorNorm) -> Result<Self> {
        if let Exponent::Finite(p) = p {
            if !(p >= 1.0) || !p.is_finite() {
                return Err(Error::InvalidConfig(format!("p must be >= 1, got {p}")));
            }
        }
        Ok(Self { p, vector_norm })
    }

    pub fn l2() -> Self {
        Self { p: Exponent::Finite(2.0), vector_norm: VectorNorm::Euclidean }
    }

    pub fn linf() -> Self {
        Self { p: Exponent::Infinity, vector_norm: VectorNorm::Euclidean }
    }

    pub fn finite(p: f64) -> Result<Self> {
        Self::new(Exponent::Finite(p), VectorNorm::Euclidean)
    }

    pub fn is_finite(&self) -> bool {
        matches!(self.p, Exponent::Finite(_))
    }

    /// Norm of a single scalar sequence given per-step magnitudes.
    pub fn of_magnitudes<I: IntoIterator<Item = f64>>(&self, mags: I) -> f64 {
        match self.p {
            Exponent::Infinity => mags.into_iter().fold(0.0, f64::max),
            Exponent::Finite(2.0) => mags.into_iter().map(|m| m * m).sum::<f64>().sqrt(),
            Exponent::Finite(1.0) => mags.into_iter().sum(),
            Exponent::Finite(p) => mags.into_iter().map(|m| m.powf(p)).sum::<f64>().powf(1.0 / p),
        }
    }
}

/// A finite sequence `v_0, …, v_{len-1}` of vectors in ℝ^dim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    dim: usize,
    data: Vec<f64>,
}

impl Signal {
    pub fn zeros(dim: usize, len: usize) -> Self {
        assert!(dim > 0, "signal dimension must be positive");
        Self { dim, data: vec![0.0; dim * len] }
    }

    /// Builds a signal from row vectors; every row must have length `dim`.
    pub fn from_rows<R: AsRef<[f64]>>(dim: usize, rows: &[R]) -> Result<Self> {
        if dim == 0 {
            return Err(contract("signal dimension must be positive"));
        }
        let mut data = Vec::with_capacity(dim * rows.len());
        for (t, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(contract(format!("row {t} has length {} but dim is {dim}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self { dim, data })
    }

    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(contract(format!("flat data of length {} does not tile dim {dim}", data.len())));
        }
        Ok(Self { dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn at_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Value at `t`, or `None` in the implicit zero tail.
    pub fn get(&self, t: usize) -> Option<&[f64]> {
        (t < self.len()).then(|| self.at(t))
    }

    pub fn push(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.dim, "pushed vector has wrong dimension");
        self.data.extend_from_slice(v);
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn magnitudes(&self, vn: VectorNorm) -> impl Iterator<Item = f64> + '_ {
        self.rows().map(move |r| vn.eval(r))
    }

    /// Finite-horizon ℓp norm.
    pub fn norm(&self, pn: &PNorm) -> f64 {
        pn.of_magnitudes(self.magnitudes(pn.vector_norm))
    }

    /// Σ_t |v_t|^p for finite p.
    pub fn norm_pow(&self, p: f64, vn: VectorNorm) -> f64 {
        self.magnitudes(vn).map(|m| m.powf(p)).sum()
    }

    /// Inclusive slice `[a, b]`, re-indexed from zero.
    pub fn window(&self, a: usize, b: usize) -> Result<Signal> {
        if a > b || b >= self.len() {
            return Err(Error::Range { start: a, end: b, len: self.len() });
        }
        Ok(Signal { dim: self.dim, data: self.data[a * self.dim..(b + 1) * self.dim].to_vec() })
    }

    pub fn concat(parts: &[Signal]) -> Result<Signal> {
        let dim = parts.first().map(|s| s.dim).ok_or_else(|| contract("nothing to concatenate"))?;
        let mut data = Vec::new();
        for s in parts {
            if s.dim != dim {
                return Err(contract("concatenated signals differ in dimension"));
            }
            data.extend_from_slice(&s.data);
        }
        Ok(Signal { dim, data })
    }

    /// Elementwise sum of two equally shaped signals.
    pub fn add(&self, other: &Signal) -> Result<Signal> {
        if self.dim != other.dim || self.len() != other.len() {
            return Err(contract("signal shapes differ"));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Signal { dim: self.dim, data })
    }

    pub fn scaled(&self, k: f64) -> Signal {
        Signal { dim: self.dim, data: self.data.iter().map(|x| x * k).collect() }
    }

    /// Appends `extra` zero vectors.
    pub fn zero_padded(&self, extra: usize) -> Signal {
        let mut data = self.data.clone();
        data.resize(data.len() + extra * self.dim, 0.0);
        Signal { dim: self.dim, data }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim).map(|k| format!("v_{k}")));
        wr.write_record(&header).map_err(csv_err)?;
        for (t, row) in self.rows().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|x| format!("{x:e}")));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Signal> {
        let mut rd = csv::Reader::from_reader(r);
        let dim = rd.headers().map_err(csv_err)?.len().saturating_sub(1);
        if dim == 0 {
            return Err(contract("signal CSV needs at least one value column"));
        }
        let mut data = Vec::new();
        for (expect_t, rec) in rd.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let t: usize = rec[0].trim().parse().map_err(|_| contract("bad time index"))?;
            if t != expect_t {
                return Err(contract(format!("time index {t} is not contiguous (expected {expect_t})")));
            }
            for field in rec.iter().skip(1) {
                data.push(field.trim().parse::<f64>().map_err(|_| contract(format!("bad number {field:?}")))?);
            }
        }
        Signal::from_flat(dim, data)
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Contract(format!("csv: {other:?}")),
    }
}

/// Checks that `boundaries` is a partition `0 = t_0 < t_1 < … ≤ last`.
pub fn check_partition(boundaries: &[usize], len: usize) -> Result<()> {
    if boundaries.first() != Some(&0) {
        return Err(contract("partition must start at t = 0"));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(contract("partition boundaries must be strictly increasing"));
    }
    if boundaries.last().is_some_and(|&b| b >= len) {
        return Err(contract("partition boundary beyond the signal horizon"));
    }
    Ok(())
}

/// Window `[t_i, t_{i+1} - 1]` for each boundary; the last one runs to the horizon.
pub fn windows_of(boundaries: &[usize], len: usize) -> Vec<(usize, usize)> {
    boundaries
        .iter()
        .enumerate()
        .map(|(i, &a)| (a, boundaries.get(i + 1).map_or(len - 1, |&b| b - 1)))
        .collect()
}

/// Returns `(Σ_i ‖window_i‖_p^p, ‖s‖_p^p)` for a partition of the horizon.
pub fn disjoint_window_norm_identity(s: &Signal, boundaries: &[usize], pn: &PNorm) -> Result<(f64, f64)> {
    let Exponent::Finite(p) = pn.p else {
        return Err(contract("window identity needs a finite exponent"));
    };
    check_partition(boundaries, s.len())?;
    let mut sum = 0.0;
    for (a, b) in windows_of(boundaries, s.len()) {
        sum += s.window(a, b)?.norm_pow(p, pn.vector_norm);
    }
    Ok((sum, s.norm_pow(p, pn.vector_norm)))
}
