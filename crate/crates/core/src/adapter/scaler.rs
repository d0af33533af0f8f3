use nalgebra::DMatrix;

use crate::binio::{put_f64s, put_len_u32, ByteReader};
use crate::error::{Error, Result};

/// Columns whose standard deviation falls below this are left unscaled.
pub const MIN_STD: f64 = 1e-12;

/// Per-column zero-mean / unit-variance standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScaler {
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl FeatureScaler {
    /// Fits column means and population standard deviations over the rows of
    /// `x`. Near-constant columns get a standard deviation of 1.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::domain(format!("scaler needs at least 2 rows, got {n}")));
        }
        let mut means = Vec::with_capacity(x.ncols());
        let mut stds = Vec::with_capacity(x.ncols());
        for col in x.column_iter() {
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            let std = var.sqrt();
            means.push(mean);
            stds.push(if std < MIN_STD { 1.0 } else { std });
        }
        Self::from_parts(means, stds)
    }

    pub fn from_parts(means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if means.len() != stds.len() || means.is_empty() {
            return Err(Error::domain(format!(
                "scaler has {} means and {} stds",
                means.len(),
                stds.len()
            )));
        }
        if means.iter().any(|m| !m.is_finite()) || stds.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::domain("scaler parameters must be finite with positive stds"));
        }
        Ok(Self { means, stds })
    }

    /// Identity scaling over `dim` columns.
    pub fn identity(dim: usize) -> Self {
        Self {
            means: vec![0.0; dim],
            stds: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        Ok(x.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(z.len())?;
        Ok(z.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    /// Applies [`transform`](Self::transform) to every row.
    pub fn transform_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_dim(x.ncols())?;
        let mut out = x.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let (m, s) = (self.means[j], self.stds[j]);
            col.apply(|v| *v = (*v - m) / s);
        }
        Ok(out)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim() {
            return Err(Error::dims("scaler input", self.dim(), got));
        }
        Ok(())
    }

    /// `u32 D`, `D` f64 means, `D` f64 stds, little-endian.
    pub(crate) fn encode(&self, out: &mut Vec<u8>) -> Result<()> {
        put_len_u32(out, self.dim(), "scaler dimension")?;
        put_f64s(out, self.means.iter().copied());
        put_f64s(out, self.stds.iter().copied());
        Ok(())
    }

    pub(crate) fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let at = r.offset();
        let d = r.u32("scaler dimension")? as usize;
        let means = r.f64_vec(d, "scaler means")?;
        let stds = r.f64_vec(d, "scaler stds")?;
        Self::from_parts(means, stds).map_err(|e| Error::format(at, e.to_string()))
    }
}
