use nalgebra::DMatrix;

use crate::adapter::FeatureScaler;
use crate::aggregate::{FUSED_DIM, UNIFORM_DIM};
use crate::domain::ModalityId;
use crate::error::{Error, Result};

/// One standard scaler per 1024-wide modality slice of the fused vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PerModalityScalers {
    pub fed: FeatureScaler,
    pub ser: FeatureScaler,
    pub ted: FeatureScaler,
}

impl PerModalityScalers {
    pub fn new(fed: FeatureScaler, ser: FeatureScaler, ted: FeatureScaler) -> Result<Self> {
        for s in [&fed, &ser, &ted] {
            if s.dim() != UNIFORM_DIM {
                return Err(Error::dims("modality scaler", UNIFORM_DIM, s.dim()));
            }
        }
        Ok(Self { fed, ser, ted })
    }

    pub fn identity() -> Self {
        Self {
            fed: FeatureScaler::identity(UNIFORM_DIM),
            ser: FeatureScaler::identity(UNIFORM_DIM),
            ted: FeatureScaler::identity(UNIFORM_DIM),
        }
    }

    /// Fits each scaler on its own column block of an `N x 3072` matrix.
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        if x.ncols() != FUSED_DIM {
            return Err(Error::dims("fused feature matrix", FUSED_DIM, x.ncols()));
        }
        let block = |slot: usize| FeatureScaler::fit(&x.columns(slot * UNIFORM_DIM, UNIFORM_DIM).into_owned());
        Ok(Self {
            fed: block(0)?,
            ser: block(1)?,
            ted: block(2)?,
        })
    }

    pub fn get(&self, modality: ModalityId) -> Option<&FeatureScaler> {
        match modality {
            ModalityId::Fed => Some(&self.fed),
            ModalityId::Ser => Some(&self.ser),
            ModalityId::Ted => Some(&self.ted),
            ModalityId::Aed => None,
        }
    }

    fn in_order(&self) -> [&FeatureScaler; 3] {
        [&self.fed, &self.ser, &self.ted]
    }

    /// Scales each slice of a fused vector and re-concatenates.
    pub fn transform(&self, fused: &[f64]) -> Result<Vec<f64>> {
        if fused.len() != FUSED_DIM {
            return Err(Error::dims("fused vector", FUSED_DIM, fused.len()));
        }
        let mut out = Vec::with_capacity(FUSED_DIM);
        for (s, chunk) in self.in_order().into_iter().zip(fused.chunks(UNIFORM_DIM)) {
            out.extend(s.transform(chunk)?);
        }
        Ok(out)
    }

    pub fn transform_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != FUSED_DIM {
            return Err(Error::dims("fused feature matrix", FUSED_DIM, x.ncols()));
        }
        let mut out = x.clone();
        for (slot, s) in self.in_order().into_iter().enumerate() {
            for j in 0..UNIFORM_DIM {
                let (m, sd) = (s.means()[j], s.stds()[j]);
                out.column_mut(slot * UNIFORM_DIM + j).apply(|v| *v = (*v - m) / sd);
            }
        }
        Ok(out)
    }
}
