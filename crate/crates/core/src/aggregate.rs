//! Temporal pooling and the fixed-width layout of fused feature vectors.
//!
//! A modality sequence is pooled over time into one `d`-vector, padded with
//! zeros or truncated to [`UNIFORM_DIM`] entries, and the three fusion
//! modalities are concatenated as `FED | SER | TED` into a [`FUSED_DIM`]
//! vector.

use std::fmt;
use std::str::FromStr;

use crate::domain::{EmbeddingSequence, ModalityId};
use crate::error::{Error, Result};

pub const UNIFORM_DIM: usize = 1024;
pub const FUSED_DIM: usize = 3 * UNIFORM_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum PoolingMode {
    #[default]
    Mean,
    Median,
    Max,
}

impl PoolingMode {
    pub fn name(self) -> &'static str {
        match self {
            PoolingMode::Mean => "mean",
            PoolingMode::Median => "median",
            PoolingMode::Max => "max",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(PoolingMode::Mean),
            "median" => Ok(PoolingMode::Median),
            "max" => Ok(PoolingMode::Max),
            other => Err(Error::domain(format!("unknown pooling mode {other:?}"))),
        }
    }
}

/// Pooling mode for each fusion modality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct PoolingModes {
    pub fed: PoolingMode,
    pub ser: PoolingMode,
    pub ted: PoolingMode,
}

impl PoolingModes {
    pub fn uniform(mode: PoolingMode) -> Self {
        Self {
            fed: mode,
            ser: mode,
            ted: mode,
        }
    }

    pub fn get(&self, modality: ModalityId) -> PoolingMode {
        match modality {
            ModalityId::Fed => self.fed,
            ModalityId::Ser => self.ser,
            ModalityId::Ted | ModalityId::Aed => self.ted,
        }
    }
}

/// Column-wise reduction of the `T x d` frame matrix.
///
/// The median of an even frame count is the mean of the two middle order
/// statistics.
pub fn pool(seq: &EmbeddingSequence, mode: PoolingMode) -> Result<Vec<f64>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let d = seq.dim();
    let t = seq.len();
    let out = match mode {
        PoolingMode::Mean => {
            let mut acc = vec![0.0; d];
            for frame in seq.frames() {
                for (a, v) in acc.iter_mut().zip(frame) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / t as f64).collect()
        }
        PoolingMode::Max => {
            let mut acc = seq.frame(0).to_vec();
            for frame in seq.frames().skip(1) {
                for (a, &v) in acc.iter_mut().zip(frame) {
                    *a = a.max(v);
                }
            }
            acc
        }
        PoolingMode::Median => {
            let mut column = Vec::with_capacity(t);
            (0..d)
                .map(|j| {
                    column.clear();
                    column.extend(seq.frames().map(|f| f[j]));
                    column.sort_unstable_by(f64::total_cmp);
                    if t % 2 == 1 {
                        column[t / 2]
                    } else {
                        (column[t / 2 - 1] + column[t / 2]) / 2.0
                    }
                })
                .collect()
        }
    };
    Ok(out)
}

/// A 1024-wide per-modality vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformVector {
    modality: ModalityId,
    values: Vec<f64>,
}

impl UniformVector {
    pub fn new(modality: ModalityId, values: Vec<f64>) -> Result<Self> {
        if !modality.is_fusion() {
            return Err(Error::domain(format!("{modality} is not a fusion modality")));
        }
        if values.len() != UNIFORM_DIM {
            return Err(Error::dims("uniform vector", UNIFORM_DIM, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("uniform vector has non-finite entries"));
        }
        Ok(Self { modality, values })
    }

    /// The representation of a gated or failed modality.
    pub fn zeros(modality: ModalityId) -> Result<Self> {
        Self::new(modality, vec![0.0; UNIFORM_DIM])
    }

    pub fn modality(&self) -> ModalityId {
        self.modality
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Zero-pads or truncates `v` to `target` entries.
pub fn pad_or_truncate(v: &[f64], target: usize) -> Vec<f64> {
    let mut out = v[..v.len().min(target)].to_vec();
    out.resize(target, 0.0);
    out
}

pub fn normalize_dim(v: &[f64], modality: ModalityId) -> Result<UniformVector> {
    if v.is_empty() {
        return Err(Error::domain("cannot normalize an empty vector"));
    }
    UniformVector::new(modality, pad_or_truncate(v, UNIFORM_DIM))
}

/// A 3072-wide vector laid out `FED | SER | TED`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedVector {
    values: Vec<f64>,
}

impl FusedVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FUSED_DIM {
            return Err(Error::dims("fused vector", FUSED_DIM, values.len()));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn slice(&self, modality: ModalityId) -> Option<&[f64]> {
        modality
            .slot()
            .map(|s| &self.values[s * UNIFORM_DIM..(s + 1) * UNIFORM_DIM])
    }
}

pub fn concat3(fed: &UniformVector, ser: &UniformVector, ted: &UniformVector) -> Result<FusedVector> {
    for (v, want) in [(fed, ModalityId::Fed), (ser, ModalityId::Ser), (ted, ModalityId::Ted)] {
        if v.modality() != want {
            return Err(Error::domain(format!(
                "slot for {want} received a {} vector",
                v.modality()
            )));
        }
    }
    let mut values = Vec::with_capacity(FUSED_DIM);
    values.extend_from_slice(fed.values());
    values.extend_from_slice(ser.values());
    values.extend_from_slice(ted.values());
    FusedVector::new(values)
}

pub fn split3(f: &FusedVector) -> Result<(UniformVector, UniformVector, UniformVector)> {
    let slice = |m: ModalityId| UniformVector::new(m, f.slice(m).expect("fusion modality").to_vec());
    Ok((slice(ModalityId::Fed)?, slice(ModalityId::Ser)?, slice(ModalityId::Ted)?))
}

/// Pool, pad/truncate and tag one modality's sequence.
pub fn uniform_from_sequence(seq: &EmbeddingSequence, mode: PoolingMode) -> Result<UniformVector> {
    normalize_dim(&pool(seq, mode)?, seq.modality())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seq(frames: &[Vec<f64>]) -> EmbeddingSequence {
        EmbeddingSequence::from_frames(ModalityId::Fed, frames).unwrap()
    }

    #[test]
    fn mean_and_max_small() {
        let s = seq(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(pool(&s, PoolingMode::Mean).unwrap(), vec![2.0, 3.0]);
        assert_eq!(pool(&s, PoolingMode::Max).unwrap(), vec![3.0, 4.0]);
        assert_eq!(pool(&s, PoolingMode::Median).unwrap(), vec![2.0, 3.0]);
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let s = EmbeddingSequence::empty(ModalityId::Ser, 4).unwrap();
        assert!(matches!(pool(&s, PoolingMode::Mean), Err(Error::EmptySequence)));
    }

    /// Independent median: full sort of each column, explicit odd/even split.
    fn median_oracle(frames: &[Vec<f64>]) -> Vec<f64> {
        let d = frames[0].len();
        (0..d)
            .map(|j| {
                let mut col: Vec<f64> = frames.iter().map(|f| f[j]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = col.len();
                if n % 2 == 1 {
                    col[(n - 1) / 2]
                } else {
                    0.5 * col[n / 2 - 1] + 0.5 * col[n / 2]
                }
            })
            .collect()
    }

    #[test]
    fn median_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(716);
        for t in [7usize, 8] {
            let frames: Vec<Vec<f64>> = (0..t)
                .map(|_| (0..16).map(|_| rng.random_range(-5.0..5.0)).collect())
                .collect();
            let got = pool(&seq(&frames), PoolingMode::Median).unwrap();
            let want = median_oracle(&frames);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() <= 1e-15 * w.abs().max(1.0));
            }
        }
    }

    #[test]
    fn normalize_pads_truncates_and_keeps() {
        let v: Vec<f64> = (0..512).map(|i| i as f64 + 1.0).collect();
        let u = normalize_dim(&v, ModalityId::Fed).unwrap();
        assert_eq!(&u.values()[..512], &v[..]);
        assert!(u.values()[512..].iter().all(|&x| x == 0.0));

        let v: Vec<f64> = (0..1024).map(|i| i as f64).collect();
        assert_eq!(normalize_dim(&v, ModalityId::Ser).unwrap().values(), &v[..]);

        let v: Vec<f64> = (0..1200).map(|i| i as f64).collect();
        assert_eq!(normalize_dim(&v, ModalityId::Ted).unwrap().values(), &v[..1024]);

        assert!(normalize_dim(&[], ModalityId::Fed).is_err());
        assert!(normalize_dim(&[1.0], ModalityId::Aed).is_err());
    }

    #[test]
    fn concat_layout() {
        let mut e0 = vec![0.0; UNIFORM_DIM];
        e0[0] = 1.0;
        let fed = UniformVector::new(ModalityId::Fed, e0.clone()).unwrap();
        let ser = UniformVector::new(ModalityId::Ser, e0.clone()).unwrap();
        let ted = UniformVector::new(ModalityId::Ted, e0).unwrap();
        let f = concat3(&fed, &ser, &ted).unwrap();
        let nz: Vec<usize> = f.values().iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(i, _)| i).collect();
        assert_eq!(nz, vec![0, 1024, 2048]);

        assert!(concat3(&ser, &fed, &ted).is_err());

        let z = concat3(
            &UniformVector::zeros(ModalityId::Fed).unwrap(),
            &UniformVector::zeros(ModalityId::Ser).unwrap(),
            &UniformVector::zeros(ModalityId::Ted).unwrap(),
        )
        .unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_places_values_by_slot() {
        let mut v = vec![0.0; FUSED_DIM];
        v[1024 * 2 + 17] = 9.5;
        v[1024 + 3] = -1.0;
        let (fed, ser, ted) = split3(&FusedVector::new(v).unwrap()).unwrap();
        assert_eq!(ted.values()[17], 9.5);
        assert_eq!(ser.values()[3], -1.0);
        assert!(fed.values().iter().all(|&x| x == 0.0));
        assert!(FusedVector::new(vec![0.0; 3071]).is_err());
    }

    #[test]
    fn random_triple_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mk = |m, rng: &mut ChaCha8Rng| {
            UniformVector::new(m, (0..UNIFORM_DIM).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect()).unwrap()
        };
        let (a, b, c) = (mk(ModalityId::Fed, &mut rng), mk(ModalityId::Ser, &mut rng), mk(ModalityId::Ted, &mut rng));
        let (a2, b2, c2) = split3(&concat3(&a, &b, &c).unwrap()).unwrap();
        assert_eq!((a, b, c), (a2, b2, c2));
    }

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    proptest! {
        #[test]
        fn split_then_concat_is_identity(values in prop::collection::vec(-1e6f64..1e6, FUSED_DIM)) {
            let f = FusedVector::new(values).unwrap();
            let (a, b, c) = split3(&f).unwrap();
            prop_assert_eq!(concat3(&a, &b, &c).unwrap(), f);
        }

        #[test]
        fn pooling_is_permutation_invariant(
            t in 1usize..9, d in 1usize..6, seed: u64,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut frames: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            let before: Vec<_> = [PoolingMode::Mean, PoolingMode::Median, PoolingMode::Max]
                .iter().map(|&m| pool(&seq(&frames), m).unwrap()).collect();
            frames.shuffle(&mut rng);
            for (i, &m) in [PoolingMode::Mean, PoolingMode::Median, PoolingMode::Max].iter().enumerate() {
                let after = pool(&seq(&frames), m).unwrap();
                for (x, y) in after.iter().zip(&before[i]) {
                    prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
                }
            }
        }

        #[test]
        fn single_frame_pools_to_itself(frame in prop::collection::vec(-1e3f64..1e3, 1..20)) {
            let s = seq(std::slice::from_ref(&frame));
            for m in [PoolingMode::Mean, PoolingMode::Median, PoolingMode::Max] {
                prop_assert_eq!(pool(&s, m).unwrap(), frame.clone());
            }
        }

        #[test]
        fn normalize_preserves_prefix(v in prop::collection::vec(-1e3f64..1e3, 1..1500)) {
            let u = normalize_dim(&v, ModalityId::Fed).unwrap();
            let p = v.len().min(UNIFORM_DIM);
            prop_assert_eq!(&u.values()[..p], &v[..p]);
            if v.len() < UNIFORM_DIM {
                prop_assert!(norm(u.values()) <= norm(&v) * (1.0 + 1e-15));
            } else {
                prop_assert_eq!(norm(u.values()), norm(&v[..UNIFORM_DIM]));
            }
        }
    }
}
