//! Per-dimension power transform, row normalization and class statistics.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::matrix::{norm, Matrix};

/// Exponent of Tukey's ladder of powers. Zero selects the natural log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct TukeyParam(f64);

impl TukeyParam {
    pub fn new(lambda: f64) -> Result<Self> {
        if lambda.is_finite() && lambda >= 0.0 {
            Ok(TukeyParam(lambda))
        } else {
            Err(Error::validation(format!("Tukey lambda must be finite and >= 0, got {lambda}")))
        }
    }

    pub fn identity() -> Self {
        TukeyParam(1.0)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for TukeyParam {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        TukeyParam::new(v)
    }
}

impl From<TukeyParam> for f64 {
    fn from(p: TukeyParam) -> f64 {
        p.0
    }
}

/// How negative inputs are treated by a fractional power.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerMode {
    /// Negative entries are a domain error unless the power is a whole number.
    #[default]
    Strict,
    /// `sign(z) * |z|^lambda`.
    SignedPower,
}

/// Applies `z^lambda` (or `ln z` for lambda = 0) to every entry.
pub fn tukey_transform(features: &Matrix, lambda: TukeyParam, mode: PowerMode) -> Result<Matrix> {
    let lambda = lambda.value();
    if lambda == 1.0 {
        return Ok(features.clone());
    }
    let cols = features.cols().max(1);
    let mut out = features.clone();
    for (pos, v) in out.as_mut_slice().iter_mut().enumerate() {
        let z = *v;
        let domain_err = |msg: &str| Error::Domain { row: pos / cols, col: pos % cols, msg: msg.into() };
        *v = if lambda == 0.0 {
            if z <= 0.0 {
                return Err(domain_err(&format!("log of nonpositive value {z}")));
            }
            z.ln()
        } else if z < 0.0 {
            match mode {
                PowerMode::SignedPower => -(-z).powf(lambda),
                PowerMode::Strict if lambda.fract() == 0.0 => z.powf(lambda),
                PowerMode::Strict => {
                    return Err(domain_err(&format!("fractional power {lambda} of negative value {z}")))
                }
            }
        } else {
            z.powf(lambda)
        };
    }
    Ok(out)
}

/// Scales each row to unit Euclidean norm.
pub fn l2_normalize(features: &Matrix) -> Result<Matrix> {
    let mut out = features.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::validation(format!("row {i} has norm {n} and cannot be normalized")));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

/// Gaussian statistics of every class: mean, unbiased covariance, and count.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    /// K x D.
    pub means: Matrix,
    pub covariances: Vec<Matrix>,
    pub counts: Vec<usize>,
}

impl ClassStats {
    pub fn num_classes(&self) -> usize {
        self.means.rows()
    }

    pub fn dim(&self) -> usize {
        self.means.cols()
    }

    pub fn mean(&self, class: usize) -> &[f64] {
        self.means.row(class)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    /// Binary sidecar, little-endian: `"TCST"`, version u32, K u32, D u32, then per
    /// class a u64 count, D f64 mean values and D*D f64 covariance values row-major.
    pub fn write_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(STATS_MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.num_classes() as u32).to_le_bytes())?;
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for k in 0..self.num_classes() {
            w.write_all(&(self.counts[k] as u64).to_le_bytes())?;
            for v in self.mean(k).iter().chain(self.covariances[k].as_slice()) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: impl AsRef<Path>) -> Result<ClassStats> {
        let b = std::fs::read(path)?;
        if b.len() < 16 || &b[..4] != STATS_MAGIC {
            return Err(Error::Format("missing TCST magic".into()));
        }
        let word = |at: usize| u32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as usize;
        if word(4) != 1 {
            return Err(Error::Format(format!("unsupported TCST version {}", word(4))));
        }
        let (k, d) = (word(8), word(12));
        let per_class = 8 + 8 * (d + d * d);
        if b.len() != 16 + k * per_class {
            return Err(Error::Corrupt(format!("TCST file is {} bytes, expected {}", b.len(), 16 + k * per_class)));
        }
        let f = |at: usize| f64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        let mut means = Matrix::zeros(k, d);
        let mut covariances = Vec::with_capacity(k);
        let mut counts = Vec::with_capacity(k);
        for c in 0..k {
            let base = 16 + c * per_class;
            counts.push(u64::from_le_bytes(b[base..base + 8].try_into().unwrap()) as usize);
            for j in 0..d {
                means[(c, j)] = f(base + 8 + 8 * j);
            }
            let cov: Vec<f64> = (0..d * d).map(|j| f(base + 8 + 8 * d + 8 * j)).collect();
            covariances.push(Matrix::from_vec(d, d, cov)?);
        }
        Ok(ClassStats { means, covariances, counts })
    }
}

const STATS_MAGIC: &[u8; 4] = b"TCST";

/// Mean and unbiased covariance of one group of rows. Two passes, fixed order.
fn group_stats(features: &Matrix, rows: &[usize]) -> (Vec<f64>, Matrix) {
    let d = features.cols();
    let n = rows.len();
    let mut mean = vec![0.0; d];
    for &r in rows {
        mean.iter_mut().zip(features.row(r)).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = Matrix::zeros(d, d);
    if n < 2 {
        return (mean, cov);
    }
    let mut dev = vec![0.0; d];
    for &r in rows {
        dev.iter_mut().zip(features.row(r).iter().zip(&mean)).for_each(|(o, (v, m))| *o = v - m);
        for i in 0..d {
            let di = dev[i];
            let out = &mut cov.row_mut(i)[i..];
            out.iter_mut().zip(&dev[i..]).for_each(|(c, dj)| *c += di * dj);
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Per-class means and unbiased covariances. Singleton classes get a zero covariance.
pub fn class_statistics(dataset: &FeatureDataset) -> Result<ClassStats> {
    dataset.require_all_classes()?;
    if !dataset.features().is_finite() {
        return Err(Error::validation("features contain NaN or infinity"));
    }
    let groups = dataset.class_indices();
    let per_class: Vec<(Vec<f64>, Matrix)> =
        groups.par_iter().map(|rows| group_stats(dataset.features(), rows)).collect();
    let d = dataset.dim();
    let mut means = Matrix::zeros(groups.len(), d);
    let mut covariances = Vec::with_capacity(groups.len());
    for (k, (mean, cov)) in per_class.into_iter().enumerate() {
        means.row_mut(k).copy_from_slice(&mean);
        covariances.push(cov);
    }
    Ok(ClassStats { means, covariances, counts: groups.iter().map(Vec::len).collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn tukey_examples() {
        let x = m(&[&[4.0, 9.0]]);
        let half = tukey_transform(&x, TukeyParam::new(0.5).unwrap(), PowerMode::Strict).unwrap();
        assert_eq!(half.as_slice(), &[2.0, 3.0]);
        let e = std::f64::consts::E;
        let logged = tukey_transform(&m(&[&[1.0, e]]), TukeyParam::new(0.0).unwrap(), PowerMode::Strict).unwrap();
        assert_eq!(logged[(0, 0)], 0.0);
        assert!((logged[(0, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tukey_domain_errors() {
        let x = m(&[&[1.0, 2.0], &[0.5, -0.25]]);
        let err = tukey_transform(&x, TukeyParam::new(0.9).unwrap(), PowerMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Domain { row: 1, col: 1, .. }), "{err}");
        let signed = tukey_transform(&x, TukeyParam::new(0.5).unwrap(), PowerMode::SignedPower).unwrap();
        assert_eq!(signed[(1, 1)], -0.5);
        let zero = m(&[&[0.0]]);
        assert!(tukey_transform(&zero, TukeyParam::new(0.0).unwrap(), PowerMode::Strict).is_err());
        // whole powers are defined for negatives
        let sq = tukey_transform(&m(&[&[-3.0]]), TukeyParam::new(2.0).unwrap(), PowerMode::Strict).unwrap();
        assert_eq!(sq[(0, 0)], 9.0);
        assert!(TukeyParam::new(-0.1).is_err());
        assert!(TukeyParam::new(f64::NAN).is_err());
    }

    #[test]
    fn normalize_examples() {
        let out = l2_normalize(&m(&[&[3.0, 4.0]])).unwrap();
        assert!((out[(0, 0)] - 0.6).abs() < 1e-15 && (out[(0, 1)] - 0.8).abs() < 1e-15);
        let err = l2_normalize(&m(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
    }

    #[test]
    fn two_point_and_singleton_stats() {
        let ds = FeatureDataset::new(m(&[&[0.0, 0.0], &[2.0, 0.0], &[5.0, 7.0]]), vec![0, 0, 1], 2).unwrap();
        let s = class_statistics(&ds).unwrap();
        assert_eq!(s.mean(0), &[1.0, 0.0]);
        assert_eq!(s.covariances[0].as_slice(), &[2.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.mean(1), &[5.0, 7.0]);
        assert_eq!(s.covariances[1], Matrix::zeros(2, 2));
        assert_eq!(s.counts, vec![2, 1]);
    }

    #[test]
    fn empty_class_rejected() {
        let ds = FeatureDataset::new(m(&[&[0.0]]), vec![0], 2).unwrap();
        assert!(class_statistics(&ds).is_err());
    }

    /// Naive double-loop covariance straight from the definition.
    fn brute_force_cov(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = rows.len();
        let d = rows[0].len();
        let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut c = vec![vec![0.0; d]; d];
        for (i, ci) in c.iter_mut().enumerate() {
            for (j, cij) in ci.iter_mut().enumerate() {
                for r in rows {
                    *cij += (r[i] - mean[i]) * (r[j] - mean[j]);
                }
                *cij /= (n - 1) as f64;
            }
        }
        c
    }

    fn relative_frobenius(a: &Matrix, b: &[Vec<f64>]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, row) in b.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                num += (a[(i, j)] - v).powi(2);
                den += v * v;
            }
        }
        (num / den).sqrt()
    }

    #[test]
    fn covariance_matches_brute_force_200_rows() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> =
            (0..200).map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0) + 10.0).collect()).collect();
        let ds = FeatureDataset::new(Matrix::from_rows(&rows).unwrap(), vec![0; 200], 1).unwrap();
        let s = class_statistics(&ds).unwrap();
        assert!(relative_frobenius(&s.covariances[0], &brute_force_cov(&rows)) < 1e-10);
        assert!(s.covariances[0].max_asymmetry() <= 1e-9);
    }

    #[test]
    fn binary_and_json_round_trip() {
        let ds = FeatureDataset::new(m(&[&[0.0, 1.0], &[2.0, 0.5], &[5.0, 7.0]]), vec![0, 0, 1], 2).unwrap();
        let s = class_statistics(&ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.write_binary(dir.path().join("s.bin")).unwrap();
        assert_eq!(ClassStats::read_binary(dir.path().join("s.bin")).unwrap(), s);
        s.write_json(dir.path().join("s.json")).unwrap();
        let back: ClassStats = serde_json::from_slice(&std::fs::read(dir.path().join("s.json")).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    proptest! {
        #[test]
        fn lambda_one_is_bitwise_identity(v in prop::collection::vec(0.0f64..1e3, 1..40)) {
            let x = Matrix::from_vec(1, v.len(), v).unwrap();
            let y = tukey_transform(&x, TukeyParam::identity(), PowerMode::Strict).unwrap();
            prop_assert_eq!(x, y);
        }

        #[test]
        fn normalize_idempotent(v in prop::collection::vec(-5.0f64..5.0, 3..30)) {
            prop_assume!(v.iter().any(|x| x.abs() > 1e-3));
            let x = Matrix::from_vec(1, v.len(), v).unwrap();
            let once = l2_normalize(&x).unwrap();
            let twice = l2_normalize(&once).unwrap();
            prop_assert!((norm(once.row(0)) - 1.0).abs() < 1e-6);
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn tukey_keeps_normalized_nonnegatives_nonnegative(
            v in prop::collection::vec(0.0f64..1.0, 2..20),
            lambda in 0.05f64..2.0,
        ) {
            prop_assume!(v.iter().any(|x| *x > 1e-3));
            let x = l2_normalize(&Matrix::from_vec(1, v.len(), v).unwrap()).unwrap();
            let y = tukey_transform(&x, TukeyParam::new(lambda).unwrap(), PowerMode::Strict).unwrap();
            prop_assert!(y.as_slice().iter().all(|&z| z >= 0.0));
        }

        #[test]
        fn covariance_matches_oracle(seed in any::<u64>(), n in 2usize..40, d in 1usize..6) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let ds = FeatureDataset::new(Matrix::from_rows(&rows).unwrap(), vec![0; n], 1).unwrap();
            let s = class_statistics(&ds).unwrap();
            let oracle = brute_force_cov(&rows);
            let scale: f64 = oracle.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
            prop_assume!(scale > 1e-12);
            prop_assert!(relative_frobenius(&s.covariances[0], &oracle) < 1e-10);
        }
    }
}
