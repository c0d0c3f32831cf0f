//! Linear and cosine-normalized classifier heads over precomputed features.

mod checkpoint;
mod loss;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::rng::{domain, StreamId};

pub use checkpoint::ClassifierMeta;
pub use loss::{softmax_ce_loss, softmax_ce_soft};
pub use train::{
    provider_for, train_classifier, EpochRecord, FeatureProvider, LrSchedule, TrainConfig, TrainMode, TrainOutcome,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// `W z + b`.
    Linear,
    /// `gamma * cos(z, w_k)` with a learned positive scale and no bias.
    #[default]
    Cosine,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "cosine" => Ok(HeadKind::Cosine),
            other => Err(Error::validation(format!("unknown classifier head {other:?}"))),
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub const DEFAULT_GAMMA: f64 = 16.0;

/// A K-class head over D-dimensional features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    /// K x D, one row per class.
    pub weights: Matrix,
    /// Present for linear heads only.
    pub bias: Option<Vec<f64>>,
    pub head: HeadKind,
    /// Cosine scale before the softplus; ignored by linear heads.
    pub gamma_raw: f64,
}

/// Gradients with the same layout as [`Classifier`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub gamma_raw: f64,
}

impl Classifier {
    /// Fresh head: weights uniform in `[-1/sqrt(D), 1/sqrt(D)]`, zero bias.
    pub fn init(num_classes: usize, dim: usize, head: HeadKind, gamma: f64, seed: u64) -> Result<Self> {
        if num_classes == 0 || dim == 0 {
            return Err(Error::validation("classifier needs at least one class and one dimension"));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::validation(format!("gamma must be positive, got {gamma}")));
        }
        let bound = 1.0 / (dim as f64).sqrt();
        let mut rng = StreamId::new(seed, &[domain::INIT]).rng();
        let weights = Matrix::from_fn(num_classes, dim, |_, _| rng.random_range(-bound..=bound));
        Ok(Classifier {
            weights,
            bias: (head == HeadKind::Linear).then(|| vec![0.0; num_classes]),
            head,
            gamma_raw: softplus_inverse(gamma),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Effective cosine scale, always positive.
    pub fn gamma(&self) -> f64 {
        softplus(self.gamma_raw)
    }

    fn check_dim(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.dim() && features.rows() > 0 {
            return Err(Error::validation(format!(
                "features have {} columns, classifier expects {}",
                features.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn weight_norms(&self) -> Result<Vec<f64>> {
        (0..self.num_classes())
            .map(|k| {
                let n = norm(self.weights.row(k));
                if n > 0.0 {
                    Ok(n)
                } else {
                    Err(Error::Numerical(format!("classifier row {k} has zero norm")))
                }
            })
            .collect()
    }

    /// n x K scores.
    pub fn logits(&self, features: &Matrix) -> Result<Matrix> {
        self.check_dim(features)?;
        let n = features.rows();
        let k = self.num_classes();
        let mut out = Matrix::zeros(n, k);
        match self.head {
            HeadKind::Linear => {
                for i in 0..n {
                    let z = features.row(i);
                    let row = out.row_mut(i);
                    for (c, o) in row.iter_mut().enumerate() {
                        *o = dot(self.weights.row(c), z) + self.bias.as_ref().map_or(0.0, |b| b[c]);
                    }
                }
            }
            HeadKind::Cosine => {
                let wn = self.weight_norms()?;
                let gamma = self.gamma();
                for i in 0..n {
                    let z = features.row(i);
                    let zn = norm(z);
                    if zn == 0.0 {
                        return Err(Error::validation(format!("feature row {i} has zero norm")));
                    }
                    let row = out.row_mut(i);
                    for (c, o) in row.iter_mut().enumerate() {
                        let cos = (dot(self.weights.row(c), z) / (zn * wn[c])).clamp(-1.0, 1.0);
                        *o = gamma * cos;
                    }
                }
            }
        }
        Ok(out)
    }

    /// Arg-max class per row; ties go to the lower id.
    pub fn predict(&self, features: &Matrix) -> Result<Vec<u32>> {
        let logits = self.logits(features)?;
        Ok(logits
            .iter_rows()
            .map(|r| {
                let mut best = 0;
                for (c, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect())
    }

    /// Back-propagates `d loss / d logits` (n x K) to the parameters.
    pub fn backward(&self, features: &Matrix, grad_logits: &Matrix) -> Result<Gradients> {
        self.check_dim(features)?;
        let (n, k, d) = (features.rows(), self.num_classes(), self.dim());
        if grad_logits.rows() != n || (n > 0 && grad_logits.cols() != k) {
            return Err(Error::validation("logit gradient shape does not match the batch"));
        }
        let mut gw = Matrix::zeros(k, d);
        match self.head {
            HeadKind::Linear => {
                let mut gb = vec![0.0; k];
                for i in 0..n {
                    let z = features.row(i);
                    for (c, &g) in grad_logits.row(i).iter().enumerate() {
                        gb[c] += g;
                        gw.row_mut(c).iter_mut().zip(z).for_each(|(w, x)| *w += g * x);
                    }
                }
                Ok(Gradients { weights: gw, bias: self.bias.as_ref().map(|_| gb), gamma_raw: 0.0 })
            }
            HeadKind::Cosine => {
                let wn = self.weight_norms()?;
                let gamma = self.gamma();
                let unit_w: Vec<Vec<f64>> =
                    (0..k).map(|c| self.weights.row(c).iter().map(|v| v / wn[c]).collect()).collect();
                let mut g_gamma = 0.0;
                let mut unit_z = vec![0.0; d];
                for i in 0..n {
                    let z = features.row(i);
                    let zn = norm(z);
                    if zn == 0.0 {
                        return Err(Error::validation(format!("feature row {i} has zero norm")));
                    }
                    unit_z.iter_mut().zip(z).for_each(|(u, v)| *u = v / zn);
                    for (c, &g) in grad_logits.row(i).iter().enumerate() {
                        let cos = dot(&unit_z, &unit_w[c]);
                        g_gamma += g * cos;
                        let scale = g * gamma / wn[c];
                        gw.row_mut(c)
                            .iter_mut()
                            .zip(unit_z.iter().zip(&unit_w[c]))
                            .for_each(|(w, (uz, uw))| *w += scale * (uz - cos * uw));
                    }
                }
                Ok(Gradients { weights: gw, bias: None, gamma_raw: g_gamma * sigmoid(self.gamma_raw) })
            }
        }
    }

    /// Mean cross-entropy over hard labels and its parameter gradients.
    pub fn loss_and_gradients(&self, features: &Matrix, labels: &[u32]) -> Result<(f64, Gradients)> {
        let logits = self.logits(features)?;
        let (loss, g) = softmax_ce_loss(&logits, labels)?;
        Ok((loss, self.backward(features, &g)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;

    #[test]
    fn softplus_round_trip() {
        for y in [1e-3, 0.5, 1.0, 16.0, 40.0] {
            assert!((softplus(softplus_inverse(y)) - y).abs() < 1e-10 * y.max(1.0), "{y}");
        }
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn cosine_parallel_and_orthogonal() {
        let mut c = Classifier::init(2, 2, HeadKind::Cosine, 10.0, 0).unwrap();
        c.weights = Matrix::from_rows(&[[2.0, 0.0], [0.0, 3.0]]).unwrap();
        let s = c.logits(&Matrix::from_rows(&[[5.0, 0.0]]).unwrap()).unwrap();
        assert!((s[(0, 0)] - 10.0).abs() < 1e-12);
        assert_eq!(s[(0, 1)], 0.0);
        assert!(c.logits(&Matrix::from_rows(&[[0.0, 0.0]]).unwrap()).is_err());
        assert!(c.bias.is_none());
    }

    #[test]
    fn linear_identity_weights() {
        let mut c = Classifier::init(3, 3, HeadKind::Linear, DEFAULT_GAMMA, 0).unwrap();
        c.weights = Matrix::identity(3);
        let s = c.logits(&Matrix::from_rows(&[[0.0, 0.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(s.as_slice(), &[0.0, 0.0, 1.0]);
        assert!(c.logits(&Matrix::from_rows(&[[0.0, 1.0]]).unwrap()).is_err());
    }

    #[test]
    fn init_is_bounded_and_seeded() {
        let a = Classifier::init(4, 9, HeadKind::Cosine, DEFAULT_GAMMA, 3).unwrap();
        let b = Classifier::init(4, 9, HeadKind::Cosine, DEFAULT_GAMMA, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.as_slice().iter().all(|v| v.abs() <= 1.0 / 3.0));
        assert!((a.gamma() - DEFAULT_GAMMA).abs() < 1e-12);
    }

    fn random_case(seed: u64, head: HeadKind) -> (Classifier, Matrix, Vec<u32>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let k = rng.random_range(2..=5);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=16);
        let mut c = Classifier::init(k, d, head, rng.random_range(0.5..20.0), seed).unwrap();
        if let Some(b) = c.bias.as_mut() {
            b.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let x = Matrix::from_fn(n, d, |_, _| rng.random_range(-2.0..2.0));
        let y = (0..n).map(|_| rng.random_range(0..k as u32)).collect();
        (c, x, y)
    }

    proptest! {
        #[test]
        fn cosine_logits_bounded_and_scale_free(seed in any::<u64>(), scale in 1e-3f64..1e3) {
            let (c, x, _) = random_case(seed, HeadKind::Cosine);
            let s = c.logits(&x).unwrap();
            let g = c.gamma();
            prop_assert!(s.as_slice().iter().all(|v| v.abs() <= g));
            let mut scaled = x.clone();
            scaled.as_mut_slice().iter_mut().for_each(|v| *v *= scale);
            let t = c.logits(&scaled).unwrap();
            for (a, b) in s.as_slice().iter().zip(t.as_slice()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            for head in [HeadKind::Linear, HeadKind::Cosine] {
                let (c, x, y) = random_case(seed, head);
                let (_, g) = c.loss_and_gradients(&x, &y).unwrap();
                let loss = |c: &Classifier| c.loss_and_gradients(&x, &y).unwrap().0;
                let h = 1e-6;
                let check = |analytic: f64, numeric: f64| {
                    let tol = 1e-5 * analytic.abs().max(numeric.abs()).max(1e-3);
                    assert!((analytic - numeric).abs() <= tol, "{head:?} seed {seed}: {analytic} vs {numeric}");
                };
                for idx in 0..c.weights.as_slice().len() {
                    let mut p = c.clone();
                    p.weights.as_mut_slice()[idx] += h;
                    let mut m = c.clone();
                    m.weights.as_mut_slice()[idx] -= h;
                    check(g.weights.as_slice()[idx], (loss(&p) - loss(&m)) / (2.0 * h));
                }
                if let Some(gb) = &g.bias {
                    for (j, &gj) in gb.iter().enumerate() {
                        let mut p = c.clone();
                        p.bias.as_mut().unwrap()[j] += h;
                        let mut m = c.clone();
                        m.bias.as_mut().unwrap()[j] -= h;
                        check(gj, (loss(&p) - loss(&m)) / (2.0 * h));
                    }
                }
                if head == HeadKind::Cosine {
                    let mut p = c.clone();
                    p.gamma_raw += h;
                    let mut m = c.clone();
                    m.gamma_raw -= h;
                    check(g.gamma_raw, (loss(&p) - loss(&m)) / (2.0 * h));
                }
            }
        }
    }
}
