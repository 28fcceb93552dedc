use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Whether choices are sampled (training) or taken greedily (evaluation).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Greedy,
}

pub fn check_logits(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::EmptyDistribution);
    }
    if let Some((index, &value)) = logits.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFiniteLogit { index, value });
    }
    Ok(())
}

/// Numerically stable softmax, written into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Picks an index from a probability vector. Greedy mode never touches `rng`.
pub fn draw_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R, mode: Mode) -> usize {
    match mode {
        Mode::Greedy => argmax(probs),
        Mode::Train => {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            // u landed in the rounding slack above the last cumulative sum
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
        }
    }
}

/// One categorical draw together with what is needed for `∇ log π`.
#[derive(Clone, Debug)]
pub struct CategoricalDraw {
    pub index: usize,
    pub probs: Vec<f64>,
    pub mode: Mode,
}

impl CategoricalDraw {
    pub fn log_prob(&self) -> f64 {
        self.probs[self.index].ln()
    }

    /// Gradient of `log softmax(logits)[index]` w.r.t. the logits.
    pub fn grad_log_prob(&self) -> Result<Vec<f64>> {
        if self.mode == Mode::Greedy {
            return Err(Error::GreedyTrace);
        }
        Ok(self.probs.iter().enumerate().map(|(i, p)| if i == self.index { 1.0 - p } else { -p }).collect())
    }
}

pub fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], rng: &mut R, mode: Mode) -> Result<CategoricalDraw> {
    check_logits(logits)?;
    let probs = softmax(logits);
    let index = draw_index(&probs, rng, mode);
    Ok(CategoricalDraw { index, probs, mode })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RunRng;
    use proptest::prelude::*;
    use rand::SeedableRng;

    #[test]
    fn uniform_logits_sample_uniformly() {
        let mut rng = RunRng::seed_from_u64(11);
        let n = 1_000_000usize;
        let mut counts = [0usize; 4];
        let probs = softmax(&[0.0; 4]);
        for _ in 0..n {
            counts[draw_index(&probs, &mut rng, Mode::Train)] += 1;
        }
        // each frequency within 3σ of 1/4
        let sigma = (0.25f64 * 0.75 / n as f64).sqrt();
        for c in counts {
            let f = c as f64 / n as f64;
            assert!((f - 0.25).abs() < 3.0 * sigma, "{counts:?}");
        }
        // chi-square with 3 dof, 99.9% quantile is 16.27
        let expected = n as f64 / 4.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn greedy_takes_argmax_without_randomness() {
        let mut rng = RunRng::seed_from_u64(3);
        let before = rng.clone();
        let d = sample_categorical(&[100.0, 0.0, 0.0], &mut rng, Mode::Greedy).unwrap();
        assert_eq!(d.index, 0);
        assert_eq!(rng, before);
        // ties break toward the lowest index
        assert_eq!(sample_categorical(&[1.0, 3.0, 3.0], &mut rng, Mode::Greedy).unwrap().index, 1);
        assert!(matches!(d.grad_log_prob(), Err(Error::GreedyTrace)));
    }

    #[test]
    fn rejects_bad_logits() {
        let mut rng = RunRng::seed_from_u64(0);
        assert!(matches!(sample_categorical(&[], &mut rng, Mode::Train), Err(Error::EmptyDistribution)));
        assert!(matches!(
            sample_categorical(&[0.0, f64::NAN], &mut rng, Mode::Train),
            Err(Error::NonFiniteLogit { index: 1, .. })
        ));
    }

    #[test]
    fn two_symbol_grad_matches_finite_differences() {
        let logits = [0.3, -0.7];
        let draw = CategoricalDraw { index: 1, probs: softmax(&logits), mode: Mode::Train };
        let analytic = draw.grad_log_prob().unwrap();
        let eps = 1e-5;
        for k in 0..2 {
            let mut up = logits;
            let mut down = logits;
            up[k] += eps;
            down[k] -= eps;
            let numeric = (log_softmax(&up)[1] - log_softmax(&down)[1]) / (2.0 * eps);
            let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "k={k} analytic={} numeric={numeric}", analytic[k]);
        }
    }

    proptest! {
        #[test]
        fn softmax_normalizes(logits in proptest::collection::vec(-50.0f64..50.0, 1..20)) {
            let p = softmax(&logits);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let lp = log_softmax(&logits);
            for (a, b) in p.iter().zip(&lp) {
                prop_assert!((a.ln() - b).abs() < 1e-9 || *a == 0.0);
            }
        }
    }
}
