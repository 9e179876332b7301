use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Result};
use crate::nn::argmax;
use crate::rng;

/// One standard-Gumbel value per category, `g = -ln(-ln u)` with `u ~ U(0,1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GumbelNoise {
    values: Vec<f64>,
}

impl GumbelNoise {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_finite("gumbel noise", &values)?;
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn sample<R: RngCore + ?Sized>(rng: &mut R, len: usize) -> Self {
        Self {
            values: (0..len).map(|_| rng::gumbel(rng)).collect(),
        }
    }

    /// Transforms uniforms on (0,1) into Gumbel values.
    pub fn from_uniforms(uniforms: &[f64]) -> Result<Self> {
        Self::new(uniforms.iter().map(|u| -(-u.ln()).ln()).collect())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Gumbel-max selection: `argmax_i (logits_i + noise_i)`, lowest index on ties.
pub fn gumbel_max_select(logits: &[f64], noise: &GumbelNoise) -> Result<usize> {
    check_len("gumbel-max logits/noise", logits.len(), noise.len())?;
    if logits.is_empty() {
        return Err(crate::Error::invalid("gumbel-max over zero categories"));
    }
    check_finite("gumbel-max logits", logits)?;
    Ok(select_unchecked(logits, noise.values()))
}

#[inline]
pub(crate) fn select_unchecked(logits: &[f64], noise: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = logits[0] + noise[0];
    for i in 1..logits.len() {
        let v = logits[i] + noise[i];
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

/// One-hot vector of the hard Gumbel-max choice.
pub fn one_hot(len: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}

/// Noise-free mode of a logit vector (the Gumbel-max choice at zero noise).
pub fn mode(logits: &[f64]) -> usize {
    argmax(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::softmax;
    use crate::rng::{stream, Purpose};

    #[test]
    fn argmax_of_component_sums() {
        let noise = GumbelNoise::new(vec![1.2, 0.3]).unwrap();
        assert_eq!(gumbel_max_select(&[0.0, 0.0], &noise).unwrap(), 0);
        let zero = GumbelNoise::zeros(2);
        assert_eq!(gumbel_max_select(&[0.9f64.ln(), 0.1f64.ln()], &zero).unwrap(), 0);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let zero = GumbelNoise::zeros(3);
        assert_eq!(gumbel_max_select(&[1.0, 1.0, 1.0], &zero).unwrap(), 0);
    }

    #[test]
    fn rejects_bad_input() {
        let noise = GumbelNoise::zeros(3);
        assert!(gumbel_max_select(&[0.0, 0.0], &noise).is_err());
        let noise = GumbelNoise::zeros(2);
        assert!(gumbel_max_select(&[f64::NAN, 0.0], &noise).is_err());
        assert!(gumbel_max_select(&[], &GumbelNoise::zeros(0)).is_err());
        assert!(GumbelNoise::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn marginal_frequency_matches_softmax() {
        let logits = [0.3f64.ln(), 0.7f64.ln()];
        let mut rng = stream(11, Purpose::Exogenous, &[]);
        let n = 1_000_000;
        let mut hits = 0usize;
        for _ in 0..n {
            let g = GumbelNoise::sample(&mut rng, 2);
            hits += gumbel_max_select(&logits, &g).unwrap();
        }
        let freq = hits as f64 / n as f64;
        assert!((freq - softmax(&logits)[1]).abs() < 0.005, "freq = {freq}");
    }

    #[test]
    fn uniforms_map_to_gumbel() {
        let g = GumbelNoise::from_uniforms(&[(-std::f64::consts::E).exp()]).unwrap();
        // u = exp(-e) gives -ln(-ln u) = -ln(e) = -1
        assert!((g.values()[0] + 1.0).abs() < 1e-12);
    }
}
