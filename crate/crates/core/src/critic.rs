//! Two-layer ReLU value network. `Q(s, a)` reads the item embedding; the
//! state-only baseline `V(s)` feeds a zero embedding through the same weights.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fan_in_matrix, fan_in_vector, outer, slice1, slice1_mut, slice2, slice2_mut, ParamSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub ws: Array2<f64>,
    pub wa: Array2<f64>,
    pub b: Array1<f64>,
    pub v: Array1<f64>,
    /// Output bias, stored as a length-1 tensor.
    pub c: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct CriticTrace {
    state: Array1<f64>,
    embedding: Option<Array1<f64>>,
    pre: Array1<f64>,
    pub value: f64,
}

impl CriticParams {
    pub fn init<R: Rng + ?Sized>(dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::invalid("critic sizes must be positive"));
        }
        Ok(Self {
            ws: fan_in_matrix(rng, hidden, dim, 2 * dim),
            wa: fan_in_matrix(rng, hidden, dim, 2 * dim),
            b: Array1::zeros(hidden),
            v: fan_in_vector(rng, hidden, hidden),
            c: Array1::zeros(1),
        })
    }

    fn finish(&self, state: ArrayView1<f64>, embedding: Option<ArrayView1<f64>>, pre: Array1<f64>) -> CriticTrace {
        let value = pre.iter().zip(&self.v).map(|(p, v)| p.max(0.0) * v).sum::<f64>() + self.c[0];
        CriticTrace {
            state: state.to_owned(),
            embedding: embedding.map(|e| e.to_owned()),
            pre,
            value,
        }
    }

    /// `Q(s, a)` given the action's embedding.
    pub fn q_value(&self, s: ArrayView1<f64>, e: ArrayView1<f64>) -> CriticTrace {
        let pre = self.ws.dot(&s) + self.wa.dot(&e) + &self.b;
        self.finish(s, Some(e), pre)
    }

    /// State-value baseline `V(s)`.
    pub fn state_value(&self, s: ArrayView1<f64>) -> CriticTrace {
        let pre = self.ws.dot(&s) + &self.b;
        self.finish(s, None, pre)
    }

    /// `Q(s, a)` for every row of `embeddings`.
    pub fn q_all(&self, s: ArrayView1<f64>, embeddings: ArrayView2<f64>) -> Vec<f64> {
        self.q_all_traced(s, embeddings).0
    }

    /// [`Self::q_all`] plus the `|A| x H` pre-activations for the backward pass.
    pub fn q_all_traced(&self, s: ArrayView1<f64>, embeddings: ArrayView2<f64>) -> (Vec<f64>, Array2<f64>) {
        let base = self.ws.dot(&s) + &self.b;
        let mut pre = embeddings.dot(&self.wa.t());
        pre += &base.view().insert_axis(Axis(0));
        let q = pre
            .outer_iter()
            .map(|row| row.iter().zip(&self.v).map(|(p, v)| p.max(0.0) * v).sum::<f64>() + self.c[0])
            .collect();
        (q, pre)
    }

    /// Accumulates the gradient of `sum_j d_q[j] * Q(s, a_j)`.
    pub fn q_all_backward(
        &self,
        s: ArrayView1<f64>,
        embeddings: ArrayView2<f64>,
        pre: &Array2<f64>,
        d_q: &[f64],
        grads: &mut CriticParams,
    ) {
        let hidden = self.b.len();
        let mut d_pre = Array2::zeros((pre.nrows(), hidden));
        for (j, row) in pre.outer_iter().enumerate() {
            let g = d_q[j];
            grads.c[0] += g;
            for k in 0..hidden {
                if row[k] > 0.0 {
                    grads.v[k] += g * row[k];
                    d_pre[[j, k]] = g * self.v[k];
                }
            }
        }
        let d_b = d_pre.sum_axis(Axis(0));
        grads.wa += &d_pre.t().dot(&embeddings);
        grads.ws += &outer(&d_b, &s);
        grads.b += &d_b;
    }

    /// Accumulates `d_value * grad value` into `grads`.
    pub fn backward(&self, trace: &CriticTrace, d_value: f64, grads: &mut CriticParams) {
        grads.c[0] += d_value;
        let mut d_pre = Array1::zeros(self.b.len());
        for k in 0..d_pre.len() {
            if trace.pre[k] > 0.0 {
                grads.v[k] += d_value * trace.pre[k];
                d_pre[k] = d_value * self.v[k];
            }
        }
        grads.b += &d_pre;
        grads.ws += &outer(&d_pre, &trace.state.view());
        if let Some(e) = &trace.embedding {
            grads.wa += &outer(&d_pre, &e.view());
        }
    }
}

impl ParamSet for CriticParams {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![slice2(&self.ws), slice2(&self.wa), slice1(&self.b), slice1(&self.v), slice1(&self.c)]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            slice2_mut(&mut self.ws),
            slice2_mut(&mut self.wa),
            slice1_mut(&mut self.b),
            slice1_mut(&mut self.v),
            slice1_mut(&mut self.c),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn q_all_agrees_with_single_evaluations() {
        let mut rng = stream(1, Purpose::Init, &[]);
        let c = CriticParams::init(3, 7, &mut rng).unwrap();
        let s = Array1::from(vec![0.5, -0.2, 1.0]);
        let e = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, -1.0, 0.3, 0.3, 0.3]).unwrap();
        let all = c.q_all(s.view(), e.view());
        for (i, q) in all.iter().enumerate() {
            assert!((q - c.q_value(s.view(), e.row(i)).value).abs() < 1e-12);
        }
        let zero = Array1::zeros(3);
        assert!((c.state_value(s.view()).value - c.q_value(s.view(), zero.view()).value).abs() < 1e-12);
    }
}
