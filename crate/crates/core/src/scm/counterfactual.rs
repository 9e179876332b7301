//! Counterfactual joint distributions over several mutilated models evaluated
//! on the same exogenous draw, and the Probability of Necessity built on them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::model::{Intervention, StructuralCausalModel};

/// `K >= 1` worlds, each with its own interventions and one target variable.
/// Evidence is observed in the first (factual) world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualQuery {
    pub interventions: Vec<Vec<Intervention>>,
    pub targets: Vec<String>,
    #[serde(default)]
    pub evidence: Vec<(String, usize)>,
}

impl CounterfactualQuery {
    pub fn new(worlds: Vec<(Vec<Intervention>, &str)>) -> Self {
        let (interventions, targets) = worlds.into_iter().map(|(iv, t)| (iv, t.to_string())).unzip();
        Self {
            interventions,
            targets,
            evidence: Vec::new(),
        }
    }

    pub fn with_evidence(mut self, node: &str, value: usize) -> Self {
        self.evidence.push((node.to_string(), value));
        self
    }

    pub fn worlds(&self) -> usize {
        self.targets.len()
    }
}

/// Normalized joint table over `(Y_1, ..., Y_K)`, row-major in world order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointTable {
    pub dims: Vec<usize>,
    pub probs: Vec<f64>,
    /// Samples that satisfied the evidence (all samples when there is none).
    pub accepted: usize,
    pub samples: usize,
}

impl JointTable {
    fn flat_index(&self, outcome: &[usize]) -> usize {
        outcome.iter().zip(&self.dims).fold(0, |acc, (&v, &d)| acc * d + v)
    }

    pub fn get(&self, outcome: &[usize]) -> f64 {
        self.probs[self.flat_index(outcome)]
    }

    /// Marginal of world `k`'s target.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dims[k]];
        let stride: usize = self.dims[k + 1..].iter().product();
        for (i, p) in self.probs.iter().enumerate() {
            out[(i / stride) % self.dims[k]] += p;
        }
        out
    }
}

/// Shared-noise Monte Carlo estimate of the joint counterfactual distribution.
///
/// For every sample index one `û` is drawn and all `K` mutilated models are
/// evaluated on it; the indicator of the joint outcome is tallied.
pub fn counterfactual_distribution(
    model: &StructuralCausalModel,
    query: &CounterfactualQuery,
    samples: usize,
    seed: u64,
) -> Result<JointTable> {
    if samples == 0 {
        return Err(Error::invalid("counterfactual distribution needs at least one sample"));
    }
    if query.worlds() == 0 || query.interventions.len() != query.targets.len() {
        return Err(Error::invalid("query needs K >= 1 worlds, each with one target"));
    }
    let worlds = query
        .interventions
        .iter()
        .map(|iv| model.mutilate(iv))
        .collect::<Result<Vec<_>>>()?;
    let targets = query
        .targets
        .iter()
        .map(|t| model.index_of(t))
        .collect::<Result<Vec<_>>>()?;
    let evidence = query
        .evidence
        .iter()
        .map(|(n, v)| {
            let idx = model.index_of(n)?;
            if *v >= model.nodes()[idx].categories {
                return Err(Error::invalid(format!("evidence value {v} out of range for `{n}`")));
            }
            Ok((idx, *v))
        })
        .collect::<Result<Vec<_>>>()?;

    let dims: Vec<usize> = targets.iter().map(|&t| model.nodes()[t].categories).collect();
    let mut counts = vec![0u64; dims.iter().product()];
    let mut accepted = 0usize;
    for s in 0..samples {
        let u = model.draw_exogenous(seed, 0, s as u64);
        let mut flat = 0;
        let mut keep = true;
        for (k, world) in worlds.iter().enumerate() {
            let values = world.evaluate(&u);
            if k == 0 && !evidence.iter().all(|&(n, v)| values[n] == v) {
                keep = false;
                break;
            }
            flat = flat * dims[k] + values[targets[k]];
        }
        if keep {
            counts[flat] += 1;
            accepted += 1;
        }
    }
    if accepted == 0 {
        return Err(Error::Inestimable("evidence never realized in the sample".into()));
    }
    Ok(JointTable {
        dims,
        probs: counts.iter().map(|&c| c as f64 / accepted as f64).collect(),
        accepted,
        samples,
    })
}

/// One side of a necessity query: the world's interventions and the
/// (variable, value) outcome it is asked about.
#[derive(Debug, Clone)]
pub struct WorldOutcome<'a> {
    pub interventions: &'a [Intervention],
    pub target: &'a str,
    pub value: usize,
}

/// `PN(Y_k = y | Y_1 = y_1)` from the shared-noise joint, conditioning by
/// rejection on the factual event.
pub fn probability_of_necessity(
    model: &StructuralCausalModel,
    factual: WorldOutcome<'_>,
    counterfactual: WorldOutcome<'_>,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let query = CounterfactualQuery::new(vec![
        (factual.interventions.to_vec(), factual.target),
        (counterfactual.interventions.to_vec(), counterfactual.target),
    ]);
    let joint = counterfactual_distribution(model, &query, samples, seed)?;
    let row = joint.marginal(0);
    if factual.value >= joint.dims[0] || counterfactual.value >= joint.dims[1] {
        return Err(Error::invalid("outcome value out of range"));
    }
    let p_factual = row[factual.value];
    if p_factual == 0.0 {
        return Err(Error::Inestimable(format!(
            "factual event {} = {} never realized in {samples} samples",
            factual.target, factual.value
        )));
    }
    Ok(joint.get(&[factual.value, counterfactual.value]) / p_factual)
}
