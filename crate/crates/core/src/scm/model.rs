//! Discrete structural causal model with categorical Gumbel-max mechanisms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

use super::gumbel::select_unchecked;

/// Logits for every configuration of a node's parents.
///
/// Rows are indexed by the mixed-radix encoding of the parent values, first
/// parent most significant. A root node has exactly one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTable {
    categories: usize,
    rows: Vec<Vec<f64>>,
}

impl LogitTable {
    pub fn new(categories: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if categories < 1 {
            return Err(Error::InvalidModel("logit table needs at least one category".into()));
        }
        if rows.is_empty() {
            return Err(Error::InvalidModel("logit table has no rows".into()));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != categories {
                return Err(Error::InvalidModel(format!(
                    "logit row {i} has {} entries, expected {categories}",
                    row.len()
                )));
            }
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidModel(format!("logit row {i} is not finite")));
            }
        }
        Ok(Self { categories, rows })
    }

    /// Single-row table for a parentless mechanism.
    pub fn root(logits: Vec<f64>) -> Result<Self> {
        Self::new(logits.len(), vec![logits])
    }

    /// Log-probabilities given as probabilities, for convenience in tests and fixtures.
    pub fn from_probabilities(rows: &[Vec<f64>]) -> Result<Self> {
        let categories = rows.first().map_or(0, Vec::len);
        Self::new(categories, rows.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect())
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.rows[index]
    }
}

/// A categorical mechanism: logits looked up from the parents, category chosen
/// by Gumbel-max over logits plus the node's exogenous noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalMechanism {
    pub table: LogitTable,
}

impl CategoricalMechanism {
    pub fn logits(&self, parent_config: usize) -> &[f64] {
        self.table.row(parent_config)
    }

    #[inline]
    pub fn select(&self, parent_config: usize, noise: &[f64]) -> usize {
        select_unchecked(self.table.row(parent_config), noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub name: String,
    pub categories: usize,
    pub parents: Vec<usize>,
    pub mechanism: CategoricalMechanism,
}

impl Node {
    /// Number of independent uniform draws this node's mechanism consumes.
    pub fn exogenous_draws(&self) -> usize {
        self.categories
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuralCausalModel {
    nodes: Vec<Node>,
    order: Vec<usize>,
}

/// Gumbel noise for every node of one exogenous draw `û`.
#[derive(Debug, Clone, PartialEq)]
pub struct Exogenous {
    pub per_node: Vec<Vec<f64>>,
}

/// A world's replacement for a node's mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Intervention {
    /// `do(X = x)`.
    Set { node: String, value: usize },
    /// Replace the node's mechanism by another Gumbel-max logit table.
    Mechanism { node: String, table: LogitTable },
}

impl Intervention {
    pub fn set(node: &str, value: usize) -> Self {
        Intervention::Set {
            node: node.to_string(),
            value,
        }
    }

    pub fn mechanism(node: &str, table: LogitTable) -> Self {
        Intervention::Mechanism {
            node: node.to_string(),
            table,
        }
    }

    pub fn node(&self) -> &str {
        match self {
            Intervention::Set { node, .. } | Intervention::Mechanism { node, .. } => node,
        }
    }
}

#[derive(Debug, Clone)]
enum Override<'a> {
    Keep,
    Value(usize),
    Table(&'a LogitTable),
}

/// Interventions resolved against a model, one slot per node.
#[derive(Debug, Clone)]
pub struct MutilatedModel<'a> {
    model: &'a StructuralCausalModel,
    overrides: Vec<Override<'a>>,
}

impl StructuralCausalModel {
    pub fn builder() -> ModelBuilder {
        ModelBuilder::default()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.nodes
            .iter()
            .position(|n| n.name == name)
            .ok_or_else(|| Error::InvalidModel(format!("unknown variable `{name}`")))
    }

    pub fn node(&self, name: &str) -> Result<&Node> {
        Ok(&self.nodes[self.index_of(name)?])
    }

    fn parent_config(&self, node: usize, values: &[usize]) -> usize {
        self.nodes[node]
            .parents
            .iter()
            .fold(0, |acc, &p| acc * self.nodes[p].categories + values[p])
    }

    /// Draws `û` for one sample. Each node's noise comes from its own stream
    /// keyed by (node, timestep, sample), so every world evaluated on the same
    /// key sees identical draws.
    pub fn draw_exogenous(&self, seed: u64, timestep: u64, sample: u64) -> Exogenous {
        let per_node = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, node)| {
                let mut s = rng::stream(seed, Purpose::Exogenous, &[i as u64, timestep, sample]);
                (0..node.exogenous_draws()).map(|_| rng::gumbel(&mut s)).collect()
            })
            .collect();
        Exogenous { per_node }
    }

    pub fn mutilate<'a>(&'a self, interventions: &'a [Intervention]) -> Result<MutilatedModel<'a>> {
        let mut overrides = vec![Override::Keep; self.nodes.len()];
        for iv in interventions {
            let idx = self.index_of(iv.node())?;
            let node = &self.nodes[idx];
            overrides[idx] = match iv {
                Intervention::Set { value, .. } => {
                    if *value >= node.categories {
                        return Err(Error::invalid(format!(
                            "intervention value {value} out of range for `{}`",
                            node.name
                        )));
                    }
                    Override::Value(*value)
                }
                Intervention::Mechanism { table, .. } => {
                    let expected = node.mechanism.table.rows().len();
                    if table.categories() != node.categories || table.rows().len() != expected {
                        return Err(Error::invalid(format!(
                            "replacement mechanism for `{}` has wrong shape",
                            node.name
                        )));
                    }
                    Override::Table(table)
                }
            };
        }
        Ok(MutilatedModel { model: self, overrides })
    }

    /// Evaluates the unmutilated model on one exogenous draw.
    pub fn evaluate(&self, noise: &Exogenous) -> Vec<usize> {
        MutilatedModel {
            model: self,
            overrides: vec![Override::Keep; self.nodes.len()],
        }
        .evaluate(noise)
    }
}

impl MutilatedModel<'_> {
    /// Pure function of the exogenous draw.
    pub fn evaluate(&self, noise: &Exogenous) -> Vec<usize> {
        let m = self.model;
        let mut values = vec![0usize; m.nodes.len()];
        for &i in &m.order {
            let cfg = m.parent_config(i, &values);
            values[i] = match self.overrides[i] {
                Override::Value(v) => v,
                Override::Table(t) => select_unchecked(t.row(cfg), &noise.per_node[i]),
                Override::Keep => m.nodes[i].mechanism.select(cfg, &noise.per_node[i]),
            };
        }
        values
    }
}

#[derive(Debug, Default)]
pub struct ModelBuilder {
    specs: Vec<(String, usize, Vec<String>, LogitTable)>,
}

impl ModelBuilder {
    pub fn node(mut self, name: &str, categories: usize, parents: &[&str], table: LogitTable) -> Self {
        self.specs.push((
            name.to_string(),
            categories,
            parents.iter().map(|p| p.to_string()).collect(),
            table,
        ));
        self
    }

    pub fn build(self) -> Result<StructuralCausalModel> {
        let names: Vec<&str> = self.specs.iter().map(|s| s.0.as_str()).collect();
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidModel(format!("duplicate variable `{n}`")));
            }
        }
        let mut nodes = Vec::with_capacity(self.specs.len());
        for (name, categories, parents, table) in &self.specs {
            let parents: Vec<usize> = parents
                .iter()
                .map(|p| {
                    names
                        .iter()
                        .position(|n| n == p)
                        .ok_or_else(|| Error::InvalidModel(format!("`{name}` has unknown parent `{p}`")))
                })
                .collect::<Result<_>>()?;
            if table.categories() != *categories {
                return Err(Error::InvalidModel(format!(
                    "`{name}` declares {categories} categories but its table has {}",
                    table.categories()
                )));
            }
            nodes.push(Node {
                name: name.clone(),
                categories: *categories,
                parents,
                mechanism: CategoricalMechanism { table: table.clone() },
            });
        }
        for node in &nodes {
            let configs: usize = node.parents.iter().map(|&p| nodes[p].categories).product();
            if node.mechanism.table.rows().len() != configs {
                return Err(Error::InvalidModel(format!(
                    "`{}` needs {configs} logit rows, found {}",
                    node.name,
                    node.mechanism.table.rows().len()
                )));
            }
        }
        let order = topological_order(&nodes)?;
        Ok(StructuralCausalModel { nodes, order })
    }
}

fn topological_order(nodes: &[Node]) -> Result<Vec<usize>> {
    let n = nodes.len();
    let mut indegree: Vec<usize> = nodes.iter().map(|node| node.parents.len()).collect();
    let mut ready: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    ready.reverse();
    let mut order = Vec::with_capacity(n);
    while let Some(i) = ready.pop() {
        order.push(i);
        for (j, node) in nodes.iter().enumerate() {
            let edges = node.parents.iter().filter(|&&p| p == i).count();
            if edges > 0 {
                indegree[j] -= edges;
                if indegree[j] == 0 {
                    ready.insert(0, j);
                }
            }
        }
    }
    if order.len() != n {
        return Err(Error::InvalidModel("parent graph contains a cycle".into()));
    }
    Ok(order)
}
