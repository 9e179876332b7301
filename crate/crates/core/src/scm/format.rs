//! Plain-text model description.
//!
//! ```text
//! # comment
//! node A 2
//! node R 2 A
//! table A = 0 0
//! table R 0 = -0.10536051565782628 -2.3025850929940455
//! table R 1 = -0.5108256237659907 -0.916290731874155
//! ```
//!
//! `node <name> <categories> [parents...]` declares a variable; `table <name>
//! [parent values...] = <logits>` gives the logit row for one parent
//! configuration. Every configuration must be listed exactly once.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{LogitTable, StructuralCausalModel};

pub fn to_text(model: &StructuralCausalModel) -> String {
    let mut out = String::from("# ncmrec structural causal model v1\n");
    for node in model.nodes() {
        let _ = write!(out, "node {} {}", node.name, node.categories);
        for &p in &node.parents {
            let _ = write!(out, " {}", model.nodes()[p].name);
        }
        out.push('\n');
    }
    for node in model.nodes() {
        let cards: Vec<usize> = node.parents.iter().map(|&p| model.nodes()[p].categories).collect();
        for (cfg, row) in node.mechanism.table.rows().iter().enumerate() {
            let _ = write!(out, "table {}", node.name);
            for v in decode_config(cfg, &cards) {
                let _ = write!(out, " {v}");
            }
            out.push_str(" =");
            for x in row {
                let _ = write!(out, " {x:?}");
            }
            out.push('\n');
        }
    }
    out
}

fn decode_config(mut cfg: usize, cards: &[usize]) -> Vec<usize> {
    let mut values = vec![0; cards.len()];
    for i in (0..cards.len()).rev() {
        values[i] = cfg % cards[i];
        cfg /= cards[i];
    }
    values
}

pub fn from_text(text: &str, origin: &Path) -> Result<StructuralCausalModel> {
    let err = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };
    let mut decls: Vec<(String, usize, Vec<String>)> = Vec::new();
    let mut rows: BTreeMap<(String, Vec<usize>), (usize, Vec<f64>)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut words = line.split_whitespace();
        match words.next() {
            Some("node") => {
                let name = words.next().ok_or_else(|| err(line_no, "missing node name".into()))?;
                let cats = words
                    .next()
                    .ok_or_else(|| err(line_no, "missing category count".into()))?
                    .parse::<usize>()
                    .map_err(|e| err(line_no, format!("bad category count: {e}")))?;
                decls.push((name.to_string(), cats, words.map(str::to_string).collect()));
            }
            Some("table") => {
                let (head, tail) = line
                    .split_once('=')
                    .ok_or_else(|| err(line_no, "table line needs `=`".into()))?;
                let mut hw = head.split_whitespace().skip(1);
                let name = hw.next().ok_or_else(|| err(line_no, "missing table name".into()))?;
                let cfg = hw
                    .map(|w| w.parse::<usize>().map_err(|e| err(line_no, format!("bad parent value: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                let logits = tail
                    .split_whitespace()
                    .map(|w| w.parse::<f64>().map_err(|e| err(line_no, format!("bad logit: {e}"))))
                    .collect::<Result<Vec<_>>>()?;
                if rows.insert((name.to_string(), cfg), (line_no, logits)).is_some() {
                    return Err(err(line_no, format!("duplicate table row for `{name}`")));
                }
            }
            Some(other) => return Err(err(line_no, format!("unknown directive `{other}`"))),
            None => {}
        }
    }

    let cards: BTreeMap<&str, usize> = decls.iter().map(|(n, c, _)| (n.as_str(), *c)).collect();
    let mut builder = StructuralCausalModel::builder();
    let mut tables = Vec::new();
    for (name, cats, parents) in &decls {
        let pc = parents
            .iter()
            .map(|p| {
                cards
                    .get(p.as_str())
                    .copied()
                    .ok_or_else(|| Error::InvalidModel(format!("`{name}` has unknown parent `{p}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let configs: usize = pc.iter().product();
        let mut table_rows = Vec::with_capacity(configs);
        for cfg in 0..configs {
            let key = (name.clone(), decode_config(cfg, &pc));
            let (_, logits) = rows
                .remove(&key)
                .ok_or_else(|| Error::InvalidModel(format!("`{name}` is missing table row {:?}", key.1)))?;
            table_rows.push(logits);
        }
        tables.push(LogitTable::new(*cats, table_rows)?);
    }
    if let Some(((name, cfg), (line, _))) = rows.into_iter().next() {
        return Err(err(line, format!("table row {cfg:?} does not match any configuration of `{name}`")));
    }
    for ((name, cats, parents), table) in decls.iter().zip(tables) {
        let parents: Vec<&str> = parents.iter().map(String::as_str).collect();
        builder = builder.node(name, *cats, &parents, table);
    }
    builder.build()
}

pub fn load(path: &Path) -> Result<StructuralCausalModel> {
    from_text(&std::fs::read_to_string(path)?, path)
}
