//! Self-attentive state encoder.
//!
//! A history of `(item, engaged)` tokens is embedded as item row + feedback
//! offset + learned position, then passed through `b` blocks of causally
//! masked multi-head dot-product attention followed by a point-wise ReLU FFN.
//! The state is the last row of the final block.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{fan_in_matrix, gaussian_matrix, slice1, slice1_mut, slice2, slice2_mut, ParamSet};

/// Standard deviation of the Gaussian embedding initializer.
pub const EMBEDDING_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interaction {
    pub item: usize,
    /// Binary feedback grouping: true for click or purchase, false for a pass.
    pub engaged: bool,
}

impl Interaction {
    pub fn new(item: usize, engaged: bool) -> Self {
        Self { item, engaged }
    }
}

/// Interactions ordered oldest to newest, at most `window` long.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryPrefix {
    items: Vec<Interaction>,
}

impl HistoryPrefix {
    /// Keeps the most recent `window` interactions.
    pub fn new(mut items: Vec<Interaction>, window: usize) -> Self {
        if items.len() > window {
            items.drain(..items.len() - window);
        }
        Self { items }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn items(&self) -> &[Interaction] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The prefix extended by one interaction, re-windowed.
    pub fn push(&self, next: Interaction, window: usize) -> Self {
        let mut items = self.items.clone();
        items.push(next);
        Self::new(items, window)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub catalog: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionBlock {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    /// Mixes the concatenated heads.
    pub wo: Array2<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl AttentionBlock {
    fn init<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Self {
        Self {
            wq: fan_in_matrix(rng, d, d, d),
            wk: fan_in_matrix(rng, d, d, d),
            wv: fan_in_matrix(rng, d, d, d),
            wo: fan_in_matrix(rng, d, d, d),
            w1: fan_in_matrix(rng, d, d, d),
            b1: Array1::zeros(d),
            w2: fan_in_matrix(rng, d, d, d),
            b2: Array1::zeros(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    /// Row 0 is the start token; item `i` lives in row `i + 1`.
    pub item: Array2<f64>,
    /// Additive offset per binary feedback class (row 0 pass, row 1 engaged).
    pub feedback: Array2<f64>,
    pub position: Array2<f64>,
    pub blocks: Vec<AttentionBlock>,
    pub heads: usize,
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(config: &EncoderConfig, rng: &mut R) -> Result<Self> {
        if config.heads == 0 || !config.dim.is_multiple_of(config.heads) {
            return Err(Error::invalid(format!(
                "embedding width {} is not divisible by {} heads",
                config.dim, config.heads
            )));
        }
        if config.window == 0 || config.catalog == 0 {
            return Err(Error::invalid("window and catalog must be positive"));
        }
        let d = config.dim;
        Ok(Self {
            item: gaussian_matrix(rng, config.catalog + 1, d, EMBEDDING_INIT_STD),
            feedback: gaussian_matrix(rng, 2, d, EMBEDDING_INIT_STD),
            position: gaussian_matrix(rng, config.window, d, EMBEDDING_INIT_STD),
            blocks: (0..config.blocks).map(|_| AttentionBlock::init(rng, d)).collect(),
            heads: config.heads,
        })
    }

    pub fn dim(&self) -> usize {
        self.item.ncols()
    }

    pub fn catalog(&self) -> usize {
        self.item.nrows() - 1
    }

    pub fn window(&self) -> usize {
        self.position.nrows()
    }

    /// Embedding of catalog item `a`, shared with the reward head and agent.
    pub fn action_embedding(&self, a: usize) -> ndarray::ArrayView1<'_, f64> {
        self.item.row(a + 1)
    }

    /// All catalog item embeddings, `|A| x d`.
    pub fn action_embeddings(&self) -> ndarray::ArrayView2<'_, f64> {
        self.item.slice(s![1.., ..])
    }
}

impl ParamSet for EncoderParams {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![slice2(&self.item), slice2(&self.feedback), slice2(&self.position)];
        for b in &self.blocks {
            out.extend([
                slice2(&b.wq),
                slice2(&b.wk),
                slice2(&b.wv),
                slice2(&b.wo),
                slice2(&b.w1),
                slice1(&b.b1),
                slice2(&b.w2),
                slice1(&b.b2),
            ]);
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            slice2_mut(&mut self.item),
            slice2_mut(&mut self.feedback),
            slice2_mut(&mut self.position),
        ];
        for b in &mut self.blocks {
            out.extend([
                slice2_mut(&mut b.wq),
                slice2_mut(&mut b.wk),
                slice2_mut(&mut b.wv),
                slice2_mut(&mut b.wo),
                slice2_mut(&mut b.w1),
                slice1_mut(&mut b.b1),
                slice2_mut(&mut b.w2),
                slice1_mut(&mut b.b2),
            ]);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Token {
    row: usize,
    flag: Option<usize>,
}

fn tokens(prefix: &HistoryPrefix, params: &EncoderParams) -> Result<Vec<Token>> {
    let items = prefix.items();
    let items = &items[items.len().saturating_sub(params.window())..];
    if items.is_empty() {
        return Ok(vec![Token { row: 0, flag: None }]);
    }
    items
        .iter()
        .map(|it| {
            if it.item >= params.catalog() {
                Err(Error::invalid(format!(
                    "item id {} outside catalog of {}",
                    it.item,
                    params.catalog()
                )))
            } else {
                Ok(Token {
                    row: it.item + 1,
                    flag: Some(it.engaged as usize),
                })
            }
        })
        .collect()
}

/// `Ê = E + P`: one row per interaction (or the start token for an empty history).
pub fn embed_sequence(prefix: &HistoryPrefix, params: &EncoderParams) -> Result<Array2<f64>> {
    Ok(embed_tokens(&tokens(prefix, params)?, params))
}

fn embed_tokens(tokens: &[Token], params: &EncoderParams) -> Array2<f64> {
    let mut e = Array2::zeros((tokens.len(), params.dim()));
    for (i, t) in tokens.iter().enumerate() {
        let mut row = e.row_mut(i);
        row += &params.item.row(t.row);
        if let Some(f) = t.flag {
            row += &params.feedback.row(f);
        }
        row += &params.position.row(i);
    }
    e
}

/// Intermediates of one block needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BlockTrace {
    input: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Row-stochastic, lower-triangular attention weights per head.
    pub attention: Vec<Array2<f64>>,
    concat: Array2<f64>,
    mixed: Array2<f64>,
    pre_relu: Array2<f64>,
}

fn block_forward(input: &Array2<f64>, block: &AttentionBlock, heads: usize) -> Result<(Array2<f64>, BlockTrace)> {
    let n = input.nrows();
    let d = input.ncols();
    let dh = d / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let q = input.dot(&block.wq);
    let k = input.dot(&block.wk);
    let v = input.dot(&block.wv);
    let mut concat = Array2::zeros((n, d));
    let mut attention = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let (qh, kh, vh) = (q.slice(cols), k.slice(cols), v.slice(cols));
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            // Keys after position i are masked out entirely.
            let mut m = f64::NEG_INFINITY;
            for j in 0..=i {
                let sc = qh.row(i).dot(&kh.row(j)) * scale;
                a[[i, j]] = sc;
                m = m.max(sc);
            }
            let mut z = 0.0;
            for j in 0..=i {
                let e = (a[[i, j]] - m).exp();
                a[[i, j]] = e;
                z += e;
            }
            for j in 0..=i {
                a[[i, j]] /= z;
            }
        }
        concat.slice_mut(cols).assign(&a.dot(&vh));
        attention.push(a);
    }
    let mixed = concat.dot(&block.wo);
    let pre_relu = mixed.dot(&block.w1) + &block.b1;
    let out = pre_relu.mapv(|x| x.max(0.0)).dot(&block.w2) + &block.b2;
    if !out.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("attention block output".into()));
    }
    Ok((
        out,
        BlockTrace {
            input: input.clone(),
            q,
            k,
            v,
            attention,
            concat,
            mixed,
            pre_relu,
        },
    ))
}

/// One self-attention block `S_out = FFN(SA(S_in))` with the causal mask.
pub fn attention_block(input: &Array2<f64>, params: &EncoderParams, block: usize) -> Result<Array2<f64>> {
    let b = params
        .blocks
        .get(block)
        .ok_or_else(|| Error::invalid(format!("block {block} does not exist")))?;
    if input.ncols() != params.dim() {
        return Err(Error::LengthMismatch {
            what: "attention block input width",
            left: input.ncols(),
            right: params.dim(),
        });
    }
    Ok(block_forward(input, b, params.heads)?.0)
}

/// Attention weights of every head of `block` for the given input.
pub fn attention_weights(input: &Array2<f64>, params: &EncoderParams, block: usize) -> Result<Vec<Array2<f64>>> {
    let b = params
        .blocks
        .get(block)
        .ok_or_else(|| Error::invalid(format!("block {block} does not exist")))?;
    Ok(block_forward(input, b, params.heads)?.1.attention)
}

/// Full forward pass keeping what the backward pass needs.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    tokens: Vec<Token>,
    blocks: Vec<BlockTrace>,
    /// Per-position output of the final block (the embedding when `b = 0`).
    pub output: Array2<f64>,
}

impl EncoderTrace {
    pub fn state(&self) -> Array1<f64> {
        self.output.row(self.output.nrows() - 1).to_owned()
    }

    /// Smallest `|pre-activation|` over every feed-forward ReLU unit.
    pub fn relu_margin(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.pre_relu.iter())
            .fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }
}

pub fn encode_traced(prefix: &HistoryPrefix, params: &EncoderParams) -> Result<EncoderTrace> {
    let tokens = tokens(prefix, params)?;
    let mut x = embed_tokens(&tokens, params);
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for b in &params.blocks {
        let (out, trace) = block_forward(&x, b, params.heads)?;
        blocks.push(trace);
        x = out;
    }
    Ok(EncoderTrace {
        tokens,
        blocks,
        output: x,
    })
}

/// Per-position encodings after every block (index 0 is the embedding).
pub fn encode_layers(prefix: &HistoryPrefix, params: &EncoderParams) -> Result<Vec<Array2<f64>>> {
    let trace = encode_traced(prefix, params)?;
    let mut layers: Vec<Array2<f64>> = trace.blocks.iter().map(|b| b.input.clone()).collect();
    layers.push(trace.output);
    Ok(layers)
}

/// The preference state `s`: last row of the final block.
pub fn encode_state(prefix: &HistoryPrefix, params: &EncoderParams) -> Result<Array1<f64>> {
    Ok(encode_traced(prefix, params)?.state())
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the state is `d_state`.
pub fn encode_backward(trace: &EncoderTrace, params: &EncoderParams, d_state: &[f64], grads: &mut EncoderParams) {
    let n = trace.output.nrows();
    let mut dx = Array2::zeros((n, params.dim()));
    dx.row_mut(n - 1).assign(&ndarray::ArrayView1::from(d_state));
    for (bi, bt) in trace.blocks.iter().enumerate().rev() {
        dx = block_backward(bt, &params.blocks[bi], params.heads, &dx, &mut grads.blocks[bi]);
    }
    for (i, t) in trace.tokens.iter().enumerate() {
        let g = dx.row(i);
        let mut r = grads.item.row_mut(t.row);
        r += &g;
        if let Some(f) = t.flag {
            let mut r = grads.feedback.row_mut(f);
            r += &g;
        }
        let mut r = grads.position.row_mut(i);
        r += &g;
    }
}

fn block_backward(
    t: &BlockTrace,
    block: &AttentionBlock,
    heads: usize,
    d_out: &Array2<f64>,
    g: &mut AttentionBlock,
) -> Array2<f64> {
    let d = t.input.ncols();
    let dh = d / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let relu = t.pre_relu.mapv(|x| x.max(0.0));

    g.w2 += &relu.t().dot(d_out);
    g.b2 += &d_out.sum_axis(Axis(0));
    let mut dz = d_out.dot(&block.w2.t());
    dz.zip_mut_with(&t.pre_relu, |g, &z| {
        if z <= 0.0 {
            *g = 0.0
        }
    });
    g.w1 += &t.mixed.t().dot(&dz);
    g.b1 += &dz.sum_axis(Axis(0));
    let d_mixed = dz.dot(&block.w1.t());
    g.wo += &t.concat.t().dot(&d_mixed);
    let d_concat = d_mixed.dot(&block.wo.t());

    let mut dq = Array2::zeros(t.q.raw_dim());
    let mut dk = Array2::zeros(t.k.raw_dim());
    let mut dv = Array2::zeros(t.v.raw_dim());
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = &t.attention[h];
        let d_head = d_concat.slice(cols);
        let da = d_head.dot(&t.v.slice(cols).t());
        dv.slice_mut(cols).assign(&a.t().dot(&d_head));
        let mut ds = Array2::zeros(a.raw_dim());
        for i in 0..a.nrows() {
            let dot: f64 = (0..=i).map(|j| a[[i, j]] * da[[i, j]]).sum();
            for j in 0..=i {
                ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * scale;
            }
        }
        dq.slice_mut(cols).assign(&ds.dot(&t.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&t.q.slice(cols)));
    }
    g.wq += &t.input.t().dot(&dq);
    g.wk += &t.input.t().dot(&dk);
    g.wv += &t.input.t().dot(&dv);
    dq.dot(&block.wq.t()) + dk.dot(&block.wk.t()) + dv.dot(&block.wv.t())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference, relative_error};
    use crate::rng::{normal, stream, Purpose};

    fn params(seed: u64, heads: usize, blocks: usize) -> EncoderParams {
        let cfg = EncoderConfig {
            catalog: 7,
            dim: 4,
            heads,
            blocks,
            window: 5,
        };
        let mut rng = stream(seed, Purpose::Init, &[]);
        let mut p = EncoderParams::init(&cfg, &mut rng).unwrap();
        // Unit-scale embeddings.
        for v in p.item.iter_mut().chain(p.position.iter_mut()).chain(p.feedback.iter_mut()) {
            *v = normal(&mut rng);
        }
        p
    }

    fn prefix(items: &[(usize, bool)]) -> HistoryPrefix {
        HistoryPrefix::new(items.iter().map(|&(i, e)| Interaction::new(i, e)).collect(), 5)
    }

    #[test]
    fn empty_prefix_is_start_token_plus_position_zero() {
        let p = params(1, 2, 1);
        let e = embed_sequence(&HistoryPrefix::empty(), &p).unwrap();
        assert_eq!(e.nrows(), 1);
        assert_eq!(e.row(0), &p.item.row(0) + &p.position.row(0));
    }

    #[test]
    fn single_item_with_zero_positions() {
        let mut p = params(2, 2, 1);
        p.position.fill(0.0);
        let e = embed_sequence(&prefix(&[(3, true)]), &p).unwrap();
        assert_eq!(e.row(0), &p.item.row(4) + &p.feedback.row(1));
    }

    #[test]
    fn prefixes_differing_at_the_end_differ_only_in_last_row() {
        let p = params(3, 2, 1);
        let a = embed_sequence(&prefix(&[(1, true), (2, false), (3, true)]), &p).unwrap();
        let b = embed_sequence(&prefix(&[(1, true), (2, false), (5, true)]), &p).unwrap();
        assert_eq!(a.slice(s![..2, ..]), b.slice(s![..2, ..]));
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn windowing_keeps_most_recent() {
        let h = HistoryPrefix::new((0..8).map(|i| Interaction::new(i % 7, true)).collect(), 5);
        assert_eq!(h.len(), 5);
        assert_eq!(h.items()[0].item, 3);
    }

    #[test]
    fn out_of_catalog_item_is_rejected() {
        let p = params(4, 1, 1);
        assert!(embed_sequence(&prefix(&[(7, true)]), &p).is_err());
    }

    #[test]
    fn width_must_divide_by_heads() {
        let cfg = EncoderConfig {
            catalog: 3,
            dim: 5,
            heads: 2,
            blocks: 1,
            window: 4,
        };
        assert!(EncoderParams::init(&cfg, &mut stream(0, Purpose::Init, &[])).is_err());
    }

    #[test]
    fn singleton_attention_is_one() {
        let p = params(5, 2, 1);
        let x = embed_sequence(&prefix(&[(2, true)]), &p).unwrap();
        for a in attention_weights(&x, &p, 0).unwrap() {
            assert_eq!(a[[0, 0]], 1.0);
        }
        // With one row the block reduces to FFN(x Wv Wo).
        let b = &p.blocks[0];
        let h = x.dot(&b.wv).dot(&b.wo);
        let expect = (h.dot(&b.w1) + &b.b1).mapv(|v| v.max(0.0)).dot(&b.w2) + &b.b2;
        let got = attention_block(&x, &p, 0).unwrap();
        for (g, e) in got.iter().zip(expect.iter()) {
            assert!((g - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_blocks_returns_last_embedding_row() {
        let p = params(6, 1, 0);
        let pre = prefix(&[(1, true), (4, false)]);
        let e = embed_sequence(&pre, &p).unwrap();
        assert_eq!(encode_state(&pre, &p).unwrap(), e.row(1));
    }

    #[test]
    fn encoder_gradient_matches_finite_differences() {
        for seed in 0..3 {
            let p = params(10 + seed, 2, 2);
            let pre = prefix(&[(1, true), (4, false), (2, true), (6, true)]);
            let mut rng = stream(seed, Purpose::Init, &[99]);
            let c: Vec<f64> = (0..p.dim()).map(|_| normal(&mut rng)).collect();
            let readout = |q: &EncoderParams| {
                let s = encode_state(&pre, q).unwrap();
                s.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let trace = encode_traced(&pre, &p).unwrap();
            let mut g = p.zeros_like();
            encode_backward(&trace, &p, &c, &mut g);
            let fd = finite_difference(&p, 1e-5, readout);
            let err = relative_error(&g.flatten(), &fd);
            assert!(err < 1e-4, "relative error {err}");
        }
    }
}
