//! Instruction encoder, graph-aware cross-modal transformer and score heads,
//! all expressed on the autodiff tape.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Vec3};
use crate::memory::{MemoryMap, NodeKind, STOP_ID};
use crate::rng::{rng_from, Rng};
use crate::tape::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::world::{NodeId, Vocabulary};

/// Hop buckets `{0, 1, 2, 3, >=4, disconnected}`.
pub const HOP_BUCKETS: usize = 6;
/// `(dx, dy, dz, distance, sin heading, cos heading)`.
pub const LOCATION_DIM: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub d_model: usize,
    pub heads: usize,
    pub instr_layers: usize,
    pub graph_layers: usize,
    pub d_ff: usize,
    pub max_tokens: usize,
    /// Step codes above this share the last embedding row.
    pub max_step: usize,
    pub feature_dim: usize,
    pub room_vocab: usize,
    pub object_vocab: usize,
    pub separate_imagination_encoder: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            instr_layers: 2,
            graph_layers: 2,
            d_ff: 128,
            max_tokens: 96,
            max_step: 32,
            feature_dim: 64,
            room_vocab: 8,
            object_vocab: 16,
            separate_imagination_encoder: false,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return Err(Error::Config(format!("d_model {} not divisible into {} heads", self.d_model, self.heads)));
        }
        if self.d_ff == 0 || self.max_tokens == 0 || self.feature_dim == 0 {
            return Err(Error::Config("zero-sized policy dimension".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    Dynamic,
    Fixed(f64),
}

#[derive(Clone, Debug)]
struct Attn {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
}

#[derive(Clone, Debug)]
struct Ffn {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: Option<ParamId>,
}

#[derive(Clone, Debug)]
struct Norm {
    g: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct InstrLayer {
    attn: Attn,
    ln1: Norm,
    ffn: Ffn,
    ln2: Norm,
}

#[derive(Clone, Debug)]
struct GraphLayer {
    hop_bias: ParamId,
    attn: Attn,
    ln1: Norm,
    ffn: Ffn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
}

#[derive(Clone, Debug)]
struct NodeIn {
    w_feat: ParamId,
    b: ParamId,
    w_loc: ParamId,
}

#[derive(Clone, Debug)]
struct Ids {
    tok: ParamId,
    pos: ParamId,
    typ: ParamId,
    ins_ln: Norm,
    instr: Vec<InstrLayer>,
    node_in: NodeIn,
    node_in_imag: Option<NodeIn>,
    step_emb: ParamId,
    kind_emb: ParamId,
    node_ln: Norm,
    graph: Vec<GraphLayer>,
    score_r: Ffn,
    score_i: Ffn,
    fusion: Ffn,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut Rng,
}

impl Builder<'_> {
    fn weight(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..=bound)).collect();
        self.store.push(name, Tensor::from_vec(rows, cols, data))
    }

    fn filled(&mut self, name: String, rows: usize, cols: usize, v: f64) -> ParamId {
        self.store.push(name, Tensor::filled(rows, cols, v))
    }

    fn linear(&mut self, name: &str, rows: usize, cols: usize) -> (ParamId, ParamId) {
        (self.weight(format!("{name}.w"), rows, cols, rows), self.filled(format!("{name}.b"), 1, cols, 0.0))
    }

    fn attn(&mut self, name: &str, d: usize) -> Attn {
        let (wq, bq) = self.linear(&format!("{name}.q"), d, d);
        // no key bias: it shifts every logit of a query row equally
        let wk = self.weight(format!("{name}.k.w"), d, d, d);
        let (wv, bv) = self.linear(&format!("{name}.v"), d, d);
        let (wo, bo) = self.linear(&format!("{name}.o"), d, d);
        Attn { wq, bq, wk, wv, bv, wo, bo }
    }

    fn ffn(&mut self, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Ffn {
        let (w1, b1) = self.linear(&format!("{name}.1"), d_in, hidden);
        let (w2, b2) = self.linear(&format!("{name}.2"), hidden, d_out);
        Ffn { w1, b1, w2, b2: Some(b2) }
    }

    fn ffn_unbiased(&mut self, name: &str, d_in: usize, hidden: usize, d_out: usize) -> Ffn {
        let (w1, b1) = self.linear(&format!("{name}.1"), d_in, hidden);
        let w2 = self.weight(format!("{name}.2.w"), hidden, d_out, hidden);
        Ffn { w1, b1, w2, b2: None }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm { g: self.filled(format!("{name}.g"), 1, d, 1.0), b: self.filled(format!("{name}.b"), 1, d, 0.0) }
    }

    fn node_in(&mut self, name: &str, f: usize, d: usize) -> NodeIn {
        let (w_feat, b) = self.linear(&format!("{name}.feat"), f, d);
        let w_loc = self.weight(format!("{name}.loc.w"), LOCATION_DIM, d, LOCATION_DIM);
        NodeIn { w_feat, b, w_loc }
    }
}

/// Everything the cross-modal transformer needs about one memory map.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphInput {
    pub ids: Vec<NodeId>,
    pub kinds: Vec<NodeKind>,
    pub positions: Vec<Vec3>,
    pub features: Tensor,
    pub locations: Tensor,
    pub steps: Vec<usize>,
    /// Row-major `n × n` hop-bucket indices.
    pub hop_buckets: Vec<usize>,
}

impl GraphInput {
    /// All map nodes in ascending id order.
    pub fn from_map(map: &MemoryMap, step: usize) -> Result<Self> {
        let order: Vec<NodeId> = map.nodes().map(|n| n.id).collect();
        Self::from_map_ordered(map, step, &order)
    }

    pub fn from_map_ordered(map: &MemoryMap, step: usize, order: &[NodeId]) -> Result<Self> {
        let n = order.len();
        let dim = map.feature_dim().ok_or_else(|| Error::Shape("map has no features yet".into()))?;
        let mut features = Tensor::zeros(n, dim);
        let mut locations = Tensor::zeros(n, LOCATION_DIM);
        let mut kinds = Vec::with_capacity(n);
        let mut positions = Vec::with_capacity(n);
        let mut steps = Vec::with_capacity(n);
        for (r, &id) in order.iter().enumerate() {
            let node = map.node(id)?;
            let e = map.embedding_inputs(id, step)?;
            features.row_mut(r).copy_from_slice(&e.feature);
            let [dx, dy, dz, dist, h] = e.location;
            locations.row_mut(r).copy_from_slice(&[dx, dy, dz, dist, h.sin(), h.cos()]);
            kinds.push(node.kind);
            positions.push(node.position);
            steps.push(e.step);
        }
        let hops = map.hop_matrix(order);
        let hop_buckets = hops.iter().flatten().map(|h| h.map_or(HOP_BUCKETS - 1, |h| h.min(4))).collect();
        Ok(Self { ids: order.to_vec(), kinds, positions, features, locations, steps, hop_buckets })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn rows_where(&self, pred: impl Fn(NodeKind) -> bool) -> Vec<usize> {
        (0..self.len()).filter(|&r| pred(self.kinds[r])).collect()
    }

    /// Row of each Imagination node's nearest Navigable node (ties by id), as
    /// indices into `candidate_rows`.
    pub fn assignment(&self, imag_rows: &[usize], candidate_rows: &[usize]) -> Result<Vec<usize>> {
        let nav: Vec<usize> = (0..candidate_rows.len())
            .filter(|&c| self.kinds[candidate_rows[c]] == NodeKind::Navigable)
            .collect();
        if !imag_rows.is_empty() && nav.is_empty() {
            return Err(Error::Fusion("imagination nodes present but no navigable node".into()));
        }
        Ok(imag_rows
            .iter()
            .map(|&i| {
                *nav.iter()
                    .min_by(|&&a, &&b| {
                        let da = distance(&self.positions[i], &self.positions[candidate_rows[a]]);
                        let db = distance(&self.positions[i], &self.positions[candidate_rows[b]]);
                        da.total_cmp(&db).then(self.ids[candidate_rows[a]].cmp(&self.ids[candidate_rows[b]]))
                    })
                    .expect("nonempty navigable set")
            })
            .collect())
    }
}

/// Graph handles produced by one decision step.
#[derive(Clone, Debug)]
pub struct Forward {
    /// Navigable ids in ascending order, then Stop.
    pub candidates: Vec<NodeId>,
    pub imagination: Vec<NodeId>,
    pub s_r: Var,
    pub s_i: Option<Var>,
    pub gamma: Var,
    pub fused: Var,
    /// `assignment[k]` is the candidate index Imagination node `k` feeds.
    pub assignment: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub config: PolicyConfig,
    pub params: ParamStore,
    ids: Ids,
    token_types: Vec<usize>,
}

impl Policy {
    pub fn new(config: PolicyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = rng_from(seed);
        let ids = Self::build(&config, &mut params, &mut rng);
        let vocab = Vocabulary::new(config.room_vocab, config.object_vocab);
        let token_types = (0..vocab.len()).map(|t| vocab.kind(t).expect("token in range").index()).collect();
        Ok(Self { config, params, ids, token_types })
    }

    /// Rebuild from stored tensors, checking names and shapes.
    pub fn from_params(config: PolicyConfig, params: ParamStore) -> Result<Self> {
        let mut p = Self::new(config, 0)?;
        if p.params.names != params.names {
            return Err(Error::Checkpoint("policy tensor names do not match the configuration".into()));
        }
        for (name, (a, b)) in p.params.names.iter().zip(p.params.tensors.iter().zip(&params.tensors)) {
            if a.shape() != b.shape() {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", b.shape(), a.shape())));
            }
        }
        p.params = params;
        Ok(p)
    }

    fn build(c: &PolicyConfig, store: &mut ParamStore, rng: &mut Rng) -> Ids {
        let d = c.d_model;
        let vocab = Vocabulary::new(c.room_vocab, c.object_vocab).len();
        let mut b = Builder { store, rng };
        let tok = b.weight("instr.tok".into(), vocab, d, d);
        let pos = b.weight("instr.pos".into(), c.max_tokens, d, d);
        let typ = b.weight("instr.type".into(), 4, d, d);
        let ins_ln = b.norm("instr.ln", d);
        let instr = (0..c.instr_layers)
            .map(|l| InstrLayer {
                attn: b.attn(&format!("instr.{l}.attn"), d),
                ln1: b.norm(&format!("instr.{l}.ln1"), d),
                ffn: b.ffn(&format!("instr.{l}.ffn"), d, c.d_ff, d),
                ln2: b.norm(&format!("instr.{l}.ln2"), d),
            })
            .collect();
        let node_in = b.node_in("node.in", c.feature_dim, d);
        let node_in_imag = c.separate_imagination_encoder.then(|| b.node_in("node.in_imag", c.feature_dim, d));
        let step_emb = b.weight("node.step".into(), c.max_step + 1, d, d);
        let kind_emb = b.weight("node.kind".into(), NodeKind::COUNT, d, d);
        let node_ln = b.norm("node.ln", d);
        let graph = (0..c.graph_layers)
            .map(|l| GraphLayer {
                hop_bias: b.filled(format!("gasa.{l}.hop_bias"), 1, HOP_BUCKETS, 0.0),
                attn: b.attn(&format!("gasa.{l}.attn"), d),
                ln1: b.norm(&format!("gasa.{l}.ln1"), d),
                ffn: b.ffn(&format!("gasa.{l}.ffn"), d, c.d_ff, d),
                ln2: b.norm(&format!("gasa.{l}.ln2"), d),
                cross: b.attn(&format!("gasa.{l}.cross"), d),
                ln3: b.norm(&format!("gasa.{l}.ln3"), d),
            })
            .collect();
        // no output bias on s_r: it shifts every fused score equally
        let score_r = b.ffn_unbiased("score.real", d, d, 1);
        let score_i = b.ffn("score.imag", d, d, 1);
        let fusion = b.ffn("fusion", 2 * d, d, 1);
        Ids {
            tok,
            pos,
            typ,
            ins_ln,
            instr,
            node_in,
            node_in_imag,
            step_emb,
            kind_emb,
            node_ln,
            graph,
            score_r,
            score_i,
            fusion,
        }
    }

    /// Names of the tensors in the fusion FFN's output layer (weight, bias).
    pub fn fusion_output_names(&self) -> [&str; 2] {
        let b2 = self.ids.fusion.b2.expect("fusion output bias");
        [&self.params.names[self.ids.fusion.w2.0], &self.params.names[b2.0]]
    }

    /// Name of the imagination score head's output bias. The real head has none.
    pub fn score_bias_name(&self) -> &str {
        &self.params.names[self.ids.score_i.b2.expect("imagination score bias").0]
    }

    fn linear(&self, g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = g.param(w);
        let b = g.param(b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    fn ffn(&self, g: &mut Graph, x: Var, f: &Ffn) -> Var {
        let h = self.linear(g, x, f.w1, f.b1);
        let h = g.gelu(h);
        match f.b2 {
            Some(b2) => self.linear(g, h, f.w2, b2),
            None => {
                let w2 = g.param(f.w2);
                g.matmul(h, w2)
            }
        }
    }

    fn norm(&self, g: &mut Graph, x: Var, n: &Norm) -> Var {
        let gain = g.param(n.g);
        let bias = g.param(n.b);
        g.layer_norm(x, gain, bias)
    }

    /// Multi-head attention of `xq` rows over `xkv` rows. `bias` (n_q × n_kv)
    /// is added to every head's logits. Returns the output projection and
    /// the per-head attention weights.
    fn attention(&self, g: &mut Graph, xq: Var, xkv: Var, a: &Attn, bias: Option<Var>) -> (Var, Vec<Var>) {
        let d = self.config.d_model;
        let dh = d / self.config.heads;
        let q = self.linear(g, xq, a.wq, a.bq);
        let wk = g.param(a.wk);
        let k = g.matmul(xkv, wk);
        let v = self.linear(g, xkv, a.wv, a.bv);
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut weights = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let logits = g.matmul_t(qh, kh);
            let mut logits = g.scale(logits, 1.0 / (dh as f64).sqrt());
            if let Some(b) = bias {
                logits = g.add(logits, b);
            }
            let p = g.softmax_rows(logits);
            weights.push(p);
            heads.push(g.matmul(p, vh));
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads) };
        (self.linear(g, cat, a.wo, a.bo), weights)
    }

    /// Token + position + type embeddings through the instruction layers.
    pub fn encode_instruction(&self, g: &mut Graph, tokens: &[usize]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::Encoding("empty instruction".into()));
        }
        if tokens.len() > self.config.max_tokens {
            return Err(Error::Encoding(format!("{} tokens exceed the limit {}", tokens.len(), self.config.max_tokens)));
        }
        let mut types = Vec::with_capacity(tokens.len());
        for &t in tokens {
            types.push(*self.token_types.get(t).ok_or_else(|| Error::Encoding(format!("token {t} out of vocabulary")))?);
        }
        let tok = g.param(self.ids.tok);
        let pos = g.param(self.ids.pos);
        let typ = g.param(self.ids.typ);
        let e = g.gather_rows(tok, tokens.to_vec());
        let p = g.gather_rows(pos, (0..tokens.len()).collect());
        let t = g.gather_rows(typ, types);
        let x = g.add(e, p);
        let x = g.add(x, t);
        let mut x = self.norm(g, x, &self.ids.ins_ln);
        for layer in &self.ids.instr {
            let (a, _) = self.attention(g, x, x, &layer.attn, None);
            let r = g.add(x, a);
            let h = self.norm(g, r, &layer.ln1);
            let f = self.ffn(g, h, &layer.ffn);
            let r = g.add(h, f);
            x = self.norm(g, r, &layer.ln2);
        }
        Ok(x)
    }

    fn project(&self, g: &mut Graph, input: &GraphInput, rows: &[usize], p: &NodeIn) -> Var {
        let f = g.input(gather(&input.features, rows));
        let l = g.input(gather(&input.locations, rows));
        let x = self.linear(g, f, p.w_feat, p.b);
        let wl = g.param(p.w_loc);
        let lx = g.matmul(l, wl);
        g.add(x, lx)
    }

    /// Node embeddings: feature and location projections, step and kind
    /// embeddings, then a layer norm.
    pub fn embed_nodes(&self, g: &mut Graph, input: &GraphInput) -> Result<Var> {
        if input.features.cols != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "node features have {} columns, policy expects {}",
                input.features.cols, self.config.feature_dim
            )));
        }
        let n = input.len();
        let x = match &self.ids.node_in_imag {
            None => self.project(g, input, &(0..n).collect::<Vec<_>>(), &self.ids.node_in),
            Some(imag_in) => {
                let real = input.rows_where(NodeKind::is_real);
                let imag = input.rows_where(|k| !k.is_real());
                let mut parts = Vec::new();
                if !real.is_empty() {
                    parts.push(self.project(g, input, &real, &self.ids.node_in));
                }
                if !imag.is_empty() {
                    parts.push(self.project(g, input, &imag, imag_in));
                }
                let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
                let mut inverse = vec![0; n];
                for (pos, &r) in real.iter().chain(&imag).enumerate() {
                    inverse[r] = pos;
                }
                g.gather_rows(stacked, inverse)
            }
        };
        let step_tab = g.param(self.ids.step_emb);
        let steps = input.steps.iter().map(|&s| s.min(self.config.max_step)).collect();
        let s = g.gather_rows(step_tab, steps);
        let kind_tab = g.param(self.ids.kind_emb);
        let k = g.gather_rows(kind_tab, input.kinds.iter().map(|k| k.index()).collect());
        let x = g.add(x, s);
        let x = g.add(x, k);
        Ok(self.norm(g, x, &self.ids.node_ln))
    }

    /// One graph-aware self-attention block: biased attention, residual,
    /// layer norm, position-wise FFN, residual, layer norm.
    pub fn gasa_attention(&self, g: &mut Graph, x: Var, hop_buckets: &[usize], layer: usize) -> Result<(Var, Vec<Var>)> {
        let l = self.ids.graph.get(layer).ok_or_else(|| Error::Shape(format!("no GASA layer {layer}")))?;
        let (n, d) = g.value(x).shape();
        if d != self.config.d_model || hop_buckets.len() != n * n {
            return Err(Error::Shape(format!("GASA input {n}x{d} with {} hop entries", hop_buckets.len())));
        }
        let table = g.param(l.hop_bias);
        let bias = g.gather_scalar(table, n, n, hop_buckets.to_vec());
        let (a, weights) = self.attention(g, x, x, &l.attn, Some(bias));
        let r = g.add(x, a);
        let h = self.norm(g, r, &l.ln1);
        let f = self.ffn(g, h, &l.ffn);
        let r = g.add(h, f);
        Ok((self.norm(g, r, &l.ln2), weights))
    }

    fn cross_attention(&self, g: &mut Graph, x: Var, instr: Var, layer: usize) -> Var {
        let l = &self.ids.graph[layer];
        let (a, _) = self.attention(g, x, instr, &l.cross, None);
        let r = g.add(x, a);
        self.norm(g, r, &l.ln3)
    }

    /// Contextual vectors for every node of `input`, in its row order.
    pub fn cross_modal_encode(&self, g: &mut Graph, input: &GraphInput, instr: Var) -> Result<Var> {
        if input.is_empty() {
            return Err(Error::Shape("empty graph input".into()));
        }
        if g.value(instr).rows == 0 {
            return Err(Error::Encoding("empty instruction".into()));
        }
        let mut x = self.embed_nodes(g, input)?;
        for layer in 0..self.ids.graph.len() {
            x = self.gasa_attention(g, x, &input.hop_buckets, layer)?.0;
            x = self.cross_attention(g, x, instr, layer);
        }
        Ok(x)
    }

    /// Two-layer score head applied row-wise; returns an n×1 column.
    pub fn score_nodes(&self, g: &mut Graph, v: Var, imagination: bool) -> Var {
        let head = if imagination { &self.ids.score_i } else { &self.ids.score_r };
        self.ffn(g, v, head)
    }

    /// `sigmoid(FFN([mean(V_r), mean(V_i)]))`; the imagined pool is zero
    /// when there are no imagination nodes.
    pub fn fusion_factor(&self, g: &mut Graph, v_real: Var, v_imag: Option<Var>) -> Var {
        let pr = g.mean_rows(v_real);
        let pi = match v_imag {
            Some(v) => g.mean_rows(v),
            None => g.input(Tensor::zeros(1, self.config.d_model)),
        };
        let cat = g.concat_cols(&[pr, pi]);
        let z = self.ffn(g, cat, &self.ids.fusion);
        g.sigmoid(z)
    }

    /// Full decision step on the tape.
    pub fn forward(&self, g: &mut Graph, input: &GraphInput, instr: Var, gamma: GammaMode) -> Result<Forward> {
        let cand_rows = candidate_rows(input);
        if cand_rows.is_empty() {
            return Err(Error::Shape("no candidate nodes".into()));
        }
        let imag_rows = input.rows_where(|k| k == NodeKind::Imagination);
        let real_rows = input.rows_where(NodeKind::is_real);
        let assignment = input.assignment(&imag_rows, &cand_rows)?;

        let enc = self.cross_modal_encode(g, input, instr)?;
        let v_real = g.gather_rows(enc, real_rows);
        let v_cand = g.gather_rows(enc, cand_rows.clone());
        let s_col = self.score_nodes(g, v_cand, false);
        let s_r = g.transpose(s_col);
        let v_imag = (!imag_rows.is_empty()).then(|| g.gather_rows(enc, imag_rows.clone()));
        let gamma = match gamma {
            GammaMode::Dynamic => self.fusion_factor(g, v_real, v_imag),
            GammaMode::Fixed(v) => g.input(Tensor::scalar(v)),
        };
        let (s_i, fused) = match v_imag {
            None => (None, s_r),
            Some(vi) => {
                let col = self.score_nodes(g, vi, true);
                let s_i = g.transpose(col);
                let mut a = Tensor::zeros(imag_rows.len(), cand_rows.len());
                for (k, &c) in assignment.iter().enumerate() {
                    a.data[k * cand_rows.len() + c] = 1.0;
                }
                let a = g.input(a);
                let agg = g.matmul(s_i, a);
                let weighted = g.mul_scalar(agg, gamma);
                (Some(s_i), g.add(s_r, weighted))
            }
        };
        Ok(Forward {
            candidates: cand_rows.iter().map(|&r| input.ids[r]).collect(),
            imagination: imag_rows.iter().map(|&r| input.ids[r]).collect(),
            s_r,
            s_i,
            gamma,
            fused,
            assignment,
        })
    }
}

/// Rows of Navigable nodes in ascending id order, then the Stop row.
pub fn candidate_rows(input: &GraphInput) -> Vec<usize> {
    let mut nav = input.rows_where(|k| k == NodeKind::Navigable);
    nav.sort_by_key(|&r| input.ids[r]);
    nav.extend(input.ids.iter().position(|&id| id == STOP_ID));
    nav
}

fn gather(t: &Tensor, rows: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(rows.len(), t.cols);
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(t.row(r));
    }
    out
}
