//! Lite generators trained on visited-node transitions: a structured head
//! (geometry + semantic) and an appearance head conditioned on the parent.

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng as _;

use super::HistoryEntry;
use crate::error::{Error, Result};
use crate::geometry::{sub, Vec3};
use crate::rng::rng_from;
use crate::tape::{softmax, Graph, ParamId, ParamStore, Tensor, Var};
use crate::world::FeatureLayout;

static CLAMP_WARNINGS: AtomicUsize = AtomicUsize::new(0);
const PROB_FLOOR: f64 = 1e-12;

/// How many predicted semantic entries were clamped to 1e-12 so far.
pub fn clamp_warnings() -> usize {
    CLAMP_WARNINGS.load(Ordering::Relaxed)
}

/// `−λ Σ gt_s log(pred_s) + (1 − λ)·mean|pred_g − gt_g|`.
pub fn inpaint_lite_loss(
    pred_semantic: &[f64],
    pred_geometry: &[f64],
    gt_semantic: &[f64],
    gt_geometry: &[f64],
    lambda: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Domain(format!("lambda {lambda} outside [0, 1]")));
    }
    if pred_semantic.len() != gt_semantic.len() || pred_geometry.len() != gt_geometry.len() {
        return Err(Error::Shape("prediction and target lengths differ".into()));
    }
    let mut ce = 0.0;
    for (&p, &t) in pred_semantic.iter().zip(gt_semantic) {
        if t == 0.0 {
            continue;
        }
        let p = if p < PROB_FLOOR {
            CLAMP_WARNINGS.fetch_add(1, Ordering::Relaxed);
            PROB_FLOOR
        } else {
            p
        };
        ce -= t * p.ln();
    }
    let l1 = if gt_geometry.is_empty() {
        0.0
    } else {
        pred_geometry.iter().zip(gt_geometry).map(|(p, t)| (p - t).abs()).sum::<f64>() / gt_geometry.len() as f64
    };
    Ok(lambda * ce + (1.0 - lambda) * l1)
}

pub const LEARNED_HIDDEN: usize = 64;

/// One training example: history, target position and the target's channels.
#[derive(Clone, Debug)]
pub struct TransitionSample {
    pub history: Vec<HistoryEntry>,
    pub parent_appearance: Vec<f64>,
    pub target: Vec3,
    pub appearance: Vec<f64>,
    pub geometry: Vec<f64>,
    pub semantic: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LearnedImaginer {
    pub params: ParamStore,
    pub layout: FeatureLayout,
    pub history_len: usize,
    ids: [ParamId; 10],
}

impl LearnedImaginer {
    pub fn new(layout: FeatureLayout, history_len: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let mut layer = |name: &str, i: usize, o: usize| {
            let bound = 1.0 / (i as f64).sqrt();
            let w = Tensor::from_vec(i, o, (0..i * o).map(|_| rng.random_range(-bound..=bound)).collect());
            (params.push(format!("{name}.w"), w), params.push(format!("{name}.b"), Tensor::zeros(1, o)))
        };
        let s_in = Self::structured_width(layout, history_len);
        let (sh, shb) = layer("imaginer.structured.hidden", s_in, LEARNED_HIDDEN);
        let (sg, sgb) = layer("imaginer.structured.geometry", LEARNED_HIDDEN, layout.geometry);
        let (ss, ssb) = layer("imaginer.structured.semantic", LEARNED_HIDDEN, layout.semantic);
        let a_in = layout.appearance + layout.geometry + layout.semantic;
        let (ah, ahb) = layer("imaginer.appearance.hidden", a_in, LEARNED_HIDDEN);
        let (ao, aob) = layer("imaginer.appearance.out", LEARNED_HIDDEN, layout.appearance);
        Self {
            params,
            layout,
            history_len,
            ids: [sh, shb, sg, sgb, ss, ssb, ah, ahb, ao, aob],
        }
    }

    pub fn from_params(layout: FeatureLayout, history_len: usize, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(layout, history_len, 0);
        if m.params.names != params.names
            || m.params.tensors.iter().zip(&params.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("imaginer tensors do not match the configuration".into()));
        }
        m.params = params;
        Ok(m)
    }

    fn structured_width(layout: FeatureLayout, k: usize) -> usize {
        k * (layout.geometry + layout.semantic + 4)
    }

    /// Newest-last history slots, each `[geometry, semantic, p − target, present]`.
    fn structured_input(&self, history: &[HistoryEntry], target: &Vec3) -> Vec<f64> {
        let slot = self.layout.geometry + self.layout.semantic + 4;
        let mut x = vec![0.0; self.history_len * slot];
        let keep = history.len().min(self.history_len);
        let offset = self.history_len - keep;
        for (i, h) in history[history.len() - keep..].iter().enumerate() {
            let row = &mut x[(offset + i) * slot..(offset + i + 1) * slot];
            row[..self.layout.geometry].copy_from_slice(&h.geometry);
            row[self.layout.geometry..self.layout.geometry + self.layout.semantic].copy_from_slice(&h.semantic);
            let d = sub(&h.position, target);
            row[slot - 4..slot - 1].copy_from_slice(&d);
            row[slot - 1] = 1.0;
        }
        x
    }

    fn layer(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = g.param(w);
        let b = g.param(b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }

    /// Geometry (sigmoid) and semantic logits.
    fn structured_forward(&self, g: &mut Graph, x: Var) -> (Var, Var) {
        let [sh, shb, sg, sgb, ss, ssb, ..] = self.ids;
        let h = Self::layer(g, x, sh, shb);
        let h = g.gelu(h);
        let geo = Self::layer(g, h, sg, sgb);
        let geo = g.sigmoid(geo);
        (geo, Self::layer(g, h, ss, ssb))
    }

    fn appearance_forward(&self, g: &mut Graph, x: Var) -> Var {
        let [.., ah, ahb, ao, aob] = self.ids;
        let h = Self::layer(g, x, ah, ahb);
        let h = g.gelu(h);
        Self::layer(g, h, ao, aob)
    }

    pub fn structured(&self, history: &[HistoryEntry], target: &Vec3) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::row_vector(self.structured_input(history, target)));
        let (geo, sem) = self.structured_forward(&mut g, x);
        (g.value(geo).data.clone(), softmax(&g.value(sem).data))
    }

    pub fn appearance(&self, parent: &[f64], geometry: &[f64], semantic: &[f64]) -> Vec<f64> {
        let mut row = parent.to_vec();
        row.extend_from_slice(geometry);
        row.extend_from_slice(semantic);
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::row_vector(row));
        let y = self.appearance_forward(&mut g, x);
        g.value(y).data.clone()
    }

    /// Batch objective: the inpaint loss on structured channels plus mean
    /// squared appearance error. Returns (inpaint loss, appearance loss, grads).
    pub fn batch_loss(&self, batch: &[TransitionSample], lambda: f64) -> (f64, f64, Vec<Tensor>) {
        let n = batch.len();
        let mut g = Graph::new(&self.params);
        let xs: Vec<f64> = batch.iter().flat_map(|s| self.structured_input(&s.history, &s.target)).collect();
        let x = g.input(Tensor::from_vec(n, Self::structured_width(self.layout, self.history_len), xs));
        let (geo, sem) = self.structured_forward(&mut g, x);
        let gt_geo = g.input(Tensor::from_vec(n, self.layout.geometry, batch.iter().flat_map(|s| s.geometry.clone()).collect()));
        let diff = g.sub(geo, gt_geo);
        let l1 = g.abs_mean(diff);
        let mut ce = None;
        for (r, s) in batch.iter().enumerate() {
            let row = g.gather_rows(sem, vec![r]);
            let l = g.soft_cross_entropy(row, s.semantic.clone());
            ce = Some(match ce {
                None => l,
                Some(t) => g.add(t, l),
            });
        }
        let ce = ce.expect("nonempty batch");
        let ce = g.scale(ce, lambda / n as f64);
        let l1 = g.scale(l1, 1.0 - lambda);
        let inpaint = g.add(ce, l1);

        let a_in: Vec<f64> = batch
            .iter()
            .flat_map(|s| s.parent_appearance.iter().chain(&s.geometry).chain(&s.semantic).copied())
            .collect();
        let a_x = g.input(Tensor::from_vec(n, self.layout.len(), a_in));
        let app = self.appearance_forward(&mut g, a_x);
        let gt_app =
            g.input(Tensor::from_vec(n, self.layout.appearance, batch.iter().flat_map(|s| s.appearance.clone()).collect()));
        let d = g.sub(app, gt_app);
        let sq = g.mul(d, d);
        let app_loss = g.mean_all(sq);
        let total = g.add(inpaint, app_loss);
        let (a, b) = (g.scalar(inpaint), g.scalar(app_loss));
        (a, b, g.backward(total))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_hot_match_is_free() {
        let l = inpaint_lite_loss(&[0.0, 1.0, 0.0], &[0.2, 0.4], &[0.0, 1.0, 0.0], &[0.2, 0.4], 0.5).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn lambda_zero_is_geometry_mae() {
        let l = inpaint_lite_loss(&[0.5, 0.5], &[0.0, 1.0, 0.5], &[1.0, 0.0], &[0.5, 0.5, 0.5], 0.0).unwrap();
        assert!((l - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn two_term_hand_computation() {
        let (ps, pg) = ([0.2, 0.5, 0.3], [0.1, 0.9]);
        let (ts, tg) = ([0.1, 0.6, 0.3], [0.3, 0.6]);
        let ce = -(0.1 * 0.2f64.ln() + 0.6 * 0.5f64.ln() + 0.3 * 0.3f64.ln());
        let mae = (0.2 + 0.3) / 2.0;
        let l = inpaint_lite_loss(&ps, &pg, &ts, &tg, 0.3).unwrap();
        assert!((l - (0.3 * ce + 0.7 * mae)).abs() < 1e-14);
    }

    #[test]
    fn zero_probability_is_clamped() {
        let before = clamp_warnings();
        let l = inpaint_lite_loss(&[0.0, 1.0], &[], &[0.5, 0.5], &[], 1.0).unwrap();
        assert!((l - 0.5 * -(1e-12f64).ln()).abs() < 1e-9);
        assert!(clamp_warnings() > before);
    }

    #[test]
    fn forward_shapes() {
        let layout = FeatureLayout { appearance: 4, geometry: 3, semantic: 5 };
        let m = LearnedImaginer::new(layout, 2, 3);
        let h = HistoryEntry { geometry: vec![0.1; 3], semantic: vec![0.2; 5], position: [0.0; 3] };
        let (geo, sem) = m.structured(&[h], &[1.0, 0.0, 0.0]);
        assert_eq!((geo.len(), sem.len()), (3, 5));
        assert!((sem.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(m.appearance(&[0.5; 4], &geo, &sem).len(), 4);
    }
}
