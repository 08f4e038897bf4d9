//! Room-type prediction and the room-conditioned semantic reweighting.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tape::{log_sum_exp, Graph, ParamId, ParamStore, Tensor, Var};
use crate::world::room_prior_objects;

/// Per-room object weights `w[room]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomWeightDict {
    pub weights: Vec<Vec<f64>>,
}

impl RoomWeightDict {
    /// Weight `value` on each room's prior objects, 0 elsewhere.
    pub fn from_priors(room_vocab: usize, object_vocab: usize, value: f64) -> Self {
        let weights = (0..room_vocab)
            .map(|r| {
                let mut w = vec![0.0; object_vocab];
                for o in room_prior_objects(r, room_vocab, object_vocab) {
                    w[o] = value;
                }
                w
            })
            .collect();
        Self { weights }
    }

    pub fn zeros(room_vocab: usize, object_vocab: usize) -> Self {
        Self { weights: vec![vec![0.0; object_vocab]; room_vocab] }
    }
}

/// `semantic ⊙ (1 + w[room])`, renormalised to sum 1.
pub fn room_reweight(semantic: &[f64], room_type: usize, w: &RoomWeightDict) -> Result<Vec<f64>> {
    let row = w.weights.get(room_type).ok_or_else(|| Error::Domain(format!("unknown room type {room_type}")))?;
    if row.len() != semantic.len() {
        return Err(Error::Shape(format!("room weights have {} entries, semantic has {}", row.len(), semantic.len())));
    }
    if row.iter().all(|&w| w == 0.0) {
        return Ok(semantic.to_vec());
    }
    let out: Vec<f64> = semantic.iter().zip(row).map(|(s, w)| s * (1.0 + w)).collect();
    let total: f64 = out.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Domain("semantic vector has no mass".into()));
    }
    Ok(out.into_iter().map(|v| v / total).collect())
}

/// Cross-entropy of `softmax(logits)` against `true_room`.
pub fn room_loss(logits: &[f64], true_room: usize) -> Result<f64> {
    let z = logits
        .get(true_room)
        .ok_or_else(|| Error::Supervision(format!("room label {true_room} outside {} classes", logits.len())))?;
    Ok(log_sum_exp(logits) - z)
}

pub const ROOM_HIDDEN: usize = 32;

/// Two-layer classifier on `[semantic, geometry]`.
#[derive(Clone, Debug)]
pub struct RoomModel {
    pub params: ParamStore,
    pub input_dim: usize,
    pub rooms: usize,
    ids: [ParamId; 4],
}

impl RoomModel {
    pub fn new(input_dim: usize, rooms: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let mut layer = |name: &str, i: usize, o: usize| {
            let bound = 1.0 / (i as f64).sqrt();
            let w = Tensor::from_vec(i, o, (0..i * o).map(|_| rng.random_range(-bound..=bound)).collect());
            (params.push(format!("{name}.w"), w), params.push(format!("{name}.b"), Tensor::zeros(1, o)))
        };
        let (h, hb) = layer("room.hidden", input_dim, ROOM_HIDDEN);
        let (o, ob) = layer("room.out", ROOM_HIDDEN, rooms);
        Self { params, input_dim, rooms, ids: [h, hb, o, ob] }
    }

    pub fn from_params(input_dim: usize, rooms: usize, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(input_dim, rooms, 0);
        if m.params.names != params.names
            || m.params.tensors.iter().zip(&params.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("room tensors do not match the configuration".into()));
        }
        m.params = params;
        Ok(m)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let [h, hb, o, ob] = self.ids;
        let (w, b) = (g.param(h), g.param(hb));
        let z = g.matmul(x, w);
        let z = g.add_row(z, b);
        let z = g.gelu(z);
        let (w, b) = (g.param(o), g.param(ob));
        let z = g.matmul(z, w);
        g.add_row(z, b)
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.input_dim {
            return Err(Error::Shape(format!("room input has {} values, model expects {}", features.len(), self.input_dim)));
        }
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::row_vector(features.to_vec()));
        let y = self.forward(&mut g, x);
        Ok(g.value(y).data.clone())
    }

    /// Arg-max room (ties to the lower index).
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        let z = self.logits(features)?;
        Ok((0..z.len()).fold(0, |best, i| if z[i] > z[best] { i } else { best }))
    }

    /// Mean cross-entropy over a batch, with gradients.
    pub fn batch_loss(&self, inputs: &[Vec<f64>], labels: &[usize]) -> (f64, Vec<Tensor>) {
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_vec(inputs.len(), self.input_dim, inputs.concat()));
        let y = self.forward(&mut g, x);
        let mut total = None;
        for (r, &label) in labels.iter().enumerate() {
            let row = g.gather_rows(y, vec![r]);
            let l = g.cross_entropy(row, label);
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l),
            });
        }
        let sum = total.expect("nonempty batch");
        let loss = g.scale(sum, 1.0 / labels.len() as f64);
        (g.scalar(loss), g.backward(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reweight_examples() {
        let w0 = RoomWeightDict::zeros(2, 4);
        let s = vec![0.1, 0.2, 0.3, 0.4];
        assert_eq!(room_reweight(&s, 1, &w0).unwrap(), s);
        let w = RoomWeightDict { weights: vec![vec![1.0, 0.0, 0.0, 0.0]] };
        let out = room_reweight(&[0.25; 4], 0, &w).unwrap();
        for (o, e) in out.iter().zip([0.4, 0.2, 0.2, 0.2]) {
            assert!((o - e).abs() < 1e-15);
        }
        assert!(matches!(room_reweight(&s, 5, &w0), Err(Error::Domain(_))));
    }

    #[test]
    fn room_loss_examples() {
        assert!((room_loss(&[0.3; 8], 2).unwrap() - 8f64.ln()).abs() < 1e-12);
        assert!(room_loss(&[900.0, 0.0, 0.0], 0).unwrap() < 1e-300);
        let z = [0.5, -1.0, 2.0];
        let hand = -((-1.0f64).exp() / (0.5f64.exp() + (-1.0f64).exp() + 2.0f64.exp())).ln();
        assert!((room_loss(&z, 1).unwrap() - hand).abs() < 1e-12);
        assert!(matches!(room_loss(&z, 3), Err(Error::Supervision(_))));
    }

    #[test]
    fn prior_weights() {
        let w = RoomWeightDict::from_priors(8, 16, 2.0);
        for row in &w.weights {
            assert!(row.iter().all(|&v| v == 0.0 || v == 2.0));
            assert!(row.iter().filter(|&&v| v == 2.0).count() >= 2);
        }
    }
}
