//! 120 × 12 polar waypoint heatmap (3° × 0.25 m bins, 3 m range).

use std::f64::consts::PI;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::rng::rng_from;
use crate::tape::{Graph, ParamId, ParamStore, Tensor, Var};

pub const ANGULAR_BINS: usize = 120;
pub const RADIAL_BINS: usize = 12;
pub const CELLS: usize = ANGULAR_BINS * RADIAL_BINS;
pub const ANGULAR_BIN: f64 = 2.0 * PI / ANGULAR_BINS as f64;
pub const RADIAL_BIN: f64 = 0.25;
pub const RANGE: f64 = RADIAL_BIN * RADIAL_BINS as f64;
/// Splat kernel half-width in bins (3σ with σ = 1 bin).
const SPLAT_RADIUS: i64 = 3;

/// Row-major grid, one row per angular bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub data: Vec<f64>,
}

impl Default for Heatmap {
    fn default() -> Self {
        Self { data: vec![0.0; CELLS] }
    }
}

impl Heatmap {
    pub fn filled(v: f64) -> Self {
        Self { data: vec![v; CELLS] }
    }

    pub fn shape(&self) -> (usize, usize) {
        (ANGULAR_BINS, RADIAL_BINS)
    }

    pub fn at(&self, a: usize, r: usize) -> f64 {
        self.data[a * RADIAL_BINS + r]
    }

    /// One CSV line per angular bin.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 0..ANGULAR_BINS {
            let row: Vec<String> = (0..RADIAL_BINS).map(|r| self.at(a, r).to_string()).collect();
            let _ = writeln!(s, "{}", row.join(","));
        }
        s
    }
}

/// `(angular bin, radial bin)` holding a heading/distance pair.
pub fn bin_of(heading: f64, dist: f64) -> (usize, usize) {
    let a = ((wrap_angle(heading) / ANGULAR_BIN).floor() as usize) % ANGULAR_BINS;
    let r = ((dist / RADIAL_BIN).floor() as usize).min(RADIAL_BINS - 1);
    (a, r)
}

/// Heading and distance at a bin center.
pub fn bin_center(a: usize, r: usize) -> (f64, f64) {
    ((a as f64 + 0.5) * ANGULAR_BIN, (r as f64 + 0.5) * RADIAL_BIN)
}

/// Ground-truth heatmap: each neighbor splats a unit-peak Gaussian (σ = 1 bin
/// per axis, truncated at 3σ, angular axis wrapping); overlaps take the max.
pub fn heatmap_gt(neighbors: &[(f64, f64)]) -> Result<Heatmap> {
    let mut h = Heatmap::default();
    for &(heading, dist) in neighbors {
        if !(dist > 0.0 && dist <= RANGE) || !heading.is_finite() {
            return Err(Error::Domain(format!("neighbor at distance {dist} m lies outside (0, {RANGE}]")));
        }
        let (a, r) = bin_of(heading, dist);
        for da in -SPLAT_RADIUS..=SPLAT_RADIUS {
            for dr in -SPLAT_RADIUS..=SPLAT_RADIUS {
                let rr = r as i64 + dr;
                if !(0..RADIAL_BINS as i64).contains(&rr) {
                    continue;
                }
                let aa = (a as i64 + da).rem_euclid(ANGULAR_BINS as i64) as usize;
                let v = (-((da * da + dr * dr) as f64) / 2.0).exp();
                let cell = &mut h.data[aa * RADIAL_BINS + rr as usize];
                *cell = cell.max(v);
            }
        }
    }
    Ok(h)
}

/// Strict local maxima of a wrap-aware `window` (angular, radial), strongest
/// first (ties by lower angular then lower radial bin), as bin-center
/// `(heading, distance)` pairs.
pub fn nms_peaks(h: &Heatmap, max_k: usize, window: (usize, usize)) -> Vec<(f64, f64)> {
    let (wa, wr) = ((window.0 / 2) as i64, (window.1 / 2) as i64);
    let mut peaks: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..ANGULAR_BINS {
        'cell: for r in 0..RADIAL_BINS {
            let v = h.at(a, r);
            for da in -wa..=wa {
                for dr in -wr..=wr {
                    if da == 0 && dr == 0 {
                        continue;
                    }
                    let rr = r as i64 + dr;
                    if !(0..RADIAL_BINS as i64).contains(&rr) {
                        continue;
                    }
                    let aa = (a as i64 + da).rem_euclid(ANGULAR_BINS as i64) as usize;
                    if h.at(aa, rr as usize) >= v {
                        continue 'cell;
                    }
                }
            }
            peaks.push((v, a, r));
        }
    }
    peaks.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    peaks.into_iter().take(max_k).map(|(_, a, r)| bin_center(a, r)).collect()
}

/// Mean squared per-cell difference.
pub fn waypoint_loss(predicted: &Heatmap, gt: &Heatmap) -> f64 {
    predicted.data.iter().zip(&gt.data).map(|(p, g)| (p - g) * (p - g)).sum::<f64>() / CELLS as f64
}

/// Merge layer over the concatenated channels, then a two-layer perceptron
/// producing one logit per cell.
#[derive(Clone, Debug)]
pub struct WaypointModel {
    pub params: ParamStore,
    pub input_dim: usize,
    ids: [ParamId; 6],
}

pub const WAYPOINT_MERGE: usize = 64;
pub const WAYPOINT_HIDDEN: usize = 128;

impl WaypointModel {
    pub fn new(appearance_dim: usize, geometry_dim: usize, seed: u64) -> Self {
        use rand::Rng as _;
        let input_dim = appearance_dim + geometry_dim;
        let mut rng = rng_from(seed);
        let mut params = ParamStore::new();
        let mut layer = |name: &str, i: usize, o: usize| {
            let bound = 1.0 / (i as f64).sqrt();
            let w = Tensor::from_vec(i, o, (0..i * o).map(|_| rng.random_range(-bound..=bound)).collect());
            (params.push(format!("{name}.w"), w), params.push(format!("{name}.b"), Tensor::zeros(1, o)))
        };
        let (m, mb) = layer("waypoint.merge", input_dim, WAYPOINT_MERGE);
        let (h, hb) = layer("waypoint.hidden", WAYPOINT_MERGE, WAYPOINT_HIDDEN);
        let (o, ob) = layer("waypoint.out", WAYPOINT_HIDDEN, CELLS);
        Self { params, input_dim, ids: [m, mb, h, hb, o, ob] }
    }

    pub fn from_params(appearance_dim: usize, geometry_dim: usize, params: ParamStore) -> Result<Self> {
        let mut m = Self::new(appearance_dim, geometry_dim, 0);
        if m.params.names != params.names
            || m.params.tensors.iter().zip(&params.tensors).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Checkpoint("waypoint tensors do not match the configuration".into()));
        }
        m.params = params;
        Ok(m)
    }

    /// Sigmoid cell probabilities for a batch of rows `[appearance, geometry]`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let [m, mb, h, hb, o, ob] = self.ids;
        let layer = |g: &mut Graph, x: Var, w: ParamId, b: ParamId| {
            let w = g.param(w);
            let b = g.param(b);
            let y = g.matmul(x, w);
            g.add_row(y, b)
        };
        let z = layer(g, x, m, mb);
        let z = g.gelu(z);
        let z = layer(g, z, h, hb);
        let z = g.gelu(z);
        let z = layer(g, z, o, ob);
        g.sigmoid(z)
    }

    pub fn predict_heatmap(&self, appearance: &[f64], geometry: &[f64]) -> Result<Heatmap> {
        if appearance.len() + geometry.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "waypoint input has {} values, model expects {}",
                appearance.len() + geometry.len(),
                self.input_dim
            )));
        }
        let mut row = appearance.to_vec();
        row.extend_from_slice(geometry);
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::row_vector(row));
        let y = self.forward(&mut g, x);
        Ok(Heatmap { data: g.value(y).data.clone() })
    }

    /// Mean per-cell squared error over a batch, with gradients.
    pub fn batch_loss(&self, inputs: &[Vec<f64>], targets: &[Heatmap]) -> (f64, Vec<Tensor>) {
        let n = inputs.len();
        let mut g = Graph::new(&self.params);
        let x = g.input(Tensor::from_vec(n, self.input_dim, inputs.concat()));
        let y = self.forward(&mut g, x);
        let t = g.input(Tensor::from_vec(n, CELLS, targets.iter().flat_map(|h| h.data.iter().copied()).collect()));
        let d = g.sub(y, t);
        let sq = g.mul(d, d);
        let loss = g.mean_all(sq);
        (g.scalar(loss), g.backward(loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_neighbor_peak_bin() {
        let h = heatmap_gt(&[(0.0, 1.0)]).unwrap();
        assert_eq!(h.shape(), (120, 12));
        assert_eq!(h.data.len(), 1440);
        assert_eq!(h.at(0, 4), 1.0);
        assert!((h.at(119, 4) - (-0.5f64).exp()).abs() < 1e-15, "angular axis wraps");
        let peaks = nms_peaks(&h, 4, (5, 3));
        assert_eq!(peaks.len(), 1);
        assert_eq!(bin_of(peaks[0].0, peaks[0].1), (0, 4));
    }

    #[test]
    fn wrap_boundary() {
        let h = heatmap_gt(&[(359f64.to_radians(), 2.0)]).unwrap();
        assert_eq!(h.at(119, 8), 1.0);
        assert_eq!(bin_of(2.0 * PI, 3.0), (0, 11));
    }

    #[test]
    fn out_of_range_distance() {
        assert!(matches!(heatmap_gt(&[(0.0, 3.5)]), Err(Error::Domain(_))));
        assert!(matches!(heatmap_gt(&[(0.0, 0.0)]), Err(Error::Domain(_))));
    }

    #[test]
    fn flat_map_has_no_peaks() {
        assert!(nms_peaks(&Heatmap::filled(0.3), 4, (5, 3)).is_empty());
    }

    #[test]
    fn loss_examples() {
        let a = Heatmap::filled(0.0);
        assert_eq!(waypoint_loss(&a, &a), 0.0);
        assert_eq!(waypoint_loss(&a, &Heatmap::filled(1.0)), 1.0);
        let mut b = a.clone();
        b.data[3] = 0.5;
        b.data[700] = 0.5;
        assert!((waypoint_loss(&a, &b) - 2.0 * 0.25 / 1440.0).abs() < 1e-18);
    }

    #[test]
    fn zero_weights_give_half() {
        let mut m = WaypointModel::new(3, 2, 1);
        for t in &mut m.params.tensors {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
        let h = m.predict_heatmap(&[0.1, 0.2, 0.3], &[0.4, 0.5]).unwrap();
        assert!(h.data.iter().all(|&v| v == 0.5));
        assert!(matches!(m.predict_heatmap(&[0.1], &[0.4]), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_has_one_row_per_angle() {
        let csv = heatmap_gt(&[(1.0, 1.0)]).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 120);
        assert!(csv.lines().all(|l| l.split(',').count() == 12));
    }
}
