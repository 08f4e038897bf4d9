use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::tape::{ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic − numeric| / max(1e-8, |numeric|)` over checked entries.
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    pub checked: usize,
}

/// Compare `analytic` gradients with central differences of `loss`.
///
/// Every tensor is visited. With `max_per_tensor = Some(k)`, tensors larger
/// than `k` are probed at `k` entries: the largest analytic entry plus a
/// seeded random sample.
pub fn grad_check(
    params: &ParamStore,
    analytic: &[Tensor],
    loss: impl Fn(&ParamStore) -> Result<f64>,
    eps: f64,
    max_per_tensor: Option<usize>,
    seed: u64,
) -> Result<GradCheckReport> {
    if analytic.len() != params.len() {
        return Err(Error::Shape(format!("{} gradients for {} tensors", analytic.len(), params.len())));
    }
    for (name, g) in params.names.iter().zip(analytic) {
        if !g.is_finite() {
            return Err(Error::Numerical { tensor: name.clone(), msg: "non-finite analytic gradient".into() });
        }
    }
    let mut rng = rng_from(seed);
    let mut work = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_tensor: String::new(), worst_index: 0, checked: 0 };
    for t in 0..params.len() {
        let n = params.tensors[t].len();
        let grad = &analytic[t];
        let entries: Vec<usize> = match max_per_tensor {
            Some(k) if n > k => {
                let top = (0..n).max_by(|&a, &b| grad.data[a].abs().total_cmp(&grad.data[b].abs())).unwrap_or(0);
                let mut e: Vec<usize> = sample(&mut rng, n, k).into_iter().filter(|&i| i != top).take(k - 1).collect();
                e.push(top);
                e.sort_unstable();
                e
            }
            _ => (0..n).collect(),
        };
        for i in entries {
            let orig = work.tensors[t].data[i];
            work.tensors[t].data[i] = orig + eps;
            let up = loss(&work)?;
            work.tensors[t].data[i] = orig - eps;
            let down = loss(&work)?;
            work.tensors[t].data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            if !numeric.is_finite() {
                return Err(Error::Numerical { tensor: params.names[t].clone(), msg: "non-finite loss".into() });
            }
            let rel = (grad.data[i] - numeric).abs() / numeric.abs().max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = params.names[t].clone();
                report.worst_index = i;
            }
        }
    }
    Ok(report)
}
