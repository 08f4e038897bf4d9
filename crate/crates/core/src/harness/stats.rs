//! Paired bootstrap and rank correlation for comparing ablation rows.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Fraction of `resamples` paired bootstrap resamples in which
/// `mean(a) > mean(b)`.
pub fn bootstrap_confidence(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Evaluation("bootstrap needs two nonempty paired samples".into()));
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = diff.len();
    let mut rng = rng_from(seed);
    let mut wins = 0usize;
    for _ in 0..resamples {
        let s: f64 = (0..n).map(|_| diff[rng.random_range(0..n)]).sum();
        if s > 0.0 {
            wins += 1;
        }
    }
    Ok(wins as f64 / resamples as f64)
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&i, &j| xs[i].total_cmp(&xs[j]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's ρ as the Pearson correlation of average ranks; `None` when
/// either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 20.0, 5.0]), vec![2.0, 3.5, 3.5, 1.0]);
    }

    #[test]
    fn spearman_extremes() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((spearman(&x, &[2.0, 4.0, 8.0, 16.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((spearman(&x, &[9.0, 3.0, 1.0, 0.0]).unwrap() + 1.0).abs() < 1e-15);
        assert_eq!(spearman(&x, &[1.0; 4]), None);
    }

    #[test]
    fn spearman_matches_textbook_formula_without_ties() {
        // 1 - 6 Σd² / (n (n² - 1))
        let x = [3.0, 1.0, 4.0, 1.5, 5.0, 9.0];
        let y = [2.0, 7.0, 1.0, 8.0, 2.5, 0.5];
        let (rx, ry) = (average_ranks(&x), average_ranks(&y));
        let d2: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - b) * (a - b)).sum();
        let n = 6.0;
        let expect = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
        assert!((spearman(&x, &y).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_clear_and_null_cases() {
        let a = vec![1.0; 50];
        let b = vec![0.0; 50];
        assert_eq!(bootstrap_confidence(&a, &b, 1000, 1).unwrap(), 1.0);
        assert_eq!(bootstrap_confidence(&b, &b, 1000, 1).unwrap(), 0.0);
    }
}
