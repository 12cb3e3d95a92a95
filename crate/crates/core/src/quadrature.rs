//! Gauss-Hermite rules for expectations over a standard normal variable.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Nodes and weights such that `E{f(Z)} ~ sum_i w_i f(z_i)` for `Z ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Builds an `n`-node rule. Nodes are the eigenvalues of the Jacobi matrix
    /// of the probabilists' Hermite polynomials (zero diagonal, off-diagonal
    /// `sqrt(j)`), found by Sturm-sequence bisection; weights are the
    /// Christoffel numbers `1 / sum_j phi_j(x)^2` over the orthonormal basis.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("quadrature needs at least one node".into()));
        }
        let half = n / 2;
        let bound = 2.0 * (n as f64).sqrt() + 1.0;
        let mut upper = Vec::with_capacity(half);
        // k-th largest eigenvalue for k = 1..=half, all strictly positive
        for k in 1..=half {
            let (mut lo, mut hi) = (0.0f64, bound);
            loop {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if n - count_below(mid, n) >= k {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            upper.push(0.5 * (lo + hi));
        }
        let mut points: Vec<f64> = upper.iter().map(|x| -x).collect();
        if n % 2 == 1 {
            points.push(0.0);
        }
        points.extend(upper.iter().rev());
        let weights: Vec<f64> = points.iter().map(|&x| christoffel(x, n)).collect();
        let total: f64 = weights.iter().sum();
        if !((total - 1.0).abs() < 1e-10) {
            return Err(Error::Precision { target: 1e-10, achieved: (total - 1.0).abs() });
        }
        Ok(Self { points, weights })
    }

    /// Shared rule for `n` nodes, built once per process.
    pub fn cached(n: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(Default::default);
        if let Some(rule) = cache.lock().expect("cache lock").get(&n) {
            return Ok(Arc::clone(rule));
        }
        let rule = Arc::new(Self::new(n)?);
        cache.lock().expect("cache lock").insert(n, Arc::clone(&rule));
        Ok(rule)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Standard normal abscissae, ascending.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.points.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Number of Jacobi-matrix eigenvalues below `x`.
fn count_below(x: f64, n: usize) -> usize {
    let mut count = 0;
    let mut d = -x;
    if d < 0.0 {
        count += 1;
    }
    for j in 1..n {
        let dd = if d == 0.0 { f64::EPSILON } else { d };
        d = -x - j as f64 / dd;
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// `1 / sum_{j<n} phi_j(x)^2`, with the running values rescaled to avoid
/// overflow far in the tails.
fn christoffel(x: f64, n: usize) -> f64 {
    let mut prev = 0.0;
    let mut cur = 1.0f64;
    let mut sum = 1.0;
    let mut log_scale = 0.0;
    for j in 0..n.saturating_sub(1) {
        let next = (x * cur - (j as f64).sqrt() * prev) / ((j + 1) as f64).sqrt();
        prev = cur;
        cur = next;
        sum += cur * cur;
        if sum > 1e200 {
            prev *= 1e-100;
            cur *= 1e-100;
            sum *= 1e-200;
            log_scale += 200.0 * std::f64::consts::LN_10;
        }
    }
    (-log_scale).exp() / sum
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments_of_standard_normal() {
        for n in [3usize, 7, 61, 121, 241, 481, 961, 1921] {
            let q = GaussHermite::new(n).unwrap();
            assert_eq!(q.len(), n);
            assert!((q.expect(|_| 1.0) - 1.0).abs() < 1e-12, "n = {n}");
            assert!(q.expect(|z| z).abs() < 1e-12);
            assert!((q.expect(|z| z * z) - 1.0).abs() < 1e-12);
            assert!((q.expect(|z| z.powi(4)) - 3.0).abs() < 1e-11);
        }
    }

    #[test]
    fn nodes_are_sorted_and_symmetric() {
        let q = GaussHermite::new(61).unwrap();
        assert!(q.points().windows(2).all(|w| w[0] < w[1]));
        assert_eq!(q.points()[30], 0.0);
        for i in 0..61 {
            assert!((q.points()[i] + q.points()[60 - i]).abs() < 1e-12);
        }
    }

    #[test]
    fn smooth_integrand() {
        // E{cos Z} = exp(-1/2)
        let q = GaussHermite::new(61).unwrap();
        assert!((q.expect(f64::cos) - (-0.5f64).exp()).abs() < 1e-13);
    }

    #[test]
    fn cached_rule_is_shared() {
        let a = GaussHermite::cached(121).unwrap();
        let b = GaussHermite::cached(121).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, GaussHermite::new(121).unwrap());
    }

    #[test]
    fn three_point_rule() {
        let q = GaussHermite::new(3).unwrap();
        let s3 = 3f64.sqrt();
        for (p, e) in q.points().iter().zip([-s3, 0.0, s3]) {
            assert!((p - e).abs() < 1e-14);
        }
        for (w, e) in q.weights().iter().zip([1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0]) {
            assert!((w - e).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_nodes_rejected() {
        assert!(GaussHermite::new(0).is_err());
    }
}
