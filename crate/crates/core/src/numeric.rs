//! Overflow-safe exponential averaging.

/// `log(mean(exp(xs)))` with a max shift. Returns `None` for an empty slice.
pub fn log_mean_exp(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::INFINITY {
        return Some(f64::INFINITY);
    }
    let s: f64 = xs.iter().map(|x| (x - m).exp()).sum();
    Some(m + (s / xs.len() as f64).ln())
}

/// Running sum of `exp(log_w_i)` together with `K` weighted observables
/// `sum_i exp(log_w_i) * f_k(i)`, kept relative to the largest `log_w` seen.
///
/// Accumulators over disjoint ranges can be merged; merging in a fixed order
/// gives bit-stable totals.
#[derive(Debug, Clone, Copy)]
pub struct WeightedLogSum<const K: usize> {
    max: f64,
    sum: f64,
    moments: [f64; K],
}

impl<const K: usize> Default for WeightedLogSum<K> {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            moments: [0.0; K],
        }
    }
}

impl<const K: usize> WeightedLogSum<K> {
    fn rescale(&mut self, new_max: f64) {
        let scale = (self.max - new_max).exp();
        self.sum *= scale;
        for m in &mut self.moments {
            *m *= scale;
        }
        self.max = new_max;
    }

    #[inline]
    pub fn add(&mut self, log_w: f64, values: [f64; K]) {
        if log_w > self.max {
            self.rescale(log_w);
        }
        let w = (log_w - self.max).exp();
        self.sum += w;
        for (m, v) in self.moments.iter_mut().zip(values) {
            *m += w * v;
        }
    }

    pub fn merge(&mut self, other: &Self) {
        if other.max == f64::NEG_INFINITY {
            return;
        }
        if other.max > self.max {
            self.rescale(other.max);
        }
        let scale = (other.max - self.max).exp();
        self.sum += scale * other.sum;
        for (m, o) in self.moments.iter_mut().zip(other.moments) {
            *m += scale * o;
        }
    }

    /// `log(sum_i exp(log_w_i))`.
    pub fn log_total(&self) -> f64 {
        self.max + self.sum.ln()
    }

    /// Weighted average of observable `k`.
    pub fn mean(&self, k: usize) -> f64 {
        self.moments[k] / self.sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_mean_exp_is_shift_safe() {
        assert_eq!(log_mean_exp(&[]), None);
        assert_eq!(log_mean_exp(&[3.0, 3.0, 3.0]), Some(3.0));
        let big = log_mean_exp(&[1000.0, 1000.0 + 2f64.ln()]).unwrap();
        assert!((big - (1000.0 + 1.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn merged_accumulators_match_single_pass() {
        let xs: Vec<(f64, f64)> = (0..50).map(|i| (-(i as f64) * 0.7 + 30.0 * ((i % 7) as f64), i as f64)).collect();
        let mut one = WeightedLogSum::<1>::default();
        for &(lw, v) in &xs {
            one.add(lw, [v]);
        }
        let mut a = WeightedLogSum::<1>::default();
        let mut b = WeightedLogSum::<1>::default();
        for &(lw, v) in &xs[..20] {
            a.add(lw, [v]);
        }
        for &(lw, v) in &xs[20..] {
            b.add(lw, [v]);
        }
        a.merge(&b);
        assert!((a.log_total() - one.log_total()).abs() < 1e-12);
        assert!((a.mean(0) - one.mean(0)).abs() < 1e-12);
        let direct: f64 = xs.iter().map(|(lw, _)| lw.exp()).sum::<f64>().ln();
        assert!((one.log_total() - direct).abs() < 1e-12);
    }
}
