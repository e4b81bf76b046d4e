//! Replicate statistics with an exactly associative merge.

use crate::error::{Error, Result};
use crate::numerics::ExactSum;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Number of contiguous batches for batch-means error bars.
pub const BATCHES: usize = 16;

/// Count, sum, sum of squares, min and max of one observable.
///
/// Sums are exact (correctly rounded on read), so merging in any order or
/// grouping gives bit-identical results.
#[derive(Debug, Clone)]
pub struct StatAccumulator {
    name: String,
    count: u64,
    sum: ExactSum,
    sumsq: ExactSum,
    min: f64,
    max: f64,
}

impl PartialEq for StatAccumulator {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.count == other.count
            && self.sum().to_bits() == other.sum().to_bits()
            && self.sum_of_squares().to_bits() == other.sum_of_squares().to_bits()
            && self.min.to_bits() == other.min.to_bits()
            && self.max.to_bits() == other.max.to_bits()
    }
}

impl StatAccumulator {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            count: 0,
            sum: ExactSum::new(),
            sumsq: ExactSum::new(),
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    pub fn from_values(name: impl Into<String>, values: &[f64]) -> Self {
        let mut acc = Self::new(name);
        for &v in values {
            acc.push(v);
        }
        acc
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        let (hi, lo) = two_prod(x, x);
        self.sumsq.add(hi);
        self.sumsq.add(lo);
        self.min = self.min.min(x);
        self.max = self.max.max(x);
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn sum(&self) -> f64 {
        self.sum.value()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.sumsq.value()
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum() / self.count as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let s = self.sum();
        let m = s / n;
        // sum (x - m)^2 = sum x^2 - 2 m sum x + n m^2, with every product
        // split into exact head and tail parts.
        let mut centered = self.sumsq.clone();
        let (a, b) = two_prod(-2.0 * m, s);
        centered.add(a);
        centered.add(b);
        let (c, d) = two_prod(m, m);
        for part in [two_prod(n, c), two_prod(n, d)] {
            centered.add(part.0);
            centered.add(part.1);
        }
        (centered.value() / (n - 1.0)).max(0.0)
    }

    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        (self.variance() / self.count as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean(),
            std_error: if self.count >= 2 { self.std_error() } else { 0.0 },
            count: self.count,
        }
    }
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

/// Exact merge; fails if the two accumulators track different observables.
pub fn merge_stats(a: &StatAccumulator, b: &StatAccumulator) -> Result<StatAccumulator> {
    if a.name != b.name {
        return Err(Error::Schema(format!("cannot merge `{}` with `{}`", a.name, b.name)));
    }
    let mut sum = a.sum.clone();
    sum.merge(&b.sum);
    let mut sumsq = a.sumsq.clone();
    sumsq.merge(&b.sumsq);
    Ok(StatAccumulator {
        name: a.name.clone(),
        count: a.count + b.count,
        sum,
        sumsq,
        min: a.min.min(b.min),
        max: a.max.max(b.max),
    })
}

/// A mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub count: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self {
            mean: value,
            std_error: 0.0,
            count: 0,
        }
    }

    pub fn of(values: &[f64]) -> Self {
        StatAccumulator::from_values("", values).estimate()
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)
    }

    pub fn covers(&self, x: f64) -> bool {
        let (lo, hi) = self.ci95();
        lo <= x && x <= hi
    }

    /// 95% intervals of `self` and `other` intersect.
    pub fn overlaps(&self, other: &Estimate) -> bool {
        let (a, b) = self.ci95();
        let (c, d) = other.ci95();
        a <= d && c <= b
    }
}

/// Standard error of the mean from `batches` contiguous batch means.
pub fn batch_means_se(values: &[f64], batches: usize) -> Option<f64> {
    let n = values.len();
    if batches < 2 || n < batches {
        return None;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| {
            let chunk = &values[b * n / batches..(b + 1) * n / batches];
            StatAccumulator::from_values("", chunk).mean()
        })
        .collect();
    let acc = StatAccumulator::from_values("", &means);
    Some(acc.std_error())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn merge_examples() {
        let x = StatAccumulator::from_values("z", &[1.5, -2.0, 7.25]);
        assert_eq!(merge_stats(&x, &StatAccumulator::new("z")).unwrap(), x);
        let m = merge_stats(
            &StatAccumulator::from_values("z", &[2.0]),
            &StatAccumulator::from_values("z", &[4.0]),
        )
        .unwrap();
        assert_eq!((m.mean(), m.count()), (3.0, 2));
        assert!(merge_stats(&x, &StatAccumulator::new("w")).is_err());
    }

    #[test]
    fn moments() {
        let a = StatAccumulator::from_values("v", &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(a.mean(), 2.5);
        assert!((a.variance() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!((a.min(), a.max()), (1.0, 4.0));
        let shifted: Vec<f64> = [1.0, 2.0, 3.0, 4.0].iter().map(|x| x + 1e8).collect();
        let b = StatAccumulator::from_values("v", &shifted);
        assert!((b.variance() - 5.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn intervals() {
        let e = Estimate {
            mean: 1.0,
            std_error: 0.1,
            count: 100,
        };
        assert!(e.covers(1.19) && !e.covers(1.2));
        let f = Estimate { mean: 1.39, ..e };
        assert!(e.overlaps(&f));
        assert!(!e.overlaps(&Estimate { mean: 1.4, ..e }));
    }

    #[test]
    fn batch_means_matches_naive_for_iid() {
        let mut rng = crate::rng::stream(3, &[]);
        let xs: Vec<f64> = (0..16_000).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let naive = Estimate::of(&xs).std_error;
        let batch = batch_means_se(&xs, BATCHES).unwrap();
        assert!((batch / naive - 1.0).abs() < 0.6);
        assert!(batch_means_se(&xs[..10], BATCHES).is_none());
    }

    fn value() -> impl Strategy<Value = f64> {
        prop_oneof![-1e12..1e12f64, -1.0..1.0f64, (-300i32..300).prop_map(|e| 2f64.powi(e))]
    }

    proptest! {
        #[test]
        fn merge_is_associative_and_commutative(
            a in prop::collection::vec(value(), 0..20),
            b in prop::collection::vec(value(), 0..20),
            c in prop::collection::vec(value(), 0..20),
        ) {
            let (a, b, c) = (
                StatAccumulator::from_values("z", &a),
                StatAccumulator::from_values("z", &b),
                StatAccumulator::from_values("z", &c),
            );
            let left = merge_stats(&merge_stats(&a, &b).unwrap(), &c).unwrap();
            let right = merge_stats(&a, &merge_stats(&b, &c).unwrap()).unwrap();
            prop_assert_eq!(&left, &right);
            let swapped = merge_stats(&merge_stats(&c, &a).unwrap(), &b).unwrap();
            prop_assert_eq!(&left, &swapped);
        }

        #[test]
        fn merge_equals_single_pass(xs in prop::collection::vec(value(), 1..40), cut in 0usize..40) {
            let cut = cut.min(xs.len());
            let whole = StatAccumulator::from_values("z", &xs);
            let parts = merge_stats(
                &StatAccumulator::from_values("z", &xs[..cut]),
                &StatAccumulator::from_values("z", &xs[cut..]),
            ).unwrap();
            prop_assert_eq!(whole, parts);
        }
    }
}
