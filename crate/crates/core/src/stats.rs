//! Small streaming-statistics helpers shared by the Monte-Carlo code.

/// Running mean and centred second moment (Welford), mergeable with
/// Chan's update so that a fixed merge tree gives a fixed result.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&self, other: &Welford) -> Welford {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        let (na, nb) = (self.n as f64, other.n as f64);
        Welford {
            n,
            mean: self.mean + d * nb / n as f64,
            m2: self.m2 + other.m2 + d * d * na * nb / n as f64,
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; 0 with fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Pairwise (cascade) reduction in index order. The tree shape depends only
/// on `items.len()`, so the result is independent of who produced the items.
pub fn pairwise_reduce<T: Clone>(items: &[T], merge: &impl Fn(&T, &T) -> T) -> Option<T> {
    match items.len() {
        0 => None,
        1 => Some(items[0].clone()),
        n => {
            let (a, b) = items.split_at(n / 2);
            let a = pairwise_reduce(a, merge)?;
            let b = pairwise_reduce(b, merge)?;
            Some(merge(&a, &b))
        }
    }
}

/// Mean and standard error of `x`.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let w = x.iter().fold(Welford::new(), |mut w, &v| {
        w.push(v);
        w
    });
    (w.mean(), w.stderr())
}

/// Sample covariance of `x` and `y` with the standard error of the
/// product-of-deviations estimator.
pub fn covariance_se(x: &[f64], y: &[f64]) -> (f64, f64) {
    debug_assert_eq!(x.len(), y.len());
    let (mx, _) = mean_se(x);
    let (my, _) = mean_se(y);
    let mut w = Welford::new();
    for (a, b) in x.iter().zip(y) {
        w.push((a - mx) * (b - my));
    }
    (w.mean(), w.stderr())
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs: Vec<f64> = (0..257).map(|i| ((i * 37) % 101) as f64 * 0.1 + 1e6).collect();
        let mut w = Welford::new();
        xs.iter().for_each(|&x| w.push(x));
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((w.mean() - m).abs() < 1e-8);
        assert!((w.variance() - v).abs() / v < 1e-9);

        let parts: Vec<Welford> = xs
            .chunks(10)
            .map(|c| {
                let mut w = Welford::new();
                c.iter().for_each(|&x| w.push(x));
                w
            })
            .collect();
        let merged = pairwise_reduce(&parts, &|a, b| a.merge(b)).unwrap();
        assert_eq!(merged.count(), 257);
        assert!((merged.variance() - v).abs() / v < 1e-9);
    }

    #[test]
    fn slope_of_line() {
        assert!((ols_slope(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]) - 2.0).abs() < 1e-15);
    }
}
