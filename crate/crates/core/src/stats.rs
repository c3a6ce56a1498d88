//! Order-stable accumulation for Monte-Carlo estimates.

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.sum);
        self.add(other.comp);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Running mean and variance from compensated first and second moments.
///
/// Values are shifted by a caller-chosen reference (typically the expected
/// value) before squaring, which keeps the variance well-conditioned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanVar {
    shift: f64,
    n: u64,
    s1: CompensatedSum,
    s2: CompensatedSum,
}

impl MeanVar {
    pub fn with_shift(shift: f64) -> Self {
        Self {
            shift,
            n: 0,
            s1: CompensatedSum::new(),
            s2: CompensatedSum::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        let d = x - self.shift;
        self.n += 1;
        self.s1.add(d);
        self.s2.add(d * d);
    }

    /// Merges `other`, which must have been built with the same shift.
    pub fn merge(&mut self, other: &MeanVar) {
        debug_assert_eq!(self.shift, other.shift);
        self.n += other.n;
        self.s1.merge(&other.s1);
        self.s2.merge(&other.s2);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.shift + self.s1.value() / self.n as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        let m = self.s1.value() / n;
        ((self.s2.value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (self.variance() / self.n as f64).sqrt()
    }
}

/// Sample moments of a discrete sample given as `(value, count)` pairs.
/// Exact up to the final floating-point divisions.
pub fn weighted_moments<I>(values: I) -> (f64, f64, u64)
where
    I: IntoIterator<Item = (f64, u64)> + Clone,
{
    let mut n = 0u64;
    let mut s1 = CompensatedSum::new();
    for (x, c) in values.clone() {
        n += c;
        s1.add(x * c as f64);
    }
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = s1.value() / n as f64;
    let mut s2 = CompensatedSum::new();
    for (x, c) in values {
        let d = x - mean;
        s2.add(d * d * c as f64);
    }
    let var = if n > 1 { s2.value() / (n - 1) as f64 } else { 0.0 };
    (mean, var, n)
}
