//! Compensated (Neumaier) summation.
//!
//! Every accumulation that feeds a reported statistic goes through these
//! accumulators so that results depend only on the order of the inputs, and
//! the block decomposition identity holds to a few ulps.

/// Neumaier-compensated scalar accumulator.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub const fn new() -> Self {
        Self { sum: 0.0, comp: 0.0 }
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

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl Extend<f64> for NeumaierSum {
    fn extend<I: IntoIterator<Item = f64>>(&mut self, iter: I) {
        for x in iter {
            self.add(x);
        }
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        s.extend(iter);
        s
    }
}

/// Compensated sum of a slice.
pub fn neumaier(xs: &[f64]) -> f64 {
    xs.iter().copied().collect::<NeumaierSum>().value()
}

/// Element-wise compensated accumulator for fixed-length vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct VecSum {
    parts: Vec<NeumaierSum>,
}

impl VecSum {
    pub fn zeros(dim: usize) -> Self {
        Self {
            parts: vec![NeumaierSum::new(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.parts.len()
    }

    /// Adds `x` element-wise. `x.len()` must equal `self.dim()`.
    #[inline]
    pub fn add(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.parts.len());
        for (acc, &v) in self.parts.iter_mut().zip(x) {
            acc.add(v);
        }
    }

    pub fn value(&self) -> Vec<f64> {
        self.parts.iter().map(NeumaierSum::value).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_cancelled_small_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier(&xs), 2.0);
        assert_eq!(xs.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn vec_sum_is_elementwise() {
        let mut acc = VecSum::zeros(2);
        acc.add(&[1.0, -2.0]);
        acc.add(&[0.5, 4.0]);
        assert_eq!(acc.value(), vec![1.5, 2.0]);
    }
}
