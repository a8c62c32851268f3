//! Vector moving-average generator.
//!
//! `X_k = sum_{l=0}^{p} Theta_l eps_{k-l}` with `eps_k = L eta_k`, `eta_k` iid
//! standard Gaussian. With respect to `F_k = sigma(eps_1, ..., eps_k)` this is
//! a lag-`p` martingale difference sequence on `k = p+1..=n`.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{BlockError, SeriesPath};

#[derive(Debug, Clone)]
pub struct MaProcess {
    q: usize,
    coeffs: Vec<DMatrix<f64>>,
    innovations_sd: DMatrix<f64>,
}

impl MaProcess {
    /// `coeffs` holds `Theta_0, ..., Theta_p`, each `q x q`; `innovations_sd`
    /// is the `q x q` factor `L` with `Var(eps) = L L^T`.
    pub fn new(q: usize, coeffs: Vec<DMatrix<f64>>, innovations_sd: DMatrix<f64>) -> Result<Self, BlockError> {
        if q == 0 || coeffs.is_empty() {
            return Err(BlockError::Dimension("need q >= 1 and at least Theta_0".into()));
        }
        for (l, m) in coeffs.iter().enumerate() {
            if m.shape() != (q, q) {
                return Err(BlockError::Dimension(format!("Theta_{l} is {:?}, expected ({q}, {q})", m.shape())));
            }
        }
        if innovations_sd.shape() != (q, q) {
            return Err(BlockError::Dimension(format!(
                "innovation factor is {:?}, expected ({q}, {q})",
                innovations_sd.shape()
            )));
        }
        Ok(Self { q, coeffs, innovations_sd })
    }

    /// Scalar MA(p) with unit-variance innovations.
    pub fn scalar(thetas: &[f64]) -> Result<Self, BlockError> {
        let coeffs = thetas.iter().map(|&t| DMatrix::from_element(1, 1, t)).collect();
        Self::new(1, coeffs, DMatrix::identity(1, 1))
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn lag(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn innovation_cov(&self) -> DMatrix<f64> {
        &self.innovations_sd * self.innovations_sd.transpose()
    }

    /// `Gamma_l = Cov(X_k, X_{k-l}) = sum_{i=l}^{p} Theta_i Sigma Theta_{i-l}^T`;
    /// zero for `l > p`. Because every innovation involved postdates
    /// `F_{k-p-1}`, this is also the conditional covariance given `F_{k-p-1}`.
    pub fn autocov(&self, l: usize) -> DMatrix<f64> {
        let sigma = self.innovation_cov();
        let mut out = DMatrix::zeros(self.q, self.q);
        for i in l..=self.lag() {
            out += &self.coeffs[i] * &sigma * self.coeffs[i - l].transpose();
        }
        out
    }

    /// Simulates `X_{p+1}, ..., X_n`.
    pub fn simulate(&self, n: usize, seed: u64) -> Result<SeriesPath, BlockError> {
        Ok(self.simulate_with_innovations(n, seed)?.0)
    }

    /// Like [`MaProcess::simulate`], also returning `eps_1, ..., eps_n` row-major.
    pub fn simulate_with_innovations(&self, n: usize, seed: u64) -> Result<(SeriesPath, Vec<f64>), BlockError> {
        let p = self.lag();
        let q = self.q;
        if n <= p {
            return Err(BlockError::InvalidParameter { name: "n", reason: format!("need n > p = {p}, got {n}") });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = self.innovations_sd.as_slice();
        let mut eps = vec![0.0; n * q];
        let mut eta = vec![0.0; q];
        for row in eps.chunks_exact_mut(q) {
            for e in eta.iter_mut() {
                *e = StandardNormal.sample(&mut rng);
            }
            // column-major L
            for (r, out) in row.iter_mut().enumerate() {
                *out = (0..q).map(|c| l[c * q + r] * eta[c]).sum();
            }
        }
        let thetas: Vec<&[f64]> = self.coeffs.iter().map(|m| m.as_slice()).collect();
        let mut x = vec![0.0; (n - p) * q];
        for (idx, out) in x.chunks_exact_mut(q).enumerate() {
            // X_k with k = p + 1 + idx uses eps_{k-l} at 0-based row k - 1 - l
            let k0 = p + idx;
            for (lag, theta) in thetas.iter().enumerate() {
                let e = &eps[(k0 - lag) * q..(k0 - lag + 1) * q];
                for (r, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for c in 0..q {
                        acc += theta[c * q + r] * e[c];
                    }
                    *o += acc;
                }
            }
        }
        Ok((SeriesPath::vector(p as i64 + 1, q, x)?, eps))
    }
}

/// Generates one MA(p) path `X_{p+1..=n}` of `q`-vectors from `seed`.
pub fn generate_ma_process(
    q: usize,
    p: usize,
    coeffs: Vec<DMatrix<f64>>,
    innovations_sd: DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<SeriesPath, BlockError> {
    if coeffs.len() != p + 1 {
        return Err(BlockError::Dimension(format!("need p + 1 = {} coefficient matrices, got {}", p + 1, coeffs.len())));
    }
    MaProcess::new(q, coeffs, innovations_sd)?.simulate(n, seed)
}
