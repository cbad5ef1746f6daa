//! Detection scoring: Mahalanobis (RX) scores against global or
//! background-component statistics, and the convex fusion of an RX map with
//! an anomaly-probability map.

use ndarray::{Array1, Array2};

use crate::csp::MarginalMap;
use crate::error::{Error, Result};
use crate::hsi::{PixelMatrix, ScoreMap};
use crate::linalg::sym_eigen;

/// Background statistics for Mahalanobis scoring. The covariance of a
/// low-rank component is always rank deficient, so a ridge is added
/// whenever the smallest eigenvalue is negligible against the mean
/// per-band variance.
#[derive(Debug, Clone)]
pub struct RxStats {
    mean: Array1<f64>,
    covariance: Array2<f64>,
    ridge: f64,
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<f64>,
}

impl RxStats {
    /// Mean and covariance (maximum-likelihood, 1/N) of the rows of `m`.
    pub fn from_rows(m: &Array2<f64>) -> Self {
        let n = m.nrows() as f64;
        let mean = m.sum_axis(ndarray::Axis(0)) / n;
        let centered = m - &mean;
        let covariance = centered.t().dot(&centered) / n;

        let (mut eigenvalues, eigenvectors) = sym_eigen(&covariance);
        // Covariance eigenvalues are non-negative up to rounding.
        eigenvalues.mapv_inplace(|l| l.max(0.0));

        let c = covariance.nrows() as f64;
        let scale = covariance.diag().sum() / c;
        let min_eig = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let ridge = if scale <= 0.0 {
            1e-12
        } else if min_eig < 1e-10 * scale {
            1e-6 * scale
        } else {
            0.0
        };

        Self { mean, covariance, ridge, eigenvalues, eigenvectors }
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &Array2<f64> {
        &self.covariance
    }

    /// Ridge actually added to the covariance diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Smallest eigenvalue of the ridged covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min) + self.ridge
    }

    /// Mahalanobis distances of the rows of `m` against these statistics,
    /// through the eigenbasis: `sum_i <q_i, x - mu>^2 / (lambda_i + ridge)`.
    pub fn mahalanobis(&self, m: &Array2<f64>) -> Array1<f64> {
        let centered = m - &self.mean;
        let projected = centered.dot(&self.eigenvectors);
        let inv: Vec<f64> = self.eigenvalues.iter().map(|l| 1.0 / (l + self.ridge)).collect();
        let mut scores = Array1::zeros(m.nrows());
        for (row, score) in projected.rows().into_iter().zip(scores.iter_mut()) {
            *score = row.iter().zip(&inv).map(|(p, w)| p * p * w).sum();
        }
        scores
    }
}

fn scores_to_map(scores: &Array1<f64>, h: usize, w: usize) -> ScoreMap {
    let grid = Array2::from_shape_fn((h, w), |(n, m)| scores[n * w + m]);
    ScoreMap::new(grid).expect("Mahalanobis scores are finite")
}

/// RX with statistics taken from all pixels of `x`.
pub fn rx_global(x: &PixelMatrix) -> ScoreMap {
    let stats = RxStats::from_rows(x.data());
    scores_to_map(&stats.mahalanobis(x.data()), x.height(), x.width())
}

/// RX with statistics from the rows of the low-rank component (a cleaner
/// background), distances evaluated on the rows of `x`.
pub fn rx_background(x: &PixelMatrix, low_rank: &Array2<f64>) -> ScoreMap {
    assert_eq!(x.data().dim(), low_rank.dim(), "rx_background shape mismatch");
    let stats = RxStats::from_rows(low_rank);
    scores_to_map(&stats.mahalanobis(x.data()), x.height(), x.width())
}

/// Min-max scaling to `[0, 1]`; a constant map scales to all zeros.
pub fn min_max_normalize(map: &ScoreMap) -> ScoreMap {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let grid = if span > 0.0 {
        map.data().mapv(|v| (v - lo) / span)
    } else {
        Array2::zeros(map.data().dim())
    };
    ScoreMap::new(grid).expect("normalized scores are finite")
}

/// Convex combination of a min-max normalized RX map with an
/// anomaly-probability map: `alpha * rx + (1 - alpha) * J`.
pub fn fuse(rx: &ScoreMap, j: &MarginalMap, alpha: f64) -> Result<ScoreMap> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidParameter(format!("alpha must be in [0,1], got {alpha}")));
    }
    if (rx.height(), rx.width()) != (j.height(), j.width()) {
        return Err(Error::InvalidDimensions("fuse: map shapes differ".into()));
    }
    let rxn = min_max_normalize(rx);
    let grid = alpha * rxn.data() + (1.0 - alpha) * j.grid();
    ScoreMap::new(grid)
}
