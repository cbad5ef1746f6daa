//! Cluster-sparsity prior engine: spike-and-slab local evidence, a
//! 4-connected grid MRF over binary support variables, damped synchronous
//! sum-product message passing, marginal fusion, and an exact enumeration
//! oracle for small grids.
//!
//! Conventions used throughout:
//! - the pairwise potential is oriented: `psi_ab` weighs the pair
//!   (left-or-top pixel = `a`, right-or-bottom pixel = `b`);
//! - `gamma_left[(n,m)]` is the message arriving at pixel `(n,m)` from the
//!   factor it shares with its left neighbor `(n,m-1)`, and likewise for
//!   the other three directions; a message value `g` encodes the two-state
//!   message `g*a + (1-g)*(1-a)`;
//! - messages start at the uninformative value 0.5, and directions with no
//!   neighbor stay frozen at exactly 0.5;
//! - updates are synchronous (Jacobi): a sweep reads only the previous
//!   field, so results do not depend on pixel traversal order.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::hsi::PixelMatrix;

/// Messages and marginals are clamped away from exact 0/1 by this margin.
const PI_CLAMP: f64 = 1e-12;
/// Denominator floor guarding against underflow in message ratios.
const DEN_FLOOR: f64 = 1e-300;
/// A sweep that moves no message by more than this ends the inner loop
/// early. Kept well below the 1e-9 tree-exactness tolerance: the distance
/// from the fixed point after an early exit is of the same order as the
/// last step, so a looser cutoff would leak into converged marginals.
const EARLY_EXIT_TOL: f64 = 1e-12;
/// Grid-size cap for the exact enumeration oracle.
const ENUMERATION_LIMIT: usize = 20;

/// How the spike/slab variances are obtained before inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseEstimation {
    /// Estimate from the summed residual (MAD for the spike, top-tail
    /// second moment for the slab).
    Auto,
    /// Use the variances stored in [`CspParams`].
    Manual,
}

/// Parameters of the cluster-sparsity prior and its inference loop.
#[derive(Debug, Clone)]
pub struct CspParams {
    /// Pairwise potential for a (0,0) support pair.
    pub psi00: f64,
    /// Pairwise potential for a (0,1) pair (first index is the left/top pixel).
    pub psi01: f64,
    pub psi10: f64,
    pub psi11: f64,
    /// Noise variance of the spike component.
    pub sigma1_sq: f64,
    /// Slab variance of anomalous amplitudes.
    pub sigma2_sq: f64,
    /// Damping coefficient in (0, 1]; 1 disables damping.
    pub damping: f64,
    /// Number of message-passing sweeps per S-step.
    pub inner_iters: usize,
    pub noise_estimation: NoiseEstimation,
}

impl Default for CspParams {
    fn default() -> Self {
        Self {
            psi00: 0.5,
            psi01: 0.3,
            psi10: 0.3,
            psi11: 0.5,
            sigma1_sq: 1.0,
            sigma2_sq: 10.0,
            damping: 0.5,
            inner_iters: 100,
            noise_estimation: NoiseEstimation::Auto,
        }
    }
}

impl CspParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("psi00", self.psi00),
            ("psi01", self.psi01),
            ("psi10", self.psi10),
            ("psi11", self.psi11),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("sigma1_sq", self.sigma1_sq), ("sigma2_sq", self.sigma2_sq)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.damping.is_finite() || self.damping <= 0.0 || self.damping > 1.0 {
            return Err(Error::InvalidParameter(format!(
                "damping must be in (0, 1], got {}",
                self.damping
            )));
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidParameter("inner_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-pixel channel sum of the residual, the scalar observation the
/// support model works on.
#[derive(Debug, Clone, PartialEq)]
pub struct SummedResidual {
    grid: Array2<f64>,
}

impl SummedResidual {
    pub fn new(grid: Array2<f64>) -> Result<Self> {
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("summed residual"));
        }
        Ok(Self { grid })
    }

    pub fn height(&self) -> usize {
        self.grid.nrows()
    }

    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }
}

/// The four directional message grids plus the local-evidence and
/// prior-message probabilities.
#[derive(Debug, Clone)]
pub struct MessageField {
    gamma_left: Array2<f64>,
    gamma_right: Array2<f64>,
    gamma_top: Array2<f64>,
    gamma_bottom: Array2<f64>,
    pi_in: Array2<f64>,
    pi_out: Array2<f64>,
}

impl MessageField {
    /// Fresh field: all messages at the uninformative 0.5.
    pub fn new(pi_in: Array2<f64>) -> Self {
        let half = Array2::from_elem(pi_in.dim(), 0.5);
        Self {
            gamma_left: half.clone(),
            gamma_right: half.clone(),
            gamma_top: half.clone(),
            gamma_bottom: half.clone(),
            pi_in,
            pi_out: half,
        }
    }

    /// Field with explicit message grids (all must share one shape and lie
    /// in `[0, 1]`). Sweeps keep boundary directions at 0.5; this
    /// constructor does not require it, so tests can probe the raw update
    /// formulas.
    pub fn with_messages(
        gamma_left: Array2<f64>,
        gamma_right: Array2<f64>,
        gamma_top: Array2<f64>,
        gamma_bottom: Array2<f64>,
        pi_in: Array2<f64>,
    ) -> Result<Self> {
        let dim = pi_in.dim();
        for (name, g) in [
            ("gamma_left", &gamma_left),
            ("gamma_right", &gamma_right),
            ("gamma_top", &gamma_top),
            ("gamma_bottom", &gamma_bottom),
            ("pi_in", &pi_in),
        ] {
            if g.dim() != dim {
                return Err(Error::InvalidDimensions(format!("{name} shape mismatch")));
            }
            if g.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1]")));
            }
        }
        let pi_out = Array2::from_elem(dim, 0.5);
        Ok(Self { gamma_left, gamma_right, gamma_top, gamma_bottom, pi_in, pi_out })
    }

    pub fn height(&self) -> usize {
        self.pi_in.nrows()
    }

    pub fn width(&self) -> usize {
        self.pi_in.ncols()
    }

    pub fn gamma_left(&self) -> &Array2<f64> {
        &self.gamma_left
    }

    pub fn gamma_right(&self) -> &Array2<f64> {
        &self.gamma_right
    }

    pub fn gamma_top(&self) -> &Array2<f64> {
        &self.gamma_top
    }

    pub fn gamma_bottom(&self) -> &Array2<f64> {
        &self.gamma_bottom
    }

    pub fn pi_in(&self) -> &Array2<f64> {
        &self.pi_in
    }

    pub fn pi_out(&self) -> &Array2<f64> {
        &self.pi_out
    }

    /// Largest absolute message difference against another field.
    pub fn max_message_change(&self, other: &MessageField) -> f64 {
        let mut max = 0.0f64;
        for (a, b) in [
            (&self.gamma_left, &other.gamma_left),
            (&self.gamma_right, &other.gamma_right),
            (&self.gamma_top, &other.gamma_top),
            (&self.gamma_bottom, &other.gamma_bottom),
        ] {
            for (x, y) in a.iter().zip(b.iter()) {
                max = max.max((x - y).abs());
            }
        }
        max
    }
}

/// Anomaly-probability map, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalMap {
    grid: Array2<f64>,
}

impl MarginalMap {
    pub fn new(grid: Array2<f64>) -> Result<Self> {
        if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidParameter("marginals must lie in [0, 1]".into()));
        }
        Ok(Self { grid })
    }

    pub fn height(&self) -> usize {
        self.grid.nrows()
    }

    pub fn width(&self) -> usize {
        self.grid.ncols()
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }
}

/// Spike/slab variances estimated from data. `degenerate` flags a constant
/// input where both values fell back to their floors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub degenerate: bool,
}

/// Sums the residual `X - L` over channels and folds it to the pixel grid.
pub fn channel_sum(x: &PixelMatrix, low_rank: &Array2<f64>) -> SummedResidual {
    assert_eq!(x.data().dim(), low_rank.dim(), "channel_sum shape mismatch");
    let (h, w) = (x.height(), x.width());
    let mut grid = Array2::zeros((h, w));
    for p in 0..x.n_pixels() {
        let mut sum = 0.0;
        for c in 0..x.channels() {
            sum += x.data()[(p, c)] - low_rank[(p, c)];
        }
        grid[(p / w, p % w)] = sum;
    }
    SummedResidual { grid }
}

/// Estimates the spike variance by the scaled median absolute deviation and
/// the slab variance by the second moment (about zero) of the top 2% of
/// entries by magnitude, floored at 10x the spike variance.
pub fn estimate_noise_params(t: &SummedResidual) -> NoiseEstimate {
    const SIGMA1_FLOOR: f64 = 1e-12;
    let vals: Vec<f64> = t.grid().iter().copied().collect();
    let n = vals.len();

    let med = median(&vals);
    let deviations: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&deviations);
    let sigma1_raw = (1.4826 * mad).powi(2);
    let degenerate = sigma1_raw < SIGMA1_FLOOR;
    let sigma1_sq = sigma1_raw.max(SIGMA1_FLOOR);

    let mut magnitudes = vals;
    magnitudes.sort_by(|a, b| b.abs().total_cmp(&a.abs()));
    let top = ((0.02 * n as f64).floor() as usize).max(1).min(n);
    let second_moment = magnitudes[..top].iter().map(|v| v * v).sum::<f64>() / top as f64;
    let sigma2_sq = second_moment.max(10.0 * sigma1_sq);

    NoiseEstimate { sigma1_sq, sigma2_sq, degenerate }
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Local-evidence anomaly probability per pixel: the spike and slab
/// densities at the summed residual, fused as
/// `1 / (1 + N(t; 0, s1) / N(t; 0, s1 + s2))`, evaluated in log space.
pub fn pi_in(t: &SummedResidual, sigma1_sq: f64, sigma2_sq: f64) -> Array2<f64> {
    assert!(sigma1_sq > 0.0 && sigma2_sq > 0.0, "variances must be positive");
    let v0 = sigma1_sq;
    let v1 = sigma1_sq + sigma2_sq;
    let half_log_ratio = 0.5 * (v1 / v0).ln();
    let quad_coeff = 0.5 * (1.0 / v0 - 1.0 / v1);

    t.grid().mapv(|tv| {
        // log N(t;0,v0) - log N(t;0,v1)
        let log_ratio = half_log_ratio - tv * tv * quad_coeff;
        let p = if log_ratio >= 0.0 {
            let e = (-log_ratio).exp();
            e / (1.0 + e)
        } else {
            1.0 / (1.0 + log_ratio.exp())
        };
        p.clamp(PI_CLAMP, 1.0 - PI_CLAMP)
    })
}

struct Potentials {
    p01: f64,
    p10: f64,
    p11: f64,
    // Denominator constants per arriving direction; psi00 only ever
    // appears inside these sums.
    c0_lt: f64, // psi00 + psi01 (messages from the left or top)
    c1_lt: f64, // psi11 + psi10
    c0_rb: f64, // psi00 + psi10 (messages from the right or bottom)
    c1_rb: f64, // psi11 + psi01
}

impl Potentials {
    fn of(p: &CspParams) -> Self {
        Self {
            p01: p.psi01,
            p10: p.psi10,
            p11: p.psi11,
            c0_lt: p.psi00 + p.psi01,
            c1_lt: p.psi11 + p.psi10,
            c0_rb: p.psi00 + p.psi10,
            c1_rb: p.psi11 + p.psi01,
        }
    }
}

/// One damped Jacobi sweep: every interior directional message is
/// recomputed from the previous field, then blended as
/// `(1 - eta) * old + eta * new`. Boundary messages stay at 0.5. Only the
/// potentials and the damping coefficient of `params` are read.
pub fn bp_sweep(field: &MessageField, params: &CspParams) -> MessageField {
    let (h, w) = (field.height(), field.width());
    let pot = Potentials::of(params);
    let eta = params.damping;
    let mut next = field.clone();

    // Leave-one-out products at the sender: alpha multiplies (1 - gamma)
    // over the sender's other three incoming directions, beta multiplies
    // gamma. The excluded direction is the one pointing back at the
    // receiver.
    let ratio = |num: f64, den: f64| num / den.max(DEN_FLOOR);

    for n in 0..h {
        for m in 0..w {
            // From the left neighbor (n, m-1): receiver is its right side.
            if m >= 1 {
                let j = (n, m - 1);
                let alpha = (1.0 - field.gamma_left[j])
                    * (1.0 - field.gamma_top[j])
                    * (1.0 - field.gamma_bottom[j]);
                let beta = field.gamma_left[j] * field.gamma_top[j] * field.gamma_bottom[j];
                let w0 = (1.0 - field.pi_in[j]) * alpha;
                let w1 = field.pi_in[j] * beta;
                let g = ratio(pot.p01 * w0 + pot.p11 * w1, pot.c0_lt * w0 + pot.c1_lt * w1);
                next.gamma_left[(n, m)] =
                    (1.0 - eta) * field.gamma_left[(n, m)] + eta * g;
            }
            // From the right neighbor (n, m+1): receiver is its left side.
            if m + 1 < w {
                let j = (n, m + 1);
                let alpha = (1.0 - field.gamma_right[j])
                    * (1.0 - field.gamma_top[j])
                    * (1.0 - field.gamma_bottom[j]);
                let beta = field.gamma_right[j] * field.gamma_top[j] * field.gamma_bottom[j];
                let w0 = (1.0 - field.pi_in[j]) * alpha;
                let w1 = field.pi_in[j] * beta;
                let g = ratio(pot.p10 * w0 + pot.p11 * w1, pot.c0_rb * w0 + pot.c1_rb * w1);
                next.gamma_right[(n, m)] =
                    (1.0 - eta) * field.gamma_right[(n, m)] + eta * g;
            }
            // From the top neighbor (n-1, m): receiver is its bottom side.
            if n >= 1 {
                let j = (n - 1, m);
                let alpha = (1.0 - field.gamma_left[j])
                    * (1.0 - field.gamma_right[j])
                    * (1.0 - field.gamma_top[j]);
                let beta = field.gamma_left[j] * field.gamma_right[j] * field.gamma_top[j];
                let w0 = (1.0 - field.pi_in[j]) * alpha;
                let w1 = field.pi_in[j] * beta;
                let g = ratio(pot.p01 * w0 + pot.p11 * w1, pot.c0_lt * w0 + pot.c1_lt * w1);
                next.gamma_top[(n, m)] = (1.0 - eta) * field.gamma_top[(n, m)] + eta * g;
            }
            // From the bottom neighbor (n+1, m): receiver is its top side.
            if n + 1 < h {
                let j = (n + 1, m);
                let alpha = (1.0 - field.gamma_left[j])
                    * (1.0 - field.gamma_right[j])
                    * (1.0 - field.gamma_bottom[j]);
                let beta = field.gamma_left[j] * field.gamma_right[j] * field.gamma_bottom[j];
                let w0 = (1.0 - field.pi_in[j]) * alpha;
                let w1 = field.pi_in[j] * beta;
                let g = ratio(pot.p10 * w0 + pot.p11 * w1, pot.c0_rb * w0 + pot.c1_rb * w1);
                next.gamma_bottom[(n, m)] =
                    (1.0 - eta) * field.gamma_bottom[(n, m)] + eta * g;
            }
        }
    }
    next
}

/// Prior-message anomaly probability: product of the four incoming messages
/// for the anomalous state against the product for the background state.
/// Frozen boundary messages contribute the same 0.5 factor to both products
/// and cancel.
pub fn pi_out(field: &MessageField) -> Array2<f64> {
    let mut out = Array2::zeros(field.pi_in.dim());
    for ((n, m), o) in out.indexed_iter_mut() {
        let g = [
            field.gamma_left[(n, m)],
            field.gamma_right[(n, m)],
            field.gamma_top[(n, m)],
            field.gamma_bottom[(n, m)],
        ];
        let prod1: f64 = g.iter().product();
        let prod0: f64 = g.iter().map(|v| 1.0 - v).product();
        *o = prod1 / (prod0 + prod1).max(DEN_FLOOR);
    }
    out
}

/// Fuses local evidence with the prior message:
/// `J = pi_in*pi_out / (pi_in*pi_out + (1-pi_in)*(1-pi_out))`.
/// The conflicting-certainty corner (0/0) resolves to 0.
pub fn marginals(pi_in: &Array2<f64>, pi_out: &Array2<f64>) -> MarginalMap {
    assert_eq!(pi_in.dim(), pi_out.dim(), "marginals shape mismatch");
    let mut grid = pi_in.clone();
    for (j, pout) in grid.iter_mut().zip(pi_out.iter()) {
        let num = *j * pout;
        let den = num + (1.0 - *j) * (1.0 - pout);
        *j = if den == 0.0 { 0.0 } else { (num / den).clamp(0.0, 1.0) };
    }
    MarginalMap { grid }
}

fn resolve_sigmas(t: &SummedResidual, params: &CspParams) -> (f64, f64) {
    match params.noise_estimation {
        NoiseEstimation::Auto => {
            let est = estimate_noise_params(t);
            (est.sigma1_sq, est.sigma2_sq)
        }
        NoiseEstimation::Manual => (params.sigma1_sq, params.sigma2_sq),
    }
}

/// Full S-step inference: local evidence, `inner_iters` damped sweeps (with
/// early exit once no message moves by more than 1e-8), prior messages, and
/// the fused marginal map.
pub fn infer(t: &SummedResidual, params: &CspParams) -> MarginalMap {
    let (s1, s2) = resolve_sigmas(t, params);
    let mut field = MessageField::new(pi_in(t, s1, s2));
    for _ in 0..params.inner_iters {
        let next = bp_sweep(&field, params);
        let change = field.max_message_change(&next);
        field = next;
        if change < EARLY_EXIT_TOL {
            break;
        }
    }
    let pout = pi_out(&field);
    marginals(&field.pi_in, &pout)
}

/// Exact support marginals by summing the unnormalized joint over all
/// `2^(H*W)` configurations. Only for grids of at most 20 pixels; the spike
/// component is integrated out analytically, so per-pixel evidence reduces
/// to the same `pi_in` weights the message passer uses.
pub fn brute_force_marginals(t: &SummedResidual, params: &CspParams) -> Result<MarginalMap> {
    let (h, w) = (t.height(), t.width());
    let pixels = h * w;
    if pixels > ENUMERATION_LIMIT {
        return Err(Error::GridTooLarge { pixels, limit: ENUMERATION_LIMIT });
    }
    let (s1, s2) = resolve_sigmas(t, params);
    let pi = pi_in(t, s1, s2);
    let evidence: Vec<(f64, f64)> = pi.iter().map(|&p| (1.0 - p, p)).collect();

    // Cliques as (first, second) linear indices; first is the left/top cell.
    let mut cliques = Vec::new();
    for n in 0..h {
        for m in 0..w {
            let idx = n * w + m;
            if m + 1 < w {
                cliques.push((idx, idx + 1));
            }
            if n + 1 < h {
                cliques.push((idx, idx + w));
            }
        }
    }
    let psi = [[params.psi00, params.psi01], [params.psi10, params.psi11]];

    let mut total = 0.0;
    let mut marg = vec![0.0; pixels];
    for config in 0u32..(1u32 << pixels) {
        let mut weight = 1.0;
        for (i, ev) in evidence.iter().enumerate() {
            weight *= if config >> i & 1 == 1 { ev.1 } else { ev.0 };
        }
        for &(a, b) in &cliques {
            weight *= psi[(config >> a & 1) as usize][(config >> b & 1) as usize];
        }
        total += weight;
        for (i, m) in marg.iter_mut().enumerate() {
            if config >> i & 1 == 1 {
                *m += weight;
            }
        }
    }

    let grid = Array2::from_shape_vec(
        (h, w),
        marg.iter().map(|&m| (m / total).clamp(0.0, 1.0)).collect(),
    )
    .expect("shape matches by construction");
    Ok(MarginalMap { grid })
}
