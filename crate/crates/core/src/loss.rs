//! Augmented reconstruction loss.
//!
//! The training objective for a frame sequence `y` against a reference `y*`
//! is
//!
//! ```text
//! L_total = L_rec + β·L_reg + γ·L_consis
//! L_rec    = Σ_t ‖y*_t − y_t‖²
//! L_reg    = Σ_t −α_t · ln max(‖y*_t − y_t‖, ε),   α_t = exp(−λ·p*_t)
//! L_consis = Σ_t −ln max(p_t, ε)
//! ```
//!
//! where `p*_t` is the classifier posterior of the reference label on the
//! reference frames and `p_t` the same quantity on the generated frames.
//!
//! `L_rec + β·L_reg` is (up to the factor 2σ² = β) the negative log of the
//! per-frame impairment density `r^α · exp(−r²/(2σ²))`, r = ‖y* − y‖;
//! [`impairment_log_density`] exposes that density so the correspondence can
//! be checked numerically.
//!
//! Frame matrices are passed as row-major `&[f64]` slices with an explicit
//! bin count.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract, shape_err, Result};
use crate::types::{HyperParams, LossBreakdown};

/// Per-frame severity weights α_t = exp(−λ·p*_t).
#[derive(Debug, Clone, PartialEq)]
pub struct SeverityWeights(Vec<f64>);

impl SeverityWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_posteriors(p: &[f64]) -> Result<()> {
    match p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        Some(t) => Err(contract!("posterior {} at frame {t} outside [0, 1]", p[t])),
        None => Ok(()),
    }
}

fn check_pair(y_star: &[f64], y: &[f64], bins: usize) -> Result<usize> {
    if bins == 0 || y_star.len() != y.len() || y.len() % bins != 0 {
        return Err(shape_err!(
            "reference has {} values, prediction {} values, bins {bins}",
            y_star.len(),
            y.len()
        ));
    }
    Ok(y.len() / bins)
}

fn check_mask(mask: Option<&[bool]>, frames: usize) -> Result<()> {
    match mask {
        Some(m) if m.len() != frames => Err(shape_err!("mask of {} for {frames} frames", m.len())),
        _ => Ok(()),
    }
}

#[inline]
fn selected(mask: Option<&[bool]>, t: usize) -> bool {
    mask.map_or(true, |m| m[t])
}

/// Euclidean distance between frame `t` of the two matrices.
fn frame_distance(y_star: &[f64], y: &[f64], bins: usize, t: usize) -> f64 {
    let a = &y_star[t * bins..(t + 1) * bins];
    let b = &y[t * bins..(t + 1) * bins];
    libm::sqrt(a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum())
}

pub fn severity_weights(p_star: &[f64], lambda: f64) -> Result<SeverityWeights> {
    check_posteriors(p_star)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(contract!("lambda must be positive, got {lambda}"));
    }
    Ok(SeverityWeights(
        p_star.iter().map(|&p| libm::exp(-lambda * p)).collect(),
    ))
}

/// Σ_t ‖y*_t − y_t‖².
pub fn reconstruction_loss(y_star: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    reconstruction_loss_masked(y_star, y, bins, None)
}

pub fn reconstruction_loss_masked(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let frames = check_pair(y_star, y, bins)?;
    check_mask(mask, frames)?;
    let mut sum = 0.0;
    for t in (0..frames).filter(|&t| selected(mask, t)) {
        for m in 0..bins {
            let d = y_star[t * bins + m] - y[t * bins + m];
            sum += d * d;
        }
    }
    Ok(sum)
}

/// Σ_t −w_t · ln max(‖y*_t − y_t‖, ε).
pub fn regularization_loss(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    weights: &SeverityWeights,
    eps_floor: f64,
) -> Result<f64> {
    regularization_loss_masked(y_star, y, bins, weights, eps_floor, None)
}

pub fn regularization_loss_masked(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    weights: &SeverityWeights,
    eps_floor: f64,
    mask: Option<&[bool]>,
) -> Result<f64> {
    let frames = check_pair(y_star, y, bins)?;
    check_mask(mask, frames)?;
    if weights.len() != frames {
        return Err(shape_err!("{} weights for {frames} frames", weights.len()));
    }
    if !(eps_floor > 0.0) {
        return Err(contract!("eps_floor must be positive, got {eps_floor}"));
    }
    Ok((0..frames)
        .filter(|&t| selected(mask, t))
        .map(|t| {
            let r = frame_distance(y_star, y, bins, t).max(eps_floor);
            -weights.0[t] * libm::log(r)
        })
        .sum())
}

/// Σ_t −ln max(p_t, ε). Equal to the KL divergence from a point mass on the
/// reference labels to the classifier's distribution over label sequences.
pub fn consistency_loss(p_gen: &[f64], eps_floor: f64) -> Result<f64> {
    consistency_loss_masked(p_gen, eps_floor, None)
}

pub fn consistency_loss_masked(p_gen: &[f64], eps_floor: f64, mask: Option<&[bool]>) -> Result<f64> {
    check_posteriors(p_gen)?;
    check_mask(mask, p_gen.len())?;
    if !(eps_floor > 0.0) {
        return Err(contract!("eps_floor must be positive, got {eps_floor}"));
    }
    Ok(p_gen
        .iter()
        .enumerate()
        .filter(|&(t, _)| selected(mask, t))
        .map(|(_, &p)| -libm::log(p.max(eps_floor)))
        .sum())
}

pub fn total_loss(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    p_star: &[f64],
    p_gen: &[f64],
    hp: &HyperParams,
) -> Result<LossBreakdown> {
    total_loss_masked(y_star, y, bins, p_star, p_gen, hp, None)
}

/// [`total_loss`] restricted to frames where `mask` is true.
pub fn total_loss_masked(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    p_star: &[f64],
    p_gen: &[f64],
    hp: &HyperParams,
    mask: Option<&[bool]>,
) -> Result<LossBreakdown> {
    hp.validate()?;
    let frames = check_pair(y_star, y, bins)?;
    if p_star.len() != frames || p_gen.len() != frames {
        return Err(shape_err!(
            "posterior lengths {} / {} for {frames} frames",
            p_star.len(),
            p_gen.len()
        ));
    }
    let w = severity_weights(p_star, hp.lambda_)?;
    let l_rec = reconstruction_loss_masked(y_star, y, bins, mask)?;
    let l_reg = regularization_loss_masked(y_star, y, bins, &w, hp.eps_floor, mask)?;
    let l_consis = consistency_loss_masked(p_gen, hp.eps_floor, mask)?;
    let counted = (0..frames).filter(|&t| selected(mask, t)).count();
    Ok(LossBreakdown::compose(l_rec, l_reg, l_consis, hp.beta, hp.gamma, counted))
}

/// Unnormalized log of the per-frame impairment density
/// `α·ln r − r²/(2σ²)`, r = ‖y* − y‖. Returns −∞ at r = 0 when α > 0.
pub fn impairment_log_density(y_star_frame: &[f64], y_frame: &[f64], alpha: f64, sigma2: f64) -> f64 {
    debug_assert_eq!(y_star_frame.len(), y_frame.len());
    let r2: f64 = y_star_frame
        .iter()
        .zip(y_frame)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let radial = if alpha == 0.0 {
        0.0
    } else if r2 == 0.0 {
        return f64::NEG_INFINITY;
    } else {
        alpha * 0.5 * libm::log(r2)
    };
    radial - r2 / (2.0 * sigma2)
}

/// Gradient of [`impairment_log_density`] with respect to `y_frame`:
/// `(y* − y)·(1/σ² − α/r²)`.
pub fn impairment_log_density_grad(
    y_star_frame: &[f64],
    y_frame: &[f64],
    alpha: f64,
    sigma2: f64,
) -> Vec<f64> {
    let r2: f64 = y_star_frame
        .iter()
        .zip(y_frame)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let radial = if alpha == 0.0 { 0.0 } else { alpha / r2 };
    y_star_frame
        .iter()
        .zip(y_frame)
        .map(|(a, b)| (a - b) * (1.0 / sigma2 - radial))
        .collect()
}

/// d L_rec / d y = −2(y* − y).
pub fn reconstruction_grad(y_star: &[f64], y: &[f64], bins: usize, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    let frames = check_pair(y_star, y, bins)?;
    check_mask(mask, frames)?;
    let mut g = vec![0.0; y.len()];
    for t in (0..frames).filter(|&t| selected(mask, t)) {
        for i in t * bins..(t + 1) * bins {
            g[i] = 2.0 * (y[i] - y_star[i]);
        }
    }
    Ok(g)
}

/// d L_reg / d y = w_t·(y*_t − y_t)/r_t² where r_t is above the floor, zero
/// where the floor is active.
pub fn regularization_grad(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    weights: &SeverityWeights,
    eps_floor: f64,
    mask: Option<&[bool]>,
) -> Result<Vec<f64>> {
    let frames = check_pair(y_star, y, bins)?;
    check_mask(mask, frames)?;
    if weights.len() != frames {
        return Err(shape_err!("{} weights for {frames} frames", weights.len()));
    }
    let mut g = vec![0.0; y.len()];
    for t in (0..frames).filter(|&t| selected(mask, t)) {
        let r = frame_distance(y_star, y, bins, t);
        if r <= eps_floor {
            continue;
        }
        let scale = weights.0[t] / (r * r);
        for i in t * bins..(t + 1) * bins {
            g[i] = scale * (y_star[i] - y[i]);
        }
    }
    Ok(g)
}

/// d L_consis / d p_t = −1/p_t above the floor, zero below it.
pub fn consistency_grad_wrt_posteriors(p_gen: &[f64], eps_floor: f64, mask: Option<&[bool]>) -> Result<Vec<f64>> {
    check_posteriors(p_gen)?;
    check_mask(mask, p_gen.len())?;
    Ok(p_gen
        .iter()
        .enumerate()
        .map(|(t, &p)| {
            if selected(mask, t) && p > eps_floor {
                -1.0 / p
            } else {
                0.0
            }
        })
        .collect())
}

/// A differentiable map from generated frames to the posterior of the
/// reference label at every frame, with the labels bound in.
///
/// The phone classifier implements this with its parameters held fixed.
pub trait TruthPosteriorMap {
    fn truth_posteriors(&self, y: &[f64], bins: usize) -> Result<Vec<f64>>;

    /// Vector-Jacobian product: given dL/dp (length T), returns dL/dy.
    fn pullback(&self, y: &[f64], bins: usize, d_posteriors: &[f64]) -> Result<Vec<f64>>;
}

/// Loss value and gradient of `L_total` with respect to the generated
/// frames, with `p_gen = critic(y)`.
pub fn loss_gradient<C: TruthPosteriorMap + ?Sized>(
    y_star: &[f64],
    y: &[f64],
    bins: usize,
    p_star: &[f64],
    critic: &C,
    hp: &HyperParams,
    mask: Option<&[bool]>,
) -> Result<(LossBreakdown, Vec<f64>)> {
    let p_gen = critic.truth_posteriors(y, bins)?;
    let breakdown = total_loss_masked(y_star, y, bins, p_star, &p_gen, hp, mask)?;
    let mut grad = reconstruction_grad(y_star, y, bins, mask)?;
    if hp.beta != 0.0 {
        let w = severity_weights(p_star, hp.lambda_)?;
        let g = regularization_grad(y_star, y, bins, &w, hp.eps_floor, mask)?;
        axpy(&mut grad, hp.beta, &g);
    }
    if hp.gamma != 0.0 {
        let dp = consistency_grad_wrt_posteriors(&p_gen, hp.eps_floor, mask)?;
        let g = critic.pullback(y, bins, &dp)?;
        axpy(&mut grad, hp.gamma, &g);
    }
    Ok((breakdown, grad))
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (o, v) in acc.iter_mut().zip(x) {
        *o += a * v;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * 1.0f64.max(b.abs())
    }

    #[test]
    fn severity_examples() {
        assert_eq!(severity_weights(&[0.0], 25.0).unwrap().as_slice(), &[1.0]);
        // exp(-25) and exp(-5), evaluated with mpmath at 30 digits.
        let a = severity_weights(&[1.0], 25.0).unwrap().as_slice()[0];
        assert!(close(a, 1.388_794_386_496_402e-11, 1e-12));
        let a = severity_weights(&[0.2], 25.0).unwrap().as_slice()[0];
        assert!(close(a, 6.737_946_999_085_467e-3, 1e-12));
        assert!(severity_weights(&[1.2], 25.0).is_err());
        assert!(severity_weights(&[0.5], 0.0).is_err());
    }

    #[test]
    fn reconstruction_examples() {
        let y = [0.3, -1.0, 2.0];
        assert_eq!(reconstruction_loss(&y, &y, 3).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0], &[0.0], 1).unwrap(), 1.0);
        // frame 0 differs by (1, 0), frame 1 by (0, 2)
        let ys = [1.0, 0.0, 0.0, 2.0];
        let y = [0.0; 4];
        assert_eq!(reconstruction_loss(&ys, &y, 2).unwrap(), 5.0);
        assert!(reconstruction_loss(&ys, &y[..2], 2).is_err());
    }

    #[test]
    fn regularization_examples() {
        let w1 = severity_weights(&[0.0], 25.0).unwrap();
        assert_eq!(regularization_loss(&[1.0, 0.0], &[0.0, 0.0], 2, &w1, 1e-8).unwrap(), 0.0);
        let e = core::f64::consts::E;
        let v = regularization_loss(&[e], &[0.0], 1, &w1, 1e-8).unwrap();
        assert!(close(v, -1.0, 1e-15));
        let v = regularization_loss(&[0.5, 0.5], &[0.5, 0.5], 2, &w1, 1e-8).unwrap();
        // -ln(1e-8) = 18.420680743952367
        assert!(close(v, 18.420_680_743_952_367, 1e-14));
        assert!(regularization_loss(&[1.0], &[0.0], 1, &w1, 0.0).is_err());
    }

    #[test]
    fn consistency_examples() {
        assert_eq!(consistency_loss(&[1.0, 1.0, 1.0], 1e-8).unwrap(), 0.0);
        // -(ln 0.5 + ln 0.25) = 3 ln 2
        let v = consistency_loss(&[0.5, 0.25], 1e-8).unwrap();
        assert!(close(v, 2.079_441_541_679_835_8, 1e-14));
        let v = consistency_loss(&[0.0], 1e-8).unwrap();
        assert!(close(v, 18.420_680_743_952_367, 1e-14));
        assert!(consistency_loss(&[-0.1], 1e-8).is_err());
    }

    #[test]
    fn total_examples() {
        let b = LossBreakdown::compose(1.0, -1.0, 2.0, 0.05, 0.3, 1);
        assert!(close(b.l_total, 1.55, 1e-15));

        let hp = HyperParams::default();
        let y = [0.1, 0.2, 0.3, 0.4];
        let b = total_loss(&y, &y, 2, &[0.0, 0.0], &[1.0, 1.0], &hp).unwrap();
        assert_eq!(b.l_rec, 0.0);
        assert_eq!(b.l_consis, 0.0);
        assert!(close(b.l_reg, 2.0 * 18.420_680_743_952_367, 1e-14));
        assert!(close(b.l_total, hp.beta * b.l_reg, 1e-15));

        let tiny = HyperParams { beta: 1e-12, gamma: 1e-12, ..hp };
        let ys = [1.0, 0.0, 0.0, 2.0];
        let b = total_loss(&ys, &y, 2, &[0.3, 0.9], &[0.2, 0.7], &tiny).unwrap();
        assert!((b.l_total - b.l_rec).abs() < 1e-9);
    }

    #[test]
    fn masked_loss_skips_frames() {
        let hp = HyperParams::default();
        let ys = [1.0, 0.0, 0.0, 2.0];
        let y = [0.0; 4];
        let b = total_loss_masked(&ys, &y, 2, &[0.5, 0.5], &[0.5, 0.5], &hp, Some(&[false, true])).unwrap();
        assert_eq!(b.l_rec, 4.0);
        assert_eq!(b.frame_count, 1);
    }

    #[test]
    fn density_examples() {
        let v = impairment_log_density(&[1.0, 0.0], &[0.0, 0.0], 2.0, 1.0);
        assert!(close(v, -0.5, 1e-15));
        let v = impairment_log_density(&[3.0], &[1.0], 0.0, 2.0);
        assert!(close(v, -1.0, 1e-15));
        assert_eq!(impairment_log_density(&[1.0], &[1.0], 0.5, 1.0), f64::NEG_INFINITY);
    }

    #[test]
    fn reg_grad_matches_hand_derivative() {
        let w = severity_weights(&[0.1], 25.0).unwrap();
        let ys = [1.0, 2.0];
        let y = [0.5, 0.0];
        let g = regularization_grad(&ys, &y, 2, &w, 1e-8, None).unwrap();
        let r2 = 0.25 + 4.0;
        let a = w.as_slice()[0];
        assert!(close(g[0], a * 0.5 / r2, 1e-15));
        assert!(close(g[1], a * 2.0 / r2, 1e-15));
    }
}
