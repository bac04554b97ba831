//! Integral estimates on the discrete kernel `K(ξ, ξ′)` of `L = −ν + K`:
//! the exponent scan for `(p, q)`, the mixed norm `A_{p′,q′}` and the
//! `∫|K|^α dξ′ ≲ ⟨ξ⟩^{−1}` envelope.

use serde::{Deserialize, Serialize};

use crate::collision::LinearizedOperator;
use crate::error::{Error, Result};
use crate::fit::linear_fit;
use crate::velocity::{bracket, VelocityGrid};

/// Slack of each constraint on `(p, q)` written in reciprocals
/// `a = 1/p`, `b = 1/q`; the pair is admissible iff every entry is positive.
///
/// `[min(a − 1/4, 1/3 − a), min(b − 1/3, 1 − b), 2a − b, 3b − 2a − 1]`
pub fn pq_slacks(p: f64, q: f64) -> [f64; 4] {
    let (a, b) = (1.0 / p, 1.0 / q);
    [(a - 0.25).min(1.0 / 3.0 - a), (b - 1.0 / 3.0).min(1.0 - b), 2.0 * a - b, 3.0 * b - 2.0 * a - 1.0]
}

/// Direct form `3 < p < 4`, `1 < q < 3`, `p < 2q`, `pq < 3p − 2q`.
pub fn pq_feasible(p: f64, q: f64) -> bool {
    p > 3.0 && p < 4.0 && q > 1.0 && q < 3.0 && p < 2.0 * q && p * q < 3.0 * p - 2.0 * q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentPair {
    pub p: f64,
    pub q: f64,
    pub p_conj: f64,
    pub q_conj: f64,
    /// smallest constraint slack
    pub margin: f64,
}

impl ExponentPair {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !pq_feasible(p, q) {
            return Err(Error::InvalidParameter(format!("(p, q) = ({p}, {q}) violates the exponent constraints")));
        }
        let margin = pq_slacks(p, q).iter().cloned().fold(f64::MAX, f64::min);
        Ok(Self { p, q, p_conj: p / (p - 1.0), q_conj: q / (q - 1.0), margin })
    }

    /// Inner exponent `p′/2`.
    pub fn inner(&self) -> f64 {
        0.5 * self.p_conj
    }

    /// Outer exponent `2q′/p′`.
    pub fn outer(&self) -> f64 {
        2.0 * self.q_conj / self.p_conj
    }
}

/// Scans `p ∈ (3,4)`, `q ∈ (1,3)` on a lattice of spacing `step` and keeps
/// the pairs whose slacks all exceed `margin`. Among them the largest outer
/// exponent `2q′/p′` wins (fastest decay of the outer integrand in `ξ`); ties
/// go to the larger margin.
pub fn scan_exponents(step: f64, margin: f64) -> Result<ExponentPair> {
    if !(step > 0.0 && step < 0.5) || !(margin >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad scan step {step} or margin {margin}")));
    }
    let np = (1.0 / step).round() as usize;
    let nq = (2.0 / step).round() as usize;
    let mut best: Option<ExponentPair> = None;
    for i in 1..np {
        let p = 3.0 + i as f64 * step;
        for j in 1..nq {
            let q = 1.0 + j as f64 * step;
            if !pq_feasible(p, q) {
                continue;
            }
            let pair = ExponentPair::new(p, q)?;
            if pair.margin <= margin {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    let (o, ob) = (pair.outer(), b.outer());
                    o > ob + 1e-12 || ((o - ob).abs() <= 1e-12 && pair.margin > b.margin)
                }
            };
            if better {
                best = Some(pair);
            }
        }
    }
    best.ok_or_else(|| {
        Error::InconsistentOperator(format!("no admissible (p, q) with margin {margin} on a lattice of step {step}"))
    })
}

/// Pointwise kernel values `K(ξᵢ, ξⱼ) = K_ij / w` (the matrix entries carry the
/// quadrature weight of `ξ′`).
fn kernel_value(op: &LinearizedOperator, grid: &VelocityGrid, i: usize, j: usize) -> f64 {
    op.k_matrix[(i, j)] / grid.weight()
}

/// `∫|K(ξᵢ, ξ′)|^α dξ′` for every node.
pub fn alpha_integrals(op: &LinearizedOperator, grid: &VelocityGrid, alpha: f64) -> Vec<f64> {
    let n = op.len();
    let w = grid.weight();
    (0..n)
        .map(|i| w * (0..n).map(|j| kernel_value(op, grid, i, j).abs().powf(alpha)).sum::<f64>())
        .collect()
}

/// Discrete `A_{p′,q′} = (∫(∫|K|^{p′/2} dξ′)^{2q′/p′} dξ)^{1/q′}`.
pub fn a_pq(op: &LinearizedOperator, grid: &VelocityGrid, pair: &ExponentPair) -> f64 {
    let inner = alpha_integrals(op, grid, pair.inner());
    let outer = pair.outer();
    let s: f64 = grid.weight() * inner.iter().map(|v| v.powf(outer)).sum::<f64>();
    s.powf(1.0 / pair.q_conj)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlphaEnvelope {
    pub alpha: f64,
    /// `max_ξ ∫|K|^α dξ′`
    pub sup: f64,
    /// smallest `C` with `∫|K|^α dξ′ ≤ C⟨ξ⟩^{−1}` at every node
    pub constant: f64,
    /// log-log slope of the binned maxima against `⟨ξ⟩` on the outer half of the grid
    pub tail_slope: Option<f64>,
}

pub fn alpha_envelope(op: &LinearizedOperator, grid: &VelocityGrid, alpha: f64) -> AlphaEnvelope {
    let vals = alpha_integrals(op, grid, alpha);
    let br: Vec<f64> = grid.nodes().iter().map(bracket).collect();
    let sup = vals.iter().cloned().fold(0.0, f64::max);
    let constant = vals.iter().zip(&br).map(|(v, b)| v * b).fold(0.0, f64::max);
    // maxima per unit bracket shell
    let bmax = br.iter().cloned().fold(0.0, f64::max);
    let nb = (bmax.ceil() as usize).max(1);
    let mut maxima = vec![0.0f64; nb + 1];
    for (v, b) in vals.iter().zip(&br) {
        let k = b.floor() as usize;
        maxima[k] = maxima[k].max(*v);
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = maxima
        .iter()
        .enumerate()
        .filter(|(k, m)| **m > 0.0 && *k as f64 + 0.5 >= 0.5 * bmax)
        .map(|(k, m)| ((k as f64 + 0.5).ln(), m.ln()))
        .unzip();
    let tail_slope = linear_fit(&xs, &ys).ok().map(|f| f.slope);
    AlphaEnvelope { alpha, sup, constant, tail_slope }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CutoffRow {
    pub per_axis: usize,
    pub cutoff: f64,
    pub spacing: f64,
    pub a_pq: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelEstimateReport {
    pub pair: ExponentPair,
    pub a_pq: f64,
    pub envelopes: Vec<AlphaEnvelope>,
    /// `A_{p′,q′}` at each cutoff, same spacing
    pub refinement: Vec<CutoffRow>,
    /// relative change of `A_{p′,q′}` between the last two rows
    pub saturation: Option<f64>,
    pub saturation_tol: f64,
    pub saturated: bool,
}

/// Grid with the same spacing and cutoff scaled by `factor`; the node count
/// must scale to an integer.
pub fn extended_grid(grid: &VelocityGrid, factor: f64) -> Result<VelocityGrid> {
    let n = grid.per_axis() as f64 * factor;
    if (n - n.round()).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "{} nodes per axis scaled by {factor} is not an integer",
            grid.per_axis()
        )));
    }
    VelocityGrid::new(n.round() as usize, grid.cutoff() * factor)
}

/// Estimates on `op` plus the cutoff-refinement table over `levels`
/// (operators on grids of equal spacing and growing cutoff, `op` first).
pub fn kernel_estimates(
    pair: ExponentPair,
    levels: &[(&LinearizedOperator, &VelocityGrid)],
    saturation_tol: f64,
) -> Result<KernelEstimateReport> {
    let (op, grid) = *levels
        .first()
        .ok_or_else(|| Error::MissingInput("kernel estimates need at least one operator".into()))?;
    let h = grid.spacing();
    for (_, g) in levels {
        if (g.spacing() - h).abs() > 1e-12 * h {
            return Err(Error::InvalidParameter(format!(
                "refinement grids must share the spacing {h}, got {}",
                g.spacing()
            )));
        }
    }
    let refinement: Vec<CutoffRow> = levels
        .iter()
        .map(|(o, g)| CutoffRow { per_axis: g.per_axis(), cutoff: g.cutoff(), spacing: g.spacing(), a_pq: a_pq(o, g, &pair) })
        .collect();
    let saturation = (refinement.len() >= 2).then(|| {
        let (a, b) = (refinement[refinement.len() - 2].a_pq, refinement[refinement.len() - 1].a_pq);
        (b - a).abs() / b.abs().max(f64::MIN_POSITIVE)
    });
    let envelopes = [1.0, 2.0].iter().map(|&al| alpha_envelope(op, grid, al)).collect();
    Ok(KernelEstimateReport {
        pair,
        a_pq: refinement[0].a_pq,
        envelopes,
        saturated: saturation.map_or(false, |s| s <= saturation_tol),
        refinement,
        saturation,
        saturation_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_style_example_pair_is_rejected() {
        // 3.5·2 = 7 is not below 3·3.5 − 2·2 = 6.5
        assert!(!pq_feasible(3.5, 2.0));
        assert!(pq_slacks(3.5, 2.0)[3] < 0.0);
        assert!(ExponentPair::new(3.5, 2.0).is_err());
    }

    #[test]
    fn direct_and_reciprocal_forms_agree() {
        for i in 1..100 {
            for j in 1..200 {
                let (p, q) = (3.0 + 0.01 * i as f64, 1.0 + 0.01 * j as f64);
                let s = pq_slacks(p, q);
                let recip = s.iter().all(|v| *v > 1e-12);
                let near_edge = s.iter().any(|v| v.abs() <= 1e-12);
                if !near_edge {
                    assert_eq!(pq_feasible(p, q), recip, "p = {p}, q = {q}");
                }
            }
        }
    }

    #[test]
    fn scanned_pair_is_admissible_and_integrable() {
        let pair = scan_exponents(0.01, 0.01).unwrap();
        assert!(pq_feasible(pair.p, pair.q));
        assert!(pair.margin > 0.01);
        assert!(pair.inner() > 0.0 && pair.inner() < 3.0);
        assert!(pair.outer() > 3.0);
    }

    #[test]
    fn too_large_margin_finds_nothing() {
        assert!(scan_exponents(0.01, 0.2).is_err());
    }
}
