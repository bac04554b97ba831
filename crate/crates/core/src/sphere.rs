//! Quadrature rules on the unit sphere for the collision integral.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Configured sphere rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SphereRule {
    /// Fixed Lebedev node set (6, 14, 26, 38 or 50 points).
    Lebedev { points: usize },
    /// Product rule in a frame aligned with the relative velocity: Gauss-Legendre
    /// in `μ = cos θ` on the upper hemisphere, uniform in azimuth. Post-collision
    /// velocities are invariant under `ω ↦ −ω`, so the lower hemisphere is folded in.
    Aligned { n_polar: usize, n_azimuth: usize },
}

impl Default for SphereRule {
    fn default() -> Self {
        SphereRule::Aligned { n_polar: 2, n_azimuth: 6 }
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
            let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, z);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let (pn, pn1) = if n == 1 { (z, 1.0) } else { (p1, p0) };
        let dp = n as f64 * (z * pn - pn1) / (z * z - 1.0);
        x[i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
    }
    (x, w)
}

#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    rule: SphereRule,
    /// For Lebedev rules: absolute directions. For aligned rules: directions
    /// in the local frame whose third axis is the relative velocity.
    nodes: Vec<([f64; 3], f64)>,
}

fn push_octahedral(out: &mut Vec<([f64; 3], f64)>, w: f64) {
    for a in 0..3 {
        for s in [1.0, -1.0] {
            let mut p = [0.0; 3];
            p[a] = s;
            out.push((p, w));
        }
    }
}

fn push_cube(out: &mut Vec<([f64; 3], f64)>, w: f64) {
    let c = 1.0 / 3f64.sqrt();
    for sx in [1.0, -1.0] {
        for sy in [1.0, -1.0] {
            for sz in [1.0, -1.0] {
                out.push(([sx * c, sy * c, sz * c], w));
            }
        }
    }
}

fn push_edges(out: &mut Vec<([f64; 3], f64)>, w: f64) {
    let c = 1.0 / 2f64.sqrt();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        for sa in [1.0, -1.0] {
            for sb in [1.0, -1.0] {
                let mut p = [0.0; 3];
                p[a] = sa * c;
                p[b] = sb * c;
                out.push((p, w));
            }
        }
    }
}

/// Points `(l, l, m)` with all permutations and signs.
fn push_llm(out: &mut Vec<([f64; 3], f64)>, l: f64, m: f64, w: f64) {
    for pos in 0..3 {
        for s0 in [1.0, -1.0] {
            for s1 in [1.0, -1.0] {
                for s2 in [1.0, -1.0] {
                    let mut p = [s0 * l, s1 * l, s2 * l];
                    p[pos] = match pos {
                        0 => s0 * m,
                        1 => s1 * m,
                        _ => s2 * m,
                    };
                    out.push((p, w));
                }
            }
        }
    }
}

/// Points `(p, q, 0)` with all permutations and signs.
fn push_pq0(out: &mut Vec<([f64; 3], f64)>, p: f64, q: f64, w: f64) {
    for zero in 0..3 {
        let others: Vec<usize> = (0..3).filter(|&a| a != zero).collect();
        for (va, vb) in [(p, q), (q, p)] {
            for sa in [1.0, -1.0] {
                for sb in [1.0, -1.0] {
                    let mut pt = [0.0; 3];
                    pt[others[0]] = sa * va;
                    pt[others[1]] = sb * vb;
                    out.push((pt, w));
                }
            }
        }
    }
}

impl SphereQuadrature {
    pub fn new(rule: SphereRule) -> Result<Self> {
        let mut nodes = Vec::new();
        match rule {
            SphereRule::Lebedev { points } => {
                match points {
                    6 => push_octahedral(&mut nodes, 1.0 / 6.0),
                    14 => {
                        push_octahedral(&mut nodes, 1.0 / 15.0);
                        push_cube(&mut nodes, 3.0 / 40.0);
                    }
                    26 => {
                        push_octahedral(&mut nodes, 1.0 / 21.0);
                        push_edges(&mut nodes, 4.0 / 105.0);
                        push_cube(&mut nodes, 9.0 / 280.0);
                    }
                    38 => {
                        push_octahedral(&mut nodes, 1.0 / 105.0);
                        push_cube(&mut nodes, 9.0 / 280.0);
                        push_pq0(&mut nodes, 0.888_073_833_977_115_3, 0.459_700_843_380_983_1, 1.0 / 35.0);
                    }
                    50 => {
                        push_octahedral(&mut nodes, 4.0 / 315.0);
                        push_edges(&mut nodes, 64.0 / 2835.0);
                        push_cube(&mut nodes, 27.0 / 1280.0);
                        let l = 1.0 / 11f64.sqrt();
                        push_llm(&mut nodes, l, 3.0 * l, 14641.0 / 725_760.0);
                    }
                    _ => {
                        return Err(Error::InvalidParameter(format!(
                            "unsupported Lebedev rule with {points} points (use 6, 14, 26, 38 or 50)"
                        )))
                    }
                }
                for n in nodes.iter_mut() {
                    n.1 *= FOUR_PI;
                }
            }
            SphereRule::Aligned { n_polar, n_azimuth } => {
                if n_polar == 0 || n_azimuth == 0 {
                    return Err(Error::InvalidParameter("aligned sphere rule needs n_polar, n_azimuth >= 1".into()));
                }
                let (x, w) = gauss_legendre(n_polar);
                let dphi = 2.0 * std::f64::consts::PI / n_azimuth as f64;
                for (xk, wk) in x.iter().zip(&w) {
                    // map [-1, 1] to μ ∈ [0, 1]
                    let mu = 0.5 * (xk + 1.0);
                    let wmu = 0.5 * wk;
                    let s = (1.0 - mu * mu).max(0.0).sqrt();
                    for l in 0..n_azimuth {
                        let phi = dphi * (l as f64 + 0.5);
                        // factor 2: both hemispheres
                        nodes.push(([s * phi.cos(), s * phi.sin(), mu], 2.0 * wmu * dphi));
                    }
                }
            }
        }
        Ok(Self { rule, nodes })
    }

    pub fn rule(&self) -> SphereRule {
        self.rule
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn weight_sum(&self) -> f64 {
        self.nodes.iter().map(|n| n.1).sum()
    }

    /// Fixed (frame-independent) node list; for aligned rules these are local
    /// coordinates.
    pub fn raw_nodes(&self) -> &[([f64; 3], f64)] {
        &self.nodes
    }

    /// Directions and weights to use for relative velocity `zeta`.
    pub fn directions(&self, zeta: &[f64; 3], out: &mut Vec<([f64; 3], f64)>) {
        out.clear();
        match self.rule {
            SphereRule::Lebedev { .. } => out.extend_from_slice(&self.nodes),
            SphereRule::Aligned { .. } => {
                let norm = (zeta[0] * zeta[0] + zeta[1] * zeta[1] + zeta[2] * zeta[2]).sqrt();
                if norm == 0.0 {
                    out.extend_from_slice(&self.nodes);
                    return;
                }
                let e3 = [zeta[0] / norm, zeta[1] / norm, zeta[2] / norm];
                // deterministic perpendicular: cross with the least aligned axis
                let a = if e3[0].abs() <= e3[1].abs() && e3[0].abs() <= e3[2].abs() {
                    [1.0, 0.0, 0.0]
                } else if e3[1].abs() <= e3[2].abs() {
                    [0.0, 1.0, 0.0]
                } else {
                    [0.0, 0.0, 1.0]
                };
                let mut e1 = cross(&e3, &a);
                let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
                e1.iter_mut().for_each(|v| *v /= n1);
                let e2 = cross(&e3, &e1);
                for (p, w) in &self.nodes {
                    let d = [
                        p[0] * e1[0] + p[1] * e2[0] + p[2] * e3[0],
                        p[0] * e1[1] + p[1] * e2[1] + p[2] * e3[1],
                        p[0] * e1[2] + p[1] * e2[2] + p[2] * e3[2],
                    ];
                    out.push((d, *w));
                }
            }
        }
    }
}

#[inline]
fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(n: i64) -> f64 {
        if n <= 0 {
            1.0
        } else {
            (n as f64) * double_factorial(n - 2)
        }
    }

    fn exact_monomial(a: i64, b: i64, c: i64) -> f64 {
        if a % 2 == 1 || b % 2 == 1 || c % 2 == 1 {
            return 0.0;
        }
        FOUR_PI * double_factorial(a - 1) * double_factorial(b - 1) * double_factorial(c - 1)
            / double_factorial(a + b + c + 1)
    }

    #[test]
    fn lebedev_rules_integrate_polynomials_exactly() {
        for (points, degree) in [(6, 3), (14, 5), (26, 7), (38, 9), (50, 11)] {
            let q = SphereQuadrature::new(SphereRule::Lebedev { points }).unwrap();
            assert_eq!(q.len(), points);
            assert!((q.weight_sum() - FOUR_PI).abs() < 1e-10);
            for a in 0..=degree {
                for b in 0..=(degree - a) {
                    for c in 0..=(degree - a - b) {
                        let num: f64 = q
                            .raw_nodes()
                            .iter()
                            .map(|(p, w)| w * p[0].powi(a as i32) * p[1].powi(b as i32) * p[2].powi(c as i32))
                            .sum();
                        let ex = exact_monomial(a, b, c);
                        assert!((num - ex).abs() < 1e-12, "rule {points}: x^{a} y^{b} z^{c}: {num} vs {ex}");
                    }
                }
            }
        }
    }

    #[test]
    fn aligned_rule_integrates_abs_cos_exactly() {
        let q = SphereQuadrature::new(SphereRule::Aligned { n_polar: 2, n_azimuth: 6 }).unwrap();
        assert!((q.weight_sum() - FOUR_PI).abs() < 1e-12);
        let zeta = [0.3, -1.2, 0.7];
        let nz = (0.09f64 + 1.44 + 0.49).sqrt();
        let mut dirs = Vec::new();
        q.directions(&zeta, &mut dirs);
        let s: f64 = dirs.iter().map(|(d, w)| w * (d[0] * zeta[0] + d[1] * zeta[1] + d[2] * zeta[2]).abs()).sum();
        assert!((s - 2.0 * std::f64::consts::PI * nz).abs() < 1e-12);
        for (d, _) in &dirs {
            assert!(((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn gauss_legendre_matches_known_nodes() {
        let (x, w) = gauss_legendre(2);
        assert!((x[0].abs() - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        assert!((w[0] - 1.0).abs() < 1e-14);
        let (x, w) = gauss_legendre(1);
        assert!(x[0].abs() < 1e-15 && (w[0] - 2.0).abs() < 1e-14);
        let (_, w) = gauss_legendre(7);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
    }
}
