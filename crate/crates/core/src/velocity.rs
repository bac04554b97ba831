//! Velocity-space discretization: Cartesian grid, equilibrium state,
//! moments and the null-space projector.

use nalgebra::{Matrix5, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `1 + |ξ|`.
#[inline]
pub fn bracket(xi: &[f64; 3]) -> f64 {
    1.0 + (xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]).sqrt()
}

/// Uniform tensor grid on `[-R, R]^3` with midpoint weights.
#[derive(Debug, Clone)]
pub struct VelocityGrid {
    nodes: Vec<[f64; 3]>,
    axis: Vec<f64>,
    weight: f64,
    cutoff: f64,
    per_axis: usize,
}

impl VelocityGrid {
    pub fn new(per_axis: usize, cutoff: f64) -> Result<Self> {
        if per_axis < 4 {
            return Err(Error::InvalidParameter(format!(
                "velocity grid needs at least 4 nodes per axis, got {per_axis}"
            )));
        }
        if !(cutoff > 0.0) || !cutoff.is_finite() {
            return Err(Error::InvalidParameter(format!("velocity cutoff must be positive, got {cutoff}")));
        }
        let h = 2.0 * cutoff / per_axis as f64;
        let axis: Vec<f64> = (0..per_axis).map(|i| -cutoff + (i as f64 + 0.5) * h).collect();
        let mut nodes = Vec::with_capacity(per_axis.pow(3));
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    nodes.push([a, b, c]);
                }
            }
        }
        Ok(Self { nodes, axis, weight: h * h * h, cutoff, per_axis })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> [f64; 3] {
        self.nodes[i]
    }

    /// Common quadrature weight of every node.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![self.weight; self.len()]
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    pub fn per_axis(&self) -> usize {
        self.per_axis
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.cutoff / self.per_axis as f64
    }

    pub fn axis(&self) -> &[f64] {
        &self.axis
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.per_axis + j) * self.per_axis + k
    }

    /// Index of the node obtained by `ξ₁ ↦ −ξ₁`.
    pub fn reflect_x1(&self, idx: usize) -> usize {
        let n = self.per_axis;
        let i = idx / (n * n);
        let rest = idx % (n * n);
        (n - 1 - i) * n * n + rest
    }

    pub fn brackets(&self) -> Vec<f64> {
        self.nodes.iter().map(bracket).collect()
    }

    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weight * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
    }

    pub fn norm(&self, a: &[f64]) -> f64 {
        self.inner(a, a).sqrt()
    }

    /// Short identifier of the grid geometry, used to key operator caches.
    pub fn descriptor(&self) -> String {
        format!("cartesian:{}:{:.17e}", self.per_axis, self.cutoff)
    }
}

/// Far-field equilibrium `(ρ∞, u∞, T∞)` together with the hard-sphere constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquilibriumState {
    pub rho_inf: f64,
    pub u_inf: [f64; 3],
    #[serde(rename = "T_inf")]
    pub t_inf: f64,
    pub sigma0: f64,
}

impl EquilibriumState {
    pub fn new(rho_inf: f64, u_inf: [f64; 3], t_inf: f64, sigma0: f64) -> Result<Self> {
        let s = Self { rho_inf, u_inf, t_inf, sigma0 };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.rho_inf.is_finite()
            && self.t_inf.is_finite()
            && self.sigma0.is_finite()
            && self.u_inf.iter().all(|u| u.is_finite());
        if !finite || self.rho_inf <= 0.0 || self.t_inf <= 0.0 || self.sigma0 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "equilibrium needs finite rho_inf > 0, T_inf > 0, sigma0 > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// `u∞,₁ / sqrt(5 T∞ / 3)`; does not read the density.
    pub fn mach_number(&self) -> f64 {
        self.u_inf[0] / (5.0 * self.t_inf / 3.0).sqrt()
    }

    /// Fails unless the far field is a supersonic inflow, `M∞ < −1` strictly
    /// with no tangential bulk velocity.
    pub fn require_supersonic_inflow(&self) -> Result<()> {
        self.validate()?;
        let mach = self.mach_number();
        if self.u_inf[1] != 0.0 || self.u_inf[2] != 0.0 || !(mach < -1.0) {
            return Err(Error::NotSupersonic { mach });
        }
        Ok(())
    }

    /// Default velocity cutoff `6 sqrt(T∞) + |u∞|`.
    pub fn default_cutoff(&self) -> f64 {
        let u = self.u_inf;
        6.0 * self.t_inf.sqrt() + (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
    }

    /// Unit-density Maxwellian `M[1, u∞, T∞](ξ)`.
    #[inline]
    pub fn unit_maxwellian_at(&self, xi: &[f64; 3]) -> f64 {
        let t = self.t_inf;
        let d0 = xi[0] - self.u_inf[0];
        let d1 = xi[1] - self.u_inf[1];
        let d2 = xi[2] - self.u_inf[2];
        (2.0 * std::f64::consts::PI * t).powf(-1.5) * (-(d0 * d0 + d1 * d1 + d2 * d2) / (2.0 * t)).exp()
    }

    /// `W₀(ξ) = M[1, u∞, T∞](ξ)^{1/2}`.
    #[inline]
    pub fn w0_at(&self, xi: &[f64; 3]) -> f64 {
        let t = self.t_inf;
        let d0 = xi[0] - self.u_inf[0];
        let d1 = xi[1] - self.u_inf[1];
        let d2 = xi[2] - self.u_inf[2];
        (2.0 * std::f64::consts::PI * t).powf(-0.75) * (-(d0 * d0 + d1 * d1 + d2 * d2) / (4.0 * t)).exp()
    }
}

pub fn maxwellian(state: &EquilibriumState, grid: &VelocityGrid) -> Vec<f64> {
    grid.nodes().iter().map(|x| state.rho_inf * state.unit_maxwellian_at(x)).collect()
}

pub fn weight_w0(state: &EquilibriumState, grid: &VelocityGrid) -> Vec<f64> {
    grid.nodes().iter().map(|x| state.w0_at(x)).collect()
}

pub fn mach_number(state: &EquilibriumState) -> f64 {
    state.mach_number()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

impl Moments {
    pub fn as_array(&self) -> [f64; 5] {
        [self.mass, self.momentum[0], self.momentum[1], self.momentum[2], self.energy]
    }
}

/// Discrete integrals of `f · {1, ξ, |ξ|²}`.
pub fn moments(f: &[f64], grid: &VelocityGrid) -> Moments {
    let mut m = [0.0; 5];
    for (v, x) in f.iter().zip(grid.nodes()) {
        m[0] += v;
        m[1] += v * x[0];
        m[2] += v * x[1];
        m[3] += v * x[2];
        m[4] += v * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }
    let w = grid.weight();
    Moments { mass: w * m[0], momentum: [w * m[1], w * m[2], w * m[3]], energy: w * m[4] }
}

/// Moments computed with absolute values, the natural scale for relative
/// conservation checks.
pub fn moment_scale(f: &[f64], grid: &VelocityGrid) -> [f64; 5] {
    let mut m = [0.0; 5];
    for (v, x) in f.iter().zip(grid.nodes()) {
        let a = v.abs();
        m[0] += a;
        m[1] += a * x[0].abs();
        m[2] += a * x[1].abs();
        m[3] += a * x[2].abs();
        m[4] += a * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]);
    }
    m.map(|v| v * grid.weight())
}

#[inline]
fn collision_invariants(xi: &[f64; 3]) -> [f64; 5] {
    [1.0, xi[0], xi[1], xi[2], xi[0] * xi[0] + xi[1] * xi[1] + xi[2] * xi[2]]
}

/// Orthonormal basis of the discrete null space `span W₀{1, ξ, |ξ|²}`.
///
/// Basis vector `k` is `Σ_l C[k][l] · W₀ ψ_l`, so it can be evaluated at
/// off-grid velocities as well.
#[derive(Debug, Clone)]
pub struct NullSpaceBasis {
    vectors: Vec<Vec<f64>>,
    coeffs: [[f64; 5]; 5],
    state: EquilibriumState,
    weight: f64,
    gram_condition: f64,
}

impl NullSpaceBasis {
    pub fn build(state: &EquilibriumState, grid: &VelocityGrid) -> Result<Self> {
        state.validate()?;
        let w0 = weight_w0(state, grid);
        let n = grid.len();
        let mut gens: Vec<Vec<f64>> = (0..5)
            .map(|l| (0..n).map(|i| w0[i] * collision_invariants(&grid.node(i))[l]).collect())
            .collect();
        let mut coeffs = [[0.0; 5]; 5];

        // Condition number of the Gram matrix of the unit-normalized generators.
        let mut scaled = gens.clone();
        for (l, g) in scaled.iter_mut().enumerate() {
            let nrm = grid.norm(g);
            if !(nrm > 0.0) {
                return Err(Error::DegenerateGrid(format!("generator {l} vanishes on the grid")));
            }
            g.iter_mut().for_each(|v| *v /= nrm);
        }
        let gram = Matrix5::from_fn(|a, b| grid.inner(&scaled[a], &scaled[b]));
        let eig = SymmetricEigen::new(gram).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
        let gram_condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if !(gram_condition < 1e8) {
            return Err(Error::DegenerateGrid(format!(
                "Gram condition number {gram_condition:.3e} exceeds 1e8"
            )));
        }

        // Modified Gram-Schmidt with one reorthogonalization sweep; the
        // coefficient rows track every operation applied to the generators.
        for k in 0..5 {
            coeffs[k][k] = 1.0;
            for _sweep in 0..2 {
                for j in 0..k {
                    let proj = grid.inner(&gens[k], &gens[j]);
                    let (head, tail) = gens.split_at_mut(k);
                    for (a, b) in tail[0].iter_mut().zip(&head[j]) {
                        *a -= proj * b;
                    }
                    let cj = coeffs[j];
                    for (c, d) in coeffs[k].iter_mut().zip(cj) {
                        *c -= proj * d;
                    }
                }
            }
            let nrm = grid.norm(&gens[k]);
            if !(nrm > 0.0) {
                return Err(Error::DegenerateGrid(format!("generator {k} is linearly dependent")));
            }
            gens[k].iter_mut().for_each(|v| *v /= nrm);
            coeffs[k].iter_mut().for_each(|v| *v /= nrm);
        }
        Ok(Self { vectors: gens, coeffs, state: *state, weight: grid.weight(), gram_condition })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn coefficients(&self) -> &[[f64; 5]; 5] {
        &self.coeffs
    }

    pub fn gram_condition(&self) -> f64 {
        self.gram_condition
    }

    pub fn state(&self) -> &EquilibriumState {
        &self.state
    }

    /// Values of the five basis functions at an arbitrary velocity.
    #[inline]
    pub fn eval_at(&self, xi: &[f64; 3]) -> [f64; 5] {
        let w = self.state.w0_at(xi);
        let psi = collision_invariants(xi);
        let mut out = [0.0; 5];
        for (k, o) in out.iter_mut().enumerate() {
            let c = &self.coeffs[k];
            *o = w * (c[0] * psi[0] + c[1] * psi[1] + c[2] * psi[2] + c[3] * psi[3] + c[4] * psi[4]);
        }
        out
    }

    /// `(φ_k, f)` for the five basis vectors.
    pub fn project_coefficients(&self, f: &[f64]) -> [f64; 5] {
        let mut c = [0.0; 5];
        for (k, ck) in c.iter_mut().enumerate() {
            *ck = self.weight * self.vectors[k].iter().zip(f).map(|(a, b)| a * b).sum::<f64>();
        }
        c
    }

    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let c = self.project_coefficients(f);
        let mut out = vec![0.0; f.len()];
        for (k, ck) in c.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&self.vectors[k]) {
                *o += ck * v;
            }
        }
        out
    }

    /// In-place `f ← (I − P) f`.
    pub fn remove_projection(&self, f: &mut [f64]) {
        let c = self.project_coefficients(f);
        for (k, ck) in c.iter().enumerate() {
            for (o, v) in f.iter_mut().zip(&self.vectors[k]) {
                *o -= ck * v;
            }
        }
    }
}

pub fn build_null_basis(state: &EquilibriumState, grid: &VelocityGrid) -> Result<NullSpaceBasis> {
    NullSpaceBasis::build(state, grid)
}

pub fn project_p(f: &[f64], basis: &NullSpaceBasis) -> Vec<f64> {
    basis.project(f)
}
