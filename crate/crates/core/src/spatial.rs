//! Half-space discretization in `x₁`, tangential Fourier modes, distribution
//! fields, boundary data, lifts and the damped free-transport semigroup `S₀`.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::velocity::{bracket, EquilibriumState, VelocityGrid};

/// C² cutoff: 1 on `[0, 1]`, 0 on `[2, ∞)`, built from the integral of the
/// uniform quadratic B-spline supported on `[1, 2]`.
pub fn mollifier(s: f64) -> f64 {
    let s = s.abs();
    if s <= 1.0 {
        return 1.0;
    }
    if s >= 2.0 {
        return 0.0;
    }
    let u = 3.0 * (s - 1.0);
    let integral = if u <= 1.0 {
        u * u * u / 6.0
    } else if u <= 2.0 {
        1.0 / 6.0 + (-u * u * u / 3.0 + 1.5 * u * u - 1.5 * u + 1.0 / 3.0)
    } else {
        1.0 - (3.0 - u).powi(3) / 6.0
    };
    1.0 - integral
}

/// Derivative of [`mollifier`] for `s ≥ 0`.
pub fn mollifier_derivative(s: f64) -> f64 {
    if s <= 1.0 || s >= 2.0 {
        return 0.0;
    }
    let u = 3.0 * (s - 1.0);
    let b = if u <= 1.0 {
        0.5 * u * u
    } else if u <= 2.0 {
        0.5 * (-2.0 * u * u + 6.0 * u - 3.0)
    } else {
        0.5 * (3.0 - u) * (3.0 - u)
    };
    -3.0 * b
}

/// `χ(s)`: 1 for `s > 0`, else 0.
#[inline]
pub fn chi(s: f64) -> f64 {
    if s > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Nodes in `x₁ ∈ [0, X_max]` with geometric spacing, and the set of
/// tangential wave vectors `k = 2π m / ℓ`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpatialGrid {
    nodes: Vec<f64>,
    stretch: f64,
    x_max: f64,
    modes: Vec<[i32; 2]>,
    period: f64,
}

impl SpatialGrid {
    pub fn new(n_x: usize, x_max: f64, stretch: f64, modes: Vec<[i32; 2]>, period: f64) -> Result<Self> {
        if n_x < 3 {
            return Err(Error::InvalidParameter(format!("spatial grid needs at least 3 nodes, got {n_x}")));
        }
        if !(x_max > 0.0) || !(stretch >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need x_max > 0 and stretch >= 1 (got {x_max}, {stretch})"
            )));
        }
        if modes.is_empty() || modes[0] != [0, 0] {
            return Err(Error::InvalidParameter("the first tangential mode must be [0, 0]".into()));
        }
        if modes.len() > 5 {
            return Err(Error::InvalidParameter(format!("at most 5 tangential modes, got {}", modes.len())));
        }
        for (a, m) in modes.iter().enumerate() {
            if modes[..a].contains(m) {
                return Err(Error::InvalidParameter(format!("duplicate tangential mode {m:?}")));
            }
            if !modes.contains(&[-m[0], -m[1]]) {
                return Err(Error::InvalidParameter(format!("tangential mode set must be closed under negation ({m:?})")));
            }
        }
        if modes.len() > 1 && !(period > 0.0) {
            return Err(Error::InvalidParameter("tangential period must be positive".into()));
        }
        let last = (n_x - 1) as f64;
        let nodes: Vec<f64> = (0..n_x)
            .map(|m| {
                if stretch == 1.0 {
                    x_max * m as f64 / last
                } else {
                    x_max * (stretch.powi(m as i32) - 1.0) / (stretch.powf(last) - 1.0)
                }
            })
            .collect();
        Ok(Self { nodes, stretch, x_max, modes, period })
    }

    pub fn slab(n_x: usize, x_max: f64, stretch: f64) -> Result<Self> {
        Self::new(n_x, x_max, stretch, vec![[0, 0]], 1.0)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn stretch(&self) -> f64 {
        self.stretch
    }

    pub fn modes(&self) -> &[[i32; 2]] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn is_slab(&self) -> bool {
        self.modes.len() == 1
    }

    pub fn wave_vector(&self, m: usize) -> [f64; 2] {
        let c = 2.0 * std::f64::consts::PI / self.period;
        [c * self.modes[m][0] as f64, c * self.modes[m][1] as f64]
    }

    /// Trapezoid weights in `x₁`.
    pub fn quad_weights(&self) -> Vec<f64> {
        let n = self.len();
        let mut w = vec![0.0; n];
        for m in 0..n - 1 {
            let d = self.nodes[m + 1] - self.nodes[m];
            w[m] += 0.5 * d;
            w[m + 1] += 0.5 * d;
        }
        w
    }

    /// Far-field truncation must be dominated by the weight `e^{σx₁}`.
    pub fn check_far_field(&self, sigma: f64) -> Result<()> {
        if self.x_max * sigma < 10.0 {
            return Err(Error::InvalidParameter(format!(
                "X_max = {} is below 10/σ = {} for σ = {sigma}",
                self.x_max,
                10.0 / sigma
            )));
        }
        Ok(())
    }

    /// For every target mode, the pairs `(m1, m2)` with `k1 + k2 = k`.
    pub fn product_table(&self) -> Vec<Vec<(usize, usize)>> {
        let n = self.modes.len();
        let mut table = vec![Vec::new(); n];
        for a in 0..n {
            for b in 0..n {
                let s = [self.modes[a][0] + self.modes[b][0], self.modes[a][1] + self.modes[b][1]];
                if let Some(t) = self.modes.iter().position(|m| *m == s) {
                    table[t].push((a, b));
                }
            }
        }
        table
    }

    /// Sample points in the tangential period cell used for sup norms.
    pub fn tangential_samples(&self) -> Vec<[f64; 2]> {
        if self.is_slab() {
            return vec![[0.0, 0.0]];
        }
        let n = 8;
        let mut out = Vec::with_capacity(n * n);
        for a in 0..n {
            for b in 0..n {
                out.push([self.period * a as f64 / n as f64, self.period * b as f64 / n as f64]);
            }
        }
        out
    }

    /// Location of `x` for linear interpolation: `(m, θ)` with
    /// `x = (1−θ) x_m + θ x_{m+1}`, or `None` outside `[0, X_max]`.
    #[inline]
    pub fn locate(&self, x: f64) -> Option<(usize, f64)> {
        if !(x >= 0.0) || x > self.x_max {
            return None;
        }
        let n = self.nodes.len();
        let m = match self.nodes.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => (i - 1).min(n - 2),
        };
        let th = (x - self.nodes[m]) / (self.nodes[m + 1] - self.nodes[m]);
        Some((m, th.clamp(0.0, 1.0)))
    }
}

/// What a field stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// plain perturbation `f`
    Plain,
    /// `g = e^{σx₁}(f − φ_R f̃ − U)`
    Weighted,
}

/// Values on `(x₁ node, tangential mode, velocity node)`; mode coefficients
/// are complex.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    pub n_x: usize,
    pub n_modes: usize,
    pub n_v: usize,
    pub data: Vec<Complex64>,
    pub repr: Representation,
    pub time: f64,
}

impl DistributionField {
    pub fn zeros(n_x: usize, n_modes: usize, n_v: usize, repr: Representation) -> Self {
        Self { n_x, n_modes, n_v, data: vec![Complex64::new(0.0, 0.0); n_x * n_modes * n_v], repr, time: 0.0 }
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self::zeros(other.n_x, other.n_modes, other.n_v, other.repr)
    }

    pub fn for_grids(x: &SpatialGrid, v: &VelocityGrid, repr: Representation) -> Self {
        Self::zeros(x.len(), x.n_modes(), v.len(), repr)
    }

    #[inline]
    pub fn offset(&self, ix: usize, m: usize) -> usize {
        (ix * self.n_modes + m) * self.n_v
    }

    pub fn slice(&self, ix: usize, m: usize) -> &[Complex64] {
        let o = self.offset(ix, m);
        &self.data[o..o + self.n_v]
    }

    pub fn slice_mut(&mut self, ix: usize, m: usize) -> &mut [Complex64] {
        let o = self.offset(ix, m);
        &mut self.data[o..o + self.n_v]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_x == other.n_x && self.n_modes == other.n_modes && self.n_v == other.n_v
    }

    /// `self += a · other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += o * a;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|v| *v *= a);
    }

    pub fn difference(&self, other: &Self) -> Self {
        let mut d = self.clone();
        d.axpy(-1.0, other);
        d
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Multiplies every `x₁` slice by `f(x₁)`.
    pub fn scale_by_x(&mut self, xgrid: &SpatialGrid, f: impl Fn(f64) -> f64) {
        let stride = self.n_modes * self.n_v;
        for (ix, chunk) in self.data.chunks_mut(stride).enumerate() {
            let s = f(xgrid.nodes()[ix]);
            chunk.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Real field from a slab profile `p[ix][iv]` placed in the zero mode.
    pub fn from_slab_profile(profile: &[Vec<f64>], n_modes: usize, repr: Representation) -> Self {
        let n_x = profile.len();
        let n_v = profile.first().map_or(0, |p| p.len());
        let mut f = Self::zeros(n_x, n_modes, n_v, repr);
        for (ix, row) in profile.iter().enumerate() {
            for (d, v) in f.slice_mut(ix, 0).iter_mut().zip(row) {
                *d = Complex64::new(*v, 0.0);
            }
        }
        f
    }

    /// Ratio of the far-field slice maximum to the global maximum.
    pub fn far_field_ratio(&self) -> f64 {
        let peak = self.max_abs();
        if peak == 0.0 {
            return 0.0;
        }
        let o = self.offset(self.n_x - 1, 0);
        let last = self.data[o..].iter().map(|v| v.norm()).fold(0.0, f64::max);
        last / peak
    }
}

/// Boundary data family for the experiments.
///
/// `a₀(ξ) = δ̃ ⟨ξ⟩^{−β} exp(−|ξ−u∞|²/4T∞)` on `ξ₁ > 0`, and the perturbation
/// datum `ε A(t) G(x′) ψ_b(ξ)` with `ψ_b = a₀/δ̃`, `A(t) = 1 + ½ sin(2πt/T*)`
/// (or `A ≡ 1` for time-independent data) and `G` a Gaussian in `x′`
/// truncated at radius `R`. With slab symmetry the tangential profile is 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoundarySpec {
    pub delta_tilde: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub period: f64,
    pub time_dependent: bool,
    pub profile_width: f64,
    /// `R` of `φ_R`; `None` means `φ_R ≡ 1`, the slab-symmetric case.
    pub mollifier_radius: Option<f64>,
}

impl BoundarySpec {
    pub fn validate(&self, state: &EquilibriumState, vgrid: &VelocityGrid) -> Result<()> {
        if !(self.beta > 1.5) {
            return Err(Error::InvalidParameter(format!("β must exceed 3/2, got {}", self.beta)));
        }
        if !(self.delta_tilde >= 0.0) || !(self.epsilon >= 0.0) || !(self.period > 0.0) {
            return Err(Error::InvalidParameter("need δ̃ ≥ 0, ε ≥ 0 and a positive period".into()));
        }
        let a0 = self.a0(state, vgrid);
        for (v, x) in a0.iter().zip(vgrid.nodes()) {
            if v.abs() > self.delta_tilde * bracket(x).powf(-self.beta) * (1.0 + 1e-14) {
                return Err(Error::InvalidParameter("a₀ violates |a₀| ≤ δ̃⟨ξ⟩^{−β}".into()));
            }
        }
        for t in [0.0, 0.3 * self.period, 0.77 * self.period] {
            if (self.amplitude(t + self.period) - self.amplitude(t)).abs() > 1e-12 {
                return Err(Error::InvalidParameter("boundary datum is not T*-periodic".into()));
            }
        }
        Ok(())
    }

    pub fn velocity_profile(&self, state: &EquilibriumState, vgrid: &VelocityGrid) -> Vec<f64> {
        let u = state.u_inf;
        vgrid
            .nodes()
            .iter()
            .map(|x| {
                let d = (x[0] - u[0]).powi(2) + (x[1] - u[1]).powi(2) + (x[2] - u[2]).powi(2);
                chi(x[0]) * bracket(x).powf(-self.beta) * (-d / (4.0 * state.t_inf)).exp()
            })
            .collect()
    }

    pub fn a0(&self, state: &EquilibriumState, vgrid: &VelocityGrid) -> Vec<f64> {
        self.velocity_profile(state, vgrid).into_iter().map(|v| self.delta_tilde * v).collect()
    }

    pub fn amplitude(&self, t: f64) -> f64 {
        if self.time_dependent {
            1.0 + 0.5 * (2.0 * std::f64::consts::PI * t / self.period).sin()
        } else {
            1.0
        }
    }

    pub fn amplitude_dt(&self, t: f64) -> f64 {
        if self.time_dependent {
            let w = 2.0 * std::f64::consts::PI / self.period;
            0.5 * w * (w * t).cos()
        } else {
            0.0
        }
    }

    /// Fourier coefficients of the tangential profile `G`.
    pub fn tangential_profile(&self, xgrid: &SpatialGrid) -> Vec<f64> {
        if xgrid.is_slab() {
            return vec![1.0];
        }
        let r = self.mollifier_radius.unwrap_or(0.5 * xgrid.period());
        let s = self.profile_width;
        torus_coefficients(xgrid, |rad| if rad <= r { (-rad * rad / (2.0 * s * s)).exp() } else { 0.0 })
    }

    /// Fourier coefficients of `φ_R(x′) = φ(|x′|/R)`.
    pub fn mollifier_modes(&self, xgrid: &SpatialGrid) -> Result<Vec<f64>> {
        match self.mollifier_radius {
            None => {
                let mut c = vec![0.0; xgrid.n_modes()];
                c[0] = 1.0;
                Ok(c)
            }
            Some(r) => {
                if xgrid.is_slab() {
                    return Err(Error::InvalidParameter(
                        "a finite mollifier radius needs tangential modes; use null for slab runs".into(),
                    ));
                }
                if 4.0 * r > xgrid.period() {
                    return Err(Error::InvalidParameter(format!(
                        "tangential period {} must be at least 4R = {}",
                        xgrid.period(),
                        4.0 * r
                    )));
                }
                Ok(torus_coefficients(xgrid, |rad| mollifier(rad / r)))
            }
        }
    }
}

/// `(1/ℓ²) ∫_{cell} f(|x′|) e^{−ik·x′} dx′` for radial `f` centred at the
/// origin of the period cell, by a 256² midpoint rule. Radial symmetry makes
/// the coefficients real.
fn torus_coefficients(xgrid: &SpatialGrid, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let l = xgrid.period();
    let n = 256;
    let h = l / n as f64;
    let mut out = vec![0.0; xgrid.n_modes()];
    for a in 0..n {
        let x2 = -0.5 * l + (a as f64 + 0.5) * h;
        for b in 0..n {
            let x3 = -0.5 * l + (b as f64 + 0.5) * h;
            let v = f((x2 * x2 + x3 * x3).sqrt());
            if v == 0.0 {
                continue;
            }
            for (m, o) in out.iter_mut().enumerate() {
                let k = xgrid.wave_vector(m);
                *o += v * (k[0] * x2 + k[1] * x3).cos();
            }
        }
    }
    out.iter_mut().for_each(|o| *o *= h * h / (l * l));
    out
}

/// `F_b(x, ξ) = χ(ξ₁) f_b^s(x′ − x₁ξ′/ξ₁, ξ)`; each tangential mode picks up
/// the phase `exp(−i k·ξ′ x₁/ξ₁)`.
pub fn extend_boundary_fb(
    spec: &BoundarySpec,
    state: &EquilibriumState,
    vgrid: &VelocityGrid,
    xgrid: &SpatialGrid,
) -> DistributionField {
    let psi = spec.velocity_profile(state, vgrid);
    let g = spec.tangential_profile(xgrid);
    let mut out = DistributionField::for_grids(xgrid, vgrid, Representation::Plain);
    for (ix, &x1) in xgrid.nodes().iter().enumerate() {
        for m in 0..xgrid.n_modes() {
            let k = xgrid.wave_vector(m);
            let row = out.slice_mut(ix, m);
            for (iv, xi) in vgrid.nodes().iter().enumerate() {
                if !(xi[0] > 0.0) || psi[iv] == 0.0 {
                    continue;
                }
                let phase = -(k[0] * xi[1] + k[1] * xi[2]) * x1 / xi[0];
                row[iv] = Complex64::from_polar(spec.epsilon * g[m] * psi[iv], phase);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    Stationary,
    Periodic,
}

/// `U^s = φ(x₁) F_b` or `U*(t) = φ(x₁) f_b^*(t, x′, ξ)`.
pub fn build_lift(
    spec: &BoundarySpec,
    state: &EquilibriumState,
    vgrid: &VelocityGrid,
    xgrid: &SpatialGrid,
    kind: LiftKind,
    t: f64,
) -> DistributionField {
    let mut u = match kind {
        LiftKind::Stationary => extend_boundary_fb(spec, state, vgrid, xgrid),
        LiftKind::Periodic => periodic_datum(spec, state, vgrid, xgrid, spec.amplitude(t)),
    };
    u.scale_by_x(xgrid, mollifier);
    u.time = t;
    u
}

/// `s · f_b^*` with the `x₁`-independent profile copied on every node.
pub fn periodic_datum(
    spec: &BoundarySpec,
    state: &EquilibriumState,
    vgrid: &VelocityGrid,
    xgrid: &SpatialGrid,
    s: f64,
) -> DistributionField {
    let psi = spec.velocity_profile(state, vgrid);
    let g = spec.tangential_profile(xgrid);
    let mut out = DistributionField::for_grids(xgrid, vgrid, Representation::Plain);
    for ix in 0..xgrid.len() {
        for m in 0..xgrid.n_modes() {
            let row = out.slice_mut(ix, m);
            for (r, p) in row.iter_mut().zip(&psi) {
                *r = Complex64::new(s * spec.epsilon * g[m] * p, 0.0);
            }
        }
    }
    out
}

/// Exact damped transport
/// `e^{−(ν−σξ₁)t} χ(x₁−ξ₁t) h(x₁−ξ₁t, x′−ξ′t, ξ)`, linear interpolation in
/// `x₁`, zero inflow beyond `X_max`, exact phase per tangential mode.
pub fn apply_s0(
    h0: &DistributionField,
    t: f64,
    sigma: f64,
    nu: &[f64],
    vgrid: &VelocityGrid,
    xgrid: &SpatialGrid,
) -> DistributionField {
    if t == 0.0 {
        return h0.clone();
    }
    S0Step::new(t, sigma, nu, vgrid, xgrid).apply(h0)
}

/// Precomputed `S₀(τ)` for a fixed `τ`.
#[derive(Debug, Clone)]
pub struct S0Step {
    /// per `(x node, velocity node)`: source interval and weight, or none
    stencil: Vec<Option<(usize, f64)>>,
    /// per velocity node and mode: damping times phase
    factor: Vec<Vec<Complex64>>,
    n_x: usize,
    n_v: usize,
    n_modes: usize,
}

impl S0Step {
    pub fn new(tau: f64, sigma: f64, nu: &[f64], vgrid: &VelocityGrid, xgrid: &SpatialGrid) -> Self {
        let mut stencil = Vec::with_capacity(xgrid.len() * vgrid.len());
        for &x in xgrid.nodes() {
            for xi in vgrid.nodes() {
                let src = x - xi[0] * tau;
                stencil.push(if tau > 0.0 && chi(src) == 0.0 { None } else { xgrid.locate(src) });
            }
        }
        let factor = vgrid
            .nodes()
            .iter()
            .zip(nu)
            .map(|(xi, n)| {
                let damp = (-(n - sigma * xi[0]) * tau).exp();
                (0..xgrid.n_modes())
                    .map(|m| {
                        let k = xgrid.wave_vector(m);
                        Complex64::from_polar(damp, -(k[0] * xi[1] + k[1] * xi[2]) * tau)
                    })
                    .collect()
            })
            .collect();
        Self { stencil, factor, n_x: xgrid.len(), n_v: vgrid.len(), n_modes: xgrid.n_modes() }
    }

    pub fn apply(&self, h: &DistributionField) -> DistributionField {
        let mut out = DistributionField::zeros_like(h);
        out.time = h.time;
        self.apply_into(h, &mut out);
        out
    }

    pub fn apply_into(&self, h: &DistributionField, out: &mut DistributionField) {
        let n_v = self.n_v;
        let n_modes = self.n_modes;
        debug_assert_eq!(h.n_x, self.n_x);
        let stride = n_modes * n_v;
        out.data.par_chunks_mut(stride).enumerate().for_each(|(ix, chunk)| {
            let st = &self.stencil[ix * n_v..(ix + 1) * n_v];
            for m in 0..n_modes {
                let dst = &mut chunk[m * n_v..(m + 1) * n_v];
                for iv in 0..n_v {
                    dst[iv] = match st[iv] {
                        None => Complex64::new(0.0, 0.0),
                        Some((a, th)) => {
                            let lo = h.data[(a * n_modes + m) * n_v + iv];
                            let hi = h.data[((a + 1) * n_modes + m) * n_v + iv];
                            (lo * (1.0 - th) + hi * th) * self.factor[iv][m]
                        }
                    };
                }
            }
        });
    }

    pub fn apply_in_place(&self, h: &mut DistributionField, scratch: &mut DistributionField) {
        self.apply_into(h, scratch);
        std::mem::swap(&mut h.data, &mut scratch.data);
    }
}
