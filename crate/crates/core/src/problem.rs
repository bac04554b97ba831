//! The reformulated perturbation problem: background `V = φ_R f̃ + U`, the
//! inhomogeneous term `H`, and discrete residuals of the transport equation.
//!
//! With `f = φ_R f̃ + U + e^{−σx₁} g`, the weighted unknown solves
//! `∂ₜg + ξ·∇ₓg − σξ₁g − Lg = e^{−σx₁}Γ(g, g) + 2Γ(V, g) + e^{σx₁}H` where
//! `H = Γ(V, V) + LU − φ_RΓ(f̃, f̃) − Σ_{i=2,3} ξᵢ(∂ᵢφ_R) f̃ − ∂ₜU − ξ·∇ₓU`.
//! The lift amplitude `A(t)` enters linearly, so `H` splits as
//! `H₀ + A H₁ + A² H₂ + A′ H₃` and is assembled once.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::Operators;
use crate::norms::{NormReport, NormWeights};
use crate::spatial::{
    extend_boundary_fb, mollifier, mollifier_derivative, periodic_datum, BoundarySpec, DistributionField, LiftKind,
    Representation, SpatialGrid,
};

#[derive(Debug, Clone)]
pub struct ProblemData {
    pub kind: LiftKind,
    pub spec: BoundarySpec,
    pub sigma: f64,
    /// `φ_R f̃`
    pub vf: DistributionField,
    /// lift at unit amplitude
    pub u1: DistributionField,
    /// `e^{σx₁}H_j`, `j = 0..4`
    h: [DistributionField; 4],
}

impl ProblemData {
    /// Assembles `V` and `H`. `tilde_f[ix][iv]` is the slab profile on the
    /// nodes of `xgrid`.
    pub fn assemble(
        ops: &Operators,
        xgrid: &SpatialGrid,
        spec: &BoundarySpec,
        kind: LiftKind,
        sigma: f64,
        tilde_f: Option<&[Vec<f64>]>,
    ) -> Result<Self> {
        let tilde_f = tilde_f.ok_or_else(|| {
            Error::MissingInput("the boundary-layer profile f̃ is missing; run the slab solve first".into())
        })?;
        if tilde_f.len() != xgrid.len() || tilde_f.iter().any(|r| r.len() != ops.n_v()) {
            return Err(Error::InvalidParameter("f̃ does not match the spatial and velocity grids".into()));
        }
        if kind == LiftKind::Stationary && spec.time_dependent {
            return Err(Error::InvalidParameter("the stationary lift needs time-independent boundary data".into()));
        }
        spec.validate(&ops.state, &ops.vgrid)?;
        let vgrid = &ops.vgrid;
        let n_modes = xgrid.n_modes();
        let phi_r = spec.mollifier_modes(xgrid)?;

        let tf = DistributionField::from_slab_profile(tilde_f, n_modes, Representation::Plain);
        let mut vf = DistributionField::for_grids(xgrid, vgrid, Representation::Plain);
        for ix in 0..xgrid.len() {
            for (m, c) in phi_r.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                for (d, v) in vf.slice_mut(ix, m).iter_mut().zip(&tilde_f[ix]) {
                    *d = Complex64::new(c * v, 0.0);
                }
            }
        }
        let trace = match kind {
            LiftKind::Stationary => extend_boundary_fb(spec, &ops.state, vgrid, xgrid),
            LiftKind::Periodic => periodic_datum(spec, &ops.state, vgrid, xgrid, 1.0),
        };
        let mut u1 = trace.clone();
        u1.scale_by_x(xgrid, mollifier);

        // H₀ = Γ(φ_R f̃, φ_R f̃) − φ_R Γ(f̃, f̃) − i (k·ξ′) φ_R f̃
        let mut h0 = ops.gamma_field(&vf, &vf, xgrid);
        let gtf = ops.gamma_field(&tf, &tf, xgrid);
        for ix in 0..xgrid.len() {
            let g0: Vec<Complex64> = gtf.slice(ix, 0).to_vec();
            for (m, c) in phi_r.iter().enumerate() {
                if *c == 0.0 {
                    continue;
                }
                let k = xgrid.wave_vector(m);
                let row = h0.slice_mut(ix, m);
                for (iv, d) in row.iter_mut().enumerate() {
                    let xi = vgrid.node(iv);
                    let kx = k[0] * xi[1] + k[1] * xi[2];
                    *d -= g0[iv] * *c + Complex64::new(0.0, kx * c * tilde_f[ix][iv]);
                }
            }
        }

        // H₁ = 2Γ(φ_R f̃, U₁) + LU₁ − ξ·∇ₓU₁
        let mut h1 = ops.l_field(&u1);
        ops.gamma_field_add(&vf, &u1, xgrid, 2.0, &mut h1);
        for ix in 0..xgrid.len() {
            let dphi = mollifier_derivative(xgrid.nodes()[ix]);
            for m in 0..n_modes {
                let k = xgrid.wave_vector(m);
                let tr: Vec<Complex64> = trace.slice(ix, m).to_vec();
                let ul: Vec<Complex64> = u1.slice(ix, m).to_vec();
                let row = h1.slice_mut(ix, m);
                for (iv, d) in row.iter_mut().enumerate() {
                    let xi = vgrid.node(iv);
                    *d -= tr[iv] * (xi[0] * dphi);
                    if kind == LiftKind::Periodic {
                        let kx = k[0] * xi[1] + k[1] * xi[2];
                        *d -= Complex64::new(0.0, kx) * ul[iv];
                    }
                }
            }
        }

        // H₂ = Γ(U₁, U₁), H₃ = −U₁
        let h2 = ops.gamma_field(&u1, &u1, xgrid);
        let mut h3 = u1.clone();
        h3.scale(-1.0);

        let mut h = [h0, h1, h2, h3];
        for f in h.iter_mut() {
            f.scale_by_x(xgrid, |x| (sigma * x).exp());
            f.repr = Representation::Weighted;
        }
        Ok(Self { kind, spec: spec.clone(), sigma, vf, u1, h })
    }

    /// Lift amplitude `A(t)` (1 for the stationary lift).
    pub fn amplitude(&self, t: f64) -> f64 {
        match self.kind {
            LiftKind::Stationary => 1.0,
            LiftKind::Periodic => self.spec.amplitude(t),
        }
    }

    fn amplitude_dt(&self, t: f64) -> f64 {
        match self.kind {
            LiftKind::Stationary => 0.0,
            LiftKind::Periodic => self.spec.amplitude_dt(t),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        self.kind == LiftKind::Periodic && self.spec.time_dependent
    }

    /// `V(t) = φ_R f̃ + A(t) U₁`
    pub fn background(&self, t: f64) -> DistributionField {
        let mut v = self.vf.clone();
        v.axpy(self.amplitude(t), &self.u1);
        v.time = t;
        v
    }

    /// `out = s · e^{σx₁} H(t)`
    pub fn weighted_h_into(&self, t: f64, s: f64, out: &mut DistributionField) {
        let a = self.amplitude(t);
        let c = [1.0, a, a * a, self.amplitude_dt(t)];
        for (o, i) in out.data.iter_mut().enumerate() {
            let mut v = Complex64::new(0.0, 0.0);
            for (hj, cj) in self.h.iter().zip(c) {
                if cj != 0.0 {
                    v += hj.data[o] * cj;
                }
            }
            *i = v * s;
        }
    }

    pub fn weighted_h(&self, t: f64) -> DistributionField {
        let mut out = DistributionField::zeros_like(&self.h[0]);
        self.weighted_h_into(t, 1.0, &mut out);
        out.time = t;
        out
    }

    /// `[[e^{σx₁}H(t)]]_{β−1}`
    pub fn h_norm(&self, t: f64, ops: &Operators, xgrid: &SpatialGrid) -> Result<NormReport> {
        let w = NormWeights::new(self.spec.beta - 1.0, &ops.vgrid, xgrid)?;
        Ok(w.report(&self.weighted_h(t)))
    }

    /// `Γ(ḡ, e^{−σx₁}ḡ + 2V(t)) + e^{σx₁}H(t)`, the Picard source at time `t`.
    pub fn source_into(&self, gbar: &DistributionField, t: f64, ops: &Operators, xgrid: &SpatialGrid, out: &mut DistributionField) {
        self.weighted_h_into(t, 1.0, out);
        if gbar.max_abs() == 0.0 {
            return;
        }
        let mut w = gbar.clone();
        w.scale_by_x(xgrid, |x| (-self.sigma * x).exp());
        w.axpy(2.0, &self.vf);
        w.axpy(2.0 * self.amplitude(t), &self.u1);
        ops.gamma_field_add(gbar, &w, xgrid, 1.0, out);
    }
}

/// Upwind residual of
/// `∂ₜg + ξ₁∂ₓ₁g + i(k·ξ′)g − σξ₁g − Lg − rhs` at every node, skipping the
/// inflow rows (`x₁ = 0, ξ₁ > 0`) and the far-field rows (`X_max, ξ₁ < 0`)
/// where boundary values are imposed. `prev = (g(t − Δt), Δt)` adds a
/// backward difference in time.
pub fn transport_residual_field(
    g: &DistributionField,
    prev: Option<(&DistributionField, f64)>,
    rhs: Option<&DistributionField>,
    sigma: f64,
    ops: &Operators,
    xgrid: &SpatialGrid,
) -> DistributionField {
    let mut r = ops.l_field(g);
    r.scale(-1.0);
    let x = xgrid.nodes();
    let n_x = g.n_x;
    for ix in 0..n_x {
        for m in 0..g.n_modes {
            let k = xgrid.wave_vector(m);
            for iv in 0..g.n_v {
                let xi = ops.vgrid.node(iv);
                let o = g.offset(ix, m) + iv;
                let boundary = (ix == 0 && xi[0] > 0.0) || (ix == n_x - 1 && xi[0] < 0.0);
                if boundary {
                    r.data[o] = Complex64::new(0.0, 0.0);
                    continue;
                }
                let dx = if xi[0] > 0.0 {
                    (g.data[o] - g.data[g.offset(ix - 1, m) + iv]) / (x[ix] - x[ix - 1])
                } else if xi[0] < 0.0 {
                    (g.data[g.offset(ix + 1, m) + iv] - g.data[o]) / (x[ix + 1] - x[ix])
                } else {
                    Complex64::new(0.0, 0.0)
                };
                let kx = k[0] * xi[1] + k[1] * xi[2];
                let mut v = r.data[o] + dx * xi[0] + g.data[o] * Complex64::new(-sigma * xi[0], kx);
                if let Some((p, dt)) = prev {
                    v += (g.data[o] - p.data[o]) / dt;
                }
                if let Some(s) = rhs {
                    v -= s.data[o];
                }
                r.data[o] = v;
            }
        }
    }
    r.time = g.time;
    r
}

/// Norms of [`transport_residual_field`].
pub fn transport_residual(
    g: &DistributionField,
    prev: Option<(&DistributionField, f64)>,
    rhs: Option<&DistributionField>,
    sigma: f64,
    ops: &Operators,
    xgrid: &SpatialGrid,
    weights: &NormWeights,
) -> NormReport {
    weights.report(&transport_residual_field(g, prev, rhs, sigma, ops, xgrid))
}
