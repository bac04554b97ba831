//! Discrete hard-sphere collision operator: quadrature of `Q`, the bilinear
//! form `Γ`, the collision frequency `ν`, and the dense linearized operator.
//!
//! Post-collision velocities are generally off-grid. Values there are
//! reconstructed from the perturbation `f = F / W₀` by clamped trilinear
//! interpolation plus a rank-five correction that makes the reconstruction
//! exact on the null space. With that choice every collision triple conserves
//! `Q(M∞, M∞) = 0` exactly and `L` annihilates the collision invariants. The
//! remaining conservation defect of the gain term is removed by projecting
//! the output of `Γ` onto the orthogonal complement of the null space, which
//! is the same as zeroing the mass, momentum and energy moments of `Q`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{SphereQuadrature, SphereRule};
use crate::velocity::{weight_w0, EquilibriumState, NullSpaceBasis, VelocityGrid};

/// Reconstruction of a grid function at an off-grid velocity:
/// `Σ_s c_s f_s + Σ_k e_k (φ_k, f)`.
#[derive(Debug, Clone, Copy)]
pub struct Interp {
    pub idx: [usize; 8],
    pub c: [f64; 8],
    pub e: [f64; 5],
}

impl Interp {
    #[inline]
    pub fn apply(&self, f: &[f64], coeffs: &[f64; 5]) -> f64 {
        let mut s = 0.0;
        for q in 0..8 {
            s += self.c[q] * f[self.idx[q]];
        }
        for k in 0..5 {
            s += self.e[k] * coeffs[k];
        }
        s
    }
}

/// One term of the discrete collision integral at output node `i`.
#[derive(Debug, Clone, Copy)]
pub struct Triple {
    /// partner node `ξ*`
    pub j: usize,
    /// `w_ξ* · w_ω · σ₀ |ζ·ω|`
    pub c: f64,
    pub post: [f64; 3],
    pub post_star: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct CollisionQuadrature {
    grid: VelocityGrid,
    state: EquilibriumState,
    basis: NullSpaceBasis,
    sphere: SphereQuadrature,
    w0: Vec<f64>,
}

impl CollisionQuadrature {
    pub fn new(state: &EquilibriumState, grid: &VelocityGrid, rule: SphereRule) -> Result<Self> {
        state.validate()?;
        let basis = NullSpaceBasis::build(state, grid)?;
        let sphere = SphereQuadrature::new(rule)?;
        let w0 = weight_w0(state, grid);
        Ok(Self { grid: grid.clone(), state: *state, basis, sphere, w0 })
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn state(&self) -> &EquilibriumState {
        &self.state
    }

    pub fn basis(&self) -> &NullSpaceBasis {
        &self.basis
    }

    pub fn sphere(&self) -> &SphereQuadrature {
        &self.sphere
    }

    pub fn w0(&self) -> &[f64] {
        &self.w0
    }

    pub fn sphere_weight_sum(&self) -> f64 {
        self.sphere.weight_sum()
    }

    /// Clamped trilinear stencil in grid coordinates, without the null-space
    /// correction.
    #[inline]
    pub fn trilinear(&self, p: &[f64; 3]) -> ([usize; 8], [f64; 8]) {
        let n = self.grid.per_axis();
        let h = self.grid.spacing();
        let r = self.grid.cutoff();
        let mut base = [0usize; 3];
        let mut theta = [0.0; 3];
        for a in 0..3 {
            let t = ((p[a] + r) / h - 0.5).clamp(0.0, (n - 1) as f64);
            let b = (t.floor() as usize).min(n - 2);
            base[a] = b;
            theta[a] = t - b as f64;
        }
        let mut idx = [0usize; 8];
        let mut c = [0.0; 8];
        let mut q = 0;
        for da in 0..2 {
            let wa = if da == 0 { 1.0 - theta[0] } else { theta[0] };
            for db in 0..2 {
                let wb = if db == 0 { 1.0 - theta[1] } else { theta[1] };
                for dc in 0..2 {
                    let wc = if dc == 0 { 1.0 - theta[2] } else { theta[2] };
                    idx[q] = self.grid.index(base[0] + da, base[1] + db, base[2] + dc);
                    c[q] = wa * wb * wc;
                    q += 1;
                }
            }
        }
        (idx, c)
    }

    /// Full reconstruction stencil at `p`, exact on the null space.
    #[inline]
    pub fn interp(&self, p: &[f64; 3]) -> Interp {
        let (idx, c) = self.trilinear(p);
        let mut e = self.basis.eval_at(p);
        for k in 0..5 {
            let v = self.basis.vector(k);
            let mut s = 0.0;
            for q in 0..8 {
                s += c[q] * v[idx[q]];
            }
            e[k] -= s;
        }
        Interp { idx, c, e }
    }

    /// Visits every collision term contributing to output node `i`.
    pub fn for_each_triple<F: FnMut(&Triple)>(&self, i: usize, mut f: F) {
        let xi = self.grid.node(i);
        let w = self.grid.weight();
        let sigma0 = self.state.sigma0;
        let mut dirs = Vec::with_capacity(self.sphere.len());
        for (j, xs) in self.grid.nodes().iter().enumerate() {
            if j == i {
                continue;
            }
            let zeta = [xi[0] - xs[0], xi[1] - xs[1], xi[2] - xs[2]];
            self.sphere.directions(&zeta, &mut dirs);
            for (om, wom) in &dirs {
                let dot = zeta[0] * om[0] + zeta[1] * om[1] + zeta[2] * om[2];
                let c = w * wom * sigma0 * dot.abs();
                if c == 0.0 {
                    continue;
                }
                let post = [xi[0] - dot * om[0], xi[1] - dot * om[1], xi[2] - dot * om[2]];
                let post_star = [xs[0] + dot * om[0], xs[1] + dot * om[1], xs[2] + dot * om[2]];
                f(&Triple { j, c, post, post_star });
            }
        }
    }

    /// Symmetrized `Γ(a, b)` before the conservation correction.
    pub fn gamma_uncorrected(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let ca = self.basis.project_coefficients(a);
        let cb = self.basis.project_coefficients(b);
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                self.for_each_triple(i, |t| {
                    let ip = self.interp(&t.post);
                    let is = self.interp(&t.post_star);
                    let gain = ip.apply(a, &ca) * is.apply(b, &cb) + ip.apply(b, &cb) * is.apply(a, &ca);
                    let loss = a[i] * b[t.j] + b[i] * a[t.j];
                    s += 0.5 * t.c * self.w0[t.j] * (gain - loss);
                });
                s
            })
            .collect()
    }

    /// `gamma_uncorrected` for many pairs in one sweep over the collision
    /// terms; each output equals the single-pair result bit for bit.
    pub fn gamma_uncorrected_pairs(&self, pairs: &[(&[f64], &[f64])]) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let coeffs: Vec<([f64; 5], [f64; 5])> = pairs
            .iter()
            .map(|(a, b)| (self.basis.project_coefficients(a), self.basis.project_coefficients(b)))
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = vec![0.0; pairs.len()];
                self.for_each_triple(i, |t| {
                    let ip = self.interp(&t.post);
                    let is = self.interp(&t.post_star);
                    for (k, ((a, b), (ca, cb))) in pairs.iter().zip(&coeffs).enumerate() {
                        let gain = ip.apply(a, ca) * is.apply(b, cb) + ip.apply(b, cb) * is.apply(a, ca);
                        let loss = a[i] * b[t.j] + b[i] * a[t.j];
                        s[k] += 0.5 * t.c * self.w0[t.j] * (gain - loss);
                    }
                });
                s
            })
            .collect();
        (0..pairs.len()).map(|k| rows.iter().map(|r| r[k]).collect()).collect()
    }

    /// Conservation-corrected `Γ` for many pairs.
    pub fn gamma_pairs(&self, pairs: &[(&[f64], &[f64])]) -> Vec<Vec<f64>> {
        let mut out = self.gamma_uncorrected_pairs(pairs);
        for o in &mut out {
            self.basis.remove_projection(o);
        }
        out
    }

    /// `Γ(a, b) = W₀⁻¹ Q(W₀a, W₀b)`, symmetric and conservative.
    pub fn gamma(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = self.gamma_uncorrected(a, b);
        self.basis.remove_projection(&mut out);
        out
    }

    /// Symmetrized, conservation-corrected `Q(F, G)`.
    pub fn collision_q(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let a: Vec<f64> = f.iter().zip(&self.w0).map(|(v, w)| v / w).collect();
        let b: Vec<f64> = g.iter().zip(&self.w0).map(|(v, w)| v / w).collect();
        let mut out = self.gamma(&a, &b);
        out.iter_mut().zip(&self.w0).for_each(|(v, w)| *v *= w);
        out
    }

    /// Loss coefficient `ν(ξ_i) = Σ_{j,ω} w w_ω σ₀|ζ·ω| M∞(ξ_j)`.
    pub fn nu(&self) -> Vec<f64> {
        let rho = self.state.rho_inf;
        (0..self.grid.len())
            .into_par_iter()
            .map(|i| {
                let mut s = 0.0;
                self.for_each_triple(i, |t| s += t.c * self.w0[t.j] * self.w0[t.j]);
                rho * s
            })
            .collect()
    }

    /// Rows of the linearized operator before the output projection.
    fn linearized_rows(&self) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        let rho = self.state.rho_inf;
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut row = vec![0.0; n];
                let mut eacc = [0.0; 5];
                let mut nu = 0.0;
                for_each_linear_term(self, i, |t, ip, is, w0p, w0s| {
                    let cw = rho * t.c * self.w0[t.j];
                    for q in 0..8 {
                        row[is.idx[q]] += cw * w0p * is.c[q];
                        row[ip.idx[q]] += cw * w0s * ip.c[q];
                    }
                    for k in 0..5 {
                        eacc[k] += cw * (w0p * is.e[k] + w0s * ip.e[k]);
                    }
                    row[t.j] -= cw * self.w0[i];
                    nu += cw * self.w0[t.j];
                });
                row[i] -= nu;
                let w = self.grid.weight();
                for k in 0..5 {
                    let v = self.basis.vector(k);
                    for (r, vk) in row.iter_mut().zip(v) {
                        *r += eacc[k] * w * vk;
                    }
                }
                row
            })
            .collect()
    }

    /// Unsymmetrized discrete linearization of `Q` around `M∞`, conjugated by
    /// `W₀` and projected so that its range is orthogonal to the null space.
    pub fn assemble_raw(&self) -> DMatrix<f64> {
        let n = self.grid.len();
        let rows = self.linearized_rows();
        let mut l = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        // (I − P) on the output index
        let w = self.grid.weight();
        for k in 0..5 {
            let phi = DVector::from_column_slice(self.basis.vector(k));
            let proj = phi.transpose() * &l * w;
            l -= &phi * proj;
        }
        l
    }
}

fn for_each_linear_term<F>(q: &CollisionQuadrature, i: usize, mut f: F)
where
    F: FnMut(&Triple, &Interp, &Interp, f64, f64),
{
    q.for_each_triple(i, |t| {
        let ip = q.interp(&t.post);
        let is = q.interp(&t.post_star);
        let w0p = q.state.w0_at(&t.post);
        let w0s = q.state.w0_at(&t.post_star);
        f(t, &ip, &is, w0p, w0s);
    });
}

pub fn collision_q(f: &[f64], g: &[f64], quad: &CollisionQuadrature) -> Vec<f64> {
    quad.collision_q(f, g)
}

pub fn gamma_bilinear(f: &[f64], g: &[f64], quad: &CollisionQuadrature) -> Vec<f64> {
    quad.gamma(f, g)
}

pub fn nu_collision_frequency(quad: &CollisionQuadrature) -> Vec<f64> {
    quad.nu()
}

/// Spectral summary of the symmetrized operator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectralReport {
    pub n_velocity: usize,
    pub null_count: usize,
    pub max_eigenvalue: f64,
    pub gap: f64,
    pub min_eigenvalue: f64,
    pub nu1: f64,
    pub asymmetry: f64,
}

/// `L = −diag(ν) + K` on the velocity grid, symmetrized.
#[derive(Debug, Clone)]
pub struct LinearizedOperator {
    pub nu: Vec<f64>,
    pub k_matrix: DMatrix<f64>,
    pub basis: NullSpaceBasis,
    /// `‖L_raw − L_rawᵀ‖_F / ‖L_raw‖_F` before symmetrization.
    pub asymmetry: f64,
}

/// Tolerance on positive eigenvalues of the assembled operator, relative to max ν.
pub const POSITIVITY_TOL: f64 = 1e-8;

impl LinearizedOperator {
    pub fn from_parts(nu: Vec<f64>, k_matrix: DMatrix<f64>, basis: NullSpaceBasis, asymmetry: f64) -> Result<Self> {
        let op = Self { nu, k_matrix, basis, asymmetry };
        op.check_nonpositive()?;
        Ok(op)
    }

    pub fn len(&self) -> usize {
        self.nu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn l_matrix(&self) -> DMatrix<f64> {
        let mut l = self.k_matrix.clone();
        for (i, v) in self.nu.iter().enumerate() {
            l[(i, i)] -= v;
        }
        l
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out);
        out
    }

    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) {
        let n = self.len();
        let k = self.k_matrix.as_slice();
        for i in 0..n {
            // symmetric: column i holds row i
            let col = &k[i * n..(i + 1) * n];
            let mut s = -self.nu[i] * f[i];
            for j in 0..n {
                s += col[j] * f[j];
            }
            out[i] = s;
        }
    }

    pub fn apply_k(&self, f: &[f64]) -> Vec<f64> {
        let v = &self.k_matrix * DVector::from_column_slice(f);
        v.as_slice().to_vec()
    }

    pub fn max_nu(&self) -> f64 {
        self.nu.iter().cloned().fold(f64::MIN, f64::max)
    }

    pub fn min_nu(&self) -> f64 {
        self.nu.iter().cloned().fold(f64::MAX, f64::min)
    }

    /// Cholesky test of `−L + τ I`: fails iff `L` has an eigenvalue above `τ`.
    pub fn check_nonpositive(&self) -> Result<()> {
        let tau = POSITIVITY_TOL * self.max_nu().max(1.0);
        let mut m = -self.l_matrix();
        for i in 0..self.len() {
            m[(i, i)] += tau;
        }
        if m.cholesky().is_none() {
            return Err(Error::InconsistentOperator(format!(
                "symmetrized L has an eigenvalue above {tau:.3e}"
            )));
        }
        Ok(())
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut e: Vec<f64> = SymmetricEigen::new(self.l_matrix()).eigenvalues.iter().cloned().collect();
        e.sort_by(|a, b| b.partial_cmp(a).unwrap());
        e
    }

    /// Largest `ν₁` with `−(f, Lf) ≥ ν₁ ‖⟨ξ⟩^{1/2}(I−P)f‖²`, from the
    /// generalized eigenproblem on the orthogonal complement of the null space.
    pub fn coercivity(&self, grid: &VelocityGrid) -> Result<f64> {
        let n = self.len();
        let w = grid.weight();
        // orthonormal (Euclidean) basis of the complement from eigenvectors of I − P
        let phi = DMatrix::from_fn(n, 5, |i, k| self.basis.vector(k)[i] * w.sqrt());
        let proj = &phi * phi.transpose();
        let comp = DMatrix::<f64>::identity(n, n) - proj;
        let eig = SymmetricEigen::new(comp);
        let cols: Vec<usize> = (0..n).filter(|&c| eig.eigenvalues[c] > 0.5).collect();
        if cols.len() != n - 5 {
            return Err(Error::DegenerateGrid(format!(
                "complement of the null space has dimension {} (expected {})",
                cols.len(),
                n - 5
            )));
        }
        let z = DMatrix::from_fn(n, cols.len(), |i, c| eig.eigenvectors[(i, cols[c])]);
        let a = z.transpose() * (-self.l_matrix()) * &z;
        let br = grid.brackets();
        let d = DMatrix::from_fn(n, n, |i, j| if i == j { br[i] } else { 0.0 });
        let b = z.transpose() * d * &z;
        let chol = b
            .cholesky()
            .ok_or_else(|| Error::InconsistentOperator("weight matrix not positive definite".into()))?;
        let linv = chol.l().try_inverse().ok_or_else(|| Error::InconsistentOperator("singular weight".into()))?;
        let c = &linv * a * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let ev = SymmetricEigen::new(c).eigenvalues;
        Ok(ev.iter().cloned().fold(f64::MAX, f64::min))
    }

    pub fn spectral_report(&self, grid: &VelocityGrid) -> Result<SpectralReport> {
        let ev = self.eigenvalues();
        let null_count = ev.iter().filter(|e| e.abs() <= 1e-8).count();
        let gap = -ev.iter().cloned().filter(|e| *e < -1e-8).fold(f64::MIN, f64::max);
        Ok(SpectralReport {
            n_velocity: self.len(),
            null_count,
            max_eigenvalue: ev[0],
            gap,
            min_eigenvalue: *ev.last().unwrap(),
            nu1: self.coercivity(grid)?,
            asymmetry: self.asymmetry,
        })
    }
}

pub fn assemble_linearized(quad: &CollisionQuadrature) -> Result<LinearizedOperator> {
    let raw = quad.assemble_raw();
    let nu = quad.nu();
    let asym = (&raw - raw.transpose()).norm() / raw.norm().max(f64::MIN_POSITIVE);
    let mut k = (&raw + raw.transpose()) * 0.5;
    for (i, v) in nu.iter().enumerate() {
        k[(i, i)] += v;
    }
    LinearizedOperator::from_parts(nu, k, quad.basis().clone(), asym)
}

/// Least-squares upper envelope of the discrete kernel,
/// `|K(ξ,ξ′)| ≤ k₀ (r + 1/r) e^{−k₁ r}` with `r = |ξ − ξ′|`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub k0: f64,
    pub k1: f64,
    pub entries: usize,
    pub violations: usize,
    pub coverage: f64,
    /// `(r, mean |K|)` per distance bin
    pub binned: Vec<(f64, f64)>,
    pub monotone_beyond_4: bool,
}

pub fn kernel_bound_check(op: &LinearizedOperator, grid: &VelocityGrid) -> Result<KernelBoundReport> {
    let n = op.len();
    let w = grid.weight();
    let h = grid.spacing();
    let mut samples: Vec<(f64, f64)> = Vec::with_capacity(n * n);
    for i in 0..n {
        let a = grid.node(i);
        for j in 0..n {
            if i == j {
                continue;
            }
            let b = grid.node(j);
            let r = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            samples.push((r, op.k_matrix[(i, j)].abs() / w));
        }
    }
    // binned maxima and means
    let rmax = samples.iter().map(|s| s.0).fold(0.0, f64::max);
    let nbins = ((rmax / h).ceil() as usize).max(1);
    let mut maxima = vec![0.0f64; nbins + 1];
    let mut sums = vec![0.0f64; nbins + 1];
    let mut counts = vec![0usize; nbins + 1];
    for &(r, v) in &samples {
        let b = (r / h) as usize;
        maxima[b] = maxima[b].max(v);
        sums[b] += v;
        counts[b] += 1;
    }
    // fit log(max / (r + 1/r)) = log k0 − k1 r over populated bins
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for b in 0..=nbins {
        if counts[b] > 0 && maxima[b] > 0.0 {
            let r = (b as f64 + 0.5) * h;
            xs.push(r);
            ys.push((maxima[b] / (r + 1.0 / r)).ln());
        }
    }
    let fit = crate::fit::linear_fit(&xs, &ys)?;
    let k1 = -fit.slope;
    if !(k1 > 0.0) {
        return Err(Error::Fit(format!("kernel envelope slope is not decaying (k1 = {k1})")));
    }
    // k0 such that the bound holds on at least 99.9% of entries
    let mut ratios: Vec<f64> = samples.iter().map(|&(r, v)| v * (k1 * r).exp() / (r + 1.0 / r)).collect();
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = ((0.999 * ratios.len() as f64).ceil() as usize).clamp(1, ratios.len()) - 1;
    let k0 = ratios[q];
    let violations = ratios.iter().filter(|&&v| v > k0).count();
    let binned: Vec<(f64, f64)> = (0..=nbins)
        .filter(|&b| counts[b] > 0)
        .map(|b| ((b as f64 + 0.5) * h, sums[b] / counts[b] as f64))
        .collect();
    let tail: Vec<f64> = binned.iter().filter(|(r, _)| *r > 4.0).map(|b| b.1).collect();
    let monotone_beyond_4 = tail.windows(2).all(|p| p[1] <= p[0]);
    Ok(KernelBoundReport {
        k0,
        k1,
        entries: samples.len(),
        violations,
        coverage: 1.0 - violations as f64 / samples.len() as f64,
        binned,
        monotone_beyond_4,
    })
}

/// Matrix of multiplication by `ξ₁` compressed to the null space, and its
/// eigenvalues in increasing order.
pub fn a_matrix(grid: &VelocityGrid, basis: &NullSpaceBasis) -> (nalgebra::Matrix5<f64>, [f64; 5]) {
    let w = grid.weight();
    let a = nalgebra::Matrix5::from_fn(|k, l| {
        let (pk, pl) = (basis.vector(k), basis.vector(l));
        w * grid.nodes().iter().enumerate().map(|(i, x)| x[0] * pk[i] * pl[i]).sum::<f64>()
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(a).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (a, [ev[0], ev[1], ev[2], ev[3], ev[4]])
}

/// Operator norm of `f ↦ P(ξ₁ f)` on the discrete `L²_ξ`, by power iteration
/// on `B*B` with `B = P ξ₁`.
pub fn p_xi1_bound(grid: &VelocityGrid, basis: &NullSpaceBasis) -> f64 {
    let n = grid.len();
    let x1: Vec<f64> = grid.nodes().iter().map(|x| x[0]).collect();
    // deterministic start with components in every direction
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 0.01 * ((i * 7919) % 101) as f64).collect();
    let mut lambda = 0.0;
    for _ in 0..500 {
        let nv = grid.norm(&v);
        v.iter_mut().for_each(|a| *a /= nv);
        let bv: Vec<f64> = basis.project(&v.iter().zip(&x1).map(|(a, b)| a * b).collect::<Vec<_>>());
        // B* = ξ₁ P (both factors self-adjoint)
        let pbv = basis.project(&bv);
        let next: Vec<f64> = pbv.iter().zip(&x1).map(|(a, b)| a * b).collect();
        let new_lambda = grid.inner(&v, &next);
        v = next;
        if (new_lambda - lambda).abs() <= 1e-14 * new_lambda.abs() {
            lambda = new_lambda;
            break;
        }
        lambda = new_lambda;
    }
    lambda.max(0.0).sqrt()
}

/// Dense bilinear tensor of `Γ` before the output projection:
/// `Γ(a,b)_i = aᵀ T_i b`. Only intended for small grids.
#[derive(Debug, Clone)]
pub struct GammaTensor {
    n: usize,
    data: Vec<f64>,
    basis: NullSpaceBasis,
}

/// Largest velocity grid for which the dense tensor is built.
pub const DENSE_GAMMA_LIMIT: usize = 216;

impl GammaTensor {
    pub fn build(quad: &CollisionQuadrature) -> Result<Self> {
        let n = quad.grid().len();
        if n > DENSE_GAMMA_LIMIT {
            return Err(Error::InvalidParameter(format!(
                "dense Γ tensor limited to {DENSE_GAMMA_LIMIT} velocity nodes, grid has {n}"
            )));
        }
        let basis = quad.basis().clone();
        let w0 = quad.w0().to_vec();
        let blocks: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                // G = X + Y Φᵀ + Φ Z + Φ D Φᵀ accumulates Σ c W₀_j v' v*'ᵀ
                let mut x = vec![0.0; n * n];
                let mut y = vec![0.0; n * 5];
                let mut z = vec![0.0; 5 * n];
                let mut d = [0.0; 25];
                let mut loss = vec![0.0; n];
                quad.for_each_triple(i, |t| {
                    let ip = quad.interp(&t.post);
                    let is = quad.interp(&t.post_star);
                    let cw = t.c * w0[t.j];
                    for p in 0..8 {
                        for q in 0..8 {
                            x[ip.idx[p] * n + is.idx[q]] += cw * ip.c[p] * is.c[q];
                        }
                        for k in 0..5 {
                            y[ip.idx[p] * 5 + k] += cw * ip.c[p] * is.e[k];
                            z[k * n + is.idx[p]] += cw * ip.e[k] * is.c[p];
                        }
                    }
                    for k in 0..5 {
                        for l in 0..5 {
                            d[k * 5 + l] += cw * ip.e[k] * is.e[l];
                        }
                    }
                    loss[t.j] += cw;
                });
                // (φ_k, f) = w Σ_s φ_k(s) f_s
                let wv = quad.grid().weight();
                let phi = |s: usize, k: usize| wv * basis.vector(k)[s];
                let mut g = x;
                for a in 0..n {
                    for b in 0..n {
                        let mut s = 0.0;
                        for k in 0..5 {
                            s += y[a * 5 + k] * phi(b, k) + phi(a, k) * z[k * n + b];
                            for l in 0..5 {
                                s += phi(a, k) * d[k * 5 + l] * phi(b, l);
                            }
                        }
                        g[a * n + b] += s;
                    }
                }
                let mut t = vec![0.0; n * n];
                for a in 0..n {
                    for b in 0..n {
                        t[a * n + b] = 0.5 * (g[a * n + b] + g[b * n + a]);
                    }
                }
                for j in 0..n {
                    t[i * n + j] -= 0.5 * loss[j];
                    t[j * n + i] -= 0.5 * loss[j];
                }
                t
            })
            .collect();
        let mut data = Vec::with_capacity(n * n * n);
        for b in blocks {
            data.extend(b);
        }
        Ok(Self { n, data, basis })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Conservation-corrected `Γ(a, b)`.
    pub fn gamma(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.gamma_add(a, b, 1.0, &mut out);
        self.basis.remove_projection(&mut out);
        out
    }

    /// `out += s · Γ_uncorrected(a, b)`.
    pub fn gamma_add(&self, a: &[f64], b: &[f64], s: f64, out: &mut [f64]) {
        let n = self.n;
        for (i, o) in out.iter_mut().enumerate() {
            let t = &self.data[i * n * n..(i + 1) * n * n];
            let mut acc = 0.0;
            for (p, &ap) in a.iter().enumerate() {
                if ap == 0.0 {
                    continue;
                }
                let row = &t[p * n..(p + 1) * n];
                let mut r = 0.0;
                for q in 0..n {
                    r += row[q] * b[q];
                }
                acc += ap * r;
            }
            *o += s * acc;
        }
    }

    /// Complex bilinear form `out += Γ_uncorrected(a, b)` with `a = ar + i ai`,
    /// `b = br + i bi`. Imaginary parts may be omitted when zero.
    pub fn gamma_add_complex(
        &self,
        ar: &[f64],
        ai: Option<&[f64]>,
        br: &[f64],
        bi: Option<&[f64]>,
        out_re: &mut [f64],
        out_im: &mut [f64],
    ) {
        let n = self.n;
        let mut tbr = vec![0.0; n];
        let mut tbi = vec![0.0; n];
        for i in 0..n {
            let t = &self.data[i * n * n..(i + 1) * n * n];
            for p in 0..n {
                let row = &t[p * n..(p + 1) * n];
                let mut r = 0.0;
                for q in 0..n {
                    r += row[q] * br[q];
                }
                tbr[p] = r;
                if let Some(bi) = bi {
                    let mut r = 0.0;
                    for q in 0..n {
                        r += row[q] * bi[q];
                    }
                    tbi[p] = r;
                }
            }
            let mut re = 0.0;
            let mut im = 0.0;
            for p in 0..n {
                re += ar[p] * tbr[p];
                if bi.is_some() {
                    im += ar[p] * tbi[p];
                }
                if let Some(ai) = ai {
                    im += ai[p] * tbr[p];
                    if bi.is_some() {
                        re -= ai[p] * tbi[p];
                    }
                }
            }
            out_re[i] += re;
            out_im[i] += im;
        }
    }

    /// Uncorrected `Γ(a_k, b_k)` for every row `k` of `a` and `b`
    /// (`rows × N` each), returned as `rows × N`.
    pub fn gamma_batch(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n;
        let rows = a.nrows();
        assert_eq!(a.ncols(), n);
        assert_eq!(b.shape(), a.shape());
        let cols: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                // T_i is symmetric, so its row-major block reads as itself
                let t = nalgebra::DMatrixView::from_slice(&self.data[i * n * n..(i + 1) * n * n], n, n);
                let c = a * t;
                let mut out = vec![0.0; rows];
                for q in 0..n {
                    let cc = c.column(q);
                    let bc = b.column(q);
                    for k in 0..rows {
                        out[k] += cc[k] * bc[k];
                    }
                }
                out
            })
            .collect();
        let mut out = DMatrix::zeros(rows, n);
        for (i, c) in cols.into_iter().enumerate() {
            out.column_mut(i).copy_from_slice(&c);
        }
        out
    }

    pub fn basis(&self) -> &NullSpaceBasis {
        &self.basis
    }
}
