//! Assembled operators shared by the transport, semigroup and nonlinear
//! stages, and their action on whole distribution fields.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::collision::{assemble_linearized, CollisionQuadrature, GammaTensor, LinearizedOperator, DENSE_GAMMA_LIMIT};
use crate::error::Result;
use crate::spatial::{DistributionField, SpatialGrid};
use crate::sphere::SphereRule;
use crate::velocity::{EquilibriumState, VelocityGrid};

#[derive(Debug, Clone)]
enum GammaEngine {
    Dense(GammaTensor),
    Direct,
}

#[derive(Debug, Clone)]
pub struct Operators {
    pub state: EquilibriumState,
    pub vgrid: VelocityGrid,
    pub quad: CollisionQuadrature,
    pub op: LinearizedOperator,
    gamma: GammaEngine,
}

impl Operators {
    pub fn build(state: &EquilibriumState, vgrid: &VelocityGrid, rule: SphereRule) -> Result<Self> {
        let quad = CollisionQuadrature::new(state, vgrid, rule)?;
        let op = assemble_linearized(&quad)?;
        Self::from_parts(quad, op)
    }

    pub fn from_parts(quad: CollisionQuadrature, op: LinearizedOperator) -> Result<Self> {
        let gamma = if quad.grid().len() <= DENSE_GAMMA_LIMIT {
            GammaEngine::Dense(GammaTensor::build(&quad)?)
        } else {
            GammaEngine::Direct
        };
        Ok(Self { state: *quad.state(), vgrid: quad.grid().clone(), quad, op, gamma })
    }

    pub fn n_v(&self) -> usize {
        self.vgrid.len()
    }

    /// Conservation-corrected `Γ(a, b)` on one velocity vector.
    pub fn gamma(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        match &self.gamma {
            GammaEngine::Dense(t) => t.gamma(a, b),
            GammaEngine::Direct => self.quad.gamma(a, b),
        }
    }

    /// `gamma` for many pairs at once.
    pub fn gamma_pairs(&self, pairs: &[(&[f64], &[f64])]) -> Vec<Vec<f64>> {
        match &self.gamma {
            GammaEngine::Dense(t) => pairs.iter().map(|(a, b)| t.gamma(a, b)).collect(),
            GammaEngine::Direct => self.quad.gamma_pairs(pairs),
        }
    }

    fn gamma_add_complex(
        &self,
        ar: &[f64],
        ai: Option<&[f64]>,
        br: &[f64],
        bi: Option<&[f64]>,
        out_re: &mut [f64],
        out_im: &mut [f64],
    ) {
        match &self.gamma {
            GammaEngine::Dense(t) => t.gamma_add_complex(ar, ai, br, bi, out_re, out_im),
            GammaEngine::Direct => {
                let add = |o: &mut [f64], v: Vec<f64>, s: f64| o.iter_mut().zip(v).for_each(|(a, b)| *a += s * b);
                add(out_re, self.quad.gamma_uncorrected(ar, br), 1.0);
                if let Some(bi) = bi {
                    add(out_im, self.quad.gamma_uncorrected(ar, bi), 1.0);
                }
                if let Some(ai) = ai {
                    add(out_im, self.quad.gamma_uncorrected(ai, br), 1.0);
                    if let Some(bi) = bi {
                        add(out_re, self.quad.gamma_uncorrected(ai, bi), -1.0);
                    }
                }
            }
        }
    }

    /// Mode-truncated `Γ(a, b)` at every `x₁` node: target mode `k` collects
    /// `Γ(a_{k1}, b_{k2})` over `k1 + k2 = k` inside the mode set.
    pub fn gamma_field(&self, a: &DistributionField, b: &DistributionField, xgrid: &SpatialGrid) -> DistributionField {
        let mut out = DistributionField::zeros_like(a);
        out.time = a.time;
        self.gamma_field_add(a, b, xgrid, 1.0, &mut out);
        out
    }

    /// `out += s · Γ(a, b)` (mode-truncated, conservation-corrected).
    pub fn gamma_field_add(
        &self,
        a: &DistributionField,
        b: &DistributionField,
        xgrid: &SpatialGrid,
        s: f64,
        out: &mut DistributionField,
    ) {
        match &self.gamma {
            GammaEngine::Dense(t) => self.gamma_field_add_dense(t, a, b, xgrid, s, out),
            GammaEngine::Direct => self.gamma_field_add_direct(a, b, xgrid, s, out),
        }
    }

    fn gamma_field_add_dense(
        &self,
        tensor: &GammaTensor,
        a: &DistributionField,
        b: &DistributionField,
        xgrid: &SpatialGrid,
        s: f64,
        out: &mut DistributionField,
    ) {
        let table = xgrid.product_table();
        let n_v = a.n_v;
        let n_modes = a.n_modes;
        let nonzero = |f: &DistributionField, ix: usize, m: usize| -> (bool, bool) {
            let sl = f.slice(ix, m);
            (sl.iter().any(|v| v.re != 0.0), sl.iter().any(|v| v.im != 0.0))
        };
        // one real product per entry: (a slice, a imaginary?, b slice, b imaginary?, destination, sign)
        let mut terms: Vec<(usize, bool, usize, bool, usize, bool, f64)> = Vec::new();
        let mut touched = vec![false; a.n_x * n_modes];
        for ix in 0..a.n_x {
            let an: Vec<(bool, bool)> = (0..n_modes).map(|m| nonzero(a, ix, m)).collect();
            let bn: Vec<(bool, bool)> = (0..n_modes).map(|m| nonzero(b, ix, m)).collect();
            for (t, pairs) in table.iter().enumerate() {
                let dest = ix * n_modes + t;
                for &(m1, m2) in pairs {
                    let (ar, ai) = an[m1];
                    let (br, bi) = bn[m2];
                    let sa = a.offset(ix, m1);
                    let sb = b.offset(ix, m2);
                    if ar && br {
                        terms.push((sa, false, sb, false, dest, false, 1.0));
                    }
                    if ai && bi {
                        terms.push((sa, true, sb, true, dest, false, -1.0));
                    }
                    if ar && bi {
                        terms.push((sa, false, sb, true, dest, true, 1.0));
                    }
                    if ai && br {
                        terms.push((sa, true, sb, false, dest, true, 1.0));
                    }
                }
            }
        }
        if terms.is_empty() {
            return;
        }
        let rows = terms.len();
        let part = |f: &DistributionField, o: usize, im: bool, i: usize| {
            let v = f.data[o + i];
            if im {
                v.im
            } else {
                v.re
            }
        };
        let am = DMatrix::from_fn(rows, n_v, |k, i| part(a, terms[k].0, terms[k].1, i));
        let bm = DMatrix::from_fn(rows, n_v, |k, i| part(b, terms[k].2, terms[k].3, i));
        let res = tensor.gamma_batch(&am, &bm);
        let mut re = vec![0.0; a.n_x * n_modes * n_v];
        let mut im = vec![0.0; a.n_x * n_modes * n_v];
        for (k, term) in terms.iter().enumerate() {
            let dst = if term.5 { &mut im } else { &mut re };
            let base = term.4 * n_v;
            touched[term.4] = true;
            for i in 0..n_v {
                dst[base + i] += term.6 * res[(k, i)];
            }
        }
        let basis = self.quad.basis();
        out.data.par_chunks_mut(n_v).zip(re.par_chunks_mut(n_v).zip(im.par_chunks_mut(n_v))).enumerate().for_each(
            |(d, (o, (r, i)))| {
                if !touched[d] {
                    return;
                }
                basis.remove_projection(r);
                basis.remove_projection(i);
                for (dst, (x, y)) in o.iter_mut().zip(r.iter().zip(i.iter())) {
                    *dst += Complex64::new(*x, *y) * s;
                }
            },
        );
    }

    fn gamma_field_add_direct(
        &self,
        a: &DistributionField,
        b: &DistributionField,
        xgrid: &SpatialGrid,
        s: f64,
        out: &mut DistributionField,
    ) {
        let table = xgrid.product_table();
        let n_v = a.n_v;
        let n_modes = a.n_modes;
        let stride = n_modes * n_v;
        out.data.par_chunks_mut(stride).enumerate().for_each(|(ix, chunk)| {
            let split = |f: &DistributionField, m: usize| -> (Vec<f64>, Option<Vec<f64>>, bool) {
                let sl = f.slice(ix, m);
                let re: Vec<f64> = sl.iter().map(|v| v.re).collect();
                let has_im = sl.iter().any(|v| v.im != 0.0);
                let im = if has_im { Some(sl.iter().map(|v| v.im).collect()) } else { None };
                let zero = !has_im && re.iter().all(|v| *v == 0.0);
                (re, im, zero)
            };
            let aparts: Vec<_> = (0..n_modes).map(|m| split(a, m)).collect();
            let bparts: Vec<_> = (0..n_modes).map(|m| split(b, m)).collect();
            for (t, pairs) in table.iter().enumerate() {
                let mut re = vec![0.0; n_v];
                let mut im = vec![0.0; n_v];
                let mut touched = false;
                for &(m1, m2) in pairs {
                    let (ar, ai, az) = &aparts[m1];
                    let (br, bi, bz) = &bparts[m2];
                    if *az || *bz {
                        continue;
                    }
                    touched = true;
                    self.gamma_add_complex(ar, ai.as_deref(), br, bi.as_deref(), &mut re, &mut im);
                }
                if !touched {
                    continue;
                }
                let basis = self.quad.basis();
                basis.remove_projection(&mut re);
                basis.remove_projection(&mut im);
                let dst = &mut chunk[t * n_v..(t + 1) * n_v];
                for (d, (r, i)) in dst.iter_mut().zip(re.iter().zip(&im)) {
                    *d += Complex64::new(*r, *i) * s;
                }
            }
        });
    }

    /// `L` applied at every `(x₁, mode)` slice.
    pub fn l_field(&self, f: &DistributionField) -> DistributionField {
        let mut out = DistributionField::zeros_like(f);
        out.time = f.time;
        let n_v = f.n_v;
        // K is symmetric, so column i of the column-major storage is row i
        let k = self.op.k_matrix.as_slice();
        let nu = &self.op.nu;
        out.data.par_chunks_mut(n_v).zip(f.data.par_chunks(n_v)).for_each(|(o, src)| {
            for i in 0..n_v {
                let col = &k[i * n_v..(i + 1) * n_v];
                let mut s = src[i] * (-nu[i]);
                for j in 0..n_v {
                    s += src[j] * col[j];
                }
                o[i] = s;
            }
        });
        out
    }
}
