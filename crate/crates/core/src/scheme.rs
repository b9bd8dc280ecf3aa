//! Collision, streaming and boundary handling.
//!
//! Populations are stored as incoming values f~_j(x). One flight is
//! m = M~ f~, relaxation, f* = P m*, then f~_j(x) <- f*_{n_j(x)}(x_j).
//! A D2T7 time step is one flight. A D2T4 time step is two flights, so that
//! each step returns every population to its own node class.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{transition_matrices, MomentMatrices, PolynomialFamily};
use crate::error::{Error, Result};
use crate::mesh::{Lattice, Link, SchemeKind};

/// Node chunk size for the parallel loops.
const CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeParams {
    pub scheme: SchemeKind,
    pub zeta: f64,
    pub dx: f64,
    pub a3: f64,
    #[serde(default)]
    pub u: f64,
    #[serde(default)]
    pub v: f64,
    /// Relaxation rate of every moment; entry 0 (conserved) is ignored.
    pub s: Vec<f64>,
}

impl SchemeParams {
    pub fn new(scheme: SchemeKind, zeta: f64, dx: f64, a3: f64, s: Vec<f64>) -> Result<Self> {
        let p = SchemeParams { scheme, zeta, dx, a3, u: 0.0, v: 0.0, s };
        p.validate()?;
        Ok(p)
    }

    pub fn q(&self) -> usize {
        self.scheme.q()
    }

    pub fn dt(&self) -> f64 {
        self.dx * self.dx / self.zeta
    }

    pub fn with_dx(&self, dx: f64) -> Self {
        SchemeParams { dx, ..self.clone() }
    }

    pub fn with_zeta(&self, zeta: f64) -> Self {
        SchemeParams { zeta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.q();
        if self.s.len() != q {
            return Err(Error::InvalidParameter(format!("{} rates for q = {q}", self.s.len())));
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(Error::InvalidParameter(format!("zeta = {}", self.zeta)));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) {
            return Err(Error::InvalidParameter(format!("dx = {}", self.dx)));
        }
        for (k, &s) in self.s.iter().enumerate().skip(1) {
            if !(s > 0.0 && s < 2.0) {
                return Err(Error::InvalidParameter(format!("s{k} = {s} outside (0, 2)")));
            }
        }
        if self.s[1] != self.s[2] {
            return Err(Error::InvalidParameter("s1 and s2 must be equal".into()));
        }
        if self.scheme == SchemeKind::D2T7 && self.s[4] != self.s[5] {
            return Err(Error::InvalidParameter("s4 and s5 must be equal".into()));
        }
        Ok(())
    }
}

/// (rho, rho u dx/zeta, rho v dx/zeta, a3 rho, 0, ...) truncated to q entries.
pub fn equilibrium_moments(rho: f64, params: &SchemeParams, q: usize) -> Vec<f64> {
    let full = [
        rho,
        rho * params.u * params.dx / params.zeta,
        rho * params.v * params.dx / params.zeta,
        params.a3 * rho,
    ];
    (0..q).map(|k| if k < 4 { full[k] } else { 0.0 }).collect()
}

/// m*_k = m_k + s_k (m^eq_k - m_k) for k >= 1; m_0 is kept.
pub fn relax(m: &[f64], m_eq: &[f64], s: &[f64]) -> Vec<f64> {
    m.iter()
        .enumerate()
        .map(|(k, &mk)| if k == 0 { mk } else { mk + s[k] * (m_eq[k] - mk) })
        .collect()
}

/// Linear collision operator on incoming populations, f* = P (I - S + S E) M~ f~.
pub fn collision_matrix(cm: &crate::basis::ClassMatrices, params: &SchemeParams) -> DMatrix<f64> {
    let q = cm.m.nrows();
    let e = equilibrium_moments(1.0, params, q);
    let mut r = DMatrix::<f64>::identity(q, q);
    for k in 1..q {
        r[(k, k)] = 1.0 - params.s[k];
        r[(k, 0)] += params.s[k] * e[k];
    }
    &cm.p * r * &cm.m_tilde
}

#[derive(Clone, Debug)]
pub struct Kernel {
    pub q: usize,
    /// Row-major q x q collision matrix per class.
    pub collide: Vec<Vec<f64>>,
    /// Outgoing equilibrium P m^eq(1) per class.
    pub feq_out: Vec<Vec<f64>>,
    /// Incoming equilibrium M~^{-1} m^eq(1) per class.
    pub feq_in: Vec<Vec<f64>>,
    pub node_class: Vec<usize>,
}

impl Kernel {
    pub fn new(mm: &MomentMatrices, params: &SchemeParams) -> Self {
        let q = mm.q();
        let e = DMatrix::from_vec(q, 1, equilibrium_moments(1.0, params, q));
        let mut collide = Vec::new();
        let mut feq_out = Vec::new();
        let mut feq_in = Vec::new();
        for cm in &mm.classes {
            let c = collision_matrix(cm, params);
            collide.push((0..q * q).map(|i| c[(i / q, i % q)]).collect());
            feq_out.push((&cm.p * &e).iter().copied().collect());
            feq_in.push((&cm.m_tilde_inv * &e).iter().copied().collect());
        }
        Kernel { q, collide, feq_out, feq_in, node_class: mm.node_class.clone() }
    }
}

pub type WallFn = Arc<dyn Fn([f64; 2], f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum BoundarySpec {
    Periodic,
    Dirichlet(WallFn),
}

impl BoundarySpec {
    pub fn dirichlet(f: impl Fn([f64; 2], f64) -> f64 + Send + Sync + 'static) -> Self {
        BoundarySpec::Dirichlet(Arc::new(f))
    }

    pub fn homogeneous() -> Self {
        Self::dirichlet(|_, _| 0.0)
    }
}

impl fmt::Debug for BoundarySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundarySpec::Periodic => write!(f, "Periodic"),
            BoundarySpec::Dirichlet(_) => write!(f, "Dirichlet(..)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldState {
    pub f: Vec<f64>,
    pub t: f64,
    pub step_count: u64,
}

/// Everything needed to advance a state on one lattice.
pub struct Stepper<'a> {
    pub lattice: &'a Lattice,
    pub matrices: MomentMatrices,
    pub params: SchemeParams,
    pub kernel: Kernel,
    pub boundary: BoundarySpec,
    /// Source slot of every destination slot; negative values -(b+1) index `cut`.
    source: Vec<i64>,
    /// (slot, weight 2 feq_j) per cut link.
    cut: Vec<(usize, f64)>,
    walls: Vec<[f64; 2]>,
    flights: usize,
}

impl<'a> Stepper<'a> {
    pub fn new(lattice: &'a Lattice, params: &SchemeParams, boundary: BoundarySpec) -> Result<Self> {
        params.validate()?;
        if params.scheme != lattice.scheme {
            return Err(Error::Config(format!("{} parameters on a {} lattice", params.scheme, lattice.scheme)));
        }
        if (params.dx - lattice.dx).abs() > 1e-12 * lattice.dx {
            return Err(Error::Config(format!("params dx = {} but lattice dx = {}", params.dx, lattice.dx)));
        }
        let n_cut = lattice.boundary_links().count();
        match boundary {
            BoundarySpec::Periodic if lattice.wraps.is_none() || n_cut > 0 => {
                return Err(Error::Config("periodic boundary on a lattice without wrap vectors".into()))
            }
            BoundarySpec::Dirichlet(_) if n_cut == 0 && lattice.wraps.is_none() => {
                return Err(Error::Config("Dirichlet boundary on a lattice without cut links".into()))
            }
            _ => {}
        }
        let family = PolynomialFamily::for_scheme(lattice.scheme);
        let matrices = transition_matrices(lattice, &family)?;
        let kernel = Kernel::new(&matrices, params);
        let q = lattice.q;
        let mut source = vec![0i64; lattice.len() * q];
        let mut cut = Vec::new();
        let mut walls = Vec::new();
        for x in 0..lattice.len() {
            for j in 0..q {
                let s = x * q + j;
                match lattice.link(x, j) {
                    Link::Node(y) => source[s] = (y * q + lattice.dual(x, j)) as i64,
                    Link::Boundary(b) => {
                        source[s] = -(cut.len() as i64) - 1;
                        cut.push((s, 2.0 * kernel.feq_out[kernel.node_class[x]][j]));
                        walls.push(b.wall_point);
                    }
                }
            }
        }
        let flights = match lattice.scheme {
            SchemeKind::D2T7 => 1,
            SchemeKind::D2T4 => 2,
        };
        Ok(Stepper {
            lattice,
            matrices,
            params: params.clone(),
            kernel,
            boundary,
            source,
            cut,
            walls,
            flights,
        })
    }

    pub fn dim(&self) -> usize {
        self.lattice.len() * self.lattice.q
    }

    pub fn dt(&self) -> f64 {
        self.params.dt()
    }

    pub fn flights_per_step(&self) -> usize {
        self.flights
    }

    /// f~(x, 0) = M~^{-1} m^eq(rho0(x)).
    pub fn equilibrium_state(&self, rho0: impl Fn([f64; 2]) -> f64) -> FieldState {
        let q = self.lattice.q;
        let mut f = vec![0.0; self.dim()];
        for x in 0..self.lattice.len() {
            let rho = rho0(self.lattice.positions[x]);
            let e = &self.kernel.feq_in[self.kernel.node_class[x]];
            for j in 0..q {
                f[x * q + j] = rho * e[j];
            }
        }
        FieldState { f, t: 0.0, step_count: 0 }
    }

    /// Equilibrium plus the first-order non-equilibrium part of the velocity moments,
    /// m_a = m_a^eq - a3 dx / (2 s_a) d_a rho, which removes the O(dx) initial layer.
    pub fn first_order_state(&self, rho0: impl Fn([f64; 2]) -> f64, grad: impl Fn([f64; 2]) -> [f64; 2]) -> FieldState {
        let q = self.lattice.q;
        let p = &self.params;
        let mut f = vec![0.0; self.dim()];
        for x in 0..self.lattice.len() {
            let pos = self.lattice.positions[x];
            let mut m = DVector::from_vec(equilibrium_moments(rho0(pos), p, q));
            let g = grad(pos);
            for a in 0..2 {
                m[a + 1] -= p.a3 * p.dx / (2.0 * p.s[a + 1]) * g[a];
            }
            let fx = &self.matrices.classes[self.kernel.node_class[x]].m_tilde_inv * m;
            f[x * q..(x + 1) * q].copy_from_slice(fx.as_slice());
        }
        FieldState { f, t: 0.0, step_count: 0 }
    }

    fn collide(&self, fin: &[f64], fstar: &mut [f64]) {
        let q = self.lattice.q;
        let k = &self.kernel;
        fstar
            .par_chunks_mut(CHUNK * q)
            .zip(fin.par_chunks(CHUNK * q))
            .enumerate()
            .for_each(|(c, (out, inp))| {
                for (i, (o, f)) in out.chunks_exact_mut(q).zip(inp.chunks_exact(q)).enumerate() {
                    let a = &k.collide[k.node_class[c * CHUNK + i]];
                    for r in 0..q {
                        let row = &a[r * q..(r + 1) * q];
                        o[r] = row.iter().zip(f).map(|(x, y)| x * y).sum();
                    }
                }
            });
    }

    fn stream(&self, fstar: &[f64], fout: &mut [f64], wall: &[f64]) {
        let src = &self.source;
        fout.par_chunks_mut(CHUNK * self.lattice.q).enumerate().for_each(|(c, out)| {
            let base = c * CHUNK * self.lattice.q;
            for (i, o) in out.iter_mut().enumerate() {
                let s = src[base + i];
                *o = if s >= 0 {
                    fstar[s as usize]
                } else {
                    let b = (-s - 1) as usize;
                    let (slot, w) = self.cut[b];
                    -fstar[slot] + w * wall[b]
                };
            }
        });
    }

    fn wall_values(&self, t: f64) -> Vec<f64> {
        match &self.boundary {
            BoundarySpec::Periodic => vec![],
            BoundarySpec::Dirichlet(g) => self.walls.iter().map(|&p| g(p, t)).collect(),
        }
    }

    /// Incoming boundary populations -f*_j(x) + 2 f^eq_j(rho_w) for every cut link.
    pub fn apply_dirichlet(&self, fstar: &[f64], t: f64) -> Vec<(usize, f64)> {
        let wall = self.wall_values(t);
        self.cut.iter().zip(&wall).map(|(&(slot, w), &rw)| (slot, -fstar[slot] + w * rw)).collect()
    }

    /// One full time step in place.
    pub fn step(&self, state: &mut FieldState) -> Result<()> {
        let mut scratch = vec![0.0; self.dim()];
        let mut next = vec![0.0; self.dim()];
        let dtf = self.dt() / self.flights as f64;
        for k in 0..self.flights {
            let wall = self.wall_values(state.t + k as f64 * dtf);
            self.collide(&state.f, &mut scratch);
            self.stream(&scratch, &mut next, &wall);
            std::mem::swap(&mut state.f, &mut next);
        }
        state.step_count += 1;
        state.t = state.step_count as f64 * self.dt();
        if let Some(i) = state.f.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: state.step_count, node: i / self.lattice.q });
        }
        Ok(())
    }

    /// One homogeneous step on a flat state vector (wall values zero).
    pub fn apply_homogeneous(&self, x: &[f64], y: &mut [f64]) {
        let zero = vec![0.0; self.cut.len()];
        let mut scratch = vec![0.0; self.dim()];
        if self.flights == 1 {
            self.collide(x, &mut scratch);
            self.stream(&scratch, y, &zero);
        } else {
            let mut mid = vec![0.0; self.dim()];
            self.collide(x, &mut scratch);
            self.stream(&scratch, &mut mid, &zero);
            self.collide(&mid, &mut scratch);
            self.stream(&scratch, y, &zero);
        }
    }

    /// Transpose of [`Stepper::apply_homogeneous`].
    pub fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let mut cur = x.to_vec();
        let mut tmp = vec![0.0; self.dim()];
        for _ in 0..self.flights {
            self.stream_transpose(&cur, &mut tmp);
            self.collide_transpose(&tmp, &mut cur);
        }
        y.copy_from_slice(&cur);
    }

    fn stream_transpose(&self, fin: &[f64], fout: &mut [f64]) {
        fout.iter_mut().for_each(|v| *v = 0.0);
        for (s, &src) in self.source.iter().enumerate() {
            if src >= 0 {
                fout[src as usize] += fin[s];
            } else {
                let (slot, _) = self.cut[(-src - 1) as usize];
                fout[slot] -= fin[s];
            }
        }
    }

    fn collide_transpose(&self, fin: &[f64], fout: &mut [f64]) {
        let q = self.lattice.q;
        let k = &self.kernel;
        for (x, (o, f)) in fout.chunks_exact_mut(q).zip(fin.chunks_exact(q)).enumerate() {
            let a = &k.collide[k.node_class[x]];
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = (0..q).map(|r| a[r * q + j] * f[r]).sum();
            }
        }
    }

    /// Homogeneous step in double-double arithmetic with collision matrices
    /// given as hi + lo pairs per class; returns (hi, lo) of the result.
    pub fn apply_split(&self, split: &[Vec<(f64, f64)>], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let q = self.lattice.q;
        let n = self.dim();
        let mut hi = x.to_vec();
        let mut lo = vec![0.0; n];
        let (mut shi, mut slo) = (vec![0.0; n], vec![0.0; n]);
        for _ in 0..self.flights {
            for x in 0..self.lattice.len() {
                let c = &split[self.kernel.node_class[x]];
                for r in 0..q {
                    let (mut s, mut e) = (0.0, 0.0);
                    for j in 0..q {
                        let (a, b) = c[r * q + j];
                        let (p, pe) = two_prod(a, hi[x * q + j]);
                        let (t, te) = two_sum(s, p);
                        s = t;
                        e += pe + te + a * lo[x * q + j] + b * hi[x * q + j];
                    }
                    let (t, te) = two_sum(s, e);
                    shi[x * q + r] = t;
                    slo[x * q + r] = te;
                }
            }
            for (s, &src) in self.source.iter().enumerate() {
                if src >= 0 {
                    hi[s] = shi[src as usize];
                    lo[s] = slo[src as usize];
                } else {
                    let (slot, _) = self.cut[(-src - 1) as usize];
                    hi[s] = -shi[slot];
                    lo[s] = -slo[slot];
                }
            }
        }
        (hi, lo)
    }

    /// Moments of the incoming populations, node-major q values per node.
    pub fn moments(&self, state: &FieldState) -> Vec<f64> {
        let q = self.lattice.q;
        let mut m = vec![0.0; self.dim()];
        for x in 0..self.lattice.len() {
            let mt = &self.matrices.of(x).m_tilde;
            for k in 0..q {
                m[x * q + k] = (0..q).map(|j| mt[(k, j)] * state.f[x * q + j]).sum();
            }
        }
        m
    }

    pub fn density(&self, state: &FieldState) -> Vec<f64> {
        state.f.chunks_exact(self.lattice.q).map(|c| c.iter().sum()).collect()
    }

    pub fn total_mass(&self, state: &FieldState) -> f64 {
        self.density(state).iter().sum()
    }
}

/// Reference collision through explicit moments, for cross-checking the fused kernel.
pub fn collide_via_moments(cm: &crate::basis::ClassMatrices, params: &SchemeParams, f: &[f64]) -> Vec<f64> {
    let q = f.len();
    let m: Vec<f64> = (0..q).map(|k| (0..q).map(|j| cm.m_tilde[(k, j)] * f[j]).sum()).collect();
    let meq = equilibrium_moments(m[0], params, q);
    let ms = relax(&m, &meq, &params.s);
    (0..q).map(|i| (0..q).map(|k| cm.p[(i, k)] * ms[k]).sum()).collect()
}

/// a + b = s + e exactly.
pub fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// a * b = p + e exactly.
pub fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}
