//! Matrix-free eigenanalysis of the one-step operator.
//!
//! The driver is a thick-restarted Arnoldi (Krylov-Schur form) with classical
//! Gram-Schmidt applied twice. At each restart the wanted Ritz values are moved
//! to the top of a complex Schur form of the projected matrix, and a real
//! orthonormal basis of that invariant subspace becomes the new Krylov basis.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{mu, mu_split, split_collision, Conversion};
use crate::dense;
use crate::error::{Error, Result};
use crate::mesh::{triangle_symmetries, Lattice, SlotMap};
use crate::scheme::{two_prod, two_sum, BoundarySpec, SchemeParams, Stepper};

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOperator for Stepper<'_> {
    fn dim(&self) -> usize {
        Stepper::dim(self)
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.apply_homogeneous(x, y)
    }
}

/// Explicit dense operator, mostly for tests.
pub struct DenseOperator(pub DMatrix<f64>);

impl LinearOperator for DenseOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.0.nrows();
        for (i, yi) in y.iter_mut().enumerate().take(n) {
            *yi = (0..n).map(|j| self.0[(i, j)] * x[j]).sum();
        }
    }
}

/// Irreducible representations of the triangle group used for projection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Irrep {
    /// Invariant under every symmetry.
    Symmetric,
    /// Invariant under rotations, odd under reflections.
    Alternating,
}

/// The operator followed by projection onto one symmetry class.
pub struct Projected<'a, O: LinearOperator> {
    pub op: &'a O,
    pub maps: Vec<SlotMap>,
    pub irrep: Irrep,
}

impl<O: LinearOperator> Projected<'_, O> {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; x.len()];
        let w = 1.0 / self.maps.len() as f64;
        for m in &self.maps {
            let c = match (self.irrep, m.det) {
                (Irrep::Alternating, -1) => -w,
                _ => w,
            };
            for (s, &t) in m.perm.iter().enumerate() {
                y[t] += c * x[s];
            }
        }
        y
    }
}

impl<O: LinearOperator> LinearOperator for Projected<'_, O> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let mut t = vec![0.0; x.len()];
        self.op.apply(x, &mut t);
        y.copy_from_slice(&self.project(&t));
    }
}

#[derive(Clone, Debug)]
pub struct ArnoldiOptions {
    /// Krylov subspace size.
    pub m: usize,
    pub nev: usize,
    pub tol: f64,
    pub seed: u64,
    pub max_restarts: usize,
}

impl ArnoldiOptions {
    pub fn new(nev: usize) -> Self {
        ArnoldiOptions { m: (4 * nev).max(30), nev, tol: 1e-10, seed: 1, max_restarts: 500 }
    }
}

#[derive(Clone, Debug)]
pub struct RitzPair {
    pub value: Complex64,
    pub vector: Vec<Complex64>,
    /// ||A v - lambda v|| for unit v, from an explicit operator application.
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct ArnoldiResult {
    pub pairs: Vec<RitzPair>,
    pub restarts: usize,
    pub matvecs: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // fixed chunking and a serial final sum keep the result independent of the thread count
    let parts: Vec<f64> =
        a.par_chunks(4096).zip(b.par_chunks(4096)).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>()).collect();
    parts.iter().sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Orthogonalize w against the columns of v (twice); returns the coefficients.
fn orthogonalize(v: &[Vec<f64>], w: &mut [f64]) -> Vec<f64> {
    let mut h = vec![0.0; v.len()];
    for _ in 0..2 {
        let c: Vec<f64> = v.par_iter().map(|vi| dot(vi, w)).collect();
        w.par_chunks_mut(4096).enumerate().for_each(|(b, chunk)| {
            let off = b * 4096;
            for (i, vi) in v.iter().enumerate() {
                let ci = c[i];
                for (k, wk) in chunk.iter_mut().enumerate() {
                    *wk -= ci * vi[off + k];
                }
            }
        });
        for (hi, ci) in h.iter_mut().zip(&c) {
            *hi += ci;
        }
    }
    h
}

/// Givens rotation with [c s; -conj(s) c] [f; g] = [r; 0] and real c.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    if g.norm() == 0.0 {
        return (1.0, Complex64::new(0.0, 0.0));
    }
    if f.norm() == 0.0 {
        return (0.0, g.conj() / g.norm());
    }
    let fa = f.norm();
    let r = (fa * fa + g.norm_sqr()).sqrt();
    let c = fa / r;
    let s = (f / fa) * g.conj() / r;
    (c, s)
}

/// Swap the adjacent diagonal entries k, k+1 of the upper triangular T,
/// updating Q so that Q T Q^H is preserved.
fn swap_schur(t: &mut DMatrix<Complex64>, q: &mut DMatrix<Complex64>, k: usize) {
    let n = t.nrows();
    let (t11, t22) = (t[(k, k)], t[(k + 1, k + 1)]);
    let (c, s) = givens(t[(k, k + 1)], t22 - t11);
    // rows k, k+1 from column k+2 on
    for j in k + 2..n {
        let (x, y) = (t[(k, j)], t[(k + 1, j)]);
        t[(k, j)] = x * c + s * y;
        t[(k + 1, j)] = y * c - s.conj() * x;
    }
    // columns k, k+1 above row k
    let sc = s.conj();
    for i in 0..k {
        let (x, y) = (t[(i, k)], t[(i, k + 1)]);
        t[(i, k)] = x * c + sc * y;
        t[(i, k + 1)] = y * c - sc.conj() * x;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    for i in 0..n {
        let (x, y) = (q[(i, k)], q[(i, k + 1)]);
        q[(i, k)] = x * c + sc * y;
        q[(i, k + 1)] = y * c - sc.conj() * x;
    }
}

/// Real orthonormal basis of the invariant subspace of `h` belonging to the
/// `p` eigenvalues of largest modulus (extended to keep conjugate pairs whole).
fn wanted_basis(h: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    let m = h.nrows();
    let hc = dense::complexify(h);
    let scale = h.abs().max().max(f64::MIN_POSITIVE);
    let (mut q, mut t) = Schur::try_new(hc, 1e-15 * scale, 10_000)
        .ok_or_else(|| Error::NoConvergence { restarts: 0, best: vec![] })?
        .unpack();
    let mut mods: Vec<(usize, f64)> = (0..m).map(|i| (i, t[(i, i)].norm())).collect();
    mods.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut p = p.min(m);
    while p < m && (mods[p].1 - mods[p - 1].1).abs() <= 1e-10 * mods[p - 1].1 {
        p += 1;
    }
    let thresh = if p < m { 0.5 * (mods[p - 1].1 + mods[p].1) } else { -1.0 };
    // bubble the wanted diagonal entries to the top, keeping their order
    let mut top = 0;
    for i in 0..m {
        if t[(i, i)].norm() > thresh {
            let mut j = i;
            while j > top {
                swap_schur(&mut t, &mut q, j - 1);
                j -= 1;
            }
            top += 1;
        }
    }
    let mut cols: Vec<Vec<f64>> = Vec::new();
    for i in 0..top {
        for part in 0..2 {
            let mut c: Vec<f64> = (0..m).map(|r| if part == 0 { q[(r, i)].re } else { q[(r, i)].im }).collect();
            for b in &cols {
                let d: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
                for (ci, bi) in c.iter_mut().zip(b) {
                    *ci -= d * bi;
                }
            }
            for b in &cols {
                let d: f64 = b.iter().zip(&c).map(|(x, y)| x * y).sum();
                for (ci, bi) in c.iter_mut().zip(b) {
                    *ci -= d * bi;
                }
            }
            let nrm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-6 && cols.len() < top {
                cols.push(c.iter().map(|x| x / nrm).collect());
            }
        }
    }
    Ok(DMatrix::from_fn(m, cols.len(), |r, c| cols[c][r]))
}

/// Leading eigenpairs (by modulus) of a real linear operator.
pub fn arnoldi<O: LinearOperator + ?Sized>(op: &O, opts: &ArnoldiOptions) -> Result<ArnoldiResult> {
    let n = op.dim();
    let nev = opts.nev;
    if nev == 0 || n == 0 {
        return Err(Error::InvalidParameter("nev and the dimension must be positive".into()));
    }
    let m = opts.m.min(n);
    if m < nev + 2 && m < n {
        return Err(Error::InvalidParameter(format!("subspace size {m} < nev + 2 = {}", nev + 2)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut start: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
    // let the operator filter the start vector (projects it for symmetry-restricted operators)
    let mut tmp = vec![0.0; n];
    op.apply(&start, &mut tmp);
    start = tmp;
    let nrm = norm(&start);
    if nrm == 0.0 {
        return Err(Error::InvalidParameter("operator annihilates the start vector".into()));
    }
    start.iter_mut().for_each(|v| *v /= nrm);

    let mut v: Vec<Vec<f64>> = vec![start];
    let mut h = DMatrix::<f64>::zeros(m + 1, m);
    let mut k = 0;
    let mut matvecs = 1;
    let mut best = vec![f64::INFINITY; nev];
    for restart in 0..=opts.max_restarts {
        for j in k..m {
            let mut w = vec![0.0; n];
            op.apply(&v[j], &mut w);
            matvecs += 1;
            let hc = orthogonalize(&v, &mut w);
            for (i, c) in hc.iter().enumerate() {
                h[(i, j)] += c;
            }
            let beta = norm(&w);
            let size = hc.iter().map(|c| c * c).sum::<f64>().sqrt().max(1.0);
            if beta <= 1e-13 * size {
                // invariant subspace: continue with a fresh orthogonal direction
                let mut r: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
                let mut t = vec![0.0; n];
                op.apply(&r, &mut t);
                r = t;
                orthogonalize(&v, &mut r);
                let rn = norm(&r);
                if rn <= 1e-13 {
                    return finish(op, &v[..=j], &h.view((0, 0), (j + 1, j + 1)).into_owned(), nev, restart, matvecs, true);
                }
                h[(j + 1, j)] = 0.0;
                v.push(r.iter().map(|x| x / rn).collect());
            } else {
                h[(j + 1, j)] = beta;
                v.push(w.iter().map(|x| x / beta).collect());
            }
        }
        let hm = h.view((0, 0), (m, m)).into_owned();
        let (vals, vecs) = dense::eig(&dense::complexify(&hm))?;
        let mut idx: Vec<usize> = (0..m).collect();
        idx.sort_by(|&a, &b| vals[b].norm().total_cmp(&vals[a].norm()).then(a.cmp(&b)));
        let est: Vec<f64> = idx[..nev]
            .iter()
            .map(|&i| (0..m).map(|c| Complex64::new(h[(m, c)], 0.0) * vecs[(c, i)]).sum::<Complex64>().norm())
            .collect();
        for (b, e) in best.iter_mut().zip(&est) {
            *b = b.min(*e);
        }
        if est.iter().all(|&e| e <= 0.5 * opts.tol) {
            let out = finish(op, &v[..m], &hm, nev, restart, matvecs, false)?;
            if out.pairs.iter().all(|p| p.residual <= opts.tol) {
                return Ok(out);
            }
        }
        if restart == opts.max_restarts {
            break;
        }
        // thick restart on the wanted invariant subspace
        let keep = (nev + (m - nev) / 2).min(m - 1);
        let w = wanted_basis(&hm, keep)?;
        let p = w.ncols();
        let newv: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|c| {
                let mut x = vec![0.0; n];
                for r in 0..m {
                    let a = w[(r, c)];
                    if a != 0.0 {
                        x.iter_mut().zip(&v[r]).for_each(|(xi, vi)| *xi += a * vi);
                    }
                }
                x
            })
            .collect();
        let s = w.transpose() * &hm * &w;
        let g = h.view((m, 0), (1, m)).into_owned() * &w;
        let last = v[m].clone();
        v = newv;
        v.push(last);
        h = DMatrix::zeros(m + 1, m);
        h.view_mut((0, 0), (p, p)).copy_from(&s);
        h.view_mut((p, 0), (1, p)).copy_from(&g);
        k = p;
    }
    Err(Error::NoConvergence { restarts: opts.max_restarts, best })
}

fn finish<O: LinearOperator + ?Sized>(
    op: &O,
    v: &[Vec<f64>],
    hm: &DMatrix<f64>,
    nev: usize,
    restarts: usize,
    mut matvecs: usize,
    exhausted: bool,
) -> Result<ArnoldiResult> {
    let n = op.dim();
    let m = hm.nrows();
    let (vals, vecs) = dense::eig(&dense::complexify(hm))?;
    let mut idx: Vec<usize> = (0..m).collect();
    idx.sort_by(|&a, &b| vals[b].norm().total_cmp(&vals[a].norm()).then(a.cmp(&b)));
    let take = if exhausted { nev.min(m) } else { nev };
    let mut pairs = Vec::with_capacity(take);
    for &i in &idx[..take] {
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for r in 0..m {
            let c = vecs[(r, i)];
            for (t, (a, b)) in v[r].iter().zip(re.iter_mut().zip(im.iter_mut())) {
                *a += c.re * t;
                *b += c.im * t;
            }
        }
        let nrm = (dot(&re, &re) + dot(&im, &im)).sqrt();
        re.iter_mut().chain(im.iter_mut()).for_each(|x| *x /= nrm);
        let lam = vals[i];
        let (mut are, mut aim) = (vec![0.0; n], vec![0.0; n]);
        op.apply(&re, &mut are);
        op.apply(&im, &mut aim);
        matvecs += 2;
        let mut r2 = 0.0;
        for t in 0..n {
            let ax = Complex64::new(are[t], aim[t]);
            let x = Complex64::new(re[t], im[t]);
            r2 += (ax - lam * x).norm_sqr();
        }
        let vector = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
        pairs.push(RitzPair { value: lam, vector, residual: r2.sqrt() });
    }
    Ok(ArnoldiResult { pairs, restarts, matvecs })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumReport {
    /// Sorted by modulus, descending.
    pub eigenvalues: Vec<Complex64>,
    /// rho component per node, normalized to max |rho| = 1 with a positive extremum.
    pub modes: Vec<Vec<f64>>,
    /// mu_num (periodic domains) or Lambda_num (Dirichlet modes) per pair.
    pub derived: Vec<f64>,
    pub residuals: Vec<f64>,
    pub restarts: usize,
    pub matvecs: usize,
}

/// Density field of a population vector: the real part of sum_j f_j per node.
pub fn density_of(v: &[Complex64], q: usize) -> Vec<f64> {
    // rotate so the largest density entry is real before taking the real part
    let rho: Vec<Complex64> = v.chunks_exact(q).map(|c| c.iter().sum()).collect();
    let big = rho.iter().copied().fold(Complex64::new(0.0, 0.0), |a, b| if b.norm() > a.norm() { b } else { a });
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { Complex64::new(1.0, 0.0) };
    let mut out: Vec<f64> = rho.iter().map(|z| (z * phase).re).collect();
    normalize_mode(&mut out);
    out
}

/// Scale so that max |x| = 1 and the largest-magnitude entry is positive.
pub fn normalize_mode(x: &mut [f64]) {
    let (mut best, mut at) = (0.0f64, 0);
    for (i, v) in x.iter().enumerate() {
        if v.abs() > best {
            best = v.abs();
            at = i;
        }
    }
    if best > 0.0 {
        let s = x[at].signum() / best;
        x.iter_mut().for_each(|v| *v *= s);
    }
}

fn report(res: ArnoldiResult, q: usize, derive: impl Fn(Complex64) -> f64) -> SpectrumReport {
    SpectrumReport {
        eigenvalues: res.pairs.iter().map(|p| p.value).collect(),
        modes: res.pairs.iter().map(|p| density_of(&p.vector, q)).collect(),
        derived: res.pairs.iter().map(|p| derive(p.value)).collect(),
        residuals: res.pairs.iter().map(|p| p.residual).collect(),
        restarts: res.restarts,
        matvecs: res.matvecs,
    }
}

/// Shortest nonzero wave vector compatible with the periodic wraps.
pub fn smallest_wavevector(lattice: &Lattice) -> Result<[f64; 2]> {
    let [w1, w2] = lattice.wraps.ok_or_else(|| Error::InvalidParameter("lattice is not periodic".into()))?;
    let det = w1[0] * w2[1] - w1[1] * w2[0];
    let tau = std::f64::consts::TAU;
    let b1 = [tau * w2[1] / det, -tau * w2[0] / det];
    let b2 = [-tau * w1[1] / det, tau * w1[0] / det];
    let mut best = [0.0, 0.0];
    let mut bn = f64::INFINITY;
    for i in -3i32..=3 {
        for j in -3i32..=3 {
            if i == 0 && j == 0 {
                continue;
            }
            let k = [i as f64 * b1[0] + j as f64 * b2[0], i as f64 * b1[1] + j as f64 * b2[1]];
            let kn = k[0].hypot(k[1]);
            if kn < bn * (1.0 - 1e-12) {
                bn = kn;
                best = k;
            }
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, Serialize)]
pub struct PipeResult {
    pub k: f64,
    pub lambda0: Complex64,
    /// lambda0 - 1, refined.
    pub shift: f64,
    pub mu_num: f64,
    pub mu: f64,
    pub eps: f64,
    pub spectrum: SpectrumReport,
}

/// Diffusivity from the slowest non-conserved mode of a periodic lattice.
pub fn pipe_diffusivity(lattice: &Lattice, params: &SchemeParams, nev: usize, conv: Conversion) -> Result<PipeResult> {
    let mut opts = ArnoldiOptions::new(nev.max(3));
    opts.tol = 1e-13;
    pipe_diffusivity_opts(lattice, params, conv, &opts)
}

pub fn pipe_diffusivity_opts(
    lattice: &Lattice,
    params: &SchemeParams,
    conv: Conversion,
    opts: &ArnoldiOptions,
) -> Result<PipeResult> {
    let st = Stepper::new(lattice, params, BoundarySpec::Periodic)?;
    let res = arnoldi(&st, opts)?;
    let kv = smallest_wavevector(lattice)?;
    let k = kv[0].hypot(kv[1]);
    let dt = params.dt();
    let slow = res
        .pairs
        .iter()
        .filter(|p| (p.value - 1.0).norm() > 1e-9)
        .max_by(|a, b| a.value.norm().total_cmp(&b.value.norm()))
        .ok_or_else(|| Error::NoConvergence { restarts: res.restarts, best: vec![] })?;
    let lambda0 = slow.value;
    let right = real_vector(&slow.vector);
    // lambda0 - 1 from a two-sided Rayleigh quotient in double-double arithmetic:
    // the f64 eigenvalue alone is limited to about 1e-16 absolute accuracy
    let left_res = arnoldi(&Transposed(&st), opts)?;
    let left = left_res
        .pairs
        .iter()
        .min_by(|a, b| (a.value - lambda0).norm().total_cmp(&(b.value - lambda0).norm()))
        .map(|p| real_vector(&p.vector))
        .ok_or_else(|| Error::NoConvergence { restarts: left_res.restarts, best: vec![] })?;
    let split = split_collision(params)?;
    let shift = two_sided_shift(&st, &split, &right, &left);
    let rate = match conv {
        Conversion::Log => -shift.ln_1p(),
        Conversion::Linear => -shift,
    };
    let mu_num = rate / (k * k * dt);
    let (mu_hi, mu_lo) = mu_split(params);
    let spectrum = report(res, lattice.q, |l| conv.rate(l).re / dt);
    Ok(PipeResult { k, lambda0, shift, mu_num, mu: mu_hi, eps: ((mu_num - mu_hi) - mu_lo).abs(), spectrum })
}

/// Real eigenvector from a complex one belonging to a real eigenvalue.
fn real_vector(v: &[Complex64]) -> Vec<f64> {
    let big = v.iter().copied().fold(Complex64::new(0.0, 0.0), |a, b| if b.norm() > a.norm() { b } else { a });
    let phase = if big.norm() > 0.0 { big.conj() / big.norm() } else { Complex64::new(1.0, 0.0) };
    v.iter().map(|z| (z * phase).re).collect()
}

/// The operator transpose, for left eigenvectors.
pub struct Transposed<'a, 'b>(pub &'a Stepper<'b>);

impl LinearOperator for Transposed<'_, '_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply_transpose(x, y)
    }
}

/// w^T (A - I) v / w^T v with A applied in double-double arithmetic.
pub fn two_sided_shift(st: &Stepper, split: &[Vec<(f64, f64)>], v: &[f64], w: &[f64]) -> f64 {
    let (hi, lo) = st.apply_split(split, v);
    let (mut s, mut e) = (0.0, 0.0);
    for i in 0..v.len() {
        let (d, de) = two_sum(hi[i], -v[i]);
        let (p, pe) = two_prod(w[i], d);
        let (t, te) = two_sum(s, p);
        s = t;
        e += pe + te + w[i] * (de + lo[i]);
    }
    (s + e) / dot(w, v)
}

/// Symmetry class of a sampled field on a triangle lattice (by projection weight).
pub fn classify_field(lattice: &Lattice, rho: &[f64]) -> Result<Irrep> {
    let maps = triangle_symmetries(lattice)?;
    let q = lattice.q;
    let mut lift = vec![0.0; lattice.len() * q];
    for (x, r) in rho.iter().enumerate() {
        lift[x * q] = *r;
    }
    let proj = |irrep| {
        let p = Projected { op: &DenseOperator(DMatrix::zeros(0, 0)), maps: maps.clone(), irrep };
        norm(&p.project(&lift))
    };
    Ok(if proj(Irrep::Symmetric) >= proj(Irrep::Alternating) { Irrep::Symmetric } else { Irrep::Alternating })
}

/// Leading Dirichlet modes of a triangle lattice within one symmetry class.
///
/// Lambda_num = rate(lambda) / (mu dt), with rate = -ln(lambda) by default.
pub fn dirichlet_modes(
    lattice: &Lattice,
    params: &SchemeParams,
    nev: usize,
    irrep: Option<Irrep>,
    conv: Conversion,
) -> Result<SpectrumReport> {
    dirichlet_modes_opts(lattice, params, irrep, conv, &ArnoldiOptions::new(nev))
}

pub fn dirichlet_modes_opts(
    lattice: &Lattice,
    params: &SchemeParams,
    irrep: Option<Irrep>,
    conv: Conversion,
    opts: &ArnoldiOptions,
) -> Result<SpectrumReport> {
    let st = Stepper::new(lattice, params, BoundarySpec::homogeneous())?;
    let res = match irrep {
        Some(irrep) => {
            let maps = triangle_symmetries(lattice)?;
            let p = Projected { op: &st, maps, irrep };
            arnoldi(&p, opts)?
        }
        None => arnoldi(&st, opts)?,
    };
    let scale = mu(params) * params.dt();
    Ok(report(res, lattice.q, |l| conv.rate(l).re / scale))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_map() {
        let d: Vec<f64> = (0..60).map(|i| if i == 0 { 1.0 } else if i == 1 { 0.9 } else { 0.5 - 0.005 * i as f64 }).collect();
        let op = DenseOperator(DMatrix::from_diagonal(&nalgebra::DVector::from_vec(d)));
        let r = arnoldi(&op, &ArnoldiOptions { m: 20, ..ArnoldiOptions::new(4) }).unwrap();
        assert!((r.pairs[0].value.re - 1.0).abs() < 1e-12);
        assert!((r.pairs[1].value.re - 0.9).abs() < 1e-12);
        assert!((r.pairs[2].value.re - 0.49).abs() < 1e-12);
    }

    #[test]
    fn schur_swap_preserves_similarity() {
        let a = DMatrix::from_fn(6, 6, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0 + if i == j { i as f64 } else { 0.0 });
        let ac = dense::complexify(&a);
        let (mut q, mut t) = Schur::new(ac.clone()).unpack();
        for k in [0, 2, 4, 1, 3] {
            let (d0, d1) = (t[(k, k)], t[(k + 1, k + 1)]);
            swap_schur(&mut t, &mut q, k);
            assert!((t[(k, k)] - d1).norm() < 1e-12 && (t[(k + 1, k + 1)] - d0).norm() < 1e-12);
            assert!(t[(k + 1, k)].norm() < 1e-12);
        }
        let back = &q * &t * q.adjoint();
        assert!((back - ac).map(|z| z.norm()).max() < 1e-12);
    }

    #[test]
    fn wanted_basis_is_invariant() {
        let a = DMatrix::from_fn(8, 8, |i, j| (((i + 1) * (j + 2) * 37) % 11) as f64 / 11.0 - 0.5);
        let w = wanted_basis(&a, 3).unwrap();
        assert!(w.ncols() >= 3);
        let aw = &a * &w;
        let proj = &w * (w.transpose() * &aw);
        assert!((aw - proj).abs().max() < 1e-10);
        assert!((w.transpose() * &w - DMatrix::identity(w.ncols(), w.ncols())).abs().max() < 1e-12);
    }

    #[test]
    fn normalization() {
        let mut x = vec![0.2, -0.8, 0.4];
        normalize_mode(&mut x);
        assert_eq!(x, vec![-0.25, 1.0, -0.5]);
    }
}
