//! Polynomial families and the moment matrices M, M~, P.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{Lattice, Link, SchemeKind};

/// Bivariate polynomials stored as (coefficient, power of X, power of Y).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PolynomialFamily {
    pub terms: Vec<Vec<(f64, u32, u32)>>,
}

impl PolynomialFamily {
    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, k: usize, p: [f64; 2]) -> f64 {
        self.terms[k]
            .iter()
            .map(|&(c, a, b)| c * p[0].powi(a as i32) * p[1].powi(b as i32))
            .sum()
    }

    pub fn eval_all(&self, p: [f64; 2]) -> Vec<f64> {
        (0..self.len()).map(|k| self.eval(k, p)).collect()
    }

    pub fn for_scheme(scheme: SchemeKind) -> Self {
        match scheme {
            SchemeKind::D2T7 => d2t7_family(),
            SchemeKind::D2T4 => d2t4_family(),
        }
    }
}

/// {1, X, Y, X^2+Y^2, (4/sqrt3) XY, 2(X^2-Y^2), 3Y-4Y^3}
pub fn d2t7_family() -> PolynomialFamily {
    PolynomialFamily {
        terms: vec![
            vec![(1.0, 0, 0)],
            vec![(1.0, 1, 0)],
            vec![(1.0, 0, 1)],
            vec![(1.0, 2, 0), (1.0, 0, 2)],
            vec![(4.0 / 3f64.sqrt(), 1, 1)],
            vec![(2.0, 2, 0), (-2.0, 0, 2)],
            vec![(3.0, 0, 1), (-4.0, 0, 3)],
        ],
    }
}

pub fn d2t4_family() -> PolynomialFamily {
    let mut f = d2t7_family();
    f.terms.truncate(4);
    f
}

/// M_kj = p_k(xi_j).
pub fn moment_matrix(family: &PolynomialFamily, velocities: &[[f64; 2]]) -> Result<DMatrix<f64>> {
    let q = family.len();
    if velocities.len() != q {
        return Err(Error::InvalidParameter(format!(
            "{} velocities for a family of {q} polynomials",
            velocities.len()
        )));
    }
    let m = DMatrix::from_fn(q, q, |k, j| family.eval(k, velocities[j]));
    if m.clone().lu().determinant().abs() < 1e-12 {
        return Err(Error::Singular { node: 0, reason: "moment matrix is singular (velocity orientation?)".into() });
    }
    Ok(m)
}

fn invert(m: &DMatrix<f64>, node: usize, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular { node, reason: format!("{what} is not invertible") })
}

fn condition(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &s in sv.iter() {
        lo = lo.min(s);
        hi = hi.max(s);
    }
    hi / lo
}

#[derive(Clone, Debug)]
pub struct ClassMatrices {
    pub m: DMatrix<f64>,
    pub m_tilde: DMatrix<f64>,
    pub m_inv: DMatrix<f64>,
    pub m_tilde_inv: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub condition: f64,
}

#[derive(Clone, Debug)]
pub struct MomentMatrices {
    pub family: PolynomialFamily,
    pub classes: Vec<ClassMatrices>,
    pub node_class: Vec<usize>,
}

impl MomentMatrices {
    pub fn q(&self) -> usize {
        self.family.len()
    }

    pub fn of(&self, x: usize) -> &ClassMatrices {
        &self.classes[self.node_class[x]]
    }
}

/// Build M, M~, their inverses and P(x)_{il} = (M~(x_i))^{-1}_{n_i(x), l}.
///
/// One set of matrices is stored per node class. Rows of P for cut links
/// fall back to M(x)^{-1}; a class is rejected if its nodes disagree.
pub fn transition_matrices(lattice: &Lattice, family: &PolynomialFamily) -> Result<MomentMatrices> {
    let q = lattice.q;
    if family.len() != q {
        return Err(Error::InvalidParameter(format!("family of {} for a lattice with q = {q}", family.len())));
    }
    let nc = lattice.n_classes();
    let mut rep: Vec<Option<usize>> = vec![None; nc];
    let mut fallback: Vec<Option<usize>> = vec![None; nc];
    for x in 0..lattice.len() {
        let c = lattice.node_class[x];
        fallback[c].get_or_insert(x);
        if rep[c].is_none() && !lattice.is_boundary_node(x) {
            rep[c] = Some(x);
        }
    }
    let reps: Vec<usize> = (0..nc)
        .map(|c| rep[c].or(fallback[c]).ok_or_else(|| Error::InvalidParameter(format!("class {c} is empty"))))
        .collect::<Result<_>>()?;

    let mut base = Vec::with_capacity(nc);
    for (c, &x) in reps.iter().enumerate() {
        let v = lattice.node_velocities(x);
        let m = moment_matrix(family, v).map_err(|_| Error::Singular { node: x, reason: format!("M of class {c}") })?;
        let neg: Vec<[f64; 2]> = v.iter().map(|p| [-p[0], -p[1]]).collect();
        let mt = DMatrix::from_fn(q, q, |k, j| family.eval(k, neg[j]));
        let m_inv = invert(&m, x, "M")?;
        let mt_inv = invert(&mt, x, "M~")?;
        let cond = condition(&m);
        base.push((m, mt, m_inv, mt_inv, cond));
    }

    let p_row = |x: usize, i: usize| -> Vec<f64> {
        match lattice.link(x, i) {
            Link::Node(y) => {
                let n = lattice.dual(x, i);
                let inv = &base[lattice.node_class[*y]].3;
                (0..q).map(|l| inv[(n, l)]).collect()
            }
            Link::Boundary(_) => {
                let inv = &base[lattice.node_class[x]].2;
                (0..q).map(|l| inv[(i, l)]).collect()
            }
        }
    };

    let mut classes = Vec::with_capacity(nc);
    for (c, &x) in reps.iter().enumerate() {
        let p = DMatrix::from_fn(q, q, |i, l| p_row(x, i)[l]);
        let (m, m_tilde, m_inv, m_tilde_inv, condition) = base[c].clone();
        classes.push(ClassMatrices { m, m_tilde, m_inv, m_tilde_inv, p, condition });
    }
    if nc < lattice.len() {
        for x in 0..lattice.len() {
            let c = lattice.node_class[x];
            for i in 0..q {
                if lattice.link(x, i).node().is_none() {
                    continue;
                }
                let row = p_row(x, i);
                for (l, v) in row.iter().enumerate() {
                    if (v - classes[c].p[(i, l)]).abs() > 1e-12 {
                        return Err(Error::InvalidParameter(format!(
                            "node {x} of class {c} needs its own transition matrix"
                        )));
                    }
                }
            }
        }
    }
    Ok(MomentMatrices { family: family.clone(), classes, node_class: lattice.node_class.clone() })
}

/// max over internal nodes and (k, l) of |sum_j M~(x)_kj P(x_j)_{n_j(x), l} - delta_kl|
pub fn proposition1_residual(lattice: &Lattice, mm: &MomentMatrices) -> f64 {
    let q = lattice.q;
    let mut worst = 0.0f64;
    for x in 0..lattice.len() {
        if lattice.is_boundary_node(x) {
            continue;
        }
        let mt = &mm.of(x).m_tilde;
        for k in 0..q {
            for l in 0..q {
                let mut s = 0.0;
                for j in 0..q {
                    let y = lattice.link(x, j).node().unwrap();
                    s += mt[(k, j)] * mm.of(y).p[(lattice.dual(x, j), l)];
                }
                let d = if k == l { 1.0 } else { 0.0 };
                worst = worst.max((s - d).abs());
            }
        }
    }
    worst
}

/// Lambda_{kp}^l = sum_j M_kj M_pj M^{-1}_jl
#[derive(Clone, Debug)]
pub struct LambdaTensor {
    pub q: usize,
    pub data: Vec<f64>,
}

impl LambdaTensor {
    pub fn get(&self, k: usize, p: usize, l: usize) -> f64 {
        self.data[(k * self.q + p) * self.q + l]
    }
}

pub fn lambda_tensor(m: &DMatrix<f64>) -> Result<LambdaTensor> {
    let q = m.nrows();
    let inv = invert(m, 0, "M")?;
    let mut data = vec![0.0; q * q * q];
    for k in 0..q {
        for p in 0..q {
            for l in 0..q {
                data[(k * q + p) * q + l] = (0..q).map(|j| m[(k, j)] * m[(p, j)] * inv[(j, l)]).sum();
            }
        }
    }
    Ok(LambdaTensor { q, data })
}
