//! Equivalent-equation coefficients, the built-in parameter sets and the
//! one-point (plane wave) dispersion analysis.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{d2t4_family, d2t7_family, transition_matrices};
use crate::dense;
use crate::error::{Error, Result};
use crate::mesh::{build_d2t4_periodic, build_d2t7_periodic, Lattice, SchemeKind};
use crate::mp::{CMat, Cplx, Real};
use crate::scheme::{equilibrium_moments, Kernel, SchemeParams};

/// Coefficients below this magnitude count as zero when classifying orders.
pub const ZERO_COEF: f64 = 1e-12;

/// sigma = 1/s - 1/2
pub fn henon_sigma(s: f64) -> Result<f64> {
    if !(s > 0.0 && s < 2.0) {
        return Err(Error::InvalidParameter(format!("relaxation rate {s} outside (0, 2)")));
    }
    Ok(1.0 / s - 0.5)
}

fn sigma(s: f64) -> f64 {
    1.0 / s - 0.5
}

pub fn mu_d2t7(zeta: f64, a3: f64, s1: f64) -> f64 {
    0.5 * zeta * a3 * sigma(s1)
}

pub fn theta_d2t7(zeta: f64, a3: f64, s1: f64, s3: f64, s4: f64) -> f64 {
    let (g1, g3, g4) = (sigma(s1), sigma(s3), sigma(s4));
    -g1 * a3 * zeta * ((1.0 - a3) * (1.0 - 4.0 * g1 * g3) - 2.0 * g1 * g4 + 4.0 * a3 * g1 * g1) / 16.0
}

pub fn mu_d2t4(zeta: f64, a3: f64, s1: f64) -> f64 {
    zeta * a3 * sigma(s1)
}

/// Coefficient of dx (d_x^2 - 3 d_y^2) d_x rho in the D2T4 equivalent equation.
pub fn d2t4_first_order_coeff(zeta: f64, a3: f64, s1: f64) -> f64 {
    let g1 = sigma(s1);
    a3 * zeta / 24.0 * (12.0 * g1 * g1 - 1.0)
}

/// Diffusivity predicted for a parameter set.
pub fn mu(p: &SchemeParams) -> f64 {
    match p.scheme {
        SchemeKind::D2T7 => mu_d2t7(p.zeta, p.a3, p.s[1]),
        SchemeKind::D2T4 => mu_d2t4(p.zeta, p.a3, p.s[1]),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ParamSet {
    pub name: &'static str,
    pub params: SchemeParams,
    /// Formal order the set was designed for.
    pub claimed_order: u32,
}

fn d2t7_set(name: &'static str, s3: f64, s4: f64, s6: f64, order: u32) -> ParamSet {
    let s1 = 0.8;
    ParamSet {
        name,
        params: SchemeParams {
            scheme: SchemeKind::D2T7,
            zeta: 1.0,
            dx: 1.0,
            a3: 0.25,
            u: 0.0,
            v: 0.0,
            s: vec![0.0, s1, s1, s3, s4, s4, s6],
        },
        claimed_order: order,
    }
}

fn d2t4_set(name: &'static str, a3: f64, s1: f64, s3: f64, order: u32) -> ParamSet {
    ParamSet {
        name,
        params: SchemeParams {
            scheme: SchemeKind::D2T4,
            zeta: 1.0,
            dx: 1.0,
            a3,
            u: 0.0,
            v: 0.0,
            s: vec![0.0, s1, s1, s3],
        },
        claimed_order: order,
    }
}

/// The published parameter sets, in lattice units (dx = zeta = 1).
pub fn builtin_param_sets() -> Vec<ParamSet> {
    vec![
        d2t7_set("d2t7-order2", 1.428571428571428, 0.481927710843373, 0.476190476190476, 2),
        d2t7_set("d2t7-order4", 1.428571428571428, 0.930232558139534, 0.526315789473684, 4),
        d2t7_set("d2t7-order6", 1.086117521785847, 1.344205296559553, 0.647305233773416, 6),
        d2t4_set("d2t4-order1", 0.216506350946109, 1.2, 0.750796078775233, 1),
        d2t4_set("d2t4-order2", 0.25, 1.267949192431122, 0.422649730810374, 2),
        d2t4_set("d2t4-order3", 0.25, 1.267949192431122, 0.758775495823486, 3),
        d2t4_set("d2t4-order4", 0.25, 1.267949192431122, 0.732050807568877, 4),
    ]
}

/// Look up a set by full name ("d2t7-order4") or by scheme-less suffix when unique.
pub fn param_set(name: &str) -> Result<ParamSet> {
    let name = name.to_ascii_lowercase();
    builtin_param_sets()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| Error::Config(format!("unknown parameter set '{name}'")))
}

pub fn param_set_for(scheme: SchemeKind, name: &str) -> Result<ParamSet> {
    let full = if name.starts_with("d2t") { name.to_string() } else { format!("{scheme}-{name}") };
    let p = param_set(&full)?;
    if p.params.scheme != scheme {
        return Err(Error::Config(format!("set '{full}' is not a {scheme} set")));
    }
    Ok(p)
}

#[derive(Clone, Debug, Serialize)]
pub struct OrderReport {
    pub scheme: SchemeKind,
    pub param_set: String,
    pub mu: f64,
    /// Theta for D2T7, the first-order coefficient for D2T4.
    pub theta: f64,
    pub formal_order: u32,
}

/// Classify a set from the coefficients that are available in closed form.
///
/// Higher coefficients (sixth order for D2T7, second and third order for
/// D2T4) have no closed form here; the design order is accepted when the
/// computable coefficients are consistent with it.
pub fn order_report(set: &ParamSet) -> Result<OrderReport> {
    let p = &set.params;
    let (theta, low, next) = match p.scheme {
        SchemeKind::D2T7 => (theta_d2t7(p.zeta, p.a3, p.s[1], p.s[3], p.s[4]), 2, 4),
        SchemeKind::D2T4 => (d2t4_first_order_coeff(p.zeta, p.a3, p.s[1]), 1, 2),
    };
    let formal_order = if theta.abs() >= ZERO_COEF {
        low
    } else {
        if set.claimed_order < next {
            return Err(Error::InvalidParameter(format!(
                "{}: coefficient vanishes but the set claims order {}",
                set.name, set.claimed_order
            )));
        }
        set.claimed_order
    };
    if theta.abs() >= ZERO_COEF && set.claimed_order != low {
        return Err(Error::InvalidParameter(format!(
            "{}: nonzero coefficient contradicts claimed order {}",
            set.name, set.claimed_order
        )));
    }
    Ok(OrderReport { scheme: p.scheme, param_set: set.name.into(), mu: mu(p), theta, formal_order })
}

/// How an eigenvalue is turned into a diffusivity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Conversion {
    /// -ln(lambda) / (k^2 dt)
    #[default]
    Log,
    /// (1 - lambda) / (k^2 dt)
    Linear,
}

impl std::str::FromStr for Conversion {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log" => Ok(Conversion::Log),
            "linear" => Ok(Conversion::Linear),
            other => Err(Error::Config(format!("unknown conversion '{other}'"))),
        }
    }
}

impl Conversion {
    /// Decay rate per unit time scaled by dt: -ln(lambda) or 1 - lambda.
    pub fn rate(self, lambda: Complex64) -> Complex64 {
        match self {
            Conversion::Log => -lambda.ln(),
            Conversion::Linear => Complex64::new(1.0, 0.0) - lambda,
        }
    }

    fn rate_mp(self, lambda: &Cplx) -> Cplx {
        match self {
            Conversion::Log => {
                let l = lambda.ln_right_half();
                Cplx::new(-l.re, -l.im)
            }
            Conversion::Linear => &Cplx::from_f64(1.0, 0.0) - lambda,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersionPoint {
    pub k: f64,
    /// Direction of the wave vector in degrees.
    pub theta_k: f64,
    pub lambda_phys: Complex64,
    pub mu_num: f64,
    pub mu_num_im: f64,
    pub eps: f64,
}

/// Unit cell of the scheme's periodic lattice and its collision kernel.
struct UnitCell {
    lattice: Lattice,
    kernel: Kernel,
    flights: usize,
}

fn unit_cell(p: &SchemeParams) -> Result<UnitCell> {
    let lattice = match p.scheme {
        SchemeKind::D2T7 => build_d2t7_periodic(1, 1, p.dx)?,
        SchemeKind::D2T4 => build_d2t4_periodic(1, 1, p.dx)?,
    };
    let family = match p.scheme {
        SchemeKind::D2T7 => d2t7_family(),
        SchemeKind::D2T4 => d2t4_family(),
    };
    let mm = transition_matrices(&lattice, &family)?;
    let kernel = Kernel::new(&mm, p);
    let flights = if p.scheme == SchemeKind::D2T4 { 2 } else { 1 };
    Ok(UnitCell { lattice, kernel, flights })
}

/// One-flight Bloch matrix: f~_j(x) <- exp(i k.xi_j(x) dx) f*_{n_j(x)}(x_j).
fn bloch_matrix(cell: &UnitCell, dx: f64, kv: [f64; 2]) -> DMatrix<Complex64> {
    let l = &cell.lattice;
    let q = l.q;
    let n = l.len() * q;
    let mut a = DMatrix::<Complex64>::zeros(n, n);
    for x in 0..l.len() {
        for j in 0..q {
            let y = l.link(x, j).node().expect("unit cell is periodic");
            let xi = l.velocity(x, j);
            let ph = Complex64::from_polar(1.0, (kv[0] * xi[0] + kv[1] * xi[1]) * dx);
            let c = &cell.kernel.collide[cell.kernel.node_class[y]];
            let r = l.dual(x, j);
            for ll in 0..q {
                a[(x * q + j, y * q + ll)] = ph * c[r * q + ll];
            }
        }
    }
    a
}

fn step_matrix(cell: &UnitCell, dx: f64, kv: [f64; 2]) -> DMatrix<Complex64> {
    let a = bloch_matrix(cell, dx, kv);
    if cell.flights == 2 {
        &a * &a
    } else {
        a
    }
}

fn wavevector(k: f64, theta_deg: f64) -> [f64; 2] {
    let t = theta_deg.to_radians();
    [k * t.cos(), k * t.sin()]
}

/// All eigenvalues of the one-step amplification matrix at wave vector (k, theta).
///
/// D2T7 gives q values; D2T4 uses a LEFT+RIGHT cell and two flights per
/// step, giving 2q values.
pub fn one_point_spectrum(p: &SchemeParams, k: f64, theta_deg: f64) -> Result<Vec<Complex64>> {
    p.validate()?;
    let cell = unit_cell(p)?;
    dense::eigvals(&step_matrix(&cell, p.dx, wavevector(k, theta_deg)))
}

/// Physical eigenvalue: the one closest to `guess`, rejected when ambiguous.
fn pick_branch(vals: &[Complex64], guess: Complex64, k: f64) -> Result<Complex64> {
    let mut d: Vec<(f64, Complex64)> = vals.iter().map(|&v| ((v - guess).norm(), v)).collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = d[0];
    if let Some(s) = d.get(1) {
        if s.0 < 4.0 * best.0 + 1e-12 {
            return Err(Error::Branch { k, reason: format!("eigenvalues {} and {} are both near {}", best.1, s.1, guess) });
        }
    }
    Ok(best.1)
}

/// Multiprecision velocities and per-node collision matrices of the unit cell.
fn mp_unit_kernel(p: &SchemeParams) -> (UnitCell, Vec<(Real, Real)>, Vec<CMat>) {
    let three = Real::from_f64(3.0);
    let sq3 = three.sqrt();
    let half = Real::from_f64(0.5);
    let h3 = &half * &sq3;
    let to_mp = |v: f64| -> Real {
        if (v.abs() - 0.866_025_403_784_438_6).abs() < 1e-15 {
            if v < 0.0 {
                Real::zero() - h3.clone()
            } else {
                h3.clone()
            }
        } else {
            Real::from_f64(v)
        }
    };
    let q = p.q();
    let four_over_sq3 = &Real::from_f64(4.0) / &sq3;
    let poly = |kk: usize, x: &Real, y: &Real| -> Real {
        match kk {
            0 => Real::one(),
            1 => x.clone(),
            2 => y.clone(),
            3 => x * x + y * y,
            4 => &four_over_sq3 * &(x * y),
            5 => Real::from_f64(2.0) * (x * x - y * y),
            _ => Real::from_f64(3.0) * y.clone() - Real::from_f64(4.0) * (&(y * y) * y),
        }
    };
    let cell = unit_cell(p).expect("validated parameters");
    let l = &cell.lattice;
    let vel: Vec<(Real, Real)> = l.velocities.iter().map(|v| (to_mp(v[0]), to_mp(v[1]))).collect();
    // per class: M~, M~^{-1} and P = rows of M~^{-1} of the neighbor class
    let moment = |x: usize, sign: f64| -> CMat {
        let mut m = CMat::zeros(q);
        for kk in 0..q {
            for j in 0..q {
                let (vx, vy) = &vel[x * q + j];
                let s = Real::from_f64(sign);
                m.set(kk, j, Cplx::real(poly(kk, &(&s * vx), &(&s * vy))));
            }
        }
        m
    };
    let nodes = l.len();
    let mt: Vec<CMat> = (0..nodes).map(|x| moment(x, -1.0)).collect();
    let mt_inv: Vec<CMat> = mt.iter().map(|m| m.inverse().expect("invertible moment matrix")).collect();
    let e = equilibrium_moments(1.0, p, q);
    // collision matrix of node y: P(y) R M~(y)
    let collide: Vec<CMat> = (0..nodes)
        .map(|y| {
            let mut pm = CMat::zeros(q);
            for i in 0..q {
                let z = l.link(y, i).node().unwrap();
                let r = l.dual(y, i);
                for ll in 0..q {
                    pm.set(i, ll, mt_inv[z].at(r, ll).clone());
                }
            }
            let mut rm = CMat::zeros(q);
            rm.set(0, 0, Cplx::from_f64(1.0, 0.0));
            for kk in 1..q {
                rm.set(kk, kk, Cplx::real(Real::one() - Real::from_f64(p.s[kk])));
                rm.set(kk, 0, Cplx::real(&Real::from_f64(p.s[kk]) * &Real::from_f64(e[kk])));
            }
            pm.matmul(&rm).matmul(&mt[y])
        })
        .collect();
    (cell, vel, collide)
}

/// Collision matrices of the periodic lattice classes in extended precision,
/// row-major, each entry split as hi + lo.
pub fn split_collision(p: &SchemeParams) -> Result<Vec<Vec<(f64, f64)>>> {
    p.validate()?;
    let (_, _, collide) = mp_unit_kernel(p);
    Ok(collide
        .iter()
        .map(|c| {
            c.a.iter()
                .map(|z| {
                    let hi = z.re.to_f64();
                    (hi, (z.re.clone() - Real::from_f64(hi)).to_f64())
                })
                .collect()
        })
        .collect())
}

/// Multiprecision one-step matrix of the unit cell.
fn mp_step_matrix(p: &SchemeParams, k: f64, theta_deg: f64) -> CMat {
    let (cell, vel, collide) = mp_unit_kernel(p);
    let l = &cell.lattice;
    let q = p.q();
    let nodes = l.len();
    let dx = Real::from_f64(p.dx);
    let pi = Real::from_f64(4.0) * Real::one().atan();
    let th = &(&Real::from_f64(theta_deg) * &pi) / &Real::from_f64(180.0);
    let (kc, ks) = (&Real::from_f64(k) * &th.cos(), &Real::from_f64(k) * &th.sin());
    let n = nodes * q;
    let mut a = CMat::zeros(n);
    for x in 0..nodes {
        for j in 0..q {
            let y = l.link(x, j).node().unwrap();
            let (vx, vy) = &vel[x * q + j];
            let phase = &(&(&kc * vx) + &(&ks * vy)) * &dx;
            let ph = Cplx::cis(&phase);
            let r = l.dual(x, j);
            for ll in 0..q {
                a.set(x * q + j, y * q + ll, &ph * collide[y].at(r, ll));
            }
        }
    }
    if cell.flights == 1 {
        return a;
    }
    a.matmul(&a)
}

fn mu_mp(p: &SchemeParams) -> Real {
    let s1 = Real::from_f64(p.s[1]);
    let sig = &(&Real::one() / &s1) - &Real::from_f64(0.5);
    let base = &(&Real::from_f64(p.zeta) * &Real::from_f64(p.a3)) * &sig;
    match p.scheme {
        SchemeKind::D2T7 => &Real::from_f64(0.5) * &base,
        SchemeKind::D2T4 => base,
    }
}

/// Predicted diffusivity in extended precision, split as hi + lo.
pub fn mu_split(p: &SchemeParams) -> (f64, f64) {
    let m = mu_mp(p);
    let hi = m.to_f64();
    (hi, (m - Real::from_f64(hi)).to_f64())
}

/// Polish an f64 eigenvalue and derive mu_num and eps in extended precision.
fn refine(p: &SchemeParams, k: f64, theta: f64, seed: Complex64, conv: Conversion) -> Result<DispersionPoint> {
    let a = mp_step_matrix(p, k, theta);
    let lam = a
        .polish_eigenvalue(seed)
        .ok_or_else(|| Error::Branch { k, reason: "Newton polish hit a singular shift".into() })?;
    let scale = &(&Real::from_f64(k) * &Real::from_f64(k)) * &Real::from_f64(p.dt());
    let rate = conv.rate_mp(&lam);
    let mnum = Cplx::new(&rate.re / &scale, &rate.im / &scale);
    let diff = Cplx::new(&mnum.re - &mu_mp(p), mnum.im.clone());
    Ok(DispersionPoint {
        k,
        theta_k: theta,
        lambda_phys: lam.to_c64(),
        mu_num: mnum.re.to_f64(),
        mu_num_im: mnum.im.to_f64(),
        eps: diff.abs().to_f64(),
    })
}

/// Dispersion over a k grid and a set of directions.
///
/// For each direction the physical branch is followed by continuation in k
/// from k = 0, then each point is polished in extended precision.
pub fn dispersion(p: &SchemeParams, ks: &[f64], thetas: &[f64], conv: Conversion) -> Result<Vec<DispersionPoint>> {
    p.validate()?;
    if ks.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::InvalidParameter("wave numbers must be positive".into()));
    }
    let cell = unit_cell(p)?;
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by(|&a, &b| ks[a].total_cmp(&ks[b]));
    let mu0 = mu(p);
    let mut seeds = Vec::with_capacity(ks.len() * thetas.len());
    for &th in thetas {
        let mut prev: Option<(f64, Complex64)> = None;
        for &i in &order {
            let k = ks[i];
            let vals = dense::eigvals(&step_matrix(&cell, p.dx, wavevector(k, th)))?;
            let guess = match prev {
                None => Complex64::new((-mu0 * k * k * p.dt()).exp(), 0.0),
                Some((kp, lp)) => {
                    // lambda ~ exp(-c k^2): rescale the previous exponent
                    let c = -lp.ln() / (kp * kp);
                    (-c * k * k).exp()
                }
            };
            let lam = pick_branch(&vals, guess, k)?;
            prev = Some((k, lam));
            seeds.push((i, th, lam));
        }
    }
    let mut pts: Vec<(usize, DispersionPoint)> = seeds
        .par_iter()
        .map(|&(i, th, lam)| refine(p, ks[i], th, lam, conv).map(|d| (i, d)))
        .collect::<Result<_>>()?;
    // theta-major, k in input order
    pts.sort_by(|a, b| a.1.theta_k.total_cmp(&b.1.theta_k).then(a.0.cmp(&b.0)));
    Ok(pts.into_iter().map(|e| e.1).collect())
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Default direction grid: 0 to 90 degrees by 15.
pub fn default_thetas() -> Vec<f64> {
    (0..7).map(|i| 15.0 * i as f64).collect()
}

/// Least-squares slope of log(err) against log(h).
pub fn fit_order(points: &[(f64, f64)], min_ratio: f64) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidParameter(format!("{} points; at least 3 needed", points.len())));
    }
    let (lo, hi) = points.iter().fold((f64::INFINITY, 0.0f64), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if !(lo > 0.0) || hi / lo < min_ratio * (1.0 - 1e-12) {
        return Err(Error::InvalidParameter(format!("abscissae span a ratio of {} (< {min_ratio})", hi / lo)));
    }
    if points.iter().any(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::InvalidParameter("errors must be positive and finite".into()));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Slope over at least three points spanning a decade.
pub fn measured_order(points: &[(f64, f64)]) -> Result<f64> {
    fit_order(points, 10.0)
}

/// Slope of the worst-over-direction error curve eps(k).
pub fn dispersion_order(points: &[DispersionPoint]) -> Result<f64> {
    let mut ks: Vec<f64> = points.iter().map(|d| d.k).collect();
    ks.sort_by(f64::total_cmp);
    ks.dedup();
    let worst: Vec<(f64, f64)> = ks
        .iter()
        .map(|&k| (k, points.iter().filter(|d| d.k == k).map(|d| d.eps).fold(0.0, f64::max)))
        .collect();
    measured_order(&worst)
}

/// max - min over directions of mu_num at wave number k.
pub fn anisotropy(p: &SchemeParams, k: f64, thetas: &[f64], conv: Conversion) -> Result<f64> {
    let pts = dispersion(p, &[k], thetas, conv)?;
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), d| (a.min(d.mu_num), b.max(d.mu_num)));
    Ok(hi - lo)
}

/// (1 - lambda(k)) / k^2 at a small k: the k^2 coefficient of the dispersion.
pub fn k2_coefficient(p: &SchemeParams, theta: f64) -> Result<f64> {
    let k = 1e-5;
    let pts = dispersion(p, &[k], &[theta], Conversion::Linear)?;
    Ok(pts[0].mu_num * p.dt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_examples() {
        assert_eq!(henon_sigma(1.0).unwrap(), 0.5);
        assert!((henon_sigma(0.8).unwrap() - 0.75).abs() < 1e-15);
        assert!((henon_sigma(1.267949192431122).unwrap() - 1.0 / 12f64.sqrt()).abs() < 1e-14);
        assert!(henon_sigma(2.0).is_err());
        assert!(henon_sigma(0.0).is_err());
    }

    #[test]
    fn mu_examples() {
        assert!((mu_d2t7(1.0, 0.25, 0.8) - 0.09375).abs() < 1e-15);
        assert_eq!(mu_d2t7(1.0, 0.0, 0.8), 0.0);
        assert!((mu_d2t7(2.0, 0.25, 0.8) - 0.1875).abs() < 1e-15);
        assert!((mu_d2t4(1.0, 0.216506350946109, 1.2) - 0.0721687836487032).abs() < 1e-13);
        assert!(mu_d2t4(1.0, 0.25, 2.0 - 1e-12) < 1e-12);
    }

    #[test]
    fn theta_examples() {
        assert!(theta_d2t7(1.0, 0.25, 0.8, 1.428571428571428, 0.930232558139534).abs() < 1e-12);
        assert!((theta_d2t7(1.0, 0.25, 0.8, 1.428571428571428, 0.481927710843373) - 0.017578125).abs() < 1e-12);
        assert_eq!(theta_d2t7(1.0, 0.0, 0.8, 1.4, 0.9), 0.0);
        let t1 = theta_d2t7(1.0, 0.25, 0.8, 1.3, 0.7);
        let t2 = theta_d2t7(2.5, 0.25, 0.8, 1.3, 0.7);
        assert!((t2 - 2.5 * t1).abs() < 1e-15);
    }

    #[test]
    fn first_order_coefficient() {
        assert!(d2t4_first_order_coeff(1.0, 0.25, 1.267949192431122).abs() < 1e-14);
        let a3 = 0.216506350946109;
        let expect = a3 / 24.0 * (12.0 / 9.0 - 1.0);
        assert!((d2t4_first_order_coeff(1.0, a3, 1.2) - expect).abs() < 1e-15);
        assert!((expect - 0.00300703).abs() < 1e-8);
    }

    #[test]
    fn catalog() {
        let sets = builtin_param_sets();
        assert_eq!(sets.len(), 7);
        let s6 = param_set("d2t7-order6").unwrap().params;
        assert_eq!(s6.s[3], 1.086117521785847);
        assert_eq!(s6.s[4], 1.344205296559553);
        assert_eq!(s6.s[5], 1.344205296559553);
        assert_eq!(s6.s[6], 0.647305233773416);
        let s4 = param_set("d2t4-order4").unwrap().params;
        assert!((s4.s[3] - (3f64.sqrt() - 1.0)).abs() < 1e-15);
        for s in &sets {
            s.params.validate().unwrap();
            let r = order_report(s).unwrap();
            assert_eq!(r.formal_order, s.claimed_order, "{}", s.name);
        }
        assert_eq!(param_set_for(SchemeKind::D2T7, "order4").unwrap().name, "d2t7-order4");
        assert!(param_set_for(SchemeKind::D2T4, "d2t7-order4").is_err());
    }

    #[test]
    fn k0_spectrum() {
        let p = param_set("d2t7-order4").unwrap().params;
        let mut vals: Vec<f64> = one_point_spectrum(&p, 0.0, 0.0).unwrap().iter().map(|z| z.re).collect();
        let mut want: Vec<f64> = (0..7).map(|k| if k == 0 { 1.0 } else { 1.0 - p.s[k] }).collect();
        vals.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (a, b) in vals.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12, "{vals:?} {want:?}");
        }
    }

    #[test]
    fn small_k_limit() {
        let p = param_set("d2t7-order2").unwrap().params;
        let pts = dispersion(&p, &[1e-3, 1e-2], &[0.0, 30.0], Conversion::Log).unwrap();
        for d in &pts {
            assert!((d.mu_num - 0.09375).abs() < 1e-3);
        }
    }

    #[test]
    fn fitted_slopes() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0, 16.0].iter().map(|&h| (h, 0.3 * h * h * h)).collect();
        assert!((measured_order(&pts).unwrap() - 3.0).abs() < 1e-10);
        let flat: Vec<(f64, f64)> = [1.0, 3.0, 10.0].iter().map(|&h| (h, 2.0)).collect();
        assert!(measured_order(&flat).unwrap().abs() < 1e-12);
        assert!(measured_order(&[(1.0, 1.0), (2.0, 4.0), (3.0, 9.0)]).is_err());
        assert!(measured_order(&[(1.0, 1.0), (10.0, 4.0)]).is_err());
    }
}
