//! Structural invariants: lattices, moment matrices, the step operator and the eigensolver.

use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tri_lbm::analysis::param_set_for;
use tri_lbm::basis::{proposition1_residual, transition_matrices, PolynomialFamily};
use tri_lbm::harness::{build_triangle, ExperimentConfig, Scenario};
use tri_lbm::mesh::{
    build_d2t4_equilateral, build_d2t4_periodic, build_d2t7_periodic, build_d2t7_triangle, perturb, validate,
    WallPlacement,
};
use tri_lbm::spectral::{arnoldi, ArnoldiOptions, DenseOperator};
use tri_lbm::{harness, BoundarySpec, Lattice, LinearOperator, SchemeKind, Stepper};

fn all_lattices() -> Vec<(&'static str, Lattice)> {
    let d2t4 = build_d2t4_equilateral(8, 0.1).unwrap();
    vec![
        ("d2t7 triangle", build_d2t7_triangle(12, 0.1).unwrap()),
        ("d2t7 periodic", build_d2t7_periodic(8, 6, 0.1).unwrap()),
        ("d2t4 triangle", d2t4.clone()),
        ("d2t4 periodic", build_d2t4_periodic(6, 5, 0.1).unwrap()),
        ("d2t4 perturbed", perturb(&d2t4, 0.1, 42).unwrap()),
    ]
}

#[test]
fn lattices_validate() {
    for (name, l) in all_lattices() {
        let r = validate(&l);
        assert!(r.is_clean(), "{name}: {:?}", &r.violations[..r.violations.len().min(3)]);
        assert!(r.max_duality_residual < 1e-12, "{name}");
    }
    assert_eq!(build_d2t7_triangle(61, 1.0).unwrap().len(), 1891);
    assert_eq!(build_d2t7_triangle(10, 1.0).unwrap().len(), 55);
    assert_eq!(build_d2t4_equilateral(8, 1.0).unwrap().len(), 64);
    assert_eq!(build_d2t7_periodic(36, 52, 1.0).unwrap().len(), 1872);
}

#[test]
fn proposition_one_identity() {
    for (name, l) in all_lattices() {
        let mm = transition_matrices(&l, &PolynomialFamily::for_scheme(l.scheme)).unwrap();
        let r = proposition1_residual(&l, &mm);
        assert!(r <= 1e-10, "{name}: {r:e}");
    }
}

#[test]
fn moment_matrices_invert() {
    for (name, l) in all_lattices() {
        let mm = transition_matrices(&l, &PolynomialFamily::for_scheme(l.scheme)).unwrap();
        for cm in &mm.classes {
            let q = cm.m.nrows();
            let e = (&cm.m * &cm.m_inv - DMatrix::<f64>::identity(q, q)).amax();
            let et = (&cm.m_tilde * &cm.m_tilde_inv - DMatrix::<f64>::identity(q, q)).amax();
            assert!(e < 1e-12 && et < 1e-12, "{name}: {e:e} {et:e}");
        }
    }
}

fn periodic_stepper<'a>(l: &'a Lattice, set: &str) -> Stepper<'a> {
    let p = param_set_for(l.scheme, set).unwrap().params.with_dx(l.dx);
    Stepper::new(l, &p, BoundarySpec::Periodic).unwrap()
}

#[test]
fn mass_is_conserved_on_periodic_lattices() {
    for (l, set) in [(build_d2t7_periodic(12, 10, 0.1).unwrap(), "order4"), (build_d2t4_periodic(10, 8, 0.1).unwrap(), "order4")] {
        let st = periodic_stepper(&l, set);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = st.equilibrium_state(|_| 1.0);
        for v in s.f.iter_mut() {
            *v += 0.1 * rng.gen_range(-1.0..1.0);
        }
        let m0 = st.total_mass(&s);
        for _ in 0..10_000 {
            st.step(&mut s).unwrap();
        }
        let drift = (st.total_mass(&s) - m0).abs() / m0.abs();
        assert!(drift <= 1e-12, "{:?}: {drift:e}", l.scheme);
    }
}

#[test]
fn equilibrium_is_a_fixed_point() {
    for (_, l) in all_lattices().into_iter().filter(|(_, l)| l.wraps.is_some()) {
        let st = periodic_stepper(&l, "order2");
        let s0 = st.equilibrium_state(|_| 1.7);
        let mut s = s0.clone();
        for _ in 0..10 {
            st.step(&mut s).unwrap();
        }
        let d = s.f.iter().zip(&s0.f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 1e-13, "{:?}: {d:e}", l.scheme);
    }
    // constant Dirichlet data on a bounded domain
    for scheme in [SchemeKind::D2T7, SchemeKind::D2T4] {
        let l = build_triangle(scheme, 9, 1.0, WallPlacement::Edge).unwrap();
        let p = param_set_for(scheme, "order2").unwrap().params.with_dx(l.dx);
        let st = Stepper::new(&l, &p, BoundarySpec::dirichlet(|_, _| 0.4)).unwrap();
        let s0 = st.equilibrium_state(|_| 0.4);
        let mut s = s0.clone();
        st.step(&mut s).unwrap();
        let d = s.f.iter().zip(&s0.f).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d <= 1e-13, "{scheme}: {d:e}");
    }
}

#[test]
fn homogeneous_step_is_linear() {
    for scheme in [SchemeKind::D2T7, SchemeKind::D2T4] {
        let l = build_triangle(scheme, 11, 1.0, WallPlacement::Edge).unwrap();
        let p = param_set_for(scheme, "order4").unwrap().params.with_dx(l.dx);
        let st = Stepper::new(&l, &p, BoundarySpec::homogeneous()).unwrap();
        let n = st.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.37, -2.1);
        let z: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let (mut ax, mut ay, mut az) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        st.apply(&x, &mut ax);
        st.apply(&y, &mut ay);
        st.apply(&z, &mut az);
        let scale = az.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let d = (0..n).fold(0.0f64, |m, i| m.max((az[i] - a * ax[i] - b * ay[i]).abs()));
        assert!(d <= 1e-12 * scale, "{scheme}: {d:e}");
    }
}

#[test]
fn transpose_is_adjoint() {
    let l = build_triangle(SchemeKind::D2T4, 7, 1.0, WallPlacement::Edge).unwrap();
    let p = param_set_for(SchemeKind::D2T4, "order2").unwrap().params.with_dx(l.dx);
    let st = Stepper::new(&l, &p, BoundarySpec::homogeneous()).unwrap();
    let n = st.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (mut ax, mut aty) = (vec![0.0; n], vec![0.0; n]);
    st.apply_homogeneous(&x, &mut ax);
    st.apply_transpose(&y, &mut aty);
    let l1: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
    let l2: f64 = aty.iter().zip(&x).map(|(a, b)| a * b).sum();
    assert!((l1 - l2).abs() < 1e-11 * l1.abs().max(1.0));
}

#[test]
fn arnoldi_matches_dense_eigensolver() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = DMatrix::from_fn(50, 50, |_, _| rng.gen_range(-1.0..1.0));
    let mut dense: Vec<tri_lbm::Complex64> = a.complex_eigenvalues().iter().copied().collect();
    dense.sort_by(|x, y| y.norm().total_cmp(&x.norm()));
    let nev = 6;
    let mut opts = ArnoldiOptions::new(nev);
    opts.tol = 1e-12;
    let res = arnoldi(&DenseOperator(a), &opts).unwrap();
    assert!(res.pairs.len() >= nev);
    for pair in res.pairs.iter().take(nev) {
        let d = dense.iter().map(|z| (z - pair.value).norm()).fold(f64::INFINITY, f64::min);
        assert!(d <= 1e-9, "{} off by {d:e}", pair.value);
        assert!(pair.residual <= 1e-9);
    }
    // the same moduli as the leading dense eigenvalues
    let mut got: Vec<f64> = res.pairs.iter().take(nev).map(|p| p.value.norm()).collect();
    got.sort_by(|x, y| y.total_cmp(x));
    for (g, d) in got.iter().zip(&dense) {
        assert!((g - d.norm()).abs() <= 1e-9);
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

#[test]
fn results_are_bitwise_independent_of_worker_count() {
    let decay = || {
        let c = ExperimentConfig::new(Scenario::Decay, SchemeKind::D2T4, "order4").with_n_edge(24);
        let r = harness::run_mode_decay(&c).unwrap();
        (r.error.linf.to_bits(), r.fitted_rate.to_bits())
    };
    let pipe = || {
        let mut c = ExperimentConfig::new(Scenario::Pipe, SchemeKind::D2T7, "order4");
        c.domain.nx = 48;
        let r = harness::run_pipe(&c).unwrap();
        (r.result.mu_num.to_bits(), r.result.spectrum.eigenvalues.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect::<Vec<_>>())
    };
    let modes = || {
        let c = ExperimentConfig::new(Scenario::Modes, SchemeKind::D2T7, "order2").with_n_edge(24);
        let r = harness::run_dirichlet_modes(&c).unwrap();
        r.spectrum.derived.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(in_pool(1, decay), in_pool(4, decay));
    assert_eq!(in_pool(1, pipe), in_pool(3, pipe));
    assert_eq!(in_pool(2, modes), in_pool(5, modes));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn perturbed_meshes_keep_the_identity(amp in 0.0f64..0.25, seed in 0u64..1000, n in 3usize..9) {
        let l = perturb(&build_d2t4_equilateral(n, 1.0).unwrap(), amp, seed).unwrap();
        prop_assert!(validate(&l).is_clean());
        let mm = transition_matrices(&l, &PolynomialFamily::for_scheme(l.scheme)).unwrap();
        prop_assert!(proposition1_residual(&l, &mm) <= 1e-10);
    }

    #[test]
    fn step_conserves_mass(seed in 0u64..10_000, nx in 3usize..9, ny in 3usize..9, d2t4 in any::<bool>()) {
        let l = if d2t4 { build_d2t4_periodic(nx, ny, 0.2).unwrap() } else { build_d2t7_periodic(nx, ny, 0.2).unwrap() };
        let st = periodic_stepper(&l, "order2");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = st.equilibrium_state(|_| 0.0);
        for v in s.f.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let m0 = st.total_mass(&s);
        for _ in 0..20 {
            st.step(&mut s).unwrap();
        }
        prop_assert!((st.total_mass(&s) - m0).abs() <= 1e-12 * s.f.len() as f64);
    }

    #[test]
    fn step_commutes_with_scaling(c in -5.0f64..5.0, seed in 0u64..1000) {
        let l = build_d2t7_triangle(8, 0.1).unwrap();
        let p = param_set_for(SchemeKind::D2T7, "order6").unwrap().params.with_dx(l.dx);
        let st = Stepper::new(&l, &p, BoundarySpec::homogeneous()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..st.dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (mut ax, mut acx) = (vec![0.0; x.len()], vec![0.0; x.len()]);
        st.apply(&x, &mut ax);
        st.apply(&cx, &mut acx);
        for (a, b) in ax.iter().zip(&acx) {
            prop_assert!((c * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}
