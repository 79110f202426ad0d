use nlad_core::adhesion::{adhesion_via_potential, apply_adhesion, build_kernel, AdhesionForce, PotentialGradient};
use nlad_core::fields::{BoundaryMode, BoxDomain, ScalarField, SymTensorField};
use nlad_core::fractal::{box_count, build_cutoff, dim_condition, CompactSet};
use nlad_core::linalg::SymMat;
use nlad_core::num::unit_ball_volume;
use nlad_core::solver::{rhs, AdvectionScheme, SolverConfig, State};
use nlad_core::tensor::{check_regularization, eps_limit, evaluate, regularize, FacePartition, Mollifier, TensorSpec};
use proptest::prelude::*;

fn force() -> impl Strategy<Value = AdhesionForce<f64>> {
    prop_oneof![
        (0.0..3.0f64).prop_map(|f0| AdhesionForce::Constant { f0 }),
        (0.0..3.0f64).prop_map(|f0| AdhesionForce::Linear { f0 }),
        (0.0..3.0f64).prop_map(|f0| AdhesionForce::Hat { f0 }),
    ]
}

fn field(dom: &BoxDomain<f64>, seed: u64) -> ScalarField<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
    ScalarField::new(dom.clone(), (0..dom.len()).map(|_| rng.gen_range(0.0..2.0)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adhesion_is_bounded_by_mass(f in force(), seed in any::<u64>(), n in 6usize..10, periodic in any::<bool>()) {
        let mode = if periodic { BoundaryMode::Periodic } else { BoundaryMode::NoFlux };
        let dom = BoxDomain::cube(3, 2.0, n, mode).unwrap();
        let c = field(&dom, seed);
        let a = apply_adhesion(&build_kernel(f, &dom).unwrap(), &c).unwrap();
        let bound = f.max_value() / unit_ball_volume::<f64>(3) * c.lp_norm(1.0).unwrap();
        prop_assert!(a.max_norm() <= bound * (1.0 + 1e-12));
    }

    #[test]
    fn reflection_even_data_gives_odd_pull(f in force(), seed in any::<u64>(), axis in 0usize..3) {
        let dom = BoxDomain::cube(3, 2.0, 8, BoundaryMode::Periodic).unwrap();
        let raw = field(&dom, seed);
        let mirror = |cell: usize| {
            let mut idx = [0usize; 3];
            dom.multi_index(cell, &mut idx);
            idx[axis] = 7 - idx[axis];
            dom.flat_index(&idx)
        };
        let even: Vec<f64> = (0..dom.len()).map(|i| 0.5 * (raw.values()[i] + raw.values()[mirror(i)])).collect();
        let c = ScalarField::new(dom.clone(), even).unwrap();
        let a = apply_adhesion(&build_kernel(f, &dom).unwrap(), &c).unwrap();
        for i in 0..dom.len() {
            let (p, q) = (a.at(i), a.at(mirror(i)));
            for k in 0..3 {
                let sign = if k == axis { -1.0 } else { 1.0 };
                prop_assert!((p[k] - sign * q[k]).abs() <= 1e-12 * (1.0 + p[k].abs()));
            }
        }
    }

    #[test]
    fn kernel_and_potential_routes_agree(f in force(), seed in any::<u64>(), periodic in any::<bool>()) {
        let mode = if periodic { BoundaryMode::Periodic } else { BoundaryMode::NoFlux };
        let dom = BoxDomain::new(vec![1.5, 2.0, 1.0], vec![6, 8, 5], mode).unwrap();
        let c = field(&dom, seed);
        let a = apply_adhesion(&build_kernel(f, &dom).unwrap(), &c).unwrap();
        let b = adhesion_via_potential(&PotentialGradient::new(f, 3), &c).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-12 * c.max_abs().max(1.0));
    }

    #[test]
    fn transport_conserves_mass(f in force(), seed in any::<u64>(), upwind in any::<bool>(), periodic in any::<bool>()) {
        let mode = if periodic { BoundaryMode::Periodic } else { BoundaryMode::NoFlux };
        let dom = BoxDomain::new(vec![2.0, 1.5, 2.5], vec![8, 6, 10], mode).unwrap();
        let d = SymTensorField::from_fn(&dom, |x: &[f64]| {
            SymMat::from_packed(3, vec![1.0 + x[0], 0.2 * x[1], 0.0, 1.0 + x[2] * x[2], 0.1, 0.5])
        }).unwrap();
        let mut cfg = SolverConfig::new(0.0, 0.0, 2.0, 1.0);
        cfg.advection = if upwind { AdvectionScheme::Upwind } else { AdvectionScheme::Centered };
        let c = field(&dom, seed);
        let out = rhs(&State { c, t: 0.0 }, &d, &build_kernel(f, &dom).unwrap(), &cfg).unwrap();
        let scale = out.values().iter().map(|v| v.abs()).sum::<f64>() * dom.cell_volume();
        prop_assert!(out.integrate().abs() <= 1e-13 * scale.max(1.0));
    }

    #[test]
    fn regularization_guarantees(px in 0.6..1.4f64, py in 0.6..1.4f64, pz in 0.6..1.4f64, frac in 0.05..0.95f64, product in any::<bool>()) {
        let dom = BoxDomain::cube(3, 2.0, 10, BoundaryMode::NoFlux).unwrap();
        let p = vec![px, py, pz];
        let spec = if product {
            TensorSpec::anisotropic_product(vec![p], SymMat::from_packed(3, vec![1.0, 0.2, 0.1, 0.9, 0.0, 1.1])).unwrap()
        } else {
            TensorSpec::scalar_isotropic(vec![p]).unwrap()
        };
        let eps = frac * eps_limit(&spec, &dom).unwrap();
        let de = regularize(&spec, &dom, eps).unwrap();
        let rep = check_regularization(&evaluate(&spec, &dom).unwrap(), &de, eps).unwrap();
        prop_assert!(rep.bound_ok && rep.elliptic_ok, "{:?}", rep);
    }

    #[test]
    fn partition_of_unity(x in prop::collection::vec(0.0..3.0f64, 3), margin in 0.2..1.5f64) {
        let dom = BoxDomain::cube(3, 3.0, 6, BoundaryMode::NoFlux).unwrap();
        let part = FacePartition::new(&dom, margin).unwrap();
        let mut sum = 0.0;
        for s in 0..part.pieces() {
            let (w, _) = part.piece(s, &x);
            prop_assert!((0.0..=1.0).contains(&w));
            sum += w;
        }
        prop_assert!((sum - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn mollifier_has_unit_mass(eps in 0.005..0.2f64, spacing_frac in 0.1..0.5f64) {
        let m = Mollifier::with_spacing(3, eps, eps * spacing_frac);
        let total: f64 = m.weights().iter().sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(m.weights().iter().all(|&w| w > 0.0));
    }

    #[test]
    fn finite_sets_hit_at_most_two_to_the_d_boxes_per_point(pts in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 3), 1..12), k in 1u32..7) {
        let n = pts.len() as u64;
        let set = CompactSet::points(pts).unwrap();
        let count = box_count(&set, 0.5f64.powi(k as i32)).unwrap();
        prop_assert!(count >= 1 && count <= 8 * n);
    }

    #[test]
    fn threshold_formula(r in 2.0..20.0f64, d in 1usize..6) {
        let cond = dim_condition(0.0, d, r);
        prop_assert!((cond.threshold - (d as f64 - 2.0 * r / (r - 1.0))).abs() < 1e-12);
    }

    #[test]
    fn cutoff_plateau_support_and_range(p in prop::collection::vec(0.2..0.8f64, 3), x in prop::collection::vec(0.0..1.0f64, 3), k in 3i32..7) {
        let delta = 0.5f64.powi(k);
        let set = CompactSet::single_point(p).unwrap();
        let phi = build_cutoff(&set, delta).unwrap();
        let v = phi.eval(&x);
        prop_assert!((0.0..=1.0).contains(&v));
        let unit = delta * 3f64.sqrt();
        let dist = set.distance(&x);
        if dist < unit {
            prop_assert_eq!(v, 1.0);
        }
        if dist >= 5.0 * unit {
            prop_assert_eq!(v, 0.0);
        }
    }
}
