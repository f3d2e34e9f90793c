//! Property tests for the structural identities of the lattice calculus,
//! the averaging maps and the constrained Gaussian integrals.

use caxial::averaging::{m_operator, q_bond, q_scalar, q_scalar_map, tau, tau_rows};
use caxial::field::{
    codiff_bond, codiff_plaquette, ext_d, gauge_transform, grad, inner_bond, inner_plaquette, inner_scalar, scale_field,
    stack_rows, BondField, PlaquetteField, ScalarField,
};
use caxial::gaussian::{push_constraint, AffineSurface, QuadraticDensity, SurfaceGaussian};
use caxial::lattice::{apply_symmetry, Lattice, LatticeSpec, LatticeSymmetry};
use caxial::linalg::min_norm_solve;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn values(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Small lattices: tori at a few scales and the unit cubes.
fn small_spec() -> impl Strategy<Value = LatticeSpec> {
    prop_oneof![
        (2usize..=3, 0i32..=1).prop_map(|(d, s)| LatticeSpec::torus(d, 3, s, 1 - s)),
        (0i32..=2).prop_map(|s| LatticeSpec::torus(2, 3, s, 2 - s)),
        Just(LatticeSpec::torus(2, 5, 0, 1)),
        Just(LatticeSpec::torus(2, 5, 1, 0)),
        (2usize..=3).prop_map(|d| LatticeSpec::unit_cube(d, 3)),
        Just(LatticeSpec::unit_cube(2, 5)),
    ]
}

/// Tori with at least one level of blocking, as (spec, levels).
fn blocked_torus() -> impl Strategy<Value = (LatticeSpec, usize)> {
    prop_oneof![
        Just((LatticeSpec::torus(2, 3, 1, 1), 1)),
        Just((LatticeSpec::torus(2, 3, 2, 0), 1)),
        Just((LatticeSpec::torus(2, 3, 2, 0), 2)),
        Just((LatticeSpec::torus(2, 5, 1, 0), 1)),
        Just((LatticeSpec::torus(3, 3, 0, 2), 1)),
        Just((LatticeSpec::torus(3, 3, 1, 0), 1)),
    ]
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn field_strength_of_gradient_vanishes(spec in small_spec(), seed in any::<u64>()) {
        let lat = Lattice::new(spec).unwrap();
        let l = ScalarField::from_values(&lat, values(seed, lat.num_sites())).unwrap();
        let dg = ext_d(&lat, &grad(&lat, &l).unwrap()).unwrap();
        prop_assert!(dg.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn codifferentials_are_weighted_adjoints(spec in small_spec(), seed in any::<u64>()) {
        let lat = Lattice::new(spec).unwrap();
        let a = BondField::from_values(&lat, values(seed, lat.num_bonds())).unwrap();
        let l = ScalarField::from_values(&lat, values(seed ^ 1, lat.num_sites())).unwrap();
        let p = PlaquetteField::from_values(&lat, values(seed ^ 2, lat.num_plaquettes())).unwrap();
        let lhs = inner_bond(&grad(&lat, &l).unwrap(), &a).unwrap();
        let rhs = inner_scalar(&l, &codiff_bond(&lat, &a).unwrap()).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
        let lhs = inner_plaquette(&ext_d(&lat, &a).unwrap(), &p).unwrap();
        let rhs = inner_bond(&a, &codiff_plaquette(&lat, &p).unwrap()).unwrap();
        prop_assert!(close(lhs, rhs, 1e-12), "{lhs} vs {rhs}");
    }

    #[test]
    fn field_strength_is_gauge_invariant(spec in small_spec(), seed in any::<u64>()) {
        let lat = Lattice::new(spec).unwrap();
        let a = BondField::from_values(&lat, values(seed, lat.num_bonds())).unwrap();
        let l = ScalarField::from_values(&lat, values(seed ^ 3, lat.num_sites())).unwrap();
        let da = ext_d(&lat, &a).unwrap();
        let db = ext_d(&lat, &gauge_transform(&lat, &a, &l).unwrap()).unwrap();
        for (x, y) in da.values.iter().zip(&db.values) {
            prop_assert!((x - y).abs() < 1e-11);
        }
    }

    #[test]
    fn action_is_scale_invariant(spec in small_spec(), n in 1i32..=2, seed in any::<u64>()) {
        let lat = Lattice::new(spec).unwrap();
        let a = BondField::from_values(&lat, values(seed, lat.num_bonds())).unwrap();
        let s = scale_field(&a, n);
        let fine = Lattice::new(s.spec).unwrap();
        let d0 = ext_d(&lat, &a).unwrap();
        let d1 = ext_d(&fine, &s).unwrap();
        let e0 = inner_plaquette(&d0, &d0).unwrap();
        let e1 = inner_plaquette(&d1, &d1).unwrap();
        prop_assert!(close(e0, e1, 1e-12), "{e0} vs {e1}");
    }

    #[test]
    fn bond_average_intertwines_gradient((spec, levels) in blocked_torus(), seed in any::<u64>()) {
        let lat = Lattice::new(spec).unwrap();
        let coarse = lat.coarse_lattice(levels).unwrap();
        let l = ScalarField::from_values(&lat, values(seed, lat.num_sites())).unwrap();
        let lhs = q_bond(&lat, &grad(&lat, &l).unwrap(), levels).unwrap();
        let rhs = grad(&coarse, &q_scalar(&lat, &l, levels).unwrap()).unwrap();
        let scale = lhs.values.iter().chain(&rhs.values).fold(1e-300f64, |m, v| m.max(v.abs()));
        for (x, y) in lhs.values.iter().zip(&rhs.values) {
            prop_assert!((x - y).abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn averaging_preserves_closedness((spec, levels) in blocked_torus(), seed in any::<u64>(), shift in -1.0f64..1.0) {
        // a gradient plus a constant toron field is closed but not exact
        let lat = Lattice::new(spec).unwrap();
        let coarse = lat.coarse_lattice(levels).unwrap();
        let l = ScalarField::from_values(&lat, values(seed, lat.num_sites())).unwrap();
        let mut z = grad(&lat, &l).unwrap();
        for (b, bond) in lat.bonds().iter().enumerate() {
            if bond.axis == 0 {
                z.values[b] += shift;
            }
        }
        let dqz = ext_d(&coarse, &q_bond(&lat, &z, levels).unwrap()).unwrap();
        prop_assert!(dqz.values.iter().all(|v| v.abs() < 1e-11));
    }

    #[test]
    fn tau_is_symmetry_covariant(dim in 2usize..=3, which in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let lat = Lattice::new(LatticeSpec::unit_cube(dim, 3)).unwrap();
        let a = BondField::from_values(&lat, values(seed, lat.num_bonds())).unwrap();
        let group = LatticeSymmetry::all(dim);
        let r = &group[which.index(group.len())];
        let rows = tau_rows(&lat, 1).unwrap();
        let t = tau(&lat, &a, 1).unwrap();
        let tr = tau(&lat, &apply_symmetry(r, &lat, &a).unwrap(), 1).unwrap();
        let inv = r.inverse();
        for (i, &(_, x)) in rows.iter().enumerate() {
            let src = lat.site_index(&inv.apply_site(&lat.site(x))).unwrap();
            let j = rows.iter().position(|&(_, xx)| xx == src).unwrap();
            prop_assert!((tr[i] - t[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn m_operator_inverts_gradient_off_block_averages(dim in 2usize..=3, seed in any::<u64>()) {
        let lat = Lattice::new(LatticeSpec::torus(dim, 3, 0, 2 - (dim - 2) as i32)).unwrap();
        let mut nu = values(seed, lat.num_sites());
        let means = q_scalar_map(&lat, 1).unwrap().apply(&nu).unwrap();
        for (c, y) in lat.block_centers(1).unwrap().into_iter().enumerate() {
            for x in lat.block_members(&lat.site(y), 1).unwrap() {
                nu[x] -= means[c];
            }
        }
        let nu = ScalarField::from_values(&lat, nu).unwrap();
        let mu = m_operator(&lat, &grad(&lat, &nu).unwrap()).unwrap();
        for (a, b) in mu.values.iter().zip(&nu.values) {
            prop_assert!((a + b).abs() < 1e-11);
        }
    }

    #[test]
    fn fields_round_trip_through_json_and_binary(spec in small_spec(), seed in any::<u64>()) {
        let lat = Lattice::new(spec).unwrap();
        let a = BondField::from_values(&lat, values(seed, lat.num_bonds())).unwrap();
        let back = BondField::from_json(&a.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &a);
        let mut buf = Vec::new();
        a.write_binary(&mut buf).unwrap();
        let back = BondField::read_binary(&lat, buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &a);
    }

    #[test]
    fn min_norm_solution_of_wide_system(rows in 1usize..40, extra in 1usize..80, seed in any::<u64>()) {
        let cols = rows + extra;
        let k = DMatrix::from_vec(rows, cols, values(seed, rows * cols));
        let b = DVector::from_vec(values(seed ^ 5, rows));
        let x = min_norm_solve(&k, &b, 1e-12);
        prop_assert!((&k * &x - &b).amax() < 1e-9);
        // the minimum-norm solution lies in the row space of k
        let coeff = min_norm_solve(&k.transpose(), &x, 1e-12);
        prop_assert!((k.transpose() * coeff - &x).amax() < 1e-9);
    }

    #[test]
    fn pushed_density_matches_surface_integral(n in 3usize..7, seed in any::<u64>(), level in -2.0f64..2.0) {
        let m = DMatrix::from_vec(n, n, values(seed, n * n));
        let form = &m * m.transpose() + DMatrix::identity(n, n);
        let form = (&form + form.transpose()) * 0.5;
        let density = QuadraticDensity::new(form, DVector::from_vec(values(seed ^ 7, n)), 0.3).unwrap();
        let out = DMatrix::from_vec(1, n, values(seed ^ 11, n));
        let fix = DMatrix::from_vec(1, n, values(seed ^ 13, n));
        let pushed = push_constraint(&density, &out, &fix).unwrap();
        let surface = AffineSurface::new(stack_rows(&[&out, &fix]), DVector::from_vec(vec![level, 0.0])).unwrap();
        let direct = SurfaceGaussian::new(&density, &surface).unwrap().log_delta_integral().unwrap();
        let via = pushed.log_value(&DVector::from_element(1, level));
        prop_assert!(close(direct, via, 1e-9), "{direct} vs {via}");
    }
}
