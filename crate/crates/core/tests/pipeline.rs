use std::f64::consts::PI;
use std::sync::Arc;

use proptest::prelude::*;

use cusp_core::assembly::{assemble, BoundaryCondition};
use cusp_core::eigensolve::{solve_dense, solve_lowest};
use cusp_core::geometry::{graph_morph, CuspGeometry, GraphDomain, Profile};
use cusp_core::mesh::{mesh_graph_domain, mesh_reference, mesh_square, structured_square, TriangleMesh};
use cusp_core::metrics::{eigenfunction_distance, schatten_distance, EmbeddedDecomposition};
use cusp_core::transform::{pair_fields, pullback, Affine, CoefficientField, PhiEps};
use cusp_core::vicinity::delta_q;
use cusp_core::{Matrix, Vector};

fn identity() -> cusp_core::transform::PullbackFields {
    pullback(Arc::new(Affine::identity()), CoefficientField::identity())
}

#[test]
fn neumann_square_matches_cosine_modes() {
    let mesh = mesh_square(1.0, 1.0 / 24.0).unwrap();
    let sys = assemble(&mesh, &identity(), BoundaryCondition::Neumann, 7).unwrap();
    let dec = solve_lowest(&sys, 4, 1e-10).unwrap();
    assert!(dec.lambdas[0].abs() < 1e-8);
    // cos(πx), cos(πy) and cos(πx)cos(πy)
    for (l, e) in dec.lambdas[1..].iter().zip([PI * PI, PI * PI, 2.0 * PI * PI]) {
        assert!((l - e).abs() / e < 5e-3, "{l} vs {e}");
    }
}

#[test]
fn translation_leaves_the_discrete_system_unchanged() {
    let mesh = structured_square(8, 1.0);
    let shifted = pullback(
        Arc::new(Affine::translation(Vector::new(3.0, -2.0))),
        CoefficientField::identity(),
    );
    let a = assemble(&mesh, &identity(), BoundaryCondition::Dirichlet, 7).unwrap();
    let b = assemble(&mesh, &shifted, BoundaryCondition::Dirichlet, 7).unwrap();
    assert_eq!(a.digest(), b.digest());
}

#[test]
fn mesh_text_round_trip_preserves_the_system() {
    let mesh = mesh_square(1.0, 0.2).unwrap();
    let mut buf = Vec::new();
    mesh.write_text(&mut buf).unwrap();
    let back = TriangleMesh::read_text(buf.as_slice()).unwrap();
    let a = assemble(&mesh, &identity(), BoundaryCondition::Dirichlet, 3).unwrap();
    let b = assemble(&back, &identity(), BoundaryCondition::Dirichlet, 3).unwrap();
    assert_eq!(a.digest(), b.digest());
}

#[test]
fn sparse_and_dense_solvers_agree_on_a_cusp_mesh() {
    let geo = CuspGeometry::new(0.95, 0.2).unwrap();
    let mesh = mesh_reference(&geo, 0.25, 1.0, &[0.1]).unwrap();
    let f = pullback(
        Arc::new(PhiEps::new(geo.clone(), geo.level(0.1).unwrap())),
        CoefficientField::identity(),
    );
    let sys = assemble(&mesh, &f, BoundaryCondition::Dirichlet, 7).unwrap();
    assert!(sys.dof() <= 2000, "{}", sys.dof());
    let count = (sys.dof() / 4).min(8);
    let a = solve_lowest(&sys, count, 1e-11).unwrap();
    let b = solve_dense(&sys, count).unwrap();
    for (x, y) in a.lambdas.iter().zip(&b.lambdas) {
        assert!((x - y).abs() / y < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn dilation_scales_the_spectrum() {
    // λ(sΩ) = λ(Ω)/s² holds exactly for the pulled-back discrete problem
    let mesh = structured_square(10, 1.0);
    let s = 1.7;
    let dil = pullback(Arc::new(Affine::dilation(s)), CoefficientField::identity());
    let a = solve_lowest(&assemble(&mesh, &identity(), BoundaryCondition::Dirichlet, 7).unwrap(), 5, 1e-11).unwrap();
    let b = solve_lowest(&assemble(&mesh, &dil, BoundaryCondition::Dirichlet, 7).unwrap(), 5, 1e-11).unwrap();
    for (x, y) in a.lambdas.iter().zip(&b.lambdas) {
        assert!((x / (s * s) - y).abs() / y < 1e-9);
    }
}

#[test]
fn identical_graph_domains_give_zero_distances() {
    let d = GraphDomain::new((0.0, 1.0), Profile::Constant(1.0), 0.0, 1.5, 1.0, 0.5).unwrap();
    let mesh = mesh_graph_domain(&d, 0.1, Some(0.25), &[]).unwrap();
    let f = pullback(Arc::new(graph_morph(&d, &d).unwrap()), CoefficientField::identity());
    assert_eq!(delta_q(&pair_fields(&f, &identity()), &mesh, 2.0).unwrap().delta, 0.0);
    let sys = assemble(&mesh, &f, BoundaryCondition::Dirichlet, 7).unwrap();
    let dec = solve_lowest(&sys, 6, 1e-10).unwrap();
    let s = schatten_distance(&dec.lambdas, &dec.lambdas, 4, 2).unwrap();
    assert_eq!(s.value, 0.0);
    let e = EmbeddedDecomposition::new(&mesh, &f, &sys.dof_map, &dec);
    assert!(eigenfunction_distance(&e, &e, 0..1, 7).unwrap() < 1e-6);
}

#[test]
fn constant_weight_two_vicinity_by_hand() {
    // φ = 2x with A = 4I against the identity: g = 4, a = I, w = 2, S = I/4
    let mesh = structured_square(4, 1.0);
    let f = pullback(
        Arc::new(Affine::dilation(2.0)),
        CoefficientField::constant(Matrix::identity() * 4.0).unwrap(),
    );
    let r = delta_q(&pair_fields(&f, &identity()), &mesh, 2.0).unwrap();
    let pointwise = 1.0 + 0.5 + 1.5 * 2f64.sqrt() + 0.75 * 2f64.sqrt();
    // ‖c‖_{L²(4 dx)} = 2c on the unit square
    assert!((r.delta - 2.0 * pointwise).abs() < 1e-12, "{}", r.delta);
    assert!((r.unweighted.delta - pointwise).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bump_morph_vicinity_grows_with_amplitude(a in 0.01f64..0.1, extra in 0.01f64..0.1) {
        let base = GraphDomain::new((0.0, 1.0), Profile::Constant(1.0), 0.0, 1.5, 1.0, 0.5).unwrap();
        let mesh = mesh_graph_domain(&base, 0.2, Some(0.25), &[0.3, 0.7]).unwrap();
        let bump = |amp: f64| {
            let t = GraphDomain::new(
                (0.0, 1.0),
                Profile::Bump { base: 1.0, amplitude: amp, center: 0.5, radius: 0.2 },
                0.0, 1.5, 2.0, 0.5,
            ).unwrap();
            pullback(Arc::new(graph_morph(&base, &t).unwrap()), CoefficientField::identity())
        };
        let small = delta_q(&pair_fields(&bump(a), &identity()), &mesh, 2.0).unwrap().delta;
        let large = delta_q(&pair_fields(&bump(a + extra), &identity()), &mesh, 2.0).unwrap().delta;
        prop_assert!(small > 0.0 && large > small);
    }

    #[test]
    fn schatten_distance_is_symmetric(shift in 0.0f64..2.0, k in 1u32..8) {
        let a: Vec<f64> = (1..=12).map(|n| 3.0 * n as f64).collect();
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let ab = schatten_distance(&a, &b, k, 2).unwrap();
        let ba = schatten_distance(&b, &a, k, 2).unwrap();
        prop_assert_eq!(ab.value, ba.value);
        prop_assert!(ab.value >= 0.0);
    }
}
