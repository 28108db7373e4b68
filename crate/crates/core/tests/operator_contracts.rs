//! Cross-module contracts of the operator layer: every handle the crate can
//! build is linear and adjoint-consistent on random inputs, and the dense
//! matrix view agrees with functional evaluation.

use bloomlab_core::commutator::{commutator, iterated_commutator, nested_commutator};
use bloomlab_core::dyadic::{Axis, GridFunction};
use bloomlab_core::operator::{
    assemble_matrix, e_combination, e_term_shift, make_paraproduct, make_shift, pipi_b, Operator,
    ParaproductSpec, PiForm, ShiftSpec,
};
use bloomlab_core::paraproduct::{paraproduct_operator, ParaproductKind};
use bloomlab_core::rng::{stream_rng, sub_rng};
use rand::Rng;

fn random_grid(depth: u32, seed: u64) -> GridFunction {
    let mut rng = stream_rng(seed, 0x17);
    GridFunction::from_fn(depth, |_, _| rng.random_range(-2.0..2.0))
}

/// Linearity and adjoint pairing on random spanning inputs.
fn check_handle(op: &Operator, depth: u32, seed: u64) {
    let f = random_grid(depth, seed);
    let g = random_grid(depth, seed + 1);
    let c = 1.37;
    let lin = op
        .apply(&f.add(&g.scale(c)))
        .sub(&op.apply(&f).add(&op.apply(&g).scale(c)))
        .sup_norm();
    assert!(lin < 1e-12, "{}: linearity defect {lin}", op.descriptor());
    let lhs = op.apply(&f).inner(&g);
    let rhs = f.inner(&op.apply_adjoint(&g));
    assert!(
        (lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()),
        "{}: adjoint defect {} vs {}",
        op.descriptor(),
        lhs,
        rhs
    );
}

#[test]
fn every_operator_family_is_linear_and_adjoint_consistent() {
    let depth = 3;
    let mut rng = sub_rng(0xfeed, 0, 0);
    let s1 = ShiftSpec::random_full(Axis::One, 1, 2, depth, &mut rng);
    let s2 = ShiftSpec::random_full(Axis::Two, 2, 1, depth, &mut rng);
    let p1 = ParaproductSpec::random_normalised(Axis::One, PiForm::Direct, depth, &mut rng);
    let p2 = ParaproductSpec::random_normalised(Axis::Two, PiForm::Direct, depth, &mut rng);
    let p1_dual = p1.with_form(PiForm::Dual);
    let b = random_grid(depth, 0xb0);

    let o_s1 = make_shift(&s1, depth).unwrap();
    let o_s2 = make_shift(&s2, depth).unwrap();
    let o_p1 = make_paraproduct(&p1, depth).unwrap();
    let o_p2 = make_paraproduct(&p2, depth).unwrap();
    let o_p1d = make_paraproduct(&p1_dual, depth).unwrap();
    let o_p1abs = make_paraproduct(&p1.with_absolute(), depth).unwrap();
    let handles: Vec<Operator> = vec![
        o_s1.clone(),
        o_s2.clone(),
        o_p1.clone(),
        o_p2.clone(),
        o_p1d,
        o_p1abs,
        e_term_shift(&b, &s1, &s2, (1, 2), depth).unwrap(),
        e_term_shift(&b, &s1, &s2, (2, 1), depth).unwrap(),
        e_combination(&b, &s1, &s2, depth).unwrap(),
        pipi_b(&b, &p1, &p2, depth).unwrap(),
        commutator(&b, &o_s1),
        nested_commutator(&o_s1, &b, &o_s2).unwrap(),
        nested_commutator(&o_p1, &b, &o_p2).unwrap(),
        iterated_commutator(&b, &o_s2, 2),
        paraproduct_operator(ParaproductKind::A1, &b),
        paraproduct_operator(ParaproductKind::A2, &b),
        paraproduct_operator(ParaproductKind::A5, &b),
        paraproduct_operator(ParaproductKind::W, &b),
        o_s1.compose(&o_s2).add(&o_p1.scale(0.5)).sub(&Operator::identity(depth)),
    ];
    for (i, op) in handles.iter().enumerate() {
        check_handle(op, depth, 0x100 + i as u64 * 7);
    }
}

#[test]
fn direct_and_dual_paraproduct_matrices_are_transposes() {
    let depth = 2;
    let mut rng = sub_rng(0xd00d, 0, 0);
    let spec = ParaproductSpec::random_normalised(Axis::Two, PiForm::Direct, depth, &mut rng);
    let direct = assemble_matrix(&make_paraproduct(&spec, depth).unwrap()).unwrap();
    let dual = assemble_matrix(&make_paraproduct(&spec.with_form(PiForm::Dual), depth).unwrap()).unwrap();
    let weight = 1.0 / direct.n as f64;
    for i in 0..direct.n {
        for j in 0..direct.n {
            // cell-basis matrices of adjoint pairs are plain transposes
            let a = direct.data[i * direct.n + j];
            let bt = dual.data[j * direct.n + i];
            assert!((a - bt).abs() < 1e-12 / weight, "transpose mismatch at ({i},{j})");
        }
    }
}

#[test]
fn assembled_commutator_matches_functional_route() {
    let depth = 2;
    let mut rng = sub_rng(0xabcd, 0, 0);
    let s1 = ShiftSpec::random_full(Axis::One, 1, 1, depth, &mut rng);
    let s2 = ShiftSpec::random_full(Axis::Two, 1, 0, depth, &mut rng);
    let b = random_grid(depth, 0xb1);
    let nested = nested_commutator(
        &make_shift(&s1, depth).unwrap(),
        &b,
        &make_shift(&s2, depth).unwrap(),
    )
    .unwrap();
    let m = assemble_matrix(&nested).unwrap();
    let f = random_grid(depth, 0xb2);
    let via_matrix = m.matvec(f.values());
    let direct = nested.apply(&f);
    for (a, b) in via_matrix.iter().zip(direct.values()) {
        assert!((a - b).abs() < 1e-12);
    }
}
