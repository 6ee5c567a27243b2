mod common;

use common::{encoder_report, op_reports};

const TOL: f64 = 1e-3;

#[test]
fn every_op_matches_finite_differences() {
    for seed in 1..=5 {
        for (name, r) in op_reports(seed) {
            assert!(r.checked > 0, "{name} seed {seed}: nothing checked");
            assert!(r.max_rel_err < TOL, "{name} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn composed_three_block_encoder() {
    for seed in 1..=5 {
        let r = encoder_report(seed);
        assert!(r.checked > 100, "seed {seed}: {r:?}");
        assert!(r.max_rel_err < TOL, "seed {seed}: {r:?}");
    }
}

#[test]
fn a_wrong_gradient_is_caught() {
    use common::{grad_check, normal_tensor, Graph};
    use memaudit_core::tensor::{Scalar, Tape, Var};
    use memaudit_core::Result;

    // x·x built as mul(x, detached copy of x): the tape sees only one factor
    struct HalfSquare;
    impl Graph for HalfSquare {
        fn build<T: Scalar>(&self, t: &mut Tape<T>, x: &[Var]) -> Result<Var> {
            let copy = t.value(x[0]).clone();
            let c = t.leaf(memaudit_core::tensor::Tensor::new(copy.shape().to_vec(), copy.data().to_vec())?);
            t.mul(x[0], c)
        }
    }
    let x = normal_tensor(3, 0, vec![6], 1.0);
    let target = normal_tensor(3, 1, vec![6], 1.0);
    assert!(grad_check(&HalfSquare, &[x], &target, 64).max_rel_err > 0.1);
}
