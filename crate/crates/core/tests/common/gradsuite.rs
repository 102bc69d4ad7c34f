//! The gradient oracle suite: every tape op and the full training
//! objective against a central finite-difference oracle.

use balancereg::diffcore::{BinaryKind, Tape, ValueRef};
use balancereg::losses::{mmd_sq, smd, soft_ks, Bandwidth, MmdEstimator, PrgVariant, SoftKsTemperature};
use balancereg::Array;
use super::{fd_check, fd_check_many, objective_fd_case, rand_array, rand_array_away_from_zero, rng};
use rand::seq::SliceRandom;
use rand::Rng;

const OP_RTOL: f64 = 1e-4;
const OBJ_RTOL: f64 = 1e-3;
const INSTANCES: usize = 20;

/// Weighted sum against a fixed coefficient leaf so the check exercises a
/// non-uniform cotangent, not just all-ones.
fn weighted_sum(tape: &mut Tape, x: ValueRef, coeffs: ValueRef) -> ValueRef {
    let prod = tape.mul(x, coeffs).unwrap();
    tape.sum(prod)
}

fn check_binary(kind: BinaryKind, away_from_zero_rhs: bool) {
    fd_check_many(&format!("{kind:?}"), INSTANCES, |seed| {
        let mut r = rng(seed * 31 + kind as u64);
        let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
        let a = rand_array(&mut r, rows, cols, -2.0, 2.0);
        let b = if away_from_zero_rhs {
            rand_array_away_from_zero(&mut r, rows, cols, 0.2)
        } else {
            rand_array(&mut r, rows, cols, -2.0, 2.0)
        };
        let w = rand_array(&mut r, rows, cols, -1.0, 1.0);
        fd_check(&[a, b, w], |tape, refs| {
            let out = tape.binary(kind, refs[0], refs[1]).unwrap();
            weighted_sum(tape, out, refs[2])
        }, OP_RTOL)
    });
}

pub fn binary_elementwise_ops() {
    check_binary(BinaryKind::Add, false);
    check_binary(BinaryKind::Sub, false);
    check_binary(BinaryKind::Mul, false);
    check_binary(BinaryKind::Div, true);
}

pub fn binary_scalar_broadcast() {
    for kind in [BinaryKind::Add, BinaryKind::Sub, BinaryKind::Mul, BinaryKind::Div] {
        fd_check_many(&format!("scalar broadcast {kind:?}"), INSTANCES, |seed| {
            let mut r = rng(seed * 97 + kind as u64);
            let s = Array::scalar(if kind == BinaryKind::Div {
                // scalar as divisor elsewhere; here scalar is lhs, any value ok
                r.gen_range(0.3..2.0)
            } else {
                r.gen_range(-2.0..2.0)
            });
            let m = rand_array_away_from_zero(&mut r, 3, 2, 0.2);
            let w = rand_array(&mut r, 3, 2, -1.0, 1.0);
            fd_check(&[s, m, w], |tape, refs| {
                let out = tape.binary(kind, refs[0], refs[1]).unwrap();
                weighted_sum(tape, out, refs[2])
            }, OP_RTOL)
        });
    }
}

pub fn matmul_op() {
    fd_check_many("matmul", INSTANCES, |seed| {
        let mut r = rng(seed * 7 + 1);
        let (m, k, n) = (r.gen_range(1..4), r.gen_range(1..4), r.gen_range(1..4));
        let a = rand_array(&mut r, m, k, -1.5, 1.5);
        let b = rand_array(&mut r, k, n, -1.5, 1.5);
        let w = rand_array(&mut r, m, n, -1.0, 1.0);
        fd_check(&[a, b, w], |tape, refs| {
            let out = tape.matmul(refs[0], refs[1]).unwrap();
            weighted_sum(tape, out, refs[2])
        }, OP_RTOL)
    });
}

pub fn add_bias_op() {
    fd_check_many("add_bias", INSTANCES, |seed| {
        let mut r = rng(seed * 13 + 2);
        let (rows, cols) = (r.gen_range(1..5), r.gen_range(1..5));
        let m = rand_array(&mut r, rows, cols, -2.0, 2.0);
        let bias = rand_array(&mut r, 1, cols, -1.0, 1.0);
        let w = rand_array(&mut r, rows, cols, -1.0, 1.0);
        fd_check(&[m, bias, w], |tape, refs| {
            let out = tape.add_bias(refs[0], refs[1]).unwrap();
            weighted_sum(tape, out, refs[2])
        }, OP_RTOL)
    });
}

pub fn smooth_unary_ops() {
    type UnaryBuild = fn(&mut Tape, ValueRef) -> ValueRef;
    let cases: [(&str, UnaryBuild); 3] = [
        ("exp", |t, x| t.exp(x)),
        ("square", |t, x| t.square(x)),
        ("sigmoid", |t, x| t.sigmoid(x)),
    ];
    for (i, (name, build)) in cases.iter().enumerate() {
        fd_check_many(name, INSTANCES, |seed| {
            let mut r = rng(seed * 11 + i as u64);
            let x = rand_array(&mut r, 3, 3, -1.5, 1.5);
            let w = rand_array(&mut r, 3, 3, -1.0, 1.0);
            fd_check(&[x, w], |tape, refs| {
                let out = build(tape, refs[0]);
                weighted_sum(tape, out, refs[1])
            }, OP_RTOL)
        });
    }
}

pub fn kinked_unary_ops() {
    // relu and abs are non-differentiable at 0; instances keep inputs away
    // from the kink so the central difference is well-defined
    type UnaryBuild = fn(&mut Tape, ValueRef) -> ValueRef;
    let cases: [(&str, UnaryBuild); 2] = [("relu", |t, x| t.relu(x)), ("abs", |t, x| t.abs(x))];
    for (i, (name, build)) in cases.iter().enumerate() {
        fd_check_many(name, INSTANCES, |seed| {
            let mut r = rng(seed * 17 + i as u64);
            let x = rand_array_away_from_zero(&mut r, 3, 4, 0.01);
            let w = rand_array(&mut r, 3, 4, -1.0, 1.0);
            fd_check(&[x, w], |tape, refs| {
                let out = build(tape, refs[0]);
                weighted_sum(tape, out, refs[1])
            }, OP_RTOL)
        });
    }
}

pub fn sqrt_op() {
    fd_check_many("sqrt", INSTANCES, |seed| {
        let mut r = rng(seed * 19 + 3);
        let x = rand_array(&mut r, 2, 4, 0.1, 3.0);
        let w = rand_array(&mut r, 2, 4, -1.0, 1.0);
        fd_check(&[x, w], |tape, refs| {
            let out = tape.sqrt(refs[0]);
            weighted_sum(tape, out, refs[1])
        }, OP_RTOL)
    });
}

pub fn reductions() {
    fd_check_many("sum", INSTANCES, |seed| {
        let mut r = rng(seed * 23 + 4);
        let x = rand_array(&mut r, 3, 3, -2.0, 2.0);
        fd_check(&[x], |tape, refs| tape.sum(refs[0]), OP_RTOL)
    });
    fd_check_many("mean", INSTANCES, |seed| {
        let mut r = rng(seed * 29 + 5);
        let x = rand_array(&mut r, 4, 2, -2.0, 2.0);
        fd_check(&[x], |tape, refs| tape.mean(refs[0]), OP_RTOL)
    });
    fd_check_many("max", INSTANCES, |seed| {
        let mut r = rng(seed * 37 + 6);
        // distinct entries with a clear gap so the argmax is stable under
        // the finite-difference perturbation
        let mut vals: Vec<f64> = (0..6).map(|i| i as f64 * 0.5).collect();
        vals.shuffle(&mut r);
        let x = Array::from_vec(2, 3, vals);
        fd_check(&[x], |tape, refs| tape.max(refs[0]), OP_RTOL)
    });
}

pub fn scalar_affine_ops() {
    fd_check_many("mul_scalar/add_scalar", INSTANCES, |seed| {
        let mut r = rng(seed * 41 + 7);
        let x = rand_array(&mut r, 3, 2, -2.0, 2.0);
        let w = rand_array(&mut r, 3, 2, -1.0, 1.0);
        let c = r.gen_range(-2.0..2.0);
        let d = r.gen_range(-2.0..2.0);
        fd_check(&[x, w], |tape, refs| {
            let scaled = tape.mul_scalar(refs[0], c);
            let shifted = tape.add_scalar(scaled, d);
            weighted_sum(tape, shifted, refs[1])
        }, OP_RTOL)
    });
}

pub fn pairwise_sq_dist_op() {
    fd_check_many("pairwise_sq_dist", INSTANCES, |seed| {
        let mut r = rng(seed * 43 + 8);
        let a = rand_array(&mut r, 3, 2, -1.5, 1.5);
        let b = rand_array(&mut r, 4, 2, -1.5, 1.5);
        let w = rand_array(&mut r, 3, 4, -1.0, 1.0);
        fd_check(&[a, b, w], |tape, refs| {
            let out = tape.pairwise_sq_dist(refs[0], refs[1]).unwrap();
            weighted_sum(tape, out, refs[2])
        }, OP_RTOL)
    });
    // same node on both sides: gradients from both arguments accumulate
    fd_check_many("pairwise_sq_dist self", INSTANCES, |seed| {
        let mut r = rng(seed * 47 + 9);
        let a = rand_array(&mut r, 3, 2, -1.5, 1.5);
        let w = rand_array(&mut r, 3, 3, -1.0, 1.0);
        fd_check(&[a, w], |tape, refs| {
            let out = tape.pairwise_sq_dist(refs[0], refs[0]).unwrap();
            weighted_sum(tape, out, refs[1])
        }, OP_RTOL)
    });
}

pub fn structural_ops() {
    fd_check_many("outer_sub", INSTANCES, |seed| {
        let mut r = rng(seed * 53 + 10);
        let u = rand_array(&mut r, 3, 1, -2.0, 2.0);
        let v = rand_array(&mut r, 4, 1, -2.0, 2.0);
        let w = rand_array(&mut r, 3, 4, -1.0, 1.0);
        fd_check(&[u, v, w], |tape, refs| {
            let out = tape.outer_sub(refs[0], refs[1]).unwrap();
            weighted_sum(tape, out, refs[2])
        }, OP_RTOL)
    });
    fd_check_many("concat/permute/slice/row_means", INSTANCES, |seed| {
        let mut r = rng(seed * 59 + 11);
        let a = rand_array(&mut r, 2, 3, -2.0, 2.0);
        let b = rand_array(&mut r, 3, 3, -2.0, 2.0);
        let mut perm: Vec<usize> = (0..5).collect();
        perm.shuffle(&mut r);
        let w = rand_array(&mut r, 3, 1, -1.0, 1.0);
        fd_check(&[a, b, w], move |tape, refs| {
            let cat = tape.concat_rows(refs[0], refs[1]).unwrap();
            let permuted = tape.permute_rows(cat, perm.clone()).unwrap();
            let sliced = tape.slice_rows(permuted, 1, 3).unwrap();
            let means = tape.row_means(sliced);
            weighted_sum(tape, means, refs[2])
        }, OP_RTOL)
    });
}

pub fn mmd_sq_gradients() {
    for estimator in [MmdEstimator::Biased, MmdEstimator::Unbiased] {
        fd_check_many(&format!("mmd_sq {estimator:?}"), INSTANCES, |seed| {
            let mut r = rng(seed * 61 + 12);
            let a = rand_array(&mut r, 4, 3, -1.0, 1.0);
            let b = rand_array(&mut r, 3, 3, -1.0, 1.0);
            fd_check(&[a, b], |tape, refs| {
                mmd_sq(tape, refs[0], refs[1], Bandwidth::Fixed(1.0), estimator).unwrap()
            }, OP_RTOL)
        });
    }
}

pub fn soft_ks_gradients() {
    fd_check_many("soft_ks", INSTANCES, |seed| {
        let mut r = rng(seed * 67 + 13);
        let a = rand_array(&mut r, 5, 1, -1.0, 1.0);
        let b = rand_array(&mut r, 4, 1, -1.0, 1.0);
        fd_check(&[a, b], |tape, refs| {
            soft_ks(tape, refs[0], refs[1], SoftKsTemperature::Fixed(0.3)).unwrap()
        }, OP_RTOL)
    });
}

pub fn smd_gradients() {
    fd_check_many("smd", INSTANCES, |seed| {
        let mut r = rng(seed * 71 + 14);
        let a = rand_array(&mut r, 5, 1, -1.0, 1.0);
        let b = rand_array(&mut r, 4, 1, 0.5, 2.0);
        fd_check(&[a, b], |tape, refs| smd(tape, refs[0], refs[1]).unwrap(), OP_RTOL)
    });
}

pub fn full_objective_soft_ks_variant() {
    fd_check_many("objective soft_ks", INSTANCES, |seed| {
        objective_fd_case(seed, PrgVariant::SoftKs, OBJ_RTOL)
    });
}

pub fn full_objective_smd_variant() {
    fd_check_many("objective smd", INSTANCES, |seed| {
        objective_fd_case(seed, PrgVariant::Smd, OBJ_RTOL)
    });
}

/// Every check in the suite, for timed acceptance runs.
pub fn run_all() {
    binary_elementwise_ops();
    binary_scalar_broadcast();
    matmul_op();
    add_bias_op();
    smooth_unary_ops();
    kinked_unary_ops();
    sqrt_op();
    reductions();
    scalar_affine_ops();
    pairwise_sq_dist_op();
    structural_ops();
    mmd_sq_gradients();
    soft_ks_gradients();
    smd_gradients();
    full_objective_soft_ks_variant();
    full_objective_smd_variant();
}
