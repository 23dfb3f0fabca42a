//! Dense `f64` tensors with a reverse-mode tape covering exactly the
//! operations the encoder, fusion head and training loop use, plus a
//! central-difference gradient checker.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_many};
pub use tape::{scatter_sum, Gradients, Tape, Var};
#[cfg(test)]
use tape::shifted_softplus_scalar;
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: incompatible shapes {left:?} and {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: expected a matrix, got shape {shape:?}")]
    Rank { op: &'static str, shape: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("{op}: degenerate input ({reason})")]
    Degenerate { op: &'static str, reason: String },
    #[error("{op}: index {index} out of range 0..{bound}")]
    Index {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward needs a single-element output, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("finite-difference step {h} outside [1e-7, 1e-3]")]
    StepSize { h: f64 },
    #[error("function evaluation failed: {0}")]
    Evaluation(String),
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_projector() {
        let mut tape = Tape::new();
        let i2 = tape.constant(Tensor::identity(2));
        let m = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let p = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap());
        let v = tape.constant(Tensor::from_rows(&[vec![5.0], vec![7.0]]).unwrap());
        let out = tape.matmul(p, v).unwrap();
        assert_eq!(tape.value(out).data(), &[5.0, 0.0]);
        assert_eq!(tape.value(out).shape(), &[2, 1]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            NumericsError::Shape {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
    }

    #[test]
    fn matmul_gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let err = grad_check_many(
            |t, v| {
                let c = t.matmul(v[0], v[1])?;
                // weight the outputs so every entry of dC differs
                let w = t.constant(Tensor::new(vec![3, 2], vec![1.0, -2.0, 0.5, 3.0, -1.5, 2.5]).unwrap());
                let p = t.mul(c, w)?;
                t.sum(p)
            },
            &[a, b],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(vec![0.0, 50.0, -50.0]));
        let y = tape.sigmoid(x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.5);
        assert!((v[1] - 1.0).abs() <= 1e-15);
        assert!(v[2] > 0.0 && v[2] < 1e-21);
    }

    #[test]
    fn sigmoid_value_and_gradient_at_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.0));
        let y = tape.sigmoid(x).unwrap();
        let value = tape.value(y).data()[0];
        let g = tape.backward(y).unwrap().get(x).unwrap().data()[0];
        // central differences of the closed form, h = 1e-5
        let s = |z: f64| 1.0 / (1.0 + (-z).exp());
        let fd = (s(1.0 + 1e-5) - s(1.0 - 1e-5)) / 2e-5;
        assert!((value - s(1.0)).abs() / s(1.0) < 1e-8);
        assert!((g - fd).abs() / fd < 1e-8);
    }

    #[test]
    fn layer_norm_constant_and_normalized_inputs() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::filled(&[4], 1.0));
        let b = tape.constant(Tensor::zeros(&[4]));
        let x = tape.constant(Tensor::vector(vec![1.0; 4]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0; 4]);

        let g = tape.constant(Tensor::filled(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let x = tape.constant(Tensor::vector(vec![-1.0, 1.0]));
        let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] + 1.0).abs() < 1e-4 && (v[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_rejects_single_feature() {
        let mut tape = Tape::new();
        let g = tape.constant(Tensor::filled(&[1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let x = tape.constant(Tensor::vector(vec![3.0]));
        assert!(matches!(
            tape.layer_norm(x, g, b, 1e-5),
            Err(NumericsError::Degenerate { op: "layer_norm", .. })
        ));
    }

    #[test]
    fn layer_norm_gradient_matches_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random(&mut rng, &[8]);
        let gamma = random(&mut rng, &[8]);
        let beta = random(&mut rng, &[8]);
        let w = random(&mut rng, &[8]);
        let err = grad_check_many(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                let w = t.constant(w.clone());
                let p = t.mul(y, w)?;
                t.sum(p)
            },
            &[x, gamma, beta],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn shifted_softplus_fixed_points() {
        assert_eq!(shifted_softplus_scalar(0.0), 0.0);
        let big = shifted_softplus_scalar(50.0);
        assert!((big - (50.0 - std::f64::consts::LN_2)).abs() < 1e-9);
        assert!(shifted_softplus_scalar(-800.0).is_finite());
    }

    #[test]
    fn shifted_softplus_matches_high_precision_value() {
        // ln(0.5 e + 0.5) to 30 digits, from tests/oracles/high_precision.py
        let expected = 0.620_114_506_958_277_5_f64;
        assert!((shifted_softplus_scalar(1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn scatter_sum_cases() {
        let empty = Tensor::new(vec![0, 3], vec![]).unwrap();
        let out = scatter_sum(&empty, &[], 4).unwrap();
        assert_eq!(out.shape(), &[4, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));

        let m = Tensor::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let out = scatter_sum(&m, &[0, 0, 1], 2).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0]);

        assert!(matches!(
            scatter_sum(&m, &[0, 2, 1], 2),
            Err(NumericsError::Index { index: 2, bound: 2, .. })
        ));
    }

    #[test]
    fn scatter_sum_is_bit_identical_under_message_permutation() {
        // small integers keep every partial sum exact
        let vals = [3.0, -1.0, 4.0, 1.0, -5.0, 9.0, 2.0, 6.0];
        let targets = [2, 0, 1, 2, 0, 1, 1, 2];
        let m = Tensor::new(vec![8, 1], vals.to_vec()).unwrap();
        let base = scatter_sum(&m, &targets, 3).unwrap();
        let perm = [7, 2, 5, 0, 3, 6, 1, 4];
        let pv: Vec<f64> = perm.iter().map(|&i| vals[i]).collect();
        let pt: Vec<usize> = perm.iter().map(|&i| targets[i]).collect();
        let permuted = scatter_sum(&Tensor::new(vec![8, 1], pv).unwrap(), &pt, 3).unwrap();
        assert_eq!(base, permuted);
    }

    #[test]
    fn grad_check_polynomial_and_sigmoid() {
        let err = grad_check(|t, x| t.mul(x, x).and_then(|y| t.sum(y)), &Tensor::scalar(3.0), 1e-5).unwrap();
        assert!(err < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[5]);
        let err = grad_check(|t, x| t.sigmoid(x).and_then(|y| t.sum(y)), &x, 1e-5).unwrap();
        assert!(err < 1e-6);
    }

    #[test]
    fn grad_check_rejects_bad_step_and_nonfinite() {
        let x = Tensor::scalar(1.0);
        assert!(matches!(
            grad_check(|t, x| t.sum(x), &x, 1e-2),
            Err(NumericsError::StepSize { .. })
        ));
        let err = grad_check(
            |t, x| {
                let y = t.affine(x, 1e308, 0.0)?;
                let y = t.affine(y, 10.0, 0.0)?;
                t.sum(y)
            },
            &x,
            1e-5,
        )
        .unwrap_err();
        assert!(matches!(err, NumericsError::Evaluation(_)));
    }

    #[test]
    fn constant_output_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let z = tape.affine(x, 0.0, 4.0).unwrap();
        let s = tape.sum(z).unwrap();
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(NumericsError::NotScalar { .. })));
    }

    #[test]
    fn interpolate_endpoints_and_gradient() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::vector(vec![1.0, -2.0, 0.3]));
        let b = tape.constant(Tensor::vector(vec![3.0, -2.0, 0.1]));
        let w = tape.constant(Tensor::vector(vec![0.5, 0.9, 1.0]));
        let f = tape.interpolate(a, b, w).unwrap();
        assert_eq!(tape.value(f).data(), &[2.0, -2.0, 0.1]);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let inputs = [random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])];
        let err = grad_check_many(
            |t, v| {
                let w = t.sigmoid(v[2])?;
                let f = t.interpolate(v[0], v[1], w)?;
                let sq = t.mul(f, f)?;
                t.sum(sq)
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }
}
