//! Layer primitives: forward passes and exact backward passes.
//!
//! Everything is per-sample; minibatch gradients accumulate by summation in
//! the training loop. All layers are checked against central finite
//! differences in the tests.

use rand::Rng;

use super::matrix::Matrix;
use crate::histfn::HistFnBank;
use crate::{Error, Result};

/// Fully connected parameters: y = W x + b with W of shape out x in.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Fc {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Fc {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Fc {
            w: Matrix::zeros(out_dim, in_dim),
            b: vec![0.0; out_dim],
        }
    }

    /// Seeded uniform init on +-sqrt(6 / (fan_in + fan_out)); biases zero.
    pub fn glorot(out_dim: usize, in_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut w = Matrix::zeros(out_dim, in_dim);
        for v in w.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Fc {
            w,
            b: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }
}

pub fn fc_forward(fc: &Fc, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != fc.in_dim() {
        return Err(Error::DimMismatch {
            context: "fully connected forward".to_string(),
            expected: fc.in_dim(),
            actual: x.len(),
        });
    }
    let mut y = fc.w.matvec(x);
    for (yi, bi) in y.iter_mut().zip(&fc.b) {
        *yi += bi;
    }
    Ok(y)
}

/// Backward pass for y = W x + b. Accumulates dW and db into `grad` and
/// returns dx.
pub fn fc_backward(fc: &Fc, x: &[f64], grad_y: &[f64], grad: &mut Fc) -> Result<Vec<f64>> {
    if grad_y.len() != fc.out_dim() {
        return Err(Error::DimMismatch {
            context: "fully connected backward".to_string(),
            expected: fc.out_dim(),
            actual: grad_y.len(),
        });
    }
    grad.w.add_outer(grad_y, x);
    for (gb, gy) in grad.b.iter_mut().zip(grad_y) {
        *gb += gy;
    }
    Ok(fc.w.matvec_transpose(grad_y))
}

pub fn relu_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

/// ReLU gradient gated on the pre-activation input.
pub fn relu_backward(x: &[f64], grad_y: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_y)
        .map(|(&xi, &g)| if xi > 0.0 { g } else { 0.0 })
        .collect()
}

/// Inverted-dropout mask: entries are 0 with probability `p`, else
/// 1/(1-p), so eval time needs no rescale.
pub fn dropout_mask(len: usize, p: f64, rng: &mut impl Rng) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&p));
    if p == 0.0 {
        return vec![1.0; len];
    }
    let keep_scale = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
        .collect()
}

pub fn dropout_forward(x: &[f64], mask: &[f64]) -> Vec<f64> {
    x.iter().zip(mask).map(|(a, m)| a * m).collect()
}

pub fn dropout_backward(grad_y: &[f64], mask: &[f64]) -> Vec<f64> {
    grad_y.iter().zip(mask).map(|(g, m)| g * m).collect()
}

pub fn concat_forward(parts: &[&[f64]]) -> Vec<f64> {
    let mut out = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for part in parts {
        out.extend_from_slice(part);
    }
    out
}

/// Split a concatenated gradient back into per-part gradients.
pub fn concat_backward(grad: &[f64], part_dims: &[usize]) -> Result<Vec<Vec<f64>>> {
    let total: usize = part_dims.iter().sum();
    if grad.len() != total {
        return Err(Error::DimMismatch {
            context: "concat backward".to_string(),
            expected: total,
            actual: grad.len(),
        });
    }
    let mut out = Vec::with_capacity(part_dims.len());
    let mut offset = 0;
    for &dim in part_dims {
        out.push(grad[offset..offset + dim].to_vec());
        offset += dim;
    }
    Ok(out)
}

/// Numerically stable softmax probabilities.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Cross-entropy loss against `label` with the gradient on the logits:
/// softmax(logits) - one_hot(label).
pub fn softmax_ce(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::invalid(
            "label",
            format!("{label} out of range for {} classes", logits.len()),
        ));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln();
    let loss = log_sum_exp - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Radius learning layer forward: entry (h, k) of the output is histogram
/// function h evaluated at its k-th radius replica. Output is laid out
/// function-major: index h * replicas + k.
pub fn radius_forward(bank: &HistFnBank, rho: &Matrix) -> Result<Vec<f64>> {
    if bank.len() != rho.rows() {
        return Err(Error::DimMismatch {
            context: "radius layer forward".to_string(),
            expected: rho.rows(),
            actual: bank.len(),
        });
    }
    let replicas = rho.cols();
    let mut out = Vec::with_capacity(bank.len() * replicas);
    for (h, f) in bank.fns().iter().enumerate() {
        for k in 0..replicas {
            out.push(f.eval(rho.get(h, k)));
        }
    }
    Ok(out)
}

/// Radius learning layer backward: the loss gradient on each radius is the
/// upstream gradient on its output times the histogram function's slope at
/// that radius. Accumulates into `grad_rho`.
pub fn radius_backward(
    bank: &HistFnBank,
    rho: &Matrix,
    grad_out: &[f64],
    grad_rho: &mut Matrix,
) -> Result<()> {
    let replicas = rho.cols();
    if grad_out.len() != bank.len() * replicas {
        return Err(Error::DimMismatch {
            context: "radius layer backward".to_string(),
            expected: bank.len() * replicas,
            actual: grad_out.len(),
        });
    }
    for (h, f) in bank.fns().iter().enumerate() {
        for k in 0..replicas {
            let g = grad_out[h * replicas + k] * f.deriv(rho.get(h, k));
            grad_rho.set(h, k, grad_rho.get(h, k) + g);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::RadiiSet;
    use crate::histfn;
    use crate::net::check::central_diff;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng;

    #[test]
    fn fc_identity_passthrough() {
        let fc = Fc {
            w: Matrix::identity(3),
            b: vec![0.0; 3],
        };
        let x = [1.5, -2.0, 0.25];
        assert_eq!(fc_forward(&fc, &x).unwrap(), x.to_vec());
        let mut grads = Fc::zeros(3, 3);
        let gx = fc_backward(&fc, &x, &[1.0, 2.0, 3.0], &mut grads).unwrap();
        assert_eq!(gx, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn fc_shape_mismatch() {
        let fc = Fc::zeros(2, 3);
        assert!(fc_forward(&fc, &[0.0; 4]).is_err());
        let mut grads = Fc::zeros(2, 3);
        assert!(fc_backward(&fc, &[0.0; 3], &[0.0; 3], &mut grads).is_err());
    }

    #[test]
    fn fc_gradient_check() {
        let mut rng = stream_rng(101, Stream::Init);
        let fc = Fc::glorot(8, 5, &mut rng);
        let x: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let target: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();

        // Loss: 0.5 * ||Wx + b - t||^2, so dL/dy = y - t.
        let loss = |fc: &Fc, x: &[f64]| {
            let y = fc_forward(fc, x).unwrap();
            0.5 * y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        let y = fc_forward(&fc, &x).unwrap();
        let grad_y: Vec<f64> = y.iter().zip(&target).map(|(a, b)| a - b).collect();
        let mut grads = Fc::zeros(8, 5);
        let grad_x = fc_backward(&fc, &x, &grad_y, &mut grads).unwrap();

        // d/dx.
        for i in 0..x.len() {
            let num = central_diff(
                |v| {
                    let mut xp = x.clone();
                    xp[i] = v;
                    loss(&fc, &xp)
                },
                x[i],
                1e-6,
            );
            let rel = (num - grad_x[i]).abs() / grad_x[i].abs().max(1e-8);
            assert!(rel < 1e-6, "grad_x[{i}] rel err {rel}");
        }
        // d/dW and d/db.
        for r in 0..8 {
            for c in 0..5 {
                let num = central_diff(
                    |v| {
                        let mut f = fc.clone();
                        f.w.set(r, c, v);
                        loss(&f, &x)
                    },
                    fc.w.get(r, c),
                    1e-6,
                );
                let rel = (num - grads.w.get(r, c)).abs() / grads.w.get(r, c).abs().max(1e-8);
                assert!(rel < 1e-6, "grad_w[{r},{c}] rel err {rel}");
            }
            let num = central_diff(
                |v| {
                    let mut f = fc.clone();
                    f.b[r] = v;
                    loss(&f, &x)
                },
                fc.b[r],
                1e-6,
            );
            let rel = (num - grads.b[r]).abs() / grads.b[r].abs().max(1e-8);
            assert!(rel < 1e-6, "grad_b[{r}] rel err {rel}");
        }
    }

    #[test]
    fn relu_basic() {
        assert_eq!(relu_forward(&[-1.0, 2.0]), vec![0.0, 2.0]);
        assert_eq!(relu_backward(&[-1.0, 2.0], &[5.0, 5.0]), vec![0.0, 5.0]);
    }

    #[test]
    fn dropout_zero_probability_is_identity() {
        let mut rng = stream_rng(1, Stream::Dropout);
        let mask = dropout_mask(4, 0.0, &mut rng);
        assert_eq!(mask, vec![1.0; 4]);
        assert_eq!(dropout_forward(&[1.0, 2.0, 3.0, 4.0], &mask), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn dropout_expectation_preserved() {
        let mut rng = stream_rng(2, Stream::Dropout);
        let x = 3.0;
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let mask = dropout_mask(1, 0.5, &mut rng);
            sum += dropout_forward(&[x], &mask)[0];
        }
        let mean = sum / n as f64;
        assert!((mean - x).abs() / x < 0.01, "mean {mean}");
    }

    #[test]
    fn concat_roundtrip() {
        let a = [1.0, 2.0];
        let b = [3.0, 4.0, 5.0];
        let joined = concat_forward(&[&a, &b]);
        assert_eq!(joined, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let parts = concat_backward(&joined, &[2, 3]).unwrap();
        assert_eq!(parts, vec![a.to_vec(), b.to_vec()]);
        assert!(concat_backward(&joined, &[2, 2]).is_err());

        let single = concat_forward(&[&a]);
        assert_eq!(single, a.to_vec());
    }

    #[test]
    fn softmax_ce_symmetric_case() {
        let (loss, grad) = softmax_ce(&[0.0, 0.0], 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12);
        assert!((grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_large_logits_stable() {
        let (loss, _) = softmax_ce(&[1000.0, 0.0], 0).unwrap();
        assert!(loss.is_finite());
        assert!(loss < 1e-9);
    }

    #[test]
    fn softmax_ce_label_out_of_range() {
        assert!(softmax_ce(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn softmax_ce_gradient_check() {
        let mut rng = stream_rng(103, Stream::Init);
        let logits: Vec<f64> = (0..10).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = 3;
        let (_, grad) = softmax_ce(&logits, label).unwrap();
        for i in 0..logits.len() {
            let num = central_diff(
                |v| {
                    let mut l = logits.clone();
                    l[i] = v;
                    softmax_ce(&l, label).unwrap().0
                },
                logits[i],
                1e-6,
            );
            let rel = (num - grad[i]).abs() / grad[i].abs().max(1e-8);
            assert!(rel < 1e-6, "logit {i}: rel err {rel}");
        }
    }

    fn toy_bank(rows: usize, rng: &mut impl Rng) -> HistFnBank {
        let radii = RadiiSet::paper_default();
        let values: Vec<Vec<f64>> = (0..rows)
            .map(|_| (0..radii.len()).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        HistFnBank::from_values(&values, &radii).unwrap()
    }

    #[test]
    fn radius_forward_constant_functions() {
        let radii = RadiiSet::paper_default();
        let bank = HistFnBank::from_values(&vec![vec![0.7; radii.len()]; 3], &radii).unwrap();
        let rho = Matrix::from_vec(3, 2, vec![1500.0, 9500.0, 2000.0, 4000.0, 1000.0, 10_000.0]).unwrap();
        let out = radius_forward(&bank, &rho).unwrap();
        assert_eq!(out, vec![0.7; 6]);

        let mut grad_rho = Matrix::zeros(3, 2);
        radius_backward(&bank, &rho, &[1.0; 6], &mut grad_rho).unwrap();
        assert_eq!(grad_rho.data(), &[0.0; 6]);
    }

    #[test]
    fn radius_forward_at_knot_matches_histogram() {
        let radii = RadiiSet::paper_default();
        let values: Vec<f64> = (0..radii.len()).map(|i| i as f64 * 0.1).collect();
        let bank = HistFnBank::from_values(&[values.clone()], &radii).unwrap();
        let rho = Matrix::from_vec(1, 1, vec![radii.as_slice()[4]]).unwrap();
        let out = radius_forward(&bank, &rho).unwrap();
        assert_eq!(out[0], values[4]);
    }

    #[test]
    fn radius_forward_matches_elementwise_eval() {
        let mut rng = stream_rng(104, Stream::Init);
        let bank = toy_bank(5, &mut rng);
        let mut rho = Matrix::zeros(5, 3);
        for v in rho.data_mut() {
            *v = rng.random_range(1000.0..10_000.0);
        }
        let out = radius_forward(&bank, &rho).unwrap();
        for h in 0..5 {
            for k in 0..3 {
                assert_eq!(out[h * 3 + k], bank.get(h).eval(rho.get(h, k)));
            }
        }
    }

    #[test]
    fn radius_backward_single_function_slope() {
        let radii = RadiiSet::new(vec![1000.0, 2000.0]).unwrap();
        let bank = HistFnBank::from_values(&[vec![0.0, 1.0]], &radii).unwrap();
        let rho = Matrix::from_vec(1, 1, vec![1500.0]).unwrap();
        let mut grad_rho = Matrix::zeros(1, 1);
        radius_backward(&bank, &rho, &[2.0], &mut grad_rho).unwrap();
        assert!((grad_rho.get(0, 0) - 2.0 * 1e-3).abs() < 1e-15);
    }

    #[test]
    fn radius_shape_mismatch() {
        let mut rng = stream_rng(105, Stream::Init);
        let bank = toy_bank(2, &mut rng);
        let rho = Matrix::zeros(3, 2);
        assert!(radius_forward(&bank, &rho).is_err());
        let rho = Matrix::zeros(2, 2);
        let mut grad = Matrix::zeros(2, 2);
        assert!(radius_backward(&bank, &rho, &[0.0; 3], &mut grad).is_err());
    }
}
