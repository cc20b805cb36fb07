//! Likelihood losses.

use crate::error::{dim_err, Result};

use super::tape::Backend;
use super::tensor::Tensor;

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// `0.5·ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Diagonal Gaussian negative log-likelihood summed over dimensions, with
/// `log_std` clamped to `[LOG_STD_MIN, LOG_STD_MAX]` first.
pub fn gaussian_nll(mean: &[f64], log_std: &[f64], target: &[f64]) -> Result<f64> {
    if mean.len() != log_std.len() || mean.len() != target.len() {
        return Err(dim_err!("nll widths {} / {} / {}", mean.len(), log_std.len(), target.len()));
    }
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(target)
        .map(|((&m, &s), &t)| {
            let s = s.clamp(LOG_STD_MIN, LOG_STD_MAX);
            let z = (t - m) * (-s).exp();
            0.5 * z * z + s + HALF_LN_2PI
        })
        .sum())
}

/// Per-row Gaussian NLL `[batch, d] -> [batch, 1]` on any backend.
pub fn gaussian_nll_rows<B: Backend>(b: &mut B, mean: &B::V, log_std: &B::V, target: &B::V) -> B::V {
    let s = b.clamp(log_std, LOG_STD_MIN, LOG_STD_MAX);
    let inv = b.scale(&s, -1.0);
    let inv = b.exp(&inv);
    let diff = b.sub(target, mean);
    let z = b.mul(&diff, &inv);
    let z2 = b.square(&z);
    let half = b.scale(&z2, 0.5);
    let per = b.add(&half, &s);
    let per = b.add_scalar(&per, HALF_LN_2PI);
    b.sum_cols(&per)
}

/// Per-row squared error `[batch, d] -> [batch, 1]`.
pub fn squared_error_rows<B: Backend>(b: &mut B, mean: &B::V, target: &B::V) -> B::V {
    let diff = b.sub(target, mean);
    let sq = b.square(&diff);
    b.sum_cols(&sq)
}

/// Binary cross-entropy from logits, elementwise: `softplus(z) − y·z`.
pub fn bce_with_logits<B: Backend>(b: &mut B, logits: &B::V, targets: &Tensor) -> B::V {
    let sp = b.unary(logits, super::tape::Unary::Softplus);
    let y = b.constant(targets.clone());
    let yz = b.mul(&y, logits);
    b.sub(&sp, &yz)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::{Tape, Var};

    #[test]
    fn analytic_values() {
        let v = gaussian_nll(&[0.0], &[0.0], &[0.0]).unwrap();
        assert!((v - 0.918939).abs() < 1e-6);
        let v = gaussian_nll(&[1.5, -2.0], &[0.3, 0.3], &[1.5, -2.0]).unwrap();
        assert!((v - 2.0 * (0.3 + HALF_LN_2PI)).abs() < 1e-12);
        let v = gaussian_nll(&[1.0], &[2f64.ln()], &[3.0]).unwrap();
        assert!((v - 2.112086).abs() < 1e-6);
    }

    #[test]
    fn clamps_log_std() {
        let a = gaussian_nll(&[0.0], &[-50.0], &[1e-3]).unwrap();
        let b = gaussian_nll(&[0.0], &[LOG_STD_MIN], &[1e-3]).unwrap();
        assert_eq!(a, b);
        assert!(gaussian_nll(&[0.0], &[0.0, 1.0], &[0.0]).is_err());
    }

    #[test]
    fn gradient_changes_sign_at_target() {
        let grad_at = |m: f64| {
            let mut tape = Tape::new();
            let mean: Var = tape.param(&Tensor::row(&[m]).unwrap());
            let ls = tape.constant(Tensor::row(&[0.4]).unwrap());
            let t = tape.constant(Tensor::row(&[1.25]).unwrap());
            let l = gaussian_nll_rows(&mut tape, &mean, &ls, &t);
            let l = tape.sum(&l);
            tape.backward(l).unwrap().get(mean).unwrap().item()
        };
        assert!(grad_at(1.0) < 0.0);
        assert!(grad_at(1.5) > 0.0);
        assert_eq!(grad_at(1.25), 0.0);
    }

    #[test]
    fn backend_matches_scalar_function() {
        let mut tape = Tape::new();
        let m = tape.constant(Tensor::row(&[1.0, 0.2]).unwrap());
        let s = tape.constant(Tensor::row(&[2f64.ln(), -9.0]).unwrap());
        let t = tape.constant(Tensor::row(&[3.0, 0.1]).unwrap());
        let l = gaussian_nll_rows(&mut tape, &m, &s, &t);
        let expect = gaussian_nll(&[1.0, 0.2], &[2f64.ln(), -9.0], &[3.0, 0.1]).unwrap();
        assert!((tape.value(&l).item() - expect).abs() < 1e-12);
    }
}
