//! Gaussian likelihood and divergence terms, as plain scalars and as taped
//! graph fragments.

use super::tape::{NodeId, Tape};
use crate::error::{contract, Result};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Negative log density of `y` under `N(mu, sigma²)`.
pub fn gaussian_nll(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(contract(format!("sigma must be positive, got {sigma}")));
    }
    let r = (y - mu) / sigma;
    Ok(HALF_LN_2PI + sigma.ln() + 0.5 * r * r)
}

/// `KL(N(mu_q, sigma_q²) ‖ N(mu_p, sigma_p²))` summed over independent dimensions.
pub fn kl_diag_gaussian(mu_q: &[f64], sigma_q: &[f64], mu_p: &[f64], sigma_p: &[f64]) -> Result<f64> {
    let n = mu_q.len();
    if sigma_q.len() != n || mu_p.len() != n || sigma_p.len() != n {
        return Err(contract("KL operands must have equal lengths"));
    }
    if sigma_q.iter().chain(sigma_p).any(|s| !(*s > 0.0)) {
        return Err(contract("KL sigmas must be positive"));
    }
    let mut kl = 0.0;
    for i in 0..n {
        let (sq, sp) = (sigma_q[i], sigma_p[i]);
        let d = mu_q[i] - mu_p[i];
        kl += (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
    }
    // Rounding can leave a tiny negative residue for identical inputs.
    if kl < 0.0 && kl > -1e-12 {
        kl = 0.0;
    }
    Ok(kl)
}

/// Mean Gaussian NLL over matching `[n,1]` (or equal-shape) nodes.
pub fn taped_mean_nll(tape: &mut Tape, y: NodeId, mu: NodeId, sigma: NodeId) -> NodeId {
    let resid = tape.sub(y, mu);
    let z = tape.div(resid, sigma);
    let z2 = tape.mul(z, z);
    let half_z2 = tape.scale(z2, 0.5);
    let log_sigma = tape.log(sigma);
    let per = tape.add(half_z2, log_sigma);
    let per = tape.offset(per, HALF_LN_2PI);
    tape.mean(per)
}

/// Taped diagonal-Gaussian KL; all four nodes share a shape.
pub fn taped_kl(tape: &mut Tape, mu_q: NodeId, sigma_q: NodeId, mu_p: NodeId, sigma_p: NodeId) -> NodeId {
    let log_ratio = {
        let lp = tape.log(sigma_p);
        let lq = tape.log(sigma_q);
        tape.sub(lp, lq)
    };
    let sq2 = tape.mul(sigma_q, sigma_q);
    let d = tape.sub(mu_q, mu_p);
    let d2 = tape.mul(d, d);
    let num = tape.add(sq2, d2);
    let sp2 = tape.mul(sigma_p, sigma_p);
    let den = tape.scale(sp2, 2.0);
    let frac = tape.div(num, den);
    let per = tape.add(log_ratio, frac);
    let per = tape.offset(per, -0.5);
    tape.sum(per)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Tensor;

    #[test]
    fn nll_reference_values() {
        assert!((gaussian_nll(0.0, 0.0, 1.0).unwrap() - 0.918939).abs() < 1e-6);
        assert!((gaussian_nll(1.0, 0.0, 1.0).unwrap() - 1.418939).abs() < 1e-6);
        assert!(gaussian_nll(0.0, 0.0, 0.0).is_err());
        assert!(gaussian_nll(0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn kl_reference_values() {
        assert_eq!(kl_diag_gaussian(&[0.3], &[1.7], &[0.3], &[1.7]).unwrap(), 0.0);
        assert!((kl_diag_gaussian(&[1.0], &[1.0], &[0.0], &[1.0]).unwrap() - 0.5).abs() < 1e-12);
        assert!((kl_diag_gaussian(&[0.0], &[2.0], &[0.0], &[1.0]).unwrap() - 0.806853).abs() < 1e-6);
        assert!(kl_diag_gaussian(&[0.0, 1.0], &[1.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn nll_mu_gradient_is_minus_one() {
        let mut tape = Tape::new();
        let y = tape.leaf(Tensor::scalar(1.0));
        let mu = tape.leaf(Tensor::scalar(0.0));
        let s = tape.leaf(Tensor::scalar(1.0));
        let loss = taped_mean_nll(&mut tape, y, mu, s);
        assert!((tape.value(loss).item() - 1.418939).abs() < 1e-6);
        let g = tape.backward(loss).unwrap();
        assert!((g.get(mu).unwrap().item() + 1.0).abs() < 1e-12);
        let h = 1e-5;
        let fd = (gaussian_nll(1.0, h, 1.0).unwrap() - gaussian_nll(1.0, -h, 1.0).unwrap()) / (2.0 * h);
        assert!((fd + 1.0).abs() < 1e-8);
    }

    #[test]
    fn taped_kl_matches_scalar() {
        let (mq, sq, mp, sp) = ([0.2, -1.0], [0.5, 1.3], [0.0, 0.4], [1.0, 0.7]);
        let mut tape = Tape::new();
        let ids: Vec<_> = [&mq, &sq, &mp, &sp]
            .iter()
            .map(|v| tape.leaf(Tensor::row(&v[..])))
            .collect();
        let kl = taped_kl(&mut tape, ids[0], ids[1], ids[2], ids[3]);
        let want = kl_diag_gaussian(&mq, &sq, &mp, &sp).unwrap();
        assert!((tape.value(kl).item() - want).abs() < 1e-12);
    }
}
