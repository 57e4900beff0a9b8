//! Small-scale fading, array responses and MMSE channel estimates.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::model::NetworkRealization;

/// Half-wavelength ULA steering vector, entry n is `exp(j pi n sin theta)`.
pub fn array_response(theta: f64, n: usize) -> DVector<Complex64> {
    let phase = std::f64::consts::PI * theta.sin();
    DVector::from_fn(n, |i, _| Complex64::from_polar(1.0, phase * i as f64))
}

/// Variance of the MMSE channel estimate.
pub fn mmse_gamma(beta: f64, tau_t: usize, rho_t: f64) -> f64 {
    let snr = tau_t as f64 * rho_t;
    snr * beta * beta / (snr * beta + 1.0)
}

/// One circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// True channels, estimates and estimation errors for one coherence block.
///
/// Each vector of matrices is indexed by AP; each matrix is N x K with one
/// column per UE.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    pub g: Vec<DMatrix<Complex64>>,
    pub g_hat: Vec<DMatrix<Complex64>>,
    pub g_tilde: Vec<DMatrix<Complex64>>,
}

/// Draws the estimate and the independent error, then composes the channel.
pub fn draw_channels<R: Rng + ?Sized>(real: &NetworkRealization, rng: &mut R) -> ChannelRealization {
    let (m_aps, k_ues, n) = (real.num_aps(), real.num_ues(), real.n);
    let mut g = Vec::with_capacity(m_aps);
    let mut g_hat = Vec::with_capacity(m_aps);
    let mut g_tilde = Vec::with_capacity(m_aps);
    for m in 0..m_aps {
        let mut gh = DMatrix::zeros(n, k_ues);
        let mut ge = DMatrix::zeros(n, k_ues);
        for k in 0..k_ues {
            let gam = real.gamma[(m, k)];
            let err = (real.beta[(m, k)] - gam).max(0.0);
            for i in 0..n {
                gh[(i, k)] = complex_normal(rng, gam);
                ge[(i, k)] = complex_normal(rng, err);
            }
        }
        g.push(&gh + &ge);
        g_hat.push(gh);
        g_tilde.push(ge);
    }
    ChannelRealization { g, g_hat, g_tilde }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn array_response_examples() {
        let a = array_response(0.0, 4);
        assert!(a.iter().all(|z| (z - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let b = array_response(std::f64::consts::FRAC_PI_2, 2);
        assert!((b[1] - Complex64::new(-1.0, 0.0)).norm() < 1e-15);
        let c = array_response(0.37, 9);
        assert!((c.dotc(&c).re - 9.0).abs() < 1e-12);
    }

    #[test]
    fn mmse_examples() {
        assert!((mmse_gamma(0.5, 4, 2.0) - 0.4).abs() < 1e-15);
        assert_eq!(mmse_gamma(0.0, 4, 2.0), 0.0);
        assert!((mmse_gamma(0.3, 4, 1e12) / 0.3 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn channel_statistics() {
        let beta = DMatrix::from_row_slice(1, 2, &[2.0, 0.5]);
        let theta = DMatrix::zeros(1, 1);
        let real = NetworkRealization::from_coefficients(2, beta, theta, 1.0, 1.0, 200, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 50_000;
        let (mut vg, mut vh, mut ve, mut cross) = ([0.0; 2], [0.0; 2], [0.0; 2], Complex64::new(0.0, 0.0));
        for _ in 0..draws {
            let ch = draw_channels(&real, &mut rng);
            for k in 0..2 {
                for i in 0..2 {
                    vg[k] += ch.g[0][(i, k)].norm_sqr();
                    vh[k] += ch.g_hat[0][(i, k)].norm_sqr();
                    ve[k] += ch.g_tilde[0][(i, k)].norm_sqr();
                    assert_eq!(ch.g[0][(i, k)], ch.g_hat[0][(i, k)] + ch.g_tilde[0][(i, k)]);
                }
            }
            cross += ch.g_hat[0][(0, 0)] * ch.g_tilde[0][(0, 0)].conj();
        }
        let cnt = (2 * draws) as f64;
        for k in 0..2 {
            assert!((vg[k] / cnt / real.beta[(0, k)] - 1.0).abs() < 0.02);
            assert!((vh[k] / cnt / real.gamma[(0, k)] - 1.0).abs() < 0.02);
            assert!((ve[k] / cnt / (real.beta[(0, k)] - real.gamma[(0, k)]) - 1.0).abs() < 0.03);
        }
        // Standard error of the correlation estimate is sqrt(gamma (beta-gamma) / draws).
        let se = (real.gamma[(0, 0)] * (real.beta[(0, 0)] - real.gamma[(0, 0)]) / draws as f64).sqrt();
        assert!((cross / draws as f64).norm() < 3.0 * se);
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let beta = DMatrix::from_element(3, 2, 1e-6);
        let real = NetworkRealization::from_coefficients(4, beta, DMatrix::zeros(3, 1), 1e9, 1e9, 200, 3);
        let a = draw_channels(&real, &mut ChaCha8Rng::seed_from_u64(5));
        let b = draw_channels(&real, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a.g, b.g);
        assert_eq!(a.g_hat, b.g_hat);
    }
}
