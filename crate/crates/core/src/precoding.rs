//! Partial zero-forcing: per-AP strong/weak UE grouping, ZF precoders toward
//! strong UEs and MR precoders toward weak UEs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use thiserror::Error;

use crate::channel::complex_normal;

#[derive(Debug, Error, PartialEq)]
pub enum PrecodingError {
    #[error("AP {ap}: strong set of size {size} needs at most N-1 = {max} UEs")]
    StrongSetTooLarge { ap: usize, size: usize, max: usize },
    #[error("AP {ap}: estimated channel matrix of the strong set is rank deficient")]
    RankDeficient { ap: usize },
}

/// Strong/weak UE sets per AP with the equivalent indicator tables.
///
/// `delta_s`/`delta_w` are the per-AP views and `zeta_z`/`zeta_m` the per-UE
/// views; both families describe the same partition.
#[derive(Debug, Clone, PartialEq)]
pub struct Grouping {
    pub strong: Vec<Vec<usize>>,
    pub weak: Vec<Vec<usize>>,
    pub delta_s: DMatrix<f64>,
    pub delta_w: DMatrix<f64>,
    pub zeta_z: DMatrix<f64>,
    pub zeta_m: DMatrix<f64>,
    pub n: usize,
}

impl Grouping {
    /// Builds a grouping from strong sets; every other UE is weak.
    pub fn from_strong_sets(strong: Vec<Vec<usize>>, k: usize, n: usize) -> Result<Self, PrecodingError> {
        let m_aps = strong.len();
        let mut delta_s = DMatrix::zeros(m_aps, k);
        let mut strong_sorted = Vec::with_capacity(m_aps);
        let mut weak = Vec::with_capacity(m_aps);
        for (m, set) in strong.into_iter().enumerate() {
            let mut set = set;
            set.sort_unstable();
            set.dedup();
            if !set.is_empty() && set.len() > n.saturating_sub(1) {
                return Err(PrecodingError::StrongSetTooLarge { ap: m, size: set.len(), max: n.saturating_sub(1) });
            }
            for &u in &set {
                delta_s[(m, u)] = 1.0;
            }
            weak.push((0..k).filter(|u| !set.contains(u)).collect());
            strong_sorted.push(set);
        }
        let delta_w = delta_s.map(|d| 1.0 - d);
        Ok(Self {
            strong: strong_sorted,
            weak,
            zeta_z: delta_s.clone(),
            zeta_m: delta_w.clone(),
            delta_s,
            delta_w,
            n,
        })
    }

    pub fn all_weak(m: usize, k: usize, n: usize) -> Self {
        Self::from_strong_sets(vec![Vec::new(); m], k, n).expect("empty strong sets are always valid")
    }

    pub fn all_strong(m: usize, k: usize, n: usize) -> Result<Self, PrecodingError> {
        Self::from_strong_sets(vec![(0..k).collect(); m], k, n)
    }

    pub fn num_aps(&self) -> usize {
        self.strong.len()
    }

    pub fn is_strong(&self, m: usize, k: usize) -> bool {
        self.delta_s[(m, k)] == 1.0
    }

    pub fn strong_size(&self, m: usize) -> usize {
        self.strong[m].len()
    }

    /// Checks the partition and the agreement of both indicator views.
    pub fn is_consistent(&self) -> bool {
        let k = self.delta_s.ncols();
        (0..self.num_aps()).all(|m| {
            self.strong[m].len() + self.weak[m].len() == k
                && self.strong[m].iter().all(|u| !self.weak[m].contains(u))
                && (self.strong[m].is_empty() || self.strong[m].len() < self.n)
        }) && self.delta_s == self.zeta_z
            && self.delta_w == self.zeta_m
            && self.delta_s.iter().zip(self.delta_w.iter()).all(|(s, w)| s + w == 1.0)
    }
}

/// Strong set of each AP: the shortest prefix of UEs sorted by decreasing
/// gain whose share of the total gain reaches `varrho_percent`, capped at N-1.
pub fn pzf_grouping(beta: &DMatrix<f64>, varrho_percent: f64, n: usize) -> Grouping {
    let (m_aps, k) = beta.shape();
    let cap = n.saturating_sub(1);
    let target = varrho_percent / 100.0;
    let strong = (0..m_aps)
        .map(|m| {
            if target <= 0.0 {
                return Vec::new();
            }
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&i, &j| beta[(m, j)].total_cmp(&beta[(m, i)]).then(i.cmp(&j)));
            let total: f64 = beta.row(m).sum();
            let mut cum = 0.0;
            let mut count = k;
            for (c, &u) in order.iter().enumerate() {
                cum += beta[(m, u)];
                if cum >= target * total * (1.0 - 1e-12) {
                    count = c + 1;
                    break;
                }
            }
            order.truncate(count.min(cap));
            order
        })
        .collect();
    Grouping::from_strong_sets(strong, k, n).expect("strong sets are capped at N-1")
}

/// ZF precoders `gamma_k G (G^H G)^{-1} e_k` for the UEs of `strong`, in
/// the order given. `g_hat_m` is N x K with one column per UE.
pub fn zf_precoders(
    g_hat_m: &DMatrix<Complex64>,
    strong: &[usize],
    gamma_m: &[f64],
) -> Result<Vec<DVector<Complex64>>, PrecodingError> {
    zf_precoders_at(g_hat_m, strong, gamma_m, 0)
}

fn zf_precoders_at(
    g_hat_m: &DMatrix<Complex64>,
    strong: &[usize],
    gamma_m: &[f64],
    ap: usize,
) -> Result<Vec<DVector<Complex64>>, PrecodingError> {
    if strong.is_empty() {
        return Ok(Vec::new());
    }
    let n = g_hat_m.nrows();
    if strong.len() >= n {
        return Err(PrecodingError::StrongSetTooLarge { ap, size: strong.len(), max: n - 1 });
    }
    let gs = g_hat_m.select_columns(strong);
    let gram = gs.adjoint() * &gs;
    let chol = gram.clone().cholesky().ok_or(PrecodingError::RankDeficient { ap })?;
    let scale = gram.diagonal().iter().map(|d| d.re).fold(0.0, f64::max);
    if chol.l_dirty().diagonal().iter().any(|d| d.norm_sqr() <= 1e-12 * scale) {
        return Err(PrecodingError::RankDeficient { ap });
    }
    let inv = chol.inverse();
    Ok(strong
        .iter()
        .enumerate()
        .map(|(j, &u)| (&gs * inv.column(j)) * Complex64::from(gamma_m[u]))
        .collect())
}

/// MR precoder: the channel estimate itself.
pub fn mrt_precoder(g_hat_mk: &DVector<Complex64>) -> DVector<Complex64> {
    g_hat_mk.clone()
}

/// Precoding vectors for every (AP, UE) pair; column k of `t[m]` is the ZF
/// vector if k is strong at m and the MR vector otherwise.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub t: Vec<DMatrix<Complex64>>,
}

pub fn build_precoders(
    g_hat: &[DMatrix<Complex64>],
    grouping: &Grouping,
    gamma: &DMatrix<f64>,
) -> Result<PrecoderSet, PrecodingError> {
    let mut t = Vec::with_capacity(g_hat.len());
    for (m, gh) in g_hat.iter().enumerate() {
        let mut tm = gh.clone();
        let gam: Vec<f64> = gamma.row(m).iter().copied().collect();
        let zf = zf_precoders_at(gh, &grouping.strong[m], &gam, m)?;
        for (&u, v) in grouping.strong[m].iter().zip(zf) {
            tm.set_column(u, &v);
        }
        t.push(tm);
    }
    Ok(PrecoderSet { t })
}

/// Sample mean of `t t^H` for the ZF precoder of a UE in a strong set of
/// `s_size` UEs with i.i.d. CN(0, gamma) estimates. The UEs of the set are
/// exchangeable, so every draw contributes all `s_size` precoders.
pub fn zf_outer_product_oracle<R: Rng + ?Sized>(
    n: usize,
    s_size: usize,
    gamma: f64,
    num_draws: usize,
    rng: &mut R,
) -> Result<DMatrix<Complex64>, PrecodingError> {
    let strong: Vec<usize> = (0..s_size).collect();
    let gam = vec![gamma; s_size];
    let mut acc = DMatrix::<Complex64>::zeros(n, n);
    for _ in 0..num_draws {
        let gh = DMatrix::from_fn(n, s_size, |_, _| complex_normal(rng, gamma));
        for t in zf_precoders(&gh, &strong, &gam)? {
            acc += &t * t.adjoint();
        }
    }
    Ok(acc / Complex64::from((num_draws * s_size) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grouping_examples() {
        let beta = DMatrix::from_row_slice(1, 4, &[0.05, 0.9, 0.03, 0.02]);
        let g = pzf_grouping(&beta, 85.0, 8);
        assert_eq!(g.strong[0], vec![1]);
        assert_eq!(g.weak[0], vec![0, 2, 3]);

        let eq = DMatrix::from_element(1, 4, 0.25);
        assert_eq!(pzf_grouping(&eq, 85.0, 8).strong[0].len(), 4);
        assert_eq!(pzf_grouping(&eq, 85.0, 3).strong[0].len(), 2);
        assert!(pzf_grouping(&eq, 0.0, 8).strong[0].is_empty());
        assert!(pzf_grouping(&eq, 85.0, 8).is_consistent());
    }

    #[test]
    fn ties_break_by_index() {
        let beta = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let g = pzf_grouping(&beta, 50.0, 4);
        assert_eq!(g.strong[0], vec![0, 1]);
    }

    #[test]
    fn single_column_zf_is_scaled_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let gh = DMatrix::from_fn(4, 1, |_, _| complex_normal(&mut rng, 1.0));
        let t = &zf_precoders(&gh, &[0], &[0.7]).unwrap()[0];
        let g = gh.column(0);
        let expect = g * Complex64::from(0.7 / g.norm_squared());
        assert!((t - expect).norm() < 1e-12);
        assert!((g.dotc(t) - Complex64::from(0.7)).norm() < 1e-12);
    }

    #[test]
    fn rank_deficient_is_error() {
        let col = DVector::from_element(4, Complex64::new(1.0, 0.5));
        let gh = DMatrix::from_columns(&[col.clone(), col]);
        assert_eq!(zf_precoders(&gh, &[0, 1], &[1.0, 1.0]), Err(PrecodingError::RankDeficient { ap: 0 }));
    }

    #[test]
    fn oversized_strong_set_rejected() {
        assert!(Grouping::all_strong(1, 4, 4).is_err());
        assert!(Grouping::all_strong(1, 3, 4).is_ok());
    }

    #[test]
    fn zf_outer_product_small_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = zf_outer_product_oracle(4, 1, 1.0, 20_000, &mut rng).unwrap();
        let target = DMatrix::<Complex64>::identity(4, 4) * Complex64::from(1.0 / 12.0);
        assert!((&e - &target).norm() / target.norm() < 0.02);
        assert!((e.trace().re - 1.0 / 3.0).abs() < 0.01);
        assert!((&e - e.adjoint()).norm() < 1e-12);
    }
}
