//! Optimism bonuses: the elliptical potential `φᵀ(Σφφᵀ + λI)⁻¹φ` kept up to
//! date by rank-one inverse updates, and the kernel posterior variance
//! `1 − kᵀ(K + λI)⁻¹k` over stored `ψ` vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cholesky, cholesky_solve, dot, spd_inverse, Matrix, Rng};
use crate::spectral::gaussian_kernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BonusMode {
    Off,
    Elliptical,
    Kernel,
}

impl FromStr for BonusMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(BonusMode::Off),
            "elliptical" => Ok(BonusMode::Elliptical),
            "kernel" => Ok(BonusMode::Kernel),
            other => Err(Error::config(None, format!("bonus must be off, elliptical or kernel, got {other:?}"))),
        }
    }
}

impl fmt::Display for BonusMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BonusMode::Off => "off",
            BonusMode::Elliptical => "elliptical",
            BonusMode::Kernel => "kernel",
        })
    }
}

/// Regularised feature covariance and its inverse.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticalState {
    pub lambda: f64,
    /// `Σφφᵀ + λI`, kept for rebuilding the inverse from scratch.
    pub cov: Matrix,
    pub inv: Matrix,
    pub count: u64,
    /// Times the inverse had to be rebuilt by direct inversion.
    pub rebuilds: u64,
}

impl EllipticalState {
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) || dim == 0 {
            return Err(Error::config(None, format!("elliptical bonus needs lambda > 0 and a positive dimension, got {lambda}, {dim}")));
        }
        Ok(Self {
            lambda,
            cov: Matrix::identity(dim).scale(lambda),
            inv: Matrix::identity(dim).scale(1.0 / lambda),
            count: 0,
            rebuilds: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.inv.rows()
    }
}

/// Stored `ψ` vectors, capped by reservoir sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelState {
    pub lambda: f64,
    pub cap: usize,
    pub points: Vec<Vec<f64>>,
    /// Points offered so far, including those not kept.
    pub seen: u64,
}

impl KernelState {
    pub fn new(lambda: f64, cap: usize) -> Result<Self> {
        if !(lambda >= 0.0) || cap == 0 {
            return Err(Error::config(None, format!("kernel bonus needs lambda ≥ 0 and a positive cap, got {lambda}, {cap}")));
        }
        Ok(Self {
            lambda,
            cap,
            points: Vec::new(),
            seen: 0,
        })
    }

    /// Offers a point to the reservoir.
    pub fn insert(&mut self, psi: &[f64], rng: &mut Rng) -> Result<()> {
        check_finite(psi, "kernel bonus point")?;
        if let Some(p) = self.points.first() {
            if p.len() != psi.len() {
                return Err(Error::dim("kernel bonus point", p.len(), psi.len()));
            }
        }
        self.seen += 1;
        if self.points.len() < self.cap {
            self.points.push(psi.to_vec());
        } else {
            let j = (rng.next_u64() % self.seen) as usize;
            if j < self.cap {
                self.points[j] = psi.to_vec();
            }
        }
        Ok(())
    }

    /// Cholesky factor of `K + λI`, escalating `λ` tenfold once on failure.
    fn factor(&self) -> Result<(Matrix, f64)> {
        let n = self.points.len();
        let mut gram = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let k = gaussian_kernel(&self.points[i], &self.points[j])?;
                gram.set(i, j, k);
                gram.set(j, i, k);
            }
        }
        let attempt = |lambda: f64| {
            let mut g = gram.clone();
            for i in 0..n {
                g.set(i, i, g.get(i, i) + lambda);
            }
            cholesky(&g)
        };
        match attempt(self.lambda) {
            Ok(l) => Ok((l, self.lambda)),
            Err(_) => {
                let escalated = if self.lambda > 0.0 { 10.0 * self.lambda } else { 1e-8 };
                attempt(escalated)
                    .map(|l| (l, escalated))
                    .map_err(|_| Error::Poison(format!("kernel Gram matrix of {n} points is not positive definite even with lambda {escalated}")))
            }
        }
    }
}

/// Running statistics behind the exploration bonus.
#[derive(Clone, Debug, PartialEq)]
pub enum BonusState {
    Off,
    Elliptical(EllipticalState),
    Kernel(KernelState),
}

impl BonusState {
    /// `dim` is the feature dimension for the elliptical form; `cap` bounds
    /// the kernel store.
    pub fn new(mode: BonusMode, dim: usize, lambda: f64, cap: usize) -> Result<Self> {
        Ok(match mode {
            BonusMode::Off => BonusState::Off,
            BonusMode::Elliptical => BonusState::Elliptical(EllipticalState::new(dim, lambda)?),
            BonusMode::Kernel => BonusState::Kernel(KernelState::new(lambda, cap)?),
        })
    }

    pub fn mode(&self) -> BonusMode {
        match self {
            BonusState::Off => BonusMode::Off,
            BonusState::Elliptical(_) => BonusMode::Elliptical,
            BonusState::Kernel(_) => BonusMode::Kernel,
        }
    }

    /// Bonus for each row of `features` (`φ` rows for the elliptical form,
    /// `ψ` rows for the kernel form). All zeros when off.
    pub fn bonus_batch(&self, features: &Matrix) -> Result<Vec<f64>> {
        check_finite(features.data(), "bonus query")?;
        match self {
            BonusState::Off => Ok(vec![0.0; features.rows()]),
            BonusState::Elliptical(st) => {
                if features.cols() != st.dim() {
                    return Err(Error::dim("elliptical bonus query", st.dim(), features.cols()));
                }
                let projected = features.matmul(&st.inv)?;
                Ok((0..features.rows()).map(|i| dot(projected.row(i), features.row(i)).max(0.0)).collect())
            }
            BonusState::Kernel(st) => {
                if st.points.is_empty() {
                    return Ok(vec![1.0; features.rows()]);
                }
                let (l, _) = st.factor()?;
                (0..features.rows()).map(|i| kernel_bonus_with_factor(st, &l, features.row(i))).collect()
            }
        }
    }

    /// Records a visited point.
    pub fn observe(&mut self, features: &[f64], rng: &mut Rng) -> Result<()> {
        match self {
            BonusState::Off => Ok(()),
            BonusState::Elliptical(st) => update_covariance(st, features),
            BonusState::Kernel(st) => st.insert(features, rng),
        }
    }
}

fn check_finite(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Poison(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// `φᵀ Σ⁻¹ φ` from the maintained inverse.
pub fn elliptical_bonus(state: &EllipticalState, phi: &[f64]) -> Result<f64> {
    check_finite(phi, "elliptical bonus query")?;
    let v = state.inv.mul_vec(phi)?;
    Ok(dot(&v, phi).max(0.0))
}

/// Adds `φφᵀ` to the covariance and updates the inverse by Sherman–Morrison,
/// falling back to direct inversion if the result stops looking positive definite.
pub fn update_covariance(state: &mut EllipticalState, phi: &[f64]) -> Result<()> {
    check_finite(phi, "covariance update")?;
    let d = state.dim();
    if phi.len() != d {
        return Err(Error::dim("covariance update", d, phi.len()));
    }
    state.count += 1;
    if phi.iter().all(|&x| x == 0.0) {
        return Ok(());
    }
    for i in 0..d {
        let row = state.cov.row_mut(i);
        for j in 0..d {
            row[j] += phi[i] * phi[j];
        }
    }
    let v = state.inv.mul_vec(phi)?;
    let denom = 1.0 + dot(&v, phi);
    let mut healthy = denom.is_finite() && denom >= 1.0;
    if healthy {
        for i in 0..d {
            let row = state.inv.row_mut(i);
            let vi = v[i] / denom;
            for j in 0..d {
                row[j] -= vi * v[j];
            }
        }
        state.inv.symmetrize();
        healthy = (0..d).all(|i| {
            let x = state.inv.get(i, i);
            x > 0.0 && x.is_finite()
        });
    }
    if !healthy {
        state.inv = spd_inverse(&state.cov)?;
        state.rebuilds += 1;
    }
    Ok(())
}

/// `1 − kᵀ(K + λI)⁻¹k` against the stored points; 1 when the store is empty.
pub fn kernel_bonus(state: &KernelState, psi: &[f64]) -> Result<f64> {
    check_finite(psi, "kernel bonus query")?;
    if state.points.is_empty() {
        return Ok(1.0);
    }
    let (l, _) = state.factor()?;
    kernel_bonus_with_factor(state, &l, psi)
}

fn kernel_bonus_with_factor(state: &KernelState, l: &Matrix, psi: &[f64]) -> Result<f64> {
    let k = state.points.iter().map(|p| gaussian_kernel(p, psi)).collect::<Result<Vec<_>>>()?;
    let alpha = cholesky_solve(l, &k)?;
    Ok((1.0 - dot(&k, &alpha)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn elliptical_reference_values() {
        let mut st = EllipticalState::new(3, 1.0).unwrap();
        let e0 = [1.0, 0.0, 0.0];
        assert_eq!(elliptical_bonus(&st, &e0).unwrap(), 1.0);
        update_covariance(&mut st, &e0).unwrap();
        assert!((elliptical_bonus(&st, &e0).unwrap() - 0.5).abs() < 1e-15);
        let e1 = [0.0, 2.0, 0.0];
        assert_eq!(elliptical_bonus(&st, &e1).unwrap(), 4.0);
        let st2 = EllipticalState::new(3, 4.0).unwrap();
        assert_eq!(elliptical_bonus(&st2, &e1).unwrap(), 1.0);
    }

    #[test]
    fn zero_update_leaves_inverse() {
        let mut st = EllipticalState::new(2, 0.5).unwrap();
        update_covariance(&mut st, &[0.3, 0.1]).unwrap();
        let before = st.inv.clone();
        update_covariance(&mut st, &[0.0, 0.0]).unwrap();
        assert_eq!(st.inv, before);
    }

    #[test]
    fn sherman_morrison_tracks_direct_inverse() {
        let mut rng = seeded_rng(1);
        let mut st = EllipticalState::new(8, 1.0).unwrap();
        for _ in 0..50 {
            update_covariance(&mut st, &rng.normal_vec(8)).unwrap();
        }
        let direct = spd_inverse(&st.cov).unwrap();
        assert!(st.inv.max_abs_diff(&direct).unwrap() < 1e-8);
        assert_eq!(st.rebuilds, 0);
    }

    #[test]
    fn non_finite_inputs_poison() {
        let mut st = EllipticalState::new(2, 1.0).unwrap();
        assert!(matches!(elliptical_bonus(&st, &[f64::NAN, 0.0]), Err(Error::Poison(_))));
        assert!(matches!(update_covariance(&mut st, &[f64::INFINITY, 0.0]), Err(Error::Poison(_))));
    }

    #[test]
    fn kernel_reference_values() {
        let mut rng = seeded_rng(2);
        let mut st = KernelState::new(1.0, 16).unwrap();
        assert_eq!(kernel_bonus(&st, &[0.3, 0.4]).unwrap(), 1.0);
        st.insert(&[0.3, 0.4], &mut rng).unwrap();
        assert!((kernel_bonus(&st, &[0.3, 0.4]).unwrap() - 0.5).abs() < 1e-15);
        assert!(kernel_bonus(&st, &[30.0, -40.0]).unwrap() > 1.0 - 1e-12);
    }

    #[test]
    fn reservoir_respects_cap() {
        let mut rng = seeded_rng(3);
        let mut st = KernelState::new(1.0, 5).unwrap();
        for i in 0..100 {
            st.insert(&[i as f64], &mut rng).unwrap();
        }
        assert_eq!(st.points.len(), 5);
        assert_eq!(st.seen, 100);
    }

    #[test]
    fn singular_gram_escalates_lambda() {
        let mut rng = seeded_rng(4);
        let mut st = KernelState::new(0.0, 8).unwrap();
        st.insert(&[1.0], &mut rng).unwrap();
        st.insert(&[1.0], &mut rng).unwrap();
        let b = kernel_bonus(&st, &[1.0]).unwrap();
        assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn batch_matches_single_queries() {
        let mut rng = seeded_rng(5);
        let mut ell = BonusState::new(BonusMode::Elliptical, 4, 1.0, 0).unwrap();
        let mut ker = BonusState::new(BonusMode::Kernel, 0, 1.0, 32).unwrap();
        for _ in 0..10 {
            ell.observe(&rng.normal_vec(4), &mut rng).unwrap();
            ker.observe(&rng.normal_vec(4), &mut rng).unwrap();
        }
        let q = Matrix::from_fn(3, 4, |_, _| rng.normal());
        let (BonusState::Elliptical(e), BonusState::Kernel(k)) = (&ell, &ker) else { unreachable!() };
        for (i, b) in ell.bonus_batch(&q).unwrap().into_iter().enumerate() {
            assert!((b - elliptical_bonus(e, q.row(i)).unwrap()).abs() < 1e-12);
        }
        for (i, b) in ker.bonus_batch(&q).unwrap().into_iter().enumerate() {
            assert!((b - kernel_bonus(k, q.row(i)).unwrap()).abs() < 1e-12);
        }
        assert_eq!(BonusState::Off.bonus_batch(&q).unwrap(), vec![0.0; 3]);
        assert_eq!("kernel".parse::<BonusMode>().unwrap(), BonusMode::Kernel);
        assert!("ucb".parse::<BonusMode>().is_err());
    }
}
