//! Random Fourier features and numerical checks of the chain from an
//! energy-based transition model `exp(ψᵀν)/Z` to its spectral form.
//!
//! The identity `exp(ψᵀν) = e^{‖ψ‖²/2} k(ψ,ν) e^{‖ν‖²/2}` with the Gaussian
//! kernel `k`, combined with Bochner's theorem, writes the transition density
//! as an inner product of random features of `ψ(s,a)` and `ν(s′)`. The
//! validators below work on one-dimensional next-state domains where the
//! partition function can be computed by quadrature.

use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Rng};

/// `exp(−‖x − y‖²/2)`.
pub fn gaussian_kernel(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("gaussian_kernel", x.len(), y.len()));
    }
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-0.5 * d2).exp())
}

/// Frozen frequencies `ω_i ∼ N(0, I)`, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct RffBank {
    omegas: Matrix,
}

impl RffBank {
    pub fn new(n: usize, m: usize, rng: &mut Rng) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Contract(format!("feature bank needs positive sizes, got N={n}, m={m}")));
        }
        Ok(Self {
            omegas: Matrix::from_fn(n, m, |_, _| rng.normal()),
        })
    }

    pub fn from_omegas(omegas: Matrix) -> Result<Self> {
        if omegas.rows() == 0 || omegas.cols() == 0 {
            return Err(Error::Contract("feature bank needs at least one frequency".into()));
        }
        Ok(Self { omegas })
    }

    pub fn len(&self) -> usize {
        self.omegas.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.omegas.rows() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.omegas.cols()
    }

    pub fn omegas(&self) -> &Matrix {
        &self.omegas
    }
}

/// `(1/√N)·[cos ω_iᵀx …, sin ω_iᵀx …]`, length `2N`.
pub fn rff_features(bank: &RffBank, x: &[f64]) -> Result<Vec<f64>> {
    let proj = bank.omegas.mul_vec(x)?;
    let scale = 1.0 / (bank.len() as f64).sqrt();
    let mut out = Vec::with_capacity(2 * proj.len());
    out.extend(proj.iter().map(|p| scale * p.cos()));
    out.extend(proj.iter().map(|p| scale * p.sin()));
    Ok(out)
}

type PsiMap = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type NuMap = Box<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Energy-based transition model `P(s′|s,a) ∝ exp(ψ(s,a)ᵀν(s′))` over a
/// bounded interval of scalar next states.
pub struct EbmFactorization {
    psi: PsiMap,
    nu: NuMap,
    dim: usize,
    domain: (f64, f64),
}

impl fmt::Debug for EbmFactorization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EbmFactorization").field("dim", &self.dim).field("domain", &self.domain).finish()
    }
}

impl EbmFactorization {
    pub fn new(dim: usize, domain: (f64, f64), psi: PsiMap, nu: NuMap) -> Result<Self> {
        if dim == 0 || !(domain.0 < domain.1) || !domain.0.is_finite() || !domain.1.is_finite() {
            return Err(Error::Contract(format!("invalid factorization: dim {dim}, domain {domain:?}")));
        }
        Ok(Self { psi, nu, dim, domain })
    }

    /// `ψ ≡ 0` on `[−5, 5]`: the model is uniform.
    pub fn uniform_fixture() -> Self {
        Self::new(2, (-5.0, 5.0), Box::new(|_| vec![0.0, 0.0]), Box::new(|x| vec![0.5 * x.sin(), 0.3 * x.cos()])).expect("valid fixture")
    }

    /// Smooth random fixture with two-dimensional codomain on `[−5, 5]`;
    /// `(s, a)` inputs are two-dimensional.
    pub fn random_fixture(rng: &mut Rng) -> Self {
        let w: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let freq = [rng.uniform_range(0.5, 1.5), rng.uniform_range(0.5, 1.5)];
        let phase = [rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0)];
        let psi: PsiMap = Box::new(move |sa| vec![0.6 * (w[0] * sa[0] + w[1] * sa[1]).tanh(), 0.6 * (w[2] * sa[0] + w[3] * sa[1]).tanh()]);
        let nu: NuMap = Box::new(move |x| vec![0.6 * (freq[0] * x + phase[0]).sin(), 0.6 * (freq[1] * x + phase[1]).cos()]);
        Self::new(2, (-5.0, 5.0), psi, nu).expect("valid fixture")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn psi(&self, sa: &[f64]) -> Result<Vec<f64>> {
        self.checked((self.psi)(sa), "psi")
    }

    pub fn nu(&self, s_next: f64) -> Result<Vec<f64>> {
        self.checked((self.nu)(s_next), "nu")
    }

    fn checked(&self, v: Vec<f64>, which: &str) -> Result<Vec<f64>> {
        if v.len() != self.dim {
            return Err(Error::dim(format!("factorization {which} output"), self.dim, v.len()));
        }
        Ok(v)
    }

    /// `exp(ψᵀν)` without normalisation.
    pub fn unnormalized(&self, sa: &[f64], s_next: f64) -> Result<f64> {
        let p = self.psi(sa)?;
        let n = self.nu(s_next)?;
        Ok(p.iter().zip(&n).map(|(a, b)| a * b).sum::<f64>().exp())
    }

    /// Partition function by composite Simpson quadrature on `points` nodes.
    pub fn partition(&self, sa: &[f64], points: usize) -> Result<f64> {
        let grid = simpson_grid(self.domain, points)?;
        let values = grid.nodes.iter().map(|&x| self.unnormalized(sa, x)).collect::<Result<Vec<_>>>()?;
        let z = grid.integrate(&values);
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Numeric(format!("partition quadrature returned {z}")));
        }
        Ok(z)
    }
}

/// Nodes and weights of composite Simpson's rule on an interval.
#[derive(Clone, Debug)]
pub struct SimpsonGrid {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl SimpsonGrid {
    pub fn integrate(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }
}

/// Composite Simpson rule; `points` must be odd and at least 3.
pub fn simpson_grid(domain: (f64, f64), points: usize) -> Result<SimpsonGrid> {
    if points < 3 || points % 2 == 0 {
        return Err(Error::Numeric(format!("Simpson's rule needs an odd node count ≥ 3, got {points}")));
    }
    let h = (domain.1 - domain.0) / (points - 1) as f64;
    let nodes = (0..points).map(|i| domain.0 + h * i as f64).collect();
    let weights = (0..points)
        .map(|i| {
            let c = if i == 0 || i == points - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect();
    Ok(SimpsonGrid { nodes, weights })
}

/// Worst relative error between the normalised density `exp(ψᵀν)/Z` and
/// its random-feature estimate `e^{‖ψ‖²/2}⟨f(ψ), f(ν)⟩e^{‖ν‖²/2}/Z` over
/// `samples` of `((s,a), s′)`. `Z` uses `points` quadrature nodes.
pub fn verify_spectral_identity(fact: &EbmFactorization, bank: &RffBank, samples: &[(Vec<f64>, f64)], points: usize) -> Result<f64> {
    check_bank(fact, bank)?;
    let mut worst = 0.0f64;
    for (sa, s_next) in samples {
        let z = fact.partition(sa, points)?;
        let exact = fact.unnormalized(sa, *s_next)? / z;
        let p = fact.psi(sa)?;
        let n = fact.nu(*s_next)?;
        let k_hat: f64 = rff_features(bank, &p)?.iter().zip(rff_features(bank, &n)?).map(|(a, b)| a * b).sum();
        let estimate = half_sq_exp(&p) * k_hat * half_sq_exp(&n) / z;
        worst = worst.max((estimate - exact).abs() / exact);
    }
    Ok(worst)
}

/// Worst relative gap between the quadrature partition function and its
/// linear form `⟨ρ(s,a), u⟩`, where `ρ = e^{‖ψ‖²/2} f(ψ)` and `u` integrates
/// `e^{‖ν‖²/2} f(ν(s′))` over the domain.
pub fn partition_linear_check(fact: &EbmFactorization, bank: &RffBank, sa_points: &[Vec<f64>], points: usize) -> Result<f64> {
    check_bank(fact, bank)?;
    let u = integrated_mu(fact, bank, points)?;
    let mut worst = 0.0f64;
    for sa in sa_points {
        let z = fact.partition(sa, points)?;
        let p = fact.psi(sa)?;
        let rho = rff_features(bank, &p)?;
        let linear = half_sq_exp(&p) * rho.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
        worst = worst.max((linear - z).abs() / z);
    }
    Ok(worst)
}

/// `u = ∫ e^{‖ν(s′)‖²/2} f(ν(s′)) ds′` by Simpson's rule.
pub fn integrated_mu(fact: &EbmFactorization, bank: &RffBank, points: usize) -> Result<Vec<f64>> {
    let grid = simpson_grid(fact.domain(), points)?;
    let mut u = vec![0.0; 2 * bank.len()];
    for (x, w) in grid.nodes.iter().zip(&grid.weights) {
        let n = fact.nu(*x)?;
        let scale = w * half_sq_exp(&n);
        for (ui, fi) in u.iter_mut().zip(rff_features(bank, &n)?) {
            *ui += scale * fi;
        }
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("feature integral is not finite".into()));
    }
    Ok(u)
}

fn half_sq_exp(v: &[f64]) -> f64 {
    (0.5 * v.iter().map(|x| x * x).sum::<f64>()).exp()
}

fn check_bank(fact: &EbmFactorization, bank: &RffBank) -> Result<()> {
    if bank.input_dim() != fact.dim() {
        return Err(Error::dim("feature bank input", fact.dim(), bank.input_dim()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    #[test]
    fn kernel_values() {
        assert_eq!(gaussian_kernel(&[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert!((gaussian_kernel(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(gaussian_kernel(&[1.0], &[1.0, 2.0]).is_err());
        let mut rng = seeded_rng(1);
        for _ in 0..50 {
            let x = rng.normal_vec(3);
            let y = rng.normal_vec(3);
            assert_eq!(gaussian_kernel(&x, &y).unwrap(), gaussian_kernel(&y, &x).unwrap());
        }
    }

    #[test]
    fn kernel_decreases_with_distance() {
        let mut rng = seeded_rng(2);
        let mut dists: Vec<f64> = (0..200).map(|_| rng.uniform_range(0.0, 6.0)).collect();
        dists.sort_by(f64::total_cmp);
        dists.dedup();
        let values: Vec<f64> = dists.iter().map(|d| gaussian_kernel(&[0.0, 0.0], &[*d, 0.0]).unwrap()).collect();
        assert!(values.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn features_have_unit_norm() {
        let mut rng = seeded_rng(3);
        let bank = RffBank::new(64, 3, &mut rng).unwrap();
        for _ in 0..20 {
            let f = rff_features(&bank, &rng.normal_vec(3)).unwrap();
            assert_eq!(f.len(), 128);
            let n2: f64 = f.iter().map(|x| x * x).sum();
            assert!((n2 - 1.0).abs() < 1e-12);
        }
        let zero = RffBank::from_omegas(Matrix::zeros(1, 2)).unwrap();
        assert_eq!(rff_features(&zero, &[0.7, -3.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn identity_is_exact_at_the_kernel_peak() {
        let psi = [0.4, -0.2];
        let lhs = psi.iter().map(|x| x * x).sum::<f64>().exp();
        let rhs = half_sq_exp(&psi) * gaussian_kernel(&psi, &psi).unwrap() * half_sq_exp(&psi);
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn simpson_integrates_cubics_exactly() {
        let g = simpson_grid((-1.0, 2.0), 7).unwrap();
        let vals: Vec<f64> = g.nodes.iter().map(|x| x * x * x - 2.0 * x + 1.0).collect();
        // ∫_{-1}^{2} (x³ − 2x + 1) dx = 15/4 − 3 + 3.
        assert!((g.integrate(&vals) - 3.75).abs() < 1e-12);
        assert!(simpson_grid((0.0, 1.0), 4).is_err());
    }

    #[test]
    fn uniform_fixture_partition_is_domain_length() {
        let fact = EbmFactorization::uniform_fixture();
        assert!((fact.partition(&[0.1, 0.2], 2001).unwrap() - 10.0).abs() < 1e-12);
        let mut rng = seeded_rng(4);
        let bank = RffBank::new(8192, 2, &mut rng).unwrap();
        let resid = partition_linear_check(&fact, &bank, &[vec![0.0, 0.0], vec![1.0, -1.0]], 2001).unwrap();
        assert!(resid < 0.02, "{resid}");
    }
}
