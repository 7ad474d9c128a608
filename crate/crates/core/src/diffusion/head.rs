use crate::error::{Error, Result};
use crate::numerics::{fastmath, Activation, Matrix, Params, Rng};

use super::score::ScorePair;

/// Finite-dimensional spectral map `φ_θ(ψ) = elu(W₂ sin(W₁ ψ))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReprHead {
    /// `F × m`.
    pub w1: Matrix,
    /// `d_φ × F`.
    pub w2: Matrix,
}

/// Cached values from [`ReprHead::forward`].
#[derive(Clone, Debug)]
pub struct HeadTape {
    psi: Matrix,
    z1: Matrix,
    h: Matrix,
    phi: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads {
    pub w1: Matrix,
    pub w2: Matrix,
}

impl ReprHead {
    /// `W₁` entries are standard normal; `W₂` entries uniform in `±1/√F`.
    pub fn new(m: usize, fourier: usize, d_phi: usize, rng: &mut Rng) -> Result<Self> {
        if m == 0 || fourier == 0 || d_phi == 0 {
            return Err(Error::Contract(format!("head dimensions must be positive: m={m}, F={fourier}, d_phi={d_phi}")));
        }
        let bound = 1.0 / (fourier as f64).sqrt();
        let w1 = Matrix::from_fn(fourier, m, |_, _| rng.normal());
        let w2 = Matrix::from_fn(d_phi, fourier, |_, _| rng.uniform_range(-bound, bound));
        Ok(Self { w1, w2 })
    }

    pub fn from_weights(w1: Matrix, w2: Matrix) -> Result<Self> {
        if w2.cols() != w1.rows() {
            return Err(Error::dim("head W2 columns", w1.rows(), w2.cols()));
        }
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::Poison("head weights".into()));
        }
        Ok(Self { w1, w2 })
    }

    pub fn psi_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn phi_dim(&self) -> usize {
        self.w2.rows()
    }

    /// `φ` for each row of `psi`.
    pub fn forward(&self, psi: &Matrix) -> Result<(Matrix, HeadTape)> {
        if psi.cols() != self.psi_dim() {
            return Err(Error::dim("head input", self.psi_dim(), psi.cols()));
        }
        let z1 = psi.matmul_t(&self.w1)?;
        let mut h = Matrix::zeros(z1.rows(), z1.cols());
        fastmath::sin_from(h.data_mut(), z1.data());
        let mut phi = h.matmul_t(&self.w2)?;
        Activation::Elu.apply_slice(phi.data_mut());
        let tape = HeadTape {
            psi: psi.clone(),
            z1,
            h,
            phi: phi.clone(),
        };
        Ok((phi, tape))
    }

    pub fn predict(&self, psi: &Matrix) -> Result<Matrix> {
        if psi.cols() != self.psi_dim() {
            return Err(Error::dim("head input", self.psi_dim(), psi.cols()));
        }
        let mut h = psi.matmul_t(&self.w1)?;
        fastmath::sin_in_place(h.data_mut());
        let mut phi = h.matmul_t(&self.w2)?;
        Activation::Elu.apply_slice(phi.data_mut());
        Ok(phi)
    }

    /// Gradients of `Σ ⟨grad_phi, φ⟩` with respect to `W₁`, `W₂` and the `ψ` input.
    pub fn backward(&self, tape: &HeadTape, grad_phi: &Matrix) -> Result<(HeadGrads, Matrix)> {
        let (grads, psi) = self.backward_impl(tape, grad_phi, true)?;
        Ok((grads.expect("weight gradients requested"), psi))
    }

    /// Gradient with respect to the `ψ` input only.
    pub fn backward_input(&self, tape: &HeadTape, grad_phi: &Matrix) -> Result<Matrix> {
        Ok(self.backward_impl(tape, grad_phi, false)?.1)
    }

    fn backward_impl(&self, tape: &HeadTape, grad_phi: &Matrix, want_weights: bool) -> Result<(Option<HeadGrads>, Matrix)> {
        if grad_phi.shape() != tape.phi.shape() {
            return Err(Error::dim("head output gradient", format!("{:?}", tape.phi.shape()), format!("{:?}", grad_phi.shape())));
        }
        let mut g2 = grad_phi.clone();
        Activation::Elu.backward_from_output(g2.data_mut(), tape.phi.data());
        let w2 = want_weights.then(|| g2.t_matmul(&tape.h)).transpose()?;
        let mut g1 = g2.matmul(&self.w2)?;
        fastmath::cos_mul_in_place(g1.data_mut(), tape.z1.data());
        let grads = match w2 {
            Some(w2) => Some(HeadGrads { w1: g1.t_matmul(&tape.psi)?, w2 }),
            None => None,
        };
        let psi = g1.matmul(&self.w1)?;
        Ok((grads, psi))
    }

    pub fn zero_grads(&self) -> HeadGrads {
        HeadGrads {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
        }
    }
}

/// `φ_θ(s, a)` through the score model's `ψ`.
pub fn phi(head: &ReprHead, sp: &ScorePair, s: &[f64], a: &[f64]) -> Result<Vec<f64>> {
    let psi = sp.psi.predict_one(&[s, a].concat())?;
    Ok(head.predict(&Matrix::row_vector(&psi))?.into_vec())
}

impl Params for ReprHead {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w1.data(), self.w2.data()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { w1, w2 } = self;
        vec![w1.data_mut(), w2.data_mut()]
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("w1".into(), vec![self.w1.rows(), self.w1.cols()]),
            ("w2".into(), vec![self.w2.rows(), self.w2.cols()]),
        ]
    }
}

impl Params for HeadGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.w1.data(), self.w2.data()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { w1, w2 } = self;
        vec![w1.data_mut(), w2.data_mut()]
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("w1".into(), vec![self.w1.rows(), self.w1.cols()]),
            ("w2".into(), vec![self.w2.rows(), self.w2.cols()]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use crate::oracles::finite_diff_check;

    #[test]
    fn zero_frequency_collapses() {
        let mut rng = seeded_rng(1);
        let mut head = ReprHead::new(3, 5, 4, &mut rng).unwrap();
        head.w1 = Matrix::zeros(5, 3);
        let phi = head.predict(&Matrix::row_vector(&[0.3, -2.0, 1.0])).unwrap();
        assert!(phi.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn scalar_composition() {
        let head = ReprHead::from_weights(Matrix::row_vector(&[std::f64::consts::FRAC_PI_2]), Matrix::row_vector(&[1.0])).unwrap();
        let phi = head.predict(&Matrix::row_vector(&[1.0])).unwrap();
        assert!((phi.get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn range_and_gradients() {
        let mut rng = seeded_rng(2);
        let head = ReprHead::new(3, 6, 5, &mut rng).unwrap();
        let psi = Matrix::from_fn(4, 3, |_, _| 3.0 * rng.normal());
        let (phi, tape) = head.forward(&psi).unwrap();
        assert!(phi.data().iter().all(|&x| x > -1.0));

        let gout = Matrix::from_fn(4, 5, |_, _| rng.normal());
        let (grads, gpsi) = head.backward(&tape, &gout).unwrap();
        let objective = |h: &ReprHead, p: &Matrix| -> f64 {
            let out = h.predict(p).unwrap();
            out.data().iter().zip(gout.data()).map(|(a, b)| a * b).sum()
        };
        let err = finite_diff_check(
            |flat| {
                let mut h = head.clone();
                h.assign_flat(flat)?;
                Ok(objective(&h, &psi))
            },
            &head.flatten(),
            &grads.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "param grad error {err}");
        let err = finite_diff_check(
            |flat| Ok(objective(&head, &Matrix::from_vec(4, 3, flat.to_vec())?)),
            psi.data(),
            gpsi.data(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "input grad error {err}");
    }
}
