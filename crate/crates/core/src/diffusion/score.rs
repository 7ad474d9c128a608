use crate::error::{Error, Result};
use crate::numerics::{Activation, Matrix, Mlp, MlpGrads, Params, Rng, Tape};

/// Factorized score model `ψ(s,a)ᵀ ζ(s̃′, β)`.
///
/// `psi` maps the concatenated `(s, a)` to `ℝ^m`. `zeta` maps `s̃′` with the
/// pair `(β, √(1−β))` appended to a flat `m·d` vector read as an `m × d`
/// matrix in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePair {
    pub psi: Mlp,
    pub zeta: Mlp,
    m: usize,
    d: usize,
}

/// Cached values from a batched score evaluation.
#[derive(Clone, Debug)]
pub struct ScoreForward {
    /// `batch × m`.
    pub psi: Matrix,
    /// `batch × (m·d)`.
    pub zeta: Matrix,
    /// `batch × d`.
    pub score: Matrix,
    psi_tape: Tape,
    zeta_tape: Tape,
}

/// Gradients for both networks of a [`ScorePair`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScorePairGrads {
    pub psi: MlpGrads,
    pub zeta: MlpGrads,
}

impl ScorePair {
    /// Networks with one hidden stack each; hidden layers use elu, outputs are linear.
    pub fn new(sa_dim: usize, d: usize, m: usize, psi_hidden: &[usize], zeta_hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut psi_sizes = vec![sa_dim];
        psi_sizes.extend_from_slice(psi_hidden);
        psi_sizes.push(m);
        let mut zeta_sizes = vec![d + 2];
        zeta_sizes.extend_from_slice(zeta_hidden);
        zeta_sizes.push(m * d);
        let psi = Mlp::new(&psi_sizes, Activation::Elu, Activation::Identity, rng)?;
        let zeta = Mlp::new(&zeta_sizes, Activation::Elu, Activation::Identity, rng)?;
        Self::from_nets(psi, zeta, d)
    }

    pub fn from_nets(psi: Mlp, zeta: Mlp, d: usize) -> Result<Self> {
        let m = psi.out_dim();
        if d == 0 || zeta.in_dim() != d + 2 {
            return Err(Error::dim("zeta input (state dim + 2)", d + 2, zeta.in_dim()));
        }
        if zeta.out_dim() != m * d {
            return Err(Error::dim("zeta output (m·d)", m * d, zeta.out_dim()));
        }
        Ok(Self { psi, zeta, m, d })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn state_dim(&self) -> usize {
        self.d
    }

    pub fn sa_dim(&self) -> usize {
        self.psi.in_dim()
    }

    /// `ψ(s,a)` for a batch of concatenated `(s, a)` rows.
    pub fn psi_features(&self, sa: &Matrix) -> Result<Matrix> {
        self.psi.predict(sa)
    }

    /// Batched forward pass with tapes for [`backward`](Self::backward).
    pub fn forward(&self, sa: &Matrix, noisy: &Matrix, betas: &[f64]) -> Result<ScoreForward> {
        let n = sa.rows();
        if noisy.rows() != n || betas.len() != n {
            return Err(Error::Contract(format!(
                "score batch mismatch: {} (s,a) rows, {} noisy rows, {} levels",
                n,
                noisy.rows(),
                betas.len()
            )));
        }
        if noisy.cols() != self.d {
            return Err(Error::Contract(format!("noisy next state has {} coordinates, expected {}", noisy.cols(), self.d)));
        }
        let (psi, psi_tape) = self.psi.forward(sa)?;
        let (zeta, zeta_tape) = self.zeta.forward(&zeta_input(noisy, betas))?;
        let score = contract(&psi, &zeta, self.m, self.d);
        Ok(ScoreForward {
            psi,
            zeta,
            score,
            psi_tape,
            zeta_tape,
        })
    }

    /// Parameter gradients of `Σ ⟨grad_score, score⟩`, plus the gradient
    /// with respect to the `ψ` outputs (added to `extra_psi_grad` when given).
    pub fn backward(&self, fwd: &ScoreForward, grad_score: &Matrix, extra_psi_grad: Option<&Matrix>) -> Result<ScorePairGrads> {
        let (n, m, d) = (fwd.psi.rows(), self.m, self.d);
        if grad_score.shape() != (n, d) {
            return Err(Error::dim("score gradient", format!("({n}, {d})"), format!("{:?}", grad_score.shape())));
        }
        let mut g_psi = match extra_psi_grad {
            Some(g) if g.shape() == (n, m) => g.clone(),
            Some(g) => return Err(Error::dim("extra psi gradient", format!("({n}, {m})"), format!("{:?}", g.shape()))),
            None => Matrix::zeros(n, m),
        };
        let mut g_zeta = Matrix::zeros(n, m * d);
        for b in 0..n {
            let g = grad_score.row(b);
            let z = fwd.zeta.row(b);
            let p = fwd.psi.row(b);
            let gp = g_psi.row_mut(b);
            for k in 0..m {
                let zk = &z[k * d..(k + 1) * d];
                gp[k] += zk.iter().zip(g).map(|(x, y)| x * y).sum::<f64>();
            }
            let gz = g_zeta.row_mut(b);
            for k in 0..m {
                for j in 0..d {
                    gz[k * d + j] = p[k] * g[j];
                }
            }
        }
        let (psi, _) = self.psi.backward(&fwd.psi_tape, &g_psi)?;
        let (zeta, _) = self.zeta.backward(&fwd.zeta_tape, &g_zeta)?;
        Ok(ScorePairGrads { psi, zeta })
    }
}

/// `s̃′` rows with `(β, √(1−β))` appended.
pub fn zeta_input(noisy: &Matrix, betas: &[f64]) -> Matrix {
    let d = noisy.cols();
    Matrix::from_fn(noisy.rows(), d + 2, |i, j| match j {
        _ if j < d => noisy.get(i, j),
        _ if j == d => betas[i],
        _ => (1.0 - betas[i]).sqrt(),
    })
}

fn contract(psi: &Matrix, zeta: &Matrix, m: usize, d: usize) -> Matrix {
    let mut out = Matrix::zeros(psi.rows(), d);
    for b in 0..psi.rows() {
        let p = psi.row(b);
        let z = zeta.row(b);
        let o = out.row_mut(b);
        for k in 0..m {
            let pk = p[k];
            for (oj, zj) in o.iter_mut().zip(&z[k * d..(k + 1) * d]) {
                *oj += pk * zj;
            }
        }
    }
    out
}

/// Single-example score `ψ(s,a)ᵀζ(s̃′,β)`.
pub fn score_eval(sp: &ScorePair, s: &[f64], a: &[f64], noisy: &[f64], beta: f64) -> Result<Vec<f64>> {
    if s.len() + a.len() != sp.sa_dim() {
        return Err(Error::Contract(format!(
            "state and action have {} coordinates together, the score model expects {}",
            s.len() + a.len(),
            sp.sa_dim()
        )));
    }
    let sa = Matrix::row_vector(&[s, a].concat());
    let fwd = sp.forward(&sa, &Matrix::row_vector(noisy), &[beta])?;
    Ok(fwd.score.into_vec())
}

impl Params for ScorePair {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.psi.tensors();
        t.extend(self.zeta.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { psi, zeta, .. } = self;
        let mut t = psi.tensors_mut();
        t.extend(zeta.tensors_mut());
        t
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        prefixed(self.psi.tensor_specs(), self.zeta.tensor_specs())
    }
}

impl Params for ScorePairGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.psi.tensors();
        t.extend(self.zeta.tensors());
        t
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.psi.tensors_mut();
        t.extend(self.zeta.tensors_mut());
        t
    }

    fn tensor_specs(&self) -> Vec<(String, Vec<usize>)> {
        prefixed(self.psi.tensor_specs(), self.zeta.tensor_specs())
    }
}

fn prefixed(psi: Vec<(String, Vec<usize>)>, zeta: Vec<(String, Vec<usize>)>) -> Vec<(String, Vec<usize>)> {
    psi.into_iter()
        .map(|(n, s)| (format!("psi.{n}"), s))
        .chain(zeta.into_iter().map(|(n, s)| (format!("zeta.{n}"), s)))
        .collect()
}
