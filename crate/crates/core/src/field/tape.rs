//! Records per-sample cotangents from one loss evaluation and replays them
//! through both fields and the parameterizers.

use super::FaceModel;
use crate::error::{Error, Result};
use crate::numerics::{Mat3, Vec3};

/// Where a pair's latents come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LatentSource {
    /// `β = P_id(id_code)`, `γ = P_exp(expr_code)`.
    Codes { id_code: Vec<f64>, expr_code: Vec<f64> },
    /// Free latents optimised directly.
    Free,
}

#[derive(Debug, Clone)]
struct Pair {
    beta: Vec<f64>,
    gamma: Vec<f64>,
    source: LatentSource,
}

#[derive(Debug, Clone)]
struct IdentityProbe {
    pair: usize,
    x: Vec3,
    gx: Vec3,
    gj: Option<Mat3>,
}

#[derive(Debug, Clone)]
struct ExpressionProbe {
    pair: usize,
    x: Vec3,
    source: Option<Vec3>,
    gx: Vec3,
    gj: Option<Mat3>,
    g_input: Vec3,
}

/// Gradients for every trainable group of a [`FaceModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub identity: Vec<f64>,
    pub expression: Vec<f64>,
    pub p_id: Vec<f64>,
    pub p_exp: Vec<f64>,
    /// Per pair: `∂L/∂β`, `∂L/∂γ` (after all chaining).
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct GradientTape {
    pairs: Vec<Pair>,
    identity_probes: Vec<IdentityProbe>,
    expression_probes: Vec<ExpressionProbe>,
    latent: Vec<(usize, Vec<f64>, Vec<f64>)>,
    lipschitz: f64,
    loss: f64,
    consumed: bool,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pair(&mut self, beta: Vec<f64>, gamma: Vec<f64>, source: LatentSource) -> usize {
        self.pairs.push(Pair { beta, gamma, source });
        self.pairs.len() - 1
    }

    pub fn beta(&self, pair: usize) -> &[f64] {
        &self.pairs[pair].beta
    }

    pub fn gamma(&self, pair: usize) -> &[f64] {
        &self.pairs[pair].gamma
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Add to the recorded scalar.
    pub fn add_loss(&mut self, value: f64) {
        self.loss += value;
    }

    pub fn loss(&self) -> f64 {
        self.loss
    }

    /// Cotangents on `N_c(x)` and its Jacobian at canonical point `x`.
    pub fn record_identity(&mut self, pair: usize, x: Vec3, gx: Vec3, gj: Option<Mat3>) {
        self.identity_probes.push(IdentityProbe { pair, x, gx, gj });
    }

    /// Cotangents on `N_e(x)` at identity-space point `x`. When `source` is
    /// the canonical point that produced `x` through `N_c`, the input
    /// cotangent (value path plus `g_input`) is chained into `N_c`.
    pub fn record_expression(
        &mut self,
        pair: usize,
        x: Vec3,
        source: Option<Vec3>,
        gx: Vec3,
        gj: Option<Mat3>,
        g_input: Vec3,
    ) {
        self.expression_probes.push(ExpressionProbe { pair, x, source, gx, gj, g_input });
    }

    /// Direct cotangents on a pair's latents.
    pub fn record_latent(&mut self, pair: usize, g_beta: Vec<f64>, g_gamma: Vec<f64>) {
        self.latent.push((pair, g_beta, g_gamma));
    }

    /// Weight on the product of Lipschitz bounds of both parameterizers.
    pub fn record_lipschitz(&mut self, weight: f64) {
        self.lipschitz += weight;
    }

    pub fn backprop(&mut self, model: &FaceModel) -> Result<ModelGradients> {
        if self.consumed {
            return Err(Error::Usage("gradient tape already consumed".into()));
        }
        self.consumed = true;
        let d_id = model.identity.latent_dim;
        let mut g = ModelGradients {
            identity: vec![0.0; model.identity.n_params()],
            expression: vec![0.0; model.expression.n_params()],
            p_id: vec![0.0; model.p_id.n_params()],
            p_exp: vec![0.0; model.p_exp.n_params()],
            beta: self.pairs.iter().map(|p| vec![0.0; p.beta.len()]).collect(),
            gamma: self.pairs.iter().map(|p| vec![0.0; p.gamma.len()]).collect(),
        };
        let joints: Vec<Vec<f64>> = self.pairs.iter().map(|p| FaceModel::joint_latent(&p.beta, &p.gamma)).collect();
        let mut gz = vec![0.0; model.expression.latent_dim];
        for pr in &self.expression_probes {
            gz.iter_mut().for_each(|v| *v = 0.0);
            let g_in =
                model.expression.backward(&pr.x, &joints[pr.pair], &pr.gx, pr.gj.as_ref(), &mut g.expression, &mut gz)?
                    + pr.g_input;
            for q in 0..d_id {
                g.beta[pr.pair][q] += gz[q];
            }
            for q in d_id..gz.len() {
                g.gamma[pr.pair][q - d_id] += gz[q];
            }
            if let Some(src) = pr.source {
                model.identity.backward(&src, &self.pairs[pr.pair].beta, &g_in, None, &mut g.identity, &mut g.beta[pr.pair])?;
            }
        }
        for pr in &self.identity_probes {
            model.identity.backward(
                &pr.x,
                &self.pairs[pr.pair].beta,
                &pr.gx,
                pr.gj.as_ref(),
                &mut g.identity,
                &mut g.beta[pr.pair],
            )?;
        }
        for (pair, gb, gg) in &self.latent {
            for (a, b) in g.beta[*pair].iter_mut().zip(gb) {
                *a += b;
            }
            for (a, b) in g.gamma[*pair].iter_mut().zip(gg) {
                *a += b;
            }
        }
        for (k, p) in self.pairs.iter().enumerate() {
            if let LatentSource::Codes { id_code, expr_code } = &p.source {
                model.p_id.backward(id_code, &g.beta[k], &mut g.p_id);
                model.p_exp.backward(expr_code, &g.gamma[k], &mut g.p_exp);
            }
        }
        if self.lipschitz != 0.0 {
            let a = model.p_id.lipschitz_penalty();
            let b = model.p_exp.lipschitz_penalty();
            model.p_id.lipschitz_backward(self.lipschitz * b, &mut g.p_id);
            model.p_exp.lipschitz_backward(self.lipschitz * a, &mut g.p_exp);
        }
        Ok(g)
    }
}
