use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DeformationField, FieldConfig, LatentParameterizer};
use crate::error::{Error, Result};
use crate::geometry::{Aabb, TriMesh};
use crate::numerics::{Mat3, Vec3};
use crate::phantom::hex_digest;

pub const CHECKPOINT_FORMAT: &str = "physface-checkpoint/1";

/// Identity field `N_c` (canonical → neutral identity), expression field
/// `N_e` (neutral identity → expression) and the two code parameterizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceModel {
    pub config: FieldConfig,
    pub identity: DeformationField,
    pub expression: DeformationField,
    pub p_id: LatentParameterizer,
    pub p_exp: LatentParameterizer,
}

impl FaceModel {
    pub fn new(cfg: &FieldConfig, canonical_bbox: &Aabb, id_code_dim: usize, expr_code_dim: usize, seed: u64) -> Result<Self> {
        if cfg.id_dim == 0 || cfg.expr_dim == 0 {
            return Err(Error::InvalidInput("latent dimensions must be positive".into()));
        }
        Ok(Self {
            config: cfg.clone(),
            identity: DeformationField::from_config(cfg, canonical_bbox, cfg.id_dim, seed)?,
            expression: DeformationField::from_config(cfg, canonical_bbox, cfg.id_dim + cfg.expr_dim, seed ^ 0x5151)?,
            p_id: LatentParameterizer::new(id_code_dim, cfg.hidden, cfg.id_dim, seed ^ 0xa1),
            p_exp: LatentParameterizer::new(expr_code_dim, cfg.hidden, cfg.expr_dim, seed ^ 0xb2),
        })
    }

    pub fn latents(&self, id_code: &[f64], expr_code: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (self.p_id.forward(id_code), self.p_exp.forward(expr_code))
    }

    pub fn joint_latent(beta: &[f64], gamma: &[f64]) -> Vec<f64> {
        beta.iter().chain(gamma).copied().collect()
    }

    pub fn identity_point(&self, xc: &Vec3, beta: &[f64]) -> Result<Vec3> {
        self.identity.eval(xc, beta)
    }

    /// Canonical point through both fields.
    pub fn full_point(&self, xc: &Vec3, beta: &[f64], gamma: &[f64]) -> Result<Vec3> {
        let x0 = self.identity.eval(xc, beta)?;
        self.expression.eval(&x0, &Self::joint_latent(beta, gamma))
    }

    /// Expression-field Jacobian at an identity-space point.
    pub fn expression_jacobian(&self, x0: &Vec3, beta: &[f64], gamma: &[f64]) -> Result<Mat3> {
        self.expression.jacobian(x0, &Self::joint_latent(beta, gamma))
    }

    pub fn map_identity_mesh(&self, canonical: &TriMesh, beta: &[f64]) -> Result<TriMesh> {
        let v = canonical.vertices.iter().map(|x| self.identity.eval(x, beta)).collect::<Result<Vec<_>>>()?;
        canonical.with_vertices(v)
    }

    pub fn map_expression_mesh(&self, neutral: &TriMesh, beta: &[f64], gamma: &[f64]) -> Result<TriMesh> {
        let z = Self::joint_latent(beta, gamma);
        let v = neutral.vertices.iter().map(|x| self.expression.eval(x, &z)).collect::<Result<Vec<_>>>()?;
        neutral.with_vertices(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentEntry {
    pub identity: usize,
    pub expression: usize,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Structured-text (JSON) dump of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub corpus_hash: String,
    pub steps: usize,
    pub model: FaceModel,
    pub latents: Vec<LatentEntry>,
}

impl Checkpoint {
    pub fn new(model: FaceModel, corpus_hash: String, steps: usize, latents: Vec<LatentEntry>) -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), corpus_hash, steps, model, latents }
    }

    /// Content hash of the model parameters.
    pub fn id(&self) -> String {
        hex_digest(&serde_json::to_vec(&self.model).expect("model serialises"))
    }

    pub fn latent(&self, identity: usize, expression: usize) -> Option<&LatentEntry> {
        self.latents.iter().find(|e| e.identity == identity && e.expression == expression)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(self).expect("checkpoint serialises");
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::Parse { line: e.line(), msg: format!("checkpoint: {e}") })?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse { line: 1, msg: format!("unsupported checkpoint format {:?}", ck.format) });
        }
        Ok(ck)
    }
}
