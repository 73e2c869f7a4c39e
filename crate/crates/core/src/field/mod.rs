//! Latent-conditioned deformation fields with analytic Jacobians and
//! reverse-mode gradients.

pub mod grid;
pub mod latent;
mod model;
pub mod sine;
pub mod tape;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Aabb;
use crate::numerics::{Mat3, Vec3};
use crate::phantom::GroundTruthMap;

pub use grid::{GridField, Interpolation};
pub use latent::{softplus, LatentParameterizer};
pub use model::{Checkpoint, FaceModel, LatentEntry, CHECKPOINT_FORMAT};
pub use sine::SineField;
pub use tape::{GradientTape, ModelGradients};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Representation {
    Grid(GridField),
    Sinusoidal(SineField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FieldKind {
    #[default]
    Grid,
    Sinusoidal,
}

/// Construction settings shared by both fields of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    pub kind: FieldKind,
    pub id_dim: usize,
    pub expr_dim: usize,
    /// Grid control spacing (mm).
    pub spacing: f64,
    pub interpolation: Interpolation,
    pub layers: usize,
    pub width: usize,
    pub omega: f64,
    /// Domain padding around the canonical bounding box, as a fraction of its extent.
    pub margin: f64,
    pub hidden: usize,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            kind: FieldKind::Grid,
            id_dim: 8,
            expr_dim: 8,
            spacing: 20.0,
            interpolation: Interpolation::Trilinear,
            layers: 4,
            width: 32,
            omega: 30.0,
            margin: 0.25,
            hidden: 32,
        }
    }
}

/// `x = X + d(X; θ, z)` over an axis-aligned domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub repr: Representation,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub latent_dim: usize,
}

impl DeformationField {
    /// Zero-initialised grid field covering `[lo, hi]` (rounded up to whole cells).
    pub fn grid(lo: Vec3, hi: Vec3, spacing: f64, interpolation: Interpolation, latent_dim: usize) -> Result<Self> {
        if !(spacing > 0.0) || (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(Error::InvalidInput("grid field needs a positive spacing and a non-empty box".into()));
        }
        let cells = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / spacing).ceil() as usize).max(1));
        let g = GridField::new(lo, spacing, cells, interpolation, latent_dim);
        let hi = lo + Vec3::new(cells[0] as f64, cells[1] as f64, cells[2] as f64) * spacing;
        Ok(Self { repr: Representation::Grid(g), lo: lo.into(), hi: hi.into(), latent_dim })
    }

    /// Sine field whose output layer starts at zero, so it begins as the identity.
    pub fn sinusoidal(lo: Vec3, hi: Vec3, layers: usize, width: usize, omega: f64, latent_dim: usize, seed: u64) -> Result<Self> {
        if layers == 0 || width == 0 || (0..3).any(|a| !(hi[a] > lo[a])) {
            return Err(Error::InvalidInput("sine field needs layers, width and a non-empty box".into()));
        }
        let s = SineField::new(layers, width, omega, latent_dim, lo, hi, seed);
        Ok(Self { repr: Representation::Sinusoidal(s), lo: lo.into(), hi: hi.into(), latent_dim })
    }

    pub fn from_config(cfg: &FieldConfig, bbox: &Aabb, latent_dim: usize, seed: u64) -> Result<Self> {
        let pad = bbox.extent() * cfg.margin;
        let lo = bbox.min - pad;
        let hi = bbox.max + pad;
        match cfg.kind {
            FieldKind::Grid => Self::grid(lo, hi, cfg.spacing, cfg.interpolation, latent_dim),
            FieldKind::Sinusoidal => Self::sinusoidal(lo, hi, cfg.layers, cfg.width, cfg.omega, latent_dim, seed),
        }
    }

    pub fn bbox(&self) -> Aabb {
        Aabb { min: self.lo.into(), max: self.hi.into() }
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        (0..3).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    pub fn params(&self) -> &[f64] {
        match &self.repr {
            Representation::Grid(g) => &g.theta,
            Representation::Sinusoidal(s) => &s.theta,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.repr {
            Representation::Grid(g) => &mut g.theta,
            Representation::Sinusoidal(s) => &mut s.theta,
        }
    }

    pub fn n_params(&self) -> usize {
        self.params().len()
    }

    fn check(&self, x: &Vec3, z: &[f64]) -> Result<()> {
        if z.len() != self.latent_dim {
            return Err(Error::InvalidInput(format!("latent has {} entries, field expects {}", z.len(), self.latent_dim)));
        }
        if !self.contains(x) {
            return Err(Error::Domain(format!("point ({:.3}, {:.3}, {:.3}) outside the field box", x.x, x.y, x.z)));
        }
        Ok(())
    }

    fn displacement(&self, x: &Vec3, z: &[f64]) -> (Vec3, Mat3) {
        match &self.repr {
            Representation::Grid(g) => g.displacement(x, z),
            Representation::Sinusoidal(s) => s.displacement(x, z),
        }
    }

    pub fn eval(&self, x: &Vec3, z: &[f64]) -> Result<Vec3> {
        self.check(x, z)?;
        Ok(x + self.displacement(x, z).0)
    }

    pub fn jacobian(&self, x: &Vec3, z: &[f64]) -> Result<Mat3> {
        self.check(x, z)?;
        Ok(Mat3::identity() + self.displacement(x, z).1)
    }

    pub fn eval_with_jacobian(&self, x: &Vec3, z: &[f64]) -> Result<(Vec3, Mat3)> {
        self.check(x, z)?;
        let (d, j) = self.displacement(x, z);
        Ok((x + d, Mat3::identity() + j))
    }

    /// Accumulate `∂L/∂θ` and `∂L/∂z` from cotangents on the output (`gx`)
    /// and on the Jacobian (`gj`). Returns the cotangent on the input point
    /// along the value path, `Jᵀ·gx`.
    pub fn backward(
        &self,
        x: &Vec3,
        z: &[f64],
        gx: &Vec3,
        gj: Option<&Mat3>,
        grad: &mut [f64],
        grad_z: &mut [f64],
    ) -> Result<Vec3> {
        self.check(x, z)?;
        match &self.repr {
            Representation::Grid(g) => g.backward(x, z, gx, gj, grad, grad_z),
            Representation::Sinusoidal(s) => s.backward(x, z, gx, gj, grad, grad_z),
        }
        let j = Mat3::identity() + self.displacement(x, z).1;
        Ok(j.transpose() * gx)
    }
}

/// Anything that maps material points to deformed points with a Jacobian.
pub trait SpatialMap {
    fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)>;

    fn map_point(&self, x: &Vec3) -> Result<Vec3> {
        Ok(self.map_with_jacobian(x)?.0)
    }
}

/// A field with its latent code fixed.
#[derive(Debug, Clone, Copy)]
pub struct BoundField<'a> {
    pub field: &'a DeformationField,
    pub latent: &'a [f64],
}

impl SpatialMap for BoundField<'_> {
    fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)> {
        self.field.eval_with_jacobian(x, self.latent)
    }
}

impl SpatialMap for GroundTruthMap {
    fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)> {
        Ok(self.eval_with_jacobian(x))
    }
}

/// `x -> M·x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub m: Mat3,
    pub t: Vec3,
}

impl SpatialMap for AffineMap {
    fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)> {
        Ok((self.m * x + self.t, self.m))
    }
}
