use crate::error::{Error, Result};
use crate::geometry::{closest_point_triangle, Aabb, TriMesh, TriangleGrid};
use crate::inverse::ConstraintBundle;
use crate::numerics::{Mat3, Vec3};

use super::SolverSetup;

/// Body force: acceleration in m/s² acting on tissue of `density` g/ml.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gravity {
    pub accel: Vec3,
    pub density: f64,
}

/// Log-barrier between two tagged sets of skin vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Collision {
    pub upper: Vec<usize>,
    pub lower: Vec<usize>,
    /// Activation distance in mm.
    pub d_hat: f64,
    pub stiffness: f64,
    /// When false the regions are only used to count penetrations.
    pub enabled: bool,
}

/// Blend actuations on `elements` towards identity by `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct Paralysis {
    pub elements: Vec<usize>,
    pub alpha: f64,
}

/// Linear reshaping of the rest jaw about a fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JawEdit {
    pub linear: Mat3,
    pub pivot: Vec3,
}

impl JawEdit {
    pub fn scale(s: f64, pivot: Vec3) -> Self {
        Self { linear: Mat3::identity() * s, pivot }
    }

    pub fn is_identity(&self) -> bool {
        self.linear == Mat3::identity()
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.pivot + self.linear * (x - self.pivot)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimEffects {
    pub gravity: Option<Gravity>,
    pub collision: Option<Collision>,
    pub paralysis: Option<Paralysis>,
    pub jaw_edit: Option<JawEdit>,
}

impl SimEffects {
    pub fn validate(&self) -> Result<()> {
        if let Some(g) = &self.gravity {
            if !(g.density >= 0.0) || !g.accel.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput("gravity needs finite acceleration and non-negative density".into()));
            }
        }
        if let Some(c) = &self.collision {
            if !(c.d_hat > 0.0) || !(c.stiffness >= 0.0) {
                return Err(Error::InvalidInput(format!("barrier distance must be positive, got {}", c.d_hat)));
            }
            if c.upper.iter().any(|i| c.lower.contains(i)) {
                return Err(Error::InvalidInput("collision regions overlap".into()));
            }
        }
        if let Some(p) = &self.paralysis {
            if !(0.0..=1.0).contains(&p.alpha) {
                return Err(Error::InvalidInput(format!("paralysis blend must lie in [0, 1], got {}", p.alpha)));
            }
        }
        if let Some(j) = &self.jaw_edit {
            if !(j.linear.determinant() > 0.0) {
                return Err(Error::InvalidInput("jaw edit must preserve orientation".into()));
            }
        }
        Ok(())
    }

    /// Effects that change the objective (and so disable the monotone check).
    pub fn has_forces(&self) -> bool {
        self.gravity.is_some() || self.collision.as_ref().is_some_and(|c| c.enabled)
    }
}

/// Lumped nodal weights in mN: `density·V/8·g` per element corner.
pub fn gravity_force(setup: &SolverSetup, accel: &Vec3, density: f64) -> Vec<Vec3> {
    // g/ml = 1e-3 g/mm³; g · m/s² = mN
    let corner = *accel * (density * 1e-3 * setup.lattice.element_volume() / 8.0);
    let mut f = vec![Vec3::zeros(); setup.n_nodes()];
    for el in &setup.lattice.elements {
        for &n in el {
            f[n] += corner;
        }
    }
    f
}

pub fn paralysis(bundle: &ConstraintBundle, elements: &[usize], alpha: f64) -> Result<ConstraintBundle> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidInput(format!("paralysis blend must lie in [0, 1], got {alpha}")));
    }
    let mut out = bundle.clone();
    for &e in elements {
        let a = out
            .actuation
            .get_mut(e)
            .ok_or_else(|| Error::InvalidInput(format!("element {e} is outside the bundle")))?;
        if alpha == 1.0 {
            *a = Mat3::identity();
        } else if alpha > 0.0 {
            *a = *a * (1.0 - alpha) + Mat3::identity() * alpha;
        }
    }
    Ok(out)
}

/// Reshape the rest jaw and refactor; actuations are replayed unchanged.
pub fn jaw_edit(setup: &SolverSetup, bundle: &ConstraintBundle, edit: &JawEdit) -> Result<(SolverSetup, ConstraintBundle)> {
    if !(edit.linear.determinant() > 0.0) {
        return Err(Error::InvalidInput("jaw edit must preserve orientation".into()));
    }
    let (jaw_rest, jaw_mesh) = if edit.is_identity() {
        (setup.jaw_rest.clone(), setup.jaw_mesh.clone())
    } else {
        let rest = setup
            .jaw_rest
            .iter()
            .enumerate()
            .map(|(i, x)| if setup.is_jaw_node(i) { edit.apply(x) } else { *x })
            .collect();
        let mesh = setup.jaw_mesh.with_vertices(setup.jaw_mesh.vertices.iter().map(|x| edit.apply(x)).collect())?;
        (rest, mesh)
    };
    Ok((setup.with_jaw_rest(jaw_rest, jaw_mesh)?, bundle.clone()))
}

#[inline]
pub fn barrier_value(d: f64, d_hat: f64, stiffness: f64) -> f64 {
    if d >= d_hat {
        return 0.0;
    }
    if d <= 0.0 {
        return f64::INFINITY;
    }
    -stiffness * (d - d_hat).powi(2) * (d / d_hat).ln()
}

#[inline]
fn barrier_slope(d: f64, d_hat: f64, stiffness: f64) -> f64 {
    if d >= d_hat {
        return 0.0;
    }
    let r = d - d_hat;
    -stiffness * (2.0 * r * (d / d_hat).ln() + r * r / d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarrierEval {
    pub energy: f64,
    /// Gradient with respect to each skin vertex (or lattice node).
    pub grad: Vec<Vec3>,
    /// Smallest vertex-triangle distance between the regions.
    pub min_distance: f64,
    pub active_pairs: usize,
}

/// Barrier over vertex-triangle pairs between the two regions of `mesh`.
/// Touching or crossing pairs are infeasible.
pub fn barrier_energy(mesh: &TriMesh, c: &Collision) -> Result<BarrierEval> {
    let n = mesh.vertices.len();
    let mut in_upper = vec![false; n];
    let mut in_lower = vec![false; n];
    for &i in &c.upper {
        *in_upper.get_mut(i).ok_or_else(|| Error::InvalidInput(format!("region vertex {i} out of range")))? = true;
    }
    for &i in &c.lower {
        *in_lower.get_mut(i).ok_or_else(|| Error::InvalidInput(format!("region vertex {i} out of range")))? = true;
    }
    let mut out = BarrierEval { energy: 0.0, grad: vec![Vec3::zeros(); n], min_distance: f64::INFINITY, active_pairs: 0 };
    for (verts, tri_mask) in [(&c.upper, &in_lower), (&c.lower, &in_upper)] {
        let tris = mesh.sub_mesh(|i| tri_mask[i]);
        if tris.triangles.is_empty() || verts.is_empty() {
            continue;
        }
        let grid = TriangleGrid::new(&tris);
        let mut cand = Vec::new();
        for &v in verts {
            let p = mesh.vertices[v];
            grid.candidates(&Aabb::from_points([&p]).expanded(c.d_hat), &mut cand);
            cand.sort_unstable();
            cand.dedup();
            for &t in &cand {
                let tri = tris.triangles[t as usize];
                let [a, b, cc] = tris.corners(t as usize);
                let (q, bary) = closest_point_triangle(&p, &a, &b, &cc);
                let d = (p - q).norm();
                out.min_distance = out.min_distance.min(d);
                if d >= c.d_hat {
                    continue;
                }
                if d <= 0.0 {
                    return Err(Error::Infeasible(format!(
                        "skin vertex {v} touches a triangle of the opposite region; start from a separated state"
                    )));
                }
                out.active_pairs += 1;
                out.energy += barrier_value(d, c.d_hat, c.stiffness);
                let g = (p - q) / d * barrier_slope(d, c.d_hat, c.stiffness);
                out.grad[v] += g;
                for k in 0..3 {
                    out.grad[tri[k]] -= g * bary[k];
                }
            }
        }
    }
    Ok(out)
}

/// Barrier energy and its gradient on lattice nodes for positions `u`.
pub fn collision_barrier(setup: &SolverSetup, u: &[Vec3], c: &Collision) -> Result<BarrierEval> {
    let skin = setup.skin_surface(u)?;
    let mut ev = barrier_energy(&skin, c)?;
    let mut node = vec![Vec3::zeros(); setup.n_nodes()];
    setup.skin.scatter(&ev.grad, &mut node);
    ev.grad = node;
    Ok(ev)
}
