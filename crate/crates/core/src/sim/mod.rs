//! Quasi-static shape-targeting solver on an embedded hexahedral lattice.
//!
//! Each quadrature point pulls its deformation gradient towards `R·A`, where
//! `A` is the element's actuation and `R` the closest rotation to `F·A`.
//! Skull- and jaw-supporting nodes are eliminated from the system, so bone
//! constraints hold to machine precision. The system matrix never changes,
//! so it is factorised once per setup and every iteration is a back-solve.

mod effects;
mod pinch;
mod solve;

pub use effects::{
    barrier_energy, barrier_value, collision_barrier, gravity_force, jaw_edit, paralysis, BarrierEval, Collision,
    Gravity, JawEdit, Paralysis, SimEffects,
};
pub use pinch::{pinch_scenario, PinchScenario};
pub use solve::{format_report, simulate, solve_prescribed, solve_quasistatic, write_report, SimResult};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};

use crate::error::{Error, Result};
use crate::field::SpatialMap;
use crate::geometry::TriMesh;
use crate::inverse::{ConstraintBundle, MaterialParams};
use crate::lattice::{embed, voxelize, Embedding, HexLattice, Quadrature, QuadratureRule, SurfaceTag};
use crate::numerics::{Mat3, Vec3};
use crate::phantom::Anatomy;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub quadrature: Quadrature,
    /// Relative energy decrease below which iteration stops.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Energy scale in kPa; the shear modulus of the material by default.
    pub stiffness: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            quadrature: Quadrature::Gauss8,
            tolerance: 1e-6,
            max_iterations: 500,
            stiffness: MaterialParams::default().mu(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NodeRole {
    Free(usize),
    Skull,
    Jaw,
}

/// Prefactored solver state for one lattice and one set of bone surfaces.
pub struct SolverSetup {
    pub lattice: HexLattice,
    /// Rigid frame applied to the axis-aligned lattice.
    pub frame: Mat3,
    /// Rest node positions u⁰.
    pub rest: Vec<Vec3>,
    pub skin: Embedding,
    pub skull: Embedding,
    pub jaw: Embedding,
    pub skin_mesh: TriMesh,
    pub skull_mesh: TriMesh,
    /// Rest jaw surface, after any reshaping edit.
    pub jaw_mesh: TriMesh,
    pub options: SolverOptions,
    pub(crate) grads: Vec<[Vec3; 8]>,
    pub(crate) weights: Vec<f64>,
    pub(crate) roles: Vec<NodeRole>,
    pub(crate) free: Vec<usize>,
    /// Rest positions the jaw transform acts on, per node (jaw nodes only).
    pub(crate) jaw_rest: Vec<Vec3>,
    /// Full stiffness matrix in row-compressed form.
    pub(crate) row_start: Vec<usize>,
    pub(crate) cols: Vec<usize>,
    pub(crate) vals: Vec<f64>,
    factor: Llt<usize, f64>,
}

impl std::fmt::Debug for SolverSetup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolverSetup")
            .field("elements", &self.lattice.n_elements())
            .field("nodes", &self.rest.len())
            .field("free", &self.free.len())
            .field("options", &self.options)
            .finish()
    }
}

/// Node positions under `map` for warm-starting a solve; nodes the map
/// cannot evaluate keep their rest position.
pub fn warm_start(map: &dyn SpatialMap, rest: &[Vec3]) -> Vec<Vec3> {
    rest.iter().map(|x| map.map_point(x).unwrap_or(*x)).collect()
}

/// Embed the three surfaces and assemble.
pub fn assemble(
    lattice: HexLattice,
    skin: TriMesh,
    skull: TriMesh,
    jaw: TriMesh,
    options: SolverOptions,
) -> Result<SolverSetup> {
    let es = embed(&lattice, &skin, SurfaceTag::Skin)?;
    let ek = embed(&lattice, &skull, SurfaceTag::Skull)?;
    let ej = embed(&lattice, &jaw, SurfaceTag::Jaw)?;
    assemble_embedded(lattice, [es, ek, ej], [skin, skull, jaw], options)
}

/// Voxelize an anatomy at spacing `h` and assemble.
pub fn setup_for_anatomy(anatomy: &Anatomy, h: f64, options: SolverOptions) -> Result<SolverSetup> {
    let lattice = voxelize(anatomy, h)?;
    assemble(lattice, anatomy.skin.clone(), anatomy.skull.clone(), anatomy.jaw.clone(), options)
}

/// Assemble from precomputed embeddings, ordered skin, skull, jaw.
pub fn assemble_embedded(
    lattice: HexLattice,
    embeddings: [Embedding; 3],
    meshes: [TriMesh; 3],
    options: SolverOptions,
) -> Result<SolverSetup> {
    let rest = lattice.nodes.clone();
    let [skin_mesh, skull_mesh, jaw_mesh] = meshes;
    let jaw_rest = rest.clone();
    build(lattice, Mat3::identity(), rest, embeddings, [skin_mesh, skull_mesh, jaw_mesh], jaw_rest, options)
}

fn build(
    lattice: HexLattice,
    frame: Mat3,
    rest: Vec<Vec3>,
    embeddings: [Embedding; 3],
    meshes: [TriMesh; 3],
    jaw_rest: Vec<Vec3>,
    options: SolverOptions,
) -> Result<SolverSetup> {
    if !(options.stiffness > 0.0) || !(options.tolerance >= 0.0) {
        return Err(Error::InvalidInput("solver stiffness must be positive and tolerance non-negative".into()));
    }
    let [skin, skull, jaw] = embeddings;
    let [skin_mesh, skull_mesh, jaw_mesh] = meshes;
    let n = lattice.n_nodes();
    for (e, m) in [(&skin, &skin_mesh), (&skull, &skull_mesh), (&jaw, &jaw_mesh)] {
        if e.n_nodes != n || e.n_rows() != m.vertices.len() {
            return Err(Error::InvalidInput(format!("{} embedding does not match lattice or mesh", e.tag.name())));
        }
    }
    let mut roles = vec![NodeRole::Free(0); n];
    for &i in &skull.support() {
        roles[i] = NodeRole::Skull;
    }
    for &i in &jaw.support() {
        if roles[i] == NodeRole::Skull {
            return Err(Error::Setup(format!(
                "node {i} supports both skull and jaw; refine the lattice so the bones separate"
            )));
        }
        roles[i] = NodeRole::Jaw;
    }
    let mut free = Vec::new();
    for (i, r) in roles.iter_mut().enumerate() {
        if let NodeRole::Free(k) = r {
            *k = free.len();
            free.push(i);
        }
    }
    if free.len() == n {
        return Err(Error::Setup("no skull or jaw constraints: the system floats, add bone constraints".into()));
    }

    let rule = QuadratureRule::new(options.quadrature, lattice.h);
    let grads: Vec<[Vec3; 8]> = rule.grads.iter().map(|g| g.map(|v| frame * v)).collect();
    let weights = rule.weights.clone();
    let vol = lattice.element_volume();
    // identical for every element
    let mut ke = [[0.0; 8]; 8];
    for (g, w) in grads.iter().zip(&weights) {
        let c = 2.0 * options.stiffness * vol * w;
        for a in 0..8 {
            for b in 0..8 {
                ke[a][b] += c * g[a].dot(&g[b]);
            }
        }
    }

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for el in &lattice.elements {
        for a in 0..8 {
            for b in 0..8 {
                rows[el[a]].push((el[b], ke[a][b]));
            }
        }
    }
    let mut row_start = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_start.push(0);
    for r in rows.iter_mut() {
        r.sort_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in r.iter() {
            if c == last {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                last = c;
            }
        }
        row_start.push(cols.len());
    }

    let mut trip = Vec::new();
    for (fi, &i) in free.iter().enumerate() {
        for k in row_start[i]..row_start[i + 1] {
            if let NodeRole::Free(fj) = roles[cols[k]] {
                if fj <= fi {
                    trip.push(Triplet::new(fi, fj, vals[k]));
                }
            }
        }
    }
    let nf = free.len();
    let factor = if nf == 0 {
        // fully prescribed; keep a trivial factor
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(1, 1, &[Triplet::new(0, 0, 1.0)])
            .map_err(|e| Error::Setup(format!("{e:?}")))?;
        m.sp_cholesky(Side::Lower).map_err(|e| Error::Setup(format!("{e:?}")))?
    } else {
        let m = SparseColMat::<usize, f64>::try_new_from_triplets(nf, nf, &trip)
            .map_err(|e| Error::Setup(format!("could not build reduced matrix: {e:?}")))?;
        m.sp_cholesky(Side::Lower).map_err(|e| {
            Error::Setup(format!("reduced matrix is not positive definite ({e:?}); constrain more of the lattice"))
        })?
    };

    Ok(SolverSetup {
        lattice,
        frame,
        rest,
        skin,
        skull,
        jaw,
        skin_mesh,
        skull_mesh,
        jaw_mesh,
        options,
        grads,
        weights,
        roles,
        free,
        jaw_rest,
        row_start,
        cols,
        vals,
        factor,
    })
}

impl SolverSetup {
    pub fn n_nodes(&self) -> usize {
        self.rest.len()
    }

    pub fn n_elements(&self) -> usize {
        self.lattice.n_elements()
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    /// Nodes whose positions are prescribed by a bone.
    pub fn constrained_nodes(&self) -> Vec<usize> {
        (0..self.n_nodes()).filter(|&i| !matches!(self.roles[i], NodeRole::Free(_))).collect()
    }

    pub fn is_skull_node(&self, i: usize) -> bool {
        self.roles[i] == NodeRole::Skull
    }

    pub fn is_jaw_node(&self, i: usize) -> bool {
        self.roles[i] == NodeRole::Jaw
    }

    /// Prescribed positions for every constrained node; free entries hold u⁰.
    pub fn prescribed_positions(&self, bundle: &ConstraintBundle) -> Vec<Vec3> {
        self.rest
            .iter()
            .enumerate()
            .map(|(i, x)| match self.roles[i] {
                NodeRole::Free(_) => *x,
                NodeRole::Skull => bundle.skull.apply(x),
                NodeRole::Jaw => bundle.jaw.apply(&self.jaw_rest[i]),
            })
            .collect()
    }

    /// Reduced system matrix times `x` (one entry per free node).
    pub fn apply_reduced(&self, x: &[Vec3]) -> Vec<Vec3> {
        self.free
            .iter()
            .map(|&i| {
                let mut acc = Vec3::zeros();
                for k in self.row_start[i]..self.row_start[i + 1] {
                    if let NodeRole::Free(j) = self.roles[self.cols[k]] {
                        acc += x[j] * self.vals[k];
                    }
                }
                acc
            })
            .collect()
    }

    /// Solve the reduced system with the stored factorisation.
    pub fn solve_reduced(&self, rhs: &[Vec3]) -> Vec<Vec3> {
        let nf = self.free.len();
        if nf == 0 {
            return Vec::new();
        }
        let mut b = Mat::<f64>::from_fn(nf, 3, |i, c| rhs[i][c]);
        self.factor.solve_in_place(b.as_mut());
        (0..nf).map(|i| Vec3::new(b[(i, 0)], b[(i, 1)], b[(i, 2)])).collect()
    }

    /// Full stiffness matrix times `u`.
    pub(crate) fn apply_full(&self, u: &[Vec3]) -> Vec<Vec3> {
        (0..self.n_nodes())
            .map(|i| {
                let mut acc = Vec3::zeros();
                for k in self.row_start[i]..self.row_start[i + 1] {
                    acc += u[self.cols[k]] * self.vals[k];
                }
                acc
            })
            .collect()
    }

    /// Rest vertices moved by the interpolated nodal displacement, so nodes
    /// left at rest reproduce the rest surface bit for bit.
    fn displaced(&self, emb: &Embedding, rest: &TriMesh, u: &[Vec3]) -> Vec<Vec3> {
        let du: Vec<Vec3> = u.iter().zip(&self.rest).map(|(a, b)| a - b).collect();
        emb.apply(&du).iter().zip(&rest.vertices).map(|(d, x)| x + d).collect()
    }

    /// Embedded skin positions for nodal positions `u`.
    pub fn skin_positions(&self, u: &[Vec3]) -> Vec<Vec3> {
        self.displaced(&self.skin, &self.skin_mesh, u)
    }

    pub fn skin_surface(&self, u: &[Vec3]) -> Result<TriMesh> {
        self.skin_mesh.with_vertices(self.skin_positions(u))
    }

    pub fn skull_surface(&self, u: &[Vec3]) -> Result<TriMesh> {
        self.skull_mesh.with_vertices(self.displaced(&self.skull, &self.skull_mesh, u))
    }

    /// The jaw rest may have been reshaped, so it is interpolated directly.
    pub fn jaw_surface(&self, u: &[Vec3]) -> Result<TriMesh> {
        self.jaw_mesh.with_vertices(self.jaw.apply(u))
    }

    /// The same problem with the whole rest configuration rotated by `q`.
    pub fn rotated(&self, q: &Mat3) -> Result<SolverSetup> {
        let rot = |v: &Vec<Vec3>| v.iter().map(|x| q * x).collect::<Vec<_>>();
        let meshes = [
            self.skin_mesh.with_vertices(rot(&self.skin_mesh.vertices))?,
            self.skull_mesh.with_vertices(rot(&self.skull_mesh.vertices))?,
            self.jaw_mesh.with_vertices(rot(&self.jaw_mesh.vertices))?,
        ];
        build(
            self.lattice.clone(),
            q * self.frame,
            rot(&self.rest),
            [self.skin.clone(), self.skull.clone(), self.jaw.clone()],
            meshes,
            rot(&self.jaw_rest),
            self.options,
        )
    }

    /// Rebuild with a new rest jaw, leaving everything else untouched.
    pub(crate) fn with_jaw_rest(&self, jaw_rest: Vec<Vec3>, jaw_mesh: TriMesh) -> Result<SolverSetup> {
        build(
            self.lattice.clone(),
            self.frame,
            self.rest.clone(),
            [self.skin.clone(), self.skull.clone(), self.jaw.clone()],
            [self.skin_mesh.clone(), self.skull_mesh.clone(), jaw_mesh],
            jaw_rest,
            self.options,
        )
    }

    pub fn with_options(&self, options: SolverOptions) -> Result<SolverSetup> {
        build(
            self.lattice.clone(),
            self.frame,
            self.rest.clone(),
            [self.skin.clone(), self.skull.clone(), self.jaw.clone()],
            [self.skin_mesh.clone(), self.skull_mesh.clone(), self.jaw_mesh.clone()],
            self.jaw_rest.clone(),
            options,
        )
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn box_mesh(lo: Vec3, hi: Vec3) -> TriMesh {
        let v: Vec<Vec3> = (0..8)
            .map(|c| Vec3::new(if c & 1 == 0 { lo.x } else { hi.x }, if c & 2 == 0 { lo.y } else { hi.y }, if c & 4 == 0 { lo.z } else { hi.z }))
            .collect();
        let t = vec![
            [0, 2, 1], [1, 2, 3], [4, 5, 6], [5, 7, 6], [0, 1, 4], [1, 5, 4],
            [2, 6, 3], [3, 6, 7], [0, 4, 2], [2, 4, 6], [1, 3, 5], [3, 7, 5],
        ];
        TriMesh::new(v, t).unwrap()
    }

    /// A 6x4x4 block of 1 mm cells, skull plate at x≈0.25, jaw plate at x≈5.75.
    pub(crate) fn slab_setup() -> SolverSetup {
        let mut cells = Vec::new();
        for k in 0..4 {
            for j in 0..4 {
                for i in 0..6 {
                    cells.push([i, j, k]);
                }
            }
        }
        let lat = HexLattice::from_cells(Vec3::zeros(), 1.0, [6, 4, 4], cells).unwrap();
        let skin = box_mesh(Vec3::zeros(), Vec3::new(6.0, 4.0, 4.0));
        let skull = box_mesh(Vec3::new(0.1, 0.5, 0.5), Vec3::new(0.4, 3.5, 3.5));
        let jaw = box_mesh(Vec3::new(5.6, 0.5, 0.5), Vec3::new(5.9, 3.5, 3.5));
        assemble(lat, skin, skull, jaw, SolverOptions::default()).unwrap()
    }

    #[test]
    fn floating_system_is_rejected() {
        let lat = HexLattice::from_cells(Vec3::zeros(), 1.0, [2, 1, 1], vec![[0, 0, 0], [1, 0, 0]]).unwrap();
        let skin = box_mesh(Vec3::zeros(), Vec3::new(2.0, 1.0, 1.0));
        let empty = TriMesh { vertices: vec![], triangles: vec![], confidence: None };
        let err = assemble(lat, skin, empty.clone(), empty, SolverOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Setup(_)), "{err}");
    }

    #[test]
    fn constrained_set_is_bone_support() {
        let s = slab_setup();
        let c = s.constrained_nodes();
        let mut expect = s.skull.support();
        expect.extend(s.jaw.support());
        expect.sort_unstable();
        assert_eq!(c, expect);
        assert!(c.iter().all(|&i| s.rest[i].x <= 1.0 || s.rest[i].x >= 5.0));
    }

    #[test]
    fn factorisation_residual_is_small() {
        let s = slab_setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b: Vec<Vec3> = (0..s.n_free()).map(|_| Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0))).collect();
        let x = s.solve_reduced(&b);
        let ax = s.apply_reduced(&x);
        let num: f64 = ax.iter().zip(&b).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        assert!(num / den < 1e-10, "{}", num / den);
    }

    #[test]
    fn stiffness_rows_sum_to_zero() {
        let s = slab_setup();
        let ones = vec![Vec3::new(1.0, -2.0, 0.5); s.n_nodes()];
        assert!(s.apply_full(&ones).iter().all(|v| v.norm() < 1e-9));
    }

    #[test]
    fn rotated_setup_keeps_stiffness() {
        let s = slab_setup();
        let r = s.rotated(&rotation(&Vec3::new(1.0, 2.0, 0.3), 0.8)).unwrap();
        for (a, b) in s.vals.iter().zip(&r.vals) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
        }
    }
}
