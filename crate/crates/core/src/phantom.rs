//! Synthetic anatomy and expression corpus.
//!
//! The head is an ellipsoid shell. Skull and jaw are the upper and lower caps
//! of an inset ellipsoid, separated by a mouth band between two horizontal
//! planes. Expressions open the jaw about a posterior hinge, slide it forward,
//! and add localised symmetric stretches ("bulges") inside the soft tissue.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{load_obj, save_obj, MeshDistance, TriMesh};
use crate::numerics::{rotation, Mat3, RigidTransform, Vec3};

/// Outer skin semi-axes (x = width, y = height, z = depth), mm.
pub const SKIN_AXES: [f64; 3] = [80.0, 100.0, 90.0];
/// Inset of the bone ellipsoid, mm.
pub const TISSUE: f64 = 30.0;
/// Height of the mouth band centre, mm.
pub const MOUTH_Y: f64 = -20.0;
/// Vertical distance between the skull cut and the jaw top, mm.
pub const MOUTH_GAP: f64 = 50.0;
pub const N_LANDMARKS: usize = 64;
pub const ID_DIM: usize = 5;
pub const N_BULGES: usize = 4;
pub const EXPR_DIM: usize = 2 + N_BULGES;
/// Largest jaw opening reachable from an expression code, rad.
pub const JAW_MAX: f64 = 0.3;
/// Largest forward jaw slide, mm.
pub const SLIDE_MAX: f64 = 3.0;
const WARP_SCALE: f64 = 0.06;
/// Back-of-head band (z below this) gets reduced confidence.
pub const LOW_CONFIDENCE_Z: f64 = -45.0;
pub const LOW_CONFIDENCE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hinge {
    pub axis: [f64; 3],
    pub pivot: [f64; 3],
}

impl Hinge {
    pub fn axis(&self) -> Vec3 {
        Vec3::from(self.axis)
    }
    pub fn pivot(&self) -> Vec3 {
        Vec3::from(self.pivot)
    }
    /// Rigid jaw motion for an opening angle and forward slide.
    pub fn transform(&self, angle: f64, slide: f64) -> RigidTransform {
        let mut t = RigidTransform::about_pivot(&self.axis(), angle, &self.pivot());
        t.t += slide * Vec3::z();
        t
    }
}

/// Low-frequency horizontal warp driven by identity parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityWarp {
    pub params: Vec<f64>,
}

impl IdentityWarp {
    pub fn new(params: &[f64]) -> Result<Self> {
        if params.len() != ID_DIM {
            return Err(Error::InvalidInput(format!("identity needs {ID_DIM} parameters, got {}", params.len())));
        }
        if let Some(p) = params.iter().find(|p| !(p.abs() <= 1.0)) {
            return Err(Error::InvalidInput(format!("identity parameter {p} outside [-1, 1]")));
        }
        Ok(Self { params: params.to_vec() })
    }

    fn harmonics(x: &Vec3) -> ([f64; ID_DIM], [Vec3; ID_DIM]) {
        let [a, b, c] = SKIN_AXES;
        let (u, v, w) = (x.x / a, x.y / b, x.z / c);
        (
            [1.0, w, v, u, u * u - w * w],
            [
                Vec3::zeros(),
                Vec3::new(0.0, 0.0, 1.0 / c),
                Vec3::new(0.0, 1.0 / b, 0.0),
                Vec3::new(1.0 / a, 0.0, 0.0),
                Vec3::new(2.0 * u / a, 0.0, -2.0 * w / c),
            ],
        )
    }

    /// Per-unit-parameter displacement basis at `x` (used for least squares).
    pub fn basis(x: &Vec3) -> [Vec3; ID_DIM] {
        let (y, _) = Self::harmonics(x);
        let radial = Vec3::new(x.x, 0.0, x.z) * WARP_SCALE;
        y.map(|yk| radial * yk)
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.apply_with_jacobian(x).0
    }

    pub fn apply_with_jacobian(&self, x: &Vec3) -> (Vec3, Mat3) {
        let (y, dy) = Self::harmonics(x);
        let mut psi = 0.0;
        let mut dpsi = Vec3::zeros();
        for k in 0..ID_DIM {
            psi += self.params[k] * y[k];
            dpsi += self.params[k] * dy[k];
        }
        psi *= WARP_SCALE;
        dpsi *= WARP_SCALE;
        let radial = Vec3::new(x.x, 0.0, x.z);
        let j = Mat3::identity() + Mat3::from_diagonal(&Vec3::new(psi, 0.0, psi)) + radial * dpsi.transpose();
        (x + radial * psi, j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Anatomy {
    pub skin: TriMesh,
    pub skull: TriMesh,
    pub jaw: TriMesh,
    pub hinge: Hinge,
    pub landmark_ids: Vec<usize>,
    /// Height of the jaw top plane (the hinge plane).
    pub jaw_plane: f64,
    /// Height of the skull cut plane.
    pub skull_plane: f64,
    pub warp: IdentityWarp,
}

impl Anatomy {
    pub fn meshes(&self) -> [&TriMesh; 3] {
        [&self.skin, &self.skull, &self.jaw]
    }

    /// Same anatomy with bones and skin replaced (topology must match).
    pub fn with_surfaces(&self, skin: Vec<Vec3>, skull: Vec<Vec3>, jaw: Vec<Vec3>) -> Result<Anatomy> {
        Ok(Anatomy {
            skin: self.skin.with_vertices(skin)?,
            skull: self.skull.with_vertices(skull)?,
            jaw: self.jaw.with_vertices(jaw)?,
            ..self.clone()
        })
    }

    /// Canonical-skin vertices with z > 0, used as the evaluation mask.
    pub fn frontal_mask(canonical: &Anatomy) -> Vec<usize> {
        (0..canonical.skin.vertices.len()).filter(|&i| canonical.skin.vertices[i].z > 0.0).collect()
    }

    /// Smallest clearance between distinct surfaces; the skull-jaw distance
    /// counts half because both sides of the mouth band must be resolved.
    pub fn min_gap(&self) -> f64 {
        let d_skin = MeshDistance::new(&self.skin);
        let d_skull = MeshDistance::new(&self.skull);
        let d_jaw = MeshDistance::new(&self.jaw);
        let min_over = |pts: &[Vec3], md: &MeshDistance| pts.iter().map(|p| md.distance(p)).fold(f64::INFINITY, f64::min);
        let skin_skull = min_over(&self.skull.vertices, &d_skin).min(min_over(&self.skin.vertices, &d_skull));
        let skin_jaw = min_over(&self.jaw.vertices, &d_skin).min(min_over(&self.skin.vertices, &d_jaw));
        let skull_jaw = min_over(&self.jaw.vertices, &d_skull).min(min_over(&self.skull.vertices, &d_jaw));
        skin_skull.min(skin_jaw).min(0.5 * skull_jaw)
    }
}

/// Closed surface of `axes`-ellipsoid clipped to `y_lo ≤ y ≤ y_hi`, with flat
/// caps where the clip is interior and poles otherwise.
fn capped_ellipsoid(axes: Vec3, y_lo: f64, y_hi: f64, n_rings: usize, n_seg: usize, cap_rings: usize) -> TriMesh {
    enum Ring {
        Point(Vec3),
        Loop(Vec<Vec3>),
    }
    let ring_at = |y: f64, scale: f64| -> Vec<Vec3> {
        let rad = (1.0 - (y / axes.y).powi(2)).max(0.0).sqrt() * scale;
        (0..n_seg)
            .map(|j| {
                let psi = 2.0 * std::f64::consts::PI * j as f64 / n_seg as f64;
                Vec3::new(axes.x * rad * psi.sin(), y, axes.z * rad * psi.cos())
            })
            .collect()
    };
    let phi_lo = (y_lo / axes.y).clamp(-1.0, 1.0).asin();
    let phi_hi = (y_hi / axes.y).clamp(-1.0, 1.0).asin();
    let lo_pole = y_lo <= -axes.y;
    let hi_pole = y_hi >= axes.y;
    let mut rings = Vec::new();
    if lo_pole {
        rings.push(Ring::Point(Vec3::new(0.0, -axes.y, 0.0)));
    } else {
        rings.push(Ring::Point(Vec3::new(0.0, y_lo, 0.0)));
        for m in 1..cap_rings {
            rings.push(Ring::Loop(ring_at(y_lo, m as f64 / cap_rings as f64)));
        }
    }
    for k in 0..=n_rings {
        if (k == 0 && lo_pole) || (k == n_rings && hi_pole) {
            continue;
        }
        let phi = phi_lo + (phi_hi - phi_lo) * k as f64 / n_rings as f64;
        let y = if k == 0 { y_lo } else if k == n_rings { y_hi } else { axes.y * phi.sin() };
        rings.push(Ring::Loop(ring_at(y, 1.0)));
    }
    if hi_pole {
        rings.push(Ring::Point(Vec3::new(0.0, axes.y, 0.0)));
    } else {
        for m in (1..cap_rings).rev() {
            rings.push(Ring::Loop(ring_at(y_hi, m as f64 / cap_rings as f64)));
        }
        rings.push(Ring::Point(Vec3::new(0.0, y_hi, 0.0)));
    }
    let mut verts = Vec::new();
    let mut starts = Vec::new();
    for r in &rings {
        starts.push(verts.len());
        match r {
            Ring::Point(p) => verts.push(*p),
            Ring::Loop(l) => verts.extend_from_slice(l),
        }
    }
    let mut tris = Vec::new();
    for w in 0..rings.len() - 1 {
        let (a, b) = (starts[w], starts[w + 1]);
        match (&rings[w], &rings[w + 1]) {
            (Ring::Point(_), Ring::Loop(_)) => {
                for j in 0..n_seg {
                    tris.push([a, b + (j + 1) % n_seg, b + j]);
                }
            }
            (Ring::Loop(_), Ring::Point(_)) => {
                for j in 0..n_seg {
                    tris.push([a + j, a + (j + 1) % n_seg, b]);
                }
            }
            (Ring::Loop(_), Ring::Loop(_)) => {
                for j in 0..n_seg {
                    let j1 = (j + 1) % n_seg;
                    tris.push([a + j, a + j1, b + j1]);
                    tris.push([a + j, b + j1, b + j]);
                }
            }
            (Ring::Point(_), Ring::Point(_)) => unreachable!("consecutive pole rings"),
        }
    }
    let mut mesh = TriMesh::new(verts, tris).expect("indices are in range by construction");
    if mesh.signed_volume() < 0.0 {
        for t in &mut mesh.triangles {
            t.swap(1, 2);
        }
    }
    mesh
}

fn farthest_point_sampling(points: &[Vec3], pool: &[usize], count: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(count);
    let first = *pool
        .iter()
        .max_by(|&&a, &&b| points[a].z.partial_cmp(&points[b].z).unwrap().then(b.cmp(&a)))
        .expect("non-empty pool");
    chosen.push(first);
    let mut dist: Vec<f64> = pool.iter().map(|&i| (points[i] - points[first]).norm()).collect();
    while chosen.len() < count.min(pool.len()) {
        let (k, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &d)| if d > best.1 { (k, d) } else { best });
        let idx = pool[k];
        chosen.push(idx);
        for (m, &i) in pool.iter().enumerate() {
            dist[m] = dist[m].min((points[i] - points[idx]).norm());
        }
    }
    chosen
}

/// The mean head all identities are warped from.
pub fn make_canonical() -> Anatomy {
    let skin_axes = Vec3::from(SKIN_AXES);
    let bone_axes = skin_axes.add_scalar(-TISSUE);
    let skull_plane = MOUTH_Y + 0.5 * MOUTH_GAP;
    let jaw_plane = MOUTH_Y - 0.5 * MOUTH_GAP;
    let mut skin = capped_ellipsoid(skin_axes, -skin_axes.y, skin_axes.y, 48, 64, 0);
    let skull = capped_ellipsoid(bone_axes, skull_plane, bone_axes.y, 18, 48, 8);
    let jaw = capped_ellipsoid(bone_axes, -bone_axes.y, jaw_plane, 10, 48, 6);
    let conf = skin
        .vertices
        .iter()
        .map(|v| if v.z < LOW_CONFIDENCE_Z { LOW_CONFIDENCE } else { 1.0 })
        .collect();
    skin.confidence = Some(conf);
    let jaw_depth = bone_axes.z * (1.0 - (jaw_plane / bone_axes.y).powi(2)).sqrt();
    let hinge = Hinge { axis: [1.0, 0.0, 0.0], pivot: [0.0, jaw_plane, -jaw_depth] };
    let front: Vec<usize> = (0..skin.vertices.len()).filter(|&i| skin.vertices[i].z > 0.0).collect();
    let landmark_ids = farthest_point_sampling(&skin.vertices, &front, N_LANDMARKS);
    Anatomy {
        skin,
        skull,
        jaw,
        hinge,
        landmark_ids,
        jaw_plane,
        skull_plane,
        warp: IdentityWarp { params: vec![0.0; ID_DIM] },
    }
}

/// Warp the canonical head into an identity.
pub fn make_identity(id_params: &[f64], canonical: &Anatomy) -> Result<Anatomy> {
    let warp = IdentityWarp::new(id_params)?;
    let map = |m: &TriMesh| -> TriMesh {
        let mut out = m.clone();
        for v in &mut out.vertices {
            *v = warp.apply(v);
        }
        out
    };
    Ok(Anatomy {
        skin: map(&canonical.skin),
        skull: map(&canonical.skull),
        jaw: map(&canonical.jaw),
        hinge: Hinge { axis: canonical.hinge.axis, pivot: warp.apply(&canonical.hinge.pivot()).into() },
        landmark_ids: canonical.landmark_ids.clone(),
        jaw_plane: canonical.jaw_plane,
        skull_plane: canonical.skull_plane,
        warp,
    })
}

/// Minimum Jacobian determinant of the identity warp on an `n³` probe grid
/// over the canonical skin box.
pub fn warp_min_det(anatomy: &Anatomy, n: usize) -> f64 {
    let b = make_canonical_bbox();
    let mut worst = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let t = Vec3::new(i as f64, j as f64, k as f64) / (n - 1) as f64;
                let x = b.0 + (b.1 - b.0).component_mul(&t);
                worst = worst.min(anatomy.warp.apply_with_jacobian(&x).1.determinant());
            }
        }
    }
    worst
}

fn make_canonical_bbox() -> (Vec3, Vec3) {
    let a = Vec3::from(SKIN_AXES);
    (-a, a)
}

/// Recovers identity parameters from a neutral skin in vertex correspondence
/// with the canonical skin and returns the matching bones. Stand-in for a
/// learned skin-to-bone predictor.
#[derive(Debug, Clone)]
pub struct BoneOracle {
    canonical: Anatomy,
}

impl BoneOracle {
    pub fn new(canonical: &Anatomy) -> Self {
        Self { canonical: canonical.clone() }
    }

    pub fn estimate_params(&self, neutral_skin: &[Vec3]) -> Result<Vec<f64>> {
        let canon = &self.canonical.skin.vertices;
        if neutral_skin.len() != canon.len() {
            return Err(Error::InvalidInput("skin is not in canonical correspondence".into()));
        }
        let mut ata = nalgebra::SMatrix::<f64, ID_DIM, ID_DIM>::zeros();
        let mut atb = nalgebra::SVector::<f64, ID_DIM>::zeros();
        for (x, y) in canon.iter().zip(neutral_skin) {
            let basis = IdentityWarp::basis(x);
            let d = y - x;
            for a in 0..ID_DIM {
                atb[a] += basis[a].dot(&d);
                for b in 0..ID_DIM {
                    ata[(a, b)] += basis[a].dot(&basis[b]);
                }
            }
        }
        let p = ata
            .cholesky()
            .ok_or_else(|| Error::Numeric("identity normal equations are singular".into()))?
            .solve(&atb);
        Ok(p.iter().map(|v| v.clamp(-1.0, 1.0)).collect())
    }

    pub fn predict(&self, neutral_skin: &[Vec3]) -> Result<(TriMesh, TriMesh)> {
        let p = self.estimate_params(neutral_skin)?;
        let id = make_identity(&p, &self.canonical)?;
        Ok((id.skull, id.jaw))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bulge {
    pub center: [f64; 3],
    pub radius: f64,
    /// Row-major symmetric positive-definite target stretch.
    pub stretch: [[f64; 3]; 3],
    pub falloff: f64,
}

impl Bulge {
    pub fn stretch(&self) -> Mat3 {
        Mat3::from_fn(|i, j| self.stretch[i][j])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpressionSpec {
    pub jaw_angle: f64,
    pub jaw_slide: f64,
    pub bulges: Vec<Bulge>,
    pub expression_code: Vec<f64>,
}

/// A bulge site on the canonical head: direction from the origin to the skin
/// point it sits under.
struct BulgeSite {
    dir: Vec3,
}

const BULGE_DEPTH: f64 = 10.0;
const BULGE_RADIUS: f64 = 6.0;
const BULGE_FALLOFF: f64 = 10.0;

fn bulge_sites() -> [BulgeSite; N_BULGES] {
    [
        BulgeSite { dir: Vec3::new(-0.75, 0.05, 0.66) },
        BulgeSite { dir: Vec3::new(0.75, 0.05, 0.66) },
        BulgeSite { dir: Vec3::new(0.0, -0.55, 0.83) },
        BulgeSite { dir: Vec3::new(0.0, 0.45, 0.89) },
    ]
}

/// Canonical bulge centre and outward normal for a site.
fn site_frame(site: &BulgeSite) -> (Vec3, Vec3) {
    let a = Vec3::from(SKIN_AXES);
    let d = site.dir.normalize();
    let s = 1.0 / (d.x * d.x / (a.x * a.x) + d.y * d.y / (a.y * a.y) + d.z * d.z / (a.z * a.z)).sqrt();
    let q = d * s;
    let n = Vec3::new(q.x / (a.x * a.x), q.y / (a.y * a.y), q.z / (a.z * a.z)).normalize();
    (q - n * BULGE_DEPTH, n)
}

impl ExpressionSpec {
    pub fn neutral() -> Self {
        Self::from_code(&[0.0; EXPR_DIM], &make_canonical()).expect("zero code is valid")
    }

    pub fn is_neutral(&self) -> bool {
        self.expression_code.iter().all(|c| *c == 0.0)
    }

    /// Deterministic expression for a code `[open, slide, bulge amplitudes..]`
    /// with `open ∈ [0,1]` and the rest in `[-1,1]`.
    pub fn from_code(code: &[f64], anatomy: &Anatomy) -> Result<Self> {
        if code.len() != EXPR_DIM {
            return Err(Error::InvalidInput(format!("expression code needs {EXPR_DIM} values")));
        }
        if !(0.0..=1.0).contains(&code[0]) || code[1..].iter().any(|c| !(c.abs() <= 1.0)) {
            return Err(Error::InvalidInput(format!("expression code out of range: {code:?}")));
        }
        let bulges = bulge_sites()
            .iter()
            .zip(&code[2..])
            .map(|(site, &amp)| {
                let (c, n) = site_frame(site);
                let nn = n * n.transpose();
                let gen = 0.3 * nn - 0.15 * (Mat3::identity() - nn);
                let s = Mat3::identity() + amp * gen;
                Bulge {
                    center: anatomy.warp.apply(&c).into(),
                    radius: BULGE_RADIUS,
                    stretch: [0, 1, 2].map(|i| [0, 1, 2].map(|j| s[(i, j)])),
                    falloff: BULGE_FALLOFF,
                }
            })
            .collect();
        Ok(Self { jaw_angle: JAW_MAX * code[0], jaw_slide: SLIDE_MAX * code[1], bulges, expression_code: code.to_vec() })
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.jaw_angle) {
            return Err(Error::InvalidInput(format!("jaw angle {} outside [0, 0.5]", self.jaw_angle)));
        }
        for b in &self.bulges {
            let s = b.stretch();
            if (s - s.transpose()).norm() > 1e-12 || s.determinant() <= 0.0 {
                return Err(Error::InvalidInput("bulge stretch must be symmetric with det > 0".into()));
            }
        }
        Ok(())
    }
}

fn smoothstep(t: f64) -> (f64, f64) {
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t))
    }
}

/// Closed-form ground-truth deformation of one identity's soft tissue.
#[derive(Debug, Clone)]
pub struct GroundTruthMap {
    jaw: RigidTransform,
    jaw_plane: f64,
    skull_plane: f64,
    bulges: Vec<(Vec3, f64, Mat3, f64)>,
}

pub fn ground_truth_map(anatomy: &Anatomy, spec: &ExpressionSpec) -> Result<GroundTruthMap> {
    spec.validate()?;
    Ok(GroundTruthMap {
        jaw: anatomy.hinge.transform(spec.jaw_angle, spec.jaw_slide),
        jaw_plane: anatomy.jaw_plane,
        skull_plane: anatomy.skull_plane,
        bulges: spec
            .bulges
            .iter()
            .map(|b| (Vec3::from(b.center), b.radius, b.stretch() - Mat3::identity(), b.falloff))
            .collect(),
    })
}

impl GroundTruthMap {
    pub fn jaw_transform(&self) -> RigidTransform {
        self.jaw
    }

    /// 1 at and below the jaw plane, 0 at and above the skull plane.
    fn blend(&self, y: f64) -> (f64, f64) {
        let span = self.skull_plane - self.jaw_plane;
        let (s, ds) = smoothstep((y - self.jaw_plane) / span);
        (1.0 - s, -ds / span)
    }

    pub fn eval(&self, x: &Vec3) -> Vec3 {
        self.eval_with_jacobian(x).0
    }

    pub fn eval_with_jacobian(&self, x: &Vec3) -> (Vec3, Mat3) {
        let mut y = *x;
        let mut jy = Mat3::identity();
        for (c, r, s_minus_i, f) in &self.bulges {
            let rel = x - c;
            let rho = rel.norm();
            if rho >= r + f {
                continue;
            }
            let (s, ds) = smoothstep((rho - r) / f);
            let weight = 1.0 - s;
            let grad = if rho > 0.0 { rel * (-ds / (f * rho)) } else { Vec3::zeros() };
            let d = s_minus_i * rel;
            y += d * weight;
            jy += s_minus_i * weight + d * grad.transpose();
        }
        let (w, dw) = self.blend(y.y);
        if w == 0.0 {
            return (y, jy);
        }
        let ty = self.jaw.apply(&y);
        if w == 1.0 {
            return (ty, self.jaw.r * jy);
        }
        let disp = ty - y;
        let jb = Mat3::identity() + (self.jaw.r - Mat3::identity()) * w + disp * Vec3::new(0.0, dw, 0.0).transpose();
        (y + disp * w, jb * jy)
    }

    pub fn map_mesh(&self, mesh: &TriMesh) -> TriMesh {
        let mut out = mesh.clone();
        for v in &mut out.vertices {
            *v = self.eval(v);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityEntry {
    pub id_params: Vec<f64>,
    pub expressions: Vec<ExpressionSpec>,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub identities: Vec<IdentityEntry>,
    pub eval_mask: Vec<usize>,
}

impl CorpusManifest {
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("manifest serialises");
        hex_digest(&bytes)
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Expression codes for one identity: code 0 is neutral, the rest open the jaw.
pub fn corpus_codes(seed: u64, identity: usize, n_exprs: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(identity as u64 + 1)));
    (0..n_exprs)
        .map(|j| {
            if j == 0 {
                return vec![0.0; EXPR_DIM];
            }
            let mut c = vec![rng.random_range(0.4..1.0), rng.random_range(-1.0..1.0)];
            c.extend((0..N_BULGES).map(|_| rng.random_range(-1.0..1.0)));
            c
        })
        .collect()
}

pub fn corpus_identities(seed: u64, n_ids: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_ids).map(|_| (0..ID_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

pub fn gen_corpus(n_ids: usize, n_exprs: usize, seed: u64, out_dir: impl AsRef<Path>) -> Result<CorpusManifest> {
    if n_ids == 0 || n_exprs == 0 {
        return Err(Error::InvalidInput("corpus needs at least one identity and one expression".into()));
    }
    let out = out_dir.as_ref();
    std::fs::create_dir_all(out)?;
    let canonical = make_canonical();
    save_obj(&canonical.skin, out.join("canonical_skin.obj"))?;
    save_obj(&canonical.skull, out.join("canonical_skull.obj"))?;
    save_obj(&canonical.jaw, out.join("canonical_jaw.obj"))?;
    let mut identities = Vec::new();
    for (k, params) in corpus_identities(seed, n_ids).into_iter().enumerate() {
        let anat = make_identity(&params, &canonical)?;
        let dir = format!("id_{k}");
        let path = out.join(&dir);
        std::fs::create_dir_all(&path)?;
        save_obj(&anat.skin, path.join("neutral_skin.obj"))?;
        save_obj(&anat.skull, path.join("neutral_skull.obj"))?;
        save_obj(&anat.jaw, path.join("neutral_jaw.obj"))?;
        let lm: String = anat.landmark_ids.iter().map(|i| format!("{i}\n")).collect();
        std::fs::write(path.join("landmarks.txt"), lm)?;
        let mut expressions = Vec::new();
        for (j, code) in corpus_codes(seed, k, n_exprs).into_iter().enumerate() {
            let spec = ExpressionSpec::from_code(&code, &anat)?;
            let gt = ground_truth_map(&anat, &spec)?;
            save_obj(&gt.map_mesh(&anat.skin), path.join(format!("expr_{j}_skin.obj")))?;
            expressions.push(spec);
        }
        identities.push(IdentityEntry { id_params: params, expressions, dir });
    }
    let manifest = CorpusManifest { seed, identities, eval_mask: Anatomy::frontal_mask(&canonical) };
    std::fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest).expect("serialise"))?;
    Ok(manifest)
}

/// An on-disk corpus loaded back into memory.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub root: PathBuf,
    pub manifest: CorpusManifest,
    pub canonical: Anatomy,
    pub identities: Vec<Anatomy>,
    /// `expression_skins[i][j]`: skin of identity `i` in expression `j`.
    pub expression_skins: Vec<Vec<TriMesh>>,
}

impl Corpus {
    pub fn load(root: impl AsRef<Path>) -> Result<Corpus> {
        let root = root.as_ref().to_path_buf();
        let text = std::fs::read_to_string(root.join("manifest.json"))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), msg: format!("manifest: {e}") })?;
        let canonical = make_canonical();
        let mut identities = Vec::new();
        let mut expression_skins = Vec::new();
        for entry in &manifest.identities {
            let dir = root.join(&entry.dir);
            let mut anat = make_identity(&entry.id_params, &canonical)?;
            anat.skin = load_obj(dir.join("neutral_skin.obj"))?.mesh;
            anat.skull = load_obj(dir.join("neutral_skull.obj"))?.mesh;
            anat.jaw = load_obj(dir.join("neutral_jaw.obj"))?.mesh;
            let skins = (0..entry.expressions.len())
                .map(|j| load_obj(dir.join(format!("expr_{j}_skin.obj"))).map(|o| o.mesh))
                .collect::<Result<Vec<_>>>()?;
            identities.push(anat);
            expression_skins.push(skins);
        }
        Ok(Corpus { root, manifest, canonical, identities, expression_skins })
    }

    /// Build the same corpus in memory without touching disk.
    pub fn synthesize(n_ids: usize, n_exprs: usize, seed: u64) -> Result<Corpus> {
        let canonical = make_canonical();
        let mut identities = Vec::new();
        let mut expression_skins = Vec::new();
        let mut entries = Vec::new();
        for (k, params) in corpus_identities(seed, n_ids).into_iter().enumerate() {
            let anat = make_identity(&params, &canonical)?;
            let mut skins = Vec::new();
            let mut expressions = Vec::new();
            for code in corpus_codes(seed, k, n_exprs) {
                let spec = ExpressionSpec::from_code(&code, &anat)?;
                skins.push(ground_truth_map(&anat, &spec)?.map_mesh(&anat.skin));
                expressions.push(spec);
            }
            entries.push(IdentityEntry { id_params: params, expressions, dir: format!("id_{k}") });
            identities.push(anat);
            expression_skins.push(skins);
        }
        let manifest = CorpusManifest { seed, identities: entries, eval_mask: Anatomy::frontal_mask(&canonical) };
        Ok(Corpus { root: PathBuf::new(), manifest, canonical, identities, expression_skins })
    }

    pub fn n_ids(&self) -> usize {
        self.identities.len()
    }

    pub fn spec(&self, id: usize, expr: usize) -> &ExpressionSpec {
        &self.manifest.identities[id].expressions[expr]
    }

    pub fn ground_truth(&self, id: usize, expr: usize) -> Result<GroundTruthMap> {
        ground_truth_map(&self.identities[id], self.spec(id, expr))
    }

    /// Mean distance jaw vertices travel across all non-neutral expressions.
    pub fn mean_jaw_displacement(&self) -> Result<f64> {
        let mut total = 0.0;
        let mut n = 0usize;
        for i in 0..self.n_ids() {
            for j in 0..self.manifest.identities[i].expressions.len() {
                let spec = self.spec(i, j);
                if spec.is_neutral() {
                    continue;
                }
                let t = self.identities[i].hinge.transform(spec.jaw_angle, spec.jaw_slide);
                for v in &self.identities[i].jaw.vertices {
                    total += (t.apply(v) - v).norm();
                    n += 1;
                }
            }
        }
        Ok(if n == 0 { 0.0 } else { total / n as f64 })
    }
}

/// Rotation helper re-exported for building re-posed observations.
pub fn head_pose(axis: &Vec3, angle: f64, translation: Vec3) -> RigidTransform {
    RigidTransform { r: rotation(axis, angle), t: translation }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{edge_triangle_penetrations, point_to_mesh_distance};
    use crate::numerics::kabsch;

    #[test]
    fn canonical_is_closed_and_clear() {
        let c = make_canonical();
        for m in c.meshes() {
            m.check_watertight().unwrap();
            assert!(m.signed_volume() > 0.0);
        }
        assert_eq!(edge_triangle_penetrations(&c.skin, &c.skull), 0);
        assert_eq!(edge_triangle_penetrations(&c.skin, &c.jaw), 0);
        let width = c.skin.bbox().extent().x;
        assert!((width - 160.0).abs() < 1e-9);
        let gap = c
            .skull
            .vertices
            .iter()
            .chain(&c.jaw.vertices)
            .map(|v| point_to_mesh_distance(&c.skin, v))
            .fold(f64::INFINITY, f64::min);
        assert!(gap >= 4.0, "gap {gap}");
        assert!(c.jaw.vertices.iter().all(|v| v.y <= c.jaw_plane + 1e-12));
        assert_eq!(c.landmark_ids.len(), N_LANDMARKS);
        assert_eq!(make_canonical(), c);
    }

    #[test]
    fn identity_zero_is_canonical() {
        let c = make_canonical();
        let id = make_identity(&[0.0; ID_DIM], &c).unwrap();
        assert_eq!(id.skin.vertices, c.skin.vertices);
        assert!(make_identity(&[1.5, 0.0, 0.0, 0.0, 0.0], &c).is_err());
    }

    #[test]
    fn warp_invertible_on_extremes() {
        let c = make_canonical();
        for p in [[1.0, 1.0, 1.0, 1.0, 1.0], [-1.0, 1.0, -1.0, 1.0, -1.0], [-1.0; 5]] {
            let id = make_identity(&p, &c).unwrap();
            assert!(warp_min_det(&id, 20) > 0.0);
        }
    }

    #[test]
    fn zero_spec_is_identity() {
        let c = make_canonical();
        let gt = ground_truth_map(&c, &ExpressionSpec::neutral()).unwrap();
        for v in c.skin.vertices.iter().step_by(37) {
            let (x, j) = gt.eval_with_jacobian(v);
            assert_eq!(x, *v);
            assert!((j - Mat3::identity()).norm() < 1e-15);
        }
    }

    #[test]
    fn bones_move_rigidly() {
        let c = make_canonical();
        let id = make_identity(&[0.3, -0.2, 0.5, 0.1, -0.4], &c).unwrap();
        let mut spec = ExpressionSpec::from_code(&[0.9, 0.5, 1.0, -1.0, 0.5, 0.2], &id).unwrap();
        spec.jaw_angle = 0.2;
        let gt = ground_truth_map(&id, &spec).unwrap();
        for v in &id.skull.vertices {
            assert_eq!(gt.eval(v), *v);
        }
        let moved: Vec<Vec3> = id.jaw.vertices.iter().map(|v| gt.eval(v)).collect();
        let expect = id.hinge.transform(0.2, spec.jaw_slide);
        for (v, m) in id.jaw.vertices.iter().zip(&moved) {
            assert!((expect.apply(v) - m).norm() < 1e-12);
        }
        let fit = kabsch(&id.jaw.vertices, &moved, None).unwrap();
        assert!(crate::numerics::kabsch_residual(&id.jaw.vertices, &moved, &fit) < 1e-20);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = make_canonical();
        let id = make_identity(&[-0.5, 0.4, 0.2, -0.3, 0.6], &c).unwrap();
        let spec = ExpressionSpec::from_code(&[1.0, -1.0, 1.0, 1.0, -1.0, 1.0], &id).unwrap();
        let gt = ground_truth_map(&id, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-4;
        for _ in 0..1000 {
            let x = Vec3::new(rng.random_range(-80.0..80.0), rng.random_range(-100.0..100.0), rng.random_range(-90.0..90.0));
            let (_, j) = gt.eval_with_jacobian(&x);
            let mut fd = Mat3::zeros();
            for k in 0..3 {
                let mut e = Vec3::zeros();
                e[k] = h;
                fd.set_column(k, &((gt.eval(&(x + e)) - gt.eval(&(x - e))) / (2.0 * h)));
            }
            assert!((fd - j).norm() <= 1e-5 * j.norm(), "{x:?}");
        }
    }

    #[test]
    fn extreme_expressions_are_injective() {
        let c = make_canonical();
        let id = make_identity(&[1.0, -1.0, 1.0, -1.0, 1.0], &c).unwrap();
        for code in [[1.0, 1.0, 1.0, 1.0, 1.0, 1.0], [1.0, -1.0, -1.0, -1.0, -1.0, -1.0]] {
            let spec = ExpressionSpec::from_code(&code, &id).unwrap();
            let gt = ground_truth_map(&id, &spec).unwrap();
            let b = id.skin.bbox();
            let n = 20;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let t = Vec3::new(i as f64, j as f64, k as f64) / (n - 1) as f64;
                        let x = b.min + b.extent().component_mul(&t);
                        assert!(gt.eval_with_jacobian(&x).1.determinant() > 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn bulges_stay_clear_of_bone() {
        let c = make_canonical();
        let spec = ExpressionSpec::from_code(&[0.0, 0.0, 1.0, 1.0, 1.0, 1.0], &c).unwrap();
        for b in &spec.bulges {
            let ctr = Vec3::from(b.center);
            let d = point_to_mesh_distance(&c.skull, &ctr).min(point_to_mesh_distance(&c.jaw, &ctr));
            assert!(d > b.radius + b.falloff, "bulge reaches bone: {d}");
            assert!(point_to_mesh_distance(&c.skin, &ctr) < b.radius + b.falloff);
        }
    }

    #[test]
    fn bone_oracle_recovers_parameters() {
        let c = make_canonical();
        let p = [0.3, -0.7, 0.1, 0.9, -0.2];
        let id = make_identity(&p, &c).unwrap();
        let oracle = BoneOracle::new(&c);
        let est = oracle.estimate_params(&id.skin.vertices).unwrap();
        for (a, b) in est.iter().zip(p) {
            assert!((a - b).abs() < 1e-10);
        }
        let (skull, _) = oracle.predict(&id.skin.vertices).unwrap();
        assert!(skull.vertices.iter().zip(&id.skull.vertices).all(|(a, b)| (a - b).norm() < 1e-8));
    }
}
