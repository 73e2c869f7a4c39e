//! Uniform hexahedral lattice over the soft tissue, surface embeddings and
//! per-element deformation gradients.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{solid_angle, TriMesh};
use crate::numerics::{trilinear_unchecked, Mat3, Vec3};
use crate::phantom::Anatomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SurfaceTag {
    Skin,
    Skull,
    Jaw,
}

impl SurfaceTag {
    pub fn name(&self) -> &'static str {
        match self {
            SurfaceTag::Skin => "skin",
            SurfaceTag::Skull => "skull",
            SurfaceTag::Jaw => "jaw",
        }
    }

    fn parse(s: &str, line: usize) -> Result<Self> {
        match s {
            "skin" => Ok(SurfaceTag::Skin),
            "skull" => Ok(SurfaceTag::Skull),
            "jaw" => Ok(SurfaceTag::Jaw),
            other => Err(Error::Parse { line, msg: format!("unknown surface tag `{other}`") }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HexLattice {
    pub origin: Vec3,
    pub h: f64,
    /// Cell-grid extent used for point location.
    pub dims: [usize; 3],
    /// Integer coordinates of occupied cells, one per element.
    pub cells: Vec<[usize; 3]>,
    /// Rest positions u⁰.
    pub nodes: Vec<Vec3>,
    /// Node indices per element, corner `c = i + 2j + 4k`.
    pub elements: Vec<[usize; 8]>,
    lookup: Vec<u32>,
}

const EMPTY: u32 = u32::MAX;

impl HexLattice {
    /// Assemble from occupied cells; nodes are numbered in grid order.
    pub fn from_cells(origin: Vec3, h: f64, dims: [usize; 3], mut cells: Vec<[usize; 3]>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidInput("lattice has no occupied cells".into()));
        }
        if !(h > 0.0) {
            return Err(Error::InvalidInput(format!("cell size must be positive, got {h}")));
        }
        let lin = |c: &[usize; 3]| c[0] + dims[0] * (c[1] + dims[1] * c[2]);
        if cells.iter().any(|c| (0..3).any(|i| c[i] >= dims[i])) {
            return Err(Error::InvalidInput("cell outside grid dims".into()));
        }
        cells.sort_by_key(lin);
        cells.dedup();
        let nd = [dims[0] + 1, dims[1] + 1, dims[2] + 1];
        let nlin = |i: usize, j: usize, k: usize| i + nd[0] * (j + nd[1] * k);
        let mut node_id = vec![EMPTY; nd[0] * nd[1] * nd[2]];
        for c in &cells {
            for corner in 0..8 {
                let (a, b, d) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                node_id[nlin(c[0] + a, c[1] + b, c[2] + d)] = 0;
            }
        }
        let mut nodes = Vec::new();
        for k in 0..nd[2] {
            for j in 0..nd[1] {
                for i in 0..nd[0] {
                    let slot = &mut node_id[nlin(i, j, k)];
                    if *slot != EMPTY {
                        *slot = nodes.len() as u32;
                        nodes.push(origin + Vec3::new(i as f64, j as f64, k as f64) * h);
                    }
                }
            }
        }
        let elements = cells
            .iter()
            .map(|c| {
                let mut e = [0usize; 8];
                for (corner, slot) in e.iter_mut().enumerate() {
                    let (a, b, d) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    *slot = node_id[nlin(c[0] + a, c[1] + b, c[2] + d)] as usize;
                }
                e
            })
            .collect();
        let mut lookup = vec![EMPTY; dims[0] * dims[1] * dims[2]];
        for (e, c) in cells.iter().enumerate() {
            lookup[lin(c)] = e as u32;
        }
        Ok(Self { origin, h, dims, cells, nodes, elements, lookup })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn element_volume(&self) -> f64 {
        self.h.powi(3)
    }

    pub fn element_at_cell(&self, c: [i64; 3]) -> Option<usize> {
        if (0..3).any(|i| c[i] < 0 || c[i] as usize >= self.dims[i]) {
            return None;
        }
        let idx = c[0] as usize + self.dims[0] * (c[1] as usize + self.dims[1] * c[2] as usize);
        match self.lookup[idx] {
            EMPTY => None,
            e => Some(e as usize),
        }
    }

    pub fn cell_min(&self, e: usize) -> Vec3 {
        let c = self.cells[e];
        self.origin + Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) * self.h
    }

    pub fn element_center(&self, e: usize) -> Vec3 {
        self.cell_min(e).add_scalar(0.5 * self.h)
    }

    /// Occupied element containing `p` and the local coordinate inside it.
    /// Points on shared faces resolve to any occupied neighbour.
    pub fn locate(&self, p: &Vec3) -> Option<(usize, Vec3)> {
        let g = (p - self.origin) / self.h;
        let base = [g.x.floor() as i64, g.y.floor() as i64, g.z.floor() as i64];
        let try_cell = |c: [i64; 3]| -> Option<(usize, Vec3)> {
            let e = self.element_at_cell(c)?;
            let local = Vec3::new(g.x - c[0] as f64, g.y - c[1] as f64, g.z - c[2] as f64);
            if local.iter().all(|x| (-1e-9..=1.0 + 1e-9).contains(x)) {
                Some((e, local.map(|x| x.clamp(0.0, 1.0))))
            } else {
                None
            }
        };
        if let Some(hit) = try_cell(base) {
            return Some(hit);
        }
        for dk in -1..=1 {
            for dj in -1..=1 {
                for di in -1..=1 {
                    if let Some(hit) = try_cell([base[0] + di, base[1] + dj, base[2] + dk]) {
                        return Some(hit);
                    }
                }
            }
        }
        None
    }

    /// Cells adjacent through a face.
    pub fn face_neighbours(&self, e: usize) -> impl Iterator<Item = usize> + '_ {
        let c = self.cells[e];
        const OFF: [[i64; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];
        OFF.iter().filter_map(move |o| {
            self.element_at_cell([c[0] as i64 + o[0], c[1] as i64 + o[1], c[2] as i64 + o[2]])
        })
    }

    pub fn is_face_connected(&self) -> bool {
        let mut seen = vec![false; self.n_elements()];
        let mut q = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(e) = q.pop_front() {
            for n in self.face_neighbours(e).collect::<Vec<_>>() {
                if !seen[n] {
                    seen[n] = true;
                    count += 1;
                    q.push_back(n);
                }
            }
        }
        count == self.n_elements()
    }
}

/// Inside/outside status of every point of a regular grid with respect to a
/// closed mesh. Each x-column is walked from the exterior, toggling at every
/// surface crossing; columns that graze an edge or vertex fall back to the
/// winding number.
fn classify_grid(mesh: &TriMesh, origin: Vec3, h: f64, dims: [usize; 3]) -> Vec<bool> {
    let lin = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
    let ncol = dims[1] * dims[2];
    let mut columns: Vec<Vec<u32>> = vec![Vec::new(); ncol];
    for t in 0..mesh.triangles.len() {
        let c = mesh.corners(t);
        let span = |a: usize| -> Option<(usize, usize)> {
            let lo = c[0][a].min(c[1][a]).min(c[2][a]);
            let hi = c[0][a].max(c[1][a]).max(c[2][a]);
            let l = ((lo - origin[a]) / h).ceil().max(0.0) as usize;
            let u = ((hi - origin[a]) / h).floor();
            if u < 0.0 {
                return None;
            }
            let u = (u as usize).min(dims[a] - 1);
            (l <= u).then_some((l, u))
        };
        let (Some((j0, j1)), Some((k0, k1))) = (span(1), span(2)) else { continue };
        for k in k0..=k1 {
            for j in j0..=j1 {
                columns[j + dims[1] * k].push(t as u32);
            }
        }
    }
    let winding = |p: &Vec3| -> bool {
        let mut s = 0.0;
        for t in 0..mesh.triangles.len() {
            s += solid_angle(mesh, t, p);
        }
        s / (4.0 * std::f64::consts::PI) >= 0.5
    };
    let mut status = vec![false; dims[0] * dims[1] * dims[2]];
    let mut xs: Vec<f64> = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            let (py, pz) = (origin.y + j as f64 * h, origin.z + k as f64 * h);
            xs.clear();
            let mut degenerate = false;
            for &t in &columns[j + dims[1] * k] {
                let [a, b, c] = mesh.corners(t as usize);
                let o2 = |p: &Vec3, q: &Vec3| (p.y - py) * (q.z - pz) - (p.z - pz) * (q.y - py);
                let (w0, w1, w2) = (o2(&b, &c), o2(&c, &a), o2(&a, &b));
                let pos = w0 > 0.0 && w1 > 0.0 && w2 > 0.0;
                let neg = w0 < 0.0 && w1 < 0.0 && w2 < 0.0;
                if pos || neg {
                    xs.push((w0 * a.x + w1 * b.x + w2 * c.x) / (w0 + w1 + w2));
                } else {
                    let all_ge = w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0;
                    let all_le = w0 <= 0.0 && w1 <= 0.0 && w2 <= 0.0;
                    if (all_ge || all_le) && (w0 != 0.0 || w1 != 0.0 || w2 != 0.0) {
                        degenerate = true;
                    }
                }
            }
            if degenerate || xs.len() % 2 == 1 {
                for i in 0..dims[0] {
                    status[lin(i, j, k)] = winding(&Vec3::new(origin.x + i as f64 * h, py, pz));
                }
                continue;
            }
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut next = 0;
            let mut inside = false;
            for i in 0..dims[0] {
                let px = origin.x + i as f64 * h;
                while next < xs.len() && xs[next] < px {
                    inside = !inside;
                    next += 1;
                }
                status[lin(i, j, k)] = if next < xs.len() && xs[next] == px {
                    winding(&Vec3::new(px, py, pz))
                } else {
                    inside
                };
            }
        }
    }
    status
}

/// Points of a regular grid with spacing `h` lying strictly in the soft
/// tissue (inside skin, outside both bones).
pub fn tissue_points(anatomy: &Anatomy, h: f64) -> Result<Vec<Vec3>> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("grid spacing must be positive, got {h}")));
    }
    for m in anatomy.meshes() {
        m.check_watertight()?;
    }
    let bbox = anatomy.skin.bbox();
    let origin = bbox.min.add_scalar(0.5 * h);
    let dims = [0, 1, 2].map(|i| (bbox.extent()[i] / h).floor() as usize + 1);
    let skin = classify_grid(&anatomy.skin, origin, h, dims);
    let skull = classify_grid(&anatomy.skull, origin, h, dims);
    let jaw = classify_grid(&anatomy.jaw, origin, h, dims);
    let mut out = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let l = i + dims[0] * (j + dims[1] * k);
                if skin[l] && !skull[l] && !jaw[l] {
                    out.push(origin + Vec3::new(i as f64, j as f64, k as f64) * h);
                }
            }
        }
    }
    Ok(out)
}

/// Voxelise the soft tissue between bones and skin at cell size `h`.
pub fn voxelize(anatomy: &Anatomy, h: f64) -> Result<HexLattice> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidInput(format!("cell size must be positive, got {h}")));
    }
    for m in anatomy.meshes() {
        m.check_watertight()?;
    }
    let gap = anatomy.min_gap();
    if h > gap {
        return Err(Error::Refinement(format!(
            "cell size {h} mm exceeds the minimum soft-tissue gap {gap:.3} mm; use h <= {gap:.3}"
        )));
    }
    voxelize_unchecked(anatomy, h)
}

/// Voxelisation without the gap check, for hand-built scenes whose clearance
/// the caller has already guaranteed.
pub fn voxelize_unchecked(anatomy: &Anatomy, h: f64) -> Result<HexLattice> {
    let bbox = anatomy.skin.bbox();
    let origin = bbox.min.add_scalar(-0.75 * h);
    let ext = bbox.extent().add_scalar(1.5 * h);
    let dims = [0, 1, 2].map(|i| (ext[i] / h).ceil() as usize + 1);
    let center0 = origin.add_scalar(0.5 * h);
    let in_skin = classify_grid(&anatomy.skin, center0, h, dims);
    let in_skull = classify_grid(&anatomy.skull, center0, h, dims);
    let in_jaw = classify_grid(&anatomy.jaw, center0, h, dims);
    let lin = |c: [usize; 3]| c[0] + dims[0] * (c[1] + dims[1] * c[2]);
    let mut occ: Vec<bool> = (0..in_skin.len()).map(|i| in_skin[i] && !in_skull[i] && !in_jaw[i]).collect();
    let cell_of = |p: &Vec3| -> [usize; 3] {
        let g = (p - origin) / h;
        [0, 1, 2].map(|i| (g[i].floor().max(0.0) as usize).min(dims[i] - 1))
    };
    for m in anatomy.meshes() {
        for v in &m.vertices {
            occ[lin(cell_of(v))] = true;
        }
    }
    // largest face-connected component among those holding skin vertices
    let mut comp = vec![u32::MAX; occ.len()];
    let mut sizes: Vec<usize> = Vec::new();
    for start in 0..occ.len() {
        if !occ[start] || comp[start] != u32::MAX {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0;
        let mut stack = vec![start];
        comp[start] = id;
        while let Some(c) = stack.pop() {
            size += 1;
            let i = c % dims[0];
            let j = (c / dims[0]) % dims[1];
            let k = c / (dims[0] * dims[1]);
            let mut visit = |x: usize, y: usize, z: usize| {
                if x < dims[0] && y < dims[1] && z < dims[2] {
                    let m = lin([x, y, z]);
                    if occ[m] && comp[m] == u32::MAX {
                        comp[m] = id;
                        stack.push(m);
                    }
                }
            };
            visit(i.wrapping_sub(1), j, k);
            visit(i + 1, j, k);
            visit(i, j.wrapping_sub(1), k);
            visit(i, j + 1, k);
            visit(i, j, k.wrapping_sub(1));
            visit(i, j, k + 1);
        }
        sizes.push(size);
    }
    let mut has_skin = vec![false; sizes.len()];
    for v in &anatomy.skin.vertices {
        has_skin[comp[lin(cell_of(v))] as usize] = true;
    }
    let keep = (0..sizes.len())
        .filter(|&c| has_skin[c])
        .max_by_key(|&c| (sizes[c], std::cmp::Reverse(c)))
        .ok_or_else(|| Error::Coverage("no occupied cells hold skin vertices".into()))?;
    // a vertex cell that touches the body only along an edge or corner is
    // joined by the shortest face path
    let kept = keep as u32;
    for m in anatomy.meshes() {
        for v in &m.vertices {
            let start = lin(cell_of(v));
            if comp[start] == kept {
                continue;
            }
            let mut parent: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
            parent.insert(start, start);
            let mut q = VecDeque::from([start]);
            let mut hit = None;
            while let Some(c) = q.pop_front() {
                if comp[c] == kept {
                    hit = Some(c);
                    break;
                }
                let i = c % dims[0];
                let j = (c / dims[0]) % dims[1];
                let k = c / (dims[0] * dims[1]);
                for (x, y, z) in [
                    (i.wrapping_sub(1), j, k),
                    (i + 1, j, k),
                    (i, j.wrapping_sub(1), k),
                    (i, j + 1, k),
                    (i, j, k.wrapping_sub(1)),
                    (i, j, k + 1),
                ] {
                    if x < dims[0] && y < dims[1] && z < dims[2] {
                        let m = lin([x, y, z]);
                        if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(m) {
                            e.insert(c);
                            q.push_back(m);
                        }
                    }
                }
            }
            let mut c = hit.ok_or_else(|| Error::Coverage("vertex cell cannot reach the lattice body".into()))?;
            while c != start {
                c = parent[&c];
                comp[c] = kept;
            }
        }
    }
    let mut cells = Vec::new();
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                if comp[lin([i, j, k])] == keep as u32 {
                    cells.push([i, j, k]);
                }
            }
        }
    }
    let lat = HexLattice::from_cells(origin, h, dims, cells)?;
    for (tag, m) in [(SurfaceTag::Skin, &anatomy.skin), (SurfaceTag::Skull, &anatomy.skull), (SurfaceTag::Jaw, &anatomy.jaw)] {
        if let Some(i) = m.vertices.iter().position(|v| lat.locate(v).is_none()) {
            return Err(Error::Coverage(format!("{} vertex {i} fell outside the kept lattice component", tag.name())));
        }
    }
    Ok(lat)
}

/// Sparse trilinear embedding of surface vertices into lattice nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub tag: SurfaceTag,
    pub n_nodes: usize,
    /// Per vertex: (node, weight) pairs with nonzero weight.
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Embedding {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn apply(&self, u: &[Vec3]) -> Vec<Vec3> {
        self.rows.iter().map(|r| r.iter().map(|&(n, w)| u[n] * w).sum()).collect()
    }

    /// Wᵀ·g: scatter per-vertex vectors onto nodes.
    pub fn scatter(&self, g: &[Vec3], out: &mut [Vec3]) {
        for (r, gv) in self.rows.iter().zip(g) {
            for &(n, w) in r {
                out[n] += gv * w;
            }
        }
    }

    /// Nodes with any nonzero weight.
    pub fn support(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.rows.iter().flatten().map(|&(n, _)| n).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

pub fn embed(lattice: &HexLattice, mesh: &TriMesh, tag: SurfaceTag) -> Result<Embedding> {
    let mut rows = Vec::with_capacity(mesh.vertices.len());
    for (i, v) in mesh.vertices.iter().enumerate() {
        let (e, local) = lattice
            .locate(v)
            .ok_or_else(|| Error::Coverage(format!("{} vertex {i} at {:?} is outside the lattice", tag.name(), v.as_slice())))?;
        let (w, _) = trilinear_unchecked(&local, lattice.h);
        let row = lattice.elements[e]
            .iter()
            .zip(w)
            .filter(|(_, w)| *w != 0.0)
            .map(|(&n, w)| (n, w))
            .collect();
        rows.push(row);
    }
    Ok(Embedding { tag, n_nodes: lattice.n_nodes(), rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    Center,
    #[default]
    Gauss8,
}

/// Shape-function gradients at each quadrature point, shared by all elements.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<Vec3>,
    /// Fraction of the element volume carried by each point.
    pub weights: Vec<f64>,
    pub grads: Vec<[Vec3; 8]>,
}

impl QuadratureRule {
    pub fn new(q: Quadrature, h: f64) -> Self {
        let points: Vec<Vec3> = match q {
            Quadrature::Center => vec![Vec3::repeat(0.5)],
            Quadrature::Gauss8 => {
                let a = 0.5 / 3f64.sqrt();
                (0..8)
                    .map(|c| {
                        let s = |b: usize| if b == 0 { 0.5 - a } else { 0.5 + a };
                        Vec3::new(s(c & 1), s((c >> 1) & 1), s((c >> 2) & 1))
                    })
                    .collect()
            }
        };
        let weights = vec![1.0 / points.len() as f64; points.len()];
        let grads = points.iter().map(|p| trilinear_unchecked(p, h).1).collect();
        Self { points, weights, grads }
    }
}

/// Deformation gradient of element `e` at local point `q` (in [0,1]³).
pub fn element_gradient(lattice: &HexLattice, u: &[Vec3], e: usize, q: &Vec3) -> Mat3 {
    let (_, g) = trilinear_unchecked(q, lattice.h);
    gradient_from(&lattice.elements[e], u, &g)
}

#[inline]
pub fn gradient_from(nodes: &[usize; 8], u: &[Vec3], grads: &[Vec3; 8]) -> Mat3 {
    let mut f = Mat3::zeros();
    for c in 0..8 {
        f += u[nodes[c]] * grads[c].transpose();
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SoftSampling {
    VolumeUniform,
    ElementCenters,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoftPoint {
    pub element: usize,
    pub point: Vec3,
}

pub fn sample_soft_points(lattice: &HexLattice, n: usize, seed: u64, mode: SoftSampling) -> Vec<SoftPoint> {
    match mode {
        SoftSampling::ElementCenters => (0..lattice.n_elements())
            .map(|e| SoftPoint { element: e, point: lattice.element_center(e) })
            .collect(),
        SoftSampling::VolumeUniform => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let e = rng.random_range(0..lattice.n_elements());
                    let local = Vec3::new(rng.random(), rng.random(), rng.random());
                    SoftPoint { element: e, point: lattice.cell_min(e) + local * lattice.h }
                })
                .collect()
        }
    }
}

pub fn format_lattice(lattice: &HexLattice, embeddings: &[&Embedding]) -> String {
    let mut s = String::new();
    let o = lattice.origin;
    writeln!(s, "latv1").unwrap();
    writeln!(s, "origin {} {} {}", o.x, o.y, o.z).unwrap();
    writeln!(s, "h {}", lattice.h).unwrap();
    writeln!(s, "dims {} {} {}", lattice.dims[0], lattice.dims[1], lattice.dims[2]).unwrap();
    writeln!(s, "counts {} {} {}", lattice.n_nodes(), lattice.n_elements(), embeddings.len()).unwrap();
    writeln!(s, "nodes").unwrap();
    for p in &lattice.nodes {
        writeln!(s, "{} {} {}", p.x, p.y, p.z).unwrap();
    }
    writeln!(s, "elements").unwrap();
    for (c, e) in lattice.cells.iter().zip(&lattice.elements) {
        writeln!(s, "{} {} {} {} {} {} {} {} {} {} {}", c[0], c[1], c[2], e[0], e[1], e[2], e[3], e[4], e[5], e[6], e[7])
            .unwrap();
    }
    for emb in embeddings {
        let nnz: usize = emb.rows.iter().map(|r| r.len()).sum();
        writeln!(s, "embedding {} {} {}", emb.tag.name(), emb.n_rows(), nnz).unwrap();
        for (r, row) in emb.rows.iter().enumerate() {
            for &(c, w) in row {
                writeln!(s, "{r} {c} {w}").unwrap();
            }
        }
    }
    s
}

pub fn write_lattice(path: impl AsRef<Path>, lattice: &HexLattice, embeddings: &[&Embedding]) -> Result<()> {
    std::fs::write(path, format_lattice(lattice, embeddings))?;
    Ok(())
}

struct Lines<'a> {
    it: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_fields(&mut self) -> Result<Vec<&'a str>> {
        for (i, l) in self.it.by_ref() {
            self.line = i + 1;
            let f: Vec<&str> = l.split_whitespace().collect();
            if !f.is_empty() {
                return Ok(f);
            }
        }
        Err(Error::Parse { line: self.line + 1, msg: "unexpected end of file".into() })
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| Error::Parse { line: self.line, msg: format!("bad number `{s}`") })
    }

    fn keyword(&mut self, kw: &str, n: usize) -> Result<Vec<&'a str>> {
        let f = self.next_fields()?;
        if f[0] != kw || f.len() != n + 1 {
            return Err(Error::Parse { line: self.line, msg: format!("expected `{kw}` with {n} values") });
        }
        Ok(f[1..].to_vec())
    }
}

pub fn parse_lattice(text: &str) -> Result<(HexLattice, Vec<Embedding>)> {
    let mut l = Lines { it: text.lines().enumerate(), line: 0 };
    let head = l.next_fields()?;
    if head != ["latv1"] {
        return Err(Error::Parse { line: l.line, msg: "missing `latv1` header".into() });
    }
    let f = l.keyword("origin", 3)?;
    let origin = Vec3::new(l.num(f[0])?, l.num(f[1])?, l.num(f[2])?);
    let f = l.keyword("h", 1)?;
    let h: f64 = l.num(f[0])?;
    let f = l.keyword("dims", 3)?;
    let dims = [l.num(f[0])?, l.num(f[1])?, l.num(f[2])?];
    let f = l.keyword("counts", 3)?;
    let (nn, ne, nemb): (usize, usize, usize) = (l.num(f[0])?, l.num(f[1])?, l.num(f[2])?);
    l.keyword("nodes", 0)?;
    let mut nodes = Vec::with_capacity(nn);
    for _ in 0..nn {
        let f = l.next_fields()?;
        if f.len() != 3 {
            return Err(Error::Parse { line: l.line, msg: "node needs 3 coordinates".into() });
        }
        nodes.push(Vec3::new(l.num(f[0])?, l.num(f[1])?, l.num(f[2])?));
    }
    l.keyword("elements", 0)?;
    let mut cells = Vec::with_capacity(ne);
    let mut elems = Vec::with_capacity(ne);
    for _ in 0..ne {
        let f = l.next_fields()?;
        if f.len() != 11 {
            return Err(Error::Parse { line: l.line, msg: "element needs 3 cell indices and 8 nodes".into() });
        }
        cells.push([l.num(f[0])?, l.num(f[1])?, l.num(f[2])?]);
        let mut e = [0usize; 8];
        for c in 0..8 {
            e[c] = l.num(f[3 + c])?;
        }
        elems.push(e);
    }
    let lattice = HexLattice::from_cells(origin, h, dims, cells)?;
    if lattice.elements != elems || lattice.nodes.len() != nn {
        return Err(Error::Parse { line: l.line, msg: "element incidence inconsistent with cell set".into() });
    }
    let mut embeddings = Vec::new();
    for _ in 0..nemb {
        let f = l.keyword("embedding", 3)?;
        let tag = SurfaceTag::parse(f[0], l.line)?;
        let (rows, nnz): (usize, usize) = (l.num(f[1])?, l.num(f[2])?);
        let mut r = vec![Vec::new(); rows];
        for _ in 0..nnz {
            let f = l.next_fields()?;
            if f.len() != 3 {
                return Err(Error::Parse { line: l.line, msg: "triplet needs row col weight".into() });
            }
            let (row, col, w): (usize, usize, f64) = (l.num(f[0])?, l.num(f[1])?, l.num(f[2])?);
            if row >= rows || col >= nn {
                return Err(Error::Parse { line: l.line, msg: "triplet index out of range".into() });
            }
            r[row].push((col, w));
        }
        embeddings.push(Embedding { tag, n_nodes: nn, rows: r });
    }
    Ok((lattice, embeddings))
}

pub fn read_lattice(path: impl AsRef<Path>) -> Result<(HexLattice, Vec<Embedding>)> {
    parse_lattice(&std::fs::read_to_string(path)?)
}
