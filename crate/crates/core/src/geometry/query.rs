//! Distance, intersection and inside/outside queries.

use super::{Aabb, TriMesh};
use crate::error::Result;
use crate::numerics::Vec3;

/// Closest point on triangle `abc` to `p`, with barycentric weights.
pub fn closest_point_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// Uniform bucket grid over triangle bounding boxes.
#[derive(Debug, Clone)]
pub struct TriangleGrid {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
}

impl TriangleGrid {
    pub fn new(mesh: &TriMesh) -> Self {
        let nt = mesh.triangles.len().max(1);
        let bbox = mesh.bbox().expanded(1e-9);
        let ext = bbox.extent();
        // about two triangles per occupied cell on a closed surface
        let mean_edge = (2.0 * mesh.area() / nt as f64).sqrt().max(1e-12);
        let longest = ext.max().max(1e-9);
        let cell = (mean_edge * 1.5).max(longest / 256.0);
        let dims = [0, 1, 2].map(|i| ((ext[i] / cell).ceil() as usize).max(1));
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; ncell + 1];
        let tri_range = |t: usize| -> [[usize; 2]; 3] {
            let c = mesh.corners(t);
            let b = Aabb::from_points(&c);
            [0, 1, 2].map(|i| {
                let lo = (((b.min[i] - bbox.min[i]) / cell).floor().max(0.0) as usize).min(dims[i] - 1);
                let hi = (((b.max[i] - bbox.min[i]) / cell).floor().max(0.0) as usize).min(dims[i] - 1);
                [lo, hi]
            })
        };
        let index = |i: usize, j: usize, k: usize| i + dims[0] * (j + dims[1] * k);
        for t in 0..mesh.triangles.len() {
            let r = tri_range(t);
            for k in r[2][0]..=r[2][1] {
                for j in r[1][0]..=r[1][1] {
                    for i in r[0][0]..=r[0][1] {
                        counts[index(i, j, k) + 1] += 1;
                    }
                }
            }
        }
        for c in 0..ncell {
            counts[c + 1] += counts[c];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[ncell] as usize];
        for t in 0..mesh.triangles.len() {
            let r = tri_range(t);
            for k in r[2][0]..=r[2][1] {
                for j in r[1][0]..=r[1][1] {
                    for i in r[0][0]..=r[0][1] {
                        let c = index(i, j, k);
                        items[fill[c] as usize] = t as u32;
                        fill[c] += 1;
                    }
                }
            }
        }
        Self { origin: bbox.min, cell, dims, starts: counts, items }
    }

    fn cell_of(&self, p: &Vec3) -> [usize; 3] {
        [0, 1, 2].map(|i| (((p[i] - self.origin[i]) / self.cell).floor().max(0.0) as usize).min(self.dims[i] - 1))
    }

    fn bucket(&self, i: usize, j: usize, k: usize) -> &[u32] {
        let c = i + self.dims[0] * (j + self.dims[1] * k);
        &self.items[self.starts[c] as usize..self.starts[c + 1] as usize]
    }

    /// Triangles whose boxes may overlap `b`; may contain duplicates.
    pub fn candidates(&self, b: &Aabb, out: &mut Vec<u32>) {
        out.clear();
        let lo = self.cell_of(&b.min);
        let hi = self.cell_of(&b.max);
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    out.extend_from_slice(self.bucket(i, j, k));
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: `first..first + count` into the triangle order; inner: children.
    first: u32,
    count: u32,
    left: u32,
    right: u32,
}

/// Bounding-volume hierarchy over triangles for nearest-point queries.
#[derive(Debug, Clone)]
struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

impl Bvh {
    fn new(mesh: &TriMesh) -> Self {
        let n = mesh.triangles.len();
        let boxes: Vec<(Vec3, Vec3, Vec3)> = (0..n)
            .map(|t| {
                let c = mesh.corners(t);
                let lo = c[0].inf(&c[1]).inf(&c[2]);
                let hi = c[0].sup(&c[1]).sup(&c[2]);
                (lo, hi, (c[0] + c[1] + c[2]) / 3.0)
            })
            .collect();
        let mut order: Vec<u32> = (0..n as u32).collect();
        let mut nodes = Vec::with_capacity(2 * n / 2 + 1);
        if n > 0 {
            Self::build(&boxes, &mut order, 0, n, &mut nodes);
        }
        Self { nodes, order }
    }

    fn build(boxes: &[(Vec3, Vec3, Vec3)], order: &mut [u32], first: usize, end: usize, nodes: &mut Vec<BvhNode>) -> u32 {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let mut clo = lo;
        let mut chi = hi;
        for &t in &order[first..end] {
            let b = &boxes[t as usize];
            lo = lo.inf(&b.0);
            hi = hi.sup(&b.1);
            clo = clo.inf(&b.2);
            chi = chi.sup(&b.2);
        }
        let id = nodes.len() as u32;
        nodes.push(BvhNode { lo, hi, first: first as u32, count: (end - first) as u32, left: 0, right: 0 });
        if end - first <= 4 {
            return id;
        }
        let axis = (chi - clo).imax();
        let mid = (first + end) / 2;
        order[first..end].select_nth_unstable_by(mid - first, |a, b| {
            boxes[*a as usize].2[axis].partial_cmp(&boxes[*b as usize].2[axis]).unwrap().then(a.cmp(b))
        });
        let left = Self::build(boxes, order, first, mid, nodes);
        let right = Self::build(boxes, order, mid, end, nodes);
        let node = &mut nodes[id as usize];
        node.count = 0;
        node.left = left;
        node.right = right;
        id
    }

    fn box_dist2(n: &BvhNode, p: &Vec3) -> f64 {
        let mut d = 0.0;
        for i in 0..3 {
            let v = if p[i] < n.lo[i] {
                n.lo[i] - p[i]
            } else if p[i] > n.hi[i] {
                p[i] - n.hi[i]
            } else {
                0.0
            };
            d += v * v;
        }
        d
    }
}

/// Accelerated exact closest-point queries against one mesh.
#[derive(Debug, Clone)]
pub struct MeshDistance<'a> {
    mesh: &'a TriMesh,
    bvh: Bvh,
}

#[derive(Debug, Clone, Copy)]
pub struct ClosestHit {
    pub distance: f64,
    pub triangle: usize,
    pub point: Vec3,
    pub bary: [f64; 3],
}

impl<'a> MeshDistance<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        Self { mesh, bvh: Bvh::new(mesh) }
    }

    pub fn closest(&self, p: &Vec3) -> ClosestHit {
        let mut best = ClosestHit { distance: f64::INFINITY, triangle: 0, point: *p, bary: [1.0, 0.0, 0.0] };
        let mut best2 = f64::INFINITY;
        if self.bvh.nodes.is_empty() {
            return best;
        }
        let mut stack: Vec<(u32, f64)> = vec![(0, Bvh::box_dist2(&self.bvh.nodes[0], p))];
        while let Some((id, d2)) = stack.pop() {
            if d2 >= best2 {
                continue;
            }
            let node = &self.bvh.nodes[id as usize];
            if node.count > 0 {
                for &t in &self.bvh.order[node.first as usize..(node.first + node.count) as usize] {
                    let t = t as usize;
                    let [a, b, c] = self.mesh.corners(t);
                    let (q, bary) = closest_point_triangle(p, &a, &b, &c);
                    let e2 = (q - p).norm_squared();
                    if e2 < best2 || (e2 == best2 && t < best.triangle) {
                        best2 = e2;
                        best = ClosestHit { distance: 0.0, triangle: t, point: q, bary };
                    }
                }
                continue;
            }
            let l = Bvh::box_dist2(&self.bvh.nodes[node.left as usize], p);
            let r = Bvh::box_dist2(&self.bvh.nodes[node.right as usize], p);
            // push the farther child first so the nearer one is expanded next
            if l <= r {
                stack.push((node.right, r));
                stack.push((node.left, l));
            } else {
                stack.push((node.left, l));
                stack.push((node.right, r));
            }
        }
        best.distance = best2.sqrt();
        best
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        self.closest(p).distance
    }
}

/// Exact unsigned distance by scanning every triangle.
pub fn point_to_mesh_distance(mesh: &TriMesh, p: &Vec3) -> f64 {
    (0..mesh.triangles.len())
        .map(|t| {
            let [a, b, c] = mesh.corners(t);
            (closest_point_triangle(p, &a, &b, &c).0 - p).norm_squared()
        })
        .fold(f64::INFINITY, f64::min)
        .sqrt()
}

fn orient(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a)))
}

/// Segment `pq` passes strictly through the interior of triangle `abc`.
pub fn segment_crosses_triangle(p: &Vec3, q: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let s1 = orient(a, b, c, p);
    let s2 = orient(a, b, c, q);
    if !((s1 > 0.0 && s2 < 0.0) || (s1 < 0.0 && s2 > 0.0)) {
        return false;
    }
    let t1 = orient(p, q, a, b);
    let t2 = orient(p, q, b, c);
    let t3 = orient(p, q, c, a);
    (t1 > 0.0 && t2 > 0.0 && t3 > 0.0) || (t1 < 0.0 && t2 < 0.0 && t3 < 0.0)
}

fn count_edges_through(edges_of: &TriMesh, tris_of: &TriMesh, skip_shared: bool) -> usize {
    if tris_of.triangles.is_empty() || edges_of.triangles.is_empty() {
        return 0;
    }
    let grid = TriangleGrid::new(tris_of);
    let mut stamp = vec![usize::MAX; tris_of.triangles.len()];
    let mut cand = Vec::new();
    let mut count = 0;
    for (ei, e) in edges_of.edges().iter().enumerate() {
        let p = edges_of.vertices[e[0]];
        let q = edges_of.vertices[e[1]];
        grid.candidates(&Aabb::from_points([&p, &q]), &mut cand);
        for &t in &cand {
            let t = t as usize;
            if stamp[t] == ei {
                continue;
            }
            stamp[t] = ei;
            let tri = tris_of.triangles[t];
            if skip_shared && (tri.contains(&e[0]) || tri.contains(&e[1])) {
                continue;
            }
            let [a, b, c] = tris_of.corners(t);
            if segment_crosses_triangle(&p, &q, &a, &b, &c) {
                count += 1;
            }
        }
    }
    count
}

/// Proper edge-triangle crossings between two meshes, counted both ways.
pub fn edge_triangle_penetrations(a: &TriMesh, b: &TriMesh) -> usize {
    count_edges_through(a, b, false) + count_edges_through(b, a, false)
}

/// Crossings of a mesh with itself, ignoring pairs that share a vertex.
pub fn self_penetrations(mesh: &TriMesh) -> usize {
    count_edges_through(mesh, mesh, true)
}

/// Brute-force crossing count used to cross-check the accelerated path.
pub fn edge_triangle_penetrations_exhaustive(a: &TriMesh, b: &TriMesh) -> usize {
    let one = |ea: &TriMesh, tb: &TriMesh| {
        let mut n = 0;
        for e in ea.edges() {
            for t in 0..tb.triangles.len() {
                let [x, y, z] = tb.corners(t);
                if segment_crosses_triangle(&ea.vertices[e[0]], &ea.vertices[e[1]], &x, &y, &z) {
                    n += 1;
                }
            }
        }
        n
    };
    one(a, b) + one(b, a)
}

/// Generalised winding number of a closed mesh around `p`.
pub fn winding_number(mesh: &TriMesh, p: &Vec3) -> f64 {
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += solid_angle(mesh, t, p);
    }
    total / (4.0 * std::f64::consts::PI)
}

#[inline]
pub(crate) fn solid_angle(mesh: &TriMesh, t: usize, p: &Vec3) -> f64 {
    let [a, b, c] = mesh.corners(t);
    let a = a - p;
    let b = b - p;
    let c = c - p;
    let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
    let num = a.dot(&b.cross(&c));
    let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
    2.0 * num.atan2(den)
}

/// Inside test by winding number (>= 0.5). The mesh must be closed.
pub fn inside(mesh: &TriMesh, p: &Vec3) -> Result<bool> {
    mesh.check_watertight()?;
    Ok(winding_number(mesh, p) >= 0.5)
}
