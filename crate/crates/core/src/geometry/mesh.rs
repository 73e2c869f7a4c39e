use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self { min: Vec3::repeat(f64::INFINITY), max: Vec3::repeat(f64::NEG_INFINITY) }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.grow(p);
        }
        b
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb { min: self.min.inf(&o.min), max: self.max.sup(&o.max) }
    }

    pub fn expanded(&self, margin: f64) -> Aabb {
        Aabb { min: self.min.add_scalar(-margin), max: self.max.add_scalar(margin) }
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn center(&self) -> Vec3 {
        0.5 * (self.min + self.max)
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Indexed triangle mesh with an optional per-vertex confidence channel.
#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
    pub confidence: Option<Vec<f64>>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidInput(format!("triangle {t:?} indexes past {n} vertices")));
        }
        Ok(Self { vertices, triangles, confidence: None })
    }

    pub fn with_confidence(mut self, confidence: Vec<f64>) -> Result<Self> {
        if confidence.len() != self.vertices.len() {
            return Err(Error::InvalidInput("confidence length differs from vertex count".into()));
        }
        self.confidence = Some(confidence);
        Ok(self)
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::InvalidInput(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self { vertices, triangles: self.triangles.clone(), confidence: self.confidence.clone() })
    }

    pub fn confidence_or_one(&self, i: usize) -> f64 {
        self.confidence.as_ref().map_or(1.0, |c| c[i])
    }

    pub fn bbox(&self) -> Aabb {
        Aabb::from_points(&self.vertices)
    }

    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.corners(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Area-weighted unit vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut n = vec![Vec3::zeros(); self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.corners(t);
            let fnrm = (b - a).cross(&(c - a));
            for &i in &self.triangles[t] {
                n[i] += fnrm;
            }
        }
        n.into_iter().map(|v| v.try_normalize(1e-300).unwrap_or_else(Vec3::zeros)).collect()
    }

    /// Unique undirected edges, sorted.
    pub fn edges(&self) -> Vec<[usize; 2]> {
        let mut e: Vec<[usize; 2]> = Vec::with_capacity(self.triangles.len() * 3);
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                e.push([a.min(b), a.max(b)]);
            }
        }
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Every edge shared by exactly two consistently oriented triangles.
    pub fn check_watertight(&self) -> Result<()> {
        let mut directed: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                *directed.entry((t[k], t[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &directed {
            if count != 1 {
                return Err(Error::Topology(format!("edge ({a},{b}) used {count} times in one direction")));
            }
            if directed.get(&(b, a)) != Some(&1) {
                return Err(Error::Topology(format!("open or inconsistently oriented edge ({a},{b})")));
            }
        }
        if self.triangles.is_empty() {
            return Err(Error::Topology("mesh has no triangles".into()));
        }
        Ok(())
    }

    /// Signed enclosed volume (positive for outward orientation).
    pub fn signed_volume(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                a.dot(&b.cross(&c)) / 6.0
            })
            .sum()
    }

    /// Triangles whose three corners all satisfy `keep`, as a standalone mesh
    /// that still refers to the full vertex array.
    pub fn sub_mesh(&self, keep: impl Fn(usize) -> bool) -> TriMesh {
        TriMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().copied().filter(|t| t.iter().all(|&i| keep(i))).collect(),
            confidence: None,
        }
    }

    /// Concatenate meshes into one vertex/triangle array.
    pub fn merged(parts: &[&TriMesh]) -> TriMesh {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for m in parts {
            let off = vertices.len();
            vertices.extend_from_slice(&m.vertices);
            triangles.extend(m.triangles.iter().map(|t| [t[0] + off, t[1] + off, t[2] + off]));
        }
        TriMesh { vertices, triangles, confidence: None }
    }
}
