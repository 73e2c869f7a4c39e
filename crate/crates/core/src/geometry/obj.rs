//! Minimal Wavefront OBJ reader/writer.
//!
//! Confidence rides in the vertex colour slot: `v x y z c c c`.

use std::fmt::Write as _;
use std::path::Path;

use super::TriMesh;
use crate::error::{Error, Result};
use crate::numerics::Vec3;

#[derive(Debug, Clone)]
pub struct ObjLoad {
    pub mesh: TriMesh,
    /// Set when polygons with more than three corners were fan-split.
    pub fan_triangulated: bool,
}

pub fn parse_obj(text: &str) -> Result<ObjLoad> {
    let mut vertices = Vec::new();
    let mut conf = Vec::new();
    let mut any_conf = false;
    let mut triangles = Vec::new();
    let mut fanned = false;
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        let mut it = body.split_whitespace();
        match it.next() {
            Some("v") => {
                let vals: Vec<f64> = it
                    .map(|s| s.parse::<f64>().map_err(|e| Error::Parse { line, msg: format!("bad number `{s}`: {e}") }))
                    .collect::<Result<_>>()?;
                if vals.len() < 3 {
                    return Err(Error::Parse { line, msg: "vertex needs three coordinates".into() });
                }
                if vals.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parse { line, msg: "non-finite coordinate".into() });
                }
                vertices.push(Vec3::new(vals[0], vals[1], vals[2]));
                if vals.len() >= 4 {
                    any_conf = true;
                    conf.push(vals[3]);
                } else {
                    conf.push(1.0);
                }
            }
            Some("f") => {
                let idx: Vec<usize> = it
                    .map(|tok| {
                        let head = tok.split('/').next().unwrap_or("");
                        let i: i64 = head
                            .parse()
                            .map_err(|e| Error::Parse { line, msg: format!("bad face index `{tok}`: {e}") })?;
                        let n = vertices.len() as i64;
                        let resolved = if i > 0 { i - 1 } else { n + i };
                        if i == 0 || resolved < 0 || resolved >= n {
                            return Err(Error::Parse { line, msg: format!("face index {i} out of range") });
                        }
                        Ok(resolved as usize)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(Error::Parse { line, msg: "face needs at least three corners".into() });
                }
                if idx.len() > 3 {
                    fanned = true;
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mut mesh = TriMesh::new(vertices, triangles)?;
    if any_conf {
        mesh = mesh.with_confidence(conf)?;
    }
    Ok(ObjLoad { mesh, fan_triangulated: fanned })
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<ObjLoad> {
    parse_obj(&std::fs::read_to_string(path)?)
}

pub fn format_obj(mesh: &TriMesh) -> String {
    let mut s = String::with_capacity(mesh.vertices.len() * 40 + mesh.triangles.len() * 20);
    for (i, v) in mesh.vertices.iter().enumerate() {
        match &mesh.confidence {
            Some(c) => writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[i], c[i], c[i]),
            None => writeln!(s, "v {} {} {}", v.x, v.y, v.z),
        }
        .expect("string write");
    }
    for t in &mesh.triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    s
}

pub fn save_obj(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_obj(mesh))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_is_fanned() {
        let o = parse_obj("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n").unwrap();
        assert!(o.fan_triangulated);
        assert_eq!(o.mesh.triangles, vec![[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn error_carries_line_number() {
        let err = parse_obj("v 0 0 0\nv 1 0 0\nv 1 x 0\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
        let err = parse_obj("v 0 0 0\nf 1 2 3\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn roundtrip_is_exact() {
        let m = TriMesh::new(
            vec![Vec3::new(0.1, 1.0 / 3.0, -2.5e-7), Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)],
            vec![[0, 1, 2]],
        )
        .unwrap()
        .with_confidence(vec![1.0, 0.1, 0.5])
        .unwrap();
        let back = parse_obj(&format_obj(&m)).unwrap().mesh;
        assert_eq!(back, m);
    }

    #[test]
    fn slash_and_negative_indices() {
        let o = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1/1 2//2 -1\n").unwrap();
        assert_eq!(o.mesh.triangles, vec![[0, 1, 2]]);
    }
}
