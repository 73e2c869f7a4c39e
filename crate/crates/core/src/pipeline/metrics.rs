//! Surface accuracy and anatomical constraint metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{edge_triangle_penetrations, sample_surface, MeshDistance, TriMesh};
use crate::numerics::{kabsch, RigidTransform, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    /// Mean vertex distance (mm).
    pub v2v: f64,
    /// Mean distance from reference vertices to the result surface (mm).
    pub s2m: f64,
    pub fscore: f64,
    /// Mean cosine distance between vertex normals.
    pub normal_error: f64,
    /// Residual of the jaw's best rigid fit (mm).
    pub jaw_rigidity: f64,
    /// Mean skull vertex travel (mm).
    pub skull_fixation: f64,
    /// Bone V2V against the oracle bones (mm).
    pub bone_fidelity: f64,
    pub penetration_pairs: usize,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.v2v, self.s2m, self.fscore, self.normal_error, self.jaw_rigidity, self.skull_fixation, self.bone_fidelity];
        if vals.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || self.fscore > 1.0 {
            return Err(Error::Numeric(format!("metric report out of range: {self:?}")));
        }
        Ok(())
    }

    /// Component-wise mean; penetration pairs are summed.
    pub fn mean(reports: &[MetricReport]) -> MetricReport {
        if reports.is_empty() {
            return MetricReport::default();
        }
        let n = reports.len() as f64;
        let avg = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MetricReport {
            v2v: avg(|r| r.v2v),
            s2m: avg(|r| r.s2m),
            fscore: avg(|r| r.fscore),
            normal_error: avg(|r| r.normal_error),
            jaw_rigidity: avg(|r| r.jaw_rigidity),
            skull_fixation: avg(|r| r.skull_fixation),
            bone_fidelity: avg(|r| r.bone_fidelity),
            penetration_pairs: reports.iter().map(|r| r.penetration_pairs).sum(),
        }
    }
}

fn selected(n: usize, mask: Option<&[usize]>) -> Result<Vec<usize>> {
    match mask {
        None => Ok((0..n).collect()),
        Some(m) => {
            if let Some(&bad) = m.iter().find(|&&i| i >= n) {
                return Err(Error::InvalidInput(format!("mask index {bad} out of range for {n} vertices")));
            }
            if m.is_empty() {
                return Err(Error::InvalidInput("mask selects no vertices".into()));
            }
            Ok(m.to_vec())
        }
    }
}

fn same_topology(a: &TriMesh, b: &TriMesh) -> Result<()> {
    if a.vertices.len() != b.vertices.len() || a.triangles != b.triangles {
        return Err(Error::InvalidInput("meshes do not share a topology".into()));
    }
    Ok(())
}

pub fn metric_v2v(reference: &TriMesh, result: &TriMesh, mask: Option<&[usize]>) -> Result<f64> {
    same_topology(reference, result)?;
    let idx = selected(reference.vertices.len(), mask)?;
    Ok(idx.iter().map(|&i| (reference.vertices[i] - result.vertices[i]).norm()).sum::<f64>() / idx.len() as f64)
}

pub fn metric_s2m(reference: &TriMesh, result: &TriMesh, mask: Option<&[usize]>) -> Result<f64> {
    let idx = selected(reference.vertices.len(), mask)?;
    if result.triangles.is_empty() {
        return Err(Error::InvalidInput("result mesh has no triangles".into()));
    }
    let query = MeshDistance::new(result);
    Ok(idx.iter().map(|&i| query.distance(&reference.vertices[i])).sum::<f64>() / idx.len() as f64)
}

pub fn metric_normal_error(reference: &TriMesh, result: &TriMesh, mask: Option<&[usize]>) -> Result<f64> {
    same_topology(reference, result)?;
    let idx = selected(reference.vertices.len(), mask)?;
    let (na, nb) = (reference.vertex_normals(), result.vertex_normals());
    // 1 - cos as half the squared chord, exact zero for equal normals
    Ok(idx.iter().map(|&i| 0.5 * (na[i] - nb[i]).norm_squared()).sum::<f64>() / idx.len() as f64)
}

/// Triangles whose corners all lie in the mask.
pub fn masked_surface(mesh: &TriMesh, mask: Option<&[usize]>) -> Result<TriMesh> {
    let Some(m) = mask else { return Ok(mesh.clone()) };
    let mut keep = vec![false; mesh.vertices.len()];
    for &i in m {
        *keep.get_mut(i).ok_or_else(|| Error::InvalidInput(format!("mask index {i} out of range")))? = true;
    }
    let sub = mesh.sub_mesh(|t| mesh.triangles[t].iter().all(|&v| keep[v]));
    if sub.triangles.is_empty() {
        return Err(Error::InvalidInput("mask selects no triangles".into()));
    }
    Ok(sub)
}

/// Harmonic mean of precision and recall at distance `tau`, from `n`
/// area-uniform samples on each surface.
pub fn metric_fscore(reference: &TriMesh, result: &TriMesh, mask: Option<&[usize]>, n: usize, tau: f64, seed: u64) -> Result<f64> {
    if n == 0 || !(tau > 0.0) {
        return Err(Error::InvalidInput("fscore needs samples and a positive threshold".into()));
    }
    let (a, b) = (masked_surface(reference, mask)?, masked_surface(result, mask)?);
    let within = |from: &TriMesh, to: &TriMesh, seed: u64| -> Result<f64> {
        let query = MeshDistance::new(to);
        let pts = sample_surface(from, n, seed)?;
        Ok(pts.iter().filter(|s| query.distance(&s.evaluate(from)) <= tau).count() as f64 / n as f64)
    };
    let precision = within(&b, &a, seed)?;
    let recall = within(&a, &b, seed.wrapping_add(1))?;
    Ok(if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) })
}

/// Mean distance from the posed jaw to the best rigid motion of the neutral jaw.
pub fn metric_jaw_rigidity(neutral: &[Vec3], posed: &[Vec3]) -> Result<f64> {
    Ok(jaw_fit(neutral, posed)?.1)
}

/// Best rigid motion of the jaw and its mean residual.
pub fn jaw_fit(neutral: &[Vec3], posed: &[Vec3]) -> Result<(RigidTransform, f64)> {
    if neutral.len() != posed.len() {
        return Err(Error::InvalidInput("jaw point sets differ in size".into()));
    }
    let fit = kabsch(neutral, posed, None)?;
    let r = neutral.iter().zip(posed).map(|(a, b)| (fit.apply(a) - b).norm()).sum::<f64>() / neutral.len() as f64;
    Ok((fit, r))
}

pub fn metric_skull_fixation(neutral: &[Vec3], posed: &[Vec3]) -> Result<f64> {
    if neutral.len() != posed.len() || neutral.is_empty() {
        return Err(Error::InvalidInput("skull point sets differ in size".into()));
    }
    Ok(neutral.iter().zip(posed).map(|(a, b)| (a - b).norm()).sum::<f64>() / neutral.len() as f64)
}

/// V2V over all bone vertices.
pub fn metric_bone_fidelity(predicted: &[&TriMesh], oracle: &[&TriMesh]) -> Result<f64> {
    if predicted.len() != oracle.len() {
        return Err(Error::InvalidInput("bone lists differ".into()));
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, o) in predicted.iter().zip(oracle) {
        same_topology(p, o)?;
        sum += p.vertices.iter().zip(&o.vertices).map(|(a, b)| (a - b).norm()).sum::<f64>();
        n += p.vertices.len();
    }
    Ok(if n == 0 { 0.0 } else { sum / n as f64 })
}

/// Crossing pairs between skin and each bone plus between the bones.
pub fn penetration_pairs(skin: &TriMesh, skull: &TriMesh, jaw: &TriMesh) -> usize {
    edge_triangle_penetrations(skin, skull) + edge_triangle_penetrations(skin, jaw) + edge_triangle_penetrations(skull, jaw)
}

/// Mean distance between neutral jaw vertices moved by a recovered and a true jaw motion.
pub fn jaw_recovery_error(neutral_jaw: &[Vec3], recovered: &RigidTransform, truth: &RigidTransform) -> f64 {
    if neutral_jaw.is_empty() {
        return 0.0;
    }
    neutral_jaw.iter().map(|x| (recovered.apply(x) - truth.apply(x)).norm()).sum::<f64>() / neutral_jaw.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub fscore_samples: usize,
    /// mm
    pub fscore_tau: f64,
    /// Restrict surface metrics to the corpus evaluation mask.
    pub frontal_only: bool,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self { fscore_samples: 32_000, fscore_tau: 1.0, frontal_only: true }
    }
}

/// Deformed surfaces plus the material-space bones they were deformed from.
#[derive(Debug, Clone, Copy)]
pub struct Outcome<'a> {
    pub skin: &'a TriMesh,
    pub skull: &'a TriMesh,
    pub jaw: &'a TriMesh,
    pub rest_skull: &'a TriMesh,
    pub rest_jaw: &'a TriMesh,
}

/// Every metric of an outcome against a reference skin and oracle bones.
pub fn evaluate_outcome(
    out: &Outcome<'_>,
    reference_skin: &TriMesh,
    oracle_bones: Option<(&TriMesh, &TriMesh)>,
    mask: Option<&[usize]>,
    opts: &MetricOptions,
    seed: u64,
) -> Result<MetricReport> {
    let report = MetricReport {
        v2v: metric_v2v(reference_skin, out.skin, mask)?,
        s2m: metric_s2m(reference_skin, out.skin, mask)?,
        fscore: metric_fscore(reference_skin, out.skin, mask, opts.fscore_samples, opts.fscore_tau, seed)?,
        normal_error: metric_normal_error(reference_skin, out.skin, mask)?,
        jaw_rigidity: metric_jaw_rigidity(&out.rest_jaw.vertices, &out.jaw.vertices)?,
        skull_fixation: metric_skull_fixation(&out.rest_skull.vertices, &out.skull.vertices)?,
        bone_fidelity: match oracle_bones {
            Some((s, j)) => metric_bone_fidelity(&[out.rest_skull, out.rest_jaw], &[s, j])?,
            None => 0.0,
        },
        penetration_pairs: penetration_pairs(out.skin, out.skull, out.jaw),
    };
    report.validate()?;
    Ok(report)
}

pub const METRIC_CSV_HEADER: &str = "label,v2v,s2m,fscore,normal_error,jaw_rigidity,skull_fixation,bone_fidelity,penetration_pairs";

pub fn metric_csv_row(label: &str, r: &MetricReport) -> String {
    format!(
        "{label},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
        r.v2v, r.s2m, r.fscore, r.normal_error, r.jaw_rigidity, r.skull_fixation, r.bone_fidelity, r.penetration_pairs
    )
}

pub fn format_metric_csv(rows: &[(String, MetricReport)]) -> String {
    let mut s = String::from(METRIC_CSV_HEADER);
    s.push('\n');
    for (label, r) in rows {
        writeln!(s, "{}", metric_csv_row(label, r)).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rotation;

    fn patch(offset: f64) -> TriMesh {
        let n = 6;
        let mut v = Vec::new();
        for j in 0..=n {
            for i in 0..=n {
                v.push(Vec3::new(i as f64 * 2.0, j as f64 * 2.0, offset));
            }
        }
        let mut t = Vec::new();
        for j in 0..n {
            for i in 0..n {
                let a = j * (n + 1) + i;
                t.push([a, a + 1, a + n + 2]);
                t.push([a, a + n + 2, a + n + 1]);
            }
        }
        TriMesh::new(v, t).unwrap()
    }

    #[test]
    fn identical_meshes_are_perfect() {
        let m = patch(0.0);
        assert_eq!(metric_v2v(&m, &m, None).unwrap(), 0.0);
        assert_eq!(metric_s2m(&m, &m, None).unwrap(), 0.0);
        assert_eq!(metric_normal_error(&m, &m, None).unwrap(), 0.0);
        assert_eq!(metric_fscore(&m, &m, None, 2000, 1.0, 3).unwrap(), 1.0);
    }

    #[test]
    fn uniform_offsets() {
        let (a, b) = (patch(0.0), patch(1.0));
        assert!((metric_v2v(&a, &b, None).unwrap() - 1.0).abs() < 1e-12);
        assert!((metric_s2m(&a, &b, None).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(metric_fscore(&a, &patch(2.0), None, 2000, 1.0, 3).unwrap(), 0.0);
    }

    #[test]
    fn v2v_matches_brute_force_with_mask() {
        let a = patch(0.0);
        let mut b = a.clone();
        for (i, v) in b.vertices.iter_mut().enumerate() {
            v.z += (i % 5) as f64 * 0.3;
        }
        let mask: Vec<usize> = (0..a.vertices.len()).step_by(3).collect();
        let brute = mask.iter().map(|&i| (i % 5) as f64 * 0.3).sum::<f64>() / mask.len() as f64;
        assert!((metric_v2v(&a, &b, Some(&mask)).unwrap() - brute).abs() < 1e-12);
    }

    #[test]
    fn half_overlap_matches_dense_oracle() {
        // result covers the reference patch plus an equal area 3 mm away
        let a = patch(0.0);
        let mut far = patch(0.0);
        for v in &mut far.vertices {
            v.x += 40.0;
        }
        let b = TriMesh::merged(&[&a, &far]);
        let f = metric_fscore(&a, &b, None, 20_000, 1.0, 9).unwrap();
        // precision 1/2, recall 1
        assert!((f - 2.0 / 3.0).abs() < 0.02, "{f}");
    }

    #[test]
    fn rigidity_is_kabsch_residual() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new((i as f64).sin() * 10.0, (i as f64 * 0.7).cos() * 8.0, i as f64)).collect();
        let r = rotation(&Vec3::new(0.2, 1.0, 0.1).normalize(), 0.4);
        let moved: Vec<Vec3> = pts.iter().map(|p| r * p + Vec3::new(1.0, 2.0, 3.0)).collect();
        assert!(metric_jaw_rigidity(&pts, &moved).unwrap() < 1e-9);
        let mut bent = moved.clone();
        bent[3].x += 1.0;
        let fit = kabsch(&pts, &bent, None).unwrap();
        let oracle = pts.iter().zip(&bent).map(|(a, b)| (fit.apply(a) - b).norm()).sum::<f64>() / 20.0;
        assert!((metric_jaw_rigidity(&pts, &bent).unwrap() - oracle).abs() < 1e-12);
        assert_eq!(metric_skull_fixation(&pts, &pts).unwrap(), 0.0);
    }

    #[test]
    fn bone_fidelity_offset() {
        let (a, b) = (patch(0.0), patch(1.0));
        assert_eq!(metric_bone_fidelity(&[&a], &[&a]).unwrap(), 0.0);
        assert!((metric_bone_fidelity(&[&a, &a], &[&b, &b]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_of_both_inputs_leaves_metrics() {
        let a = patch(0.0);
        let mut b = a.clone();
        for (i, v) in b.vertices.iter_mut().enumerate() {
            v.z += ((i * 7) % 3) as f64 * 0.4;
        }
        let t = RigidTransform { r: rotation(&Vec3::new(1.0, 1.0, 0.0).normalize(), 0.7), t: Vec3::new(5.0, -2.0, 1.0) };
        let move_mesh = |m: &TriMesh| m.with_vertices(m.vertices.iter().map(|v| t.apply(v)).collect()).unwrap();
        let (ta, tb) = (move_mesh(&a), move_mesh(&b));
        assert!((metric_v2v(&a, &b, None).unwrap() - metric_v2v(&ta, &tb, None).unwrap()).abs() < 1e-9);
        assert!((metric_s2m(&a, &b, None).unwrap() - metric_s2m(&ta, &tb, None).unwrap()).abs() < 1e-9);
        assert!((metric_normal_error(&a, &b, None).unwrap() - metric_normal_error(&ta, &tb, None).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn report_mean_and_csv() {
        let r = MetricReport { v2v: 1.0, fscore: 0.5, penetration_pairs: 2, ..Default::default() };
        let m = MetricReport::mean(&[r, MetricReport::default()]);
        assert_eq!(m.v2v, 0.5);
        assert_eq!(m.penetration_pairs, 2);
        let csv = format_metric_csv(&[("a".into(), r)]);
        assert!(csv.starts_with(METRIC_CSV_HEADER));
        assert_eq!(csv.lines().count(), 2);
    }
}
