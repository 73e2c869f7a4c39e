use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::{BoundField, FaceModel, SpatialMap};
use crate::lattice::HexLattice;
use crate::numerics::{kabsch, kabsch_residual, polar3, sym_eigen3, Mat3, RigidTransform, Vec3};

/// Complete simulation input: per-element actuation plus bone transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintBundle {
    pub actuation: Vec<Mat3>,
    pub jaw: RigidTransform,
    pub skull: RigidTransform,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExtractReport {
    /// Elements whose stretch needed PSD repair or whose Jacobian was singular.
    pub flagged: Vec<usize>,
    pub jaw_residual: f64,
    pub skull_residual: f64,
    /// Best rigid fit of the skull samples (reported, not applied).
    pub skull_fit: Option<RigidTransform>,
}

pub const PSD_TOL: f64 = 1e-8;

impl ConstraintBundle {
    pub fn identity(n_elements: usize) -> Self {
        Self {
            actuation: vec![Mat3::identity(); n_elements],
            jaw: RigidTransform::identity(),
            skull: RigidTransform::identity(),
            provenance: "identity".into(),
        }
    }

    pub fn n_elements(&self) -> usize {
        self.actuation.len()
    }

    /// Symmetry, PSD and rotation checks.
    pub fn validate(&self) -> Result<()> {
        for (e, a) in self.actuation.iter().enumerate() {
            if (a - a.transpose()).norm() > PSD_TOL || !a.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidInput(format!("actuation of element {e} is not symmetric")));
            }
            if sym_eigen3(a).0.min() < -PSD_TOL {
                return Err(Error::InvalidInput(format!("actuation of element {e} is not positive semi-definite")));
            }
        }
        for (name, t) in [("jaw", &self.jaw), ("skull", &self.skull)] {
            let r = &t.r;
            if (r.transpose() * r - Mat3::identity()).norm() > 1e-8 || (r.determinant() - 1.0).abs() > 1e-8 {
                return Err(Error::InvalidInput(format!("{name} rotation is not in SO(3)")));
            }
        }
        Ok(())
    }
}

/// Symmetric PSD part: symmetrise then clamp negative eigenvalues.
fn repair_psd(a: &Mat3) -> (Mat3, bool) {
    let s = (a + a.transpose()) * 0.5;
    let (vals, vecs) = sym_eigen3(&s);
    if vals.min() >= 0.0 {
        return (s, false);
    }
    let d = Mat3::from_diagonal(&vals.map(|v| v.max(0.0)));
    let out = vecs * d * vecs.transpose();
    ((out + out.transpose()) * 0.5, true)
}

/// Actuation from the polar stretch of `map`'s Jacobian at element centres;
/// jaw from the best rigid fit of `jaw_points` to their images.
pub fn extract_from_map(
    map: &dyn SpatialMap,
    lattice: &HexLattice,
    jaw_points: &[Vec3],
    skull_points: &[Vec3],
    provenance: &str,
) -> Result<(ConstraintBundle, ExtractReport)> {
    let mut report = ExtractReport::default();
    let mut actuation = Vec::with_capacity(lattice.n_elements());
    for e in 0..lattice.n_elements() {
        let (_, j) = map.map_with_jacobian(&lattice.element_center(e))?;
        let a = match polar3(&j) {
            Ok(p) => {
                let (s, repaired) = repair_psd(&p.s);
                if repaired {
                    report.flagged.push(e);
                }
                s
            }
            Err(_) => {
                report.flagged.push(e);
                repair_psd(&j).0
            }
        };
        actuation.push(a);
    }
    let jaw_img = jaw_points.iter().map(|x| map.map_point(x)).collect::<Result<Vec<_>>>()?;
    let jaw = kabsch(jaw_points, &jaw_img, None)?;
    report.jaw_residual = kabsch_residual(jaw_points, &jaw_img, &jaw);
    if skull_points.len() >= 3 {
        let img = skull_points.iter().map(|x| map.map_point(x)).collect::<Result<Vec<_>>>()?;
        let fit = kabsch(skull_points, &img, None)?;
        report.skull_residual = kabsch_residual(skull_points, &img, &fit);
        report.skull_fit = Some(fit);
    }
    let bundle = ConstraintBundle { actuation, jaw, skull: RigidTransform::identity(), provenance: provenance.into() };
    Ok((bundle, report))
}

/// Extraction from a trained model's expression field on a lattice built in
/// the identity's material space.
pub fn extract_constraints(
    model: &FaceModel,
    beta: &[f64],
    gamma: &[f64],
    lattice: &HexLattice,
    jaw_points: &[Vec3],
    skull_points: &[Vec3],
    provenance: &str,
) -> Result<(ConstraintBundle, ExtractReport)> {
    let z = FaceModel::joint_latent(beta, gamma);
    let map = BoundField { field: &model.expression, latent: &z };
    extract_from_map(&map, lattice, jaw_points, skull_points, provenance)
}

pub fn format_bundle(b: &ConstraintBundle) -> String {
    let mut s = String::from("cbv1\n");
    writeln!(s, "provenance {}", b.provenance).unwrap();
    writeln!(s, "elements {}", b.actuation.len()).unwrap();
    for a in &b.actuation {
        writeln!(s, "{} {} {} {} {} {}", a[(0, 0)], a[(1, 1)], a[(2, 2)], a[(0, 1)], a[(1, 2)], a[(0, 2)]).unwrap();
    }
    for (name, t) in [("jaw", &b.jaw), ("skull", &b.skull)] {
        let v: Vec<String> = t.to_array().iter().map(|x| x.to_string()).collect();
        writeln!(s, "{name} {}", v.join(" ")).unwrap();
    }
    s
}

pub fn parse_bundle(text: &str) -> Result<ConstraintBundle> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
    let perr = |line: usize, msg: &str| Error::Parse { line, msg: msg.into() };
    let (ln, head) = lines.next().ok_or_else(|| perr(1, "empty bundle"))?;
    if head != "cbv1" {
        return Err(perr(ln, "expected cbv1 header"));
    }
    let (ln, prov) = lines.next().ok_or_else(|| perr(ln + 1, "missing provenance"))?;
    let provenance = prov.strip_prefix("provenance ").ok_or_else(|| perr(ln, "expected provenance"))?.to_string();
    let (ln, el) = lines.next().ok_or_else(|| perr(ln + 1, "missing element count"))?;
    let n: usize = el
        .strip_prefix("elements ")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| perr(ln, "expected elements <count>"))?;
    let nums = |ln: usize, s: &str, k: usize| -> Result<Vec<f64>> {
        let v: Vec<f64> = s
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| perr(ln, &format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if v.len() != k {
            return Err(perr(ln, &format!("expected {k} numbers, found {}", v.len())));
        }
        Ok(v)
    };
    let mut actuation = Vec::with_capacity(n);
    for _ in 0..n {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, "truncated actuation block"))?;
        let v = nums(ln, l, 6)?;
        actuation.push(Mat3::new(v[0], v[3], v[5], v[3], v[1], v[4], v[5], v[4], v[2]));
    }
    let mut transform = |name: &str| -> Result<RigidTransform> {
        let (ln, l) = lines.next().ok_or_else(|| perr(0, &format!("missing {name} transform")))?;
        let rest = l.strip_prefix(name).ok_or_else(|| perr(ln, &format!("expected {name}")))?;
        RigidTransform::from_array(&nums(ln, rest, 12)?)
    };
    let jaw = transform("jaw")?;
    let skull = transform("skull")?;
    Ok(ConstraintBundle { actuation, jaw, skull, provenance })
}

pub fn write_bundle(path: impl AsRef<Path>, b: &ConstraintBundle) -> Result<()> {
    std::fs::write(path, format_bundle(b))?;
    Ok(())
}

pub fn read_bundle(path: impl AsRef<Path>) -> Result<ConstraintBundle> {
    parse_bundle(&std::fs::read_to_string(path)?)
}
