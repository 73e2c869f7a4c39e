//! The 3×3 kernels behind extraction and the solver's local step.

use physface::numerics::{kabsch, polar3, project_det1, rotation, Mat3, Vec3};

fn main() -> physface::Result<()> {
    let f = Mat3::new(1.2, 0.3, -0.1, 0.0, 0.9, 0.2, 0.1, -0.2, 1.1);
    let p = polar3(&f)?;
    println!("F =\n{f:.4}");
    println!("polar rotation (det {:.6}) =\n{:.4}", p.r.determinant(), p.r);
    println!("polar stretch =\n{:.4}", p.s);

    let d = project_det1(&f)?;
    println!("closest unit-determinant matrix (det {:.12}) =\n{d:.4}", d.determinant());
    println!("distance {:.6}", (f - d).norm());

    let r = rotation(&Vec3::new(0.3, 1.0, 0.2).normalize(), 0.7);
    let t = Vec3::new(4.0, -1.0, 2.5);
    let src: Vec<Vec3> = (0..8).map(|i| Vec3::new((i % 2) as f64, ((i / 2) % 2) as f64, (i / 4) as f64) * 10.0).collect();
    let dst: Vec<Vec3> = src.iter().map(|x| r * x + t).collect();
    let fit = kabsch(&src, &dst, None)?;
    println!("kabsch rotation error {:.2e}, translation error {:.2e}", (fit.r - r).norm(), (fit.t - t).norm());
    Ok(())
}
