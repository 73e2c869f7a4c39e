//! Voxelize the tissue between bones and skin into a hexahedral lattice and
//! embed the three surfaces with trilinear weights.

use physface::lattice::{embed, voxelize, write_lattice, SurfaceTag};
use physface::phantom::make_canonical;

fn main() -> physface::Result<()> {
    let anatomy = make_canonical();
    for h in [20.0, 10.0, 5.0] {
        let lattice = voxelize(&anatomy, h)?;
        let skin = embed(&lattice, &anatomy.skin, SurfaceTag::Skin)?;
        let skull = embed(&lattice, &anatomy.skull, SurfaceTag::Skull)?;
        let jaw = embed(&lattice, &anatomy.jaw, SurfaceTag::Jaw)?;
        // embedded rest positions reproduce the surface exactly
        let err = skin
            .apply(&lattice.nodes)
            .iter()
            .zip(&anatomy.skin.vertices)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        println!(
            "h {h:>4} mm: {:>6} elements, {:>6} nodes, face-connected {}, skull support {} nodes, jaw support {} nodes, skin embedding error {err:.1e}",
            lattice.n_elements(),
            lattice.n_nodes(),
            lattice.is_face_connected(),
            skull.support().len(),
            jaw.support().len()
        );
        if h == 10.0 {
            let path = std::env::temp_dir().join("physface_h10.latv1");
            write_lattice(&path, &lattice, &[&skin, &skull, &jaw])?;
            println!("  wrote {}", path.display());
        }
    }
    Ok(())
}
