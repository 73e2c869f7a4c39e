//! Generate the phantom corpus: identities, bones, expressions and the
//! closed-form ground-truth deformation. Pass a directory to write it out.

use physface::phantom::{gen_corpus, Corpus};

fn main() -> physface::Result<()> {
    let corpus = Corpus::synthesize(3, 4, 0)?;
    let c = &corpus.canonical;
    println!(
        "canonical skin {} verts, skull {} verts, jaw {} verts, {} landmarks",
        c.skin.vertices.len(),
        c.skull.vertices.len(),
        c.jaw.vertices.len(),
        c.landmark_ids.len()
    );
    for (id, anat) in corpus.identities.iter().enumerate() {
        println!("identity {id}: min bone-skin gap {:.2} mm, skin area {:.0} mm²", anat.min_gap(), anat.skin.area());
        for ex in 0..corpus.expression_skins[id].len() {
            let s = corpus.spec(id, ex);
            let travel = corpus.expression_skins[id][ex]
                .vertices
                .iter()
                .zip(&anat.skin.vertices)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            println!(
                "  expression {ex}: jaw angle {:+.3} rad, slide {:+.2} mm, {} bulges, max skin travel {travel:.2} mm",
                s.jaw_angle,
                s.jaw_slide,
                s.bulges.len()
            );
        }
    }
    println!("mean jaw displacement {:.2} mm", corpus.mean_jaw_displacement()?);

    if let Some(dir) = std::env::args().nth(1) {
        let manifest = gen_corpus(3, 4, 0, &dir)?;
        println!("wrote corpus to {dir} (manifest hash {})", manifest.hash());
    }
    Ok(())
}
