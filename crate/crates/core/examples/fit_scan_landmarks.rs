//! Fit latent codes of a trained model to an unseen scan, then to 2D landmarks
//! only.

use physface::inverse::{fit_latents, Camera, FitConfig, Observation, TrainingSet};
use physface::numerics::Vec3;
use physface::phantom::{BoneOracle, Corpus};
use physface::pipeline::{field_output, metric_v2v, train_model, RunConfig};

fn main() -> physface::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.corpus.identities = 3;
    cfg.corpus.expressions = 4;
    cfg.train.schedule.epochs = 60;
    cfg.train.schedule.decay_start = 30;
    let corpus = Corpus::synthesize(3, 4, 0)?;
    let model = train_model(&corpus, &cfg)?.checkpoint.model;
    let data = TrainingSet::from_corpus(&corpus, cfg.train.pool_spacing)?;
    let oracle = BoneOracle::new(&corpus.canonical);

    // a held-out identity from a different seed
    let unseen = Corpus::synthesize(1, 3, 99)?;
    let target = &unseen.expression_skins[0][2];
    let init = (vec![0.0; model.config.id_dim], vec![0.0; model.config.expr_dim]);
    let fit = FitConfig { steps: 200, ..cfg.fit.clone() };

    let scan = Observation::Scan { skin: target.vertices.clone(), confidence: None };
    let r = fit_latents(&model, &data, &scan, &fit, init.clone(), Some(&oracle), 0)?;
    let out = field_output(&model, &corpus.canonical, &r.beta, &r.gamma)?;
    println!("scan fit: data loss {:.3} -> {:.3}, v2v {:.3} mm", r.initial_data_loss, r.data_loss, metric_v2v(target, &out.skin, None)?);

    let center = target.bbox().center();
    let camera = Camera::look_at(center + Vec3::new(0.0, 0.0, 600.0), center, 1500.0, [512.0, 512.0])?;
    let ids = corpus.canonical.landmark_ids.clone();
    let targets = ids.iter().map(|&i| camera.project(&target.vertices[i]).expect("in front")).collect();
    let lm = Observation::Landmarks { ids, camera, targets };
    let r = fit_latents(&model, &data, &lm, &fit, init, Some(&oracle), 0)?;
    let out = field_output(&model, &corpus.canonical, &r.beta, &r.gamma)?;
    println!(
        "landmark fit: reprojection {:.2} -> {:.2} px², v2v {:.3} mm",
        r.initial_data_loss,
        r.data_loss,
        metric_v2v(target, &out.skin, None)?
    );
    Ok(())
}
