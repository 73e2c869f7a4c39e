use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{
    loss_bone_selfsup, loss_ereg, loss_fix, loss_landmark, loss_rigid, loss_skin, loss_soft, test_objective, Camera,
    LossBreakdown, LossEval, LossWeights, MaterialParams,
};
use super::train::{adam_step, AdamState, SampleCounts, TrainingSet};
use crate::error::{Error, Result};
use crate::field::tape::LatentSource;
use crate::field::{BoundField, FaceModel, GradientTape, SpatialMap};
use crate::numerics::{rotation, Mat3, RigidTransform, Vec3};
use crate::phantom::BoneOracle;

/// What the latents are fitted to.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    /// Skin in correspondence with the canonical skin.
    Scan { skin: Vec<Vec3>, confidence: Option<Vec<f64>> },
    /// 2D projections of canonical skin vertices `ids`.
    Landmarks { ids: Vec<usize>, camera: Camera, targets: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub steps: usize,
    pub lr: f64,
    pub pose_lr: f64,
    pub weights: LossWeights,
    pub material: MaterialParams,
    pub samples: SampleCounts,
    pub fit_pose: bool,
    /// Steps without a new best loss before stopping.
    pub patience: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            steps: 400,
            lr: 0.05,
            pose_lr: 0.01,
            weights: LossWeights::default(),
            material: MaterialParams::default(),
            samples: SampleCounts { skin: 3000, bone: 50, fix: 100, soft: 100 },
            fit_pose: false,
            patience: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub pose: Option<RigidTransform>,
    pub losses: LossBreakdown,
    /// Observation term (skin or landmark) before the first step and at the end.
    pub initial_data_loss: f64,
    pub data_loss: f64,
    pub history: Vec<f64>,
    pub early_stopped: bool,
}

fn pose_transform(p: &[f64; 6]) -> RigidTransform {
    let w = Vec3::new(p[0], p[1], p[2]);
    let angle = w.norm();
    let r = if angle > 0.0 { rotation(&(w / angle), angle) } else { Mat3::identity() };
    RigidTransform { r, t: Vec3::new(p[3], p[4], p[5]) }
}

/// Full canonical → observed map with optional head pose.
struct Posed<'a> {
    model: &'a FaceModel,
    beta: &'a [f64],
    z: &'a [f64],
    pose: RigidTransform,
}

impl SpatialMap for Posed<'_> {
    fn map_with_jacobian(&self, x: &Vec3) -> Result<(Vec3, Mat3)> {
        let (x0, jc) = self.model.identity.eval_with_jacobian(x, self.beta)?;
        let (y, je) = self.model.expression.eval_with_jacobian(&x0, self.z)?;
        Ok((self.pose.apply(&y), self.pose.r * je * jc))
    }
}

struct FitSamples {
    obs_points: Vec<Vec3>,
    obs_targets: Vec<Vec3>,
    obs_weights: Option<Vec<f64>>,
    skull: Vec<Vec3>,
    jaw: Vec<Vec3>,
    fix: Vec<Vec3>,
    soft: Vec<Vec3>,
}

fn data_term(
    model: &FaceModel,
    beta: &[f64],
    z: &[f64],
    pose: &[f64; 6],
    obs: &Observation,
    s: &FitSamples,
) -> Result<LossEval> {
    let map = Posed { model, beta, z, pose: pose_transform(pose) };
    match obs {
        Observation::Scan { .. } => loss_skin(&map, &s.obs_points, &s.obs_targets, s.obs_weights.as_deref()),
        Observation::Landmarks { camera, targets, .. } => loss_landmark(&map, &s.obs_points, camera, targets),
    }
}

/// Optimise free latents (and optionally a head pose) under the test objective.
#[allow(clippy::too_many_arguments)]
pub fn fit_latents(
    model: &FaceModel,
    data: &TrainingSet,
    observation: &Observation,
    cfg: &FitConfig,
    init: (Vec<f64>, Vec<f64>),
    oracle: Option<&BoneOracle>,
    seed: u64,
) -> Result<FitResult> {
    cfg.weights.validate()?;
    let w = cfg.weights.for_test();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |n: usize, k: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        if k >= n {
            return idx;
        }
        idx.partial_shuffle(rng, k).0.to_vec()
    };
    let (obs_points, obs_targets, obs_weights) = match observation {
        Observation::Scan { skin, confidence } => {
            if skin.len() != data.canonical_skin.len() {
                return Err(Error::InvalidInput("scan does not match canonical topology".into()));
            }
            let idx = pick(skin.len(), cfg.samples.skin, &mut rng);
            (
                idx.iter().map(|&i| data.canonical_skin[i]).collect(),
                idx.iter().map(|&i| skin[i]).collect(),
                confidence.as_ref().map(|c| idx.iter().map(|&i| c[i]).collect()),
            )
        }
        Observation::Landmarks { ids, targets, .. } => {
            if ids.len() != targets.len() || ids.iter().any(|&i| i >= data.canonical_skin.len()) {
                return Err(Error::InvalidInput("landmark ids and targets disagree".into()));
            }
            (ids.iter().map(|&i| data.canonical_skin[i]).collect(), Vec::new(), None)
        }
    };
    let samples = FitSamples {
        obs_points,
        obs_targets,
        obs_weights,
        skull: pick(data.canonical_skull.len(), cfg.samples.bone, &mut rng).iter().map(|&i| data.canonical_skull[i]).collect(),
        jaw: pick(data.canonical_jaw.len(), cfg.samples.bone, &mut rng).iter().map(|&i| data.canonical_jaw[i]).collect(),
        fix: pick(data.canonical_skull.len(), cfg.samples.fix, &mut rng).iter().map(|&i| data.canonical_skull[i]).collect(),
        soft: data.soft_samples(cfg.samples.soft, &mut rng),
    };
    let (mut beta, mut gamma) = init;
    let d_id = beta.len();
    let mut pose = [0.0; 6];
    let mut latent_state = AdamState::new(beta.len() + gamma.len());
    let mut pose_state = AdamState::new(6);
    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut best_state = (beta.clone(), gamma.clone(), pose);
    let mut since_best = 0;
    let mut early_stopped = false;
    let mut initial_data_loss = f64::NAN;

    let evaluate = |beta: &[f64], gamma: &[f64], pose: &[f64; 6], tape: Option<&mut GradientTape>| -> Result<(LossBreakdown, f64)> {
        let z = FaceModel::joint_latent(beta, gamma);
        let mut b = LossBreakdown::default();
        let obs = data_term(model, beta, &z, pose, observation, &samples)?;
        let ne = BoundField { field: &model.expression, latent: &z };
        let nc = BoundField { field: &model.identity, latent: beta };
        let map0 = |xs: &[Vec3]| xs.iter().map(|x| model.identity.eval(x, beta)).collect::<Result<Vec<_>>>();
        let skull0 = map0(&samples.skull)?;
        let jaw0 = map0(&samples.jaw)?;
        let fix0 = map0(&samples.fix)?;
        let soft0 = map0(&samples.soft)?;
        let rigid = loss_rigid(&ne, &[&skull0, &jaw0])?;
        let fix = loss_fix(&ne, &fix0)?;
        let soft = loss_soft(&ne, &soft0, &cfg.material)?;
        let ereg = loss_ereg(&nc, &samples.soft)?;
        let bone = match oracle {
            Some(o) if w.bone > 0.0 => {
                let regressed = map0(&data.canonical_skin)?;
                Some(loss_bone_selfsup(&nc, &data.canonical_skull, &data.canonical_jaw, &regressed, o)?)
            }
            _ => None,
        };
        b.skin = obs.value;
        b.rigid = rigid.iter().map(|r| r.value).sum();
        b.fix = fix.value;
        b.soft = soft.value;
        b.ereg = ereg.value;
        b.bone = bone.as_ref().map_or(0.0, |e| e.value);
        b.lreg = beta.iter().chain(gamma).map(|v| v * v).sum();
        if let Some(tape) = tape {
            let p = tape.add_pair(beta.to_vec(), gamma.to_vec(), LatentSource::Free);
            let pr = pose_transform(pose).r;
            let obs0 = map0(&samples.obs_points)?;
            for (i, g) in obs.grads.iter().enumerate() {
                let gx = pr.transpose() * g.g_x * w.skin;
                tape.record_expression(p, obs0[i], Some(samples.obs_points[i]), gx, None, Vec3::zeros());
            }
            let route = |tape: &mut GradientTape, src: &[Vec3], inp: &[Vec3], e: &LossEval, wt: f64, chain: bool| {
                for (i, g) in e.grads.iter().enumerate() {
                    tape.record_expression(
                        p,
                        inp[i],
                        chain.then(|| src[i]),
                        g.g_x * wt,
                        g.g_j.map(|j| j * wt),
                        g.g_input * wt,
                    );
                }
            };
            route(tape, &samples.skull, &skull0, &rigid[0], w.rigid, true);
            route(tape, &samples.jaw, &jaw0, &rigid[1], w.rigid, true);
            route(tape, &samples.fix, &fix0, &fix, w.fix, true);
            route(tape, &samples.soft, &soft0, &soft, w.soft, false);
            for (i, g) in ereg.grads.iter().enumerate() {
                tape.record_identity(p, samples.soft[i], Vec3::zeros(), g.g_j.map(|j| j * w.ereg));
            }
            if let Some(e) = &bone {
                let pts: Vec<Vec3> = data.canonical_skull.iter().chain(&data.canonical_jaw).copied().collect();
                for (i, g) in e.grads.iter().enumerate() {
                    tape.record_identity(p, pts[i], g.g_x * w.bone, None);
                }
            }
            tape.record_latent(
                p,
                beta.iter().map(|v| 2.0 * w.lreg * v).collect(),
                gamma.iter().map(|v| 2.0 * w.lreg * v).collect(),
            );
        }
        Ok((b, obs.value))
    };

    for step in 0..cfg.steps {
        let mut tape = GradientTape::new();
        let (b, obs_value) = evaluate(&beta, &gamma, &pose, Some(&mut tape))?;
        if step == 0 {
            initial_data_loss = obs_value;
        }
        let total = test_objective(&b, &w);
        if !total.is_finite() {
            return Err(Error::Numeric(format!("fit objective became non-finite at step {step}")));
        }
        history.push(total);
        if total < best {
            best = total;
            best_state = (beta.clone(), gamma.clone(), pose);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                early_stopped = true;
                break;
            }
        }
        let g = tape.backprop(model)?;
        let frac = step as f64 / cfg.steps as f64;
        let f = if frac < 0.5 { 1.0 } else { 2.0 * (1.0 - frac) };
        let mut lat: Vec<f64> = beta.iter().chain(&gamma).copied().collect();
        let grad: Vec<f64> = g.beta[0].iter().chain(&g.gamma[0]).copied().collect();
        adam_step(&mut lat, &grad, &mut latent_state, cfg.lr * f);
        beta.copy_from_slice(&lat[..d_id]);
        gamma.copy_from_slice(&lat[d_id..]);
        if cfg.fit_pose {
            let zc = FaceModel::joint_latent(&lat[..d_id], &lat[d_id..]);
            let h = 1e-5;
            let mut gp = [0.0; 6];
            for k in 0..6 {
                let mut a = pose;
                a[k] += h;
                let mut c = pose;
                c[k] -= h;
                let fa = data_term(model, &lat[..d_id], &zc, &a, observation, &samples)?.value;
                let fc = data_term(model, &lat[..d_id], &zc, &c, observation, &samples)?.value;
                gp[k] = w.skin * (fa - fc) / (2.0 * h);
            }
            adam_step(&mut pose, &gp, &mut pose_state, cfg.pose_lr * f);
        }
    }
    // final state, and keep whichever is better
    let (b, obs_value) = evaluate(&beta, &gamma, &pose, None)?;
    let total = test_objective(&b, &w);
    let (beta, gamma, pose, losses, data_loss) = if total <= best || !best.is_finite() {
        (beta, gamma, pose, b, obs_value)
    } else {
        let (bb, bg, bp) = best_state;
        let (b, v) = evaluate(&bb, &bg, &bp, None)?;
        (bb, bg, bp, b, v)
    };
    if initial_data_loss.is_nan() {
        initial_data_loss = data_loss;
    }
    Ok(FitResult {
        beta,
        gamma,
        pose: cfg.fit_pose.then(|| pose_transform(&pose)),
        losses,
        initial_data_loss,
        data_loss,
        history,
        early_stopped,
    })
}
