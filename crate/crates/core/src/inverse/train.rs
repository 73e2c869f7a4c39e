use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{
    loss_bone, loss_ereg, loss_fix, loss_id, loss_rigid, loss_skin, loss_soft, train_objective, LossBreakdown,
    LossEval, LossWeights, MaterialParams,
};
use crate::error::{Error, Result};
use crate::field::tape::LatentSource;
use crate::field::{BoundField, Checkpoint, FaceModel, FieldConfig, GradientTape, LatentEntry, ModelGradients};
use crate::geometry::Aabb;
use crate::lattice::tissue_points;
use crate::numerics::Vec3;
use crate::phantom::Corpus;

/// First and second moment estimates for one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.t += 1;
    let c1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
    }
}

/// Per-pair sample counts for one training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleCounts {
    pub skin: usize,
    /// Per bone region.
    pub bone: usize,
    pub fix: usize,
    pub soft: usize,
}

impl Default for SampleCounts {
    fn default() -> Self {
        Self { skin: 45_000, bone: 5_000, fix: 10_000, soft: 10_000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub batch: usize,
    /// Learning rate of both fields.
    pub lr: f64,
    /// Learning rate of the parameterizers.
    pub latent_lr: f64,
    pub epochs: usize,
    /// Epoch after which the rate decays linearly to zero.
    pub decay_start: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { batch: 16, lr: 1e-4, latent_lr: 1e-4, epochs: 200, decay_start: 100 }
    }
}

impl Schedule {
    /// Rate multiplier at a fractional epoch.
    pub fn factor(&self, epoch: f64) -> f64 {
        let start = self.decay_start as f64;
        let end = self.epochs as f64;
        if epoch < start || end <= start {
            1.0
        } else {
            ((end - epoch) / (end - start)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub material: MaterialParams,
    pub samples: SampleCounts,
    pub schedule: Schedule,
    /// Spacing of the canonical soft-tissue sample pool (mm).
    pub pool_spacing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            material: MaterialParams::default(),
            samples: SampleCounts::default(),
            schedule: Schedule::default(),
            pool_spacing: 3.0,
        }
    }
}

/// One (identity, expression) training example.
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub identity: usize,
    pub expression: usize,
    pub id_code: Vec<f64>,
    pub expr_code: Vec<f64>,
}

/// Everything training reads from a corpus, in canonical correspondence.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub canonical_skin: Vec<Vec3>,
    pub canonical_skull: Vec<Vec3>,
    pub canonical_jaw: Vec<Vec3>,
    pub canonical_bbox: Aabb,
    pub soft_pool: Vec<Vec3>,
    pub pool_spacing: f64,
    pub pairs: Vec<TrainPair>,
    /// Per identity: neutral skin, skull, jaw vertices.
    pub neutral_skin: Vec<Vec<Vec3>>,
    pub neutral_skull: Vec<Vec<Vec3>>,
    pub neutral_jaw: Vec<Vec<Vec3>>,
    /// `[identity][expression]` skin vertices and confidences.
    pub expression_skin: Vec<Vec<Vec<Vec3>>>,
    pub confidence: Vec<Vec<Vec<f64>>>,
    pub corpus_hash: String,
}

impl TrainingSet {
    pub fn from_corpus(corpus: &Corpus, pool_spacing: f64) -> Result<Self> {
        let canonical = &corpus.canonical;
        let soft_pool = tissue_points(canonical, pool_spacing)?;
        if soft_pool.is_empty() {
            return Err(Error::InvalidInput("soft-tissue pool is empty".into()));
        }
        let mut pairs = Vec::new();
        for (i, entry) in corpus.manifest.identities.iter().enumerate() {
            for (j, spec) in entry.expressions.iter().enumerate() {
                pairs.push(TrainPair {
                    identity: i,
                    expression: j,
                    id_code: entry.id_params.clone(),
                    expr_code: spec.expression_code.clone(),
                });
            }
        }
        let n = canonical.skin.vertices.len();
        let expression_skin: Vec<Vec<Vec<Vec3>>> =
            corpus.expression_skins.iter().map(|s| s.iter().map(|m| m.vertices.clone()).collect()).collect();
        for skins in &expression_skin {
            if skins.iter().any(|s| s.len() != n) {
                return Err(Error::InvalidInput("expression skin does not match canonical topology".into()));
            }
        }
        let confidence = corpus
            .expression_skins
            .iter()
            .map(|s| s.iter().map(|m| (0..n).map(|v| m.confidence_or_one(v)).collect()).collect())
            .collect();
        Ok(Self {
            canonical_skin: canonical.skin.vertices.clone(),
            canonical_skull: canonical.skull.vertices.clone(),
            canonical_jaw: canonical.jaw.vertices.clone(),
            canonical_bbox: canonical.skin.bbox(),
            soft_pool,
            pool_spacing,
            pairs,
            neutral_skin: corpus.identities.iter().map(|a| a.skin.vertices.clone()).collect(),
            neutral_skull: corpus.identities.iter().map(|a| a.skull.vertices.clone()).collect(),
            neutral_jaw: corpus.identities.iter().map(|a| a.jaw.vertices.clone()).collect(),
            expression_skin,
            confidence,
            corpus_hash: corpus.manifest.hash(),
        })
    }

    /// `n` jittered points from the soft-tissue pool.
    pub fn soft_samples(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec3> {
        let half = 0.5 * self.pool_spacing;
        (0..n)
            .map(|_| {
                let p = self.soft_pool[rng.random_range(0..self.soft_pool.len())];
                p + Vec3::new(rng.random_range(-half..half), rng.random_range(-half..half), rng.random_range(-half..half))
            })
            .collect()
    }
}

/// One row of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub epoch: f64,
    pub lr: f64,
    pub total: f64,
    pub losses: LossBreakdown,
    pub inverted: usize,
}

pub const LOSS_CSV_HEADER: &str = "step,epoch,lr,total,skin,rigid,fix,soft,id,bone,ereg,lreg,lip,inverted";

pub fn format_loss_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOSS_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let l = &r.losses;
        writeln!(
            s,
            "{},{:.6},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
            r.step, r.epoch, r.lr, r.total, l.skin, l.rigid, l.fix, l.soft, l.id, l.bone, l.ereg, l.lreg, l.lip, r.inverted
        )
        .unwrap();
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Step at which the loss became non-finite; the checkpoint holds the
    /// last finite state.
    pub diverged_at: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    identity: AdamState,
    expression: AdamState,
    p_id: AdamState,
    p_exp: AdamState,
}

impl Optimizer {
    pub fn new(model: &FaceModel) -> Self {
        Self {
            identity: AdamState::new(model.identity.n_params()),
            expression: AdamState::new(model.expression.n_params()),
            p_id: AdamState::new(model.p_id.n_params()),
            p_exp: AdamState::new(model.p_exp.n_params()),
        }
    }

    pub fn step(&mut self, model: &mut FaceModel, g: &ModelGradients, lr: f64, latent_lr: f64) {
        adam_step(model.identity.params_mut(), &g.identity, &mut self.identity, lr);
        adam_step(model.expression.params_mut(), &g.expression, &mut self.expression, lr);
        let mut p = model.p_id.params();
        adam_step(&mut p, &g.p_id, &mut self.p_id, latent_lr);
        model.p_id.set_params(&p);
        let mut p = model.p_exp.params();
        adam_step(&mut p, &g.p_exp, &mut self.p_exp, latent_lr);
        model.p_exp.set_params(&p);
    }
}

/// Which recorder a loss belongs to.
enum Route<'a> {
    Identity,
    /// Expression field at `inputs`, optionally chained to canonical `sources`.
    Expression(Option<&'a [Vec3]>),
}

fn record(tape: &mut GradientTape, pair: usize, route: Route<'_>, inputs: &[Vec3], e: &LossEval, w: f64) {
    if w == 0.0 {
        return;
    }
    for (i, g) in e.grads.iter().enumerate() {
        match route {
            Route::Identity => {
                tape.record_identity(pair, inputs[i], g.g_x * w, g.g_j.map(|j| j * w));
            }
            Route::Expression(src) => tape.record_expression(
                pair,
                inputs[i],
                src.map(|s| s[i]),
                g.g_x * w,
                g.g_j.map(|j| j * w),
                g.g_input * w,
            ),
        }
    }
}

/// Evaluate the training objective for one batch and record it on `tape`.
/// Identity-route input cotangents are dropped since canonical inputs are constants.
pub fn batch_objective(
    model: &FaceModel,
    data: &TrainingSet,
    cfg: &TrainConfig,
    batch: &[usize],
    rng: &mut ChaCha8Rng,
    tape: &mut GradientTape,
) -> Result<(LossBreakdown, usize)> {
    let w = &cfg.weights;
    let s = &cfg.samples;
    let inv_b = 1.0 / batch.len() as f64;
    let mut sum = LossBreakdown::default();
    let mut inverted = 0;
    for &pi in batch {
        let pair = &data.pairs[pi];
        let (beta, gamma) = model.latents(&pair.id_code, &pair.expr_code);
        let z = FaceModel::joint_latent(&beta, &gamma);
        let p = tape.add_pair(
            beta.clone(),
            gamma.clone(),
            LatentSource::Codes { id_code: pair.id_code.clone(), expr_code: pair.expr_code.clone() },
        );
        let nc = BoundField { field: &model.identity, latent: &beta };
        let ne = BoundField { field: &model.expression, latent: &z };
        let (id, ex) = (pair.identity, pair.expression);

        let skin_idx = sample_vertices_seeded(data.canonical_skin.len(), s.skin, rng);
        let xc: Vec<Vec3> = skin_idx.iter().map(|&v| data.canonical_skin[v]).collect();
        let x0 = xc.iter().map(|x| model.identity.eval(x, &beta)).collect::<Result<Vec<_>>>()?;
        let tgt: Vec<Vec3> = skin_idx.iter().map(|&v| data.expression_skin[id][ex][v]).collect();
        let conf: Vec<f64> = skin_idx.iter().map(|&v| data.confidence[id][ex][v]).collect();
        let e = loss_skin(&ne, &x0, &tgt, Some(&conf))?;
        sum.skin += e.value * inv_b;
        record(tape, p, Route::Expression(Some(&xc)), &x0, &e, w.skin * inv_b);

        let neutral: Vec<Vec3> = skin_idx.iter().map(|&v| data.neutral_skin[id][v]).collect();
        let e = loss_id(&nc, &xc, &neutral, Some(&conf))?;
        sum.id += e.value * inv_b;
        record(tape, p, Route::Identity, &xc, &e, w.id * inv_b);

        let skull_idx = sample_vertices_seeded(data.canonical_skull.len(), s.bone, rng);
        let jaw_idx = sample_vertices_seeded(data.canonical_jaw.len(), s.bone, rng);
        let bc: Vec<Vec3> = skull_idx
            .iter()
            .map(|&v| data.canonical_skull[v])
            .chain(jaw_idx.iter().map(|&v| data.canonical_jaw[v]))
            .collect();
        let bt: Vec<Vec3> = skull_idx
            .iter()
            .map(|&v| data.neutral_skull[id][v])
            .chain(jaw_idx.iter().map(|&v| data.neutral_jaw[id][v]))
            .collect();
        let e = loss_bone(&nc, &bc, &bt)?;
        sum.bone += e.value * inv_b;
        record(tape, p, Route::Identity, &bc, &e, w.bone * inv_b);

        let b0 = bc.iter().map(|x| model.identity.eval(x, &beta)).collect::<Result<Vec<_>>>()?;
        let ns = skull_idx.len();
        let regions = loss_rigid(&ne, &[&b0[..ns], &b0[ns..]])?;
        for (r, (range_src, range_in)) in regions.iter().zip([(&bc[..ns], &b0[..ns]), (&bc[ns..], &b0[ns..])]) {
            sum.rigid += r.value * inv_b;
            record(tape, p, Route::Expression(Some(range_src)), range_in, r, w.rigid * inv_b);
        }

        let fix_idx = sample_vertices_seeded(data.canonical_skull.len(), s.fix, rng);
        let fc: Vec<Vec3> = fix_idx.iter().map(|&v| data.canonical_skull[v]).collect();
        let f0 = fc.iter().map(|x| model.identity.eval(x, &beta)).collect::<Result<Vec<_>>>()?;
        let e = loss_fix(&ne, &f0)?;
        sum.fix += e.value * inv_b;
        record(tape, p, Route::Expression(Some(&fc)), &f0, &e, w.fix * inv_b);

        let sc = data.soft_samples(s.soft, rng);
        let s0 = sc.iter().map(|x| model.identity.eval(x, &beta)).collect::<Result<Vec<_>>>()?;
        let e = loss_soft(&ne, &s0, &cfg.material)?;
        sum.soft += e.value * inv_b;
        inverted += e.inverted;
        record(tape, p, Route::Expression(None), &s0, &e, w.soft * inv_b);

        let e = loss_ereg(&nc, &sc)?;
        sum.ereg += e.value * inv_b;
        record(tape, p, Route::Identity, &sc, &e, w.ereg * inv_b);

        let lreg = beta.iter().chain(&gamma).map(|v| v * v).sum::<f64>();
        sum.lreg += lreg * inv_b;
        if w.lreg != 0.0 {
            let k = 2.0 * w.lreg * inv_b;
            tape.record_latent(p, beta.iter().map(|v| v * k).collect(), gamma.iter().map(|v| v * k).collect());
        }
    }
    sum.lip = model.p_id.lipschitz_penalty() * model.p_exp.lipschitz_penalty();
    tape.record_lipschitz(w.lip);
    tape.add_loss(train_objective(&sum, w));
    Ok((sum, inverted))
}

fn sample_vertices_seeded(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let seed = rng.random::<u64>();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (chosen, _) = idx.partial_shuffle(&mut r, k);
    chosen.to_vec()
}

pub fn latent_table(model: &FaceModel, data: &TrainingSet) -> Vec<LatentEntry> {
    data.pairs
        .iter()
        .map(|p| {
            let (beta, gamma) = model.latents(&p.id_code, &p.expr_code);
            LatentEntry { identity: p.identity, expression: p.expression, beta, gamma }
        })
        .collect()
}

/// Minibatch Adam over all (identity, expression) pairs.
pub fn train(data: &TrainingSet, cfg: &TrainConfig, field: &FieldConfig, seed: u64) -> Result<TrainResult> {
    cfg.weights.validate()?;
    cfg.material.validate()?;
    if cfg.schedule.batch == 0 || data.pairs.is_empty() {
        return Err(Error::InvalidInput("training needs a positive batch size and at least one pair".into()));
    }
    let id_dim = data.pairs[0].id_code.len();
    let expr_dim = data.pairs[0].expr_code.len();
    let mut model = FaceModel::new(field, &data.canonical_bbox, id_dim, expr_dim, seed)?;
    let mut opt = Optimizer::new(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps_per_epoch = data.pairs.len().div_ceil(cfg.schedule.batch);
    let mut log = Vec::new();
    let mut step = 0;
    let mut diverged_at = None;
    'outer: for epoch in 0..cfg.schedule.epochs {
        let mut order: Vec<usize> = (0..data.pairs.len()).collect();
        order.shuffle(&mut rng);
        for (b, batch) in order.chunks(cfg.schedule.batch).enumerate() {
            let ep = epoch as f64 + b as f64 / steps_per_epoch as f64;
            let f = cfg.schedule.factor(ep);
            let mut tape = GradientTape::new();
            let (losses, inverted) = batch_objective(&model, data, cfg, batch, &mut rng, &mut tape)?;
            let total = tape.loss();
            if !total.is_finite() {
                diverged_at = Some(step);
                break 'outer;
            }
            let g = tape.backprop(&model)?;
            let mut next = model.clone();
            opt.step(&mut next, &g, cfg.schedule.lr * f, cfg.schedule.latent_lr * f);
            if next.identity.params().iter().chain(next.expression.params()).any(|v| !v.is_finite()) {
                diverged_at = Some(step);
                break 'outer;
            }
            model = next;
            log.push(LogRow { step, epoch: ep, lr: cfg.schedule.lr * f, total, losses, inverted });
            step += 1;
        }
    }
    let latents = latent_table(&model, data);
    Ok(TrainResult { checkpoint: Checkpoint::new(model, data.corpus_hash.clone(), step, latents), log, diverged_at })
}
