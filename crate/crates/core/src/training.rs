//! Two-step adversarial training with a length curriculum, Adam and
//! resumable checkpoints.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use cycledance_autodiff::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{sample_unpaired_batch, Batch, StyleDomain};
use crate::error::{ensure, Error, Result};
use crate::losses::{
    adv_d_term, adv_g_term, cycle_loss, discriminator_objective, generator_objective, identity_loss, losses_to_csv,
    GeneratorTerms, LossRecord, LossWeights,
};
use crate::model::{Ablation, ArchConfig, Discriminator, Normalizer, ParamSet, TransferModel};

pub const CHECKPOINT_VERSION: u32 = 1;
const TRAIN_STREAM: u64 = 1;

/// `param -= lr · m̂ / (sqrt(v̂) + eps)` with bias-corrected moments; `t` is
/// the 1-based step count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, lr: f64, beta1: f64, beta2: f64, eps: f64) {
    let c1 = 1.0 - beta1.powi(t as i32);
    let c2 = 1.0 - beta2.powi(t as i32);
    for i in 0..param.len() {
        let gi = grad[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adam moments for one parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Vec<f64>], lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
        ensure!(grads.len() == params.len(), "gradient count does not match parameter count");
        self.t += 1;
        let t = self.t;
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            p.update_data(|d| adam_update(d, &grads[i], m, v, t, lr, beta1, beta2, eps))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumStage {
    pub start_epoch: usize,
    pub clip_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumSchedule {
    pub stages: Vec<CurriculumStage>,
    pub enabled: bool,
}

impl CurriculumSchedule {
    pub fn new(stages: Vec<CurriculumStage>, enabled: bool) -> Result<Self> {
        let s = Self { stages, enabled };
        s.validate()?;
        Ok(s)
    }

    /// 32 → 64 → 128 frames, switching at one and two thirds of the epochs.
    pub fn default_for(epochs: usize, enabled: bool) -> Self {
        let raw = [(0, 32), (epochs.div_ceil(3), 64), ((2 * epochs).div_ceil(3), 128)];
        let mut stages: Vec<CurriculumStage> = Vec::new();
        for (start_epoch, clip_len) in raw {
            if stages.last().is_some_and(|s| s.start_epoch == start_epoch) {
                stages.pop();
            }
            stages.push(CurriculumStage { start_epoch, clip_len });
        }
        Self { stages, enabled }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.stages.is_empty(), "curriculum schedule has no stages");
        ensure!(self.stages[0].start_epoch == 0, "the first curriculum stage must start at epoch 0");
        for w in self.stages.windows(2) {
            ensure!(
                w[1].start_epoch > w[0].start_epoch && w[1].clip_len > w[0].clip_len,
                "curriculum stages must have strictly increasing start epochs and clip lengths"
            );
        }
        for s in &self.stages {
            ensure!(
                s.clip_len >= 16 && s.clip_len % 4 == 0,
                "curriculum clip length {} must be a multiple of 4 and at least 16",
                s.clip_len
            );
        }
        Ok(())
    }

    /// Clip length of the last stage starting at or before `epoch`; the
    /// final length when the curriculum is disabled.
    pub fn length(&self, epoch: usize) -> usize {
        let last = self.stages.last().expect("validated schedule");
        if !self.enabled {
            return last.clip_len;
        }
        self.stages
            .iter()
            .rev()
            .find(|s| s.start_epoch <= epoch)
            .unwrap_or(&self.stages[0])
            .clip_len
    }

    pub fn max_len(&self) -> usize {
        self.stages.last().map_or(0, |s| s.clip_len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Defaults to `ceil(max(clips in X, clips in Y) / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub g_lr: f64,
    pub d_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Stages to use; `None` derives [`CurriculumSchedule::default_for`].
    /// Whether the curriculum is active is decided by the ablation.
    pub schedule: Option<Vec<CurriculumStage>>,
    pub arch: ArchConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 4,
            steps_per_epoch: None,
            g_lr: 2e-4,
            d_lr: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 7,
            weights: LossWeights::default(),
            schedule: None,
            arch: ArchConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch_size >= 1, "batch_size must be at least 1");
        ensure!(
            self.g_lr.is_finite() && self.g_lr >= 0.0 && self.d_lr.is_finite() && self.d_lr >= 0.0,
            "learning rates must be finite and non-negative"
        );
        ensure!(
            (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2) && self.adam_eps > 0.0,
            "Adam betas must lie in [0, 1) and eps must be positive"
        );
        ensure!(self.steps_per_epoch != Some(0), "steps_per_epoch must be positive");
        self.weights.validate()?;
        self.arch.validate()?;
        self.schedule(true).validate()
    }

    pub fn schedule(&self, enabled: bool) -> CurriculumSchedule {
        match &self.schedule {
            Some(stages) => CurriculumSchedule {
                stages: stages.clone(),
                enabled,
            },
            None => CurriculumSchedule::default_for(self.epochs, enabled),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct HashInput<'a> {
    ablation: Ablation,
    config: &'a TrainConfig,
}

/// Hex SHA-256 of the canonical JSON of an ablation and its config.
pub fn config_hash(ablation: Ablation, cfg: &TrainConfig) -> String {
    let json = serde_json::to_string(&HashInput { ablation, config: cfg }).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: u64,
    stream: u64,
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetworkEntry {
    name: String,
    adam_t: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CheckpointManifest {
    version: u32,
    ablation: Ablation,
    config: TrainConfig,
    config_hash: String,
    step: u64,
    epoch: usize,
    step_in_epoch: usize,
    steps_per_epoch: usize,
    rng: RngState,
    normalizer: Normalizer,
    networks: Vec<NetworkEntry>,
}

/// Model, optimizer and sampler state of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: TransferModel,
    ablation: Ablation,
    cfg: TrainConfig,
    schedule: CurriculumSchedule,
    opt: Vec<Adam>,
    step: u64,
    epoch: usize,
    step_in_epoch: usize,
    steps_per_epoch: usize,
    rng: ChaCha8Rng,
    history: Vec<LossRecord>,
    hash: String,
}

fn grads_of(g: &Graph, vars: &[Var]) -> Vec<Vec<f64>> {
    vars.iter()
        .map(|&v| match g.grad(v) {
            Some(d) => d.to_vec(),
            None => vec![0.0; g.value(v).len()],
        })
        .collect()
}

fn leaf(g: &mut Graph, t: &Tensor) -> Var {
    g.constant(t.clone())
}

impl Trainer {
    /// Fresh run on two domains; feature statistics are fitted to them.
    pub fn new(cfg: TrainConfig, ablation: Ablation, x: &StyleDomain, y: &StyleDomain) -> Result<Self> {
        let (n_x, n_y) = (x.clips.len(), y.clips.len());
        ensure!(n_x > 0 && n_y > 0, "both domains need at least one clip");
        let mut t = Self::init(cfg, ablation, n_x, n_y)?;
        t.model.norm = Normalizer::fit(x, y)?;
        Ok(t)
    }

    fn init(cfg: TrainConfig, ablation: Ablation, n_x: usize, n_y: usize) -> Result<Self> {
        cfg.validate()?;
        let arch = ablation.arch(&cfg.arch);
        let model = TransferModel::new(&arch, cfg.seed)?;
        let opt = model.param_sets().iter().map(|(_, p)| Adam::new(p)).collect();
        let steps_per_epoch = cfg
            .steps_per_epoch
            .unwrap_or_else(|| n_x.max(n_y).div_ceil(cfg.batch_size));
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Self {
            model,
            ablation,
            schedule: cfg.schedule(ablation.curriculum()),
            hash: config_hash(ablation, &cfg),
            cfg,
            opt,
            step: 0,
            epoch: 0,
            step_in_epoch: 0,
            steps_per_epoch,
            rng,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn ablation(&self) -> Ablation {
        self.ablation
    }

    pub fn schedule(&self) -> &CurriculumSchedule {
        &self.schedule
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.steps_per_epoch
    }

    pub fn total_steps(&self) -> u64 {
        (self.cfg.epochs * self.steps_per_epoch) as u64
    }

    pub fn history(&self) -> &[LossRecord] {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn check_batch(&self, b: &Batch, name: &str) -> Result<()> {
        let s = b.motion.shape();
        ensure!(
            s.len() == 3 && s[2] == self.model.arch.motion_dim && b.music.shape()[..2] == s[..2],
            "batch {name}: malformed shapes {:?} / {:?}",
            s,
            b.music.shape()
        );
        Ok(())
    }

    fn standardize(&self, b: &Batch) -> Result<Batch> {
        let norm = &self.model.norm;
        Ok(Batch {
            motion: Tensor::new(b.motion.shape().to_vec(), norm.normalize_motion(b.motion.data()))?,
            music: Tensor::new(b.music.shape().to_vec(), norm.normalize_music(b.music.data()))?,
            windows: b.windows.clone(),
        })
    }

    /// One fused step on raw (unstandardized) batches. The generators' forward paths are recorded once;
    /// the discriminators are updated on detached copies of the fakes, then
    /// the updated discriminators score the recorded fakes for the
    /// generator update. Generator weights do not change in between, so
    /// this equals recomputing the fakes after the discriminator update.
    pub fn train_step(&mut self, bx: &Batch, by: &Batch) -> Result<LossRecord> {
        self.check_batch(bx, "x")?;
        self.check_batch(by, "y")?;
        let (bx, by) = (&self.standardize(bx)?, &self.standardize(by)?);
        let cfg = self.cfg.clone();
        let lambda_id = cfg.weights.lambda_id_at(self.step, self.total_steps());
        let uses_music = self.model.g_xy.uses_music();
        let m = &self.model;

        let mut g = Graph::new();
        let pxy = m.g_xy.params().bind(&mut g, true);
        let pyx = m.g_yx.params().bind(&mut g, true);
        let x = leaf(&mut g, &bx.motion);
        let y = leaf(&mut g, &by.motion);
        let (mx, my) = if uses_music {
            (Some(leaf(&mut g, &bx.music)), Some(leaf(&mut g, &by.music)))
        } else {
            (None, None)
        };
        let fake_y = m.g_xy.forward(&mut g, &pxy, x, mx)?;
        let fake_x = m.g_yx.forward(&mut g, &pyx, y, my)?;
        let cyc_x = m.g_yx.forward(&mut g, &pyx, fake_y, mx)?;
        let cyc_y = m.g_xy.forward(&mut g, &pxy, fake_x, my)?;
        let cycle = cycle_loss(&mut g, x, cyc_x, y, cyc_y)?;
        let identity = if lambda_id > 0.0 {
            let id_x = m.g_yx.forward(&mut g, &pyx, x, mx)?;
            let id_y = m.g_xy.forward(&mut g, &pxy, y, my)?;
            Some(identity_loss(&mut g, x, id_x, y, id_y)?)
        } else {
            None
        };

        let fakes = [g.value(fake_x).clone(), g.value(fake_y).clone()];
        let cycled = [g.value(cyc_x).clone(), g.value(cyc_y).clone()];
        let d_vals = self.update_discriminators(bx, by, &fakes, &cycled)?;

        let m = &self.model;
        let score = |g: &mut Graph, d: &Discriminator, input: Var| -> Result<Var> {
            let p = d.params().bind(g, false);
            let out = d.forward(g, &p, input)?;
            adv_g_term(g, out)
        };
        let adv_xy = score(&mut g, &m.d_y, fake_y)?;
        let adv_yx = score(&mut g, &m.d_x, fake_x)?;
        let (adv2_x, adv2_y) = match (&m.d2_x, &m.d2_y) {
            (Some(d2x), Some(d2y)) => (Some(score(&mut g, d2x, cyc_x)?), Some(score(&mut g, d2y, cyc_y)?)),
            _ => (None, None),
        };
        let terms = GeneratorTerms {
            adv_xy,
            adv_yx,
            cycle,
            identity,
            adv2_x,
            adv2_y,
        };
        let total = generator_objective(&mut g, &terms, cfg.weights.lambda_cyc, lambda_id)?;
        g.backward(total)?;
        let gxy = grads_of(&g, &pxy);
        let gyx = grads_of(&g, &pyx);
        let (b1, b2, eps) = (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        self.opt[0].step(self.model.g_xy.params_mut(), &gxy, cfg.g_lr, b1, b2, eps)?;
        self.opt[1].step(self.model.g_yx.params_mut(), &gyx, cfg.g_lr, b1, b2, eps)?;

        let item = |v: Option<Var>| v.map(|v| g.item(v));
        let record = LossRecord {
            step: self.step,
            adv_xy: g.item(adv_xy),
            adv_yx: g.item(adv_yx),
            cycle: g.item(cycle),
            identity: item(identity),
            adv2_x: item(adv2_x),
            adv2_y: item(adv2_y),
            d_x: d_vals[0],
            d_y: d_vals[1],
            d2_x: d_vals.get(2).copied(),
            d2_y: d_vals.get(3).copied(),
            generator_total: g.item(total),
        };
        self.step += 1;
        self.history.push(record.clone());
        Ok(record)
    }

    /// Updates D_x, D_y (real vs. transferred) and D′_x, D′_y (real vs.
    /// cycled). Returns the pre-update d-terms.
    fn update_discriminators(&mut self, bx: &Batch, by: &Batch, fakes: &[Tensor; 2], cycled: &[Tensor; 2]) -> Result<Vec<f64>> {
        let cfg = &self.cfg;
        let m = &self.model;
        let mut g = Graph::new();
        let x = leaf(&mut g, &bx.motion);
        let y = leaf(&mut g, &by.motion);
        let mut jobs: Vec<(&Discriminator, Var, &Tensor)> = vec![(&m.d_x, x, &fakes[0]), (&m.d_y, y, &fakes[1])];
        if let (Some(d2x), Some(d2y)) = (&m.d2_x, &m.d2_y) {
            jobs.push((d2x, x, &cycled[0]));
            jobs.push((d2y, y, &cycled[1]));
        }
        let mut params = Vec::new();
        let mut terms = Vec::new();
        for (d, real, fake) in jobs {
            let p = d.params().bind(&mut g, true);
            let fake = leaf(&mut g, fake);
            let out_real = d.forward(&mut g, &p, real)?;
            let out_fake = d.forward(&mut g, &p, fake)?;
            terms.push(adv_d_term(&mut g, out_real, out_fake)?);
            params.push(p);
        }
        let total = discriminator_objective(&mut g, &terms)?;
        g.backward(total)?;
        let values: Vec<f64> = terms.iter().map(|&t| g.item(t)).collect();
        let grads: Vec<Vec<Vec<f64>>> = params.iter().map(|p| grads_of(&g, p)).collect();
        let (lr, b1, b2, eps) = (cfg.d_lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let mut sets = self.model.param_sets_mut();
        // checkpoint order: g_xy, g_yx, d_x, d_y, d2_x, d2_y
        for (k, grad) in grads.iter().enumerate() {
            self.opt[2 + k].step(sets[2 + k].1, grad, lr, b1, b2, eps)?;
        }
        sets.clear();
        Ok(values)
    }

    /// Runs the next step of the current epoch, rolling over to the next
    /// epoch when needed. Returns `None` once every epoch is done.
    pub fn advance(&mut self, x: &StyleDomain, y: &StyleDomain) -> Result<Option<LossRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let len = self.schedule.length(self.epoch);
        let (bx, by) = sample_unpaired_batch(x, y, self.cfg.batch_size, len, &mut self.rng)?;
        let rec = self.train_step(&bx, &by)?;
        self.step_in_epoch += 1;
        if self.step_in_epoch == self.steps_per_epoch {
            self.step_in_epoch = 0;
            self.epoch += 1;
        }
        Ok(Some(rec))
    }

    /// Trains until every epoch is done. With `out`, writes a checkpoint at
    /// each curriculum stage boundary under `out/checkpoints/epoch_<e>`, the
    /// final checkpoint under `out/final` and the loss log `out/losses.csv`.
    pub fn train(&mut self, x: &StyleDomain, y: &StyleDomain, out: Option<&Path>) -> Result<()> {
        let need = self.schedule.max_len();
        for d in [x, y] {
            ensure!(!d.clips.is_empty(), "domain {} has no clips", d.label);
            ensure!(
                d.min_frames() >= need,
                "domain {}: shortest clip has {} frames, curriculum needs {need}",
                d.label,
                d.min_frames()
            );
        }
        while !self.is_done() {
            let len = self.schedule.length(self.epoch);
            let epoch = self.epoch;
            self.advance(x, y)?;
            if let Some(dir) = out {
                let rolled = self.epoch != epoch;
                if rolled && !self.is_done() && self.schedule.length(self.epoch) != len {
                    self.save(&dir.join("checkpoints").join(format!("epoch_{}", self.epoch)))?;
                }
            }
        }
        if let Some(dir) = out {
            self.save(&dir.join("final"))?;
            self.write_losses(&dir.join("losses.csv"))?;
        }
        Ok(())
    }

    pub fn write_losses(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, losses_to_csv(&self.history, &self.hash)).map_err(|e| Error::io(path, e))
    }

    /// Writes `manifest.json`, `weights.bin`, `optimizer.bin` and
    /// `history.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let sets = self.model.param_sets();
        let manifest = CheckpointManifest {
            version: CHECKPOINT_VERSION,
            ablation: self.ablation,
            config: self.cfg.clone(),
            config_hash: self.hash.clone(),
            step: self.step,
            epoch: self.epoch,
            step_in_epoch: self.step_in_epoch,
            steps_per_epoch: self.steps_per_epoch,
            rng: RngState {
                seed: self.cfg.seed,
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos().to_string(),
            },
            normalizer: self.model.norm.clone(),
            networks: sets
                .iter()
                .zip(&self.opt)
                .map(|((name, p), opt)| NetworkEntry {
                    name: name.to_string(),
                    adam_t: opt.t,
                    params: p
                        .names()
                        .iter()
                        .zip(p.tensors())
                        .map(|(n, t)| ParamEntry {
                            name: n.clone(),
                            shape: t.shape().to_vec(),
                        })
                        .collect(),
                })
                .collect(),
        };
        let write_json = |name: &str, text: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        write_json("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
        write_json("history.json", serde_json::to_string(&self.history)?)?;
        let blob = |name: &str, tensors: &mut dyn Iterator<Item = Tensor>| -> Result<()> {
            let path = dir.join(name);
            let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = BufWriter::new(f);
            for t in tensors {
                t.write_to(&mut w)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))
        };
        blob(
            "weights.bin",
            &mut sets.iter().flat_map(|(_, p)| p.tensors().iter().cloned()),
        )?;
        let mut moments = Vec::new();
        for ((_, p), opt) in sets.iter().zip(&self.opt) {
            for (i, t) in p.tensors().iter().enumerate() {
                moments.push(Tensor::new(t.shape().to_vec(), opt.m[i].clone())?);
                moments.push(Tensor::new(t.shape().to_vec(), opt.v[i].clone())?);
            }
        }
        blob("optimizer.bin", &mut moments.into_iter())
    }

    /// Restores a run saved by [`Trainer::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join("manifest.json");
        let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
        let man: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: mpath.clone(),
            message: e.to_string(),
        })?;
        ensure!(
            man.version == CHECKPOINT_VERSION,
            "{}: unsupported checkpoint version {}",
            mpath.display(),
            man.version
        );
        man.config.validate()?;
        ensure!(
            config_hash(man.ablation, &man.config) == man.config_hash,
            "{}: config hash does not match its config",
            mpath.display()
        );
        let mut t = Trainer::init(man.config.clone(), man.ablation, 1, 1)?;
        man.normalizer.validate()?;
        t.model.norm = man.normalizer.clone();
        t.steps_per_epoch = man.steps_per_epoch;
        let read_blob = |name: &str| -> Result<Vec<Tensor>> {
            let path = dir.join(name);
            let f = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
            let mut r = BufReader::new(f);
            let mut out = Vec::new();
            while !r.fill_buf().map_err(|e| Error::io(&path, e))?.is_empty() {
                out.push(Tensor::read_from(&mut r).map_err(|e| Error::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?);
            }
            Ok(out)
        };
        let mut weights = read_blob("weights.bin")?.into_iter();
        let mut moments = read_blob("optimizer.bin")?.into_iter();
        let mut sets = t.model.param_sets_mut();
        ensure!(
            sets.len() == man.networks.len(),
            "{}: expected {} networks, found {}",
            mpath.display(),
            sets.len(),
            man.networks.len()
        );
        let mut opts = Vec::with_capacity(sets.len());
        for ((name, params), net) in sets.iter_mut().zip(&man.networks) {
            ensure!(*name == net.name, "{}: expected network {name}, found {}", mpath.display(), net.name);
            let mut named = Vec::new();
            let mut opt = Adam::new(params);
            opt.t = net.adam_t;
            for (i, entry) in net.params.iter().enumerate() {
                let w = weights
                    .next()
                    .ok_or_else(|| Error::invalid(format!("{}: weights.bin is truncated", dir.display())))?;
                let (m, v) = match (moments.next(), moments.next()) {
                    (Some(m), Some(v)) => (m, v),
                    _ => return Err(Error::invalid(format!("{}: optimizer.bin is truncated", dir.display()))),
                };
                ensure!(
                    w.shape() == entry.shape.as_slice() && m.shape() == w.shape() && v.shape() == w.shape(),
                    "{}: parameter {} has an unexpected shape",
                    dir.display(),
                    entry.name
                );
                opt.m[i] = m.into_data();
                opt.v[i] = v.into_data();
                named.push((entry.name.clone(), w));
            }
            params.load(named)?;
            opts.push(opt);
        }
        ensure!(
            weights.next().is_none() && moments.next().is_none(),
            "{}: checkpoint blobs have trailing tensors",
            dir.display()
        );
        drop(sets);
        t.opt = opts;
        t.step = man.step;
        t.epoch = man.epoch;
        t.step_in_epoch = man.step_in_epoch;
        let mut rng = ChaCha8Rng::seed_from_u64(man.rng.seed);
        rng.set_stream(man.rng.stream);
        let pos: u128 = man
            .rng
            .word_pos
            .parse()
            .map_err(|_| Error::invalid(format!("{}: bad rng word_pos", mpath.display())))?;
        rng.set_word_pos(pos);
        t.rng = rng;
        let hpath = dir.join("history.json");
        if hpath.is_file() {
            let text = fs::read_to_string(&hpath).map_err(|e| Error::io(&hpath, e))?;
            t.history = serde_json::from_str(&text).map_err(|e| Error::Parse {
                path: hpath.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curriculum_lengths() {
        let s = CurriculumSchedule::new(
            vec![
                CurriculumStage { start_epoch: 0, clip_len: 32 },
                CurriculumStage { start_epoch: 10, clip_len: 64 },
                CurriculumStage { start_epoch: 20, clip_len: 128 },
            ],
            true,
        )
        .unwrap();
        assert_eq!(s.length(0), 32);
        assert_eq!(s.length(15), 64);
        assert_eq!(s.length(10), 64);
        assert_eq!(s.length(99), 128);
        let off = CurriculumSchedule { enabled: false, ..s };
        assert_eq!(off.length(0), 128);
    }

    #[test]
    fn default_schedule_collapses_for_short_runs() {
        let s = CurriculumSchedule::default_for(30, true);
        let starts: Vec<_> = s.stages.iter().map(|s| (s.start_epoch, s.clip_len)).collect();
        assert_eq!(starts, vec![(0, 32), (10, 64), (20, 128)]);
        let s = CurriculumSchedule::default_for(1, true);
        assert!(s.validate().is_ok());
        assert_eq!(s.length(0), 32);
        let s = CurriculumSchedule::default_for(0, true);
        assert_eq!(s.stages.len(), 1);
        assert!(CurriculumSchedule::new(vec![], true).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let cfg = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::from_json(r#"{"g_lr": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"unknown": 1}"#).is_err());
        let cfg = TrainConfig::from_json(r#"{"epochs": 3}"#).unwrap();
        assert_eq!(cfg.batch_size, 4);
    }
}
