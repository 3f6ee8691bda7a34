use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{sam_step, OptState, OptimizerConfig};
use crate::autodiff::{Tape, Tensor};
use crate::data::BatchSampler;
use crate::error::{Error, Result};
use crate::eval::frechet_distance;
use crate::models::{
    ema_update, generate, init_params, sample_latent, standard_normal, LatentPrior, NetworkSpec, ParamVector,
    TapeNetwork,
};
use crate::objectives::{add_grad_regularizer, no_critic, relax_likelihood, Objective, ObjectiveKind, ObjectiveSpec};
use crate::rng::{seeded, stream, Rng, STREAM_CRITIC_INIT, STREAM_GEN_INIT, STREAM_SNAPSHOT, STREAM_TRAIN};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrRule {
    Fixed,
    /// `lr = base_lr·|B|/128`
    LinearScale128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamTargets {
    None,
    /// Generator and critic.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_base_lr")]
    pub base_lr: f64,
    #[serde(default = "d_lr_rule")]
    pub lr_rule: LrRule,
    #[serde(default = "d_warmup")]
    pub warmup_epochs_lr: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_n_critic")]
    pub n_critic: usize,
    #[serde(default)]
    pub rho_sam: f64,
    #[serde(default = "d_sam_targets")]
    pub sam_targets: SamTargets,
    #[serde(default = "d_ema_decay")]
    pub ema_decay: f64,
    #[serde(default = "d_ema_warmup")]
    pub ema_warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Generated rows for the per-epoch Fréchet snapshot; 0 disables it.
    #[serde(default = "d_snapshot")]
    pub snapshot_samples: usize,
}

fn d_batch() -> usize {
    128
}
fn d_base_lr() -> f64 {
    0.001
}
fn d_lr_rule() -> LrRule {
    LrRule::LinearScale128
}
fn d_warmup() -> usize {
    10
}
fn d_ema_warmup() -> usize {
    20
}
fn d_epochs() -> usize {
    200
}
fn d_n_critic() -> usize {
    5
}
fn d_sam_targets() -> SamTargets {
    SamTargets::None
}
fn d_ema_decay() -> f64 {
    0.999
}
fn d_snapshot() -> usize {
    512
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::for_objective(ObjectiveKind::WganDiv)
    }
}

impl TrainConfig {
    /// Protocol defaults per objective: WGAN gets `n_critic = 5` and a
    /// linearly scaled, warmed-up lr; RGAN a fixed 0.0002.
    pub fn for_objective(kind: ObjectiveKind) -> Self {
        let mut cfg = TrainConfig {
            batch_size: d_batch(),
            base_lr: d_base_lr(),
            lr_rule: LrRule::Fixed,
            warmup_epochs_lr: 0,
            epochs: d_epochs(),
            n_critic: 1,
            rho_sam: 0.0,
            sam_targets: SamTargets::None,
            ema_decay: d_ema_decay(),
            ema_warmup_epochs: d_ema_warmup(),
            seed: 0,
            optimizer: OptimizerConfig::adam(),
            snapshot_samples: d_snapshot(),
        };
        match kind {
            ObjectiveKind::WganDiv => {
                cfg.lr_rule = LrRule::LinearScale128;
                cfg.warmup_epochs_lr = d_warmup();
                cfg.n_critic = d_n_critic();
            }
            ObjectiveKind::Rgan => cfg.base_lr = 0.0002,
            ObjectiveKind::Mmd => cfg.n_critic = 0,
            ObjectiveKind::JsGan | ObjectiveKind::FGan => {}
        }
        cfg
    }

    /// Sets `rho_sam` and the matching `sam_targets`.
    pub fn with_sam(mut self, rho: f64) -> Self {
        self.rho_sam = rho;
        self.sam_targets = if rho > 0.0 { SamTargets::Both } else { SamTargets::None };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return bad("train.batch_size must be positive".into());
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad(format!("train.base_lr must be positive, got {}", self.base_lr));
        }
        if !(self.rho_sam >= 0.0) || !self.rho_sam.is_finite() {
            return bad(format!("train.rho_sam must be ≥ 0, got {}", self.rho_sam));
        }
        if self.rho_sam > 0.0 && self.sam_targets == SamTargets::None {
            return bad(format!("train.rho_sam = {} needs sam_targets = \"both\"", self.rho_sam));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return bad(format!("train.ema_decay must lie in [0, 1], got {}", self.ema_decay));
        }
        self.optimizer.validate()
    }

    /// Learning rate after the batch-size rule, before warm-up.
    pub fn scaled_lr(&self) -> f64 {
        match self.lr_rule {
            LrRule::Fixed => self.base_lr,
            LrRule::LinearScale128 => self.base_lr * self.batch_size as f64 / 128.0,
        }
    }

    /// `scaled_lr·min(1, (epoch + 1)/warmup_epochs_lr)`
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let lr = self.scaled_lr();
        if self.warmup_epochs_lr == 0 {
            lr
        } else {
            lr * ((epoch + 1) as f64 / self.warmup_epochs_lr as f64).min(1.0)
        }
    }

    fn sam(&self) -> bool {
        self.sam_targets == SamTargets::Both
    }
}

/// Per-epoch means of the recorded losses plus a Fréchet snapshot of the
/// raw generator against the training data.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub critic_loss: Option<f64>,
    pub generator_loss: Option<f64>,
    pub frechet: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub generator: ParamVector,
    pub ema: ParamVector,
    pub critic: Option<ParamVector>,
    pub history: Vec<EpochRecord>,
    pub critic_steps: u64,
    pub generator_steps: u64,
}

/// Alternating training. Every mini-batch drives one critic update and every
/// `n_critic`-th critic update is followed by one generator update; without
/// a critic, every batch is a generator update.
pub fn train(
    gen_spec: &NetworkSpec,
    critic_spec: &NetworkSpec,
    objective: &ObjectiveSpec,
    config: &TrainConfig,
    data: &Tensor,
) -> Result<TrainedModel> {
    gen_spec.validate()?;
    config.validate()?;
    let mut objective = Objective::new(objective.clone())?;
    let has_critic = objective.kind().has_critic();
    if data.rank() != 2 || data.cols() != gen_spec.output_dim {
        return Err(Error::Config(format!(
            "generator emits {} dims but the data has shape {:?}",
            gen_spec.output_dim,
            data.shape()
        )));
    }
    if has_critic {
        critic_spec.validate()?;
        if critic_spec.input_dim != data.cols() || critic_spec.output_dim != 1 {
            return Err(Error::Config(format!(
                "critic must map {} dims to 1 score, got {}→{}",
                data.cols(),
                critic_spec.input_dim,
                critic_spec.output_dim
            )));
        }
        if config.n_critic == 0 {
            return Err(Error::Config("train.n_critic must be positive for objectives with a critic".into()));
        }
    }
    let sampler = BatchSampler::new(data, config.batch_size)?;
    let prior = LatentPrior { dim: gen_spec.input_dim };
    let seed = config.seed;

    let mut gen = init_params(gen_spec, &mut stream(seed, STREAM_GEN_INIT));
    let mut critic = has_critic.then(|| init_params(critic_spec, &mut stream(seed, STREAM_CRITIC_INIT)));
    let mut ema = gen.clone();
    let mut gen_opt = OptState::new(config.optimizer, gen.len());
    let mut critic_opt = critic.as_ref().map(|c| OptState::new(config.optimizer, c.len()));
    let mut rng = stream(seed, STREAM_TRAIN);
    let snapshot_z = (config.snapshot_samples > data.cols())
        .then(|| sample_latent(prior, config.snapshot_samples, &mut stream(seed, STREAM_SNAPSHOT)));

    let mut history = Vec::with_capacity(config.epochs);
    let (mut critic_steps, mut generator_steps) = (0u64, 0u64);
    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let mut critic_losses = Vec::new();
        let mut gen_losses = Vec::new();
        for (iteration, idx) in sampler.epoch_indices(&mut rng).into_iter().enumerate() {
            let wrap = |e: Error| wrap_divergence(e, epoch, iteration);
            let real = data.select_rows(&idx);
            if iteration == 0 {
                objective.refresh_kernel(&real)?;
            }
            let gen_turn = match (critic.as_mut(), critic_opt.as_mut()) {
                (Some(c), Some(opt)) => {
                    let loss = critic_update(&objective, gen_spec, &gen, critic_spec, c, opt, &real, lr, config, &mut rng)
                        .map_err(wrap)?;
                    critic_losses.push(loss);
                    critic_steps += 1;
                    critic_steps % config.n_critic as u64 == 0
                }
                _ => true,
            };
            if gen_turn {
                let critic_ref = critic.as_ref().map(|c| (critic_spec, c));
                let loss = generator_update(
                    &objective,
                    gen_spec,
                    &mut gen,
                    &mut gen_opt,
                    critic_ref,
                    &real,
                    lr,
                    config,
                    &mut rng,
                )
                .map_err(wrap)?;
                gen_losses.push(loss);
                generator_steps += 1;
                ema = if epoch < config.ema_warmup_epochs {
                    gen.clone()
                } else {
                    ema_update(&ema, &gen, config.ema_decay)?
                };
            }
        }
        if epoch + 1 == config.ema_warmup_epochs {
            ema = gen.clone();
        }
        let frechet = match &snapshot_z {
            Some(z) => frechet_distance(&generate(gen_spec, &gen, z)?, data).ok(),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            lr,
            critic_loss: mean(&critic_losses),
            generator_loss: mean(&gen_losses),
            frechet,
        };
        log::debug!(
            "epoch {epoch}: lr {lr:.3e} critic {:?} generator {:?} frechet {:?}",
            record.critic_loss,
            record.generator_loss,
            record.frechet
        );
        history.push(record);
    }
    Ok(TrainedModel { generator: gen, ema, critic, history, critic_steps, generator_steps })
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn wrap_divergence(e: Error, epoch: usize, iteration: usize) -> Error {
    if matches!(e, Error::NonFinite { .. }) {
        Error::Divergence { epoch, iteration, source: Box::new(e) }
    } else {
        e
    }
}

fn ensure_finite(params: &[f64], what: &'static str) -> Result<()> {
    match params.iter().position(|p| !p.is_finite()) {
        None => Ok(()),
        Some(node) => Err(Error::NonFinite { node, op: what }),
    }
}

/// Runs one base or SAM step on `params`, returning the loss at the
/// unperturbed point.
fn optimizer_step<F>(mut value_grad: F, params: &mut ParamVector, opt: &mut OptState, lr: f64, config: &TrainConfig) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut first = None;
    if config.sam() {
        sam_step(
            |p: &[f64]| {
                let (v, g) = value_grad(p)?;
                first.get_or_insert(v);
                Ok(g)
            },
            params.values_mut(),
            opt,
            lr,
            config.rho_sam,
        )?;
    } else {
        let (v, g) = value_grad(params.values())?;
        first = Some(v);
        opt.step(params.values_mut(), &g, lr)?;
    }
    Ok(first.expect("loss evaluated at least once"))
}

#[allow(clippy::too_many_arguments)]
fn critic_update(
    objective: &Objective,
    gen_spec: &NetworkSpec,
    gen: &ParamVector,
    critic_spec: &NetworkSpec,
    critic: &mut ParamVector,
    opt: &mut OptState,
    real: &Tensor,
    lr: f64,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    // One seed per step so SAM's second evaluation sees the same
    // interpolation weights.
    let step_seed: u64 = rng.random();
    let z = sample_latent(LatentPrior { dim: gen_spec.input_dim }, real.rows(), rng);
    let fake = relax_likelihood(&generate(gen_spec, gen, &z)?, objective.spec().sigma2_lik, rng)?;
    let loss = optimizer_step(
        |p| critic_value_grad(objective, critic_spec, p, real, &fake, step_seed),
        critic,
        opt,
        lr,
        config,
    )?;
    ensure_finite(critic.values(), "critic update")?;
    Ok(loss)
}

fn critic_value_grad(
    objective: &Objective,
    spec: &NetworkSpec,
    params: &[f64],
    real: &Tensor,
    fake: &Tensor,
    step_seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let net = TapeNetwork::register(&mut tape, spec, &ParamVector::from_values(spec, params.to_vec())?, true)?;
    let r = tape.constant(real.clone());
    let f = tape.constant(fake.clone());
    let loss = objective
        .critic_loss(&mut tape, &net, r, f, &mut seeded(step_seed))?
        .ok_or_else(|| Error::usage("objective has no critic"))?;
    let grads = tape.grad(loss)?;
    Ok((tape.scalar(loss), net.flat_grad(&grads)?))
}

#[allow(clippy::too_many_arguments)]
fn generator_update(
    objective: &Objective,
    gen_spec: &NetworkSpec,
    gen: &mut ParamVector,
    opt: &mut OptState,
    critic: Option<(&NetworkSpec, &ParamVector)>,
    real: &Tensor,
    lr: f64,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let z = sample_latent(LatentPrior { dim: gen_spec.input_dim }, real.rows(), rng);
    let sigma2 = objective.spec().sigma2_lik;
    let noise = (sigma2 > 0.0).then(|| standard_normal(real.rows(), gen_spec.output_dim, rng).map(|e| sigma2.sqrt() * e));
    let lambda = objective.spec().lambda_grad;
    let plain = |p: &[f64]| generator_value_grad(objective, gen_spec, p, critic, real, &z, noise.as_ref());
    let loss = optimizer_step(
        |p| {
            if lambda > 0.0 {
                add_grad_regularizer(&plain, p, lambda)
            } else {
                plain(p)
            }
        },
        gen,
        opt,
        lr,
        config,
    )?;
    ensure_finite(gen.values(), "generator update")?;
    Ok(loss)
}

/// Generator loss and gradient at `params` for fixed latents and noise.
pub(crate) fn generator_value_grad(
    objective: &Objective,
    gen_spec: &NetworkSpec,
    params: &[f64],
    critic: Option<(&NetworkSpec, &ParamVector)>,
    real: &Tensor,
    z: &Tensor,
    noise: Option<&Tensor>,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let gen = TapeNetwork::register(&mut tape, gen_spec, &ParamVector::from_values(gen_spec, params.to_vec())?, true)?;
    let zn = tape.constant(z.clone());
    let mut fake = gen.apply(&mut tape, zn)?;
    if let Some(e) = noise {
        let en = tape.constant(e.clone());
        fake = tape.add(fake, en)?;
    }
    let r = tape.constant(real.clone());
    let loss = match critic {
        Some((spec, params)) => {
            let net = TapeNetwork::register(&mut tape, spec, params, false)?;
            objective.generator_loss(&mut tape, &net, r, fake)?
        }
        None => objective.generator_loss(&mut tape, &no_critic, r, fake)?,
    };
    let grads = tape.grad(loss)?;
    Ok((tape.scalar(loss), gen.flat_grad(&grads)?))
}
