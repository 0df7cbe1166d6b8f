//! DDPG with the differentiable action mask in the actor path and
//! stochastic LP guidance in the behaviour policy.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Adam, Mlp, MlpParams};
use super::replay::{ReplayBuffer, Transition};
use super::{denormalize_action, normalize_action, reward};
use crate::error::{Error, Result};
use crate::mask::{finalize_action, mask, mask_with_jacobian, MaskInputs};
use crate::oracle::{guidance_action, LpOptions};
use crate::sim::{featurize, rollout, AssignmentPolicy, NormConstants, Policy, RolloutOptions, Simulator, StepContext, FEATURE_LEN};
use crate::types::{Action, ChargerSpec, Episode, ObjectiveWeights, MAX_CHARGERS};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub batch_size: usize,
    pub buffer_size: usize,
    pub noise_std: f64,
    pub r_pg: f64,
    pub weights: ObjectiveWeights,
    pub train_step: usize,
    pub update_step: usize,
    pub tau_soft: f64,
    pub hidden: usize,
    /// Multiplier applied to rewards before they reach the critic.
    pub reward_scale: f64,
    pub max_steps: usize,
    /// Evaluate on the held-out set every this many steps; 0 disables.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Hand off-peak and weekend slots to the greedy rule.
    pub offpeak_greedy: bool,
    pub assignment: AssignmentPolicy,
    pub seed: u64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lr_actor: 1e-5,
            lr_critic: 1e-3,
            batch_size: 64,
            buffer_size: 1_000_000,
            noise_std: 0.2,
            r_pg: 0.5,
            weights: ObjectiveWeights::default(),
            train_step: 5,
            update_step: 5,
            tau_soft: 0.005,
            hidden: 96,
            reward_scale: 0.01,
            max_steps: 5_000,
            eval_every: 0,
            patience: 5,
            offpeak_greedy: true,
            assignment: AssignmentPolicy::default(),
            seed: 0,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [self.lr_actor, self.lr_critic, self.tau_soft, self.reward_scale];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::Config("learning rates, tau_soft and reward_scale must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.r_pg) || self.tau_soft > 1.0 {
            return Err(Error::Config("gamma, r_pg and tau_soft must lie in [0, 1]".into()));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config("noise_std must be finite and >= 0".into()));
        }
        if self.batch_size == 0 || self.buffer_size == 0 || self.train_step == 0 || self.update_step == 0 || self.hidden == 0 {
            return Err(Error::Config("batch, buffer, train/update steps and hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Whether the learned policy (rather than the greedy rule) acts in this slot.
pub fn rl_governed(ctx: &StepContext<'_>, offpeak_greedy: bool) -> bool {
    !offpeak_greedy || (ctx.is_peak() && !ctx.is_weekend())
}

fn pad(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; MAX_CHARGERS];
    out[..v.len()].copy_from_slice(v);
    out
}

fn critic_input(features: &[f64], action_norm: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(FEATURE_LEN + MAX_CHARGERS);
    x.extend_from_slice(features);
    x.extend(pad(action_norm));
    x
}

/// Masked actor output in kW.
pub fn actor_action(actor: &Mlp, features: &[f64], inputs: &MaskInputs, chargers: &[ChargerSpec]) -> Result<Vec<f64>> {
    let u = actor.forward(features);
    mask(inputs, &denormalize_action(&u[..chargers.len()], chargers))
}

/// `Q(s, Mask(π(s)))` and its gradient with respect to the actor parameters.
pub fn actor_objective_gradient(
    actor: &Mlp,
    critic: &Mlp,
    features: &[f64],
    inputs: &MaskInputs,
    chargers: &[ChargerSpec],
) -> Result<(f64, Vec<f64>)> {
    let n = chargers.len();
    let trace_a = actor.forward_trace(features);
    let p = denormalize_action(&trace_a.output()[..n], chargers);
    let mt = mask_with_jacobian(inputs, &p)?;
    let a_norm = normalize_action(&mt.output, chargers);
    let trace_c = critic.forward_trace(&critic_input(features, &a_norm));
    let q = trace_c.output()[0];
    let mut scratch = vec![0.0; critic.params().len()];
    let g_in = critic.backward(&trace_c, &[1.0], &mut scratch);
    let half_range: Vec<f64> = chargers.iter().map(|c| (c.p_max - c.p_min) / 2.0).collect();
    let g_masked: Vec<f64> = (0..n).map(|i| g_in[FEATURE_LEN + i] / half_range[i]).collect();
    let g_raw = mt.vjp(&g_masked);
    let g_u: Vec<f64> = (0..n).map(|i| g_raw[i] * half_range[i]).collect();
    let mut grad = vec![0.0; actor.params().len()];
    actor.backward(&trace_a, &pad(&g_u)[..actor.output_len()], &mut grad);
    Ok((q, grad))
}

/// Deterministic masked actor acting through the simulator.
#[derive(Debug, Clone)]
pub struct RlPolicy {
    pub actor: Mlp,
    pub norm: NormConstants,
    pub offpeak_greedy: bool,
}

impl Policy for RlPolicy {
    fn name(&self) -> String {
        "rl".into()
    }

    fn act(&mut self, ctx: &StepContext<'_>) -> Result<Action> {
        let f = featurize(ctx.state, &self.norm)?;
        let p = actor_action(&self.actor, f.as_slice(), &MaskInputs::from_context(ctx), ctx.chargers)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("actor produced a non-finite action at slot {}", ctx.state.slot)));
        }
        Ok(Action { power_kw: p })
    }

    fn offpeak_override(&self) -> bool {
        self.offpeak_greedy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub norm: NormConstants,
    pub chargers: Vec<ChargerSpec>,
    pub offpeak_greedy: bool,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!("unsupported checkpoint version {}", ck.version)));
        }
        ck.norm.validate()?;
        Mlp::from_params(&ck.actor)?;
        Mlp::from_params(&ck.critic)?;
        Ok(ck)
    }

    pub fn policy(&self) -> Result<RlPolicy> {
        Ok(RlPolicy { actor: Mlp::from_params(&self.actor)?, norm: self.norm, offpeak_greedy: self.offpeak_greedy })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: usize,
    pub episode: usize,
    /// Unscaled reward collected over the governed slots of the episode.
    pub reward: f64,
    /// Mean weighted objective on the held-out set, if evaluated during the episode.
    pub eval_objective: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub actor: Mlp,
    pub critic: Mlp,
    pub norm: NormConstants,
    pub log: Vec<TrainLogRow>,
    pub steps: usize,
    pub oracle_fraction: f64,
    pub best_eval: Option<f64>,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn checkpoint(&self, chargers: &[ChargerSpec], offpeak_greedy: bool) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            actor: self.actor.to_params(),
            critic: self.critic.to_params(),
            norm: self.norm,
            chargers: chargers.to_vec(),
            offpeak_greedy,
        }
    }
}

/// Mean weighted objective of the deterministic actor over `episodes`.
pub fn evaluate_actor(
    actor: &Mlp,
    norm: &NormConstants,
    episodes: &[Episode],
    chargers: &[ChargerSpec],
    config: &DdpgConfig,
) -> Result<f64> {
    let opts = RolloutOptions { assignment: config.assignment, weights: config.weights, record_trajectory: false };
    let mut total = 0.0;
    for ep in episodes {
        let mut policy = RlPolicy { actor: actor.clone(), norm: *norm, offpeak_greedy: config.offpeak_greedy };
        total += rollout(ep, chargers, &mut policy, &opts)?.bill.weighted_objective(&config.weights);
    }
    Ok(total / episodes.len().max(1) as f64)
}

struct Learner {
    actor: Mlp,
    critic: Mlp,
    actor_target: Mlp,
    critic_target: Mlp,
    adam_actor: Adam,
    adam_critic: Adam,
}

impl Learner {
    fn update(&mut self, batch: &[&Transition], chargers: &[ChargerSpec], gamma: f64, step: usize) -> Result<()> {
        let b = batch.len() as f64;
        let mut g_critic = vec![0.0; self.critic.params().len()];
        let mut loss = 0.0;
        for t in batch {
            let mut y = t.reward;
            if !t.done && gamma > 0.0 {
                let next = actor_action(&self.actor_target, &t.next_features, &t.next_mask_inputs, chargers)?;
                let a_next = normalize_action(&next, chargers);
                y += gamma * self.critic_target.forward(&critic_input(&t.next_features, &a_next))[0];
            }
            let trace = self.critic.forward_trace(&critic_input(&t.features, &t.action));
            let err = trace.output()[0] - y;
            loss += err * err / b;
            self.critic.backward(&trace, &[2.0 * err / b], &mut g_critic);
        }
        if !loss.is_finite() || g_critic.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "critic loss {loss} at step {step}; rewards in batch: {:?}",
                batch.iter().map(|t| t.reward).collect::<Vec<_>>()
            )));
        }
        self.adam_critic.step(self.critic.params_mut(), &g_critic);

        let mut g_actor = vec![0.0; self.actor.params().len()];
        for t in batch {
            let (_, g) = actor_objective_gradient(&self.actor, &self.critic, &t.features, &t.mask_inputs, chargers)?;
            for (acc, gi) in g_actor.iter_mut().zip(g) {
                // gradient ascent on Q
                *acc -= gi / b;
            }
        }
        if g_actor.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("actor gradient is not finite at step {step}")));
        }
        self.adam_actor.step(self.actor.params_mut(), &g_actor);
        if !self.actor.is_finite() || !self.critic.is_finite() {
            return Err(Error::Numeric(format!("network parameters diverged at step {step}")));
        }
        Ok(())
    }
}

/// Train on `train` (cycled in order), early-stopping on `held_out`.
pub fn train(train: &[Episode], held_out: &[Episode], chargers: &[ChargerSpec], config: &DdpgConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Config("no training episodes".into()));
    }
    let norm = NormConstants::fit(train)?;
    let n = chargers.len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE)).map_err(|e| Error::Config(e.to_string()))?;
    let h = config.hidden;
    let actor = Mlp::new(&[FEATURE_LEN, h, h, MAX_CHARGERS], Activation::Tanh, 3e-3, &mut rng);
    let critic = Mlp::new(&[FEATURE_LEN + MAX_CHARGERS, h, h, 1], Activation::Identity, 3e-3, &mut rng);
    let mut learner = Learner {
        adam_actor: Adam::new(actor.params().len(), config.lr_actor),
        adam_critic: Adam::new(critic.params().len(), config.lr_critic),
        actor_target: actor.clone(),
        critic_target: critic.clone(),
        actor,
        critic,
    };
    let mut buffer = ReplayBuffer::new(config.buffer_size);
    let mut log = Vec::new();
    let mut step = 0;
    let mut episode_no = 0;
    let mut best: Option<(f64, Mlp, Mlp)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    'outer: while step < config.max_steps {
        let ep = &train[episode_no % train.len()];
        episode_no += 1;
        let mut sim = Simulator::new(ep, chargers, config.assignment)?;
        let mut ep_reward = 0.0;
        let mut eval_here = None;
        let steps_before = step;
        while !sim.is_done() && step < config.max_steps {
            let ctx = sim.context();
            if !rl_governed(&ctx, config.offpeak_greedy) {
                let a = finalize_action(&ctx, &super::greedy_offpeak(&ctx));
                sim.step(&a)?;
                continue;
            }
            let features = featurize(ctx.state, &norm)?.0.to_vec();
            let inputs = MaskInputs::from_context(&ctx);
            let from_oracle = config.r_pg > 0.0 && rng.random::<f64>() < config.r_pg;
            let raw = if from_oracle {
                let opts = LpOptions { weights: config.weights, peak_floor_kw: ctx.state.estimated_peak_kw, prune_redundant_rows: true };
                guidance_action(&sim, &opts)?
            } else {
                let out = learner.actor.forward(&features);
                let u: Vec<f64> = out[..n]
                    .iter()
                    .map(|&v| if config.noise_std > 0.0 { (v + noise.sample(&mut rng)).clamp(-1.0, 1.0) } else { v })
                    .collect();
                Action { power_kw: mask(&inputs, &denormalize_action(&u, chargers))? }
            };
            let action = finalize_action(&ctx, &raw);
            let r = reward(&ctx, &action, &config.weights);
            if !r.is_finite() {
                return Err(Error::Numeric(format!("non-finite reward at slot {} of episode {episode_no}", ctx.state.slot)));
            }
            ep_reward += r;
            sim.step(&action)?;
            let next_ctx = sim.context();
            let done = sim.is_done() || !rl_governed(&next_ctx, config.offpeak_greedy);
            let next_features = if sim.is_done() { vec![0.0; FEATURE_LEN] } else { featurize(next_ctx.state, &norm)?.0.to_vec() };
            buffer.push(Transition {
                features,
                mask_inputs: inputs,
                action: normalize_action(&action.power_kw, chargers),
                reward: r * config.reward_scale,
                next_features,
                next_mask_inputs: MaskInputs::from_context(&next_ctx),
                done,
                from_oracle,
            });
            step += 1;
            if step % config.train_step == 0 && buffer.len() >= config.batch_size {
                let batch = buffer.sample(config.batch_size, &mut rng);
                learner.update(&batch, chargers, config.gamma, step)?;
            }
            if step % config.update_step == 0 {
                learner.actor_target.soft_update(&learner.actor, config.tau_soft);
                learner.critic_target.soft_update(&learner.critic, config.tau_soft);
            }
            if config.eval_every > 0 && step % config.eval_every == 0 && !held_out.is_empty() {
                let score = evaluate_actor(&learner.actor, &norm, held_out, chargers, config)?;
                eval_here = Some(score);
                if best.as_ref().is_none_or(|(b, _, _)| score < *b) {
                    best = Some((score, learner.actor.clone(), learner.critic.clone()));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        stopped_early = true;
                        log.push(TrainLogRow { step, episode: episode_no, reward: ep_reward, eval_objective: eval_here });
                        break 'outer;
                    }
                }
            }
        }
        if step > steps_before || eval_here.is_some() {
            log.push(TrainLogRow { step, episode: episode_no, reward: ep_reward, eval_objective: eval_here });
        } else if episode_no > train.len() && log.is_empty() {
            return Err(Error::Config("training episodes contain no policy-governed slots".into()));
        }
    }
    let oracle_fraction = buffer.oracle_fraction();
    let (best_eval, actor, critic) = match best {
        Some((score, a, c)) => (Some(score), a, c),
        None => (None, learner.actor, learner.critic),
    };
    Ok(TrainOutcome { actor, critic, norm, log, steps: step, oracle_fraction, best_eval, stopped_early })
}
