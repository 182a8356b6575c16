//! Loss functions and the three-route joint training loop.
//!
//! Route 1 is supervised: labeled source text through `enc_s` into the
//! shared decoder against the gold target. Route 2 is a denoising
//! auto-encoder: corrupted target text through `enc_t`, decoded against the
//! clean target. Route 3 has no gold side at all: a sampled rollout from
//! source text is scored by the frozen trigram LM and trained with the
//! single-sample policy-gradient estimator. Every step draws one route and
//! updates the shared parameters.

use crate::data::{DataSplit, EOS_ID};
use crate::error::{Error, Result};
use crate::eval::{bleu, corpus_cross_entropy, decode_corpus, perplexity_from_ce, token_accuracy};
use crate::lm::NGramModel;
use crate::model::{DecodeMode, Forward, Seq2SeqModel, Side};
use crate::noise::{corrupt, NoiseConfig};
use crate::tensor::{Tape, Tensor};
use crate::util::stream_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::time::Instant;

/// RNG stream ids derived from the training seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const ROUTE: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const CORRUPT: u64 = 4;
    pub const SAMPLE: u64 = 5;
}

/// One of the three training routes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    R1,
    R2,
    R3,
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Route::R1 => write!(f, "route1"),
            Route::R2 => write!(f, "route2"),
            Route::R3 => write!(f, "route3"),
        }
    }
}

/// All hyperparameters of the joint training loop.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the RL term where it coexists with cross entropy.
    pub alpha: f64,
    /// Apply the LM reward to routes 1 and 2 as well as route 3.
    pub all_use_rl: bool,
    /// Sampling probabilities for routes 1-3 (normalized internally).
    pub route_weights: [f64; 3],
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    pub eval_every: usize,
    /// Evaluations without dev-loss improvement before stopping.
    pub patience: usize,
    pub max_decode_len: usize,
    /// Subtract a running-mean baseline from rewards (off by default).
    pub rl_baseline: bool,
    /// Keep dropout active during sampled rollouts.
    pub rollout_dropout: bool,
    pub noise: NoiseConfig,
    /// Stop successfully once a dev evaluation reaches this token accuracy.
    /// Off by default; convergence-style experiments use it to avoid
    /// training far past their target.
    #[serde(default)]
    pub target_dev_token_acc: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.2,
            all_use_rl: false,
            route_weights: [1.0, 0.0, 0.0],
            learning_rate: 1.0,
            clip_norm: 5.0,
            dropout: 0.3,
            batch_size: 16,
            max_steps: 5000,
            eval_every: 200,
            patience: 10,
            max_decode_len: 40,
            rl_baseline: false,
            rollout_dropout: true,
            noise: NoiseConfig::default(),
            target_dev_token_acc: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha < 0.0 {
            return Err(Error::contract("alpha must be nonnegative"));
        }
        if self.route_weights.iter().any(|&w| w < 0.0) {
            return Err(Error::contract("route weights must be nonnegative"));
        }
        if self.route_weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::contract("route weights must not all be zero"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must be in [0, 1)"));
        }
        if self.batch_size == 0 || self.max_steps == 0 || self.eval_every == 0 {
            return Err(Error::contract(
                "batch_size, max_steps, and eval_every must be positive",
            ));
        }
        if self.max_decode_len == 0 {
            return Err(Error::contract("max_decode_len must be positive"));
        }
        self.noise.validate()
    }

    /// True when any code path can request an LM reward.
    pub fn uses_rl(&self) -> bool {
        self.all_use_rl || self.route_weights[2] > 0.0
    }
}

/// Named route/reward configurations mirroring the model-comparison rows:
/// the supervised baseline, and LM-reward variants that progressively add
/// the denoising and policy-gradient routes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    R1,
    R1Lm,
    R12Lm,
    R123Lm,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::R1, Preset::R1Lm, Preset::R12Lm, Preset::R123Lm];

    pub fn parse(name: &str) -> Option<Preset> {
        match name {
            "r1" => Some(Preset::R1),
            "r1+lm" => Some(Preset::R1Lm),
            "r12+lm" => Some(Preset::R12Lm),
            "r123+lm" => Some(Preset::R123Lm),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::R1 => "r1",
            Preset::R1Lm => "r1+lm",
            Preset::R12Lm => "r12+lm",
            Preset::R123Lm => "r123+lm",
        }
    }

    /// Overwrite the route weights and RL switch. Everything else in the
    /// config (alpha, rates, budgets) is left to the caller.
    pub fn apply(&self, cfg: &mut TrainConfig) {
        let third = 1.0 / 3.0;
        match self {
            Preset::R1 => {
                cfg.route_weights = [1.0, 0.0, 0.0];
                cfg.all_use_rl = false;
            }
            Preset::R1Lm => {
                cfg.route_weights = [1.0, 0.0, 0.0];
                cfg.all_use_rl = true;
            }
            Preset::R12Lm => {
                cfg.route_weights = [0.5, 0.5, 0.0];
                cfg.all_use_rl = true;
            }
            Preset::R123Lm => {
                cfg.route_weights = [third, third, third];
                cfg.all_use_rl = true;
            }
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Scalar losses of one training step.
#[derive(Clone, Copy, Debug, Default)]
pub struct LossBundle {
    pub ce: f64,
    pub rl: f64,
    pub combined: f64,
}

/// Running-mean reward baseline, optional variance reduction for the
/// policy-gradient estimator.
#[derive(Clone, Copy, Debug, Default)]
pub struct RewardBaseline {
    mean: f64,
    count: u64,
}

impl RewardBaseline {
    pub fn value(&self) -> f64 {
        self.mean
    }

    pub fn observe(&mut self, reward: f64) {
        self.count += 1;
        self.mean += (reward - self.mean) / self.count as f64;
    }
}

/// Teacher-forced cross entropy `-(1/|Y|) sum_t ln p_t[y_t]` as a graph
/// node.
pub fn cross_entropy(tape: &mut Tape, dists: &[Tensor], targets: &[u32]) -> Result<Tensor> {
    if dists.len() != targets.len() {
        return Err(Error::contract(format!(
            "cross_entropy: {} distributions vs {} targets",
            dists.len(),
            targets.len()
        )));
    }
    if dists.is_empty() {
        return Err(Error::contract("cross_entropy: empty sequence"));
    }
    let mut acc: Option<Tensor> = None;
    for (p, &y) in dists.iter().zip(targets) {
        let picked = tape.pick(p, 0, y as usize)?;
        let lp = tape.log(&picked)?;
        acc = Some(match acc {
            Some(a) => tape.add(&a, &lp)?,
            None => lp,
        });
    }
    Ok(tape.scale(&acc.unwrap(), -1.0 / targets.len() as f64))
}

/// Single-sample policy-gradient loss `-(1/|Y'|) sum_t r_t ln p_t[y'_t]`.
/// Rewards are constants: no gradient flows through them or through the
/// sampling decision, only through the log-probabilities.
pub fn reinforce_loss(
    tape: &mut Tape,
    dists: &[Tensor],
    sampled: &[u32],
    rewards: &[f64],
) -> Result<Tensor> {
    if dists.len() != sampled.len() || dists.len() != rewards.len() {
        return Err(Error::contract(format!(
            "reinforce_loss: {} distributions vs {} tokens vs {} rewards",
            dists.len(),
            sampled.len(),
            rewards.len()
        )));
    }
    if dists.is_empty() {
        return Err(Error::contract("reinforce_loss: empty sequence"));
    }
    let mut acc: Option<Tensor> = None;
    for ((p, &y), &r) in dists.iter().zip(sampled).zip(rewards) {
        let picked = tape.pick(p, 0, y as usize)?;
        let lp = tape.log(&picked)?;
        let weighted = tape.scale(&lp, r);
        acc = Some(match acc {
            Some(a) => tape.add(&a, &weighted)?,
            None => weighted,
        });
    }
    Ok(tape.scale(&acc.unwrap(), -1.0 / sampled.len() as f64))
}

/// One encoder input with an optional gold target (EOS already appended).
#[derive(Clone, Debug)]
pub struct RouteItem {
    pub enc_input: Vec<u32>,
    pub enc_side: Side,
    pub ce_target: Option<Vec<u32>>,
}

/// Where the RL rollout tokens come from: drawn from the policy during
/// training, or replayed from a frozen sample for gradient checking.
pub enum RolloutMode<'a> {
    Sample(&'a mut ChaCha8Rng),
    Frozen(&'a [Vec<u32>]),
}

/// A rollout that was scored during loss construction.
#[derive(Clone, Debug)]
pub struct RolloutRecord {
    pub tokens: Vec<u32>,
    /// Raw (un-baselined) rewards.
    pub rewards: Vec<f64>,
}

/// Build the full loss graph for one batch of one route. The batch loss is
/// `mean(CE) + alpha * mean(RL)` where both terms exist, plain `mean(CE)`
/// without RL, and plain `mean(RL)` for route 3.
#[allow(clippy::too_many_arguments)]
pub fn route_loss(
    model: &Seq2SeqModel,
    lm: Option<&NGramModel>,
    route: Route,
    items: &[RouteItem],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    mut rollout: RolloutMode,
    baseline: Option<f64>,
    tape: &mut Tape,
) -> Result<(Tensor, LossBundle, Vec<RolloutRecord>)> {
    if items.is_empty() {
        return Err(Error::contract("route_loss: empty batch"));
    }
    let rl_active = matches!(route, Route::R3) || cfg.all_use_rl;
    if rl_active && lm.is_none() {
        return Err(Error::contract(
            "RL loss requested but no language model provided",
        ));
    }

    let mut ce_acc: Option<Tensor> = None;
    let mut rl_acc: Option<Tensor> = None;
    let mut records = Vec::new();

    for (idx, item) in items.iter().enumerate() {
        let enc = {
            let mut fwd = Forward::train(tape, cfg.dropout, dropout_rng);
            model.encode(&mut fwd, &item.enc_input, item.enc_side)?
        };

        if let Some(target) = &item.ce_target {
            let dists = {
                let mut fwd = Forward::train(tape, cfg.dropout, dropout_rng);
                model.decode_teacher_forced(&mut fwd, target, &enc)?
            };
            let ce = cross_entropy(tape, &dists, target)?;
            ce_acc = Some(match ce_acc {
                Some(a) => tape.add(&a, &ce)?,
                None => ce,
            });
        }

        if rl_active {
            let rollout_rate = if cfg.rollout_dropout { cfg.dropout } else { 0.0 };
            let (tokens, dists) = match &mut rollout {
                RolloutMode::Sample(rng) => {
                    let mut fwd = Forward::train(tape, rollout_rate, dropout_rng);
                    model.decode_autoregressive(
                        &mut fwd,
                        &enc,
                        DecodeMode::Sample,
                        cfg.max_decode_len,
                        Some(rng),
                    )?
                }
                RolloutMode::Frozen(samples) => {
                    let frozen = samples.get(idx).ok_or_else(|| {
                        Error::contract("frozen rollout list shorter than the batch")
                    })?;
                    let mut fwd = Forward::train(tape, rollout_rate, dropout_rng);
                    let dists = model.decode_teacher_forced(&mut fwd, frozen, &enc)?;
                    (frozen.clone(), dists)
                }
            };
            let raw_rewards = lm.unwrap().sequence_rewards(&tokens)?;
            let adjusted: Vec<f64> = match baseline {
                Some(b) => raw_rewards.iter().map(|r| r - b).collect(),
                None => raw_rewards.clone(),
            };
            let rl = reinforce_loss(tape, &dists, &tokens, &adjusted)?;
            rl_acc = Some(match rl_acc {
                Some(a) => tape.add(&a, &rl)?,
                None => rl,
            });
            records.push(RolloutRecord {
                tokens,
                rewards: raw_rewards,
            });
        }
    }

    let scale = 1.0 / items.len() as f64;
    let ce_mean = ce_acc.map(|t| tape.scale(&t, scale));
    let rl_mean = rl_acc.map(|t| tape.scale(&t, scale));

    let (loss, bundle) = match (ce_mean, rl_mean) {
        (Some(ce), Some(rl)) => {
            let scaled = tape.scale(&rl, cfg.alpha);
            let total = tape.add(&ce, &scaled)?;
            let b = LossBundle {
                ce: ce.values()[0],
                rl: rl.values()[0],
                combined: total.values()[0],
            };
            (total, b)
        }
        (Some(ce), None) => {
            let b = LossBundle {
                ce: ce.values()[0],
                rl: 0.0,
                combined: ce.values()[0],
            };
            (ce, b)
        }
        (None, Some(rl)) => {
            let b = LossBundle {
                ce: 0.0,
                rl: rl.values()[0],
                combined: rl.values()[0],
            };
            (rl, b)
        }
        (None, None) => {
            return Err(Error::contract(
                "route produced neither a CE nor an RL loss",
            ))
        }
    };
    Ok((loss, bundle, records))
}

fn with_eos(tokens: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(tokens.len() + 1);
    out.extend_from_slice(tokens);
    out.push(EOS_ID);
    out
}

fn apply_step(
    model: &mut Seq2SeqModel,
    lm: Option<&NGramModel>,
    route: Route,
    items: &[RouteItem],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    sample_rng: &mut ChaCha8Rng,
    baseline: Option<&mut RewardBaseline>,
) -> Result<LossBundle> {
    let mut tape = Tape::new();
    let baseline_value = baseline.as_ref().filter(|_| cfg.rl_baseline).map(|b| b.value());
    let (loss, bundle, records) = route_loss(
        model,
        lm,
        route,
        items,
        cfg,
        dropout_rng,
        RolloutMode::Sample(sample_rng),
        baseline_value,
        &mut tape,
    )?;
    tape.backward(&loss)?;
    tape.accumulate_param_grads(&mut model.params);
    model.params.sgd_step(cfg.learning_rate, cfg.clip_norm);
    if let Some(tracker) = baseline {
        for record in &records {
            for &r in &record.rewards {
                tracker.observe(r);
            }
        }
    }
    Ok(bundle)
}

/// Supervised route: labeled pairs through the source encoder and shared
/// decoder; CE always, RL when `all_use_rl`. Updates `enc_s.*` and `dec.*`.
pub fn train_route1(
    model: &mut Seq2SeqModel,
    lm: Option<&NGramModel>,
    batch: &[(Vec<u32>, Vec<u32>)],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    sample_rng: &mut ChaCha8Rng,
    baseline: Option<&mut RewardBaseline>,
) -> Result<LossBundle> {
    let items: Vec<RouteItem> = batch
        .iter()
        .map(|(x, y)| RouteItem {
            enc_input: x.clone(),
            enc_side: Side::Source,
            ce_target: Some(with_eos(y)),
        })
        .collect();
    apply_step(model, lm, Route::R1, &items, cfg, dropout_rng, sample_rng, baseline)
}

/// Denoising auto-encoder route: corrupt each target sentence, encode with
/// the target-side encoder, decode against the clean sentence. Updates
/// `enc_t.*` and `dec.*`.
#[allow(clippy::too_many_arguments)]
pub fn train_route2(
    model: &mut Seq2SeqModel,
    lm: Option<&NGramModel>,
    batch: &[Vec<u32>],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    sample_rng: &mut ChaCha8Rng,
    corrupt_rng: &mut ChaCha8Rng,
    baseline: Option<&mut RewardBaseline>,
) -> Result<LossBundle> {
    let items: Vec<RouteItem> = batch
        .iter()
        .map(|y| {
            Ok(RouteItem {
                enc_input: corrupt(y, &cfg.noise, corrupt_rng)?,
                enc_side: Side::Target,
                ce_target: Some(with_eos(y)),
            })
        })
        .collect::<Result<_>>()?;
    apply_step(model, lm, Route::R2, &items, cfg, dropout_rng, sample_rng, baseline)
}

/// Policy-gradient route: sampled rollouts from source text scored by the
/// frozen LM; no cross entropy and no alpha. Updates `enc_s.*` and `dec.*`.
pub fn train_route3(
    model: &mut Seq2SeqModel,
    lm: &NGramModel,
    batch: &[Vec<u32>],
    cfg: &TrainConfig,
    dropout_rng: &mut ChaCha8Rng,
    sample_rng: &mut ChaCha8Rng,
    baseline: Option<&mut RewardBaseline>,
) -> Result<LossBundle> {
    let items: Vec<RouteItem> = batch
        .iter()
        .map(|x| RouteItem {
            enc_input: x.clone(),
            enc_side: Side::Source,
            ce_target: None,
        })
        .collect();
    apply_step(
        model,
        Some(lm),
        Route::R3,
        &items,
        cfg,
        dropout_rng,
        sample_rng,
        baseline,
    )
}

/// One metrics row per evaluation.
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub step: usize,
    pub r1_steps: usize,
    pub r2_steps: usize,
    pub r3_steps: usize,
    pub train_ce: f64,
    pub train_rl: f64,
    pub dev_ppl: f64,
    pub dev_bleu: f64,
    pub dev_token_acc: f64,
    pub wall_ms: u128,
}

pub const METRICS_CSV_HEADER: &str =
    "step,r1_steps,r2_steps,r3_steps,train_ce,train_rl,dev_ppl,dev_bleu,dev_token_acc,wall_ms";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.step,
            self.r1_steps,
            self.r2_steps,
            self.r3_steps,
            self.train_ce,
            self.train_rl,
            self.dev_ppl,
            self.dev_bleu,
            self.dev_token_acc,
            self.wall_ms
        )
    }
}

pub fn metrics_to_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

/// Result of a full training run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub metrics: Vec<MetricsRow>,
    pub best_step: usize,
    pub best_dev_ce: f64,
    pub steps_run: usize,
    pub route_counts: [usize; 3],
    pub stopped_early: bool,
    /// Set when `target_dev_token_acc` was configured and reached.
    pub reached_target: bool,
}

/// The joint training loop: each step draws a route by weight, trains one
/// batch, and every `eval_every` steps records dev metrics. Stops at
/// `max_steps` or after `patience` evaluations without dev-loss
/// improvement, and restores the best-dev parameters at the end.
pub fn train(
    model: &mut Seq2SeqModel,
    data: &DataSplit<u32>,
    lm: Option<&NGramModel>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.uses_rl() && lm.is_none() {
        return Err(Error::contract(
            "configuration enables RL (all_use_rl or route 3) but no LM was provided",
        ));
    }
    if data.dev.is_empty() {
        return Err(Error::sizing("training requires a nonempty dev set"));
    }

    // Route pools. Route 2 draws from Y_L and Y_U together, route 3 from
    // X_L and X_U together.
    let pool2: Vec<&Vec<u32>> = data
        .labeled
        .iter()
        .map(|(_, y)| y)
        .chain(data.unlabeled_tgt.iter())
        .collect();
    let pool3: Vec<&Vec<u32>> = data
        .labeled
        .iter()
        .map(|(x, _)| x)
        .chain(data.unlabeled_src.iter())
        .collect();

    let mut weights = cfg.route_weights;
    let pool_sizes = [data.labeled.len(), pool2.len(), pool3.len()];
    for (i, &size) in pool_sizes.iter().enumerate() {
        if weights[i] > 0.0 && size == 0 {
            log::warn!(
                "route {} has weight {} but an empty data pool; renormalizing its weight to 0",
                i + 1,
                weights[i]
            );
            weights[i] = 0.0;
        }
    }
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::sizing(
            "no route has both positive weight and a nonempty data pool",
        ));
    }
    let thresholds = [
        weights[0] / weight_sum,
        (weights[0] + weights[1]) / weight_sum,
    ];

    let mut route_rng = stream_rng(cfg.seed, streams::ROUTE);
    let mut batch_rng = stream_rng(cfg.seed, streams::BATCH);
    let mut dropout_rng = stream_rng(cfg.seed, streams::DROPOUT);
    let mut corrupt_rng = stream_rng(cfg.seed, streams::CORRUPT);
    let mut sample_rng = stream_rng(cfg.seed, streams::SAMPLE);
    let mut baseline = RewardBaseline::default();

    let dev_refs: Vec<Vec<u32>> = data.dev.iter().map(|(_, y)| y.clone()).collect();
    let dev_srcs: Vec<Vec<u32>> = data.dev.iter().map(|(x, _)| x.clone()).collect();

    let start = Instant::now();
    let mut metrics = Vec::new();
    let mut route_counts = [0usize; 3];
    let mut best_dev_ce = f64::INFINITY;
    let mut best_step = 0usize;
    let mut best_params: Option<crate::tensor::ParamStore> = None;
    let mut evals_since_best = 0usize;
    let mut stopped_early = false;
    let mut reached_target = false;
    let mut steps_run = 0usize;

    // running training-loss accumulators between evaluations
    let (mut ce_sum, mut ce_n, mut rl_sum, mut rl_n) = (0.0, 0usize, 0.0, 0usize);

    for step in 1..=cfg.max_steps {
        steps_run = step;
        // one uniform draw per step selects the route
        let u: f64 = route_rng.gen();
        let route = if u < thresholds[0] {
            Route::R1
        } else if u < thresholds[1] {
            Route::R2
        } else {
            Route::R3
        };

        let bundle = match route {
            Route::R1 => {
                route_counts[0] += 1;
                let batch: Vec<(Vec<u32>, Vec<u32>)> = (0..cfg.batch_size)
                    .map(|_| data.labeled[batch_rng.gen_range(0..data.labeled.len())].clone())
                    .collect();
                train_route1(
                    model,
                    lm,
                    &batch,
                    cfg,
                    &mut dropout_rng,
                    &mut sample_rng,
                    Some(&mut baseline),
                )?
            }
            Route::R2 => {
                route_counts[1] += 1;
                let batch: Vec<Vec<u32>> = (0..cfg.batch_size)
                    .map(|_| pool2[batch_rng.gen_range(0..pool2.len())].clone())
                    .collect();
                train_route2(
                    model,
                    lm,
                    &batch,
                    cfg,
                    &mut dropout_rng,
                    &mut sample_rng,
                    &mut corrupt_rng,
                    Some(&mut baseline),
                )?
            }
            Route::R3 => {
                route_counts[2] += 1;
                let batch: Vec<Vec<u32>> = (0..cfg.batch_size)
                    .map(|_| pool3[batch_rng.gen_range(0..pool3.len())].clone())
                    .collect();
                train_route3(
                    model,
                    lm.expect("validated above"),
                    &batch,
                    cfg,
                    &mut dropout_rng,
                    &mut sample_rng,
                    Some(&mut baseline),
                )?
            }
        };

        if !matches!(route, Route::R3) {
            ce_sum += bundle.ce;
            ce_n += 1;
        }
        if matches!(route, Route::R3) || cfg.all_use_rl {
            rl_sum += bundle.rl;
            rl_n += 1;
        }

        if step % cfg.eval_every == 0 || step == cfg.max_steps {
            let dev_ce = corpus_cross_entropy(model, &data.dev)?;
            let hyps = decode_corpus(model, &dev_srcs, cfg.max_decode_len)?;
            let dev_bleu = bleu(&hyps, &dev_refs)?;
            let dev_acc = token_accuracy(&hyps, &dev_refs)?;
            metrics.push(MetricsRow {
                step,
                r1_steps: route_counts[0],
                r2_steps: route_counts[1],
                r3_steps: route_counts[2],
                train_ce: if ce_n > 0 { ce_sum / ce_n as f64 } else { 0.0 },
                train_rl: if rl_n > 0 { rl_sum / rl_n as f64 } else { 0.0 },
                dev_ppl: perplexity_from_ce(dev_ce),
                dev_bleu,
                dev_token_acc: dev_acc,
                wall_ms: start.elapsed().as_millis(),
            });
            (ce_sum, ce_n, rl_sum, rl_n) = (0.0, 0, 0.0, 0);

            if dev_ce < best_dev_ce {
                best_dev_ce = dev_ce;
                best_step = step;
                best_params = Some(model.params.clone());
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
            if let Some(target) = cfg.target_dev_token_acc {
                if dev_acc >= target {
                    reached_target = true;
                    break;
                }
            }
        }
    }

    if let Some(best) = best_params {
        model.params = best;
    }
    Ok(TrainOutcome {
        metrics,
        best_step,
        best_dev_ce,
        steps_run,
        route_counts,
        stopped_early,
        reached_target,
    })
}
