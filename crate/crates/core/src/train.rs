//! Training recipe: uniform initialization, per-utterance Adam steps with
//! gradient clipping, new-bob annealing on held-out loss, long-utterance
//! filtering, and a stratified held-out split. Also the shared evaluation
//! path (oracle-accent and hard-switch regimes).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::corpus::{stack_and_decimate, Corpus, Utterance};
use crate::ctc::{greedy_decode, LabelSequence};
use crate::error::{Error, Result};
use crate::metrics::{aid_accuracy, edit_distance, AidReport};
use crate::model::{
    build_forward, infer, register_params, utterance_loss, Accent, AmConfig, ModelKind,
};
use crate::optim::{clip_gradients, AdamState, NewBobState};
use crate::params::ParamStore;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    /// Interpolation weight between the CTC loss and the AID loss.
    pub alpha: f64,
    pub lr_init: f64,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub init_lo: f64,
    pub init_hi: f64,
    /// Raw-frame cap; longer utterances are dropped from training.
    pub max_frames: usize,
    pub heldout_fraction: f64,
    pub max_epochs: usize,
    /// Annealing stop; training halts once the learning rate falls below.
    pub min_lr: f64,
    /// Optimizer steps apply once per this many utterances; gradients
    /// accumulate in between.
    pub accumulate_utterances: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            alpha: 0.001,
            lr_init: 5e-4,
            clip_lo: -10.0,
            clip_hi: 10.0,
            init_lo: -0.01,
            init_hi: 0.01,
            max_frames: 2000,
            heldout_fraction: 0.05,
            max_epochs: 50,
            min_lr: 5e-4 / 1024.0,
            accumulate_utterances: 1,
            seed: 1234,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_lo >= self.clip_hi {
            return Err(Error::Config("clip_lo must be below clip_hi".into()));
        }
        if !(0.0 < self.heldout_fraction && self.heldout_fraction < 1.0) {
            return Err(Error::Config("heldout_fraction must lie in (0, 1)".into()));
        }
        if self.lr_init <= 0.0 {
            return Err(Error::Config("lr_init must be positive".into()));
        }
        if self.init_lo > self.init_hi {
            return Err(Error::Config("empty init range".into()));
        }
        if self.accumulate_utterances == 0 {
            return Err(Error::Config("accumulate_utterances must be >= 1".into()));
        }
        crate::model::check_alpha(self.alpha)
    }
}

/// Fresh parameters for a model variant, drawn uniformly from the
/// configured init range. Deterministic for a fixed seed.
pub fn init_params(
    kind: ModelKind,
    am: &AmConfig,
    tc: &TrainingConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ParamStore> {
    let mut store = register_params(kind, am)?;
    store.init_uniform(rng, tc.init_lo, tc.init_hi);
    Ok(store)
}

/// Drop utterances longer than `max_frames` (boundary inclusive: exactly
/// `max_frames` is kept). Applied to the training partition only.
pub fn filter_long(utterances: Vec<Utterance>, max_frames: usize) -> Result<Vec<Utterance>> {
    let kept: Vec<Utterance> = utterances
        .into_iter()
        .filter(|u| u.features.rows() <= max_frames)
        .collect();
    if kept.is_empty() {
        return Err(Error::Config(
            "no training utterances remain after length filtering".into(),
        ));
    }
    Ok(kept)
}

/// Deterministic stratified split: held-out counts per accent follow the
/// overall fraction by largest remainder, so each accent's count differs
/// from proportional by at most one.
pub fn split_heldout(
    utterances: Vec<Utterance>,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<Utterance>, Vec<Utterance>)> {
    if !(0.0 < fraction && fraction < 1.0) {
        return Err(Error::Config(format!("fraction {fraction} outside (0, 1)")));
    }
    let total = utterances.len();
    if total < 2 {
        return Err(Error::Config("cannot split fewer than two utterances".into()));
    }
    let target = ((total as f64 * fraction).round() as usize).clamp(1, total - 1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_accent: Vec<(Accent, Vec<Utterance>)> = Vec::new();
    let mut pool = utterances;
    for accent in [Accent::Us, Accent::Uk] {
        let (this, rest): (Vec<_>, Vec<_>) = pool.into_iter().partition(|u| u.accent == accent);
        pool = rest;
        if !this.is_empty() {
            by_accent.push((accent, this));
        }
    }

    // Largest-remainder apportionment of the held-out target.
    let mut quotas: Vec<(usize, f64, usize)> = by_accent
        .iter()
        .enumerate()
        .map(|(i, (_, utts))| {
            let exact = utts.len() as f64 * target as f64 / total as f64;
            (i, exact - exact.floor(), exact.floor() as usize)
        })
        .collect();
    let mut assigned: usize = quotas.iter().map(|q| q.2).sum();
    quotas.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let mut counts: Vec<usize> = by_accent.iter().map(|_| 0).collect();
    for (i, _, floor) in &quotas {
        counts[*i] = *floor;
    }
    for (i, _, _) in &quotas {
        if assigned >= target {
            break;
        }
        counts[*i] += 1;
        assigned += 1;
    }

    let mut train = Vec::new();
    let mut heldout = Vec::new();
    for ((_, mut utts), take) in by_accent.into_iter().zip(counts) {
        utts.shuffle(&mut rng);
        let take = take.min(utts.len().saturating_sub(1));
        for (i, u) in utts.into_iter().enumerate() {
            if i < take {
                heldout.push(u);
            } else {
                train.push(u);
            }
        }
    }
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::Config("split produced an empty partition".into()));
    }
    Ok((train, heldout))
}

/// An utterance ready for the model: stacked features, labels, accent.
#[derive(Clone, Debug)]
pub struct PreparedUtt {
    pub id: String,
    pub accent: Accent,
    pub labels: LabelSequence,
    pub features: Tensor,
}

pub fn prepare(utterances: &[Utterance]) -> Result<Vec<PreparedUtt>> {
    utterances
        .iter()
        .map(|u| {
            Ok(PreparedUtt {
                id: u.id.clone(),
                accent: u.accent,
                labels: u.labels.clone(),
                features: stack_and_decimate(&u.features)?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub heldout_loss: f64,
    pub per_us: Option<f64>,
    pub per_uk: Option<f64>,
    pub aid_acc: Option<f64>,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "epoch,train_loss,heldout_loss,per_us,per_uk,aid_acc,lr";

impl EpochLog {
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        format!(
            "{},{:.12},{:.12},{},{},{},{:.12e}",
            self.epoch,
            self.train_loss,
            self.heldout_loss,
            opt(self.per_us),
            opt(self.per_uk),
            opt(self.aid_acc),
            self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    /// Epoch at which a non-finite loss aborted training, if any; the
    /// checkpoint is the last good state.
    pub diverged_at: Option<usize>,
}

fn corpus_for_kind(corpus: &Corpus, kind: ModelKind) -> Vec<Utterance> {
    corpus
        .utterances
        .iter()
        .filter(|u| match kind {
            ModelKind::AspecUs => u.accent == Accent::Us,
            ModelKind::AspecUk => u.accent == Accent::Uk,
            _ => true,
        })
        .cloned()
        .collect()
}

/// Held-out metrics for one epoch: mean joint loss, oracle-accent PER per
/// accent, AID accuracy where the model has a branch.
struct HeldoutMetrics {
    loss: f64,
    per_us: Option<f64>,
    per_uk: Option<f64>,
    aid_acc: Option<f64>,
}

fn heldout_metrics(
    store: &ParamStore,
    am: &AmConfig,
    kind: ModelKind,
    alpha: f64,
    heldout: &[PreparedUtt],
) -> Result<HeldoutMetrics> {
    let mut loss_sum = 0.0;
    let mut dist = [0usize; 2];
    let mut ref_len = [0usize; 2];
    let mut n = [0usize; 2];
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for utt in heldout {
        let mut tape = Tape::new();
        let nodes = build_forward(&mut tape, store, am, kind, &utt.features)?;
        let loss = utterance_loss(&mut tape, &nodes, kind, &utt.labels, utt.accent, alpha)?;
        loss_sum += tape.value(loss).at(0, 0);
        let slot = match utt.accent {
            Accent::Us => 0,
            Accent::Uk => 1,
        };
        if let Some(lattice) = nodes.head(utt.accent) {
            let hyp = greedy_decode(tape.value(lattice));
            dist[slot] += edit_distance(&utt.labels, &hyp);
            ref_len[slot] += utt.labels.len();
            n[slot] += 1;
        }
        if let Some(p) = nodes.p_us {
            let aid = crate::model::AidOutput::from_probability(tape.value(p).at(0, 0));
            predictions.push(aid.predicted());
            truths.push(utt.accent);
        }
    }
    let per = |slot: usize| {
        (n[slot] > 0).then(|| 100.0 * dist[slot] as f64 / ref_len[slot].max(1) as f64)
    };
    let aid_acc = if predictions.is_empty() {
        None
    } else {
        Some(aid_accuracy(&predictions, &truths)?.accuracy)
    };
    Ok(HeldoutMetrics {
        loss: loss_sum / heldout.len() as f64,
        per_us: per(0),
        per_uk: per(1),
        aid_acc,
    })
}

/// Full training run for one model variant: shuffle, per-utterance
/// forward/backward, clip, Adam, held-out evaluation, new-bob annealing.
pub fn run_training(
    corpus: &Corpus,
    kind: ModelKind,
    am: &AmConfig,
    tc: &TrainingConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    am.validate()?;
    if am.feature_dim != 2 * corpus.feature_dim {
        return Err(Error::Config(format!(
            "model expects {} input dims but stacked corpus provides {}",
            am.feature_dim,
            2 * corpus.feature_dim
        )));
    }
    let subset = corpus_for_kind(corpus, kind);
    if subset.is_empty() {
        return Err(Error::Config("no utterances for this model variant".into()));
    }
    let (train_raw, heldout_raw) = split_heldout(subset, tc.heldout_fraction, tc.seed)?;
    let train_raw = filter_long(train_raw, tc.max_frames)?;
    let train = prepare(&train_raw)?;
    let heldout = prepare(&heldout_raw)?;

    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut store = init_params(kind, am, tc, &mut rng)?;
    let mut adam = AdamState::new(&store);
    let mut newbob = NewBobState::new(tc.lr_init);
    let alpha = match kind {
        ModelKind::Joint => tc.alpha,
        _ => 0.0,
    };

    let snapshot = |store: &ParamStore, adam: &AdamState| Checkpoint {
        kind,
        config: am.clone(),
        alpha,
        params: store.clone(),
        adam: adam.clone(),
    };

    let mut log = Vec::new();
    let mut last_good = snapshot(&store, &adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=tc.max_epochs {
        order.shuffle(&mut rng);
        let mut train_loss_sum = 0.0;
        let mut pending = 0usize;
        store.zero_grads();
        for (i, &idx) in order.iter().enumerate() {
            let utt = &train[idx];
            let mut tape = Tape::new();
            let nodes = build_forward(&mut tape, &store, am, kind, &utt.features)?;
            let loss = utterance_loss(&mut tape, &nodes, kind, &utt.labels, utt.accent, alpha)?;
            let loss_value = tape.value(loss).at(0, 0);
            if !loss_value.is_finite() {
                return Ok(TrainOutcome {
                    checkpoint: last_good,
                    log,
                    diverged_at: Some(epoch),
                });
            }
            train_loss_sum += loss_value;
            tape.backward(loss, &mut store)?;
            pending += 1;
            if pending == tc.accumulate_utterances || i + 1 == order.len() {
                clip_gradients(&mut store, tc.clip_lo, tc.clip_hi)?;
                adam.step(&mut store, newbob.current_lr)?;
                store.zero_grads();
                pending = 0;
            }
        }
        let metrics = heldout_metrics(&store, am, kind, alpha, &heldout)?;
        if !metrics.loss.is_finite() {
            return Ok(TrainOutcome {
                checkpoint: last_good,
                log,
                diverged_at: Some(epoch),
            });
        }
        let lr_before = newbob.current_lr;
        let stop = newbob.update(metrics.loss, tc.min_lr);
        log.push(EpochLog {
            epoch,
            train_loss: train_loss_sum / train.len() as f64,
            heldout_loss: metrics.loss,
            per_us: metrics.per_us,
            per_uk: metrics.per_uk,
            aid_acc: metrics.aid_acc,
            lr: lr_before,
        });
        last_good = snapshot(&store, &adam);
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: last_good,
        log,
        diverged_at: None,
    })
}

/// How the accent head is chosen at evaluation time.
pub enum HeadSelection<'a> {
    /// The true accent label selects the head (upper bound).
    Oracle,
    /// The checkpoint's own AID branch drives the hard switch.
    OwnAid,
    /// A separately trained standalone classifier drives the switch.
    External {
        aid_params: &'a ParamStore,
        aid_config: &'a AmConfig,
    },
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub per_us: Option<f64>,
    pub per_uk: Option<f64>,
    pub n_us: usize,
    pub n_uk: usize,
    pub aid: Option<AidReport>,
    /// Utterances decoded from the wrong-accent head under switching.
    pub switch_errors: usize,
}

impl EvalReport {
    pub fn overall_per(&self) -> Option<f64> {
        match (self.per_us, self.per_uk) {
            (Some(a), Some(b)) => {
                let (n_us, n_uk) = (self.n_us as f64, self.n_uk as f64);
                Some((a * n_us + b * n_uk) / (n_us + n_uk))
            }
            (Some(a), None) => Some(a),
            (None, Some(b)) => Some(b),
            (None, None) => None,
        }
    }
}

/// Labels from the two heads live in disjoint index spaces; map them to a
/// shared space so a wrong-head decode cannot spuriously match.
fn global_label(accent: Accent, label: usize, config: &AmConfig) -> usize {
    match accent {
        Accent::Us => label,
        Accent::Uk => label + config.phones_us,
    }
}

/// Decode a prepared set and score PER per accent; when a switch drives
/// head selection, AID accuracy and confusion come along.
pub fn evaluate(
    store: &ParamStore,
    config: &AmConfig,
    kind: ModelKind,
    utts: &[PreparedUtt],
    selection: &HeadSelection<'_>,
) -> Result<EvalReport> {
    let mut dist = [0usize; 2];
    let mut ref_len = [0usize; 2];
    let mut n = [0usize; 2];
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    let mut switch_errors = 0usize;
    for utt in utts {
        let out = infer(store, config, kind, &utt.features)?;
        let head = match selection {
            HeadSelection::Oracle => utt.accent,
            HeadSelection::OwnAid => {
                let aid = out.aid.ok_or_else(|| {
                    Error::Contract("checkpoint has no AID branch for switching".into())
                })?;
                predictions.push(aid.predicted());
                truths.push(utt.accent);
                aid.predicted()
            }
            HeadSelection::External {
                aid_params,
                aid_config,
            } => {
                let aid_out = infer(aid_params, aid_config, ModelKind::Aid, &utt.features)?;
                let aid = aid_out
                    .aid
                    .expect("standalone AID model always produces a probability");
                predictions.push(aid.predicted());
                truths.push(utt.accent);
                aid.predicted()
            }
        };
        if head != utt.accent {
            switch_errors += 1;
        }
        let hyp = greedy_decode(out.lattice(head)?);
        let hyp_global: Vec<usize> = hyp.iter().map(|&l| global_label(head, l, config)).collect();
        let ref_global: Vec<usize> = utt
            .labels
            .iter()
            .map(|&l| global_label(utt.accent, l, config))
            .collect();
        let slot = match utt.accent {
            Accent::Us => 0,
            Accent::Uk => 1,
        };
        dist[slot] += edit_distance(&ref_global, &hyp_global);
        ref_len[slot] += ref_global.len();
        n[slot] += 1;
    }
    let per = |slot: usize| {
        (n[slot] > 0).then(|| 100.0 * dist[slot] as f64 / ref_len[slot].max(1) as f64)
    };
    let aid = if predictions.is_empty() {
        None
    } else {
        Some(aid_accuracy(&predictions, &truths)?)
    };
    Ok(EvalReport {
        per_us: per(0),
        per_uk: per(1),
        n_us: n[0],
        n_uk: n[1],
        aid,
        switch_errors,
    })
}

/// The held-out portion of a corpus, prepared, using the same split the
/// trainer used.
pub fn heldout_split_for(
    corpus: &Corpus,
    kind: ModelKind,
    tc: &TrainingConfig,
) -> Result<Vec<PreparedUtt>> {
    let subset = corpus_for_kind(corpus, kind);
    let (_, heldout) = split_heldout(subset, tc.heldout_fraction, tc.seed)?;
    prepare(&heldout)
}
