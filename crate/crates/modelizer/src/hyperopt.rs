//! Two-phase hyperparameter search: architecture first at a fixed learning
//! rate, then the learning-rate regime, with median pruning of
//! non-promising trials.

use crate::model::{
    train_observed, IdPair, ModelConfig, ModelError, Schedule, Seq2Seq, TrainConfig,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HyperoptError {
    #[error("hyperparameter search space is empty")]
    EmptySpace,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Candidate value sets for both search phases.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchSpace {
    pub encoder_layers: Vec<usize>,
    pub decoder_layers: Vec<usize>,
    pub embedding_size: Vec<usize>,
    pub feedforward_size: Vec<usize>,
    pub attention_heads: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub weight_decay: Vec<f64>,
    pub schedule: Vec<Schedule>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            encoder_layers: vec![1, 2],
            decoder_layers: vec![1, 2, 3, 4],
            embedding_size: vec![128, 256],
            feedforward_size: vec![1024, 2048, 4096],
            attention_heads: vec![16, 32, 64],
            learning_rate: vec![1e-4, 5e-4],
            weight_decay: vec![1e-4, 5e-4, 1e-2],
            schedule: vec![Schedule::Cosine, Schedule::Step, Schedule::Multiplicative],
        }
    }
}

/// Fixed learning rate used by every phase-1 (architecture) trial.
pub const PHASE1_LEARNING_RATE: f64 = 1e-4;
/// Per-trial epoch budget for phase 1.
pub const PHASE1_EPOCHS: usize = 3;
/// Per-trial epoch budget for phase 2.
pub const PHASE2_EPOCHS: usize = 5;
/// Default desk-scale trial counts for the two phases.
pub const DEFAULT_PHASE1_TRIALS: usize = 25;
pub const DEFAULT_PHASE2_TRIALS: usize = 10;

/// Outcome of one trial. Pruned trials report the loss observed at the
/// epoch where they were cut.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrialResult {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub validation_loss: f64,
    pub pruned: bool,
    pub epochs_completed: usize,
}

/// Full record of a search run, suitable for the JSON report.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SearchReport {
    pub phase1: Vec<TrialResult>,
    pub phase2: Vec<TrialResult>,
}

impl SearchSpace {
    fn architecture_candidates(&self) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &enc in &self.encoder_layers {
            for &dec in &self.decoder_layers {
                for &emb in &self.embedding_size {
                    for &ff in &self.feedforward_size {
                        for &heads in &self.attention_heads {
                            let cfg = ModelConfig {
                                encoder_layers: enc,
                                decoder_layers: dec,
                                embedding_size: emb,
                                feedforward_size: ff,
                                attention_heads: heads,
                                ..ModelConfig::default()
                            };
                            if cfg.validate().is_ok() {
                                out.push(cfg);
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn regime_candidates(&self, epochs: usize) -> Vec<TrainConfig> {
        let mut out = Vec::new();
        for &lr in &self.learning_rate {
            for &wd in &self.weight_decay {
                for &schedule in &self.schedule {
                    out.push(TrainConfig {
                        learning_rate: lr,
                        weight_decay: wd,
                        schedule,
                        epochs,
                        ..TrainConfig::default()
                    });
                }
            }
        }
        out
    }
}

/// Shared median-pruning ledger: `losses[e]` holds the validation losses
/// recorded at epoch `e` by every trial that reached it.
#[derive(Default)]
struct PruneLedger {
    losses: Vec<Vec<f64>>,
}

impl PruneLedger {
    fn record(&mut self, epoch: usize, loss: f64) {
        while self.losses.len() <= epoch {
            self.losses.push(Vec::new());
        }
        self.losses[epoch].push(loss);
    }

    /// Median of the losses previously recorded at `epoch`, if any.
    fn median(&self, epoch: usize) -> Option<f64> {
        let xs = self.losses.get(epoch)?;
        if xs.is_empty() {
            return None;
        }
        let mut sorted = xs.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        Some(if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        })
    }
}

/// Runs one trial with median pruning. A trial is pruned when, at any epoch
/// with 1-based index ≥ 2, its validation loss exceeds the median of the
/// losses other trials recorded at that epoch.
fn run_trial(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    pairs: &[IdPair],
    src_vocab: usize,
    tgt_vocab: usize,
    model_seed: u64,
    ledger: &mut PruneLedger,
) -> Result<TrialResult, HyperoptError> {
    let mut model: Seq2Seq<f32> = Seq2Seq::init(model_cfg.clone(), src_vocab, tgt_vocab, model_seed)?;
    let mut pruned = false;
    let mut last_loss = f64::INFINITY;
    let mut epochs_completed = 0usize;
    let mut fresh: Vec<(usize, f64)> = Vec::new();
    let history = train_observed(&mut model, pairs, train_cfg, &mut |epoch, _train, val| {
        last_loss = val;
        epochs_completed = epoch + 1;
        // Record against the ledger only after the trial finishes or is
        // pruned, so a trial never competes against its own history.
        fresh.push((epoch, val));
        if epoch >= 1 {
            if let Some(median) = ledger.median(epoch) {
                if val > median {
                    pruned = true;
                    return false;
                }
            }
        }
        true
    })?;
    for (epoch, val) in fresh {
        ledger.record(epoch, val);
    }
    let _ = history;
    Ok(TrialResult {
        model_config: model_cfg.clone(),
        train_config: train_cfg.clone(),
        validation_loss: last_loss,
        pruned,
        epochs_completed,
    })
}

fn sample_without_replacement<T: Clone>(pool: &[T], trials: usize, rng: &mut ChaCha12Rng) -> Vec<T> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(rng);
    order
        .into_iter()
        .take(trials)
        .map(|i| pool[i].clone())
        .collect()
}

/// Picks the non-pruned trial with minimal final validation loss; ties keep
/// the earlier trial.
fn best_trial(results: &[TrialResult]) -> Option<&TrialResult> {
    results
        .iter()
        .filter(|t| !t.pruned)
        .fold(None, |best: Option<&TrialResult>, t| match best {
            Some(b) if b.validation_loss <= t.validation_loss => Some(b),
            _ => Some(t),
        })
}

/// Phase 1: samples architectures uniformly without replacement and trains
/// each for a short fixed budget at a fixed learning rate, pruning against
/// the running median. Returns the winning [`ModelConfig`] and appends all
/// trial records to `report`.
pub fn search_model_params(
    space: &SearchSpace,
    pairs: &[IdPair],
    src_vocab: usize,
    tgt_vocab: usize,
    trials: usize,
    seed: u64,
    report: &mut SearchReport,
) -> Result<ModelConfig, HyperoptError> {
    let pool = space.architecture_candidates();
    if pool.is_empty() || trials == 0 {
        return Err(HyperoptError::EmptySpace);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let chosen = sample_without_replacement(&pool, trials, &mut rng);
    let tcfg = TrainConfig {
        learning_rate: PHASE1_LEARNING_RATE,
        schedule: Schedule::Constant,
        epochs: PHASE1_EPOCHS,
        seed,
        ..TrainConfig::default()
    };
    let mut ledger = PruneLedger::default();
    for cfg in &chosen {
        let result = run_trial(cfg, &tcfg, pairs, src_vocab, tgt_vocab, seed, &mut ledger)?;
        report.phase1.push(result);
    }
    let best = best_trial(&report.phase1).ok_or(HyperoptError::EmptySpace)?;
    Ok(best.model_config.clone())
}

/// Phase 2: searches the learning-rate regime (rate, weight decay,
/// schedule) for the fixed architecture from phase 1. Returns the winning
/// [`TrainConfig`] and appends all trial records to `report`.
pub fn search_learning_rate(
    best_cfg: &ModelConfig,
    space: &SearchSpace,
    pairs: &[IdPair],
    src_vocab: usize,
    tgt_vocab: usize,
    trials: usize,
    seed: u64,
    report: &mut SearchReport,
) -> Result<TrainConfig, HyperoptError> {
    let pool = space.regime_candidates(PHASE2_EPOCHS);
    if pool.is_empty() || trials == 0 {
        return Err(HyperoptError::EmptySpace);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut chosen = sample_without_replacement(&pool, trials, &mut rng);
    for tcfg in chosen.iter_mut() {
        tcfg.seed = seed;
    }
    let mut ledger = PruneLedger::default();
    for tcfg in &chosen {
        let result = run_trial(best_cfg, tcfg, pairs, src_vocab, tgt_vocab, seed, &mut ledger)?;
        report.phase2.push(result);
    }
    let best = best_trial(&report.phase2).ok_or(HyperoptError::EmptySpace)?;
    Ok(best.train_config.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn copy_pairs(n: usize, seed: u64, vocab: usize) -> Vec<IdPair> {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(2..6);
                let seq: Vec<usize> = (0..len).map(|_| rng.gen_range(4..vocab)).collect();
                (seq.clone(), seq)
            })
            .collect()
    }

    /// A small space so unit tests stay fast; dimensions chosen to satisfy
    /// the divisibility invariant.
    fn tiny_space() -> SearchSpace {
        SearchSpace {
            encoder_layers: vec![1],
            decoder_layers: vec![1, 2],
            embedding_size: vec![16, 32],
            feedforward_size: vec![32],
            attention_heads: vec![2, 4],
            learning_rate: vec![1e-4, 5e-4],
            weight_decay: vec![1e-4],
            schedule: vec![Schedule::Cosine, Schedule::Multiplicative],
        }
    }

    #[test]
    fn single_trial_returns_that_config() {
        let pairs = copy_pairs(30, 1, 12);
        let mut report = SearchReport::default();
        let cfg =
            search_model_params(&tiny_space(), &pairs, 12, 12, 1, 7, &mut report).unwrap();
        assert_eq!(report.phase1.len(), 1);
        assert_eq!(cfg, report.phase1[0].model_config);
        assert!(!report.phase1[0].pruned);
    }

    #[test]
    fn exhaustive_trials_cover_space_once() {
        let pairs = copy_pairs(30, 2, 12);
        let space = tiny_space();
        let pool = space.architecture_candidates();
        let mut report = SearchReport::default();
        search_model_params(&space, &pairs, 12, 12, pool.len() + 5, 3, &mut report).unwrap();
        assert_eq!(report.phase1.len(), pool.len());
        for cfg in &pool {
            let appearances = report
                .phase1
                .iter()
                .filter(|t| &t.model_config == cfg)
                .count();
            assert_eq!(appearances, 1, "config appeared {appearances} times");
        }
    }

    #[test]
    fn search_is_deterministic() {
        let pairs = copy_pairs(40, 3, 12);
        let space = tiny_space();
        let mut r1 = SearchReport::default();
        let c1 = search_model_params(&space, &pairs, 12, 12, 4, 11, &mut r1).unwrap();
        let mut r2 = SearchReport::default();
        let c2 = search_model_params(&space, &pairs, 12, 12, 4, 11, &mut r2).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(r1, r2);
    }

    #[test]
    fn empty_space_is_rejected() {
        let pairs = copy_pairs(10, 4, 12);
        let space = SearchSpace {
            encoder_layers: vec![],
            ..tiny_space()
        };
        let mut report = SearchReport::default();
        let err = search_model_params(&space, &pairs, 12, 12, 5, 0, &mut report).unwrap_err();
        assert!(matches!(err, HyperoptError::EmptySpace));
    }

    #[test]
    fn pruned_trials_exceeded_running_median() {
        let pairs = copy_pairs(60, 5, 12);
        let space = tiny_space();
        let mut report = SearchReport::default();
        search_model_params(&space, &pairs, 12, 12, 8, 13, &mut report).unwrap();
        for t in &report.phase1 {
            if t.pruned {
                assert!(t.epochs_completed >= 2);
                assert!(t.epochs_completed < PHASE1_EPOCHS || t.validation_loss > 0.0);
            } else {
                assert_eq!(t.epochs_completed, PHASE1_EPOCHS);
            }
        }
        // The winner is the non-pruned minimum.
        let best = best_trial(&report.phase1).unwrap();
        for t in report.phase1.iter().filter(|t| !t.pruned) {
            assert!(best.validation_loss <= t.validation_loss);
        }
    }

    #[test]
    fn phase2_returns_winning_regime() {
        let pairs = copy_pairs(40, 6, 12);
        let space = tiny_space();
        let best_cfg = ModelConfig {
            embedding_size: 16,
            feedforward_size: 32,
            attention_heads: 2,
            ..ModelConfig::default()
        };
        let mut report = SearchReport::default();
        let tcfg =
            search_learning_rate(&best_cfg, &space, &pairs, 12, 12, 4, 17, &mut report).unwrap();
        assert_eq!(report.phase2.len(), 4);
        assert_eq!(tcfg.epochs, PHASE2_EPOCHS);
        assert!(space.learning_rate.contains(&tcfg.learning_rate));
        assert!(space.weight_decay.contains(&tcfg.weight_decay));
        assert!(space.schedule.contains(&tcfg.schedule));
    }

    #[test]
    fn budget_is_respected() {
        let pairs = copy_pairs(50, 7, 12);
        let mut report = SearchReport::default();
        search_model_params(&tiny_space(), &pairs, 12, 12, 6, 19, &mut report).unwrap();
        let total: usize = report.phase1.iter().map(|t| t.epochs_completed).sum();
        assert!(total <= 6 * PHASE1_EPOCHS);
    }
}
