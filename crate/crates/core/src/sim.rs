//! The training loop: broadcast, local training, selection, aggregation and
//! counter update, under four selection policies.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::IndexedRandom;

use crate::data::{partition, Dataset, PartitionScheme};
use crate::error::{invalid, Error, Result};
use crate::fl::{fed_avg, local_train, priority, LocalUpdate, Priority, TrainSettings};
use crate::mac::{backoff_draw, contend, gate, update_counters, ContentionConfig, Contender, FairnessCounter, Gate, RoundOutcome};
use crate::nn::{cross_entropy_sum, forward_inputs, init_model, Matrix, Model};
use crate::rng::{derive_seed, stream, Purpose, NO_USER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Policy {
    CentralizedRandom,
    CentralizedPriority,
    DecentralizedRandom,
    DecentralizedPriority,
}

impl Policy {
    pub const ALL: [Policy; 4] =
        [Policy::CentralizedRandom, Policy::CentralizedPriority, Policy::DecentralizedRandom, Policy::DecentralizedPriority];

    pub fn name(self) -> &'static str {
        match self {
            Policy::CentralizedRandom => "centralized_random",
            Policy::CentralizedPriority => "centralized_priority",
            Policy::DecentralizedRandom => "decentralized_random",
            Policy::DecentralizedPriority => "decentralized_priority",
        }
    }

    pub fn uses_priority(self) -> bool {
        matches!(self, Policy::CentralizedPriority | Policy::DecentralizedPriority)
    }

    pub fn is_decentralized(self) -> bool {
        matches!(self, Policy::DecentralizedRandom | Policy::DecentralizedPriority)
    }
}

/// A selection policy plus whether the fairness counter gate is active.
///
/// Written as `<policy>` (counter on for priority policies, off for random
/// ones), `<policy>+counter` or `<policy>+nocounter`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Strategy {
    pub policy: Policy,
    pub counter: bool,
}

impl Strategy {
    pub fn new(policy: Policy) -> Self {
        Strategy { policy, counter: policy.uses_priority() }
    }

    pub fn with_counter(policy: Policy, counter: bool) -> Self {
        Strategy { policy, counter }
    }

    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let suffix = if self.counter { "+counter" } else { "+nocounter" };
        write!(f, "{}{}", self.policy.name(), suffix)
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, counter) = match s.split_once('+') {
            None => (s, None),
            Some((name, "counter")) => (name, Some(true)),
            Some((name, "nocounter")) => (name, Some(false)),
            Some(_) => return Err(invalid(format!("unknown strategy suffix in {s:?}"))),
        };
        let policy = Policy::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| invalid(format!("unknown strategy {name:?}")))?;
        Ok(match counter {
            Some(c) => Strategy::with_counter(policy, c),
            None => Strategy::new(policy),
        })
    }
}

/// Channel parameters; the number of uploads per round comes from
/// [`ExperimentConfig::k_per_round`].
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct MacSettings {
    pub cw_base: u64,
    pub slot_us: f64,
    pub upload_slots: u64,
    pub retry_cap: u32,
}

impl Default for MacSettings {
    fn default() -> Self {
        let c = ContentionConfig::default();
        MacSettings { cw_base: c.cw_base, slot_us: c.slot_us, upload_slots: c.upload_slots, retry_cap: c.retry_cap }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct ExperimentConfig {
    pub users: usize,
    pub k_per_round: usize,
    pub rounds: u64,
    /// Hidden layer widths; input and output sizes come from the dataset.
    pub hidden: Vec<usize>,
    pub eta: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub threshold: f64,
    pub seed: u64,
    pub eval_every: u64,
    pub partition: PartitionScheme,
    pub mac: MacSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainSettings::default();
        ExperimentConfig {
            users: 10,
            k_per_round: 2,
            rounds: 300,
            hidden: alloc::vec![200],
            eta: train.eta,
            batch_size: train.batch_size,
            epochs: train.epochs,
            threshold: 0.16,
            seed: 0,
            eval_every: 1,
            partition: PartitionScheme::Shards { shard_size: 300, shards_per_user: 2 },
            mac: MacSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings { eta: self.eta, batch_size: self.batch_size, epochs: self.epochs }
    }

    pub fn contention(&self) -> ContentionConfig {
        ContentionConfig {
            cw_base: self.mac.cw_base,
            slot_us: self.mac.slot_us,
            upload_slots: self.mac.upload_slots,
            retry_cap: self.mac.retry_cap,
            k_per_round: self.k_per_round,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(invalid("users must be at least 1"));
        }
        if self.k_per_round == 0 || self.k_per_round > self.users {
            return Err(invalid("k_per_round must lie in 1..=users"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be at least 1"));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(invalid("threshold must lie in (0, 1]"));
        }
        if self.eval_every == 0 {
            return Err(invalid("eval_every must be at least 1"));
        }
        self.contention().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

const EVAL_CHUNK: usize = 256;

/// Argmax accuracy (ties go to the lower class) and mean cross-entropy.
pub fn evaluate(model: &Model, dataset: &Dataset) -> Result<Evaluation> {
    if dataset.dim() != model.input_dim() {
        return Err(Error::DimensionMismatch { expected: model.input_dim(), actual: dataset.dim() });
    }
    if dataset.is_empty() {
        return Err(invalid("evaluation set is empty"));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let mut inputs = Vec::with_capacity((end - start) * dataset.dim());
        for i in start..end {
            inputs.extend_from_slice(dataset.sample(i));
        }
        let inputs = Matrix::from_vec(end - start, dataset.dim(), inputs)?;
        let (logits, _) = forward_inputs(model, &inputs)?;
        let labels = &dataset.labels()[start..end];
        loss += cross_entropy_sum(&logits, labels)?;
        for (r, &label) in labels.iter().enumerate() {
            if argmax(logits.row(r)) == label {
                correct += 1;
            }
        }
        start = end;
    }
    let n = dataset.len() as f64;
    Ok(Evaluation { accuracy: correct as f64 / n, loss: loss / n })
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserState {
    pub id: usize,
    pub partition: Vec<usize>,
    pub counter: FairnessCounter,
}

/// What happened in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: u64,
    pub outcome: RoundOutcome,
    /// Priority of every user's fresh model; `None` when the policy does not
    /// compute priorities.
    pub priorities: Vec<Option<f64>>,
    /// Users that passed the counter gate (all users when the gate is off).
    pub eligible: Vec<usize>,
}

impl RoundReport {
    pub fn merged(&self) -> usize {
        self.outcome.winners.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u64,
    pub strategy: String,
    pub accuracy: f64,
    pub loss: f64,
    pub merged_count: usize,
    pub collisions: u32,
    /// Cumulative merges per user after this round.
    pub selections: Vec<u64>,
}

/// One row of the winners audit log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinnerRow {
    pub round: u64,
    pub user_id: usize,
    /// 1-based arrival order within the round.
    pub rank: usize,
    /// Initial backoff of the winner; absent for centralized selection.
    pub backoff_slots: Option<u64>,
    pub collisions: u32,
}

impl WinnerRow {
    pub fn from_outcome(round: u64, outcome: &RoundOutcome) -> Vec<WinnerRow> {
        outcome
            .winners
            .iter()
            .enumerate()
            .map(|(i, &user_id)| WinnerRow {
                round,
                user_id,
                rank: i + 1,
                backoff_slots: outcome.draw_for(user_id).map(|d| d.backoff_slots),
                collisions: outcome.collisions,
            })
            .collect()
    }
}

/// A single replicate of one strategy, advanced round by round.
#[derive(Debug, Clone)]
pub struct Experiment<'d> {
    config: ExperimentConfig,
    strategy: Strategy,
    train: &'d Dataset,
    test: &'d Dataset,
    global: Model,
    users: Vec<UserState>,
    round: u64,
}

impl<'d> Experiment<'d> {
    pub fn new(config: ExperimentConfig, strategy: Strategy, train: &'d Dataset, test: &'d Dataset) -> Result<Self> {
        config.validate()?;
        if train.dim() != test.dim() {
            return Err(Error::DimensionMismatch { expected: train.dim(), actual: test.dim() });
        }
        let plan = partition(train, config.users, config.partition, config.seed)?;
        if let Some(u) = plan.assignments.iter().position(Vec::is_empty) {
            return Err(invalid(format!("partition leaves user {u} without samples")));
        }
        let mut dims = alloc::vec![train.dim()];
        dims.extend_from_slice(&config.hidden);
        dims.push(train.num_classes().max(test.num_classes()));
        let global = init_model(&dims, derive_seed(config.seed, NO_USER, 0, Purpose::ModelInit))?;
        let users = plan
            .assignments
            .into_iter()
            .enumerate()
            .map(|(id, partition)| UserState { id, partition, counter: FairnessCounter::new(config.threshold) })
            .collect();
        Ok(Experiment { config, strategy, train, test, global, users, round: 0 })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn global(&self) -> &Model {
        &self.global
    }

    pub fn users(&self) -> &[UserState] {
        &self.users
    }

    /// Rounds completed so far.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn selections(&self) -> Vec<u64> {
        self.users.iter().map(|u| u.counter.merged).collect()
    }

    pub fn evaluate(&self) -> Result<Evaluation> {
        evaluate(&self.global, self.test)
    }

    fn train_users(&self, round: u64) -> Result<Vec<Model>> {
        let settings = self.config.train_settings();
        let train_one = |u: &UserState| {
            let mut rng = stream(self.config.seed, u.id as u64, round, Purpose::LocalTrain);
            local_train(&self.global, &u.partition, self.train, &settings, &mut rng).map(|t| t.model)
        };
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            self.users.par_iter().map(train_one).collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            self.users.iter().map(train_one).collect()
        }
    }

    /// Runs broadcast, local training, selection, aggregation and the
    /// counter update for the next round.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round + 1;
        let seed = self.config.seed;
        let k = self.config.k_per_round;
        let policy = self.strategy.policy;

        let locals = self.train_users(round)?;

        let priorities: Vec<Option<f64>> = if policy.uses_priority() {
            locals.iter().map(|m| priority(m, &self.global).map(|p| Some(p.value()))).collect::<Result<_>>()?
        } else {
            alloc::vec![None; self.users.len()]
        };

        let eligible: Vec<usize> = self
            .users
            .iter()
            .filter(|u| !self.strategy.counter || gate(&u.counter) == Gate::Eligible)
            .map(|u| u.id)
            .collect();

        let outcome = match policy {
            Policy::CentralizedRandom => {
                let mut rng = stream(seed, NO_USER, round, Purpose::Selection);
                let winners = eligible.choose_multiple(&mut rng, k).copied().collect();
                RoundOutcome { winners, ..RoundOutcome::default() }
            }
            Policy::CentralizedPriority => {
                let mut ranked = eligible.clone();
                // highest priority first, lower id on ties
                ranked.sort_by(|&a, &b| {
                    let (pa, pb) = (priorities[a].unwrap_or(1.0), priorities[b].unwrap_or(1.0));
                    pb.total_cmp(&pa).then(a.cmp(&b))
                });
                ranked.truncate(k);
                RoundOutcome { winners: ranked, ..RoundOutcome::default() }
            }
            Policy::DecentralizedRandom | Policy::DecentralizedPriority => {
                let contention = self.config.contention();
                let contenders = self
                    .users
                    .iter()
                    .map(|u| {
                        if !eligible.contains(&u.id) {
                            return Ok(Contender::withheld(u.id));
                        }
                        let p = match priorities[u.id] {
                            Some(v) => Priority::new(v)?,
                            None => Priority::ONE,
                        };
                        let mut rng = stream(seed, u.id as u64, round, Purpose::Backoff);
                        Ok(Contender::new(u.id, backoff_draw(p, contention.cw_base, &mut rng)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                contend(contenders, &contention, &mut stream(seed, NO_USER, round, Purpose::Contention))?
            }
        };

        if !outcome.winners.is_empty() {
            let updates: Vec<LocalUpdate> = outcome
                .winners
                .iter()
                .map(|&w| LocalUpdate {
                    user_id: w,
                    model: locals[w].clone(),
                    dataset_size: self.users[w].partition.len(),
                })
                .collect();
            self.global = fed_avg(&updates)?;
        }

        let mut counters: Vec<FairnessCounter> = self.users.iter().map(|u| u.counter).collect();
        update_counters(&mut counters, &outcome.winners)?;
        for (u, c) in self.users.iter_mut().zip(counters) {
            u.counter = c;
        }

        self.round = round;
        Ok(RoundReport { round, outcome, priorities, eligible })
    }
}

/// Everything a finished run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub strategy: Strategy,
    pub metrics: Vec<MetricsRow>,
    pub winners: Vec<WinnerRow>,
    pub rounds: Vec<RoundReport>,
    pub final_model: Model,
    pub counters: Vec<FairnessCounter>,
}

impl ExperimentReport {
    pub fn final_accuracy(&self) -> f64 {
        self.metrics.last().map_or(0.0, |m| m.accuracy)
    }

    pub fn best_accuracy(&self) -> f64 {
        self.metrics.iter().map(|m| m.accuracy).fold(0.0, f64::max)
    }

    pub fn selection_fractions(&self) -> Vec<f64> {
        self.counters.iter().map(FairnessCounter::value).collect()
    }
}

/// Progress notifications from [`run_experiment_with`].
#[derive(Debug)]
pub enum Progress<'a> {
    Round(&'a RoundReport, &'a [WinnerRow]),
    Evaluated(&'a MetricsRow),
}

pub fn run_experiment(config: &ExperimentConfig, strategy: Strategy, train: &Dataset, test: &Dataset) -> Result<ExperimentReport> {
    run_experiment_with(config, strategy, train, test, |_| {})
}

/// Runs `config.rounds` rounds, evaluating the global model on the full test
/// set before the first round, every `eval_every` rounds and after the last.
pub fn run_experiment_with<F>(
    config: &ExperimentConfig,
    strategy: Strategy,
    train: &Dataset,
    test: &Dataset,
    mut observer: F,
) -> Result<ExperimentReport>
where
    F: FnMut(Progress<'_>),
{
    let mut exp = Experiment::new(config.clone(), strategy, train, test)?;
    let id = strategy.id();
    let row = |exp: &Experiment<'_>, eval: Evaluation, merged_count, collisions| MetricsRow {
        round: exp.round(),
        strategy: id.clone(),
        accuracy: eval.accuracy,
        loss: eval.loss,
        merged_count,
        collisions,
        selections: exp.selections(),
    };

    let mut metrics = Vec::new();
    let mut winners = Vec::new();
    let mut rounds = Vec::new();

    let first = row(&exp, exp.evaluate()?, 0, 0);
    observer(Progress::Evaluated(&first));
    metrics.push(first);

    for t in 1..=config.rounds {
        let report = exp.run_round()?;
        let rows = WinnerRow::from_outcome(t, &report.outcome);
        observer(Progress::Round(&report, &rows));
        winners.extend(rows);
        if t % config.eval_every == 0 || t == config.rounds {
            let m = row(&exp, exp.evaluate()?, report.merged(), report.outcome.collisions);
            observer(Progress::Evaluated(&m));
            metrics.push(m);
        }
        rounds.push(report);
    }

    Ok(ExperimentReport {
        strategy,
        metrics,
        winners,
        rounds,
        counters: exp.users.iter().map(|u| u.counter).collect(),
        final_model: exp.global,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs_split, BlobSpec};
    use crate::nn::Layer;
    use alloc::vec;

    #[test]
    fn strategy_ids_round_trip() {
        for p in Policy::ALL {
            for counter in [false, true] {
                let s = Strategy::with_counter(p, counter);
                assert_eq!(s.id().parse::<Strategy>().unwrap(), s);
            }
        }
        assert_eq!("centralized_random".parse::<Strategy>().unwrap(), Strategy::with_counter(Policy::CentralizedRandom, false));
        assert!("decentralized_priority".parse::<Strategy>().unwrap().counter);
        assert!("decentralized".parse::<Strategy>().is_err());
        assert!("centralized_random+maybe".parse::<Strategy>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(ExperimentConfig::default().validate().is_ok());
        let bad = [
            ExperimentConfig { k_per_round: 11, ..ExperimentConfig::default() },
            ExperimentConfig { users: 0, ..ExperimentConfig::default() },
            ExperimentConfig { threshold: 0.0, ..ExperimentConfig::default() },
            ExperimentConfig { eval_every: 0, ..ExperimentConfig::default() },
            ExperimentConfig { hidden: vec![0], ..ExperimentConfig::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    fn tiny_data() -> (Dataset, Dataset) {
        let spec = BlobSpec { classes: 3, train_per_class: 20, test_per_class: 10, dim: 4, spread: 0.1, seed: 2 };
        synth_blobs_split(&spec).unwrap()
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            users: 3,
            k_per_round: 2,
            rounds: 4,
            hidden: vec![5],
            partition: PartitionScheme::Iid,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_rounds_evaluates_initial_model_only() {
        let (train, test) = tiny_data();
        let config = ExperimentConfig { rounds: 0, ..tiny_config() };
        let report = run_experiment(&config, Strategy::new(Policy::CentralizedRandom), &train, &test).unwrap();
        assert_eq!(report.metrics.len(), 1);
        assert_eq!(report.metrics[0].round, 0);
        assert!(report.winners.is_empty());
    }

    #[test]
    fn eval_cadence() {
        let (train, test) = tiny_data();
        let config = ExperimentConfig { rounds: 5, eval_every: 2, ..tiny_config() };
        let report = run_experiment(&config, Strategy::new(Policy::DecentralizedRandom), &train, &test).unwrap();
        let rounds: Vec<u64> = report.metrics.iter().map(|m| m.round).collect();
        assert_eq!(rounds, vec![0, 2, 4, 5]);
        assert_eq!(report.rounds.len(), 5);
    }

    #[test]
    fn evaluate_single_correct_sample() {
        // logit for class 1 is larger whenever the input is positive
        let m = Model::from_layers(vec![Layer::new(1, 2, vec![0.0, 1.0], vec![0.0, 0.0]).unwrap()]).unwrap();
        let ds = Dataset::new(vec![0.5], 1, vec![1], 2).unwrap();
        assert_eq!(evaluate(&m, &ds).unwrap().accuracy, 1.0);
        let wrong = Dataset::new(vec![0.5], 1, vec![0], 2).unwrap();
        assert_eq!(evaluate(&m, &wrong).unwrap().accuracy, 0.0);
    }

    #[test]
    fn evaluate_rejects_mismatched_dim() {
        let m = Model::zeros(&[3, 2]).unwrap();
        let ds = Dataset::new(vec![0.5, 0.5], 2, vec![1], 2).unwrap();
        assert!(evaluate(&m, &ds).is_err());
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[0.0, 1.0, 1.0]), 1);
        assert_eq!(argmax(&[2.0, 2.0]), 0);
    }
}
