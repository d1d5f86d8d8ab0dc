//! Slotted CSMA/CA contention with priority-scaled windows and the fairness
//! counter gate.
//!
//! Time advances in backoff slots. While the channel is idle every counting
//! contender decrements its backoff once per slot. A contender that reaches
//! zero alone seizes the channel for `upload_slots`; the others freeze and
//! resume afterwards. Contenders that reach zero in the same slot collide:
//! the collision occupies the channel for `upload_slots` as well, and each
//! collider redraws a fresh backoff from its own window (no window doubling)
//! or gives up after `retry_cap` redraws. The round closes as soon as
//! `k_per_round` uploads have succeeded.

use alloc::vec::Vec;

use rand::distr::{Distribution, Open01};
use rand::Rng;

use crate::error::{invalid, Result};
use crate::fl::Priority;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContentionConfig {
    /// Base contention window `N`, in slots.
    pub cw_base: u64,
    /// Slot duration in microseconds. Only used to report airtime.
    pub slot_us: f64,
    /// Channel occupancy of one model upload, in slots.
    pub upload_slots: u64,
    /// Maximum number of collision redraws before a contender gives up.
    pub retry_cap: u32,
    /// Successful uploads after which the server stops listening.
    pub k_per_round: usize,
}

impl Default for ContentionConfig {
    fn default() -> Self {
        ContentionConfig { cw_base: 2048, slot_us: 20.0, upload_slots: 50, retry_cap: 16, k_per_round: 2 }
    }
}

impl ContentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cw_base == 0 {
            return Err(invalid("cw_base must be at least 1"));
        }
        if self.upload_slots == 0 {
            return Err(invalid("upload_slots must be at least 1"));
        }
        if self.k_per_round == 0 {
            return Err(invalid("k_per_round must be at least 1"));
        }
        if !(self.slot_us > 0.0 && self.slot_us.is_finite()) {
            return Err(invalid("slot_us must be positive"));
        }
        Ok(())
    }
}

/// One backoff draw: `W = N / priority`, `T = max(1, ceil(R * W))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackoffDraw {
    pub r: f64,
    pub window: f64,
    pub slots: u64,
}

fn quantize(r: f64, window: f64) -> u64 {
    (libm::ceil(r * window) as u64).max(1)
}

/// Draws `R` uniformly from the open interval (0, 1) and derives the
/// window and the backoff in whole slots.
pub fn backoff_draw<R: Rng + ?Sized>(priority: Priority, cw_base: u64, rng: &mut R) -> BackoffDraw {
    let window = cw_base as f64 / priority.value();
    let r: f64 = Open01.sample(rng);
    BackoffDraw { r, window, slots: quantize(r, window) }
}

/// Per-user selection share: `merged / total`, where `total` is the number of
/// models the server has merged from anyone so far.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FairnessCounter {
    pub merged: u64,
    pub total: u64,
    pub threshold: f64,
}

impl FairnessCounter {
    pub fn new(threshold: f64) -> Self {
        FairnessCounter { merged: 0, total: 0, threshold }
    }

    pub fn value(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.merged as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Eligible,
    Withheld,
}

/// A user sits out while its share of merges is above the threshold.
pub fn gate(counter: &FairnessCounter) -> Gate {
    if counter.value() > counter.threshold {
        Gate::Withheld
    } else {
        Gate::Eligible
    }
}

/// Every user's total grows by the number of merged models; winners also
/// bump their own count. `counters` is indexed by user id.
pub fn update_counters(counters: &mut [FairnessCounter], winners: &[usize]) -> Result<()> {
    if let Some(&bad) = winners.iter().find(|&&w| w >= counters.len()) {
        return Err(invalid(alloc::format!("winner {bad} has no counter")));
    }
    let merged = winners.len() as u64;
    for c in counters.iter_mut() {
        c.total += merged;
    }
    for &w in winners {
        counters[w].merged += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContenderState {
    Counting,
    Transmitting,
    Done,
    Aborted,
    Withheld,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contender {
    pub user_id: usize,
    pub window: f64,
    pub backoff_remaining: u64,
    pub retries: u32,
    pub state: ContenderState,
    /// The draw the contender entered the round with.
    pub initial: Option<BackoffDraw>,
}

impl Contender {
    pub fn new(user_id: usize, draw: BackoffDraw) -> Self {
        Contender {
            user_id,
            window: draw.window,
            backoff_remaining: draw.slots.max(1),
            retries: 0,
            state: ContenderState::Counting,
            initial: Some(draw),
        }
    }

    /// A contender with a fixed backoff, for scripted scenarios.
    pub fn with_backoff(user_id: usize, window: f64, slots: u64) -> Self {
        let r = slots as f64 / window;
        Contender::new(user_id, BackoffDraw { r, window, slots })
    }

    pub fn withheld(user_id: usize) -> Self {
        Contender {
            user_id,
            window: 0.0,
            backoff_remaining: 0,
            retries: 0,
            state: ContenderState::Withheld,
            initial: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrawRecord {
    pub user_id: usize,
    pub r: f64,
    pub window: f64,
    pub backoff_slots: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoundOutcome {
    /// Successful uploaders in arrival order.
    pub winners: Vec<usize>,
    pub collisions: u32,
    pub slots_elapsed: u64,
    pub draws: Vec<DrawRecord>,
}

impl RoundOutcome {
    pub fn draw_for(&self, user_id: usize) -> Option<&DrawRecord> {
        self.draws.iter().find(|d| d.user_id == user_id)
    }
}

/// Channel state during a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Idle,
    /// `contender` (an index into the contender list) is uploading.
    Upload { contender: usize, remaining: u64 },
    Collision { remaining: u64 },
}

/// A contention round that can be advanced one slot at a time.
#[derive(Debug, Clone)]
pub struct ContentionRound {
    config: ContentionConfig,
    contenders: Vec<Contender>,
    channel: Channel,
    slot: u64,
    winners: Vec<usize>,
    collisions: u32,
    finished: bool,
}

impl ContentionRound {
    pub fn new(contenders: Vec<Contender>, config: ContentionConfig) -> Result<Self> {
        config.validate()?;
        let mut ids: Vec<usize> = contenders.iter().map(|c| c.user_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate contender user id"));
        }
        if contenders.iter().any(|c| c.state == ContenderState::Counting && c.backoff_remaining == 0) {
            return Err(invalid("counting contender must start with a backoff of at least one slot"));
        }
        let mut round =
            ContentionRound { config, contenders, channel: Channel::Idle, slot: 0, winners: Vec::new(), collisions: 0, finished: false };
        round.check_finished();
        Ok(round)
    }

    pub fn contenders(&self) -> &[Contender] {
        &self.contenders
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    /// Slots elapsed so far.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn winners(&self) -> &[usize] {
        &self.winners
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn check_finished(&mut self) {
        if self.channel == Channel::Idle && !self.contenders.iter().any(|c| c.state == ContenderState::Counting) {
            self.finished = true;
        }
    }

    /// Advances one slot. Returns `false` once the round is over.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> bool {
        if self.finished {
            return false;
        }
        self.slot += 1;
        match self.channel {
            Channel::Idle => {
                let mut expired = Vec::new();
                for (i, c) in self.contenders.iter_mut().enumerate() {
                    if c.state == ContenderState::Counting {
                        c.backoff_remaining -= 1;
                        if c.backoff_remaining == 0 {
                            expired.push(i);
                        }
                    }
                }
                match expired.as_slice() {
                    [] => {}
                    &[only] => {
                        self.contenders[only].state = ContenderState::Transmitting;
                        self.channel = Channel::Upload { contender: only, remaining: self.config.upload_slots };
                    }
                    colliders => {
                        self.collisions += 1;
                        for &i in colliders {
                            let c = &mut self.contenders[i];
                            if c.retries >= self.config.retry_cap {
                                c.state = ContenderState::Aborted;
                            } else {
                                c.retries += 1;
                                let r: f64 = Open01.sample(rng);
                                c.backoff_remaining = quantize(r, c.window);
                            }
                        }
                        self.channel = Channel::Collision { remaining: self.config.upload_slots };
                    }
                }
            }
            Channel::Upload { contender, remaining } => {
                if remaining > 1 {
                    self.channel = Channel::Upload { contender, remaining: remaining - 1 };
                } else {
                    self.channel = Channel::Idle;
                    let c = &mut self.contenders[contender];
                    c.state = ContenderState::Done;
                    self.winners.push(c.user_id);
                    if self.winners.len() >= self.config.k_per_round {
                        // The server stops listening once it has enough models.
                        for c in &mut self.contenders {
                            if c.state == ContenderState::Counting {
                                c.state = ContenderState::Aborted;
                            }
                        }
                    }
                }
            }
            Channel::Collision { remaining } => {
                self.channel =
                    if remaining > 1 { Channel::Collision { remaining: remaining - 1 } } else { Channel::Idle };
            }
        }
        self.check_finished();
        true
    }

    pub fn into_outcome(self) -> RoundOutcome {
        let draws = self
            .contenders
            .iter()
            .filter_map(|c| {
                c.initial.map(|d| DrawRecord { user_id: c.user_id, r: d.r, window: d.window, backoff_slots: d.slots })
            })
            .collect();
        RoundOutcome { winners: self.winners, collisions: self.collisions, slots_elapsed: self.slot, draws }
    }
}

/// Runs a full contention round. Collision redraws use `rng`.
pub fn contend<R: Rng + ?Sized>(contenders: Vec<Contender>, config: &ContentionConfig, rng: &mut R) -> Result<RoundOutcome> {
    let mut round = ContentionRound::new(contenders, *config)?;
    while round.step(rng) {}
    Ok(round.into_outcome())
}
