//! Batched scheduling of many sessions: byte steps for sessions inside a
//! word, backbone steps for sessions at a boundary.

use std::fmt::Write as _;

use super::session::{decode_step, encode_step, word_step, GenConfig, GenSession, Status};
use crate::error::{Error, Result};
use crate::model::ParamSet;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Policy {
    /// Sessions at a boundary wait until every active session is at one.
    BoundarySync,
    /// Sessions at a boundary wait at most `n - 1` ticks; whichever
    /// boundaries coincide by then share one backbone call.
    FixedByteStride(usize),
}

impl Policy {
    pub fn validate(&self) -> Result<()> {
        match self {
            Policy::FixedByteStride(0) => Err(Error::Config("byte stride must be at least 1".into())),
            _ => Ok(()),
        }
    }
}

/// Session indices per action for one tick; each session is in at most one
/// list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct StepPlan {
    pub prefill: Vec<usize>,
    pub byte: Vec<usize>,
    pub word: Vec<usize>,
}

impl StepPlan {
    pub fn is_empty(&self) -> bool {
        self.prefill.is_empty() && self.byte.is_empty() && self.word.is_empty()
    }
}

/// Decides the next tick for `sessions` (indexed by position).
pub fn schedule<T: Scalar>(sessions: &[GenSession<T>], policy: Policy) -> StepPlan {
    let mut plan = StepPlan::default();
    let mut boundary = Vec::new();
    let mut all_at_boundary = true;
    for (i, s) in sessions.iter().enumerate() {
        match s.status() {
            Status::Prefilling => {
                plan.prefill.push(i);
                all_at_boundary = false;
            }
            Status::MidWord => {
                plan.byte.push(i);
                all_at_boundary = false;
            }
            Status::AtBoundary => boundary.push(i),
            Status::Finished => {}
        }
    }
    let fire = match policy {
        Policy::BoundarySync => all_at_boundary,
        Policy::FixedByteStride(n) => all_at_boundary || boundary.iter().any(|&i| sessions[i].wait_ticks + 1 >= n),
    };
    if fire {
        plan.word = boundary;
    }
    plan
}

/// Work counters. "Calls" are batched invocations; "positions" are rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub ticks: u64,
    pub prefills: u64,
    pub byte_steps: u64,
    pub encoder_calls: u64,
    pub decoder_calls: u64,
    pub backbone_calls: u64,
    /// Backbone rows processed, BOS and prompt words included.
    pub backbone_positions: u64,
}

/// A set of sessions advanced together, tick by tick.
pub struct Batch<'p, T> {
    params: &'p ParamSet<T>,
    policy: Policy,
    sessions: Vec<GenSession<T>>,
    prompts: Vec<Option<Vec<u8>>>,
    stats: BatchStats,
    trace: Vec<String>,
}

fn pick<'a, T>(sessions: &'a mut [GenSession<T>], ids: &[usize]) -> Vec<&'a mut GenSession<T>> {
    debug_assert!(ids.windows(2).all(|w| w[0] < w[1]));
    let mut want = ids.iter().peekable();
    sessions
        .iter_mut()
        .enumerate()
        .filter_map(|(i, s)| {
            if want.peek() == Some(&&i) {
                want.next();
                Some(s)
            } else {
                None
            }
        })
        .collect()
}

impl<'p, T: Scalar> Batch<'p, T> {
    pub fn new(params: &'p ParamSet<T>, policy: Policy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            params,
            policy,
            sessions: Vec::new(),
            prompts: Vec::new(),
            stats: BatchStats::default(),
            trace: Vec::new(),
        })
    }

    /// Queues a prompt; it is prefilled on the next tick. Returns its id.
    pub fn submit(&mut self, prompt: &[u8], gen: GenConfig) -> Result<usize> {
        let id = self.sessions.len();
        self.sessions.push(GenSession::new(id, self.params, gen)?);
        self.prompts.push(Some(prompt.to_vec()));
        Ok(id)
    }

    pub fn sessions(&self) -> &[GenSession<T>] {
        &self.sessions
    }

    pub fn into_sessions(self) -> Vec<GenSession<T>> {
        self.sessions
    }

    pub fn stats(&self) -> BatchStats {
        self.stats
    }

    /// One line per tick: `tick<TAB>id:action ...`, where the action is
    /// `P` (prefill), `B:<hex>` (byte step and the emitted byte), `W` (word
    /// step), `E` (failed this tick) or `-` (idle or finished).
    pub fn trace(&self) -> &[String] {
        &self.trace
    }

    pub fn is_done(&self) -> bool {
        self.sessions.iter().all(GenSession::is_finished)
    }

    /// Runs one tick; returns the plan it executed.
    pub fn tick(&mut self) -> Result<StepPlan> {
        let plan = schedule(&self.sessions, self.policy);
        if plan.is_empty() {
            return Ok(plan);
        }
        self.stats.ticks += 1;
        let params = self.params;
        let mut actions = vec!["-".to_string(); self.sessions.len()];
        let waiting: Vec<usize> = (0..self.sessions.len())
            .filter(|&i| self.sessions[i].status() == Status::AtBoundary && !plan.word.contains(&i))
            .collect();

        for &i in &plan.prefill {
            let prompt = self.prompts[i].take().unwrap_or_default();
            let s = &mut self.sessions[i];
            match s.prefill(params, &prompt) {
                Ok(()) => {
                    self.stats.prefills += 1;
                    self.stats.backbone_positions += s.backbone_positions() as u64;
                    actions[i] = "P".into();
                }
                Err(e) => {
                    log::warn!("session {i}: prefill failed: {e}");
                    actions[i] = "E".into();
                }
            }
        }

        let mut encode = Vec::new();
        for &i in &plan.byte {
            let s = &mut self.sessions[i];
            match s.sample_and_append() {
                Ok(b) => {
                    self.stats.byte_steps += 1;
                    actions[i] = format!("B:{b:02x}");
                    if !s.is_finished() {
                        encode.push(i);
                    }
                }
                Err(e) => {
                    log::warn!("session {i}: {e}");
                    s.fail(&e);
                    actions[i] = "E".into();
                }
            }
        }
        if !encode.is_empty() {
            encode_step(params, &mut pick(&mut self.sessions, &encode))?;
            self.stats.encoder_calls += 1;
        }
        let mut decode: Vec<usize> = encode
            .into_iter()
            .filter(|&i| self.sessions[i].status() == Status::MidWord)
            .collect();

        let mut words = Vec::new();
        for &i in &plan.word {
            let s = &mut self.sessions[i];
            match s.check_word_capacity() {
                Ok(()) => {
                    self.stats.backbone_positions += s.pending_words() as u64;
                    words.push(i);
                    actions[i] = "W".into();
                }
                Err(e) => {
                    log::warn!("session {i}: {e}");
                    s.fail(&e);
                    actions[i] = "E".into();
                }
            }
        }
        if !words.is_empty() {
            word_step(params, &mut pick(&mut self.sessions, &words))?;
            self.stats.backbone_calls += 1;
        }
        decode.extend(words);
        decode.sort_unstable();
        if !decode.is_empty() {
            decode_step(params, &mut pick(&mut self.sessions, &decode))?;
            self.stats.decoder_calls += 1;
        }

        for s in &mut self.sessions {
            if s.status() == Status::AtBoundary && waiting.contains(&s.id()) {
                s.wait_ticks += 1;
            }
        }
        let mut line = format!("{}\t", self.stats.ticks);
        for (i, a) in actions.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            let _ = write!(line, "{i}:{a}");
        }
        self.trace.push(line);
        Ok(plan)
    }

    /// Ticks until every session has finished.
    pub fn run(&mut self) -> Result<()> {
        while !self.tick()?.is_empty() {}
        Ok(())
    }
}
