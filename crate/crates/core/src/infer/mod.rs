//! Incremental generation with a window-capped byte cache and a growing
//! word cache, plus a batch scheduler over many sessions.

mod assign;
mod cache;
mod sched;
mod session;
mod verify;

pub use assign::{boundary_divergence, incremental_assignment, DivergenceCase, DivergenceReport};
pub use cache::{ByteCache, CacheReport, GrowKv, RingKv, WordCache};
pub use sched::{schedule, Batch, BatchStats, Policy, StepPlan};
pub use session::{generate, FinishReason, GenConfig, GenSession, Sampling, Status, StepOutcome};
pub use verify::{check_equivalence, EquivalenceReport};
