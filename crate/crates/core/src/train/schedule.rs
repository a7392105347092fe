use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{parse_kv, ParamGroup};

/// Warmup-stable-decay: linear 0 → `stable_lr` over `warmup_steps`, flat
/// for `stable_steps`, then linear to 0 over `decay_steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub warmup_steps: u64,
    pub stable_lr: f64,
    pub stable_steps: u64,
    pub decay_steps: u64,
}

impl LrSchedule {
    /// 500 warmup steps to 3e-4, then `stable_steps`, then 1,000 decay steps.
    pub fn pretrain(stable_steps: u64) -> Self {
        Self {
            warmup_steps: 500,
            stable_lr: 3e-4,
            stable_steps,
            decay_steps: 1000,
        }
    }

    /// Desk-scale recipe for the micro config: 5% warmup to 3e-3, 25% decay.
    pub fn toy(total_steps: u64) -> Self {
        let warmup_steps = total_steps / 20;
        let decay_steps = total_steps / 4;
        Self {
            warmup_steps,
            stable_lr: 3e-3,
            stable_steps: total_steps - warmup_steps - decay_steps,
            decay_steps,
        }
    }

    pub fn total_steps(&self) -> u64 {
        self.warmup_steps + self.stable_steps + self.decay_steps
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.warmup_steps;
        let s_end = w + self.stable_steps;
        let end = s_end + self.decay_steps;
        if step < w {
            self.stable_lr * step as f64 / w as f64
        } else if step < s_end {
            self.stable_lr
        } else if step < end {
            self.stable_lr * (end - step) as f64 / self.decay_steps as f64
        } else {
            0.0
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupSetting {
    /// Frozen while `step ≤ frozen_until_step` (steps are 1-based).
    pub frozen_until_step: u64,
    pub lr_multiplier: f64,
}

impl Default for GroupSetting {
    fn default() -> Self {
        Self {
            frozen_until_step: 0,
            lr_multiplier: 1.0,
        }
    }
}

/// Per-group freezing and learning-rate multipliers, plus an optional list
/// of tensor-name suffixes outside of which everything stays frozen.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct GroupPolicy {
    pub groups: BTreeMap<ParamGroup, GroupSetting>,
    pub trainable_suffixes: Vec<String>,
}

impl GroupPolicy {
    pub fn setting(&self, g: ParamGroup) -> GroupSetting {
        self.groups.get(&g).copied().unwrap_or_default()
    }

    pub fn set(&mut self, g: ParamGroup, s: GroupSetting) -> &mut Self {
        self.groups.insert(g, s);
        self
    }

    /// Backbone frozen for `frozen_steps`, then trained at 0.1× the base rate.
    pub fn hatification(frozen_steps: u64) -> Self {
        let mut p = Self::default();
        p.set(
            ParamGroup::Backbone,
            GroupSetting {
                frozen_until_step: frozen_steps,
                lr_multiplier: 0.1,
            },
        );
        p
    }

    /// Only query and key projections train.
    pub fn query_key_only() -> Self {
        Self {
            groups: BTreeMap::new(),
            trainable_suffixes: vec!["attn.q".into(), "attn.k".into()],
        }
    }

    /// Effective learning rate of tensor `name` at `step`; 0 when frozen.
    pub fn lr_for(&self, name: &str, step: u64, base: f64) -> f64 {
        if !self.trainable(name, step) {
            return 0.0;
        }
        base * self.setting(ParamGroup::of(name)).lr_multiplier
    }

    pub fn trainable(&self, name: &str, step: u64) -> bool {
        if !self.trainable_suffixes.is_empty() && !self.trainable_suffixes.iter().any(|s| name.ends_with(s.as_str())) {
            return false;
        }
        step > self.setting(ParamGroup::of(name)).frozen_until_step
    }

    pub fn validate(&self) -> Result<()> {
        for (g, s) in &self.groups {
            if !(s.lr_multiplier > 0.0) {
                return Err(Error::Config(format!("{}.lr_multiplier must be positive", g.name())));
            }
        }
        Ok(())
    }

    /// Canonical key-sorted text (every group listed).
    pub fn to_canonical_text(&self) -> String {
        let mut m = BTreeMap::new();
        for g in ParamGroup::ALL {
            let s = self.setting(g);
            m.insert(format!("{}.frozen_until_step", g.name()), s.frozen_until_step.to_string());
            m.insert(format!("{}.lr_multiplier", g.name()), s.lr_multiplier.to_string());
        }
        m.insert("trainable_suffixes".into(), self.trainable_suffixes.join(","));
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses `<group>.frozen_until_step`, `<group>.lr_multiplier` and
    /// `trainable_suffixes` (comma separated); omitted keys keep defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut p = Self::default();
        for (k, v) in parse_kv(text)? {
            if k == "trainable_suffixes" {
                p.trainable_suffixes = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
                continue;
            }
            let (g, field) = k
                .split_once('.')
                .ok_or_else(|| Error::Config(format!("unknown policy key `{k}`")))?;
            let g = ParamGroup::from_name(g).ok_or_else(|| Error::Config(format!("unknown group `{g}`")))?;
            let mut s = p.setting(g);
            let bad = || Error::Config(format!("`{k}`: cannot parse `{v}`"));
            match field {
                "frozen_until_step" => s.frozen_until_step = v.parse().map_err(|_| bad())?,
                "lr_multiplier" => s.lr_multiplier = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Config(format!("unknown policy key `{k}`"))),
            }
            p.groups.insert(g, s);
        }
        p.validate()?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wsd_examples() {
        let s = LrSchedule::pretrain(1000);
        assert_eq!(s.lr_at(0), 0.0);
        assert_eq!(s.lr_at(500), 3e-4);
        assert_eq!(s.lr_at(1499), 3e-4);
        assert!((s.lr_at(250) - 1.5e-4).abs() < 1e-18);
        assert!((s.lr_at(2000) - 1.5e-4).abs() < 1e-18);
        assert_eq!(s.lr_at(s.total_steps()), 0.0);
        assert_eq!(s.lr_at(s.total_steps() + 10), 0.0);
        let t = LrSchedule::toy(2000);
        assert_eq!((t.warmup_steps, t.stable_steps, t.decay_steps), (100, 1400, 500));
    }

    #[test]
    fn policy_round_trip_and_semantics() {
        let p = GroupPolicy::hatification(2000);
        let q = GroupPolicy::parse(&p.to_canonical_text()).unwrap();
        assert_eq!(q.setting(ParamGroup::Backbone), p.setting(ParamGroup::Backbone));
        assert_eq!(p.lr_for("backbone.layers.0.attn.q", 2000, 3e-4), 0.0);
        assert!((p.lr_for("backbone.layers.0.attn.q", 2001, 3e-4) - 3e-5).abs() < 1e-18);
        assert_eq!(p.lr_for("encoder.layers.0.attn.q", 1, 3e-4), 3e-4);
        let qk = GroupPolicy::parse("trainable_suffixes = attn.q, attn.k\n").unwrap();
        assert!(qk.trainable("decoder.layers.0.cross.attn.k", 1));
        assert!(!qk.trainable("decoder.layers.0.cross.attn.v", 1));
        assert!(GroupPolicy::parse("backbone.lr_multiplier = 0\n").is_err());
        assert!(GroupPolicy::parse("nope.lr_multiplier = 1\n").is_err());
    }
}
