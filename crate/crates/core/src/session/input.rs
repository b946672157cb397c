//! Turns raw presses into clicks and double-clicks.

use super::{Action, Target};

/// Two presses on the same target strictly closer than this form a
/// double-click.
pub const DOUBLE_CLICK_MS: u64 = 500;

/// A discriminated input and the time it takes effect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub at: u64,
    pub target: Target,
    pub action: Action,
}

/// A press is held back until it can no longer become a double-click: a
/// single click takes effect when the window closes, or earlier when a press
/// on another target arrives. A double-click takes effect at its second
/// press.
#[derive(Debug, Clone, Default)]
pub struct InputNormalizer {
    pending: Option<(Target, u64)>,
}

impl InputNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    /// `at` must not precede earlier presses or ticks.
    pub fn press(&mut self, target: Target, at: u64) -> Vec<Resolved> {
        match self.pending.take() {
            Some((prev, t0)) if prev == target && at.saturating_sub(t0) < DOUBLE_CLICK_MS => {
                vec![Resolved { at, target, action: Action::DoubleClick }]
            }
            Some((prev, t0)) => {
                self.pending = Some((target, at));
                vec![Resolved { at: at.min(t0 + DOUBLE_CLICK_MS), target: prev, action: Action::Click }]
            }
            None => {
                self.pending = Some((target, at));
                Vec::new()
            }
        }
    }

    /// When the pending press, if any, resolves to a click.
    pub fn deadline(&self) -> Option<u64> {
        self.pending.as_ref().map(|(_, t0)| t0 + DOUBLE_CLICK_MS)
    }

    pub fn tick(&mut self, now: u64) -> Option<Resolved> {
        let deadline = self.deadline()?;
        if now < deadline {
            return None;
        }
        let (target, _) = self.pending.take()?;
        Some(Resolved { at: deadline, target, action: Action::Click })
    }

    pub fn is_pending(&self) -> bool {
        self.pending.is_some()
    }
}
