//! Per-lane admission, queueing and cancellation bookkeeping, shared by the
//! live dispatcher and the virtual-clock replay.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{GenerationRequest, Lane, Seq};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LaneLimits {
    pub extraction: usize,
    pub organize: usize,
    pub derive: usize,
    pub refine: usize,
}

impl Default for LaneLimits {
    fn default() -> Self {
        Self { extraction: 1, organize: 1, derive: 2, refine: 1 }
    }
}

impl LaneLimits {
    fn get(&self, lane: Lane) -> usize {
        match lane {
            Lane::Extraction => self.extraction,
            Lane::Organize => self.organize,
            Lane::Derive => self.derive,
            Lane::Refine => self.refine,
        }
        .max(1)
    }
}

#[derive(Debug, Default)]
pub struct CancelOutcome {
    /// In-flight requests that must be abandoned.
    pub abandoned: Vec<Seq>,
    /// Queued requests that now have a free slot.
    pub start: Vec<GenerationRequest>,
}

#[derive(Debug, Default)]
pub struct FinishOutcome {
    /// Whether the finished request's result may reach the session.
    pub deliver: bool,
    pub start: Vec<GenerationRequest>,
}

#[derive(Debug, Default)]
pub struct LaneBook {
    limits: LaneLimits,
    in_flight: BTreeMap<Lane, BTreeSet<Seq>>,
    queued: BTreeMap<Lane, VecDeque<GenerationRequest>>,
}

impl LaneBook {
    pub fn new(limits: LaneLimits) -> Self {
        Self { limits, ..Self::default() }
    }

    /// Admits `req`, returning it if it may start now; otherwise it waits
    /// for a slot in its lane.
    pub fn submit(&mut self, req: GenerationRequest) -> Option<GenerationRequest> {
        let running = self.in_flight.entry(req.lane).or_default();
        if running.len() < self.limits.get(req.lane) {
            running.insert(req.seq);
            Some(req)
        } else {
            self.queued.entry(req.lane).or_default().push_back(req);
            None
        }
    }

    /// Abandons every request of `lane` with seq below `below`.
    pub fn cancel(&mut self, lane: Lane, below: Seq) -> CancelOutcome {
        let running = self.in_flight.entry(lane).or_default();
        let abandoned: Vec<Seq> = running.iter().copied().filter(|s| *s < below).collect();
        running.retain(|s| *s >= below);
        self.queued.entry(lane).or_default().retain(|r| r.seq >= below);
        CancelOutcome { abandoned, start: self.fill(lane) }
    }

    /// Marks `seq` finished. Results of abandoned or unknown requests are
    /// not delivered.
    pub fn finish(&mut self, lane: Lane, seq: Seq) -> FinishOutcome {
        let deliver = self.in_flight.entry(lane).or_default().remove(&seq);
        FinishOutcome { deliver, start: self.fill(lane) }
    }

    pub fn is_in_flight(&self, lane: Lane, seq: Seq) -> bool {
        self.in_flight.get(&lane).is_some_and(|s| s.contains(&seq))
    }

    pub fn in_flight(&self, lane: Lane) -> usize {
        self.in_flight.get(&lane).map_or(0, BTreeSet::len)
    }

    pub fn queued(&self, lane: Lane) -> usize {
        self.queued.get(&lane).map_or(0, VecDeque::len)
    }

    fn fill(&mut self, lane: Lane) -> Vec<GenerationRequest> {
        let limit = self.limits.get(lane);
        let mut started = Vec::new();
        let running = self.in_flight.entry(lane).or_default();
        let queue = self.queued.entry(lane).or_default();
        while running.len() < limit {
            let Some(req) = queue.pop_front() else { break };
            running.insert(req.seq);
            started.push(req);
        }
        started
    }
}
