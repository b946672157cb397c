use std::collections::BTreeMap;

use tokio::sync::mpsc;
use tokio::task::AbortHandle;

use super::{Gateway, GenerationError, GenerationRequest, GenerationResult, Lane, LaneBook, LaneLimits, Seq};
use crate::prompt::PromptKind;

/// A finished generation on its way back to the session loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Delivery {
    Completed(GenerationResult),
    Failed { lane: Lane, seq: Seq, kind: PromptKind, error: GenerationError },
}

impl Delivery {
    pub fn lane(&self) -> Lane {
        match self {
            Delivery::Completed(r) => r.lane,
            Delivery::Failed { lane, .. } => *lane,
        }
    }

    pub fn seq(&self) -> Seq {
        match self {
            Delivery::Completed(r) => r.seq,
            Delivery::Failed { seq, .. } => *seq,
        }
    }
}

/// Runs generations as tokio tasks on behalf of one session loop.
///
/// Owned by the loop: `submit`, `cancel` and `accept` are all called from
/// the loop's task, so the delivery check in [`Dispatcher::accept`] is
/// ordered with respect to every cancellation.
pub struct Dispatcher {
    gateway: Gateway,
    book: LaneBook,
    tasks: BTreeMap<(Lane, Seq), AbortHandle>,
    tx: mpsc::UnboundedSender<Delivery>,
}

impl Dispatcher {
    pub fn new(gateway: Gateway, limits: LaneLimits, tx: mpsc::UnboundedSender<Delivery>) -> Self {
        Self { gateway, book: LaneBook::new(limits), tasks: BTreeMap::new(), tx }
    }

    pub fn submit(&mut self, req: GenerationRequest) {
        if let Some(req) = self.book.submit(req) {
            self.spawn(req);
        }
    }

    /// Abandons requests of `lane` below `below`. Their tasks are aborted and
    /// anything they already sent is refused by [`Dispatcher::accept`].
    pub fn cancel(&mut self, lane: Lane, below: Seq) {
        let out = self.book.cancel(lane, below);
        for seq in out.abandoned {
            if let Some(handle) = self.tasks.remove(&(lane, seq)) {
                handle.abort();
            }
        }
        for req in out.start {
            self.spawn(req);
        }
    }

    /// Decides whether a delivery may reach the session.
    pub fn accept(&mut self, delivery: &Delivery) -> bool {
        let (lane, seq) = (delivery.lane(), delivery.seq());
        self.tasks.remove(&(lane, seq));
        let out = self.book.finish(lane, seq);
        for req in out.start {
            self.spawn(req);
        }
        out.deliver
    }

    pub fn in_flight(&self, lane: Lane) -> usize {
        self.book.in_flight(lane)
    }

    fn spawn(&mut self, req: GenerationRequest) {
        let gateway = self.gateway.clone();
        let tx = self.tx.clone();
        let key = (req.lane, req.seq);
        let handle = tokio::spawn(async move {
            let delivery = match gateway.complete(&req).await {
                Ok(result) => Delivery::Completed(result),
                Err(error) => Delivery::Failed { lane: req.lane, seq: req.seq, kind: req.kind, error },
            };
            let _ = tx.send(delivery);
        });
        self.tasks.insert(key, handle.abort_handle());
    }
}
