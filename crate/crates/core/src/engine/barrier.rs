//! Reusable generation-counting barriers.
//!
//! The last arriving party resets the arrival count and then advances the
//! generation; everyone else waits for the generation to change. Waiters
//! compare against the generation they observed on arrival, so a reset can
//! never be missed and the barrier can be reused indefinitely.

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::EngineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BarrierKind {
    /// Waiters sleep on a condition variable until the last arrival signals.
    CountdownEvent,
    /// Waiters busy-wait on the generation counter.
    Spin,
}

impl BarrierKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BarrierKind::CountdownEvent => "countdown-event",
            BarrierKind::Spin => "spin",
        }
    }
}

/// Spins between yields in the spin barrier. Yielding keeps oversubscribed
/// hosts (more parties than cores) from stalling for whole time slices.
const SPINS_BEFORE_YIELD: u32 = 256;

#[derive(Debug)]
pub struct StageBarrier {
    parties: usize,
    kind: BarrierKind,
    watchdog: Option<Duration>,
    inner: Inner,
}

#[derive(Debug)]
enum Inner {
    Event {
        state: Mutex<EventState>,
        released: Condvar,
    },
    Spin {
        arrived: AtomicUsize,
        generation: AtomicU64,
    },
}

#[derive(Debug)]
struct EventState {
    arrived: usize,
    generation: u64,
}

impl StageBarrier {
    pub fn new(kind: BarrierKind, parties: usize) -> Result<Self, EngineError> {
        if parties == 0 {
            return Err(EngineError::NoParties);
        }
        let inner = match kind {
            BarrierKind::CountdownEvent => Inner::Event {
                state: Mutex::new(EventState {
                    arrived: 0,
                    generation: 0,
                }),
                released: Condvar::new(),
            },
            BarrierKind::Spin => Inner::Spin {
                arrived: AtomicUsize::new(0),
                generation: AtomicU64::new(0),
            },
        };
        Ok(Self {
            parties,
            kind,
            watchdog: None,
            inner,
        })
    }

    /// Fails a wait with [`EngineError::BarrierTimeout`] after `limit`.
    pub fn with_watchdog(mut self, limit: Duration) -> Self {
        self.watchdog = Some(limit);
        self
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn kind(&self) -> BarrierKind {
        self.kind
    }

    /// Number of completed generations.
    pub fn generation(&self) -> u64 {
        match &self.inner {
            Inner::Event { state, .. } => state.lock().unwrap_or_else(|e| e.into_inner()).generation,
            Inner::Spin { generation, .. } => generation.load(Ordering::Acquire),
        }
    }

    /// Blocks until all parties have arrived; returns the generation just
    /// completed (1, 2, 3, ...).
    pub fn wait(&self) -> Result<u64, EngineError> {
        match &self.inner {
            Inner::Event { state, released } => {
                let mut st = state.lock().unwrap_or_else(|e| e.into_inner());
                let gen = st.generation;
                st.arrived += 1;
                if st.arrived == self.parties {
                    st.arrived = 0;
                    st.generation = gen + 1;
                    released.notify_all();
                    return Ok(gen + 1);
                }
                match self.watchdog {
                    None => {
                        while st.generation == gen {
                            st = released.wait(st).unwrap_or_else(|e| e.into_inner());
                        }
                    }
                    Some(limit) => {
                        let (guard, res) = released
                            .wait_timeout_while(st, limit, |s| s.generation == gen)
                            .unwrap_or_else(|e| e.into_inner());
                        if res.timed_out() && guard.generation == gen {
                            return Err(EngineError::BarrierTimeout(limit));
                        }
                    }
                }
                Ok(gen + 1)
            }
            Inner::Spin {
                arrived,
                generation,
            } => {
                let gen = generation.load(Ordering::Acquire);
                if arrived.fetch_add(1, Ordering::AcqRel) + 1 == self.parties {
                    arrived.store(0, Ordering::Relaxed);
                    generation.store(gen + 1, Ordering::Release);
                    return Ok(gen + 1);
                }
                let started = self.watchdog.map(|_| Instant::now());
                let mut spins = 0u32;
                while generation.load(Ordering::Acquire) == gen {
                    spins += 1;
                    if spins < SPINS_BEFORE_YIELD {
                        std::hint::spin_loop();
                        continue;
                    }
                    spins = 0;
                    std::thread::yield_now();
                    if let (Some(limit), Some(t0)) = (self.watchdog, started) {
                        if t0.elapsed() >= limit {
                            return Err(EngineError::BarrierTimeout(limit));
                        }
                    }
                }
                Ok(gen + 1)
            }
        }
    }
}
