use rand::{Rng, RngCore};
use std::collections::VecDeque;

/// Source of every random decision a node makes.
///
/// Any [`RngCore`] works directly. [`Scripted`] replays fixed grant and slot
/// decisions first, which lets a run reproduce a hand-written timeline.
pub trait Entropy {
    /// Draws `alpha ~ U[0, 1)` and reports whether `alpha <= p`.
    fn grant(&mut self, p: f64) -> bool;

    /// Picks one of `candidates` uniformly. `candidates` is never empty.
    fn pick_slot(&mut self, candidates: &[u8]) -> u8;

    /// Uniform index in `0..len`, `len > 0`.
    fn pick_index(&mut self, len: usize) -> usize;
}

impl<R: RngCore + ?Sized> Entropy for R {
    fn grant(&mut self, p: f64) -> bool {
        let alpha: f64 = self.random();
        alpha <= p
    }

    fn pick_slot(&mut self, candidates: &[u8]) -> u8 {
        candidates[self.random_range(0..candidates.len())]
    }

    fn pick_index(&mut self, len: usize) -> usize {
        self.random_range(0..len)
    }
}

/// Replays scripted decisions, then falls back to `inner`.
#[derive(Clone, Debug)]
pub struct Scripted<R> {
    grants: VecDeque<bool>,
    slot_picks: VecDeque<u8>,
    inner: R,
}

impl<R: RngCore> Scripted<R> {
    pub fn new(inner: R) -> Self {
        Self { grants: VecDeque::new(), slot_picks: VecDeque::new(), inner }
    }

    pub fn with_script(inner: R, grants: &[bool], slot_picks: &[u8]) -> Self {
        Self {
            grants: grants.iter().copied().collect(),
            slot_picks: slot_picks.iter().copied().collect(),
            inner,
        }
    }

    pub fn inner_mut(&mut self) -> &mut R {
        &mut self.inner
    }
}

impl<R: RngCore> Entropy for Scripted<R> {
    fn grant(&mut self, p: f64) -> bool {
        match self.grants.pop_front() {
            Some(g) => g,
            None => self.inner.grant(p),
        }
    }

    fn pick_slot(&mut self, candidates: &[u8]) -> u8 {
        // A scripted pick outside the candidate set is consumed and ignored.
        match self.slot_picks.pop_front() {
            Some(s) if candidates.contains(&s) => s,
            _ => self.inner.pick_slot(candidates),
        }
    }

    fn pick_index(&mut self, len: usize) -> usize {
        self.inner.pick_index(len)
    }
}
