//! Sliding anti-replay window over transport counters.
//!
//! A counter `c` is acceptable iff it was never accepted before and
//! `greatest - c < WINDOW_BITS`, where `greatest` is the largest counter
//! accepted so far. The bitmap is a ring indexed by `c % WINDOW_BITS`; every
//! residue in `(greatest - WINDOW_BITS, greatest]` maps to a distinct bit.

pub const WINDOW_BITS: u64 = 2048;
const WORDS: usize = (WINDOW_BITS / 64) as usize;

#[derive(Clone, Debug)]
pub struct ReplayWindow {
    bitmap: [u64; WORDS],
    /// One past the greatest accepted counter; 0 when nothing was accepted.
    next: u64,
}

impl Default for ReplayWindow {
    fn default() -> Self {
        Self::new()
    }
}

impl ReplayWindow {
    pub fn new() -> Self {
        ReplayWindow { bitmap: [0; WORDS], next: 0 }
    }

    pub fn greatest(&self) -> Option<u64> {
        self.next.checked_sub(1)
    }

    fn bit(counter: u64) -> (usize, u64) {
        let slot = counter % WINDOW_BITS;
        ((slot / 64) as usize, 1u64 << (slot % 64))
    }

    /// True when `counter` would be accepted. Does not mark it.
    pub fn would_accept(&self, counter: u64) -> bool {
        if counter >= self.next {
            return true;
        }
        if self.next - 1 - counter >= WINDOW_BITS {
            return false;
        }
        let (word, mask) = Self::bit(counter);
        self.bitmap[word] & mask == 0
    }

    /// Marks `counter` as seen; returns false if it must be rejected.
    pub fn check_and_mark(&mut self, counter: u64) -> bool {
        if counter >= self.next {
            if counter - self.next >= WINDOW_BITS {
                self.bitmap = [0; WORDS];
            } else {
                for c in self.next..counter {
                    let (word, mask) = Self::bit(c);
                    self.bitmap[word] &= !mask;
                }
            }
            let (word, mask) = Self::bit(counter);
            self.bitmap[word] |= mask;
            self.next = counter + 1;
            return true;
        }
        if self.next - 1 - counter >= WINDOW_BITS {
            return false;
        }
        let (word, mask) = Self::bit(counter);
        if self.bitmap[word] & mask != 0 {
            return false;
        }
        self.bitmap[word] |= mask;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn duplicate_rejected() {
        let mut w = ReplayWindow::new();
        assert!(w.check_and_mark(0));
        assert!(!w.check_and_mark(0));
    }

    #[test]
    fn out_of_order_within_window() {
        let mut w = ReplayWindow::new();
        assert!(w.check_and_mark(6));
        assert!(w.check_and_mark(5));
        assert!(!w.check_and_mark(5));
        assert!(!w.check_and_mark(6));
    }

    #[test]
    fn far_behind_rejected() {
        let mut w = ReplayWindow::new();
        assert!(w.check_and_mark(10_000));
        assert!(!w.check_and_mark(1));
        // exact boundary: greatest - c == 2047 is inside, 2048 is outside
        assert!(w.check_and_mark(10_000 - 2047));
        assert!(!w.check_and_mark(10_000 - 2048));
    }

    #[test]
    fn bits_are_cleared_when_the_window_slides() {
        let mut w = ReplayWindow::new();
        assert!(w.check_and_mark(5));
        assert!(w.check_and_mark(5 + WINDOW_BITS));
        // 5 + 2048 shares a slot with 5; the slot must now mean the new counter
        assert!(!w.check_and_mark(5 + WINDOW_BITS));
        assert!(!w.check_and_mark(5));
        assert!(w.check_and_mark(6));
    }

    proptest! {
        #[test]
        fn matches_set_oracle(seq in proptest::collection::vec(0u64..6000, 1..600)) {
            let mut w = ReplayWindow::new();
            let mut seen = HashSet::new();
            let mut greatest: Option<u64> = None;
            for c in seq {
                let expect = !seen.contains(&c)
                    && greatest.map_or(true, |g| c > g || g - c < WINDOW_BITS);
                prop_assert_eq!(w.would_accept(c), expect);
                prop_assert_eq!(w.check_and_mark(c), expect);
                if expect {
                    seen.insert(c);
                    greatest = Some(greatest.map_or(c, |g| g.max(c)));
                }
            }
        }
    }
}
