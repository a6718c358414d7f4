use rand::Rng;

/// One stored interaction `(s, a, r, s′, terminal)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    /// Normalized action in [−1, 1].
    pub a: f64,
    pub r: f64,
    pub s_next: Vec<f64>,
    /// True only when the episode ended in a collision.
    pub terminal: bool,
}

/// Fixed-capacity FIFO of transitions.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    /// Slot the next push overwrites once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be > 0");
        Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Transition `i` counted from the oldest entry.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        if i >= self.items.len() {
            return None;
        }
        let start = if self.items.len() < self.capacity { 0 } else { self.head };
        self.items.get((start + i) % self.items.len())
    }

    /// Oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.len()).filter_map(|i| self.get(i))
    }

    /// Storage slot, for sampling; order is irrelevant there.
    pub(crate) fn slot(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}

/// `n` uniform draws with replacement, or `None` while the buffer holds
/// fewer than `n` transitions (the caller skips the update).
pub fn sample_minibatch<'b, R: Rng + ?Sized>(
    buf: &'b ReplayBuffer,
    n: usize,
    rng: &mut R,
) -> Option<Vec<&'b Transition>> {
    if n == 0 || buf.len() < n {
        return None;
    }
    Some(
        (0..n)
            .map(|_| buf.slot(rng.random_range(0..buf.len())))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tr(r: f64) -> Transition {
        Transition {
            s: vec![r],
            a: 0.0,
            r,
            s_next: vec![r],
            terminal: false,
        }
    }

    #[test]
    fn fifo_eviction_at_capacity() {
        let mut b = ReplayBuffer::new(100);
        for i in 0..130 {
            b.push(tr(i as f64));
        }
        assert_eq!(b.len(), 100);
        let rs: Vec<f64> = b.iter().map(|t| t.r).collect();
        let expected: Vec<f64> = (30..130).map(|i| i as f64).collect();
        assert_eq!(rs, expected);
    }

    #[test]
    fn single_item_sample() {
        let mut b = ReplayBuffer::new(10);
        b.push(tr(7.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_minibatch(&b, 1, &mut rng).unwrap();
        assert_eq!(s[0].r, 7.0);
    }

    #[test]
    fn underfilled_buffer_signals_skip() {
        let mut b = ReplayBuffer::new(10);
        b.push(tr(1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_minibatch(&b, 2, &mut rng).is_none());
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let mut b = ReplayBuffer::new(50);
        for i in 0..50 {
            b.push(tr(i as f64));
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_minibatch(&b, 32, &mut rng)
                .unwrap()
                .iter()
                .map(|t| t.r)
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn uniform_frequencies() {
        let mut b = ReplayBuffer::new(10);
        for i in 0..10 {
            b.push(tr(i as f64));
        }
        let mut counts = [0usize; 10];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for t in sample_minibatch(&b, 10, &mut rng).unwrap() {
                counts[t.r as usize] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() < 0.01, "{freq}");
        }
        // Pearson chi-square with 9 dof; 99.9% quantile is 27.88
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 27.88, "chi2 = {chi2}");
    }
}
