use rand::Rng;

/// One controller transition: the windows are stored flat, oldest message first.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub history: Vec<usize>,
    pub action: usize,
    pub reward: f64,
    pub next_history: Vec<usize>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO experience replay.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    entries: Vec<Transition>,
    /// Slot overwritten by the next insert once full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            entries: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.entries.len() < self.capacity {
            self.entries.push(t);
        } else {
            self.entries[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.entries.split_at(self.head);
        older.iter().chain(newer)
    }

    /// `batch` distinct entries drawn uniformly, or every entry if fewer exist.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<&Transition> {
        let amount = batch.min(self.entries.len());
        rand::seq::index::sample(rng, self.entries.len(), amount)
            .into_iter()
            .map(|i| &self.entries[i])
            .collect()
    }
}
