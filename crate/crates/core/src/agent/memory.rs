use super::Transition;

/// Insertion-ordered transition buffer. Filling it is the signal to replay;
/// nothing is ever evicted.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    items: Vec<Transition>,
    capacity: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "replay memory capacity must be at least 1");
        Self {
            items: Vec::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends and reports whether the memory is now full.
    ///
    /// # Panics
    /// If called on a full memory; callers must replay and clear first.
    pub fn push(&mut self, transition: Transition) -> bool {
        assert!(!self.is_full(), "push into a full replay memory");
        self.items.push(transition);
        self.is_full()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
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

    pub fn iter(&self) -> std::slice::Iter<'_, Transition> {
        self.items.iter()
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }
}
