//! Misra-Gries frequency table.

use std::collections::HashMap;

/// One stored counter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Entry {
    pub count: u64,
    pub reported: bool,
    pub pinned: bool,
}

/// One count unit leaving the table during a decrement-all step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Unit {
    pub key: u64,
    pub reported: bool,
}

/// Capacity-bounded key to count table.
///
/// Every stored count underestimates the true frequency, by
/// at most `n / (capacity + 1)` after `n` inserts.
#[derive(Clone, Debug)]
pub struct MgTable {
    capacity: usize,
    entries: HashMap<u64, Entry>,
}

impl MgTable {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "table capacity must be positive");
        Self { capacity, entries: HashMap::with_capacity(capacity) }
    }

    /// Table sized for error fraction `epsilon`: `ceil(1/epsilon)` entries.
    pub fn with_epsilon(epsilon: f64) -> Self {
        assert!(epsilon > 0.0 && epsilon <= 1.0, "epsilon must lie in (0, 1]");
        Self::new((1.0 / epsilon - 1e-9).ceil() as usize)
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

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    /// Inserts one occurrence of `key`.
    ///
    /// Returns the decrement batch: empty unless the key was absent and the
    /// table full, in which case every unpinned entry gives up one unit and
    /// the incoming key is included as one unit of its own. Units are sorted
    /// by key.
    pub fn insert(&mut self, key: u64) -> Vec<Unit> {
        if let Some(e) = self.entries.get_mut(&key) {
            e.count += 1;
            return Vec::new();
        }
        if !self.is_full() {
            self.entries.insert(key, Entry { count: 1, ..Entry::default() });
            return Vec::new();
        }
        let mut batch: Vec<Unit> = Vec::with_capacity(self.entries.len() + 1);
        self.entries.retain(|&k, e| {
            if e.pinned {
                return true;
            }
            batch.push(Unit { key: k, reported: e.reported });
            e.count -= 1;
            e.count > 0
        });
        batch.push(Unit { key, reported: false });
        batch.sort_unstable_by_key(|u| u.key);
        batch
    }

    pub fn estimate(&self, key: u64) -> u64 {
        self.entries.get(&key).map_or(0, |e| e.count)
    }

    pub fn contains(&self, key: u64) -> bool {
        self.entries.contains_key(&key)
    }

    pub fn get(&self, key: u64) -> Option<&Entry> {
        self.entries.get(&key)
    }

    pub fn get_mut(&mut self, key: u64) -> Option<&mut Entry> {
        self.entries.get_mut(&key)
    }

    /// Stores an entry directly, bypassing the decrement rule.
    ///
    /// # Panics
    /// If the key is new and the table is already full, or the count is 0.
    pub fn insert_entry(&mut self, key: u64, entry: Entry) {
        assert!(entry.count > 0, "zero-count entries are not stored");
        assert!(
            self.entries.contains_key(&key) || !self.is_full(),
            "insert_entry on a full table"
        );
        self.entries.insert(key, entry);
    }

    pub fn remove(&mut self, key: u64) -> Option<Entry> {
        self.entries.remove(&key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &Entry)> {
        self.entries.iter().map(|(&k, e)| (k, e))
    }

    /// Entries sorted by key.
    pub fn sorted(&self) -> Vec<(u64, Entry)> {
        let mut v: Vec<_> = self.entries.iter().map(|(&k, &e)| (k, e)).collect();
        v.sort_unstable_by_key(|&(k, _)| k);
        v
    }

    pub fn total_count(&self) -> u64 {
        self.entries.values().map(|e| e.count).sum()
    }
}
