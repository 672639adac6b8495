//! Miss status holding registers shared by the TLB and cache models.
//!
//! Entries complete at a fixed cycle computed when they are allocated; the
//! owner drains them lazily with [`Mshr::pop_due`] as simulated time advances.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MshrEntry<K, M> {
    pub key: K,
    pub completion: u64,
    pub meta: M,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MshrStats {
    /// Allocation attempts, including the ones dropped for lack of space.
    pub alloc_requests: u64,
    pub completions: u64,
    pub drops: u64,
    pub merges: u64,
    /// Demand requests that waited for a free entry.
    pub stalls: u64,
}

#[derive(Debug, Clone)]
pub struct Mshr<K, M> {
    capacity: usize,
    entries: Vec<MshrEntry<K, M>>,
    pub stats: MshrStats,
}

impl<K: PartialEq + Copy, M> Mshr<K, M> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "MSHR needs at least one entry");
        Self {
            capacity,
            entries: Vec::with_capacity(capacity),
            stats: MshrStats::default(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn occupancy(&self) -> usize {
        self.entries.len()
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() >= self.capacity
    }

    pub fn find(&self, key: K) -> Option<&MshrEntry<K, M>> {
        self.entries.iter().find(|e| e.key == key)
    }

    pub fn find_mut(&mut self, key: K) -> Option<&mut MshrEntry<K, M>> {
        self.entries.iter_mut().find(|e| e.key == key)
    }

    pub fn allocate(&mut self, key: K, completion: u64, meta: M) {
        assert!(!self.is_full(), "MSHR overflow");
        debug_assert!(self.find(key).is_none(), "duplicate in-flight entry");
        self.stats.alloc_requests += 1;
        self.entries.push(MshrEntry {
            key,
            completion,
            meta,
        });
    }

    pub fn record_drop(&mut self) {
        self.stats.alloc_requests += 1;
        self.stats.drops += 1;
    }

    pub fn record_merge(&mut self) {
        self.stats.merges += 1;
    }

    fn earliest(&self) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .min_by_key(|(i, e)| (e.completion, *i))
            .map(|(i, _)| i)
    }

    /// Removes the earliest entry that has completed by `now`.
    pub fn pop_due(&mut self, now: u64) -> Option<MshrEntry<K, M>> {
        let i = self.earliest()?;
        if self.entries[i].completion > now {
            return None;
        }
        self.stats.completions += 1;
        Some(self.entries.remove(i))
    }

    /// Removes the earliest entry regardless of time (used to free a slot for
    /// a stalled demand request, or to drain at the end of a run).
    pub fn pop_earliest(&mut self) -> Option<MshrEntry<K, M>> {
        let i = self.earliest()?;
        self.stats.completions += 1;
        Some(self.entries.remove(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &MshrEntry<K, M>> {
        self.entries.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drains_in_completion_order() {
        let mut m: Mshr<u64, ()> = Mshr::new(4);
        m.allocate(1, 30, ());
        m.allocate(2, 10, ());
        m.allocate(3, 10, ());
        assert!(m.pop_due(5).is_none());
        assert_eq!(m.pop_due(10).unwrap().key, 2);
        assert_eq!(m.pop_due(10).unwrap().key, 3);
        assert!(m.pop_due(29).is_none());
        assert_eq!(m.pop_earliest().unwrap().key, 1);
        assert_eq!(m.occupancy(), 0);
    }

    #[test]
    fn conservation_counts() {
        let mut m: Mshr<u64, ()> = Mshr::new(1);
        m.allocate(1, 3, ());
        assert!(m.is_full());
        m.record_drop();
        m.record_merge();
        while m.pop_earliest().is_some() {}
        let s = m.stats;
        assert_eq!(s.alloc_requests, s.completions + s.drops);
        assert_eq!(s.merges, 1);
    }
}
