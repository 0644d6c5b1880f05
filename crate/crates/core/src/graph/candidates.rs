/// Bounded, sorted candidate list used by best-first graph search.
///
/// Holds at most `capacity` entries ordered by (distance, id). `cursor`
/// points at the first entry that may still be unexpanded.
#[derive(Debug, Clone)]
pub(crate) struct CandidateList {
    items: Vec<Candidate>,
    capacity: usize,
    cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Candidate {
    pub dist: f32,
    pub id: u64,
    pub slot: u32,
    pub expanded: bool,
}

impl Candidate {
    fn precedes(&self, dist: f32, id: u64) -> bool {
        match self.dist.total_cmp(&dist) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Equal => self.id < id,
            std::cmp::Ordering::Greater => false,
        }
    }
}

impl CandidateList {
    pub fn new(capacity: usize) -> Self {
        CandidateList {
            items: Vec::with_capacity(capacity + 1),
            capacity,
            cursor: 0,
        }
    }

    /// Inserts a candidate; returns false if it falls outside the list.
    pub fn insert(&mut self, dist: f32, id: u64, slot: u32) -> bool {
        if self.items.len() == self.capacity {
            match self.items.last() {
                Some(last) if last.precedes(dist, id) => return false,
                None => return false,
                _ => {}
            }
        }
        let pos = self.items.partition_point(|c| c.precedes(dist, id));
        self.items.insert(
            pos,
            Candidate {
                dist,
                id,
                slot,
                expanded: false,
            },
        );
        self.items.truncate(self.capacity);
        if pos < self.cursor {
            self.cursor = pos;
        }
        true
    }

    /// Marks and returns the closest unexpanded candidate.
    pub fn next_unexpanded(&mut self) -> Option<Candidate> {
        while self.cursor < self.items.len() {
            let c = &mut self.items[self.cursor];
            self.cursor += 1;
            if !c.expanded {
                c.expanded = true;
                return Some(*c);
            }
        }
        None
    }

    /// Up to `n` closest unexpanded candidates, marked expanded.
    pub fn take_unexpanded(&mut self, n: usize, out: &mut Vec<Candidate>) {
        out.clear();
        let mut i = self.cursor;
        while i < self.items.len() && out.len() < n {
            if !self.items[i].expanded {
                self.items[i].expanded = true;
                out.push(self.items[i]);
            }
            i += 1;
        }
        // Everything before the first still-unexpanded entry is done.
        while self.cursor < self.items.len() && self.items[self.cursor].expanded {
            self.cursor += 1;
        }
    }

    pub fn items(&self) -> &[Candidate] {
        &self.items
    }
}
