//! Flat-array binary sum tree for proportional sampling.
//!
//! Leaves hold non-negative masses; internal nodes cache subtree sums so
//! both point updates and prefix descent run in O(log n). Sums drift as
//! updates accumulate, so the tree rebuilds itself exactly at a fixed
//! update cadence.

const REBUILD_INTERVAL: u64 = 1_000_000;

pub struct SumTree {
    /// Number of leaves, rounded up to a power of two.
    leaf_count: usize,
    /// Heap layout: root at 1, leaves at `[leaf_count, 2 * leaf_count)`.
    nodes: Vec<f64>,
    updates: u64,
}

impl SumTree {
    pub fn new(capacity: usize) -> Self {
        let leaf_count = capacity.max(1).next_power_of_two();
        SumTree {
            leaf_count,
            nodes: vec![0.0; 2 * leaf_count],
            updates: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.leaf_count
    }

    pub fn get(&self, index: usize) -> f64 {
        self.nodes[self.leaf_count + index]
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn set(&mut self, index: usize, mass: f64) {
        assert!(index < self.leaf_count, "leaf {index} out of range");
        assert!(mass >= 0.0 && mass.is_finite(), "mass must be finite >= 0");
        let mut node = self.leaf_count + index;
        let delta = mass - self.nodes[node];
        self.nodes[node] = mass;
        while node > 1 {
            node /= 2;
            self.nodes[node] += delta;
        }
        self.updates += 1;
        if self.updates % REBUILD_INTERVAL == 0 {
            self.rebuild();
        }
    }

    /// Exactly recomputes all internal sums from the leaves.
    pub fn rebuild(&mut self) {
        for node in (1..self.leaf_count).rev() {
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    /// Finds the leaf containing `prefix` mass: the unique `i` with
    /// `sum(masses[..i]) <= prefix < sum(masses[..=i])`, up to float
    /// rounding. Zero-mass leaves are never returned while the total is
    /// positive, even for boundary prefixes.
    pub fn find_prefix(&self, prefix: f64) -> usize {
        debug_assert!(self.total() > 0.0, "sampling from empty tree");
        let mut remaining = prefix.clamp(0.0, self.total());
        let mut node = 1;
        while node < self.leaf_count {
            let left = 2 * node;
            // A zero-mass right subtree is never entered, which keeps
            // boundary-rounded prefixes out of zero-mass leaves.
            if remaining < self.nodes[left] || self.nodes[left + 1] == 0.0 {
                node = left;
            } else {
                remaining -= self.nodes[left];
                node = left + 1;
            }
        }
        node - self.leaf_count
    }
}
