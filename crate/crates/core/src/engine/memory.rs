use std::collections::VecDeque;

use crate::engine::ops::SparseImageAttention;
use crate::error::{MdsamError, Result};

/// Recency-ordered window of at most `capacity` sparse slices.
///
/// Iteration starts at the most recent entry (position 1) and ends at the
/// oldest one still held.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerMemory {
    entries: VecDeque<SparseImageAttention>,
    capacity: usize,
}

impl LayerMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(MdsamError::config(
                "window",
                "memory window must be at least 1",
            ));
        }
        Ok(Self {
            entries: VecDeque::with_capacity(capacity),
            capacity,
        })
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

    /// Length shared by every held entry, if any.
    pub fn entry_len(&self) -> Option<usize> {
        self.entries.front().map(SparseImageAttention::len)
    }

    /// Entry at 1-based recency position (1 = most recent).
    pub fn get(&self, position: usize) -> Option<&SparseImageAttention> {
        position.checked_sub(1).and_then(|i| self.entries.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &SparseImageAttention> {
        self.entries.iter()
    }

    /// Makes `entry` the most recent one, evicting the oldest when full.
    pub fn push(&mut self, entry: SparseImageAttention) -> Result<()> {
        if let Some(len) = self.entry_len() {
            if len != entry.len() {
                return Err(MdsamError::Dimension(format!(
                    "memory holds entries of length {len}, pushed entry has length {}",
                    entry.len()
                )));
            }
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_back();
        }
        self.entries.push_front(entry);
        Ok(())
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}
