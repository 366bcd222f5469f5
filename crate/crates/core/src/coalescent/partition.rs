use serde::{Deserialize, Serialize};

use crate::torus::{Point, Torus};

/// A block of sample indices together with the location of its ancestor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Sorted, 0-based sample indices.
    pub members: Vec<usize>,
    pub label: Point,
}

impl Block {
    #[inline]
    pub fn min_member(&self) -> usize {
        self.members[0]
    }
}

/// A labelled partition of `{0, …, n-1}`. Blocks are kept sorted by their
/// smallest member so that two partitions describing the same state compare
/// equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelledPartition {
    n: usize,
    blocks: Vec<Block>,
}

impl LabelledPartition {
    /// Every index in its own block (`℘_n(x)`).
    pub fn singletons(labels: &[Point]) -> Self {
        LabelledPartition {
            n: labels.len(),
            blocks: labels
                .iter()
                .enumerate()
                .map(|(i, &label)| Block {
                    members: vec![i],
                    label,
                })
                .collect(),
        }
    }

    /// Builds a partition from arbitrary blocks, normalising the order.
    pub fn from_blocks(n: usize, mut blocks: Vec<Block>) -> Option<Self> {
        for b in &mut blocks {
            b.members.sort_unstable();
        }
        blocks.sort_by_key(|b| b.members.first().copied().unwrap_or(usize::MAX));
        let p = LabelledPartition { n, blocks };
        p.is_valid_partition().then_some(p)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Index of the block holding sample `i`.
    pub fn block_of(&self, i: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.members.binary_search(&i).is_ok())
    }

    /// Disjoint blocks covering exactly `{0, …, n-1}`, sorted members, blocks
    /// ordered by their minimum.
    pub fn is_valid_partition(&self) -> bool {
        if self.blocks.is_empty() && self.n > 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut prev_min = None;
        for b in &self.blocks {
            if b.members.is_empty() || b.members.windows(2).any(|w| w[0] >= w[1]) {
                return false;
            }
            if prev_min.is_some_and(|m| m >= b.members[0]) {
                return false;
            }
            prev_min = Some(b.members[0]);
            for &i in &b.members {
                if i >= self.n || seen[i] {
                    return false;
                }
                seen[i] = true;
            }
        }
        seen.into_iter().all(|s| s)
    }

    pub fn is_valid_on(&self, torus: &Torus) -> bool {
        self.is_valid_partition() && self.blocks.iter().all(|b| torus.is_canonical(b.label))
    }

    pub(crate) fn set_label(&mut self, block: usize, label: Point) {
        self.blocks[block].label = label;
    }

    /// Merges the blocks at the given positions into one block carrying
    /// `label`. `positions` must be sorted and distinct.
    pub(crate) fn merge(&mut self, positions: &[usize], label: Point) {
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        if positions.len() == 1 {
            self.blocks[positions[0]].label = label;
            return;
        }
        let mut members = Vec::new();
        for &p in positions.iter().rev() {
            members.extend(self.blocks.remove(p).members);
        }
        members.sort_unstable();
        let at = self.blocks.partition_point(|b| b.members[0] < members[0]);
        self.blocks.insert(at, Block { members, label });
    }

    /// The partition restricted to the indices in `keep` (sorted), renumbered
    /// `0..keep.len()`.
    pub fn restrict(&self, keep: &[usize]) -> LabelledPartition {
        let blocks = self
            .blocks
            .iter()
            .filter_map(|b| {
                let members: Vec<usize> = b
                    .members
                    .iter()
                    .filter_map(|i| keep.binary_search(i).ok())
                    .collect();
                (!members.is_empty()).then_some(Block {
                    members,
                    label: b.label,
                })
            })
            .collect();
        LabelledPartition::from_blocks(keep.len(), blocks).expect("restriction of a partition")
    }

    /// Unlabelled block structure.
    pub fn unlabelled(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|b| b.members.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64) -> Point {
        Point::new(x, 0.0)
    }

    #[test]
    fn merge_keeps_order_and_validity() {
        let mut part = LabelledPartition::singletons(&[p(0.0), p(1.0), p(2.0), p(3.0)]);
        part.merge(&[1, 3], p(0.5));
        assert!(part.is_valid_partition());
        assert_eq!(part.unlabelled(), vec![vec![0], vec![1, 3], vec![2]]);
        part.merge(&[0, 2], p(-1.0));
        assert_eq!(part.unlabelled(), vec![vec![0, 2], vec![1, 3]]);
        assert_eq!(part.block_of(3), Some(1));
        part.merge(&[1], p(7.0));
        assert_eq!(part.blocks()[1].label, p(7.0));
    }

    #[test]
    fn restriction_renumbers() {
        let mut part = LabelledPartition::singletons(&[p(0.0), p(1.0), p(2.0), p(3.0)]);
        part.merge(&[0, 2], p(9.0));
        let r = part.restrict(&[1, 2]);
        assert_eq!(r.n(), 2);
        assert_eq!(r.unlabelled(), vec![vec![0], vec![1]]);
        assert_eq!(r.blocks()[1].label, p(9.0));
    }

    #[test]
    fn invalid_partitions_are_rejected() {
        let dup = vec![
            Block { members: vec![0, 1], label: p(0.0) },
            Block { members: vec![1], label: p(0.0) },
        ];
        assert!(LabelledPartition::from_blocks(2, dup).is_none());
        let missing = vec![Block { members: vec![0], label: p(0.0) }];
        assert!(LabelledPartition::from_blocks(2, missing).is_none());
    }
}
