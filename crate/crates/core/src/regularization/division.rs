use std::collections::{BTreeSet, VecDeque};

use crate::map::{BlockIndex, VolumetricMap};

const FACE_NEIGHBOURS: [[i32; 3]; 6] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0], [0, 0, -1], [0, 0, 1]];

/// Partition observed blocks into 6-connected groups of at most `max_blocks`.
///
/// Seeds are taken in ascending block order; each group grows breadth-first
/// until it is full or its frontier is exhausted.
pub fn divide_map(map: &VolumetricMap, max_blocks: usize) -> Vec<Vec<BlockIndex>> {
    let observed: BTreeSet<BlockIndex> = map.blocks().filter(|b| b.is_observed()).map(|b| b.index()).collect();
    divide_blocks(&observed, max_blocks)
}

pub(crate) fn divide_blocks(observed: &BTreeSet<BlockIndex>, max_blocks: usize) -> Vec<Vec<BlockIndex>> {
    let max_blocks = max_blocks.max(1);
    let mut assigned: BTreeSet<BlockIndex> = BTreeSet::new();
    let mut groups = Vec::new();
    for &seed in observed {
        if assigned.contains(&seed) {
            continue;
        }
        let mut group = Vec::new();
        let mut queue = VecDeque::from([seed]);
        while let Some(b) = queue.pop_front() {
            if !assigned.insert(b) {
                continue;
            }
            group.push(b);
            if group.len() == max_blocks {
                break;
            }
            for d in FACE_NEIGHBOURS {
                let n = BlockIndex([b.0[0] + d[0], b.0[1] + d[1], b.0[2] + d[2]]);
                if observed.contains(&n) && !assigned.contains(&n) {
                    queue.push_back(n);
                }
            }
        }
        groups.push(group);
    }
    groups
}
