//! Binary SHA-256 Merkle tree with `leaf:` / `node:` domain separation.

use crate::circuit::FieldElement;
use rustc_hash::FxHashMap;
use sha2::{Digest, Sha256};

pub type Hash = [u8; 32];

/// Padding leaves beyond the last variable.
pub const EMPTY_LEAF: Hash = [0; 32];

/// Counts hash invocations so overhead can be reported independently of
/// wall-clock noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Meter {
    pub hashes: u64,
    pub hashed_bytes: u64,
    pub row_evals: u64,
}

impl Meter {
    pub(crate) fn hash(&mut self, parts: &[&[u8]]) -> Hash {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
            self.hashed_bytes += p.len() as u64;
        }
        self.hashes += 1;
        h.finalize().into()
    }
}

pub fn leaf_hash(meter: &mut Meter, salt: &[u8; 16], var: usize, value: FieldElement) -> Hash {
    meter.hash(&[
        b"leaf:",
        salt,
        &(var as u64).to_le_bytes(),
        &value.value().to_le_bytes(),
    ])
}

pub fn node_hash(meter: &mut Meter, left: &Hash, right: &Hash) -> Hash {
    meter.hash(&[b"node:", left, right])
}

/// Depth of a tree over `leaves` leaves (padded to a power of two).
pub fn depth_for(leaves: usize) -> usize {
    leaves.max(1).next_power_of_two().trailing_zeros() as usize
}

pub struct MerkleTree {
    /// `levels[0]` are the padded leaves; the last level is the root.
    levels: Vec<Vec<Hash>>,
}

impl MerkleTree {
    pub fn build(meter: &mut Meter, mut leaves: Vec<Hash>) -> Self {
        let width = leaves.len().max(1).next_power_of_two();
        leaves.resize(width, EMPTY_LEAF);
        let mut levels = vec![leaves];
        while levels.last().unwrap().len() > 1 {
            let next = levels
                .last()
                .unwrap()
                .chunks_exact(2)
                .map(|pair| node_hash(meter, &pair[0], &pair[1]))
                .collect();
            levels.push(next);
        }
        Self { levels }
    }

    pub fn root(&self) -> Hash {
        self.levels.last().unwrap()[0]
    }

    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    /// Sibling hashes from the leaf level upward.
    pub fn path(&self, mut index: usize) -> Vec<Hash> {
        let mut out = Vec::with_capacity(self.depth());
        for level in &self.levels[..self.depth()] {
            out.push(level[index ^ 1]);
            index >>= 1;
        }
        out
    }
}

pub fn verify_path(meter: &mut Meter, root: &Hash, mut index: usize, leaf: Hash, path: &[Hash]) -> bool {
    if path.len() < usize::BITS as usize && index >> path.len() != 0 {
        return false;
    }
    let mut acc = leaf;
    for sib in path {
        acc = if index & 1 == 0 {
            node_hash(meter, &acc, sib)
        } else {
            node_hash(meter, sib, &acc)
        };
        index >>= 1;
    }
    &acc == root
}

/// Nodes already authenticated against one root, keyed by (level, index).
/// A path that reaches a known node stops hashing there; accepting it is
/// equivalent to hashing all the way up.
#[derive(Debug, Clone)]
pub struct PathCache {
    root: Hash,
    known: FxHashMap<(usize, usize), Hash>,
}

impl PathCache {
    pub fn new(root: Hash) -> Self {
        Self {
            root,
            known: FxHashMap::default(),
        }
    }

    pub fn verify(&mut self, meter: &mut Meter, index: usize, leaf: Hash, path: &[Hash]) -> bool {
        if path.len() < usize::BITS as usize && index >> path.len() != 0 {
            return false;
        }
        let mut seen = Vec::with_capacity(2 * path.len() + 1);
        let (mut acc, mut idx) = (leaf, index);
        for (level, sib) in path.iter().enumerate() {
            if let Some(&k) = self.known.get(&(level, idx)) {
                // Every ancestor of a known node and its sibling are known,
                // so the rest of the path must match them byte for byte.
                let rest = path[level..]
                    .iter()
                    .enumerate()
                    .all(|(j, sib)| self.known.get(&(level + j, (idx >> j) ^ 1)) == Some(sib));
                return self.settle(k == acc && rest, seen);
            }
            seen.push(((level, idx), acc));
            seen.push(((level, idx ^ 1), *sib));
            acc = if idx & 1 == 0 {
                node_hash(meter, &acc, sib)
            } else {
                node_hash(meter, sib, &acc)
            };
            idx >>= 1;
        }
        let ok = acc == self.root;
        self.settle(ok, seen)
    }

    fn settle(&mut self, ok: bool, seen: Vec<((usize, usize), Hash)>) -> bool {
        if ok {
            self.known.extend(seen);
        }
        ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaves(n: usize) -> Vec<Hash> {
        let mut m = Meter::default();
        (0..n)
            .map(|i| leaf_hash(&mut m, &[i as u8; 16], i, FieldElement::new(i as u64 * 7)))
            .collect()
    }

    #[test]
    fn cached_paths_agree_with_plain_paths() {
        let ls = leaves(13);
        let mut m = Meter::default();
        let tree = MerkleTree::build(&mut m, ls.clone());
        let mut cache = PathCache::new(tree.root());
        let mut plain = Meter::default();
        let mut cached = Meter::default();
        for i in (0..13).chain(0..13) {
            assert!(verify_path(&mut plain, &tree.root(), i, ls[i], &tree.path(i)));
            assert!(cache.verify(&mut cached, i, ls[i], &tree.path(i)));
        }
        assert!(cached.hashes < plain.hashes);
        let mut bad = ls[4];
        bad[0] ^= 1;
        assert!(!cache.verify(&mut cached, 4, bad, &tree.path(4)));
        let mut fresh = PathCache::new(tree.root());
        assert!(!fresh.verify(&mut cached, 5, ls[4], &tree.path(4)));
        let mut upper = tree.path(2);
        upper[3][0] ^= 1;
        assert!(!cache.verify(&mut cached, 2, ls[2], &upper));
        let mut sib = tree.path(6);
        sib[0][3] ^= 1;
        assert!(!PathCache::new(tree.root()).verify(&mut cached, 6, ls[6], &sib));
    }

    #[test]
    fn every_path_verifies() {
        for n in [1, 2, 3, 5, 8, 13] {
            let mut m = Meter::default();
            let ls = leaves(n);
            let tree = MerkleTree::build(&mut m, ls.clone());
            assert_eq!(tree.depth(), depth_for(n));
            for (i, l) in ls.iter().enumerate() {
                assert!(verify_path(&mut m, &tree.root(), i, *l, &tree.path(i)));
                assert!(!verify_path(&mut m, &tree.root(), i, EMPTY_LEAF, &tree.path(i)));
                if n > 1 {
                    assert!(!verify_path(&mut m, &tree.root(), i ^ 1, *l, &tree.path(i)));
                }
            }
            assert!(!verify_path(
                &mut m,
                &tree.root(),
                1 << tree.depth(),
                ls[0],
                &tree.path(0)
            ));
        }
    }

    #[test]
    fn root_matches_manual_composition() {
        let mut m = Meter::default();
        let ls = leaves(3);
        let tree = MerkleTree::build(&mut m, ls.clone());
        let left = Sha256::new()
            .chain_update(b"node:")
            .chain_update(ls[0])
            .chain_update(ls[1])
            .finalize();
        let right = Sha256::new()
            .chain_update(b"node:")
            .chain_update(ls[2])
            .chain_update(EMPTY_LEAF)
            .finalize();
        let root: Hash = Sha256::new()
            .chain_update(b"node:")
            .chain_update(left)
            .chain_update(right)
            .finalize()
            .into();
        assert_eq!(tree.root(), root);
        assert_eq!(m.hashes, 3);
    }
}
