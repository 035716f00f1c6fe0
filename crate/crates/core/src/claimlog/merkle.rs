//! RFC 6962 Merkle tree hashing, audit paths and consistency proofs.

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::Digest;

pub fn leaf_hash(payload: &[u8]) -> Digest {
    let mut h = Sha256::new();
    h.update([0x00]);
    h.update(payload);
    Digest(h.finalize().into())
}

pub fn node_hash(left: &Digest, right: &Digest) -> Digest {
    let mut h = Sha256::new();
    h.update([0x01]);
    h.update(left.0);
    h.update(right.0);
    Digest(h.finalize().into())
}

pub fn empty_root() -> Digest {
    Digest::of(b"")
}

/// Largest power of two strictly smaller than `n` (n >= 2).
fn split_point(n: u64) -> u64 {
    debug_assert!(n >= 2);
    1 << (63 - (n - 1).leading_zeros())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionProof {
    pub leaf_index: u64,
    pub tree_size: u64,
    pub path: Vec<Digest>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyProof {
    pub old_size: u64,
    pub new_size: u64,
    pub path: Vec<Digest>,
}

/// Append-only hash cache. `levels[k][i]` is the root of the complete
/// subtree over leaves `[i * 2^k, (i + 1) * 2^k)`; complete subtrees never
/// change once their last leaf is appended.
#[derive(Debug, Clone, Default)]
pub struct MerkleTree {
    levels: Vec<Vec<Digest>>,
}

impl MerkleTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn size(&self) -> u64 {
        self.levels.first().map_or(0, |l| l.len() as u64)
    }

    pub fn leaf(&self, index: u64) -> Option<Digest> {
        self.levels.first()?.get(index as usize).copied()
    }

    pub fn push(&mut self, leaf: Digest) {
        if self.levels.is_empty() {
            self.levels.push(Vec::new());
        }
        self.levels[0].push(leaf);
        let mut k = 0;
        while self.levels[k].len() % 2 == 0 {
            let n = self.levels[k].len();
            let parent = node_hash(&self.levels[k][n - 2], &self.levels[k][n - 1]);
            if self.levels.len() == k + 1 {
                self.levels.push(Vec::new());
            }
            self.levels[k + 1].push(parent);
            k += 1;
        }
    }

    /// MTH over leaves `[start, end)`.
    fn subtree(&self, start: u64, end: u64) -> Digest {
        let n = end - start;
        if n == 1 {
            return self.levels[0][start as usize];
        }
        if n.is_power_of_two() && start % n == 0 {
            let k = n.trailing_zeros() as usize;
            return self.levels[k][(start / n) as usize];
        }
        let k = split_point(n);
        node_hash(&self.subtree(start, start + k), &self.subtree(start + k, end))
    }

    pub fn root(&self, size: u64) -> Option<Digest> {
        match size {
            0 => Some(empty_root()),
            s if s > self.size() => None,
            s => Some(self.subtree(0, s)),
        }
    }

    pub fn inclusion_path(&self, index: u64, size: u64) -> Option<Vec<Digest>> {
        if index >= size || size > self.size() {
            return None;
        }
        let mut path = Vec::new();
        self.path(index, 0, size, &mut path);
        Some(path)
    }

    fn path(&self, m: u64, start: u64, end: u64, out: &mut Vec<Digest>) {
        let n = end - start;
        if n == 1 {
            return;
        }
        let k = split_point(n);
        if m < k {
            self.path(m, start, start + k, out);
            out.push(self.subtree(start + k, end));
        } else {
            self.path(m - k, start + k, end, out);
            out.push(self.subtree(start, start + k));
        }
    }

    pub fn consistency_path(&self, old_size: u64, new_size: u64) -> Option<Vec<Digest>> {
        if old_size == 0 || old_size > new_size || new_size > self.size() {
            return None;
        }
        let mut out = Vec::new();
        self.subproof(old_size, 0, new_size, true, &mut out);
        Some(out)
    }

    fn subproof(&self, m: u64, start: u64, end: u64, complete: bool, out: &mut Vec<Digest>) {
        let n = end - start;
        if m == n {
            if !complete {
                out.push(self.subtree(start, end));
            }
            return;
        }
        let k = split_point(n);
        if m <= k {
            self.subproof(m, start, start + k, complete, out);
            out.push(self.subtree(start + k, end));
        } else {
            self.subproof(m - k, start + k, end, false, out);
            out.push(self.subtree(start, start + k));
        }
    }
}

/// Recomputes the root from an audit path and compares it to `root`.
pub fn verify_inclusion(root: &Digest, leaf: &Digest, proof: &InclusionProof) -> bool {
    if proof.leaf_index >= proof.tree_size {
        return false;
    }
    let mut fnode = proof.leaf_index;
    let mut snode = proof.tree_size - 1;
    let mut r = *leaf;
    for p in &proof.path {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            r = node_hash(p, &r);
            while fnode & 1 == 0 && fnode != 0 {
                fnode >>= 1;
                snode >>= 1;
            }
        } else {
            r = node_hash(&r, p);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    snode == 0 && r == *root
}

/// Checks that `new_root` commits to an append-only extension of `old_root`.
pub fn verify_consistency(old_root: &Digest, new_root: &Digest, proof: &ConsistencyProof) -> bool {
    let (first, second) = (proof.old_size, proof.new_size);
    if first == 0 || first > second {
        return false;
    }
    if first == second {
        return proof.path.is_empty() && old_root == new_root;
    }
    let mut path = proof.path.clone();
    if first.is_power_of_two() {
        path.insert(0, *old_root);
    }
    let Some((&seed, rest)) = path.split_first() else {
        return false;
    };
    let mut fnode = first - 1;
    let mut snode = second - 1;
    while fnode & 1 == 1 {
        fnode >>= 1;
        snode >>= 1;
    }
    let (mut fr, mut sr) = (seed, seed);
    for c in rest {
        if snode == 0 {
            return false;
        }
        if fnode & 1 == 1 || fnode == snode {
            fr = node_hash(c, &fr);
            sr = node_hash(c, &sr);
            while fnode & 1 == 0 && fnode != 0 {
                fnode >>= 1;
                snode >>= 1;
            }
        } else {
            sr = node_hash(&sr, c);
        }
        fnode >>= 1;
        snode >>= 1;
    }
    fr == *old_root && sr == *new_root && snode == 0
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Straight recursive MTH over the raw leaf list.
    fn brute_root(leaves: &[Digest]) -> Digest {
        match leaves.len() {
            0 => empty_root(),
            1 => leaves[0],
            n => {
                let k = split_point(n as u64) as usize;
                node_hash(&brute_root(&leaves[..k]), &brute_root(&leaves[k..]))
            }
        }
    }

    fn tree_of(n: usize) -> (MerkleTree, Vec<Digest>) {
        let mut t = MerkleTree::new();
        let leaves: Vec<Digest> = (0..n).map(|i| leaf_hash(format!("leaf-{i}").as_bytes())).collect();
        leaves.iter().for_each(|l| t.push(*l));
        (t, leaves)
    }

    #[test]
    fn split_points() {
        assert_eq!(split_point(2), 1);
        assert_eq!(split_point(3), 2);
        assert_eq!(split_point(4), 2);
        assert_eq!(split_point(5), 4);
        assert_eq!(split_point(9), 8);
    }

    #[test]
    fn roots_match_brute_force_up_to_64() {
        let (t, leaves) = tree_of(64);
        for size in 0..=64 {
            assert_eq!(t.root(size).unwrap(), brute_root(&leaves[..size as usize]), "size {size}");
        }
        assert!(t.root(65).is_none());
    }

    #[test]
    fn single_leaf_root_is_leaf_hash() {
        let mut t = MerkleTree::new();
        t.push(leaf_hash(b"x"));
        assert_eq!(t.root(1).unwrap(), Digest::of(&[&[0u8][..], b"x"].concat()));
        assert_eq!(t.inclusion_path(0, 1).unwrap(), vec![]);
    }

    #[test]
    fn known_rfc_vector() {
        // Leaf hash of the empty string from the RFC 6962 test vectors.
        assert_eq!(
            leaf_hash(b"").to_hex(),
            "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d"
        );
    }

    #[test]
    fn consistency_all_pairs_small() {
        let (t, _) = tree_of(20);
        for j in 1..=20 {
            for i in 1..=j {
                let proof = ConsistencyProof {
                    old_size: i,
                    new_size: j,
                    path: t.consistency_path(i, j).unwrap(),
                };
                assert!(verify_consistency(&t.root(i).unwrap(), &t.root(j).unwrap(), &proof), "{i} {j}");
            }
        }
    }

    #[test]
    fn out_of_range() {
        let (t, _) = tree_of(3);
        assert!(t.inclusion_path(5, 3).is_none());
        assert!(t.inclusion_path(0, 4).is_none());
        assert!(t.consistency_path(0, 2).is_none());
        assert!(t.consistency_path(3, 2).is_none());
    }
}
