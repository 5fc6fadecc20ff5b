//! User-steered hierarchy of k-means splits over one latent field.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::kmeans::kmeans;
use crate::autoencoder::LatentField;
use crate::{Error, Result};

pub const DEFAULT_SPLIT_K: usize = 2;
pub const ROOT: u32 = 0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: u32,
    pub parent: Option<u32>,
    pub children: Vec<u32>,
    /// Ascending particle indices.
    #[serde(with = "ranges")]
    pub members: Vec<usize>,
    pub centroid: Vec<f64>,
    pub split_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TreeOp {
    Split { node: u32, k: usize, seed: u64, children: Vec<u32> },
    Revoke { node: u32, children: Vec<u32> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeFile", into = "TreeFile")]
pub struct ClusterTree {
    pub frame_id: u64,
    pub latent_dim: usize,
    nodes: BTreeMap<u32, TreeNode>,
    op_log: Vec<TreeOp>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    frame_id: u64,
    latent_dim: usize,
    nodes: Vec<TreeNode>,
    op_log: Vec<TreeOp>,
}

impl From<ClusterTree> for TreeFile {
    fn from(t: ClusterTree) -> Self {
        TreeFile {
            frame_id: t.frame_id,
            latent_dim: t.latent_dim,
            nodes: t.nodes.into_values().collect(),
            op_log: t.op_log,
        }
    }
}

impl TryFrom<TreeFile> for ClusterTree {
    type Error = Error;

    fn try_from(f: TreeFile) -> Result<Self> {
        let mut nodes = BTreeMap::new();
        for n in f.nodes {
            if nodes.insert(n.id, n).is_some() {
                return Err(Error::Format("duplicate node id".into()));
            }
        }
        let tree = ClusterTree {
            frame_id: f.frame_id,
            latent_dim: f.latent_dim,
            nodes,
            op_log: f.op_log,
        };
        tree.validate()?;
        Ok(tree)
    }
}

fn mean_of(latents: &LatentField, members: &[usize]) -> Vec<f64> {
    let mut c = vec![0.0; latents.latent_dim];
    for &i in members {
        for (a, x) in c.iter_mut().zip(latents.row(i)) {
            *a += x;
        }
    }
    c.iter_mut().for_each(|a| *a /= members.len().max(1) as f64);
    c
}

impl ClusterTree {
    /// A single root node holding every particle of the field.
    pub fn new(latents: &LatentField) -> Result<Self> {
        if latents.is_empty() {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        let members: Vec<usize> = (0..latents.len()).collect();
        let root = TreeNode {
            id: ROOT,
            parent: None,
            children: Vec::new(),
            centroid: mean_of(latents, &members),
            members,
            split_k: None,
        };
        Ok(Self {
            frame_id: latents.frame_id,
            latent_dim: latents.latent_dim,
            nodes: BTreeMap::from([(ROOT, root)]),
            op_log: Vec::new(),
        })
    }

    pub fn node(&self, id: u32) -> Result<&TreeNode> {
        self.nodes.get(&id).ok_or(Error::UnknownNode(id))
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.values()
    }

    pub fn op_log(&self) -> &[TreeOp] {
        &self.op_log
    }

    pub fn particle_count(&self) -> usize {
        self.nodes[&ROOT].members.len()
    }

    pub fn leaves(&self) -> Vec<u32> {
        self.nodes.values().filter(|n| n.children.is_empty()).map(|n| n.id).collect()
    }

    /// Leaf id of every particle.
    pub fn leaf_labels(&self) -> Vec<u32> {
        let mut labels = vec![ROOT; self.particle_count()];
        for leaf in self.leaves() {
            for &i in &self.nodes[&leaf].members {
                labels[i] = leaf;
            }
        }
        labels
    }

    /// Splits leaf `id` into `k` children by k-means on its members' latents.
    pub fn split(&mut self, id: u32, k: usize, seed: u64, latents: &LatentField) -> Result<Vec<u32>> {
        if latents.len() != self.particle_count() {
            return Err(Error::DimensionMismatch {
                expected: self.particle_count(),
                got: latents.len(),
            });
        }
        if latents.latent_dim != self.latent_dim {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim,
                got: latents.latent_dim,
            });
        }
        let node = self.node(id)?;
        if !node.children.is_empty() {
            return Err(Error::NotLeaf(id));
        }
        if k < 2 {
            return Err(Error::invalid(format!("split needs k >= 2, got {k}")));
        }
        if k > node.members.len() {
            return Err(Error::InsufficientData {
                needed: k,
                got: node.members.len(),
            });
        }
        let data: Vec<f64> = node.members.iter().flat_map(|&i| latents.row(i).iter().copied()).collect();
        let result = kmeans(&data, self.latent_dim, k, seed)?;
        let mut groups = vec![Vec::new(); k];
        for (&i, &l) in node.members.iter().zip(&result.labels) {
            groups[l].push(i);
        }
        if groups.iter().any(|g| g.is_empty()) {
            // only possible with fewer than k distinct latents
            return Err(Error::InsufficientData {
                needed: k,
                got: groups.iter().filter(|g| !g.is_empty()).count(),
            });
        }
        let first = self.nodes.keys().next_back().copied().unwrap_or(ROOT) + 1;
        let ids: Vec<u32> = (first..first + k as u32).collect();
        for (&cid, members) in ids.iter().zip(groups) {
            self.nodes.insert(
                cid,
                TreeNode {
                    id: cid,
                    parent: Some(id),
                    children: Vec::new(),
                    centroid: mean_of(latents, &members),
                    members,
                    split_k: None,
                },
            );
        }
        let node = self.nodes.get_mut(&id).expect("checked above");
        node.children = ids.clone();
        node.split_k = Some(k);
        self.op_log.push(TreeOp::Split {
            node: id,
            k,
            seed,
            children: ids.clone(),
        });
        Ok(ids)
    }

    /// Removes the children of `id`, which must all be leaves.
    pub fn revoke(&mut self, id: u32) -> Result<()> {
        let node = self.node(id)?;
        if node.children.is_empty() {
            return Err(Error::NoChildren(id));
        }
        if node.children.iter().any(|c| !self.nodes[c].children.is_empty()) {
            return Err(Error::HasGrandchildren(id));
        }
        let children = node.children.clone();
        for c in &children {
            self.nodes.remove(c);
        }
        let node = self.nodes.get_mut(&id).expect("checked above");
        node.children.clear();
        node.split_k = None;
        self.op_log.push(TreeOp::Revoke { node: id, children });
        Ok(())
    }

    /// Node structure without the operation history; equal trees give equal bytes.
    pub fn structure_json(&self) -> String {
        serde_json::to_string(&self.nodes.values().collect::<Vec<_>>()).expect("tree nodes serialize")
    }

    /// Checks parent/child links and that children partition their parent.
    pub fn validate(&self) -> Result<()> {
        let root = self.nodes.get(&ROOT).ok_or(Error::Format("missing root node".into()))?;
        if root.parent.is_some() {
            return Err(Error::Format("root has a parent".into()));
        }
        for n in self.nodes.values() {
            if !n.members.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Format(format!("node {} members not strictly ascending", n.id)));
            }
            if n.id != ROOT && n.parent.and_then(|p| self.nodes.get(&p)).is_none_or(|p| !p.children.contains(&n.id)) {
                return Err(Error::Format(format!("node {} has a broken parent link", n.id)));
            }
            if n.children.is_empty() {
                continue;
            }
            let mut union = Vec::with_capacity(n.members.len());
            for c in &n.children {
                let child = self.nodes.get(c).ok_or(Error::Format(format!("node {} lists missing child {c}", n.id)))?;
                if child.parent != Some(n.id) {
                    return Err(Error::Format(format!("child {c} does not point back to {}", n.id)));
                }
                union.extend_from_slice(&child.members);
            }
            union.sort_unstable();
            if union != n.members {
                return Err(Error::Format(format!("children of node {} do not partition it", n.id)));
            }
        }
        Ok(())
    }
}

/// Ascending index lists stored as `[start, end)` runs.
mod ranges {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[usize], s: S) -> Result<S::Ok, S::Error> {
        let mut runs: Vec<[usize; 2]> = Vec::new();
        for &i in v {
            match runs.last_mut() {
                Some(r) if r[1] == i => r[1] += 1,
                _ => runs.push([i, i + 1]),
            }
        }
        runs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
        let runs = Vec::<[usize; 2]>::deserialize(d)?;
        let mut out = Vec::new();
        for [a, b] in runs {
            if b <= a {
                return Err(serde::de::Error::custom(format!("empty or reversed range [{a}, {b})")));
            }
            out.extend(a..b);
        }
        Ok(out)
    }
}
