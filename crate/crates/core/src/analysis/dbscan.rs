use crate::store::KdTree;
use crate::{Error, Result};

pub const NOISE: i32 = -1;
pub const DEFAULT_MIN_PTS: usize = 8;

/// Density-based clustering. A point is core when at least `min_pts` points
/// (itself included) lie within `eps`. Clusters are numbered from 0 in the
/// order their first core point appears; border points join the first cluster
/// that reaches them; everything else is [`NOISE`].
pub fn dbscan(positions: &[[f64; 3]], eps: f64, min_pts: usize) -> Result<Vec<i32>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps {eps} must be positive")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let tree = KdTree::build(positions);
    let neighbors: Vec<Vec<usize>> = positions.iter().map(|p| tree.within_radius(p, eps)).collect();
    let core: Vec<bool> = neighbors.iter().map(|n| n.len() >= min_pts).collect();
    let mut labels = vec![NOISE; positions.len()];
    let mut next = 0;
    let mut queue = Vec::new();
    for start in 0..positions.len() {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        queue.push(start);
        while let Some(i) = queue.pop() {
            for &j in &neighbors[i] {
                if labels[j] == NOISE {
                    labels[j] = next;
                    if core[j] {
                        queue.push(j);
                    }
                }
            }
        }
        next += 1;
    }
    Ok(labels)
}

/// Twice the mean nearest-neighbor distance of the points.
pub fn default_eps(positions: &[[f64; 3]]) -> Result<f64> {
    if positions.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: positions.len(),
        });
    }
    let tree = KdTree::build(positions);
    let sum: f64 = positions
        .iter()
        .enumerate()
        .map(|(i, p)| tree.nearest(p, Some(i)).unwrap().1)
        .sum();
    Ok((2.0 * sum / positions.len() as f64).max(f64::MIN_POSITIVE))
}
