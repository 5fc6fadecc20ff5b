//! Brute-force references for the analysis routines.

/// O(M²) DBSCAN visiting points in index order.
pub fn dbscan(points: &[[f64; 3]], eps: f64, min_pts: usize) -> Vec<i32> {
    let m = points.len();
    let near = |i: usize| -> Vec<usize> {
        (0..m)
            .filter(|&j| {
                let d: f64 = (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum();
                d <= eps * eps
            })
            .collect()
    };
    let mut labels = vec![-1; m];
    let mut cluster = 0;
    for i in 0..m {
        if labels[i] != -1 || near(i).len() < min_pts {
            continue;
        }
        labels[i] = cluster;
        let mut stack = vec![i];
        while let Some(p) = stack.pop() {
            let n = near(p);
            if n.len() < min_pts {
                continue;
            }
            for q in n {
                if labels[q] == -1 {
                    labels[q] = cluster;
                    stack.push(q);
                }
            }
        }
        cluster += 1;
    }
    labels
}

/// Canonical form of a labelling: sets of indices sharing a label, noise excluded.
pub fn partition<L: Copy + Eq + std::hash::Hash + Ord>(labels: &[L], skip: Option<L>) -> Vec<Vec<usize>> {
    let mut groups = std::collections::BTreeMap::<L, Vec<usize>>::new();
    for (i, &l) in labels.iter().enumerate() {
        if Some(l) != skip {
            groups.entry(l).or_default().push(i);
        }
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().collect();
    out.sort();
    out
}

pub fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lowest k-means cost over every assignment of `m` points to `k` labels.
pub fn optimal_inertia(data: &[f64], dim: usize, k: usize) -> f64 {
    let m = data.len() / dim;
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; m];
    loop {
        let mut cost = 0.0;
        for c in 0..k {
            let members: Vec<usize> = (0..m).filter(|&i| labels[i] == c).collect();
            if members.is_empty() {
                continue;
            }
            let mean: Vec<f64> = (0..dim)
                .map(|a| members.iter().map(|&i| data[i * dim + a]).sum::<f64>() / members.len() as f64)
                .collect();
            cost += members.iter().map(|&i| sq(&data[i * dim..(i + 1) * dim], &mean)).sum::<f64>();
        }
        best = best.min(cost);
        let mut pos = 0;
        loop {
            if pos == m {
                return best;
            }
            labels[pos] += 1;
            if labels[pos] < k {
                break;
            }
            labels[pos] = 0;
            pos += 1;
        }
    }
}

/// Mean silhouette of a labelling in 2D.
pub fn silhouette(points: &[[f64; 2]], labels: &[usize]) -> f64 {
    let d = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let k = labels.iter().max().unwrap() + 1;
    let mut total = 0.0;
    for i in 0..points.len() {
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for j in 0..points.len() {
            if i != j {
                sums[labels[j]] += d(&points[i], &points[j]);
                counts[labels[j]] += 1;
            }
        }
        let a = sums[labels[i]] / counts[labels[i]].max(1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    total / points.len() as f64
}

/// Fraction of points whose cluster's majority label matches their own label.
pub fn purity(clusters: &[usize], truth: &[usize]) -> f64 {
    let k = clusters.iter().max().unwrap() + 1;
    let t = truth.iter().max().unwrap() + 1;
    let mut counts = vec![vec![0usize; t]; k];
    for (&c, &l) in clusters.iter().zip(truth) {
        counts[c][l] += 1;
    }
    counts.iter().map(|row| row.iter().max().unwrap()).sum::<usize>() as f64 / clusters.len() as f64
}
