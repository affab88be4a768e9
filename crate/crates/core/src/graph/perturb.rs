use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{count_inter_class, Graph};
use crate::error::{Error, Result};
use crate::seed::stream_rng;

/// Maximum allowed gap between requested and achieved inter-class ratio.
pub const RATIO_TOLERANCE: f64 = 0.02;

/// The graph with every inter-class edge removed.
pub fn oracle_graph(g: &Graph) -> Result<Graph> {
    let labels = g.labels();
    g.with_edges(
        g.edges()
            .iter()
            .copied()
            .filter(|&(i, j)| labels[i] == labels[j]),
    )
}

/// Moves the graph's inter-class edge ratio to `target`.
///
/// Lowering the ratio deletes randomly chosen inter-class edges, so the edge
/// count shrinks. Raising it rewires randomly chosen intra-class edges onto
/// random inter-class node pairs that are not yet connected, keeping the
/// edge count fixed.
pub fn perturb_inter_class(g: &Graph, target: f64, seed: u64) -> Result<Graph> {
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InfeasibleTarget {
            target,
            reason: "ratio must lie in [0, 1]".into(),
        });
    }
    let labels = g.labels();
    let total = g.n_edges();
    if total == 0 {
        return Err(Error::InfeasibleTarget {
            target,
            reason: "graph has no edges".into(),
        });
    }
    let inter = count_inter_class(g.edges(), labels);
    let (inter_f, total_f) = (inter as f64, total as f64);
    let mut rng = stream_rng(seed, 11);

    let edges: Vec<(usize, usize)> = if target < inter_f / total_f {
        // (inter - k) / (total - k) = target
        let k = if target == 0.0 {
            inter
        } else {
            (((inter_f - target * total_f) / (1.0 - target)).round() as usize).min(inter)
        };
        if k == total {
            return Err(Error::InfeasibleTarget {
                target,
                reason: "every edge is inter-class; nothing would remain".into(),
            });
        }
        let inter_ids: Vec<usize> = (0..total)
            .filter(|&e| {
                let (i, j) = g.edges()[e];
                labels[i] != labels[j]
            })
            .collect();
        let drop: HashSet<usize> = index::sample(&mut rng, inter_ids.len(), k)
            .into_iter()
            .map(|x| inter_ids[x])
            .collect();
        g.edges()
            .iter()
            .enumerate()
            .filter(|(e, _)| !drop.contains(e))
            .map(|(_, &p)| p)
            .collect()
    } else {
        // (inter + k) / total = target
        let k = (target * total_f - inter_f).round() as usize;
        let mut intra_ids: Vec<usize> = (0..total)
            .filter(|&e| {
                let (i, j) = g.edges()[e];
                labels[i] == labels[j]
            })
            .collect();
        if k > intra_ids.len() {
            return Err(Error::InfeasibleTarget {
                target,
                reason: format!(
                    "needs {k} rewires but only {} intra-class edges",
                    intra_ids.len()
                ),
            });
        }
        let n = g.n_nodes();
        let mut class_sizes = vec![0usize; g.n_classes()];
        for &y in labels {
            class_sizes[y] += 1;
        }
        let same_pairs: usize = class_sizes
            .iter()
            .map(|&s| s * s.saturating_sub(1) / 2)
            .sum();
        let inter_pairs = n * n.saturating_sub(1) / 2 - same_pairs;
        if inter_pairs - inter < k {
            return Err(Error::InfeasibleTarget {
                target,
                reason: "not enough unconnected inter-class pairs".into(),
            });
        }
        intra_ids.shuffle(&mut rng);
        let removed: HashSet<usize> = intra_ids[..k].iter().copied().collect();
        let mut present: HashSet<(usize, usize)> = g.edges().iter().copied().collect();
        let mut added = Vec::with_capacity(k);
        while added.len() < k {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            let pair = (a.min(b), a.max(b));
            if a != b && labels[a] != labels[b] && present.insert(pair) {
                added.push(pair);
            }
        }
        g.edges()
            .iter()
            .enumerate()
            .filter(|(e, _)| !removed.contains(e))
            .map(|(_, &p)| p)
            .chain(added)
            .collect()
    };

    let out = g.with_edges(edges)?;
    let achieved = count_inter_class(out.edges(), labels) as f64 / out.n_edges().max(1) as f64;
    if (achieved - target).abs() > RATIO_TOLERANCE {
        return Err(Error::InfeasibleTarget {
            target,
            reason: format!("closest reachable ratio is {achieved:.4}"),
        });
    }
    Ok(out)
}
