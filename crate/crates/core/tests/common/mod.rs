//! Shared helpers for the integration suites: random hypernym DAGs and a
//! brute-force shortest-path oracle independent of the library's
//! implementation.

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random DAG over up to `max_nodes` nodes with concept-id names. Edges
/// always point from a lower to a higher node index, so the graph is acyclic
/// by construction.
pub struct RandomDag {
    pub names: Vec<String>,
    pub edges: Vec<(String, String)>,
    /// Parent index lists, aligned with `names`.
    pub parents: Vec<Vec<usize>>,
}

pub fn random_dag(rng: &mut ChaCha8Rng, max_nodes: usize) -> RandomDag {
    let n = rng.random_range(2..=max_nodes);
    // Shuffled two-digit labels decouple lexicographic order from the
    // topological order.
    let mut labels: Vec<usize> = (0..n).collect();
    labels.shuffle(rng);
    let names: Vec<String> = labels.iter().map(|l| format!("c{l:02}.n.01")).collect();
    let mut edges = Vec::new();
    let mut parents = vec![Vec::new(); n];
    for child in 0..n {
        for parent in (child + 1)..n {
            if rng.random_range(0.0..1.0) < 0.25 {
                edges.push((names[child].clone(), names[parent].clone()));
                parents[child].push(parent);
            }
        }
    }
    RandomDag { names, edges, parents }
}

/// Shortest path from `start` toward a root (node without parents); ties
/// broken by the lexicographically smallest name sequence. Pure enumeration
/// of every root path.
pub fn brute_force_shortest(dag: &RandomDag, start: usize) -> Vec<String> {
    let mut best: Option<Vec<String>> = None;
    let mut stack = vec![vec![start]];
    while let Some(path) = stack.pop() {
        let node = *path.last().unwrap();
        if dag.parents[node].is_empty() {
            let named: Vec<String> = path.iter().map(|&i| dag.names[i].clone()).collect();
            best = Some(match best.take() {
                None => named,
                Some(old) => {
                    if named.len() < old.len() || (named.len() == old.len() && named < old) {
                        named
                    } else {
                        old
                    }
                }
            });
            continue;
        }
        for &p in &dag.parents[node] {
            let mut next = path.clone();
            next.push(p);
            stack.push(next);
        }
    }
    best.expect("every DAG walk reaches a root")
}

/// Deterministic RNG for a test stream.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
