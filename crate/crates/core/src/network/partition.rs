//! Leiden community detection (modularity with a resolution parameter) over an
//! undirected projection of the road network, followed by merging of
//! undersized communities.

use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RegionAssignment, RoadNetwork};
use crate::error::{Error, Result};

const GAIN_EPS: f64 = 1e-12;
const MAX_LEVELS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartitionParams {
    pub min_region_size: usize,
    pub resolution: f64,
    pub seed: u64,
    /// Randomness of the refinement phase; small values approach greedy merging.
    pub theta: f64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        PartitionParams {
            min_region_size: 1,
            resolution: 1.0,
            seed: 0,
            theta: 0.01,
        }
    }
}

/// Undirected weighted graph. Self-loop weight `w` contributes `2w` to the
/// node degree.
#[derive(Clone, Debug)]
pub struct WeightedGraph {
    adj: Vec<Vec<(usize, f64)>>,
    self_loop: Vec<f64>,
    degree: Vec<f64>,
    total_weight: f64,
}

impl WeightedGraph {
    pub fn from_edges(node_count: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut maps: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); node_count];
        let mut self_loop = vec![0.0; node_count];
        for (u, v, w) in edges {
            if u == v {
                self_loop[u] += w;
            } else {
                *maps[u].entry(v).or_insert(0.0) += w;
                *maps[v].entry(u).or_insert(0.0) += w;
            }
        }
        let adj: Vec<Vec<(usize, f64)>> = maps.into_iter().map(|m| m.into_iter().collect()).collect();
        let degree: Vec<f64> = adj
            .iter()
            .zip(&self_loop)
            .map(|(nbrs, s)| nbrs.iter().map(|e| e.1).sum::<f64>() + 2.0 * s)
            .collect();
        let total_weight = degree.iter().sum::<f64>() / 2.0;
        WeightedGraph {
            adj,
            self_loop,
            degree,
            total_weight,
        }
    }

    /// Undirected projection weighted by the number of links between each node pair.
    pub fn from_network(net: &RoadNetwork) -> Self {
        let edges = net
            .links()
            .iter()
            .filter(|l| l.from != l.to)
            .map(|l| (l.from.index(), l.to.index(), 1.0));
        Self::from_edges(net.node_count(), edges)
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }
}

/// Normalized modularity `Q = Σ_c [e_c / m - γ (K_c / 2m)^2]`.
pub fn modularity(graph: &WeightedGraph, communities: &[usize], resolution: f64) -> f64 {
    let m = graph.total_weight;
    if m <= 0.0 {
        return 0.0;
    }
    let mut internal: BTreeMap<usize, f64> = BTreeMap::new();
    let mut total: BTreeMap<usize, f64> = BTreeMap::new();
    for v in 0..graph.node_count() {
        let c = communities[v];
        *total.entry(c).or_insert(0.0) += graph.degree[v];
        let mut e = graph.self_loop[v];
        for &(u, w) in &graph.adj[v] {
            if communities[u] == c && u > v {
                e += w;
            }
        }
        *internal.entry(c).or_insert(0.0) += e;
    }
    total
        .iter()
        .map(|(c, k)| internal.get(c).copied().unwrap_or(0.0) / m - resolution * (k / (2.0 * m)).powi(2))
        .sum()
}

/// Partitions the network into regions with the Leiden algorithm, then merges
/// every region smaller than `min_region_size` into its most strongly
/// connected neighbor. Deterministic for a fixed seed.
pub fn partition_network(net: &RoadNetwork, params: &PartitionParams) -> Result<RegionAssignment> {
    if params.min_region_size == 0 {
        return Err(Error::Invalid("min_region_size must be at least 1".into()));
    }
    if !(params.resolution.is_finite() && params.resolution > 0.0) {
        return Err(Error::Invalid(format!(
            "resolution must be positive, got {}",
            params.resolution
        )));
    }
    let graph = WeightedGraph::from_network(net);
    let communities = leiden(&graph, params.resolution, params.theta, params.seed);
    let communities = merge_small(&graph, communities, params.min_region_size);
    let assignment = RegionAssignment::from_communities(&communities);
    log::info!(
        "partitioned {} nodes into {} regions (modularity {:.4})",
        net.node_count(),
        assignment.region_count(),
        modularity(&graph, &communities, params.resolution)
    );
    Ok(assignment)
}

/// Community index per node.
pub(crate) fn leiden(graph: &WeightedGraph, resolution: f64, theta: f64, seed: u64) -> Vec<usize> {
    let n = graph.node_count();
    if graph.total_weight <= 0.0 {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let two_m = 2.0 * graph.total_weight;

    let mut level = graph.clone();
    let mut partition: Vec<usize> = (0..level.node_count()).collect();
    // original node -> node of the current aggregate level
    let mut node_map: Vec<usize> = (0..n).collect();

    for _ in 0..MAX_LEVELS {
        move_nodes_fast(&level, &mut partition, resolution, two_m, &mut rng);
        let community_count = count_distinct(&partition);
        if community_count == level.node_count() {
            break;
        }
        let refined = refine(&level, &partition, resolution, theta, two_m, &mut rng);
        let (aggregate, agg_of) = aggregate(&level, &refined);
        if aggregate.node_count() == level.node_count() {
            break;
        }
        let mut next_partition = vec![usize::MAX; aggregate.node_count()];
        let mut dense: BTreeMap<usize, usize> = BTreeMap::new();
        for v in 0..level.node_count() {
            let next = dense.len();
            next_partition[agg_of[v]] = *dense.entry(partition[v]).or_insert(next);
        }
        for m in node_map.iter_mut() {
            *m = agg_of[*m];
        }
        level = aggregate;
        partition = next_partition;
    }
    node_map.iter().map(|&v| partition[v]).collect()
}

fn count_distinct(labels: &[usize]) -> usize {
    let mut seen = vec![false; labels.iter().copied().max().map_or(0, |m| m + 1)];
    let mut count = 0;
    for &l in labels {
        if !seen[l] {
            seen[l] = true;
            count += 1;
        }
    }
    count
}

/// Queue-based local moving. `partition` values must be `< node_count`.
fn move_nodes_fast(graph: &WeightedGraph, partition: &mut [usize], resolution: f64, two_m: f64, rng: &mut ChaCha8Rng) {
    let n = graph.node_count();
    let mut total = vec![0.0; n];
    let mut size = vec![0usize; n];
    for v in 0..n {
        total[partition[v]] += graph.degree[v];
        size[partition[v]] += 1;
    }
    let mut empty: Vec<usize> = (0..n).filter(|&c| size[c] == 0).rev().collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into_iter().collect();
    let mut queued = vec![true; n];

    let mut link_weight = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();

    while let Some(v) = queue.pop_front() {
        queued[v] = false;
        let current = partition[v];
        let k_v = graph.degree[v];

        touched.clear();
        for &(u, w) in &graph.adj[v] {
            let c = partition[u];
            if link_weight[c] == 0.0 {
                touched.push(c);
            }
            link_weight[c] += w;
        }

        total[current] -= k_v;
        size[current] -= 1;

        let gain = |c: usize, lw: f64| lw - resolution * k_v * total[c] / two_m;
        let mut best = current;
        let mut best_gain = gain(current, link_weight[current]);
        for &c in &touched {
            if c == current {
                continue;
            }
            let g = gain(c, link_weight[c]);
            if g > best_gain + GAIN_EPS {
                best = c;
                best_gain = g;
            }
        }
        if best_gain < -GAIN_EPS && size[current] > 0 {
            if let Some(&e) = empty.last() {
                best = e;
            }
        }
        if size[current] == 0 && best != current {
            empty.push(current);
        }
        if empty.last() == Some(&best) {
            empty.pop();
        }
        total[best] += k_v;
        size[best] += 1;
        partition[v] = best;

        for &c in &touched {
            link_weight[c] = 0.0;
        }

        if best != current {
            for &(u, _) in &graph.adj[v] {
                if partition[u] != best && !queued[u] {
                    queued[u] = true;
                    queue.push_back(u);
                }
            }
        }
    }
}

/// Refinement: within each community, merge singletons into well-connected
/// sub-communities, choosing randomly among non-negative gains.
fn refine(
    graph: &WeightedGraph,
    partition: &[usize],
    resolution: f64,
    theta: f64,
    two_m: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let n = graph.node_count();
    let mut refined: Vec<usize> = (0..n).collect();
    let mut ref_total: Vec<f64> = graph.degree.clone();
    let mut ref_size = vec![1usize; n];

    let mut comm_total: BTreeMap<usize, f64> = BTreeMap::new();
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for v in 0..n {
        *comm_total.entry(partition[v]).or_insert(0.0) += graph.degree[v];
        members.entry(partition[v]).or_default().push(v);
    }
    // weight from each node (then each refined community) to the rest of its community
    let mut external: Vec<f64> = (0..n)
        .map(|v| {
            graph.adj[v]
                .iter()
                .filter(|&&(u, _)| partition[u] == partition[v])
                .map(|e| e.1)
                .sum()
        })
        .collect();

    let mut link_weight = vec![0.0; n];
    let mut touched: Vec<usize> = Vec::new();
    let mut candidates: Vec<(usize, f64)> = Vec::new();

    for (comm, mut nodes) in members {
        let k_comm = comm_total[&comm];
        nodes.shuffle(rng);
        for v in nodes {
            if ref_size[refined[v]] != 1 {
                continue;
            }
            let k_v = graph.degree[v];
            if external[v] < resolution * k_v * (k_comm - k_v) / two_m {
                continue;
            }
            touched.clear();
            for &(u, w) in &graph.adj[v] {
                if partition[u] != comm {
                    continue;
                }
                let r = refined[u];
                if link_weight[r] == 0.0 {
                    touched.push(r);
                }
                link_weight[r] += w;
            }
            let own = refined[v];
            candidates.clear();
            candidates.push((own, 0.0));
            for &r in &touched {
                if r == own {
                    continue;
                }
                let well_connected = external[r] >= resolution * ref_total[r] * (k_comm - ref_total[r]) / two_m;
                if !well_connected {
                    continue;
                }
                let gain = link_weight[r] - resolution * k_v * ref_total[r] / two_m;
                if gain >= 0.0 {
                    candidates.push((r, gain));
                }
            }
            let max_gain = candidates.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = candidates.iter().map(|c| ((c.1 - max_gain) / theta).exp()).collect();
            let sum: f64 = weights.iter().sum();
            let mut pick = rng.random::<f64>() * sum;
            let mut chosen = candidates[candidates.len() - 1].0;
            for (c, w) in candidates.iter().zip(&weights) {
                if pick < *w {
                    chosen = c.0;
                    break;
                }
                pick -= w;
            }
            if chosen != own {
                let to_chosen = link_weight[chosen];
                external[chosen] += external[v] - 2.0 * to_chosen;
                ref_total[chosen] += k_v;
                ref_size[chosen] += 1;
                ref_total[own] = 0.0;
                ref_size[own] = 0;
                refined[v] = chosen;
            }
            for &r in &touched {
                link_weight[r] = 0.0;
            }
        }
    }
    refined
}

/// Collapses each community of `labels` into one node. Returns the aggregate
/// and the aggregate node of every input node.
fn aggregate(graph: &WeightedGraph, labels: &[usize]) -> (WeightedGraph, Vec<usize>) {
    let mut remap: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        let next = remap.len();
        remap.entry(l).or_insert(next);
    }
    let agg_of: Vec<usize> = labels.iter().map(|l| remap[l]).collect();
    let mut edges = Vec::new();
    for v in 0..graph.node_count() {
        let a = agg_of[v];
        if graph.self_loop[v] > 0.0 {
            edges.push((a, a, graph.self_loop[v]));
        }
        for &(u, w) in &graph.adj[v] {
            if u > v {
                edges.push((a, agg_of[u], w));
            }
        }
    }
    (WeightedGraph::from_edges(remap.len(), edges), agg_of)
}

/// Merges communities smaller than `min_size` into the neighboring community
/// they share the most edge weight with (ties to the lower id). Communities
/// with no neighbor (isolated components) are left as they are.
fn merge_small(graph: &WeightedGraph, communities: Vec<usize>, min_size: usize) -> Vec<usize> {
    if min_size <= 1 {
        return communities;
    }
    let k = communities.iter().copied().max().map_or(0, |m| m + 1);
    let mut size = vec![0usize; k];
    for &c in &communities {
        size[c] += 1;
    }
    let mut adj: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); k];
    for v in 0..graph.node_count() {
        for &(u, w) in &graph.adj[v] {
            let (a, b) = (communities[v], communities[u]);
            if a != b {
                *adj[a].entry(b).or_insert(0.0) += w;
            }
        }
    }
    let mut merged_into: Vec<usize> = (0..k).collect();
    loop {
        let victim = (0..k)
            .filter(|&c| size[c] > 0 && size[c] < min_size && !adj[c].is_empty())
            .min_by_key(|&c| (size[c], c));
        let Some(small) = victim else { break };
        let target = adj[small]
            .iter()
            .fold(None::<(usize, f64)>, |best, (&c, &w)| match best {
                Some((_, bw)) if bw >= w => best,
                _ => Some((c, w)),
            })
            .map(|(c, _)| c)
            .expect("non-empty adjacency");
        let moved = std::mem::take(&mut adj[small]);
        for (c, w) in moved {
            adj[c].remove(&small);
            if c != target {
                *adj[target].entry(c).or_insert(0.0) += w;
                *adj[c].entry(target).or_insert(0.0) += w;
            }
        }
        size[target] += size[small];
        size[small] = 0;
        merged_into[small] = target;
    }
    let resolve = |mut c: usize| {
        while merged_into[c] != c {
            c = merged_into[c];
        }
        c
    };
    communities.into_iter().map(resolve).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LinkSpec;

    fn clique_edges(offset: usize, size: usize) -> Vec<(usize, usize, f64)> {
        let mut e = Vec::new();
        for i in 0..size {
            for j in i + 1..size {
                e.push((offset + i, offset + j, 1.0));
            }
        }
        e
    }

    #[test]
    fn complete_graph_is_one_community() {
        let g = WeightedGraph::from_edges(6, clique_edges(0, 6));
        let c = leiden(&g, 1.0, 0.01, 7);
        assert!(c.iter().all(|&x| x == c[0]));
    }

    #[test]
    fn disconnected_components_stay_apart() {
        let mut edges = clique_edges(0, 4);
        edges.extend(clique_edges(4, 4));
        let g = WeightedGraph::from_edges(8, edges);
        let c = merge_small(&g, leiden(&g, 1.0, 0.01, 1), 6);
        assert!(c[..4].iter().all(|&x| x == c[0]));
        assert!(c[4..].iter().all(|&x| x == c[4]));
        assert_ne!(c[0], c[4]);
    }

    #[test]
    fn merge_small_absorbs_into_best_neighbor() {
        // communities {0,1,2} {3} {4,5,6}; node 3 linked twice to the first, once to the last
        let g = WeightedGraph::from_edges(
            7,
            vec![
                (0, 1, 1.0),
                (1, 2, 1.0),
                (2, 3, 2.0),
                (3, 4, 1.0),
                (4, 5, 1.0),
                (5, 6, 1.0),
            ],
        );
        let c = merge_small(&g, vec![0, 0, 0, 1, 2, 2, 2], 2);
        assert_eq!(c, vec![0, 0, 0, 0, 2, 2, 2]);
    }

    #[test]
    fn modularity_of_single_community_is_zero() {
        let g = WeightedGraph::from_edges(5, clique_edges(0, 5));
        assert!(modularity(&g, &[0; 5], 1.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let mut net = RoadNetwork::new();
        for i in 0..36 {
            net.add_node(format!("n{i}"), (i % 6) as f64, (i / 6) as f64).unwrap();
        }
        for i in 0..36 {
            let (x, y) = (i % 6, i / 6);
            if x + 1 < 6 {
                net.add_link(LinkSpec::new(
                    format!("h{i}"),
                    format!("n{i}"),
                    format!("n{}", i + 1),
                    100.0,
                ))
                .unwrap();
            }
            if y + 1 < 6 {
                net.add_link(LinkSpec::new(
                    format!("v{i}"),
                    format!("n{i}"),
                    format!("n{}", i + 6),
                    100.0,
                ))
                .unwrap();
            }
        }
        let p = PartitionParams {
            min_region_size: 3,
            seed: 11,
            ..Default::default()
        };
        let a = partition_network(&net, &p).unwrap();
        let b = partition_network(&net, &p).unwrap();
        assert_eq!(a, b);
        let sizes: Vec<usize> = a.members().iter().map(Vec::len).collect();
        assert_eq!(sizes.iter().sum::<usize>(), 36);
        assert!(sizes.iter().all(|&s| s >= 3), "{sizes:?}");
    }

    #[test]
    fn rejects_bad_params() {
        let net = RoadNetwork::new();
        let p = PartitionParams {
            min_region_size: 0,
            ..Default::default()
        };
        assert!(partition_network(&net, &p).is_err());
    }
}
