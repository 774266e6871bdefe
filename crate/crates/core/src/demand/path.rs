use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::network::{LinkId, NodeId, RoadNetwork};

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    node: NodeId,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Cost-to-go from every node to `destination` (backward Dijkstra).
/// Unreachable nodes get `f64::INFINITY`.
pub fn distances_to(net: &RoadNetwork, destination: NodeId, cost: &impl Fn(LinkId) -> f64) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; net.node_count()];
    let mut heap = BinaryHeap::new();
    dist[destination.index()] = 0.0;
    heap.push(Entry {
        cost: 0.0,
        node: destination,
    });
    while let Some(Entry { cost: d, node }) = heap.pop() {
        if d > dist[node.index()] {
            continue;
        }
        for &l in net.in_links(node) {
            let c = cost(l);
            if !c.is_finite() {
                continue;
            }
            let from = net.link(l).from;
            let nd = d + c;
            if nd < dist[from.index()] {
                dist[from.index()] = nd;
                heap.push(Entry { cost: nd, node: from });
            }
        }
    }
    dist
}

fn on_shortest(cost: f64, from_dist: f64, to_dist: f64) -> bool {
    (cost + to_dist - from_dist).abs() <= 1e-9 * from_dist.max(1.0)
}

/// Walks from `origin` along shortest links given cost-to-go `dist`, taking
/// the lowest link id at every choice. The result is the lexicographically
/// smallest link sequence among minimum-cost paths.
pub fn trace_path(
    net: &RoadNetwork,
    origin: NodeId,
    destination: NodeId,
    dist: &[f64],
    cost: &impl Fn(LinkId) -> f64,
) -> Option<Vec<LinkId>> {
    if !dist[origin.index()].is_finite() {
        return None;
    }
    let mut links = Vec::new();
    let mut at = origin;
    while at != destination {
        let here = dist[at.index()];
        let next = net.out_links(at).iter().copied().find(|&l| {
            let to = net.link(l).to;
            let c = cost(l);
            c.is_finite()
                && dist[to.index()].is_finite()
                && on_shortest(c, here, dist[to.index()])
                && dist[to.index()] < here
        })?;
        links.push(next);
        at = net.link(next).to;
        if links.len() > net.node_count() {
            return None;
        }
    }
    Some(links)
}

/// Minimum-cost link sequence from `origin` to `destination`; ties go to the
/// lexicographically smallest sequence of link ids.
pub fn shortest_path(
    net: &RoadNetwork,
    origin: NodeId,
    destination: NodeId,
    cost: &impl Fn(LinkId) -> f64,
) -> Result<Vec<LinkId>> {
    if origin == destination {
        return Err(Error::Invalid(format!(
            "origin and destination are the same node {:?}",
            net.node(origin).label
        )));
    }
    let dist = distances_to(net, destination, cost);
    trace_path(net, origin, destination, &dist, cost).ok_or_else(|| Error::NoPath {
        origin: net.node(origin).label.clone(),
        destination: net.node(destination).label.clone(),
    })
}
