//! Synthetic networks and demand for tests, benchmarks and examples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::demand::OdRecord;
use crate::network::{LinkSpec, NodeId, RegionAssignment, RoadNetwork};

/// A `rows` x `cols` lattice with two opposite links on every edge. Node
/// `n{r}_{c}` sits at `(c * spacing, r * spacing)`.
pub fn grid_network(rows: usize, cols: usize, spacing_m: f64) -> RoadNetwork {
    grid_network_with(rows, cols, spacing_m, |spec| spec)
}

/// [`grid_network`] with every link spec passed through `customize`.
pub fn grid_network_with(
    rows: usize,
    cols: usize,
    spacing_m: f64,
    customize: impl Fn(LinkSpec) -> LinkSpec,
) -> RoadNetwork {
    let mut net = RoadNetwork::new();
    let name = |r: usize, c: usize| format!("n{r}_{c}");
    for r in 0..rows {
        for c in 0..cols {
            net.add_node(name(r, c), c as f64 * spacing_m, r as f64 * spacing_m)
                .expect("unique grid node");
        }
    }
    let mut add = |a: String, b: String| {
        let spec = LinkSpec::new(format!("{a}-{b}"), a, b, spacing_m);
        net.add_link(customize(spec)).expect("valid grid link");
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                add(name(r, c), name(r, c + 1));
                add(name(r, c + 1), name(r, c));
            }
            if r + 1 < rows {
                add(name(r, c), name(r + 1, c));
                add(name(r + 1, c), name(r, c));
            }
        }
    }
    net
}

/// Cuts a grid built by [`grid_network`] into `block_rows` x `block_cols`
/// rectangles of near-equal size, labelled `R{i}` row by row.
pub fn grid_blocks(rows: usize, cols: usize, block_rows: usize, block_cols: usize) -> RegionAssignment {
    let labels: Vec<String> = (0..rows)
        .flat_map(|r| {
            (0..cols).map(move |c| {
                let br = r * block_rows / rows;
                let bc = c * block_cols / cols;
                format!("R{}", br * block_cols + bc)
            })
        })
        .collect();
    RegionAssignment::from_labels(&labels)
}

/// A one-way ring `n0 -> n1 -> ... -> n0` with links `l{i}` leaving `n{i}`,
/// nodes placed on a circle of the matching circumference.
pub fn ring_network(n: usize, link_length_m: f64, customize: impl Fn(LinkSpec) -> LinkSpec) -> RoadNetwork {
    let mut net = RoadNetwork::new();
    let radius = n as f64 * link_length_m / std::f64::consts::TAU;
    for i in 0..n {
        let a = std::f64::consts::TAU * i as f64 / n as f64;
        net.add_node(format!("n{i}"), radius * a.cos(), radius * a.sin())
            .expect("unique ring node");
    }
    for i in 0..n {
        let spec = LinkSpec::new(
            format!("l{i}"),
            format!("n{i}"),
            format!("n{}", (i + 1) % n),
            link_length_m,
        );
        net.add_link(customize(spec)).expect("valid ring link");
    }
    net
}

/// `trips` records of `size` vehicles between uniformly drawn distinct node
/// pairs, departing uniformly in `[0, window_s)`, sorted by departure.
pub fn random_demand(net: &RoadNetwork, trips: usize, size: f64, window_s: f64, seed: u64) -> Vec<OdRecord> {
    let n = net.node_count();
    assert!(n >= 2, "need two nodes for a trip");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<OdRecord> = (0..trips)
        .map(|_| {
            let o = rng.random_range(0..n);
            let mut d = rng.random_range(0..n - 1);
            if d >= o {
                d += 1;
            }
            OdRecord {
                origin: NodeId::from_index(o),
                destination: NodeId::from_index(d),
                depart_time: (rng.random::<f64>() * window_s).floor(),
                count: size,
            }
        })
        .collect();
    out.sort_by(|a, b| a.depart_time.total_cmp(&b.depart_time));
    out
}
