//! Static road network: nodes, links with their flow parameters, the node to
//! region partition and per-region speed functions.

mod load;
mod mfd;
mod partition;
mod regions;

use std::collections::HashMap;
use std::fmt;

pub use load::{load_network, read_links_csv, read_nodes_csv};
pub use mfd::{calibrate_underwood, read_mfd_csv, read_mfd_samples, write_mfd_csv, UnderwoodMfd};
pub use partition::{modularity, partition_network, PartitionParams, WeightedGraph};
pub use regions::{Region, RegionAssignment, Regions};

use crate::error::{Error, Result};

macro_rules! dense_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }

            #[inline]
            pub fn from_index(index: usize) -> Self {
                $name(index as u32)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

dense_id!(
    /// Dense index of a node, in file order.
    NodeId
);
dense_id!(
    /// Dense index of a link, in file order. Shortest-path tie-breaks compare these.
    LinkId
);
dense_id!(
    /// Dense index of a region.
    RegionId
);

/// Default free-flow speed for links whose road type is unknown (50 km/h).
pub const DEFAULT_FREE_FLOW_SPEED: f64 = 13.9;
/// Default jam density, vehicles per lane per km.
pub const DEFAULT_JAM_DENSITY: f64 = 150.0;
/// Default backward wave speed as a fraction of free-flow speed.
pub const DEFAULT_WAVE_SPEED_RATIO: f64 = 0.35;
/// Default lane capacity, vehicles per hour.
pub const DEFAULT_LANE_CAPACITY_VPH: f64 = 1800.0;

/// Free-flow speed in m/s imputed from an OSM-style road type.
pub fn imputed_speed(road_type: Option<&str>) -> f64 {
    let kmh = match road_type.map(str::trim) {
        Some("motorway") => 120.0,
        Some("motorway_link") => 80.0,
        Some("trunk") => 100.0,
        Some("trunk_link") | Some("primary") => 80.0,
        Some("primary_link") | Some("secondary") => 60.0,
        Some("secondary_link") | Some("tertiary") | Some("tertiary_link") => 50.0,
        Some("unclassified") => 50.0,
        Some("residential") => 30.0,
        Some("service") => 20.0,
        Some("living_street") => 10.0,
        _ => return DEFAULT_FREE_FLOW_SPEED,
    };
    kmh / 3.6
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub label: String,
    /// NaN when the input gave no position.
    pub x: f64,
    pub y: f64,
}

impl Node {
    pub fn has_position(&self) -> bool {
        !self.x.is_nan()
    }
}

/// A directed road link and its triangular fundamental diagram.
#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub label: String,
    pub from: NodeId,
    pub to: NodeId,
    pub length_m: f64,
    pub lanes: u32,
    /// Free-flow speed, m/s.
    pub vf: f64,
    /// Backward (spillback) wave speed, m/s.
    pub vb: f64,
    /// Jam density, vehicles per lane per km.
    pub kjam: f64,
    /// Capacity, vehicles per second (whole link, all lanes).
    pub qmax: f64,
    pub road_type: Option<String>,
}

impl Link {
    pub fn free_flow_time(&self) -> f64 {
        self.length_m / self.vf
    }

    /// Vehicles the link holds at jam density.
    pub fn storage(&self) -> f64 {
        self.kjam * self.lanes as f64 * self.length_m / 1000.0
    }

    /// Largest flow the link can carry in equilibrium: `qmax`, or the apex of
    /// the triangle `kjam * vf * vb / (vf + vb)` when that is lower.
    pub fn kinematic_capacity(&self) -> f64 {
        let apex = self.kjam * self.lanes as f64 / 1000.0 * self.vf * self.vb / (self.vf + self.vb);
        self.qmax.min(apex)
    }

    /// Vehicles on the link when it is uniformly at critical density.
    pub fn critical_accumulation(&self) -> f64 {
        self.qmax * self.length_m / self.vf
    }

    /// Equilibrium speed on the triangular fundamental diagram at a density
    /// in vehicles per lane per km.
    pub fn equilibrium_speed(&self, density: f64) -> f64 {
        if density <= 0.0 {
            return self.vf;
        }
        let congested = self.vb * (self.kjam - density).max(0.0) / density;
        self.vf.min(congested)
    }
}

/// Optional link attributes as they appear in `links.csv`; blanks are imputed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkSpec {
    pub label: String,
    pub from: String,
    pub to: String,
    pub length_m: f64,
    pub lanes: u32,
    pub vf: Option<f64>,
    pub vb: Option<f64>,
    pub kjam: Option<f64>,
    pub qmax: Option<f64>,
    pub road_type: Option<String>,
}

impl LinkSpec {
    pub fn new(label: impl Into<String>, from: impl Into<String>, to: impl Into<String>, length_m: f64) -> Self {
        LinkSpec {
            label: label.into(),
            from: from.into(),
            to: to.into(),
            length_m,
            lanes: 1,
            ..Default::default()
        }
    }

    pub fn lanes(mut self, lanes: u32) -> Self {
        self.lanes = lanes;
        self
    }

    pub fn vf(mut self, vf: f64) -> Self {
        self.vf = Some(vf);
        self
    }

    pub fn vb(mut self, vb: f64) -> Self {
        self.vb = Some(vb);
        self
    }

    pub fn kjam(mut self, kjam: f64) -> Self {
        self.kjam = Some(kjam);
        self
    }

    pub fn qmax(mut self, qmax: f64) -> Self {
        self.qmax = Some(qmax);
        self
    }

    pub fn road_type(mut self, road_type: impl Into<String>) -> Self {
        self.road_type = Some(road_type.into());
        self
    }
}

#[derive(Clone, Debug, Default)]
pub struct RoadNetwork {
    nodes: Vec<Node>,
    links: Vec<Link>,
    node_index: HashMap<String, NodeId>,
    link_index: HashMap<String, LinkId>,
    out_links: Vec<Vec<LinkId>>,
    in_links: Vec<Vec<LinkId>>,
}

impl RoadNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, label: impl Into<String>, x: f64, y: f64) -> Result<NodeId> {
        let label = label.into();
        if self.node_index.contains_key(&label) {
            return Err(Error::Invalid(format!("duplicate node id {label:?}")));
        }
        if x.is_infinite() || y.is_infinite() || x.is_nan() != y.is_nan() {
            return Err(Error::Invalid(format!("node {label:?} has invalid coordinates")));
        }
        let id = NodeId::from_index(self.nodes.len());
        self.node_index.insert(label.clone(), id);
        self.nodes.push(Node { label, x, y });
        self.out_links.push(Vec::new());
        self.in_links.push(Vec::new());
        Ok(id)
    }

    /// Validates a link, imputes missing flow parameters and adds it.
    pub fn add_link(&mut self, spec: LinkSpec) -> Result<LinkId> {
        let from = self
            .node_id(&spec.from)
            .ok_or_else(|| Error::Invalid(format!("link {:?} references unknown node {:?}", spec.label, spec.from)))?;
        let to = self
            .node_id(&spec.to)
            .ok_or_else(|| Error::Invalid(format!("link {:?} references unknown node {:?}", spec.label, spec.to)))?;
        if self.link_index.contains_key(&spec.label) {
            return Err(Error::Invalid(format!("duplicate link id {:?}", spec.label)));
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(v)
            } else {
                Err(Error::Invalid(format!(
                    "link {:?}: {name} must be positive, got {v}",
                    spec.label
                )))
            }
        };
        let length_m = positive("length", spec.length_m)?;
        if spec.lanes == 0 {
            return Err(Error::Invalid(format!(
                "link {:?}: lanes must be at least 1",
                spec.label
            )));
        }
        let vf = positive(
            "free-flow speed",
            spec.vf.unwrap_or_else(|| imputed_speed(spec.road_type.as_deref())),
        )?;
        let vb = positive("backward wave speed", spec.vb.unwrap_or(DEFAULT_WAVE_SPEED_RATIO * vf))?;
        if vb > vf {
            return Err(Error::Invalid(format!(
                "link {:?}: backward wave speed {vb} exceeds free-flow speed {vf}",
                spec.label
            )));
        }
        let kjam = positive("jam density", spec.kjam.unwrap_or(DEFAULT_JAM_DENSITY))?;
        let qmax = positive(
            "capacity",
            spec.qmax
                .unwrap_or(spec.lanes as f64 * DEFAULT_LANE_CAPACITY_VPH / 3600.0),
        )?;

        let id = LinkId::from_index(self.links.len());
        self.link_index.insert(spec.label.clone(), id);
        self.out_links[from.index()].push(id);
        self.in_links[to.index()].push(id);
        self.links.push(Link {
            label: spec.label,
            from,
            to,
            length_m,
            lanes: spec.lanes,
            vf,
            vb,
            kjam,
            qmax,
            road_type: spec.road_type,
        });
        Ok(id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.index()]
    }

    pub fn link(&self, id: LinkId) -> &Link {
        &self.links[id.index()]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.nodes.len()).map(NodeId::from_index)
    }

    pub fn link_ids(&self) -> impl Iterator<Item = LinkId> + '_ {
        (0..self.links.len()).map(LinkId::from_index)
    }

    pub fn node_id(&self, label: &str) -> Option<NodeId> {
        self.node_index.get(label).copied()
    }

    pub fn link_id(&self, label: &str) -> Option<LinkId> {
        self.link_index.get(label).copied()
    }

    /// Outgoing links of a node, in increasing link id order.
    pub fn out_links(&self, node: NodeId) -> &[LinkId] {
        &self.out_links[node.index()]
    }

    pub fn in_links(&self, node: NodeId) -> &[LinkId] {
        &self.in_links[node.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imputes_missing_parameters() {
        let mut net = RoadNetwork::new();
        net.add_node("a", 0.0, 0.0).unwrap();
        net.add_node("b", 100.0, 0.0).unwrap();
        let l = net.add_link(LinkSpec::new("ab", "a", "b", 100.0).lanes(2)).unwrap();
        let link = net.link(l);
        assert_eq!(link.vf, DEFAULT_FREE_FLOW_SPEED);
        assert!((link.vb - 0.35 * DEFAULT_FREE_FLOW_SPEED).abs() < 1e-12);
        assert_eq!(link.kjam, 150.0);
        assert!((link.qmax - 1.0).abs() < 1e-12);
        assert!((link.storage() - 30.0).abs() < 1e-12);
    }

    #[test]
    fn road_type_table() {
        assert!((imputed_speed(Some("motorway")) - 120.0 / 3.6).abs() < 1e-12);
        assert_eq!(imputed_speed(Some("footpath")), DEFAULT_FREE_FLOW_SPEED);
        assert_eq!(imputed_speed(None), DEFAULT_FREE_FLOW_SPEED);
    }

    #[test]
    fn rejects_bad_links() {
        let mut net = RoadNetwork::new();
        net.add_node("a", 0.0, 0.0).unwrap();
        net.add_node("b", 1.0, 0.0).unwrap();
        assert!(net.add_link(LinkSpec::new("x", "a", "z", 10.0)).is_err());
        assert!(net.add_link(LinkSpec::new("x", "a", "b", 0.0)).is_err());
        assert!(net.add_link(LinkSpec::new("x", "a", "b", 10.0).vf(-1.0)).is_err());
        assert!(net
            .add_link(LinkSpec::new("x", "a", "b", 10.0).vf(5.0).vb(6.0))
            .is_err());
        assert!(net.add_node("a", 0.0, 0.0).is_err());
    }

    #[test]
    fn equilibrium_speed_is_triangular() {
        let mut net = RoadNetwork::new();
        net.add_node("a", 0.0, 0.0).unwrap();
        net.add_node("b", 1.0, 0.0).unwrap();
        let l = net
            .add_link(LinkSpec::new("ab", "a", "b", 100.0).vf(10.0).vb(3.5).kjam(150.0))
            .unwrap();
        let link = net.link(l);
        assert_eq!(link.equilibrium_speed(0.0), 10.0);
        assert_eq!(link.equilibrium_speed(150.0), 0.0);
        assert!((link.equilibrium_speed(75.0) - 3.5).abs() < 1e-12);
    }
}
