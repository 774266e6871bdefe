use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use super::{LinkId, NodeId, RegionId, RoadNetwork, UnderwoodMfd, DEFAULT_FREE_FLOW_SPEED};
use crate::error::{Error, Result};
use crate::io::table::Table;

/// Node to region map. Every node belongs to exactly one region; a link
/// belongs to the region of its upstream node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionAssignment {
    node_region: Vec<RegionId>,
    labels: Vec<String>,
}

impl RegionAssignment {
    /// Builds an assignment from dense per-node community indices. Region ids
    /// are renumbered by first appearance, labels are the new ids.
    pub fn from_communities(communities: &[usize]) -> Self {
        let mut remap: HashMap<usize, RegionId> = HashMap::new();
        let node_region = communities
            .iter()
            .map(|&c| {
                let next = RegionId::from_index(remap.len());
                *remap.entry(c).or_insert(next)
            })
            .collect();
        let labels = (0..remap.len()).map(|i| i.to_string()).collect();
        RegionAssignment { node_region, labels }
    }

    /// Builds an assignment from one region label per node.
    pub fn from_labels<S: AsRef<str>>(labels_per_node: &[S]) -> Self {
        let mut index: HashMap<String, RegionId> = HashMap::new();
        let mut labels = Vec::new();
        let node_region = labels_per_node
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l.to_string()).or_insert_with(|| {
                    labels.push(l.to_string());
                    RegionId::from_index(labels.len() - 1)
                })
            })
            .collect();
        RegionAssignment { node_region, labels }
    }

    /// Everything in one region.
    pub fn single(node_count: usize) -> Self {
        Self::from_communities(&vec![0; node_count])
    }

    /// Each node its own region.
    pub fn singletons(node_count: usize) -> Self {
        Self::from_communities(&(0..node_count).collect::<Vec<_>>())
    }

    pub fn region_of(&self, node: NodeId) -> RegionId {
        self.node_region[node.index()]
    }

    pub fn link_region(&self, net: &RoadNetwork, link: LinkId) -> RegionId {
        self.region_of(net.link(link).from)
    }

    pub fn region_count(&self) -> usize {
        self.labels.len()
    }

    pub fn node_count(&self) -> usize {
        self.node_region.len()
    }

    pub fn label(&self, region: RegionId) -> &str {
        &self.labels[region.index()]
    }

    pub fn region_id(&self, label: &str) -> Option<RegionId> {
        self.labels.iter().position(|l| l == label).map(RegionId::from_index)
    }

    pub fn members(&self) -> Vec<Vec<NodeId>> {
        let mut out = vec![Vec::new(); self.labels.len()];
        for (i, r) in self.node_region.iter().enumerate() {
            out[r.index()].push(NodeId::from_index(i));
        }
        out
    }

    /// Reads `regions.csv` (`node_id,region_id`); every network node must appear once.
    pub fn read_csv(path: &Path, net: &RoadNetwork) -> Result<Self> {
        let table = Table::read(path)?;
        table.require(&["node_id", "region_id"])?;
        let mut per_node: Vec<Option<String>> = vec![None; net.node_count()];
        for row in table.rows() {
            let node = row.str("node_id")?;
            let id = net
                .node_id(node)
                .ok_or_else(|| row.error(format!("unknown node {node:?}")))?;
            if per_node[id.index()].is_some() {
                return Err(row.error(format!("node {node:?} assigned twice")));
            }
            per_node[id.index()] = Some(row.str("region_id")?.to_string());
        }
        let labels = per_node
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                l.ok_or_else(|| {
                    Error::Invalid(format!(
                        "{}: node {:?} has no region",
                        path.display(),
                        net.nodes()[i].label
                    ))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_labels(&labels))
    }

    pub fn write_csv(&self, path: &Path, net: &RoadNetwork) -> Result<()> {
        let mut body = String::from("node_id,region_id\n");
        for (node, r) in net.nodes().iter().zip(&self.node_region) {
            body.push_str(&format!("{},{}\n", node.label, self.labels[r.index()]));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: RegionId,
    pub label: String,
    pub nodes: Vec<NodeId>,
    /// Links whose upstream node lies in the region.
    pub links: Vec<LinkId>,
    pub mfd: UnderwoodMfd,
    /// Longest intra-region path segment, meters. Set after assignment.
    pub longest_path_length: f64,
}

/// Regions with their speed functions.
#[derive(Clone, Debug, PartialEq)]
pub struct Regions {
    pub assignment: RegionAssignment,
    pub regions: Vec<Region>,
}

impl Regions {
    /// Attaches MFDs to an assignment. Regions missing from `mfds` get
    /// [`Regions::default_mfd`].
    pub fn new(net: &RoadNetwork, assignment: RegionAssignment, mfds: &HashMap<String, UnderwoodMfd>) -> Result<Self> {
        if assignment.node_count() != net.node_count() {
            return Err(Error::Invalid(format!(
                "region assignment covers {} nodes, network has {}",
                assignment.node_count(),
                net.node_count()
            )));
        }
        let members = assignment.members();
        let mut links = vec![Vec::new(); assignment.region_count()];
        for l in net.link_ids() {
            links[assignment.link_region(net, l).index()].push(l);
        }
        let regions = members
            .into_iter()
            .zip(links)
            .enumerate()
            .map(|(i, (nodes, links))| {
                let id = RegionId::from_index(i);
                let label = assignment.label(id).to_string();
                let mfd = match mfds.get(&label) {
                    Some(m) => *m,
                    None => Self::default_mfd(net, &links),
                };
                Region {
                    id,
                    label,
                    nodes,
                    links,
                    mfd,
                    longest_path_length: 0.0,
                }
            })
            .collect();
        Ok(Regions { assignment, regions })
    }

    /// MFD implied by the links' fundamental diagrams: length-weighted mean
    /// free-flow speed, and a critical accumulation at which the curve's peak
    /// production `n_c * v_f / e` equals the links' summed capacity times length.
    pub fn default_mfd(net: &RoadNetwork, links: &[LinkId]) -> UnderwoodMfd {
        let total_len: f64 = links.iter().map(|&l| net.link(l).length_m).sum();
        if total_len <= 0.0 {
            return UnderwoodMfd {
                vf: DEFAULT_FREE_FLOW_SPEED,
                n_critical: 1.0,
            };
        }
        let vf = links
            .iter()
            .map(|&l| net.link(l).vf * net.link(l).length_m)
            .sum::<f64>()
            / total_len;
        let n_critical = std::f64::consts::E
            * links
                .iter()
                .map(|&l| net.link(l).qmax * net.link(l).length_m)
                .sum::<f64>()
            / vf;
        UnderwoodMfd { vf, n_critical }
    }

    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }

    pub fn get(&self, id: RegionId) -> &Region {
        &self.regions[id.index()]
    }

    pub fn link_region(&self, net: &RoadNetwork, link: LinkId) -> RegionId {
        self.assignment.link_region(net, link)
    }
}
