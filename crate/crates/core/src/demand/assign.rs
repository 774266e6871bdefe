use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path as FsPath;

use super::path::{distances_to, trace_path};
use super::OdRecord;
use crate::error::{Error, Result};
use crate::io::table::Table;
use crate::network::{Link, LinkId, NodeId, RegionAssignment, RegionId, RoadNetwork};
use crate::packet::{Packet, PacketId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PathId(pub u32);

impl PathId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionSegment {
    pub region: RegionId,
    pub distance_m: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub links: Vec<LinkId>,
    pub length_m: f64,
    /// Run-length projection of the links onto regions; empty until
    /// [`PathSet::project`] runs.
    pub region_segments: Vec<RegionSegment>,
}

impl Path {
    pub fn origin(&self, net: &RoadNetwork) -> NodeId {
        net.link(self.links[0]).from
    }

    pub fn destination(&self, net: &RoadNetwork) -> NodeId {
        net.link(*self.links.last().expect("non-empty path")).to
    }
}

/// Run-length encoding of the regions a link sequence passes through, with
/// the length driven inside each run.
pub fn project_to_regions(net: &RoadNetwork, links: &[LinkId], regions: &RegionAssignment) -> Vec<RegionSegment> {
    let mut out: Vec<RegionSegment> = Vec::new();
    for &l in links {
        let region = regions.link_region(net, l);
        let len = net.link(l).length_m;
        match out.last_mut() {
            Some(seg) if seg.region == region => seg.distance_m += len,
            _ => out.push(RegionSegment {
                region,
                distance_m: len,
            }),
        }
    }
    out
}

/// Interned paths; equal link sequences share one id.
#[derive(Clone, Debug, Default)]
pub struct PathSet {
    paths: Vec<Path>,
    index: HashMap<Vec<LinkId>, PathId>,
}

impl PathSet {
    pub fn intern(&mut self, net: &RoadNetwork, links: Vec<LinkId>) -> PathId {
        if let Some(&id) = self.index.get(&links) {
            return id;
        }
        let id = PathId(self.paths.len() as u32);
        let length_m = links.iter().map(|&l| net.link(l).length_m).sum();
        self.index.insert(links.clone(), id);
        self.paths.push(Path {
            links,
            length_m,
            region_segments: Vec::new(),
        });
        id
    }

    pub fn get(&self, id: PathId) -> &Path {
        &self.paths[id.index()]
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (PathId, &Path)> {
        self.paths.iter().enumerate().map(|(i, p)| (PathId(i as u32), p))
    }

    pub fn project(&mut self, net: &RoadNetwork, regions: &RegionAssignment) {
        for p in &mut self.paths {
            p.region_segments = project_to_regions(net, &p.links, regions);
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Assignment {
    pub packets: Vec<Packet>,
    pub paths: PathSet,
    /// Records that could not be routed: (index into the demand slice, vehicles).
    pub excluded: Vec<(usize, f64)>,
}

impl Assignment {
    pub fn assigned_vehicles(&self) -> f64 {
        self.packets.iter().map(|p| p.size).fold(0.0, |a, x| a + x)
    }

    pub fn excluded_vehicles(&self) -> f64 {
        self.excluded.iter().map(|e| e.1).fold(0.0, |a, x| a + x)
    }
}

/// Travel time of a link given the volume already assigned to it.
pub trait LinkCostModel {
    fn cost(&self, link: &Link, volume: f64) -> f64;
}

/// Free-flow travel time, ignoring volume.
#[derive(Clone, Copy, Debug, Default)]
pub struct FreeFlow;

impl LinkCostModel for FreeFlow {
    fn cost(&self, link: &Link, _volume: f64) -> f64 {
        link.free_flow_time()
    }
}

/// BPR volume-delay function `t0 * (1 + alpha * (V / C)^beta)` with
/// `C = qmax * 3600 * period_hours`.
#[derive(Clone, Copy, Debug)]
pub struct Bpr {
    pub alpha: f64,
    pub beta: f64,
    pub period_hours: f64,
}

impl Bpr {
    pub fn new(period_hours: f64) -> Self {
        Bpr {
            alpha: 0.15,
            beta: 4.0,
            period_hours,
        }
    }
}

impl LinkCostModel for Bpr {
    fn cost(&self, link: &Link, volume: f64) -> f64 {
        let capacity = link.qmax * 3600.0 * self.period_hours;
        link.free_flow_time() * (1.0 + self.alpha * (volume / capacity).powf(self.beta))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignmentMethod {
    Aon,
    Incremental { n_slices: u32 },
}

/// All-or-nothing: every record becomes one packet on the free-flow shortest
/// path. Equal OD pairs get the same path whatever their departure time.
pub fn assign_aon(net: &RoadNetwork, demand: &[OdRecord]) -> Assignment {
    route_slices(net, demand, 1, &FreeFlow)
}

/// Incremental loading: each record is split into `n_slices` equal packets;
/// slice k is routed on shortest paths under costs of the volumes of slices
/// before it.
pub fn assign_incremental(
    net: &RoadNetwork,
    demand: &[OdRecord],
    n_slices: u32,
    cost_model: &dyn LinkCostModel,
) -> Result<Assignment> {
    if n_slices == 0 {
        return Err(Error::Config("n_slices must be at least 1".into()));
    }
    Ok(route_slices(net, demand, n_slices, cost_model))
}

pub fn assign(
    net: &RoadNetwork,
    demand: &[OdRecord],
    method: AssignmentMethod,
    period_hours: f64,
) -> Result<Assignment> {
    match method {
        AssignmentMethod::Aon => Ok(assign_aon(net, demand)),
        AssignmentMethod::Incremental { n_slices } => {
            assign_incremental(net, demand, n_slices, &Bpr::new(period_hours))
        }
    }
}

fn route_slices(net: &RoadNetwork, demand: &[OdRecord], n_slices: u32, cost_model: &dyn LinkCostModel) -> Assignment {
    let mut paths = PathSet::default();
    let mut volume = vec![0.0; net.link_count()];
    // slice_paths[k][record]
    let mut slice_paths: Vec<Vec<Option<PathId>>> = Vec::with_capacity(n_slices as usize);

    for _ in 0..n_slices {
        let costs: Vec<f64> = net
            .links()
            .iter()
            .zip(&volume)
            .map(|(l, &v)| cost_model.cost(l, v))
            .collect();
        let cost = |l: LinkId| costs[l.index()];
        let mut trees: HashMap<NodeId, Vec<f64>> = HashMap::new();
        let mut routes: HashMap<(NodeId, NodeId), Option<PathId>> = HashMap::new();
        let mut this_slice = Vec::with_capacity(demand.len());
        for r in demand {
            let key = (r.origin, r.destination);
            let id = match routes.get(&key) {
                Some(&id) => id,
                None => {
                    let dist = trees
                        .entry(r.destination)
                        .or_insert_with(|| distances_to(net, r.destination, &cost));
                    let id =
                        trace_path(net, r.origin, r.destination, dist, &cost).map(|links| paths.intern(net, links));
                    routes.insert(key, id);
                    id
                }
            };
            this_slice.push(id);
        }
        let share = 1.0 / n_slices as f64;
        for (r, id) in demand.iter().zip(&this_slice) {
            if let Some(id) = id {
                for &l in &paths.get(*id).links {
                    volume[l.index()] += r.count * share;
                }
            }
        }
        slice_paths.push(this_slice);
    }

    let mut packets = Vec::with_capacity(demand.len() * n_slices as usize);
    let mut excluded = Vec::new();
    for (i, r) in demand.iter().enumerate() {
        if slice_paths[0][i].is_none() {
            log::warn!(
                "no path from {} to {}; dropping {} vehicles",
                net.node(r.origin).label,
                net.node(r.destination).label,
                r.count
            );
            excluded.push((i, r.count));
            continue;
        }
        let size = r.count / n_slices as f64;
        for slice in &slice_paths {
            let path = slice[i].expect("reachability does not depend on costs");
            let id = PacketId(packets.len() as u64);
            packets.push(Packet::new(id, path, size, r.depart_time));
        }
    }
    if !excluded.is_empty() {
        log::warn!("{} OD records unreachable and excluded", excluded.len());
    }
    Assignment {
        packets,
        paths,
        excluded,
    }
}

/// Writes `packet_id,depart_time_s,size,link_ids` with `;`-separated link labels.
pub fn write_paths_csv(path: &FsPath, net: &RoadNetwork, assignment: &Assignment) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "packet_id,depart_time_s,size,link_ids").map_err(io)?;
    for p in &assignment.packets {
        let links: Vec<&str> = assignment
            .paths
            .get(p.path)
            .links
            .iter()
            .map(|&l| net.link(l).label.as_str())
            .collect();
        writeln!(w, "{},{:.6},{:.6},{}", p.id, p.depart_time, p.size, links.join(";")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads packets back from a paths file for replay.
pub fn read_paths_csv(path: &FsPath, net: &RoadNetwork) -> Result<Assignment> {
    let table = Table::read(path)?;
    table.require(&["packet_id", "depart_time_s", "size", "link_ids"])?;
    let mut out = Assignment::default();
    for row in table.rows() {
        let id = row
            .str("packet_id")?
            .parse::<u64>()
            .map_err(|_| row.error("packet_id must be an unsigned integer"))?;
        let size = row.f64("size")?;
        if size <= 0.0 {
            return Err(row.error("size must be positive"));
        }
        let mut links = Vec::new();
        for label in row.str("link_ids")?.split(';') {
            let l = net
                .link_id(label.trim())
                .ok_or_else(|| row.error(format!("unknown link {label:?}")))?;
            if let Some(&prev) = links.last() {
                if net.link(prev).to != net.link(l).from {
                    return Err(row.error(format!("link {label:?} does not continue the path")));
                }
            }
            links.push(l);
        }
        let pid = out.paths.intern(net, links);
        out.packets
            .push(Packet::new(PacketId(id), pid, size, row.f64("depart_time_s")?));
    }
    out.packets
        .sort_by(|a, b| a.depart_time.total_cmp(&b.depart_time).then(a.id.cmp(&b.id)));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::LinkSpec;

    fn diamond() -> RoadNetwork {
        let mut n = RoadNetwork::new();
        for id in ["A", "B", "C", "D"] {
            n.add_node(id, 0.0, 0.0).unwrap();
        }
        n.add_link(LinkSpec::new("AB", "A", "B", 50.0).vf(10.0)).unwrap();
        n.add_link(LinkSpec::new("BD", "B", "D", 50.0).vf(10.0)).unwrap();
        n.add_link(LinkSpec::new("AC", "A", "C", 40.0).vf(10.0)).unwrap();
        n.add_link(LinkSpec::new("CD", "C", "D", 70.0).vf(10.0)).unwrap();
        n
    }

    fn od(o: u32, d: u32, t: f64, c: f64) -> OdRecord {
        OdRecord {
            origin: NodeId(o),
            destination: NodeId(d),
            depart_time: t,
            count: c,
        }
    }

    #[test]
    fn same_od_same_route() {
        let n = diamond();
        let a = assign_aon(&n, &[od(0, 3, 7.0 * 3600.0, 3.0), od(0, 3, 18.0 * 3600.0, 5.0)]);
        assert_eq!(a.packets.len(), 2);
        assert_eq!(a.packets[0].path, a.packets[1].path);
        assert_eq!(a.paths.get(a.packets[0].path).links, vec![LinkId(0), LinkId(1)]);
    }

    #[test]
    fn empty_demand() {
        let a = assign_aon(&diamond(), &[]);
        assert!(a.packets.is_empty());
        assert!(a.excluded.is_empty());
    }

    #[test]
    fn all_on_shortest_route() {
        let n = diamond();
        let a = assign_aon(&n, &[od(0, 3, 0.0, 100.0)]);
        assert_eq!(a.assigned_vehicles(), 100.0);
        let cost = |l: LinkId| n.link(l).free_flow_time();
        let sp = crate::demand::shortest_path(&n, NodeId(0), NodeId(3), &cost).unwrap();
        assert_eq!(a.paths.get(a.packets[0].path).links, sp);
    }

    #[test]
    fn unreachable_excluded_and_conserved() {
        let n = diamond();
        let d = [od(0, 3, 0.0, 4.0), od(3, 0, 0.0, 2.5)];
        let a = assign_aon(&n, &d);
        assert_eq!(a.excluded, vec![(1, 2.5)]);
        assert_eq!(a.assigned_vehicles() + a.excluded_vehicles(), 6.5);
    }

    #[test]
    fn incremental_one_slice_equals_aon() {
        let n = diamond();
        let d = [od(0, 3, 0.0, 4.0), od(1, 3, 5.0, 2.0), od(0, 3, 9.0, 1.0)];
        let aon = assign_aon(&n, &d);
        let inc = assign_incremental(&n, &d, 1, &Bpr::new(1.0)).unwrap();
        assert_eq!(aon.packets, inc.packets);
        for p in &aon.packets {
            assert_eq!(aon.paths.get(p.path), inc.paths.get(p.path));
        }
    }

    #[test]
    fn parallel_links_share_slices() {
        let mut n = RoadNetwork::new();
        n.add_node("A", 0.0, 0.0).unwrap();
        n.add_node("B", 0.0, 0.0).unwrap();
        n.add_link(LinkSpec::new("top", "A", "B", 100.0).vf(10.0).qmax(0.5))
            .unwrap();
        n.add_link(LinkSpec::new("bottom", "A", "B", 100.0).vf(10.0).qmax(0.5))
            .unwrap();
        // After slice 1 (900 veh on "top"): t = 10 * (1 + 0.15 * (900/1800)^4) > 10 on "bottom".
        let a = assign_incremental(&n, &[od(0, 1, 0.0, 1800.0)], 2, &Bpr::new(1.0)).unwrap();
        let routes: Vec<_> = a.packets.iter().map(|p| a.paths.get(p.path).links[0]).collect();
        assert_eq!(routes, vec![LinkId(0), LinkId(1)]);
        assert_eq!(a.assigned_vehicles(), 1800.0);
    }

    #[test]
    fn incremental_conserves() {
        let n = diamond();
        let d = [od(0, 3, 0.0, 10.0), od(2, 3, 1.0, 7.0)];
        let a = assign_incremental(&n, &d, 4, &Bpr::new(1.0)).unwrap();
        assert_eq!(a.packets.len(), 8);
        assert!((a.assigned_vehicles() - 17.0).abs() < 1e-12);
    }

    #[test]
    fn run_length_projection() {
        let mut n = RoadNetwork::new();
        for i in 0..5 {
            n.add_node(format!("n{i}"), 0.0, 0.0).unwrap();
        }
        let mut links = Vec::new();
        for i in 0..4 {
            links.push(
                n.add_link(LinkSpec::new(
                    format!("l{i}"),
                    format!("n{i}"),
                    format!("n{}", i + 1),
                    100.0,
                ))
                .unwrap(),
            );
        }
        let regions = RegionAssignment::from_labels(&["R", "R", "S", "R", "R"]);
        let segs = project_to_regions(&n, &links, &regions);
        let got: Vec<_> = segs.iter().map(|s| (regions.label(s.region), s.distance_m)).collect();
        assert_eq!(got, vec![("R", 200.0), ("S", 100.0), ("R", 100.0)]);
        let all_r = RegionAssignment::single(5);
        assert_eq!(project_to_regions(&n, &links[..3], &all_r).len(), 1);
        assert_eq!(project_to_regions(&n, &links[..3], &all_r)[0].distance_m, 300.0);
    }

    #[test]
    fn paths_file_round_trip() {
        let n = diamond();
        let a = assign_aon(&n, &[od(0, 3, 0.0, 4.0), od(1, 3, 5.0, 2.0)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("paths.csv");
        write_paths_csv(&p, &n, &a).unwrap();
        let b = read_paths_csv(&p, &n).unwrap();
        assert_eq!(a.packets.len(), b.packets.len());
        for (x, y) in a.packets.iter().zip(&b.packets) {
            assert_eq!(a.paths.get(x.path).links, b.paths.get(y.path).links);
            assert_eq!(x.size, y.size);
        }
    }
}
