use std::path::Path;

use super::{LinkSpec, RoadNetwork};
use crate::error::{Error, Result};
use crate::io::table::Table;

/// Loads `nodes.csv` (`node_id,x,y`) and `links.csv`
/// (`link_id,from_node,to_node,length_m,lanes[,vf_mps,vb_mps,kjam_veh_per_lane_km,qmax_veh_per_s,road_type]`).
pub fn load_network(nodes_file: &Path, links_file: &Path) -> Result<RoadNetwork> {
    let mut net = RoadNetwork::new();
    read_nodes_csv(&mut net, nodes_file)?;
    read_links_csv(&mut net, links_file)?;
    log::info!("loaded network: {} nodes, {} links", net.node_count(), net.link_count());
    Ok(net)
}

pub fn read_nodes_csv(net: &mut RoadNetwork, path: &Path) -> Result<()> {
    let table = Table::read(path)?;
    table.require(&["node_id", "x", "y"])?;
    for row in table.rows() {
        let label = row.str("node_id")?;
        // blank coordinates are allowed; only the GeoJSON export needs them
        let x = row.opt_f64("x")?.unwrap_or(f64::NAN);
        let y = row.opt_f64("y")?.unwrap_or(f64::NAN);
        net.add_node(label, x, y).map_err(|e| row.error(inner(e)))?;
    }
    Ok(())
}

pub fn read_links_csv(net: &mut RoadNetwork, path: &Path) -> Result<()> {
    let table = Table::read(path)?;
    table.require(&["link_id", "from_node", "to_node", "length_m"])?;
    for row in table.rows() {
        let lanes = match row.opt("lanes") {
            None => 1,
            Some(raw) => raw
                .parse::<u32>()
                .ok()
                .filter(|&l| l >= 1)
                .ok_or_else(|| row.error(format!("lanes must be a positive integer, got {raw:?}")))?,
        };
        let spec = LinkSpec {
            label: row.str("link_id")?.to_string(),
            from: row.str("from_node")?.to_string(),
            to: row.str("to_node")?.to_string(),
            length_m: row.f64("length_m")?,
            lanes,
            vf: row.opt_f64("vf_mps")?,
            vb: row.opt_f64("vb_mps")?,
            kjam: row.opt_f64("kjam_veh_per_lane_km")?,
            qmax: row.opt_f64("qmax_veh_per_s")?,
            road_type: row.opt("road_type").map(str::to_string),
        };
        net.add_link(spec).map_err(|e| row.error(inner(e)))?;
    }
    Ok(())
}

fn inner(e: Error) -> String {
    match e {
        Error::Invalid(msg) => msg,
        other => other.to_string(),
    }
}
