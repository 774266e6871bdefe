//! Time-of-day origin-destination demand and its assignment to paths.

mod assign;
mod path;

use std::path::Path as FsPath;

pub use assign::{
    assign, assign_aon, assign_incremental, project_to_regions, read_paths_csv, write_paths_csv, Assignment,
    AssignmentMethod, Bpr, FreeFlow, LinkCostModel, Path, PathId, PathSet, RegionSegment,
};
pub use path::{distances_to, shortest_path, trace_path};

use crate::error::{Error, Result};
use crate::io::table::Table;
use crate::network::{NodeId, RoadNetwork};

#[derive(Clone, Debug, PartialEq)]
pub struct OdRecord {
    pub origin: NodeId,
    pub destination: NodeId,
    /// Seconds since the start of the simulated day.
    pub depart_time: f64,
    /// Vehicles, may be fractional.
    pub count: f64,
}

/// Reads `demand.csv` (`origin_node,destination_node,depart_time_s,count`),
/// returning records sorted by departure time (stable in file order).
pub fn load_demand(path: &FsPath, net: &RoadNetwork, horizon: f64) -> Result<Vec<OdRecord>> {
    let table = Table::read(path)?;
    table.require(&["origin_node", "destination_node", "depart_time_s", "count"])?;
    let mut out = Vec::with_capacity(table.len());
    for row in table.rows() {
        let node = |col: &str| -> Result<NodeId> {
            let label = row.str(col)?;
            net.node_id(label)
                .ok_or_else(|| row.error(format!("unknown node {label:?} in {col}")))
        };
        let origin = node("origin_node")?;
        let destination = node("destination_node")?;
        if origin == destination {
            return Err(row.error("origin equals destination"));
        }
        let depart_time = row.f64("depart_time_s")?;
        if depart_time < 0.0 || depart_time >= horizon {
            return Err(row.error(format!("departure time {depart_time} outside [0, {horizon})")));
        }
        let count = row.f64("count")?;
        if count <= 0.0 {
            return Err(row.error(format!("count must be positive, got {count}")));
        }
        out.push(OdRecord {
            origin,
            destination,
            depart_time,
            count,
        });
    }
    out.sort_by(|a, b| a.depart_time.total_cmp(&b.depart_time));
    Ok(out)
}

/// Multiplies every record's count by `factor`.
pub fn scale_demand(records: &mut [OdRecord], factor: f64) -> Result<()> {
    if !(factor.is_finite() && factor > 0.0) {
        return Err(Error::Config(format!("demand scale must be positive, got {factor}")));
    }
    for r in records {
        r.count *= factor;
    }
    Ok(())
}

pub fn total_vehicles(records: &[OdRecord]) -> f64 {
    records.iter().map(|r| r.count).fold(0.0, |a, x| a + x)
}
