use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{SimConfig, Simulation};
use crate::demand::{assign, load_demand, read_paths_csv, scale_demand, Assignment};
use crate::error::{Error, Result};
use crate::io::Recorder;
use crate::network::{load_network, partition_network, read_mfd_csv, RegionAssignment, Regions};

/// Input and output locations of one run.
#[derive(Clone, Debug, Default)]
pub struct Scenario {
    pub config: PathBuf,
    /// Directory holding `nodes.csv`, `links.csv` and optionally
    /// `regions.csv` and `mfd.csv`.
    pub network: PathBuf,
    pub demand: PathBuf,
    pub out: PathBuf,
    /// Overrides `<network>/regions.csv`.
    pub regions: Option<PathBuf>,
    /// Overrides `<network>/mfd.csv`.
    pub mfd: Option<PathBuf>,
    /// Precomputed paths; skips assignment.
    pub paths: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub wall_time_s: f64,
    pub steps: u64,
    pub regions: usize,
    pub demand_veh: f64,
    pub excluded_veh: f64,
    pub departed_veh: f64,
    pub completed_veh: f64,
    pub completed_trips: usize,
    pub max_accumulation: f64,
    pub gridlock_events: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wall time        {:.3} s", self.wall_time_s)?;
        writeln!(f, "steps            {}", self.steps)?;
        writeln!(f, "regions          {}", self.regions)?;
        writeln!(
            f,
            "demand           {:.3} veh ({:.3} unroutable)",
            self.demand_veh, self.excluded_veh
        )?;
        writeln!(f, "departed         {:.3} veh", self.departed_veh)?;
        writeln!(
            f,
            "completed        {:.3} veh in {} trips",
            self.completed_veh, self.completed_trips
        )?;
        writeln!(f, "max accumulation {:.3} veh", self.max_accumulation)?;
        write!(f, "gridlock events  {}", self.gridlock_events)
    }
}

fn existing(explicit: &Option<PathBuf>, dir: &Path, name: &str) -> Option<PathBuf> {
    explicit
        .clone()
        .or_else(|| Some(dir.join(name)).filter(|p| p.is_file()))
}

/// Loads every input, runs to the horizon and writes the enabled outputs
/// plus `regions.csv` and `summary.json` to `scenario.out`.
pub fn run_scenario(scenario: &Scenario) -> Result<Summary> {
    let start = Instant::now();
    let config = SimConfig::load(&scenario.config)?;
    let net = load_network(&scenario.network.join("nodes.csv"), &scenario.network.join("links.csv"))?;

    let assignment = match existing(&scenario.regions, &scenario.network, "regions.csv") {
        Some(p) => RegionAssignment::read_csv(&p, &net)?,
        None => {
            log::info!("no regions.csv, partitioning {} nodes", net.node_count());
            partition_network(&net, &config.partition_params())?
        }
    };
    let mfds = match existing(&scenario.mfd, &scenario.network, "mfd.csv") {
        Some(p) => read_mfd_csv(&p)?,
        None => HashMap::new(),
    };
    let regions = Regions::new(&net, assignment, &mfds)?;

    let mut demand = load_demand(&scenario.demand, &net, config.horizon_s)?;
    scale_demand(&mut demand, config.demand_scale)?;
    let routed: Assignment = match &scenario.paths {
        Some(p) => read_paths_csv(p, &net)?,
        None => assign(&net, &demand, config.assignment_method(), config.period_hours())?,
    };
    if !routed.excluded.is_empty() {
        log::warn!(
            "{} demand records ({:.3} veh) have no path and were dropped",
            routed.excluded.len(),
            routed.excluded_vehicles()
        );
    }
    let excluded_veh = routed.excluded_vehicles();

    std::fs::create_dir_all(&scenario.out).map_err(|e| Error::io(&scenario.out, e))?;
    regions.assignment.write_csv(&scenario.out.join("regions.csv"), &net)?;
    let recorder = Recorder::create(&scenario.out, &config.outputs, config.dt_s)?;
    let mut sim = Simulation::new(config, net, regions, routed)?;
    sim.set_recorder(recorder);
    sim.run()?;
    sim.finish_recording()?;
    if sim.not_departed() > 0.0 {
        log::warn!("{:.3} veh never entered the network", sim.not_departed());
    }

    let summary = Summary {
        wall_time_s: start.elapsed().as_secs_f64(),
        steps: sim.step_count(),
        regions: sim.regions().len(),
        demand_veh: sim.total_demand() + excluded_veh,
        excluded_veh,
        departed_veh: sim.departed(),
        completed_veh: sim.completed(),
        completed_trips: sim.completions().len(),
        max_accumulation: sim.max_accumulation(),
        gridlock_events: sim.gridlock_events().len(),
    };
    let path = scenario.out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::Invalid(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
