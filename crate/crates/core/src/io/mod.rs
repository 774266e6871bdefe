//! Simulation outputs: trajectories, link volumes, region accumulation,
//! gridlock reports and a GeoJSON layer for map viewers.
//!
//! Floats are written with six decimals and timestamps as whole seconds, so
//! identical runs produce identical bytes.

mod geojson;
pub(crate) mod table;

pub use geojson::{export_geojson, series_from_volumes, write_geojson, LinkSeries};

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::engine::{LinkState, OutputConfig, Simulation};
use crate::error::{Error, Result};
use crate::network::RegionId;
use table::Table;

pub const TRAJECTORIES_FILE: &str = "trajectories.csv";
pub const LINK_VOLUMES_FILE: &str = "link_volumes.csv";
pub const REGION_ACCUMULATION_FILE: &str = "region_accumulation.csv";
pub const GRIDLOCK_FILE: &str = "gridlock.csv";
pub const GEOJSON_FILE: &str = "network.geojson";

/// Six decimals, with negative zero printed as zero.
pub fn fmt6(x: f64) -> String {
    let s = format!("{x:.6}");
    if s == "-0.000000" {
        "0.000000".to_string()
    } else {
        s
    }
}

fn fmt_time(t: f64) -> i64 {
    t.round() as i64
}

struct CsvOut {
    path: PathBuf,
    w: BufWriter<File>,
}

impl CsvOut {
    fn create(dir: &Path, name: &str, header: &str) -> Result<Self> {
        let path = dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = CsvOut {
            path,
            w: BufWriter::new(file),
        };
        out.line(format_args!("{header}"))?;
        Ok(out)
    }

    fn line(&mut self, args: std::fmt::Arguments<'_>) -> Result<()> {
        self.w
            .write_fmt(args)
            .and_then(|_| self.w.write_all(b"\n"))
            .map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Per-link time bins of density and speed, averaged over steps.
#[derive(Clone, Debug)]
struct Bins {
    steps_per_bin: u64,
    density: Vec<Vec<f64>>,
    speed: Vec<Vec<f64>>,
    acc_density: Vec<f64>,
    acc_speed: Vec<f64>,
    acc_steps: u64,
}

/// Streams enabled outputs to a directory during a run.
pub struct Recorder {
    dir: PathBuf,
    config: OutputConfig,
    dt: f64,
    volumes: Option<CsvOut>,
    volume_steps: u64,
    outflow_acc: Vec<f64>,
    trajectories: Option<CsvOut>,
    trajectory_steps: u64,
    accumulation: Option<CsvOut>,
    accumulation_steps: u64,
    bins: Option<Bins>,
}

impl Recorder {
    /// Creates the output directory and opens the enabled files.
    pub fn create(dir: &Path, config: &OutputConfig, dt: f64) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let steps = |s: f64| ((s / dt).round() as u64).max(1);
        Ok(Recorder {
            dir: dir.to_path_buf(),
            config: config.clone(),
            dt,
            volumes: config
                .link_volumes
                .then(|| {
                    CsvOut::create(
                        dir,
                        LINK_VOLUMES_FILE,
                        "t_s,link_id,occupancy_veh,density_veh_lane_km,outflow_veh",
                    )
                })
                .transpose()?,
            volume_steps: steps(config.volume_stride_s),
            outflow_acc: Vec::new(),
            trajectories: config
                .trajectories
                .then(|| {
                    CsvOut::create(
                        dir,
                        TRAJECTORIES_FILE,
                        "packet_id,parent_id,t_s,element_type,element_id,position,speed_mps",
                    )
                })
                .transpose()?,
            trajectory_steps: steps(config.trajectory_stride_s),
            accumulation: config
                .region_accumulation
                .then(|| {
                    CsvOut::create(
                        dir,
                        REGION_ACCUMULATION_FILE,
                        "t_s,region_id,accumulation_veh,speed_mps",
                    )
                })
                .transpose()?,
            accumulation_steps: steps(config.accumulation_stride_s),
            bins: config.geojson.then(|| Bins {
                steps_per_bin: steps(config.geojson_bin_s),
                density: Vec::new(),
                speed: Vec::new(),
                acc_density: Vec::new(),
                acc_speed: Vec::new(),
                acc_steps: 0,
            }),
        })
    }

    /// Called by the engine after step `k`.
    pub fn record(&mut self, sim: &Simulation, k: u64) -> Result<()> {
        let done = k + 1;
        let t = fmt_time(done as f64 * self.dt);
        let net = sim.network();

        if let Some(out) = &mut self.volumes {
            if self.outflow_acc.len() != net.link_count() {
                self.outflow_acc = vec![0.0; net.link_count()];
            }
            for &l in sim.link_model_links() {
                self.outflow_acc[l.index()] += sim.link_flows(l).1;
            }
            if done.is_multiple_of(self.volume_steps) {
                for &l in sim.link_model_links() {
                    let s = sim.link_state(l).expect("link-model link");
                    let outflow = self.outflow_acc[l.index()] / self.volume_steps as f64;
                    self.outflow_acc[l.index()] = 0.0;
                    out.line(format_args!(
                        "{t},{},{},{},{}",
                        net.link(l).label,
                        fmt6(s.occupancy()),
                        fmt6(s.density()),
                        fmt6(outflow)
                    ))?;
                }
            }
        }

        if let Some(out) = &mut self.trajectories {
            if done.is_multiple_of(self.trajectory_steps) {
                write_trajectories(out, sim, t, done as f64 * self.dt)?;
            }
        }

        if let Some(out) = &mut self.accumulation {
            if done.is_multiple_of(self.accumulation_steps) {
                for r in &sim.regions().regions {
                    out.line(format_args!(
                        "{t},{},{},{}",
                        r.label,
                        fmt6(sim.region_accumulation(r.id)),
                        fmt6(sim.region_speed(r.id))
                    ))?;
                }
            }
        }

        if let Some(bins) = &mut self.bins {
            let n = net.link_count();
            if bins.acc_density.len() != n {
                bins.acc_density = vec![0.0; n];
                bins.acc_speed = vec![0.0; n];
                bins.density = vec![Vec::new(); n];
                bins.speed = vec![Vec::new(); n];
            }
            let (density, speed) = link_density_speed(sim);
            for i in 0..n {
                bins.acc_density[i] += density[i];
                bins.acc_speed[i] += speed[i];
            }
            bins.acc_steps += 1;
            if done.is_multiple_of(bins.steps_per_bin) || done == sim.total_steps() {
                close_bin(bins);
            }
        }
        Ok(())
    }

    /// Flushes the streams and writes the end-of-run files.
    pub fn finish(mut self, sim: &Simulation) -> Result<()> {
        for out in [&mut self.volumes, &mut self.trajectories, &mut self.accumulation]
            .into_iter()
            .flatten()
        {
            out.flush()?;
        }
        if self.config.gridlock_report {
            write_gridlock(&self.dir.join(GRIDLOCK_FILE), sim)?;
        }
        if let Some(mut bins) = self.bins.take() {
            if bins.acc_steps > 0 {
                close_bin(&mut bins);
            }
            let bin_s = bins.steps_per_bin as f64 * self.dt;
            let n_bins = bins.density.first().map_or(0, Vec::len);
            let series = LinkSeries {
                bin_s,
                starts: (0..n_bins).map(|i| i as f64 * bin_s).collect(),
                density: bins.density,
                speed: bins.speed,
            };
            let coords = sim.config().coordinates;
            let doc = export_geojson(sim.network(), coords, &series, None)?;
            write_geojson(&self.dir.join(GEOJSON_FILE), &doc)?;
        }
        Ok(())
    }
}

fn close_bin(bins: &mut Bins) {
    let n = bins.acc_steps.max(1) as f64;
    for i in 0..bins.acc_density.len() {
        bins.density[i].push(bins.acc_density[i] / n);
        bins.speed[i].push(bins.acc_speed[i] / n);
        bins.acc_density[i] = 0.0;
        bins.acc_speed[i] = 0.0;
    }
    bins.acc_steps = 0;
}

/// Density (veh/lane/km) and speed (m/s) of every link. Links inside
/// bathtub regions carry their region's average density and speed.
fn link_density_speed(sim: &Simulation) -> (Vec<f64>, Vec<f64>) {
    let net = sim.network();
    let mut density = vec![0.0; net.link_count()];
    let mut speed = vec![0.0; net.link_count()];
    let regions = sim.regions();
    let mut region_density = vec![0.0; regions.len()];
    let mut region_speed = vec![0.0; regions.len()];
    for r in &regions.regions {
        if let Some(s) = sim.region_state(r.id) {
            let lane_km: f64 = r
                .links
                .iter()
                .map(|&l| net.link(l).lanes as f64 * net.link(l).length_m / 1000.0)
                .sum();
            region_density[r.id.index()] = if lane_km > 0.0 { s.accumulation() / lane_km } else { 0.0 };
            region_speed[r.id.index()] = s.current_speed();
        }
    }
    for l in net.link_ids() {
        match sim.link_state(l) {
            Some(s) => {
                let d = s.density();
                density[l.index()] = d;
                speed[l.index()] = net.link(l).equilibrium_speed(d);
            }
            None => {
                let r = regions.link_region(net, l).index();
                density[l.index()] = region_density[r];
                speed[l.index()] = region_speed[r];
            }
        }
    }
    (density, speed)
}

fn write_trajectories(out: &mut CsvOut, sim: &Simulation, t: i64, now: f64) -> Result<()> {
    let net = sim.network();
    for &l in sim.link_model_links() {
        let label = &net.link(l).label;
        match sim.link_state(l).expect("link-model link") {
            LinkState::Ctm(c) => {
                for (p, pos, v) in c.positions() {
                    out.line(format_args!(
                        "{},{},{t},ctm,{label},{},{}",
                        p.id,
                        p.parent,
                        fmt6(pos),
                        fmt6(v)
                    ))?;
                }
            }
            LinkState::Ltm(s) => {
                for (p, pos, v) in s.positions(now) {
                    out.line(format_args!(
                        "{},{},{t},ltm,{label},{},{}",
                        p.id,
                        p.parent,
                        fmt6(pos),
                        fmt6(v)
                    ))?;
                }
            }
        }
    }
    for r in 0..sim.regions().len() {
        let r = RegionId::from_index(r);
        let Some(state) = sim.region_state(r) else { continue };
        let label = &sim.regions().get(r).label;
        let v = state.current_speed();
        let mut rows: Vec<_> = state.positions().collect();
        rows.sort_by_key(|(p, _)| p.id);
        for (p, d) in rows {
            out.line(format_args!(
                "{},{},{t},bathtub,{label},{},{}",
                p.id,
                p.parent,
                fmt6(d),
                fmt6(v)
            ))?;
        }
    }
    Ok(())
}

fn write_gridlock(path: &Path, sim: &Simulation) -> Result<()> {
    let mut out = CsvOut::create(
        path.parent().unwrap_or(Path::new(".")),
        &path.file_name().expect("file name").to_string_lossy(),
        "t_detected,cycle_links,blocked_vehicles",
    )?;
    for (t, cycle) in sim.gridlock_events() {
        let labels: Vec<&str> = cycle
            .links
            .iter()
            .map(|&l| sim.network().link(l).label.as_str())
            .collect();
        out.line(format_args!(
            "{},{},{}",
            fmt_time(*t),
            labels.join(";"),
            fmt6(cycle.blocked_vehicles)
        ))?;
    }
    out.flush()
}

/// One row of `link_volumes.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkVolumeRecord {
    pub t: i64,
    pub link: String,
    pub occupancy: f64,
    pub density: f64,
    pub outflow: f64,
}

pub fn read_link_volumes(path: &Path) -> Result<Vec<LinkVolumeRecord>> {
    let table = Table::read(path)?;
    table.require(&["t_s", "link_id", "occupancy_veh", "density_veh_lane_km", "outflow_veh"])?;
    table
        .rows()
        .map(|row| {
            Ok(LinkVolumeRecord {
                t: row.f64("t_s")? as i64,
                link: row.str("link_id")?.to_string(),
                occupancy: row.f64("occupancy_veh")?,
                density: row.f64("density_veh_lane_km")?,
                outflow: row.f64("outflow_veh")?,
            })
        })
        .collect()
}

/// One row of `region_accumulation.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct AccumulationRecord {
    pub t: i64,
    pub region: String,
    pub accumulation: f64,
    pub speed: f64,
}

pub fn read_region_accumulation(path: &Path) -> Result<Vec<AccumulationRecord>> {
    let table = Table::read(path)?;
    table.require(&["region_id", "accumulation_veh", "speed_mps"])?;
    table
        .rows()
        .map(|row| {
            Ok(AccumulationRecord {
                t: row.opt_f64("t_s")?.unwrap_or(0.0) as i64,
                region: row.str("region_id")?.to_string(),
                accumulation: row.f64("accumulation_veh")?,
                speed: row.f64("speed_mps")?,
            })
        })
        .collect()
}

/// Writes trip completions: `packet_id,parent_id,depart_time_s,arrival_time_s,size`.
pub fn write_completions(path: &Path, sim: &Simulation) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().expect("file name").to_string_lossy();
    let mut out = CsvOut::create(dir, &name, "packet_id,parent_id,depart_time_s,arrival_time_s,size")?;
    for c in sim.completions() {
        out.line(format_args!(
            "{},{},{},{},{}",
            c.packet_id,
            c.parent_id,
            fmt6(c.depart_time),
            fmt_time(c.arrival_time),
            fmt6(c.size)
        ))?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_decimals_without_negative_zero() {
        assert_eq!(fmt6(1.0 / 3.0), "0.333333");
        assert_eq!(fmt6(-1e-12), "0.000000");
        assert_eq!(fmt6(-0.5), "-0.500000");
    }
}
