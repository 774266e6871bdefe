use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use mesomacro::demand::{assign, load_demand, scale_demand, write_paths_csv, AssignmentMethod};
use mesomacro::engine::{run_scenario, Coordinates, Scenario, SimConfig};
use mesomacro::io::{export_geojson, read_link_volumes, series_from_volumes, write_geojson};
use mesomacro::network::{
    calibrate_underwood, load_network, partition_network, read_mfd_samples, write_mfd_csv, PartitionParams,
};

#[derive(Parser)]
#[command(name = "mesomacro", version, about = "Hybrid CTM / LTM / bathtub traffic simulator")]
struct Cli {
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario to the horizon and write outputs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Directory with nodes.csv, links.csv and optional regions.csv, mfd.csv.
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        demand: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        mfd: Option<PathBuf>,
        /// Replay paths written by `assign` instead of assigning.
        #[arg(long)]
        paths: Option<PathBuf>,
    },
    /// Cut the network into regions and write regions.csv.
    Partition {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        min_region_size: usize,
        #[arg(long, default_value_t = 1.0)]
        resolution: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit one speed-accumulation curve per region and write mfd.csv.
    Calibrate {
        /// CSV with region_id, accumulation_veh and speed_mps columns.
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Route demand and write one line per packet with its links.
    Assign {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        demand: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Takes horizon, demand scale and method from a config file.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        slices: Option<u32>,
    },
    /// Turn link_volumes.csv into a GeoJSON layer.
    Export {
        #[arg(long)]
        network: PathBuf,
        #[arg(long)]
        volumes: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Coords::Projected)]
        coordinates: Coords,
        #[arg(long, default_value_t = 900.0)]
        bin_s: f64,
        /// Keep bins starting at or after this time.
        #[arg(long)]
        from: Option<f64>,
        /// Keep bins starting before this time.
        #[arg(long)]
        to: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Aon,
    Incremental,
}

#[derive(Clone, Copy, ValueEnum)]
enum Coords {
    Projected,
    Lonlat,
}

fn network_files(dir: &Path) -> (PathBuf, PathBuf) {
    (dir.join("nodes.csv"), dir.join("links.csv"))
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Simulate {
            config,
            network,
            demand,
            out,
            regions,
            mfd,
            paths,
        } => {
            let summary = run_scenario(&Scenario {
                config,
                network,
                demand,
                out,
                regions,
                mfd,
                paths,
            })?;
            println!("{summary}");
        }
        Command::Partition {
            network,
            out,
            min_region_size,
            resolution,
            seed,
        } => {
            let (nodes, links) = network_files(&network);
            let net = load_network(&nodes, &links)?;
            let params = PartitionParams {
                min_region_size,
                resolution,
                seed,
                ..PartitionParams::default()
            };
            let regions = partition_network(&net, &params)?;
            regions.write_csv(&out, &net)?;
            println!("{} regions", regions.region_count());
        }
        Command::Calibrate { samples, out } => {
            let samples = read_mfd_samples(&samples)?;
            let mut fitted = Vec::with_capacity(samples.len());
            for (label, s) in &samples {
                let mfd = calibrate_underwood(s).with_context(|| format!("region {label}"))?;
                fitted.push((label.as_str(), mfd));
            }
            write_mfd_csv(&out, fitted.iter().copied())?;
            println!("{} regions calibrated", fitted.len());
        }
        Command::Assign {
            network,
            demand,
            out,
            config,
            method,
            slices,
        } => {
            let config = match config {
                Some(p) => SimConfig::load(&p)?,
                None => SimConfig::default(),
            };
            let (nodes, links) = network_files(&network);
            let net = load_network(&nodes, &links)?;
            let mut records = load_demand(&demand, &net, config.horizon_s)?;
            scale_demand(&mut records, config.demand_scale)?;
            let method = match (method, config.assignment_method()) {
                (Some(Method::Aon), _) => AssignmentMethod::Aon,
                (Some(Method::Incremental), _) | (None, AssignmentMethod::Incremental { .. }) => {
                    AssignmentMethod::Incremental {
                        n_slices: slices.unwrap_or(config.assignment.n_slices),
                    }
                }
                (None, m) => m,
            };
            let result = assign(&net, &records, method, config.period_hours())?;
            write_paths_csv(&out, &net, &result)?;
            println!(
                "{} packets on {} paths, {:.3} veh unroutable",
                result.packets.len(),
                result.paths.len(),
                result.excluded_vehicles()
            );
        }
        Command::Export {
            network,
            volumes,
            out,
            coordinates,
            bin_s,
            from,
            to,
        } => {
            let (nodes, links) = network_files(&network);
            let net = load_network(&nodes, &links)?;
            let records = read_link_volumes(&volumes)?;
            let series = series_from_volumes(&net, &records, bin_s)?;
            let range = (from.is_some() || to.is_some())
                .then(|| (from.unwrap_or(f64::NEG_INFINITY), to.unwrap_or(f64::INFINITY)));
            let coords = match coordinates {
                Coords::Projected => Coordinates::Projected,
                Coords::Lonlat => Coordinates::Lonlat,
            };
            let doc = export_geojson(&net, coords, &series, range)?;
            write_geojson(&out, &doc)?;
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<mesomacro::Error>())
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
