use std::fs;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mesomacro"))
}

/// A 3x3 grid with two-way links, 100 m apart.
fn write_network(dir: &Path, with_coordinates: bool) {
    let mut nodes = String::from("node_id,x,y\n");
    let mut links = String::from("link_id,from_node,to_node,length_m,lanes,vf_mps\n");
    for r in 0..3 {
        for c in 0..3 {
            if with_coordinates {
                nodes += &format!("n{r}{c},{},{}\n", c * 100, r * 100);
            } else {
                nodes += &format!("n{r}{c},,\n");
            }
        }
    }
    for r in 0..3 {
        for c in 0..3 {
            let mut edge = |a: String, b: String| {
                links += &format!("{a}-{b},{a},{b},100,1,10\n");
                links += &format!("{b}-{a},{b},{a},100,1,10\n");
            };
            if c < 2 {
                edge(format!("n{r}{c}"), format!("n{r}{}", c + 1));
            }
            if r < 2 {
                edge(format!("n{r}{c}"), format!("n{}{c}", r + 1));
            }
        }
    }
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("nodes.csv"), nodes).unwrap();
    fs::write(dir.join("links.csv"), links).unwrap();
    fs::write(
        dir.join("regions.csv"),
        "node_id,region_id\nn00,W\nn10,W\nn20,W\nn01,W\nn11,E\nn21,E\nn02,E\nn12,E\nn22,E\n",
    )
    .unwrap();
}

fn write_inputs(root: &Path) {
    write_network(&root.join("net"), true);
    let mut demand = String::from("origin_node,destination_node,depart_time_s,count\n");
    for t in 0..60 {
        demand += &format!("n00,n22,{},1.5\n", t * 5);
        demand += &format!("n22,n00,{},0.5\n", t * 5 + 2);
    }
    fs::write(root.join("demand.csv"), demand).unwrap();
    fs::write(
        root.join("config.toml"),
        r#"dt_s = 1
horizon_s = 900
seed = 4

[model_map]
default = "ctm"
overrides = [{ region = "E", model = "bathtub" }]

[outputs]
trajectories = true
geojson = true
volume_stride_s = 30
geojson_bin_s = 300
"#,
    )
    .unwrap();
}

fn simulate(root: &Path, out: &str, extra: &[&str]) -> std::process::Output {
    bin()
        .args(["simulate", "--config"])
        .arg(root.join("config.toml"))
        .arg("--network")
        .arg(root.join("net"))
        .arg("--demand")
        .arg(root.join("demand.csv"))
        .arg("--out")
        .arg(root.join(out))
        .args(extra)
        .output()
        .unwrap()
}

#[test]
fn simulate_writes_outputs_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_inputs(root);
    let a = simulate(root, "a", &[]);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    let stdout = String::from_utf8_lossy(&a.stdout);
    assert!(stdout.contains("wall time"), "{stdout}");
    for f in [
        "link_volumes.csv",
        "region_accumulation.csv",
        "trajectories.csv",
        "gridlock.csv",
        "network.geojson",
        "regions.csv",
        "summary.json",
    ] {
        assert!(root.join("a").join(f).is_file(), "missing {f}");
    }
    let b = simulate(root, "b", &[]);
    assert!(b.status.success());
    for f in [
        "link_volumes.csv",
        "region_accumulation.csv",
        "trajectories.csv",
        "network.geojson",
    ] {
        assert_eq!(
            fs::read(root.join("a").join(f)).unwrap(),
            fs::read(root.join("b").join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn assign_then_replay_matches_direct_run() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_inputs(root);
    let paths = root.join("paths.csv");
    let st = bin()
        .args(["assign", "--network"])
        .arg(root.join("net"))
        .arg("--demand")
        .arg(root.join("demand.csv"))
        .arg("--config")
        .arg(root.join("config.toml"))
        .arg("--out")
        .arg(&paths)
        .status()
        .unwrap();
    assert!(st.success());
    let direct = simulate(root, "direct", &[]);
    let replay = simulate(root, "replay", &["--paths", paths.to_str().unwrap()]);
    assert!(direct.status.success() && replay.status.success());
    assert_eq!(
        fs::read(root.join("direct/link_volumes.csv")).unwrap(),
        fs::read(root.join("replay/link_volumes.csv")).unwrap()
    );
}

#[test]
fn partition_calibrate_export_round() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_inputs(root);
    let regions = root.join("regions.csv");
    let st = bin()
        .args(["partition", "--min-region-size", "3", "--network"])
        .arg(root.join("net"))
        .arg("--out")
        .arg(&regions)
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(fs::read_to_string(&regions).unwrap().lines().count(), 10);

    assert!(simulate(root, "run", &[]).status.success());
    let samples = root.join("samples.csv");
    fs::write(
        &samples,
        "region_id,accumulation_veh,speed_mps\nA,0,15\nA,5000,5.518191617571635\nA,10000,2.0300292485491934\n",
    )
    .unwrap();
    let mfd = root.join("mfd.csv");
    let st = bin()
        .args(["calibrate", "--samples"])
        .arg(&samples)
        .arg("--out")
        .arg(&mfd)
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(
        fs::read_to_string(&mfd).unwrap(),
        "region_id,vf_mps,n_critical\nA,15.000000,5000.000000\n"
    );

    let geo = root.join("layer.geojson");
    let st = bin()
        .args(["export", "--bin-s", "300", "--from", "0", "--to", "600", "--network"])
        .arg(root.join("net"))
        .arg("--volumes")
        .arg(root.join("run/link_volumes.csv"))
        .arg("--out")
        .arg(&geo)
        .status()
        .unwrap();
    assert!(st.success());
    let text = fs::read_to_string(&geo).unwrap();
    assert!(text.starts_with("{\"features\":[") || text.contains("\"FeatureCollection\""));
    assert_eq!(text.matches("\"LineString\"").count(), 24);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_inputs(root);

    // validation: bad config value
    fs::write(root.join("bad.toml"), "dt_s = -1\n").unwrap();
    let out = bin()
        .args(["simulate", "--config"])
        .arg(root.join("bad.toml"))
        .arg("--network")
        .arg(root.join("net"))
        .arg("--demand")
        .arg(root.join("demand.csv"))
        .arg("--out")
        .arg(root.join("x"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // validation: unknown flag
    assert_eq!(bin().args(["simulate", "--bogus"]).status().unwrap().code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));

    // I/O: output directory below a regular file
    fs::write(root.join("file"), "").unwrap();
    let out = simulate(root, "file/sub", &[]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    // I/O: missing demand file
    let out = bin()
        .args(["simulate", "--config"])
        .arg(root.join("config.toml"))
        .arg("--network")
        .arg(root.join("net"))
        .arg("--demand")
        .arg(root.join("absent.csv"))
        .arg("--out")
        .arg(root.join("y"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    // validation: export without coordinates
    write_network(&root.join("bare"), false);
    fs::write(
        root.join("vol.csv"),
        "t_s,link_id,occupancy_veh,density_veh_lane_km,outflow_veh\n",
    )
    .unwrap();
    let out = bin()
        .args(["export", "--network"])
        .arg(root.join("bare"))
        .arg("--volumes")
        .arg(root.join("vol.csv"))
        .arg("--out")
        .arg(root.join("g.geojson"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}
