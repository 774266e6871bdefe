use std::collections::HashMap;

use proptest::prelude::*;

use mesomacro::demand::assign_aon;
use mesomacro::engine::{Element, ModelKind, ModelMap, OutputConfig, SimConfig, Simulation};
use mesomacro::network::Regions;
use mesomacro::synthetic::{grid_blocks, grid_network, random_demand};

const MODELS: [ModelKind; 3] = [ModelKind::Ctm, ModelKind::Ltm, ModelKind::Bathtub];

/// Replays the exit log and counts exits that overtook an earlier entry:
/// per link, and per (path, leg) inside a bathtub region.
fn overtakes(sim: &Simulation) -> usize {
    let mut last = HashMap::new();
    let mut bad = 0;
    for e in sim.exit_log() {
        let key = match e.element {
            Element::Link(_) => (e.element, None),
            Element::Region(_) => (e.element, Some((e.path, e.leg))),
        };
        let prev = last.entry(key).or_insert(0);
        if e.entry_seq < *prev {
            bad += 1;
        }
        *prev = e.entry_seq;
    }
    bad
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn exits_replay_in_entry_order(
        models in proptest::collection::vec(0usize..3, 5),
        seed in 0u64..1000,
        packets in 100usize..400,
        size in 0.3f64..2.5,
    ) {
        let net = grid_network(5, 5, 90.0);
        let demand = random_demand(&net, packets, size, 600.0, seed);
        let mut map = ModelMap::uniform(MODELS[models[4]]);
        for (i, &m) in models[..4].iter().enumerate() {
            map = map.with(format!("R{i}"), MODELS[m]);
        }
        let config = SimConfig {
            horizon_s: 1500.0,
            seed,
            model_map: map,
            outputs: OutputConfig::none(),
            ..SimConfig::default()
        };
        let assignment = assign_aon(&net, &demand);
        let regions = Regions::new(&net, grid_blocks(5, 5, 2, 2), &HashMap::new()).unwrap();
        let mut sim = Simulation::new(config, net, regions, assignment).unwrap();
        sim.enable_exit_log();
        sim.run().unwrap();
        prop_assert!(!sim.exit_log().is_empty());
        prop_assert_eq!(overtakes(&sim), 0);
    }
}
