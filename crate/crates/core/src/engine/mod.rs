//! The simulation loop.
//!
//! Each step runs four phases in a fixed order: departures are injected at
//! their origin element, every element updates internally, junctions move
//! packets between elements, and metrics are recorded.

mod config;
mod run;

pub use config::{
    AssignmentConfig, AssignmentKind, Coordinates, ModelKind, ModelMap, ModelOverride, OutputConfig, PartitionConfig,
    SimConfig,
};
pub use run::{run_scenario, Scenario, Summary};

use std::collections::{BTreeSet, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bathtub::{Entry, RegionState};
use crate::ctm::CtmLink;
use crate::demand::{Assignment, PathId, PathSet};
use crate::error::{Error, Result};
use crate::io::Recorder;
use crate::ltm::LtmLink;
use crate::network::{LinkId, NodeId, RegionId, Regions, RoadNetwork};
use crate::packet::{movable, Packet, PacketId};
use crate::transfer::{
    detect_gridlock, junction_rng, transfer_step, Completion, GridlockCycle, GridlockLog, Head, Junction, LinkBlockage,
    Target, Upstream,
};

/// One element of a route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Leg {
    /// A link simulated by CTM or LTM.
    Link(LinkId),
    /// Consecutive links inside one bathtub region, merged.
    Region { region: RegionId, distance: f64 },
}

/// Dynamic state of a link in a CTM or LTM region.
#[derive(Clone, Debug)]
pub enum LinkState {
    Ctm(CtmLink),
    Ltm(LtmLink),
}

impl LinkState {
    pub fn occupancy(&self) -> f64 {
        match self {
            LinkState::Ctm(c) => c.occupancy(),
            LinkState::Ltm(l) => l.occupancy(),
        }
    }

    pub fn storage(&self) -> f64 {
        match self {
            LinkState::Ctm(c) => c.storage(),
            LinkState::Ltm(l) => l.storage(),
        }
    }

    pub fn model(&self) -> ModelKind {
        match self {
            LinkState::Ctm(_) => ModelKind::Ctm,
            LinkState::Ltm(_) => ModelKind::Ltm,
        }
    }

    pub fn head(&self) -> Option<&Packet> {
        match self {
            LinkState::Ctm(c) => c.head(),
            LinkState::Ltm(l) => l.head(),
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            LinkState::Ctm(c) => c.is_empty(),
            LinkState::Ltm(l) => l.is_empty(),
        }
    }

    fn receiving(&self, step: i64) -> f64 {
        match self {
            LinkState::Ctm(c) => c.receiving(),
            LinkState::Ltm(l) => l.receiving(step),
        }
    }

    fn accept(&mut self, packet: Packet, now: f64) {
        match self {
            LinkState::Ctm(c) => c.accept(packet, now),
            LinkState::Ltm(l) => l.accept(packet, now),
        }
    }

    fn take_head(&mut self, amount: f64, next_id: &mut u64) -> Packet {
        match self {
            LinkState::Ctm(c) => c.take_head(amount, next_id),
            LinkState::Ltm(l) => l.take_head(amount, next_id),
        }
    }

    /// Density in vehicles per lane per km over the whole link.
    pub fn density(&self) -> f64 {
        let link = match self {
            LinkState::Ctm(c) => c.link(),
            LinkState::Ltm(l) => l.link(),
        };
        self.occupancy() / (link.lanes as f64 * link.length_m / 1000.0)
    }

    pub fn packets(&self) -> Box<dyn Iterator<Item = &Packet> + '_> {
        match self {
            LinkState::Ctm(c) => Box::new(c.packets()),
            LinkState::Ltm(l) => Box::new(l.packets()),
        }
    }
}

/// Element a packet left, for the exit log.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    Link(LinkId),
    Region(RegionId),
}

/// A packet (or fragment) leaving an element.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitEvent {
    pub step: u64,
    pub element: Element,
    pub packet: PacketId,
    pub parent: PacketId,
    pub path: PathId,
    pub leg: u32,
    pub entry_seq: u64,
    pub size: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    /// Time at the end of the step.
    pub time: f64,
    pub departed: f64,
    pub transferred: f64,
    pub completed: f64,
    pub splits: usize,
}

/// Builds the route of every path: link-model links as they are, runs of
/// links in one bathtub region merged into a single leg.
pub fn build_routes(net: &RoadNetwork, regions: &Regions, models: &[ModelKind], paths: &PathSet) -> Vec<Vec<Leg>> {
    paths
        .iter()
        .map(|(_, path)| {
            let mut legs: Vec<Leg> = Vec::new();
            for &l in &path.links {
                let r = regions.link_region(net, l);
                if models[r.index()].is_link_model() {
                    legs.push(Leg::Link(l));
                    continue;
                }
                let len = net.link(l).length_m;
                match legs.last_mut() {
                    Some(Leg::Region { region, distance }) if *region == r => *distance += len,
                    _ => legs.push(Leg::Region {
                        region: r,
                        distance: len,
                    }),
                }
            }
            legs
        })
        .collect()
}

/// Region models after applying overrides; unknown region labels are errors.
pub fn resolve_models(regions: &Regions, map: &ModelMap) -> Result<Vec<ModelKind>> {
    let mut models = vec![map.default; regions.len()];
    for o in &map.overrides {
        let r = regions
            .assignment
            .region_id(&o.region)
            .ok_or_else(|| Error::Config(format!("model_map names unknown region {:?}", o.region)))?;
        models[r.index()] = o.model;
    }
    Ok(models)
}

pub struct Simulation {
    config: SimConfig,
    net: RoadNetwork,
    regions: Regions,
    models: Vec<ModelKind>,
    paths: PathSet,
    routes: Vec<Vec<Leg>>,
    links: Vec<Option<LinkState>>,
    link_ids: Vec<LinkId>,
    region_states: Vec<Option<RegionState>>,
    bathtub_ids: Vec<RegionId>,
    pending: VecDeque<Packet>,
    deferred: Vec<VecDeque<Packet>>,
    deferred_links: BTreeSet<LinkId>,
    entries: Vec<Vec<Entry>>,
    send_rem: Vec<f64>,
    recv_rem: Vec<f64>,
    last_moved: Vec<u64>,
    link_inflow: Vec<f64>,
    link_outflow: Vec<f64>,
    step: u64,
    steps: u64,
    next_id: u64,
    next_seq: u64,
    total_demand: f64,
    departed: f64,
    completed: f64,
    completions: Vec<Completion>,
    gridlock: GridlockLog,
    gridlock_every: u64,
    window: u64,
    exit_log: Option<Vec<ExitEvent>>,
    recorder: Option<Recorder>,
    max_accumulation: f64,
}

impl Simulation {
    /// Sets up empty elements and queues every packet for departure.
    pub fn new(config: SimConfig, net: RoadNetwork, mut regions: Regions, assignment: Assignment) -> Result<Self> {
        config.validate()?;
        let models = resolve_models(&regions, &config.model_map)?;
        let Assignment {
            mut packets, mut paths, ..
        } = assignment;
        paths.project(&net, &regions.assignment);
        let routes = build_routes(&net, &regions, &models, &paths);
        for (legs, (_, path)) in routes.iter().zip(paths.iter()) {
            if legs.is_empty() {
                return Err(Error::Invalid("empty path".into()));
            }
            for w in path.links.windows(2) {
                if net.link(w[0]).to != net.link(w[1]).from {
                    return Err(Error::Invalid(format!(
                        "path is not connected at link {:?}",
                        net.link(w[1]).label
                    )));
                }
            }
        }
        for r in &mut regions.regions {
            r.longest_path_length = 0.0;
        }
        for legs in &routes {
            for leg in legs {
                if let Leg::Region { region, distance } = *leg {
                    let r = &mut regions.regions[region.index()];
                    r.longest_path_length = r.longest_path_length.max(distance);
                }
            }
        }
        let dt = config.dt_s;
        let mut links: Vec<Option<LinkState>> = Vec::with_capacity(net.link_count());
        let mut link_ids = Vec::new();
        for l in net.link_ids() {
            let model = models[regions.link_region(&net, l).index()];
            let link = net.link(l);
            links.push(match model {
                ModelKind::Ctm => Some(LinkState::Ctm(CtmLink::new(link, dt))),
                ModelKind::Ltm => Some(LinkState::Ltm(LtmLink::new(link, dt))),
                ModelKind::Bathtub => None,
            });
            if model.is_link_model() {
                link_ids.push(l);
            }
        }
        let mut region_states = Vec::with_capacity(regions.len());
        let mut bathtub_ids = Vec::new();
        for r in &regions.regions {
            if models[r.id.index()] == ModelKind::Bathtub {
                region_states.push(Some(RegionState::new(r.mfd, r.longest_path_length)));
                bathtub_ids.push(r.id);
            } else {
                region_states.push(None);
            }
        }
        packets.sort_by(|a, b| a.depart_time.total_cmp(&b.depart_time).then(a.id.cmp(&b.id)));
        let next_id = packets.iter().map(|p| p.id.0 + 1).max().unwrap_or(0);
        let total_demand = packets.iter().map(|p| p.size).fold(0.0, |a, x| a + x);
        let window = config.steps_in(config.outputs.gridlock_window_s);
        let n_links = net.link_count();
        let n_regions = regions.len();
        Ok(Simulation {
            steps: config.steps(),
            gridlock_every: (window / 10).max(1),
            window,
            config,
            net,
            regions,
            models,
            paths,
            routes,
            links,
            link_ids,
            region_states,
            bathtub_ids,
            pending: packets.into(),
            deferred: vec![VecDeque::new(); n_links],
            deferred_links: BTreeSet::new(),
            entries: vec![Vec::new(); n_regions],
            send_rem: vec![0.0; n_links],
            recv_rem: vec![0.0; n_links],
            last_moved: vec![0; n_links],
            link_inflow: vec![0.0; n_links],
            link_outflow: vec![0.0; n_links],
            step: 0,
            next_id,
            next_seq: 0,
            total_demand,
            departed: 0.0,
            completed: 0.0,
            completions: Vec::new(),
            gridlock: GridlockLog::default(),
            exit_log: None,
            recorder: None,
            max_accumulation: 0.0,
        })
    }

    pub fn set_recorder(&mut self, recorder: Recorder) {
        self.recorder = Some(recorder);
    }

    /// Flushes and detaches the recorder, writing end-of-run files.
    pub fn finish_recording(&mut self) -> Result<()> {
        match self.recorder.take() {
            Some(rec) => rec.finish(self),
            None => Ok(()),
        }
    }

    /// Keeps a log of every packet leaving an element.
    pub fn enable_exit_log(&mut self) {
        self.exit_log.get_or_insert_with(Vec::new);
    }

    pub fn exit_log(&self) -> &[ExitEvent] {
        self.exit_log.as_deref().unwrap_or(&[])
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn network(&self) -> &RoadNetwork {
        &self.net
    }

    pub fn regions(&self) -> &Regions {
        &self.regions
    }

    pub fn models(&self) -> &[ModelKind] {
        &self.models
    }

    pub fn paths(&self) -> &PathSet {
        &self.paths
    }

    pub fn route(&self, path: PathId) -> &[Leg] {
        &self.routes[path.index()]
    }

    pub fn link_state(&self, link: LinkId) -> Option<&LinkState> {
        self.links[link.index()].as_ref()
    }

    /// Links simulated by CTM or LTM, in id order.
    pub fn link_model_links(&self) -> &[LinkId] {
        &self.link_ids
    }

    pub fn region_state(&self, region: RegionId) -> Option<&RegionState> {
        self.region_states[region.index()].as_ref()
    }

    /// Inflow and outflow of a link during the latest step.
    pub fn link_flows(&self, link: LinkId) -> (f64, f64) {
        (self.link_inflow[link.index()], self.link_outflow[link.index()])
    }

    /// Steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.steps
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.dt_s
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.steps
    }

    pub fn total_demand(&self) -> f64 {
        self.total_demand
    }

    pub fn departed(&self) -> f64 {
        self.departed
    }

    pub fn completed(&self) -> f64 {
        self.completed
    }

    pub fn completions(&self) -> &[Completion] {
        &self.completions
    }

    /// Vehicles still waiting to depart, including deferred ones.
    pub fn not_departed(&self) -> f64 {
        self.pending.iter().map(|p| p.size).fold(0.0, |a, x| a + x)
            + self.deferred.iter().flatten().map(|p| p.size).fold(0.0, |a, x| a + x)
    }

    /// Vehicles inside elements, summed from the elements themselves.
    pub fn in_network(&self) -> f64 {
        let links: f64 = self
            .link_ids
            .iter()
            .map(|l| self.links[l.index()].as_ref().map_or(0.0, |s| s.occupancy()))
            .fold(0.0, |a, x| a + x);
        let regions: f64 = self
            .bathtub_ids
            .iter()
            .map(|r| self.region_states[r.index()].as_ref().map_or(0.0, |s| s.accumulation()))
            .fold(0.0, |a, x| a + x);
        links + regions
    }

    /// Accumulation of a region: bathtub mass, or the sum over its links.
    pub fn region_accumulation(&self, region: RegionId) -> f64 {
        match &self.region_states[region.index()] {
            Some(s) => s.accumulation(),
            None => self
                .regions
                .get(region)
                .links
                .iter()
                .map(|l| self.links[l.index()].as_ref().map_or(0.0, |s| s.occupancy()))
                .fold(0.0, |a, x| a + x),
        }
    }

    /// Space-mean speed of a region.
    pub fn region_speed(&self, region: RegionId) -> f64 {
        match &self.region_states[region.index()] {
            Some(s) => s.current_speed(),
            None => {
                let mut n = 0.0;
                let mut weighted = 0.0;
                let mut len = 0.0;
                let mut vf_len = 0.0;
                for &l in &self.regions.get(region).links {
                    let link = self.net.link(l);
                    len += link.length_m;
                    vf_len += link.vf * link.length_m;
                    if let Some(s) = &self.links[l.index()] {
                        let occ = s.occupancy();
                        n += occ;
                        weighted += occ * link.equilibrium_speed(s.density());
                    }
                }
                if n > 0.0 {
                    weighted / n
                } else if len > 0.0 {
                    vf_len / len
                } else {
                    self.regions.get(region).mfd.vf
                }
            }
        }
    }

    pub fn max_accumulation(&self) -> f64 {
        self.max_accumulation
    }

    pub fn gridlock_events(&self) -> &[(f64, GridlockCycle)] {
        &self.gridlock.events
    }

    fn next_target(&self, packet: &Packet) -> Target {
        match self.routes[packet.path.index()].get(packet.leg as usize + 1) {
            Some(Leg::Link(l)) => Target::Link(*l),
            Some(Leg::Region { region, .. }) => Target::Region(*region),
            None => Target::Sink,
        }
    }

    fn seq(&mut self) -> u64 {
        self.next_seq += 1;
        self.next_seq
    }

    /// Runs the remaining steps.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn step(&mut self) -> Result<StepMetrics> {
        if self.is_finished() {
            return Err(Error::Invalid("simulation horizon already reached".into()));
        }
        let k = self.step;
        let dt = self.config.dt_s;
        let t = k as f64 * dt;
        let t_end = t + dt;

        let departed = self.inject(k, t, t_end)?;
        self.update_elements(k)?;
        let (transferred, splits, completed) = self.transfer(k, t_end)?;

        for &l in &self.link_ids {
            let (inflow, outflow, internal) = match &mut self.links[l.index()] {
                Some(LinkState::Ctm(c)) => c.take_counters(),
                Some(LinkState::Ltm(s)) => {
                    let (i, o) = s.take_counters();
                    (i, o, 0.0)
                }
                None => continue,
            };
            self.link_inflow[l.index()] = inflow;
            self.link_outflow[l.index()] = outflow;
            if inflow > 0.0 || outflow > 0.0 || internal > 0.0 {
                self.last_moved[l.index()] = k;
            }
        }

        if (k + 1).is_multiple_of(self.gridlock_every) {
            self.check_gridlock(k, t_end);
        }
        self.check_conservation(k)?;
        for &r in &self.bathtub_ids {
            if let Some(s) = &self.region_states[r.index()] {
                self.max_accumulation = self.max_accumulation.max(s.accumulation());
            }
        }
        if let Some(mut rec) = self.recorder.take() {
            let res = rec.record(self, k);
            self.recorder = Some(rec);
            res?;
        }
        self.step += 1;
        Ok(StepMetrics {
            step: k,
            time: t_end,
            departed,
            transferred,
            completed,
            splits,
        })
    }

    /// Phase 1: departures due before the end of the step enter their first
    /// element. Link origins admit up to their receiving flow; the rest waits.
    fn inject(&mut self, k: u64, t: f64, t_end: f64) -> Result<f64> {
        let mut departed = 0.0;
        while self.pending.front().is_some_and(|p| p.depart_time < t_end) {
            let mut p = self.pending.pop_front().expect("checked");
            p.leg = 0;
            match self.routes[p.path.index()][0] {
                Leg::Link(l) => {
                    self.deferred[l.index()].push_back(p);
                    self.deferred_links.insert(l);
                }
                Leg::Region { region, distance } => {
                    p.entry_seq = self.seq();
                    let target = self.next_target(&p);
                    departed += p.size;
                    self.entries[region.index()].push(Entry {
                        packet: p,
                        distance,
                        target,
                    });
                }
            }
        }
        let waiting: Vec<LinkId> = self.deferred_links.iter().copied().collect();
        for l in waiting {
            let state = self.links[l.index()].as_mut().expect("link-model origin");
            let mut budget = state.receiving(k as i64);
            let queue = &mut self.deferred[l.index()];
            while let Some(front) = queue.front_mut() {
                let size = front.size;
                let Some(m) = movable(size, budget) else { break };
                let mut p = if m >= size {
                    queue.pop_front().expect("non-empty")
                } else {
                    let frag = front.split_off(m, PacketId(self.next_id));
                    self.next_id += 1;
                    frag
                };
                self.next_seq += 1;
                p.entry_seq = self.next_seq;
                budget -= p.size;
                departed += p.size;
                state.accept(p, t);
                if m < size {
                    break;
                }
            }
            if queue.is_empty() {
                self.deferred_links.remove(&l);
            }
        }
        self.departed += departed;
        Ok(departed)
    }

    /// Phase 2: link sending and receiving flows from the post-injection
    /// state, CTM internal flows, LTM samples, bathtub motion.
    fn update_elements(&mut self, k: u64) -> Result<()> {
        for &l in &self.link_ids {
            let i = l.index();
            match self.links[i].as_mut().expect("link-model link") {
                LinkState::Ctm(c) => {
                    self.send_rem[i] = c.sending();
                    self.recv_rem[i] = c.receiving();
                    c.advance(&mut self.next_id);
                }
                LinkState::Ltm(s) => {
                    s.begin_step(k as i64);
                    self.send_rem[i] = s.sending();
                    self.recv_rem[i] = s.receiving(k as i64);
                }
            }
        }
        let dt = self.config.dt_s;
        for &r in &self.bathtub_ids {
            let entries = std::mem::take(&mut self.entries[r.index()]);
            self.region_states[r.index()]
                .as_mut()
                .expect("bathtub region")
                .step(dt, entries)?;
        }
        Ok(())
    }

    /// Phase 3: node junctions in node order, then region boundaries.
    fn transfer(&mut self, k: u64, t_end: f64) -> Result<(f64, usize, f64)> {
        let completed_before = self.completed;
        let mut moved = 0.0;
        let mut splits = 0;
        let mut spare = ChaCha8Rng::seed_from_u64(0);
        let seed = self.config.seed;

        let mut ready: Vec<(NodeId, LinkId)> = self
            .link_ids
            .iter()
            .filter(|l| self.send_rem[l.index()] > 0.0)
            .map(|&l| (self.net.link(l).to, l))
            .collect();
        ready.sort();
        let mut ups: Vec<Upstream> = Vec::new();
        let mut i = 0;
        while i < ready.len() {
            let node = ready[i].0;
            ups.clear();
            while i < ready.len() && ready[i].0 == node {
                ups.push(Upstream::Link(ready[i].1));
                i += 1;
            }
            let mut ctx = Ctx {
                sim: self,
                step: k,
                now: t_end,
            };
            let stats = if ups.len() > 1 {
                transfer_step(&mut ctx, &ups, &mut junction_rng(seed, node.0 as u64, k))?
            } else {
                transfer_step(&mut ctx, &ups, &mut spare)?
            };
            moved += stats.moved;
            splits += stats.splits;
        }

        let n_nodes = self.net.node_count() as u64;
        for bi in 0..self.bathtub_ids.len() {
            let r = self.bathtub_ids[bi];
            ups.clear();
            ups.extend(
                self.region_states[r.index()]
                    .as_ref()
                    .expect("bathtub region")
                    .exit_targets()
                    .map(|t| Upstream::RegionExit(r, t)),
            );
            if ups.is_empty() {
                continue;
            }
            let mut ctx = Ctx {
                sim: self,
                step: k,
                now: t_end,
            };
            let stats = if ups.len() > 1 {
                transfer_step(&mut ctx, &ups, &mut junction_rng(seed, n_nodes + r.0 as u64, k))?
            } else {
                transfer_step(&mut ctx, &ups, &mut spare)?
            };
            moved += stats.moved;
            splits += stats.splits;
        }
        Ok((moved, splits, self.completed - completed_before))
    }

    fn check_gridlock(&mut self, k: u64, t_end: f64) {
        if self.link_ids.is_empty() {
            return;
        }
        let mut view: Vec<Option<LinkBlockage>> = vec![None; self.net.link_count()];
        let mut any = false;
        for &l in &self.link_ids {
            let s = self.links[l.index()].as_ref().expect("link-model link");
            let occupancy = s.occupancy();
            let storage = s.storage();
            if occupancy < (1.0 - 1e-3) * storage {
                continue;
            }
            let waits_for = s.head().and_then(|p| match self.next_target(p) {
                Target::Link(n) => Some(n),
                _ => None,
            });
            any = true;
            view[l.index()] = Some(LinkBlockage {
                occupancy,
                storage,
                idle_steps: k.saturating_sub(self.last_moved[l.index()]),
                waits_for,
            });
        }
        if any {
            let cycles = detect_gridlock(&view, self.window);
            if !cycles.is_empty() {
                let new = self.gridlock.observe(t_end, cycles);
                if new > 0 {
                    log::warn!("gridlock detected at t = {t_end} s ({new} new cycles)");
                }
            }
        }
    }

    fn check_conservation(&self, k: u64) -> Result<()> {
        let inside = self.in_network();
        let gap = self.departed - inside - self.completed;
        if gap.abs() > 1e-9 * self.departed.max(1.0) {
            return Err(Error::Invariant(format!(
                "conservation broken at step {k}: departed {} != in network {} + completed {}",
                self.departed, inside, self.completed
            )));
        }
        Ok(())
    }
}

struct Ctx<'a> {
    sim: &'a mut Simulation,
    step: u64,
    now: f64,
}

impl Junction for Ctx<'_> {
    fn head(&self, up: Upstream) -> Result<Option<Head>> {
        let packet = match up {
            Upstream::Link(l) => self.sim.links[l.index()].as_ref().and_then(|s| s.head()),
            Upstream::RegionExit(r, t) => self.sim.region_states[r.index()].as_ref().and_then(|s| s.exit_head(t)),
        };
        Ok(packet.map(|p| Head {
            size: p.size,
            target: match up {
                Upstream::RegionExit(_, t) => t,
                Upstream::Link(_) => self.sim.next_target(p),
            },
        }))
    }

    fn send_budget(&self, up: Upstream) -> f64 {
        match up {
            Upstream::Link(l) => self.sim.send_rem[l.index()],
            Upstream::RegionExit(..) => f64::INFINITY,
        }
    }

    fn receive_budget(&self, target: Target) -> f64 {
        match target {
            Target::Link(l) => self.sim.recv_rem[l.index()],
            Target::Region(_) | Target::Sink => f64::INFINITY,
        }
    }

    fn apply(&mut self, up: Upstream, target: Target, amount: f64) -> Result<()> {
        let sim = &mut *self.sim;
        let (mut packet, element) = match up {
            Upstream::Link(l) => {
                let state = sim.links[l.index()].as_mut().expect("link-model link");
                let p = state.take_head(amount, &mut sim.next_id);
                sim.send_rem[l.index()] -= p.size;
                (p, Element::Link(l))
            }
            Upstream::RegionExit(r, t) => {
                let state = sim.region_states[r.index()].as_mut().expect("bathtub region");
                (state.take_exit(t, amount, &mut sim.next_id), Element::Region(r))
            }
        };
        if let Some(log) = &mut sim.exit_log {
            log.push(ExitEvent {
                step: self.step,
                element,
                packet: packet.id,
                parent: packet.parent,
                path: packet.path,
                leg: packet.leg,
                entry_seq: packet.entry_seq,
                size: packet.size,
            });
        }
        packet.leg += 1;
        let legs = &sim.routes[packet.path.index()];
        match target {
            Target::Sink => {
                if packet.leg as usize != legs.len() {
                    return Err(Error::Invariant(format!(
                        "packet {} left its path at leg {} of {}",
                        packet.id,
                        packet.leg,
                        legs.len()
                    )));
                }
                sim.completed += packet.size;
                sim.completions.push(Completion {
                    packet_id: packet.id,
                    parent_id: packet.parent,
                    depart_time: packet.depart_time,
                    arrival_time: self.now,
                    size: packet.size,
                });
            }
            Target::Link(l) => {
                if legs.get(packet.leg as usize) != Some(&Leg::Link(l)) {
                    return Err(Error::Invariant(format!("packet {} routed off its path", packet.id)));
                }
                sim.next_seq += 1;
                packet.entry_seq = sim.next_seq;
                sim.recv_rem[l.index()] -= packet.size;
                sim.links[l.index()]
                    .as_mut()
                    .expect("link-model link")
                    .accept(packet, self.now);
            }
            Target::Region(r) => {
                let Some(&Leg::Region { region, distance }) = legs.get(packet.leg as usize) else {
                    return Err(Error::Invariant(format!("packet {} routed off its path", packet.id)));
                };
                debug_assert_eq!(region, r);
                sim.next_seq += 1;
                packet.entry_seq = sim.next_seq;
                let next = sim.next_target(&packet);
                sim.region_states[r.index()]
                    .as_mut()
                    .expect("bathtub region")
                    .enter(Entry {
                        packet,
                        distance,
                        target: next,
                    })?;
            }
        }
        Ok(())
    }
}
