//! Generalized bathtub regions.
//!
//! All vehicles in a region travel at one speed given by the region's
//! Underwood function of its accumulation. Instead of shifting a histogram of
//! remaining distances every step, the region keeps an odometer (the distance
//! any resident vehicle has covered since time zero) and each packet stores
//! the odometer reading at which it leaves. Remaining distance is the
//! difference. Packets that reach the boundary wait in per-target exit queues
//! until the transfer phase moves them on.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use crate::demand::PathId;
use crate::error::{Error, Result};
use crate::network::UnderwoodMfd;
use crate::packet::{Packet, PacketId};
use crate::transfer::Target;

/// Region speed for accumulation `n`.
pub fn bathtub_speed(mfd: &UnderwoodMfd, n: f64) -> f64 {
    mfd.speed(n).max(f64::MIN_POSITIVE)
}

#[derive(Debug)]
struct Resident {
    exit_at: f64,
    seq: u64,
    packet: Packet,
    target: Target,
}

impl PartialEq for Resident {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Resident {}

impl Ord for Resident {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .exit_at
            .total_cmp(&self.exit_at)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Resident {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Packet entering a region: where it goes next and how far it drives inside.
#[derive(Clone, Debug)]
pub struct Entry {
    pub packet: Packet,
    pub distance: f64,
    pub target: Target,
}

#[derive(Debug)]
pub struct RegionState {
    mfd: UnderwoodMfd,
    longest_path_length: f64,
    odometer: f64,
    speed: f64,
    residents: BinaryHeap<Resident>,
    held: BTreeMap<Target, VecDeque<Packet>>,
    resident_mass: f64,
    held_mass: f64,
    seq: u64,
    exited: f64,
}

impl RegionState {
    pub fn new(mfd: UnderwoodMfd, longest_path_length: f64) -> Self {
        RegionState {
            mfd,
            longest_path_length,
            odometer: 0.0,
            speed: mfd.vf,
            residents: BinaryHeap::new(),
            held: BTreeMap::new(),
            resident_mass: 0.0,
            held_mass: 0.0,
            seq: 0,
            exited: 0.0,
        }
    }

    pub fn mfd(&self) -> &UnderwoodMfd {
        &self.mfd
    }

    pub fn longest_path_length(&self) -> f64 {
        self.longest_path_length
    }

    /// Vehicles in the region, including those waiting at the boundary.
    pub fn accumulation(&self) -> f64 {
        self.resident_mass + self.held_mass
    }

    /// Speed the region would move at now.
    pub fn current_speed(&self) -> f64 {
        bathtub_speed(&self.mfd, self.accumulation())
    }

    /// Speed used by the latest step.
    pub fn last_speed(&self) -> f64 {
        self.speed
    }

    pub fn is_empty(&self) -> bool {
        self.residents.is_empty() && self.held.is_empty()
    }

    /// Inserts a packet at remaining distance `distance`.
    pub fn enter(&mut self, entry: Entry) -> Result<()> {
        if entry.distance > self.longest_path_length * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "segment of {} m exceeds the region's longest path length {} m",
                entry.distance, self.longest_path_length
            )));
        }
        self.resident_mass += entry.packet.size;
        self.residents.push(Resident {
            exit_at: self.odometer + entry.distance,
            seq: self.seq,
            packet: entry.packet,
            target: entry.target,
        });
        self.seq += 1;
        Ok(())
    }

    /// One step: speed from the state before `entries`, then every resident
    /// advances by `speed * dt`; packets reaching zero move to the exit
    /// queues. Returns the mass that reached the boundary.
    pub fn step(&mut self, dt: f64, entries: impl IntoIterator<Item = Entry>) -> Result<f64> {
        self.speed = self.current_speed();
        for e in entries {
            self.enter(e)?;
        }
        self.odometer += self.speed * dt;
        let reach = self.odometer + 1e-12 * self.odometer.max(1.0);
        let mut out = 0.0;
        while self.residents.peek().is_some_and(|r| r.exit_at <= reach) {
            let r = self.residents.pop().expect("peeked");
            out += r.packet.size;
            self.held.entry(r.target).or_default().push_back(r.packet);
        }
        if out > 0.0 {
            self.held_mass += out;
            self.resident_mass -= out;
            if self.residents.is_empty() {
                self.resident_mass = 0.0;
            }
        }
        Ok(out)
    }

    /// Targets with vehicles waiting at the boundary, in order.
    pub fn exit_targets(&self) -> impl Iterator<Item = Target> + '_ {
        self.held.keys().copied()
    }

    /// Vehicles waiting to leave toward `target`.
    pub fn exit_capacity(&self, target: Target) -> f64 {
        self.held.get(&target).map_or(0.0, |q| q.iter().map(|p| p.size).sum())
    }

    pub fn exit_head(&self, target: Target) -> Option<&Packet> {
        self.held.get(&target).and_then(|q| q.front())
    }

    /// Removes `amount` from the head of the exit queue toward `target`.
    pub fn take_exit(&mut self, target: Target, amount: f64, next_id: &mut u64) -> Packet {
        let q = self.held.get_mut(&target).expect("exit queue exists");
        let front = q.front_mut().expect("exit queue non-empty");
        let out = if amount >= front.size {
            q.pop_front().expect("non-empty")
        } else {
            let frag = front.split_off(amount, PacketId(*next_id));
            *next_id += 1;
            frag
        };
        if q.is_empty() {
            self.held.remove(&target);
        }
        self.held_mass -= out.size;
        if self.held.is_empty() {
            self.held_mass = 0.0;
        }
        self.exited += out.size;
        out
    }

    /// Resident packets with their remaining distance, then boundary packets
    /// at distance zero.
    pub fn positions(&self) -> impl Iterator<Item = (&Packet, f64)> + '_ {
        self.residents
            .iter()
            .map(|r| (&r.packet, (r.exit_at - self.odometer).max(0.0)))
            .chain(self.held.values().flatten().map(|p| (p, 0.0)))
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> + '_ {
        self.positions().map(|(p, _)| p)
    }

    /// Remaining-distance histogram with bins of `width` meters.
    pub fn histogram(&self, width: f64) -> Vec<f64> {
        let n = (self.longest_path_length / width).ceil().max(1.0) as usize + 1;
        let mut bins = vec![0.0; n];
        for (p, d) in self.positions() {
            bins[((d / width) as usize).min(n - 1)] += p.size;
        }
        bins
    }
}

/// The key that orders packets first-in-first-out inside a region: the same
/// path entering at the same segment.
pub fn fifo_key(packet: &Packet) -> (PathId, u32) {
    (packet.path, packet.leg)
}
