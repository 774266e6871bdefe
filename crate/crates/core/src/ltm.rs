//! Link Transmission Model links.
//!
//! Each link keeps cumulative counts at both ends, sampled once per step, and
//! a FIFO queue of resident packets. Sending and receiving flows read the
//! curves one free-flow (or backward-wave) travel time in the past, linearly
//! interpolated between samples.

use std::collections::VecDeque;

use crate::network::Link;
use crate::packet::{Packet, PacketId};

/// A cumulative count curve sampled at integer step indices. Indices before
/// the first sample read as zero; the index after the latest sample reads as
/// the running value.
#[derive(Clone, Debug)]
pub struct CumulativeCurve {
    ring: Vec<f64>,
    latest: i64,
    current: f64,
}

impl CumulativeCurve {
    pub fn new(retain: usize) -> Self {
        CumulativeCurve {
            ring: vec![0.0; retain.max(2)],
            latest: -1,
            current: 0.0,
        }
    }

    pub fn current(&self) -> f64 {
        self.current
    }

    pub fn add(&mut self, amount: f64) {
        self.current += amount;
    }

    /// Records the running value as the sample for step `k`.
    pub fn push(&mut self, k: i64) {
        debug_assert!(k > self.latest);
        let n = self.ring.len() as i64;
        // steps without a push held the previous value
        let prev = self.sample(self.latest);
        for j in (self.latest + 1).max(k - n + 1)..k {
            self.ring[j.rem_euclid(n) as usize] = prev;
        }
        self.ring[k.rem_euclid(n) as usize] = self.current;
        self.latest = k;
    }

    fn sample(&self, j: i64) -> f64 {
        if j < 0 {
            0.0
        } else if j > self.latest {
            debug_assert!(j == self.latest + 1, "read ahead of the curve");
            self.current
        } else {
            debug_assert!(self.latest - j < self.ring.len() as i64, "history too short");
            self.ring[j.rem_euclid(self.ring.len() as i64) as usize]
        }
    }

    /// Value at fractional step index `x`.
    pub fn at(&self, x: f64) -> f64 {
        let i = x.floor();
        let frac = x - i;
        let i = i as i64;
        let a = self.sample(i);
        if frac == 0.0 {
            a
        } else {
            a + frac * (self.sample(i + 1) - a)
        }
    }
}

/// Sending flow at step `k`: vehicles that entered at least one free-flow
/// travel time ago and have not left, capped by capacity.
pub fn ltm_sending(up: &CumulativeCurve, down: &CumulativeCurve, k: i64, tf_steps: f64, cap: f64) -> f64 {
    (up.at(k as f64 + 1.0 - tf_steps) - down.at(k as f64)).min(cap).max(0.0)
}

/// Receiving flow at step `k`: jam storage freed by departures one backward
/// wave travel time ago, less what has entered, capped by capacity.
pub fn ltm_receiving(
    up: &CumulativeCurve,
    down: &CumulativeCurve,
    k: i64,
    tb_steps: f64,
    storage: f64,
    cap: f64,
) -> f64 {
    (down.at(k as f64 + 1.0 - tb_steps) + storage - up.current())
        .min(cap)
        .max(0.0)
}

#[derive(Clone, Debug)]
pub struct LtmLink {
    link: Link,
    tf_steps: f64,
    tb_steps: f64,
    storage: f64,
    /// Per-step flow cap, from [`Link::kinematic_capacity`].
    capacity: f64,
    up: CumulativeCurve,
    down: CumulativeCurve,
    queue: VecDeque<(Packet, f64)>,
    inflow: f64,
    outflow: f64,
    step: i64,
}

impl LtmLink {
    pub fn new(link: &Link, dt: f64) -> Self {
        let tf_steps = (link.length_m / (link.vf * dt)).max(1.0);
        let tb_steps = (link.length_m / (link.vb * dt)).max(1.0);
        let retain = tf_steps.max(tb_steps).ceil() as usize + 3;
        LtmLink {
            link: link.clone(),
            tf_steps,
            tb_steps,
            storage: link.storage(),
            capacity: link.kinematic_capacity() * dt,
            up: CumulativeCurve::new(retain),
            down: CumulativeCurve::new(retain),
            queue: VecDeque::new(),
            inflow: 0.0,
            outflow: 0.0,
            step: 0,
        }
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn occupancy(&self) -> f64 {
        self.up.current() - self.down.current()
    }

    pub fn storage(&self) -> f64 {
        self.storage
    }

    pub fn upstream_count(&self) -> f64 {
        self.up.current()
    }

    pub fn downstream_count(&self) -> f64 {
        self.down.current()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Samples both curves for step `k`. Everything accepted before this call
    /// is counted at `k`; everything after it at `k + 1`.
    pub fn begin_step(&mut self, k: i64) {
        self.up.push(k);
        self.down.push(k);
        self.step = k;
    }

    /// Sending flow for the current step; call after [`LtmLink::begin_step`].
    pub fn sending(&self) -> f64 {
        ltm_sending(&self.up, &self.down, self.step, self.tf_steps, self.capacity).min(self.occupancy())
    }

    /// Receiving flow at step `k`, less what already entered during it.
    pub fn receiving(&self, k: i64) -> f64 {
        let cap = self.capacity - self.inflow;
        ltm_receiving(&self.up, &self.down, k, self.tb_steps, self.storage, cap)
    }

    pub fn accept(&mut self, packet: Packet, now: f64) {
        self.up.add(packet.size);
        self.inflow += packet.size;
        self.queue.push_back((packet, now));
    }

    pub fn head(&self) -> Option<&Packet> {
        self.queue.front().map(|(p, _)| p)
    }

    pub fn take_head(&mut self, amount: f64, next_id: &mut u64) -> Packet {
        let (front, _) = self.queue.front_mut().expect("take_head on empty link");
        let out = if amount >= front.size {
            self.queue.pop_front().expect("non-empty").0
        } else {
            let frag = front.split_off(amount, PacketId(*next_id));
            *next_id += 1;
            frag
        };
        self.down.add(out.size);
        self.outflow += out.size;
        out
    }

    pub fn take_counters(&mut self) -> (f64, f64) {
        let c = (self.inflow, self.outflow);
        self.inflow = 0.0;
        self.outflow = 0.0;
        c
    }

    /// Packets with their position as the share of free-flow travel time
    /// elapsed since entry (capped at 1) and the link's equilibrium speed.
    pub fn positions(&self, now: f64) -> impl Iterator<Item = (&Packet, f64, f64)> + '_ {
        let density = self.occupancy() / (self.link.lanes as f64 * self.link.length_m / 1000.0);
        let speed = self.link.equilibrium_speed(density);
        let tf = self.link.free_flow_time();
        self.queue
            .iter()
            .map(move |(p, entered)| (p, ((now - entered) / tf).clamp(0.0, 1.0), speed))
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> + '_ {
        self.queue.iter().map(|(p, _)| p)
    }
}
