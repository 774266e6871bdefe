//! Cell Transmission Model links.
//!
//! A link is cut into cells of length `vf * dt` (the last cell absorbs the
//! rounding residual). Flows between cells are `min(sending, receiving)`
//! evaluated on the state at the start of the in-element phase, and packets
//! ride through the cells in FIFO order, splitting when a flow ends inside a
//! packet.

use std::collections::VecDeque;

use crate::network::Link;
use crate::packet::{movable, Packet, PacketId};

/// Sending flow of a cell at `density` (veh/lane/km): free-flow advance or
/// capacity, whichever is smaller.
pub fn ctm_sending(link: &Link, density: f64, dt: f64) -> f64 {
    let free = density * link.lanes as f64 * link.vf * dt / 1000.0;
    free.min(link.qmax * dt).max(0.0)
}

/// Receiving flow of a cell at `density` (veh/lane/km): backward-wave supply
/// or capacity, whichever is smaller; zero at jam density.
pub fn ctm_receiving(link: &Link, density: f64, dt: f64) -> f64 {
    let supply = link.vb * dt * (link.kjam - density) * link.lanes as f64 / 1000.0;
    supply.min(link.qmax * dt).max(0.0)
}

#[derive(Clone, Debug)]
struct Resident {
    packet: Packet,
    cell: u32,
    entered_at: f64,
}

fn same_piece(a: &Resident, b: &Resident) -> bool {
    a.cell == b.cell
        && a.packet.parent == b.packet.parent
        && a.packet.path == b.packet.path
        && a.packet.leg == b.packet.leg
        && a.packet.depart_time == b.packet.depart_time
}

#[derive(Clone, Debug)]
pub struct CtmLink {
    link: Link,
    dt: f64,
    /// Cell lengths in meters.
    lengths: Vec<f64>,
    /// Cell storage in vehicles.
    storage: Vec<f64>,
    occupancy: Vec<f64>,
    /// Front is the most downstream packet.
    queue: VecDeque<Resident>,
    total: f64,
    inflow: f64,
    outflow: f64,
    internal: f64,
}

impl CtmLink {
    pub fn new(link: &Link, dt: f64) -> Self {
        let dx = link.vf * dt;
        let n = ((link.length_m / dx).round() as usize).max(1);
        let mut lengths = vec![dx; n];
        lengths[n - 1] = link.length_m - dx * (n - 1) as f64;
        let storage = lengths
            .iter()
            .map(|l| link.kjam * link.lanes as f64 * l / 1000.0)
            .collect();
        CtmLink {
            link: link.clone(),
            dt,
            lengths,
            storage,
            occupancy: vec![0.0; n],
            queue: VecDeque::new(),
            total: 0.0,
            inflow: 0.0,
            outflow: 0.0,
            internal: 0.0,
        }
    }

    pub fn link(&self) -> &Link {
        &self.link
    }

    pub fn cell_count(&self) -> usize {
        self.lengths.len()
    }

    pub fn cell_occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn cell_lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Density of cell `i` in vehicles per lane per km.
    pub fn cell_density(&self, i: usize) -> f64 {
        self.occupancy[i] / (self.link.lanes as f64 * self.lengths[i] / 1000.0)
    }

    pub fn occupancy(&self) -> f64 {
        self.total
    }

    pub fn storage(&self) -> f64 {
        self.storage.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    fn cell_sending(&self, i: usize) -> f64 {
        ctm_sending(&self.link, self.cell_density(i), self.dt).min(self.occupancy[i])
    }

    fn cell_receiving(&self, i: usize) -> f64 {
        let free = (self.storage[i] - self.occupancy[i]).max(0.0);
        ctm_receiving(&self.link, self.cell_density(i), self.dt).min(free)
    }

    /// What the last cell can discharge this step.
    pub fn sending(&self) -> f64 {
        self.cell_sending(self.cell_count() - 1)
    }

    /// What the first cell can absorb this step, less what already entered
    /// during the step.
    pub fn receiving(&self) -> f64 {
        (self.cell_receiving(0).min(self.link.qmax * self.dt - self.inflow)).max(0.0)
    }

    /// Computes every internal flow from the current state, then moves them
    /// all at once. Returns the mass moved between cells.
    pub fn advance(&mut self, next_id: &mut u64) -> f64 {
        let n = self.cell_count();
        if n == 1 || self.total == 0.0 {
            return 0.0;
        }
        // gamma[i]: flow from cell i into cell i + 1
        let gamma: Vec<f64> = (0..n - 1)
            .map(|i| self.cell_sending(i).min(self.cell_receiving(i + 1)))
            .collect();
        let mut moved_total = 0.0;
        // Packets of one cell are contiguous; walk from the downstream end so
        // that each boundary takes the front of its upstream cell.
        let mut idx = 0;
        for cell in (0..n - 1).rev() {
            while idx < self.queue.len() && self.queue[idx].cell as usize > cell {
                idx += 1;
            }
            let mut budget = gamma[cell];
            let mut moved = 0.0;
            while budget > 0.0 && idx < self.queue.len() && self.queue[idx].cell as usize == cell {
                let size = self.queue[idx].packet.size;
                let Some(m) = movable(size, budget) else { break };
                if m >= size {
                    self.queue[idx].cell += 1;
                    idx += 1;
                    moved += size;
                    budget -= size;
                } else {
                    let frag = self.queue[idx].packet.split_off(m, PacketId(*next_id));
                    *next_id += 1;
                    moved += frag.size;
                    let entered_at = self.queue[idx].entered_at;
                    self.queue.insert(
                        idx,
                        Resident {
                            packet: frag,
                            cell: cell as u32 + 1,
                            entered_at,
                        },
                    );
                    idx += 1;
                    break;
                }
            }
            if moved > 0.0 {
                self.occupancy[cell] -= moved;
                self.occupancy[cell + 1] += moved;
                moved_total += moved;
            }
        }
        if moved_total > 0.0 {
            self.resync();
        }
        self.internal += moved_total;
        moved_total
    }

    /// Recomputes cell sums from the packets so rounding never accumulates,
    /// and merges neighbouring fragments of one packet that share a cell.
    fn resync(&mut self) {
        self.occupancy.iter_mut().for_each(|o| *o = 0.0);
        let queue = self.queue.make_contiguous();
        let mut w = 0;
        for r in 0..queue.len() {
            if w > 0 && same_piece(&queue[w - 1], &queue[r]) {
                queue[w - 1].packet.size += queue[r].packet.size;
            } else {
                queue.swap(w, r);
                w += 1;
            }
        }
        self.queue.truncate(w);
        for r in &self.queue {
            self.occupancy[r.cell as usize] += r.packet.size;
        }
        self.total = self.occupancy.iter().sum();
    }

    /// Places a packet at the upstream end.
    pub fn accept(&mut self, packet: Packet, now: f64) {
        self.occupancy[0] += packet.size;
        self.total += packet.size;
        self.inflow += packet.size;
        self.queue.push_back(Resident {
            packet,
            cell: 0,
            entered_at: now,
        });
    }

    /// The most downstream packet, if it sits in the last cell.
    pub fn head(&self) -> Option<&Packet> {
        self.queue
            .front()
            .filter(|r| r.cell as usize == self.cell_count() - 1)
            .map(|r| &r.packet)
    }

    /// Removes `amount` from the head packet, splitting it when `amount` is
    /// less than its size.
    pub fn take_head(&mut self, amount: f64, next_id: &mut u64) -> Packet {
        let last = self.cell_count() - 1;
        let front = self.queue.front_mut().expect("take_head on empty link");
        let out = if amount >= front.packet.size {
            self.queue.pop_front().expect("non-empty").packet
        } else {
            let frag = front.packet.split_off(amount, PacketId(*next_id));
            *next_id += 1;
            frag
        };
        self.occupancy[last] -= out.size;
        self.total -= out.size;
        if self.queue.is_empty() {
            self.occupancy[last] = 0.0;
            self.total = 0.0;
        } else if self.occupancy[last] < 0.0 {
            self.resync();
        }
        self.outflow += out.size;
        out
    }

    /// Inflow, outflow and internal movement since the last call.
    pub fn take_counters(&mut self) -> (f64, f64, f64) {
        let c = (self.inflow, self.outflow, self.internal);
        self.inflow = 0.0;
        self.outflow = 0.0;
        self.internal = 0.0;
        c
    }

    /// Packets with their position as a fraction of link length (cell
    /// midpoints) and the equilibrium speed of their cell.
    pub fn positions(&self) -> impl Iterator<Item = (&Packet, f64, f64)> + '_ {
        let mut starts = Vec::with_capacity(self.cell_count());
        let mut acc = 0.0;
        for l in &self.lengths {
            starts.push(acc);
            acc += l;
        }
        self.queue.iter().map(move |r| {
            let c = r.cell as usize;
            let pos = (starts[c] + self.lengths[c] / 2.0) / self.link.length_m;
            let speed = self.link.equilibrium_speed(self.cell_density(c));
            (&r.packet, pos.clamp(0.0, 1.0), speed)
        })
    }

    pub fn packets(&self) -> impl Iterator<Item = &Packet> + '_ {
        self.queue.iter().map(|r| &r.packet)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::PathId;
    use crate::network::NodeId;

    fn link(length: f64, qmax: f64) -> Link {
        Link {
            label: "l".into(),
            from: NodeId(0),
            to: NodeId(1),
            length_m: length,
            lanes: 1,
            vf: 10.0,
            vb: 3.5,
            kjam: 150.0,
            qmax,
            road_type: None,
        }
    }

    fn packet(id: u64, size: f64) -> Packet {
        Packet::new(PacketId(id), PathId(0), size, 0.0)
    }

    #[test]
    fn sending_examples() {
        let l = link(100.0, 0.5);
        assert_eq!(ctm_sending(&l, 0.0, 1.0), 0.0);
        // critical density 1000 * qm / vf = 50 veh/km: both branches equal qm
        assert_eq!(ctm_sending(&l, 50.0, 1.0), 0.5);
        assert_eq!(ctm_sending(&l, 150.0, 1.0), 0.5);
        assert_eq!(ctm_sending(&l, 20.0, 1.0), 0.2);
    }

    #[test]
    fn receiving_examples() {
        let l = link(100.0, 0.5);
        assert_eq!(ctm_receiving(&l, 150.0, 1.0), 0.0);
        let wide = link(100.0, 2.0);
        assert!((ctm_receiving(&wide, 0.0, 1.0) - 0.525).abs() < 1e-15);
        assert_eq!(ctm_receiving(&l, 0.0, 1.0), 0.5);
        // near jam the supply branch binds
        let k = 149.0;
        assert!((ctm_receiving(&l, k, 1.0) - 3.5 * 1.0 / 1000.0).abs() < 1e-15);
        for i in 0..150 {
            let k = i as f64;
            assert!(ctm_receiving(&l, k + 1.0, 1.0) <= ctm_receiving(&l, k, 1.0));
        }
    }

    #[test]
    fn cell_layout_folds_residual() {
        let c = CtmLink::new(&link(34.0, 1.0), 1.0);
        assert_eq!(c.cell_count(), 3);
        assert_eq!(c.cell_lengths(), &[10.0, 10.0, 14.0]);
        let short = CtmLink::new(&link(4.0, 1.0), 1.0);
        assert_eq!(short.cell_count(), 1);
        assert_eq!(short.cell_lengths(), &[4.0]);
    }

    #[test]
    fn one_vehicle_reaches_last_cell_after_two_steps() {
        // vb = vf so the empty-cell supply (1.5) does not bind
        let mut l = link(30.0, 1.0);
        l.vb = 10.0;
        let mut c = CtmLink::new(&l, 1.0);
        let mut ids = 10;
        c.accept(packet(1, 1.0), 0.0);
        assert!(c.head().is_none());
        c.advance(&mut ids);
        assert_eq!(c.cell_occupancy(), &[0.0, 1.0, 0.0]);
        c.advance(&mut ids);
        assert_eq!(c.cell_occupancy(), &[0.0, 0.0, 1.0]);
        assert_eq!(c.occupancy(), 1.0);
        assert_eq!(c.sending(), 1.0);
        assert_eq!(c.head().unwrap().id, PacketId(1));
    }

    #[test]
    fn jammed_link_with_blocked_exit_is_frozen() {
        let l = link(30.0, 1.0);
        let mut c = CtmLink::new(&l, 1.0);
        let mut ids = 100;
        for i in 0..3 {
            for (j, n) in [(0, 0.5), (1, 1.0)] {
                c.queue.push_back(Resident {
                    packet: packet(i * 2 + j, n),
                    cell: 2 - i as u32,
                    entered_at: 0.0,
                });
            }
        }
        c.resync();
        assert_eq!(c.occupancy(), 4.5);
        assert_eq!(c.cell_occupancy(), &[1.5, 1.5, 1.5]);
        let before = c.cell_occupancy().to_vec();
        assert_eq!(c.advance(&mut ids), 0.0);
        assert_eq!(c.cell_occupancy(), before.as_slice());
        assert_eq!(c.receiving(), 0.0);
    }

    #[test]
    fn critical_state_is_stationary() {
        // qm = 0.3 puts critical density at 30 veh/km, where the supply
        // 3.5 * 0.12 = 0.42 exceeds capacity.
        let l = link(50.0, 0.3);
        let mut c = CtmLink::new(&l, 1.0);
        let mut ids = 0;
        for cell in (0..5).rev() {
            c.queue.push_back(Resident {
                packet: packet(ids, 0.3),
                cell,
                entered_at: 0.0,
            });
            ids += 1;
        }
        c.resync();
        for _ in 0..20 {
            assert!((c.sending() - 0.3).abs() < 1e-12);
            assert!((c.receiving() - 0.3).abs() < 1e-12);
            let inflow = c.receiving();
            let s = c.sending();
            let moved = c.advance(&mut ids);
            assert!((moved - 4.0 * 0.3).abs() < 1e-12);
            c.take_head(s, &mut ids);
            c.accept(packet(ids, inflow), 0.0);
            ids += 1;
            c.take_counters();
            for &o in c.cell_occupancy() {
                assert!((o - 0.3).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn split_inside_flow_keeps_order() {
        let mut c = CtmLink::new(&link(20.0, 0.4), 1.0);
        let mut ids = 50;
        c.accept(packet(1, 1.0), 0.0);
        c.advance(&mut ids);
        // 0.4 moved forward as a new fragment, 0.6 stays behind
        let sizes: Vec<_> = c.packets().map(|p| (p.id.0, p.size)).collect();
        assert_eq!(sizes.len(), 2);
        assert_eq!(sizes[0].1 + sizes[1].1, 1.0);
        assert_eq!(sizes[0].0, 50);
        assert!((sizes[0].1 - 0.4).abs() < 1e-15);
        assert_eq!(c.cell_occupancy()[1], sizes[0].1);
    }
}
