//! Run metrics and their two text renderings.
//!
//! The machine format is one record per line, space separated, with
//! sections always emitted in the same order:
//!
//! ```text
//! gloss-report 1
//! scenario <name>
//! seed <n>
//! horizon <n>
//! deliveries <count>
//! delivery <tick> <user> <hearsay> <channel>        (one per delivery)
//! notify-failed <n>
//! envelopes created=<n> delivered=<n> undeliverable=<n> in_flight=<n>
//! arrivals total=<n>
//! arrivals.depth <depth> <n>                         (every depth)
//! arrivals.node <node> <depth> <n>                   (every node)
//! hops <h> <n>                                       (observed hop counts)
//! cache.depth <depth> hits=<n> misses=<n>            (every depth)
//! transitions <user> <n at depth 0> <n at depth 1> ...
//! counter <key> <n>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::ids::{HearsayId, NodeId, Tick, UserId};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub tick: Tick,
    pub user: UserId,
    pub hearsay: HearsayId,
    pub channel: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnvelopeTotals {
    pub created: u64,
    pub delivered: u64,
    pub undeliverable: u64,
    /// Envelopes still travelling when the run stopped.
    pub in_flight: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheCounts {
    pub hits: u64,
    pub misses: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeArrivals {
    pub depth: usize,
    pub arrivals: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Human,
    Machine,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Report {
    pub scenario: String,
    pub seed: u64,
    pub horizon: Tick,
    pub deliveries: Vec<Delivery>,
    pub notify_failed: u64,
    pub envelopes: EnvelopeTotals,
    /// Envelope arrivals per node.
    pub by_node: BTreeMap<NodeId, NodeArrivals>,
    /// Envelope arrivals per tree depth, root first.
    pub by_depth: Vec<u64>,
    /// Delivered envelopes keyed by hop count.
    pub hops: BTreeMap<u32, u64>,
    /// Profile cache lookups per depth, root first.
    pub cache: Vec<CacheCounts>,
    /// Region transitions per depth, root first, for each user trace.
    pub transitions: BTreeMap<UserId, Vec<usize>>,
    pub counters: BTreeMap<String, u64>,
}

impl Report {
    /// All-zero tables for a world of the given depth.
    pub fn empty(max_depth: usize) -> Self {
        Self {
            by_depth: vec![0; max_depth + 1],
            cache: vec![CacheCounts::default(); max_depth + 1],
            ..Self::default()
        }
    }

    pub fn total_arrivals(&self) -> u64 {
        self.by_node.values().map(|n| n.arrivals).sum()
    }

    pub fn arrivals_at(&self, node: &NodeId) -> u64 {
        self.by_node.get(node).map_or(0, |n| n.arrivals)
    }

    pub fn deliveries_to(&self, user: &UserId) -> usize {
        self.deliveries.iter().filter(|d| &d.user == user).count()
    }

    pub fn counter(&self, key: &str) -> u64 {
        self.counters.get(key).copied().unwrap_or(0)
    }

    /// Cross-checks the tables against each other.
    pub fn check(&self) -> Result<(), String> {
        let e = self.envelopes;
        if e.delivered + e.undeliverable + e.in_flight != e.created {
            return Err(format!(
                "envelopes do not add up: {} delivered + {} undeliverable + {} in flight != {} created",
                e.delivered, e.undeliverable, e.in_flight, e.created
            ));
        }
        let depth_sum: u64 = self.by_depth.iter().sum();
        if depth_sum != self.total_arrivals() {
            return Err(format!(
                "arrivals by depth sum to {depth_sum}, by node to {}",
                self.total_arrivals()
            ));
        }
        for (node, n) in &self.by_node {
            if n.depth >= self.by_depth.len() {
                return Err(format!("node `{node}` at depth {} beyond the depth table", n.depth));
            }
        }
        let hist: u64 = self.hops.values().sum();
        if hist != e.delivered {
            return Err(format!("hop histogram holds {hist} envelopes, {} were delivered", e.delivered));
        }
        for (user, row) in &self.transitions {
            if let Some(d) = row.windows(2).position(|w| w[0] > w[1]) {
                return Err(format!(
                    "transitions for `{user}` rise toward the root: depth {d} has {}, depth {} has {}",
                    row[d],
                    d + 1,
                    row[d + 1]
                ));
            }
        }
        Ok(())
    }

    pub fn emit(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Machine => self.machine(),
            ReportFormat::Human => self.human(),
        }
    }

    fn machine(&self) -> String {
        let mut s = String::new();
        let e = self.envelopes;
        writeln!(s, "gloss-report 1").unwrap();
        writeln!(s, "scenario {}", self.scenario).unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "horizon {}", self.horizon).unwrap();
        writeln!(s, "deliveries {}", self.deliveries.len()).unwrap();
        for d in &self.deliveries {
            writeln!(s, "delivery {} {} {} {}", d.tick, d.user, d.hearsay, d.channel).unwrap();
        }
        writeln!(s, "notify-failed {}", self.notify_failed).unwrap();
        writeln!(
            s,
            "envelopes created={} delivered={} undeliverable={} in_flight={}",
            e.created, e.delivered, e.undeliverable, e.in_flight
        )
        .unwrap();
        writeln!(s, "arrivals total={}", self.total_arrivals()).unwrap();
        for (d, n) in self.by_depth.iter().enumerate() {
            writeln!(s, "arrivals.depth {d} {n}").unwrap();
        }
        for (node, n) in &self.by_node {
            writeln!(s, "arrivals.node {node} {} {}", n.depth, n.arrivals).unwrap();
        }
        for (h, n) in &self.hops {
            writeln!(s, "hops {h} {n}").unwrap();
        }
        for (d, c) in self.cache.iter().enumerate() {
            writeln!(s, "cache.depth {d} hits={} misses={}", c.hits, c.misses).unwrap();
        }
        for (user, row) in &self.transitions {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(s, "transitions {user} {}", cells.join(" ")).unwrap();
        }
        for (k, v) in &self.counters {
            writeln!(s, "counter {k} {v}").unwrap();
        }
        s
    }

    fn human(&self) -> String {
        let mut s = String::new();
        let e = self.envelopes;
        writeln!(s, "Scenario {} (seed {}, horizon {})", self.scenario, self.seed, self.horizon).unwrap();

        writeln!(s, "\nDeliveries: {}", self.deliveries.len()).unwrap();
        if !self.deliveries.is_empty() {
            writeln!(s, "  {:>6}  {:<12} {:<16} channel", "tick", "user", "hearsay").unwrap();
            for d in &self.deliveries {
                writeln!(s, "  {:>6}  {:<12} {:<16} {}", d.tick, d.user.as_str(), d.hearsay.as_str(), d.channel).unwrap();
            }
        }
        writeln!(s, "  failed notifications: {}", self.notify_failed).unwrap();

        writeln!(
            s,
            "\nEnvelopes: {} created, {} delivered, {} undeliverable, {} in flight",
            e.created, e.delivered, e.undeliverable, e.in_flight
        )
        .unwrap();

        writeln!(s, "\nArrivals by depth (total {})", self.total_arrivals()).unwrap();
        for (d, n) in self.by_depth.iter().enumerate() {
            writeln!(s, "  {d:>5}  {n:>8}").unwrap();
        }
        writeln!(s, "\nArrivals by node").unwrap();
        for (node, n) in &self.by_node {
            writeln!(s, "  {:<20} depth {:>2}  {:>8}", node.as_str(), n.depth, n.arrivals).unwrap();
        }

        writeln!(s, "\nHop counts of delivered envelopes").unwrap();
        if self.hops.is_empty() {
            writeln!(s, "  (none)").unwrap();
        }
        for (h, n) in &self.hops {
            writeln!(s, "  {h:>5}  {n:>8}").unwrap();
        }

        writeln!(s, "\nProfile cache by depth").unwrap();
        writeln!(s, "  {:>5}  {:>8}  {:>8}", "depth", "hits", "misses").unwrap();
        for (d, c) in self.cache.iter().enumerate() {
            writeln!(s, "  {d:>5}  {:>8}  {:>8}", c.hits, c.misses).unwrap();
        }

        writeln!(s, "\nRegion transitions by depth (root first)").unwrap();
        if self.transitions.is_empty() {
            writeln!(s, "  (no user traces)").unwrap();
        }
        for (user, row) in &self.transitions {
            let cells: Vec<String> = row.iter().map(|n| format!("{n:>6}")).collect();
            writeln!(s, "  {:<12}{}", user.as_str(), cells.join("")).unwrap();
        }

        if !self.counters.is_empty() {
            writeln!(s, "\nCounters").unwrap();
            for (k, v) in &self.counters {
                writeln!(s, "  {k:<48} {v:>8}").unwrap();
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_report_is_all_zero() {
        let r = Report::empty(3);
        r.check().unwrap();
        let text = r.emit(ReportFormat::Machine);
        assert!(text.contains("deliveries 0\n"));
        assert!(text.contains("envelopes created=0 delivered=0 undeliverable=0 in_flight=0\n"));
        for d in 0..=3 {
            assert!(text.contains(&format!("arrivals.depth {d} 0\n")));
            assert!(text.contains(&format!("cache.depth {d} hits=0 misses=0\n")));
        }
        let human = r.emit(ReportFormat::Human);
        assert!(human.contains("Deliveries: 0"));
    }

    #[test]
    fn check_catches_inconsistency() {
        let mut r = Report::empty(1);
        r.envelopes.created = 1;
        assert!(r.check().unwrap_err().contains("add up"));
        r.envelopes.delivered = 1;
        assert!(r.check().unwrap_err().contains("histogram"));
        r.hops.insert(0, 1);
        r.check().unwrap();
        r.by_node.insert("n".into(), NodeArrivals { depth: 1, arrivals: 2 });
        assert!(r.check().unwrap_err().contains("by depth"));
        r.by_depth[1] = 2;
        r.check().unwrap();
        r.transitions.insert("u".into(), vec![2, 1]);
        assert!(r.check().unwrap_err().contains("rise"));
    }
}
