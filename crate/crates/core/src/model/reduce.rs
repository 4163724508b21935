//! Roll single- and two-phase laterals into their three-phase attachment bus.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{BusId, FeederModel};

/// Record of what `reduce_laterals` removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Provenance {
    /// Attachment bus to the lateral subtrees hanging off it. Each subtree is
    /// the sorted list of removed buses.
    pub subtrees: BTreeMap<BusId, Vec<Vec<BusId>>>,
}

impl Provenance {
    pub fn subtree_count(&self) -> usize {
        self.subtrees.values().map(Vec::len).sum()
    }

    pub fn removed_buses(&self) -> BTreeSet<BusId> {
        self.subtrees.values().flatten().flatten().copied().collect()
    }

    /// The retained bus a removed bus was rolled into.
    pub fn attachment_of(&self, bus: BusId) -> Option<BusId> {
        self.subtrees
            .iter()
            .find(|(_, trees)| trees.iter().any(|t| t.contains(&bus)))
            .map(|(&root, _)| root)
    }
}

/// Keep the part of the feeder reachable from the slack bus through
/// three-phase lines only.
///
/// Everything else is grouped into subtrees keyed by the retained bus they
/// attach to, so callers can move lateral loads onto that bus.
pub fn reduce_laterals(feeder: &FeederModel) -> (FeederModel, Provenance) {
    let adjacency = feeder.adjacency();
    let idx = |b: BusId| feeder.bus_index(b).expect("validated feeder");
    let full = |l| feeder.line(l).is_some_and(|s| s.phases.is_full());

    let mut kept = vec![false; feeder.bus_count()];
    kept[idx(feeder.slack)] = true;
    let mut queue = VecDeque::from([feeder.slack]);
    while let Some(b) = queue.pop_front() {
        for &(n, l) in &adjacency[idx(b)] {
            if full(l) && !kept[idx(n)] {
                kept[idx(n)] = true;
                queue.push_back(n);
            }
        }
    }

    let mut provenance = Provenance::default();
    let mut assigned = kept.clone();
    for bus in &feeder.buses {
        if !kept[idx(bus.id)] {
            continue;
        }
        let mut roots: Vec<BusId> = adjacency[idx(bus.id)]
            .iter()
            .filter(|&&(n, _)| !assigned[idx(n)])
            .map(|&(n, _)| n)
            .collect();
        roots.sort();
        for root in roots {
            if assigned[idx(root)] {
                continue;
            }
            let mut tree = Vec::new();
            let mut queue = VecDeque::from([root]);
            assigned[idx(root)] = true;
            while let Some(b) = queue.pop_front() {
                tree.push(b);
                for &(n, _) in &adjacency[idx(b)] {
                    if !assigned[idx(n)] {
                        assigned[idx(n)] = true;
                        queue.push_back(n);
                    }
                }
            }
            tree.sort();
            provenance.subtrees.entry(bus.id).or_default().push(tree);
        }
    }

    let buses = feeder.buses.iter().filter(|b| kept[idx(b.id)]).cloned().collect();
    let lines = feeder
        .lines
        .iter()
        .filter(|l| l.phases.is_full() && kept[idx(l.from_bus)] && kept[idx(l.to_bus)])
        .cloned()
        .collect();
    let reduced = FeederModel::new(
        feeder.name.clone(),
        feeder.base_mva,
        buses,
        lines,
        feeder.slack,
    )
    .expect("a connected three-phase core of a valid feeder is valid");
    (reduced, provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::feeder::tests::two_bus_json;

    fn star_with_spurs() -> FeederModel {
        // 1 -abc- 2, with single-phase spurs 2-3 (a) and 2-4 (c)
        let base = two_bus_json();
        let json: serde_json::Value = serde_json::from_str(&base).unwrap();
        let mut json = json;
        let line = json["lines"][0].clone();
        for (to, ph) in [(3, "a"), (4, "c")] {
            json["buses"]
                .as_array_mut()
                .unwrap()
                .push(serde_json::json!({"id": to, "kv_base": 1.0, "type": "pq"}));
            let mut l = line.clone();
            l["from"] = 2.into();
            l["to"] = to.into();
            l["phases"] = ph.into();
            json["lines"].as_array_mut().unwrap().push(l);
        }
        FeederModel::from_json(&json.to_string()).unwrap()
    }

    #[test]
    fn spurs_are_rolled_up() {
        let f = star_with_spurs();
        assert_eq!(f.bus_count(), 4);
        let (r, prov) = reduce_laterals(&f);
        assert_eq!(r.bus_count(), 2);
        assert_eq!(r.lines.len(), 1);
        assert_eq!(prov.subtree_count(), 2);
        assert_eq!(prov.subtrees[&BusId(2)], vec![vec![BusId(3)], vec![BusId(4)]]);
        assert_eq!(prov.attachment_of(BusId(4)), Some(BusId(2)));
    }

    #[test]
    fn three_phase_feeder_unchanged() {
        let f = FeederModel::from_json(&two_bus_json()).unwrap();
        let (r, prov) = reduce_laterals(&f);
        assert_eq!(r.buses, f.buses);
        assert_eq!(r.lines, f.lines);
        assert!(prov.subtrees.is_empty());
    }
}
