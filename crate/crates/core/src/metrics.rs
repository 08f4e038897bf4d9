//! Path metrics: NE, TL, SR, OSR, SPL.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance, Vec3};
use crate::world::{Category, NodeId, WorldGraph};

/// Stop-to-goal distance counted as success, in meters.
pub const SUCCESS_RADIUS: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    /// Every traversed node, starting at the start node.
    pub trajectory: Vec<NodeId>,
    pub stop_position: Vec3,
    pub goal_node_id: NodeId,
}

/// Column order is fixed: NE, TL, SR, OSR, SPL.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    #[serde(rename = "NE")]
    pub ne: f64,
    #[serde(rename = "TL")]
    pub tl: f64,
    #[serde(rename = "SR")]
    pub sr: f64,
    #[serde(rename = "OSR")]
    pub osr: f64,
    #[serde(rename = "SPL")]
    pub spl: f64,
}

impl MetricsSummary {
    pub const COLUMNS: [&'static str; 5] = ["NE", "TL", "SR", "OSR", "SPL"];

    pub fn values(&self) -> [f64; 5] {
        [self.ne, self.tl, self.sr, self.osr, self.spl]
    }
}

pub fn episode_metrics(world: &WorldGraph, record: &EpisodeRecord) -> Result<MetricsSummary> {
    episode_metrics_with_radius(world, record, SUCCESS_RADIUS)
}

/// Same as [`episode_metrics`] with a non-default success radius (diagnostics only).
pub fn episode_metrics_with_radius(world: &WorldGraph, record: &EpisodeRecord, radius: f64) -> Result<MetricsSummary> {
    let goal = world
        .node(record.goal_node_id)
        .map_err(|_| Error::Evaluation(format!("goal {} is not in the world", record.goal_node_id)))?;
    let start = *record.trajectory.first().ok_or_else(|| Error::Evaluation("empty trajectory".into()))?;
    let mut tl = 0.0;
    for w in record.trajectory.windows(2) {
        tl += world
            .edge_length(w[0], w[1])
            .ok_or_else(|| Error::Evaluation(format!("trajectory step {} -> {} is not a world edge", w[0], w[1])))?;
    }
    let ne = distance(&record.stop_position, &goal.position);
    let sr = if ne <= radius { 1.0 } else { 0.0 };
    let mut closest = f64::INFINITY;
    for &id in &record.trajectory {
        let n = world.node(id).map_err(|_| Error::Evaluation(format!("trajectory node {id} is not in the world")))?;
        closest = closest.min(distance(&n.position, &goal.position));
    }
    let osr = if closest <= radius { 1.0 } else { 0.0 };
    let l = world.geodesic(start, record.goal_node_id)?;
    let spl = if tl == 0.0 { sr } else { sr * l / l.max(tl) };
    Ok(MetricsSummary { ne, tl, sr, osr, spl })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub episodes: usize,
    /// Means, with SR and OSR in percent.
    pub overall: MetricsSummary,
    pub by_category: BTreeMap<String, MetricsSummary>,
}

fn mean_percent(items: &[&MetricsSummary]) -> MetricsSummary {
    let n = items.len() as f64;
    let mut m = MetricsSummary::default();
    for s in items {
        m.ne += s.ne;
        m.tl += s.tl;
        m.sr += s.sr;
        m.osr += s.osr;
        m.spl += s.spl;
    }
    MetricsSummary { ne: m.ne / n, tl: m.tl / n, sr: 100.0 * m.sr / n, osr: 100.0 * m.osr / n, spl: m.spl / n }
}

pub fn aggregate(records: &[(Category, MetricsSummary)]) -> Result<Aggregate> {
    if records.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let all: Vec<&MetricsSummary> = records.iter().map(|(_, m)| m).collect();
    let mut groups: BTreeMap<String, Vec<&MetricsSummary>> = BTreeMap::new();
    for (c, m) in records {
        groups.entry(c.label().to_string()).or_default().push(m);
    }
    Ok(Aggregate {
        episodes: records.len(),
        overall: mean_percent(&all),
        by_category: groups.into_iter().map(|(k, v)| (k, mean_percent(&v))).collect(),
    })
}

/// CSV rows `label,NE,TL,SR,OSR,SPL`.
pub fn summaries_to_csv<'a>(rows: impl IntoIterator<Item = (&'a str, &'a MetricsSummary)>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label"];
    header.extend(MetricsSummary::COLUMNS);
    w.write_record(&header)?;
    for (label, m) in rows {
        let mut rec = vec![label.to_string()];
        rec.extend(m.values().iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::WorldNode;

    fn line_world() -> WorldGraph {
        let nodes = (0..5)
            .map(|i| WorldNode {
                id: i,
                position: [i as f64 * 2.0, 0.0, 0.0],
                appearance: vec![1.0],
                geometry: vec![0.0],
                semantic: vec![1.0],
                room_type: 0,
            })
            .collect();
        let edges = (0..4).map(|i| (i, i + 1, 2.0)).collect();
        WorldGraph::from_parts(nodes, edges, 1, 1, 1).unwrap()
    }

    #[test]
    fn shortest_path_agent_is_perfect() {
        let w = line_world();
        let r = EpisodeRecord { trajectory: vec![0, 1, 2, 3], stop_position: [6.0, 0.0, 0.0], goal_node_id: 3 };
        let m = episode_metrics(&w, &r).unwrap();
        assert_eq!(m, MetricsSummary { ne: 0.0, tl: 6.0, sr: 1.0, osr: 1.0, spl: 1.0 });
    }

    #[test]
    fn detour_halves_spl() {
        // l = 4, p = 8
        let w = line_world();
        let r = EpisodeRecord { trajectory: vec![0, 1, 2, 1, 2], stop_position: [4.0, 0.0, 0.0], goal_node_id: 2 };
        let m = episode_metrics(&w, &r).unwrap();
        assert_eq!(m.spl, 0.5);
    }

    #[test]
    fn boundary_radius() {
        let w = line_world();
        let r = EpisodeRecord { trajectory: vec![0], stop_position: [4.99, 0.0, 0.0], goal_node_id: 4 };
        let m = episode_metrics(&w, &r).unwrap();
        assert!((m.ne - 3.01).abs() < 1e-12);
        assert_eq!((m.sr, m.spl), (0.0, 0.0));
    }

    #[test]
    fn unknown_goal() {
        let r = EpisodeRecord { trajectory: vec![0], stop_position: [0.0; 3], goal_node_id: 99 };
        assert!(matches!(episode_metrics(&line_world(), &r), Err(Error::Evaluation(_))));
    }

    #[test]
    fn aggregate_examples() {
        let a = MetricsSummary { ne: 1.0, tl: 2.0, sr: 1.0, osr: 1.0, spl: 0.5 };
        let b = MetricsSummary { ne: 5.0, tl: 4.0, sr: 0.0, osr: 1.0, spl: 0.0 };
        let one = aggregate(&[(Category::S1, a)]).unwrap();
        assert_eq!(one.overall, MetricsSummary { sr: 100.0, osr: 100.0, ..a });
        let two = aggregate(&[(Category::S1, a), (Category::S2, b)]).unwrap();
        assert_eq!(two.overall.sr, 50.0);
        assert_eq!(two.by_category.len(), 2);
        assert!(matches!(aggregate(&[]), Err(Error::EmptyAggregation)));
    }

    #[test]
    fn csv_column_order() {
        let m = MetricsSummary::default();
        let s = summaries_to_csv([("row", &m)]).unwrap();
        assert_eq!(s.lines().next().unwrap(), "label,NE,TL,SR,OSR,SPL");
    }
}
