//! World file format: UTF-8 JSON with top-level `nodes` and `edges` arrays.
//! Written one node / one edge per line; the loader re-validates every
//! invariant and reports the line of the offending entry.

use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{NodeId, Violation, WorldGraph, WorldNode};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct WorldFile {
    nodes: Vec<WorldNode>,
    edges: Vec<(NodeId, NodeId, f64)>,
    room_count: Option<usize>,
    object_vocab_size: Option<usize>,
    room_vocab_size: Option<usize>,
}

pub fn world_to_json(world: &WorldGraph) -> String {
    let mut s = String::from("{\n");
    let _ = writeln!(s, "  \"room_count\": {},", world.room_count);
    let _ = writeln!(s, "  \"object_vocab_size\": {},", world.object_vocab_size);
    let _ = writeln!(s, "  \"room_vocab_size\": {},", world.room_vocab_size);
    s.push_str("  \"nodes\": [\n");
    for (i, n) in world.nodes.iter().enumerate() {
        let sep = if i + 1 < world.nodes.len() { "," } else { "" };
        let line = serde_json::to_string(n).expect("world node serializes");
        let _ = writeln!(s, "    {line}{sep}");
    }
    s.push_str("  ],\n  \"edges\": [\n");
    for (i, e) in world.edges.iter().enumerate() {
        let sep = if i + 1 < world.edges.len() { "," } else { "" };
        let line = serde_json::to_string(e).expect("edge serializes");
        let _ = writeln!(s, "    {line}{sep}");
    }
    s.push_str("  ]\n}\n");
    s
}

pub fn save_world(world: &WorldGraph, path: &Path) -> Result<()> {
    std::fs::write(path, world_to_json(world))?;
    Ok(())
}

pub fn load_world(path: &Path) -> Result<WorldGraph> {
    load_world_str(&std::fs::read_to_string(path)?)
}

pub fn load_world_str(text: &str) -> Result<WorldGraph> {
    let file: WorldFile = serde_json::from_str(text)
        .map_err(|e| Error::WorldValidation { line: e.line(), msg: e.to_string() })?;
    let node_lines = element_lines(text, "nodes");
    let edge_lines = element_lines(text, "edges");
    let node_line = |i: usize| node_lines.get(i).copied().unwrap_or(1);
    let edge_line = |i: usize| edge_lines.get(i).copied().unwrap_or(1);

    let object_vocab = file.object_vocab_size.or_else(|| file.nodes.first().map(|n| n.semantic.len())).unwrap_or(0);
    let room_vocab = file
        .room_vocab_size
        .unwrap_or_else(|| file.nodes.iter().map(|n| n.room_type + 1).max().unwrap_or(0));
    let room_count = file.room_count.unwrap_or(room_vocab);

    // duplicate ids and dangling edges are caught before graph assembly
    let mut ids = std::collections::HashSet::new();
    for (i, n) in file.nodes.iter().enumerate() {
        if !ids.insert(n.id) {
            return Err(Error::WorldValidation { line: node_line(i), msg: format!("duplicate node id {}", n.id) });
        }
    }
    for (k, &(a, b, _)) in file.edges.iter().enumerate() {
        if !ids.contains(&a) || !ids.contains(&b) {
            return Err(Error::WorldValidation {
                line: edge_line(k),
                msg: format!("edge ({a}, {b}) references an unknown node"),
            });
        }
    }
    let world = WorldGraph::from_parts(file.nodes, file.edges, room_count, object_vocab, room_vocab)?;
    match world.validate() {
        Ok(()) => Ok(world),
        Err(Violation::Node { index, msg }) => Err(Error::WorldValidation { line: node_line(index), msg }),
        Err(Violation::Edge { index, msg }) => Err(Error::WorldValidation { line: edge_line(index), msg }),
    }
}

/// 1-based line numbers where each element of the top-level array `key` starts.
fn element_lines(text: &str, key: &str) -> Vec<usize> {
    let mut lines = Vec::new();
    let mut depth = 0usize;
    let mut line = 1usize;
    let mut in_string = false;
    let mut escaped = false;
    let mut current = String::new();
    let mut last_key = String::new();
    let mut in_target = false;
    let mut expecting = false;
    for c in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
                if depth == 1 {
                    last_key = std::mem::take(&mut current);
                }
            } else if depth == 1 {
                current.push(c);
            }
            if c == '\n' {
                line += 1;
            }
            continue;
        }
        if in_target && depth == 2 && expecting && !c.is_whitespace() && c != ']' {
            lines.push(line);
            expecting = false;
        }
        match c {
            '\n' => line += 1,
            '"' => {
                in_string = true;
                current.clear();
            }
            '{' | '[' => {
                if depth == 1 && c == '[' && last_key == key {
                    in_target = true;
                    expecting = true;
                }
                depth += 1;
            }
            '}' | ']' => {
                depth = depth.saturating_sub(1);
                if depth == 1 {
                    in_target = false;
                }
            }
            ',' if in_target && depth == 2 => expecting = true,
            _ => {}
        }
    }
    lines
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{generate_world, WorldConfig};

    fn world() -> WorldGraph {
        generate_world(&WorldConfig { rooms: 2, nodes_per_room: 3, seed: 1, ..Default::default() }).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let w = world();
        let back = load_world_str(&world_to_json(&w)).unwrap();
        assert_eq!(w, back);
    }

    #[test]
    fn element_lines_follow_layout() {
        let w = world();
        let text = world_to_json(&w);
        let nodes = element_lines(&text, "nodes");
        assert_eq!(nodes.len(), w.len());
        assert_eq!(nodes[0], 6);
        let edges = element_lines(&text, "edges");
        assert_eq!(edges.len(), w.edges.len());
        assert_eq!(edges[0], 6 + w.len() + 2);
    }

    #[test]
    fn violations_name_their_line() {
        let w = world();
        let mut bad = w.clone();
        bad.nodes[2].semantic[0] += 0.1;
        let bad = WorldGraph::from_parts(bad.nodes, bad.edges, 2, 16, 8).unwrap();
        match load_world_str(&world_to_json(&bad)) {
            Err(Error::WorldValidation { line, msg }) => {
                assert_eq!(line, 8, "{msg}");
                assert!(msg.contains("semantic"));
            }
            other => panic!("expected validation error, got {other:?}"),
        }

        let mut edges = w.edges.clone();
        edges[1].2 += 0.01;
        let bad = WorldGraph::from_parts(w.nodes.clone(), edges, 2, 16, 8).unwrap();
        match load_world_str(&world_to_json(&bad)) {
            Err(Error::WorldValidation { line, .. }) => assert_eq!(line, 6 + w.len() + 3),
            other => panic!("expected validation error, got {other:?}"),
        }

        let mut edges = w.edges.clone();
        edges.push((0, 0, 0.0));
        let bad = WorldGraph::from_parts(w.nodes.clone(), edges, 2, 16, 8).unwrap();
        assert!(matches!(load_world_str(&world_to_json(&bad)), Err(Error::WorldValidation { .. })));
    }

    #[test]
    fn syntax_errors_carry_lines() {
        match load_world_str("{\n  \"nodes\": [\n  oops\n]}") {
            Err(Error::WorldValidation { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
