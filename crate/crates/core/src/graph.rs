//! Compact undirected graphs.
//!
//! Nodes are dense indices `0..n`, adjacency is CSR with sorted neighbor
//! lists. Construction always symmetrizes, drops self-loops and collapses
//! duplicate edges, so directed or repeated input collapses to a simple
//! undirected graph.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

/// What the loader saw and what survived cleanup.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize)]
pub struct LoadReport {
    pub edge_lines: usize,
    pub nodes: usize,
    pub undirected_edges: usize,
    pub self_loops_removed: usize,
    pub duplicates_removed: usize,
}

impl Graph {
    /// Builds a simple undirected graph on `n` nodes. Self-loops are
    /// dropped and parallel edges collapsed; the cleanup counts are
    /// returned alongside.
    pub fn from_edges_report(n: usize, edges: &[(u32, u32)]) -> (Graph, LoadReport) {
        let mut pairs = Vec::with_capacity(edges.len());
        let mut self_loops = 0usize;
        for &(u, v) in edges {
            assert!((u as usize) < n && (v as usize) < n, "edge endpoint out of range");
            if u == v {
                self_loops += 1;
            } else {
                pairs.push((u.min(v), u.max(v)));
            }
        }
        pairs.sort_unstable();
        let before = pairs.len();
        pairs.dedup();
        let duplicates = before - pairs.len();

        let mut degree = vec![0usize; n];
        for &(u, v) in &pairs {
            degree[u as usize] += 1;
            degree[v as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut neighbors = vec![0u32; offsets[n]];
        let mut cursor = offsets.clone();
        for &(u, v) in &pairs {
            neighbors[cursor[u as usize]] = v;
            cursor[u as usize] += 1;
            neighbors[cursor[v as usize]] = u;
            cursor[v as usize] += 1;
        }
        for v in 0..n {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        let report = LoadReport {
            edge_lines: edges.len(),
            nodes: n,
            undirected_edges: pairs.len(),
            self_loops_removed: self_loops,
            duplicates_removed: duplicates,
        };
        (Graph { offsets, neighbors }, report)
    }

    pub fn from_edges(n: usize, edges: &[(u32, u32)]) -> Graph {
        Self::from_edges_report(n, edges).0
    }

    /// Reads a whitespace-separated edge list: two integer node ids per
    /// line, `#` starts a comment. Arbitrary ids are remapped to `0..n`
    /// in ascending id order. A file with no surviving edge is an error.
    pub fn load_edge_list<P: AsRef<Path>>(path: P) -> Result<(Graph, LoadReport)> {
        let (g, report, _) = Self::load_edge_list_ids(path)?;
        Ok((g, report))
    }

    /// Like [`Graph::load_edge_list`] but also returns the original file
    /// ids, ascending; position in that list is the dense node id.
    pub fn load_edge_list_ids<P: AsRef<Path>>(path: P) -> Result<(Graph, LoadReport, Vec<u64>)> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let name = path.display().to_string();
        let mut raw: Vec<(u64, u64)> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut it = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Result<u64> {
                let tok = tok.ok_or_else(|| Error::EdgeParse {
                    path: name.clone(),
                    line: lineno + 1,
                    found: line.to_string(),
                })?;
                tok.parse().map_err(|_| Error::EdgeParse {
                    path: name.clone(),
                    line: lineno + 1,
                    found: tok.to_string(),
                })
            };
            let u = parse(it.next())?;
            let v = parse(it.next())?;
            if it.next().is_some() {
                return Err(Error::EdgeParse {
                    path: name.clone(),
                    line: lineno + 1,
                    found: line.to_string(),
                });
            }
            raw.push((u, v));
        }
        if raw.is_empty() {
            return Err(Error::EmptyGraph);
        }
        let mut ids: BTreeMap<u64, u32> = BTreeMap::new();
        for &(u, v) in &raw {
            let next = ids.len() as u32;
            ids.entry(u).or_insert(next);
            let next = ids.len() as u32;
            ids.entry(v).or_insert(next);
        }
        // Ascending-id remap keeps the node numbering independent of the
        // order edges appear in the file.
        let mut sorted: Vec<u64> = ids.keys().copied().collect();
        sorted.sort_unstable();
        for (new, id) in sorted.iter().enumerate() {
            *ids.get_mut(id).unwrap() = new as u32;
        }
        let edges: Vec<(u32, u32)> = raw.iter().map(|&(u, v)| (ids[&u], ids[&v])).collect();
        let (g, report) = Graph::from_edges_report(ids.len(), &edges);
        if g.num_edges() == 0 {
            return Err(Error::EmptyGraph);
        }
        Ok((g, report, sorted))
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Undirected edge count.
    pub fn num_edges(&self) -> usize {
        self.neighbors.len() / 2
    }

    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn neighbors(&self, v: usize) -> &[u32] {
        &self.neighbors[self.offsets[v]..self.offsets[v + 1]]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_nodes()).map(|v| self.degree(v)).collect()
    }

    /// Induced subgraph on `nodes`; position in the slice becomes the
    /// local id. Nodes must be distinct and in range.
    pub fn induce(&self, nodes: &[u32]) -> Result<Graph> {
        let mut local = vec![u32::MAX; self.num_nodes()];
        for (i, &v) in nodes.iter().enumerate() {
            if v as usize >= self.num_nodes() {
                return Err(Error::NodeOutOfRange(v as usize));
            }
            assert!(local[v as usize] == u32::MAX, "duplicate node in induce set");
            local[v as usize] = i as u32;
        }
        let mut edges = Vec::new();
        for (i, &v) in nodes.iter().enumerate() {
            for &w in self.neighbors(v as usize) {
                let j = local[w as usize];
                if j != u32::MAX && (i as u32) < j {
                    edges.push((i as u32, j));
                }
            }
        }
        Ok(Graph::from_edges(nodes.len(), &edges))
    }

    /// Largest connected component as its own graph, nodes renumbered in
    /// ascending original id. Ties on size go to the component holding
    /// the smallest node id.
    pub fn largest_connected_component(&self) -> Graph {
        let n = self.num_nodes();
        let mut comp = vec![usize::MAX; n];
        let mut best: Option<(usize, usize)> = None; // (size, representative)
        let mut queue = Vec::new();
        let mut n_comps = 0;
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = n_comps;
            n_comps += 1;
            comp[start] = id;
            queue.clear();
            queue.push(start as u32);
            let mut size = 1;
            let mut head = 0;
            while head < queue.len() {
                let v = queue[head] as usize;
                head += 1;
                for &w in self.neighbors(v) {
                    if comp[w as usize] == usize::MAX {
                        comp[w as usize] = id;
                        queue.push(w);
                        size += 1;
                    }
                }
            }
            // Components are discovered in ascending smallest-id order,
            // so strict inequality prefers the earlier (smaller id) one.
            if best.is_none_or(|(s, _)| size > s) {
                best = Some((size, id));
            }
        }
        let target = best.expect("graph has at least one node").1;
        let nodes: Vec<u32> = (0..n as u32).filter(|&v| comp[v as usize] == target).collect();
        self.induce(&nodes).expect("component nodes are in range")
    }
}

impl fmt::Display for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Graph(n={}, m={})", self.num_nodes(), self.num_edges())
    }
}

/// Writes `g` as a `# comment` plus one `u v` line per edge.
pub fn write_edge_list<P: AsRef<Path>>(g: &Graph, path: P, comment: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "# {comment}")?;
    for u in 0..g.num_nodes() {
        for &v in g.neighbors(u) {
            if (u as u32) < v {
                writeln!(out, "{u}\t{v}")?;
            }
        }
    }
    Ok(())
}
