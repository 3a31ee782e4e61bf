use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::document::Document;
use crate::error::{Error, Result};

/// How passage nodes are wired together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphTopology {
    /// Clique over the document node and every passage.
    #[default]
    FullyConnected,
    /// Passages are cliqued within their section. The first passage of each
    /// section links to the document node; with `lead_clique` the section
    /// leads and the document node form one clique, otherwise a star.
    Section { lead_clique: bool },
}

impl fmt::Display for GraphTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GraphTopology::FullyConnected => f.write_str("full"),
            GraphTopology::Section { lead_clique: true } => f.write_str("section"),
            GraphTopology::Section { lead_clique: false } => f.write_str("section-star"),
        }
    }
}

impl FromStr for GraphTopology {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "full" | "fully-connected" => Ok(GraphTopology::FullyConnected),
            "section" => Ok(GraphTopology::Section { lead_clique: true }),
            "section-star" => Ok(GraphTopology::Section { lead_clique: false }),
            other => Err(format!("unknown topology `{other}`")),
        }
    }
}

/// Undirected graph over node 0 (document) and nodes 1..=n (passages),
/// stored as a dense symmetric adjacency matrix with self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentGraph {
    nodes: usize,
    adjacency: Arc<Vec<bool>>,
}

impl DocumentGraph {
    fn empty(nodes: usize) -> Self {
        let mut adjacency = vec![false; nodes * nodes];
        for i in 0..nodes {
            adjacency[i * nodes + i] = true;
        }
        Self {
            nodes,
            adjacency: Arc::new(adjacency),
        }
    }

    /// A lone node with its self-loop (the query graph).
    pub fn single_node() -> Self {
        Self::empty(1)
    }

    fn connect(&mut self, a: usize, b: usize) {
        let n = self.nodes;
        let adj = Arc::make_mut(&mut self.adjacency);
        adj[a * n + b] = true;
        adj[b * n + a] = true;
    }

    fn clique(&mut self, members: &[usize]) {
        for (k, &a) in members.iter().enumerate() {
            for &b in &members[k + 1..] {
                self.connect(a, b);
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adjacency[a * self.nodes + b]
    }

    /// Closed neighborhood of `i` (includes `i`).
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes).filter(move |&j| self.has_edge(i, j))
    }

    /// Row-major adjacency, usable as an attention mask.
    pub fn mask(&self) -> Arc<Vec<bool>> {
        Arc::clone(&self.adjacency)
    }

    /// Undirected edges between distinct nodes.
    pub fn edge_count(&self) -> usize {
        let n = self.nodes;
        (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| self.has_edge(i, j))
            .count()
    }

    pub fn self_loop_count(&self) -> usize {
        (0..self.nodes).filter(|&i| self.has_edge(i, i)).count()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.nodes;
        (0..n).all(|i| (0..n).all(|j| self.has_edge(i, j) == self.has_edge(j, i)))
    }

    pub fn is_connected(&self) -> bool {
        if self.nodes == 0 {
            return false;
        }
        let mut seen = vec![false; self.nodes];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Builds the passage graph for `doc`.
pub fn build_graph(doc: &Document, topology: GraphTopology) -> Result<DocumentGraph> {
    let n = doc.passage_count();
    if n == 0 {
        return Err(Error::EmptyDocument(doc.id.clone()));
    }
    let mut g = DocumentGraph::empty(n + 1);
    match topology {
        GraphTopology::FullyConnected => g.clique(&(0..=n).collect::<Vec<_>>()),
        GraphTopology::Section { lead_clique } => {
            let mut leads = vec![0];
            let mut next = 1;
            for section in doc.sections.iter().filter(|s| !s.is_empty()) {
                let members: Vec<usize> = (next..next + section.len()).collect();
                g.clique(&members);
                leads.push(next);
                next += section.len();
            }
            if lead_clique {
                g.clique(&leads);
            } else {
                for &lead in &leads[1..] {
                    g.connect(0, lead);
                }
            }
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sectioned(sizes: &[usize]) -> Document {
        let mut k = 0;
        let sections = sizes
            .iter()
            .map(|&s| {
                (0..s)
                    .map(|_| {
                        k += 1;
                        format!("p{k}")
                    })
                    .collect()
            })
            .collect();
        Document::new("d", sections)
    }

    #[test]
    fn single_passage_full() {
        let g = build_graph(&sectioned(&[1]), GraphTopology::FullyConnected).unwrap();
        assert_eq!(g.node_count(), 2);
        assert_eq!(g.edge_count(), 1);
        assert_eq!(g.self_loop_count(), 2);
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn three_passages_full_is_k4() {
        let g = build_graph(&sectioned(&[3]), GraphTopology::FullyConnected).unwrap();
        assert_eq!(g.edge_count(), 6);
        assert_eq!(g.self_loop_count(), 4);
    }

    #[test]
    fn section_graph_by_hand() {
        let g = build_graph(&sectioned(&[2, 2]), GraphTopology::Section { lead_clique: true }).unwrap();
        let mut edges = vec![];
        for i in 0..5 {
            for j in i + 1..5 {
                if g.has_edge(i, j) {
                    edges.push((i, j));
                }
            }
        }
        assert_eq!(edges, vec![(0, 1), (0, 3), (1, 2), (1, 3), (3, 4)]);
        assert_eq!(g.self_loop_count(), 5);
    }

    #[test]
    fn section_star_has_no_lead_edges() {
        let g = build_graph(&sectioned(&[2, 2]), GraphTopology::Section { lead_clique: false }).unwrap();
        assert!(g.has_edge(0, 1) && g.has_edge(0, 3));
        assert!(!g.has_edge(1, 3));
    }

    #[test]
    fn empty_document_is_rejected() {
        assert!(matches!(
            build_graph(&Document::new("e", vec![]), GraphTopology::FullyConnected),
            Err(Error::EmptyDocument(_))
        ));
    }

    #[test]
    fn topology_names_round_trip() {
        for t in [
            GraphTopology::FullyConnected,
            GraphTopology::Section { lead_clique: true },
            GraphTopology::Section { lead_clique: false },
        ] {
            assert_eq!(t.to_string().parse::<GraphTopology>().unwrap(), t);
        }
    }

    proptest! {
        #[test]
        fn graphs_are_symmetric_and_connected(
            sizes in proptest::collection::vec(1usize..6, 1..6),
            star in any::<bool>(),
        ) {
            let doc = sectioned(&sizes);
            for topo in [GraphTopology::FullyConnected, GraphTopology::Section { lead_clique: !star }] {
                let g = build_graph(&doc, topo).unwrap();
                prop_assert!(g.is_symmetric());
                prop_assert!(g.is_connected());
                prop_assert_eq!(g.self_loop_count(), g.node_count());
            }
        }
    }
}
