//! Heterogeneous data-relationship graph over deduplicated documents.
//!
//! Records sharing an entity key form one component (clique semantics);
//! keyless documents bypass the graph and flow on as standalone samples.

use crate::types::{Document, SourceId};
use serde::Serialize;
use std::collections::BTreeMap;

/// Per-node metadata kept alongside the owning document list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraphNode {
    pub source: SourceId,
    pub key: Option<String>,
    pub token_count: u64,
}

#[derive(Debug, Clone, Default)]
pub struct DataGraph {
    pub nodes: Vec<GraphNode>,
    /// entity_key -> node indices, keyed nodes only. BTreeMap so component
    /// iteration order is deterministic.
    pub components: BTreeMap<String, Vec<usize>>,
    pub keyless: Vec<usize>,
}

/// Group documents by entity key. Node indices follow stream order.
pub fn build_graph(docs: &[Document]) -> DataGraph {
    let mut graph = DataGraph::default();
    for (i, doc) in docs.iter().enumerate() {
        graph.nodes.push(GraphNode {
            source: doc.source.clone(),
            key: doc.key.clone(),
            token_count: doc.token_count,
        });
        match &doc.key {
            Some(key) => graph.components.entry(key.clone()).or_default().push(i),
            None => graph.keyless.push(i),
        }
    }
    graph
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct ComponentSummary {
    pub key: String,
    pub node_refs: Vec<usize>,
    pub sources: Vec<String>,
    pub distinct_sources: usize,
    pub total_tokens: u64,
}

/// One entry per component: node list, distinct source count, token total.
pub fn connected_components(graph: &DataGraph) -> Vec<ComponentSummary> {
    graph
        .components
        .iter()
        .map(|(key, nodes)| {
            let mut sources: Vec<String> = nodes
                .iter()
                .map(|&i| graph.nodes[i].source.to_string())
                .collect();
            sources.sort();
            sources.dedup();
            ComponentSummary {
                key: key.clone(),
                node_refs: nodes.clone(),
                distinct_sources: sources.len(),
                total_tokens: nodes.iter().map(|&i| graph.nodes[i].token_count).sum(),
                sources,
            }
        })
        .collect()
}
