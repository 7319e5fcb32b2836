use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentId {
    Entry,
    Validator,
    Supervisor,
    Kg,
    SparqlRunner,
    Interpreter,
}

impl AgentId {
    pub const ALL: [AgentId; 6] =
        [AgentId::Entry, AgentId::Validator, AgentId::Supervisor, AgentId::Kg, AgentId::SparqlRunner, AgentId::Interpreter];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgentId::Entry => "entry",
            AgentId::Validator => "validator",
            AgentId::Supervisor => "supervisor",
            AgentId::Kg => "kg",
            AgentId::SparqlRunner => "sparql_runner",
            AgentId::Interpreter => "interpreter",
        }
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for AgentId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AgentId::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| format!("unknown agent {s:?}"))
    }
}

/// A graph node. Serialized as the agent id, or `terminal`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum NodeRef {
    Agent(AgentId),
    Terminal,
}

impl fmt::Display for NodeRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeRef::Agent(a) => a.fmt(f),
            NodeRef::Terminal => f.write_str("terminal"),
        }
    }
}

impl From<NodeRef> for String {
    fn from(n: NodeRef) -> String {
        n.to_string()
    }
}

impl TryFrom<String> for NodeRef {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        if s == "terminal" {
            Ok(NodeRef::Terminal)
        } else {
            s.parse().map(NodeRef::Agent)
        }
    }
}

impl From<AgentId> for NodeRef {
    fn from(a: AgentId) -> Self {
        NodeRef::Agent(a)
    }
}

pub mod tools {
    pub const FILE_ANALYZER: &str = "file_analyzer";
    pub const PLANT_DB: &str = "plant_db";
    pub const TAXON_RESOLVER: &str = "taxon_resolver";
    pub const CHEMICAL_RESOLVER: &str = "chemical_resolver";
    pub const TARGET_RESOLVER: &str = "target_resolver";
    pub const SMILES_RESOLVER: &str = "smiles_resolver";
    pub const GRAPH_SPARQL_CHAIN: &str = "graph_sparql_chain";
    pub const WIKIDATA_STRUCTURE_SEARCH: &str = "wikidata_structure_search";
    pub const OUTPUT_MERGER: &str = "output_merger";
    pub const RESULT_SUMMARY: &str = "result_summary";
    pub const CHART_SPEC: &str = "chart_spec";
    pub const SPECTRUM_PLOTTER: &str = "spectrum_plotter";

    pub const ALL: [&str; 12] = [
        FILE_ANALYZER,
        PLANT_DB,
        TAXON_RESOLVER,
        CHEMICAL_RESOLVER,
        TARGET_RESOLVER,
        SMILES_RESOLVER,
        GRAPH_SPARQL_CHAIN,
        WIKIDATA_STRUCTURE_SEARCH,
        OUTPUT_MERGER,
        RESULT_SUMMARY,
        CHART_SPEC,
        SPECTRUM_PLOTTER,
    ];
}

/// An agent: model, prompt template, and the tools it may call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentNode {
    pub id: AgentId,
    pub model_ref: String,
    pub prompt_ref: String,
    pub tool_refs: Vec<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("agent {0} defined more than once")]
    Duplicate(AgentId),
    #[error("agent {0} missing")]
    Missing(AgentId),
    #[error("agent {agent} refers to unknown tool {tool:?}")]
    UnknownTool { agent: AgentId, tool: String },
    #[error("agent {0} is unreachable from the entry agent")]
    Unreachable(AgentId),
    #[error("edge {0:?} -> {1:?} leaves the terminal node")]
    FromTerminal(NodeRef, NodeRef),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphTopology {
    nodes: BTreeMap<AgentId, AgentNode>,
    edges: BTreeSet<(NodeRef, NodeRef)>,
}

fn a(id: AgentId) -> NodeRef {
    NodeRef::Agent(id)
}

impl GraphTopology {
    pub const ENTRY: AgentId = AgentId::Entry;

    /// The six agents with their default prompts and tools, and the fixed
    /// edge set. `entry -> supervisor` carries follow-up questions that
    /// skip validation.
    pub fn standard(model_ref: &str) -> Self {
        use AgentId::*;
        let node = |id, prompt_ref: &str, tool_refs: &[&str]| AgentNode {
            id,
            model_ref: model_ref.to_owned(),
            prompt_ref: prompt_ref.to_owned(),
            tool_refs: tool_refs.iter().map(|t| (*t).to_owned()).collect(),
        };
        let nodes = vec![
            node(Entry, prompts::ENTRY, &[tools::FILE_ANALYZER]),
            node(Validator, prompts::VALIDATOR, &[tools::PLANT_DB]),
            node(Supervisor, prompts::SUPERVISOR, &[]),
            node(
                Kg,
                prompts::KG_AGENT,
                &[tools::TAXON_RESOLVER, tools::CHEMICAL_RESOLVER, tools::TARGET_RESOLVER, tools::SMILES_RESOLVER],
            ),
            node(
                SparqlRunner,
                prompts::SPARQL_RUNNER,
                &[tools::GRAPH_SPARQL_CHAIN, tools::WIKIDATA_STRUCTURE_SEARCH, tools::OUTPUT_MERGER],
            ),
            node(Interpreter, prompts::INTERPRETER, &[tools::RESULT_SUMMARY, tools::CHART_SPEC, tools::SPECTRUM_PLOTTER]),
        ];
        let edges = vec![
            (a(Entry), a(Validator)),
            (a(Entry), a(Supervisor)),
            (a(Validator), a(Supervisor)),
            (a(Validator), NodeRef::Terminal),
            (a(Supervisor), a(Kg)),
            (a(Kg), a(Supervisor)),
            (a(Supervisor), a(SparqlRunner)),
            (a(SparqlRunner), a(Supervisor)),
            (a(Supervisor), a(Interpreter)),
            (a(Interpreter), a(Supervisor)),
            (a(Supervisor), NodeRef::Terminal),
        ];
        Self::build(nodes, edges).expect("standard topology is valid")
    }

    pub fn build(nodes: Vec<AgentNode>, edges: Vec<(NodeRef, NodeRef)>) -> Result<Self, TopologyError> {
        let mut map = BTreeMap::new();
        for node in nodes {
            if let Some(tool) = node.tool_refs.iter().find(|t| !tools::ALL.contains(&t.as_str())) {
                return Err(TopologyError::UnknownTool { agent: node.id, tool: tool.clone() });
            }
            if map.insert(node.id, node.clone()).is_some() {
                return Err(TopologyError::Duplicate(node.id));
            }
        }
        if let Some(missing) = AgentId::ALL.iter().find(|id| !map.contains_key(id)) {
            return Err(TopologyError::Missing(*missing));
        }
        if let Some((from, to)) = edges.iter().find(|(from, _)| *from == NodeRef::Terminal) {
            return Err(TopologyError::FromTerminal(*from, *to));
        }
        let topology = Self { nodes: map, edges: edges.into_iter().collect() };
        let reachable = topology.reachable();
        if let Some(id) = AgentId::ALL.iter().find(|id| !reachable.contains(&a(**id))) {
            return Err(TopologyError::Unreachable(*id));
        }
        Ok(topology)
    }

    pub fn node(&self, id: AgentId) -> &AgentNode {
        &self.nodes[&id]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &AgentNode> {
        self.nodes.values()
    }

    pub fn edges(&self) -> impl Iterator<Item = &(NodeRef, NodeRef)> {
        self.edges.iter()
    }

    pub fn has_edge(&self, from: NodeRef, to: NodeRef) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn with_model(mut self, id: AgentId, model_ref: &str) -> Self {
        if let Some(n) = self.nodes.get_mut(&id) {
            n.model_ref = model_ref.to_owned();
        }
        self
    }

    pub fn reachable(&self) -> BTreeSet<NodeRef> {
        let mut seen = BTreeSet::from([a(Self::ENTRY)]);
        let mut frontier = vec![a(Self::ENTRY)];
        while let Some(n) = frontier.pop() {
            for (_, to) in self.edges.iter().filter(|(from, _)| *from == n) {
                if seen.insert(*to) {
                    frontier.push(*to);
                }
            }
        }
        seen
    }
}
