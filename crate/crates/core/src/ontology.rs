//! Type ontology: a forest of hypernym trees addressed by slash paths.
//!
//! The text format is one path per line (`/location/building/stadium`),
//! with `#` comments and blank lines ignored. Every prefix of a listed path
//! becomes a node, so `/location/building/stadium` alone yields three nodes.
//!
//! Two views are kept. The path-indexed tree drives typing: every distinct
//! path is its own node, so it is a forest by construction. The name-level
//! [`TypeGraph`] is what [`validate_ontology`] inspects, because a hostile or
//! sloppy file can list the same type name under two parents (`/a/x` and
//! `/b/x`) or close a loop (`/a/b` and `/b/a`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use petgraph::algo::tarjan_scc;
use petgraph::graph::{DiGraph, NodeIndex};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OntologyError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("invalid type path {input:?}: {reason}")]
    InvalidPath { input: String, reason: String },
    #[error("unknown type path {0}")]
    UnknownPath(TypePath),
}

/// A root-anchored sequence of type names, e.g. `/location/building`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypePath(Vec<String>);

fn valid_segment(segment: &str) -> bool {
    !segment.is_empty()
        && segment
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// Lowercases a raw segment and maps spaces and hyphens to underscores.
pub fn normalize_segment(raw: &str) -> String {
    raw.trim()
        .chars()
        .map(|c| match c {
            ' ' | '\t' | '-' => '_',
            c => c.to_ascii_lowercase(),
        })
        .collect()
}

impl TypePath {
    pub fn new<I, S>(segments: I) -> Result<Self, OntologyError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        if segments.is_empty() {
            return Err(OntologyError::InvalidPath {
                input: String::new(),
                reason: "path has no segments".into(),
            });
        }
        if let Some(bad) = segments.iter().find(|s| !valid_segment(s)) {
            return Err(OntologyError::InvalidPath {
                input: format!("/{}", segments.join("/")),
                reason: format!("segment {bad:?} must match [a-z0-9_]+"),
            });
        }
        Ok(TypePath(segments))
    }

    /// Parses a path leniently: segments are normalized before validation.
    pub fn parse_normalized(input: &str) -> Result<Self, OntologyError> {
        let trimmed = input.trim();
        let rest = trimmed
            .strip_prefix('/')
            .ok_or_else(|| OntologyError::InvalidPath {
                input: trimmed.to_string(),
                reason: "path must start with '/'".into(),
            })?;
        let segments: Vec<String> = rest.split('/').map(normalize_segment).collect();
        if segments.iter().any(String::is_empty) {
            return Err(OntologyError::InvalidPath {
                input: trimmed.to_string(),
                reason: "empty segment".into(),
            });
        }
        TypePath::new(segments).map_err(|e| match e {
            OntologyError::InvalidPath { reason, .. } => OntologyError::InvalidPath {
                input: trimmed.to_string(),
                reason,
            },
            other => other,
        })
    }

    pub fn segments(&self) -> &[String] {
        &self.0
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// The last segment.
    pub fn name(&self) -> &str {
        self.0.last().map(String::as_str).unwrap_or_default()
    }

    pub fn parent(&self) -> Option<TypePath> {
        (self.0.len() > 1).then(|| TypePath(self.0[..self.0.len() - 1].to_vec()))
    }

    pub fn child(&self, name: &str) -> Result<TypePath, OntologyError> {
        let mut segments = self.0.clone();
        segments.push(name.to_string());
        TypePath::new(segments)
    }

    /// True iff `self` is `ancestor` or lies below it.
    pub fn is_descendant_or_equal(&self, ancestor: &TypePath) -> bool {
        self.0.starts_with(&ancestor.0)
    }

    /// All prefixes of the path, shortest first; length equals `depth()`.
    pub fn ancestors_and_self(&self) -> Vec<TypePath> {
        (1..=self.0.len())
            .map(|n| TypePath(self.0[..n].to_vec()))
            .collect()
    }
}

impl fmt::Display for TypePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for segment in &self.0 {
            write!(f, "/{segment}")?;
        }
        Ok(())
    }
}

impl FromStr for TypePath {
    type Err = OntologyError;

    /// Strict canonical parse: no normalization is applied.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let rest = s.strip_prefix('/').ok_or_else(|| OntologyError::InvalidPath {
            input: s.to_string(),
            reason: "path must start with '/'".into(),
        })?;
        TypePath::new(rest.split('/')).map_err(|e| match e {
            OntologyError::InvalidPath { reason, .. } => OntologyError::InvalidPath {
                input: s.to_string(),
                reason,
            },
            other => other,
        })
    }
}

impl Serialize for TypePath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for TypePath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
pub struct TypeNode {
    pub name: String,
    pub path: TypePath,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub depth: usize,
}

/// Name-level view of the declared hypernym edges.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TypeGraph {
    pub names: BTreeSet<String>,
    /// `(parent, child)` pairs.
    pub edges: BTreeSet<(String, String)>,
    /// Names that appear as the first segment of some path.
    pub declared_roots: BTreeSet<String>,
}

impl TypeGraph {
    pub fn add_path(&mut self, path: &TypePath) {
        let segments = path.segments();
        self.declared_roots.insert(segments[0].clone());
        for segment in segments {
            self.names.insert(segment.clone());
        }
        for pair in segments.windows(2) {
            self.edges.insert((pair[0].clone(), pair[1].clone()));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Violation {
    /// A type name listed under more than one parent.
    MultipleParents { node: String, parents: Vec<String> },
    /// A strongly connected set of names (or a self-loop).
    Cycle { node: String, members: Vec<String> },
    /// A name used as a first-level type that also has a parent.
    RootHasParent { node: String, parents: Vec<String> },
    /// A name not on a cycle yet unreachable from any parentless type.
    Unreachable { node: String },
}

impl Violation {
    pub fn node(&self) -> &str {
        match self {
            Violation::MultipleParents { node, .. }
            | Violation::Cycle { node, .. }
            | Violation::RootHasParent { node, .. }
            | Violation::Unreachable { node } => node,
        }
    }

    pub fn rule(&self) -> &'static str {
        match self {
            Violation::MultipleParents { .. } => "multiple_parents",
            Violation::Cycle { .. } => "cycle",
            Violation::RootHasParent { .. } => "root_has_parent",
            Violation::Unreachable { .. } => "unreachable",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MultipleParents { node, parents } => {
                write!(f, "{node}: has {} parents ({})", parents.len(), parents.join(", "))
            }
            Violation::Cycle { node, members } => {
                write!(f, "{node}: lies on a cycle through {}", members.join(" -> "))
            }
            Violation::RootHasParent { node, parents } => write!(
                f,
                "{node}: listed as a first-level type but also under {}",
                parents.join(", ")
            ),
            Violation::Unreachable { node } => {
                write!(f, "{node}: not reachable from any first-level type")
            }
        }
    }
}

/// Type names treated as too broad to serve as a parent or a final label.
pub const VAGUE_TYPE_NAMES: &[&str] = &[
    "entity",
    "misc",
    "miscellaneous",
    "object",
    "other",
    "others",
    "thing",
    "things",
];

/// Non-fatal findings; these never fail validation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Advisory {
    VagueType { node: TypePath, children: usize },
}

impl fmt::Display for Advisory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Advisory::VagueType { node, children } => write!(
                f,
                "{node}: vague type name with {children} direct children; consider re-homing them under a more specific parent"
            ),
        }
    }
}

/// The loaded ontology. Immutable once built.
#[derive(Clone, Debug)]
pub struct TypeOntology {
    nodes: Vec<TypeNode>,
    index: BTreeMap<TypePath, NodeId>,
    roots: Vec<NodeId>,
    graph: TypeGraph,
}

/// Parses the line-oriented ontology format.
pub fn load_ontology(source: &str) -> Result<TypeOntology, OntologyError> {
    let mut listed = Vec::new();
    for (i, raw) in source.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let path = TypePath::parse_normalized(line).map_err(|e| OntologyError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        listed.push(path);
    }
    Ok(TypeOntology::from_paths(listed))
}

impl TypeOntology {
    /// Builds the ontology from paths, creating every implied ancestor.
    pub fn from_paths<I: IntoIterator<Item = TypePath>>(paths: I) -> Self {
        let mut graph = TypeGraph::default();
        let mut all = BTreeSet::new();
        for path in paths {
            graph.add_path(&path);
            all.extend(path.ancestors_and_self());
        }

        let mut nodes: Vec<TypeNode> = Vec::with_capacity(all.len());
        let mut index = BTreeMap::new();
        let mut roots = Vec::new();
        // BTreeSet order puts every prefix before its extensions.
        for path in all {
            let id = NodeId(nodes.len());
            let parent = path.parent().map(|p| index[&p]);
            match parent {
                Some(NodeId(p)) => nodes[p].children.push(id),
                None => roots.push(id),
            }
            nodes.push(TypeNode {
                name: path.name().to_string(),
                depth: path.depth(),
                path: path.clone(),
                parent,
                children: Vec::new(),
            });
            index.insert(path, id);
        }
        TypeOntology {
            nodes,
            index,
            roots,
            graph,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &TypeNode {
        &self.nodes[id.0]
    }

    pub fn id(&self, path: &TypePath) -> Option<NodeId> {
        self.index.get(path).copied()
    }

    pub fn get(&self, path: &TypePath) -> Option<&TypeNode> {
        self.id(path).map(|id| self.node(id))
    }

    pub fn contains(&self, path: &TypePath) -> bool {
        self.index.contains_key(path)
    }

    fn require(&self, path: &TypePath) -> Result<&TypeNode, OntologyError> {
        self.get(path)
            .ok_or_else(|| OntologyError::UnknownPath(path.clone()))
    }

    /// First-level types in lexicographic order.
    pub fn roots(&self) -> Vec<TypePath> {
        self.roots
            .iter()
            .map(|&id| self.node(id).path.clone())
            .collect()
    }

    /// Every node in lexicographic path order.
    pub fn nodes(&self) -> impl Iterator<Item = &TypeNode> {
        self.nodes.iter()
    }

    pub fn graph(&self) -> &TypeGraph {
        &self.graph
    }

    pub fn children(&self, path: &TypePath) -> Result<Vec<TypePath>, OntologyError> {
        let node = self.require(path)?;
        Ok(node
            .children
            .iter()
            .map(|&id| self.node(id).path.clone())
            .collect())
    }

    pub fn is_descendant_or_equal(
        &self,
        candidate: &TypePath,
        ancestor: &TypePath,
    ) -> Result<bool, OntologyError> {
        self.require(candidate)?;
        self.require(ancestor)?;
        Ok(candidate.is_descendant_or_equal(ancestor))
    }

    /// The path and all its ancestors, root first.
    pub fn expand_to_path_set(&self, path: &TypePath) -> Result<Vec<TypePath>, OntologyError> {
        self.require(path)?;
        Ok(path.ancestors_and_self())
    }

    /// Nodes whose name is in [`VAGUE_TYPE_NAMES`].
    pub fn advisories(&self) -> Vec<Advisory> {
        self.nodes
            .iter()
            .filter(|n| VAGUE_TYPE_NAMES.contains(&n.name.as_str()))
            .map(|n| Advisory::VagueType {
                node: n.path.clone(),
                children: n.children.len(),
            })
            .collect()
    }
}

/// Structural check of the name-level hypernym graph.
pub fn validate_ontology(ontology: &TypeOntology) -> Vec<Violation> {
    validate_graph(ontology.graph())
}

/// Reports single-parent, acyclicity, and root-placement violations, sorted.
pub fn validate_graph(graph: &TypeGraph) -> Vec<Violation> {
    let mut names: BTreeSet<&str> = graph.names.iter().map(String::as_str).collect();
    for (p, c) in &graph.edges {
        names.insert(p);
        names.insert(c);
    }
    names.extend(graph.declared_roots.iter().map(String::as_str));

    let mut parents: HashMap<&str, BTreeSet<&str>> = HashMap::new();
    let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
    for (p, c) in &graph.edges {
        parents.entry(c.as_str()).or_default().insert(p.as_str());
        children.entry(p.as_str()).or_default().push(c.as_str());
    }
    let parents_of = |n: &str| -> Vec<String> {
        parents
            .get(n)
            .map(|s| s.iter().map(|p| p.to_string()).collect())
            .unwrap_or_default()
    };

    let mut violations = Vec::new();

    for &name in &names {
        let ps = parents_of(name);
        if ps.len() > 1 {
            violations.push(Violation::MultipleParents {
                node: name.to_string(),
                parents: ps.clone(),
            });
        }
        if graph.declared_roots.contains(name) && !ps.is_empty() {
            violations.push(Violation::RootHasParent {
                node: name.to_string(),
                parents: ps,
            });
        }
    }

    let mut g: DiGraph<&str, ()> = DiGraph::new();
    let ids: HashMap<&str, NodeIndex> = names.iter().map(|&n| (n, g.add_node(n))).collect();
    for (p, c) in &graph.edges {
        g.add_edge(ids[p.as_str()], ids[c.as_str()], ());
    }
    let mut on_cycle: BTreeSet<&str> = BTreeSet::new();
    for component in tarjan_scc(&g) {
        let cyclic = component.len() > 1
            || component
                .first()
                .is_some_and(|&v| g.find_edge(v, v).is_some());
        if !cyclic {
            continue;
        }
        let mut members: Vec<String> = component.iter().map(|&v| g[v].to_string()).collect();
        members.sort();
        on_cycle.extend(component.iter().map(|&v| g[v]));
        violations.push(Violation::Cycle {
            node: members[0].clone(),
            members,
        });
    }

    let mut reached: BTreeSet<&str> = BTreeSet::new();
    let mut stack: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| !parents.contains_key(n))
        .collect();
    while let Some(n) = stack.pop() {
        if reached.insert(n) {
            if let Some(cs) = children.get(n) {
                stack.extend(cs.iter().copied());
            }
        }
    }
    for &name in &names {
        if !reached.contains(name) && !on_cycle.contains(name) {
            violations.push(Violation::Unreachable {
                node: name.to_string(),
            });
        }
    }

    violations.sort();
    violations
}
