//! WordNet is-a hierarchy restricted to the part that touches the ILSVRC classes.
//!
//! Input is the plain metadata shipped with ImageNet: an `is_a.txt` edge list
//! (`parent child` per line), a `words.txt` name table (`id<TAB>name`) and the
//! list of ILSVRC-2012 class synsets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

/// A WordNet noun synset identifier such as `n02087122`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SynsetId([u8; 9]);

impl SynsetId {
    pub fn as_str(&self) -> &str {
        // Only ASCII bytes are ever stored.
        std::str::from_utf8(&self.0).expect("synset ids are ASCII")
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed synset id {0:?}: expected 'n' followed by 8 digits")]
pub struct InvalidSynsetId(pub String);

impl FromStr for SynsetId {
    type Err = InvalidSynsetId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let b = s.as_bytes();
        if b.len() != 9 || b[0] != b'n' || !b[1..].iter().all(u8::is_ascii_digit) {
            return Err(InvalidSynsetId(s.to_string()));
        }
        let mut id = [0u8; 9];
        id.copy_from_slice(b);
        Ok(SynsetId(id))
    }
}

impl fmt::Display for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for SynsetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SynsetId({})", self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("{source_name} line {line}: {message}")]
    Parse {
        source_name: &'static str,
        line: usize,
        message: String,
    },
    #[error("cycle in is-a graph through {0}")]
    Cycle(SynsetId),
    #[error("ILSVRC class {0} does not occur in the hierarchy")]
    MissingLeaf(SynsetId),
    #[error("ILSVRC class list is empty")]
    EmptyLeafList,
    #[error("unknown synset {0}")]
    UnknownSynset(SynsetId),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How multiple hypernyms of one synset are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParentPolicy {
    /// Keep every edge; descendant queries walk the full DAG.
    AllParents,
    /// Keep only the last-listed parent of each synset, turning the DAG into a
    /// forest. This is how the ImageNet hierarchy tooling used to define the
    /// published protocols resolves diamonds, and it is what reproduces their
    /// class counts.
    #[default]
    LastListed,
}

impl FromStr for ParentPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" | "all-parents" => Ok(Self::AllParents),
            "last" | "last-listed" => Ok(Self::LastListed),
            other => Err(format!("unknown parent policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub parents: BTreeSet<SynsetId>,
    pub children: BTreeSet<SynsetId>,
}

/// Immutable is-a graph over synsets with the ILSVRC classes marked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    nodes: BTreeMap<SynsetId, Node>,
    ilsvrc_leaves: BTreeSet<SynsetId>,
    duplicate_edges: usize,
}

fn parse_id(
    token: &str,
    source_name: &'static str,
    line: usize,
) -> Result<SynsetId, TaxonomyError> {
    token
        .parse()
        .map_err(|e: InvalidSynsetId| TaxonomyError::Parse {
            source_name,
            line,
            message: e.to_string(),
        })
}

fn read(path: &Path) -> Result<String, TaxonomyError> {
    fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl Taxonomy {
    /// Parses the three metadata texts.
    ///
    /// The result keeps only synsets that are ancestors or descendants of an
    /// ILSVRC class. Repeated edges are dropped and counted.
    pub fn parse(
        is_a_edges: &str,
        synset_names: &str,
        ilsvrc_list: &str,
        policy: ParentPolicy,
    ) -> Result<Self, TaxonomyError> {
        let mut edges = Vec::new();
        let mut seen = HashSet::new();
        let mut duplicate_edges = 0usize;
        for (idx, raw) in is_a_edges.lines().enumerate() {
            let line = idx + 1;
            let text = raw.trim();
            if text.is_empty() {
                continue;
            }
            let mut tokens = text.split_whitespace();
            let (Some(p), Some(c), None) = (tokens.next(), tokens.next(), tokens.next()) else {
                return Err(TaxonomyError::Parse {
                    source_name: "is_a",
                    line,
                    message: format!("expected 'parent child', got {text:?}"),
                });
            };
            let parent = parse_id(p, "is_a", line)?;
            let child = parse_id(c, "is_a", line)?;
            if parent == child {
                return Err(TaxonomyError::Cycle(parent));
            }
            if seen.insert((parent, child)) {
                edges.push((parent, child));
            } else {
                duplicate_edges += 1;
            }
        }
        if duplicate_edges > 0 {
            log::warn!("ignored {duplicate_edges} duplicate is-a edges");
        }

        let mut names: HashMap<SynsetId, String> = HashMap::new();
        for (idx, raw) in synset_names.lines().enumerate() {
            let line = idx + 1;
            if raw.trim().is_empty() {
                continue;
            }
            let Some((id, name)) = raw.split_once('\t') else {
                return Err(TaxonomyError::Parse {
                    source_name: "words",
                    line,
                    message: "expected 'id<TAB>name'".to_string(),
                });
            };
            let id = parse_id(id.trim(), "words", line)?;
            names.entry(id).or_insert_with(|| name.trim().to_string());
        }

        let mut leaves = BTreeSet::new();
        for (idx, raw) in ilsvrc_list.lines().enumerate() {
            let text = raw.trim();
            if text.is_empty() {
                continue;
            }
            let id = parse_id(text, "ilsvrc", idx + 1)?;
            if !leaves.insert(id) {
                return Err(TaxonomyError::Parse {
                    source_name: "ilsvrc",
                    line: idx + 1,
                    message: format!("{id} listed twice"),
                });
            }
        }
        if leaves.is_empty() {
            return Err(TaxonomyError::EmptyLeafList);
        }

        // Parents in input order; the order matters for `LastListed`.
        let mut raw_parents: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
        let mut raw_children: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
        for &(p, c) in &edges {
            raw_parents.entry(c).or_default().push(p);
            raw_children.entry(p).or_default().push(c);
        }
        for leaf in &leaves {
            let known = names.contains_key(leaf)
                || raw_parents.contains_key(leaf)
                || raw_children.contains_key(leaf);
            if !known {
                return Err(TaxonomyError::MissingLeaf(*leaf));
            }
        }

        let keep = reachable_from(&leaves, &raw_parents, &raw_children);
        let kept_edges: Vec<(SynsetId, SynsetId)> = edges
            .into_iter()
            .filter(|(p, c)| keep.contains(p) && keep.contains(c))
            .collect();
        check_acyclic(&keep, &kept_edges)?;

        let retained: Vec<(SynsetId, SynsetId)> = match policy {
            ParentPolicy::AllParents => kept_edges,
            ParentPolicy::LastListed => {
                let mut last: HashMap<SynsetId, SynsetId> = HashMap::new();
                for &(p, c) in &kept_edges {
                    last.insert(c, p);
                }
                kept_edges
                    .into_iter()
                    .filter(|(p, c)| last.get(c) == Some(p))
                    .collect()
            }
        };
        // Pruning parents can strand former ancestors; drop them as well.
        let (keep, retained) = if policy == ParentPolicy::LastListed {
            let mut parents: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
            let mut children: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
            for &(p, c) in &retained {
                parents.entry(c).or_default().push(p);
                children.entry(p).or_default().push(c);
            }
            let keep = reachable_from(&leaves, &parents, &children);
            let retained = retained
                .into_iter()
                .filter(|(p, c)| keep.contains(p) && keep.contains(c))
                .collect::<Vec<_>>();
            (keep, retained)
        } else {
            (keep, retained)
        };

        let mut nodes: BTreeMap<SynsetId, Node> = keep
            .iter()
            .map(|id| {
                let name = names.get(id).cloned().unwrap_or_else(|| id.to_string());
                (
                    *id,
                    Node {
                        name,
                        parents: BTreeSet::new(),
                        children: BTreeSet::new(),
                    },
                )
            })
            .collect();
        for (p, c) in retained {
            nodes.get_mut(&p).expect("kept").children.insert(c);
            nodes.get_mut(&c).expect("kept").parents.insert(p);
        }

        Ok(Taxonomy {
            nodes,
            ilsvrc_leaves: leaves,
            duplicate_edges,
        })
    }

    /// Reads `is_a`, `words` and ILSVRC list files from disk.
    pub fn load(
        is_a: &Path,
        words: &Path,
        ilsvrc: &Path,
        policy: ParentPolicy,
    ) -> Result<Self, TaxonomyError> {
        Self::parse(&read(is_a)?, &read(words)?, &read(ilsvrc)?, policy)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &SynsetId) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &SynsetId) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (&SynsetId, &Node)> {
        self.nodes.iter()
    }

    pub fn name(&self, id: &SynsetId) -> Option<&str> {
        self.nodes.get(id).map(|n| n.name.as_str())
    }

    pub fn ilsvrc_leaves(&self) -> &BTreeSet<SynsetId> {
        &self.ilsvrc_leaves
    }

    pub fn is_ilsvrc_leaf(&self, id: &SynsetId) -> bool {
        self.ilsvrc_leaves.contains(id)
    }

    /// Number of repeated edges dropped while parsing.
    pub fn duplicate_edges(&self) -> usize {
        self.duplicate_edges
    }

    /// Synsets without parents.
    pub fn roots(&self) -> Vec<SynsetId> {
        self.nodes
            .iter()
            .filter(|(_, n)| n.parents.is_empty())
            .map(|(id, _)| *id)
            .collect()
    }

    fn require(&self, id: &SynsetId) -> Result<&Node, TaxonomyError> {
        self.nodes.get(id).ok_or(TaxonomyError::UnknownSynset(*id))
    }

    /// ILSVRC classes at or below `root`, sorted and without repeats.
    pub fn leaf_descendants(&self, root: &SynsetId) -> Result<Vec<SynsetId>, TaxonomyError> {
        self.require(root)?;
        let mut visited = HashSet::new();
        let mut queue = VecDeque::from([*root]);
        let mut found = BTreeSet::new();
        while let Some(id) = queue.pop_front() {
            if !visited.insert(id) {
                continue;
            }
            if self.ilsvrc_leaves.contains(&id) {
                found.insert(id);
            }
            queue.extend(self.nodes[&id].children.iter().copied());
        }
        Ok(found.into_iter().collect())
    }

    /// True iff `node == ancestor` or `ancestor` reaches `node` along child edges.
    pub fn is_descendant(
        &self,
        node: &SynsetId,
        ancestor: &SynsetId,
    ) -> Result<bool, TaxonomyError> {
        self.require(node)?;
        self.require(ancestor)?;
        // Walk upwards: parent sets are much smaller than subtrees.
        let mut visited = HashSet::new();
        let mut stack = vec![*node];
        while let Some(id) = stack.pop() {
            if id == *ancestor {
                return Ok(true);
            }
            if visited.insert(id) {
                stack.extend(self.nodes[&id].parents.iter().copied());
            }
        }
        Ok(false)
    }

    /// Edge list in the `is_a.txt` format, sorted by child then parent.
    pub fn to_is_a(&self) -> String {
        let mut out = String::new();
        for (child, node) in &self.nodes {
            for parent in &node.parents {
                out.push_str(&format!("{parent} {child}\n"));
            }
        }
        out
    }

    /// Name table in the `words.txt` format.
    pub fn to_words(&self) -> String {
        self.nodes
            .iter()
            .map(|(id, n)| format!("{id}\t{}\n", n.name))
            .collect()
    }

    pub fn to_ilsvrc_list(&self) -> String {
        self.ilsvrc_leaves
            .iter()
            .map(|id| format!("{id}\n"))
            .collect()
    }
}

/// Synsets that are ancestors or descendants of any of `leaves`.
fn reachable_from(
    leaves: &BTreeSet<SynsetId>,
    parents: &HashMap<SynsetId, Vec<SynsetId>>,
    children: &HashMap<SynsetId, Vec<SynsetId>>,
) -> HashSet<SynsetId> {
    let mut keep = HashSet::new();
    for adjacency in [parents, children] {
        let mut stack: Vec<SynsetId> = leaves.iter().copied().collect();
        let mut visited = HashSet::new();
        while let Some(n) = stack.pop() {
            if !visited.insert(n) {
                continue;
            }
            keep.insert(n);
            if let Some(next) = adjacency.get(&n) {
                stack.extend(next.iter().copied());
            }
        }
    }
    keep
}

fn check_acyclic(
    nodes: &HashSet<SynsetId>,
    edges: &[(SynsetId, SynsetId)],
) -> Result<(), TaxonomyError> {
    let mut indegree: HashMap<SynsetId, usize> = nodes.iter().map(|n| (*n, 0)).collect();
    let mut children: HashMap<SynsetId, Vec<SynsetId>> = HashMap::new();
    for &(p, c) in edges {
        *indegree.get_mut(&c).expect("kept") += 1;
        children.entry(p).or_default().push(c);
    }
    let mut ready: Vec<SynsetId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut removed = 0usize;
    while let Some(n) = ready.pop() {
        removed += 1;
        for c in children.get(&n).into_iter().flatten() {
            let d = indegree.get_mut(c).expect("kept");
            *d -= 1;
            if *d == 0 {
                ready.push(*c);
            }
        }
    }
    if removed == nodes.len() {
        return Ok(());
    }
    let culprit = indegree
        .into_iter()
        .filter(|(_, d)| *d > 0)
        .map(|(n, _)| n)
        .min()
        .expect("some node remains on a cycle");
    Err(TaxonomyError::Cycle(culprit))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> SynsetId {
        s.parse().unwrap()
    }

    const A: &str = "n00000001";
    const B: &str = "n00000002";
    const C: &str = "n00000003";
    const D: &str = "n00000004";

    fn minimal() -> Taxonomy {
        let edges = format!("{A} {B}\n{A} {C}\n");
        let leaves = format!("{B}\n{C}\n");
        Taxonomy::parse(&edges, "", &leaves, ParentPolicy::AllParents).unwrap()
    }

    #[test]
    fn synset_id_validation() {
        assert!("n02087122".parse::<SynsetId>().is_ok());
        for bad in ["n0001", "n02x", "x02087122", "n0208712a", "n020871223", ""] {
            assert!(bad.parse::<SynsetId>().is_err(), "{bad}");
        }
    }

    #[test]
    fn minimal_tree() {
        let t = minimal();
        assert_eq!(t.len(), 3);
        assert_eq!(t.roots(), vec![id(A)]);
        assert_eq!(t.leaf_descendants(&id(A)).unwrap(), vec![id(B), id(C)]);
        assert_eq!(t.name(&id(A)), Some(A));
    }

    #[test]
    fn leaf_is_its_own_descendant() {
        let t = minimal();
        assert_eq!(t.leaf_descendants(&id(B)).unwrap(), vec![id(B)]);
    }

    #[test]
    fn unknown_root_is_reported() {
        let err = minimal().leaf_descendants(&id(D)).unwrap_err();
        assert!(matches!(err, TaxonomyError::UnknownSynset(x) if x == id(D)));
    }

    #[test]
    fn descendant_direction_matters() {
        let t = minimal();
        assert!(t.is_descendant(&id(B), &id(B)).unwrap());
        assert!(t.is_descendant(&id(B), &id(A)).unwrap());
        assert!(!t.is_descendant(&id(A), &id(B)).unwrap());
        assert!(!t.is_descendant(&id(B), &id(C)).unwrap());
        assert!(t.is_descendant(&id(D), &id(A)).is_err());
    }

    #[test]
    fn malformed_edge_reports_line() {
        let edges = format!("{A} {B}\nn0001 n02x\n");
        let err = Taxonomy::parse(&edges, "", B, ParentPolicy::AllParents).unwrap_err();
        match err {
            TaxonomyError::Parse {
                source_name, line, ..
            } => {
                assert_eq!(source_name, "is_a");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn wrong_column_count_is_an_error() {
        let err = Taxonomy::parse(&format!("{A}\n"), "", A, ParentPolicy::AllParents);
        assert!(matches!(err, Err(TaxonomyError::Parse { line: 1, .. })));
    }

    #[test]
    fn duplicate_edges_are_counted() {
        let edges = format!("{A} {B}\n{A} {B}\n{A} {C}\n{A} {B}\n");
        let t =
            Taxonomy::parse(&edges, "", &format!("{B}\n{C}\n"), ParentPolicy::AllParents).unwrap();
        assert_eq!(t.duplicate_edges(), 2);
        assert_eq!(t.node(&id(A)).unwrap().children.len(), 2);
    }

    #[test]
    fn cycles_are_fatal() {
        let edges = format!("{A} {B}\n{B} {C}\n{C} {A}\n");
        let err = Taxonomy::parse(&edges, "", C, ParentPolicy::AllParents).unwrap_err();
        assert!(matches!(err, TaxonomyError::Cycle(_)));
        let self_loop = format!("{A} {A}\n");
        assert!(matches!(
            Taxonomy::parse(&self_loop, "", A, ParentPolicy::AllParents),
            Err(TaxonomyError::Cycle(_))
        ));
    }

    #[test]
    fn missing_leaf_names_the_id() {
        let err =
            Taxonomy::parse(&format!("{A} {B}\n"), "", D, ParentPolicy::AllParents).unwrap_err();
        assert!(matches!(err, TaxonomyError::MissingLeaf(x) if x == id(D)));
        assert!(err.to_string().contains(D));
    }

    #[test]
    fn names_attach_and_default_to_id() {
        let words = format!("{A}\tanimal\n{B}\tdog, domestic dog\n");
        let leaves = format!("{B}\n{C}\n");
        let t = Taxonomy::parse(
            &format!("{A} {B}\n{A} {C}\n"),
            &words,
            &leaves,
            ParentPolicy::AllParents,
        )
        .unwrap();
        assert_eq!(t.name(&id(A)), Some("animal"));
        assert_eq!(t.name(&id(B)), Some("dog, domestic dog"));
        assert_eq!(t.name(&id(C)), Some(C));
    }

    #[test]
    fn unrelated_synsets_are_dropped() {
        // D hangs off nothing connected to the leaf B.
        let edges = format!("{A} {B}\n{C} {D}\n");
        let t = Taxonomy::parse(&edges, "", B, ParentPolicy::AllParents).unwrap();
        assert!(t.contains(&id(A)));
        assert!(!t.contains(&id(C)));
        assert!(!t.contains(&id(D)));
    }

    #[test]
    fn diamond_policies() {
        // A -> B -> D, A -> C -> D, D is the only leaf; C is listed last.
        let edges = format!("{A} {B}\n{A} {C}\n{B} {D}\n{C} {D}\n");
        let dag = Taxonomy::parse(&edges, "", D, ParentPolicy::AllParents).unwrap();
        assert_eq!(dag.leaf_descendants(&id(B)).unwrap(), vec![id(D)]);
        assert_eq!(dag.leaf_descendants(&id(C)).unwrap(), vec![id(D)]);
        assert_eq!(dag.leaf_descendants(&id(A)).unwrap(), vec![id(D)]);

        let tree = Taxonomy::parse(&edges, "", D, ParentPolicy::LastListed).unwrap();
        // B lost its only child and is no longer an ancestor of any leaf.
        assert!(!tree.contains(&id(B)));
        assert_eq!(tree.leaf_descendants(&id(C)).unwrap(), vec![id(D)]);
        assert_eq!(
            tree.node(&id(D))
                .unwrap()
                .parents
                .iter()
                .copied()
                .collect::<Vec<_>>(),
            vec![id(C)]
        );
    }

    #[test]
    fn reserialization_is_idempotent() {
        let edges = format!("{A} {B}\n{A} {C}\n{B} {D}\n{C} {D}\n");
        let words = format!("{A}\troot thing\n");
        for policy in [ParentPolicy::AllParents, ParentPolicy::LastListed] {
            let t = Taxonomy::parse(&edges, &words, &format!("{D}\n"), policy).unwrap();
            let again =
                Taxonomy::parse(&t.to_is_a(), &t.to_words(), &t.to_ilsvrc_list(), policy).unwrap();
            assert_eq!(t, again);
        }
    }
}
