//! Type hierarchy DAG: loading, validation, ancestor closure and the
//! dataset-construction helpers (candidate synset matching, co-occurrence
//! link derivation, depth statistics).
//!
//! Links always point from child to parent. `parent_of` lines in a link file
//! are reversed into `child_of` at load time. Equivalence links merge both
//! endpoints into a single class before the closure is computed, so two
//! equivalent types share their ancestors and list each other as ancestors.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Dense handle of a type inside one [`TypeHierarchy`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TypeId(pub usize);

impl TypeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Set of types, iterated in ascending index order.
pub type TypeSet = BTreeSet<TypeId>;

#[derive(Debug, Error)]
pub enum HierarchyError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cycle in type hierarchy: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("unknown type id {0}")]
    UnknownTypeId(usize),
    #[error("unknown type `{0}`")]
    UnknownType(String),
    #[error("self link on `{0}`")]
    SelfLink(String),
    #[error("threshold must lie in (0, 1], got {0}")]
    Threshold(f64),
}

pub type Result<T, E = HierarchyError> = std::result::Result<T, E>;

/// Relation carried by a stored link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LinkKind {
    ChildOf,
    Equivalence,
    /// Derived from Freebase type co-occurrence.
    FbFb,
    /// WordNet hypernym edge between two synsets.
    Hypernym,
}

impl LinkKind {
    pub const ALL: [LinkKind; 4] = [
        LinkKind::ChildOf,
        LinkKind::Equivalence,
        LinkKind::FbFb,
        LinkKind::Hypernym,
    ];

    /// Token used in link files.
    pub fn as_str(self) -> &'static str {
        match self {
            LinkKind::ChildOf => "child_of",
            LinkKind::Equivalence => "equivalence",
            LinkKind::FbFb => "fb_fb",
            LinkKind::Hypernym => "hypernym",
        }
    }

    /// Parses a link-file kind. The boolean is `true` when the endpoints
    /// must be swapped (`parent_of`).
    pub fn parse(token: &str) -> Option<(LinkKind, bool)> {
        match token {
            "child_of" => Some((LinkKind::ChildOf, false)),
            "parent_of" => Some((LinkKind::ChildOf, true)),
            "equivalence" => Some((LinkKind::Equivalence, false)),
            "fb_fb" => Some((LinkKind::FbFb, false)),
            "hypernym" => Some((LinkKind::Hypernym, false)),
            _ => None,
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A link between two types of a built hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub child: TypeId,
    pub parent: TypeId,
    pub kind: LinkKind,
}

/// A link between raw type names, as read from or written to a link file.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NamedLink {
    pub child: String,
    pub parent: String,
    pub kind: LinkKind,
}

impl NamedLink {
    pub fn new(child: impl Into<String>, parent: impl Into<String>, kind: LinkKind) -> Self {
        Self {
            child: child.into(),
            parent: parent.into(),
            kind,
        }
    }
}

impl fmt::Display for NamedLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}", self.child, self.parent, self.kind)
    }
}

/// Collects types and links, then validates them into a [`TypeHierarchy`].
#[derive(Debug, Default, Clone)]
pub struct HierarchyBuilder {
    names: Vec<String>,
    index: HashMap<String, TypeId>,
    links: Vec<Link>,
    seen: std::collections::HashSet<(TypeId, TypeId, LinkKind)>,
    duplicates: usize,
}

impl HierarchyBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a type, returning its existing id when already known.
    pub fn add_type(&mut self, name: &str) -> TypeId {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = TypeId(self.names.len());
        self.names.push(name.to_string());
        self.index.insert(name.to_string(), id);
        id
    }

    /// Adds a link. Returns `Ok(false)` if the link was a duplicate.
    pub fn add_link(&mut self, child: &str, parent: &str, kind: LinkKind) -> Result<bool> {
        if child == parent {
            return Err(HierarchyError::SelfLink(child.to_string()));
        }
        let c = self.add_type(child);
        let p = self.add_type(parent);
        // equivalence is symmetric, so normalize its key
        let key = if kind == LinkKind::Equivalence && p < c {
            (p, c, kind)
        } else {
            (c, p, kind)
        };
        if !self.seen.insert(key) {
            self.duplicates += 1;
            log::warn!("duplicate link {child} -> {parent} ({kind}) ignored");
            return Ok(false);
        }
        self.links.push(Link {
            child: c,
            parent: p,
            kind,
        });
        Ok(true)
    }

    pub fn add_named(&mut self, link: &NamedLink) -> Result<bool> {
        self.add_link(&link.child, &link.parent, link.kind)
    }

    /// Number of duplicate links dropped so far.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn build(self) -> Result<TypeHierarchy> {
        TypeHierarchy::from_parts(self.names, self.index, self.links)
    }
}

/// Immutable type DAG with precomputed ancestor sets.
#[derive(Debug, Clone)]
pub struct TypeHierarchy {
    names: Vec<String>,
    index: HashMap<String, TypeId>,
    links: Vec<Link>,
    class_of: Vec<usize>,
    class_members: Vec<Vec<TypeId>>,
    class_parents: Vec<Vec<usize>>,
    class_depth: Vec<usize>,
    ancestors: Vec<Vec<TypeId>>,
}

impl TypeHierarchy {
    /// Parses the tab-separated link format.
    ///
    /// Each non-comment line is `child<TAB>parent<TAB>kind`; a line holding
    /// a single name declares a type without links.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut builder = HierarchyBuilder::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| HierarchyError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
            match fields.as_slice() {
                [name] => {
                    builder.add_type(name);
                }
                [child, parent, kind] => {
                    if child.is_empty() || parent.is_empty() {
                        return Err(HierarchyError::Parse {
                            line: lineno,
                            message: "empty type name".into(),
                        });
                    }
                    let (kind, reversed) =
                        LinkKind::parse(kind).ok_or_else(|| HierarchyError::Parse {
                            line: lineno,
                            message: format!("unknown link kind `{kind}`"),
                        })?;
                    let (c, p) = if reversed {
                        (parent, child)
                    } else {
                        (child, parent)
                    };
                    builder
                        .add_link(c, p, kind)
                        .map_err(|e| HierarchyError::Parse {
                            line: lineno,
                            message: e.to_string(),
                        })?;
                }
                _ => {
                    return Err(HierarchyError::Parse {
                        line: lineno,
                        message: format!(
                            "expected `child<TAB>parent<TAB>kind`, got {} fields",
                            fields.len()
                        ),
                    })
                }
            }
        }
        builder.build()
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::parse(text.as_bytes())
    }

    /// Loads a hierarchy file and precomputes the closure.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| HierarchyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(BufReader::new(file))
    }

    pub fn from_links<'a>(links: impl IntoIterator<Item = &'a NamedLink>) -> Result<Self> {
        let mut builder = HierarchyBuilder::new();
        for link in links {
            builder.add_named(link)?;
        }
        builder.build()
    }

    fn from_parts(
        names: Vec<String>,
        index: HashMap<String, TypeId>,
        links: Vec<Link>,
    ) -> Result<Self> {
        let n = names.len();

        // Collapse equivalence classes.
        let mut uf = UnionFind::new(n);
        for link in links.iter().filter(|l| l.kind == LinkKind::Equivalence) {
            uf.union(link.child.0, link.parent.0);
        }
        let mut class_of = vec![usize::MAX; n];
        let mut class_members: Vec<Vec<TypeId>> = Vec::new();
        let mut root_class = HashMap::new();
        for (t, slot) in class_of.iter_mut().enumerate() {
            let root = uf.find(t);
            let class = *root_class.entry(root).or_insert_with(|| {
                class_members.push(Vec::new());
                class_members.len() - 1
            });
            *slot = class;
            class_members[class].push(TypeId(t));
        }

        let classes = class_members.len();
        let mut parent_sets: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); classes];
        for link in links.iter().filter(|l| l.kind != LinkKind::Equivalence) {
            let (c, p) = (class_of[link.child.0], class_of[link.parent.0]);
            if c == p {
                return Err(HierarchyError::Cycle(vec![
                    names[link.child.0].clone(),
                    names[link.parent.0].clone(),
                    names[link.child.0].clone(),
                ]));
            }
            parent_sets[c].insert(p);
        }
        let class_parents: Vec<Vec<usize>> = parent_sets
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect();

        let order = match topological_order(&class_parents) {
            Some(order) => order,
            None => {
                let cycle = find_cycle(&class_parents)
                    .expect("topological sort failed, so a cycle exists")
                    .into_iter()
                    .map(|c| names[class_members[c][0].0].clone())
                    .collect();
                return Err(HierarchyError::Cycle(cycle));
            }
        };

        // Parents come before children in `order`.
        let mut class_ancestors: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); classes];
        let mut class_depth = vec![1usize; classes];
        for &c in &order {
            let mut acc = BTreeSet::new();
            let mut depth = 1;
            for &p in &class_parents[c] {
                acc.insert(p);
                acc.extend(class_ancestors[p].iter().copied());
                depth = depth.max(class_depth[p] + 1);
            }
            class_ancestors[c] = acc;
            class_depth[c] = depth;
        }

        let ancestors = (0..n)
            .map(|t| {
                let c = class_of[t];
                let mut out: Vec<TypeId> = class_members[c]
                    .iter()
                    .copied()
                    .filter(|&m| m.0 != t)
                    .collect();
                for &a in &class_ancestors[c] {
                    out.extend(class_members[a].iter().copied());
                }
                out.sort_unstable();
                out
            })
            .collect();

        Ok(Self {
            names,
            index,
            links,
            class_of,
            class_members,
            class_parents,
            class_depth,
            ancestors,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn types(&self) -> impl Iterator<Item = TypeId> + '_ {
        (0..self.names.len()).map(TypeId)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn id(&self, name: &str) -> Option<TypeId> {
        self.index.get(name).copied()
    }

    pub fn require(&self, name: &str) -> Result<TypeId> {
        self.id(name)
            .ok_or_else(|| HierarchyError::UnknownType(name.to_string()))
    }

    pub fn contains(&self, t: TypeId) -> bool {
        t.0 < self.names.len()
    }

    fn check(&self, t: TypeId) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(HierarchyError::UnknownTypeId(t.0))
        }
    }

    pub fn name(&self, t: TypeId) -> Result<&str> {
        self.check(t)?;
        Ok(&self.names[t.0])
    }

    /// All types reachable through parent links, in ascending index order.
    /// Equivalent types are included; the type itself never is.
    pub fn ancestors(&self, t: TypeId) -> Result<&[TypeId]> {
        self.check(t)?;
        Ok(&self.ancestors[t.0])
    }

    pub fn is_ancestor(&self, t: TypeId, candidate: TypeId) -> Result<bool> {
        Ok(self.ancestors(t)?.binary_search(&candidate).is_ok())
    }

    /// Types equivalent to `t`, excluding `t`.
    pub fn equivalents(&self, t: TypeId) -> Result<Vec<TypeId>> {
        self.check(t)?;
        Ok(self.class_members[self.class_of[t.0]]
            .iter()
            .copied()
            .filter(|&m| m != t)
            .collect())
    }

    /// Direct (non-equivalence) parents of `t`'s class, expanded to all
    /// member types.
    pub fn parents(&self, t: TypeId) -> Result<Vec<TypeId>> {
        self.check(t)?;
        let mut out: Vec<TypeId> = self.class_parents[self.class_of[t.0]]
            .iter()
            .flat_map(|&c| self.class_members[c].iter().copied())
            .collect();
        out.sort_unstable();
        Ok(out)
    }

    /// `ts` together with every ancestor of every member.
    pub fn closure_of_set<I>(&self, ts: I) -> Result<TypeSet>
    where
        I: IntoIterator<Item = TypeId>,
    {
        let mut out = TypeSet::new();
        for t in ts {
            out.extend(self.ancestors(t)?.iter().copied());
            out.insert(t);
        }
        Ok(out)
    }

    /// Number of nodes on the longest parent chain starting at `t`.
    pub fn depth(&self, t: TypeId) -> Result<usize> {
        self.check(t)?;
        Ok(self.class_depth[self.class_of[t.0]])
    }

    /// Types with at least one ancestor, the ones usable in the structure
    /// loss.
    pub fn types_with_ancestors(&self) -> Vec<TypeId> {
        self.types()
            .filter(|t| !self.ancestors[t.0].is_empty())
            .collect()
    }

    pub fn stats(&self) -> HierarchyStats {
        let type_count = self.len();
        let depths: Vec<usize> = self
            .types()
            .map(|t| self.class_depth[self.class_of[t.0]])
            .collect();
        let max_depth = depths.iter().copied().max().unwrap_or(0);
        let mean_depth = if depths.is_empty() {
            0.0
        } else {
            depths.iter().sum::<usize>() as f64 / depths.len() as f64
        };
        let mut link_counts = BTreeMap::new();
        for link in &self.links {
            *link_counts.entry(link.kind).or_insert(0) += 1;
        }
        HierarchyStats {
            type_count,
            max_depth,
            mean_depth,
            link_counts,
        }
    }

    /// Writes a loadable hierarchy file: every type in index order, then the
    /// links, then the closure as comment lines.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# hiertype hierarchy")?;
        writeln!(out, "# types={} links={}", self.len(), self.links.len())?;
        for name in &self.names {
            writeln!(out, "{name}")?;
        }
        for link in &self.links {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.names[link.child.0], self.names[link.parent.0], link.kind
            )?;
        }
        for t in self.types() {
            let ancestors: Vec<&str> = self.ancestors[t.0]
                .iter()
                .map(|a| self.names[a.0].as_str())
                .collect();
            writeln!(
                out,
                "#ancestors\t{}\t{}",
                self.names[t.0],
                ancestors.join(",")
            )?;
        }
        Ok(())
    }
}

/// Summary statistics of a hierarchy.
///
/// Depth counts nodes: a root has depth 1 and a chain `C -> B -> A` gives
/// `C` depth 3. `mean_depth` averages over every type, Freebase or not.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchyStats {
    pub type_count: usize,
    pub max_depth: usize,
    pub mean_depth: f64,
    pub link_counts: BTreeMap<LinkKind, usize>,
}

impl HierarchyStats {
    /// Flat `(key, value)` record shared by both output formats.
    pub fn record(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("type_count".to_string(), self.type_count.to_string()),
            ("max_depth".to_string(), self.max_depth.to_string()),
            ("mean_depth".to_string(), format!("{:.4}", self.mean_depth)),
        ];
        for kind in LinkKind::ALL {
            let count = self.link_counts.get(&kind).copied().unwrap_or(0);
            out.push((format!("links.{kind}"), count.to_string()));
        }
        out
    }

    /// Single JSON object with the same keys as [`record`](Self::record).
    pub fn to_json(&self) -> String {
        let mut map = serde_json::Map::new();
        map.insert("type_count".into(), self.type_count.into());
        map.insert("max_depth".into(), self.max_depth.into());
        map.insert("mean_depth".into(), self.mean_depth.into());
        for kind in LinkKind::ALL {
            let count = self.link_counts.get(&kind).copied().unwrap_or(0);
            map.insert(format!("links.{kind}"), count.into());
        }
        serde_json::Value::Object(map).to_string()
    }
}

impl fmt::Display for HierarchyStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .record()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        f.write_str(&parts.join(" "))
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller root wins so class representatives are stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Kahn's algorithm in the parent direction: every node appears after all of
/// its parents. `None` when the graph has a cycle.
fn topological_order(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = parents.len();
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pending: Vec<usize> = parents.iter().map(Vec::len).collect();
    for (c, ps) in parents.iter().enumerate() {
        for &p in ps {
            children[p].push(c);
        }
    }
    let mut queue: std::collections::VecDeque<usize> =
        (0..n).filter(|&c| pending[c] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(c) = queue.pop_front() {
        order.push(c);
        for &child in &children[c] {
            pending[child] -= 1;
            if pending[child] == 0 {
                queue.push_back(child);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Returns one cycle as a closed walk `[a, b, ..., a]`.
fn find_cycle(parents: &[Vec<usize>]) -> Option<Vec<usize>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = parents.len();
    let mut mark = vec![Mark::New; n];
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        // explicit stack of (node, next parent slot)
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        mark[start] = Mark::Active;
        while let Some(&mut (node, ref mut slot)) = stack.last_mut() {
            if let Some(&p) = parents[node].get(*slot) {
                *slot += 1;
                match mark[p] {
                    Mark::New => {
                        mark[p] = Mark::Active;
                        stack.push((p, 0));
                    }
                    Mark::Active => {
                        let pos = stack.iter().position(|&(v, _)| v == p).unwrap();
                        let mut cycle: Vec<usize> = stack[pos..].iter().map(|&(v, _)| v).collect();
                        cycle.push(p);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[node] = Mark::Done;
                stack.pop();
            }
        }
    }
    None
}

/// Entity id to the set of raw type names carried by that entity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EntityTypeTable {
    entities: BTreeMap<String, BTreeSet<String>>,
}

impl EntityTypeTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds types to an entity; repeated entities and types are merged.
    pub fn insert<I, S>(&mut self, entity: &str, types: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.entities
            .entry(entity.to_string())
            .or_default()
            .extend(types.into_iter().map(Into::into));
    }

    pub fn get(&self, entity: &str) -> Option<&BTreeSet<String>> {
        self.entities.get(entity)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &BTreeSet<String>)> {
        self.entities.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Parses `entity_id<TAB>type1,type2,...` lines.
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| HierarchyError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (entity, types) = match line.split_once('\t') {
                Some((e, t)) => (e.trim(), t),
                None => (line.trim(), ""),
            };
            if entity.is_empty() {
                return Err(HierarchyError::Parse {
                    line: lineno,
                    message: "empty entity id".into(),
                });
            }
            table.insert(
                entity,
                types.split(',').map(str::trim).filter(|t| !t.is_empty()),
            );
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|source| HierarchyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(BufReader::new(file))
    }
}

/// Accepts or rejects a candidate `(child, parent, P(parent | child))`.
pub type LinkFilter<'a> = &'a dyn Fn(&str, &str, f64) -> bool;

/// Emits `child -> parent` (kind `fb_fb`) for every ordered pair of distinct
/// types with `P(parent | child) >= threshold`, where the probability is the
/// fraction of entities carrying `child` that also carry `parent`.
///
/// `allow` stands in for the manual filtering pass; `None` accepts every
/// candidate. Output is sorted by `(child, parent)` name.
pub fn derive_cooccurrence_links(
    table: &EntityTypeTable,
    threshold: f64,
    allow: Option<LinkFilter<'_>>,
) -> Result<Vec<NamedLink>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(HierarchyError::Threshold(threshold));
    }
    let mut single: BTreeMap<&str, usize> = BTreeMap::new();
    let mut pair: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (_, types) in table.iter() {
        for a in types {
            *single.entry(a.as_str()).or_insert(0) += 1;
            for b in types {
                if a != b {
                    *pair.entry((a.as_str(), b.as_str())).or_insert(0) += 1;
                }
            }
        }
    }
    let mut out = Vec::new();
    for (&(child, parent), &both) in &pair {
        let count = single[child];
        if count == 0 {
            continue;
        }
        let p = both as f64 / count as f64;
        if p >= threshold && allow.is_none_or(|f| f(child, parent, p)) {
            out.push(NamedLink::new(child, parent, LinkKind::FbFb));
        }
    }
    Ok(out)
}

/// Final path segment, separators mapped to spaces, case-folded.
fn normalize_freebase(name: &str) -> String {
    let segment = name
        .trim_end_matches('/')
        .rsplit('/')
        .next()
        .unwrap_or_default();
    normalize_words(segment)
}

/// Drops a `synset-` prefix and a `.pos.NN` sense suffix before the usual
/// separator and case normalization.
fn normalize_synset(name: &str) -> String {
    let name = name.strip_prefix("synset-").unwrap_or(name);
    let parts: Vec<&str> = name.rsplitn(3, '.').collect();
    let lemma = match parts.as_slice() {
        [sense, pos, lemma]
            if sense.chars().all(|c| c.is_ascii_digit())
                && pos.len() == 1
                && pos.chars().all(|c| c.is_ascii_alphabetic()) =>
        {
            *lemma
        }
        _ => name,
    };
    normalize_words(lemma)
}

fn normalize_words(s: &str) -> String {
    s.chars()
        .map(|c| if c == '_' || c == '-' { ' ' } else { c })
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Synsets whose normalized lemma contains the normalized Freebase type
/// name, or is contained in it. Keeps the input order.
pub fn candidate_synsets<S: AsRef<str>>(fb_type: &str, synsets: &[S]) -> Vec<String> {
    let key = normalize_freebase(fb_type);
    if key.is_empty() {
        return Vec::new();
    }
    synsets
        .iter()
        .map(AsRef::as_ref)
        .filter(|s| {
            let lemma = normalize_synset(s);
            !lemma.is_empty() && (lemma.contains(&key) || key.contains(&lemma))
        })
        .map(str::to_string)
        .collect()
}
