//! Abstract ground graphs: one lifted graph per perspective, sharing a
//! registry that records the orientation of every dependency.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::model::{reverse_dependency, ModelError, RelationalDependency, RelationalModel, RelationalVariable};
use crate::paths::{enumerate_paths, extend_unchecked, PathError};
use crate::schema::{AttrId, ItemId, Schema};

#[derive(Debug, Error)]
pub enum AggError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Path(#[from] PathError),
    #[error("dependency {0} is not in the registry")]
    UnknownDependency(String),
    #[error("variable {0} is not a node of the graph for this perspective")]
    UnknownNode(String),
    #[error("graph for {0} still has undirected edges")]
    NotFullyDirected(String),
    #[error("node sets overlap")]
    OverlappingSets,
}

/// Direction relative to a particular dependency: `Forward` keeps its
/// cause -> effect reading, `Reverse` flips it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

/// Registry status of a dependency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Undirected,
    Forward,
    Reverse,
}

/// Edge state seen from the first node of a queried pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Undirected,
    /// first -> second
    Out,
    /// second -> first
    In,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConflictKind {
    /// The pair already points the other way.
    Opposite,
    /// The orientation would close a directed cycle over attribute classes.
    Cycle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Conflict {
    pub from: AttrId,
    pub to: AttrId,
    pub kind: ConflictKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OrientOutcome {
    /// Representatives that became directed, as registry indices.
    Changed(Vec<u32>),
    Unchanged,
    Conflict(ConflictKind),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggEdge {
    /// Smaller node index.
    pub a: u32,
    pub b: u32,
    /// Registry indices of every dependency that generates this edge.
    pub provenance: Vec<u32>,
}

/// Abstract ground graph for one perspective. Nodes are sorted by label.
#[derive(Debug, Clone)]
pub struct Agg {
    perspective: ItemId,
    nodes: Vec<RelationalVariable>,
    labels: Vec<String>,
    index: HashMap<RelationalVariable, u32>,
    adj: Vec<Vec<(u32, u32)>>,
    edges: Vec<AggEdge>,
}

impl Agg {
    pub fn perspective(&self) -> ItemId {
        self.perspective
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[RelationalVariable] {
        &self.nodes
    }

    pub fn node(&self, i: u32) -> &RelationalVariable {
        &self.nodes[i as usize]
    }

    pub fn label(&self, i: u32) -> &str {
        &self.labels[i as usize]
    }

    pub fn node_index(&self, var: &RelationalVariable) -> Option<u32> {
        self.index.get(var).copied()
    }

    pub fn edges(&self) -> &[AggEdge] {
        &self.edges
    }

    /// Neighbors of `i` in increasing index order.
    pub fn neighbors(&self, i: u32) -> impl Iterator<Item = u32> + '_ {
        self.adj[i as usize].iter().map(|e| e.0)
    }

    pub fn degree(&self, i: u32) -> usize {
        self.adj[i as usize].len()
    }

    pub fn edge_between(&self, u: u32, v: u32) -> Option<&AggEdge> {
        let row = &self.adj[u as usize];
        row.binary_search_by_key(&v, |e| e.0)
            .ok()
            .map(|k| &self.edges[row[k].1 as usize])
    }

    pub fn adjacent(&self, u: u32, v: u32) -> bool {
        self.adj[u as usize].binary_search_by_key(&v, |e| e.0).is_ok()
    }

    /// All `(x, y, z)` with `x - y - z` and `x, z` non-adjacent, `x < z`,
    /// sorted lexicographically by node label.
    pub fn unshielded_triples(&self) -> Vec<(u32, u32, u32)> {
        let mut out = Vec::new();
        for y in 0..self.nodes.len() as u32 {
            let nb: Vec<u32> = self.neighbors(y).collect();
            for (i, &x) in nb.iter().enumerate() {
                for &z in &nb[i + 1..] {
                    if !self.adjacent(x, z) {
                        out.push((x, y, z));
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Orientation state shared by every graph in an [`AggSet`].
///
/// Dependencies are stored by representative (see
/// [`RelationalDependency::representative`]). All dependencies over the same
/// attribute-class pair share one direction, which is what an acyclic model
/// requires.
#[derive(Debug, Clone)]
pub struct Registry {
    deps: Vec<RelationalDependency>,
    index: HashMap<RelationalDependency, u32>,
    groups: BTreeMap<(AttrId, AttrId), Vec<u32>>,
    /// Per attribute pair `(lo, hi)`: `Some(true)` for lo -> hi.
    pair_state: HashMap<(AttrId, AttrId), bool>,
}

impl Registry {
    fn new(mut reps: Vec<RelationalDependency>) -> Self {
        reps.sort();
        reps.dedup();
        let mut index = HashMap::new();
        let mut groups: BTreeMap<(AttrId, AttrId), Vec<u32>> = BTreeMap::new();
        for (i, d) in reps.iter().enumerate() {
            index.insert(d.clone(), i as u32);
            groups.entry(d.attr_pair()).or_default().push(i as u32);
        }
        Registry {
            deps: reps,
            index,
            groups,
            pair_state: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.deps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deps.is_empty()
    }

    /// Representatives in sorted order.
    pub fn dependencies(&self) -> &[RelationalDependency] {
        &self.deps
    }

    pub fn index_of(&self, dep: &RelationalDependency) -> Option<u32> {
        self.index.get(&dep.representative()).copied()
    }

    /// Status of a registry entry, relative to its representative.
    pub fn status(&self, idx: u32) -> Orientation {
        let d = &self.deps[idx as usize];
        match self.pair_state.get(&d.attr_pair()) {
            None => Orientation::Undirected,
            Some(true) => Orientation::Forward,
            Some(false) => Orientation::Reverse,
        }
    }

    /// Status of any dependency relative to its own reading.
    pub fn status_of(&self, dep: &RelationalDependency) -> Option<Orientation> {
        let idx = self.index_of(dep)?;
        let s = self.status(idx);
        let flipped = dep.cause.attr > dep.effect.attr;
        Some(match (s, flipped) {
            (Orientation::Forward, true) => Orientation::Reverse,
            (Orientation::Reverse, true) => Orientation::Forward,
            (s, _) => s,
        })
    }

    /// The directed dependency for a directed entry, `None` when undirected.
    pub fn directed(&self, idx: u32) -> Option<RelationalDependency> {
        match self.status(idx) {
            Orientation::Undirected => None,
            Orientation::Forward => Some(self.deps[idx as usize].clone()),
            Orientation::Reverse => Some(reverse_dependency(&self.deps[idx as usize]).expect("canonical")),
        }
    }

    fn pair_mark(&self, from: AttrId, to: AttrId) -> Mark {
        let (key, lo_first) = if from < to { ((from, to), true) } else { ((to, from), false) };
        match self.pair_state.get(&key) {
            None => Mark::Undirected,
            Some(&lo_to_hi) if lo_to_hi == lo_first => Mark::Out,
            Some(_) => Mark::In,
        }
    }

    fn reaches(&self, from: AttrId, to: AttrId) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from];
        while let Some(a) = stack.pop() {
            if a == to {
                return true;
            }
            if !seen.insert(a) {
                continue;
            }
            for (&(lo, hi), &lo_to_hi) in &self.pair_state {
                let (s, t) = if lo_to_hi { (lo, hi) } else { (hi, lo) };
                if s == a {
                    stack.push(t);
                }
            }
        }
        false
    }

    fn orient_attrs(&mut self, from: AttrId, to: AttrId) -> Result<OrientOutcome, ()> {
        let key = if from < to { (from, to) } else { (to, from) };
        let Some(group) = self.groups.get(&key) else {
            return Err(());
        };
        match self.pair_mark(from, to) {
            Mark::Out => return Ok(OrientOutcome::Unchanged),
            Mark::In => return Ok(OrientOutcome::Conflict(ConflictKind::Opposite)),
            Mark::Undirected => {}
        }
        if self.reaches(to, from) {
            return Ok(OrientOutcome::Conflict(ConflictKind::Cycle));
        }
        let group = group.clone();
        self.pair_state.insert(key, from < to);
        Ok(OrientOutcome::Changed(group))
    }
}

/// One abstract ground graph per item class plus the shared registry.
#[derive(Debug, Clone)]
pub struct AggSet {
    schema: Arc<Schema>,
    hops: usize,
    aggs: Vec<Agg>,
    registry: Registry,
    conflicts: Vec<Conflict>,
}

fn build_agg_inner(
    schema: &Schema,
    registry: &Registry,
    deps: &[RelationalDependency],
    perspective: ItemId,
    hops: usize,
) -> Result<Agg, AggError> {
    let mut labelled: Vec<(String, RelationalVariable)> = Vec::new();
    for p in enumerate_paths(schema, perspective, hops)? {
        for &a in &schema.item(p.terminal()).attributes {
            let v = RelationalVariable::new(p.clone(), a);
            labelled.push((v.display(schema).to_string(), v));
        }
    }
    labelled.sort();
    let (labels, nodes): (Vec<String>, Vec<RelationalVariable>) = labelled.into_iter().unzip();
    let index: HashMap<RelationalVariable, u32> = nodes.iter().cloned().enumerate().map(|(i, v)| (v, i as u32)).collect();

    let mut by_effect: HashMap<AttrId, Vec<(&RelationalDependency, u32)>> = HashMap::new();
    for d in deps {
        let r = registry.index_of(d).expect("registered");
        by_effect.entry(d.effect.attr).or_default().push((d, r));
    }
    let mut edge_map: BTreeMap<(u32, u32), BTreeSet<u32>> = BTreeMap::new();
    for (qi, q) in nodes.iter().enumerate() {
        let Some(ds) = by_effect.get(&q.attr) else { continue };
        for (d, r) in ds {
            if q.path.terminal() != d.effect.path.perspective() {
                continue;
            }
            for p in extend_unchecked(q.path.items(), d.cause.path.items(), schema, hops + 1) {
                let cause = RelationalVariable::new(p, d.cause.attr);
                if let Some(&pi) = index.get(&cause) {
                    let key = (pi.min(qi as u32), pi.max(qi as u32));
                    edge_map.entry(key).or_default().insert(*r);
                }
            }
        }
    }
    let mut adj = vec![Vec::new(); nodes.len()];
    let mut edges = Vec::with_capacity(edge_map.len());
    for ((a, b), prov) in edge_map {
        let e = edges.len() as u32;
        adj[a as usize].push((b, e));
        adj[b as usize].push((a, e));
        edges.push(AggEdge {
            a,
            b,
            provenance: prov.into_iter().collect(),
        });
    }
    for row in &mut adj {
        row.sort_unstable();
    }
    Ok(Agg {
        perspective,
        nodes,
        labels,
        index,
        adj,
        edges,
    })
}

fn check_deps(schema: &Schema, deps: &[RelationalDependency]) -> Result<(), AggError> {
    for d in deps {
        if !crate::model::is_canonical(d) {
            return Err(ModelError::NotCanonical(d.display(schema).to_string()).into());
        }
        d.cause.validate(schema)?;
        d.effect.validate(schema)?;
    }
    Ok(())
}

/// Builds the graph for one perspective with nodes of at most `hops` hops.
pub fn build_agg(deps: &[RelationalDependency], schema: &Schema, perspective: ItemId, hops: usize) -> Result<Agg, AggError> {
    check_deps(schema, deps)?;
    let registry = Registry::new(deps.iter().map(|d| d.representative()).collect());
    build_agg_inner(schema, &registry, deps, perspective, hops)
}

/// Builds every perspective's graph; the registry starts undirected.
pub fn build_all(deps: &[RelationalDependency], schema: Arc<Schema>, hops: usize) -> Result<AggSet, AggError> {
    check_deps(&schema, deps)?;
    let registry = Registry::new(deps.iter().map(|d| d.representative()).collect());
    let aggs = schema
        .item_ids()
        .map(|p| build_agg_inner(&schema, &registry, deps, p, hops))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AggSet {
        schema,
        hops,
        aggs,
        registry,
        conflicts: Vec::new(),
    })
}

impl AggSet {
    /// Fully directed graphs of a known model.
    pub fn from_model(model: &RelationalModel, hops: usize) -> Result<AggSet, AggError> {
        let mut set = build_all(model.dependencies(), model.schema_arc().clone(), hops)?;
        for d in model.dependencies() {
            set.orient(d, Direction::Forward)?;
        }
        debug_assert!(set.conflicts.is_empty());
        Ok(set)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn hops(&self) -> usize {
        self.hops
    }

    pub fn aggs(&self) -> &[Agg] {
        &self.aggs
    }

    pub fn agg(&self, perspective: ItemId) -> &Agg {
        &self.aggs[perspective.index()]
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn conflicts(&self) -> &[Conflict] {
        &self.conflicts
    }

    /// Orients `dep` (and every dependency over the same attribute pair).
    /// A request against the current direction, or one closing a cycle, is
    /// logged as a conflict and leaves the state unchanged.
    pub fn orient(&mut self, dep: &RelationalDependency, dir: Direction) -> Result<OrientOutcome, AggError> {
        if self.registry.index_of(dep).is_none() {
            return Err(AggError::UnknownDependency(dep.display(&self.schema).to_string()));
        }
        let (from, to) = match dir {
            Direction::Forward => (dep.cause.attr, dep.effect.attr),
            Direction::Reverse => (dep.effect.attr, dep.cause.attr),
        };
        Ok(self.orient_attrs(from, to))
    }

    /// Orients the edge between nodes `u` and `v` of one perspective as `u -> v`.
    pub fn orient_edge(&mut self, perspective: ItemId, u: u32, v: u32) -> OrientOutcome {
        let agg = &self.aggs[perspective.index()];
        debug_assert!(agg.adjacent(u, v));
        let (from, to) = (agg.node(u).attr, agg.node(v).attr);
        self.orient_attrs(from, to)
    }

    fn orient_attrs(&mut self, from: AttrId, to: AttrId) -> OrientOutcome {
        let out = self.registry.orient_attrs(from, to).expect("edge attributes are registered");
        if let OrientOutcome::Conflict(kind) = &out {
            log::debug!(
                "orientation conflict {} -> {}: {:?}",
                self.schema.attr_label(from),
                self.schema.attr_label(to),
                kind
            );
            self.conflicts.push(Conflict {
                from,
                to,
                kind: kind.clone(),
            });
        }
        out
    }

    /// Edge state between `u` and `v` of one perspective, `None` if not adjacent.
    pub fn mark(&self, perspective: ItemId, u: u32, v: u32) -> Option<Mark> {
        let agg = &self.aggs[perspective.index()];
        agg.adjacent(u, v)
            .then(|| self.registry.pair_mark(agg.node(u).attr, agg.node(v).attr))
    }

    pub fn is_directed(&self, perspective: ItemId, u: u32, v: u32) -> bool {
        matches!(self.mark(perspective, u, v), Some(Mark::Out | Mark::In))
    }

    /// Parent and child lists for a fully directed perspective.
    pub fn directed_view(&self, perspective: ItemId) -> Result<DirectedView, AggError> {
        let agg = &self.aggs[perspective.index()];
        let n = agg.num_nodes();
        let mut parents = vec![Vec::new(); n];
        let mut children = vec![Vec::new(); n];
        for e in &agg.edges {
            match self.registry.pair_mark(agg.node(e.a).attr, agg.node(e.b).attr) {
                Mark::Out => {
                    parents[e.b as usize].push(e.a);
                    children[e.a as usize].push(e.b);
                }
                Mark::In => {
                    parents[e.a as usize].push(e.b);
                    children[e.b as usize].push(e.a);
                }
                Mark::Undirected => {
                    return Err(AggError::NotFullyDirected(self.schema.name(perspective).to_string()));
                }
            }
        }
        Ok(DirectedView { parents, children })
    }

    /// d-separation of node-index sets in a fully directed perspective.
    pub fn d_separated(&self, perspective: ItemId, x: &[u32], y: &[u32], z: &[u32]) -> Result<bool, AggError> {
        self.directed_view(perspective)?.d_separated(x, y, z)
    }

    /// Variable-level form of [`AggSet::d_separated`].
    pub fn d_separated_vars(
        &self,
        perspective: ItemId,
        x: &[RelationalVariable],
        y: &[RelationalVariable],
        z: &[RelationalVariable],
    ) -> Result<bool, AggError> {
        let idx = |vs: &[RelationalVariable]| self.node_indices(perspective, vs);
        self.d_separated(perspective, &idx(x)?, &idx(y)?, &idx(z)?)
    }

    pub fn node_indices(&self, perspective: ItemId, vars: &[RelationalVariable]) -> Result<Vec<u32>, AggError> {
        let agg = &self.aggs[perspective.index()];
        vars.iter()
            .map(|v| {
                agg.node_index(v)
                    .ok_or_else(|| AggError::UnknownNode(v.display(&self.schema).to_string()))
            })
            .collect()
    }

    /// Graphviz rendering of one perspective. Directed edges use arrows,
    /// undirected edges `dir=none`; tooltips list provenance.
    pub fn to_dot(&self, perspective: ItemId) -> String {
        let agg = &self.aggs[perspective.index()];
        let mut s = String::new();
        writeln!(s, "digraph \"{}\" {{", self.schema.name(perspective)).unwrap();
        for (i, l) in agg.labels.iter().enumerate() {
            writeln!(s, "  n{} [label=\"{}\"];", i, l).unwrap();
        }
        for e in &agg.edges {
            let tip = e
                .provenance
                .iter()
                .map(|&r| self.registry.deps[r as usize].display(&self.schema).to_string())
                .collect::<Vec<_>>()
                .join("; ");
            match self.registry.pair_mark(agg.node(e.a).attr, agg.node(e.b).attr) {
                Mark::Out => writeln!(s, "  n{} -> n{} [tooltip=\"{}\"];", e.a, e.b, tip),
                Mark::In => writeln!(s, "  n{} -> n{} [tooltip=\"{}\"];", e.b, e.a, tip),
                Mark::Undirected => writeln!(s, "  n{} -> n{} [dir=none, tooltip=\"{}\"];", e.a, e.b, tip),
            }
            .unwrap();
        }
        s.push_str("}\n");
        s
    }
}

/// Directed adjacency of one perspective, frozen for repeated queries.
#[derive(Debug, Clone)]
pub struct DirectedView {
    parents: Vec<Vec<u32>>,
    children: Vec<Vec<u32>>,
}

impl DirectedView {
    pub fn parents(&self, i: u32) -> &[u32] {
        &self.parents[i as usize]
    }

    pub fn children(&self, i: u32) -> &[u32] {
        &self.children[i as usize]
    }

    /// Reachability ("Bayes ball") d-separation test.
    pub fn d_separated(&self, x: &[u32], y: &[u32], z: &[u32]) -> Result<bool, AggError> {
        let n = self.parents.len();
        let mut tag = vec![0u8; n];
        for (bit, set) in [(1u8, x), (2, y), (4, z)] {
            for &v in set {
                if tag[v as usize] & !bit != 0 {
                    return Err(AggError::OverlappingSets);
                }
                tag[v as usize] |= bit;
            }
        }
        let in_z = |v: u32| tag[v as usize] & 4 != 0;
        // ancestors of z, z included
        let mut anc = vec![false; n];
        let mut stack: Vec<u32> = z.to_vec();
        while let Some(v) = stack.pop() {
            if std::mem::replace(&mut anc[v as usize], true) {
                continue;
            }
            stack.extend_from_slice(&self.parents[v as usize]);
        }
        // (node, arrived from a child)
        let mut seen = vec![[false; 2]; n];
        let mut queue: VecDeque<(u32, bool)> = x.iter().map(|&v| (v, true)).collect();
        while let Some((v, up)) = queue.pop_front() {
            let slot = &mut seen[v as usize][up as usize];
            if *slot {
                continue;
            }
            *slot = true;
            if !in_z(v) && tag[v as usize] & 2 != 0 {
                return Ok(false);
            }
            if up {
                if !in_z(v) {
                    queue.extend(self.parents[v as usize].iter().map(|&p| (p, true)));
                    queue.extend(self.children[v as usize].iter().map(|&c| (c, false)));
                }
            } else {
                if !in_z(v) {
                    queue.extend(self.children[v as usize].iter().map(|&c| (c, false)));
                }
                if anc[v as usize] {
                    queue.extend(self.parents[v as usize].iter().map(|&p| (p, true)));
                }
            }
        }
        Ok(true)
    }
}
