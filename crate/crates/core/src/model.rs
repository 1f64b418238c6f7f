//! Relational variables, canonical dependencies and relational models.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::paths::{enumerate_paths, parse_path, valid_items, PathError, RelationalPath};
use crate::schema::{AttrId, Schema, SchemaDoc, SchemaError};

/// Rejection cap per dependency slot in [`random_model`].
pub const MAX_REJECTIONS_PER_SLOT: usize = 1000;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Path(#[from] PathError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("dependency is not canonical: {0}")]
    NotCanonical(String),
    #[error("invalid relational variable: {0}")]
    InvalidVariable(String),
    #[error("cause and effect have different perspectives: {0}")]
    PerspectiveMismatch(String),
    #[error("dependencies form a cycle over attribute classes")]
    Cyclic,
    #[error("malformed dependency text {0:?}")]
    Syntax(String),
    #[error("cannot place {requested} dependencies (placed {placed})")]
    Infeasible { requested: usize, placed: usize },
}

/// A relational path paired with an attribute of its terminal class.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationalVariable {
    pub path: RelationalPath,
    pub attr: AttrId,
}

impl RelationalVariable {
    pub fn new(path: RelationalPath, attr: AttrId) -> Self {
        RelationalVariable { path, attr }
    }

    pub fn perspective(&self) -> crate::schema::ItemId {
        self.path.perspective()
    }

    /// Checks that the path is valid and the attribute belongs to its last class.
    pub fn validate(&self, schema: &Schema) -> Result<(), ModelError> {
        let ok = crate::paths::is_valid(&self.path, schema)?
            && self.attr.index() < schema.num_attributes()
            && schema.attr(self.attr).owner == self.path.terminal();
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidVariable(format!("{:?}", self)))
        }
    }

    pub fn display<'a>(&'a self, schema: &'a Schema) -> VarDisplay<'a> {
        VarDisplay { var: self, schema }
    }
}

pub struct VarDisplay<'a> {
    var: &'a RelationalVariable,
    schema: &'a Schema,
}

impl fmt::Display for VarDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}.{}",
            self.var.path.display(self.schema),
            self.schema.attr(self.var.attr).name
        )
    }
}

/// Parses `"[ACTOR, STARS-IN, MOVIE].Success"`.
pub fn parse_variable(schema: &Schema, text: &str) -> Result<RelationalVariable, ModelError> {
    let t = text.trim();
    let close = t.rfind(']').ok_or_else(|| ModelError::Syntax(text.to_string()))?;
    let attr = t[close + 1..]
        .strip_prefix('.')
        .ok_or_else(|| ModelError::Syntax(text.to_string()))?
        .trim();
    let path = parse_path(schema, &t[..=close])?;
    let attr = schema.lookup_attr(path.terminal(), attr)?;
    let var = RelationalVariable::new(path, attr);
    var.validate(schema)?;
    Ok(var)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationalDependency {
    pub cause: RelationalVariable,
    pub effect: RelationalVariable,
}

impl RelationalDependency {
    pub fn new(cause: RelationalVariable, effect: RelationalVariable) -> Self {
        RelationalDependency { cause, effect }
    }

    pub fn display<'a>(&'a self, schema: &'a Schema) -> DepDisplay<'a> {
        DepDisplay { dep: self, schema }
    }

    /// The orientation of this dependency's pair whose cause attribute has
    /// the smaller id. Both orientations of a pair map to the same value,
    /// and all dependencies between two attribute classes share a direction.
    pub fn representative(&self) -> RelationalDependency {
        if self.cause.attr < self.effect.attr {
            self.clone()
        } else {
            reverse_dependency(self).expect("canonical dependency")
        }
    }

    /// Unordered attribute-class pair, smaller id first.
    pub fn attr_pair(&self) -> (AttrId, AttrId) {
        let (a, b) = (self.cause.attr, self.effect.attr);
        if a < b {
            (a, b)
        } else {
            (b, a)
        }
    }
}

pub struct DepDisplay<'a> {
    dep: &'a RelationalDependency,
    schema: &'a Schema,
}

impl fmt::Display for DepDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} -> {}",
            self.dep.cause.display(self.schema),
            self.dep.effect.display(self.schema)
        )
    }
}

/// Parses `"[MOVIE, STARS-IN, ACTOR].Popularity -> [MOVIE].Success"`.
pub fn parse_dependency(schema: &Schema, text: &str) -> Result<RelationalDependency, ModelError> {
    let (c, e) = text
        .split_once("->")
        .ok_or_else(|| ModelError::Syntax(text.to_string()))?;
    Ok(RelationalDependency::new(
        parse_variable(schema, c)?,
        parse_variable(schema, e)?,
    ))
}

pub fn is_canonical(dep: &RelationalDependency) -> bool {
    dep.effect.path.is_singleton()
}

/// `[I_Y..I_X].X -> [I_Y].Y` becomes `[I_X..I_Y].Y -> [I_X].X`.
pub fn reverse_dependency(dep: &RelationalDependency) -> Result<RelationalDependency, ModelError> {
    if !is_canonical(dep) {
        return Err(ModelError::NotCanonical(format!("{dep:?}")));
    }
    Ok(RelationalDependency {
        cause: RelationalVariable::new(dep.cause.path.reverse(), dep.effect.attr),
        effect: RelationalVariable::new(RelationalPath::singleton(dep.cause.path.terminal()), dep.cause.attr),
    })
}

/// Every canonical dependency whose cause path has at most `hops` hops and
/// whose cause and effect attribute classes differ. Sorted.
pub fn potential_dependencies(schema: &Schema, hops: usize) -> Vec<RelationalDependency> {
    let mut out = Vec::new();
    for item in schema.item_ids() {
        let effects = &schema.item(item).attributes;
        if effects.is_empty() {
            continue;
        }
        let paths = enumerate_paths(schema, item, hops).expect("item from schema");
        for &y in effects {
            let effect = RelationalVariable::new(RelationalPath::singleton(item), y);
            for p in &paths {
                for &x in &schema.item(p.terminal()).attributes {
                    if x != y {
                        out.push(RelationalDependency::new(
                            RelationalVariable::new(p.clone(), x),
                            effect.clone(),
                        ));
                    }
                }
            }
        }
    }
    out.sort();
    out
}

/// Directed graph over attribute classes induced by a dependency set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassDependencyGraph {
    pub nodes: Vec<AttrId>,
    pub edges: BTreeSet<(AttrId, AttrId)>,
}

impl ClassDependencyGraph {
    pub fn from_dependencies<'a>(
        schema: &Schema,
        deps: impl IntoIterator<Item = &'a RelationalDependency>,
    ) -> Self {
        ClassDependencyGraph {
            nodes: schema.attr_ids().collect(),
            edges: deps.into_iter().map(|d| (d.cause.attr, d.effect.attr)).collect(),
        }
    }

    /// Kahn's algorithm; `None` when a directed cycle exists.
    pub fn topological_order(&self) -> Option<Vec<AttrId>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(a, b) in &self.edges {
            indeg[b.index()] += 1;
            out[a.index()].push(b.index());
        }
        let mut ready: BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(i) = ready.pop_first() {
            order.push(AttrId(i as u16));
            for &j in &out[i] {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.insert(j);
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }
}

pub fn is_acyclic(schema: &Schema, deps: &[RelationalDependency]) -> bool {
    ClassDependencyGraph::from_dependencies(schema, deps).is_acyclic()
}

/// A schema plus an acyclic set of canonical dependencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationalModel {
    schema: Arc<Schema>,
    dependencies: Vec<RelationalDependency>,
}

impl RelationalModel {
    /// Validates and stores `deps` sorted and deduplicated.
    pub fn new(schema: Arc<Schema>, deps: Vec<RelationalDependency>) -> Result<Self, ModelError> {
        for d in &deps {
            if !is_canonical(d) {
                return Err(ModelError::NotCanonical(d.display(&schema).to_string()));
            }
            d.cause.validate(&schema)?;
            d.effect.validate(&schema)?;
            if d.cause.perspective() != d.effect.perspective() {
                return Err(ModelError::PerspectiveMismatch(d.display(&schema).to_string()));
            }
        }
        let deps: Vec<_> = deps.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        if !is_acyclic(&schema, &deps) {
            return Err(ModelError::Cyclic);
        }
        Ok(RelationalModel {
            schema,
            dependencies: deps,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn dependencies(&self) -> &[RelationalDependency] {
        &self.dependencies
    }

    pub fn class_dependency_graph(&self) -> ClassDependencyGraph {
        ClassDependencyGraph::from_dependencies(&self.schema, &self.dependencies)
    }

    pub fn to_doc(&self) -> ModelDoc {
        ModelDoc {
            schema: self.schema.to_doc(),
            dependencies: self
                .dependencies
                .iter()
                .map(|d| d.display(&self.schema).to_string())
                .collect(),
        }
    }

    pub fn from_doc(doc: &ModelDoc) -> Result<Self, ModelError> {
        let schema = Arc::new(Schema::from_doc(&doc.schema)?);
        let deps = doc
            .dependencies
            .iter()
            .map(|t| parse_dependency(&schema, t))
            .collect::<Result<Vec<_>, _>>()?;
        RelationalModel::new(schema, deps)
    }
}

/// JSON form of a model; dependencies use the textual path syntax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDoc {
    pub schema: SchemaDoc,
    #[serde(default)]
    pub dependencies: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelParams {
    pub num_deps: usize,
    pub hop_threshold: usize,
    pub max_parents: usize,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            num_deps: 1,
            hop_threshold: 4,
            max_parents: 3,
        }
    }
}

/// Samples `num_deps` dependencies uniformly without replacement from the
/// potential dependencies, rejecting draws that would create a cycle or give
/// an effect attribute more than `max_parents` incoming dependencies.
pub fn random_model(schema: Arc<Schema>, params: ModelParams, seed: u64) -> Result<RelationalModel, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool = potential_dependencies(&schema, params.hop_threshold);
    let mut chosen: Vec<RelationalDependency> = Vec::new();
    let mut parents: BTreeMap<AttrId, usize> = BTreeMap::new();
    let mut edges: HashSet<(AttrId, AttrId)> = HashSet::new();

    while chosen.len() < params.num_deps {
        let mut placed = false;
        for _ in 0..MAX_REJECTIONS_PER_SLOT {
            if pool.is_empty() {
                break;
            }
            let i = rng.random_range(0..pool.len());
            let d = pool.swap_remove(i);
            if parents.get(&d.effect.attr).copied().unwrap_or(0) >= params.max_parents {
                continue;
            }
            let edge = (d.cause.attr, d.effect.attr);
            if !edges.contains(&edge) {
                let mut trial: BTreeSet<_> = edges.iter().copied().collect();
                trial.insert(edge);
                let g = ClassDependencyGraph {
                    nodes: schema.attr_ids().collect(),
                    edges: trial,
                };
                if !g.is_acyclic() {
                    continue;
                }
            }
            edges.insert(edge);
            *parents.entry(d.effect.attr).or_default() += 1;
            chosen.push(d);
            placed = true;
            break;
        }
        if !placed {
            return Err(ModelError::Infeasible {
                requested: params.num_deps,
                placed: chosen.len(),
            });
        }
    }
    RelationalModel::new(schema, chosen)
}

/// Sanity check used by property tests: the cause path is valid and the
/// dependency respects the hop bound.
pub fn within_hops(dep: &RelationalDependency, schema: &Schema, hops: usize) -> bool {
    dep.cause.path.hops() <= hops && valid_items(dep.cause.path.items(), schema)
}

/// `[MOVIE, STARS-IN, ACTOR].Popularity -> [MOVIE].Success` over [`crate::schema::movie_schema`].
pub fn movie_model() -> RelationalModel {
    let schema = Arc::new(crate::schema::movie_schema());
    let dep = parse_dependency(&schema, "[MOVIE, STARS-IN, ACTOR].Popularity -> [MOVIE].Success")
        .expect("static dependency");
    RelationalModel::new(schema, vec![dep]).expect("static model")
}
