//! Instance-level data: relational skeletons, terminal sets, ground graphs,
//! synthetic linear-Gaussian values and ground-level d-separation.

use std::collections::{BTreeMap, BinaryHeap, HashMap, VecDeque};
use std::cmp::Reverse;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{RelationalModel, RelationalVariable};
use crate::paths::RelationalPath;
use crate::schema::{AttrId, Cardinality, ItemId, Schema};

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("manifest names no file for class {0:?}")]
    MissingFile(String),
    #[error("unknown column {column:?} in file for {class:?}")]
    UnknownColumn { class: String, column: String },
    #[error("missing column {column:?} in file for {class:?}")]
    MissingColumn { class: String, column: String },
    #[error("{class:?} row references unknown {entity:?} id {id:?}")]
    UnknownId { class: String, entity: String, id: String },
    #[error("duplicate id {id:?} in {class:?}")]
    DuplicateId { class: String, id: String },
    #[error("cardinality violation: {entity:?} instance {id:?} takes part in more than one {relationship:?} link")]
    CardinalityViolation {
        relationship: String,
        entity: String,
        id: String,
    },
    #[error("non-numeric value {value:?} for {class}.{attribute}")]
    NonNumeric {
        class: String,
        attribute: String,
        value: String,
    },
    #[error("entity sizes must be >= 1 and match the number of entity classes")]
    InvalidSizes,
    #[error("link density {0} is outside (0, 1]")]
    DensityInfeasible(f64),
    #[error("skeleton and model use different schemas")]
    SchemaMismatch,
    #[error("instance {0} is out of range for the path's perspective")]
    NotPerspective(u32),
    #[error("ground graph has a directed cycle")]
    Cyclic,
    #[error("node sets overlap")]
    OverlappingSets,
    #[error("no values for attribute {0}")]
    MissingValues(String),
}

/// Entity and relationship instances plus optional attribute values.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    schema: Arc<Schema>,
    ids: Vec<Vec<String>>,
    /// Per relationship item: participant instance indices, aligned with the schema's participant order.
    links: Vec<Vec<[u32; 2]>>,
    /// Per relationship item and side: entity instance -> incident link indices.
    incident: Vec<[Vec<Vec<u32>>; 2]>,
    values: Vec<Option<Vec<f64>>>,
}

impl Skeleton {
    /// Builds a skeleton from instance ids and links, checking link ranges
    /// and ONE-side participation limits.
    pub fn new(schema: Arc<Schema>, ids: Vec<Vec<String>>, links: Vec<Vec<[u32; 2]>>) -> Result<Self, SkeletonError> {
        if ids.len() != schema.num_items() || links.len() != schema.num_items() {
            return Err(SkeletonError::SchemaMismatch);
        }
        let mut incident: Vec<[Vec<Vec<u32>>; 2]> = Vec::with_capacity(schema.num_items());
        for item in schema.item_ids() {
            let Some((parts, card)) = schema.relationship(item) else {
                if !links[item.index()].is_empty() {
                    return Err(SkeletonError::SchemaMismatch);
                }
                incident.push([Vec::new(), Vec::new()]);
                continue;
            };
            if ids[item.index()].len() != links[item.index()].len() {
                return Err(SkeletonError::SchemaMismatch);
            }
            let mut inc = [
                vec![Vec::new(); ids[parts[0].index()].len()],
                vec![Vec::new(); ids[parts[1].index()].len()],
            ];
            for (l, link) in links[item.index()].iter().enumerate() {
                for side in 0..2 {
                    let e = link[side] as usize;
                    let Some(slot) = inc[side].get_mut(e) else {
                        return Err(SkeletonError::UnknownId {
                            class: schema.name(item).to_string(),
                            entity: schema.name(parts[side]).to_string(),
                            id: link[side].to_string(),
                        });
                    };
                    slot.push(l as u32);
                    if card[side] == Cardinality::One && slot.len() > 1 {
                        return Err(SkeletonError::CardinalityViolation {
                            relationship: schema.name(item).to_string(),
                            entity: schema.name(parts[side]).to_string(),
                            id: ids[parts[side].index()][e].clone(),
                        });
                    }
                }
            }
            incident.push(inc);
        }
        let values = vec![None; schema.num_attributes()];
        Ok(Skeleton {
            schema,
            ids,
            links,
            incident,
            values,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn schema_arc(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn num_instances(&self, item: ItemId) -> usize {
        self.ids[item.index()].len()
    }

    pub fn ids(&self, item: ItemId) -> &[String] {
        &self.ids[item.index()]
    }

    pub fn links(&self, rel: ItemId) -> &[[u32; 2]] {
        &self.links[rel.index()]
    }

    pub fn values(&self, attr: AttrId) -> Option<&[f64]> {
        self.values[attr.index()].as_deref()
    }

    pub fn set_values(&mut self, attr: AttrId, values: Vec<f64>) -> Result<(), SkeletonError> {
        let owner = self.schema.attr(attr).owner;
        if values.len() != self.num_instances(owner) {
            return Err(SkeletonError::SchemaMismatch);
        }
        self.values[attr.index()] = Some(values);
        Ok(())
    }

    /// Installs a full value table as produced by [`sample_data`].
    pub fn with_values(mut self, table: Vec<Vec<f64>>) -> Result<Self, SkeletonError> {
        if table.len() != self.schema.num_attributes() {
            return Err(SkeletonError::SchemaMismatch);
        }
        for (i, col) in table.into_iter().enumerate() {
            self.set_values(AttrId(i as u16), col)?;
        }
        Ok(self)
    }

    fn step(&self, from: ItemId, to: ItemId, frontier: &[u32], out: &mut Vec<u32>) {
        out.clear();
        if let Some((parts, _)) = self.schema.relationship(to) {
            // entity -> relationship
            let side = if parts[0] == from { 0 } else { 1 };
            for &e in frontier {
                out.extend_from_slice(&self.incident[to.index()][side][e as usize]);
            }
        } else {
            let (parts, _) = self.schema.relationship(from).expect("alternating path");
            let side = if parts[0] == to { 0 } else { 1 };
            for &l in frontier {
                out.push(self.links[from.index()][l as usize][side]);
            }
        }
        out.sort_unstable();
        out.dedup();
    }

    /// Instances of the path's last class reached from `start`, excluding at
    /// every step the instances of the same class reached at earlier steps.
    pub fn terminal_set(&self, path: &RelationalPath, start: u32) -> Result<Vec<u32>, SkeletonError> {
        if start as usize >= self.num_instances(path.perspective()) {
            return Err(SkeletonError::NotPerspective(start));
        }
        Ok(self.terminal_set_unchecked(path.items(), start))
    }

    pub(crate) fn terminal_set_unchecked(&self, items: &[ItemId], start: u32) -> Vec<u32> {
        let mut steps: Vec<Vec<u32>> = Vec::with_capacity(items.len());
        steps.push(vec![start]);
        let mut buf = Vec::new();
        for k in 1..items.len() {
            self.step(items[k - 1], items[k], &steps[k - 1], &mut buf);
            let mut next = buf.clone();
            for j in 0..k {
                if items[j] == items[k] {
                    let seen = &steps[j];
                    next.retain(|x| seen.binary_search(x).is_err());
                }
            }
            if next.is_empty() {
                return next;
            }
            steps.push(next);
        }
        steps.pop().unwrap()
    }
}

/// Writes one CSV file per item class plus `manifest.json` into `dir`.
pub fn save_skeleton(skeleton: &Skeleton, dir: &Path) -> Result<PathBuf, SkeletonError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SkeletonError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let schema = skeleton.schema();
    let mut files = BTreeMap::new();
    for item in schema.item_ids() {
        let file = format!("{}.csv", schema.name(item).to_lowercase().replace('-', "_"));
        let path = dir.join(&file);
        let csv_err = |source| SkeletonError::Csv {
            path: path.clone(),
            source,
        };
        let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
        let attrs: Vec<AttrId> = schema
            .item(item)
            .attributes
            .iter()
            .copied()
            .filter(|a| skeleton.values(*a).is_some())
            .collect();
        let mut header = vec!["id".to_string()];
        let rel = schema.relationship(item);
        if let Some((parts, _)) = rel {
            header.push(format!("{}_id", schema.name(parts[0])));
            header.push(format!("{}_id", schema.name(parts[1])));
        }
        header.extend(attrs.iter().map(|a| schema.attr(*a).name.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for (i, id) in skeleton.ids(item).iter().enumerate() {
            let mut row = vec![id.clone()];
            if let Some((parts, _)) = rel {
                let link = skeleton.links(item)[i];
                row.push(skeleton.ids(parts[0])[link[0] as usize].clone());
                row.push(skeleton.ids(parts[1])[link[1] as usize].clone());
            }
            for a in &attrs {
                row.push(format!("{}", skeleton.values(*a).unwrap()[i]));
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| SkeletonError::Io {
            path: path.clone(),
            source: e,
        })?;
        files.insert(schema.name(item).to_string(), file);
    }
    let manifest = Manifest { files };
    let mpath = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io(&mpath))?;
    Ok(mpath)
}

/// Maps each item class name to its CSV file, relative to the manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub files: BTreeMap<String, String>,
}

/// Reads the CSV files named by `manifest`. Attribute columns may be absent,
/// in which case that attribute carries no values.
pub fn load_skeleton(schema: Arc<Schema>, manifest: &Path) -> Result<Skeleton, SkeletonError> {
    let text = fs::read_to_string(manifest).map_err(|source| SkeletonError::Io {
        path: manifest.to_path_buf(),
        source,
    })?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| SkeletonError::Manifest(e.to_string()))?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));

    let mut ids: Vec<Vec<String>> = vec![Vec::new(); schema.num_items()];
    let mut links: Vec<Vec<[u32; 2]>> = vec![Vec::new(); schema.num_items()];
    let mut values: Vec<(AttrId, Vec<f64>)> = Vec::new();
    let mut index: Vec<HashMap<String, u32>> = vec![HashMap::new(); schema.num_items()];

    // entities first so relationship rows can resolve ids
    let order: Vec<ItemId> = schema
        .item_ids()
        .filter(|i| schema.is_entity(*i))
        .chain(schema.item_ids().filter(|i| !schema.is_entity(*i)))
        .collect();
    for item in order {
        let class = schema.name(item).to_string();
        let file = m.files.get(&class).ok_or_else(|| SkeletonError::MissingFile(class.clone()))?;
        let path = base.join(file);
        let csv_err = |source| SkeletonError::Csv {
            path: path.clone(),
            source,
        };
        let mut r = csv::Reader::from_path(&path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        let rel = schema.relationship(item);
        let mut id_col = None;
        let mut part_cols = [None, None];
        let mut attr_cols = Vec::new();
        for (c, name) in header.iter().enumerate() {
            if name == "id" {
                id_col = Some(c);
                continue;
            }
            if let Some((parts, _)) = rel {
                if let Some(side) = (0..2).find(|&s| name == format!("{}_id", schema.name(parts[s]))) {
                    part_cols[side] = Some(c);
                    continue;
                }
            }
            match schema.lookup_attr(item, name) {
                Ok(a) => attr_cols.push((c, a)),
                Err(_) => {
                    return Err(SkeletonError::UnknownColumn {
                        class,
                        column: name.to_string(),
                    })
                }
            }
        }
        let missing = |column: String| SkeletonError::MissingColumn {
            class: class.clone(),
            column,
        };
        let id_col = id_col.ok_or_else(|| missing("id".into()))?;
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); attr_cols.len()];
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let id = rec.get(id_col).unwrap_or("").to_string();
            let n = ids[item.index()].len() as u32;
            if index[item.index()].insert(id.clone(), n).is_some() {
                return Err(SkeletonError::DuplicateId { class, id });
            }
            ids[item.index()].push(id);
            if let Some((parts, _)) = rel {
                let mut link = [0u32; 2];
                for side in 0..2 {
                    let col = part_cols[side]
                        .ok_or_else(|| missing(format!("{}_id", schema.name(parts[side]))))?;
                    let ref_id = rec.get(col).unwrap_or("");
                    link[side] = *index[parts[side].index()].get(ref_id).ok_or_else(|| SkeletonError::UnknownId {
                        class: class.clone(),
                        entity: schema.name(parts[side]).to_string(),
                        id: ref_id.to_string(),
                    })?;
                }
                links[item.index()].push(link);
            }
            for (k, (c, a)) in attr_cols.iter().enumerate() {
                let raw = rec.get(*c).unwrap_or("").trim();
                let v: f64 = raw.parse().map_err(|_| SkeletonError::NonNumeric {
                    class: class.clone(),
                    attribute: schema.attr(*a).name.clone(),
                    value: raw.to_string(),
                })?;
                cols[k].push(v);
            }
        }
        values.extend(attr_cols.iter().map(|(_, a)| *a).zip(cols));
    }
    let mut skel = Skeleton::new(schema, ids, links)?;
    for (a, col) in values {
        skel.set_values(a, col)?;
    }
    Ok(skel)
}

/// Generates a random skeleton.
///
/// `sizes[i]` is the number of instances of the i-th entity class. For each
/// relationship the number of links is `max(1, round(density * capacity))`,
/// where capacity is the largest link count its cardinalities allow:
/// `min(n1, n2)` for ONE-ONE, the ONE side's size for ONE-MANY, `n1 * n2` for
/// MANY-MANY. ONE-side instances receive at most one link.
pub fn random_skeleton(schema: Arc<Schema>, sizes: &[usize], density: f64, seed: u64) -> Result<Skeleton, SkeletonError> {
    if sizes.len() != schema.num_entities() || sizes.contains(&0) {
        return Err(SkeletonError::InvalidSizes);
    }
    if !(density > 0.0 && density <= 1.0) {
        return Err(SkeletonError::DensityInfeasible(density));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<Vec<String>> = Vec::with_capacity(schema.num_items());
    let mut links: Vec<Vec<[u32; 2]>> = Vec::with_capacity(schema.num_items());
    let prefix = |item: ItemId| schema.name(item).to_lowercase();
    let mut entity_sizes = Vec::new();
    for item in schema.item_ids() {
        if schema.is_entity(item) {
            let n = sizes[entity_sizes.len()];
            entity_sizes.push(n);
            ids.push((0..n).map(|k| format!("{}{}", prefix(item), k)).collect());
            links.push(Vec::new());
        }
    }
    for item in schema.item_ids() {
        let Some((parts, card)) = schema.relationship(item) else {
            continue;
        };
        let n = [entity_sizes[parts[0].index()], entity_sizes[parts[1].index()]];
        let cap = match card {
            [Cardinality::One, Cardinality::One] => n[0].min(n[1]),
            [Cardinality::One, Cardinality::Many] => n[0],
            [Cardinality::Many, Cardinality::One] => n[1],
            [Cardinality::Many, Cardinality::Many] => n[0] * n[1],
        };
        let count = ((density * cap as f64).round() as usize).clamp(1, cap);
        let mut ls: Vec<[u32; 2]> = match card {
            [Cardinality::One, Cardinality::One] => {
                let a = sample(&mut rng, n[0], count).into_vec();
                let b = sample(&mut rng, n[1], count).into_vec();
                a.into_iter().zip(b).map(|(x, y)| [x as u32, y as u32]).collect()
            }
            [Cardinality::One, Cardinality::Many] => sample(&mut rng, n[0], count)
                .into_iter()
                .map(|x| [x as u32, rng.random_range(0..n[1]) as u32])
                .collect(),
            [Cardinality::Many, Cardinality::One] => sample(&mut rng, n[1], count)
                .into_iter()
                .map(|y| [rng.random_range(0..n[0]) as u32, y as u32])
                .collect(),
            [Cardinality::Many, Cardinality::Many] => sample(&mut rng, n[0] * n[1], count)
                .into_iter()
                .map(|k| [(k / n[1]) as u32, (k % n[1]) as u32])
                .collect(),
        };
        ls.sort_unstable();
        ids.push((0..ls.len()).map(|k| format!("{}{}", prefix(item), k)).collect());
        links.push(ls);
    }
    Skeleton::new(schema, ids, links)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GroundNode {
    pub item: ItemId,
    pub instance: u32,
    pub attr: AttrId,
}

/// Directed instantiation of a model on a skeleton. Node ids are
/// `attr_offset[attr] + instance`.
#[derive(Debug, Clone)]
pub struct GroundGraph {
    attr_offset: Vec<usize>,
    nodes: Vec<GroundNode>,
    /// Per node: (parent node, index of the generating dependency in the model).
    parents: Vec<Vec<(u32, u32)>>,
    children: Vec<Vec<u32>>,
    num_deps: usize,
}

impl GroundGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn node(&self, id: u32) -> GroundNode {
        self.nodes[id as usize]
    }

    pub fn node_id(&self, attr: AttrId, instance: u32) -> u32 {
        (self.attr_offset[attr.index()] + instance as usize) as u32
    }

    pub fn parents(&self, id: u32) -> impl Iterator<Item = u32> + '_ {
        self.parents[id as usize].iter().map(|p| p.0)
    }

    pub fn children(&self, id: u32) -> &[u32] {
        &self.children[id as usize]
    }

    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |p| (p.0, c as u32)))
    }

    /// Kahn order with ties broken by node id; `None` on a cycle.
    pub fn topological_order(&self) -> Option<Vec<u32>> {
        let n = self.nodes.len();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut heap: BinaryHeap<Reverse<u32>> = (0..n as u32).filter(|&i| indeg[i as usize] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = heap.pop() {
            order.push(i);
            for &c in &self.children[i as usize] {
                indeg[c as usize] -= 1;
                if indeg[c as usize] == 0 {
                    heap.push(Reverse(c));
                }
            }
        }
        (order.len() == n).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }
}

/// Instantiates every dependency of `model` on `skeleton`.
pub fn ground_graph(model: &RelationalModel, skeleton: &Skeleton) -> Result<GroundGraph, SkeletonError> {
    let schema = model.schema();
    if schema != skeleton.schema() {
        return Err(SkeletonError::SchemaMismatch);
    }
    let mut attr_offset = Vec::with_capacity(schema.num_attributes());
    let mut nodes = Vec::new();
    for a in schema.attr_ids() {
        attr_offset.push(nodes.len());
        let owner = schema.attr(a).owner;
        for i in 0..skeleton.num_instances(owner) as u32 {
            nodes.push(GroundNode {
                item: owner,
                instance: i,
                attr: a,
            });
        }
    }
    let mut parents = vec![Vec::new(); nodes.len()];
    let mut children = vec![Vec::new(); nodes.len()];
    for (d, dep) in model.dependencies().iter().enumerate() {
        let base = dep.effect.path.perspective();
        for i in 0..skeleton.num_instances(base) as u32 {
            let target = attr_offset[dep.effect.attr.index()] + i as usize;
            for x in skeleton.terminal_set_unchecked(dep.cause.path.items(), i) {
                let source = attr_offset[dep.cause.attr.index()] + x as usize;
                parents[target].push((source as u32, d as u32));
                children[source].push(target as u32);
            }
        }
    }
    Ok(GroundGraph {
        attr_offset,
        nodes,
        parents,
        children,
        num_deps: model.dependencies().len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleParams {
    pub coeff_range: (f64, f64),
    pub noise_sd: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        SampleParams {
            coeff_range: (0.3, 0.7),
            noise_sd: 1.0,
        }
    }
}

/// Linear-Gaussian values for every ground node, indexed `[attr][instance]`.
///
/// Each dependency gets one coefficient drawn from `coeff_range`. A node's
/// value is the sum over its generating dependencies of the coefficient times
/// the mean of that dependency's parent values, plus `N(0, noise_sd)` noise.
pub fn sample_data(graph: &GroundGraph, seed: u64, params: SampleParams) -> Result<Vec<Vec<f64>>, SkeletonError> {
    let order = graph.topological_order().ok_or(SkeletonError::Cyclic)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = params.coeff_range;
    let coeffs: Vec<f64> = (0..graph.num_deps)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let normal = Normal::new(0.0, params.noise_sd).expect("finite noise sd");
    let mut value: Vec<f64> = (0..graph.num_nodes()).map(|_| normal.sample(&mut rng)).collect();
    let mut sums = vec![0.0; graph.num_deps];
    let mut counts = vec![0usize; graph.num_deps];
    for id in order {
        let ps = &graph.parents[id as usize];
        if ps.is_empty() {
            continue;
        }
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for &(p, d) in ps {
            sums[d as usize] += value[p as usize];
            counts[d as usize] += 1;
        }
        let mut v = value[id as usize];
        for d in 0..graph.num_deps {
            if counts[d] > 0 {
                v += coeffs[d] * sums[d] / counts[d] as f64;
            }
        }
        value[id as usize] = v;
    }
    let mut table = Vec::with_capacity(graph.attr_offset.len());
    for (a, &off) in graph.attr_offset.iter().enumerate() {
        let end = graph.attr_offset.get(a + 1).copied().unwrap_or(graph.num_nodes());
        table.push(value[off..end].to_vec());
    }
    Ok(table)
}

/// Standard d-separation on the ground graph, via the moral graph of the
/// ancestral set of `x ∪ y ∪ z`.
pub fn dsep_ground(graph: &GroundGraph, x: &[u32], y: &[u32], z: &[u32]) -> Result<bool, SkeletonError> {
    let n = graph.num_nodes();
    let mut tag = vec![0u8; n];
    for (bit, set) in [(1u8, x), (2, y), (4, z)] {
        for &v in set {
            if tag[v as usize] & !bit != 0 {
                return Err(SkeletonError::OverlappingSets);
            }
            tag[v as usize] |= bit;
        }
    }
    // ancestral closure
    let mut anc = vec![false; n];
    let mut stack: Vec<u32> = x.iter().chain(y).chain(z).copied().collect();
    while let Some(v) = stack.pop() {
        if std::mem::replace(&mut anc[v as usize], true) {
            continue;
        }
        stack.extend(graph.parents(v));
    }
    // moralize: child-parent edges and parent-parent marriages
    let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
    for v in 0..n as u32 {
        if !anc[v as usize] {
            continue;
        }
        let ps: Vec<u32> = graph.parents(v).collect();
        for (i, &p) in ps.iter().enumerate() {
            adj.entry(v).or_default().push(p);
            adj.entry(p).or_default().push(v);
            for &q in &ps[i + 1..] {
                adj.entry(p).or_default().push(q);
                adj.entry(q).or_default().push(p);
            }
        }
    }
    let mut seen = vec![false; n];
    let mut queue: VecDeque<u32> = x.iter().copied().collect();
    for &v in x {
        seen[v as usize] = true;
    }
    while let Some(v) = queue.pop_front() {
        if tag[v as usize] & 2 != 0 {
            return Ok(false);
        }
        for &w in adj.get(&v).map(Vec::as_slice).unwrap_or(&[]) {
            if !seen[w as usize] && tag[w as usize] & 4 == 0 {
                seen[w as usize] = true;
                queue.push_back(w);
            }
        }
    }
    Ok(true)
}

/// Ground nodes instantiating `var` from instance `start` of its perspective.
pub fn instantiate(graph: &GroundGraph, skeleton: &Skeleton, var: &RelationalVariable, start: u32) -> Vec<u32> {
    skeleton
        .terminal_set_unchecked(var.path.items(), start)
        .into_iter()
        .map(|i| graph.node_id(var.attr, i))
        .collect()
}

/// Ground-level check of a relational independence statement at one base
/// instance. Conditioned nodes are removed from the two sides first; a node
/// shared by both sides makes them dependent.
pub fn instantiated_dsep(
    graph: &GroundGraph,
    skeleton: &Skeleton,
    start: u32,
    x: &RelationalVariable,
    y: &RelationalVariable,
    z: &[RelationalVariable],
) -> bool {
    let mut zs: Vec<u32> = z.iter().flat_map(|v| instantiate(graph, skeleton, v, start)).collect();
    zs.sort_unstable();
    zs.dedup();
    let strip = |v: &RelationalVariable| -> Vec<u32> {
        let mut s = instantiate(graph, skeleton, v, start);
        s.retain(|n| zs.binary_search(n).is_err());
        s
    };
    let xs = strip(x);
    let ys = strip(y);
    if xs.is_empty() || ys.is_empty() {
        return true;
    }
    if xs.iter().any(|n| ys.contains(n)) {
        return false;
    }
    dsep_ground(graph, &xs, &ys, &zs).expect("disjoint by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{movie_model, parse_dependency, parse_variable};
    use crate::paths::parse_path;
    use crate::schema::{movie_schema, SchemaDoc};

    /// a1 and a2 both star in m1.
    fn tiny_movie() -> Skeleton {
        let s = Arc::new(movie_schema());
        Skeleton::new(
            s,
            vec![
                vec!["a1".into(), "a2".into()],
                vec!["m1".into()],
                vec!["s1".into(), "s2".into()],
            ],
            vec![vec![], vec![], vec![[0, 0], [1, 0]]],
        )
        .unwrap()
    }

    fn employee_schema() -> Arc<Schema> {
        let doc: SchemaDoc = serde_json::from_str(
            r#"{"entities": [{"name": "EMPLOYEE", "attributes": ["Salary"]},
                             {"name": "COMPANY", "attributes": ["Revenue"]}],
                "relationships": [{"name": "WORKS-FOR", "participants": ["EMPLOYEE", "COMPANY"],
                                   "card": {"EMPLOYEE": "ONE", "COMPANY": "MANY"}}]}"#,
        )
        .unwrap();
        Arc::new(Schema::from_doc(&doc).unwrap())
    }

    #[test]
    fn terminal_set_examples() {
        let k = tiny_movie();
        let s = k.schema().clone();
        let co = parse_path(&s, "[ACTOR, STARS-IN, MOVIE, STARS-IN, ACTOR]").unwrap();
        assert_eq!(k.terminal_set(&co, 0).unwrap(), vec![1]);
        assert_eq!(k.terminal_set(&parse_path(&s, "[ACTOR]").unwrap(), 0).unwrap(), vec![0]);
        assert!(k.terminal_set(&co, 9).is_err());

        let lonely = Skeleton::new(
            Arc::new(movie_schema()),
            vec![vec!["a1".into()], vec!["m1".into()], vec![]],
            vec![vec![], vec![], vec![]],
        )
        .unwrap();
        let am = parse_path(&s, "[ACTOR, STARS-IN, MOVIE]").unwrap();
        assert!(lonely.terminal_set(&am, 0).unwrap().is_empty());
    }

    #[test]
    fn ground_graph_examples() {
        let k = tiny_movie();
        let m = movie_model();
        let g = ground_graph(&m, &k).unwrap();
        let s = m.schema();
        let pop = s.lookup_attr(s.lookup("ACTOR").unwrap(), "Popularity").unwrap();
        let suc = s.lookup_attr(s.lookup("MOVIE").unwrap(), "Success").unwrap();
        let mut edges: Vec<_> = g.edges().collect();
        edges.sort();
        assert_eq!(edges, vec![(g.node_id(pop, 0), g.node_id(suc, 0)), (g.node_id(pop, 1), g.node_id(suc, 0))]);
        assert!(g.is_acyclic());

        let empty = RelationalModel::new(m.schema_arc().clone(), vec![]).unwrap();
        let g0 = ground_graph(&empty, &k).unwrap();
        assert_eq!(g0.num_nodes(), 3);
        assert_eq!(g0.num_edges(), 0);
    }

    #[test]
    fn one_to_many_grounding() {
        let s = employee_schema();
        let dep = parse_dependency(&s, "[COMPANY, WORKS-FOR, EMPLOYEE].Salary -> [COMPANY].Revenue").unwrap();
        let m = RelationalModel::new(s.clone(), vec![dep]).unwrap();
        let k = random_skeleton(s.clone(), &[12, 3], 1.0, 4).unwrap();
        let g = ground_graph(&m, &k).unwrap();
        let salary = s.lookup_attr(s.lookup("EMPLOYEE").unwrap(), "Salary").unwrap();
        for e in 0..12 {
            assert_eq!(g.children(g.node_id(salary, e)).len(), 1);
        }
    }

    #[test]
    fn dsep_ground_examples() {
        let k = tiny_movie();
        let m = movie_model();
        let g = ground_graph(&m, &k).unwrap();
        let (a1, a2, m1) = (0u32, 1u32, 2u32);
        assert!(dsep_ground(&g, &[a1], &[a2], &[]).unwrap());
        assert!(!dsep_ground(&g, &[a1], &[a2], &[m1]).unwrap());
        assert!(matches!(dsep_ground(&g, &[a1], &[a2], &[a1]), Err(SkeletonError::OverlappingSets)));

        let empty = RelationalModel::new(m.schema_arc().clone(), vec![]).unwrap();
        let g0 = ground_graph(&empty, &k).unwrap();
        assert!(dsep_ground(&g0, &[a1], &[m1], &[]).unwrap());
        assert!(dsep_ground(&g0, &[a1], &[a2], &[m1]).unwrap());
    }

    #[test]
    fn instantiated_statement() {
        let k = tiny_movie();
        let m = movie_model();
        let g = ground_graph(&m, &k).unwrap();
        let s = m.schema();
        let x = parse_variable(s, "[ACTOR].Popularity").unwrap();
        let y = parse_variable(s, "[ACTOR, STARS-IN, MOVIE, STARS-IN, ACTOR].Popularity").unwrap();
        let z = parse_variable(s, "[ACTOR, STARS-IN, MOVIE].Success").unwrap();
        assert!(instantiated_dsep(&g, &k, 0, &x, &y, &[]));
        assert!(!instantiated_dsep(&g, &k, 0, &x, &y, &[z]));
    }

    #[test]
    fn random_skeleton_contract() {
        let s = Arc::new(movie_schema());
        let k = random_skeleton(s.clone(), &[4, 5], 0.5, 1).unwrap();
        assert_eq!(k.num_instances(ItemId(0)), 4);
        assert_eq!(k.num_instances(ItemId(1)), 5);
        assert_eq!(k.links(ItemId(2)).len(), 10);
        assert_eq!(k, random_skeleton(s.clone(), &[4, 5], 0.5, 1).unwrap());

        let tiny = random_skeleton(s.clone(), &[1, 1], 0.01, 1).unwrap();
        assert!(tiny.links(ItemId(2)).len() <= 1);
        assert!(random_skeleton(s.clone(), &[1, 1], 1.5, 1).is_err());
        assert!(random_skeleton(s, &[0, 1], 0.5, 1).is_err());
    }

    #[test]
    fn cardinality_violation_rejected() {
        let s = employee_schema();
        let err = Skeleton::new(
            s,
            vec![vec!["e1".into()], vec!["c1".into(), "c2".into()], vec!["w1".into(), "w2".into()]],
            vec![vec![], vec![], vec![[0, 0], [0, 1]]],
        )
        .unwrap_err();
        assert!(matches!(err, SkeletonError::CardinalityViolation { .. }));
    }

    #[test]
    fn sampling_is_deterministic_and_signed() {
        let s = Arc::new(movie_schema());
        let k = random_skeleton(s.clone(), &[400, 400], 0.005, 2).unwrap();
        let m = movie_model();
        let g = ground_graph(&m, &k).unwrap();
        let a = sample_data(&g, 9, SampleParams::default()).unwrap();
        assert_eq!(a, sample_data(&g, 9, SampleParams::default()).unwrap());

        // success should correlate positively with the mean popularity of its actors
        let stars = s.lookup("STARS-IN").unwrap();
        let mut sum = vec![0.0; 400];
        let mut cnt = vec![0usize; 400];
        for l in k.links(stars) {
            sum[l[1] as usize] += a[0][l[0] as usize];
            cnt[l[1] as usize] += 1;
        }
        let pairs: Vec<(f64, f64)> = (0..400).filter(|&j| cnt[j] > 0).map(|j| (sum[j] / cnt[j] as f64, a[1][j])).collect();
        let n = pairs.len() as f64;
        let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / n, pairs.iter().map(|p| p.1).sum::<f64>() / n);
        let cov: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        assert!(cov > 0.0);
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let s = Arc::new(movie_schema());
        let m = movie_model();
        let k = random_skeleton(s.clone(), &[4, 5], 0.5, 3).unwrap();
        let g = ground_graph(&m, &k).unwrap();
        let k = k.with_values(sample_data(&g, 1, SampleParams::default()).unwrap()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let manifest = save_skeleton(&k, dir.path()).unwrap();
        let back = load_skeleton(s.clone(), &manifest).unwrap();
        assert_eq!(back, k);

        // dangling actor reference
        let stars = dir.path().join("stars_in.csv");
        let text = fs::read_to_string(&stars).unwrap();
        let broken = text.replacen("actor", "actorX", 2);
        fs::write(&stars, broken).unwrap();
        assert!(matches!(load_skeleton(s.clone(), &manifest), Err(SkeletonError::UnknownId { .. })));
    }

    #[test]
    fn csv_cardinality_violation() {
        let s = employee_schema();
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("employee.csv"), "id,Salary\ne1,1.0\n").unwrap();
        fs::write(dir.path().join("company.csv"), "id,Revenue\nc1,2.0\nc2,3.0\n").unwrap();
        fs::write(dir.path().join("works.csv"), "id,EMPLOYEE_id,COMPANY_id\nw1,e1,c1\nw2,e1,c2\n").unwrap();
        fs::write(
            dir.path().join("manifest.json"),
            r#"{"files": {"EMPLOYEE": "employee.csv", "COMPANY": "company.csv", "WORKS-FOR": "works.csv"}}"#,
        )
        .unwrap();
        let err = load_skeleton(s.clone(), &dir.path().join("manifest.json")).unwrap_err();
        assert!(matches!(err, SkeletonError::CardinalityViolation { .. }));

        fs::write(dir.path().join("employee.csv"), "id,Salary,Bonus\ne1,1.0,2\n").unwrap();
        let err = load_skeleton(s.clone(), &dir.path().join("manifest.json")).unwrap_err();
        assert!(matches!(err, SkeletonError::UnknownColumn { .. }));

        fs::write(dir.path().join("employee.csv"), "id,Salary\ne1,abc\n").unwrap();
        let err = load_skeleton(s, &dir.path().join("manifest.json")).unwrap_err();
        assert!(matches!(err, SkeletonError::NonNumeric { .. }));
    }
}
