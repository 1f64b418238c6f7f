//! The two-phase learning algorithm: skeleton search over potential
//! dependencies, then orientation on abstract ground graphs.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::agg::{build_all, AggError, AggSet, Conflict, Mark, OrientOutcome};
use crate::ci::{CiBackend, CiError, CiQuery, CiSession, CiStats, SepsetStore, Stage};
use crate::model::{potential_dependencies, reverse_dependency, ModelError, RelationalDependency, RelationalVariable};
use crate::paths::cardinality_items;
use crate::schema::{AttrId, Cardinality, ItemId, Schema};

#[derive(Debug, Error)]
pub enum RcdError {
    #[error(transparent)]
    Ci(#[from] CiError),
    #[error(transparent)]
    Agg(#[from] AggError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Where bivariate orientation sits relative to the other rules.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RboOrder {
    /// collider detection, bivariate orientation, Meek rules
    #[default]
    RboAfterCd,
    /// bivariate orientation, collider detection, Meek rules
    RboFirst,
    /// collider detection, Meek rules, bivariate orientation, Meek rules
    RboLast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub hop_threshold: usize,
    /// Largest conditioning set tried.
    pub depth: usize,
    pub rbo_order: RboOrder,
    pub seed: u64,
    /// Shuffle dependencies, triples and candidate pools with `seed`.
    pub randomize_order: bool,
    /// Node bound of the orientation graphs; `None` means twice the hop threshold.
    pub agg_hops: Option<usize>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        LearnConfig {
            hop_threshold: 4,
            depth: 3,
            rbo_order: RboOrder::RboAfterCd,
            seed: 0,
            randomize_order: false,
            agg_hops: None,
        }
    }
}

impl LearnConfig {
    pub fn agg_hops(&self) -> usize {
        self.agg_hops.unwrap_or(2 * self.hop_threshold)
    }
}

/// Orientation rules, in attribution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    Cd,
    Rbo,
    Knc,
    Ca,
    Mr3,
}

impl Rule {
    pub const ALL: [Rule; 5] = [Rule::Cd, Rule::Rbo, Rule::Knc, Rule::Ca, Rule::Mr3];

    pub fn name(self) -> &'static str {
        match self {
            Rule::Cd => "cd",
            Rule::Rbo => "rbo",
            Rule::Knc => "knc",
            Rule::Ca => "ca",
            Rule::Mr3 => "mr3",
        }
    }
}

/// Number of dependencies first directed by each rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleCounts {
    pub cd: u64,
    pub rbo: u64,
    pub knc: u64,
    pub ca: u64,
    pub mr3: u64,
}

impl RuleCounts {
    pub fn get(&self, rule: Rule) -> u64 {
        match rule {
            Rule::Cd => self.cd,
            Rule::Rbo => self.rbo,
            Rule::Knc => self.knc,
            Rule::Ca => self.ca,
            Rule::Mr3 => self.mr3,
        }
    }

    fn slot(&mut self, rule: Rule) -> &mut u64 {
        match rule {
            Rule::Cd => &mut self.cd,
            Rule::Rbo => &mut self.rbo,
            Rule::Knc => &mut self.knc,
            Rule::Ca => &mut self.ca,
            Rule::Mr3 => &mut self.mr3,
        }
    }

    pub fn bump(&mut self, rule: Rule) {
        *self.slot(rule) += 1;
    }

    pub fn total(&self) -> u64 {
        Rule::ALL.iter().map(|r| self.get(*r)).sum()
    }
}

/// A dependency in a learned pattern. Directed entries hold the learned
/// direction; undirected ones hold the pair's representative.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LearnedDependency {
    pub dependency: RelationalDependency,
    pub directed: bool,
    pub rule: Option<Rule>,
}

#[derive(Debug, Clone)]
pub struct LearnedPattern {
    schema: Arc<Schema>,
    pub dependencies: Vec<LearnedDependency>,
    pub sepsets: SepsetStore,
    pub stats: CiStats,
    pub rules: RuleCounts,
    pub conflicts: Vec<Conflict>,
}

impl LearnedPattern {
    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn directed(&self) -> impl Iterator<Item = &RelationalDependency> {
        self.dependencies.iter().filter(|d| d.directed).map(|d| &d.dependency)
    }

    pub fn undirected(&self) -> impl Iterator<Item = &RelationalDependency> {
        self.dependencies.iter().filter(|d| !d.directed).map(|d| &d.dependency)
    }

    /// Representatives of every learned pair, ignoring direction.
    pub fn skeleton(&self) -> BTreeSet<RelationalDependency> {
        self.dependencies.iter().map(|d| d.dependency.representative()).collect()
    }

    /// Whether the directed part has an acyclic class dependency graph.
    pub fn is_acyclic(&self) -> bool {
        let directed: Vec<RelationalDependency> = self.directed().cloned().collect();
        crate::model::is_acyclic(&self.schema, &directed)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let s = &*self.schema;
        let deps: Vec<_> = self
            .dependencies
            .iter()
            .map(|d| {
                json!({
                    "dependency": d.dependency.display(s).to_string(),
                    "status": if d.directed { "directed" } else { "undirected" },
                    "rule": d.rule.map(Rule::name),
                })
            })
            .collect();
        let sepsets: Vec<_> = self
            .sepsets
            .iter()
            .map(|(a, b, set)| {
                json!({
                    "x": a.display(s).to_string(),
                    "y": b.display(s).to_string(),
                    "set": set.iter().map(|v| v.display(s).to_string()).collect::<Vec<_>>(),
                })
            })
            .collect();
        let conflicts: Vec<_> = self
            .conflicts
            .iter()
            .map(|c| {
                json!({
                    "from": s.attr_label(c.from),
                    "to": s.attr_label(c.to),
                    "kind": c.kind,
                })
            })
            .collect();
        json!({
            "dependencies": deps,
            "rule_counts": self.rules,
            "ci_tests": {
                "phase1": self.stats.phase1,
                "collider": self.stats.collider,
                "bivariate": self.stats.bivariate,
                "total": self.stats.total(),
            },
            "conflicts": conflicts,
            "sepsets": sepsets,
        })
    }

    /// Class-level graph: one node per attribute, one edge per dependency
    /// labelled with its path.
    pub fn to_dot(&self) -> String {
        let s = &*self.schema;
        let mut out = String::from("digraph pattern {\n");
        for a in s.attr_ids() {
            writeln!(out, "  a{} [label=\"{}\"];", a.0, s.attr_label(a)).unwrap();
        }
        for d in &self.dependencies {
            let label = d.dependency.cause.path.display(s).to_string();
            let style = if d.directed { "" } else { ", dir=none" };
            writeln!(
                out,
                "  a{} -> a{} [label=\"{}\"{}];",
                d.dependency.cause.attr.0, d.dependency.effect.attr.0, label, style
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }
}

fn shuffle<T>(rng: &mut Option<ChaCha8Rng>, v: &mut [T]) {
    if let Some(r) = rng {
        v.shuffle(r);
    }
}

fn run_rng(config: &LearnConfig) -> Option<ChaCha8Rng> {
    config.randomize_order.then(|| ChaCha8Rng::seed_from_u64(config.seed))
}

/// Skeleton search. Returns the surviving dependencies (both orientations of
/// each pair) and the separating sets found.
pub fn phase1(schema: &Schema, backend: &dyn CiBackend, config: &LearnConfig) -> Result<(Vec<RelationalDependency>, SepsetStore), RcdError> {
    let mut session = CiSession::new(backend);
    let mut rng = run_rng(config);
    let deps = phase1_in(schema, &mut session, config, &mut rng)?;
    Ok((deps, session.store))
}

fn phase1_in(
    schema: &Schema,
    session: &mut CiSession<'_>,
    config: &LearnConfig,
    rng: &mut Option<ChaCha8Rng>,
) -> Result<Vec<RelationalDependency>, RcdError> {
    let mut order = potential_dependencies(schema, config.hop_threshold);
    shuffle(rng, &mut order);
    let mut alive: HashSet<RelationalDependency> = order.iter().cloned().collect();
    // effect variable -> causes of surviving dependencies
    let mut neighbors: HashMap<RelationalVariable, BTreeSet<RelationalVariable>> = HashMap::new();
    for d in &order {
        neighbors.entry(d.effect.clone()).or_default().insert(d.cause.clone());
    }
    for size in 0..=config.depth {
        let mut testable = false;
        for dep in &order {
            if !alive.contains(dep) {
                continue;
            }
            let mut cand: Vec<RelationalVariable> = neighbors[&dep.effect]
                .iter()
                .filter(|c| **c != dep.cause)
                .cloned()
                .collect();
            if cand.len() < size {
                continue;
            }
            testable = true;
            shuffle(rng, &mut cand);
            for subset in cand.into_iter().combinations(size) {
                let q = CiQuery::new(dep.cause.clone(), dep.effect.clone(), subset.clone())?;
                if session.test(&q, Stage::Skeleton)? {
                    let rev = reverse_dependency(dep)?;
                    for d in [dep, &rev] {
                        alive.remove(d);
                        if let Some(n) = neighbors.get_mut(&d.effect) {
                            n.remove(&d.cause);
                        }
                    }
                    session.store.insert(&dep.cause, &dep.effect, subset);
                    break;
                }
            }
        }
        if !testable {
            break;
        }
    }
    let mut out: Vec<RelationalDependency> = alive.into_iter().collect();
    out.sort();
    Ok(out)
}

/// Orientation state for the second phase.
pub struct PhaseTwo<'a> {
    set: AggSet,
    session: CiSession<'a>,
    depth: usize,
    rng: Option<ChaCha8Rng>,
    /// Unshielded triples `(perspective, x, y, z)`, `x < z`, known not to be colliders.
    noncolliders: HashSet<(ItemId, u32, u32, u32)>,
    no_sepset: HashSet<(RelationalVariable, RelationalVariable)>,
    attribution: BTreeMap<u32, Rule>,
    rules: RuleCounts,
}

impl<'a> PhaseTwo<'a> {
    pub fn new(set: AggSet, session: CiSession<'a>, config: &LearnConfig) -> Self {
        let mut rng = run_rng(config);
        // decorrelate from the first phase's stream
        if let Some(r) = &mut rng {
            *r = ChaCha8Rng::seed_from_u64(r.random());
        }
        PhaseTwo {
            set,
            session,
            depth: config.depth,
            rng,
            noncolliders: HashSet::new(),
            no_sepset: HashSet::new(),
            attribution: BTreeMap::new(),
            rules: RuleCounts::default(),
        }
    }

    pub fn agg_set(&self) -> &AggSet {
        &self.set
    }

    fn perspectives(&self) -> Vec<ItemId> {
        self.set.schema().item_ids().collect()
    }

    fn orient(&mut self, p: ItemId, u: u32, v: u32, rule: Rule) -> bool {
        match self.set.orient_edge(p, u, v) {
            OrientOutcome::Changed(reps) => {
                for r in reps {
                    if let std::collections::btree_map::Entry::Vacant(e) = self.attribution.entry(r) {
                        e.insert(rule);
                        self.rules.bump(rule);
                    }
                }
                true
            }
            _ => false,
        }
    }

    fn sepset(&mut self, p: ItemId, x: u32, z: u32, stage: Stage) -> Result<Option<Vec<RelationalVariable>>, RcdError> {
        let agg = self.set.agg(p);
        let (vx, vz) = (agg.node(x).clone(), agg.node(z).clone());
        if let Some(s) = self.session.store.get(&vx, &vz) {
            return Ok(Some(s.to_vec()));
        }
        let key = if vx <= vz { (vx.clone(), vz.clone()) } else { (vz.clone(), vx.clone()) };
        if self.no_sepset.contains(&key) {
            return Ok(None);
        }
        let mut pool: Vec<u32> = agg.neighbors(x).chain(agg.neighbors(z)).filter(|&n| n != x && n != z).collect();
        pool.sort_unstable();
        pool.dedup();
        shuffle(&mut self.rng, &mut pool);
        let pool: Vec<RelationalVariable> = pool.into_iter().map(|n| agg.node(n).clone()).collect();
        let found = self.session.find_sepset(&vx, &vz, &pool, self.depth, stage)?;
        if found.is_none() {
            self.no_sepset.insert(key);
        }
        Ok(found)
    }

    fn triple_key(p: ItemId, x: u32, y: u32, z: u32) -> (ItemId, u32, u32, u32) {
        (p, x.min(z), y, x.max(z))
    }

    /// Orients every unshielded triple whose endpoints have a separating set
    /// without the middle node as a collider.
    pub fn collider_detection(&mut self) -> Result<(), RcdError> {
        for p in self.perspectives() {
            let mut triples = self.set.agg(p).unshielded_triples();
            shuffle(&mut self.rng, &mut triples);
            for (x, y, z) in triples {
                if self.set.is_directed(p, x, y) && self.set.is_directed(p, z, y) {
                    continue;
                }
                let Some(s) = self.sepset(p, x, z, Stage::Collider)? else {
                    continue;
                };
                let vy = self.set.agg(p).node(y);
                if s.contains(vy) {
                    self.noncolliders.insert(Self::triple_key(p, x, y, z));
                } else {
                    self.orient(p, x, y, Rule::Cd);
                    self.orient(p, z, y, Rule::Cd);
                }
            }
        }
        Ok(())
    }

    /// For `[I_X].X - P.Y` with a MANY reverse path and a same-attribute node
    /// `Q.X` adjacent to `P.Y` but not to `[I_X].X`, a separating set for the
    /// two `X` variables decides between common cause and collider.
    pub fn bivariate_orientation(&mut self) -> Result<(), RcdError> {
        for p in self.perspectives() {
            let agg = self.set.agg(p);
            let mut work: Vec<(u32, u32, Vec<u32>)> = Vec::new();
            for c in 0..agg.num_nodes() as u32 {
                if !agg.node(c).path.is_singleton() {
                    continue;
                }
                let attr = agg.node(c).attr;
                for m in agg.neighbors(c) {
                    let rev: Vec<ItemId> = agg.node(m).path.items().iter().rev().copied().collect();
                    if cardinality_items(&rev, self.set.schema()) != Cardinality::Many {
                        continue;
                    }
                    let far: Vec<u32> = agg
                        .neighbors(m)
                        .filter(|&q| q != c && agg.node(q).attr == attr && !agg.adjacent(c, q))
                        .collect();
                    if !far.is_empty() {
                        work.push((c, m, far));
                    }
                }
            }
            shuffle(&mut self.rng, &mut work);
            for (c, m, far) in work {
                for q in far {
                    if self.set.is_directed(p, c, m) {
                        break;
                    }
                    let Some(s) = self.sepset(p, c, q, Stage::Bivariate)? else {
                        continue;
                    };
                    let vm = self.set.agg(p).node(m);
                    if s.contains(vm) {
                        self.noncolliders.insert(Self::triple_key(p, c, m, q));
                        self.orient(p, m, c, Rule::Rbo);
                    } else {
                        self.orient(p, c, m, Rule::Rbo);
                    }
                }
            }
        }
        Ok(())
    }

    fn mark(&self, p: ItemId, u: u32, v: u32) -> Option<Mark> {
        self.set.mark(p, u, v)
    }

    fn try_edge(&self, p: ItemId, u: u32, v: u32) -> Option<Rule> {
        let agg = self.set.agg(p);
        let into = |w: u32, t: u32| self.mark(p, w, t) == Some(Mark::Out);
        // known non-collider: w -> u - v, w and v apart
        for w in agg.neighbors(u) {
            if w != v
                && into(w, u)
                && !agg.adjacent(w, v)
                && self.noncolliders.contains(&Self::triple_key(p, w, u, v))
            {
                return Some(Rule::Knc);
            }
        }
        // cycle avoidance: u -> w -> v
        for w in agg.neighbors(u) {
            if w != v && into(u, w) && into(w, v) {
                return Some(Rule::Ca);
            }
        }
        // u - w1 -> v, u - w2 -> v, w1 and w2 apart, w1 - u - w2 not a collider
        let mids: Vec<u32> = agg
            .neighbors(u)
            .filter(|&w| w != v && self.mark(p, u, w) == Some(Mark::Undirected) && into(w, v))
            .collect();
        for (i, &w1) in mids.iter().enumerate() {
            for &w2 in &mids[i + 1..] {
                if !agg.adjacent(w1, w2) && self.noncolliders.contains(&Self::triple_key(p, w1, u, w2)) {
                    return Some(Rule::Mr3);
                }
            }
        }
        None
    }

    /// Known non-colliders, cycle avoidance and Meek rule 3 to a fixpoint
    /// over every perspective.
    pub fn meek_rules(&mut self) {
        loop {
            let mut changed = false;
            for p in self.perspectives() {
                let n_edges = self.set.agg(p).edges().len();
                for e in 0..n_edges {
                    let (a, b) = {
                        let edge = &self.set.agg(p).edges()[e];
                        (edge.a, edge.b)
                    };
                    if self.mark(p, a, b) != Some(Mark::Undirected) {
                        continue;
                    }
                    for (u, v) in [(a, b), (b, a)] {
                        if let Some(rule) = self.try_edge(p, u, v) {
                            changed |= self.orient(p, u, v, rule);
                            break;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
    }

    pub fn finish(self, schema: Arc<Schema>) -> LearnedPattern {
        let reg = self.set.registry();
        let mut deps: Vec<LearnedDependency> = (0..reg.len() as u32)
            .map(|i| match reg.directed(i) {
                Some(d) => LearnedDependency {
                    dependency: d,
                    directed: true,
                    rule: self.attribution.get(&i).copied(),
                },
                None => LearnedDependency {
                    dependency: reg.dependencies()[i as usize].clone(),
                    directed: false,
                    rule: None,
                },
            })
            .collect();
        deps.sort();
        LearnedPattern {
            schema,
            dependencies: deps,
            sepsets: self.session.store,
            stats: self.session.stats,
            rules: self.rules,
            conflicts: self.set.conflicts().to_vec(),
        }
    }
}

/// Runs both phases.
pub fn rcd_learn(schema: Arc<Schema>, backend: &dyn CiBackend, config: &LearnConfig) -> Result<LearnedPattern, RcdError> {
    let mut session = CiSession::new(backend);
    let mut rng = run_rng(config);
    let deps = phase1_in(&schema, &mut session, config, &mut rng)?;
    let set = build_all(&deps, schema.clone(), config.agg_hops())?;
    let mut two = PhaseTwo::new(set, session, config);
    match config.rbo_order {
        RboOrder::RboAfterCd => {
            two.collider_detection()?;
            two.bivariate_orientation()?;
            two.meek_rules();
        }
        RboOrder::RboFirst => {
            two.bivariate_orientation()?;
            two.collider_detection()?;
            two.meek_rules();
        }
        RboOrder::RboLast => {
            two.collider_detection()?;
            two.meek_rules();
            two.bivariate_orientation()?;
            two.meek_rules();
        }
    }
    Ok(two.finish(schema))
}

/// Seeds for `runs` voting runs derived from one master seed.
pub fn derive_seeds(master: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..runs).map(|_| rng.random()).collect()
}

/// Runs the learner `runs` times with shuffled orders and keeps a dependency
/// present in at least `threshold` of the runs. A direction is kept when it
/// reaches `threshold` among the runs where the dependency is present and
/// does not close a cycle with stronger votes.
pub fn majority_vote(
    schema: Arc<Schema>,
    backend: &dyn CiBackend,
    config: &LearnConfig,
    runs: usize,
    threshold: f64,
) -> Result<LearnedPattern, RcdError> {
    if runs == 0 {
        return Err(RcdError::Config("runs must be at least 1".into()));
    }
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(RcdError::Config(format!("vote threshold {threshold} is outside (0, 1]")));
    }
    let seeds = derive_seeds(config.seed, runs);
    let results: Vec<LearnedPattern> = seeds
        .par_iter()
        .map(|&seed| {
            let cfg = LearnConfig {
                seed,
                randomize_order: true,
                ..config.clone()
            };
            rcd_learn(schema.clone(), backend, &cfg)
        })
        .collect::<Result<_, _>>()?;

    #[derive(Default)]
    struct Tally {
        present: usize,
        forward: usize,
        reverse: usize,
        rules: [BTreeMap<Rule, usize>; 2],
    }
    let mut tally: BTreeMap<RelationalDependency, Tally> = BTreeMap::new();
    let mut stats = CiStats::default();
    let mut conflicts = Vec::new();
    for r in &results {
        stats.add(&r.stats);
        conflicts.extend(r.conflicts.iter().cloned());
        for d in &r.dependencies {
            let rep = d.dependency.representative();
            let t = tally.entry(rep.clone()).or_default();
            t.present += 1;
            if d.directed {
                let side = usize::from(d.dependency != rep);
                if side == 0 {
                    t.forward += 1;
                } else {
                    t.reverse += 1;
                }
                if let Some(rule) = d.rule {
                    *t.rules[side].entry(rule).or_default() += 1;
                }
            }
        }
    }
    let reaches = |count: usize, of: usize| count as f64 >= threshold * of as f64 - 1e-9;

    let mut kept: Vec<(RelationalDependency, Option<(usize, usize)>)> = Vec::new();
    for (rep, t) in &tally {
        if !reaches(t.present, runs) {
            continue;
        }
        let dir = if reaches(t.forward, t.present) && t.forward > t.reverse {
            Some((0, t.forward))
        } else if reaches(t.reverse, t.present) && t.reverse > t.forward {
            Some((1, t.reverse))
        } else {
            None
        };
        kept.push((rep.clone(), dir));
    }
    // admit directions by decreasing support, skipping any that close a cycle
    let mut order: Vec<usize> = (0..kept.len()).filter(|&i| kept[i].1.is_some()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse(kept[i].1.unwrap().1));
    let mut arcs: BTreeSet<(AttrId, AttrId)> = BTreeSet::new();
    let mut accepted = vec![false; kept.len()];
    for i in order {
        let (rep, dir) = &kept[i];
        let (from, to) = if dir.unwrap().0 == 0 {
            (rep.cause.attr, rep.effect.attr)
        } else {
            (rep.effect.attr, rep.cause.attr)
        };
        if arcs.contains(&(from, to)) || !reaches_attr(&arcs, to, from) {
            arcs.insert((from, to));
            accepted[i] = true;
        }
    }
    let mut rules = RuleCounts::default();
    let mut deps = Vec::with_capacity(kept.len());
    for (i, (rep, dir)) in kept.into_iter().enumerate() {
        if accepted[i] {
            let side = dir.unwrap().0;
            let t = &tally[&rep];
            let rule = t.rules[side]
                .iter()
                .max_by_key(|(r, c)| (**c, std::cmp::Reverse(**r)))
                .map(|(r, _)| *r);
            if let Some(r) = rule {
                rules.bump(r);
            }
            let dependency = if side == 0 { rep } else { reverse_dependency(&rep)? };
            deps.push(LearnedDependency {
                dependency,
                directed: true,
                rule,
            });
        } else {
            deps.push(LearnedDependency {
                dependency: rep,
                directed: false,
                rule: None,
            });
        }
    }
    deps.sort();
    let first = results.into_iter().next().expect("runs >= 1");
    Ok(LearnedPattern {
        schema,
        dependencies: deps,
        sepsets: first.sepsets,
        stats,
        rules,
        conflicts,
    })
}

fn reaches_attr(arcs: &BTreeSet<(AttrId, AttrId)>, from: AttrId, to: AttrId) -> bool {
    let mut stack = vec![from];
    let mut seen = BTreeSet::new();
    while let Some(a) = stack.pop() {
        if a == to {
            return true;
        }
        if seen.insert(a) {
            stack.extend(arcs.iter().filter(|(s, _)| *s == a).map(|(_, t)| *t));
        }
    }
    false
}
