//! Relational path algebra.
//!
//! A path is an alternating walk over entity and relationship classes. The
//! validity rules are:
//!
//! * classes alternate between entities and relationships;
//! * each consecutive entity/relationship pair participates;
//! * `[R, E, R]` is allowed only when `card(R, E) = MANY`;
//! * `[E, R, E']` requires `E != E'`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Cardinality, ItemId, Schema, SchemaError};

#[derive(Debug, Error)]
pub enum PathError {
    #[error("item id {0} is not in the schema")]
    UnknownItem(u16),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("path {0} is not valid under the schema")]
    Invalid(String),
    #[error("cannot extend: {orig} ends at {orig_end} but {ext} starts at {ext_start}")]
    JoinMismatch {
        orig: String,
        ext: String,
        orig_end: String,
        ext_start: String,
    },
    #[error("malformed path text {0:?}")]
    Syntax(String),
    #[error("empty path")]
    Empty,
}

/// Ordered, non-empty sequence of item classes. The first item is the perspective.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationalPath(Vec<ItemId>);

impl RelationalPath {
    pub fn new(items: Vec<ItemId>) -> Result<Self, PathError> {
        if items.is_empty() {
            return Err(PathError::Empty);
        }
        Ok(RelationalPath(items))
    }

    pub fn singleton(item: ItemId) -> Self {
        RelationalPath(vec![item])
    }

    pub fn items(&self) -> &[ItemId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hops(&self) -> usize {
        self.0.len() - 1
    }

    pub fn is_singleton(&self) -> bool {
        self.0.len() == 1
    }

    pub fn perspective(&self) -> ItemId {
        self.0[0]
    }

    pub fn terminal(&self) -> ItemId {
        *self.0.last().expect("paths are non-empty")
    }

    pub fn reverse(&self) -> RelationalPath {
        let mut items = self.0.clone();
        items.reverse();
        RelationalPath(items)
    }

    /// Renders with class names, e.g. `[ACTOR, STARS-IN, MOVIE]`.
    pub fn display<'a>(&'a self, schema: &'a Schema) -> PathDisplay<'a> {
        PathDisplay { path: self, schema }
    }
}

pub struct PathDisplay<'a> {
    path: &'a RelationalPath,
    schema: &'a Schema,
}

impl fmt::Display for PathDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, item) in self.path.items().iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(self.schema.name(*item))?;
        }
        f.write_str("]")
    }
}

/// Parses `"[ACTOR, STARS-IN, MOVIE]"`.
pub fn parse_path(schema: &Schema, text: &str) -> Result<RelationalPath, PathError> {
    let t = text.trim();
    let inner = t
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| PathError::Syntax(text.to_string()))?;
    let items = inner
        .split(',')
        .map(|n| n.trim())
        .map(|n| {
            if n.is_empty() {
                Err(PathError::Syntax(text.to_string()))
            } else {
                Ok(schema.lookup(n)?)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    RelationalPath::new(items)
}

fn check_items(items: &[ItemId], schema: &Schema) -> Result<(), PathError> {
    match items.iter().find(|i| !schema.contains(**i)) {
        Some(bad) => Err(PathError::UnknownItem(bad.0)),
        None => Ok(()),
    }
}

/// Validity over a raw item slice; callers guarantee the ids exist.
pub(crate) fn valid_items(items: &[ItemId], schema: &Schema) -> bool {
    if items.is_empty() {
        return false;
    }
    for w in items.windows(2) {
        if schema.is_entity(w[0]) == schema.is_entity(w[1]) || !schema.participates(w[0], w[1]) {
            return false;
        }
    }
    for w in items.windows(3) {
        if w[0] != w[2] {
            continue;
        }
        if schema.is_entity(w[1]) {
            // [R, E, R]
            if schema.card(w[0], w[1]) != Some(Cardinality::Many) {
                return false;
            }
        } else {
            // [E, R, E] with a binary relationship returns to the same class
            return false;
        }
    }
    true
}

pub fn is_valid(path: &RelationalPath, schema: &Schema) -> Result<bool, PathError> {
    check_items(path.items(), schema)?;
    Ok(valid_items(path.items(), schema))
}

pub(crate) fn cardinality_items(items: &[ItemId], schema: &Schema) -> Cardinality {
    let many = items.windows(2).any(|w| {
        schema.is_entity(w[0]) && schema.card(w[1], w[0]) == Some(Cardinality::Many)
    });
    if many {
        Cardinality::Many
    } else {
        Cardinality::One
    }
}

/// MANY when some entity-to-relationship step can fan out.
pub fn cardinality(path: &RelationalPath, schema: &Schema) -> Result<Cardinality, PathError> {
    if !is_valid(path, schema)? {
        return Err(PathError::Invalid(path.display(schema).to_string()));
    }
    Ok(cardinality_items(path.items(), schema))
}

/// Every valid path from `perspective` with at most `hops` hops, ordered by
/// length and then by item ids.
pub fn enumerate_paths(schema: &Schema, perspective: ItemId, hops: usize) -> Result<Vec<RelationalPath>, PathError> {
    check_items(&[perspective], schema)?;
    let mut out = vec![RelationalPath::singleton(perspective)];
    let mut frontier = vec![vec![perspective]];
    for _ in 0..hops {
        let mut next = Vec::new();
        for p in &frontier {
            let last = *p.last().unwrap();
            for cand in schema.item_ids() {
                if schema.is_entity(cand) == schema.is_entity(last) || !schema.participates(last, cand) {
                    continue;
                }
                let mut q = p.clone();
                q.push(cand);
                let n = q.len();
                if n >= 3 && !valid_items(&q[n - 3..], schema) {
                    continue;
                }
                next.push(q);
            }
        }
        out.extend(next.iter().cloned().map(RelationalPath));
        frontier = next;
    }
    Ok(out)
}

/// Name-based form of [`enumerate_paths`].
pub fn enumerate_paths_named(schema: &Schema, perspective: &str, hops: usize) -> Result<Vec<RelationalPath>, PathError> {
    enumerate_paths(schema, schema.lookup(perspective)?, hops)
}

/// All valid compositions of `orig` and `ext` over pivot overlaps.
///
/// For each pivot `m >= 1` where the last `m` items of `orig`, read backwards,
/// equal the first `m` items of `ext`, the candidate is `orig` minus its last
/// `m` items followed by `ext` minus its first `m - 1` items. Candidates that
/// are invalid or longer than `max_len` are dropped. The result is sorted
/// and free of duplicates.
pub fn extend(
    orig: &RelationalPath,
    ext: &RelationalPath,
    schema: &Schema,
    max_len: usize,
) -> Result<Vec<RelationalPath>, PathError> {
    check_items(orig.items(), schema)?;
    check_items(ext.items(), schema)?;
    if orig.terminal() != ext.perspective() {
        return Err(PathError::JoinMismatch {
            orig: orig.display(schema).to_string(),
            ext: ext.display(schema).to_string(),
            orig_end: schema.name(orig.terminal()).to_string(),
            ext_start: schema.name(ext.perspective()).to_string(),
        });
    }
    Ok(extend_unchecked(orig.items(), ext.items(), schema, max_len))
}

pub(crate) fn extend_unchecked(
    a: &[ItemId],
    b: &[ItemId],
    schema: &Schema,
    max_len: usize,
) -> Vec<RelationalPath> {
    let mut out = BTreeSet::new();
    let n = a.len();
    for m in 1..=n.min(b.len()) {
        // last m of a reversed == first m of b
        if (0..m).any(|i| a[n - 1 - i] != b[i]) {
            break;
        }
        let len = (n - m) + (b.len() - (m - 1));
        if len > max_len {
            continue;
        }
        let mut cand = Vec::with_capacity(len);
        cand.extend_from_slice(&a[..n - m]);
        cand.extend_from_slice(&b[m - 1..]);
        if valid_items(&cand, schema) {
            out.insert(RelationalPath(cand));
        }
    }
    out.into_iter().collect()
}
