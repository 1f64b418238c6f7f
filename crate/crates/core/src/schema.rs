//! Relational schemas: entity and relationship classes, their attributes and
//! per-participant cardinality constraints.
//!
//! Two representations exist. [`SchemaDoc`] mirrors the JSON document and may
//! be invalid; [`Schema`] is the validated, index-based form used by every
//! algorithm in the crate. Item classes are addressed by [`ItemId`] (entities
//! first, then relationships, in document order) and attribute classes by a
//! schema-global [`AttrId`].

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound accepted by [`random_schema`].
pub const MAX_RANDOM_ENTITIES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Cardinality {
    One,
    Many,
}

impl fmt::Display for Cardinality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cardinality::One => f.write_str("ONE"),
            Cardinality::Many => f.write_str("MANY"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ItemId(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AttrId(pub u16);

impl ItemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl AttrId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// JSON form of an entity class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityClass {
    pub name: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

/// JSON form of a binary relationship class. `card[E] = MANY` means one
/// instance of `E` may take part in many link instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationshipClass {
    pub name: String,
    pub participants: Vec<String>,
    pub card: BTreeMap<String, Cardinality>,
    #[serde(default)]
    pub attributes: Vec<String>,
}

/// The schema document as read from or written to JSON.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaDoc {
    #[serde(default)]
    pub entities: Vec<EntityClass>,
    #[serde(default)]
    pub relationships: Vec<RelationshipClass>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaIssue {
    #[error("invalid identifier {0:?}")]
    InvalidName(String),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("duplicate attribute {attribute:?} on {owner:?}")]
    DuplicateAttribute { owner: String, attribute: String },
    #[error("relationship {0:?} must have exactly two participants")]
    ParticipantCount(String),
    #[error("relationship {0:?}: participants distinct")]
    ParticipantsNotDistinct(String),
    #[error("relationship {relationship:?} names unknown entity {entity:?}")]
    UnknownParticipant { relationship: String, entity: String },
    #[error("relationship {relationship:?} has no cardinality for {entity:?}")]
    MissingCardinality { relationship: String, entity: String },
    #[error("relationship {relationship:?} has cardinality for non-participant {entity:?}")]
    ExtraCardinality { relationship: String, entity: String },
}

/// Outcome of [`validate_schema`]; empty `errors` means the document is valid.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<SchemaIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.errors.is_empty() {
            return f.write_str("ok");
        }
        for (i, e) in self.errors.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("invalid schema: {0}")]
    Invalid(ValidationReport),
    #[error("unknown class {0:?}")]
    UnknownClass(String),
    #[error("{0:?} is not an entity class")]
    NotAnEntity(String),
    #[error("unknown attribute {attribute:?} on {owner:?}")]
    UnknownAttribute { owner: String, attribute: String },
    #[error("number of entities must be in 1..={MAX_RANDOM_ENTITIES}, got {0}")]
    InvalidEntityCount(usize),
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Checks every schema invariant and reports each violation by name.
pub fn validate_schema(doc: &SchemaDoc) -> ValidationReport {
    let mut errors = Vec::new();
    let mut seen = HashSet::new();
    let entity_names: HashSet<&str> = doc.entities.iter().map(|e| e.name.as_str()).collect();

    let check_attrs = |owner: &str, attrs: &[String], errors: &mut Vec<SchemaIssue>| {
        let mut local = HashSet::new();
        for a in attrs {
            if !is_identifier(a) {
                errors.push(SchemaIssue::InvalidName(a.clone()));
            }
            if !local.insert(a.as_str()) {
                errors.push(SchemaIssue::DuplicateAttribute {
                    owner: owner.to_string(),
                    attribute: a.clone(),
                });
            }
        }
    };

    for e in &doc.entities {
        if !is_identifier(&e.name) {
            errors.push(SchemaIssue::InvalidName(e.name.clone()));
        }
        if !seen.insert(e.name.as_str()) {
            errors.push(SchemaIssue::DuplicateClass(e.name.clone()));
        }
        check_attrs(&e.name, &e.attributes, &mut errors);
    }
    for r in &doc.relationships {
        if !is_identifier(&r.name) {
            errors.push(SchemaIssue::InvalidName(r.name.clone()));
        }
        if !seen.insert(r.name.as_str()) {
            errors.push(SchemaIssue::DuplicateClass(r.name.clone()));
        }
        check_attrs(&r.name, &r.attributes, &mut errors);
        if r.participants.len() != 2 {
            errors.push(SchemaIssue::ParticipantCount(r.name.clone()));
        } else if r.participants[0] == r.participants[1] {
            errors.push(SchemaIssue::ParticipantsNotDistinct(r.name.clone()));
        }
        for p in &r.participants {
            if !entity_names.contains(p.as_str()) {
                errors.push(SchemaIssue::UnknownParticipant {
                    relationship: r.name.clone(),
                    entity: p.clone(),
                });
            }
            if !r.card.contains_key(p) {
                errors.push(SchemaIssue::MissingCardinality {
                    relationship: r.name.clone(),
                    entity: p.clone(),
                });
            }
        }
        for k in r.card.keys() {
            if !r.participants.contains(k) {
                errors.push(SchemaIssue::ExtraCardinality {
                    relationship: r.name.clone(),
                    entity: k.clone(),
                });
            }
        }
    }
    ValidationReport { errors }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ItemKind {
    Entity,
    /// `card[i]` belongs to `participants[i]`.
    Relationship {
        participants: [ItemId; 2],
        card: [Cardinality; 2],
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemClass {
    pub name: String,
    pub kind: ItemKind,
    pub attributes: Vec<AttrId>,
}

impl ItemClass {
    pub fn is_entity(&self) -> bool {
        matches!(self.kind, ItemKind::Entity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeClass {
    pub name: String,
    pub owner: ItemId,
}

/// A validated relational schema. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaDoc", into = "SchemaDoc")]
pub struct Schema {
    items: Vec<ItemClass>,
    attrs: Vec<AttributeClass>,
    by_name: HashMap<String, ItemId>,
    num_entities: usize,
}

impl TryFrom<SchemaDoc> for Schema {
    type Error = SchemaError;

    fn try_from(doc: SchemaDoc) -> Result<Self, Self::Error> {
        Schema::from_doc(&doc)
    }
}

impl From<Schema> for SchemaDoc {
    fn from(s: Schema) -> Self {
        s.to_doc()
    }
}

impl Schema {
    pub fn from_doc(doc: &SchemaDoc) -> Result<Self, SchemaError> {
        let report = validate_schema(doc);
        if !report.is_ok() {
            return Err(SchemaError::Invalid(report));
        }
        let mut items = Vec::new();
        let mut attrs = Vec::new();
        let mut by_name = HashMap::new();
        let push_attrs = |owner: ItemId, names: &[String], attrs: &mut Vec<AttributeClass>| {
            names
                .iter()
                .map(|n| {
                    attrs.push(AttributeClass {
                        name: n.clone(),
                        owner,
                    });
                    AttrId((attrs.len() - 1) as u16)
                })
                .collect::<Vec<_>>()
        };
        for e in &doc.entities {
            let id = ItemId(items.len() as u16);
            by_name.insert(e.name.clone(), id);
            let attributes = push_attrs(id, &e.attributes, &mut attrs);
            items.push(ItemClass {
                name: e.name.clone(),
                kind: ItemKind::Entity,
                attributes,
            });
        }
        for r in &doc.relationships {
            let id = ItemId(items.len() as u16);
            by_name.insert(r.name.clone(), id);
            let participants = [by_name[&r.participants[0]], by_name[&r.participants[1]]];
            let card = [r.card[&r.participants[0]], r.card[&r.participants[1]]];
            let attributes = push_attrs(id, &r.attributes, &mut attrs);
            items.push(ItemClass {
                name: r.name.clone(),
                kind: ItemKind::Relationship { participants, card },
                attributes,
            });
        }
        Ok(Schema {
            items,
            attrs,
            by_name,
            num_entities: doc.entities.len(),
        })
    }

    pub fn to_doc(&self) -> SchemaDoc {
        let attr_names =
            |item: &ItemClass| item.attributes.iter().map(|a| self.attrs[a.index()].name.clone()).collect();
        let mut doc = SchemaDoc::default();
        for item in &self.items {
            match &item.kind {
                ItemKind::Entity => doc.entities.push(EntityClass {
                    name: item.name.clone(),
                    attributes: attr_names(item),
                }),
                ItemKind::Relationship { participants, card } => {
                    let p0 = self.name(participants[0]).to_string();
                    let p1 = self.name(participants[1]).to_string();
                    let mut cards = BTreeMap::new();
                    cards.insert(p0.clone(), card[0]);
                    cards.insert(p1.clone(), card[1]);
                    doc.relationships.push(RelationshipClass {
                        name: item.name.clone(),
                        participants: vec![p0, p1],
                        card: cards,
                        attributes: attr_names(item),
                    })
                }
            }
        }
        doc
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_attributes(&self) -> usize {
        self.attrs.len()
    }

    pub fn item_ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.items.len()).map(|i| ItemId(i as u16))
    }

    pub fn attr_ids(&self) -> impl Iterator<Item = AttrId> + '_ {
        (0..self.attrs.len()).map(|i| AttrId(i as u16))
    }

    pub fn item(&self, id: ItemId) -> &ItemClass {
        &self.items[id.index()]
    }

    pub fn attr(&self, id: AttrId) -> &AttributeClass {
        &self.attrs[id.index()]
    }

    pub fn contains(&self, id: ItemId) -> bool {
        id.index() < self.items.len()
    }

    pub fn name(&self, id: ItemId) -> &str {
        &self.items[id.index()].name
    }

    pub fn is_entity(&self, id: ItemId) -> bool {
        self.items[id.index()].is_entity()
    }

    pub fn lookup(&self, name: &str) -> Result<ItemId, SchemaError> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| SchemaError::UnknownClass(name.to_string()))
    }

    pub fn lookup_attr(&self, owner: ItemId, name: &str) -> Result<AttrId, SchemaError> {
        self.item(owner)
            .attributes
            .iter()
            .copied()
            .find(|a| self.attrs[a.index()].name == name)
            .ok_or_else(|| SchemaError::UnknownAttribute {
                owner: self.name(owner).to_string(),
                attribute: name.to_string(),
            })
    }

    /// `Owner.Attribute`, unique across the schema.
    pub fn attr_label(&self, id: AttrId) -> String {
        let a = self.attr(id);
        format!("{}.{}", self.name(a.owner), a.name)
    }

    /// Participants and cardinalities when `id` is a relationship class.
    pub fn relationship(&self, id: ItemId) -> Option<([ItemId; 2], [Cardinality; 2])> {
        match self.items[id.index()].kind {
            ItemKind::Relationship { participants, card } => Some((participants, card)),
            ItemKind::Entity => None,
        }
    }

    /// `card(rel, entity)`; `None` when `entity` does not participate in `rel`.
    pub fn card(&self, rel: ItemId, entity: ItemId) -> Option<Cardinality> {
        let (p, c) = self.relationship(rel)?;
        if p[0] == entity {
            Some(c[0])
        } else if p[1] == entity {
            Some(c[1])
        } else {
            None
        }
    }

    /// Whether `a` and `b` are an entity class and a relationship class it takes part in.
    pub fn participates(&self, a: ItemId, b: ItemId) -> bool {
        self.card(a, b).is_some() || self.card(b, a).is_some()
    }

    /// Relationship classes having `entity` among their participants.
    pub fn relationships_of(&self, entity: ItemId) -> Vec<ItemId> {
        self.item_ids()
            .filter(|&r| self.card(r, entity).is_some())
            .collect()
    }

    /// Name-based form of [`Schema::relationships_of`].
    pub fn relationships_of_named(&self, entity: &str) -> Result<Vec<String>, SchemaError> {
        let id = self.lookup(entity)?;
        if !self.is_entity(id) {
            return Err(SchemaError::NotAnEntity(entity.to_string()));
        }
        Ok(self
            .relationships_of(id)
            .into_iter()
            .map(|r| self.name(r).to_string())
            .collect())
    }
}

/// Parameters of [`random_schema`] beyond the entity count.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemaParams {
    /// Attributes per item class are drawn as `Poisson(lambda) + 1`.
    pub attr_lambda: f64,
}

impl Default for SchemaParams {
    fn default() -> Self {
        SchemaParams { attr_lambda: 1.0 }
    }
}

/// Generates a random tree-shaped schema with `num_entities` entity classes
/// and `num_entities - 1` binary relationship classes.
///
/// Relationship `Rk` joins `E(k+1)` to a uniformly chosen earlier entity, so
/// the entity-relationship graph is a random recursive tree. Every item class,
/// relationships included, gets `Poisson(lambda) + 1` attributes, numbered
/// `X1, X2, ...` across the whole schema.
pub fn random_schema(seed: u64, num_entities: usize, params: SchemaParams) -> Result<Schema, SchemaError> {
    if num_entities == 0 || num_entities > MAX_RANDOM_ENTITIES {
        return Err(SchemaError::InvalidEntityCount(num_entities));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(params.attr_lambda).expect("positive lambda");
    let mut next_attr = 1usize;
    let mut attrs = |rng: &mut ChaCha8Rng| {
        let n = poisson.sample(rng) as usize + 1;
        (0..n)
            .map(|_| {
                let name = format!("X{next_attr}");
                next_attr += 1;
                name
            })
            .collect::<Vec<_>>()
    };
    let mut doc = SchemaDoc::default();
    for i in 0..num_entities {
        doc.entities.push(EntityClass {
            name: format!("E{}", i + 1),
            attributes: attrs(&mut rng),
        });
    }
    for k in 1..num_entities {
        let other = rng.random_range(0..k);
        let a = format!("E{}", other + 1);
        let b = format!("E{}", k + 1);
        let mut card = BTreeMap::new();
        for p in [&a, &b] {
            let c = if rng.random_bool(0.5) {
                Cardinality::Many
            } else {
                Cardinality::One
            };
            card.insert(p.clone(), c);
        }
        doc.relationships.push(RelationshipClass {
            name: format!("R{k}"),
            participants: vec![a, b],
            card,
            attributes: attrs(&mut rng),
        });
    }
    Schema::from_doc(&doc)
}

/// The actor/movie schema used throughout the documentation and tests:
/// `ACTOR.Popularity`, `MOVIE.Success`, and a many-to-many `STARS-IN`.
pub fn movie_schema() -> Schema {
    let doc: SchemaDoc = serde_json::from_str(
        r#"{
            "entities": [
                {"name": "ACTOR", "attributes": ["Popularity"]},
                {"name": "MOVIE", "attributes": ["Success"]}
            ],
            "relationships": [
                {"name": "STARS-IN", "participants": ["ACTOR", "MOVIE"],
                 "card": {"ACTOR": "MANY", "MOVIE": "MANY"}, "attributes": []}
            ]
        }"#,
    )
    .expect("static schema document");
    Schema::from_doc(&doc).expect("static schema is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(name: &str, a: &str, b: &str, ca: Cardinality, cb: Cardinality) -> RelationshipClass {
        let mut card = BTreeMap::new();
        card.insert(a.to_string(), ca);
        card.insert(b.to_string(), cb);
        RelationshipClass {
            name: name.into(),
            participants: vec![a.into(), b.into()],
            card,
            attributes: vec![],
        }
    }

    fn entity(name: &str, attrs: &[&str]) -> EntityClass {
        EntityClass {
            name: name.into(),
            attributes: attrs.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn movie_schema_validates() {
        let doc = movie_schema().to_doc();
        assert!(validate_schema(&doc).is_ok());
        assert_eq!(doc.relationships[0].card["ACTOR"], Cardinality::Many);
    }

    #[test]
    fn self_relationship_rejected() {
        let doc = SchemaDoc {
            entities: vec![entity("ACTOR", &["Popularity"])],
            relationships: vec![rel("KNOWS", "ACTOR", "ACTOR", Cardinality::Many, Cardinality::Many)],
        };
        let report = validate_schema(&doc);
        assert!(!report.is_ok());
        assert!(report.to_string().contains("participants distinct"));
    }

    #[test]
    fn empty_schema_is_valid() {
        assert!(validate_schema(&SchemaDoc::default()).is_ok());
    }

    #[test]
    fn reports_each_offending_name() {
        let doc = SchemaDoc {
            entities: vec![entity("A", &["x", "x"]), entity("A", &[]), entity("9bad", &[])],
            relationships: vec![rel("R", "A", "GHOST", Cardinality::One, Cardinality::One)],
        };
        let errs = validate_schema(&doc).errors;
        assert!(errs.contains(&SchemaIssue::DuplicateAttribute {
            owner: "A".into(),
            attribute: "x".into()
        }));
        assert!(errs.contains(&SchemaIssue::DuplicateClass("A".into())));
        assert!(errs.contains(&SchemaIssue::InvalidName("9bad".into())));
        assert!(errs.contains(&SchemaIssue::UnknownParticipant {
            relationship: "R".into(),
            entity: "GHOST".into()
        }));
    }

    #[test]
    fn relationships_of_entities() {
        let s = movie_schema();
        assert_eq!(s.relationships_of_named("ACTOR").unwrap(), vec!["STARS-IN"]);
        assert_eq!(s.relationships_of_named("MOVIE").unwrap(), vec!["STARS-IN"]);
        assert!(s.relationships_of_named("NOPE").is_err());

        let lonely = Schema::from_doc(&SchemaDoc {
            entities: vec![entity("E", &["X"])],
            relationships: vec![],
        })
        .unwrap();
        assert!(lonely.relationships_of_named("E").unwrap().is_empty());
    }

    #[test]
    fn random_schema_shapes() {
        let one = random_schema(7, 1, SchemaParams::default()).unwrap();
        assert_eq!(one.num_entities(), 1);
        assert_eq!(one.num_items(), 1);
        assert!(one.num_attributes() >= 1);

        let four = random_schema(7, 4, SchemaParams::default()).unwrap();
        assert_eq!(four.num_entities(), 4);
        assert_eq!(four.num_items(), 7);
        assert!(random_schema(1, 0, SchemaParams::default()).is_err());
    }

    #[test]
    fn random_schema_is_deterministic() {
        let a = random_schema(99, 3, SchemaParams::default()).unwrap();
        let b = random_schema(99, 3, SchemaParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let s = random_schema(3, 4, SchemaParams::default()).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Schema = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }
}
