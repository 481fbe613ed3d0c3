//! Concept vocabularies and name normalization.
//!
//! A [`Concept`] is a named unit from one side of the linking task: the query
//! side (for example diagnosis names pulled from an EHR) or the target side
//! (the concept names of a knowledge graph). Only names are used; codes,
//! relations and context fields are not modeled.

mod io;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use io::{load_concepts, read_concepts, write_concepts, LoadWarning};

/// Reserved identifier for the "no match" entity. Concept files may not use it.
pub const NIL_ID: &str = "NIL";

#[derive(Debug, thiserror::Error)]
pub enum ConceptError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: missing or malformed header, expected `id<TAB>name`")]
    Header { line: usize },
    #[error("line {line}: malformed row: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate concept id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: `{NIL_ID}` is reserved and cannot be used as a concept id")]
    ReservedId { line: usize },
}

/// Which side of the linking task a concept belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    /// Concepts to be linked (EHR side).
    Query,
    /// Concepts linked to (knowledge-graph side).
    Target,
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Side::Query => f.write_str("query"),
            Side::Target => f.write_str("target"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Concept {
    pub id: String,
    pub side: Side,
    pub raw_name: String,
    pub norm_name: String,
}

impl Concept {
    pub fn new(id: impl Into<String>, side: Side, raw_name: impl Into<String>) -> Self {
        let raw_name = raw_name.into();
        let norm_name = normalize_name(&raw_name);
        Concept {
            id: id.into(),
            side,
            raw_name,
            norm_name,
        }
    }

    /// The name shown to the language model: the normalized name, or the
    /// trimmed raw name when normalization leaves nothing.
    pub fn prompt_name(&self) -> &str {
        if self.norm_name.is_empty() {
            self.raw_name.trim()
        } else {
            &self.norm_name
        }
    }
}

/// Lowercases, maps every punctuation character to a space, collapses runs of
/// whitespace and trims.
///
/// "Punctuation" is any character that is neither alphanumeric nor whitespace.
/// Accents are left as they are.
///
/// ```
/// use conlink::concepts::normalize_name;
///
/// assert_eq!(normalize_name("Ellis-Van Creveld syndrome"), "ellis van creveld syndrome");
/// assert_eq!(normalize_name("  Late syphilis,  unspecified "), "late syphilis unspecified");
/// assert_eq!(normalize_name("***"), "");
/// ```
pub fn normalize_name(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    let mut pending_space = false;
    // Lowercasing can emit combining marks (e.g. for 'İ'), so the class test
    // runs on the lowered characters.
    for ch in raw.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(ch);
        } else {
            pending_space = true;
        }
    }
    out
}

/// An ordered, id-indexed collection of concepts from one side.
#[derive(Debug, Clone)]
pub struct ConceptSet {
    side: Side,
    concepts: Vec<Concept>,
    index: HashMap<String, usize>,
}

impl ConceptSet {
    pub fn new(side: Side) -> Self {
        ConceptSet {
            side,
            concepts: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Builds a set from `(id, raw name)` pairs, failing on the first duplicate
    /// or reserved id. Line numbers in errors are 1-based positions in `items`.
    pub fn from_pairs<I, A, B>(side: Side, items: I) -> Result<Self, ConceptError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: Into<String>,
        B: Into<String>,
    {
        let mut set = ConceptSet::new(side);
        for (pos, (id, name)) in items.into_iter().enumerate() {
            set.push(Concept::new(id, side, name)).map_err(|e| e.at_line(pos + 1))?;
        }
        Ok(set)
    }

    pub(crate) fn push(&mut self, concept: Concept) -> Result<(), ConceptError> {
        if concept.id == NIL_ID {
            return Err(ConceptError::ReservedId { line: 0 });
        }
        if self.index.contains_key(&concept.id) {
            return Err(ConceptError::DuplicateId {
                line: 0,
                id: concept.id,
            });
        }
        debug_assert_eq!(concept.side, self.side);
        self.index.insert(concept.id.clone(), self.concepts.len());
        self.concepts.push(concept);
        Ok(())
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Concept> {
        self.index.get(id).map(|&i| &self.concepts[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Concept> {
        self.concepts.iter()
    }

    pub fn as_slice(&self) -> &[Concept] {
        &self.concepts
    }

    /// Keeps the concepts for which `keep` returns true, preserving order.
    pub fn filtered(&self, mut keep: impl FnMut(&Concept) -> bool) -> ConceptSet {
        let mut out = ConceptSet::new(self.side);
        for c in self.concepts.iter().filter(|c| keep(c)) {
            // ids are already unique
            out.push(c.clone()).expect("subset of a valid set");
        }
        out
    }
}

impl<'a> IntoIterator for &'a ConceptSet {
    type Item = &'a Concept;
    type IntoIter = std::slice::Iter<'a, Concept>;

    fn into_iter(self) -> Self::IntoIter {
        self.concepts.iter()
    }
}

impl ConceptError {
    fn at_line(self, line: usize) -> Self {
        match self {
            ConceptError::DuplicateId { id, .. } => ConceptError::DuplicateId { line, id },
            ConceptError::ReservedId { .. } => ConceptError::ReservedId { line },
            other => other,
        }
    }
}
