use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Concept, ConceptError, ConceptSet, Side};

/// A row that loaded but deserves attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub id: String,
    pub message: String,
}

/// Loads a concept file: UTF-8 TSV with header `id<TAB>name`.
///
/// Concepts whose names normalize to the empty string are kept and reported
/// in the returned warning list.
pub fn load_concepts(path: impl AsRef<Path>, side: Side) -> Result<(ConceptSet, Vec<LoadWarning>), ConceptError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConceptError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_concepts(&text, side)
}

/// Parses concept-file text. See [`load_concepts`].
pub fn read_concepts(text: &str, side: Side) -> Result<(ConceptSet, Vec<LoadWarning>), ConceptError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let header = lines.next().map(|(_, l)| l.trim_end_matches('\r'));
    if header != Some("id\tname") {
        return Err(ConceptError::Header { line: 1 });
    }

    let mut set = ConceptSet::new(side);
    let mut warnings = Vec::new();
    for (line, raw) in lines {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let (id, name) = match raw.split_once('\t') {
            Some((id, name)) if !name.contains('\t') => (id, name),
            Some(_) => {
                return Err(ConceptError::Malformed {
                    line,
                    reason: "expected 2 tab-separated fields, found more".into(),
                })
            }
            None => {
                return Err(ConceptError::Malformed {
                    line,
                    reason: "expected 2 tab-separated fields, found 1".into(),
                })
            }
        };
        if id.is_empty() {
            return Err(ConceptError::Malformed {
                line,
                reason: "empty id".into(),
            });
        }
        let concept = Concept::new(id, side, name);
        if concept.norm_name.is_empty() {
            warnings.push(LoadWarning {
                line,
                id: concept.id.clone(),
                message: format!("name {name:?} normalizes to the empty string"),
            });
        }
        set.push(concept).map_err(|e| e.at_line(line))?;
    }
    Ok((set, warnings))
}

/// Writes `set` in the concept file format (raw names, not normalized ones).
pub fn write_concepts(path: impl AsRef<Path>, set: &ConceptSet) -> Result<(), ConceptError> {
    let path = path.as_ref();
    let io_err = |source| ConceptError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = String::from("id\tname\n");
    for c in set {
        out.push_str(&c.id);
        out.push('\t');
        out.push_str(&c.raw_name);
        out.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(out.as_bytes()).map_err(io_err)
}
