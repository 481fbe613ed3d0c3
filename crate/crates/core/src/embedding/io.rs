use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EmbeddingError, EmbeddingStore};
use crate::concepts::ConceptSet;

/// Loads an embedding file (TSV, header `id<TAB>v0<TAB>v1...`) and checks it
/// covers every concept in `concepts`.
///
/// Rows for ids outside `concepts` are skipped. The returned store follows the
/// order of `concepts`.
pub fn load_embeddings(path: impl AsRef<Path>, concepts: &ConceptSet) -> Result<EmbeddingStore, EmbeddingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_embeddings(&text, concepts)
}

pub fn read_embeddings(text: &str, concepts: &ConceptSet) -> Result<EmbeddingStore, EmbeddingError> {
    let mut lines = text.split('\n').enumerate().map(|(i, l)| (i + 1, l));
    let header = lines.next().map(|(_, l)| l.trim_end_matches('\r')).unwrap_or_default();
    let dim = parse_header(header)?;

    let mut loaded = EmbeddingStore::new(concepts.side(), dim);
    let mut seen = HashSet::new();
    let mut row = Vec::with_capacity(dim);
    for (line, raw) in lines {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let mut fields = raw.split('\t');
        let id = fields.next().unwrap_or_default();
        if id.is_empty() {
            return Err(EmbeddingError::Malformed {
                line,
                reason: "empty id".into(),
            });
        }
        if !seen.insert(id.to_string()) {
            return Err(EmbeddingError::Malformed {
                line,
                reason: format!("duplicate id `{id}`"),
            });
        }
        row.clear();
        for (column, field) in fields.enumerate() {
            let x: f64 = field.trim().parse().map_err(|_| EmbeddingError::Malformed {
                line,
                reason: format!("column {column}: `{field}` is not a number"),
            })?;
            if !x.is_finite() {
                return Err(EmbeddingError::NonFinite { line, column });
            }
            row.push(x);
        }
        if row.len() != dim {
            return Err(EmbeddingError::Malformed {
                line,
                reason: format!("expected {dim} values, found {}", row.len()),
            });
        }
        if !concepts.contains(id) {
            continue;
        }
        loaded.insert(id, &row).map_err(|e| match e {
            EmbeddingError::ZeroNorm(id) => EmbeddingError::Malformed {
                line,
                reason: format!("vector for `{id}` has zero norm"),
            },
            other => other,
        })?;
    }
    loaded.check_covers(concepts)?;
    loaded.restricted_to(concepts)
}

fn parse_header(header: &str) -> Result<usize, EmbeddingError> {
    let mut cols = header.split('\t');
    if cols.next() != Some("id") {
        return Err(EmbeddingError::Header("first column must be `id`".into()));
    }
    let mut dim = 0;
    for (i, col) in cols.enumerate() {
        if col != format!("v{i}") {
            return Err(EmbeddingError::Header(format!(
                "column {} should be `v{i}`, found `{col}`",
                i + 1
            )));
        }
        dim += 1;
    }
    if dim == 0 {
        return Err(EmbeddingError::Header("no vector columns".into()));
    }
    Ok(dim)
}

/// Writes the store in the embedding file format, rows in store order.
///
/// Values use the shortest decimal form that reads back to the same `f64`.
pub fn write_embeddings(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<(), EmbeddingError> {
    let path = path.as_ref();
    let mut out = String::from("id");
    for i in 0..store.dim() {
        write!(out, "\tv{i}").unwrap();
    }
    out.push('\n');
    for id in store.ids() {
        out.push_str(id);
        for x in store.vector(id).expect("id from store") {
            write!(out, "\t{x:?}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|source| EmbeddingError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::{ConceptSet, Side};

    fn concepts(ids: &[&str]) -> ConceptSet {
        ConceptSet::from_pairs(Side::Target, ids.iter().map(|id| (*id, *id))).unwrap()
    }

    #[test]
    fn loads_complete_file() {
        let text = "id\tv0\tv1\tv2\tv3\na\t1\t0\t0\t0\nb\t0.5\t0.5\t-1e-3\t2\n";
        let store = read_embeddings(text, &concepts(&["b", "a"])).unwrap();
        assert_eq!(store.dim(), 4);
        assert_eq!(store.ids(), &["b".to_string(), "a".to_string()]);
        assert_eq!(store.vector("b").unwrap(), &[0.5, 0.5, -1e-3, 2.0]);
    }

    #[test]
    fn missing_id_is_named() {
        let text = "id\tv0\na\t1\n";
        match read_embeddings(text, &concepts(&["a", "zz"])).unwrap_err() {
            EmbeddingError::Missing(id) => assert_eq!(id, "zz"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_reports_line() {
        let text = "id\tv0\tv1\na\t1\t2\nb\t3\tNaN\n";
        match read_embeddings(text, &concepts(&["a", "b"])).unwrap_err() {
            EmbeddingError::NonFinite { line, column } => assert_eq!((line, column), (3, 1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn inconsistent_width_is_rejected() {
        let text = "id\tv0\tv1\na\t1\t2\nb\t3\n";
        assert!(matches!(
            read_embeddings(text, &concepts(&["a", "b"])),
            Err(EmbeddingError::Malformed { line: 3, .. })
        ));
        assert!(matches!(
            read_embeddings("id\tx0\na\t1\n", &concepts(&["a"])),
            Err(EmbeddingError::Header(_))
        ));
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.tsv");
        let store = EmbeddingStore::from_rows(
            Side::Target,
            3,
            [("a", vec![0.1, 1.0 / 3.0, -2.5e-17]), ("b", vec![1e100, 2.0, 3.0])],
        )
        .unwrap();
        write_embeddings(&path, &store).unwrap();
        let back = load_embeddings(&path, &concepts(&["a", "b"])).unwrap();
        assert_eq!(back.vector("a"), store.vector("a"));
        assert_eq!(back.vector("b"), store.vector("b"));
    }
}
