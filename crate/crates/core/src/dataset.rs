//! A benchmark on disk: one directory with fixed file names.
//!
//! ```text
//! queries.tsv            id<TAB>name
//! targets.tsv            id<TAB>name
//! query_embeddings.tsv   id<TAB>v0<TAB>v1...
//! target_embeddings.tsv
//! gold.tsv               optional, query_id<TAB>target_id|NIL
//! ```

use std::path::{Path, PathBuf};

use crate::concepts::{load_concepts, write_concepts, ConceptError, ConceptSet, LoadWarning, Side};
use crate::embedding::{load_embeddings, write_embeddings, EmbeddingError, EmbeddingStore};
use crate::eval::{EvalError, GoldLinks, SyntheticData};

pub const QUERIES: &str = "queries.tsv";
pub const TARGETS: &str = "targets.tsv";
pub const QUERY_EMBEDDINGS: &str = "query_embeddings.tsv";
pub const TARGET_EMBEDDINGS: &str = "target_embeddings.tsv";
pub const GOLD: &str = "gold.tsv";
pub const MOCK_SCRIPT: &str = "mock_script.json";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{0}: no such file")]
    Missing(PathBuf),
    #[error(transparent)]
    Concepts(#[from] ConceptError),
    #[error("{path}: {source}")]
    Embeddings {
        path: PathBuf,
        #[source]
        source: EmbeddingError,
    },
    #[error(transparent)]
    Gold(#[from] EvalError),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub queries: ConceptSet,
    pub targets: ConceptSet,
    pub query_vectors: EmbeddingStore,
    pub target_vectors: EmbeddingStore,
    pub gold: Option<GoldLinks>,
    /// Rows skipped while loading the concept files.
    pub warnings: Vec<LoadWarning>,
}

fn existing(dir: &Path, name: &str) -> Result<PathBuf, DatasetError> {
    let p = dir.join(name);
    if p.is_file() {
        Ok(p)
    } else {
        Err(DatasetError::Missing(p))
    }
}

impl Dataset {
    /// Loads every file, checks that the embeddings cover the concepts and
    /// that gold ids resolve.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DatasetError> {
        let dir = dir.as_ref();
        let (queries, mut warnings) = load_concepts(existing(dir, QUERIES)?, Side::Query)?;
        let (targets, w) = load_concepts(existing(dir, TARGETS)?, Side::Target)?;
        warnings.extend(w);
        let emb = |name: &str, set: &ConceptSet| -> Result<EmbeddingStore, DatasetError> {
            let path = existing(dir, name)?;
            load_embeddings(&path, set).map_err(|source| DatasetError::Embeddings { path, source })
        };
        let query_vectors = emb(QUERY_EMBEDDINGS, &queries)?;
        let target_vectors = emb(TARGET_EMBEDDINGS, &targets)?;
        let gold_path = dir.join(GOLD);
        let gold = if gold_path.is_file() {
            let g = GoldLinks::load(&gold_path)?;
            g.validate(&queries, &targets)?;
            Some(g)
        } else {
            None
        };
        Ok(Dataset {
            queries,
            targets,
            query_vectors,
            target_vectors,
            gold,
            warnings,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|source| {
            DatasetError::Gold(EvalError::Io {
                path: dir.display().to_string(),
                source,
            })
        })?;
        write_concepts(dir.join(QUERIES), &self.queries)?;
        write_concepts(dir.join(TARGETS), &self.targets)?;
        for (name, store) in [
            (QUERY_EMBEDDINGS, &self.query_vectors),
            (TARGET_EMBEDDINGS, &self.target_vectors),
        ] {
            let path = dir.join(name);
            write_embeddings(&path, store).map_err(|source| DatasetError::Embeddings { path, source })?;
        }
        if let Some(g) = &self.gold {
            g.write(dir.join(GOLD))?;
        }
        Ok(())
    }
}

impl From<SyntheticData> for Dataset {
    fn from(d: SyntheticData) -> Self {
        Dataset {
            queries: d.queries,
            targets: d.targets,
            query_vectors: d.query_vectors,
            target_vectors: d.target_vectors,
            gold: Some(d.gold),
            warnings: Vec::new(),
        }
    }
}
