//! On-disk layout:
//!
//! ```text
//! <store>/catalog.json          registered databases
//! <store>/selection.vidx        schema embeddings
//! <store>/values/<db_id>/       value memory of one database
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use relmem_core::selection::extend_index;
use relmem_core::{
    load_index, write_if_changed, Catalog, EmbeddingProvider, Pipeline, ValueMemories,
    ValueMemory, ValueMemoryConfig, VectorIndex,
};

use crate::config::CliConfig;
use crate::error::CliError;

pub struct Store {
    root: PathBuf,
}

/// What `index build` did to one artifact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub artifact: String,
    pub files_written: usize,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn catalog_path(&self) -> PathBuf {
        self.root.join("catalog.json")
    }

    pub fn selection_path(&self) -> PathBuf {
        self.root.join("selection.vidx")
    }

    pub fn values_dir(&self, db_id: &str) -> PathBuf {
        self.root.join("values").join(db_id)
    }

    /// The registered catalog; empty when nothing has been added yet.
    pub fn catalog(&self) -> Result<Catalog, CliError> {
        let path = self.catalog_path();
        if !path.exists() {
            return Ok(Catalog::new());
        }
        Catalog::load_manifest(&path).map_err(|e| CliError::new("catalog", e.to_string(), crate::error::EXIT_FAILURE))
    }

    pub fn save_catalog(&self, catalog: &Catalog) -> Result<(), CliError> {
        fs::create_dir_all(&self.root).map_err(|e| CliError::io(format!("{}: {e}", self.root.display())))?;
        write_if_changed(&self.catalog_path(), &catalog.manifest_bytes())
            .map(|_| ())
            .map_err(|e| CliError::io(format!("{}: {e}", self.catalog_path().display())))
    }

    fn nonempty_catalog(&self) -> Result<Catalog, CliError> {
        let catalog = self.catalog()?;
        if catalog.is_empty() {
            return Err(CliError::config(format!(
                "no databases registered in {}; run `relmem catalog add` first",
                self.root.display()
            )));
        }
        Ok(catalog)
    }

    /// Embeds schemas the index does not have yet and drops records of
    /// databases no longer registered. Writes only if the bytes change.
    pub fn build_selection(&self, embedder: &dyn EmbeddingProvider) -> Result<BuildReport, CliError> {
        let catalog = self.nonempty_catalog()?;
        let existing = load_index(self.selection_path())
            .ok()
            .filter(|i| i.dim() == embedder.dimension() && i.records().all(|(id, _)| catalog.get(id).is_some()));
        let mut index = match existing {
            Some(i) => i,
            None => VectorIndex::new(embedder.dimension()).map_err(|e| CliError::data(e.to_string()))?,
        };
        extend_index(&mut index, &catalog, embedder).map_err(|e| CliError::new("embedding", e.to_string(), crate::error::EXIT_FAILURE))?;
        let written = write_if_changed(&self.selection_path(), &index.to_bytes())
            .map_err(|e| CliError::io(format!("{}: {e}", self.selection_path().display())))?;
        Ok(BuildReport {
            artifact: "selection index".into(),
            files_written: usize::from(written),
        })
    }

    pub fn build_values(
        &self,
        embedder: &dyn EmbeddingProvider,
        config: &ValueMemoryConfig,
    ) -> Result<Vec<BuildReport>, CliError> {
        let catalog = self.nonempty_catalog()?;
        let mut out = Vec::new();
        for entry in catalog.entries() {
            let memory = ValueMemory::build(entry, embedder, config)
                .map_err(|e| CliError::new("value_memory", e.to_string(), crate::error::EXIT_FAILURE))?;
            let written = memory
                .save(self.values_dir(&entry.id))
                .map_err(|e| CliError::new("value_memory", e.to_string(), crate::error::EXIT_FAILURE))?;
            out.push(BuildReport {
                artifact: format!("value memory {}", entry.id),
                files_written: written,
            });
        }
        Ok(out)
    }

    /// Loads everything a pipeline needs. A missing or stale artifact is a
    /// configuration error telling the user to rebuild.
    pub fn pipeline(&self, config: &CliConfig) -> Result<Pipeline, CliError> {
        let catalog = self.nonempty_catalog()?;
        let embedder = config.embedder();
        let stale = |what: &str| CliError::config(format!("{what}; run `relmem index build`"));
        let index = load_index(self.selection_path()).map_err(|e| stale(&format!("selection index unavailable ({e})")))?;
        if index.dim() != embedder.dimension() {
            return Err(stale(&format!(
                "selection index has dimension {} but the embedder produces {}",
                index.dim(),
                embedder.dimension()
            )));
        }
        if index.len() != catalog.len() || catalog.ids().any(|id| !index.contains(id)) {
            return Err(stale("selection index does not match the catalog"));
        }
        let mut values: ValueMemories = HashMap::new();
        if config.pipeline.use_value_memory {
            for id in catalog.ids() {
                let memory = ValueMemory::load(self.values_dir(id))
                    .map_err(|e| stale(&format!("value memory for `{id}` unavailable ({e})")))?;
                values.insert(id.to_string(), memory);
            }
        }
        Pipeline::new(
            Arc::new(catalog),
            Arc::new(index),
            Arc::new(values),
            embedder,
            config.completion_provider()?,
            config.pipeline.clone(),
        )
        .map_err(CliError::config)
    }
}
