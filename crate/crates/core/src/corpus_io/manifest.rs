use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitectureKind {
    Causal,
    Masked,
}

impl std::fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ArchitectureKind::Causal => "causal",
            ArchitectureKind::Masked => "masked",
        })
    }
}

/// Identity of the model and extraction point a dump came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub model_id: String,
    pub architecture_kind: ArchitectureKind,
    pub embedding_dim: usize,
    /// Extraction point, e.g. `"input_embeddings"` or `"final_mean_pooled"`.
    pub layer: String,
    pub tokenizer_id: String,
    pub created_at: DateTime<Utc>,
}

impl ModelManifest {
    pub fn validate(&self) -> Result<(), String> {
        if self.embedding_dim == 0 {
            return Err("manifest embedding_dim must be positive".into());
        }
        Ok(())
    }
}
