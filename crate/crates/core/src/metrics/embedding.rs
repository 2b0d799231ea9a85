use std::collections::HashMap;
use std::io::BufRead;

use crate::error::{Error, Result};
use crate::ingest::Loaded;

/// What a token without a vector contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    /// Counts as a zero vector: it still occupies a slot in token sets but
    /// never matches anything by cosine.
    #[default]
    ZeroVector,
    /// Dropped before scoring.
    SkipToken,
}

/// Immutable token -> vector lookup. Tokens are stored lowercased.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    pub oov_policy: OovPolicy,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: HashMap::new(),
            oov_policy: OovPolicy::default(),
        }
    }

    /// Inserts or replaces; returns true when the token was already present.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::invalid(format!(
                "vector for `{token}` has length {}, table dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if !vector.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(format!("vector for `{token}` is not finite")));
        }
        Ok(self.vectors.insert(token.to_lowercase(), vector).is_some())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Sorted vocabulary.
    pub fn tokens(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.vectors.keys().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

/// Reads `token v1 ... vD` lines separated by single spaces. The first
/// non-empty line fixes `D`. Duplicate tokens: the last line wins and a
/// warning is recorded.
pub fn load_embeddings<R: BufRead>(source: R) -> Result<Loaded<EmbeddingTable>> {
    let mut table: Option<EmbeddingTable> = None;
    let mut warnings = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(' ');
        let token = fields.next().unwrap_or_default();
        if token.is_empty() {
            return Err(Error::EmbeddingFormat {
                line: line_no,
                message: "line starts with a separator".into(),
            });
        }
        let values: Vec<f64> = fields
            .map(|f| {
                f.parse::<f64>().map_err(|e| Error::EmbeddingFormat {
                    line: line_no,
                    message: format!("bad component `{f}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(Error::EmbeddingFormat {
                line: line_no,
                message: format!("token `{token}` has no components"),
            });
        }
        let t = table.get_or_insert_with(|| EmbeddingTable::new(values.len()));
        if values.len() != t.dim() {
            return Err(Error::EmbeddingFormat {
                line: line_no,
                message: format!("expected {} components, found {}", t.dim(), values.len()),
            });
        }
        let replaced = t.insert(token, values).map_err(|e| Error::EmbeddingFormat {
            line: line_no,
            message: e.to_string(),
        })?;
        if replaced {
            warnings.push(format!("line {line_no}: duplicate token `{token}`, keeping the last"));
        }
    }
    let table = table.ok_or_else(|| Error::EmbeddingFormat {
        line: 0,
        message: "no vectors found".into(),
    })?;
    let loaded = Loaded::new(table, warnings);
    loaded.log_warnings();
    Ok(loaded)
}
