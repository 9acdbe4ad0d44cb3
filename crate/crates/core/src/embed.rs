//! Label embeddings for class names and descriptions.
//!
//! [`HashingEmbedder`] is the built-in provider: signed feature hashing of
//! lowercase alphanumeric tokens with FNV-1a 64. Embeddings computed elsewhere
//! can be ingested with [`LabelEmbedding::from_rows`] or [`read_embeddings`].

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use log::warn;

use crate::dataset::{l2_norm, ClassMeta};
use crate::error::{Error, Result};
use crate::io::{fmt_float, parse_f64, parse_usize, read_table, write_text, Header};

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Which text field of a class is embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EmbeddingMode {
    Name,
    Description,
}

impl fmt::Display for EmbeddingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbeddingMode::Name => "name",
            EmbeddingMode::Description => "description",
        })
    }
}

impl FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "name" => Ok(EmbeddingMode::Name),
            "description" => Ok(EmbeddingMode::Description),
            other => Err(Error::Config(format!("unknown embedding mode {other:?}"))),
        }
    }
}

/// One unit-norm row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelEmbedding {
    rows: Vec<Vec<f64>>,
    mode: EmbeddingMode,
    /// Rows that came from empty text and hold a fallback basis vector.
    fallback: Vec<bool>,
}

impl LabelEmbedding {
    /// Ingests externally computed vectors. Rows are L2-normalized; zero rows are rejected.
    pub fn from_rows(rows: Vec<Vec<f64>>, mode: EmbeddingMode) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if dim == 0 {
            return Err(Error::Validation("embedding has no rows or zero width".into()));
        }
        let mut out = Vec::with_capacity(rows.len());
        for (i, mut row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Dimension(format!(
                    "embedding row {i} has width {}, expected {dim}",
                    row.len()
                )));
            }
            let norm = l2_norm(&row);
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Validation(format!("embedding row {i} is zero or non-finite")));
            }
            row.iter_mut().for_each(|x| *x /= norm);
            out.push(row);
        }
        let n = out.len();
        Ok(Self {
            rows: out,
            mode,
            fallback: vec![false; n],
        })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn mode(&self) -> EmbeddingMode {
        self.mode
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn is_fallback(&self, class: usize) -> bool {
        self.fallback[class]
    }
}

/// Produces one embedding row per class.
pub trait LabelEmbedder {
    fn embed(&self, classes: &[ClassMeta], mode: EmbeddingMode) -> Result<LabelEmbedding>;
}

/// Signed FNV-1a feature hashing.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config(format!("embedding dimension must be >= 2, got {dim}")));
        }
        Ok(Self { dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Bucket index and sign for one token.
    pub fn slot(&self, token: &str) -> (usize, f64) {
        let h = fnv1a64(token.as_bytes());
        let bucket = (h % self.dim as u64) as usize;
        let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
        (bucket, sign)
    }

    /// Embeds one text. Returns `None` when the text has no tokens.
    pub fn embed_text(&self, text: &str) -> Option<Vec<f64>> {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return None;
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            let (bucket, sign) = self.slot(t);
            v[bucket] += sign;
        }
        let norm = l2_norm(&v);
        // Tokens can cancel exactly (e.g. two colliding tokens of opposite sign).
        if norm == 0.0 {
            return None;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Some(v)
    }
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self {
            dim: DEFAULT_EMBEDDING_DIM,
        }
    }
}

impl LabelEmbedder for HashingEmbedder {
    fn embed(&self, classes: &[ClassMeta], mode: EmbeddingMode) -> Result<LabelEmbedding> {
        let mut rows = Vec::with_capacity(classes.len());
        let mut fallback = Vec::with_capacity(classes.len());
        for class in classes {
            let text = match mode {
                EmbeddingMode::Name => {
                    if class.name.trim().is_empty() {
                        return Err(Error::Validation(format!("class {} has an empty name", class.class_id)));
                    }
                    &class.name
                }
                EmbeddingMode::Description => &class.description,
            };
            match self.embed_text(text) {
                Some(v) => {
                    rows.push(v);
                    fallback.push(false);
                }
                None => {
                    warn!(
                        "class {} has no {mode} tokens; using basis vector {}",
                        class.class_id,
                        class.class_id % self.dim
                    );
                    let mut v = vec![0.0; self.dim];
                    v[class.class_id % self.dim] = 1.0;
                    rows.push(v);
                    fallback.push(true);
                }
            }
        }
        Ok(LabelEmbedding { rows, mode, fallback })
    }
}

/// Serves externally computed embeddings, hashing any mode that has none.
#[derive(Debug, Clone)]
pub struct PrecomputedEmbedder {
    pub name: Option<LabelEmbedding>,
    pub description: Option<LabelEmbedding>,
    pub fallback: HashingEmbedder,
}

impl LabelEmbedder for PrecomputedEmbedder {
    fn embed(&self, classes: &[ClassMeta], mode: EmbeddingMode) -> Result<LabelEmbedding> {
        let stored = match mode {
            EmbeddingMode::Name => &self.name,
            EmbeddingMode::Description => &self.description,
        };
        match stored {
            Some(e) if e.len() != classes.len() => Err(Error::Dimension(format!(
                "{mode} embeddings cover {} classes, taxonomy has {}",
                e.len(),
                classes.len()
            ))),
            Some(e) => Ok(LabelEmbedding { mode, ..e.clone() }),
            None => self.fallback.embed(classes, mode),
        }
    }
}

/// Hashing embedding of every class with dimension `dim`.
pub fn embed_labels(classes: &[ClassMeta], mode: EmbeddingMode, dim: usize) -> Result<LabelEmbedding> {
    HashingEmbedder::new(dim)?.embed(classes, mode)
}

/// Reads `class_id<TAB>e_1..e_k` rows under a `# mode=<name|description>` header.
pub fn read_embeddings(path: &Path, num_classes: usize) -> Result<LabelEmbedding> {
    let table = read_table(path, true)?;
    let mode: EmbeddingMode = table.header.get("mode").unwrap_or("description").parse()?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; num_classes];
    for (line, cols) in table.rows {
        if cols.len() < 2 {
            return Err(Error::parse(path, line, "expected class_id followed by values"));
        }
        let class = parse_usize(path, line, &cols[0])?;
        if class >= num_classes {
            return Err(Error::Reference(format!("embedding for unknown class {class}")));
        }
        let values = cols[1..]
            .iter()
            .map(|raw| parse_f64(path, line, raw))
            .collect::<Result<Vec<_>>>()?;
        rows[class] = Some(values);
    }
    let rows = rows
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.ok_or_else(|| Error::Reference(format!("no embedding for class {i}"))))
        .collect::<Result<Vec<_>>>()?;
    LabelEmbedding::from_rows(rows, mode)
}

pub fn write_embeddings(path: &Path, embedding: &LabelEmbedding) -> Result<()> {
    let mut out = Header::new()
        .with("mode", embedding.mode())
        .with("dim", embedding.dim())
        .render();
    out.push('\n');
    for (i, row) in embedding.rows().iter().enumerate() {
        let _ = write!(out, "{i}");
        for x in row {
            let _ = write!(out, "\t{}", fmt_float(*x));
        }
        out.push('\n');
    }
    write_text(path, &out)
}
