//! Class relation graphs: C×C similarity matrices built from the taxonomy,
//! from label embeddings, or as a sum of both.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::dataset::Taxonomy;
use crate::embed::{EmbeddingMode, LabelEmbedder, LabelEmbedding};
use crate::error::{Error, Result};
use crate::io::{fmt_float, parse_f64, read_table, write_text, Header};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationSource {
    Hierarchy,
    NameEmbedding,
    DescriptionEmbedding,
    Hybrid,
}

impl fmt::Display for RelationSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RelationSource::Hierarchy => "Hierarchy",
            RelationSource::NameEmbedding => "NameEmbedding",
            RelationSource::DescriptionEmbedding => "DescriptionEmbedding",
            RelationSource::Hybrid => "Hybrid",
        })
    }
}

impl FromStr for RelationSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "Hierarchy" => Ok(RelationSource::Hierarchy),
            "NameEmbedding" => Ok(RelationSource::NameEmbedding),
            "DescriptionEmbedding" => Ok(RelationSource::DescriptionEmbedding),
            "Hybrid" => Ok(RelationSource::Hybrid),
            other => Err(Error::Config(format!("unknown relation source {other:?}"))),
        }
    }
}

/// A symmetric C×C class similarity matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationMatrix {
    values: Vec<f64>,
    size: usize,
    source: RelationSource,
}

impl RelationMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>, source: RelationSource) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::Dimension("relation matrix must be square".into()));
        }
        Ok(Self {
            values: rows.into_iter().flatten().collect(),
            size,
            source,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn source(&self) -> RelationSource {
        self.source
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.size.max(1))
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.size).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|x| x * factor).collect(),
            ..self.clone()
        }
    }
}

/// Per-node depth and parent over every node reachable from the taxonomy.
struct Forest {
    parent: HashMap<usize, Option<usize>>,
    depth: HashMap<usize, usize>,
}

impl Forest {
    fn new(taxonomy: &Taxonomy) -> Self {
        let mut parent = taxonomy.parent_map();
        // Parents that are referenced but not listed become bare roots.
        let implicit: Vec<usize> = parent
            .values()
            .flatten()
            .filter(|p| !parent.contains_key(p))
            .copied()
            .collect();
        for p in implicit {
            parent.insert(p, None);
        }
        let depth = parent
            .keys()
            .map(|&node| {
                let mut d = 0;
                let mut current = node;
                while let Some(p) = parent[&current] {
                    d += 1;
                    current = p;
                }
                (node, d)
            })
            .collect();
        Self { parent, depth }
    }

    fn max_depth(&self) -> usize {
        self.depth.values().copied().max().unwrap_or(0)
    }

    /// Edge count of the tree path between `a` and `b`, or `None` across trees.
    fn distance(&self, a: usize, b: usize) -> Option<usize> {
        let mut up_a = HashMap::new();
        let mut current = Some(a);
        let mut steps = 0;
        while let Some(n) = current {
            up_a.insert(n, steps);
            steps += 1;
            current = self.parent[&n];
        }
        let mut current = Some(b);
        let mut steps = 0;
        while let Some(n) = current {
            if let Some(&da) = up_a.get(&n) {
                return Some(da + steps);
            }
            steps += 1;
            current = self.parent[&n];
        }
        None
    }
}

/// Shortest-path similarity `1 / (1 + d(i, j))` between every pair of classes.
///
/// Classes in different trees of the forest are assigned the finite distance
/// `2 * max_depth + 2`, one more than any within-tree path can reach.
pub fn taxonomy_similarity(taxonomy: &Taxonomy) -> RelationMatrix {
    let forest = Forest::new(taxonomy);
    let c = taxonomy.num_classes();
    let penalty = 2 * forest.max_depth() + 2;
    let rows: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|i| {
            (0..c)
                .map(|j| {
                    let d = forest.distance(i, j).unwrap_or(penalty);
                    1.0 / (1.0 + d as f64)
                })
                .collect()
        })
        .collect();
    RelationMatrix {
        values: rows.into_iter().flatten().collect(),
        size: c,
        source: RelationSource::Hierarchy,
    }
}

/// Pairwise cosine similarity of embedding rows.
pub fn embedding_similarity(embedding: &LabelEmbedding) -> RelationMatrix {
    let rows = embedding.rows();
    let norms: Vec<f64> = rows.iter().map(|r| crate::dataset::l2_norm(r)).collect();
    let c = rows.len();
    let values: Vec<Vec<f64>> = (0..c)
        .into_par_iter()
        .map(|i| {
            (0..c)
                .map(|j| {
                    if i == j {
                        return 1.0;
                    }
                    let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                    (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
                })
                .collect()
        })
        .collect();
    let source = match embedding.mode() {
        EmbeddingMode::Name => RelationSource::NameEmbedding,
        EmbeddingMode::Description => RelationSource::DescriptionEmbedding,
    };
    RelationMatrix {
        values: values.into_iter().flatten().collect(),
        size: c,
        source,
    }
}

/// Elementwise sum of relation matrices.
pub fn blend(parts: &[RelationMatrix]) -> Result<RelationMatrix> {
    let weighted: Vec<(f64, &RelationMatrix)> = parts.iter().map(|m| (1.0, m)).collect();
    blend_scaled(&weighted)
}

/// Elementwise `sum_k coef_k * part_k`.
pub fn blend_scaled(parts: &[(f64, &RelationMatrix)]) -> Result<RelationMatrix> {
    let (_, first) = parts
        .first()
        .ok_or_else(|| Error::Config("blend needs at least one matrix".into()))?;
    let size = first.size;
    let mut values = vec![0.0; size * size];
    for (coef, part) in parts {
        if part.size != size {
            return Err(Error::Dimension(format!(
                "cannot blend {}x{} with {size}x{size}",
                part.size, part.size
            )));
        }
        for (acc, v) in values.iter_mut().zip(&part.values) {
            *acc += coef * v;
        }
    }
    Ok(RelationMatrix {
        values,
        size,
        source: RelationSource::Hybrid,
    })
}

/// Which side information goes into the class relation graph.
///
/// Written as `+`-joined parts, e.g. `description+hierarchy`; the short forms
/// `CN`, `CD` and `HW` are accepted too.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GraphSources {
    pub name: bool,
    pub description: bool,
    pub hierarchy: bool,
}

impl GraphSources {
    pub const NAME: Self = Self {
        name: true,
        description: false,
        hierarchy: false,
    };
    pub const DESCRIPTION: Self = Self {
        name: false,
        description: true,
        hierarchy: false,
    };
    pub const HIERARCHY: Self = Self {
        name: false,
        description: false,
        hierarchy: true,
    };
    pub const NAME_HIERARCHY: Self = Self {
        name: true,
        description: false,
        hierarchy: true,
    };
    pub const DESCRIPTION_HIERARCHY: Self = Self {
        name: false,
        description: true,
        hierarchy: true,
    };

    /// The five graph constructions compared in the ablation.
    pub fn ablation_set() -> [Self; 5] {
        [
            Self::NAME,
            Self::DESCRIPTION,
            Self::HIERARCHY,
            Self::NAME_HIERARCHY,
            Self::DESCRIPTION_HIERARCHY,
        ]
    }

    pub fn short_label(&self) -> String {
        let mut parts = Vec::new();
        if self.name {
            parts.push("CN");
        }
        if self.description {
            parts.push("CD");
        }
        if self.hierarchy {
            parts.push("HW");
        }
        parts.join("+")
    }
}

impl Default for GraphSources {
    fn default() -> Self {
        Self::DESCRIPTION_HIERARCHY
    }
}

impl fmt::Display for GraphSources {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.name {
            parts.push("name");
        }
        if self.description {
            parts.push("description");
        }
        if self.hierarchy {
            parts.push("hierarchy");
        }
        f.write_str(&parts.join("+"))
    }
}

impl FromStr for GraphSources {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut out = Self {
            name: false,
            description: false,
            hierarchy: false,
        };
        for part in s.split('+').map(str::trim) {
            match part.to_ascii_lowercase().as_str() {
                "name" | "cn" => out.name = true,
                "description" | "cd" => out.description = true,
                "hierarchy" | "hw" => out.hierarchy = true,
                other => return Err(Error::Config(format!("unknown graph source {other:?}"))),
            }
        }
        Ok(out)
    }
}

/// Scalar coefficients applied to each part before summing (all 1.0 by default).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendCoefficients {
    pub name: f64,
    pub description: f64,
    pub hierarchy: f64,
}

impl Default for BlendCoefficients {
    fn default() -> Self {
        Self {
            name: 1.0,
            description: 1.0,
            hierarchy: 1.0,
        }
    }
}

/// Builds the relation graph selected by `sources`.
///
/// A single source is returned as-is (keeping its source tag); two or more are
/// summed into a hybrid graph.
pub fn build_relation(
    taxonomy: &Taxonomy,
    sources: GraphSources,
    coefficients: BlendCoefficients,
    embedder: &dyn LabelEmbedder,
) -> Result<RelationMatrix> {
    let mut parts = Vec::new();
    if sources.name {
        let emb = embedder.embed(taxonomy.classes(), EmbeddingMode::Name)?;
        parts.push((coefficients.name, embedding_similarity(&emb)));
    }
    if sources.description {
        let emb = embedder.embed(taxonomy.classes(), EmbeddingMode::Description)?;
        parts.push((coefficients.description, embedding_similarity(&emb)));
    }
    if sources.hierarchy {
        parts.push((coefficients.hierarchy, taxonomy_similarity(taxonomy)));
    }
    match parts.len() {
        0 => Err(Error::Config("graph needs at least one source".into())),
        1 => {
            let (coef, m) = parts.pop().expect("one part");
            Ok(if coef == 1.0 { m } else { m.scaled(coef) })
        }
        _ => {
            let refs: Vec<(f64, &RelationMatrix)> = parts.iter().map(|(c, m)| (*c, m)).collect();
            blend_scaled(&refs)
        }
    }
}

/// Writes `# source=<source> C=<C>` then C rows of C floats.
pub fn write_relation(path: &Path, matrix: &RelationMatrix, provenance: Option<&Header>) -> Result<()> {
    let mut header = Header::new().with("source", matrix.source()).with("C", matrix.size());
    if let Some(extra) = provenance {
        header.extend(extra);
    }
    let mut out = header.render();
    out.push('\n');
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|x| fmt_float(*x)).collect();
        let _ = writeln!(out, "{}", cells.join("\t"));
    }
    write_text(path, &out)
}

pub fn read_relation(path: &Path) -> Result<RelationMatrix> {
    let table = read_table(path, true)?;
    let size: usize = table.header.require("C", path)?;
    let source: RelationSource = table
        .header
        .get("source")
        .ok_or_else(|| Error::parse(path, 1, "header lacks `source=`"))?
        .parse()?;
    if table.rows.len() != size {
        return Err(Error::parse(
            path,
            1,
            format!("expected {size} rows, found {}", table.rows.len()),
        ));
    }
    let mut rows = Vec::with_capacity(size);
    for (line, cols) in table.rows {
        if cols.len() != size {
            return Err(Error::parse(
                path,
                line,
                format!("expected {size} columns, found {}", cols.len()),
            ));
        }
        rows.push(
            cols.iter()
                .map(|raw| parse_f64(path, line, raw))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    RelationMatrix::from_rows(rows, source)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClassMeta;
    use crate::embed::HashingEmbedder;

    fn siblings() -> Taxonomy {
        Taxonomy::new(
            vec![
                ClassMeta::new(0, "a", "").with_parent(2),
                ClassMeta::new(1, "b", "").with_parent(2),
                ClassMeta::new(2, "root", ""),
            ],
            2,
        )
        .unwrap()
    }

    #[test]
    fn self_and_sibling_similarity() {
        let s = taxonomy_similarity(&siblings());
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(0, 1), 1.0 / 3.0);
        assert_eq!(s.source(), RelationSource::Hierarchy);
    }

    #[test]
    fn disconnected_trees_get_finite_penalty() {
        // two trees: 2 -> {0}, 3 -> {1}; max depth 1 so the penalty distance is 4
        let tax = Taxonomy::new(
            vec![
                ClassMeta::new(0, "a", "").with_parent(2),
                ClassMeta::new(1, "b", "").with_parent(3),
            ],
            2,
        )
        .unwrap();
        let s = taxonomy_similarity(&tax);
        assert_eq!(s.get(0, 1), 1.0 / 5.0);
    }

    #[test]
    fn class_can_be_parent_of_class() {
        let tax = Taxonomy::new(
            vec![ClassMeta::new(0, "a", ""), ClassMeta::new(1, "b", "").with_parent(0)],
            2,
        )
        .unwrap();
        assert_eq!(taxonomy_similarity(&tax).get(0, 1), 0.5);
    }

    #[test]
    fn cosine_extremes() {
        let emb = LabelEmbedding::from_rows(
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![2.0, 0.0]],
            EmbeddingMode::Name,
        )
        .unwrap();
        let s = embedding_similarity(&emb);
        assert_eq!(s.get(0, 1), 0.0);
        assert_eq!(s.get(0, 2), -1.0);
        assert_eq!(s.get(0, 3), 1.0);
        assert_eq!(s.get(2, 2), 1.0);
    }

    #[test]
    fn blend_sums_and_checks_shape() {
        let a = taxonomy_similarity(&siblings());
        let single = blend(std::slice::from_ref(&a)).unwrap();
        assert_eq!(single.rows().collect::<Vec<_>>(), a.rows().collect::<Vec<_>>());
        let sum = blend(&[a.clone(), a.clone()]).unwrap();
        assert_eq!(sum.get(0, 1), 2.0 / 3.0);
        assert_eq!(sum.source(), RelationSource::Hybrid);
        let big = RelationMatrix::from_rows(vec![vec![1.0; 3]; 3], RelationSource::Hierarchy).unwrap();
        assert!(matches!(blend(&[a, big]), Err(Error::Dimension(_))));
        assert!(blend(&[]).is_err());
    }

    #[test]
    fn graph_sources_parse() {
        assert_eq!(
            "CD+HW".parse::<GraphSources>().unwrap(),
            GraphSources::DESCRIPTION_HIERARCHY
        );
        assert_eq!("name".parse::<GraphSources>().unwrap(), GraphSources::NAME);
        assert_eq!(GraphSources::NAME_HIERARCHY.to_string(), "name+hierarchy");
        assert!("wordnet".parse::<GraphSources>().is_err());
    }

    #[test]
    fn build_relation_single_source_keeps_tag() {
        let tax = siblings();
        let m = build_relation(
            &tax,
            GraphSources::HIERARCHY,
            BlendCoefficients::default(),
            &HashingEmbedder::default(),
        )
        .unwrap();
        assert_eq!(m.source(), RelationSource::Hierarchy);
        let h = build_relation(
            &tax,
            GraphSources::NAME_HIERARCHY,
            BlendCoefficients::default(),
            &HashingEmbedder::default(),
        )
        .unwrap();
        assert_eq!(h.source(), RelationSource::Hybrid);
        assert_eq!(h.get(0, 0), 2.0);
    }
}
