//! Samples, class metadata and the validated [`Dataset`] container.
//!
//! A dataset is immutable once built: every constructor validates the
//! invariants below and every transformation returns a new value.
//!
//! - each feature vector has exactly `dim` finite entries
//! - `noisy_label < C`, and `clean_label < C` when present
//! - sample ids are unique
//! - class ids form the contiguous range `0..C`; internal taxonomy nodes use
//!   ids `>= C`; parent links form a forest
//! - `dim >= 1`, `C >= 2`, `N >= C`

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One training example: a precomputed feature vector and its (possibly wrong) label.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub features: Vec<f64>,
    pub noisy_label: usize,
    /// Ground truth, only known for synthetic data. Never read by training.
    pub clean_label: Option<usize>,
}

impl Sample {
    pub fn new(id: impl Into<String>, features: Vec<f64>, noisy_label: usize) -> Self {
        Self {
            id: id.into(),
            features,
            noisy_label,
            clean_label: None,
        }
    }
}

/// A taxonomy node. Nodes with `class_id < C` are classes; the rest are
/// internal nodes that only serve as parents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassMeta {
    pub class_id: usize,
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub parent: Option<usize>,
}

impl ClassMeta {
    pub fn new(class_id: usize, name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            class_id,
            name: name.into(),
            description: description.into(),
            parent: None,
        }
    }

    pub fn with_parent(mut self, parent: usize) -> Self {
        self.parent = Some(parent);
        self
    }
}

/// Class metadata plus the internal nodes of the class hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    classes: Vec<ClassMeta>,
    internal: Vec<ClassMeta>,
}

impl Taxonomy {
    /// Splits `nodes` into the `num_classes` classes and internal nodes, and
    /// validates ids and the forest structure.
    pub fn new(nodes: Vec<ClassMeta>, num_classes: usize) -> Result<Self> {
        let mut classes: Vec<Option<ClassMeta>> = vec![None; num_classes];
        let mut internal = Vec::new();
        let mut seen_internal = HashSet::new();
        for node in nodes {
            if node.class_id < num_classes {
                let slot = &mut classes[node.class_id];
                if slot.is_some() {
                    return Err(Error::Validation(format!(
                        "duplicate taxonomy entry for class {}",
                        node.class_id
                    )));
                }
                *slot = Some(node);
            } else {
                if !seen_internal.insert(node.class_id) {
                    return Err(Error::Validation(format!(
                        "duplicate taxonomy entry for node {}",
                        node.class_id
                    )));
                }
                internal.push(node);
            }
        }
        let missing: Vec<usize> = classes
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(i, _)| i)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Reference(format!(
                "class ids must be contiguous 0..{num_classes}; missing {missing:?}"
            )));
        }
        let classes: Vec<ClassMeta> = classes.into_iter().flatten().collect();
        internal.sort_by_key(|n| n.class_id);
        let taxonomy = Self { classes, internal };
        taxonomy.check_forest()?;
        Ok(taxonomy)
    }

    /// A flat taxonomy where every node is a class.
    pub fn from_classes(classes: Vec<ClassMeta>) -> Result<Self> {
        let n = classes.len();
        Self::new(classes, n)
    }

    pub fn classes(&self) -> &[ClassMeta] {
        &self.classes
    }

    pub fn internal_nodes(&self) -> &[ClassMeta] {
        &self.internal
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// All listed nodes, classes first.
    pub fn nodes(&self) -> impl Iterator<Item = &ClassMeta> {
        self.classes.iter().chain(self.internal.iter())
    }

    /// Parent lookup over every listed node.
    pub(crate) fn parent_map(&self) -> HashMap<usize, Option<usize>> {
        self.nodes().map(|n| (n.class_id, n.parent)).collect()
    }

    fn check_forest(&self) -> Result<()> {
        let parents = self.parent_map();
        let c = self.num_classes();
        for node in self.nodes() {
            if let Some(p) = node.parent {
                // Parents that are not listed are allowed only as bare internal roots.
                if p < c && !parents.contains_key(&p) {
                    return Err(Error::Reference(format!(
                        "node {} has unknown parent {p}",
                        node.class_id
                    )));
                }
            }
        }
        // Walk every chain; a chain longer than the node count must revisit a node.
        let limit = parents.len() + 1;
        for node in self.nodes() {
            let mut current = node.class_id;
            let mut steps = 0;
            while let Some(Some(p)) = parents.get(&current) {
                if *p == node.class_id {
                    return Err(Error::Cycle(node.class_id));
                }
                current = *p;
                steps += 1;
                if steps > limit {
                    return Err(Error::Cycle(node.class_id));
                }
            }
        }
        Ok(())
    }
}

/// A validated, immutable collection of samples over a taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    taxonomy: Taxonomy,
    dim: usize,
    normalized: bool,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, taxonomy: Taxonomy, dim: usize) -> Result<Self> {
        let c = taxonomy.num_classes();
        if dim < 1 {
            return Err(Error::Validation("feature dimension must be >= 1".into()));
        }
        if c < 2 {
            return Err(Error::Validation(format!("need at least 2 classes, got {c}")));
        }
        if samples.len() < c {
            return Err(Error::Validation(format!(
                "need at least as many samples as classes ({} < {c})",
                samples.len()
            )));
        }
        let mut ids = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id {:?}", s.id)));
            }
            if s.features.len() != dim {
                return Err(Error::Dimension(format!(
                    "sample {:?} has {} features, expected {dim}",
                    s.id,
                    s.features.len()
                )));
            }
            if s.features.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("sample {:?} has a non-finite feature", s.id)));
            }
            if s.noisy_label >= c {
                return Err(Error::Reference(format!(
                    "sample {:?} is labeled {} but there are only {c} classes",
                    s.id, s.noisy_label
                )));
            }
            if let Some(clean) = s.clean_label {
                if clean >= c {
                    return Err(Error::Reference(format!(
                        "sample {:?} has clean label {clean} but there are only {c} classes",
                        s.id
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            taxonomy,
            dim,
            normalized: false,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn classes(&self) -> &[ClassMeta] {
        self.taxonomy.classes()
    }

    pub fn num_classes(&self) -> usize {
        self.taxonomy.num_classes()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// True once [`normalize_features`] has been applied.
    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn noisy_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.noisy_label).collect()
    }

    /// Indices of samples grouped by noisy label, in sample order.
    pub fn members_by_class(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.num_classes()];
        for (i, s) in self.samples.iter().enumerate() {
            members[s.noisy_label].push(i);
        }
        members
    }

    pub fn has_clean_labels(&self) -> bool {
        self.samples.iter().all(|s| s.clean_label.is_some())
    }

    /// Returns a copy with the noisy labels replaced, keeping everything else.
    pub fn with_noisy_labels(&self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.samples.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} samples",
                labels.len(),
                self.samples.len()
            )));
        }
        let samples = self
            .samples
            .iter()
            .zip(labels)
            .map(|(s, &l)| Sample {
                noisy_label: l,
                ..s.clone()
            })
            .collect();
        let mut out = Self::new(samples, self.taxonomy.clone(), self.dim)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Attaches clean labels from a sidecar listing. Every sample must be covered.
    pub fn with_clean_labels(&self, clean: &[(String, usize)]) -> Result<Self> {
        let lookup: HashMap<&str, usize> = clean.iter().map(|(id, l)| (id.as_str(), *l)).collect();
        let mut samples = self.samples.clone();
        for s in &mut samples {
            let label = lookup
                .get(s.id.as_str())
                .ok_or_else(|| Error::Reference(format!("no clean label for sample {:?}", s.id)))?;
            s.clean_label = Some(*label);
        }
        let mut out = Self::new(samples, self.taxonomy.clone(), self.dim)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Clean labels are dropped so nothing downstream can consume them.
    pub fn without_clean_labels(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.clean_label = None;
        }
        out
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales every feature vector to unit L2 norm.
pub fn normalize_features(dataset: Dataset) -> Result<Dataset> {
    let Dataset {
        mut samples,
        taxonomy,
        dim,
        ..
    } = dataset;
    for s in &mut samples {
        let norm = l2_norm(&s.features);
        if norm == 0.0 {
            return Err(Error::Validation(format!(
                "sample {:?} has an all-zero feature vector",
                s.id
            )));
        }
        s.features.iter_mut().for_each(|x| *x /= norm);
    }
    Ok(Dataset {
        samples,
        taxonomy,
        dim,
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_classes() -> Taxonomy {
        Taxonomy::from_classes(vec![ClassMeta::new(0, "a", ""), ClassMeta::new(1, "b", "")]).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let ds = Dataset::new(
            vec![Sample::new("x", vec![3.0, 4.0], 0), Sample::new("y", vec![0.0, 2.0], 1)],
            two_classes(),
            2,
        )
        .unwrap();
        let ds = normalize_features(ds).unwrap();
        assert_eq!(ds.samples()[0].features, vec![0.6, 0.8]);
        assert!(ds.is_normalized());
    }

    #[test]
    fn normalize_is_idempotent_on_unit_vectors() {
        let v = vec![0.6, 0.8];
        let ds = Dataset::new(
            vec![Sample::new("x", v.clone(), 0), Sample::new("y", vec![1.0, 0.0], 1)],
            two_classes(),
            2,
        )
        .unwrap();
        let ds = normalize_features(ds).unwrap();
        for (a, b) in ds.samples()[0].features.iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_rejects_zero_vector() {
        let ds = Dataset::new(
            vec![
                Sample::new("zero", vec![0.0, 0.0], 0),
                Sample::new("y", vec![1.0, 0.0], 1),
            ],
            two_classes(),
            2,
        )
        .unwrap();
        let err = normalize_features(ds).unwrap_err().to_string();
        assert!(err.contains("zero"), "{err}");
    }

    #[test]
    fn rejects_duplicate_ids_and_dangling_labels() {
        let dup = Dataset::new(
            vec![Sample::new("x", vec![1.0], 0), Sample::new("x", vec![1.0], 1)],
            two_classes(),
            1,
        );
        assert!(matches!(dup, Err(Error::Validation(_))));
        let dangling = Dataset::new(
            vec![Sample::new("x", vec![1.0], 0), Sample::new("y", vec![1.0], 2)],
            two_classes(),
            1,
        );
        assert!(matches!(dangling, Err(Error::Reference(_))));
    }

    #[test]
    fn rejects_too_few_samples_or_classes() {
        let one = Taxonomy::from_classes(vec![ClassMeta::new(0, "a", "")]).unwrap();
        assert!(Dataset::new(vec![Sample::new("x", vec![1.0], 0)], one, 1).is_err());
        assert!(Dataset::new(vec![Sample::new("x", vec![1.0], 0)], two_classes(), 1).is_err());
    }

    #[test]
    fn taxonomy_cycle_is_rejected() {
        let nodes = vec![
            ClassMeta::new(0, "a", "").with_parent(1),
            ClassMeta::new(1, "b", "").with_parent(0),
        ];
        let err = Taxonomy::new(nodes, 2).unwrap_err();
        assert!(matches!(err, Error::Cycle(_)));
        assert!(err.to_string().contains("cycle detected"));
    }

    #[test]
    fn taxonomy_cycle_through_internal_nodes() {
        let nodes = vec![
            ClassMeta::new(0, "a", "").with_parent(2),
            ClassMeta::new(1, "b", "").with_parent(2),
            ClassMeta::new(2, "root", "").with_parent(3),
            ClassMeta::new(3, "loop", "").with_parent(2),
        ];
        assert!(matches!(Taxonomy::new(nodes, 2), Err(Error::Cycle(_))));
    }

    #[test]
    fn taxonomy_requires_contiguous_classes() {
        let nodes = vec![ClassMeta::new(0, "a", ""), ClassMeta::new(2, "c", "")];
        assert!(matches!(Taxonomy::new(nodes, 2), Err(Error::Reference(_))));
    }

    #[test]
    fn implicit_internal_root_is_allowed() {
        let nodes = vec![
            ClassMeta::new(0, "a", "").with_parent(7),
            ClassMeta::new(1, "b", "").with_parent(7),
        ];
        let tax = Taxonomy::new(nodes, 2).unwrap();
        assert!(tax.internal_nodes().is_empty());
    }

    #[test]
    fn members_follow_sample_order() {
        let ds = Dataset::new(
            vec![
                Sample::new("p", vec![1.0], 1),
                Sample::new("q", vec![1.0], 0),
                Sample::new("r", vec![1.0], 1),
            ],
            two_classes(),
            1,
        )
        .unwrap();
        assert_eq!(ds.members_by_class(), vec![vec![1], vec![0, 2]]);
    }
}
