//! Text formats shared by the pipeline stages.
//!
//! Every artifact is a UTF-8 file starting with one or more `#` header lines of
//! whitespace separated `key=value` pairs. Floats are written with 17
//! significant digits so a write/read round trip is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::{ClassMeta, Dataset, Sample, Taxonomy};
use crate::error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Ordered `key=value` pairs of a header line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Header {
    pairs: Vec<(String, String)>,
}

impl Header {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.push(key, value);
        self
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.pairs.push((key.into(), value.to_string()));
    }

    pub fn extend(&mut self, other: &Header) {
        self.pairs.extend(other.pairs.iter().cloned());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn render(&self) -> String {
        let body: Vec<String> = self.pairs.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# {}", body.join(" "))
    }

    /// Parses `# k=v k=v`. Tokens without `=` are ignored.
    pub fn parse(line: &str) -> Option<Self> {
        let rest = line.strip_prefix('#')?;
        let pairs = rest
            .split_whitespace()
            .filter_map(|tok| tok.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Some(Self { pairs })
    }

    /// Reads a required numeric field.
    pub fn require<T: std::str::FromStr>(&self, key: &str, path: &Path) -> Result<T> {
        let raw = self
            .get(key)
            .ok_or_else(|| Error::parse(path, 1, format!("header lacks `{key}=`")))?;
        raw.parse()
            .map_err(|_| Error::parse(path, 1, format!("header field `{key}={raw}` is not valid")))
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A parsed TSV artifact: the first header, then data rows with their 1-based line numbers.
pub(crate) struct Table {
    pub header: Header,
    pub rows: Vec<(usize, Vec<String>)>,
}

pub(crate) fn read_table(path: &Path, require_header: bool) -> Result<Table> {
    let text = read_text(path)?;
    let mut header = None;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.starts_with('#') {
            if header.is_none() {
                if lineno != 1 {
                    return Err(Error::parse(path, lineno, "header must be the first line"));
                }
                header = Header::parse(line);
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        rows.push((lineno, line.split('\t').map(str::to_string).collect()));
    }
    let header = match header {
        Some(h) => h,
        None if require_header => return Err(Error::parse(path, 1, "missing `#` header line")),
        None => Header::new(),
    };
    Ok(Table { header, rows })
}

pub(crate) fn parse_f64(path: &Path, line: usize, raw: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(path, line, format!("not a number: {raw:?}")))
}

pub(crate) fn parse_usize(path: &Path, line: usize, raw: &str) -> Result<usize> {
    raw.trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(path, line, format!("not a non-negative integer: {raw:?}")))
}

/// Features file contents before validation against a taxonomy.
#[derive(Debug, Clone)]
pub struct FeatureTable {
    pub dim: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
    pub header: Header,
}

/// Reads `id<TAB>noisy_label<TAB>f1..fd` under a `# d=<d> C=<C>` header.
pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let table = read_table(path, true)?;
    let dim: usize = table.header.require("d", path)?;
    let num_classes: usize = table.header.require("C", path)?;
    let mut samples = Vec::with_capacity(table.rows.len());
    for (line, cols) in table.rows {
        if cols.len() != dim + 2 {
            return Err(Error::parse(
                path,
                line,
                format!(
                    "expected {} columns (id, label, {dim} features), found {}",
                    dim + 2,
                    cols.len()
                ),
            ));
        }
        let label = parse_usize(path, line, &cols[1])?;
        let features = cols[2..]
            .iter()
            .map(|raw| parse_f64(path, line, raw))
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample::new(cols[0].clone(), features, label));
    }
    Ok(FeatureTable {
        dim,
        num_classes,
        samples,
        header: table.header,
    })
}

/// Writes the features file. `provenance` lands on a second header line so the
/// first line stays exactly `# d=<d> C=<C>`.
pub fn write_features(path: &Path, dataset: &Dataset, provenance: Option<&Header>) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "# d={} C={}", dataset.dim(), dataset.num_classes());
    if let Some(h) = provenance {
        if !h.pairs().is_empty() {
            let _ = writeln!(out, "{}", h.render());
        }
    }
    for s in dataset.samples() {
        out.push_str(&s.id);
        out.push('\t');
        out.push_str(&s.noisy_label.to_string());
        for x in &s.features {
            out.push('\t');
            out.push_str(&fmt_float(*x));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_taxonomy(path: &Path, num_classes: usize) -> Result<Taxonomy> {
    let text = read_text(path)?;
    let nodes: Vec<ClassMeta> = serde_json::from_str(&text)?;
    Taxonomy::new(nodes, num_classes)
}

pub fn write_taxonomy(path: &Path, taxonomy: &Taxonomy) -> Result<()> {
    let nodes: Vec<&ClassMeta> = taxonomy.nodes().collect();
    let mut text = serde_json::to_string_pretty(&nodes)?;
    text.push('\n');
    write_text(path, &text)
}

/// Reads the `id<TAB>clean_label` sidecar.
pub fn read_clean_labels(path: &Path) -> Result<Vec<(String, usize)>> {
    let table = read_table(path, false)?;
    table
        .rows
        .into_iter()
        .map(|(line, cols)| {
            if cols.len() != 2 {
                return Err(Error::parse(
                    path,
                    line,
                    format!("expected 2 columns, found {}", cols.len()),
                ));
            }
            Ok((cols[0].clone(), parse_usize(path, line, &cols[1])?))
        })
        .collect()
}

pub fn write_clean_labels(path: &Path, dataset: &Dataset, provenance: Option<&Header>) -> Result<()> {
    let mut out = String::new();
    if let Some(h) = provenance {
        let _ = writeln!(out, "{}", h.render());
    }
    for s in dataset.samples() {
        let label = s
            .clean_label
            .ok_or_else(|| Error::Validation(format!("sample {:?} has no clean label to write", s.id)))?;
        let _ = writeln!(out, "{}\t{label}", s.id);
    }
    write_text(path, &out)
}

/// Loads and validates a dataset from a features file and a taxonomy file.
pub fn load_dataset(features_path: &Path, taxonomy_path: &Path) -> Result<Dataset> {
    let table = read_features(features_path)?;
    let taxonomy = read_taxonomy(taxonomy_path, table.num_classes)?;
    Dataset::new(table.samples, taxonomy, table.dim)
}

/// Writes the features and taxonomy files. Clean labels are never written here.
pub fn save_dataset(dataset: &Dataset, features_path: &Path, taxonomy_path: &Path) -> Result<()> {
    write_features(features_path, dataset, None)?;
    write_taxonomy(taxonomy_path, dataset.taxonomy())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_format_round_trips() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 1.7976931348623157e308, 0.0] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        // 17 significant digits: one before the point, sixteen after
        let s = fmt_float(1.0 / 3.0);
        assert_eq!(s.split('e').next().unwrap().len(), 18);
    }

    #[test]
    fn header_parse_and_render() {
        let h = Header::new().with("source", "Hybrid").with("C", 3);
        assert_eq!(h.render(), "# source=Hybrid C=3");
        let back = Header::parse(&h.render()).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.get("C"), Some("3"));
    }
}
