use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub text: String,
    pub label: usize,
}

/// Labeled documents plus the ordered class names their label ids index.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub documents: Vec<Document>,
    pub label_names: Vec<String>,
}

impl Dataset {
    pub fn new(documents: Vec<Document>, label_names: Vec<String>) -> Result<Self> {
        if let Some(d) = documents.iter().find(|d| d.label >= label_names.len()) {
            return Err(Error::Contract(format!(
                "label id {} out of range for {} classes",
                d.label,
                label_names.len()
            )));
        }
        Ok(Self {
            documents,
            label_names,
        })
    }

    /// Builds a dataset from `(text, label)` pairs; label names are the
    /// sorted unique labels.
    pub fn from_pairs<T: AsRef<str>, L: AsRef<str>>(pairs: &[(T, L)]) -> Self {
        let names: Vec<String> = pairs
            .iter()
            .map(|(_, l)| l.as_ref().to_owned())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let documents = pairs
            .iter()
            .map(|(t, l)| Document {
                text: t.as_ref().to_owned(),
                label: names
                    .binary_search_by(|n| n.as_str().cmp(l.as_ref()))
                    .unwrap(),
            })
            .collect();
        Self {
            documents,
            label_names: names,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.label_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.documents.iter().map(|d| d.label).collect()
    }

    /// Documents per class, indexed by label id.
    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.label_names.len()];
        for d in &self.documents {
            counts[d.label] += 1;
        }
        counts
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            documents: indices.iter().map(|&i| self.documents[i].clone()).collect(),
            label_names: self.label_names.clone(),
        }
    }
}

fn read_records(path: &Path) -> Result<Vec<(usize, String, String)>> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let line_no = i + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let tabs = line.matches('\t').count();
        if tabs != 1 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected \"text<TAB>label\", found {tabs} tabs"),
            ));
        }
        let (text, label) = line.split_once('\t').expect("one tab");
        let label = label.trim();
        if label.is_empty() {
            return Err(Error::parse(path, line_no, "empty label"));
        }
        out.push((line_no, text.to_owned(), label.to_owned()));
    }
    Ok(out)
}

/// Reads a `text<TAB>label` file. Label names are the sorted set of labels
/// seen; document order is preserved.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let records = read_records(path.as_ref())?;
    let pairs: Vec<(String, String)> = records.into_iter().map(|(_, t, l)| (t, l)).collect();
    Ok(Dataset::from_pairs(&pairs))
}

/// Reads a `text<TAB>label` file against a fixed label set; a label outside
/// the set is an error naming its line.
pub fn load_dataset_with_labels(path: impl AsRef<Path>, label_names: &[String]) -> Result<Dataset> {
    let path = path.as_ref();
    let records = read_records(path)?;
    let mut documents = Vec::with_capacity(records.len());
    for (line_no, text, label) in records {
        let id = label_names
            .iter()
            .position(|n| *n == label)
            .ok_or_else(|| Error::parse(path, line_no, format!("unknown label \"{label}\"")))?;
        documents.push(Document { text, label: id });
    }
    Ok(Dataset {
        documents,
        label_names: label_names.to_vec(),
    })
}
