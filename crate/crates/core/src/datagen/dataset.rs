use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{DcmError, Result};
use crate::netcore::Matrix;

/// Whether an example was drawn from the training distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Id,
    Ood,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Id => "id",
            Domain::Ood => "ood",
        }
    }

    pub fn is_ood(self) -> bool {
        self == Domain::Ood
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = DcmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "id" | "ID" => Ok(Domain::Id),
            "ood" | "OOD" => Ok(Domain::Ood),
            other => Err(DcmError::format("domain tag", format!("`{other}`"))),
        }
    }
}

/// Features, integer labels and a domain tag per example.
///
/// OOD examples in detection benchmarks have no meaningful class; they carry
/// label 0 (standard task) or their index within the OOD family (near-OOD
/// task) so the label column stays within `[0, n_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Matrix,
    labels: Vec<usize>,
    domains: Vec<Domain>,
    n_classes: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        domains: Vec<Domain>,
        n_classes: usize,
    ) -> Result<Self> {
        if labels.len() != features.rows() || domains.len() != features.rows() {
            return Err(DcmError::shape(format!(
                "{} feature rows, {} labels, {} domain tags",
                features.rows(),
                labels.len(),
                domains.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(DcmError::Index {
                index: bad,
                bound: n_classes,
            });
        }
        Ok(LabeledDataset {
            features,
            labels,
            domains,
            n_classes,
        })
    }

    /// All examples tagged in-distribution.
    pub fn in_distribution(features: Matrix, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        let domains = vec![Domain::Id; labels.len()];
        Self::new(features, labels, domains, n_classes)
    }

    pub fn empty(dim: usize, n_classes: usize) -> Self {
        LabeledDataset {
            features: Matrix::empty(dim),
            labels: Vec::new(),
            domains: Vec::new(),
            n_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn n_ood(&self) -> usize {
        self.domains.iter().filter(|d| d.is_ood()).count()
    }

    pub fn subset(&self, idx: &[usize]) -> LabeledDataset {
        LabeledDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            domains: idx.iter().map(|&i| self.domains[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    pub fn filter_domain(&self, domain: Domain) -> LabeledDataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.domains[i] == domain)
            .collect();
        self.subset(&idx)
    }

    pub fn concat(&self, other: &LabeledDataset) -> Result<LabeledDataset> {
        if self.n_classes != other.n_classes {
            return Err(DcmError::shape(
                "cannot concatenate datasets with different class counts",
            ));
        }
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut domains = self.domains.clone();
        domains.extend_from_slice(&other.domains);
        Ok(LabeledDataset {
            features: self.features.vstack(&other.features)?,
            labels,
            domains,
            n_classes: self.n_classes,
        })
    }

    /// Serializes as CSV with header `f0..f{d-1},label,domain_tag`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim() {
            out.push_str(&format!("f{j},"));
        }
        out.push_str("label,domain_tag\n");
        for i in 0..self.len() {
            for v in self.features.row(i) {
                out.push_str(&format!("{v},"));
            }
            out.push_str(&format!("{},{}\n", self.labels[i], self.domains[i]));
        }
        out
    }

    /// Parses the CSV layout written by [`LabeledDataset::to_csv_string`].
    /// Without `n_classes`, the class count is one more than the largest label.
    pub fn from_csv_str(text: &str, n_classes: Option<usize>) -> Result<LabeledDataset> {
        let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| DcmError::format("dataset csv", e.to_string()))?
            .clone();
        let n = headers.len();
        if n < 2 || &headers[n - 2] != "label" || &headers[n - 1] != "domain_tag" {
            return Err(DcmError::format(
                "dataset csv",
                "last two columns must be label,domain_tag",
            ));
        }
        let dim = n - 2;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        let mut domains = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| DcmError::format("dataset csv", e.to_string()))?;
            let bad =
                |what: &str| DcmError::format("dataset csv", format!("row {line}: bad {what}"));
            for j in 0..dim {
                data.push(rec[j].trim().parse::<f64>().map_err(|_| bad("feature"))?);
            }
            labels.push(rec[dim].trim().parse::<usize>().map_err(|_| bad("label"))?);
            domains.push(rec[dim + 1].trim().parse::<Domain>()?);
        }
        let classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
        let features = Matrix::new(labels.len(), dim, data)?;
        LabeledDataset::new(features, labels, domains, classes)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::harness::io::write_atomic(path.as_ref(), self.to_csv_string().as_bytes())
    }

    pub fn read_csv(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<LabeledDataset> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| DcmError::io(path, e))?;
        Self::from_csv_str(&text, n_classes)
    }
}
