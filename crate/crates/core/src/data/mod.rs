//! Datasets of raw patch grids, the synthetic shift generator, IDX digit
//! ingestion and mini-batch samplers.

mod idx;
mod sampling;
mod synthetic;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PatchGrid;

pub use idx::{load_idx_digits, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels, IdxImages};
pub use sampling::{class_balanced_sample, random_sample, Batch, Sampler};
pub use synthetic::{gen_synthetic_pair, ClassPrototypes, ShiftScope, ShiftSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

fn check_grids(samples: &[PatchGrid]) -> Result<()> {
    if let Some(first) = samples.first() {
        let shape = (first.patch_count(), first.channels());
        if let Some((i, g)) = samples
            .iter()
            .enumerate()
            .find(|(_, g)| (g.patch_count(), g.channels()) != shape)
        {
            return Err(Error::Data(format!(
                "sample {i} is {}x{}, expected {}x{}",
                g.patch_count(),
                g.channels(),
                shape.0,
                shape.1
            )));
        }
    }
    Ok(())
}

/// Raw patch grids with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    samples: Vec<PatchGrid>,
    labels: Vec<usize>,
    domain: Domain,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(samples: Vec<PatchGrid>, labels: Vec<usize>, domain: Domain, class_count: usize) -> Result<Self> {
        if samples.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} samples but {} labels",
                samples.len(),
                labels.len()
            )));
        }
        if class_count == 0 {
            return Err(Error::Data("class_count must be positive".into()));
        }
        if let Some(y) = labels.iter().find(|&&y| y >= class_count) {
            return Err(Error::Data(format!("label {y} out of range for {class_count} classes")));
        }
        check_grids(&samples)?;
        Ok(Self {
            samples,
            labels,
            domain,
            class_count,
        })
    }

    pub fn samples(&self) -> &[PatchGrid] {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(K, input_dim)` of the grids, `None` for an empty dataset.
    pub fn grid_shape(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|g| (g.patch_count(), g.channels()))
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of the samples of each class.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Copy of the grids without labels, for the adaptation side of training.
    pub fn unlabeled(&self) -> UnlabeledDataset {
        UnlabeledDataset {
            samples: self.samples.clone(),
            domain: self.domain,
        }
    }

    /// Rows of `label,domain,p{k}_{c}...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_rows(out, &self.samples, Some(&self.labels), self.domain)
    }
}

/// Raw patch grids whose labels are not available.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlabeledDataset {
    samples: Vec<PatchGrid>,
    domain: Domain,
}

impl UnlabeledDataset {
    pub fn new(samples: Vec<PatchGrid>, domain: Domain) -> Result<Self> {
        check_grids(&samples)?;
        Ok(Self { samples, domain })
    }

    pub fn samples(&self) -> &[PatchGrid] {
        &self.samples
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rows with an empty label column.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_csv_rows(out, &self.samples, None, self.domain)
    }
}

fn write_csv_rows<W: Write>(mut out: W, samples: &[PatchGrid], labels: Option<&[usize]>, domain: Domain) -> Result<()> {
    let (k, c) = samples
        .first()
        .map(|g| (g.patch_count(), g.channels()))
        .unwrap_or((0, 0));
    let mut header = String::from("label,domain");
    for p in 0..k {
        for ch in 0..c {
            header.push_str(&format!(",p{p}_{ch}"));
        }
    }
    writeln!(out, "{header}")?;
    for (i, g) in samples.iter().enumerate() {
        let mut row = labels.map(|l| l[i].to_string()).unwrap_or_default();
        row.push(',');
        row.push_str(&domain.to_string());
        for v in g.patches().iter() {
            row.push(',');
            row.push_str(&v.to_string());
        }
        writeln!(out, "{row}")?;
    }
    Ok(())
}
