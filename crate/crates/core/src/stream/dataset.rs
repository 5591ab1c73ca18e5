use std::path::Path;

use crate::bnt::{self, NamedTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::{Origin, Sample};

/// Labelled inputs, `[N, features]` or `[N, C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Tensor<f32>,
    pub labels: Vec<u32>,
}

impl Dataset {
    pub fn new(inputs: Tensor<f32>, labels: Vec<u32>) -> Result<Self> {
        if inputs.dims().len() < 2 {
            return Err(Error::Shape(
                "dataset inputs need a sample axis and features".into(),
            ));
        }
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.inputs.row_len()
    }

    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Clean samples with ids `id_offset + index`.
    pub fn samples(&self, id_offset: u64) -> Vec<Sample> {
        (0..self.len())
            .map(|i| Sample {
                id: id_offset + i as u64,
                input: self.inputs.row(i).to_vec(),
                label: self.labels[i],
                origin: Origin::Clean,
            })
            .collect()
    }

    /// Samples whose label is in `classes`.
    pub fn samples_of(&self, classes: &[u32], id_offset: u64) -> Vec<Sample> {
        self.samples(id_offset)
            .into_iter()
            .filter(|s| classes.contains(&s.label))
            .collect()
    }
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    bnt::save(path, &to_tensors(dataset))
}

pub(crate) fn to_tensors(dataset: &Dataset) -> Vec<NamedTensor> {
    vec![
        NamedTensor::f32(
            "inputs",
            dataset.inputs.dims(),
            dataset.inputs.data().to_vec(),
        ),
        NamedTensor::u32("labels", &[dataset.labels.len()], dataset.labels.clone()),
    ]
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let tensors = bnt::load(path)?;
    let inputs = bnt::find(&tensors, "inputs")?;
    let labels = bnt::find(&tensors, "labels")?;
    if labels.dims.len() != 1 {
        return Err(Error::Format("labels must be rank 1".into()));
    }
    let inputs = Tensor::new(inputs.dims_usize(), inputs.as_f32()?.to_vec())?;
    Dataset::new(inputs, labels.as_u32()?.to_vec())
}
