use crate::error::{DtsError, Result};

/// Per-pixel class ids, row-major, with [`LabelMap::IGNORE`] for unlabeled pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub const IGNORE: u8 = 255;

    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height * width != data.len() {
            return Err(DtsError::dim(format!(
                "{height}x{width} label map needs {} entries, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, class: u8) -> Self {
        Self {
            height,
            width,
            data: vec![class; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    /// Sorted distinct non-ignore classes present.
    pub fn classes_present(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (0..255u8).filter(|&c| seen[c as usize]).collect()
    }

    /// Checks every non-ignore id is below `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self
            .data
            .iter()
            .find(|&&v| v != Self::IGNORE && v as usize >= num_classes)
        {
            Some(v) => Err(DtsError::InvalidArgument(format!(
                "label {v} out of range for {num_classes} classes"
            ))),
            None => Ok(()),
        }
    }

    pub fn same_size(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }
}
