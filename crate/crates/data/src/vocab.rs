//! Class label vocabulary.
//!
//! Foreground labels carry canonical indices `0..n-1`; a mask encodes the
//! label at index `i` as value `i + 1`, with `0` reserved for background
//! (value 255 is forbidden by construction, the roster is far smaller).

use crate::error::DataError;
use crate::Result;

/// Mask value of the background class.
pub const BACKGROUND_ID: u8 = 0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
}

impl Vocab {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() > 250 {
            return Err(DataError::InvalidConfig(format!("{} labels exceed u8 ids", labels.len())));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(DataError::DuplicateLabel(l.clone()));
            }
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| DataError::UnknownLabel(label.to_string()))
    }

    /// Mask value of the label at `index`.
    pub fn mask_id(&self, index: usize) -> u8 {
        (index + 1) as u8
    }

    /// Label index of a mask value; `None` for background.
    pub fn label_index_of_mask(&self, value: u8) -> Option<usize> {
        if value == BACKGROUND_ID || value as usize > self.labels.len() {
            None
        } else {
            Some(value as usize - 1)
        }
    }

    /// Logit channel count: background plus one channel per label. Channel
    /// `c` corresponds to mask value `c`.
    pub fn channels(&self) -> usize {
        self.labels.len() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_labels_rejected() {
        let err = Vocab::new(vec!["a".into(), "b".into(), "a".into()]).unwrap_err();
        assert!(matches!(err, DataError::DuplicateLabel(_)));
    }

    #[test]
    fn mask_id_round_trip() {
        let v = Vocab::new(vec!["x".into(), "y".into()]).unwrap();
        assert_eq!(v.mask_id(0), 1);
        assert_eq!(v.label_index_of_mask(1), Some(0));
        assert_eq!(v.label_index_of_mask(0), None);
        assert_eq!(v.label_index_of_mask(3), None);
        assert_eq!(v.channels(), 3);
    }
}
