use std::path::Path;

use super::class_map::LabelRemap;
use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::geometry::{ClassId, LabelArray};

pub const LABEL_RECORD_BYTES: usize = 4;

/// Label words split into the semantic low half and instance high half.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawLabels {
    pub classes: Vec<u16>,
    pub instances: Vec<u16>,
}

impl RawLabels {
    /// Applies an optional raw→train remap and checks the result against
    /// `num_classes`.
    pub fn into_labels(self, num_classes: usize, remap: Option<&LabelRemap>) -> Result<LabelArray> {
        let labels: Vec<ClassId> = match remap {
            Some(m) => self
                .classes
                .iter()
                .enumerate()
                .map(|(index, &raw)| {
                    m.map(raw).ok_or(Error::UnknownClass {
                        class: raw as u32,
                        index,
                    })
                })
                .collect::<Result<_>>()?,
            None => self.classes,
        };
        let labels = LabelArray::new(labels);
        labels.validate(num_classes)?;
        Ok(labels)
    }
}

pub fn decode_label_words(bytes: &[u8], origin: &Path) -> Result<RawLabels> {
    if !bytes.len().is_multiple_of(LABEL_RECORD_BYTES) {
        return Err(Error::Length {
            path: origin.to_path_buf(),
            len: bytes.len() as u64,
            record: LABEL_RECORD_BYTES as u64,
        });
    }
    let (classes, instances) = bytes
        .chunks_exact(LABEL_RECORD_BYTES)
        .map(|w| {
            let word = u32::from_le_bytes(w.try_into().unwrap());
            ((word & 0xFFFF) as u16, (word >> 16) as u16)
        })
        .unzip();
    Ok(RawLabels { classes, instances })
}

/// Encodes semantic labels; instance bits are always written as zero.
pub fn encode_labels(labels: &LabelArray) -> Vec<u8> {
    labels.iter().flat_map(|&l| (l as u32).to_le_bytes()).collect()
}

pub fn read_labels_raw(path: &Path) -> Result<RawLabels> {
    decode_label_words(&read_bytes(path)?, path)
}

pub fn read_labels(path: &Path, num_classes: usize, remap: Option<&LabelRemap>) -> Result<LabelArray> {
    read_labels_raw(path)?.into_labels(num_classes, remap)
}

pub fn write_labels(labels: &LabelArray, path: &Path) -> Result<()> {
    write_atomic(path, &encode_labels(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn word_layout() {
        let mut bytes = 0u32.to_le_bytes().to_vec();
        bytes.extend_from_slice(&0x002A_000Au32.to_le_bytes());
        let raw = decode_label_words(&bytes, Path::new("mem")).unwrap();
        assert_eq!(raw.classes, vec![0, 10]);
        assert_eq!(raw.instances, vec![0, 0x002A]);
        let labels = raw.into_labels(20, None).unwrap();
        // instance bits are dropped on write
        assert_eq!(encode_labels(&labels)[4..], 0x0000_000Au32.to_le_bytes());
    }

    #[test]
    fn length_and_unknown_class() {
        assert!(matches!(decode_label_words(&[1, 2, 3], Path::new("mem")), Err(Error::Length { .. })));
        let raw = decode_label_words(&7u32.to_le_bytes(), Path::new("mem")).unwrap();
        assert!(matches!(raw.into_labels(5, None), Err(Error::UnknownClass { class: 7, index: 0 })));
    }

    #[test]
    fn remap_applied() {
        let remap = LabelRemap::parse("0,0\n10,1\n40,2\n", "remap").unwrap();
        let bytes: Vec<u8> = [10u32, 40, 0].iter().flat_map(|w| w.to_le_bytes()).collect();
        let raw = decode_label_words(&bytes, Path::new("mem")).unwrap();
        assert_eq!(raw.clone().into_labels(3, Some(&remap)).unwrap().as_slice(), &[1, 2, 0]);
        let bad: Vec<u8> = 11u32.to_le_bytes().to_vec();
        let raw = decode_label_words(&bad, Path::new("mem")).unwrap();
        assert!(matches!(raw.into_labels(3, Some(&remap)), Err(Error::UnknownClass { class: 11, .. })));
    }

    proptest! {
        #[test]
        fn round_trip_without_instances(classes in prop::collection::vec(any::<u16>(), 0..300)) {
            let bytes: Vec<u8> = classes.iter().flat_map(|&c| (c as u32).to_le_bytes()).collect();
            let labels = decode_label_words(&bytes, Path::new("mem")).unwrap().into_labels(1 << 16, None).unwrap();
            prop_assert_eq!(encode_labels(&labels), bytes);
        }
    }
}
