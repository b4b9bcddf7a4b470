//! Subject-grouped patch sets built from a manifest.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::signal::{
    load_manifest_entry, preprocess, Label, ManifestRow, Patch, SegmentationConfig, SequenceFormat,
};

/// All patches of one subject, across every sequence listed for them.
#[derive(Clone, Debug)]
pub struct SubjectPatches {
    pub subject_id: String,
    pub label: Label,
    pub patches: Vec<Patch>,
}

/// Loads and preprocesses every manifest row, grouping patches by subject
/// (sorted by subject id). A subject listed with two labels is an error.
pub fn load_dataset(
    rows: &[ManifestRow],
    format: SequenceFormat,
    seg: &SegmentationConfig,
) -> Result<Vec<SubjectPatches>> {
    let mut by_subject: BTreeMap<String, SubjectPatches> = BTreeMap::new();
    for row in rows {
        let seq = load_manifest_entry(row, format)?;
        let patches = preprocess(&seq, seg)?;
        let entry = by_subject
            .entry(row.subject_id.clone())
            .or_insert_with(|| SubjectPatches {
                subject_id: row.subject_id.clone(),
                label: row.label,
                patches: Vec::new(),
            });
        if entry.label != row.label {
            return Err(Error::Data(format!(
                "subject {} listed as both {} and {}",
                row.subject_id, entry.label, row.label
            )));
        }
        entry.patches.extend(patches);
    }
    Ok(by_subject.into_values().collect())
}

/// `(subject_id, label)` pairs, in dataset order.
pub fn subject_labels(data: &[SubjectPatches]) -> Vec<(String, Label)> {
    data.iter().map(|s| (s.subject_id.clone(), s.label)).collect()
}
