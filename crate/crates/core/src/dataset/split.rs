use serde::{Deserialize, Serialize};

use super::{SceneRecord, CAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingKey {
    /// Timestamp, falling back to image id for records without one.
    #[default]
    Timestamp,
    ImageId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ordering_key: OrderingKey,
    pub fraction: f64,
    pub min_objects_per_image: usize,
    pub class_of_interest: String,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            ordering_key: OrderingKey::Timestamp,
            fraction: 0.5,
            min_objects_per_image: 2,
            class_of_interest: CAR.to_string(),
        }
    }
}

/// Orders the eligible records and puts the first `ceil(fraction * n)` into the
/// training split, the rest into the test split.
///
/// Records with fewer than `min_objects_per_image` instances of the class of interest
/// appear in neither split. `fraction` is clamped to `[0, 1]`.
pub fn split_dataset(
    records: &[SceneRecord],
    spec: &SplitSpec,
) -> (Vec<SceneRecord>, Vec<SceneRecord>) {
    let mut eligible: Vec<&SceneRecord> = records
        .iter()
        .filter(|r| r.count_class(&spec.class_of_interest) >= spec.min_objects_per_image)
        .collect();
    match spec.ordering_key {
        OrderingKey::Timestamp => eligible.sort_by(|a, b| match (a.timestamp, b.timestamp) {
            (Some(x), Some(y)) => x.total_cmp(&y).then_with(|| a.image_id.cmp(&b.image_id)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => a.image_id.cmp(&b.image_id),
        }),
        OrderingKey::ImageId => eligible.sort_by(|a, b| a.image_id.cmp(&b.image_id)),
    }
    let n_train = ((spec.fraction.clamp(0.0, 1.0) * eligible.len() as f64).ceil() as usize)
        .min(eligible.len());
    let test = eligible.split_off(n_train);
    (
        eligible.into_iter().cloned().collect(),
        test.into_iter().cloned().collect(),
    )
}
