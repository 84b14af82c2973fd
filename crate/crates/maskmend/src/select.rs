//! Object selection: decide which proposed objects are worth keeping.
//!
//! Proposal generators emit many transient or tiny objects. Two cheap signals
//! separate the keepers from the noise: how many frames an object appears in,
//! and how much of the canvas it occupies while present. Each object gets the
//! combined score
//!
//! ```text
//! combined = appearance_count + alpha * relative_size
//! ```
//!
//! where `relative_size` is the sum over frames of the object's area divided
//! by the frame area (so a half-frame object visible in ten frames scores 5).
//! The weight `alpha` trades persistence against bulk: at `alpha = 0` a
//! single-frame blob can never outrank anything persistent, while a large
//! `alpha` lets sheer size win. The top `top_k` scorers survive; everything
//! else is relabelled to background.

use crate::mask::{ObjectId, SequenceBundle, BACKGROUND};

/// Weights for [`score_objects`] / [`select_top`].
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Relative-size weight in the combined score.
    pub alpha: f64,
    /// How many top-ranked objects to keep.
    pub top_k: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self { alpha: 5.0, top_k: 20 }
    }
}

/// Scores for one object, in ranking order fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectScore {
    pub id: ObjectId,
    /// Number of frames where the object has at least one pixel.
    pub appearance_count: usize,
    /// Sum over frames of (object area / frame area).
    pub relative_size: f64,
    /// `appearance_count + alpha * relative_size`.
    pub combined: f64,
}

/// Sum over frames of the object's area divided by the frame area.
pub fn object_size(bundle: &SequenceBundle, id: ObjectId) -> f64 {
    let frame_area = (bundle.width() * bundle.height()) as f64;
    bundle
        .masks()
        .iter()
        .map(|m| m.count(id) as f64 / frame_area)
        .sum()
}

/// Number of frames in which the object has at least one pixel.
pub fn appearance_count(bundle: &SequenceBundle, id: ObjectId) -> usize {
    bundle.masks().iter().filter(|m| m.count(id) > 0).count()
}

/// Scores every registered object and sorts by combined score, descending.
/// Ties break toward the higher appearance count, then the smaller id, so the
/// ordering is total and deterministic. The background is never scored, and
/// ids registered but absent from every frame are dropped.
pub fn score_objects(bundle: &SequenceBundle, config: &SelectionConfig) -> Vec<ObjectScore> {
    let mut scores: Vec<ObjectScore> = bundle
        .object_ids()
        .iter()
        .copied()
        .filter(|&id| id != BACKGROUND)
        .map(|id| {
            let appearance_count = appearance_count(bundle, id);
            let relative_size = object_size(bundle, id);
            ObjectScore {
                id,
                appearance_count,
                relative_size,
                combined: appearance_count as f64 + config.alpha * relative_size,
            }
        })
        .filter(|s| s.appearance_count > 0)
        .collect();
    scores.sort_by(|a, b| {
        b.combined
            .partial_cmp(&a.combined)
            .unwrap()
            .then(b.appearance_count.cmp(&a.appearance_count))
            .then(a.id.cmp(&b.id))
    });
    scores
}

/// Keeps the `top_k` highest-scoring objects and relabels every other object
/// pixel to background. Ids are preserved (no renumbering), frames are
/// untouched, and the returned bundle's registry contains exactly the
/// retained ids.
pub fn select_top(bundle: &SequenceBundle, config: &SelectionConfig) -> SequenceBundle {
    let keep: std::collections::BTreeSet<ObjectId> = score_objects(bundle, config)
        .into_iter()
        .take(config.top_k)
        .map(|s| s.id)
        .collect();
    let masks = bundle
        .masks()
        .iter()
        .map(|m| {
            let mut out = m.clone();
            for r in 0..m.height() {
                for c in 0..m.width() {
                    let id = m.label(r, c);
                    if id != BACKGROUND && !keep.contains(&id) {
                        out.set_label(r, c, BACKGROUND);
                    }
                }
            }
            out
        })
        .collect();
    SequenceBundle::new(bundle.name.clone(), bundle.frames().to_vec(), masks)
}
