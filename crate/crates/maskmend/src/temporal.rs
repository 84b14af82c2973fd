//! Temporal-consistency repair: find frames where an object's mask abruptly
//! shrinks or disappears, filter out legitimate causes, and rebuild what is
//! genuinely missing from the neighboring frames.
//!
//! The stage runs per object in three steps:
//!
//! 1. **Detection.** For every window of consecutive frames, each frame's
//!    mask area is compared to the area of the union of the window's masks
//!    (mask-over-union). A frame whose MoU drops more than one standard
//!    deviation below the window mean casts a vote; frames voted down by a
//!    majority of the windows containing them are flagged. Windows where the
//!    masks shrink or grow monotonically around a fixed centroid look like
//!    camera zoom and are exempted.
//! 2. **Refinement.** A flagged frame may be a real occlusion rather than a
//!    detector failure. Aligning the smaller mask onto the larger by centroid
//!    and comparing the colors under the leftover (difference) region between
//!    the two frames decides: if the colors changed a lot, something moved in
//!    front of the object and the flag is dropped.
//! 3. **Correction.** For a surviving flag, the object mask is projected
//!    between the flagged frame and each neighbor with dense optical flow.
//!    The symmetric difference between projection and actual mask — cleaned
//!    of specks, holes, and (via an erosion seed test) thin registration
//!    slivers — is what one frame has and the other lacks; its reliable
//!    components are added to whichever frame has the smaller mask. A
//!    component that covers most of another raw proposal adopts that whole
//!    proposal (the typical over-segmentation case), and pixels currently
//!    carrying another object's label move only when doing so makes the
//!    object's color histograms across the two frames more alike.
//!
//! Passes repeat — corrections propagate one frame per pass from each intact
//! side — until a pass changes nothing or a pass budget is exhausted.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::flow::{estimate_flow, negate_flow, warp_mask, FlowField, FlowParams};
use crate::mask::{BinaryMask, ObjectId, RgbFrame, SequenceBundle, BACKGROUND};
use crate::raster::{
    center_of_mass, connected_components, erode, fill_small_holes, histogram_region,
    manhattan_distance, remove_small_components, Connectivity,
};

/// Tuning for the whole repair stage. The defaults are the values the stage
/// was calibrated with; the CLI exposes each as a flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TcConfig {
    /// Detection window length (number of voting frames per window).
    pub window: usize,
    /// Occlusion-threshold range: large objects use `occlusion_tau_min`,
    /// vanishing ones approach `occlusion_tau_max` (small difference regions
    /// are noisy, so small objects need stronger evidence).
    pub occlusion_tau_min: f64,
    pub occlusion_tau_max: f64,
    /// Object area (as a fraction of frame area) at and beyond which the
    /// occlusion threshold bottoms out at `occlusion_tau_min`.
    pub size_ref: f64,
    /// Zoom exemption: consecutive centroids must stay within
    /// `zoom_centroid_tol * sqrt(mean mask area)` of each other.
    pub zoom_centroid_tol: f64,
    /// Correction cleanup: components of the difference region smaller than
    /// this fraction of the frame are discarded (and holes below it filled).
    pub min_component_frac: f64,
    /// Components smaller than this fraction of the larger of the two object
    /// masks are considered minor and skipped.
    pub minor_add_frac: f64,
    /// A component covering at least this fraction of another raw proposal
    /// pulls in that proposal wholesale.
    pub overseg_cover_frac: f64,
    /// Erosion radius for the seed test that drops thin slivers.
    pub erosion_radius: usize,
    /// Maximum repair passes; `None` means one pass per frame, enough for a
    /// defect to heal from the farthest intact frame.
    pub max_passes: Option<usize>,
    /// Bins per channel for the color histograms (must divide 256).
    pub bins_per_channel: usize,
    /// Disable to skip the occlusion refinement (ablation).
    pub refine: bool,
    /// Disable to skip whole-proposal merging in corrections (ablation).
    pub use_all_objects: bool,
    pub flow: FlowParams,
}

impl Default for TcConfig {
    fn default() -> Self {
        Self {
            window: 5,
            occlusion_tau_min: 0.4,
            occlusion_tau_max: 0.7,
            size_ref: 0.01,
            zoom_centroid_tol: 0.2,
            min_component_frac: 0.0005,
            minor_add_frac: 0.05,
            overseg_cover_frac: 0.6,
            erosion_radius: 1,
            max_passes: None,
            bins_per_channel: 32,
            refine: true,
            use_all_objects: true,
            flow: FlowParams::default(),
        }
    }
}

/// What happened to one flagged (object, frame) in one pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TcStatus {
    /// Flagged and neither refined away nor correctable this pass.
    Detected,
    /// Flag dropped: the frames' colors say the object is genuinely hidden.
    RefinedAwayOcclusion,
    /// Flag dropped: the area change looks like camera zoom.
    RefinedAwayZoom,
    /// At least one pixel was repaired.
    Corrected,
    /// Correction impossible (optical flow had nothing to work with).
    Uncorrectable,
}

impl std::fmt::Display for TcStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TcStatus::Detected => "detected",
            TcStatus::RefinedAwayOcclusion => "refined_away_occlusion",
            TcStatus::RefinedAwayZoom => "refined_away_zoom",
            TcStatus::Corrected => "corrected",
            TcStatus::Uncorrectable => "uncorrectable",
        };
        f.write_str(s)
    }
}

/// One report line: object, frame, pass, outcome.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportEntry {
    pub object_id: ObjectId,
    pub frame: usize,
    pub pass: usize,
    pub status: TcStatus,
    pub details: String,
}

/// Everything the repair stage decided, in decision order. Each (object,
/// frame) appears at most once per pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InconsistencyReport {
    pub entries: Vec<ReportEntry>,
}

impl InconsistencyReport {
    pub fn count(&self, status: TcStatus) -> usize {
        self.entries.iter().filter(|e| e.status == status).count()
    }

    pub fn with_status(&self, status: TcStatus) -> impl Iterator<Item = &ReportEntry> {
        self.entries.iter().filter(move |e| e.status == status)
    }

    /// Line-oriented rendering, one decision per line.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "pass={} object={} frame={} status={} details=\"{}\"\n",
                e.pass, e.object_id, e.frame, e.status, e.details
            ));
        }
        out
    }
}

/// Mask-over-union: the object's area at frame `t` divided by the area of
/// the union of its masks over frames `[t_s, t_s + window]` (the union end is
/// clamped to the last frame). `None` when the object is absent from the
/// whole span (no evidence to judge `t` by).
///
/// Requires `t_s <= t < t_s + window` and `t` within the sequence.
pub fn mou(bundle: &SequenceBundle, id: ObjectId, t: usize, t_s: usize, window: usize) -> Option<f64> {
    let n = bundle.len();
    assert!(window >= 1, "window must be at least 1");
    assert!(t < n, "frame {t} out of range");
    assert!(t_s <= t && t < t_s + window, "frame {t} outside window starting at {t_s}");
    let end = (t_s + window).min(n - 1);
    let mut union = BinaryMask::empty(bundle.width(), bundle.height());
    for i in t_s..=end {
        union = union.union(&bundle.object_mask(i, id));
    }
    let union_area = union.area();
    if union_area == 0 {
        None
    } else {
        Some(bundle.mask(t).count(id) as f64 / union_area as f64)
    }
}

/// Result of [`detect_inconsistent`]: the frames that need attention, and the
/// flagged frames that were exempted because the sequence looks like a zoom.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub flagged: BTreeSet<usize>,
    pub zoom_excluded: BTreeSet<usize>,
}

/// Flags frames whose mask is inconsistently small for object `id`.
///
/// Every window position `t_s in [0, n - window]` (clamped to at least one
/// position) computes the MoU of each frame it contains, the mean, and the
/// population standard deviation; a frame more than one deviation below the
/// mean gets a vote. A frame is flagged when more than half of the windows
/// containing it vote against it. Flagged frames that pass the zoom test are
/// moved to `zoom_excluded` instead.
pub fn detect_inconsistent(bundle: &SequenceBundle, id: ObjectId, cfg: &TcConfig) -> Detection {
    let n = bundle.len();
    let window = cfg.window.max(1);
    let areas: Vec<usize> = (0..n).map(|t| bundle.mask(t).count(id)).collect();
    let mut votes = vec![0usize; n];
    let mut containing = vec![0usize; n];
    let last_start = n.saturating_sub(window);
    for t_s in 0..=last_start {
        let union_end = (t_s + window).min(n - 1);
        let eligible_end = (t_s + window).min(n); // exclusive
        let mut union = BinaryMask::empty(bundle.width(), bundle.height());
        for i in t_s..=union_end {
            union = union.union(&bundle.object_mask(i, id));
        }
        let union_area = union.area();
        if union_area == 0 {
            // Object absent from the whole span: MoU undefined, no votes.
            continue;
        }
        let mous: Vec<f64> = (t_s..eligible_end)
            .map(|i| areas[i] as f64 / union_area as f64)
            .collect();
        let mean = mous.iter().sum::<f64>() / mous.len() as f64;
        let var = mous.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / mous.len() as f64;
        let sigma = var.sqrt();
        for (k, t) in (t_s..eligible_end).enumerate() {
            containing[t] += 1;
            if mean - mous[k] > sigma {
                votes[t] += 1;
            }
        }
    }
    let mut detection = Detection::default();
    for t in 0..n {
        if containing[t] > 0 && votes[t] as f64 > containing[t] as f64 / 2.0 {
            if looks_like_zoom(bundle, id, t, cfg) {
                detection.zoom_excluded.insert(t);
            } else {
                detection.flagged.insert(t);
            }
        }
    }
    detection
}

/// Zoom exemption: over the window around `t`, the object's areas change
/// monotonically (either direction, plateaus allowed) while consecutive
/// centroids stay within `zoom_centroid_tol * sqrt(mean area)`. An object
/// that vanishes somewhere in the window is never zoom.
fn looks_like_zoom(bundle: &SequenceBundle, id: ObjectId, t: usize, cfg: &TcConfig) -> bool {
    let n = bundle.len();
    let window = cfg.window.max(1);
    let t_s = t.saturating_sub(window / 2).min(n.saturating_sub(window));
    let end = (t_s + window).min(n - 1);
    let masks: Vec<BinaryMask> = (t_s..=end).map(|i| bundle.object_mask(i, id)).collect();
    let areas: Vec<usize> = masks.iter().map(|m| m.area()).collect();
    if areas.iter().any(|&a| a == 0) {
        return false;
    }
    let non_increasing = areas.windows(2).all(|p| p[1] <= p[0]);
    let non_decreasing = areas.windows(2).all(|p| p[1] >= p[0]);
    if !non_increasing && !non_decreasing {
        return false;
    }
    let mean_area = areas.iter().sum::<usize>() as f64 / areas.len() as f64;
    let tol = cfg.zoom_centroid_tol * mean_area.sqrt();
    let centroids: Vec<(f64, f64)> = masks
        .iter()
        .map(|m| center_of_mass(m).expect("non-empty checked above"))
        .collect();
    centroids.windows(2).all(|p| {
        let dr = p[1].0 - p[0].0;
        let dc = p[1].1 - p[0].1;
        (dr * dr + dc * dc).sqrt() < tol
    })
}

/// The part of the larger mask not covered by the smaller one (ties treat the
/// first argument as larger). This is the region that went missing between
/// two masks of the same object.
pub fn difference_region(a: &BinaryMask, b: &BinaryMask) -> BinaryMask {
    if a.area() >= b.area() {
        a.subtract(b)
    } else {
        b.subtract(a)
    }
}

/// Decides whether the mask shrink between two frames is a real occlusion.
///
/// The smaller mask is centroid-aligned onto the larger, the leftover
/// difference region is histogrammed in both frames, and the normalized
/// histogram distance is compared against a size-dependent threshold: if the
/// colors under the missing region changed enough, something opaque moved in
/// front of the object. Empty difference region (masks agree) is never an
/// occlusion; a fully deleted mask compares the larger mask's whole footprint.
pub fn occlusion_check(
    frame_t: &RgbFrame,
    frame_tp: &RgbFrame,
    os_t: &BinaryMask,
    os_tp: &BinaryMask,
    cfg: &TcConfig,
) -> bool {
    let (larger, smaller) = if os_t.area() >= os_tp.area() { (os_t, os_tp) } else { (os_tp, os_t) };
    let dr = if smaller.is_empty() {
        larger.clone()
    } else {
        let (lr, lc) = center_of_mass(larger).expect("larger mask non-empty");
        let (sr, sc) = center_of_mass(smaller).expect("smaller mask non-empty");
        let shifted = smaller.translated((lr - sr).round() as isize, (lc - sc).round() as isize);
        larger.subtract(&shifted)
    };
    if dr.is_empty() {
        return false;
    }
    let h_t = histogram_region(frame_t, &dr, cfg.bins_per_channel);
    let h_tp = histogram_region(frame_tp, &dr, cfg.bins_per_channel);
    // Each pixel contributes one count per channel per frame, so the largest
    // possible distance is 2 counts * 3 channels * area.
    let mdh_norm = manhattan_distance(&h_t, &h_tp) / (6.0 * dr.area() as f64);
    let frame_area = (frame_t.width() * frame_t.height()) as f64;
    let size = (larger.area() as f64 / (cfg.size_ref * frame_area)).min(1.0);
    let tau = cfg.occlusion_tau_max - (cfg.occlusion_tau_max - cfg.occlusion_tau_min) * size;
    mdh_norm > tau
}

/// Outcome of one [`correct_frame`] call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrectionOutcome {
    /// True when at least one pixel changed.
    pub changed: bool,
    /// True when the flow field was unusable (no texture at all).
    pub uncorrectable: bool,
    /// The frame that received the correction (the one with the smaller
    /// mask), when anything changed.
    pub target_frame: Option<usize>,
    pub pixels_changed: usize,
    /// Raw proposals pulled in wholesale by the over-segmentation rule.
    pub merged_raw_ids: Vec<ObjectId>,
}

/// Repairs object `id` between a flagged frame `t` and a neighbor `t_prime`.
///
/// Projects the object's mask across the pair with dense optical flow (the
/// reverse direction uses the negated field) and adds the cleaned-up missing
/// parts to whichever frame's mask is smaller. `raw` supplies the unfiltered
/// proposals consulted by the over-segmentation merge; it must be aligned
/// with `os` (same frames). Only the deficient frame's map is ever modified,
/// and the object's existing pixels are never removed.
pub fn correct_frame(
    os: &mut SequenceBundle,
    raw: &SequenceBundle,
    id: ObjectId,
    t: usize,
    t_prime: usize,
    cfg: &TcConfig,
) -> CorrectionOutcome {
    let flow = estimate_flow(os.frame(t), os.frame(t_prime), &cfg.flow);
    correct_frame_with_flow(os, raw, id, t, t_prime, &flow, cfg)
}

/// [`correct_frame`] with a precomputed `t -> t_prime` flow field, so pass
/// loops can reuse fields across objects and passes (frames never change).
fn correct_frame_with_flow(
    os: &mut SequenceBundle,
    raw: &SequenceBundle,
    id: ObjectId,
    t: usize,
    t_prime: usize,
    flow_t_to_tp: &FlowField,
    cfg: &TcConfig,
) -> CorrectionOutcome {
    assert!(t != t_prime, "correction needs two distinct frames");
    if flow_t_to_tp.low_confidence() {
        return CorrectionOutcome { uncorrectable: true, ..Default::default() };
    }
    let mask_t = os.object_mask(t, id);
    let mask_tp = os.object_mask(t_prime, id);
    let larger_area = mask_t.area().max(mask_tp.area());
    if larger_area == 0 {
        // Object absent on both sides; nothing to transfer.
        return CorrectionOutcome::default();
    }
    // The frame with the smaller mask is the one missing something. Project
    // the other frame's mask into its coordinates.
    let (deficient, source_frame, projected) = if mask_t.area() <= mask_tp.area() {
        (t, t_prime, warp_mask(&mask_tp, &negate_flow(flow_t_to_tp)))
    } else {
        (t_prime, t, warp_mask(&mask_t, flow_t_to_tp))
    };
    let deficient_mask = os.object_mask(deficient, id);
    // Symmetric difference: what exactly one of {projection, actual} claims.
    let union = projected.union(&deficient_mask);
    let df = union.subtract(&projected.intersect(&deficient_mask));

    // Cleanup: drop specks, fill pinholes, then keep only components that
    // survive an erosion probe (thin registration slivers erode to nothing;
    // the components that keep a core are added in full).
    let frame_area = os.width() * os.height();
    let min_area = (cfg.min_component_frac * frame_area as f64).ceil() as usize;
    let cleaned = remove_small_components(&df, min_area, Connectivity::Eight);
    let cleaned = fill_small_holes(&cleaned, min_area.saturating_sub(1));
    let seeds = erode(&cleaned, cfg.erosion_radius);
    let mut outcome = CorrectionOutcome::default();
    for comp in connected_components(&cleaned, Connectivity::Eight).components {
        if comp.intersect(&seeds).is_empty() {
            continue;
        }
        if (comp.area() as f64) < cfg.minor_add_frac * larger_area as f64 {
            continue;
        }
        // Over-segmentation: a component that covers most of another raw
        // proposal means the proposal stage split the object; adopt the whole
        // proposal rather than the flow-shaped fragment.
        let mut region = comp.clone();
        if cfg.use_all_objects {
            for &other in raw.object_ids() {
                if other == id {
                    continue;
                }
                let proposal = raw.mask(deficient).extract_object(other);
                if proposal.is_empty() {
                    continue;
                }
                let covered = comp.intersect(&proposal).area() as f64 / proposal.area() as f64;
                if covered >= cfg.overseg_cover_frac {
                    region = region.union(&proposal);
                    outcome.merged_raw_ids.push(other);
                }
            }
        }
        outcome.pixels_changed += assign_region(os, deficient, source_frame, id, &region, cfg);
    }
    if outcome.pixels_changed > 0 {
        outcome.changed = true;
        outcome.target_frame = Some(deficient);
    }
    outcome
}

/// Writes `region`'s pixels into the deficient frame's map under `id`.
/// Background pixels are taken outright; pixels carrying another object's
/// label move only if the relabel strictly shrinks the histogram distance
/// between the object's masks in the two frames (i.e. it makes the object
/// look more like itself across the pair). Returns the pixel count changed.
fn assign_region(
    os: &mut SequenceBundle,
    deficient: usize,
    source_frame: usize,
    id: ObjectId,
    region: &BinaryMask,
    cfg: &TcConfig,
) -> usize {
    let mut by_label: BTreeMap<ObjectId, Vec<(usize, usize)>> = BTreeMap::new();
    for (r, c) in region.true_pixels() {
        let current = os.mask(deficient).label(r, c);
        if current != id {
            by_label.entry(current).or_default().push((r, c));
        }
    }
    let mut changed = 0;
    if let Some(px) = by_label.remove(&BACKGROUND) {
        for &(r, c) in &px {
            os.mask_mut(deficient).set_label(r, c, id);
        }
        changed += px.len();
    }
    for (_, px) in by_label {
        let current = os.object_mask(deficient, id);
        let reference = os.object_mask(source_frame, id);
        let h_ref = histogram_region(os.frame(source_frame), &reference, cfg.bins_per_channel);
        let before = manhattan_distance(
            &histogram_region(os.frame(deficient), &current, cfg.bins_per_channel),
            &h_ref,
        );
        let mut hypothetical = current;
        for &(r, c) in &px {
            hypothetical.set(r, c, true);
        }
        let after = manhattan_distance(
            &histogram_region(os.frame(deficient), &hypothetical, cfg.bins_per_channel),
            &h_ref,
        );
        if after < before {
            for &(r, c) in &px {
                os.mask_mut(deficient).set_label(r, c, id);
            }
            changed += px.len();
        }
    }
    changed
}

fn neighbors(t: usize, n: usize) -> impl Iterator<Item = usize> {
    let prev = t.checked_sub(1);
    let next = if t + 1 < n { Some(t + 1) } else { None };
    prev.into_iter().chain(next)
}

fn is_occluded(os: &SequenceBundle, id: ObjectId, t: usize, cfg: &TcConfig) -> bool {
    neighbors(t, os.len()).any(|tp| {
        occlusion_check(
            os.frame(t),
            os.frame(tp),
            &os.object_mask(t, id),
            &os.object_mask(tp, id),
            cfg,
        )
    })
}

/// Detection + refinement only: reports what would be repaired (or why not)
/// without touching any mask. One pass.
pub fn diagnose(os: &SequenceBundle, cfg: &TcConfig) -> InconsistencyReport {
    let mut report = InconsistencyReport::default();
    for &id in os.object_ids() {
        let detection = detect_inconsistent(os, id, cfg);
        for &t in &detection.zoom_excluded {
            report.entries.push(ReportEntry {
                object_id: id,
                frame: t,
                pass: 1,
                status: TcStatus::RefinedAwayZoom,
                details: "area trend and centroid look like zoom".into(),
            });
        }
        for &t in &detection.flagged {
            if cfg.refine && is_occluded(os, id, t, cfg) {
                report.entries.push(ReportEntry {
                    object_id: id,
                    frame: t,
                    pass: 1,
                    status: TcStatus::RefinedAwayOcclusion,
                    details: "colors under the missing region changed: object is hidden".into(),
                });
            } else {
                report.entries.push(ReportEntry {
                    object_id: id,
                    frame: t,
                    pass: 1,
                    status: TcStatus::Detected,
                    details: "mask area inconsistent with its window".into(),
                });
            }
        }
    }
    report
}

/// The full repair loop over aligned selected (`os`) and raw proposal
/// bundles. Returns the repaired bundle and the decision report.
///
/// Each pass re-detects on the current masks, refines, and corrects each
/// flagged frame against both neighbors (so a repair made early in a pass
/// immediately helps later frames). The loop stops when a pass changes no
/// pixels or after `max_passes` (default: the frame count).
pub fn run_tc(
    os: &SequenceBundle,
    raw: &SequenceBundle,
    cfg: &TcConfig,
) -> (SequenceBundle, InconsistencyReport) {
    assert_eq!(os.len(), raw.len(), "selected and raw bundles must cover the same frames");
    assert!(
        os.width() == raw.width() && os.height() == raw.height(),
        "selected and raw bundles must share dimensions"
    );
    let mut os = os.clone();
    let n = os.len();
    let max_passes = cfg.max_passes.unwrap_or(n).max(1);
    let mut report = InconsistencyReport::default();
    // Frames never change, so flow fields are reusable across objects and
    // passes.
    let mut flows: HashMap<(usize, usize), FlowField> = HashMap::new();
    for pass in 1..=max_passes {
        let mut changed_any = false;
        let ids: Vec<ObjectId> = os.object_ids().iter().copied().collect();
        for id in ids {
            let detection = detect_inconsistent(&os, id, cfg);
            for &t in &detection.zoom_excluded {
                report.entries.push(ReportEntry {
                    object_id: id,
                    frame: t,
                    pass,
                    status: TcStatus::RefinedAwayZoom,
                    details: "area trend and centroid look like zoom".into(),
                });
            }
            for &t in &detection.flagged {
                if cfg.refine && is_occluded(&os, id, t, cfg) {
                    report.entries.push(ReportEntry {
                        object_id: id,
                        frame: t,
                        pass,
                        status: TcStatus::RefinedAwayOcclusion,
                        details: "colors under the missing region changed: object is hidden".into(),
                    });
                    continue;
                }
                let mut combined = CorrectionOutcome::default();
                let mut attempts = 0usize;
                let mut unusable = 0usize;
                let mut targets: Vec<usize> = Vec::new();
                for tp in neighbors(t, n) {
                    if !flows.contains_key(&(t, tp)) {
                        let field = estimate_flow(os.frame(t), os.frame(tp), &cfg.flow);
                        flows.insert((t, tp), field);
                    }
                    let field = flows[&(t, tp)].clone();
                    let outcome = correct_frame_with_flow(&mut os, raw, id, t, tp, &field, cfg);
                    attempts += 1;
                    if outcome.uncorrectable {
                        unusable += 1;
                    }
                    if outcome.changed {
                        combined.changed = true;
                        combined.pixels_changed += outcome.pixels_changed;
                        combined.merged_raw_ids.extend(outcome.merged_raw_ids);
                        targets.extend(outcome.target_frame);
                    }
                }
                let (status, details) = if combined.changed {
                    let merge_note = if combined.merged_raw_ids.is_empty() {
                        String::new()
                    } else {
                        format!("; merged raw proposals {:?}", combined.merged_raw_ids)
                    };
                    (
                        TcStatus::Corrected,
                        format!(
                            "repaired {} px in frame(s) {:?}{}",
                            combined.pixels_changed, targets, merge_note
                        ),
                    )
                } else if attempts > 0 && unusable == attempts {
                    (TcStatus::Uncorrectable, "optical flow unusable (no texture)".into())
                } else {
                    (TcStatus::Detected, "flagged; no reliable region to transfer".into())
                };
                changed_any |= combined.changed;
                report.entries.push(ReportEntry { object_id: id, frame: t, pass, status, details });
            }
        }
        if !changed_any {
            break;
        }
    }
    (os, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::LabelMap;
    use crate::synth::{
        inject_defects, render, Appearance, DefectKind, DefectSpec, ObjectScript, SceneScript,
        Shape, Side,
    };

    fn bundle_with_areas(side_per_frame: &[usize]) -> SequenceBundle {
        // Nested squares anchored at (0, 0): each frame's mask is the
        // side x side corner block, so any smaller mask is a subset of any
        // larger one.
        let dim = 16;
        let masks: Vec<LabelMap> = side_per_frame
            .iter()
            .map(|&side| LabelMap::from_fn(dim, dim, |r, c| if r < side && c < side { 1 } else { 0 }))
            .collect();
        let frames = vec![RgbFrame::from_fn(dim, dim, |_, _| [0, 0, 0]); masks.len()];
        SequenceBundle::new("areas", frames, masks)
    }

    #[test]
    fn mou_matches_hand_computed_union() {
        // Areas 16, 16, 4; the frame-2 mask nests inside frame 0's.
        let bundle = bundle_with_areas(&[4, 4, 2]);
        let value = mou(&bundle, 1, 2, 0, 3).unwrap();
        assert!((value - 0.25).abs() < 1e-12);
        // The intact frames sit at 1.
        assert_eq!(mou(&bundle, 1, 0, 0, 3).unwrap(), 1.0);
    }

    #[test]
    fn mou_absent_object_is_none() {
        let bundle = bundle_with_areas(&[0, 0, 0]);
        assert_eq!(mou(&bundle, 1, 1, 0, 3), None);
    }

    #[test]
    fn mou_is_one_when_frame_covers_union() {
        let bundle = bundle_with_areas(&[5, 5, 5, 5]);
        for t in 0..3 {
            assert_eq!(mou(&bundle, 1, t, 0, 3).unwrap(), 1.0);
        }
    }

    #[test]
    fn detect_flags_the_single_shrunken_frame() {
        // 6x6 block in every frame except frame 5, which keeps only a 2x2
        // corner. Every 5-window containing frame 5 votes against it.
        let sides = [6, 6, 6, 6, 6, 2, 6, 6, 6, 6];
        let bundle = bundle_with_areas(&sides);
        let detection = detect_inconsistent(&bundle, 1, &TcConfig::default());
        assert_eq!(detection.flagged.iter().copied().collect::<Vec<_>>(), vec![5]);
        assert!(detection.zoom_excluded.is_empty());
    }

    #[test]
    fn detect_ignores_constant_sequences() {
        let bundle = bundle_with_areas(&[5; 12]);
        let detection = detect_inconsistent(&bundle, 1, &TcConfig::default());
        assert!(detection.flagged.is_empty());
        assert!(detection.zoom_excluded.is_empty());
    }

    #[test]
    fn detect_exempts_zoom_like_shrinkage() {
        // Monotone side lengths around a fixed corner anchor: centroids drift
        // as the square shrinks, so anchor them centrally instead.
        let dim = 32;
        let sides = [12usize, 11, 10, 9, 8, 7, 6, 5];
        let masks: Vec<LabelMap> = sides
            .iter()
            .map(|&side| {
                let lo = (dim - side) / 2;
                LabelMap::from_fn(dim, dim, |r, c| {
                    if (lo..lo + side).contains(&r) && (lo..lo + side).contains(&c) {
                        1
                    } else {
                        0
                    }
                })
            })
            .collect();
        let frames = vec![RgbFrame::from_fn(dim, dim, |_, _| [0, 0, 0]); masks.len()];
        let bundle = SequenceBundle::new("zoom", frames, masks);
        let detection = detect_inconsistent(&bundle, 1, &TcConfig::default());
        assert!(detection.flagged.is_empty(), "flagged: {:?}", detection.flagged);
        assert!(!detection.zoom_excluded.is_empty(), "zoom windows should have fired votes");
    }

    #[test]
    fn difference_region_is_order_insensitive() {
        let big = BinaryMask::from_fn(8, 8, |r, c| r < 6 && c < 6);
        let small = BinaryMask::from_fn(8, 8, |r, c| r < 3 && c < 6);
        let expected = big.subtract(&small);
        assert_eq!(difference_region(&big, &small), expected);
        assert_eq!(difference_region(&small, &big), expected);
    }

    #[test]
    fn occlusion_check_matches_hand_computed_distance() {
        // 6x6 vs concentric 4x4 -> 20-pixel ring; uniformly red vs uniformly
        // blue makes the normalized distance exactly 2/3 (R and B move their
        // whole mass, G stays put), which exceeds the large-object threshold.
        let dim = 12;
        let red = RgbFrame::from_fn(dim, dim, |_, _| [255, 0, 0]);
        let blue = RgbFrame::from_fn(dim, dim, |_, _| [0, 0, 255]);
        let big = BinaryMask::from_fn(dim, dim, |r, c| (3..9).contains(&r) && (3..9).contains(&c));
        let small = BinaryMask::from_fn(dim, dim, |r, c| (4..8).contains(&r) && (4..8).contains(&c));
        let cfg = TcConfig::default();
        assert!(occlusion_check(&red, &blue, &big, &small, &cfg));
        // Same colors on both sides: distance 0, no occlusion.
        assert!(!occlusion_check(&red, &red, &big, &small, &cfg));
        // Identical masks: empty difference region, never occluded.
        assert!(!occlusion_check(&red, &blue, &big, &big.clone(), &cfg));
    }

    #[test]
    fn occlusion_check_handles_fully_deleted_mask() {
        let dim = 16;
        let textured = RgbFrame::from_fn(dim, dim, |r, c| [(r * 16) as u8, (c * 16) as u8, 128]);
        let gray = RgbFrame::from_fn(dim, dim, |_, _| [128, 128, 128]);
        let mask = BinaryMask::from_fn(dim, dim, |r, c| (4..12).contains(&r) && (4..12).contains(&c));
        let empty = BinaryMask::empty(dim, dim);
        let cfg = TcConfig::default();
        // The frame where the object vanished shows occluder gray where the
        // neighbor shows object texture: occlusion.
        assert!(occlusion_check(&gray, &textured, &empty, &mask, &cfg));
        // Both empty: nothing to compare.
        assert!(!occlusion_check(&gray, &textured, &empty, &empty.clone(), &cfg));
    }

    fn static_scene(frames: usize) -> SceneScript {
        SceneScript {
            name: "static".into(),
            width: 48,
            height: 48,
            frames,
            seed: 23,
            background: Appearance { color: [40, 46, 60], noise: 18 },
            objects: vec![ObjectScript {
                id: 1,
                shape: Shape::Rect { width: 13.0, height: 13.0 },
                start: [24.0, 24.0],
                velocity: [0.0, 0.0],
                scale: 1.0,
                appearance: Appearance { color: [190, 90, 60], noise: 32 },
            }],
            defects: vec![],
        }
    }

    #[test]
    fn correct_frame_restores_a_dropped_half() {
        let clean = render(&static_scene(6)).unwrap();
        let broken = inject_defects(
            &clean,
            &[DefectSpec {
                object: 1,
                frame: 3,
                kind: DefectKind::DropPart { fraction: 0.5, side: Side::Right },
            }],
        )
        .unwrap();
        let mut os = broken.clone();
        let cfg = TcConfig::default();
        let outcome = correct_frame(&mut os, &broken, 1, 3, 2, &cfg);
        assert!(outcome.changed);
        assert_eq!(outcome.target_frame, Some(3));
        // The intact neighbor is untouched.
        assert_eq!(os.mask(2), broken.mask(2));
        // The repaired mask matches the clean ground truth closely.
        let j = crate::metrics::jaccard(&os.object_mask(3, 1), &clean.object_mask(3, 1));
        assert!(j >= 0.9, "J = {j}");
    }

    #[test]
    fn correct_frame_on_textureless_frames_is_uncorrectable() {
        let dim = 24;
        let flat = RgbFrame::from_fn(dim, dim, |_, _| [77, 77, 77]);
        let masks = vec![
            LabelMap::from_fn(dim, dim, |r, c| if r < 8 && c < 8 { 1 } else { 0 }),
            LabelMap::from_fn(dim, dim, |r, c| if r < 8 && c < 4 { 1 } else { 0 }),
        ];
        let bundle = SequenceBundle::new("flat", vec![flat.clone(), flat], masks);
        let mut os = bundle.clone();
        let outcome = correct_frame(&mut os, &bundle, 1, 1, 0, &TcConfig::default());
        assert!(outcome.uncorrectable);
        assert!(!outcome.changed);
        assert_eq!(os.masks(), bundle.masks());
    }

    #[test]
    fn run_tc_repairs_and_reports() {
        let clean = render(&static_scene(8)).unwrap();
        let broken = inject_defects(
            &clean,
            &[DefectSpec {
                object: 1,
                frame: 4,
                kind: DefectKind::DropPart { fraction: 0.5, side: Side::Left },
            }],
        )
        .unwrap();
        let cfg = TcConfig::default();
        let (repaired, report) = run_tc(&broken, &broken, &cfg);
        let j = crate::metrics::jaccard(&repaired.object_mask(4, 1), &clean.object_mask(4, 1));
        assert!(j >= 0.9, "J = {j}");
        let corrected: Vec<_> = report.with_status(TcStatus::Corrected).collect();
        assert!(corrected.iter().any(|e| e.object_id == 1 && e.frame == 4));
    }

    #[test]
    fn run_tc_is_idempotent_on_its_output() {
        let clean = render(&static_scene(8)).unwrap();
        let broken = inject_defects(
            &clean,
            &[DefectSpec {
                object: 1,
                frame: 4,
                kind: DefectKind::DropPart { fraction: 0.4, side: Side::Top },
            }],
        )
        .unwrap();
        let cfg = TcConfig::default();
        let (repaired, _) = run_tc(&broken, &broken, &cfg);
        let (again, report) = run_tc(&repaired, &broken, &cfg);
        assert_eq!(again.masks(), repaired.masks());
        assert_eq!(report.count(TcStatus::Corrected), 0);
    }

    #[test]
    fn reports_render_as_lines() {
        let report = InconsistencyReport {
            entries: vec![ReportEntry {
                object_id: 2,
                frame: 7,
                pass: 1,
                status: TcStatus::Corrected,
                details: "repaired 31 px".into(),
            }],
        };
        assert_eq!(
            report.to_lines(),
            "pass=1 object=2 frame=7 status=corrected details=\"repaired 31 px\"\n"
        );
    }
}
