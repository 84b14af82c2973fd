//! Pixel-level types shared by every stage: RGB frames, per-pixel object
//! label maps, single-object binary masks, and the bundle tying a sequence's
//! frames and masks together.
//!
//! Coordinates are `(row, col)` with the origin at the top-left corner.
//! All pixel buffers are row-major. The binary set operations require both
//! operands to share dimensions; mixing sizes is a programming error and
//! panics rather than returning a result.

use std::collections::BTreeSet;

/// Object identifier as stored in a label map. `0` is reserved for the
/// background; real objects use `1..`. The in-memory type is wider than the
/// 8-bit palette indices used on disk so that oversized registries can at
/// least be represented (saving then fails with an explicit error).
pub type ObjectId = u16;

/// The reserved background label. Never selectable, never repaired.
pub const BACKGROUND: ObjectId = 0;

/// An 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbFrame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbFrame {
    /// Wraps a raw row-major RGB buffer. Panics if the buffer length does not
    /// equal `width * height * 3`.
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(
            pixels.len(),
            width * height * 3,
            "RGB buffer length {} does not match {}x{} frame",
            pixels.len(),
            width,
            height
        );
        Self { width, height, pixels }
    }

    /// Builds a frame by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for r in 0..height {
            for c in 0..width {
                pixels.extend_from_slice(&f(r, c));
            }
        }
        Self { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rgb(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_rgb(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Raw row-major RGB bytes.
    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }
}

/// Per-pixel object ids for one frame. `0` is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<ObjectId>,
}

impl LabelMap {
    /// Wraps a raw row-major label buffer. Panics on length mismatch.
    pub fn new(width: usize, height: usize, labels: Vec<ObjectId>) -> Self {
        assert_eq!(
            labels.len(),
            width * height,
            "label buffer length {} does not match {}x{} map",
            labels.len(),
            width,
            height
        );
        Self { width, height, labels }
    }

    /// All-background map.
    pub fn filled(width: usize, height: usize, id: ObjectId) -> Self {
        Self { width, height, labels: vec![id; width * height] }
    }

    /// Builds a map by evaluating `f(row, col)` for every pixel.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> ObjectId) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                labels.push(f(r, c));
            }
        }
        Self { width, height, labels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn label(&self, row: usize, col: usize) -> ObjectId {
        self.labels[row * self.width + col]
    }

    pub fn set_label(&mut self, row: usize, col: usize, id: ObjectId) {
        self.labels[row * self.width + col] = id;
    }

    pub fn labels(&self) -> &[ObjectId] {
        &self.labels
    }

    /// Distinct non-background ids present in this map, ascending.
    pub fn ids_present(&self) -> BTreeSet<ObjectId> {
        self.labels.iter().copied().filter(|&id| id != BACKGROUND).collect()
    }

    /// The binary mask of one object: true exactly where the map carries `id`.
    /// Extracting an absent id yields an empty mask.
    pub fn extract_object(&self, id: ObjectId) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            bits: self.labels.iter().map(|&l| l == id).collect(),
        }
    }

    /// Number of pixels carrying `id`.
    pub fn count(&self, id: ObjectId) -> usize {
        self.labels.iter().filter(|&&l| l == id).count()
    }
}

/// A single-object (or single-region) binary mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self { width, height, bits: vec![false; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self { width, height, bits }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    /// Number of true pixels.
    pub fn area(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    /// Iterates `(row, col)` of every true pixel in row-major order.
    pub fn true_pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / w, i % w))
    }

    fn check_dims(&self, other: &Self, op: &str) {
        assert!(
            self.width == other.width && self.height == other.height,
            "{op}: dimension mismatch {}x{} vs {}x{}",
            self.width,
            self.height,
            other.width,
            other.height
        );
    }

    pub fn union(&self, other: &Self) -> Self {
        self.check_dims(other, "union");
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a | b).collect(),
        }
    }

    pub fn intersect(&self, other: &Self) -> Self {
        self.check_dims(other, "intersect");
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a & b).collect(),
        }
    }

    /// Set difference `self \ other`.
    pub fn subtract(&self, other: &Self) -> Self {
        self.check_dims(other, "subtract");
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a & !b).collect(),
        }
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&a| !a).collect(),
        }
    }

    /// The mask translated by whole pixels; pixels shifted outside the raster
    /// are dropped.
    pub fn translated(&self, drow: isize, dcol: isize) -> Self {
        let mut out = Self::empty(self.width, self.height);
        for (r, c) in self.true_pixels() {
            let tr = r as isize + drow;
            let tc = c as isize + dcol;
            if tr >= 0 && tc >= 0 && (tr as usize) < self.height && (tc as usize) < self.width {
                out.set(tr as usize, tc as usize, true);
            }
        }
        out
    }
}

/// A named sequence: frames, one label map per frame, and the registry of
/// object ids observed anywhere in the sequence.
///
/// Invariants enforced at construction: at least one frame, exactly one mask
/// per frame, all frames and masks share dimensions. The registry is derived
/// by scanning the maps, so every non-background label is always registered.
#[derive(Debug, Clone)]
pub struct SequenceBundle {
    pub name: String,
    frames: Vec<RgbFrame>,
    masks: Vec<LabelMap>,
    object_ids: BTreeSet<ObjectId>,
}

impl SequenceBundle {
    pub fn new(name: impl Into<String>, frames: Vec<RgbFrame>, masks: Vec<LabelMap>) -> Self {
        assert!(!frames.is_empty(), "a sequence needs at least one frame");
        assert_eq!(frames.len(), masks.len(), "one mask per frame required");
        let (w, h) = (frames[0].width(), frames[0].height());
        for (i, f) in frames.iter().enumerate() {
            assert!(
                f.width() == w && f.height() == h,
                "frame {i} is {}x{}, expected {w}x{h}",
                f.width(),
                f.height()
            );
        }
        for (i, m) in masks.iter().enumerate() {
            assert!(
                m.width() == w && m.height() == h,
                "mask {i} is {}x{}, expected {w}x{h}",
                m.width(),
                m.height()
            );
        }
        let object_ids = masks.iter().flat_map(|m| m.ids_present()).collect();
        Self { name: name.into(), frames, masks, object_ids }
    }

    /// Number of frames.
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction requires at least one frame
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn frame(&self, t: usize) -> &RgbFrame {
        &self.frames[t]
    }

    pub fn frames(&self) -> &[RgbFrame] {
        &self.frames
    }

    pub fn mask(&self, t: usize) -> &LabelMap {
        &self.masks[t]
    }

    pub fn masks(&self) -> &[LabelMap] {
        &self.masks
    }

    /// Mutable access to one frame's label map. The registry is not rescanned;
    /// callers must only write ids that are already registered (the repair
    /// stage only ever does that).
    pub fn mask_mut(&mut self, t: usize) -> &mut LabelMap {
        &mut self.masks[t]
    }

    /// Ids observed anywhere in the sequence, ascending. Background excluded.
    pub fn object_ids(&self) -> &BTreeSet<ObjectId> {
        &self.object_ids
    }

    /// Convenience: binary mask of `id` at frame `t`.
    pub fn object_mask(&self, t: usize, id: ObjectId) -> BinaryMask {
        self.masks[t].extract_object(id)
    }
}
