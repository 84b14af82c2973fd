//! Scripted synthetic scenes with known ground truth, plus controlled defect
//! injection. The test suites (and the `synth` CLI command) use these to
//! manufacture sequences where the correct repair is known exactly.
//!
//! A scene is a handful of textured shapes moving over a textured background.
//! Texture comes from a seeded per-pixel hash, anchored to object-local
//! coordinates so a moving object carries its texture with it — that is what
//! gives the optical-flow estimator something to track. Rendering is fully
//! deterministic: same script, same bytes.
//!
//! Scripts are plain TOML (see [`SceneScript`] field docs for the schema):
//!
//! ```toml
//! name = "slide"
//! width = 64
//! height = 48
//! frames = 8
//! seed = 11
//! background = { color = [30, 40, 50], noise = 14 }
//!
//! [[objects]]
//! id = 1
//! shape = { kind = "rect", width = 13.0, height = 11.0 }
//! start = [24.0, 20.0]
//! velocity = [0.0, 2.0]
//! color = [200, 90, 60]
//! noise = 30
//!
//! [[defects]]
//! object = 1
//! frame = 4
//! defect = "drop_part"
//! fraction = 0.5
//! side = "right"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mask::{LabelMap, ObjectId, RgbFrame, SequenceBundle, BACKGROUND};

/// Base color plus hash-noise amplitude. `noise = 0` renders a flat color;
/// larger values add +/-noise brightness speckle (same offset on all three
/// channels, so hue is preserved).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appearance {
    pub color: [u8; 3],
    #[serde(default)]
    pub noise: u8,
}

/// Shape of a scripted object, centered on its per-frame position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Rect { width: f64, height: f64 },
    Disk { radius: f64 },
}

/// One scripted object: a shape with a linear trajectory and a per-frame
/// uniform scale factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectScript {
    /// Object id written into the ground-truth label maps. Non-zero, unique.
    pub id: ObjectId,
    pub shape: Shape,
    /// Center position `(row, col)` at frame 0.
    pub start: [f64; 2],
    /// Center displacement `(rows, cols)` per frame.
    #[serde(default)]
    pub velocity: [f64; 2],
    /// Uniform size factor applied per frame: at frame `t` the shape is
    /// scaled by `scale^t`. 1.0 keeps the size fixed.
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(flatten)]
    pub appearance: Appearance,
}

fn default_scale() -> f64 {
    1.0
}

/// Which edge of an object [`DefectKind::DropPart`] eats from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Top,
    Bottom,
}

/// A mask corruption to inject into an otherwise clean sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "defect", rename_all = "snake_case")]
pub enum DefectKind {
    /// Deletes the given fraction of the object's pixels, eating inward from
    /// `side`. Only the mask changes; the frame keeps the object's colors
    /// (the object is still *visible*, its label is just missing).
    DropPart { fraction: f64, side: Side },
    /// Relabels the rightmost fraction of the object's pixels to `new_id`,
    /// simulating a proposal that split one object in two.
    Oversplit { new_id: ObjectId, fraction: f64 },
    /// Paints the object's pixels with a solid color in the frame *and*
    /// clears its mask: a true occlusion, where the object really is hidden.
    Occlude { color: [u8; 3] },
}

/// A defect bound to one object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    pub object: ObjectId,
    pub frame: usize,
    #[serde(flatten)]
    pub kind: DefectKind,
}

/// A complete scene description; deserializable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    pub name: String,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub seed: u64,
    pub background: Appearance,
    pub objects: Vec<ObjectScript>,
    /// Defects applied by [`realize`] (ignored by [`render`]).
    #[serde(default)]
    pub defects: Vec<DefectSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum ScriptError {
    #[error("canvas must be at least 1x1 with at least one frame")]
    EmptyScene,
    #[error("object id 0 is reserved for the background")]
    ZeroId,
    #[error("duplicate object id {0}")]
    DuplicateId(ObjectId),
    #[error("object {object} has non-positive size or scale")]
    BadShape { object: ObjectId },
    #[error("object {object} leaves the canvas at frame {frame}")]
    OutOfCanvas { object: ObjectId, frame: usize },
    #[error("fraction {value} out of range (must be strictly between 0 and 1)")]
    BadFraction { value: f64 },
    #[error("defect frame {frame} out of range for a {len}-frame sequence")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("object {object} has no pixels at frame {frame}")]
    MissingTarget { object: ObjectId, frame: usize },
    #[error("oversplit target id {0} already exists in the sequence")]
    IdCollision(ObjectId),
    #[error("failed to read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse script: {0}")]
    Parse(#[from] toml::de::Error),
}

/// SplitMix64 — a tiny stateless hash giving each (seed, stream, row, col)
/// its own reproducible pseudo-random value.
fn pixel_hash(seed: u64, stream: u64, row: i64, col: i64) -> u64 {
    let mut x = seed
        ^ stream.wrapping_mul(0x9E3779B97F4A7C15)
        ^ (row as u64).wrapping_mul(0xBF58476D1CE4E5B9)
        ^ (col as u64).wrapping_mul(0x94D049BB133111EB);
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58476D1CE4E5B9);
    x ^= x >> 27;
    x = x.wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Brightness offset in [-amplitude, +amplitude].
fn noise_offset(hash: u64, amplitude: u8) -> i16 {
    if amplitude == 0 {
        return 0;
    }
    let span = 2 * amplitude as u64 + 1;
    (hash % span) as i16 - amplitude as i16
}

fn shade(color: [u8; 3], offset: i16) -> [u8; 3] {
    [
        (color[0] as i16 + offset).clamp(0, 255) as u8,
        (color[1] as i16 + offset).clamp(0, 255) as u8,
        (color[2] as i16 + offset).clamp(0, 255) as u8,
    ]
}

struct Pose {
    center: (f64, f64),
    /// Half extents (rows, cols) for bounds checking.
    half: (f64, f64),
}

fn pose_at(obj: &ObjectScript, t: usize) -> Pose {
    let s = obj.scale.powi(t as i32);
    let center = (
        obj.start[0] + t as f64 * obj.velocity[0],
        obj.start[1] + t as f64 * obj.velocity[1],
    );
    let half = match obj.shape {
        Shape::Rect { width, height } => (height * s / 2.0, width * s / 2.0),
        Shape::Disk { radius } => (radius * s, radius * s),
    };
    Pose { center, half }
}

fn inside(obj: &ObjectScript, pose: &Pose, r: usize, c: usize) -> bool {
    let dr = r as f64 - pose.center.0;
    let dc = c as f64 - pose.center.1;
    match obj.shape {
        Shape::Rect { .. } => dr.abs() < pose.half.0 && dc.abs() < pose.half.1,
        Shape::Disk { .. } => dr * dr + dc * dc <= pose.half.0 * pose.half.0,
    }
}

fn validate(script: &SceneScript) -> Result<(), ScriptError> {
    if script.width == 0 || script.height == 0 || script.frames == 0 {
        return Err(ScriptError::EmptyScene);
    }
    let mut seen = std::collections::BTreeSet::new();
    for obj in &script.objects {
        if obj.id == BACKGROUND {
            return Err(ScriptError::ZeroId);
        }
        if !seen.insert(obj.id) {
            return Err(ScriptError::DuplicateId(obj.id));
        }
        let positive = match obj.shape {
            Shape::Rect { width, height } => width > 0.0 && height > 0.0,
            Shape::Disk { radius } => radius > 0.0,
        };
        if !positive || obj.scale <= 0.0 {
            return Err(ScriptError::BadShape { object: obj.id });
        }
        for t in 0..script.frames {
            let pose = pose_at(obj, t);
            let fits = pose.center.0 - pose.half.0 >= 0.0
                && pose.center.1 - pose.half.1 >= 0.0
                && pose.center.0 + pose.half.0 <= (script.height - 1) as f64
                && pose.center.1 + pose.half.1 <= (script.width - 1) as f64;
            if !fits {
                return Err(ScriptError::OutOfCanvas { object: obj.id, frame: t });
            }
        }
    }
    Ok(())
}

/// Renders the clean scene: textured frames and exact ground-truth label
/// maps. Objects are painted in script order, so a later object wins where
/// shapes overlap.
pub fn render(script: &SceneScript) -> Result<SequenceBundle, ScriptError> {
    validate(script)?;
    let (w, h) = (script.width, script.height);
    let mut frames = Vec::with_capacity(script.frames);
    let mut masks = Vec::with_capacity(script.frames);
    for t in 0..script.frames {
        let poses: Vec<Pose> = script.objects.iter().map(|o| pose_at(o, t)).collect();
        let mut frame = RgbFrame::from_fn(w, h, |r, c| {
            let offset = noise_offset(
                pixel_hash(script.seed, 0, r as i64, c as i64),
                script.background.noise,
            );
            shade(script.background.color, offset)
        });
        let mut map = LabelMap::filled(w, h, BACKGROUND);
        for (obj, pose) in script.objects.iter().zip(&poses) {
            // Texture is sampled in object-local coordinates so it rides
            // along with the object under translation.
            let anchor_r = pose.center.0.round() as i64;
            let anchor_c = pose.center.1.round() as i64;
            let r0 = (pose.center.0 - pose.half.0).floor().max(0.0) as usize;
            let r1 = (pose.center.0 + pose.half.0).ceil().min((h - 1) as f64) as usize;
            let c0 = (pose.center.1 - pose.half.1).floor().max(0.0) as usize;
            let c1 = (pose.center.1 + pose.half.1).ceil().min((w - 1) as f64) as usize;
            for r in r0..=r1 {
                for c in c0..=c1 {
                    if inside(obj, pose, r, c) {
                        let offset = noise_offset(
                            pixel_hash(
                                script.seed,
                                obj.id as u64,
                                r as i64 - anchor_r,
                                c as i64 - anchor_c,
                            ),
                            obj.appearance.noise,
                        );
                        frame.set_rgb(r, c, shade(obj.appearance.color, offset));
                        map.set_label(r, c, obj.id);
                    }
                }
            }
        }
        frames.push(frame);
        masks.push(map);
    }
    Ok(SequenceBundle::new(script.name.clone(), frames, masks))
}

/// Applies defects to a copy of `bundle` (frames are only touched by
/// occlusions; the other defects corrupt masks only).
pub fn inject_defects(
    bundle: &SequenceBundle,
    defects: &[DefectSpec],
) -> Result<SequenceBundle, ScriptError> {
    let mut frames = bundle.frames().to_vec();
    let mut masks = bundle.masks().to_vec();
    for spec in defects {
        if spec.frame >= masks.len() {
            return Err(ScriptError::FrameOutOfRange { frame: spec.frame, len: masks.len() });
        }
        let map = &mut masks[spec.frame];
        let mut pixels: Vec<(usize, usize)> = (0..map.height())
            .flat_map(|r| (0..map.width()).map(move |c| (r, c)))
            .filter(|&(r, c)| map.label(r, c) == spec.object)
            .collect();
        if pixels.is_empty() {
            return Err(ScriptError::MissingTarget { object: spec.object, frame: spec.frame });
        }
        match spec.kind {
            DefectKind::DropPart { fraction, side } => {
                let k = part_size(fraction, pixels.len())?;
                sort_from_side(&mut pixels, side);
                for &(r, c) in pixels.iter().take(k) {
                    map.set_label(r, c, BACKGROUND);
                }
            }
            DefectKind::Oversplit { new_id, fraction } => {
                if new_id == BACKGROUND {
                    return Err(ScriptError::ZeroId);
                }
                if new_id == spec.object || bundle.object_ids().contains(&new_id) {
                    return Err(ScriptError::IdCollision(new_id));
                }
                let k = part_size(fraction, pixels.len())?;
                sort_from_side(&mut pixels, Side::Right);
                for &(r, c) in pixels.iter().take(k) {
                    map.set_label(r, c, new_id);
                }
            }
            DefectKind::Occlude { color } => {
                for &(r, c) in &pixels {
                    frames[spec.frame].set_rgb(r, c, color);
                    map.set_label(r, c, BACKGROUND);
                }
            }
        }
    }
    Ok(SequenceBundle::new(bundle.name.clone(), frames, masks))
}

/// Pixel budget for a fractional defect: `round(fraction * area)`, clamped so
/// the defect always removes something and never the whole object.
fn part_size(fraction: f64, area: usize) -> Result<usize, ScriptError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ScriptError::BadFraction { value: fraction });
    }
    Ok(((fraction * area as f64).round() as usize).clamp(1, area - 1))
}

/// Orders pixels so the first ones are the nearest to the given side.
/// Total and deterministic (ties broken by the other coordinate).
fn sort_from_side(pixels: &mut [(usize, usize)], side: Side) {
    match side {
        Side::Left => pixels.sort_by_key(|&(r, c)| (c, r)),
        Side::Right => pixels.sort_by_key(|&(r, c)| (std::cmp::Reverse(c), r)),
        Side::Top => pixels.sort_by_key(|&(r, c)| (r, c)),
        Side::Bottom => pixels.sort_by_key(|&(r, c)| (std::cmp::Reverse(r), c)),
    }
}

/// Renders the clean scene and the defect-injected variant in one call.
pub fn realize(script: &SceneScript) -> Result<(SequenceBundle, SequenceBundle), ScriptError> {
    let clean = render(script)?;
    let defective = inject_defects(&clean, &script.defects)?;
    Ok((clean, defective))
}

/// Loads a [`SceneScript`] from a TOML file.
pub fn load_script(path: impl AsRef<Path>) -> Result<SceneScript, ScriptError> {
    let text = std::fs::read_to_string(path)?;
    Ok(toml::from_str(&text)?)
}
