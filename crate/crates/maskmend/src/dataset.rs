//! On-disk sequence layout and mask I/O.
//!
//! Sequences live in a DAVIS-style directory tree: RGB frames under
//! `JPEGImages/<sequence>/`, proposal masks under `RawMasks/<sequence>/`,
//! ground truth under `Annotations/<sequence>/`, and tool output under
//! `Results/<sequence>/`. Files are named by 5-digit zero-padded frame index
//! (`00000.jpg`, `00001.png`, ...). Frames may be JPEG or PNG; masks are
//! 8-bit palette PNGs whose palette *index* is the object id — the palette
//! colors are only for human viewing and are ignored on load.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::mask::{LabelMap, ObjectId, RgbFrame, SequenceBundle};

/// Root directory plus the four standard sub-trees. Field defaults follow the
/// DAVIS convention; override them for datasets that diverge.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetLayout {
    pub root: PathBuf,
    pub frames_subdir: String,
    pub raw_masks_subdir: String,
    pub gt_subdir: String,
    pub output_subdir: String,
}

impl DatasetLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            frames_subdir: "JPEGImages".into(),
            raw_masks_subdir: "RawMasks".into(),
            gt_subdir: "Annotations".into(),
            output_subdir: "Results".into(),
        }
    }

    pub fn frames_dir(&self, sequence: &str) -> PathBuf {
        self.root.join(&self.frames_subdir).join(sequence)
    }

    pub fn masks_dir(&self, source: MaskSource, sequence: &str) -> PathBuf {
        let sub = match source {
            MaskSource::Raw => &self.raw_masks_subdir,
            MaskSource::GroundTruth => &self.gt_subdir,
            MaskSource::Output => &self.output_subdir,
        };
        self.root.join(sub).join(sequence)
    }
}

/// Which mask tree to read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    Raw,
    GroundTruth,
    Output,
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("directory not found: {0}")]
    MissingDir(PathBuf),
    #[error("no frame files found in {0}")]
    EmptySequence(PathBuf),
    #[error("frame index {index} missing in {dir} (indices must be contiguous from 0)")]
    IndexGap { dir: PathBuf, index: usize },
    #[error("frame index {index} appears more than once in {dir}")]
    DuplicateIndex { dir: PathBuf, index: usize },
    #[error("frame/mask count mismatch: {frames} frames vs {masks} masks for sequence {sequence}")]
    CountMismatch { sequence: String, frames: usize, masks: usize },
    #[error("{path}: dimensions {got_w}x{got_h} do not match the sequence's {want_w}x{want_h}")]
    DimensionMismatch { path: PathBuf, got_w: usize, got_h: usize, want_w: usize, want_h: usize },
    #[error("failed to decode image {path}: {source}")]
    FrameDecode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("failed to decode mask {path}: {source}")]
    MaskDecode {
        path: PathBuf,
        #[source]
        source: png::DecodingError,
    },
    #[error("mask {path} is not an 8-bit-or-narrower palette or grayscale PNG")]
    UnsupportedMaskFormat { path: PathBuf },
    #[error("object id {id} cannot be written to an 8-bit palette PNG")]
    UnencodableId { id: ObjectId },
    #[error("failed to encode mask {path}: {source}")]
    MaskEncode {
        path: PathBuf,
        #[source]
        source: png::EncodingError,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// The standard 256-entry id-to-color palette (bit-interleaved, as used by
/// the VOC and DAVIS benchmarks): id 0 is black, 1 dark red, 2 dark green...
pub fn davis_palette() -> [[u8; 3]; 256] {
    let mut palette = [[0u8; 3]; 256];
    for (i, entry) in palette.iter_mut().enumerate() {
        let mut id = i;
        for bit in 0..8 {
            entry[0] |= (((id >> 0) & 1) as u8) << (7 - bit);
            entry[1] |= (((id >> 1) & 1) as u8) << (7 - bit);
            entry[2] |= (((id >> 2) & 1) as u8) << (7 - bit);
            id >>= 3;
        }
    }
    palette
}

/// Lists sequence names (subdirectories) under one of the mask trees,
/// sorted for deterministic iteration.
pub fn list_sequences(layout: &DatasetLayout, source: MaskSource) -> Result<Vec<String>, DatasetError> {
    let dir = layout.root.join(match source {
        MaskSource::Raw => &layout.raw_masks_subdir,
        MaskSource::GroundTruth => &layout.gt_subdir,
        MaskSource::Output => &layout.output_subdir,
    });
    if !dir.is_dir() {
        return Err(DatasetError::MissingDir(dir));
    }
    let mut names = Vec::new();
    for entry in std::fs::read_dir(&dir)? {
        let entry = entry?;
        if entry.file_type()?.is_dir() {
            if let Ok(name) = entry.file_name().into_string() {
                names.push(name);
            }
        }
    }
    names.sort();
    Ok(names)
}

/// Collects `<index>.<ext>` files with 5-digit indices from `dir`, verifying
/// the indices are contiguous from zero. Non-matching filenames are ignored
/// (reports, hidden files and the like).
fn indexed_files(dir: &Path, extensions: &[&str]) -> Result<Vec<PathBuf>, DatasetError> {
    if !dir.is_dir() {
        return Err(DatasetError::MissingDir(dir.to_path_buf()));
    }
    let mut found: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let (Some(stem), Some(ext)) = (
            path.file_stem().and_then(|s| s.to_str()),
            path.extension().and_then(|s| s.to_str()),
        ) else {
            continue;
        };
        if stem.len() != 5 || !extensions.iter().any(|e| ext.eq_ignore_ascii_case(e)) {
            continue;
        }
        if let Ok(index) = stem.parse::<usize>() {
            found.push((index, path));
        }
    }
    if found.is_empty() {
        return Err(DatasetError::EmptySequence(dir.to_path_buf()));
    }
    found.sort();
    for (expected, (index, _)) in found.iter().enumerate() {
        if *index > expected {
            return Err(DatasetError::IndexGap { dir: dir.to_path_buf(), index: expected });
        }
        if *index < expected {
            return Err(DatasetError::DuplicateIndex { dir: dir.to_path_buf(), index: *index });
        }
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

fn load_frame(path: &Path) -> Result<RgbFrame, DatasetError> {
    let img = image::open(path)
        .map_err(|source| DatasetError::FrameDecode { path: path.to_path_buf(), source })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(RgbFrame::new(w, h, img.into_raw()))
}

/// Decodes a mask PNG to a label map. Accepts 1/2/4/8-bit palette images
/// (palette index = id) and 8-bit grayscale (gray value = id).
fn load_mask(path: &Path) -> Result<LabelMap, DatasetError> {
    let file = File::open(path).map_err(DatasetError::Io)?;
    let mut decoder = png::Decoder::new(file);
    // Keep palette indices as raw data instead of expanding to RGB.
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|source| DatasetError::MaskDecode { path: path.to_path_buf(), source })?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|source| DatasetError::MaskDecode { path: path.to_path_buf(), source })?;
    let (w, h) = (info.width as usize, info.height as usize);
    let bits = info.bit_depth as usize;
    let supported = matches!(info.color_type, png::ColorType::Indexed)
        && matches!(bits, 1 | 2 | 4 | 8)
        || matches!(info.color_type, png::ColorType::Grayscale) && bits == 8;
    if !supported {
        return Err(DatasetError::UnsupportedMaskFormat { path: path.to_path_buf() });
    }
    let row_bytes = info.line_size;
    let mut labels = Vec::with_capacity(w * h);
    for r in 0..h {
        let row = &buf[r * row_bytes..(r + 1) * row_bytes];
        if bits == 8 {
            labels.extend(row[..w].iter().map(|&b| b as ObjectId));
        } else {
            // Packed sub-byte indices, leftmost pixel in the high bits.
            let per_byte = 8 / bits;
            let mask = (1u16 << bits) - 1;
            for c in 0..w {
                let byte = row[c / per_byte] as u16;
                let shift = 8 - bits * (c % per_byte + 1);
                labels.push((byte >> shift) & mask);
            }
        }
    }
    Ok(LabelMap::new(w, h, labels))
}

/// Loads a sequence: frames from the frames tree, masks from the chosen tree.
/// Frame and mask counts must agree and all images must share dimensions.
pub fn load_sequence(
    layout: &DatasetLayout,
    sequence: &str,
    source: MaskSource,
) -> Result<SequenceBundle, DatasetError> {
    let frames_dir = layout.frames_dir(sequence);
    let masks_dir = layout.masks_dir(source, sequence);
    let frame_paths = indexed_files(&frames_dir, &["jpg", "jpeg", "png"])?;
    let mask_paths = indexed_files(&masks_dir, &["png"])?;
    if frame_paths.len() != mask_paths.len() {
        return Err(DatasetError::CountMismatch {
            sequence: sequence.to_string(),
            frames: frame_paths.len(),
            masks: mask_paths.len(),
        });
    }
    let mut frames = Vec::with_capacity(frame_paths.len());
    let mut masks = Vec::with_capacity(mask_paths.len());
    let mut dims: Option<(usize, usize)> = None;
    for path in &frame_paths {
        let frame = load_frame(path)?;
        let (w, h) = (frame.width(), frame.height());
        match dims {
            None => dims = Some((w, h)),
            Some((ww, hh)) if (w, h) != (ww, hh) => {
                return Err(DatasetError::DimensionMismatch {
                    path: path.clone(),
                    got_w: w,
                    got_h: h,
                    want_w: ww,
                    want_h: hh,
                });
            }
            _ => {}
        }
        frames.push(frame);
    }
    let (want_w, want_h) = dims.expect("at least one frame");
    for path in &mask_paths {
        let mask = load_mask(path)?;
        if (mask.width(), mask.height()) != (want_w, want_h) {
            return Err(DatasetError::DimensionMismatch {
                path: path.clone(),
                got_w: mask.width(),
                got_h: mask.height(),
                want_w,
                want_h,
            });
        }
        masks.push(mask);
    }
    Ok(SequenceBundle::new(sequence, frames, masks))
}

/// Writes the bundle's label maps into the output tree as 8-bit palette PNGs
/// (index = id, standard palette). Fails with [`DatasetError::UnencodableId`]
/// if any id exceeds 255.
pub fn save_masks(
    bundle: &SequenceBundle,
    layout: &DatasetLayout,
    sequence: &str,
) -> Result<(), DatasetError> {
    if let Some(&id) = bundle.object_ids().iter().find(|&&id| id > 255) {
        return Err(DatasetError::UnencodableId { id });
    }
    let dir = layout.masks_dir(MaskSource::Output, sequence);
    std::fs::create_dir_all(&dir)?;
    let palette: Vec<u8> = davis_palette().into_iter().flatten().collect();
    for (t, map) in bundle.masks().iter().enumerate() {
        let path = dir.join(format!("{t:05}.png"));
        let file = File::create(&path)?;
        let mut encoder =
            png::Encoder::new(BufWriter::new(file), map.width() as u32, map.height() as u32);
        encoder.set_color(png::ColorType::Indexed);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_palette(palette.clone());
        let mut writer = encoder
            .write_header()
            .map_err(|source| DatasetError::MaskEncode { path: path.clone(), source })?;
        let data: Vec<u8> = map.labels().iter().map(|&id| id as u8).collect();
        writer
            .write_image_data(&data)
            .map_err(|source| DatasetError::MaskEncode { path: path.clone(), source })?;
    }
    Ok(())
}

/// Writes the bundle's frames into the frames tree as PNGs (used by the
/// synthetic-scene command; real datasets normally ship their own frames).
pub fn save_frames(
    bundle: &SequenceBundle,
    layout: &DatasetLayout,
    sequence: &str,
) -> Result<(), DatasetError> {
    let dir = layout.frames_dir(sequence);
    std::fs::create_dir_all(&dir)?;
    for (t, frame) in bundle.frames().iter().enumerate() {
        let path = dir.join(format!("{t:05}.png"));
        let img: image::RgbImage = image::ImageBuffer::from_raw(
            frame.width() as u32,
            frame.height() as u32,
            frame.as_bytes().to_vec(),
        )
        .expect("frame buffer size");
        img.save(&path)
            .map_err(|source| DatasetError::FrameDecode { path: path.clone(), source })?;
    }
    Ok(())
}

/// Writes label maps into an arbitrary tree of the layout (the synth command
/// uses this to populate RawMasks and Annotations).
pub fn save_masks_to(
    bundle: &SequenceBundle,
    layout: &DatasetLayout,
    sequence: &str,
    source: MaskSource,
) -> Result<(), DatasetError> {
    // Reuse the output writer by temporarily pointing the layout at the tree.
    let mut redirected = layout.clone();
    redirected.output_subdir = match source {
        MaskSource::Raw => layout.raw_masks_subdir.clone(),
        MaskSource::GroundTruth => layout.gt_subdir.clone(),
        MaskSource::Output => layout.output_subdir.clone(),
    };
    save_masks(bundle, &redirected, sequence)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::RgbFrame;

    fn toy_bundle(n: usize) -> SequenceBundle {
        let frames: Vec<RgbFrame> = (0..n)
            .map(|t| RgbFrame::from_fn(10, 8, |r, c| [(r * 20 + t) as u8, (c * 25) as u8, 77]))
            .collect();
        let masks: Vec<LabelMap> = (0..n)
            .map(|t| {
                LabelMap::from_fn(10, 8, |r, c| {
                    if r < 3 && c >= t && c < t + 3 {
                        1
                    } else if r > 5 {
                        4
                    } else {
                        0
                    }
                })
            })
            .collect();
        SequenceBundle::new("toy", frames, masks)
    }

    #[test]
    fn palette_matches_reference_values() {
        let p = davis_palette();
        assert_eq!(p[0], [0, 0, 0]);
        assert_eq!(p[1], [128, 0, 0]);
        assert_eq!(p[2], [0, 128, 0]);
        assert_eq!(p[3], [128, 128, 0]);
        assert_eq!(p[4], [0, 0, 128]);
        // Index 255 under the bit-interleave rule: bits spread over three
        // rounds give 224/224/192, not pure white.
        assert_eq!(p[255], [224, 224, 192]);
    }

    #[test]
    fn masks_round_trip_through_png() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let bundle = toy_bundle(3);
        save_masks(&bundle, &layout, "toy").unwrap();
        save_frames(&bundle, &layout, "toy").unwrap();
        let loaded = load_sequence(&layout, "toy", MaskSource::Output).unwrap();
        assert_eq!(loaded.masks(), bundle.masks());
        assert_eq!(loaded.frames(), bundle.frames());
        assert_eq!(loaded.object_ids(), bundle.object_ids());
    }

    #[test]
    fn index_gap_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let bundle = toy_bundle(3);
        save_masks(&bundle, &layout, "gap").unwrap();
        save_frames(&bundle, &layout, "gap").unwrap();
        std::fs::remove_file(layout.masks_dir(MaskSource::Output, "gap").join("00001.png")).unwrap();
        match load_sequence(&layout, "gap", MaskSource::Output) {
            Err(DatasetError::IndexGap { index: 1, .. }) => {}
            other => panic!("expected IndexGap, got {other:?}"),
        }
    }

    #[test]
    fn missing_directory_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        assert!(matches!(
            load_sequence(&layout, "nope", MaskSource::Raw),
            Err(DatasetError::MissingDir(_))
        ));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let bundle = toy_bundle(2);
        save_masks(&bundle, &layout, "dims").unwrap();
        save_frames(&bundle, &layout, "dims").unwrap();
        // Replace one mask with a differently-sized one.
        let rogue = SequenceBundle::new(
            "rogue",
            vec![RgbFrame::from_fn(5, 5, |_, _| [0, 0, 0])],
            vec![LabelMap::filled(5, 5, 1)],
        );
        let mut rogue_layout = layout.clone();
        rogue_layout.output_subdir = "Rogue".into();
        save_masks(&rogue, &rogue_layout, "dims").unwrap();
        std::fs::copy(
            rogue_layout.masks_dir(MaskSource::Output, "dims").join("00000.png"),
            layout.masks_dir(MaskSource::Output, "dims").join("00001.png"),
        )
        .unwrap();
        assert!(matches!(
            load_sequence(&layout, "dims", MaskSource::Output),
            Err(DatasetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn oversized_ids_refuse_to_save() {
        let frames = vec![RgbFrame::from_fn(4, 4, |_, _| [0, 0, 0])];
        let masks = vec![LabelMap::filled(4, 4, 300)];
        let bundle = SequenceBundle::new("big", frames, masks);
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        assert!(matches!(
            save_masks(&bundle, &layout, "big"),
            Err(DatasetError::UnencodableId { id: 300 })
        ));
    }

    #[test]
    fn stray_files_are_ignored_by_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        let bundle = toy_bundle(2);
        save_masks(&bundle, &layout, "toy").unwrap();
        save_frames(&bundle, &layout, "toy").unwrap();
        std::fs::write(
            layout.masks_dir(MaskSource::Output, "toy").join("report.txt"),
            "not a mask",
        )
        .unwrap();
        let loaded = load_sequence(&layout, "toy", MaskSource::Output).unwrap();
        assert_eq!(loaded.len(), 2);
    }

    #[test]
    fn list_sequences_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let layout = DatasetLayout::new(dir.path());
        for name in ["zebra", "apple", "mango"] {
            std::fs::create_dir_all(layout.masks_dir(MaskSource::Raw, name)).unwrap();
        }
        let names = list_sequences(&layout, MaskSource::Raw).unwrap();
        assert_eq!(names, vec!["apple", "mango", "zebra"]);
    }
}
