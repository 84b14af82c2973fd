//! Low-level raster analysis used by the repair stage: connected components,
//! binary erosion, small-component/hole cleanup, centroids, and coarse RGB
//! histograms with an L1 distance.
//!
//! Conventions fixed here and relied on elsewhere: foreground components use
//! 8-connectivity by default, holes (background components) use
//! 4-connectivity — the usual dual pairing that keeps a closed 8-connected
//! curve separating inside from outside. Erosion uses a square (Chebyshev
//! ball) structuring element of the given radius.

use crate::mask::{BinaryMask, RgbFrame};

/// Pixel adjacency for component labelling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    /// Edge-adjacent neighbors only.
    Four,
    /// Edge- and corner-adjacent neighbors.
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
            Connectivity::Eight => &[
                (-1, -1),
                (-1, 0),
                (-1, 1),
                (0, -1),
                (0, 1),
                (1, -1),
                (1, 0),
                (1, 1),
            ],
        }
    }
}

/// The connected components of a mask, each as its own mask.
///
/// Components are ordered by the row-major position of their first pixel,
/// which makes downstream iteration deterministic.
#[derive(Debug, Clone)]
pub struct ComponentSet {
    pub components: Vec<BinaryMask>,
    pub connectivity: Connectivity,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Splits `mask` into connected components via breadth-first flood fill.
/// An empty mask yields an empty component set.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> ComponentSet {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut components = Vec::new();
    let mut queue = Vec::new();
    for start_r in 0..h {
        for start_c in 0..w {
            if !mask.get(start_r, start_c) || seen[start_r * w + start_c] {
                continue;
            }
            let mut comp = BinaryMask::empty(w, h);
            queue.clear();
            queue.push((start_r, start_c));
            seen[start_r * w + start_c] = true;
            while let Some((r, c)) = queue.pop() {
                comp.set(r, c, true);
                for &(dr, dc) in connectivity.offsets() {
                    let nr = r as isize + dr;
                    let nc = c as isize + dc;
                    if nr < 0 || nc < 0 || nr as usize >= h || nc as usize >= w {
                        continue;
                    }
                    let (nr, nc) = (nr as usize, nc as usize);
                    if mask.get(nr, nc) && !seen[nr * w + nc] {
                        seen[nr * w + nc] = true;
                        queue.push((nr, nc));
                    }
                }
            }
            components.push(comp);
        }
    }
    ComponentSet { components, connectivity }
}

/// Binary erosion with a square structuring element: a pixel survives iff
/// every pixel within Chebyshev distance `radius` is foreground (pixels
/// outside the raster count as background, so the mask also erodes inward
/// from the border). `radius == 0` is the identity.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let r = radius as isize;
    // Separable: min over the square = min over rows, then min over columns.
    let mut rows = BinaryMask::empty(w, h);
    for row in 0..h {
        for col in 0..w {
            let mut all = true;
            for dc in -r..=r {
                let cc = col as isize + dc;
                if cc < 0 || cc as usize >= w || !mask.get(row, cc as usize) {
                    all = false;
                    break;
                }
            }
            rows.set(row, col, all);
        }
    }
    let mut out = BinaryMask::empty(w, h);
    for row in 0..h {
        for col in 0..w {
            let mut all = true;
            for dr in -r..=r {
                let rr = row as isize + dr;
                if rr < 0 || rr as usize >= h || !rows.get(rr as usize, col) {
                    all = false;
                    break;
                }
            }
            out.set(row, col, all);
        }
    }
    out
}

/// Drops connected components with area strictly below `min_area`.
pub fn remove_small_components(
    mask: &BinaryMask,
    min_area: usize,
    connectivity: Connectivity,
) -> BinaryMask {
    let comps = connected_components(mask, connectivity);
    let mut out = BinaryMask::empty(mask.width(), mask.height());
    for comp in &comps.components {
        if comp.area() >= min_area {
            out = out.union(comp);
        }
    }
    out
}

/// Fills holes: background components (4-connected, the dual of 8-connected
/// foreground) that do not touch the raster border and whose area is at most
/// `max_hole_area` become foreground.
pub fn fill_small_holes(mask: &BinaryMask, max_hole_area: usize) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let holes = connected_components(&mask.complement(), Connectivity::Four);
    let mut out = mask.clone();
    for hole in &holes.components {
        let touches_border = hole
            .true_pixels()
            .any(|(r, c)| r == 0 || c == 0 || r == h - 1 || c == w - 1);
        if !touches_border && hole.area() <= max_hole_area {
            out = out.union(hole);
        }
    }
    out
}

/// Mean `(row, col)` of the true pixels, or `None` for an empty mask.
pub fn center_of_mass(mask: &BinaryMask) -> Option<(f64, f64)> {
    let mut n = 0usize;
    let (mut sr, mut sc) = (0.0f64, 0.0f64);
    for (r, c) in mask.true_pixels() {
        sr += r as f64;
        sc += c as f64;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some((sr / n as f64, sc / n as f64))
    }
}

/// Coarse per-channel color histogram: `bins_per_channel` equal-width bins
/// over each of R, G, B, counted independently (not a joint 3-D histogram).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbHistogram {
    bins_per_channel: usize,
    /// R bins, then G bins, then B bins.
    counts: Vec<u64>,
}

impl RgbHistogram {
    pub fn bins_per_channel(&self) -> usize {
        self.bins_per_channel
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Total count across all channels: `3 *` number of pixels histogrammed.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histograms the frame's colors over the pixels of `region`.
/// `bins_per_channel` must divide 256 evenly so every bin spans the same
/// number of intensity values; violating that panics.
pub fn histogram_region(frame: &RgbFrame, region: &BinaryMask, bins_per_channel: usize) -> RgbHistogram {
    assert!(
        bins_per_channel > 0 && 256 % bins_per_channel == 0,
        "bins_per_channel must divide 256, got {bins_per_channel}"
    );
    assert!(
        frame.width() == region.width() && frame.height() == region.height(),
        "histogram_region: frame {}x{} vs region {}x{}",
        frame.width(),
        frame.height(),
        region.width(),
        region.height()
    );
    let div = 256 / bins_per_channel;
    let mut counts = vec![0u64; bins_per_channel * 3];
    for (r, c) in region.true_pixels() {
        let [red, green, blue] = frame.rgb(r, c);
        counts[red as usize / div] += 1;
        counts[bins_per_channel + green as usize / div] += 1;
        counts[2 * bins_per_channel + blue as usize / div] += 1;
    }
    RgbHistogram { bins_per_channel, counts }
}

/// L1 distance between two histograms: the sum of absolute per-bin count
/// differences. Panics if the bin layouts differ.
pub fn manhattan_distance(a: &RgbHistogram, b: &RgbHistogram) -> f64 {
    assert_eq!(
        a.bins_per_channel, b.bins_per_channel,
        "manhattan_distance: bin-count mismatch"
    );
    a.counts
        .iter()
        .zip(&b.counts)
        .map(|(&x, &y)| x.abs_diff(y))
        .sum::<u64>() as f64
}
