//! Segmentation quality metrics: region similarity (Jaccard / intersection
//! over union), boundary F-measure, and whole-sequence evaluation with
//! optional optimal id matching.
//!
//! Conventions: two empty masks are a perfect region match (J = 1); the
//! boundary measure is 1 when both contours are empty and 0 when the
//! precision/recall pair degenerates to 0 + 0. Boundary matching uses a
//! pixel-distance tolerance defaulting to `ceil(0.008 * image diagonal)`.

use crate::mask::{BinaryMask, ObjectId, SequenceBundle};

/// Intersection over union. Both-empty counts as a perfect match.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> f64 {
    let inter = pred.intersect(gt).area();
    let union = pred.union(gt).area();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Contour pixels: foreground pixels with at least one background 4-neighbor,
/// counting pixels beyond the raster border as background.
pub fn contour(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    BinaryMask::from_fn(w, h, |r, c| {
        if !mask.get(r, c) {
            return false;
        }
        r == 0
            || c == 0
            || r == h - 1
            || c == w - 1
            || !mask.get(r - 1, c)
            || !mask.get(r + 1, c)
            || !mask.get(r, c - 1)
            || !mask.get(r, c + 1)
    })
}

/// Default boundary matching tolerance for a given raster size:
/// `ceil(0.008 * diagonal)`, the customary fraction of the image diagonal.
pub fn default_boundary_tolerance(width: usize, height: usize) -> usize {
    let diag = ((width * width + height * height) as f64).sqrt();
    (0.008 * diag).ceil() as usize
}

/// Chebyshev dilation of a mask by `radius` (used to widen a contour into its
/// matching band).
fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::empty(w, h);
    for (r, c) in mask.true_pixels() {
        let r0 = r.saturating_sub(radius);
        let c0 = c.saturating_sub(radius);
        let r1 = (r + radius).min(h - 1);
        let c1 = (c + radius).min(w - 1);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                out.set(rr, cc, true);
            }
        }
    }
    out
}

/// Boundary F-measure: precision/recall of contour pixels matched within
/// `tolerance` (Chebyshev distance), combined as `2PR / (P + R)`.
///
/// Both contours empty => 1. If only one side has a contour, or no contour
/// pixel matches at all, the score is 0.
pub fn boundary_f(pred: &BinaryMask, gt: &BinaryMask, tolerance: usize) -> f64 {
    let pred_contour = contour(pred);
    let gt_contour = contour(gt);
    let np = pred_contour.area();
    let ng = gt_contour.area();
    if np == 0 && ng == 0 {
        return 1.0;
    }
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let gt_band = dilate(&gt_contour, tolerance);
    let pred_band = dilate(&pred_contour, tolerance);
    let precision = pred_contour.intersect(&gt_band).area() as f64 / np as f64;
    let recall = gt_contour.intersect(&pred_band).area() as f64 / ng as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// How predicted ids are paired with ground-truth ids during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdMatching {
    /// Predicted id `k` is compared against ground-truth id `k`.
    ById,
    /// Ids are arbitrary; choose the pairing that maximizes the summed
    /// (J + F) / 2 across objects (optimal assignment).
    Hungarian,
}

/// Per ground-truth object scores, averaged over frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMetrics {
    /// Ground-truth object id.
    pub id: ObjectId,
    /// Predicted id this object was paired with, if any.
    pub matched_pred: Option<ObjectId>,
    pub j_mean: f64,
    pub f_mean: f64,
    /// `(j_mean + f_mean) / 2`.
    pub jf: f64,
}

/// Whole-sequence scores: per object plus unweighted means across objects.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceMetrics {
    pub per_object: Vec<ObjectMetrics>,
    pub j_mean: f64,
    pub f_mean: f64,
    pub jf: f64,
}

/// Evaluates predictions against ground truth over a whole sequence.
///
/// Every ground-truth object receives the frame-averaged J and F of its
/// paired prediction, or zeros when nothing pairs with it (fewer predictions
/// than objects). Extra predictions are ignored. Bundles must cover the same
/// frames at the same resolution (asserted).
pub fn evaluate_sequence(
    pred: &SequenceBundle,
    gt: &SequenceBundle,
    matching: IdMatching,
) -> SequenceMetrics {
    assert_eq!(pred.len(), gt.len(), "evaluate_sequence: frame counts differ");
    assert!(
        pred.width() == gt.width() && pred.height() == gt.height(),
        "evaluate_sequence: dimensions differ"
    );
    let tolerance = default_boundary_tolerance(gt.width(), gt.height());
    let gt_ids: Vec<ObjectId> = gt.object_ids().iter().copied().collect();
    let pred_ids: Vec<ObjectId> = pred.object_ids().iter().copied().collect();

    // Frame-averaged (J, F) for one (gt, pred) id pairing.
    let pair_scores = |gid: ObjectId, pid: ObjectId| -> (f64, f64) {
        let mut sj = 0.0;
        let mut sf = 0.0;
        for t in 0..gt.len() {
            let gm = gt.object_mask(t, gid);
            let pm = pred.object_mask(t, pid);
            sj += jaccard(&pm, &gm);
            sf += boundary_f(&pm, &gm, tolerance);
        }
        (sj / gt.len() as f64, sf / gt.len() as f64)
    };

    let mut per_object = Vec::with_capacity(gt_ids.len());
    match matching {
        IdMatching::ById => {
            for &gid in &gt_ids {
                if pred_ids.contains(&gid) {
                    let (j, f) = pair_scores(gid, gid);
                    per_object.push(ObjectMetrics {
                        id: gid,
                        matched_pred: Some(gid),
                        j_mean: j,
                        f_mean: f,
                        jf: 0.5 * (j + f),
                    });
                } else {
                    per_object.push(ObjectMetrics {
                        id: gid,
                        matched_pred: None,
                        j_mean: 0.0,
                        f_mean: 0.0,
                        jf: 0.0,
                    });
                }
            }
        }
        IdMatching::Hungarian => {
            // Precompute all pairings, assign optimally by J&F.
            let table: Vec<Vec<(f64, f64)>> = gt_ids
                .iter()
                .map(|&gid| pred_ids.iter().map(|&pid| pair_scores(gid, pid)).collect())
                .collect();
            let weights: Vec<Vec<f64>> = table
                .iter()
                .map(|row| row.iter().map(|&(j, f)| 0.5 * (j + f)).collect())
                .collect();
            let assignment = max_weight_assignment(&weights);
            for (gi, &gid) in gt_ids.iter().enumerate() {
                match assignment[gi] {
                    Some(pi) => {
                        let (j, f) = table[gi][pi];
                        per_object.push(ObjectMetrics {
                            id: gid,
                            matched_pred: Some(pred_ids[pi]),
                            j_mean: j,
                            f_mean: f,
                            jf: 0.5 * (j + f),
                        });
                    }
                    None => per_object.push(ObjectMetrics {
                        id: gid,
                        matched_pred: None,
                        j_mean: 0.0,
                        f_mean: 0.0,
                        jf: 0.0,
                    }),
                }
            }
        }
    }

    let n = per_object.len().max(1) as f64;
    let j_mean = per_object.iter().map(|o| o.j_mean).sum::<f64>() / n;
    let f_mean = per_object.iter().map(|o| o.f_mean).sum::<f64>() / n;
    SequenceMetrics { per_object, j_mean, f_mean, jf: 0.5 * (j_mean + f_mean) }
}

/// Maximum-weight assignment of rows to columns (each row gets at most one
/// column and vice versa). Returns, per row, the chosen column.
///
/// Kuhn-Munkres with potentials on the rectangular matrix, padded virtually
/// with zero-weight dummy columns so unmatched rows are representable. Runs
/// in O(n^2 m); the matrices here are tiny (object counts).
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    let m_real = weights[0].len();
    // Pad with n dummy columns of weight 0 so every row can be assigned.
    let m = m_real + n;
    let weight = |r: usize, c: usize| -> f64 {
        if c < m_real {
            weights[r][c]
        } else {
            0.0
        }
    };

    // Minimization form with potentials (u for rows, v for columns).
    let cost = |r: usize, c: usize| -> f64 { -weight(r, c) };
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    // way[c] = previous column on the augmenting path; col_row[c] = row
    // currently assigned to column c (n = unassigned sentinel).
    let mut col_row = vec![n; m + 1];
    let mut way = vec![0usize; m + 1];

    for r in 0..n {
        // Find an augmenting path for row r, shortest-path style.
        let mut min_v = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        let mut j0 = m; // virtual start column holding row r
        col_row[m] = r;
        loop {
            used[j0] = true;
            let i0 = col_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 0..m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < min_v[j] {
                    min_v[j] = cur;
                    way[j] = j0;
                }
                if min_v[j] < delta {
                    delta = min_v[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[col_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_v[j] -= delta;
                }
            }
            j0 = j1;
            if col_row[j0] == n {
                break;
            }
        }
        // Unwind the path.
        while j0 != m {
            let j1 = way[j0];
            col_row[j0] = col_row[j1];
            j0 = j1;
        }
    }

    let mut assignment = vec![None; n];
    for c in 0..m {
        if col_row[c] != n {
            // Dummy columns mean "unassigned".
            if c < m_real {
                assignment[col_row[c]] = Some(c);
            }
        }
    }
    assignment
}
