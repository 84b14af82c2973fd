//! Generated-input invariant checks, shared between the property-test target
//! and the acceptance gate (which re-runs them as one criterion).
//!
//! Each function drives one invariant family through a fresh proptest runner
//! with at least `CASES` generated inputs and reports the first
//! counterexample as an `Err` string.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use maskmend::flow::warp_mask;
use maskmend::metrics::jaccard;
use maskmend::raster::{erode, histogram_region, manhattan_distance};
use maskmend::synth::{inject_defects, render, Appearance, DefectKind, DefectSpec, ObjectScript, SceneScript, Shape, Side};
use maskmend::temporal::{mou, run_tc, TcConfig};
use maskmend::dataset::{load_sequence, save_frames, save_masks_to, DatasetLayout, MaskSource};
use maskmend::flow::FlowParams;
use maskmend::{BinaryMask, LabelMap, RgbFrame, SequenceBundle};

/// Generated inputs per invariant. The gate requires at least 100.
pub const CASES: u32 = 128;

fn run<S>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

const W: usize = 12;
const H: usize = 10;

fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
    proptest::collection::vec(any::<bool>(), W * H)
        .prop_map(|bits| BinaryMask::from_fn(W, H, |r, c| bits[r * W + c]))
}

fn frame_strategy() -> impl Strategy<Value = RgbFrame> {
    proptest::collection::vec(any::<u8>(), W * H * 3).prop_map(|bytes| {
        RgbFrame::from_fn(W, H, |r, c| {
            let i = (r * W + c) * 3;
            [bytes[i], bytes[i + 1], bytes[i + 2]]
        })
    })
}

/// Union/intersection/subtraction/complement identities that the mask layer
/// must satisfy for the rest of the pipeline to mean anything.
pub fn set_algebra() -> Result<(), String> {
    run(
        (mask_strategy(), mask_strategy(), mask_strategy()),
        |(a, b, c)| {
            prop_assert_eq!(&a.union(&b), &b.union(&a), "union commutes");
            prop_assert_eq!(&a.intersect(&b), &b.intersect(&a), "intersection commutes");
            // Inclusion-exclusion.
            prop_assert_eq!(
                a.union(&b).area() + a.intersect(&b).area(),
                a.area() + b.area()
            );
            // Subtraction is intersection with the complement.
            prop_assert_eq!(&a.subtract(&b), &a.intersect(&b.complement()));
            // Involution and De Morgan.
            prop_assert_eq!(&a.complement().complement(), &a);
            prop_assert_eq!(
                &a.union(&b).complement(),
                &a.complement().intersect(&b.complement())
            );
            // Distributivity.
            prop_assert_eq!(
                &a.intersect(&b.union(&c)),
                &a.intersect(&b).union(&a.intersect(&c))
            );
            // Monotonicity of the derived operations.
            prop_assert!(a.subtract(&b).area() <= a.area());
            prop_assert!(a.union(&b).area() >= a.area());
            prop_assert!(a.intersect(&b).area() <= a.area());
            Ok(())
        },
    )
}

/// Every defined mask-over-union value lies in [0, 1], is `None` exactly when
/// the object is absent from the whole span, and equals 1 when the frame
/// carries the whole union.
pub fn mou_bounds() -> Result<(), String> {
    let seq = (2usize..8, 1usize..5).prop_flat_map(|(frames, window)| {
        (
            proptest::collection::vec(
                proptest::collection::vec(0u16..3, 36),
                frames,
            ),
            Just(window),
        )
    });
    run(seq, |(label_grids, window)| {
        let masks: Vec<LabelMap> = label_grids
            .iter()
            .map(|g| LabelMap::from_fn(6, 6, |r, c| g[r * 6 + c]))
            .collect();
        let frames = vec![RgbFrame::from_fn(6, 6, |_, _| [0, 0, 0]); masks.len()];
        let bundle = SequenceBundle::new("p", frames, masks);
        let n = bundle.len();
        for id in 1u16..3 {
            for t_s in 0..n {
                for t in t_s..(t_s + window).min(n) {
                    let value = mou(&bundle, id, t, t_s, window);
                    let end = (t_s + window).min(n - 1);
                    let union_empty =
                        (t_s..=end).all(|i| bundle.mask(i).count(id) == 0);
                    prop_assert_eq!(value.is_none(), union_empty);
                    if let Some(v) = value {
                        prop_assert!((0.0..=1.0).contains(&v), "mou {} out of range", v);
                        if bundle.mask(t).count(id)
                            == (t_s..=end).map(|i| bundle.mask(i).count(id)).max().unwrap()
                            && (t_s..=end).all(|i| i == t || bundle.mask(i).count(id) == 0)
                        {
                            prop_assert!((v - 1.0).abs() < 1e-12, "lone frame must score 1");
                        }
                    }
                }
            }
        }
        Ok(())
    })
}

/// Erosion never adds pixels, shrinks monotonically with the radius, and
/// radius 0 is the identity.
pub fn erosion_anti_extensive() -> Result<(), String> {
    run((mask_strategy(), 0usize..4), |(m, r)| {
        prop_assert_eq!(&erode(&m, 0), &m, "radius 0 is identity");
        let e1 = erode(&m, r);
        let e2 = erode(&m, r + 1);
        prop_assert!(e1.subtract(&m).is_empty(), "erosion is anti-extensive");
        prop_assert!(e2.subtract(&e1).is_empty(), "erosion shrinks with radius");
        Ok(())
    })
}

/// The histogram distance is a genuine metric on same-region histograms and
/// never exceeds twice the total mass (6 x region area for three channels).
pub fn histogram_metric_axioms() -> Result<(), String> {
    run(
        (frame_strategy(), frame_strategy(), frame_strategy(), mask_strategy()),
        |(fa, fb, fc, region)| {
            if region.is_empty() {
                return Ok(());
            }
            let bins = 32;
            let ha = histogram_region(&fa, &region, bins);
            let hb = histogram_region(&fb, &region, bins);
            let hc = histogram_region(&fc, &region, bins);
            let dab = manhattan_distance(&ha, &hb);
            let dba = manhattan_distance(&hb, &ha);
            let dac = manhattan_distance(&ha, &hc);
            let dcb = manhattan_distance(&hc, &hb);
            prop_assert_eq!(manhattan_distance(&ha, &ha), 0.0, "identity");
            prop_assert_eq!(dab, dba, "symmetry");
            prop_assert!(dab <= dac + dcb + 1e-9, "triangle inequality");
            prop_assert!(dab >= 0.0);
            prop_assert!(
                dab <= 6.0 * region.area() as f64,
                "distance {} exceeds histogram mass bound {}",
                dab,
                6.0 * region.area() as f64
            );
            Ok(())
        },
    )
}

/// Cheap flow/repair settings for generated micro-scenes.
fn small_tc_config() -> TcConfig {
    TcConfig {
        flow: FlowParams {
            window_size: 7,
            pyramid_levels: 2,
            iterations_per_level: 3,
            ..FlowParams::default()
        },
        ..TcConfig::default()
    }
}

fn micro_scene(seed: u64, velocity: [f64; 2], frames: usize) -> SceneScript {
    SceneScript {
        name: "micro".into(),
        width: 28,
        height: 28,
        frames,
        seed,
        background: Appearance { color: [50, 55, 70], noise: 16 },
        objects: vec![ObjectScript {
            id: 1,
            shape: Shape::Rect { width: 9.0, height: 9.0 },
            start: [14.0, 11.0],
            velocity,
            scale: 1.0,
            appearance: Appearance { color: [200, 120, 60], noise: 24 },
        }],
        defects: vec![],
    }
}

/// Running the repair on its own output changes nothing: the loop reaches a
/// fixed point and reports no further corrections.
pub fn run_tc_idempotent() -> Result<(), String> {
    let inputs = (
        any::<u64>(),
        0usize..3,             // velocity col in {0, 1, 2} tenths scaled below
        5usize..7,             // frame count
        2usize..4,             // defective frame
        prop_oneof![Just(Side::Left), Just(Side::Right), Just(Side::Top)],
        0.25f64..0.55,         // dropped fraction
    );
    run(inputs, |(seed, vel, frames, defect_frame, side, fraction)| {
        let script = micro_scene(seed, [0.0, vel as f64 * 0.5], frames);
        let clean = render(&script).expect("valid script");
        let broken = inject_defects(
            &clean,
            &[DefectSpec {
                object: 1,
                frame: defect_frame.min(frames - 1),
                kind: DefectKind::DropPart { fraction, side },
            }],
        )
        .expect("valid defect");
        let cfg = small_tc_config();
        let (repaired, _) = run_tc(&broken, &broken, &cfg);
        let (again, report) = run_tc(&repaired, &broken, &cfg);
        prop_assert_eq!(again.masks(), repaired.masks(), "second run must be a no-op");
        prop_assert_eq!(
            report
                .entries
                .iter()
                .filter(|e| e.status == maskmend::temporal::TcStatus::Corrected)
                .count(),
            0,
            "second run must report no corrections"
        );
        Ok(())
    })
}

/// Frames and label maps survive a save/load round trip through the on-disk
/// layout byte for byte.
pub fn save_load_round_trip() -> Result<(), String> {
    let inputs = (
        4usize..10,
        4usize..10,
        1usize..4,
        proptest::collection::vec(any::<u8>(), 10 * 10 * 3 * 3),
        proptest::collection::vec(0u16..6, 10 * 10 * 3),
    );
    run(inputs, |(w, h, n, bytes, labels)| {
        let frames: Vec<RgbFrame> = (0..n)
            .map(|t| {
                RgbFrame::from_fn(w, h, |r, c| {
                    let i = (t * 100 + r * 10 + c) * 3;
                    [bytes[i], bytes[i + 1], bytes[i + 2]]
                })
            })
            .collect();
        let masks: Vec<LabelMap> = (0..n)
            .map(|t| LabelMap::from_fn(w, h, |r, c| labels[t * 100 + r * 10 + c]))
            .collect();
        let bundle = SequenceBundle::new("round", frames, masks);
        let dir = tempfile::tempdir().expect("tempdir");
        let layout = DatasetLayout::new(dir.path());
        save_frames(&bundle, &layout, "round").expect("save frames");
        save_masks_to(&bundle, &layout, "round", MaskSource::Raw).expect("save masks");
        let loaded = load_sequence(&layout, "round", MaskSource::Raw).expect("load");
        prop_assert_eq!(loaded.frames(), bundle.frames());
        prop_assert_eq!(loaded.masks(), bundle.masks());
        Ok(())
    })
}

/// Extra guards the pipeline leans on (not part of the gate, but cheap):
/// warping never invents pixels and jaccard behaves like a similarity.
#[allow(dead_code)] // the gate runs only the six contractual families
pub fn warp_and_jaccard_sanity() -> Result<(), String> {
    run((mask_strategy(), mask_strategy()), |(a, b)| {
        let flow = maskmend::flow::FlowField::zero(W, H);
        prop_assert_eq!(&warp_mask(&a, &flow), &a, "zero flow is identity");
        let j = jaccard(&a, &b);
        prop_assert!((0.0..=1.0).contains(&j));
        prop_assert_eq!(jaccard(&a, &b), jaccard(&b, &a), "jaccard is symmetric");
        prop_assert_eq!(jaccard(&a, &a), 1.0, "self-similarity is 1");
        Ok(())
    })
}
