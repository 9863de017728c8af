//! Property tests over the codec bijections and rotation invariants.

use proptest::prelude::*;

use mvflow::motion::{group_frame, rot6d_to_matrix, ungroup_frame, MotionFrame};
use mvflow::rope::rope_rotate;
use mvflow::video::{byte_to_unit, unit_to_byte, patchify, unpatchify, VideoClip};

fn arb_frame() -> impl Strategy<Value = MotionFrame> {
    proptest::collection::vec(-10.0f32..10.0, 10 + 24 * 6 + 6 + 3 + 24 * 3).prop_map(|v| {
        let mut f = MotionFrame::zero();
        let mut it = v.into_iter();
        for b in f.beta.iter_mut() {
            *b = it.next().unwrap();
        }
        for row in f.theta.iter_mut() {
            for x in row.iter_mut() {
                *x = it.next().unwrap();
            }
        }
        for g in f.gamma.iter_mut() {
            *g = it.next().unwrap();
        }
        for r in f.root.iter_mut() {
            *r = it.next().unwrap();
        }
        for row in f.joints.iter_mut() {
            for x in row.iter_mut() {
                *x = it.next().unwrap();
            }
        }
        f.joints[0] = f.root;
        f
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn grouping_roundtrips_bit_exactly(frame in arb_frame()) {
        let back = ungroup_frame(&group_frame(&frame));
        prop_assert_eq!(frame, back);
    }

    #[test]
    fn rot6d_lands_in_so3(r6 in proptest::array::uniform6(-3.0f64..3.0)) {
        if let Ok(r) = rot6d_to_matrix(&r6) {
            for i in 0..3 {
                for j in 0..3 {
                    let mut acc = 0.0;
                    for row in &r {
                        acc += row[i] * row[j];
                    }
                    let want = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((acc - want).abs() < 1e-5);
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            prop_assert!((det - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rotary_rotation_preserves_norm(
        v in proptest::collection::vec(-5.0f64..5.0, 8),
        pos in -50.0f64..50.0,
    ) {
        let r = rope_rotate(&v, pos, 10_000.0);
        let n0: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let n1: f64 = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n0 - n1).abs() < 1e-5);
    }

    #[test]
    fn pixel_mapping_roundtrips(b in 0u8..=255) {
        prop_assert_eq!(unit_to_byte(byte_to_unit(b)), b);
    }

    #[test]
    fn patchify_roundtrips(pixels in proptest::collection::vec(any::<u8>(), 5 * 8 * 8 * 3)) {
        let clip = VideoClip { width: 8, height: 8, fps: 16, pixels };
        let patches: mvflow::Tensor<f32> = patchify(&clip, 4).unwrap();
        let back = unpatchify(&patches, 5, 8, 8, 4, 16).unwrap();
        prop_assert_eq!(clip, back);
    }
}
