//! Randomized invariants of the operators, metrics, network and data.

mod common;

use mgseg::attention::{
    motion_guidance_fast, motion_guidance_fast_counted, motion_guidance_naive, motion_guidance_weights,
    MotionGuidanceConfig,
};
use mgseg::flops::instrumented_count;
use mgseg::metrics::{contour_f, f_beta, mae, region_similarity, BinaryMask, ScoreMap, ThresholdPolicy};
use mgseg::network::{FusionMode, Network, NetworkConfig};
use mgseg::ops::{fold, softmax_over_leading_window, unfold, Unfolded, WindowScores};
use mgseg::synth::{flow_decode, generate_clip, SynthConfig};
use mgseg::{Shape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random<T: mgseg::Real>(s: Shape, seed: u64) -> Tensor<T> {
    Tensor::random_uniform(s, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn guidance_case() -> impl Strategy<Value = (Shape, MotionGuidanceConfig, u64)> {
    (
        1usize..=2,
        prop::sample::select(vec![2usize, 4, 8]),
        4usize..=9,
        4usize..=9,
        prop::sample::select(vec![1usize, 3, 5]),
        1usize..=2,
        any::<u64>(),
    )
        .prop_map(|(n, c, h, w, k, d, seed)| (Shape::new(n, c, h, w), MotionGuidanceConfig::new(k, d, 1), seed))
}

fn mask(h: usize, w: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::new(h, w, bits[..h * w].to_vec()).unwrap()
}

fn mask_pair() -> impl Strategy<Value = (BinaryMask, BinaryMask)> {
    (1usize..=10, 1usize..=10, prop::collection::vec(any::<bool>(), 200))
        .prop_map(|(h, w, bits)| (mask(h, w, &bits[..100]), mask(h, w, &bits[100..])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_is_the_adjoint_of_unfold(n in 1usize..=2, c in 1usize..=3, h in 1usize..=7, w in 1usize..=7, k in prop::sample::select(vec![1usize, 3, 5]), seed: u64) {
        let s = Shape::new(n, c, h, w);
        let x = random::<f64>(s, seed);
        let y = Unfolded::from_flat(k, s, random::<f64>(Shape::new(k * k, n, c, h * w), seed ^ 1).into_vec()).unwrap();
        let lhs = unfold(&x, k).unwrap().dot(&y);
        let rhs = x.dot(&fold(&y)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn softmax_sums_to_one_and_ignores_offsets(k in prop::sample::select(vec![1usize, 3, 5]), h in 1usize..=5, w in 1usize..=5, offset in -50.0f64..50.0, seed: u64) {
        let scores = random::<f64>(Shape::new(1, 1, k * k, h * w), seed).scale(8.0).into_vec();
        let a = softmax_over_leading_window(&WindowScores::from_vec(k, 1, h, w, scores.clone()).unwrap()).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|v| v + offset).collect();
        let b = softmax_over_leading_window(&WindowScores::from_vec(k, 1, h, w, shifted).unwrap()).unwrap();
        for p in 0..h * w {
            let total: f64 = (0..k * k).map(|j| a.data()[j * h * w + p]).sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fast_and_naive_guidance_agree((s, cfg, seed) in guidance_case()) {
        let va = random::<f32>(s, seed);
        let vm = random::<f32>(s, seed ^ 1);
        let kernel = random::<f32>(cfg.kernel_shape(s.c), seed ^ 2);
        let fast = motion_guidance_fast(&va, &vm, &cfg, &kernel).unwrap();
        let naive = motion_guidance_naive(&va, &vm, &cfg, &kernel).unwrap();
        prop_assert!(fast.max_abs_diff(&naive).unwrap() < 1e-5);
    }

    #[test]
    fn window_weights_form_a_distribution((s, cfg, seed) in guidance_case()) {
        let vm = random::<f64>(s, seed).scale(4.0);
        let kernel = random::<f64>(cfg.kernel_shape(s.c), seed ^ 2);
        let weights = motion_guidance_weights(&vm, &cfg, &kernel).unwrap();
        let k = cfg.window;
        let plane = s.n * s.h * s.w;
        prop_assert!(weights.data().iter().all(|&v| v >= 0.0));
        for p in 0..plane {
            let total: f64 = (0..k * k).map(|j| weights.data()[j * plane + p]).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn guidance_is_translation_equivariant_away_from_padding((s, cfg, seed) in guidance_case(), dy in 0usize..=2, dx in 0usize..=2) {
        let va = random::<f64>(s, seed);
        let vm = random::<f64>(s, seed ^ 1);
        let kernel = random::<f64>(cfg.kernel_shape(s.c), seed ^ 2);
        let shift = |t: &Tensor<f64>| Tensor::from_fn(s, |n, c, y, x| t.at_padded(n, c, y as isize - dy as isize, x as isize - dx as isize));
        let base = motion_guidance_fast(&va, &vm, &cfg, &kernel).unwrap();
        let moved = motion_guidance_fast(&shift(&va), &shift(&vm), &cfg, &kernel).unwrap();
        let r = cfg.window / 2;
        for n in 0..s.n {
            for c in 0..s.c {
                for y in (dy + r)..s.h.saturating_sub(r) {
                    for x in (dx + r)..s.w.saturating_sub(r) {
                        prop_assert!((moved.at(n, c, y, x) - base.at(n, c, y - dy, x - dx)).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn guidance_is_linear_in_appearance((s, cfg, seed) in guidance_case(), factor in -4.0f64..4.0) {
        let va = random::<f64>(s, seed);
        let vm = random::<f64>(s, seed ^ 1);
        let kernel = random::<f64>(cfg.kernel_shape(s.c), seed ^ 2);
        let scaled = motion_guidance_fast(&va.scale(factor), &vm, &cfg, &kernel).unwrap();
        let base = motion_guidance_fast(&va, &vm, &cfg, &kernel).unwrap().scale(factor);
        prop_assert!(scaled.max_abs_diff(&base).unwrap() < 1e-12);
    }

    #[test]
    fn guidance_cost_is_affine_in_window_area(h in 2usize..=8, w in 2usize..=8, c in prop::sample::select(vec![2usize, 4, 8]), d in 1usize..=2) {
        let s = Shape::new(1, c, h, w);
        let count = |k: usize| {
            let cfg = MotionGuidanceConfig::new(k, d, 1);
            let (va, vm, kernel) = (random::<f64>(s, 1), random::<f64>(s, 2), random::<f64>(cfg.kernel_shape(c), 3));
            instrumented_count(|t| drop(motion_guidance_fast_counted(&va, &vm, &cfg, &kernel, t).unwrap())).total_macs() as i128
        };
        let (f1, f3, f5) = (count(1), count(3), count(5));
        prop_assert!(f3 > f1);
        prop_assert_eq!((f5 - f1) * 8, (f3 - f1) * 24);
    }

    #[test]
    fn region_similarity_is_symmetric((m, gt) in mask_pair()) {
        prop_assert_eq!(region_similarity(&m, &gt).unwrap(), region_similarity(&gt, &m).unwrap());
    }

    #[test]
    fn metrics_are_bounded_and_flip_invariant((m, gt) in mask_pair(), tol in 0usize..=3, scores in prop::collection::vec(0.0f64..=1.0, 100)) {
        let (h, w) = (m.height(), m.width());
        let s = ScoreMap::new(h, w, scores[..h * w].to_vec()).unwrap();
        let (mf, gf, sf) = (m.flip_horizontal(), gt.flip_horizontal(), s.flip_horizontal());
        let pairs = [
            (region_similarity(&m, &gt).unwrap(), region_similarity(&mf, &gf).unwrap()),
            (contour_f(&m, &gt, tol).unwrap(), contour_f(&mf, &gf, tol).unwrap()),
            (mae(&s, &gt).unwrap(), mae(&sf, &gf).unwrap()),
            (
                f_beta(&s, &gt, 0.3, ThresholdPolicy::Fixed(0.5)).unwrap(),
                f_beta(&sf, &gf, 0.3, ThresholdPolicy::Fixed(0.5)).unwrap(),
            ),
            (
                f_beta(&s, &gt, 0.3, ThresholdPolicy::Sweep).unwrap(),
                f_beta(&sf, &gf, 0.3, ThresholdPolicy::Sweep).unwrap(),
            ),
        ];
        for (a, b) in pairs {
            prop_assert!((0.0..=1.0).contains(&a));
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn contour_f_never_drops_as_tolerance_grows((m, gt) in mask_pair()) {
        let values: Vec<f64> = (0..=4).map(|t| contour_f(&m, &gt, t).unwrap()).collect();
        prop_assert!(values.windows(2).all(|p| p[0] <= p[1]), "{:?}", values);
    }

    #[test]
    fn contour_f_matches_the_all_pairs_oracle((m, gt) in mask_pair(), tol in 0usize..=3) {
        let grid = |b: &BinaryMask| -> common::Grid {
            (0..b.height()).map(|y| (0..b.width()).map(|x| b.get(y, x)).collect()).collect()
        };
        let want = common::contour_f(&grid(&m), &grid(&gt), tol);
        prop_assert!((contour_f(&m, &gt, tol).unwrap() - want).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn network_output_matches_input_and_is_a_probability(
        scale in 1usize..=2,
        progressive: bool,
        seed: u64,
    ) {
        let (h, w) = (32 * scale, 32 * (scale + 1));
        let fusion = if progressive { FusionMode::Progressive } else { FusionMode::UnetBaseline };
        let config = NetworkConfig::new(vec![4, 4, 8, 8], MotionGuidanceConfig::new(3, 2, 2), (h, w)).with_fusion(fusion);
        let net = Network::<f32>::new(config, seed).unwrap();
        let s = Shape::new(2, 3, h, w);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = Tensor::random_uniform(s, 0.0, 1.0, &mut rng);
        let flows = Tensor::random_uniform(s, 0.0, 1.0, &mut rng);
        let p = net.predict(&frames, &flows).unwrap();
        prop_assert_eq!(p.shape(), Shape::new(2, 1, h, w));
        prop_assert!(p.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synthetic_clips_are_reproducible_and_flow_stays_on_the_shapes(seed: u64, shapes in 1usize..=3) {
        let cfg = SynthConfig { height: 48, width: 64, length: 4, shapes, radius: (6.0, 10.0), seed, ..SynthConfig::default() };
        let clip = generate_clip(&cfg).unwrap();
        prop_assert_eq!(&clip, &generate_clip(&cfg).unwrap());
        for (flow, m) in clip.flows.iter().zip(&clip.masks) {
            let f = flow_decode(flow, cfg.flow_max).unwrap();
            for y in 0..cfg.height {
                for x in 0..cfg.width {
                    if !m.get(y, x) {
                        prop_assert_eq!(f.at(y, x), (0.0, 0.0));
                    }
                }
            }
        }
    }
}
