use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salnet_core::tensor::{
    avg_pool2d, conv2d, max_pool2d, sigmoid, transpose_conv2d, Conv2dSpec, TransposeConv2dSpec, SIGMOID_CLAMP,
};
use salnet_core::{Shape, Tensor};

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn conv_spec() -> impl Strategy<Value = Conv2dSpec> {
    (1usize..4, 1usize..4, 1usize..3, 0usize..2).prop_map(|(kh, kw, s, p)| Conv2dSpec::new(kh, kw, s, p))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn conv_output_shape(
        n in 1usize..3, cin in 1usize..4, cout in 1usize..4,
        h in 3usize..9, w in 3usize..9, spec in conv_spec(), seed in any::<u64>()
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([n, cin, h, w], &mut rng);
        let k = random([cout, cin, spec.kernel_h, spec.kernel_w], &mut rng);
        let y = conv2d(&x, &k, &Tensor::zeros([cout, 1, 1, 1]), spec).unwrap();
        let ho = (h + 2 * spec.padding - spec.kernel_h) / spec.stride + 1;
        let wo = (w + 2 * spec.padding - spec.kernel_w) / spec.stride + 1;
        prop_assert_eq!(y.shape(), Shape::new(n, cout, ho, wo));
    }

    #[test]
    fn tconv_and_pool_shapes(n in 1usize..3, c in 1usize..5, co in 1usize..5, h in 1usize..7, w in 1usize..7) {
        let x = Tensor::<f32>::zeros([n, c, 2 * h, 2 * w]);
        let y = transpose_conv2d(&x, &Tensor::zeros([c, co, 2, 2]), &Tensor::zeros([co, 1, 1, 1]), TransposeConv2dSpec::default()).unwrap();
        prop_assert_eq!(y.shape(), Shape::new(n, co, 4 * h, 4 * w));
        prop_assert_eq!(avg_pool2d(&x).unwrap().shape(), Shape::new(n, c, h, w));
        prop_assert_eq!(max_pool2d(&x).unwrap().0.shape(), Shape::new(n, c, h, w));
    }

    #[test]
    fn conv_is_linear(spec in conv_spec(), a in -2.0f64..2.0, b in -2.0f64..2.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([2, 3, 7, 6], &mut rng);
        let y = random([2, 3, 7, 6], &mut rng);
        let k = random([4, 3, spec.kernel_h, spec.kernel_w], &mut rng);
        let zero = Tensor::zeros([4, 1, 1, 1]);
        let mix = Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(p, q)| (a * *p as f64 + b * *q as f64) as f32).collect()).unwrap();
        let lhs = conv2d(&mix, &k, &zero, spec).unwrap();
        let (cx, cy) = (conv2d(&x, &k, &zero, spec).unwrap(), conv2d(&y, &k, &zero, spec).unwrap());
        let scale = lhs.data().iter().fold(1.0f64, |m, v| m.max(v.abs() as f64));
        for ((l, p), q) in lhs.data().iter().zip(cx.data()).zip(cy.data()) {
            let r = a * *p as f64 + b * *q as f64;
            prop_assert!((*l as f64 - r).abs() <= 1e-4 * scale);
        }
    }

    #[test]
    fn tconv_is_a_pixel_scatter(cin in 1usize..4, cout in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random([1, cin, h, w], &mut rng);
        let k = random([cin, cout, 2, 2], &mut rng);
        let y = transpose_conv2d(&x, &k, &Tensor::zeros([cout, 1, 1, 1]), TransposeConv2dSpec::default()).unwrap();
        // sum(out) = Σ_ci sum(x[ci]) · sum(k[ci])
        let mut want = 0.0f64;
        for ci in 0..cin {
            let xs: f64 = x.plane(0, ci).iter().map(|&v| v as f64).sum();
            let ks: f64 = (0..cout).flat_map(|co| k.plane(ci, co).to_vec()).map(|v| v as f64).sum();
            want += xs * ks;
        }
        prop_assert!((y.sum() - want).abs() < 1e-4);
        // each output pixel comes from exactly one input pixel and one kernel tap
        for co in 0..cout {
            for oy in 0..2 * h {
                for ox in 0..2 * w {
                    let v: f64 = (0..cin).map(|ci| x.get(0, ci, oy / 2, ox / 2) as f64 * k.get(ci, co, oy % 2, ox % 2) as f64).sum();
                    prop_assert!((y.get(0, co, oy, ox) as f64 - v).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn sigmoid_is_clamped_and_monotone(mut v in proptest::collection::vec(-40.0f32..40.0, 1..32)) {
        v.sort_by(f32::total_cmp);
        let n = v.len();
        let s = sigmoid(&Tensor::new([1, 1, 1, n], v).unwrap());
        for w in s.data().windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for &y in s.data() {
            prop_assert!(y as f64 >= SIGMOID_CLAMP && y as f64 <= 1.0 - SIGMOID_CLAMP);
        }
    }
}
