use dbpn::ibp::{bicubic_kernel, resize_bicubic, upscale};
use dbpn::imaging::{
    degrade, flip_horizontal, flip_vertical, load_image, psnr, rgb_to_ycbcr, rotate90, save_image,
    ssim, ycbcr_to_rgb, Augmentation, ColorSpace, EvalProtocol, ImagePlane, PatchPair,
};
use dbpn::net::{preset, NetworkConfig, PRESETS};
use dbpn::projection::{bind_params, Direction, PreluMode, ProjectionUnit, ScalePreset};
use dbpn::tensor::conv::{conv2d, conv_transpose2d};
use dbpn::tensor::{
    seeded_rng, Adam, AdamConfig, Backend, ConvGeometry, Eager, ParamStore, Tensor,
};
use dbpn::training::{lr_schedule, TrainConfig};
use proptest::prelude::*;

fn tensor(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn image(h: usize, w: usize, color: ColorSpace, seed: u64) -> ImagePlane {
    use rand::Rng;
    let mut rng = seeded_rng(seed);
    let n = h * w * color.channels();
    ImagePlane::from_planar(
        h,
        w,
        color,
        (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
    )
    .unwrap()
}

fn color() -> impl Strategy<Value = ColorSpace> {
    prop_oneof![Just(ColorSpace::Y), Just(ColorSpace::Rgb)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deconv_is_adjoint_of_conv(
        kernel in 1usize..8,
        stride in 1usize..5,
        pad_frac in 0usize..4,
        mh in 1usize..5,
        mw in 1usize..5,
        cin in 1usize..4,
        cout in 1usize..4,
        seed in any::<u64>(),
    ) {
        let padding = pad_frac.min(kernel / 2);
        let g = ConvGeometry::new(kernel, stride, padding);
        let (h, w) = (g.deconv_out(mh), g.deconv_out(mw));
        prop_assume!(h.is_ok() && w.is_ok());
        let (h, w) = (h.unwrap(), w.unwrap());
        prop_assume!(g.conv_out(h).ok() == Some(mh) && g.conv_out(w).ok() == Some(mw));
        let x = tensor([1, cin, h, w], seed);
        let y = tensor([1, cout, mh, mw], seed ^ 1);
        let k = tensor([cout, cin, kernel, kernel], seed ^ 2);
        let lhs = conv2d(&x, &k, None, g).unwrap().dot(&y).unwrap();
        let rhs = x.dot(&conv_transpose2d(&y, &k, None, g).unwrap()).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()).max(1e-300));
    }

    #[test]
    fn preset_geometry_round_trips_extents(s in prop_oneof![Just(2usize), Just(4), Just(8)], n in 1usize..200) {
        let g = ScalePreset::for_scale(s).unwrap().geometry();
        let up = g.deconv_out(n).unwrap();
        prop_assert_eq!(up, s * n);
        prop_assert_eq!(g.conv_out(up).unwrap(), n);
    }

    #[test]
    fn keys_kernel_is_a_partition_of_unity(t in 0.0f64..1.0, a in -1.0f64..-0.25) {
        let total: f64 = (-1..=2).map(|k| bicubic_kernel(t - k as f64, a)).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resizing_keeps_constants(
        h in 1usize..20,
        w in 1usize..20,
        scale in 0.3f64..3.0,
        v in 0.0f64..1.0,
        c in color(),
    ) {
        let img = ImagePlane::filled(h, w, c, v);
        let out = resize_bicubic(&img, scale, true).unwrap();
        prop_assert!(out.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn quarter_turns_and_flips_are_isometries(h in 1usize..12, w in 1usize..12, c in color(), seed in any::<u64>()) {
        let img = image(h, w, c, seed);
        prop_assert_eq!(&flip_horizontal(&flip_horizontal(&img)), &img);
        prop_assert_eq!(&flip_vertical(&flip_vertical(&img)), &img);
        let r = rotate90(&img);
        prop_assert_eq!(r.dims(), (w, h));
        prop_assert_eq!(&rotate90(&rotate90(&rotate90(&r))), &img);
        // Two flips are a half turn.
        prop_assert_eq!(&flip_vertical(&flip_horizontal(&img)), &rotate90(&r));
    }

    #[test]
    fn augmented_pairs_stay_aligned(
        lh in 6usize..14,
        lw in 6usize..14,
        crop in 2usize..6,
        s in prop_oneof![Just(2usize), Just(4)],
        seed in any::<u64>(),
    ) {
        let hr = image(lh * s, lw * s, ColorSpace::Y, seed);
        let lr = degrade(&hr, s).unwrap();
        let pair = PatchPair::new(lr, hr, s).unwrap();
        let mut rng = seeded_rng(seed);
        let aug = Augmentation::draw(&mut rng, pair.lr.dims(), Some(crop)).unwrap();
        let out = aug.apply(&pair).unwrap();
        prop_assert_eq!(out.lr.dims(), (crop, crop));
        prop_assert_eq!(out.hr.dims(), (crop * s, crop * s));
        let (t, l, _) = aug.crop.unwrap();
        let expected = pair.hr.crop(t * s, l * s, crop * s, crop * s).unwrap();
        let undone = Augmentation { crop: None, ..aug };
        // Applying the same isometry to the uncropped HR window reproduces the patch.
        prop_assert_eq!(&undone.apply_image(&expected, None).unwrap(), &out.hr);
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(h in 15usize..28, w in 15usize..28, c in color(), seed in any::<u64>()) {
        let (a, b) = (image(h, w, c, seed), image(h, w, c, seed ^ 7));
        let proto = EvalProtocol::for_scale(2);
        let (p1, p2) = (psnr(&a, &b, &proto).unwrap(), psnr(&b, &a, &proto).unwrap());
        prop_assert!((p1 - p2).abs() < 1e-12);
        let (s1, s2) = (ssim(&a, &b, &proto).unwrap(), ssim(&b, &a, &proto).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s1));
        prop_assert_eq!(ssim(&a, &a, &proto).unwrap(), 1.0);
    }

    #[test]
    fn ycbcr_round_trip(h in 1usize..8, w in 1usize..8, seed in any::<u64>()) {
        let img = image(h, w, ColorSpace::Rgb, seed);
        let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img).unwrap()).unwrap();
        prop_assert!(back.data().iter().zip(img.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn integer_upscale_keeps_constants(h in 1usize..6, w in 1usize..10, s in 2usize..5, v in 0.0f64..1.0) {
        let img = ImagePlane::filled(h, w, ColorSpace::Y, v);
        let up = upscale(&img, s).unwrap();
        prop_assert_eq!(up.dims(), (h * s, w * s));
        prop_assert!(up.data().iter().all(|x| (x - v).abs() < 1e-12));
    }

    #[test]
    fn lr_schedule_never_increases(
        lr in 1e-6f64..1e-2,
        factor in 1.0f64..20.0,
        interval in 1u64..1000,
        a in 0u64..10_000,
        b in 0u64..10_000,
    ) {
        let cfg = TrainConfig {
            lr,
            decay_factor: factor,
            decay_interval: interval,
            iterations: 10_000,
            ..TrainConfig::new(preset("DBPN-SS", 2).unwrap())
        };
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!(lr_schedule(hi, &cfg) <= lr_schedule(lo, &cfg));
        prop_assert!(lr_schedule(lo, &cfg) <= lr);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn up_then_down_preserves_extent(
        s in prop_oneof![Just(2usize), Just(4), Just(8)],
        h in 1usize..9,
        w in 1usize..9,
        c_in in 2usize..6,
        ef in any::<bool>(),
        seed in any::<u64>(),
    ) {
        let mut store = ParamStore::<f64>::new();
        let mut rng = seeded_rng(seed);
        let p = ScalePreset::for_scale(s).unwrap();
        let up = ProjectionUnit::new(&mut store, &mut rng, "up", Direction::Up, p, c_in, 2, ef, PreluMode::Shared).unwrap();
        let down = ProjectionUnit::new(&mut store, &mut rng, "down", Direction::Down, p, 2, 2, ef, PreluMode::PerChannel).unwrap();
        let mut b = Eager;
        let params = bind_params(&mut b, &store);
        let x = b.constant(tensor([1, c_in, h, w], seed));
        let hr = up.forward(&mut b, &params, &[x]).unwrap();
        prop_assert_eq!(b.value(&hr).shape(), [1, 2, s * h, s * w]);
        let lr = down.forward(&mut b, &params, &[hr]).unwrap();
        prop_assert_eq!(b.value(&lr).shape(), [1, 2, h, w]);
    }

    #[test]
    fn network_config_text_round_trips(
        idx in 0usize..11,
        s in prop_oneof![Just(2usize), Just(4), Just(8)],
        ef in any::<bool>(),
        residual in any::<bool>(),
    ) {
        let mut cfg = preset(PRESETS[idx], s).unwrap();
        cfg.error_feedback = ef;
        cfg.residual = residual;
        prop_assert_eq!(NetworkConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn eight_bit_images_survive_disk(h in 1usize..10, w in 1usize..10, c in color(), seed in any::<u64>(), ppm in any::<bool>()) {
        let img = image(h, w, c, seed);
        let q = ImagePlane::from_planar(h, w, c, img.data().iter().map(|v| (v * 255.0).round() / 255.0).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ext = match (ppm, c) {
            (false, _) => "png",
            (true, ColorSpace::Rgb) => "ppm",
            (true, ColorSpace::Y) => "pgm",
        };
        let path = dir.path().join(format!("img.{ext}"));
        save_image(&q, &path).unwrap();
        let back = load_image(&path).unwrap();
        prop_assert!(back.data().iter().zip(q.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn adam_ignores_zero_gradients(n in 1usize..20, seed in any::<u64>(), steps in 1usize..5) {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("w", tensor([1, 1, 1, n], seed));
        let before = store.value(id).clone();
        let mut adam = Adam::new(AdamConfig::default(), &store);
        for _ in 0..steps {
            adam.step(&mut store).unwrap();
        }
        prop_assert_eq!(store.value(id), &before);
        prop_assert_eq!(adam.t, steps as u64);
    }
}
