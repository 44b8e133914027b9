//! Property tests for cross-module invariants.

use ersinv::dataset::{generate_dataset, DatasetConfig};
use ersinv::features::{
    self, add_noise, apply_noise, make_sample, noise_field, NoiseSpec, NormalizationSpec,
    SampleMeta, TierMap, INPUT_CHANNELS, TIER,
};
use ersinv::forward::{ForwardConfig, ForwardSolver};
use ersinv::model::{
    sample_model, FamilyType, GridSpec, ModelFamilyConfig, ResistivityModel,
    BACKGROUND_RESISTIVITY, HIGH_VALUES, LOW_VALUES,
};
use ersinv::nn::{
    forward_with_hook, predict, LayerKind, LayerParams, Mode, NetworkSpec, Parameters, Tensor4,
};
use ersinv::objective::{
    depth_weight, smooth_term, total_loss, value_term, LossConfig, LossPreset,
};
use ersinv::raster::Raster;
use ersinv::rng::rng_from_seed;
use ersinv::train::{metric_weights_for_target, wmse, wr};
use proptest::prelude::*;

fn family(code: usize) -> FamilyType {
    FamilyType::ALL[code % 5]
}

/// Smallest Chebyshev distance between any cell of one body and any of the other.
fn cell_distance(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    a.iter()
        .flat_map(|&(r0, c0)| {
            b.iter()
                .map(move |&(r1, c1)| r0.abs_diff(r1).max(c0.abs_diff(c1)))
        })
        .min()
        .unwrap()
}

fn cells(spec: &ersinv::model::AnomalySpec) -> Vec<(usize, usize)> {
    spec.rects()
        .iter()
        .flat_map(|r| (r.row0..=r.row1).flat_map(move |i| (r.col0..=r.col1).map(move |j| (i, j))))
        .collect()
}

fn raster(rows: usize, cols: usize, values: &[f64]) -> Raster {
    Raster::from_fn(rows, cols, |i, j| values[(i * cols + j) % values.len()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sampled_models_respect_family_rules(seed in any::<u64>(), code in 0usize..5) {
        let f = family(code);
        let cfg = ModelFamilyConfig::table(f, 1);
        let grid = GridSpec::desk();
        let (model, bodies) = sample_model(&grid, &cfg, &mut rng_from_seed(seed)).unwrap();
        prop_assert_eq!(bodies.len(), f.body_count());
        prop_assert_eq!(model.background, BACKGROUND_RESISTIVITY);
        for &v in model.values.as_slice() {
            prop_assert!(v == BACKGROUND_RESISTIVITY || LOW_VALUES.contains(&v) || HIGH_VALUES.contains(&v), "{}", v);
        }
        let body_cells: Vec<Vec<(usize, usize)>> = bodies.iter().map(cells).collect();
        for (b, cs) in bodies.iter().zip(&body_cells) {
            for &(i, j) in cs {
                prop_assert_eq!(model.get(i, j), b.value);
            }
        }
        let painted: usize = body_cells.iter().map(Vec::len).sum();
        prop_assert_eq!(model.anomalous_cell_count(), painted);
        for i in 0..body_cells.len() {
            for j in i + 1..body_cells.len() {
                prop_assert!(cell_distance(&body_cells[i], &body_cells[j]) >= cfg.min_separation);
            }
        }
    }

    #[test]
    fn stored_channels_stay_in_unit_interval(values in prop::collection::vec(0.01f64..1e5, 1..40)) {
        let spec = NormalizationSpec::default();
        let r = raster(8, 16, &values);
        let n = r.map(|v| spec.normalize_clamped(v));
        prop_assert!(n.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        let field = noise_field(8, 16, &NoiseSpec::new(6.0), &mut rng_from_seed(values.len() as u64));
        let noisy = apply_noise(&n, &field);
        prop_assert!(noisy.as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noise_commutes_with_mirroring(seed in any::<u64>(), level in -5.0f64..5.0) {
        let spec = NoiseSpec::new(level);
        let x = Raster::from_fn(6, 10, |i, j| 0.05 * i as f64 + 0.07 * j as f64);
        let direct = add_noise(&x.mirrored(), &spec, &mut rng_from_seed(seed));
        let field = noise_field(6, 10, &spec, &mut rng_from_seed(seed));
        let remapped = apply_noise(&x, &field.mirrored()).mirrored();
        prop_assert_eq!(direct, remapped);
    }

    #[test]
    fn loss_is_non_negative_and_self_loss_is_smoothness(
        a in prop::collection::vec(0.0f64..1.0, 1..50),
        b in prop::collection::vec(0.0f64..1.0, 1..50),
        preset in 0usize..4,
    ) {
        let cfg = LossPreset::ALL[preset].config();
        let (p, t) = (raster(6, 9, &a), raster(6, 9, &b));
        prop_assert!(total_loss(&p, &t, &cfg).unwrap() >= 0.0);
        let z = 54.0;
        prop_assert_eq!(total_loss(&t, &t, &cfg).unwrap(), cfg.alpha * smooth_term(&t) / z);
    }

    #[test]
    fn deeper_errors_cost_more(rows in 2usize..40, i1 in 0usize..40, i2 in 0usize..40, e in 0.01f64..1.0, beta in 0.1f64..3.0) {
        let (i1, i2) = (i1 % rows, i2 % rows);
        prop_assume!(i1 < i2);
        let cfg = LossConfig { alpha: 0.0, beta, lambda: 8.0 };
        let target = Raster::zeros(rows, 3);
        let at = |i: usize| {
            let mut p = target.clone();
            p.set(i, 1, e);
            value_term(&p, &target, &cfg).unwrap()
        };
        prop_assert!(at(i2) > at(i1));
        prop_assert!(depth_weight(i2, &cfg) > depth_weight(i1, &cfg));
    }

    #[test]
    fn wr_is_bounded_and_wmse_non_negative(
        a in prop::collection::vec(0.0f64..1.0, 2..60),
        b in prop::collection::vec(0.0f64..1.0, 2..60),
    ) {
        let (p, t) = (raster(7, 11, &a), raster(7, 11, &b));
        let w = [metric_weights_for_target(&t)];
        prop_assert!(wmse(std::slice::from_ref(&p), std::slice::from_ref(&t), &w).unwrap() >= 0.0);
        if let Ok(s) = wr(&[p], &[t], &w) {
            for r in s.per_sample.into_iter().flatten() {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r), "{}", r);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn output_shape_for_any_valid_spec(
        levels in 1usize..4,
        base in 1usize..4,
        blocks in 0usize..3,
        channels in 1usize..4,
        n in 1usize..3,
        hk in 1usize..3,
        wk in 1usize..4,
        seed in any::<u64>(),
    ) {
        let widths: Vec<usize> = (0..=levels).map(|k| base << k).collect();
        let spec = NetworkSpec::ersinvnet(channels, &widths, blocks).unwrap();
        let unit = 1 << levels;
        let (h, w) = (unit * hk, unit * wk * 2);
        let params = Parameters::init(&spec, seed);
        prop_assert_eq!(&Parameters::init(&spec, seed), &params);
        let x = Tensor4::randn([n, channels, h, w], 1.0, &mut rng_from_seed(seed));
        let y = predict(&spec, &params, &x).unwrap();
        prop_assert_eq!(y.shape(), [n, 1, h, w]);
        prop_assert_eq!(predict(&spec, &params, &x).unwrap(), y);
    }

    #[test]
    fn homogeneous_half_space_any_resistivity(rho in 10.0f64..2000.0) {
        let grid = GridSpec::desk();
        let solver = ForwardSolver::new(grid, ForwardConfig::default()).unwrap();
        let (wenner, ws) = solver.sections(&ResistivityModel::homogeneous(grid, rho)).unwrap();
        for m in wenner.measurements.iter().chain(&ws.measurements) {
            prop_assert!((m.apparent_resistivity / rho - 1.0).abs() <= 0.05);
        }
    }
}

#[test]
fn concat_skip_channels_can_be_cut() {
    let spec = NetworkSpec::ersinvnet(3, &[2, 4], 0).unwrap();
    let concat = spec
        .layers
        .iter()
        .position(|l| matches!(l.kind, LayerKind::Concat(_)))
        .unwrap();
    let consumer = concat + 1;
    assert_eq!(spec.layers[consumer].kind, LayerKind::Conv3x3);
    let own = spec.layers[concat].out_channels / 2;
    let x = Tensor4::randn([1, 3, 8, 16], 1.0, &mut rng_from_seed(5));

    let run = |params: &Parameters, perturb: bool| {
        let mut hook = |l: usize, t: &mut Tensor4| {
            if perturb && l == concat {
                for c in own..t.c {
                    for v in t.channel_mut(0, c) {
                        *v += 3.0;
                    }
                }
            }
        };
        forward_with_hook(&spec, params, &x, Mode::Eval, &mut hook)
            .unwrap()
            .0
    };

    let mut params = Parameters::init(&spec, 8);
    assert_ne!(
        run(&params, false),
        run(&params, true),
        "skip channels feed the decoder"
    );
    let LayerParams::Conv { w, .. } = &mut params.layers[consumer] else {
        panic!("consumer is a convolution")
    };
    let in_c = spec.layers[consumer].in_channels;
    for (k, v) in w.iter_mut().enumerate() {
        if (k / 9) % in_c >= own {
            *v = 0.0;
        }
    }
    assert_eq!(run(&params, false), run(&params, true));
}

#[test]
fn tier_channel_depends_only_on_dimensions() {
    let grid = GridSpec::desk();
    let solver = ForwardSolver::new(grid, ForwardConfig::default()).unwrap();
    let spec = NormalizationSpec::default();
    // Stored channels are f32.
    let expected = TierMap::new(grid.height, grid.width)
        .scaled()
        .map(|v| v as f32 as f64);
    for (seed, code) in [(1, 0), (2, 3)] {
        let cfg = ModelFamilyConfig::table(family(code), 1);
        let (model, anomalies) = sample_model(&grid, &cfg, &mut rng_from_seed(seed)).unwrap();
        let (wenner, ws) = solver.sections(&model).unwrap();
        let meta = SampleMeta {
            family: cfg.family,
            seed,
            index: 0,
            anomalies,
        };
        let s = make_sample(&model, &wenner, &ws, &spec, meta).unwrap();
        assert_eq!(s.input.len(), INPUT_CHANNELS);
        assert_eq!(s.input[TIER], expected);
    }
}

#[test]
fn same_seed_same_dataset_bytes() {
    let encode = |seed| {
        let (data, manifest) = generate_dataset(&DatasetConfig::desk(6, seed)).unwrap();
        let bytes = features::container::encode(&data.train, &data.normalization).unwrap();
        (bytes, serde_json::to_vec(&manifest).unwrap())
    };
    let a = encode(21);
    assert_eq!(a, encode(21));
    assert_ne!(a.0, encode(22).0);
}
