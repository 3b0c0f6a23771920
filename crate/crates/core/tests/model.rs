mod common;

use common::*;
use mgsf::beamform::BeamformerBank;
use mgsf::geometry::ArrayGeometry;
use mgsf::mcmodel::{Architecture, Head, Model, PoolScope, SpatialFilterLayer, WtsfConfig, WtsfHead};
use mgsf::nnet::Matrix;
use mgsf::dsp::GlobalStats;
use mgsf::mcmodel::ClassifierConfig;
use mgsf::Error;
use num_complex::Complex64;

const K: usize = 127;

fn triangle() -> ArrayGeometry {
    ArrayGeometry::seven_mic_circular().subset("tri", &[1, 3, 5]).unwrap()
}

/// `|w^H x|^2` computed on complex numbers straight from the bank.
fn bank_power(bank: &BeamformerBank, g: usize, d: usize, row: &[f64], k: usize) -> f64 {
    let m = bank.channels(g);
    let x: Vec<Complex64> = (0..m)
        .map(|c| Complex64::new(row[c * 2 * K + 2 * k], row[c * 2 * K + 2 * k + 1]))
        .collect();
    bank.weight(g, d, k)
        .iter()
        .zip(&x)
        .map(|(w, v)| w.conj() * v)
        .sum::<Complex64>()
        .norm_sqr()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

#[test]
fn sf_layer_reproduces_bank_powers() {
    let geoms = [pair("a", 0.073), pair("b", 0.036), triangle()];
    let bank = small_bank(&geoms, 12);
    let sf = SpatialFilterLayer::from_bank(&bank);
    let x = randn(4, 2 * 2 * K, &mut rng(1));
    let (grid, cache) = sf.forward(&x, None).unwrap();
    assert_eq!(cache.active(), &[true, true, false]);
    for t in 0..4 {
        for k in 0..K {
            let row = grid.row(t * K + k);
            for g in 0..3 {
                for d in 0..12 {
                    let got = row[g * 12 + d];
                    if g == 2 {
                        assert_eq!(got, 0.0, "inactive geometry must be zero");
                    } else {
                        let want = bank_power(&bank, g, d, x.row(t), k);
                        assert!(close(got, want, 1e-10), "t{t} k{k} g{g} d{d}: {got} vs {want}");
                    }
                }
            }
        }
    }
    // a three-channel input activates only the triangle
    let x3 = randn(2, 3 * 2 * K, &mut rng(2));
    let (grid3, cache3) = sf.forward(&x3, None).unwrap();
    assert_eq!(cache3.active(), &[false, false, true]);
    for k in 0..K {
        for d in 0..12 {
            let want = bank_power(&bank, 2, d, x3.row(1), k);
            assert!(close(grid3.row(K + k)[24 + d], want, 1e-10));
        }
    }
    assert!(matches!(sf.forward(&randn(1, 4 * 2 * K, &mut rng(3)), None), Err(Error::Geometry(_))));
}

#[test]
fn explicit_geometry_id_restricts_activity() {
    let bank = small_bank(&[pair("a", 0.073), pair("b", 0.036)], 4);
    let sf = SpatialFilterLayer::from_bank(&bank);
    let x = randn(1, 4 * K, &mut rng(4));
    let (grid, cache) = sf.forward(&x, Some("b")).unwrap();
    assert_eq!(cache.active(), &[false, true]);
    assert!(grid.row(5)[..4].iter().all(|&v| v == 0.0));
    assert!(sf.forward(&x, Some("zz")).is_err());
}

fn init_models(noise: f64) -> (BeamformerBank, Model, Model) {
    let geoms = [pair("a", 0.073), pair("b", 0.036)];
    let bank = small_bank(&geoms, 12);
    let mut r = rng(5);
    let base = Model::lfbe_baseline(ClassifierConfig::default(), &mut r).unwrap();
    let single = Model::single_dft_from(&base, GlobalStats::identity(2 * K)).unwrap();
    let esf = Model::multichannel_from(&single, &bank, Architecture::Esf, WtsfConfig::default(), &mut r).unwrap();
    let wtsf = Model::multichannel_from(
        &single,
        &bank,
        Architecture::Wtsf,
        WtsfConfig {
            filters: 12,
            noise_std: noise,
            scope: PoolScope::Row,
        },
        &mut r,
    )
    .unwrap();
    (bank, esf, wtsf)
}

#[test]
fn esf_init_is_the_mean_beam_power() {
    let (bank, esf, _) = init_models(0.0);
    let x = randn(3, 4 * K, &mut rng(6));
    let p = esf.fe_input(&x).unwrap();
    for t in 0..3 {
        for k in 0..K {
            let mean: f64 = (0..2)
                .flat_map(|g| (0..12).map(move |d| (g, d)))
                .map(|(g, d)| bank_power(&bank, g, d, x.row(t), k))
                .sum::<f64>()
                / 24.0;
            assert!(close(p.row(t)[k], mean, 1e-10));
        }
    }
}

#[test]
fn one_hot_wtsf_is_max_energy_selection() {
    let (bank, _, wtsf) = init_models(0.0);
    let x = randn(3, 4 * K, &mut rng(7));
    let p = wtsf.fe_input(&x).unwrap();
    let (grid, _) = wtsf.sf_grid(&x).unwrap();
    for t in 0..3 {
        for k in 0..K {
            let row = grid.row(t * K + k);
            // exact: one-hot filters copy the grid values bit for bit
            let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(p.row(t)[k], best);
            let oracle = (0..2)
                .flat_map(|g| (0..12).map(move |d| (g, d)))
                .map(|(g, d)| bank_power(&bank, g, d, x.row(t), k))
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(close(best, oracle, 1e-10));
        }
    }
}

#[test]
fn per_geometry_pool_averages_the_geometry_maxima() {
    let mut r = rng(8);
    let head = WtsfHead::one_hot(3, 3, 0.0, PoolScope::PerGeometry, &mut r).unwrap();
    let grid = Matrix::from_rows(&[vec![1.0, 5.0, 2.0, 7.0, 0.0, 3.0]]).unwrap();
    let (y, _) = head.forward(&grid, &[true, true], 1).unwrap();
    assert_eq!(y.data, vec![6.0]);
    let (y, _) = head.forward(&grid, &[false, true], 1).unwrap();
    assert_eq!(y.data, vec![7.0]);
}

#[test]
fn sf_output_at_a_bin_depends_only_on_that_bin() {
    let bank = small_bank(&[pair("a", 0.073)], 4);
    let sf = SpatialFilterLayer::from_bank(&bank);
    let x = randn(1, 4 * K, &mut rng(9));
    let (before, _) = sf.forward(&x, None).unwrap();
    let mut y = x.clone();
    let k0 = 40;
    y.data[2 * k0] += 1.0; // channel 0, bin k0, real part
    y.data[2 * K + 2 * k0 + 1] -= 0.5; // channel 1, bin k0, imaginary part
    let (after, _) = sf.forward(&y, None).unwrap();
    for k in 0..K {
        let same = before.row(k) == after.row(k);
        assert_eq!(same, k != k0, "bin {k}");
    }
}

#[test]
fn wtsf_filter_gradient_is_shared_across_bins() {
    // the one filter bank sees every bin, so its gradient is nonzero
    // although no bin has its own filter parameters
    let mut model = perturbed_model(Architecture::Wtsf, &[pair("a", 0.073)], 10);
    let x = randn(2, 2 * 2 * K, &mut rng(11));
    model.zero_grad();
    let (logits, tape) = model.forward(&x).unwrap();
    let (_, g) = mgsf::nnet::softmax_xent(&logits, &[0, 1]).unwrap();
    model.backward(&tape, &g).unwrap();
    let Some(Head::Wtsf(h)) = &model.head else { panic!() };
    assert_eq!(h.conv.kernel.w.grad.len(), 3 * 4);
    assert!(h.conv.kernel.w.grad.iter().any(|&v| v != 0.0));
}

#[test]
fn checkpoints_round_trip_for_every_architecture() {
    let geoms = [pair("a", 0.073), pair("b", 0.036)];
    for arch in [Architecture::LfbeBaseline, Architecture::SingleDft, Architecture::Esf, Architecture::Wtsf] {
        let model = perturbed_model(arch, &geoms, 12);
        let bytes = model.to_bytes();
        let back = Model::from_bytes(&bytes).unwrap();
        assert_eq!(back.architecture(), arch);
        assert_eq!(back.to_bytes(), bytes, "{arch}: file round trip");
        assert_eq!(back.num_params(), model.num_params());
        // a second load of the written file is an identical model
        assert_eq!(Model::from_bytes(&back.to_bytes()).unwrap(), back);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mcam");
        back.save(&path).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes);
        assert_eq!(Model::load(&path).unwrap(), back);
    }
}

fn expect_format_error(bytes: &[u8], needle: &str) {
    match Model::from_bytes(bytes) {
        Err(e) => {
            let msg = e.to_string();
            assert!(msg.contains(needle), "'{msg}' lacks '{needle}'");
        }
        Ok(_) => panic!("corrupted checkpoint accepted (expected '{needle}')"),
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let model = perturbed_model(Architecture::Wtsf, &[pair("a", 0.073), pair("b", 0.036)], 13);
    let bytes = model.to_bytes();
    for cut in (0..bytes.len()).step_by(97).chain([bytes.len() - 1]) {
        assert!(Model::from_bytes(&bytes[..cut]).is_err(), "prefix {cut} accepted");
    }
    let mut b = bytes.clone();
    b[0] = b'X';
    expect_format_error(&b, "magic");
    let mut b = bytes.clone();
    b[4] = 2;
    expect_format_error(&b, "version 2");
    let mut b = bytes.clone();
    b[8] = 7;
    expect_format_error(&b, "architecture");
    let mut b = bytes.clone();
    b.push(0);
    expect_format_error(&b, "parameter block");
    expect_format_error(&bytes[..bytes.len() - 2], "parameter block");
    expect_format_error(&bytes[..20], "truncated");
    // an ESF tag in front of WTSF sections cannot line up
    let mut b = bytes.clone();
    b[8] = Architecture::Esf.tag();
    assert!(Model::from_bytes(&b).is_err());
}

#[test]
fn bank_files_round_trip_bit_exactly() {
    let bank = small_bank(&[pair("a", 0.073), triangle()], 12);
    let bytes = bank.to_bytes();
    let back = BeamformerBank::read_from(bytes.as_slice()).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    for g in 0..2 {
        for d in 0..12 {
            for k in 0..K {
                assert_eq!(back.weight(g, d, k), bank.weight(g, d, k));
            }
        }
    }
    for cut in (0..bytes.len()).step_by(101) {
        assert!(BeamformerBank::read_from(&bytes[..cut]).is_err());
    }
    let mut b = bytes.clone();
    b.extend_from_slice(&[1, 2, 3]);
    assert!(BeamformerBank::read_from(b.as_slice()).is_err());
}

#[test]
fn stage_order_is_enforced() {
    let mut r = rng(14);
    let base = Model::lfbe_baseline(ClassifierConfig::default(), &mut r).unwrap();
    let single = Model::single_dft_from(&base, GlobalStats::identity(2 * K)).unwrap();
    let bank = small_bank(&[pair("a", 0.073)], 4);
    assert!(matches!(
        Model::multichannel_from(&base, &bank, Architecture::Esf, WtsfConfig::default(), &mut r),
        Err(Error::Architecture(_))
    ));
    assert!(matches!(Model::single_dft_from(&single, GlobalStats::identity(2 * K)), Err(Error::Architecture(_))));
    assert!(Model::multichannel_from(&single, &bank, Architecture::SingleDft, WtsfConfig::default(), &mut r).is_err());
    assert!(Model::single_dft_from(&base, GlobalStats::identity(10)).is_err());
}
