mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;
use sphconv::dataio::checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
use sphconv::dataio::tiling::windows_along;
use sphconv::dataio::{
    read_cloud, read_cloud_with, stitch_predictions, synth_scenes, tile_scene, write_cloud, AsciiLayout, Checkpoint,
    SceneSpec, SceneTile,
};
use sphconv::gradcheck::reduced_config;
use sphconv::network::TrainState;
use sphconv::{Error, PointCloud};

fn f32_cloud(seed: u64, n: usize, c: usize, labels: bool) -> PointCloud {
    let mut g = rng(seed);
    let pts = random_points(&mut g, n, 50.0).into_iter().map(|p| p.map(|v| f64::from(v as f32))).collect();
    let feats = random_features(&mut g, n, c).mapv(|v| f64::from(v as f32));
    let labels = labels.then(|| (0..n).map(|_| g.random_range(0..20)).collect());
    PointCloud::new(pts, feats, labels).unwrap()
}

#[test]
fn pts_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for (i, (c, labels)) in [(0, false), (3, true), (6, false)].into_iter().enumerate() {
        let cloud = f32_cloud(i as u64, 1000, c, labels);
        let p = dir.path().join(format!("{i}.pts"));
        write_cloud(&cloud, &p).unwrap();
        assert_eq!(read_cloud(&p).unwrap(), cloud);
    }
}

#[test]
fn ascii_row_with_feature_and_label() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("one.txt");
    std::fs::write(&p, "# x y z f label\n0 0 0 1.5 2\n").unwrap();
    let layout = AsciiLayout {
        features: Some(1),
        labels: true,
    };
    let c = read_cloud_with(&p, layout).unwrap();
    assert_eq!(c.positions, vec![[0.0; 3]]);
    assert_eq!(c.features, ndarray::array![[1.5]]);
    assert_eq!(c.labels, Some(vec![2]));
}

#[test]
fn ascii_errors_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.txt");
    std::fs::write(&p, "0 0 0 1\n0 0 0\n").unwrap();
    assert!(matches!(read_cloud(&p), Err(Error::RowWidth { line: 2, expected: 4, found: 3, .. })));
    std::fs::write(&p, "0 0 zero\n").unwrap();
    match read_cloud(&p) {
        Err(Error::ParseValue { line: 1, token, .. }) => assert_eq!(token, "zero"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncated_binary_reports_sizes() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = f32_cloud(1, 10, 2, true);
    let p = dir.path().join("t.pts");
    write_cloud(&cloud, &p).unwrap();
    let bytes = std::fs::read(&p).unwrap();
    std::fs::write(&p, &bytes[..bytes.len() - 7]).unwrap();
    match read_cloud(&p) {
        Err(Error::Truncated { expected, available, .. }) => {
            assert_eq!(expected, bytes.len() as u64);
            assert_eq!(available, bytes.len() as u64 - 7);
        }
        other => panic!("{other:?}"),
    }
}

fn trained_state() -> TrainState {
    let mut c = reduced_config();
    c.use_density = true;
    let mut spec = SceneSpec::three_class();
    spec.points = c.n_points;
    let scenes: Vec<PointCloud> = synth_scenes(4, 2, &spec).unwrap().into_iter().map(|s| s.cloud).collect();
    let mut state = TrainState::new(&c, 4).unwrap();
    state.train_step(&scenes).unwrap();
    state
}

#[test]
fn checkpoint_save_load_save_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let state = trained_state();
    let a = Checkpoint::from_state(&state);
    let bytes = a.encode();
    let b = Checkpoint::decode(&bytes, "mem".as_ref()).unwrap();
    assert_eq!(a, b);
    let restored = b.to_state().unwrap();
    assert_eq!(restored.adam.step, state.adam.step);
    assert_eq!(Checkpoint::from_state(&restored).encode(), bytes);
    let p = dir.path().join("x.sicn");
    b.save(&p).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), bytes);
}

#[test]
fn checkpoint_skips_unknown_sections() {
    let state = trained_state();
    let mut bytes = Checkpoint::from_state(&state).encode();
    bytes.extend_from_slice(b"XTRA");
    bytes.extend_from_slice(&3u64.to_le_bytes());
    bytes.extend_from_slice(&[1, 2, 3]);
    let c = Checkpoint::decode(&bytes, "mem".as_ref()).unwrap();
    assert_eq!(c, Checkpoint::from_state(&state));
}

#[test]
fn checkpoint_version_gate() {
    let mut bytes = Checkpoint::from_state(&trained_state()).encode();
    assert_eq!(bytes[..4], CHECKPOINT_MAGIC);
    bytes[4..8].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        Checkpoint::decode(&bytes, "mem".as_ref()),
        Err(Error::UnsupportedVersion { version: 2, .. })
    ));
    bytes[..4].copy_from_slice(b"NOPE");
    assert!(matches!(Checkpoint::decode(&bytes, "mem".as_ref()), Err(Error::BadMagic { .. })));
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let bytes = Checkpoint::from_state(&trained_state()).encode();
    assert!(matches!(
        Checkpoint::decode(&bytes[..bytes.len() / 2], "mem".as_ref()),
        Err(Error::Truncated { .. })
    ));
}

#[test]
fn scene_inside_one_cube_is_one_tile() {
    let cloud = PointCloud::from_positions(random_points(&mut rng(2), 50, 0.5)).unwrap();
    let tiles = tile_scene(&cloud, [3.0, 1.5, 1.5], 0.5).unwrap();
    assert_eq!(tiles.len(), 1);
    assert_eq!(tiles[0].point_indices, (0..50).collect::<Vec<_>>());
}

#[test]
fn ten_metre_line_gives_four_windows() {
    let line = PointCloud::from_positions((0..=40).map(|i| [i as f64 * 0.25, 0.0, 0.0]).collect()).unwrap();
    let tiles = tile_scene(&line, [3.0, 3.0, 3.0], 0.5).unwrap();
    let origins: Vec<f64> = tiles.iter().map(|t| t.cube_min[0]).collect();
    assert_eq!(origins, vec![0.0, 2.5, 5.0, 7.5]);
}

#[test]
fn tiling_rejects_bad_overlap() {
    let cloud = PointCloud::from_positions(vec![[0.0; 3]]).unwrap();
    assert!(tile_scene(&cloud, [1.0, 1.0, 1.0], 1.0).is_err());
    assert!(tile_scene(&cloud, [1.0, 0.0, 1.0], 0.0).is_err());
}

#[test]
fn stitching_examples() {
    let tile = |idx: Vec<usize>| SceneTile {
        cube_min: [0.0; 3],
        cube_size: [1.0; 3],
        point_indices: idx,
    };
    let one = stitch_predictions(1, &[tile(vec![0])], &[ndarray::array![[0.2, 0.9, 0.1]]]).unwrap();
    assert_eq!(one, vec![1]);
    let two = stitch_predictions(
        1,
        &[tile(vec![0]), tile(vec![0])],
        &[ndarray::array![[1.0, 0.0]], ndarray::array![[0.0, 2.0]]],
    )
    .unwrap();
    assert_eq!(two, vec![1]);
    let tie = stitch_predictions(1, &[tile(vec![0])], &[ndarray::array![[0.5, 0.5, 0.5]]]).unwrap();
    assert_eq!(tie, vec![0]);
}

#[test]
fn synth_is_deterministic() {
    let spec = SceneSpec::three_class();
    let a = synth_scenes(3, 2, &spec).unwrap();
    let b = synth_scenes(3, 2, &spec).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.cloud, y.cloud);
    }
}

#[test]
fn duplicate_fraction_gives_exact_pairs() {
    let mut spec = SceneSpec::three_class();
    spec.points = 1000;
    spec.duplicate_fraction = 0.2;
    let s = &synth_scenes(1, 1, &spec).unwrap()[0];
    let mut keys: Vec<[u64; 3]> = s.cloud.positions.iter().map(|p| p.map(f64::to_bits)).collect();
    keys.sort_unstable();
    let pairs = keys.windows(2).filter(|w| w[0] == w[1]).count();
    assert_eq!(pairs, 200);
    assert_eq!(s.cloud.len(), 1000);
}

#[test]
fn labels_match_nearest_primitive() {
    let spec = SceneSpec::plane_sphere();
    for s in synth_scenes(6, 5, &spec).unwrap() {
        let labels = s.cloud.labels.as_ref().unwrap();
        for (p, &l) in s.cloud.positions.iter().zip(labels) {
            assert_eq!(s.nearest_class(*p), l);
        }
    }
    for s in synth_scenes(6, 5, &SceneSpec::three_class()).unwrap() {
        let labels = s.cloud.labels.as_ref().unwrap();
        for (p, &l) in s.cloud.positions.iter().zip(labels) {
            assert_eq!(s.nearest_class(*p), l);
        }
    }
}

#[test]
fn density_ramp_makes_sampling_uneven() {
    let mut spec = SceneSpec::three_class();
    spec.primitives.truncate(1);
    spec.primitives[0].density = 4.0;
    spec.points = 4000;
    let s = &synth_scenes(2, 1, &spec).unwrap()[0];
    let left = s.cloud.positions.iter().filter(|p| p[0] < 0.5).count();
    let right = s.cloud.len() - left;
    assert!(right as f64 > 1.8 * left as f64, "{left} vs {right}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tiles_cover_every_point(
        seed in any::<u64>(),
        size in prop::array::uniform3(0.3f64..3.0),
        overlap_frac in 0.0f64..0.9,
        extent in 0.5f64..8.0,
    ) {
        let mut g = rng(seed);
        let pts: Vec<_> = (0..400).map(|_| [g.random_range(0.0..extent), g.random_range(-1.0..1.0), g.random_range(0.0..0.5 * extent)]).collect();
        let cloud = PointCloud::from_positions(pts).unwrap();
        let overlap = overlap_frac * size.iter().copied().fold(f64::INFINITY, f64::min);
        let tiles = tile_scene(&cloud, size, overlap).unwrap();
        let mut seen = vec![false; cloud.len()];
        for t in &tiles {
            prop_assert!(!t.point_indices.is_empty());
            for &i in &t.point_indices {
                prop_assert!(t.contains(cloud.positions[i]));
                seen[i] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        let (lo, hi) = cloud.bounds().unwrap();
        for ax in 0..3 {
            let stride = size[ax] - overlap;
            let n = windows_along(hi[ax] - lo[ax], size[ax], stride);
            let in_range = tiles.iter().all(|t| {
                let i = ((t.cube_min[ax] - lo[ax]) / stride).round();
                i >= 0.0 && (i as usize) < n
            });
            prop_assert!(in_range);
        }
    }

    #[test]
    fn stitching_ignores_tile_order(seed in any::<u64>()) {
        let mut g = rng(seed);
        let cloud = PointCloud::from_positions(random_points(&mut g, 300, 3.0)).unwrap();
        let tiles = tile_scene(&cloud, [2.0, 2.0, 2.0], 0.7).unwrap();
        let logits: Vec<Array2<f64>> = tiles
            .iter()
            .map(|t| Array2::from_shape_fn((t.point_indices.len(), 4), |_| g.random_range(-1.0..1.0)))
            .collect();
        let want = stitch_predictions(cloud.len(), &tiles, &logits).unwrap();
        let mut order: Vec<usize> = (0..tiles.len()).collect();
        order.shuffle(&mut g);
        let t2: Vec<SceneTile> = order.iter().map(|&i| tiles[i].clone()).collect();
        let l2: Vec<Array2<f64>> = order.iter().map(|&i| logits[i].clone()).collect();
        prop_assert_eq!(stitch_predictions(cloud.len(), &t2, &l2).unwrap(), want);
    }
}
