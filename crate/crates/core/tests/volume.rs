//! Volume model, z-resampling and classifier preprocessing.

use ctview_core::volume::{
    normalize_hu, prepare_classifier_input, prepare_with_size, Axis, Geometry, LabelVolume, TransformDirection, Volume,
    ZResample, LABEL_LESION, LABEL_LUNG,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hu(x: usize, y: usize, z: usize) -> f64 {
    -1250.0 + 100.0 * x as f64 + 37.0 * y as f64 + 300.0 * z as f64
}

#[test]
fn preprocessing_matches_composed_steps() {
    let g = Geometry::new([6, 5, 3], [1.0, 1.0, 2.0], [0.0; 3]).unwrap();
    let vol = Volume::from_fn(g, hu).unwrap();
    // lung box x 1..=4, y 1..=2, with one interior hole and one lesion voxel
    let mask = LabelVolume::from_fn(g, |x, y, _| match (x, y) {
        (2, 1) => 0,
        (3, 2) => LABEL_LESION,
        _ if (1..=4).contains(&x) && (1..=2).contains(&y) => LABEL_LUNG,
        _ => 0,
    })
    .unwrap();
    let input = prepare_with_size(&vol, &mask, 4).unwrap();

    // 2mm → 1mm gives 5 slices at source z = 0, 0.5, 1, 1.5, 2
    assert_eq!(input.slices, 5);
    assert_eq!(input.geometry.side, 4);
    assert_eq!(input.geometry.pad, [0, 1]);
    for k in 0..5 {
        let zf = k as f64 / 2.0;
        for row in 0..4 {
            for col in 0..4 {
                let got = input.data[k * 16 + row * 4 + col];
                // crop starts at x = 1; the 2-row-high box is padded by one row, so row == y
                let (x, y) = (col + 1, row);
                let inside = (1..=2).contains(&y) && (x, y) != (2, 1);
                // linear in z, so interpolation is exact
                let expect = if inside { normalize_hu(hu(x, y, 0) + 300.0 * zf) as f32 } else { 0.0 };
                assert_eq!(got, expect, "slice {k} row {row} col {col}");
            }
        }
    }
}

#[test]
fn classifier_input_shape_and_range() {
    let g = Geometry::new([40, 30, 6], [0.7, 0.7, 2.5], [0.0; 3]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let vol = Volume::from_fn(g, |_, _, _| rng.random_range(-2000.0..1500.0)).unwrap();
    let mask = LabelVolume::from_fn(g, |x, y, _| u8::from((5..30).contains(&x) && (4..20).contains(&y))).unwrap();
    let input = prepare_classifier_input(&vol, &mask).unwrap();
    // extent (6 - 1) · 2.5 = 12.5 mm → 13 slices at 1 mm
    assert_eq!(input.slices, 13);
    assert_eq!(input.size, 224);
    assert_eq!(input.data.len(), 13 * 224 * 224);
    assert!(input.data.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn normalization_points() {
    assert_eq!(normalize_hu(-1250.0), 0.0);
    assert_eq!(normalize_hu(250.0), 1.0);
    assert_eq!(normalize_hu(-500.0), 0.5);
    assert_eq!(normalize_hu(-3000.0), 0.0);
    assert_eq!(normalize_hu(3000.0), 1.0);
}

#[test]
fn ramp_resamples_exactly_to_one_millimetre() {
    for sz in [2.0, 2.5, 3.0, 5.0] {
        let g = Geometry::new([3, 2, 5], [1.0, 1.0, sz], [0.0; 3]).unwrap();
        let vol = Volume::from_fn(g, |x, _, z| 10.0 * x as f64 + z as f64 * sz).unwrap();
        let r = vol.resample_z(1.0).unwrap();
        assert_eq!(r.dims()[2], (4.0 * sz) as usize + 1);
        for z in 0..r.dims()[2] {
            for x in 0..3 {
                assert!((r.get(x, 1, z) - (10.0 * x as f64 + z as f64)).abs() < 1e-12, "sz {sz} z {z}");
            }
        }
    }
}

#[test]
fn slices_reassemble_the_volume() {
    let g = Geometry::new([4, 3, 5], [1.0; 3], [0.0; 3]).unwrap();
    let vol = Volume::from_fn(g, |x, y, z| (x * 100 + y * 10 + z) as f64).unwrap();
    for axis in Axis::ALL {
        let (ca, ra) = axis.in_plane();
        let mut rebuilt = vec![f64::NAN; g.len()];
        for i in 0..g.axis_len(axis) {
            let s = vol.extract_slice(axis, i).unwrap();
            assert_eq!((s.width, s.height), (g.dims[ca], g.dims[ra]));
            for row in 0..s.height {
                for col in 0..s.width {
                    let [x, y, z] = ctview_core::volume::plane_to_voxel(axis, col, row, i);
                    rebuilt[g.index(x, y, z)] = s.get(col, row);
                }
            }
        }
        assert_eq!(rebuilt.as_slice(), vol.data(), "{axis:?}");
    }
}

#[test]
fn transforms_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let g = Geometry::new(
            [8, 8, 8],
            std::array::from_fn(|_| rng.random_range(0.2..5.0)),
            std::array::from_fn(|_| rng.random_range(-500.0..500.0)),
        )
        .unwrap();
        let p: [f64; 3] = std::array::from_fn(|_| rng.random_range(-50.0..50.0));
        let back = g.transform(g.transform(p, TransformDirection::VoxelToWorld), TransformDirection::WorldToVoxel);
        for a in 0..3 {
            assert!((back[a] - p[a]).abs() < 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn resampled_values_stay_within_the_input_range(
        nz in 1usize..7,
        sz in 0.3f64..6.0,
        values in prop::collection::vec(-1500.0f64..1500.0, 2 * 7),
    ) {
        let g = Geometry::new([2, 1, nz], [1.0, 1.0, sz], [0.0; 3]).unwrap();
        let vol = Volume::new(g, values[..2 * nz].to_vec()).unwrap();
        let (lo, hi) = vol.min_max();
        let r = vol.resample_z(1.0).unwrap();
        prop_assert!(r.data().iter().all(|v| *v >= lo && *v <= hi));
    }

    #[test]
    fn bounding_box_matches_exhaustive_scan(
        labels in prop::collection::vec(prop::sample::select(vec![0u8, 0, 0, 1, 2]), 5 * 4 * 3),
    ) {
        let g = Geometry::new([5, 4, 3], [1.0; 3], [0.0; 3]).unwrap();
        let lv = LabelVolume::new(g, labels.clone()).unwrap();
        for label in [1u8, 2] {
            let hits: Vec<[usize; 3]> = (0..g.len()).filter(|&i| labels[i] == label).map(|i| g.coords(i)).collect();
            match lv.bounding_box(label) {
                Ok(b) => {
                    for a in 0..3 {
                        prop_assert_eq!(b.min[a], hits.iter().map(|p| p[a]).min().unwrap());
                        prop_assert_eq!(b.max[a], hits.iter().map(|p| p[a]).max().unwrap());
                    }
                }
                Err(_) => prop_assert!(hits.is_empty()),
            }
        }
    }
}
