//! NIfTI-1 reading and writing against hand-laid fixtures.

use ctview_core::ingest::nifti::{write_labels, write_scalar_as};
use ctview_core::ingest::{parse_nifti, write_nifti, Datatype, NiftiError, NiftiVolume};
use ctview_core::volume::{Geometry, LabelVolume, Volume};
use proptest::prelude::*;

/// Header fields at their documented byte offsets, in either byte order.
struct Fixture {
    big_endian: bool,
    dims: [i16; 3],
    datatype: i16,
    bitpix: i16,
    pixdim: [f32; 3],
    slope: f32,
    inter: f32,
    magic: [u8; 4],
}

impl Fixture {
    fn int16_2x2x2(big_endian: bool) -> Self {
        Self {
            big_endian,
            dims: [2, 2, 2],
            datatype: 4,
            bitpix: 16,
            pixdim: [0.75, 0.75, 2.5],
            slope: 0.0,
            inter: 0.0,
            magic: *b"n+1\0",
        }
    }

    fn header(&self) -> Vec<u8> {
        let mut b = vec![0u8; 352];
        let be = self.big_endian;
        let i32b = |v: i32| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        let i16b = |v: i16| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        let f32b = |v: f32| if be { v.to_be_bytes() } else { v.to_le_bytes() };
        b[0..4].copy_from_slice(&i32b(348)); // sizeof_hdr
        let dim = [3, self.dims[0], self.dims[1], self.dims[2], 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            b[40 + 2 * i..42 + 2 * i].copy_from_slice(&i16b(*d)); // dim[8]
        }
        b[70..72].copy_from_slice(&i16b(self.datatype));
        b[72..74].copy_from_slice(&i16b(self.bitpix));
        let pixdim = [1.0, self.pixdim[0], self.pixdim[1], self.pixdim[2], 0.0, 0.0, 0.0, 0.0];
        for (i, p) in pixdim.iter().enumerate() {
            b[76 + 4 * i..80 + 4 * i].copy_from_slice(&f32b(*p));
        }
        b[108..112].copy_from_slice(&f32b(352.0)); // vox_offset
        b[112..116].copy_from_slice(&f32b(self.slope));
        b[116..120].copy_from_slice(&f32b(self.inter));
        b[344..348].copy_from_slice(&self.magic);
        b
    }

    fn with_i16(&self, values: &[i16]) -> Vec<u8> {
        let mut b = self.header();
        for v in values {
            b.extend_from_slice(&if self.big_endian { v.to_be_bytes() } else { v.to_le_bytes() });
        }
        b
    }
}

const VALUES: [i16; 8] = [-1000, -850, 40, 0, 250, -1250, 7, 1024];

fn scalar(v: NiftiVolume) -> Volume<f64> {
    match v {
        NiftiVolume::Scalar(s) => s,
        NiftiVolume::Label(_) => panic!("expected scalars"),
    }
}

#[test]
fn handcrafted_int16_volume() {
    let vol = scalar(parse_nifti(&Fixture::int16_2x2x2(false).with_i16(&VALUES)).unwrap());
    assert_eq!(vol.dims(), [2, 2, 2]);
    assert_eq!(vol.spacing(), [0.75, 0.75, 2.5]);
    let expect: Vec<f64> = VALUES.iter().map(|&v| v as f64).collect();
    assert_eq!(vol.data(), expect.as_slice());
    // x-fastest: voxel (1, 0, 1) is element 5
    assert_eq!(vol.get(1, 0, 1), -1250.0);
}

#[test]
fn byte_swapped_twin_parses_identically() {
    let le = parse_nifti(&Fixture::int16_2x2x2(false).with_i16(&VALUES)).unwrap();
    let be = parse_nifti(&Fixture::int16_2x2x2(true).with_i16(&VALUES)).unwrap();
    assert_eq!(le, be);
    let mut scaled = Fixture::int16_2x2x2(true);
    scaled.slope = 2.0;
    scaled.inter = -1024.0;
    let v = scalar(parse_nifti(&scaled.with_i16(&VALUES)).unwrap());
    assert_eq!(v.get(0, 0, 0), -3024.0);
}

#[test]
fn malformed_files_produce_specific_errors() {
    let mut bad = Fixture::int16_2x2x2(false);
    bad.magic = *b"BAD\0";
    assert!(matches!(parse_nifti(&bad.with_i16(&VALUES)), Err(NiftiError::BadMagic(m)) if &m == b"BAD\0"));

    let full = Fixture::int16_2x2x2(false).with_i16(&VALUES);
    match parse_nifti(&full[..full.len() - 3]) {
        Err(NiftiError::Truncated { offset: 352, needed: 16, available }) => assert_eq!(available, 365),
        other => panic!("expected truncation, got {other:?}"),
    }
    assert!(matches!(parse_nifti(&full[..100]), Err(NiftiError::TooShort(100))));

    let mut odd = Fixture::int16_2x2x2(false);
    odd.datatype = 512;
    assert!(matches!(parse_nifti(&odd.with_i16(&VALUES)), Err(NiftiError::UnsupportedDatatype(512))));
}

fn exact_in(dt: Datatype) -> impl Strategy<Value = f64> {
    match dt {
        Datatype::Uint8 => (0u8..=255).prop_map(f64::from).boxed(),
        Datatype::Int16 => any::<i16>().prop_map(f64::from).boxed(),
        Datatype::Int32 => any::<i32>().prop_map(f64::from).boxed(),
        Datatype::Float32 => (-1e6f32..1e6).prop_map(f64::from).boxed(),
        Datatype::Float64 => (-1e12f64..1e12).boxed(),
    }
}

fn volume_of(dt: Datatype) -> impl Strategy<Value = Volume<f64>> {
    (1usize..5, 1usize..5, 1usize..5, prop::array::uniform3(0.1f32..5.0), prop::array::uniform3(-200.0f32..200.0))
        .prop_flat_map(move |(nx, ny, nz, sp, origin)| {
            prop::collection::vec(exact_in(dt), nx * ny * nz).prop_map(move |data| {
                let g = Geometry::new([nx, ny, nz], sp.map(f64::from), origin.map(f64::from)).unwrap();
                Volume::new(g, data).unwrap()
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_datatype_round_trips_bit_exactly(
        (dt, vol) in prop::sample::select(Datatype::ALL.to_vec()).prop_flat_map(|dt| (Just(dt), volume_of(dt))),
    ) {
        let back = scalar(parse_nifti(&write_scalar_as(&vol, dt)).unwrap());
        prop_assert_eq!(back.geometry(), vol.geometry());
        for (a, b) in back.data().iter().zip(vol.data()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn labels_round_trip(labels in prop::collection::vec(0u8..3, 24)) {
        let g = Geometry::new([2, 3, 4], [1.0, 1.5, 2.0], [0.0; 3]).unwrap();
        let lv = LabelVolume::new(g, labels).unwrap();
        prop_assert_eq!(parse_nifti(&write_labels(&lv)).unwrap(), NiftiVolume::Label(lv));
    }
}

fn golden_phantom() -> Volume<f64> {
    let g = Geometry::new([3, 3, 3], [0.75, 0.75, 2.0], [-12.0, 4.5, 100.0]).unwrap();
    Volume::from_fn(g, |x, y, z| if (x, y, z) == (1, 1, 1) { -450.0 } else { -850.0 + (x + 3 * y + 9 * z) as f64 })
        .unwrap()
}

#[test]
fn golden_bytes_are_stable() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/phantom_3x3x3.nii");
    let bytes = write_nifti(&NiftiVolume::Scalar(golden_phantom()));
    if std::env::var_os("CTVIEW_RECORD_GOLDEN").is_some() {
        std::fs::write(&path, &bytes).unwrap();
    }
    let golden = std::fs::read(&path).expect("golden fixture present");
    assert_eq!(bytes, golden);
    assert_eq!(scalar(parse_nifti(&golden).unwrap()), golden_phantom());
}
