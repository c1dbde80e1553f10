mod common;

use std::path::Path;

use proptest::prelude::*;
use warpforge::analyze::fold_report;
use warpforge::data::io::{self, DFLD_HEADER_LEN};
use warpforge::data::{
    self, make_ground_truth_warp, make_phantom, PhantomKind, PhantomSpec, SyntheticWarpSpec,
};
use warpforge::{DisplacementField, Error, Image, LabelMap};

fn phantom(kind: PhantomKind, size: usize) -> (Image, LabelMap) {
    make_phantom(&PhantomSpec::new(kind, size)).unwrap()
}

#[test]
fn phantoms_are_deterministic_and_in_range() {
    for kind in [PhantomKind::SheppLogan, PhantomKind::EllipseBody] {
        let (a, la) = phantom(kind, 64);
        let (b, lb) = phantom(kind, 64);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(a.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(a.get(0, 0), 0.0);
        assert_eq!(la.get(0, 0), 0);
        // Labels are constant where the image is: background stays zero.
        for (v, l) in a.values().iter().zip(la.labels()) {
            if *l == 0 {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

#[test]
fn shepp_logan_structure() {
    let (img, labels) = phantom(PhantomKind::SheppLogan, 256);
    assert_eq!(img.dims(), (256, 256));
    let (_, hi) = img.min_max();
    assert_eq!(hi, 1.0);
    // The skull ring is the brightest tissue.
    let edge = (0..256).find(|&x| labels.get(128, x) != 0).unwrap();
    assert!((38..=42).contains(&edge), "skull starts at {edge}");
    assert_eq!(labels.get(128, edge), 1);
    assert_eq!(img.get(128, edge), 1.0);
    assert_eq!(labels.alphabet().len(), 11);
}

#[test]
fn ellipse_body_has_seven_regions() {
    let (_, labels) = phantom(PhantomKind::EllipseBody, 128);
    assert_eq!(labels.alphabet(), (0..=7).collect::<Vec<u16>>());
}

#[test]
fn phantom_spec_validation() {
    for size in [16, 100, 0] {
        assert!(matches!(
            make_phantom(&PhantomSpec::new(PhantomKind::SheppLogan, size)),
            Err(Error::Config(_))
        ));
    }
    let mut spec = PhantomSpec::new(PhantomKind::SheppLogan, 64);
    spec.blur_sigma = Some(0.0);
    assert!(make_phantom(&spec).is_err());
    spec.blur_sigma = None;
    spec.noise_sigma = Some(-0.1);
    assert!(make_phantom(&spec).is_err());
    assert!("ct".parse::<PhantomKind>().is_err());
    assert_eq!("body".parse::<PhantomKind>().unwrap(), PhantomKind::EllipseBody);
}

#[test]
fn corruption_behaviour() {
    let (img, _) = phantom(PhantomKind::SheppLogan, 64);
    assert_eq!(data::corrupt(&img, None, None, 0).unwrap(), img);
    assert_eq!(data::corrupt(&img, Some(0.0), None, 0).unwrap(), img);

    let noisy = data::corrupt(&img, Some(0.2), None, 5).unwrap();
    assert_eq!(noisy, data::corrupt(&img, Some(0.2), None, 5).unwrap());
    assert_ne!(noisy, data::corrupt(&img, Some(0.2), None, 6).unwrap());
    assert!(noisy.values().iter().all(|v| (0.0..=1.0).contains(v)));

    // Blur keeps the mean of a reflect-padded image and lowers its variance.
    let blurred = data::corrupt(&img, None, Some(1.5), 0).unwrap();
    let mean = |i: &Image| i.values().iter().sum::<f64>() / i.values().len() as f64;
    let var = |i: &Image| {
        let m = mean(i);
        i.values().iter().map(|v| (v - m).powi(2)).sum::<f64>()
    };
    assert!((mean(&blurred) - mean(&img)).abs() < 1e-3);
    assert!(var(&blurred) < var(&img));
}

#[test]
fn ground_truth_warp_properties() {
    let spec = SyntheticWarpSpec {
        max_displacement: 8.0,
        smoothness: 12.0,
        seed: 1,
    };
    let u = make_ground_truth_warp(&spec, 128).unwrap();
    assert_eq!(u.dims(), (128, 128));
    assert!((u.max_magnitude() - 8.0).abs() < 0.08);
    assert_eq!(fold_report(&u).fold_count, 0);
    assert_eq!(u, make_ground_truth_warp(&spec, 128).unwrap());
    let other = make_ground_truth_warp(&SyntheticWarpSpec { seed: 2, ..spec }, 128).unwrap();
    assert_ne!(u, other);
}

#[test]
fn ground_truth_warp_edge_cases() {
    let zero = SyntheticWarpSpec {
        max_displacement: 0.0,
        smoothness: 4.0,
        seed: 0,
    };
    assert_eq!(
        make_ground_truth_warp(&zero, 32).unwrap(),
        DisplacementField::zeros(32, 32)
    );
    let rough = SyntheticWarpSpec {
        max_displacement: 1.0,
        smoothness: 1.0,
        seed: 0,
    };
    assert!(matches!(
        make_ground_truth_warp(&rough, 32),
        Err(Error::Config(_))
    ));
    // Huge displacements over a short correlation length always fold.
    let wild = SyntheticWarpSpec {
        max_displacement: 200.0,
        smoothness: 2.0,
        seed: 0,
    };
    assert!(matches!(
        make_ground_truth_warp(&wild, 32),
        Err(Error::WarpGeneration { attempts: 100 })
    ));
}

fn assert_quantized_eq(a: &Image, b: &Image) {
    assert_eq!(a.dims(), b.dims());
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-12, "{x} vs {y}");
    }
}

#[test]
fn image_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let img = common::random_image(13, 21, 3);
    for name in ["a.png", "a.pgm"] {
        let path = dir.path().join(name);
        io::write_image(&img, &path).unwrap();
        assert_quantized_eq(&io::read_image(&path).unwrap(), &img);
    }
    let raw = dir.path().join("a.raw");
    io::write_image(&img, &raw).unwrap();
    assert!(io::sidecar_path(&raw).exists());
    let back = io::read_image(&raw).unwrap();
    for (x, y) in back.values().iter().zip(img.values()) {
        assert_eq!(*x, *y as f32 as f64);
    }
    // Both 16-bit encodings decode to identical samples.
    let png = io::read_image(&dir.path().join("a.png")).unwrap();
    let pgm = io::read_image(&dir.path().join("a.pgm")).unwrap();
    assert_eq!(png, pgm);
}

fn write_png8(path: &Path, w: u32, h: u32, data: &[u8]) {
    let file = std::fs::File::create(path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), w, h);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    enc.write_header().unwrap().write_image_data(data).unwrap();
}

#[test]
fn eight_bit_inputs_normalize_by_depth() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    write_png8(&path, 2, 2, &[0, 51, 102, 255]);
    let img = io::read_image(&path).unwrap();
    assert_eq!(img.values(), &[0.0, 0.2, 0.4, 1.0]);

    // A dim 8-bit image is not stretched to the full range.
    write_png8(&path, 2, 1, &[10, 20]);
    assert_eq!(
        io::read_image(&path).unwrap().values(),
        &[10.0 / 255.0, 20.0 / 255.0]
    );

    let pgm = dir.path().join("g.pgm");
    let mut bytes = b"P5\n# comment\n2 1\n255\n".to_vec();
    bytes.extend_from_slice(&[0, 255]);
    std::fs::write(&pgm, bytes).unwrap();
    assert_eq!(io::read_image(&pgm).unwrap().values(), &[0.0, 1.0]);
}

#[test]
fn image_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let junk = dir.path().join("x.png");
    std::fs::write(&junk, b"hello").unwrap();
    assert!(matches!(
        io::read_image(&junk),
        Err(Error::Format { offset: 0, .. })
    ));
    let pgm = dir.path().join("t.pgm");
    std::fs::write(&pgm, b"P5\n4 4\n255\n\x00\x01").unwrap();
    assert!(matches!(io::read_image(&pgm), Err(Error::Format { .. })));
    assert!(matches!(
        io::read_image(&dir.path().join("missing.png")),
        Err(Error::Io { .. })
    ));
    assert!(io::write_image(&Image::filled(2, 2, 0.0), &dir.path().join("x.bmp")).is_err());
}

#[test]
fn label_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (_, labels) = phantom(PhantomKind::SheppLogan, 64);
    let path = dir.path().join("l.png");
    io::write_labels(&labels, &path).unwrap();
    assert_eq!(io::read_labels(&path).unwrap(), labels);
}

#[test]
fn field_layout() {
    let u = DisplacementField::from_fn(3, 5, |y, x| (1.0 + x as f64, -(y as f64 + 1.0) * 0.25));
    let bytes = io::encode_field(&u);
    assert_eq!(bytes.len(), DFLD_HEADER_LEN + 8 * 15);
    assert_eq!(&bytes[..4], b"DFLD");
    assert_eq!(&bytes[4..6], &1u16.to_le_bytes());
    assert_eq!(&bytes[6..10], &5u32.to_le_bytes());
    assert_eq!(&bytes[10..14], &3u32.to_le_bytes());
    assert_eq!(&bytes[14..18], &1.0f32.to_le_bytes());
    assert_eq!(&bytes[18..22], &(-0.25f32).to_le_bytes());
}

#[test]
fn field_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.dfld");
    let u = DisplacementField::from_fn(7, 9, |y, x| ((x as f32 * 0.37) as f64, (y as f32 * -1.3) as f64));
    io::write_field(&u, &path).unwrap();
    assert_eq!(io::read_field(&path).unwrap(), u);
}

#[test]
fn field_decode_errors() {
    let p = Path::new("f.dfld");
    let good = io::encode_field(&DisplacementField::zeros(2, 2));
    let offset = |bytes: &[u8]| match io::decode_field(p, bytes) {
        Err(Error::Format { offset, .. }) => offset,
        other => panic!("expected format error, got {other:?}"),
    };
    assert_eq!(offset(&good[..10]), 10);
    let mut bad = good.clone();
    bad[0] = b'X';
    assert_eq!(offset(&bad), 0);
    let mut bad = good.clone();
    bad[4] = 2;
    assert_eq!(offset(&bad), 4);
    assert_eq!(offset(&good[..good.len() - 3]), (good.len() - 3) as u64);
    let mut long = good.clone();
    long.push(0);
    assert_eq!(offset(&long), good.len() as u64);
    let mut nan = good.clone();
    nan[14..18].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(io::decode_field(p, &nan).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dfld_round_trips_f32_fields(h in 1usize..8, w in 1usize..8, seed in any::<u32>()) {
        let raw = common::random_field(h, w, 10.0, seed as u64);
        let u = DisplacementField::from_planes(h, w, raw.planes().iter().map(|&v| v as f32 as f64).collect()).unwrap();
        prop_assert_eq!(io::decode_field(Path::new("p"), &io::encode_field(&u)).unwrap(), u);
    }

    #[test]
    fn png_round_trip_within_quantum(values in prop::collection::vec(0.0f64..=1.0, 12)) {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(3, 4, values).unwrap();
        let path = dir.path().join("p.png");
        io::write_image(&img, &path).unwrap();
        let back = io::read_image(&path).unwrap();
        for (a, b) in back.values().iter().zip(img.values()) {
            prop_assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
}
