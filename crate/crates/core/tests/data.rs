use proptest::prelude::*;
use simplegrowth::data::{
    batches, decode_tensor_file, encode_cifar10, encode_ppm_grid, encode_tensor_file, epoch_batches, load_cifar10_bin,
    load_image_tensor, parse_cifar10, parse_ppm, quantize, synthetic_cifar10, write_ppm_grid, write_tensor_file,
    Dataset, CIFAR_RECORD_BYTES,
};
use simplegrowth::{Error, Tensor};

fn two_record_fixture() -> Vec<u8> {
    let mut bytes = vec![0u8; 2 * 3073];
    bytes[0] = 7;
    bytes[3073] = 2;
    for i in 0..3072 {
        bytes[1 + i] = (i % 256) as u8;
        bytes[3073 + 1 + i] = (255 - i % 256) as u8;
    }
    bytes
}

#[test]
fn hand_fixture_pixels() {
    let d = parse_cifar10(&two_record_fixture(), 0).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.labels(), Some(&[7u8, 2][..]));
    let px = d.images().data();
    // (record, channel, y, x) -> source byte offset inside the record
    for (r, ch, y, x) in [(0, 0, 0, 0), (0, 0, 0, 5), (0, 1, 3, 7), (0, 2, 31, 31), (1, 0, 1, 2), (1, 2, 10, 20)] {
        let plane = ch * 1024 + y * 32 + x;
        let byte = if r == 0 { plane % 256 } else { 255 - plane % 256 };
        let got = px[r * 3072 + plane];
        assert_eq!(got, byte as f32 / 255.0, "{r} {ch} {y} {x}");
    }
}

#[test]
fn full_batch_file_size_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data_batch_1.bin");
    let bytes = vec![3u8; 10_000 * 3073];
    assert_eq!(bytes.len(), 30_730_000);
    std::fs::write(&path, &bytes).unwrap();
    let d = load_cifar10_bin(&[&path]).unwrap();
    assert_eq!(d.len(), 10_000);
    assert_eq!(d.images().shape(), &[10_000, 3, 32, 32]);
}

#[test]
fn bad_sizes_and_labels() {
    let e = parse_cifar10(&vec![0u8; 3074], 0).unwrap_err();
    assert!(matches!(e, Error::Format { .. }));
    let msg = e.to_string();
    assert!(msg.contains("3073") && msg.contains("3074"), "{msg}");

    let mut bytes = two_record_fixture();
    bytes[3073] = 10;
    let msg = parse_cifar10(&bytes, 0).unwrap_err().to_string();
    assert!(msg.contains("record 1"), "{msg}");

    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_cifar10_bin(&[dir.path().join("missing.bin")]), Err(Error::Io(_))));
}

#[test]
fn normalization_inverts_for_every_byte() {
    for b in 0..=255u8 {
        assert_eq!(quantize(b as f32 / 255.0), b);
    }
    assert_eq!(quantize(0.5), 128);
    assert_eq!(quantize(-0.2), 0);
    assert_eq!(quantize(1.7), 255);
}

#[test]
fn synthetic_batches_round_trip() {
    let bytes = synthetic_cifar10(6, 11);
    let d = parse_cifar10(&bytes, 0).unwrap();
    assert_eq!(encode_cifar10(d.images(), d.labels().unwrap()).unwrap(), bytes);
}

#[test]
fn batch_counts_and_short_tail() {
    let images = Tensor::<f32>::uniform(&[100, 3, 4, 4], 0.0, 1.0, 1).unwrap();
    let d = Dataset::new(images, None).unwrap();
    let sizes: Vec<usize> = batches(&d, 16, 5, 0).unwrap().map(|b| b.unwrap().shape()[0]).collect();
    assert_eq!(sizes, [16, 16, 16, 16, 16, 16, 4]);
}

#[test]
fn ppm_header_arithmetic() {
    let images = Tensor::<f32>::uniform(&[16, 3, 64, 64], 0.0, 1.0, 2).unwrap();
    let bytes = encode_ppm_grid(&images, Some(4)).unwrap();
    let header = b"P6\n256 256\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len() - header.len(), 196_608);
    assert_eq!(encode_ppm_grid(&images, None).unwrap(), bytes);

    let white = Tensor::<f32>::full(&[1, 3, 2, 2], 1.0);
    let bytes = encode_ppm_grid(&white, Some(1)).unwrap();
    assert_eq!(&bytes[..11], b"P6\n2 2\n255\n");
    assert_eq!(&bytes[11..], &[0xFF; 12]);

    let half = Tensor::<f32>::full(&[1, 3, 1, 1], 0.5);
    assert_eq!(encode_ppm_grid(&half, None).unwrap()[11..], [128, 128, 128]);
}

#[test]
fn ppm_unfilled_cells_black() {
    let images = Tensor::<f32>::full(&[3, 3, 2, 2], 1.0);
    let p = parse_ppm(&encode_ppm_grid(&images, Some(2)).unwrap()).unwrap();
    assert_eq!((p.width, p.height), (4, 4));
    // bottom-right tile
    for y in 2..4 {
        for x in 2..4 {
            assert_eq!(&p.pixels[(y * 4 + x) * 3..][..3], &[0, 0, 0]);
        }
    }
    assert_eq!(p.pixels.iter().filter(|&&b| b == 255).count(), 3 * 4 * 3);
}

#[test]
fn ppm_unwritable_path_is_io_error() {
    let images = Tensor::<f32>::full(&[1, 3, 2, 2], 0.0);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("x.ppm");
    assert!(matches!(write_ppm_grid(&images, None, &path), Err(Error::Io(_))));
}

#[test]
fn image_tensor_import() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("faces.sgt");
    let images = Tensor::<f32>::uniform(&[3, 3, 64, 64], 0.0, 1.0, 4).unwrap();
    write_tensor_file(&path, &[("images".to_string(), images.clone())]).unwrap();
    let d = load_image_tensor(&path).unwrap();
    assert_eq!(d.images(), &images);
    assert_eq!(d.image_size(), 64);

    write_tensor_file(&path, &[("other".to_string(), images)]).unwrap();
    assert!(load_image_tensor(&path).is_err());
    write_tensor_file(&path, &[("images".to_string(), Tensor::<f32>::full(&[1, 3, 4, 4], 2.0))]).unwrap();
    assert!(load_image_tensor(&path).is_err());
}

proptest! {
    #[test]
    fn epoch_visits_every_index_once(n in 1usize..300, batch in 1usize..40, seed in any::<u64>(), epoch in 0u64..5) {
        let b = epoch_batches(n, batch, seed, epoch).unwrap();
        let mut all: Vec<usize> = b.iter().flatten().copied().collect();
        prop_assert_eq!(b.len(), n.div_ceil(batch));
        prop_assert!(b[..b.len() - 1].iter().all(|c| c.len() == batch));
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn cifar_round_trip(records in prop::collection::vec((0u8..10, prop::collection::vec(any::<u8>(), 3072)), 1..4)) {
        let bytes: Vec<u8> = records.iter().flat_map(|(l, px)| std::iter::once(*l).chain(px.iter().copied())).collect();
        prop_assert_eq!(bytes.len(), records.len() * CIFAR_RECORD_BYTES);
        let d = parse_cifar10(&bytes, 0).unwrap();
        prop_assert_eq!(encode_cifar10(d.images(), d.labels().unwrap()).unwrap(), bytes);
    }

    #[test]
    fn tensor_file_round_trip(shape in prop::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
        let t = Tensor::<f64>::uniform(&shape, -3.0, 3.0, seed).unwrap();
        let entries = vec![("t".to_string(), t)];
        prop_assert_eq!(decode_tensor_file::<f64>(&encode_tensor_file(&entries)).unwrap(), entries);
    }

    #[test]
    fn cifar_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..7000)) {
        let _ = parse_cifar10(&bytes, 0);
    }
}
