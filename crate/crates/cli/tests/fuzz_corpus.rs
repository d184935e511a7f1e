//! Replays the fuzz corpus and mutations of it through the properties the
//! fuzz targets assert, so they hold without a fuzzing toolchain.

use std::path::{Path, PathBuf};

use proptest::prelude::*;
use simplegrowth::data::{decode_tensor_file, encode_cifar10, encode_tensor_file, parse_cifar10, parse_ppm};
use simplegrowth::growth::Topology;
use simplegrowth::model::{decode_checkpoint, encode_checkpoint, SimpleGrowthConfig};
use simplegrowth_cli::RunConfig;

fn seeds(target: &str) -> Vec<Vec<u8>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    assert!(!files.is_empty(), "no seeds in {}", dir.display());
    files.iter().map(|f| std::fs::read(f).unwrap()).collect()
}

fn checkpoint(data: &[u8]) {
    if let Ok(ck) = decode_checkpoint::<f32>(data) {
        assert_eq!(encode_checkpoint(&ck.model, &ck.optimizer, ck.step), data);
    }
    let _ = decode_checkpoint::<f64>(data);
}

fn tensor_file(data: &[u8]) {
    if let Ok(entries) = decode_tensor_file::<f32>(data) {
        assert_eq!(encode_tensor_file(&entries), data);
    }
    let _ = decode_tensor_file::<f64>(data);
}

fn cifar(data: &[u8]) {
    if let Ok(d) = parse_cifar10(data, 0) {
        assert_eq!(encode_cifar10(d.images(), d.labels().unwrap()).unwrap(), data);
    }
}

fn config(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(c) = RunConfig::parse(text, Path::new("/base")) {
        assert_eq!(RunConfig::parse(&c.echo(), Path::new("/base")).unwrap(), c);
    }
    if let Ok(m) = SimpleGrowthConfig::from_text(text) {
        assert_eq!(SimpleGrowthConfig::from_text(&m.to_text()).unwrap(), m);
    }
}

fn topology(data: &[u8]) {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(t) = text.parse::<Topology>() {
        assert_eq!(t.to_string().parse::<Topology>().unwrap(), t);
    }
}

fn ppm(data: &[u8]) {
    if let Ok(p) = parse_ppm(data) {
        assert_eq!(p.pixels.len(), p.width * p.height * 3);
    }
}

type Check = fn(&[u8]);

const TARGETS: [(&str, Check); 6] = [
    ("checkpoint", checkpoint),
    ("tensor_file", tensor_file),
    ("cifar", cifar),
    ("config", config),
    ("topology", topology),
    ("ppm", ppm),
];

#[test]
fn seeds_parse_as_expected() {
    for (name, f) in TARGETS {
        for s in seeds(name) {
            f(&s);
        }
    }
    assert!(decode_checkpoint::<f32>(&seeds("checkpoint")[0]).is_ok());
    assert!(RunConfig::parse(std::str::from_utf8(&seeds("config")[2]).unwrap(), Path::new("/b")).is_ok());
    for s in seeds("topology") {
        std::str::from_utf8(&s).unwrap().parse::<Topology>().unwrap();
    }
}

/// Overwrites, truncations and insertions at arbitrary positions.
fn mutate(mut s: Vec<u8>, edits: &[(usize, u8, u8)]) -> Vec<u8> {
    for &(pos, byte, kind) in edits {
        let at = if s.is_empty() { 0 } else { pos % s.len() };
        match kind % 4 {
            0 if !s.is_empty() => s[at] = byte,
            1 => s.truncate(at),
            2 => s.insert(at, byte),
            _ if !s.is_empty() => {
                s.remove(at);
            }
            _ => {}
        }
    }
    s
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn mutated_seeds_keep_properties(
        target in 0usize..6,
        pick in any::<usize>(),
        edits in prop::collection::vec((any::<usize>(), any::<u8>(), any::<u8>()), 1..6),
    ) {
        let (name, f) = TARGETS[target];
        let all = seeds(name);
        let input = mutate(all[pick % all.len()].clone(), &edits);
        f(&input);
    }
}
