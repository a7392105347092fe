use std::io::Write;

use hat_core::metrics::{compression_report, ratio_4dp};
use hat_core::splitter::Splitter;

const DATA: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/data");

#[test]
fn bundled_samples_fall_in_expected_ranges() {
    let sp = Splitter::default();
    let en = compression_report(&sp, &[format!("{DATA}/english_sample.txt")]);
    let de = compression_report(&sp, &[format!("{DATA}/german_sample.txt")]);
    let (e, d) = (en.bytes_per_position().unwrap(), de.bytes_per_position().unwrap());
    println!("english {e:.4} german {d:.4}");
    assert!((4.0..=7.0).contains(&e), "{e}");
    assert!((4.5..=8.0).contains(&d), "{d}");
    assert!(d > e);
}

#[test]
fn aggregate_is_recomputable_from_breakdown() {
    let sp = Splitter::default();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.txt");
    std::fs::File::create(&bad).unwrap().write_all(&[b'a', 0xC3]).unwrap();
    let paths = vec![
        format!("{DATA}/english_sample.txt"),
        bad.display().to_string(),
        dir.path().join("missing.txt").display().to_string(),
        format!("{DATA}/german_sample.txt"),
    ];
    let r = compression_report(&sp, &paths);
    assert_eq!(r.files.len(), 2);
    assert_eq!(r.failures.len(), 2);
    let bytes: u64 = r.files.iter().map(|f| f.bytes).sum();
    let words: u64 = r.files.iter().map(|f| f.words).sum();
    assert_eq!((bytes, words), (r.total_bytes, r.total_words));
    assert_eq!(ratio_4dp(bytes, words), r.bytes_per_position_4dp());
    for f in &r.files {
        let text = std::fs::read(&f.name).unwrap();
        assert_eq!(f.words as usize, sp.split(&text).unwrap().len());
    }
}
