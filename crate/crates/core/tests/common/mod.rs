#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Character pools used by the randomized splitter tests.
pub const LATIN1: (u32, u32) = (0xA0, 0xFF);
pub const CJK: (u32, u32) = (0x4E00, 0x9FFF);

const ASCII_BIASED: &[char] = &[
    'a', 'b', 'c', 'X', 'Y', 'z', 'e', 'o', 'T', '1', '2', '0', ' ', ' ', '.', ',', '!', '?', '\'',
    '"', ':', ';', '-', '_', '(', ')', '+', '=', '<', '/', '\n', '\t', '#', '$', '%',
];

const EMOJI: &[char] = &[
    '😀', '👍', '🏽', '\u{200D}', '👩', '👨', '🇩', '🇪', '🇫', '🇷', '❤', '\u{FE0F}', '🚀', '✨',
];

const EXTRA: &[char] = &[
    'ä', 'ö', 'ü', 'ß', 'é', '\u{301}', 'ç', 'Ω', 'λ', 'Ж', 'я', 'ア', 'カ', 'ー', 'の', 'ん', '。',
    '、', '「', '」', '，', '×', '÷', '−', '∑', '\u{A0}', '\u{3000}', '’', '“', '”', '…', 'א', 'ב',
];

/// Random string mixing ASCII, Latin-1 supplement, CJK and emoji.
pub fn random_mixed(rng: &mut ChaCha8Rng, max_chars: usize) -> String {
    let n = rng.gen_range(0..=max_chars);
    let mut s = String::new();
    for _ in 0..n {
        let c = match rng.gen_range(0..10) {
            0..=4 => ASCII_BIASED[rng.gen_range(0..ASCII_BIASED.len())],
            5 => char::from_u32(rng.gen_range(LATIN1.0..=LATIN1.1)).unwrap(),
            6 => char::from_u32(rng.gen_range(CJK.0..=CJK.1)).unwrap(),
            7 => EMOJI[rng.gen_range(0..EMOJI.len())],
            _ => EXTRA[rng.gen_range(0..EXTRA.len())],
        };
        s.push(c);
    }
    s
}

/// Random printable ASCII with word-like structure.
pub fn random_ascii(rng: &mut ChaCha8Rng, max_len: usize) -> String {
    const WORDS: &[&str] = &[
        "the", "Quick", "brown", "fox", "jumps", "over", "lazy", "dogs", "HTTPServer", "getValue",
        "3.14", "1,000", "e.g.", "can't", "x+y", "a=b", "(note)", "end.", "Hi!", "--", "...",
    ];
    let mut s = String::new();
    while s.len() < max_len {
        if rng.gen_bool(0.7) {
            s.push_str(WORDS[rng.gen_range(0..WORDS.len())]);
        } else {
            s.push(ASCII_BIASED[rng.gen_range(0..ASCII_BIASED.len())]);
        }
        if rng.gen_bool(0.6) {
            s.push(' ');
        }
    }
    s.truncate(max_len);
    s
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
