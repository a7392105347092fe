//! Default word-boundary rules of Unicode Standard Annex #29.
//!
//! This is the subset needed by the splitter: the full rule chain WB1–WB999
//! with a Word_Break classification derived from the general category plus
//! hand-listed code point sets. The classification is approximate outside
//! the scripts the test corpora exercise (Latin, Greek, Cyrillic, Hebrew,
//! CJK, Kana, emoji); it is checked against a reference segmenter through
//! the golden files under `tests/golden/`.

use unicode_general_category::{get_general_category, GeneralCategory as Gc};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum WordBreak {
    Other,
    Cr,
    Lf,
    Newline,
    Extend,
    Zwj,
    RegionalIndicator,
    Format,
    Katakana,
    HebrewLetter,
    ALetter,
    SingleQuote,
    DoubleQuote,
    MidNumLet,
    MidLetter,
    MidNum,
    Numeric,
    ExtendNumLet,
    WSegSpace,
}

use WordBreak as Wb;

fn in_ranges(c: u32, ranges: &[(u32, u32)]) -> bool {
    ranges
        .binary_search_by(|&(lo, hi)| {
            if hi < c {
                std::cmp::Ordering::Less
            } else if lo > c {
                std::cmp::Ordering::Greater
            } else {
                std::cmp::Ordering::Equal
            }
        })
        .is_ok()
}

const KATAKANA: &[(u32, u32)] = &[
    (0x3031, 0x3035),
    (0x309B, 0x309C),
    (0x30A0, 0x30FA),
    (0x30FC, 0x30FF),
    (0x31F0, 0x31FF),
    (0x32D0, 0x32FE),
    (0x3300, 0x3357),
    (0xFF66, 0xFF9D),
    (0x1AFF0, 0x1AFFE),
    (0x1B000, 0x1B000),
    (0x1B120, 0x1B122),
    (0x1B155, 0x1B155),
    (0x1B164, 0x1B167),
];

const HEBREW_LETTER: &[(u32, u32)] = &[
    (0x05D0, 0x05EA),
    (0x05EF, 0x05F2),
    (0xFB1D, 0xFB1D),
    (0xFB1F, 0xFB28),
    (0xFB2A, 0xFB36),
    (0xFB38, 0xFB3C),
    (0xFB3E, 0xFB3E),
    (0xFB40, 0xFB41),
    (0xFB43, 0xFB44),
    (0xFB46, 0xFB4F),
];

const IDEOGRAPHIC: &[(u32, u32)] = &[
    (0x3006, 0x3007),
    (0x3021, 0x3029),
    (0x3038, 0x303A),
    (0x3400, 0x4DBF),
    (0x4E00, 0x9FFF),
    (0xF900, 0xFAFF),
    (0x16FE4, 0x16FE4),
    (0x17000, 0x18CFF),
    (0x18D00, 0x18D08),
    (0x1B170, 0x1B2FB),
    (0x20000, 0x3FFFF),
];

const HIRAGANA: &[(u32, u32)] = &[
    (0x3041, 0x3096),
    (0x309D, 0x309F),
    (0x1B001, 0x1B11F),
    (0x1B132, 0x1B132),
    (0x1B150, 0x1B152),
    (0x1F200, 0x1F200),
];

// Line_Break=Complex_Context scripts; these are excluded from ALetter.
const COMPLEX_CONTEXT: &[(u32, u32)] = &[
    (0x0E01, 0x0E3A),
    (0x0E40, 0x0E4E),
    (0x0E81, 0x0EDF),
    (0x1000, 0x103F),
    (0x1050, 0x108F),
    (0x109A, 0x109F),
    (0x1780, 0x17D3),
    (0x17D7, 0x17D7),
    (0x17DC, 0x17DD),
    (0x1950, 0x196D),
    (0x1970, 0x1974),
    (0x1980, 0x19AB),
    (0x19B0, 0x19C9),
    (0x19DE, 0x19DF),
    (0x1A20, 0x1A5E),
    (0x1A60, 0x1A7C),
    (0x1AA0, 0x1AAD),
    (0xA9E0, 0xA9EF),
    (0xA9FA, 0xA9FE),
    (0xAA60, 0xAAC2),
    (0xAADB, 0xAADF),
    (0x11700, 0x1171A),
    (0x1171D, 0x1172B),
    (0x1173A, 0x1173B),
    (0x1173F, 0x1173F),
];

// Non-alphabetic code points that the Word_Break property lists as ALetter.
const ALETTER_EXTRA: &[(u32, u32)] = &[
    (0x00B8, 0x00B8),
    (0x02C2, 0x02C5),
    (0x02D2, 0x02D7),
    (0x02DE, 0x02DF),
    (0x02E5, 0x02EB),
    (0x02ED, 0x02ED),
    (0x02EF, 0x02FF),
    (0x055A, 0x055C),
    (0x055E, 0x055E),
    (0x058A, 0x058A),
    (0x05F3, 0x05F3),
    (0xA708, 0xA716),
    (0xA720, 0xA721),
    (0xA789, 0xA78A),
    (0xAB5B, 0xAB5B),
];

const EXTENDED_PICTOGRAPHIC: &[(u32, u32)] = &[
    (0x00A9, 0x00A9),
    (0x00AE, 0x00AE),
    (0x203C, 0x203C),
    (0x2049, 0x2049),
    (0x2122, 0x2122),
    (0x2139, 0x2139),
    (0x2194, 0x2199),
    (0x21A9, 0x21AA),
    (0x231A, 0x231B),
    (0x2328, 0x2328),
    (0x2388, 0x2388),
    (0x23CF, 0x23CF),
    (0x23E9, 0x23F3),
    (0x23F8, 0x23FA),
    (0x24C2, 0x24C2),
    (0x25AA, 0x25AB),
    (0x25B6, 0x25B6),
    (0x25C0, 0x25C0),
    (0x25FB, 0x25FE),
    (0x2600, 0x2605),
    (0x2607, 0x2612),
    (0x2614, 0x2685),
    (0x2690, 0x2705),
    (0x2708, 0x2712),
    (0x2714, 0x2714),
    (0x2716, 0x2716),
    (0x271D, 0x271D),
    (0x2721, 0x2721),
    (0x2728, 0x2728),
    (0x2733, 0x2734),
    (0x2744, 0x2744),
    (0x2747, 0x2747),
    (0x274C, 0x274C),
    (0x274E, 0x274E),
    (0x2753, 0x2755),
    (0x2757, 0x2757),
    (0x2763, 0x2767),
    (0x2795, 0x2797),
    (0x27A1, 0x27A1),
    (0x27B0, 0x27B0),
    (0x27BF, 0x27BF),
    (0x2934, 0x2935),
    (0x2B05, 0x2B07),
    (0x2B1B, 0x2B1C),
    (0x2B50, 0x2B50),
    (0x2B55, 0x2B55),
    (0x3030, 0x3030),
    (0x303D, 0x303D),
    (0x3297, 0x3297),
    (0x3299, 0x3299),
    (0x1F000, 0x1F0FF),
    (0x1F10D, 0x1F10F),
    (0x1F12F, 0x1F12F),
    (0x1F16C, 0x1F171),
    (0x1F17E, 0x1F17F),
    (0x1F18E, 0x1F18E),
    (0x1F191, 0x1F19A),
    (0x1F1AD, 0x1F1E5),
    (0x1F201, 0x1F20F),
    (0x1F21A, 0x1F21A),
    (0x1F22F, 0x1F22F),
    (0x1F232, 0x1F23A),
    (0x1F23C, 0x1F23F),
    (0x1F249, 0x1F3FA),
    (0x1F400, 0x1F53D),
    (0x1F546, 0x1F64F),
    (0x1F680, 0x1F6FF),
    (0x1F774, 0x1F77F),
    (0x1F7D5, 0x1F7FF),
    (0x1F80C, 0x1F80F),
    (0x1F848, 0x1F84F),
    (0x1F85A, 0x1F85F),
    (0x1F888, 0x1F88F),
    (0x1F8AE, 0x1F8FF),
    (0x1F90C, 0x1F93A),
    (0x1F93C, 0x1F945),
    (0x1F947, 0x1FAFF),
    (0x1FC00, 0x1FFFD),
];

pub(crate) fn is_extended_pictographic(c: char) -> bool {
    in_ranges(c as u32, EXTENDED_PICTOGRAPHIC)
}

pub(crate) fn word_break(c: char) -> WordBreak {
    let cp = c as u32;
    match cp {
        0x0D => return Wb::Cr,
        0x0A => return Wb::Lf,
        0x0B | 0x0C | 0x85 | 0x2028 | 0x2029 => return Wb::Newline,
        0x200D => return Wb::Zwj,
        0x200C | 0xFF9E | 0xFF9F | 0x1F3FB..=0x1F3FF | 0xE0020..=0xE007F => return Wb::Extend,
        0x1F1E6..=0x1F1FF => return Wb::RegionalIndicator,
        0x27 => return Wb::SingleQuote,
        0x22 => return Wb::DoubleQuote,
        0x2E | 0x2018 | 0x2019 | 0x2024 | 0xFE52 | 0xFF07 | 0xFF0E => return Wb::MidNumLet,
        0x3A | 0xB7 | 0x387 | 0x55F | 0x5F4 | 0x2027 | 0xFE13 | 0xFE55 | 0xFF1A => {
            return Wb::MidLetter
        }
        0x2C | 0x3B | 0x37E | 0x589 | 0x60C | 0x60D | 0x66C | 0x7F8 | 0x2044 | 0xFE50 | 0xFE54
        | 0xFF0C | 0xFF1B => return Wb::MidNum,
        0x202F => return Wb::ExtendNumLet,
        0x066B | 0x19DA => return Wb::Numeric,
        0x1ACF..=0x1ADD | 0x1AE0..=0x1AEB => return Wb::Extend,
        0x20 | 0x1680 | 0x2000..=0x2006 | 0x2008..=0x200A | 0x205F | 0x3000 => {
            return Wb::WSegSpace
        }
        _ => {}
    }
    let gc = get_general_category(c);
    match gc {
        Gc::NonspacingMark | Gc::EnclosingMark | Gc::SpacingMark => return Wb::Extend,
        Gc::Format if cp != 0x200B => return Wb::Format,
        Gc::ConnectorPunctuation => return Wb::ExtendNumLet,
        Gc::DecimalNumber => return Wb::Numeric,
        _ => {}
    }
    if in_ranges(cp, KATAKANA) {
        return Wb::Katakana;
    }
    if in_ranges(cp, HEBREW_LETTER) {
        return Wb::HebrewLetter;
    }
    let alphabetic = c.is_alphabetic() || in_ranges(cp, ALETTER_EXTRA);
    if alphabetic
        && !in_ranges(cp, IDEOGRAPHIC)
        && !in_ranges(cp, HIRAGANA)
        && !in_ranges(cp, COMPLEX_CONTEXT)
    {
        return Wb::ALetter;
    }
    Wb::Other
}

fn is_ah_letter(w: WordBreak) -> bool {
    matches!(w, Wb::ALetter | Wb::HebrewLetter)
}

fn is_mid_num_let_q(w: WordBreak) -> bool {
    matches!(w, Wb::MidNumLet | Wb::SingleQuote)
}

fn is_newline(w: WordBreak) -> bool {
    matches!(w, Wb::Cr | Wb::Lf | Wb::Newline)
}

fn is_ignorable(w: WordBreak) -> bool {
    matches!(w, Wb::Extend | Wb::Format | Wb::Zwj)
}

/// Returns the byte offsets of every word boundary in `text`, including 0
/// and `text.len()` (for non-empty text).
pub(crate) fn word_boundaries(text: &str) -> Vec<usize> {
    let chars: Vec<(usize, char, WordBreak)> = text
        .char_indices()
        .map(|(i, c)| (i, c, word_break(c)))
        .collect();
    let mut out = Vec::new();
    if chars.is_empty() {
        return out;
    }
    out.push(0);

    // WB4: a run of Extend/Format/ZWJ attaches to the preceding character
    // unless that character is a newline. `units` holds the classes of the
    // remaining "base" characters; `unit_of[i]` maps a char to its unit.
    let mut units: Vec<WordBreak> = Vec::with_capacity(chars.len());
    let mut unit_of: Vec<usize> = Vec::with_capacity(chars.len());
    for (i, &(_, _, wb)) in chars.iter().enumerate() {
        let attaches = i > 0 && is_ignorable(wb) && !is_newline(chars[i - 1].2);
        if !attaches {
            units.push(wb);
        }
        unit_of.push(units.len() - 1);
    }

    // Number of consecutive regional-indicator units ending at each unit.
    let mut ri_run = vec![0usize; units.len()];
    for u in 0..units.len() {
        if units[u] == Wb::RegionalIndicator {
            ri_run[u] = if u > 0 { ri_run[u - 1] + 1 } else { 1 };
        }
    }

    for i in 1..chars.len() {
        let (offset, cur_char, cur) = chars[i];
        let prev_raw = chars[i - 1].2;
        let u = unit_of[i];
        let starts_unit = u != unit_of[i - 1];

        // WB3
        if prev_raw == Wb::Cr && cur == Wb::Lf {
            continue;
        }
        // WB3a, WB3b
        if is_newline(prev_raw) || is_newline(cur) {
            out.push(offset);
            continue;
        }
        // WB3c
        if prev_raw == Wb::Zwj && is_extended_pictographic(cur_char) {
            continue;
        }
        // WB3d
        if prev_raw == Wb::WSegSpace && cur == Wb::WSegSpace {
            continue;
        }
        // WB4
        if !starts_unit {
            continue;
        }

        let prev = units[u - 1];
        let prev2 = if u >= 2 { Some(units[u - 2]) } else { None };
        let next = units.get(u + 1).copied();

        let keep = (is_ah_letter(prev) && is_ah_letter(cur)) // WB5
            || (is_ah_letter(prev)
                && (cur == Wb::MidLetter || is_mid_num_let_q(cur))
                && next.is_some_and(is_ah_letter)) // WB6
            || (prev2.is_some_and(is_ah_letter)
                && (prev == Wb::MidLetter || is_mid_num_let_q(prev))
                && is_ah_letter(cur)) // WB7
            || (prev == Wb::HebrewLetter && cur == Wb::SingleQuote) // WB7a
            || (prev == Wb::HebrewLetter
                && cur == Wb::DoubleQuote
                && next == Some(Wb::HebrewLetter)) // WB7b
            || (prev2 == Some(Wb::HebrewLetter)
                && prev == Wb::DoubleQuote
                && cur == Wb::HebrewLetter) // WB7c
            || (prev == Wb::Numeric && cur == Wb::Numeric) // WB8
            || (is_ah_letter(prev) && cur == Wb::Numeric) // WB9
            || (prev == Wb::Numeric && is_ah_letter(cur)) // WB10
            || (prev2 == Some(Wb::Numeric)
                && (prev == Wb::MidNum || is_mid_num_let_q(prev))
                && cur == Wb::Numeric) // WB11
            || (prev == Wb::Numeric
                && (cur == Wb::MidNum || is_mid_num_let_q(cur))
                && next == Some(Wb::Numeric)) // WB12
            || (prev == Wb::Katakana && cur == Wb::Katakana) // WB13
            || (matches!(
                prev,
                Wb::ALetter | Wb::HebrewLetter | Wb::Numeric | Wb::Katakana | Wb::ExtendNumLet
            ) && cur == Wb::ExtendNumLet) // WB13a
            || (prev == Wb::ExtendNumLet
                && matches!(cur, Wb::ALetter | Wb::HebrewLetter | Wb::Numeric | Wb::Katakana)) // WB13b
            || (prev == Wb::RegionalIndicator
                && cur == Wb::RegionalIndicator
                && ri_run[u - 1] % 2 == 1); // WB15, WB16

        if !keep {
            out.push(offset);
        }
    }
    out.push(text.len());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn segments(s: &str) -> Vec<&str> {
        word_boundaries(s)
            .windows(2)
            .map(|w| &s[w[0]..w[1]])
            .collect()
    }

    #[test]
    fn ascii_words_and_spaces() {
        assert_eq!(segments("Hello, world!"), ["Hello", ",", " ", "world", "!"]);
        assert_eq!(segments("a  b"), ["a", "  ", "b"]);
    }

    #[test]
    fn mid_letter_and_mid_num() {
        assert_eq!(segments("can't"), ["can't"]);
        assert_eq!(segments("e.g."), ["e.g", "."]);
        assert_eq!(segments("3.14"), ["3.14"]);
        assert_eq!(segments("1,000,000"), ["1,000,000"]);
        assert_eq!(segments("a:b"), ["a:b"]);
        assert_eq!(segments("a:"), ["a", ":"]);
    }

    #[test]
    fn crlf_and_newlines() {
        assert_eq!(segments("a\r\nb"), ["a", "\r\n", "b"]);
        assert_eq!(segments("\n\n"), ["\n", "\n"]);
    }

    #[test]
    fn ideographs_split_per_char() {
        assert_eq!(segments("日本語"), ["日", "本", "語"]);
        assert_eq!(segments("カタカナ"), ["カタカナ"]);
    }

    #[test]
    fn emoji_sequences() {
        // man + ZWJ + woman stays together; flags pair up.
        assert_eq!(segments("👨\u{200D}👩"), ["👨\u{200D}👩"]);
        assert_eq!(segments("🇩🇪🇫🇷"), ["🇩🇪", "🇫🇷"]);
        assert_eq!(segments("👍🏽!"), ["👍🏽", "!"]);
    }

    #[test]
    fn combining_marks_attach() {
        assert_eq!(segments("e\u{301}t\u{e9}"), ["e\u{301}t\u{e9}"]);
        assert_eq!(segments("\n\u{301}"), ["\n", "\u{301}"]);
    }
}
