//! Small text utilities shared by the parsers.

use alloc::string::String;

/// Whitespace-separated token count.
pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Lowercased text with runs of whitespace collapsed to one space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        for c in word.chars() {
            out.extend(c.to_lowercase());
        }
    }
    out
}

/// First standalone integer token of `text` whose value lies in `lo..=hi`.
///
/// A token is a run of ASCII digits not glued to letters or underscores.
/// Decimal numbers (`7.5`) are skipped as a whole; a leading `-` makes the
/// token negative. `"Score: 7/10"` yields 7.
pub fn first_integer_in_range(text: &str, lo: i64, hi: i64) -> Option<i64> {
    let bytes = text.as_bytes();
    let glued = |b: u8| b.is_ascii_alphanumeric() || b == b'_';
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let end = i;
        let prev = if start > 0 { Some(bytes[start - 1]) } else { None };
        let next = bytes.get(end).copied();
        if prev.is_some_and(glued) || next.is_some_and(glued) {
            continue;
        }
        // fractional part of a decimal, or its integer part
        if prev == Some(b'.') && start >= 2 && bytes[start - 2].is_ascii_digit() {
            continue;
        }
        if next == Some(b'.') && bytes.get(end + 1).is_some_and(|b| b.is_ascii_digit()) {
            continue;
        }
        let digits = &text[start..end];
        let Ok(magnitude) = digits.parse::<i64>() else {
            continue;
        };
        let value = if prev == Some(b'-') { -magnitude } else { magnitude };
        if (lo..=hi).contains(&value) {
            return Some(value);
        }
    }
    None
}
