//! Character-indexed text helpers.
//!
//! Offsets everywhere in the crate count Unicode scalar values, so these
//! helpers convert between char indices and the byte indices `str` uses.

/// Number of chars in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Byte offset of char index `idx`, or `text.len()` when `idx` is the end.
///
/// Returns `None` when `idx` is past the end.
pub fn byte_offset(text: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (b, _) in text.char_indices() {
        if count == idx {
            return Some(b);
        }
        count += 1;
    }
    (count == idx).then_some(text.len())
}

/// The substring covering chars `[start, end)`, or `None` if out of range.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = byte_offset(text, start)?;
    let b1 = b0 + byte_offset(&text[b0..], end - start)?;
    Some(&text[b0..b1])
}

/// Char index of the byte offset `byte` (which must sit on a char boundary).
pub fn char_index_of_byte(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Every char-index occurrence of `needle` in `text`, left to right,
/// overlapping matches included.
pub fn find_all(text: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut from = 0;
    let mut chars_before = 0;
    let mut last_byte = 0;
    while let Some(rel) = text[from..].find(needle) {
        let at = from + rel;
        chars_before += text[last_byte..at].chars().count();
        last_byte = at;
        out.push(chars_before);
        // Advance by one char to allow overlaps.
        let step = text[at..].chars().next().map_or(1, char::len_utf8);
        from = at + step;
    }
    out
}

/// True for CJK unified ideographs (including the common extensions).
pub fn is_han(c: char) -> bool {
    matches!(c as u32,
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x20000..=0x2EBEF | 0x30000..=0x3134F)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slices_mixed_width_text() {
        let t = "既往史: abc";
        assert_eq!(char_len(t), 8);
        assert_eq!(char_slice(t, 0, 3), Some("既往史"));
        assert_eq!(char_slice(t, 5, 8), Some("abc"));
        assert_eq!(char_slice(t, 8, 8), Some(""));
        assert_eq!(char_slice(t, 7, 9), None);
        assert_eq!(byte_offset(t, 3), Some(9));
    }

    #[test]
    fn finds_overlapping_occurrences_in_chars() {
        assert_eq!(find_all("史史史", "史史"), vec![0, 1]);
        assert_eq!(find_all("a既b既", "既"), vec![1, 3]);
        assert!(find_all("abc", "").is_empty());
    }
}
