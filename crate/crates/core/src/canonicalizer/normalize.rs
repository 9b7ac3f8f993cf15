const TRAILING_DELIMITERS: &[char] = &['：', ':', '＝', '=', '、', '.', '。'];
const BRACKETS: &[(char, char)] = &[
    ('(', ')'),
    ('[', ']'),
    ('{', '}'),
    ('<', '>'),
    ('【', '】'),
    ('「', '」'),
    ('《', '》'),
    ('〔', '〕'),
];

/// Cleans a raw surface key into the form stored in the inventory.
///
/// The rules are applied until nothing changes, which makes the function
/// idempotent; no rule ever adds characters.
pub fn normalize_key(raw: &str) -> String {
    let mut cur = fold(raw);
    loop {
        let next = strip_brackets(&strip_trailing(&collapse(&cur)));
        if next == cur {
            return next;
        }
        cur = next;
    }
}

/// Fullwidth ASCII to halfwidth, ideographic space to space, ASCII
/// lowercase. Every mapping is one char to one char.
fn fold(s: &str) -> String {
    s.chars()
        .map(|c| match c {
            '\u{3000}' => ' ',
            '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).unwrap_or(c),
            _ => c,
        })
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn strip_trailing(s: &str) -> String {
    s.trim_end_matches(TRAILING_DELIMITERS).trim_end().to_string()
}

fn strip_brackets(s: &str) -> String {
    let mut it = s.chars();
    if let (Some(first), Some(last)) = (it.next(), it.next_back()) {
        if BRACKETS.contains(&(first, last)) {
            return it.as_str().trim().to_string();
        }
    }
    s.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_trailing_delimiter() {
        assert_eq!(normalize_key("既往史："), "既往史");
        assert_eq!(normalize_key("既往史 = "), "既往史");
        assert_eq!(normalize_key("诊断。、"), "诊断");
    }

    #[test]
    fn folds_width_case_and_space() {
        assert_eq!(normalize_key("Ｐａｓｔ  Ｈｉｓｔｏｒｙ "), "past history");
        assert_eq!(normalize_key("\u{3000}现病史\u{3000}"), "现病史");
    }

    #[test]
    fn strips_one_bracket_layer_per_pass() {
        assert_eq!(normalize_key("（主诉）"), "主诉");
        assert_eq!(normalize_key("【 体格检查 】："), "体格检查");
        assert_eq!(normalize_key("(a)(b)"), "a)(b");
    }

    #[test]
    fn empty_and_delimiter_only_inputs() {
        assert_eq!(normalize_key(""), "");
        assert_eq!(normalize_key(" ：: "), "");
        assert_eq!(normalize_key("()"), "");
    }

    fn messy() -> impl Strategy<Value = String> {
        let pieces = prop::sample::select(vec![
            "既", "往", "史", "a", "Ｂ", "Z", "1", "：", ":", "＝", "=", "、", ".", "。", " ", "\u{3000}", "\t", "(", ")",
            "（", "）", "【", "】", "[", "]", "x", "İ",
        ]);
        prop::collection::vec(pieces, 0..14).prop_map(|v| v.concat())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn idempotent_and_never_longer(s in messy()) {
            let once = normalize_key(&s);
            prop_assert_eq!(normalize_key(&once), once.clone());
            prop_assert!(once.chars().count() <= s.chars().count());
        }
    }
}
