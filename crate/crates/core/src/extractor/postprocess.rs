use super::ExtractError;
use crate::corpus::Span;
use crate::text::is_han;

const TRAILING_PUNCT: &[char] = &['，', '。', '；', '、', '：', ':', ';', ',', '.'];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Han,
    Latin,
    Digit,
    Space,
    Other,
}

fn class(c: char) -> Class {
    if c.is_whitespace() {
        Class::Space
    } else if c.is_ascii_digit() {
        Class::Digit
    } else if c.is_ascii_alphabetic() {
        Class::Latin
    } else if is_han(c) {
        Class::Han
    } else {
        Class::Other
    }
}

/// Whether a token boundary falls between `chars[i-1]` and `chars[i]`.
/// Latin letters, digits and whitespace form runs; every Han character and
/// every other symbol is a token of its own.
fn is_boundary(chars: &[char], i: usize) -> bool {
    if i == 0 || i >= chars.len() {
        return true;
    }
    let (a, b) = (class(chars[i - 1]), class(chars[i]));
    a != b || !matches!(a, Class::Latin | Class::Digit | Class::Space)
}

/// Cleans a predicted span: trims whitespace, drops trailing punctuation
/// and shrinks both ends inward to token boundaries, repeating until
/// stable. `None` means nothing is left.
pub fn postprocess_span(chars: &[char], span: Span) -> Result<Option<Span>, ExtractError> {
    if span.start > span.end || span.end > chars.len() {
        return Err(ExtractError::Span(format!("span {span} outside text of length {}", chars.len())));
    }
    let (mut s, mut e) = (span.start, span.end);
    loop {
        let before = (s, e);
        while s < e && chars[s].is_whitespace() {
            s += 1;
        }
        while e > s && (chars[e - 1].is_whitespace() || TRAILING_PUNCT.contains(&chars[e - 1])) {
            e -= 1;
        }
        while s < e && !is_boundary(chars, s) {
            s += 1;
        }
        while e > s && !is_boundary(chars, e) {
            e -= 1;
        }
        if (s, e) == before {
            break;
        }
    }
    Ok((s < e).then_some(Span::new(s, e)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pp(text: &str, s: usize, e: usize) -> Option<String> {
        let chars: Vec<char> = text.chars().collect();
        postprocess_span(&chars, Span::new(s, e)).unwrap().map(|sp| chars[sp.start..sp.end].iter().collect())
    }

    #[test]
    fn trims_space_then_punct() {
        let text = "诊断：高血压。 \n";
        assert_eq!(pp(text, 3, 8), Some("高血压".into()));
    }

    #[test]
    fn clean_span_is_identity() {
        assert_eq!(pp("诊断：高血压", 3, 6), Some("高血压".into()));
        assert_eq!(pp("bp 120mmHg", 3, 10), Some("120mmHg".into()));
    }

    #[test]
    fn partial_latin_word_is_dropped() {
        // Token trace: "h|ypertension" starts inside the run [0,12), so the
        // start moves to the next boundary at 12 (the space run), is trimmed
        // to 13, and the clean word "stage" survives.
        let text = "hypertension stage";
        assert_eq!(pp(text, 1, 18), Some("stage".into()));
        assert_eq!(pp(text, 1, 12), None);
        assert_eq!(pp("ab 12", 0, 4), Some("ab".into()));
    }

    #[test]
    fn punctuation_only_is_empty() {
        assert_eq!(pp("：。 ", 0, 3), None);
        assert_eq!(pp("abc", 1, 1), None);
    }

    #[test]
    fn out_of_range() {
        assert!(postprocess_span(&['a'], Span::new(0, 2)).is_err());
    }

    proptest! {
        #[test]
        fn idempotent(text in "[a-c1-2 高血压。,：]{0,16}", a in 0usize..17, b in 0usize..17) {
            let chars: Vec<char> = text.chars().collect();
            let (s, e) = (a.min(b).min(chars.len()), a.max(b).min(chars.len()));
            if let Some(sp) = postprocess_span(&chars, Span::new(s, e)).unwrap() {
                prop_assert_eq!(postprocess_span(&chars, sp).unwrap(), Some(sp));
                prop_assert!(sp.start >= s && sp.end <= e);
            }
        }
    }
}
