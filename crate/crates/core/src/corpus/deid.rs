use super::{CorpusError, KvAnnotation, Page, Span};

/// Replacement for personally identifying text.
pub const PLACEHOLDER: &str = "**";

/// Replaces every selected span with [`PLACEHOLDER`] and remaps annotation
/// offsets.
///
/// Annotations whose key or value span lies wholly inside a selector are
/// dropped. A span that only partially overlaps a selector is widened to
/// cover the placeholder and its strings are re-read.
pub fn deidentify(page: &Page, selectors: &[Span]) -> Result<Page, CorpusError> {
    if selectors.is_empty() {
        return Ok(page.clone());
    }
    let chars: Vec<char> = page.text.chars().collect();
    let mut sel = selectors.to_vec();
    sel.sort();
    for s in &sel {
        if s.is_empty() || s.end > chars.len() {
            return Err(CorpusError::Validation {
                page_id: page.page_id.clone(),
                reason: format!("selector {s} empty or outside text of length {}", chars.len()),
            });
        }
    }
    for w in sel.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(CorpusError::OverlappingSelectors { first: w[0], second: w[1] });
        }
    }

    let placeholder: Vec<char> = PLACEHOLDER.chars().collect();
    let mut text = String::with_capacity(page.text.len());
    let mut cursor = 0;
    for s in &sel {
        text.extend(&chars[cursor..s.start]);
        text.extend(&placeholder);
        cursor = s.end;
    }
    text.extend(&chars[cursor..]);

    let map = |pos: usize, is_end: bool| -> usize {
        let mut delta: isize = 0;
        for s in &sel {
            if pos <= s.start {
                break;
            }
            if pos < s.end {
                let base = (s.start as isize + delta) as usize;
                return if is_end { base + placeholder.len() } else { base };
            }
            delta += placeholder.len() as isize - s.len() as isize;
        }
        (pos as isize + delta) as usize
    };
    let inside = |span: Span| sel.iter().any(|s| s.start <= span.start && span.end <= s.end);

    let annotations: Vec<KvAnnotation> = page
        .annotations
        .iter()
        .filter(|a| !inside(a.key_span) && !inside(a.value_span))
        .map(|a| KvAnnotation {
            key_span: Span::new(map(a.key_span.start, false), map(a.key_span.end, true)),
            value_span: Span::new(map(a.value_span.start, false), map(a.value_span.end, true)),
            ..a.clone()
        })
        .collect();

    let mut out = Page {
        report_id: page.report_id.clone(),
        page_id: page.page_id.clone(),
        text,
        annotations,
    };
    out.reread_annotations();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Page {
        // 姓名：张三丰\n既往史：高血压\n
        Page::from_spans(
            "r1",
            "r1-p1",
            "姓名：张三丰\n既往史：高血压\n",
            [
                (Span::new(0, 2), Span::new(3, 6), None),
                (Span::new(7, 10), Span::new(11, 14), Some("既往史".to_string())),
            ],
        )
        .unwrap()
    }

    /// Oracle: locate each surviving annotation by rescanning the output
    /// text for the expected surrounding context.
    #[test]
    fn name_replaced_and_later_offsets_shift() {
        let page = sample();
        let out = deidentify(&page, &[Span::new(3, 6)]).unwrap();
        assert_eq!(out.text, "姓名：**\n既往史：高血压\n");
        assert_eq!(out.annotations.len(), 1, "value inside selector is dropped");
        let a = &out.annotations[0];
        let key_at = out.text.find("既往史").unwrap();
        let key_char = out.text[..key_at].chars().count();
        assert_eq!(a.key_span, Span::new(key_char, key_char + 3));
        assert_eq!(a.value, "高血压");
        out.validate().unwrap();
    }

    #[test]
    fn no_selectors_is_identity() {
        let page = sample();
        assert_eq!(deidentify(&page, &[]).unwrap(), page);
    }

    #[test]
    fn overlapping_selectors_rejected() {
        let err = deidentify(&sample(), &[Span::new(1, 4), Span::new(3, 5)]).unwrap_err();
        assert!(matches!(err, CorpusError::OverlappingSelectors { .. }));
    }

    #[test]
    fn partial_overlap_widens_span() {
        let page = sample();
        // Selector covers the last char of the second value and the newline.
        let out = deidentify(&page, &[Span::new(13, 15)]).unwrap();
        assert_eq!(out.text, "姓名：张三丰\n既往史：高血**");
        assert_eq!(out.annotations[1].value, "高血**");
        out.validate().unwrap();
    }

    #[test]
    fn selector_before_everything_shifts_all_spans() {
        let page = Page::from_spans("r", "p", "ID12345 k:v", [(Span::new(8, 9), Span::new(10, 11), None)]).unwrap();
        let out = deidentify(&page, &[Span::new(0, 7)]).unwrap();
        assert_eq!(out.text, "** k:v");
        assert_eq!(out.annotations[0].key_span, Span::new(3, 4));
        assert_eq!(out.annotations[0].value_span, Span::new(5, 6));
    }
}
