use std::ops::Range;

/// Byte ranges of tokens: maximal alphanumeric runs, and each other
/// non-whitespace character on its own.
pub fn token_spans(text: &str) -> impl Iterator<Item = Range<usize>> + '_ {
    let mut chars = text.char_indices().peekable();
    std::iter::from_fn(move || loop {
        let (start, c) = chars.next()?;
        if c.is_whitespace() {
            continue;
        }
        if !c.is_alphanumeric() {
            return Some(start..start + c.len_utf8());
        }
        let mut end = start + c.len_utf8();
        while let Some(&(i, n)) = chars.peek() {
            if !n.is_alphanumeric() {
                break;
            }
            end = i + n.len_utf8();
            chars.next();
        }
        return Some(start..end);
    })
}

pub fn count_tokens(text: &str) -> usize {
    token_spans(text).count()
}
