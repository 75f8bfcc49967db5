//! Small text helpers shared by retrieval, metrics and the offline mocks.

/// Lowercases and splits on every non-alphanumeric character, dropping
/// empty tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Stable 64-bit FNV-1a hash.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(PRIME))
}

/// Text up to and including the first sentence terminator followed by
/// whitespace (or the whole text).
pub fn first_sentence(text: &str) -> &str {
    let text = text.trim();
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if matches!(b, b'.' | b'!' | b'?') && bytes.get(i + 1).is_none_or(|n| n.is_ascii_whitespace()) {
            return &text[..=i];
        }
    }
    text
}

/// Content between the first `<tag ...>` and the following `</tag>`.
pub fn between_tags<'a>(text: &'a str, tag: &str) -> Option<&'a str> {
    let open = format!("<{tag}");
    let close = format!("</{tag}>");
    let start = text.find(&open)?;
    let body_start = start + text[start..].find('>')? + 1;
    let end = body_start + text[body_start..].find(&close)?;
    Some(&text[body_start..end])
}

/// All `(attributes, body)` occurrences of `<tag ...>body</tag>`.
pub fn all_tags<'a>(text: &'a str, tag: &str) -> Vec<(&'a str, &'a str)> {
    let open = format!("<{tag}");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let after = &rest[start + open.len()..];
        // Only accept `<tag>` or `<tag ` so `<tags>` does not match `<tag`.
        if !(after.starts_with('>') || after.starts_with(' ')) {
            rest = after;
            continue;
        }
        let Some(gt) = after.find('>') else { break };
        let attrs = &after[..gt];
        let body_and_rest = &after[gt + 1..];
        let Some(end) = body_and_rest.find(&close) else { break };
        out.push((attrs.trim(), &body_and_rest[..end]));
        rest = &body_and_rest[end + close.len()..];
    }
    out
}

/// Value of `name="..."` inside a tag's attribute string.
pub fn attribute<'a>(attrs: &'a str, name: &str) -> Option<&'a str> {
    let key = format!("{name}=\"");
    let start = attrs.find(&key)? + key.len();
    let end = start + attrs[start..].find('"')?;
    Some(&attrs[start..end])
}
