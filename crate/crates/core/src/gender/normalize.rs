/// Canonical form of a raw first name, or `None` for blank and number-only entries.
///
/// Whitespace is removed everywhere, each hyphen-separated token is title-cased and the
/// hyphens themselves are kept. Idempotent.
pub fn normalize_name(raw: &str) -> Option<String> {
    let compact: String = raw.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() || compact.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    let mut out = String::with_capacity(compact.len());
    for (i, token) in compact.split('-').enumerate() {
        if i > 0 {
            out.push('-');
        }
        title_case_into(token, &mut out);
    }
    Some(out)
}

fn title_case_into(token: &str, out: &mut String) {
    let mut chars = token.chars();
    if let Some(first) = chars.next() {
        // Multi-char uppercase expansions ('ß' -> "SS") would not survive a second pass.
        let mut upper = first.to_uppercase();
        match (upper.next(), upper.next()) {
            (Some(u), None) => out.push(u),
            _ => out.push(first),
        }
    }
    for c in chars {
        out.extend(c.to_lowercase());
    }
}
