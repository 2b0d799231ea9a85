//! Text normalization shared by the metrics and the kernel tokenizer stub,
//! plus scanning of `<Mark n>` / `<Region n>` identifiers.

/// Lowercases, turns every non-alphanumeric, non-whitespace character into
/// a separator, and splits on whitespace.
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphanumeric() {
            cleaned.extend(c.to_lowercase());
        } else {
            cleaned.push(' ');
        }
    }
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MarkWord {
    Mark,
    Region,
}

impl MarkWord {
    pub fn as_str(self) -> &'static str {
        match self {
            MarkWord::Mark => "Mark",
            MarkWord::Region => "Region",
        }
    }

    /// `<Region 3>`
    pub fn tag(self, id: u32) -> String {
        format!("<{} {}>", self.as_str(), id)
    }
}

/// Every well-formed `<Mark n>` / `<Region n>` occurrence, in text order.
pub fn mark_refs(text: &str) -> Vec<(MarkWord, u32)> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find('<') {
        rest = &rest[pos + 1..];
        let (word, tail) = if let Some(t) = rest.strip_prefix("Mark ") {
            (MarkWord::Mark, t)
        } else if let Some(t) = rest.strip_prefix("Region ") {
            (MarkWord::Region, t)
        } else {
            continue;
        };
        let digits: String = tail.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.is_empty() || !tail[digits.len()..].starts_with('>') {
            continue;
        }
        if let Ok(n) = digits.parse::<u32>() {
            out.push((word, n));
        }
    }
    out
}

/// True when `text` still carries a template placeholder: a `{slot}` or a
/// literal `<Mark n>` / `<Region n>` with the letter `n`.
pub fn has_unresolved_placeholder(text: &str) -> bool {
    text.contains("<Mark n>")
        || text.contains("<Region n>")
        || text
            .find('{')
            .is_some_and(|i| text[i..].contains('}'))
}
