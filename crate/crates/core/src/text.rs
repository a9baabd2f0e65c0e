//! Text normalisation shared by the encoder, the reference model and the
//! metrics.

/// Lowercased word tokens. Alphanumeric runs form one token, every other
/// non-space character (punctuation, CJK ideographs) is its own token.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() && !is_cjk(ch) {
            cur.extend(ch.to_lowercase());
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// One token per non-whitespace character.
pub fn char_tokens(text: &str) -> Vec<String> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_string())
        .collect()
}

fn is_cjk(ch: char) -> bool {
    matches!(ch as u32,
        0x3040..=0x30FF | 0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0xAC00..=0xD7AF)
}

/// 64-bit FNV-1a, seeded by folding the seed into the offset basis.
/// Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET ^ seed.wrapping_mul(PRIME);
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(PRIME);
    }
    h
}
