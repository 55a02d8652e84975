//! Tokenization and stable hashing shared by the embedders and the key-term
//! extractor.

/// Minimum token length, in characters, that survives tokenization.
pub const MIN_TOKEN_CHARS: usize = 2;

/// Lowercases `text`, splits on every non-alphanumeric character and keeps
/// tokens of at least [`MIN_TOKEN_CHARS`] characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= MIN_TOKEN_CHARS)
        .map(str::to_owned)
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a. Stable across processes and platforms.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Fnv1a(u64);

impl Fnv1a {
    pub(crate) fn new() -> Self {
        Fnv1a(FNV_OFFSET)
    }

    pub(crate) fn write(&mut self, bytes: &[u8]) -> &mut Self {
        for &b in bytes {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(FNV_PRIME);
        }
        self
    }

    pub(crate) fn write_u64(&mut self, v: u64) -> &mut Self {
        self.write(&v.to_le_bytes())
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
fn fnv1a(bytes: &[u8]) -> u64 {
    Fnv1a::new().write(bytes).finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_lowercases_and_drops_short_tokens() {
        assert_eq!(
            tokenize("Best Camping-Tent, a review!"),
            vec!["best", "camping", "tent", "review"]
        );
        assert!(tokenize("").is_empty());
        assert!(tokenize("a b c | ").is_empty());
    }

    #[test]
    fn keeps_non_ascii_alphanumerics() {
        assert_eq!(tokenize("캠핑 텐트 x1"), vec!["캠핑", "텐트", "x1"]);
    }

    #[test]
    fn fnv_reference_values() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a(b"foobar"), 0x85944171f73967e8);
    }
}
