use std::sync::LazyLock;

use regex::Regex;

static URL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:https?://|www\.)\S+").unwrap());
static EMAIL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[\w.+-]+@[\w-]+(?:\.[\w-]+)+").unwrap());
static MENTION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"@\w+").unwrap());
static HASHTAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"#(\w+)").unwrap());

/// Lowercases a caption and splits it into word tokens.
///
/// URLs become `url`, e-mail addresses `email`, `@mentions` become
/// `username`, and hashtags are dropped together with their body. A run of
/// digits (with `.` or `,` between digits) becomes a single `0` token and
/// splits from adjacent letters, so `2x` yields `0`, `x`. Everything that is
/// neither a letter nor a digit (punctuation, emoji, symbols) separates
/// tokens.
pub fn normalize_caption(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let s = URL.replace_all(&lower, " url ");
    let s = EMAIL.replace_all(&s, " email ");
    let s = MENTION.replace_all(&s, " username ");
    let s = HASHTAG.replace_all(&s, " ");

    let chars: Vec<char> = s.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_numeric() {
            i += 1;
            while i < chars.len() {
                if chars[i].is_numeric() {
                    i += 1;
                } else if matches!(chars[i], '.' | ',')
                    && chars.get(i + 1).is_some_and(|n| n.is_numeric())
                {
                    i += 2;
                } else {
                    break;
                }
            }
            tokens.push("0".to_string());
        } else if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphabetic() {
                i += 1;
            }
            tokens.push(chars[start..i].iter().collect());
        } else {
            i += 1;
        }
    }
    tokens
}

/// Lowercased hashtag bodies of a raw caption, in order of appearance.
pub fn extract_hashtags(text: &str) -> Vec<String> {
    HASHTAG
        .captures_iter(text)
        .map(|c| c[1].to_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        normalize_caption(s)
    }

    #[test]
    fn canonical_example() {
        assert_eq!(
            toks("Visite https://ex.com @maria, 2x! #ferias"),
            ["visite", "url", "username", "0", "x"]
        );
    }

    #[test]
    fn entity_rules() {
        assert!(toks("").is_empty());
        assert_eq!(toks("a@b.com"), ["email"]);
        assert_eq!(toks("Contato: joao.silva+x@uff.br hoje"), ["contato", "email", "hoje"]);
        assert_eq!(toks("www.uff.br"), ["url"]);
        assert_eq!(toks("R$ 1.000,50 e 3 cafés ☕😀"), ["r", "0", "e", "0", "cafés"]);
        assert_eq!(toks("#Niterói #rj praia"), ["praia"]);
        assert_eq!(toks("abc123def"), ["abc", "0", "def"]);
        assert_eq!(toks("ÓTIMO!!! dia..."), ["ótimo", "dia"]);
    }

    #[test]
    fn hashtags_are_extracted_lowercase() {
        assert_eq!(extract_hashtags("#A foo #b_c #Niterói"), ["a", "b_c", "niterói"]);
        assert!(extract_hashtags("nada aqui").is_empty());
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(s in "\\PC{0,60}") {
            let once = normalize_caption(&s);
            let twice = normalize_caption(&once.join(" "));
            prop_assert_eq!(once, twice);
        }
    }
}
