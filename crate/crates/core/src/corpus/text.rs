//! Character classes and whitespace tokenization.

use unicode_general_category::get_general_category;

/// Unicode general category P* (any punctuation class).
pub fn is_punct_char(c: char) -> bool {
    get_general_category(c).abbreviation().starts_with('P')
}

/// A token is punctuation when every character is in a P* category.
pub fn is_punct_token(token: &str) -> bool {
    !token.is_empty() && token.chars().all(is_punct_char)
}

/// Matches `^[0-9]+([.,][0-9]+)?$`.
pub fn is_digit_token(token: &str) -> bool {
    let bytes = token.as_bytes();
    let int_len = bytes.iter().take_while(|b| b.is_ascii_digit()).count();
    if int_len == 0 {
        return false;
    }
    match &bytes[int_len..] {
        [] => true,
        [sep, rest @ ..] if (*sep == b'.' || *sep == b',') && !rest.is_empty() => {
            rest.iter().all(u8::is_ascii_digit)
        }
        _ => false,
    }
}

pub fn whitespace_tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Lowercased whitespace tokens with punctuation tokens removed.
pub fn words(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| !is_punct_token(t))
        .map(|t| t.to_lowercase())
        .collect()
}

/// Plain punctuation splitter: surrounds each punctuation character with
/// spaces, except for separators inside digit groups such as `1,000` or
/// `3.5`.
pub fn split_punctuation(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len() + 8);
    for (i, &c) in chars.iter().enumerate() {
        let inside_number = (c == '.' || c == ',')
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit();
        if is_punct_char(c) && !inside_number {
            out.push(' ');
            out.push(c);
            out.push(' ');
        } else {
            out.push(c);
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digit_tokens() {
        for t in ["1999", "3.14", "1,000", "0"] {
            assert!(is_digit_token(t), "{t}");
        }
        for t in ["", "1.", ".5", "1.2.3", "12a", "1,,2", "١٢"] {
            assert!(!is_digit_token(t), "{t}");
        }
    }

    #[test]
    fn punct_tokens() {
        assert!(is_punct_token("."));
        assert!(is_punct_token("¿"));
        assert!(is_punct_token("«"));
        assert!(is_punct_token("..."));
        assert!(!is_punct_token("a."));
        assert!(!is_punct_token("$"), "currency is Sc, not P*");
        assert!(!is_punct_token(""));
    }

    #[test]
    fn splitter_keeps_numbers() {
        assert_eq!(split_punctuation("Hello, world! It costs 1,000."), "Hello , world ! It costs 1,000 .");
        assert_eq!(split_punctuation("(a)"), "( a )");
    }

    #[test]
    fn words_fold_case_and_drop_punct() {
        let toks = whitespace_tokens("The cat , THE");
        assert_eq!(words(&toks), vec!["the", "cat", "the"]);
    }
}
