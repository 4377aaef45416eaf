//! Whitespace tokenization with lowercasing and detached punctuation.

use crate::types::SequenceInput;

pub fn tokenize(text: &str) -> SequenceInput {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_alphanumeric() || ch == '\'' || ch == '-' {
                current.extend(ch.to_lowercase());
            } else {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    SequenceInput::Tokens(tokens)
}
