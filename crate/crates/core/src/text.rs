//! Character vocabulary shared by the synthesis text and style prompts.

use crate::error::{Error, Result};

/// Every character the models accept, in id order.
pub const ALPHABET: &str = " abcdefghijklmnopqrstuvwxyz',.?!-";

pub fn vocab_size() -> usize {
    ALPHABET.chars().count()
}

pub fn char_id(c: char) -> Option<usize> {
    ALPHABET.chars().position(|a| a == c)
}

/// Maps text to character ids, lowercasing first. Reports every
/// character outside the alphabet at once.
pub fn encode(text: &str) -> Result<Vec<usize>> {
    let lowered = text.to_lowercase();
    let mut ids = Vec::with_capacity(lowered.len());
    let mut unknown: Vec<char> = Vec::new();
    for c in lowered.chars() {
        match char_id(c) {
            Some(i) => ids.push(i),
            None => {
                if !unknown.contains(&c) {
                    unknown.push(c);
                }
            }
        }
    }
    if !unknown.is_empty() {
        let listed: Vec<String> = unknown.iter().map(|c| format!("{c:?}")).collect();
        return Err(Error::UnknownCharacters(listed.join(", ")));
    }
    Ok(ids)
}

pub fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y')
}
