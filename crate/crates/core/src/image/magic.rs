use parking_lot::RwLock;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::SEEDED_MAGIC_WORDS;

/// Composition phrase used as a text-to-image prompt prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagicWord {
    pub id: String,
    pub phrase: String,
    /// Corner pixel the mock renderer flips when this word is present.
    pub corner_slot: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("magic word {0:?} is already registered")]
pub struct DuplicateMagicWord(pub String);

/// Extensible magic-word vocabulary, seeded with the four framing phrases.
#[derive(Debug)]
pub struct MagicWordRegistry {
    words: RwLock<Vec<MagicWord>>,
}

impl Default for MagicWordRegistry {
    fn default() -> Self {
        let words = SEEDED_MAGIC_WORDS
            .iter()
            .enumerate()
            .map(|(i, phrase)| MagicWord {
                id: slug(phrase),
                phrase: phrase.to_string(),
                corner_slot: i as u32,
            })
            .collect();
        Self {
            words: RwLock::new(words),
        }
    }
}

fn slug(phrase: &str) -> String {
    phrase.to_lowercase().split_whitespace().collect::<Vec<_>>().join("-")
}

impl MagicWordRegistry {
    pub fn register(&self, phrase: &str) -> Result<MagicWord, DuplicateMagicWord> {
        let mut words = self.words.write();
        if words.iter().any(|w| w.phrase == phrase) {
            return Err(DuplicateMagicWord(phrase.to_string()));
        }
        let word = MagicWord {
            id: slug(phrase),
            phrase: phrase.to_string(),
            corner_slot: words.len() as u32,
        };
        words.push(word.clone());
        Ok(word)
    }

    pub fn get(&self, phrase: &str) -> Option<MagicWord> {
        self.words.read().iter().find(|w| w.phrase == phrase).cloned()
    }

    pub fn phrases(&self) -> Vec<String> {
        self.words.read().iter().map(|w| w.phrase.clone()).collect()
    }

    pub fn all(&self) -> Vec<MagicWord> {
        self.words.read().clone()
    }
}

/// Pixel reserved for `slot`: slots cycle through the four corners, moving
/// one pixel inward along the top/bottom edge every full cycle.
pub fn corner_pixel(slot: u32, width: u32, height: u32) -> (u32, u32) {
    let inset = (slot / 4).min(width.saturating_sub(1));
    match slot % 4 {
        0 => (inset, 0),
        1 => (width - 1 - inset, 0),
        2 => (inset, height - 1),
        _ => (width - 1 - inset, height - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_extensible() {
        let r = MagicWordRegistry::default();
        assert_eq!(r.phrases(), vec!["Middle view", "Close view", "Low Angle", "High Angle"]);
        assert_eq!(r.get("Close view").unwrap().corner_slot, 1);
        let w = r.register("Bird's-eye view").unwrap();
        assert_eq!(w.corner_slot, 4);
        assert_eq!(r.register("Close view"), Err(DuplicateMagicWord("Close view".into())));
    }

    #[test]
    fn corner_slots_are_distinct() {
        let pixels: std::collections::HashSet<_> = (0..12).map(|s| corner_pixel(s, 512, 288)).collect();
        assert_eq!(pixels.len(), 12);
        assert_eq!(corner_pixel(3, 512, 288), (511, 287));
        assert_eq!(corner_pixel(5, 512, 288), (510, 0));
    }
}
