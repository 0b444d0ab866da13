//! Style prompt lexicon and the three augmentation strategies: a synonym
//! keyword, a sentence skeleton with a keyword slot, or a complete
//! description.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder replaced by a keyword in templates.
pub const SLOT: &str = "{}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStrategy {
    Keyword,
    Template,
    FullSentence,
}

impl PromptStrategy {
    pub const ALL: [PromptStrategy; 3] = [PromptStrategy::Keyword, PromptStrategy::Template, PromptStrategy::FullSentence];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StylePrompts {
    pub keywords: Vec<String>,
    pub templates: Vec<String>,
    pub full_sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptLexicon {
    pub styles: BTreeMap<String, StylePrompts>,
}

const BUILTIN: &[(&str, [&str; 4], [&str; 3], [&str; 3])] = &[
    (
        "neutral",
        ["plain", "flat", "ordinary", "level"],
        ["speak in a {} voice", "read this with a {} tone", "use a {} delivery"],
        ["just read the words without any feeling", "an everyday voice with no emotion at all", "matter of fact, nothing added"],
    ),
    (
        "happy",
        ["cheerful", "joyful", "bright", "delighted"],
        ["speak in a {} voice", "sound {} and light", "a {} way of talking"],
        ["smiling while talking, full of good news", "like someone who just won a prize", "warm laughter behind every word"],
    ),
    (
        "sad",
        ["gloomy", "sorrowful", "mournful", "downcast"],
        ["speak in a {} voice", "sound {} and slow", "a {} way of talking"],
        ["as if holding back tears", "heavy hearted, like after a loss", "quiet and low, missing someone dear"],
    ),
    (
        "angry",
        ["furious", "irritated", "fierce", "hostile"],
        ["speak in a {} voice", "sound {} and loud", "a {} way of talking"],
        ["shouting at someone who broke a promise", "teeth clenched, ready for a fight", "loud and sharp, out of patience"],
    ),
    (
        "surprise",
        ["astonished", "amazed", "startled", "stunned"],
        ["speak in a {} voice", "sound {} and sudden", "a {} way of talking"],
        ["as if something unexpected just happened", "wide eyed, hearing unbelievable news", "a gasp before every phrase"],
    ),
    (
        "fear",
        ["frightened", "nervous", "trembling", "anxious"],
        ["speak in a {} voice", "sound {} and shaky", "a {} way of talking"],
        ["whispering in a dark hallway", "as if something is following close behind", "a shaky voice expecting danger"],
    ),
    (
        "disgust",
        ["revolted", "repulsed", "disdainful", "sickened"],
        ["speak in a {} voice", "sound {} and sour", "a {} way of talking"],
        ["like tasting spoiled milk", "turning away from a foul smell", "looking down on something nasty"],
    ),
    (
        "calm",
        ["serene", "relaxed", "peaceful", "soothing"],
        ["speak in a {} voice", "sound {} and soft", "a {} way of talking"],
        ["slow breaths, lying in the sun", "gentle as a quiet lake at dawn", "unhurried, like a bedtime story"],
    ),
];

impl PromptLexicon {
    /// The lexicon shipped with the crate, covering every built-in style.
    pub fn builtin() -> Self {
        let styles = BUILTIN
            .iter()
            .map(|(name, kw, tpl, full)| {
                (
                    name.to_string(),
                    StylePrompts {
                        keywords: kw.iter().map(|s| s.to_string()).collect(),
                        templates: tpl.iter().map(|s| s.to_string()).collect(),
                        full_sentences: full.iter().map(|s| s.to_string()).collect(),
                    },
                )
            })
            .collect();
        Self { styles }
    }

    pub fn get(&self, style_name: &str) -> Result<&StylePrompts> {
        self.styles.get(style_name).ok_or_else(|| Error::UnknownStyle(style_name.to_string()))
    }

    /// Checks the lexicon invariants: at least three entries of each kind,
    /// a slot in every template, and no keyword shared between styles.
    pub fn validate(&self) -> Result<()> {
        let mut seen: HashSet<&str> = HashSet::new();
        for (name, p) in &self.styles {
            if name.is_empty() {
                return Err(Error::Config("lexicon style name is empty".into()));
            }
            if p.keywords.len() < 3 || p.templates.len() < 3 || p.full_sentences.len() < 3 {
                return Err(Error::Config(format!("lexicon entry `{name}` needs at least 3 of each kind")));
            }
            if let Some(t) = p.templates.iter().find(|t| !t.contains(SLOT)) {
                return Err(Error::Config(format!("template `{t}` of `{name}` has no slot")));
            }
            for k in &p.keywords {
                if !seen.insert(k.as_str()) {
                    return Err(Error::Config(format!("keyword `{k}` is assigned to more than one style")));
                }
            }
        }
        Ok(())
    }
}

/// Fills a template's slot with a keyword.
pub fn fill_template(template: &str, keyword: &str) -> String {
    template.replacen(SLOT, keyword, 1)
}

/// Draws a prompt for `style_name`. Deterministic in `seed`.
pub fn augment_prompt(style_name: &str, lexicon: &PromptLexicon, strategy: PromptStrategy, seed: u64) -> Result<String> {
    let entry = lexicon.get(style_name)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = |rng: &mut ChaCha8Rng, items: &[String]| items[rng.random_range(0..items.len())].clone();
    Ok(match strategy {
        PromptStrategy::Keyword => pick(&mut rng, &entry.keywords),
        PromptStrategy::Template => {
            let template = pick(&mut rng, &entry.templates);
            let keyword = pick(&mut rng, &entry.keywords);
            fill_template(&template, &keyword)
        }
        PromptStrategy::FullSentence => pick(&mut rng, &entry.full_sentences),
    })
}
