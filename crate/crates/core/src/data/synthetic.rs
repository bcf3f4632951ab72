//! Generated worlds for smoke experiments: a general-domain corpus whose
//! masked words are predictable from context, and facts about invented
//! subjects that no general sentence mentions.

use super::corpus::LabeledExample;
use super::knowledge::{KnowledgeTriple, Templates};
use super::{Result, MASK, SPECIAL_TOKENS};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// The `i`-th invented three-syllable word, e.g. `bababa`.
pub fn nonce_word(i: usize) -> String {
    let syllables = CONSONANTS.len() * VOWELS.len();
    let mut n = i;
    let mut out = String::with_capacity(6);
    for _ in 0..3 {
        let s = n % syllables;
        n /= syllables;
        out.push(CONSONANTS[s / VOWELS.len()] as char);
        out.push(VOWELS[s % VOWELS.len()] as char);
    }
    out
}

/// `count` distinct invented words starting at index `offset`, scattered
/// over the word space so neighbours do not share syllables.
pub fn nonce_words(count: usize, offset: usize) -> Vec<String> {
    (offset..offset + count)
        .map(|i| nonce_word(i.wrapping_mul(7919) % 343_000))
        .collect()
}

const ANIMALS: [(&str, &str); 8] = [
    ("dog", "meat"),
    ("cat", "fish"),
    ("cow", "grass"),
    ("horse", "hay"),
    ("bird", "seeds"),
    ("rabbit", "carrots"),
    ("bear", "honey"),
    ("mouse", "cheese"),
];
const PEOPLE: [(&str, &str); 6] = [
    ("teacher", "school"),
    ("doctor", "hospital"),
    ("farmer", "field"),
    ("cook", "kitchen"),
    ("pilot", "airport"),
    ("sailor", "harbor"),
];
const TOOLS: [(&str, &str); 6] = [
    ("knife", "cutting"),
    ("pen", "writing"),
    ("broom", "sweeping"),
    ("spoon", "eating"),
    ("hammer", "building"),
    ("brush", "painting"),
];
const COLORS: [(&str, &str); 5] = [
    ("sky", "blue"),
    ("grass", "green"),
    ("snow", "white"),
    ("night", "dark"),
    ("sun", "bright"),
];

/// `n` general-domain sentences from a handful of frames; every content
/// word is tied to another word in the same sentence.
pub fn general_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match rng.random_range(0..5) {
            0 => {
                let (a, f) = ANIMALS.choose(&mut rng).unwrap();
                format!("the {a} eats {f} every day .")
            }
            1 => {
                let (p, w) = PEOPLE.choose(&mut rng).unwrap();
                format!("the {p} works at the {w} .")
            }
            2 => {
                let (t, u) = TOOLS.choose(&mut rng).unwrap();
                format!("a {t} is good for {u} .")
            }
            3 => {
                let (x, c) = COLORS.choose(&mut rng).unwrap();
                format!("the {x} is {c} today .")
            }
            _ => {
                let (p, w) = PEOPLE.choose(&mut rng).unwrap();
                let (a, _) = ANIMALS.choose(&mut rng).unwrap();
                format!("the {p} saw a {a} near the {w} .")
            }
        })
        .collect()
}

/// Place names used as fact objects.
pub const PLACES: [&str; 8] = ["paris", "rome", "tokyo", "cairo", "lima", "oslo", "delhi", "quito"];

/// One fact per subject with an object drawn uniformly from `objects`.
pub fn random_facts(subjects: &[String], relation: &str, objects: &[&str], seed: u64) -> Vec<KnowledgeTriple> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects
        .iter()
        .map(|s| KnowledgeTriple::new(s.clone(), relation, *objects.choose(&mut rng).unwrap()))
        .collect()
}

/// One example per fact: the templated sentence with the object replaced by
/// `<mask>`, labeled by `label(object)`.
pub fn fact_queries(
    facts: &[KnowledgeTriple],
    templates: &Templates,
    label: impl Fn(&str) -> String,
) -> Result<Vec<LabeledExample>> {
    let mask = SPECIAL_TOKENS[MASK as usize];
    facts
        .iter()
        .map(|f| {
            let text = templates
                .pattern(&f.relation)?
                .replace("{subj}", &f.subject)
                .replace("{obj}", mask);
            Ok(LabeledExample {
                text,
                text2: None,
                label: label(&f.object),
            })
        })
        .collect()
}
