//! Templated micro-corpus of entity/attribute facts.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DataTuple, Dataset, Paragraph};
use crate::error::{contract, Result};
use crate::label::Label;
use crate::text::{tokenize, Vocab};

const ENTITIES: [&str; 40] = [
    "alice", "bruno", "carla", "dmitri", "elena", "felix", "greta", "hugo", "irene", "jonas", "karin", "lars", "mira",
    "nils", "olga", "pavel", "quinn", "rosa", "sven", "tara", "ulla", "victor", "wanda", "xavier", "yara", "zane", "amir",
    "bella", "cyrus", "dora", "emil", "fiona", "gideon", "hanna", "ivan", "julia", "kofi", "lena", "marco", "nora",
];

const ATTRIBUTES: [(&str, [&str; 6]); 16] = [
    ("color", ["red", "blue", "green", "yellow", "purple", "orange"]),
    ("city", ["paris", "tokyo", "lima", "cairo", "oslo", "delhi"]),
    ("sport", ["tennis", "soccer", "rugby", "hockey", "golf", "boxing"]),
    ("food", ["pasta", "sushi", "curry", "tacos", "soup", "bread"]),
    ("pet", ["dog", "cat", "parrot", "rabbit", "turtle", "hamster"]),
    ("job", ["doctor", "pilot", "farmer", "lawyer", "baker", "teacher"]),
    ("instrument", ["piano", "violin", "drums", "flute", "guitar", "cello"]),
    ("car", ["sedan", "coupe", "jeep", "van", "truck", "wagon"]),
    ("metal", ["iron", "copper", "silver", "gold", "zinc", "tin"]),
    ("flower", ["rose", "tulip", "lily", "daisy", "orchid", "lotus"]),
    ("drink", ["tea", "coffee", "juice", "milk", "cocoa", "cider"]),
    ("season", ["spring", "summer", "autumn", "winter", "monsoon", "harvest"]),
    ("planet", ["mars", "venus", "jupiter", "saturn", "mercury", "neptune"]),
    ("language", ["french", "hindi", "swahili", "korean", "greek", "polish"]),
    ("gem", ["ruby", "emerald", "sapphire", "topaz", "opal", "pearl"]),
    ("tree", ["oak", "pine", "maple", "birch", "cedar", "willow"]),
];

const TEMPLATE_WORDS: [&str; 6] = ["the", "of", "is", "what", ".", "?"];

/// Words per fact: `the <attr> of <entity> is <value> .`
const FACT_WORDS: usize = 7;
const VALUE_OFFSET: usize = 5;

/// Share of unanswerable questions that name an absent entity rather than
/// an absent attribute.
const ABSENT_ENTITY_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub n_paragraphs: usize,
    pub facts_min: usize,
    pub facts_max: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_paragraphs: 330,
            facts_min: 3,
            facts_max: 6,
        }
    }
}

/// Vocabulary covering every word the generator can emit.
pub fn synthetic_vocab() -> Vocab {
    let words = ENTITIES
        .iter()
        .copied()
        .chain(ATTRIBUTES.iter().flat_map(|(a, vs)| std::iter::once(*a).chain(vs.iter().copied())))
        .chain(TEMPLATE_WORDS);
    Vocab::from_words(words)
}

fn question(attr: &str, entity: &str) -> String {
    format!("what is the {attr} of {entity} ?")
}

/// Paragraphs of 3-6 facts about distinct entities and attributes, one
/// answerable question per fact and about half as many unanswerable ones
/// naming an absent entity or attribute.
pub fn gen_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n_paragraphs == 0 {
        return Err(contract!("n_paragraphs must be positive"));
    }
    if cfg.facts_min == 0 || cfg.facts_min > cfg.facts_max || cfg.facts_max >= ATTRIBUTES.len() {
        return Err(contract!(
            "facts per paragraph must satisfy 1 <= {} <= {} <= {}",
            cfg.facts_min,
            cfg.facts_max,
            ATTRIBUTES.len() - 1
        ));
    }
    let vocab = synthetic_vocab();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut paragraphs = BTreeMap::new();
    let mut tuples = Vec::new();

    for idx in 0..cfg.n_paragraphs {
        let k = rng.random_range(cfg.facts_min..=cfg.facts_max);
        let mut ents: Vec<usize> = (0..ENTITIES.len()).collect();
        ents.shuffle(&mut rng);
        let mut attrs: Vec<usize> = (0..ATTRIBUTES.len()).collect();
        attrs.shuffle(&mut rng);
        let facts: Vec<(usize, usize, &str)> = (0..k)
            .map(|j| {
                let value = ATTRIBUTES[attrs[j]].1.choose(&mut rng).expect("six values");
                (ents[j], attrs[j], *value)
            })
            .collect();
        let context = facts
            .iter()
            .map(|&(e, a, v)| format!("the {} of {} is {v} .", ATTRIBUTES[a].0, ENTITIES[e]))
            .collect::<Vec<_>>()
            .join(" ");
        let pid = format!("syn-p{idx}");
        let mut qi = 0;
        let mut push = |text: String, span: Option<(usize, usize)>, answers: Vec<String>| {
            tuples.push(DataTuple {
                id: format!("{pid}-q{qi}"),
                question: tokenize(&text, &vocab),
                paragraph_id: pid.clone(),
                span,
                label: if span.is_some() {
                    Label::Answerable
                } else {
                    Label::Unanswerable
                },
                answers,
            });
            qi += 1;
        };
        for (j, &(e, a, v)) in facts.iter().enumerate() {
            let w = j * FACT_WORDS + VALUE_OFFSET;
            push(question(ATTRIBUTES[a].0, ENTITIES[e]), Some((w, w)), vec![v.to_string()]);
        }
        let n_unans = k / 2 + usize::from(k % 2 == 1 && rng.random_bool(0.5));
        for _ in 0..n_unans {
            let text = if rng.random_bool(ABSENT_ENTITY_SHARE) {
                let absent = ents[rng.random_range(k..ENTITIES.len())];
                let present = attrs[rng.random_range(0..k)];
                question(ATTRIBUTES[present].0, ENTITIES[absent])
            } else {
                let absent = attrs[rng.random_range(k..ATTRIBUTES.len())];
                let present = ents[rng.random_range(0..k)];
                question(ATTRIBUTES[absent].0, ENTITIES[present])
            };
            push(text, None, Vec::new());
        }
        paragraphs.insert(pid.clone(), Paragraph::new(pid, context, &vocab));
    }

    let dataset = Dataset {
        name: format!("synthetic-{}", cfg.seed),
        tuples,
        paragraphs,
        vocab,
    };
    dataset.validate()?;
    Ok(dataset)
}
