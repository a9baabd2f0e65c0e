//! Deterministic toy product-QA corpus.
//!
//! Each question asks for one attribute of one product; the knowledge base
//! holds the matching `(product, attribute, value)` triple for every pair.
//! The default shape gives 200 QA pairs over a vocabulary of about 60 words.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data_io::{KnowledgeItem, QaPair};

pub const PRODUCTS: &[&str] = &[
    "alpha", "bravo", "cobalt", "delta", "ember", "falcon", "garnet", "harbor", "indigo",
    "juniper", "kestrel", "lumen", "meridian", "nimbus", "onyx", "pioneer", "quartz", "raven",
    "sierra", "tundra",
];

pub const RELATIONS: &[&str] = &[
    "color",
    "weight",
    "voltage",
    "warranty",
    "material",
    "origin",
    "capacity",
    "interface",
    "rating",
    "finish",
];

pub const VALUES: &[&str] = &[
    "red", "blue", "green", "black", "white", "steel", "copper", "plastic", "glass", "wood",
    "small", "large", "high", "low", "north", "south", "usb", "serial", "matte", "gloss",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub dataset: Vec<QaPair>,
    pub kb: Vec<KnowledgeItem>,
}

pub fn question(product: &str, relation: &str) -> String {
    format!("what is the {relation} of {product} ?")
}

pub fn answer(product: &str, relation: &str, value: &str) -> String {
    format!("the {relation} of {product} is {value} .")
}

/// Builds `products × relations` QA pairs (capped by the word lists) with
/// seeded attribute values.
pub fn corpus_with_shape(products: usize, relations: usize, seed: u64) -> SyntheticCorpus {
    let products = &PRODUCTS[..products.min(PRODUCTS.len())];
    let relations = &RELATIONS[..relations.min(RELATIONS.len())];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dataset = Vec::with_capacity(products.len() * relations.len());
    let mut kb = Vec::with_capacity(dataset.capacity());
    for (p, product) in products.iter().enumerate() {
        for (r, relation) in relations.iter().enumerate() {
            let value = VALUES[rng.gen_range(0..VALUES.len())];
            dataset.push(QaPair::new(
                format!("q{p:02}{r:02}"),
                question(product, relation),
                answer(product, relation, value),
            ));
            kb.push(
                KnowledgeItem::triple(format!("k{p:02}{r:02}"), *product, *relation, value)
                    .expect("word lists are non-empty"),
            );
        }
    }
    SyntheticCorpus { dataset, kb }
}

/// The full 20 × 10 corpus.
pub fn corpus(seed: u64) -> SyntheticCorpus {
    corpus_with_shape(PRODUCTS.len(), RELATIONS.len(), seed)
}
