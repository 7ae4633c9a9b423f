//! Synthetic inputs shared by the benchmarks.

use chrono::{Duration, TimeZone, Utc};
use pulsemon_core::ingest::{Platform, Post};
use pulsemon_core::Lexicon;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CATEGORIES: [&str; 6] = ["anxiety", "anger", "sadness", "posemo", "social", "prosocial"];

fn word(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(3..10);
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

/// Six categories of `per_category` entries, a third of them wildcards and
/// a tenth two-word phrases. Also returns the vocabulary posts draw from.
pub fn lexicon(per_category: usize, seed: u64) -> (Lexicon, Vec<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vocab = Vec::new();
    let mut sources = Vec::new();
    for cat in CATEGORIES {
        let mut lines = std::collections::BTreeSet::new();
        while lines.len() < per_category {
            let w = word(&mut rng);
            vocab.push(w.clone());
            let line = match rng.gen_range(0..10) {
                0 => {
                    let second = word(&mut rng);
                    vocab.push(second.clone());
                    format!("{w} {second}")
                }
                1..=3 => format!("{}*", &w[..w.len().min(4)]),
                _ => w,
            };
            lines.insert(line);
        }
        sources.push((cat, lines.into_iter().collect::<Vec<_>>().join("\n")));
    }
    for _ in 0..vocab.len() {
        vocab.push(word(&mut rng));
    }
    let lex = Lexicon::from_sources(sources.iter().map(|(c, t)| (*c, t.as_str()))).expect("generated lexicon is valid");
    (lex, vocab)
}

/// Post bodies of 5 to 60 words drawn from `vocab`.
pub fn texts(vocab: &[String], n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.gen_range(5..60);
            (0..k).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect::<Vec<_>>().join(" ")
        })
        .collect()
}

/// Posts spread evenly over `days` days from 2020-01-01.
pub fn posts(texts: &[String], days: i64) -> Vec<Post> {
    let t0 = Utc.with_ymd_and_hms(2020, 1, 1, 0, 0, 0).unwrap();
    let step = days * 86_400 / texts.len().max(1) as i64;
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            Post::new(
                Platform::Liveticker,
                format!("p{i:07}"),
                t0 + Duration::seconds(i as i64 * step),
                None,
                None,
                t.clone(),
            )
        })
        .collect()
}
