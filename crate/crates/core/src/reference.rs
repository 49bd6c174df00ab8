//! Synthetic reference workload: token inventory, lexicon and bigram LM
//! matching the reference model's output size.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ctc::{Lexicon, NGramLm, TokenTable, SENTENCE_START, UNK};
use crate::error::Result;
use crate::model::{reference_descriptor, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceSizes {
    pub n_tokens: usize,
    pub n_words: usize,
    /// Bigrams per LM history word.
    pub bigrams_per_word: usize,
}

impl Default for ReferenceSizes {
    fn default() -> Self {
        Self { n_tokens: 9000, n_words: 1000, bigrams_per_word: 4 }
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceAssets {
    pub tokens: TokenTable,
    pub lexicon: Lexicon,
    pub lm: NGramLm,
}

/// Token 0 is the blank `<b>`; the others are `t1..`. Words `w0..` are
/// spelled with one to three random non-blank tokens.
pub fn reference_assets(sizes: ReferenceSizes, seed: u64) -> Result<ReferenceAssets> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let symbols = std::iter::once("<b>".to_string())
        .chain((1..sizes.n_tokens).map(|i| format!("t{i}")))
        .collect();
    let tokens = TokenTable::new(symbols)?;
    let mut lexicon = Lexicon::new();
    let words: Vec<String> = (0..sizes.n_words).map(|i| format!("w{i}")).collect();
    for w in &words {
        let len = rng.gen_range(1..=3);
        let spelling = (0..len).map(|_| rng.gen_range(1..sizes.n_tokens as u32)).collect();
        lexicon.add(w, spelling)?;
    }
    let mut ngrams: Vec<(Vec<String>, f64, f64)> = vec![
        (vec![SENTENCE_START.to_string()], -99.0, rng.gen_range(-1.0..-0.1)),
        (vec![UNK.to_string()], -6.0, 0.0),
    ];
    for w in &words {
        ngrams.push((vec![w.clone()], rng.gen_range(-4.5..-2.0), rng.gen_range(-1.0..-0.1)));
    }
    let histories: Vec<&String> =
        std::iter::once(&ngrams[0].0[0]).chain(words.iter()).collect::<Vec<_>>();
    let mut bigrams = Vec::new();
    for h in histories {
        for w in words.choose_multiple(&mut rng, sizes.bigrams_per_word.min(words.len())) {
            bigrams.push((vec![h.clone(), w.clone()], rng.gen_range(-2.0..-0.3), 0.0));
        }
    }
    ngrams.extend(bigrams);
    let lm = NGramLm::from_ngrams(2, &ngrams)?;
    Ok(ReferenceAssets { tokens, lexicon, lm })
}

/// The reference TDS model with pseudo-random weights.
pub fn reference_model(seed: u64) -> Result<Model> {
    Model::generate(reference_descriptor(), seed)
}
