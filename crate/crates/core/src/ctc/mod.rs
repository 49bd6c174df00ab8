//! CTC beam-search decoding over a lexicon trie and an n-gram LM.

mod expand;
mod lexicon;
mod lm;

pub use expand::{extend_with_token, extend_with_word, with_blank, CtcDecoder, DecodeParams};
pub use lexicon::{
    Lexicon, LexiconTrie, TokenTable, TrieNode, CHILD_LINK_BYTES, NODE_HEADER_BYTES, ROOT,
};
pub use lm::{LmLookup, NGramLm, SENTENCE_START, UNK, UNK_FLOOR};
