pub mod analogy;
pub mod classify;
pub mod cli;
pub mod corpus;
pub mod error;
pub mod store;
pub mod tagger;
pub mod train;
pub mod vocab;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/corpus.md")]
    struct Corpus;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/store.md")]
    struct Store;
    #[doc = include_str!("../../../book/src/analogy.md")]
    struct Analogy;
    #[doc = include_str!("../../../book/src/classification.md")]
    struct Classification;
    #[doc = include_str!("../../../book/src/tagging.md")]
    struct Tagging;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
