//! chrF, BLEU and the aggregate statistics built on per-pair scores.

mod bleu;
mod chrf;
mod report;

pub use bleu::{bleu_corpus, bleu_stats, tokenize, BleuStats};
pub use chrf::{chrf_corpus, chrf_sentence, chrf_sentence_average, chrf_stats, ChrfParams, ChrfStats, NgramCounts};
pub use report::{
    build_report, mean, stratified_report, per_pair_markdown, target_of_pair, win_percent, AggregateReport, MeanCell,
    PairResult, ScoreTable, Stratum, StratumCell, WinCell, SET_ALL, SET_COMMON, SET_LOW,
};
