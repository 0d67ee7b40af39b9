//! Caption metrics (BLEU, ROUGE-L, CIDEr), generated-caption statistics and
//! likelihood-ranked text-to-audio retrieval.

mod caption;
mod report;
mod retrieval;

pub use caption::{
    bleu, caption_stats, cider, rouge_l, rouge_l_corpus, CaptionStats, CorpusDf, NGramCounts, CIDER_MAX_N, ROUGE_BETA,
};
pub use report::{evaluate_captions, read_captions, write_captions, MetricReport, SCALE_NOTE};
pub use retrieval::{
    rank_of, ranking, retrieval_eval, retrieval_metrics, score_matrix, Candidate, Query, RetrievalMetrics,
    RetrievalOutcome,
};
