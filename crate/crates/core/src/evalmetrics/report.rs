use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::caption::{bleu, caption_stats, cider, rouge_l_corpus, CaptionStats, CorpusDf};
use super::retrieval::RetrievalMetrics;
use crate::error::{Error, Result};

pub const SCALE_NOTE: &str = "BLEU_n, ROUGE_L and CIDEr are raw scores x 100 (CIDEr raw range 0-10, original CIDEr without the CIDEr-D length penalty); \
     unk_rate and repetition_rate are fractions of generated tokens; recall is percent";

/// Caption-quality scores in the ×100 convention, plus caption statistics
/// and optional retrieval results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scale: String,
    pub captions: usize,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub stats: CaptionStats,
    pub retrieval: Option<RetrievalMetrics>,
}

/// Scores generated captions against one reference each.
pub fn evaluate_captions(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<MetricReport> {
    let df = CorpusDf::build(references)?;
    let mut b = [0.0; 4];
    for (n, slot) in (1..=4).zip(b.iter_mut()) {
        *slot = 100.0 * bleu(candidates, references, n)?;
    }
    Ok(MetricReport {
        scale: SCALE_NOTE.into(),
        captions: candidates.len(),
        bleu: b,
        rouge_l: 100.0 * rouge_l_corpus(candidates, references)?,
        cider: 100.0 * cider(candidates, references, &df)?,
        stats: caption_stats(candidates),
        retrieval: None,
    })
}

impl MetricReport {
    /// One `name<TAB>value` line per metric after a `#` header. Metrics that
    /// need external resources are listed as `n/a` to keep the usual column set.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# {}\n", self.scale);
        let mut line = |name: &str, value: String| {
            writeln!(out, "{name}\t{value}").expect("write to string");
        };
        line("captions", self.captions.to_string());
        for (n, v) in self.bleu.iter().enumerate() {
            line(&format!("BLEU_{}", n + 1), format!("{v:.4}"));
        }
        line("METEOR", "n/a".into());
        line("ROUGE_L", format!("{:.4}", self.rouge_l));
        line("CIDEr", format!("{:.4}", self.cider));
        line("SPICE", "n/a".into());
        line("SPIDEr", "n/a".into());
        line("unk_rate", format!("{:.6}", self.stats.unk_rate));
        line("repetitions", self.stats.repetitions.to_string());
        line("repetition_rate", format!("{:.6}", self.stats.repetition_rate));
        if let Some(r) = &self.retrieval {
            line("R@1", format!("{:.2}", r.recall_at_1));
            line("R@5", format!("{:.2}", r.recall_at_5));
            line("R@10", format!("{:.2}", r.recall_at_10));
            line("median_rank", format!("{}", r.median_rank));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Reads `id<TAB>caption` lines. Blank lines are skipped.
pub fn read_captions(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.split_once('\t')
                .map(|(id, cap)| (id.to_string(), cap.to_string()))
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "expected `id<TAB>caption`".into(),
                })
        })
        .collect()
}

pub fn write_captions(path: &Path, rows: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (id, cap) in rows {
        writeln!(out, "{id}\t{cap}").expect("write to string");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
