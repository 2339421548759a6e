//! Corpus evaluation: BLEU-n, ROUGE-n, and DISTINCT-n over generated
//! responses, with tokenization that handles mixed Chinese and Latin text.
//!
//! BLEU is corpus-level cumulative: clipped modified n-gram precisions are
//! pooled over all pairs, combined by a uniform-weight geometric mean, and
//! multiplied by the brevity penalty `min(1, exp(1 - r/c))`. Any pooled
//! precision of zero floors the score at zero; there is no smoothing.
//! ROUGE-n is per-pair F1 macro-averaged over the corpus. DISTINCT-n is
//! the corpus-level ratio of distinct to total hypothesis n-grams.

use serde_json::Value;
use std::collections::{HashMap, HashSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("hypothesis and reference counts differ: {hyps} vs {refs}")]
    LengthMismatch { hyps: usize, refs: usize },
    #[error("metric over an empty corpus is undefined")]
    EmptyCorpus,
    #[error("n-gram order must be at least 1")]
    ZeroOrder,
    #[error("no hypothesis has {n} tokens, distinct-{n} is undefined")]
    NoNgrams { n: usize },
}

/// How raw text becomes tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenScheme {
    /// One token per non-whitespace code point.
    Character,
    /// Split on whitespace runs.
    Whitespace,
    /// CJK code points become single-character tokens; contiguous
    /// non-CJK runs split on whitespace. The right default for Chinese
    /// dialogue sprinkled with Latin medical terms.
    Mixed,
}

/// Tokenized text plus the scheme that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<String>,
    scheme: TokenScheme,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn scheme(&self) -> TokenScheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// CJK-ish code points that should stand alone as tokens: the unified
/// ideograph blocks, extension A, the compatibility block, CJK symbols
/// and punctuation, and fullwidth forms.
fn is_cjk(c: char) -> bool {
    matches!(u32::from(c),
        0x3400..=0x4DBF | 0x4E00..=0x9FFF | 0xF900..=0xFAFF | 0x3000..=0x303F | 0xFF00..=0xFFEF)
}

/// Tokenize `text` under `scheme`. Empty text gives an empty sequence.
pub fn tokenize(text: &str, scheme: TokenScheme) -> TokenSequence {
    let tokens = match scheme {
        TokenScheme::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        TokenScheme::Character => text
            .chars()
            .filter(|c| !c.is_whitespace())
            .map(String::from)
            .collect(),
        TokenScheme::Mixed => {
            let mut tokens = Vec::new();
            let mut run = String::new();
            for c in text.chars() {
                // Whitespace first: U+3000 is inside the CJK symbol block
                // but must separate, not become a token.
                if c.is_whitespace() {
                    if !run.is_empty() {
                        tokens.push(std::mem::take(&mut run));
                    }
                } else if is_cjk(c) {
                    if !run.is_empty() {
                        tokens.push(std::mem::take(&mut run));
                    }
                    tokens.push(String::from(c));
                } else {
                    run.push(c);
                }
            }
            if !run.is_empty() {
                tokens.push(run);
            }
            tokens
        }
    };
    TokenSequence { tokens, scheme }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn check_pairs(hyps: &[TokenSequence], refs: &[TokenSequence]) -> Result<(), MetricsError> {
    if hyps.len() != refs.len() {
        return Err(MetricsError::LengthMismatch { hyps: hyps.len(), refs: refs.len() });
    }
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(())
}

/// Corpus-level cumulative BLEU-n.
pub fn bleu_n(
    hyps: &[TokenSequence],
    refs: &[TokenSequence],
    n: usize,
) -> Result<f64, MetricsError> {
    check_pairs(hyps, refs)?;
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let c: usize = hyps.iter().map(TokenSequence::len).sum();
    let r: usize = refs.iter().map(TokenSequence::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for m in 1..=n {
        let mut clipped = 0usize;
        let mut total = 0usize;
        for (hyp, re) in hyps.iter().zip(refs) {
            let hyp_grams = ngram_counts(hyp.tokens(), m);
            let ref_grams = ngram_counts(re.tokens(), m);
            for (gram, &count) in &hyp_grams {
                total += count;
                clipped += count.min(ref_grams.get(gram).copied().unwrap_or(0));
            }
        }
        if clipped == 0 || total == 0 {
            return Ok(0.0);
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let brevity = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(brevity * (log_sum / n as f64).exp())
}

/// Macro-averaged per-pair ROUGE-n F1. Overlap counts are clipped by
/// reference multiplicity; a pair with no n-grams on either side scores 0.
pub fn rouge_n(
    hyps: &[TokenSequence],
    refs: &[TokenSequence],
    n: usize,
) -> Result<f64, MetricsError> {
    check_pairs(hyps, refs)?;
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let mut sum = 0.0;
    for (hyp, re) in hyps.iter().zip(refs) {
        let hyp_grams = ngram_counts(hyp.tokens(), n);
        let ref_grams = ngram_counts(re.tokens(), n);
        let hyp_total: usize = hyp_grams.values().sum();
        let ref_total: usize = ref_grams.values().sum();
        let overlap: usize = hyp_grams
            .iter()
            .map(|(gram, &count)| count.min(ref_grams.get(gram).copied().unwrap_or(0)))
            .sum();
        let precision = if hyp_total == 0 { 0.0 } else { overlap as f64 / hyp_total as f64 };
        let recall = if ref_total == 0 { 0.0 } else { overlap as f64 / ref_total as f64 };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    Ok(sum / hyps.len() as f64)
}

/// Corpus-level DISTINCT-n: distinct hypothesis n-grams over total
/// hypothesis n-grams. Undefined (an error) when no hypothesis is long
/// enough to contain an n-gram.
pub fn distinct_n(hyps: &[TokenSequence], n: usize) -> Result<f64, MetricsError> {
    if hyps.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    if n == 0 {
        return Err(MetricsError::ZeroOrder);
    }
    let mut seen: HashSet<&[String]> = HashSet::new();
    let mut total = 0usize;
    for hyp in hyps {
        if hyp.len() >= n {
            for gram in hyp.tokens().windows(n) {
                seen.insert(gram);
                total += 1;
            }
        }
    }
    if total == 0 {
        return Err(MetricsError::NoNgrams { n });
    }
    Ok(seen.len() as f64 / total as f64)
}

/// The seven standard corpus scores plus the corpus size.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub b1: f64,
    pub b2: f64,
    pub b4: f64,
    pub r1: f64,
    pub r2: f64,
    pub d1: f64,
    pub d2: f64,
    pub corpus_size: usize,
}

impl MetricReport {
    /// JSON object with the report's display keys and raw fractions.
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "B@1": self.b1,
            "B@2": self.b2,
            "B@4": self.b4,
            "R@1": self.r1,
            "R@2": self.r2,
            "D@1": self.d1,
            "D@2": self.d2,
            "n": self.corpus_size,
        })
    }

    /// Aligned plain-text table, scores as percentages with two decimals.
    pub fn to_table(&self) -> String {
        let rows = [
            ("B@1", self.b1),
            ("B@2", self.b2),
            ("B@4", self.b4),
            ("R@1", self.r1),
            ("R@2", self.r2),
            ("D@1", self.d1),
            ("D@2", self.d2),
        ];
        let mut out = String::from("Metric  Value(%)\n");
        for (name, value) in rows {
            out.push_str(&format!("{name:<7} {:>8.2}\n", value * 100.0));
        }
        out.push_str(&format!("n       {:>8}\n", self.corpus_size));
        out
    }
}

/// Tokenize hypothesis/reference text pairs and fill a full report.
/// Fails when the corpus is empty or too short for some DISTINCT order.
pub fn evaluate_corpus(
    pairs: &[(String, String)],
    scheme: TokenScheme,
) -> Result<MetricReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let hyps: Vec<TokenSequence> = pairs.iter().map(|(h, _)| tokenize(h, scheme)).collect();
    let refs: Vec<TokenSequence> = pairs.iter().map(|(_, r)| tokenize(r, scheme)).collect();
    Ok(MetricReport {
        b1: bleu_n(&hyps, &refs, 1)?,
        b2: bleu_n(&hyps, &refs, 2)?,
        b4: bleu_n(&hyps, &refs, 4)?,
        r1: rouge_n(&hyps, &refs, 1)?,
        r2: rouge_n(&hyps, &refs, 2)?,
        d1: distinct_n(&hyps, 1)?,
        d2: distinct_n(&hyps, 2)?,
        corpus_size: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(tokens: &[&str]) -> TokenSequence {
        TokenSequence {
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            scheme: TokenScheme::Whitespace,
        }
    }

    #[test]
    fn tokenize_whitespace_splits_on_runs() {
        assert_eq!(tokenize("ab  cd\n e", TokenScheme::Whitespace).tokens(), ["ab", "cd", "e"]);
        assert!(tokenize("", TokenScheme::Whitespace).is_empty());
    }

    #[test]
    fn tokenize_character_drops_whitespace() {
        assert_eq!(tokenize("a b", TokenScheme::Character).tokens(), ["a", "b"]);
        assert_eq!(tokenize("腹痛", TokenScheme::Character).tokens(), ["腹", "痛"]);
    }

    #[test]
    fn tokenize_mixed_splits_cjk_and_keeps_words() {
        assert_eq!(tokenize("腹痛 ok", TokenScheme::Mixed).tokens(), ["腹", "痛", "ok"]);
        assert_eq!(
            tokenize("吃aspirin片", TokenScheme::Mixed).tokens(),
            ["吃", "aspirin", "片"]
        );
    }

    #[test]
    fn tokenize_mixed_treats_ideographic_space_as_separator() {
        assert_eq!(tokenize("ab\u{3000}cd", TokenScheme::Mixed).tokens(), ["ab", "cd"]);
    }

    #[test]
    fn tokenize_mixed_separates_fullwidth_punctuation() {
        assert_eq!(tokenize("疼，很疼", TokenScheme::Mixed).tokens(), ["疼", "，", "很", "疼"]);
    }

    #[test]
    fn bleu_identity_is_exactly_one() {
        let h = vec![seq(&["a", "b", "c", "d"]), seq(&["x", "y", "z", "w"])];
        for n in [1, 2, 4] {
            assert_eq!(bleu_n(&h, &h, n).unwrap(), 1.0);
        }
    }

    #[test]
    fn bleu_hand_value_brevity_penalty_only() {
        // hyp [a,b,c,d] vs ref [a,b,c,d,e]: all precisions 1, BP = exp(1 - 5/4).
        let h = vec![seq(&["a", "b", "c", "d"])];
        let r = vec![seq(&["a", "b", "c", "d", "e"])];
        let want = (-0.25f64).exp();
        assert!((bleu_n(&h, &r, 1).unwrap() - want).abs() < 1e-12);
        assert!((bleu_n(&h, &r, 2).unwrap() - want).abs() < 1e-12);
        assert!((bleu_n(&h, &r, 4).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bleu_disjoint_is_zero() {
        let h = vec![seq(&["a", "b"])];
        let r = vec![seq(&["c", "d"])];
        assert_eq!(bleu_n(&h, &r, 1).unwrap(), 0.0);
    }

    #[test]
    fn bleu_pools_over_the_corpus() {
        // Pooled p1 = (1 + 1) / (2 + 2) = 0.5; per-pair averaging would
        // give (0.5 + 0.5) / 2 = 0.5 too, so distinguish via asymmetric
        // lengths: pair one contributes 2/2, pair two 0/2.
        // c = 4, r = 4, BP = 1, pooled p1 = 2/4.
        let h = vec![seq(&["a", "b"]), seq(&["x", "y"])];
        let r = vec![seq(&["a", "b"]), seq(&["c", "d"])];
        assert!((bleu_n(&h, &r, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bleu_clips_by_reference_multiplicity() {
        // hyp repeats "a" three times, ref has it once: clipped p1 = 1/3.
        let h = vec![seq(&["a", "a", "a"])];
        let r = vec![seq(&["a", "b", "c"])];
        assert!((bleu_n(&h, &r, 1).unwrap() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_rejects_mismatch_and_empty() {
        let h = vec![seq(&["a"])];
        assert!(matches!(
            bleu_n(&h, &[], 1),
            Err(MetricsError::LengthMismatch { hyps: 1, refs: 0 })
        ));
        assert!(matches!(bleu_n(&[], &[], 1), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn rouge_hand_value() {
        let h = vec![seq(&["a", "b", "c"])];
        let r = vec![seq(&["a", "b", "d"])];
        assert!((rouge_n(&h, &r, 1).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        let h = vec![seq(&["a", "b", "c"])];
        assert_eq!(rouge_n(&h, &h, 1).unwrap(), 1.0);
        assert_eq!(rouge_n(&h, &h, 2).unwrap(), 1.0);
        let r = vec![seq(&["x", "y", "z"])];
        assert_eq!(rouge_n(&h, &r, 1).unwrap(), 0.0);
    }

    #[test]
    fn rouge_pair_without_ngrams_scores_zero() {
        // Second pair has single-token texts, so no bigrams on either
        // side: its F1 is 0 and the macro average halves.
        let h = vec![seq(&["a", "b"]), seq(&["x"])];
        let r = vec![seq(&["a", "b"]), seq(&["x"])];
        assert!((rouge_n(&h, &r, 2).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn distinct_hand_values() {
        let h = vec![seq(&["a", "b", "a", "b"])];
        assert!((distinct_n(&h, 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let two = vec![seq(&["a", "b"]), seq(&["a", "b"])];
        assert!((distinct_n(&two, 1).unwrap() - 0.5).abs() < 1e-12);
        let unique = vec![seq(&["a", "b", "c"])];
        assert_eq!(distinct_n(&unique, 1).unwrap(), 1.0);
    }

    #[test]
    fn distinct_errors_when_undefined() {
        let h = vec![seq(&["a"])];
        assert!(matches!(distinct_n(&h, 2), Err(MetricsError::NoNgrams { n: 2 })));
        assert!(matches!(distinct_n(&[], 1), Err(MetricsError::EmptyCorpus)));
    }

    #[test]
    fn evaluate_corpus_identity_is_one_on_b_and_r() {
        let pairs: Vec<(String, String)> = vec![
            ("你 好 吗 朋 友".into(), "你 好 吗 朋 友".into()),
            ("a b c d e".into(), "a b c d e".into()),
        ];
        let report = evaluate_corpus(&pairs, TokenScheme::Whitespace).unwrap();
        assert_eq!(report.b1, 1.0);
        assert_eq!(report.b2, 1.0);
        assert_eq!(report.b4, 1.0);
        assert_eq!(report.r1, 1.0);
        assert_eq!(report.r2, 1.0);
        assert_eq!(report.corpus_size, 2);
    }

    #[test]
    fn evaluate_corpus_matches_direct_calls() {
        let pairs: Vec<(String, String)> = vec![
            ("头疼 两天了".into(), "头疼 持续两天".into()),
            ("多喝水".into(), "建议多喝水".into()),
        ];
        let report = evaluate_corpus(&pairs, TokenScheme::Mixed).unwrap();
        let hyps: Vec<_> = pairs.iter().map(|(h, _)| tokenize(h, TokenScheme::Mixed)).collect();
        let refs: Vec<_> = pairs.iter().map(|(_, r)| tokenize(r, TokenScheme::Mixed)).collect();
        assert_eq!(report.b1, bleu_n(&hyps, &refs, 1).unwrap());
        assert_eq!(report.r2, rouge_n(&hyps, &refs, 2).unwrap());
        assert_eq!(report.d2, distinct_n(&hyps, 2).unwrap());
    }

    #[test]
    fn evaluate_corpus_propagates_distinct_errors() {
        let pairs: Vec<(String, String)> = vec![("a".into(), "a b".into())];
        assert!(matches!(
            evaluate_corpus(&pairs, TokenScheme::Whitespace),
            Err(MetricsError::NoNgrams { n: 2 })
        ));
    }

    #[test]
    fn report_json_keys_and_table_shape() {
        let report = MetricReport {
            b1: 0.4478,
            b2: 0.3,
            b4: 0.2,
            r1: 0.4147,
            r2: 0.25,
            d1: 0.6,
            d2: 0.8993,
            corpus_size: 3,
        };
        let json = report.to_json();
        assert_eq!(json["B@1"], 0.4478);
        assert_eq!(json["D@2"], 0.8993);
        assert_eq!(json["n"], 3);
        let table = report.to_table();
        assert!(table.contains("B@1        44.78"), "table was:\n{table}");
        assert!(table.contains("D@2        89.93"), "table was:\n{table}");
        assert!(table.lines().count() == 9);
    }

    // Naive reimplementations used as in-module oracles. They count
    // n-grams with sorted-vector multisets instead of hash maps.

    fn grams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
        if tokens.len() < n {
            return Vec::new();
        }
        tokens.windows(n).map(|w| w.to_vec()).collect()
    }

    fn multiset_overlap(a: &[Vec<String>], b: &[Vec<String>]) -> usize {
        let mut b_left = b.to_vec();
        let mut overlap = 0;
        for gram in a {
            if let Some(pos) = b_left.iter().position(|g| g == gram) {
                b_left.swap_remove(pos);
                overlap += 1;
            }
        }
        overlap
    }

    fn naive_bleu(hyps: &[TokenSequence], refs: &[TokenSequence], n: usize) -> f64 {
        let c: usize = hyps.iter().map(TokenSequence::len).sum();
        let r: usize = refs.iter().map(TokenSequence::len).sum();
        if c == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for m in 1..=n {
            let mut clipped = 0;
            let mut total = 0;
            for (h, re) in hyps.iter().zip(refs) {
                let hg = grams(h.tokens(), m);
                let rg = grams(re.tokens(), m);
                total += hg.len();
                clipped += multiset_overlap(&hg, &rg);
            }
            if clipped == 0 || total == 0 {
                return 0.0;
            }
            log_sum += (clipped as f64 / total as f64).ln();
        }
        let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        bp * (log_sum / n as f64).exp()
    }

    fn naive_rouge(hyps: &[TokenSequence], refs: &[TokenSequence], n: usize) -> f64 {
        let mut sum = 0.0;
        for (h, re) in hyps.iter().zip(refs) {
            let hg = grams(h.tokens(), n);
            let rg = grams(re.tokens(), n);
            let overlap = multiset_overlap(&hg, &rg) as f64;
            let p = if hg.is_empty() { 0.0 } else { overlap / hg.len() as f64 };
            let r = if rg.is_empty() { 0.0 } else { overlap / rg.len() as f64 };
            if p + r > 0.0 {
                sum += 2.0 * p * r / (p + r);
            }
        }
        sum / hyps.len() as f64
    }

    fn naive_distinct(hyps: &[TokenSequence], n: usize) -> Option<f64> {
        let mut all: Vec<Vec<String>> = Vec::new();
        for h in hyps {
            all.extend(grams(h.tokens(), n));
        }
        if all.is_empty() {
            return None;
        }
        let total = all.len();
        all.sort();
        all.dedup();
        Some(all.len() as f64 / total as f64)
    }

    fn arb_corpus() -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
        let token = prop_oneof![
            Just("a".to_string()),
            Just("b".to_string()),
            Just("c".to_string()),
            Just("d".to_string()),
        ];
        let text = proptest::collection::vec(token, 0..12);
        proptest::collection::vec((text.clone(), text), 1..15)
    }

    fn to_seqs(corpus: &[(Vec<String>, Vec<String>)]) -> (Vec<TokenSequence>, Vec<TokenSequence>) {
        let h = corpus
            .iter()
            .map(|(h, _)| TokenSequence { tokens: h.clone(), scheme: TokenScheme::Whitespace })
            .collect();
        let r = corpus
            .iter()
            .map(|(_, r)| TokenSequence { tokens: r.clone(), scheme: TokenScheme::Whitespace })
            .collect();
        (h, r)
    }

    proptest! {
        #[test]
        fn metrics_match_naive_oracle(corpus in arb_corpus()) {
            let (h, r) = to_seqs(&corpus);
            for n in [1usize, 2, 4] {
                let got = bleu_n(&h, &r, n).unwrap();
                prop_assert!((got - naive_bleu(&h, &r, n)).abs() < 1e-9);
            }
            for n in [1usize, 2] {
                let got = rouge_n(&h, &r, n).unwrap();
                prop_assert!((got - naive_rouge(&h, &r, n)).abs() < 1e-9);
                match (distinct_n(&h, n), naive_distinct(&h, n)) {
                    (Ok(got), Some(want)) => prop_assert!((got - want).abs() < 1e-9),
                    (Err(_), None) => {}
                    (got, want) => prop_assert!(false, "disagreed: {got:?} vs {want:?}"),
                }
            }
        }

        #[test]
        fn rouge_is_symmetric(corpus in arb_corpus()) {
            let (h, r) = to_seqs(&corpus);
            for n in [1usize, 2] {
                let hr = rouge_n(&h, &r, n).unwrap();
                let rh = rouge_n(&r, &h, n).unwrap();
                prop_assert!((hr - rh).abs() < 1e-12);
            }
        }

        #[test]
        fn extending_references_never_raises_b1(corpus in arb_corpus()) {
            let (h, r) = to_seqs(&corpus);
            let before = bleu_n(&h, &r, 1).unwrap();
            // "z" never appears in hypotheses generated by arb_corpus.
            let extended: Vec<TokenSequence> = r
                .iter()
                .map(|s| {
                    let mut tokens = s.tokens().to_vec();
                    tokens.push("z".into());
                    TokenSequence { tokens, scheme: TokenScheme::Whitespace }
                })
                .collect();
            let after = bleu_n(&h, &extended, 1).unwrap();
            prop_assert!(after <= before + 1e-12);
        }

        #[test]
        fn distinct_is_permutation_invariant(corpus in arb_corpus(), rot in 0usize..14) {
            let (h, _) = to_seqs(&corpus);
            let mut rotated = h.clone();
            rotated.rotate_left(rot % h.len().max(1));
            for n in [1usize, 2] {
                match (distinct_n(&h, n), distinct_n(&rotated, n)) {
                    (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-12),
                    (Err(_), Err(_)) => {}
                    other => prop_assert!(false, "disagreed: {other:?}"),
                }
            }
        }

        #[test]
        fn identity_corpus_scores_one(texts in proptest::collection::vec(
            proptest::collection::vec(prop_oneof![Just("a".to_string()), Just("b".into())], 4..10),
            1..10,
        )) {
            let seqs: Vec<TokenSequence> = texts
                .iter()
                .map(|t| TokenSequence { tokens: t.clone(), scheme: TokenScheme::Whitespace })
                .collect();
            for n in [1usize, 2, 4] {
                prop_assert_eq!(bleu_n(&seqs, &seqs, n).unwrap(), 1.0);
            }
            for n in [1usize, 2] {
                prop_assert_eq!(rouge_n(&seqs, &seqs, n).unwrap(), 1.0);
            }
        }
    }
}
