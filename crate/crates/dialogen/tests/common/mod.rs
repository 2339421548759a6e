//! Brute-force reference implementations of the corpus metrics, written
//! against the definitions directly: n-grams are materialized as sorted
//! token vectors and counted by linear scans, with no shared code or
//! data structures with the library. Slow on purpose.

/// All n-grams of a token sequence, each as its own token vector.
fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 || tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

fn count_of(needle: &[String], haystack: &[Vec<String>]) -> usize {
    haystack.iter().filter(|g| g.as_slice() == needle).count()
}

/// Clipped matched count for one pair at one order: each distinct
/// hypothesis n-gram contributes min(count in hyp, count in ref).
fn clipped_matches(hyp: &[String], reference: &[String], n: usize) -> (usize, usize) {
    let hyp_grams = ngrams(hyp, n);
    let ref_grams = ngrams(reference, n);
    let mut seen: Vec<&[String]> = Vec::new();
    let mut matched = 0usize;
    for gram in &hyp_grams {
        if seen.iter().any(|s| *s == gram.as_slice()) {
            continue;
        }
        seen.push(gram.as_slice());
        matched += count_of(gram, &hyp_grams).min(count_of(gram, &ref_grams));
    }
    (matched, hyp_grams.len())
}

/// Corpus-level cumulative BLEU-n: pooled clipped precisions for orders
/// 1..=n, uniform geometric mean, brevity penalty from pooled lengths,
/// floor of zero when any order has no matches.
pub fn oracle_bleu(pairs: &[(Vec<String>, Vec<String>)], n: usize) -> f64 {
    let c: usize = pairs.iter().map(|(h, _)| h.len()).sum();
    let r: usize = pairs.iter().map(|(_, g)| g.len()).sum();
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let mut matched = 0usize;
        let mut total = 0usize;
        for (hyp, reference) in pairs {
            let (m, t) = clipped_matches(hyp, reference, order);
            matched += m;
            total += t;
        }
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln() / n as f64;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_sum.exp()
}

/// Macro-averaged ROUGE-n F1 over pairs, with zero P, R, and F1 when the
/// respective denominators vanish.
pub fn oracle_rouge(pairs: &[(Vec<String>, Vec<String>)], n: usize) -> f64 {
    let mut sum = 0.0;
    for (hyp, reference) in pairs {
        let (matched, hyp_total) = clipped_matches(hyp, reference, n);
        let ref_total = ngrams(reference, n).len();
        let p = if hyp_total == 0 { 0.0 } else { matched as f64 / hyp_total as f64 };
        let r = if ref_total == 0 { 0.0 } else { matched as f64 / ref_total as f64 };
        sum += if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    }
    sum / pairs.len() as f64
}

/// Corpus-level DISTINCT-n: distinct n-grams over total n-grams, pooled
/// across all hypotheses.
pub fn oracle_distinct(hypotheses: &[Vec<String>], n: usize) -> f64 {
    let mut all: Vec<Vec<String>> = Vec::new();
    for hyp in hypotheses {
        all.extend(ngrams(hyp, n));
    }
    let total = all.len();
    all.sort();
    all.dedup();
    all.len() as f64 / total as f64
}
