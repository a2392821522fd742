use std::collections::HashMap;

use crate::codec::ToolCall;

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_default() += 1;
        }
    }
    counts
}

/// Sentence BLEU-4 with uniform weights and a brevity penalty.
///
/// Tokens are the whitespace-split lowercased text. For n > 1 a modified
/// precision with no matches is smoothed to `1 / (total + 1)`; unigram
/// precision is never smoothed, so disjoint texts score 0.
pub fn bleu4(candidate: &str, reference: &str) -> f64 {
    let tokenize =
        |text: &str| -> Vec<String> { text.split_whitespace().map(str::to_lowercase).collect() };
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }

    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c = ngrams(&cand, n);
        let r = ngrams(&refr, n);
        let total: usize = c.values().sum();
        let matched: usize = c
            .iter()
            .map(|(g, k)| (*k).min(*r.get(g).unwrap_or(&0)))
            .sum();
        let precision = if matched > 0 {
            matched as f64 / total as f64
        } else if n == 1 {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += precision.ln() / 4.0;
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let brevity = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    (brevity * log_sum.exp()).clamp(0.0, 1.0)
}

/// Position-wise tool-name agreement over the longer sequence.
///
/// Arguments are ignored. Missing or extra calls count as mismatches; two
/// empty sequences agree fully.
pub fn tool_accuracy(predicted: &[ToolCall], gold: &[ToolCall]) -> f64 {
    let longest = predicted.len().max(gold.len());
    if longest == 0 {
        return 1.0;
    }
    let matched = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| p.tool_name == g.tool_name)
        .count();
    matched as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use serde_json::Map;

    use super::*;

    fn calls(names: &[&str]) -> Vec<ToolCall> {
        names
            .iter()
            .map(|n| ToolCall::new("s", *n, Map::new()))
            .collect()
    }

    #[test]
    fn bleu_fixed_points() {
        assert_eq!(bleu4("a b c d e", "a b c d e"), 1.0);
        assert_eq!(bleu4("x y z", "a b c"), 0.0);
        assert_eq!(bleu4("", "a"), 0.0);
    }

    #[test]
    fn bleu_hand_oracle() {
        // p1..p3 are exact; p4 has no candidate 4-grams and smooths to 1.
        // BP = exp(1 - 4/3).
        let value = bleu4("the cat sat", "the cat sat down");
        assert!((value - 0.7165313105737893).abs() < 1e-9, "{value}");
    }

    #[test]
    fn bleu_is_case_insensitive() {
        assert_eq!(bleu4("The Cat", "the cat"), 1.0);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(
            tool_accuracy(&calls(&["detect", "crop"]), &calls(&["detect", "crop"])),
            1.0
        );
        assert_eq!(
            tool_accuracy(&calls(&["detect", "crop"]), &calls(&["detect", "binary"])),
            0.5
        );
        assert_eq!(
            tool_accuracy(&calls(&["detect"]), &calls(&["detect", "crop"])),
            0.5
        );
        assert_eq!(tool_accuracy(&[], &[]), 1.0);
        assert_eq!(tool_accuracy(&calls(&["a"]), &[]), 0.0);
    }
}
