use std::collections::BTreeSet;

use super::{CodecError, ToolCategory, ToolDescriptor};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "i", "if", "in", "into", "is",
    "it", "its", "me", "my", "now", "of", "on", "or", "so", "that", "the", "then", "this", "to",
    "we", "will", "with",
];

const VISION_KEYWORDS: &[&str] = &[
    "image",
    "crop",
    "cropped",
    "detect",
    "detection",
    "detector",
    "binarization",
    "binarize",
    "binary",
    "region",
    "regions",
    "pixel",
    "pixels",
    "box",
    "boxes",
    "zoom",
    "enhance",
    "resolution",
    "visual",
    "cloud",
    "rain",
    "denoise",
    "deblur",
    "blur",
    "sharpen",
    "grayscale",
    "locate",
    "recognize",
    "readability",
];

const TEXT_KEYWORDS: &[&str] = &[
    "search",
    "web",
    "query",
    "retrieve",
    "retrieval",
    "rag",
    "knowledge",
    "background",
    "lookup",
    "database",
    "document",
    "documents",
    "keyword",
    "keywords",
    "history",
    "news",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToolMatch {
    pub tool: ToolDescriptor,
    /// Word-set Jaccard similarity in `[0, 1]`.
    pub score: f64,
}

/// Case-folded word set with stopwords removed. Identifiers split on `_`.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|word| !word.is_empty())
        .map(str::to_lowercase)
        .filter(|word| !STOPWORDS.contains(&word.as_str()))
        .collect()
}

/// Ranks the tools of the category the decision text votes for.
///
/// The category vote counts decision words found in each category's keyword
/// set: a fixed seed list plus words that occur only in that category's tool
/// names and descriptions. Ties go to vision. Within the chosen category the
/// score is the word-set Jaccard similarity against name and description;
/// equal scores order by tool name.
pub fn match_tools(decision: &str, tools: &[ToolDescriptor]) -> Result<Vec<ToolMatch>, CodecError> {
    if tools.is_empty() {
        return Err(CodecError::EmptyToolset);
    }
    let words = tokenize(decision);
    let category = vote_category(&words, tools);

    let mut ranked: Vec<ToolMatch> = tools
        .iter()
        .filter(|tool| tool.category == category)
        .map(|tool| ToolMatch {
            score: jaccard(&words, &tool_words(tool)),
            tool: tool.clone(),
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.tool.tool_name.cmp(&b.tool.tool_name))
            .then_with(|| a.tool.server_name.cmp(&b.tool.server_name))
    });
    Ok(ranked)
}

fn tool_words(tool: &ToolDescriptor) -> BTreeSet<String> {
    let mut words = tokenize(&tool.tool_name);
    words.extend(tokenize(&tool.description));
    words
}

fn vote_category(words: &BTreeSet<String>, tools: &[ToolDescriptor]) -> ToolCategory {
    let has = |category| tools.iter().any(|t| t.category == category);
    match (has(ToolCategory::Vision), has(ToolCategory::Text)) {
        (true, false) => return ToolCategory::Vision,
        (false, true) => return ToolCategory::Text,
        _ => {}
    }

    let vocabulary = |category| -> BTreeSet<String> {
        tools
            .iter()
            .filter(|t| t.category == category)
            .flat_map(tool_words)
            .collect()
    };
    let vision_vocab = vocabulary(ToolCategory::Vision);
    let text_vocab = vocabulary(ToolCategory::Text);

    let keywords = |seeds: &[&str], own: &BTreeSet<String>, other: &BTreeSet<String>| {
        let mut set: BTreeSet<String> = seeds.iter().map(|s| s.to_string()).collect();
        set.extend(own.difference(other).cloned());
        set
    };
    let vision_keys = keywords(VISION_KEYWORDS, &vision_vocab, &text_vocab);
    let text_keys = keywords(TEXT_KEYWORDS, &text_vocab, &vision_vocab);

    let vision_votes = words.iter().filter(|w| vision_keys.contains(*w)).count();
    let text_votes = words.iter().filter(|w| text_keys.contains(*w)).count();
    if text_votes > vision_votes {
        ToolCategory::Text
    } else {
        ToolCategory::Vision
    }
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(b).count() as f64 / union as f64
}
