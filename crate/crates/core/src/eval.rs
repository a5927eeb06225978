//! Few-shot ICL benchmark harness: prompt construction and metrics.
//!
//! The model under test is out of scope; the harness consumes a prediction
//! file keyed by instance id. Generation tasks score ROUGE-L (character
//! units for Chinese, whitespace tokens otherwise), classification scores
//! normalized exact-match accuracy, IE tasks score span-set P/R/F1.

use crate::types::Lang;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskType {
    #[serde(rename = "CLS")]
    Classification,
    #[serde(rename = "GEN")]
    Generation,
    #[serde(rename = "IE")]
    InformationExtraction,
    #[serde(rename = "MRC")]
    ReadingComprehension,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Demonstration {
    #[serde(rename = "in")]
    pub input: String,
    #[serde(rename = "out")]
    pub output: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalInstance {
    pub id: String,
    pub task: String,
    #[serde(rename = "type")]
    pub task_type: TaskType,
    #[serde(default)]
    pub demos: Vec<Demonstration>,
    pub input: String,
    pub refs: Vec<String>,
    #[serde(default = "default_lang")]
    pub lang: String,
}

fn default_lang() -> String {
    "en".to_string()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub output: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("requested {requested} demonstrations but only {available} available")]
    InsufficientDemonstrations { requested: usize, available: usize },
    #[error("predictions ({0}) and references ({1}) differ in length")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone)]
pub struct PromptTemplate {
    pub input_prefix: String,
    pub output_prefix: String,
    pub block_separator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate {
            input_prefix: "Input: ".into(),
            output_prefix: "Output:".into(),
            block_separator: "\n\n".into(),
        }
    }
}

/// Render k demonstrations then the query, leaving the final output slot
/// open for the model.
pub fn build_icl_prompt(
    instance: &EvalInstance,
    k: usize,
    template: &PromptTemplate,
) -> Result<String, EvalError> {
    if k > instance.demos.len() {
        return Err(EvalError::InsufficientDemonstrations {
            requested: k,
            available: instance.demos.len(),
        });
    }
    let mut blocks: Vec<String> = instance.demos[..k]
        .iter()
        .map(|d| {
            format!(
                "{}{}\n{} {}",
                template.input_prefix, d.input, template.output_prefix, d.output
            )
        })
        .collect();
    blocks.push(format!(
        "{}{}\n{}",
        template.input_prefix, instance.input, template.output_prefix
    ));
    Ok(blocks.join(&template.block_separator))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RougeUnit {
    Token,
    Character,
}

impl RougeUnit {
    pub fn for_lang(lang: Lang) -> RougeUnit {
        match lang {
            Lang::Zh => RougeUnit::Character,
            _ => RougeUnit::Token,
        }
    }
}

fn units(text: &str, unit: RougeUnit) -> Vec<&str> {
    match unit {
        RougeUnit::Token => text.split_whitespace().collect(),
        RougeUnit::Character => {
            text.char_indices()
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect()
        }
    }
}

fn lcs_len(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// LCS-based ROUGE-L with balanced F.
pub fn score_rouge_l(candidate: &str, reference: &str, unit: RougeUnit) -> PrfScore {
    let cand = units(candidate, unit);
    let refr = units(reference, unit);
    let lcs = lcs_len(&cand, &refr) as f64;
    let precision = if cand.is_empty() { 0.0 } else { lcs / cand.len() as f64 };
    let recall = if refr.is_empty() { 0.0 } else { lcs / refr.len() as f64 };
    PrfScore {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

/// Trim, casefold, strip trailing punctuation.
pub fn normalize_answer(s: &str) -> String {
    s.trim()
        .trim_end_matches(|c: char| c.is_ascii_punctuation() || c == '。' || c == '，')
        .trim()
        .to_lowercase()
}

/// Exact-match accuracy over normalized predictions against label sets.
pub fn score_accuracy(
    predictions: &[String],
    references: &[Vec<String>],
) -> Result<f64, EvalError> {
    if predictions.len() != references.len() {
        return Err(EvalError::LengthMismatch(
            predictions.len(),
            references.len(),
        ));
    }
    if predictions.is_empty() {
        return Ok(0.0);
    }
    let hits = predictions
        .iter()
        .zip(references)
        .filter(|(pred, refs)| {
            let p = normalize_answer(pred);
            refs.iter().any(|r| normalize_answer(r) == p)
        })
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// Exact-match P/R/F1 over (type, normalized text) span pairs.
pub fn score_ie_prf(predicted: &[(String, String)], gold: &[(String, String)]) -> PrfScore {
    let norm = |spans: &[(String, String)]| -> HashSet<(String, String)> {
        spans
            .iter()
            .map(|(t, x)| (normalize_answer(t), normalize_answer(x)))
            .collect()
    };
    let pred = norm(predicted);
    let gold = norm(gold);
    if pred.is_empty() && gold.is_empty() {
        return PrfScore {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
    }
    let inter = pred.intersection(&gold).count() as f64;
    let precision = if pred.is_empty() { 0.0 } else { inter / pred.len() as f64 };
    let recall = if gold.is_empty() { 0.0 } else { inter / gold.len() as f64 };
    PrfScore {
        precision,
        recall,
        f1: f1(precision, recall),
    }
}

/// Up to `cap` instances, uniform without replacement, original order kept.
pub fn sample_eval_subset<T: Clone>(instances: &[T], cap: usize, seed: u64) -> Vec<T> {
    assert!(cap > 0, "cap must be positive");
    if instances.len() <= cap {
        return instances.to_vec();
    }
    // Partial Fisher-Yates over indices, then restore original order.
    let mut indices: Vec<usize> = (0..instances.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..cap {
        let j = rng.gen_range(i..indices.len());
        indices.swap(i, j);
    }
    let mut chosen: Vec<usize> = indices[..cap].to_vec();
    chosen.sort_unstable();
    chosen.into_iter().map(|i| instances[i].clone()).collect()
}

/// IE span lists travel as one `type: text` span per line.
pub fn parse_spans(text: &str) -> Vec<(String, String)> {
    text.lines()
        .filter_map(|line| {
            let line = line.trim();
            if line.is_empty() {
                return None;
            }
            match line.split_once(':') {
                Some((t, x)) => Some((t.trim().to_string(), x.trim().to_string())),
                None => Some((String::new(), line.to_string())),
            }
        })
        .collect()
}

pub type ScoreReport = BTreeMap<String, BTreeMap<String, f64>>;

/// Score predictions against benchmark instances, aggregating per task by
/// the task type's metric. Instances without a prediction count as empty
/// output.
pub fn score_benchmark(instances: &[EvalInstance], predictions: &[Prediction]) -> ScoreReport {
    let by_id: BTreeMap<&str, &str> = predictions
        .iter()
        .map(|p| (p.id.as_str(), p.output.as_str()))
        .collect();

    let mut grouped: BTreeMap<&str, Vec<&EvalInstance>> = BTreeMap::new();
    for inst in instances {
        grouped.entry(inst.task.as_str()).or_default().push(inst);
    }

    let mut report = ScoreReport::new();
    for (task, insts) in grouped {
        let task_type = insts[0].task_type;
        let mut metrics = BTreeMap::new();
        match task_type {
            TaskType::Classification => {
                let preds: Vec<String> = insts
                    .iter()
                    .map(|i| by_id.get(i.id.as_str()).unwrap_or(&"").to_string())
                    .collect();
                let refs: Vec<Vec<String>> = insts.iter().map(|i| i.refs.clone()).collect();
                metrics.insert(
                    "accuracy".to_string(),
                    score_accuracy(&preds, &refs).expect("lengths match by construction"),
                );
            }
            TaskType::Generation | TaskType::ReadingComprehension => {
                let mean: f64 = insts
                    .iter()
                    .map(|i| {
                        let out = by_id.get(i.id.as_str()).unwrap_or(&"");
                        let unit = RougeUnit::for_lang(i.lang.parse().unwrap());
                        // Best reference wins, as in multi-reference ROUGE.
                        i.refs
                            .iter()
                            .map(|r| score_rouge_l(out, r, unit).f1)
                            .fold(0.0, f64::max)
                    })
                    .sum::<f64>()
                    / insts.len() as f64;
                metrics.insert("rouge_l".to_string(), mean);
            }
            TaskType::InformationExtraction => {
                let mut p_sum = 0.0;
                let mut r_sum = 0.0;
                let mut f_sum = 0.0;
                for i in &insts {
                    let out = by_id.get(i.id.as_str()).unwrap_or(&"");
                    let gold: Vec<(String, String)> =
                        i.refs.iter().flat_map(|r| parse_spans(r)).collect();
                    let score = score_ie_prf(&parse_spans(out), &gold);
                    p_sum += score.precision;
                    r_sum += score.recall;
                    f_sum += score.f1;
                }
                let n = insts.len() as f64;
                metrics.insert("precision".to_string(), p_sum / n);
                metrics.insert("recall".to_string(), r_sum / n);
                metrics.insert("f1".to_string(), f_sum / n);
            }
        }
        report.insert(task.to_string(), metrics);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(k: usize) -> EvalInstance {
        EvalInstance {
            id: "i1".into(),
            task: "AVE".into(),
            task_type: TaskType::Generation,
            demos: (0..k)
                .map(|i| Demonstration {
                    input: format!("demo in {i}"),
                    output: format!("demo out {i}"),
                })
                .collect(),
            input: "the query".into(),
            refs: vec!["ref".into()],
            lang: "en".into(),
        }
    }

    #[test]
    fn zero_shot_prompt() {
        let p = build_icl_prompt(&instance(0), 0, &PromptTemplate::default()).unwrap();
        assert_eq!(p, "Input: the query\nOutput:");
    }

    #[test]
    fn two_shot_prompt_structure() {
        let p = build_icl_prompt(&instance(3), 2, &PromptTemplate::default()).unwrap();
        let blocks: Vec<&str> = p.split("\n\n").collect();
        assert_eq!(blocks.len(), 3);
        assert_eq!(blocks[0], "Input: demo in 0\nOutput: demo out 0");
        assert_eq!(blocks[1], "Input: demo in 1\nOutput: demo out 1");
        assert_eq!(blocks[2], "Input: the query\nOutput:");
    }

    #[test]
    fn insufficient_demos_error() {
        assert_eq!(
            build_icl_prompt(&instance(1), 2, &PromptTemplate::default()),
            Err(EvalError::InsufficientDemonstrations {
                requested: 2,
                available: 1
            })
        );
    }

    #[test]
    fn rouge_identical_strings() {
        let s = score_rouge_l("a b c", "a b c", RougeUnit::Token);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rouge_worked_example() {
        // cand "a c e" vs ref "a b c d": LCS = 2 ("a c"); P = 2/3, R = 1/2,
        // F = 2 * (2/3) * (1/2) / (2/3 + 1/2) = 4/7.
        let s = score_rouge_l("a c e", "a b c d", RougeUnit::Token);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_disjoint_strings() {
        let s = score_rouge_l("x y", "a b", RougeUnit::Token);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn rouge_character_unit_for_chinese() {
        let s = score_rouge_l("红色鞋", "红色运动鞋", RougeUnit::Character);
        assert!((s.recall - 3.0 / 5.0).abs() < 1e-12);
        assert!((s.precision - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rouge_f_symmetric_under_swap() {
        let a = score_rouge_l("a c e", "a b c d", RougeUnit::Token);
        let b = score_rouge_l("a b c d", "a c e", RougeUnit::Token);
        assert!((a.f1 - b.f1).abs() < 1e-12);
        assert!((a.precision - b.recall).abs() < 1e-12);
    }

    #[test]
    fn accuracy_basic_and_normalized() {
        let acc = score_accuracy(
            &["A".into(), "B".into()],
            &[vec!["A".into()], vec!["B".into()]],
        )
        .unwrap();
        assert_eq!(acc, 1.0);
        let acc = score_accuracy(&["a. ".into()], &[vec!["A".into()]]).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn accuracy_length_mismatch() {
        assert_eq!(
            score_accuracy(&["a".into()], &[]),
            Err(EvalError::LengthMismatch(1, 0))
        );
    }

    #[test]
    fn ie_prf_cases() {
        let span = |t: &str, x: &str| (t.to_string(), x.to_string());
        let gold = vec![span("color", "red"), span("size", "42")];
        let exact = score_ie_prf(&gold, &gold);
        assert_eq!((exact.precision, exact.recall, exact.f1), (1.0, 1.0, 1.0));

        let empty = score_ie_prf(&[], &gold);
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));

        let both_empty = score_ie_prf(&[], &[]);
        assert_eq!(both_empty.f1, 1.0);

        // pred 3 spans, gold 4, overlap 2: P = 2/3, R = 1/2, F1 = 4/7.
        let pred = vec![span("a", "1"), span("b", "2"), span("c", "3")];
        let gold4 = vec![span("a", "1"), span("b", "2"), span("d", "4"), span("e", "5")];
        let s = score_ie_prf(&pred, &gold4);
        assert!((s.precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((s.recall - 0.5).abs() < 1e-12);
        assert!((s.f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn subset_under_cap_returns_all() {
        let items: Vec<usize> = (0..500).collect();
        assert_eq!(sample_eval_subset(&items, 1000, 0), items);
    }

    #[test]
    fn subset_deterministic_distinct_ordered() {
        let items: Vec<usize> = (0..5000).collect();
        let a = sample_eval_subset(&items, 1000, 7);
        let b = sample_eval_subset(&items, 1000, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        let set: HashSet<usize> = a.iter().copied().collect();
        assert_eq!(set.len(), 1000);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subset_uniform_chi_square() {
        // 100 draws of 20 from 100: each index expected 20 times.
        let items: Vec<usize> = (0..100).collect();
        let mut counts = vec![0u64; 100];
        for seed in 0..100u64 {
            for i in sample_eval_subset(&items, 20, seed) {
                counts[i] += 1;
            }
        }
        let expected = 20.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99 dof: mean 99, sd ~ sqrt(2*99) ~ 14.1; 99 + 5 sd ~ 170.
        assert!(chi2 < 170.0, "chi2 {chi2}");
    }

    #[test]
    fn span_parsing() {
        let spans = parse_spans("color: red\nsize: 42\n");
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0], ("color".to_string(), "red".to_string()));
    }
}
