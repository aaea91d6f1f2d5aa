//! Caption-level object hallucination rates and binary-QA scores.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Object sets for one caption. Names are trimmed and lowercased on
/// construction and matched exactly; there is no synonym table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionEval {
    pub mentioned_objects: BTreeSet<String>,
    pub ground_truth_objects: BTreeSet<String>,
}

fn normalize<I, S>(items: I) -> BTreeSet<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    items
        .into_iter()
        .map(|s| s.as_ref().trim().to_lowercase())
        .filter(|s| !s.is_empty())
        .collect()
}

impl CaptionEval {
    pub fn new<I, J, S, T>(mentioned: I, ground_truth: J) -> Self
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        Self {
            mentioned_objects: normalize(mentioned),
            ground_truth_objects: normalize(ground_truth),
        }
    }

    pub fn hallucinated(&self) -> impl Iterator<Item = &String> {
        self.mentioned_objects
            .difference(&self.ground_truth_objects)
    }

    pub fn hallucination_count(&self) -> usize {
        self.hallucinated().count()
    }
}

/// Hallucinated object mentions over all object mentions. Zero when nothing
/// is mentioned at all.
pub fn chair_i(evals: &[CaptionEval]) -> f64 {
    let mentioned: usize = evals.iter().map(|e| e.mentioned_objects.len()).sum();
    if mentioned == 0 {
        return 0.0;
    }
    let hallucinated: usize = evals.iter().map(CaptionEval::hallucination_count).sum();
    hallucinated as f64 / mentioned as f64
}

/// Fraction of captions with at least one hallucinated object.
pub fn chair_s(evals: &[CaptionEval]) -> Result<f64> {
    if evals.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let bad = evals.iter().filter(|e| e.hallucination_count() > 0).count();
    Ok(bad as f64 / evals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryQaRecord {
    pub predicted: Answer,
    pub gold: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopeScores {
    pub accuracy: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub true_negatives: usize,
}

/// Accuracy and F1 with "yes" as the positive class.
pub fn pope_scores(records: &[BinaryQaRecord]) -> Result<PopeScores> {
    pope_scores_with(records, Answer::Yes)
}

/// Accuracy and F1 for an explicit positive class. Precision, recall and F1
/// are reported as 0 whenever their denominator is 0.
pub fn pope_scores_with(records: &[BinaryQaRecord], positive: Answer) -> Result<PopeScores> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for r in records {
        match (r.predicted == positive, r.gold == positive) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if tp + fp == 0 || tp + fn_ == 0 || precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PopeScores {
        accuracy: (tp + tn) as f64 / records.len() as f64,
        f1,
        precision,
        recall,
        true_positives: tp,
        false_positives: fp,
        false_negatives: fn_,
        true_negatives: tn,
    })
}
