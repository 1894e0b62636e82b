//! Self-check hallucination scoring of candidate MRs.
//!
//! A validator answers three fixed yes/no questions per candidate. Each "yes"
//! scores 0 and each "no" scores 1; the candidate's score is the mean, so it
//! always lies on the lattice {0, 1/3, 2/3, 1}.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Number of validation questions per candidate.
pub const QUESTION_COUNT: usize = 3;

/// Default acceptance threshold: at most one "no".
pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Answer {
    Yes,
    No,
}

impl Answer {
    pub fn parse(word: &str) -> Option<Answer> {
        let w = word.trim().trim_matches(|c: char| !c.is_ascii_alphabetic());
        if w.eq_ignore_ascii_case("yes") {
            Some(Answer::Yes)
        } else if w.eq_ignore_ascii_case("no") {
            Some(Answer::No)
        } else {
            None
        }
    }

    fn score(self) -> f64 {
        match self {
            Answer::Yes => 0.0,
            Answer::No => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JudgementError {
    #[error("expected {expected} yes/no answers, got {found}")]
    Arity { expected: usize, found: usize },
    #[error("unparseable judgement: {0:?}")]
    Malformed(String),
}

/// Mean of the per-answer scores of exactly three answers.
pub fn answers_to_score(answers: &[Answer]) -> Result<f64, JudgementError> {
    if answers.len() != QUESTION_COUNT {
        return Err(JudgementError::Arity { expected: QUESTION_COUNT, found: answers.len() });
    }
    let total: f64 = answers.iter().map(|a| a.score()).sum();
    Ok(total / QUESTION_COUNT as f64)
}

/// Reads a list of yes/no answers from a model reply.
///
/// Prefers the first JSON array in the reply (`["yes", "no", "yes"]`);
/// without one, every standalone yes/no word counts. Any non-yes/no array
/// element makes the reply malformed.
pub fn parse_answers(reply: &str) -> Result<Vec<Answer>, JudgementError> {
    if let (Some(open), Some(close)) = (reply.find('['), reply.rfind(']')) {
        if open < close {
            let items: Vec<String> = serde_json::from_str(&reply[open..=close])
                .map_err(|_| JudgementError::Malformed(reply.to_string()))?;
            return items
                .iter()
                .map(|s| Answer::parse(s).ok_or_else(|| JudgementError::Malformed(reply.to_string())))
                .collect();
        }
    }
    let answers: Vec<Answer> = reply
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter_map(Answer::parse)
        .collect();
    if answers.is_empty() {
        return Err(JudgementError::Malformed(reply.to_string()));
    }
    Ok(answers)
}

/// Parses exactly three answers and scores them.
pub fn score_reply(reply: &str) -> Result<(Vec<Answer>, f64), JudgementError> {
    let answers = parse_answers(reply)?;
    let score = answers_to_score(&answers)?;
    Ok((answers, score))
}

/// Reads a single binary verdict: the reply's first word must be yes or no.
pub fn parse_binary(reply: &str) -> Result<Answer, JudgementError> {
    let answers = parse_answers(reply)?;
    match answers.as_slice() {
        [one] => Ok(*one),
        _ => {
            // Judges often explain themselves after the verdict.
            let first = reply.split(|c: char| c.is_whitespace() || c == ',').find(|w| !w.is_empty());
            first.and_then(Answer::parse).ok_or_else(|| JudgementError::Malformed(reply.to_string()))
        }
    }
}

/// Index of the best candidate, or `None` when nothing is acceptable.
///
/// `scores[i]` is `None` for a candidate that failed to parse. The lowest
/// score wins; ties go to the earliest candidate. A minimum above `threshold`
/// selects nothing.
pub fn select_winner(scores: &[Option<f64>], threshold: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, score) in scores.iter().enumerate() {
        if let Some(s) = *score {
            match best {
                Some((_, b)) if s >= b => {}
                _ => best = Some((i, s)),
            }
        }
    }
    best.filter(|&(_, s)| s <= threshold).map(|(i, _)| i)
}
