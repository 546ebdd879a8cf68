//! Dialogical explanations.
//!
//! A question "why is a evaluated as s(a)?" is answered by citing the one or two
//! children with the largest influence `ω·s`, or, for a feature, by quoting the
//! raw input value. Following primary citations from the root down gives the
//! dominating reasoning path.

use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};
use crate::qaf::{NodeKind, QafModel};
use crate::reasoner::StrengthAssignment;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerRanking {
    /// Most influential attack first: largest `|ω·s|`.
    #[default]
    Magnitude,
    /// Plain argmax of the signed product, i.e. the weakest attack first.
    SignedArgmax,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub attacker_ranking: AttackerRanking,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Supporting,
    Attacking,
}

impl Role {
    fn word(self) -> &'static str {
        match self {
            Role::Supporting => "supporting",
            Role::Attacking => "attacking",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Position {
    Primary,
    Secondary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub node: String,
    pub label: String,
    pub role: Role,
    pub strength: f64,
    pub weight: f64,
    pub position: Position,
}

/// Which answering rule fired.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerCase {
    RootAttacked,
    RootSupported,
    ConceptSupported,
    FeatureValue,
    /// A concept with attackers only. The dialogue rules do not cover it; the
    /// attackers are cited anyway and the step is flagged.
    ConceptAttacked,
    Empty,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplanationStep {
    pub subject: String,
    pub label: String,
    pub strength: f64,
    pub case: AnswerCase,
    pub cited: Vec<Citation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leaf_value: Option<String>,
    pub outside_definition: bool,
    /// Question and answer, as printed in a transcript.
    pub lines: Vec<String>,
}

impl ExplanationStep {
    pub fn question(&self) -> &str {
        &self.lines[0]
    }

    pub fn answer(&self) -> &str {
        &self.lines[1]
    }

    pub fn primary(&self) -> Option<&Citation> {
        self.cited.first()
    }
}

fn influence(model: &QafModel, strengths: &StrengthAssignment, id: &str) -> Result<(f64, f64)> {
    let w = model
        .parent_edge(id)
        .ok_or_else(|| CamError::Structure(format!("`{id}` has no parent edge")))?
        .weight;
    Ok((w, w * strengths.get(id)?))
}

/// Members of `set` ordered by decreasing ranking key, ties by id.
fn ranked(
    model: &QafModel,
    strengths: &StrengthAssignment,
    set: &[&str],
    ranking: AttackerRanking,
) -> Result<Vec<(String, f64)>> {
    let mut keyed: Vec<(String, f64)> = set
        .iter()
        .map(|id| {
            let (w, p) = influence(model, strengths, id)?;
            let key = if w < 0.0 && ranking == AttackerRanking::Magnitude { p.abs() } else { p };
            Ok((id.to_string(), key))
        })
        .collect::<Result<_>>()?;
    keyed.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(keyed)
}

/// Child in `set` with the largest influence, or `None` for an empty set.
pub fn max_arg(
    model: &QafModel,
    strengths: &StrengthAssignment,
    set: &[&str],
    ranking: AttackerRanking,
) -> Result<Option<String>> {
    Ok(ranked(model, strengths, set, ranking)?.into_iter().next().map(|(id, _)| id))
}

/// Runner-up to [`max_arg`].
pub fn sec_arg(
    model: &QafModel,
    strengths: &StrengthAssignment,
    set: &[&str],
    ranking: AttackerRanking,
) -> Result<Option<String>> {
    Ok(ranked(model, strengths, set, ranking)?.into_iter().nth(1).map(|(id, _)| id))
}

/// Strength as asked about: two decimals, trailing zeros dropped ("0.92", "1").
pub fn format_question_value(s: f64) -> String {
    let t = format!("{s:.2}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" { "0".into() } else { t.to_string() }
}

/// Strength as cited: two decimals, but whole values keep one ("0.40", "1.0").
pub fn format_cited_value(s: f64) -> String {
    let t = format!("{s:.2}");
    match t.strip_suffix(".00") {
        Some(whole) => format!("{whole}.0"),
        None => t,
    }
}

fn format_raw(raw: &str, unit: Option<&str>) -> String {
    let trimmed = raw.trim();
    let value = match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v}"),
        _ => trimmed.to_string(),
    };
    format!("{value}{}", unit.unwrap_or(""))
}

/// Answers "why is `subject` evaluated as its strength?". `raw` is the
/// unprocessed record in feature order; without it features quote their
/// preprocessed value.
pub fn explain(
    model: &QafModel,
    strengths: &StrengthAssignment,
    subject: &str,
    raw: Option<&[String]>,
    config: &ExplainConfig,
) -> Result<ExplanationStep> {
    let node = model.node(subject).ok_or_else(|| CamError::NodeNotFound(subject.to_string()))?;
    if strengths.strengths.len() != model.nodes().len() {
        return Err(CamError::Misaligned("strengths were computed for a different model".into()));
    }
    if let Some(r) = raw {
        if r.len() != model.feature_order().len() {
            return Err(CamError::Misaligned(format!(
                "raw record has {} values, model expects {}",
                r.len(),
                model.feature_order().len()
            )));
        }
    }
    let s = strengths.get(subject)?;
    let att = model.attackers(subject)?;
    let sup = model.supporters(subject)?;
    let is_root = subject == model.root();

    let (case, set, role) = if is_root && s <= 0.5 && !att.is_empty() {
        (AnswerCase::RootAttacked, att, Role::Attacking)
    } else if is_root && s > 0.5 && !sup.is_empty() {
        (AnswerCase::RootSupported, sup, Role::Supporting)
    } else if node.kind != NodeKind::Feature && !sup.is_empty() {
        (AnswerCase::ConceptSupported, sup, Role::Supporting)
    } else if node.kind == NodeKind::Feature {
        (AnswerCase::FeatureValue, Vec::new(), Role::Supporting)
    } else if !att.is_empty() {
        (AnswerCase::ConceptAttacked, att, Role::Attacking)
    } else {
        (AnswerCase::Empty, Vec::new(), Role::Supporting)
    };

    let mut cited = Vec::new();
    for (i, (id, _)) in ranked(model, strengths, &set, config.attacker_ranking)?
        .into_iter()
        .take(2)
        .enumerate()
    {
        let child = model.node(&id).expect("child of a known node");
        cited.push(Citation {
            strength: strengths.get(&id)?,
            weight: model.parent_edge(&id).expect("ranked children have parents").weight,
            label: child.label.clone(),
            node: id,
            role,
            position: if i == 0 { Position::Primary } else { Position::Secondary },
        });
    }

    let leaf_value = (case == AnswerCase::FeatureValue).then(|| {
        let k = model
            .feature_order()
            .iter()
            .position(|f| f == subject)
            .expect("features are listed in feature_order");
        match raw {
            Some(r) => format_raw(&r[k], node.unit.as_deref()),
            None => format!("{}", strengths.instance[k]),
        }
    });

    let question = format!("Why is {} evaluated as {}?", node.label, format_question_value(s));
    let answer = match (&leaf_value, cited.as_slice()) {
        (Some(v), _) => format!("Because in this case, {} is {v}.", node.label),
        (None, []) => format!("There is no argument to cite for {}.", node.label),
        (None, cs) => {
            let parts: Vec<String> = cs
                .iter()
                .map(|c| {
                    let lead = match c.position {
                        Position::Primary => "Because",
                        Position::Secondary => "and",
                    };
                    format!("{lead} the {} argument {} is {}", c.role.word(), c.label, format_cited_value(c.strength))
                })
                .collect();
            format!("{}.", parts.join("; "))
        }
    };

    Ok(ExplanationStep {
        subject: subject.to_string(),
        label: node.label.clone(),
        strength: s,
        case,
        cited,
        leaf_value,
        outside_definition: case == AnswerCase::ConceptAttacked,
        lines: vec![question, answer],
    })
}

/// Root-to-leaf chain of primary citations.
pub fn dialogue_path(
    model: &QafModel,
    strengths: &StrengthAssignment,
    raw: Option<&[String]>,
    config: &ExplainConfig,
) -> Result<Vec<ExplanationStep>> {
    let mut steps = Vec::new();
    let mut subject = model.root().to_string();
    loop {
        let step = explain(model, strengths, &subject, raw, config)?;
        let next = step.primary().map(|c| c.node.clone());
        steps.push(step);
        match next {
            Some(n) if steps.len() <= model.nodes().len() => subject = n,
            _ => break,
        }
    }
    Ok(steps)
}

/// "user: ..." / "CAM: ..." lines for one step.
pub fn transcript_lines(step: &ExplanationStep) -> [String; 2] {
    [format!("user: {}", step.question()), format!("CAM: {}", step.answer())]
}

/// Resolves a user query to a node id: exact id first, then exact label.
pub fn resolve_node<'m>(model: &'m QafModel, query: &str) -> Result<&'m str> {
    let q = query.trim();
    model
        .node(q)
        .or_else(|| model.nodes().iter().find(|n| n.label == q))
        .map(|n| n.id.as_str())
        .ok_or_else(|| CamError::NodeNotFound(q.to_string()))
}
