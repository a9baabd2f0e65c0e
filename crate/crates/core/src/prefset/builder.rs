use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    AnswerCandidate, AnswerGenerator, GenerationRequest, PreferenceSet, PrefsetError, Result,
    SetKind, GOLDEN_SOURCE, KPS_K1_SOURCE, KPS_K2_SOURCE, KPS_K3_SOURCE,
};
use crate::data_io::{render_prompt, KnowledgeItem, PromptTemplate, QaPair};
use crate::retrieval::KnowledgeGroups;

fn golden(qa: &QaPair) -> AnswerCandidate {
    AnswerCandidate {
        text: qa.golden_answer.clone(),
        source: GOLDEN_SOURCE.into(),
        rank: 1,
    }
}

fn generate_with(
    generator: &dyn AnswerGenerator,
    qa: &QaPair,
    template: &PromptTemplate,
    knowledge: &[&KnowledgeItem],
) -> Result<String> {
    let prompt = render_prompt(template, knowledge.iter().copied(), &qa.question);
    let surfaces: Vec<&str> = knowledge.iter().map(|k| k.surface()).collect();
    let request = GenerationRequest {
        question_id: &qa.id,
        question: &qa.question,
        prompt: &prompt,
        knowledge: &surfaces,
        reference: &qa.golden_answer,
    };
    let fail = |source| PrefsetError::Generation {
        question_id: qa.id.clone(),
        generator: generator.name().to_string(),
        source,
    };
    let text = generator.generate(&request).map_err(fail)?;
    if text.trim().is_empty() {
        return Err(fail(super::GenerationError::EmptyOutput));
    }
    Ok(text)
}

fn check_generators(generators: &[&dyn AnswerGenerator]) -> Result<()> {
    if generators.is_empty() {
        return Err(PrefsetError::NoGenerators);
    }
    let mut names = HashSet::new();
    let mut ranks = HashSet::new();
    for g in generators {
        if !names.insert(g.name()) {
            return Err(PrefsetError::DuplicateGeneratorName(g.name().to_string()));
        }
        if !ranks.insert(g.quality_rank()) {
            return Err(PrefsetError::DuplicateQualityRank(g.quality_rank()));
        }
    }
    Ok(())
}

/// Style set: the golden answer plus one answer per generator, ranked by
/// generator capability. All generators see the K1-augmented prompt.
pub fn build_sps(
    qa: &QaPair,
    generators: &[&dyn AnswerGenerator],
    template: &PromptTemplate,
    k1: &[&KnowledgeItem],
) -> Result<PreferenceSet> {
    check_generators(generators)?;
    let mut ordered = generators.to_vec();
    ordered.sort_by_key(|g| g.quality_rank());
    let mut candidates = vec![golden(qa)];
    for (i, g) in ordered.iter().enumerate() {
        candidates.push(AnswerCandidate {
            text: generate_with(*g, qa, template, k1)?,
            source: g.name().to_string(),
            rank: i as u32 + 2,
        });
    }
    PreferenceSet::new(qa.id.clone(), SetKind::Style, candidates)
}

/// Knowledge set: golden, then answers generated with K1, without
/// knowledge, and with K3.
pub fn build_kps(
    qa: &QaPair,
    model_generator: &dyn AnswerGenerator,
    template: &PromptTemplate,
    groups: &KnowledgeGroups,
) -> Result<PreferenceSet> {
    if groups.question_id != qa.id {
        return Err(PrefsetError::GroupsMismatch {
            question: qa.id.clone(),
            groups: groups.question_id.clone(),
        });
    }
    let slots = [
        (KPS_K1_SOURCE, groups.k1_items()),
        (KPS_K2_SOURCE, groups.k2_items()),
        (KPS_K3_SOURCE, groups.k3_items()),
    ];
    let mut candidates = vec![golden(qa)];
    for (i, (source, knowledge)) in slots.iter().enumerate() {
        candidates.push(AnswerCandidate {
            text: generate_with(model_generator, qa, template, knowledge)?,
            source: source.to_string(),
            rank: i as u32 + 2,
        });
    }
    PreferenceSet::new(qa.id.clone(), SetKind::Knowledge, candidates)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub question_id: String,
    pub kind: SetKind,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct BuildOutcome {
    /// Style then knowledge set per QA pair, in dataset order.
    pub sets: Vec<PreferenceSet>,
    pub failures: Vec<FailureRecord>,
}

impl BuildOutcome {
    pub fn emitted(&self) -> usize {
        self.sets.len()
    }
}

/// Builds both sets for every QA pair. A failing set is dropped whole and
/// recorded; pairs are processed in parallel but results keep dataset
/// order.
pub fn build_all(
    dataset: &[QaPair],
    groups: &[KnowledgeGroups],
    sps_generators: &[&dyn AnswerGenerator],
    kps_generator: &dyn AnswerGenerator,
    template: &PromptTemplate,
) -> Result<BuildOutcome> {
    check_generators(sps_generators)?;
    let by_question: HashMap<&str, &KnowledgeGroups> =
        groups.iter().map(|g| (g.question_id.as_str(), g)).collect();

    let per_pair: Vec<Vec<std::result::Result<PreferenceSet, FailureRecord>>> = dataset
        .par_iter()
        .map(|qa| {
            let fail = |kind, e: PrefsetError| FailureRecord {
                question_id: qa.id.clone(),
                kind,
                reason: e.to_string(),
            };
            let Some(g) = by_question.get(qa.id.as_str()) else {
                let reason = format!("no knowledge groups for question `{}`", qa.id);
                return [SetKind::Style, SetKind::Knowledge]
                    .into_iter()
                    .map(|kind| {
                        Err(FailureRecord {
                            question_id: qa.id.clone(),
                            kind,
                            reason: reason.clone(),
                        })
                    })
                    .collect();
            };
            let k1 = g.k1_items();
            vec![
                build_sps(qa, sps_generators, template, &k1).map_err(|e| fail(SetKind::Style, e)),
                build_kps(qa, kps_generator, template, g).map_err(|e| fail(SetKind::Knowledge, e)),
            ]
        })
        .collect();

    let mut outcome = BuildOutcome::default();
    for r in per_pair.into_iter().flatten() {
        match r {
            Ok(set) => outcome.sets.push(set),
            Err(f) => {
                log::warn!(
                    "dropping {} set for `{}`: {}",
                    f.kind,
                    f.question_id,
                    f.reason
                );
                outcome.failures.push(f);
            }
        }
    }
    Ok(outcome)
}
