use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use crate::diffusion::{GuidanceSpec, GuidanceTerm};
use crate::error::{Error, Result};
use crate::textual_inversion::{bare_name, load_embedding, ConceptEmbedding, TextConditioner, Token};

/// CFG scale applied to prompts with at least [`MULTI_CONCEPT_TERMS`] terms
/// unless the caller overrides it.
pub const MULTI_CONCEPT_CFG: f32 = 3.0;
pub const MULTI_CONCEPT_TERMS: usize = 3;

/// Named embeddings available to prompts.
#[derive(Debug, Clone, Default)]
pub struct EmbeddingRegistry {
    concepts: BTreeMap<String, ConceptEmbedding>,
}

impl EmbeddingRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, embedding: ConceptEmbedding) -> Option<ConceptEmbedding> {
        self.concepts.insert(embedding.name().to_owned(), embedding)
    }

    /// Looks up `name` with or without angle brackets.
    pub fn get(&self, name: &str) -> Option<&ConceptEmbedding> {
        self.concepts.get(bare_name(name))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.concepts.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn load_files<P: AsRef<Path>>(paths: impl IntoIterator<Item = P>) -> Result<Self> {
        let mut reg = Self::new();
        for p in paths {
            reg.insert(load_embedding(p.as_ref())?);
        }
        Ok(reg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTerm {
    /// Bare concept name.
    pub concept: String,
    pub weight: f32,
}

/// Weighted `AND` combination of concepts.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedPrompt {
    pub terms: Vec<PromptTerm>,
    pub cfg_scale: Option<f32>,
}

impl ComposedPrompt {
    pub fn new(terms: Vec<PromptTerm>) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::Empty("prompt terms"));
        }
        if let Some(t) = terms.iter().find(|t| !t.weight.is_finite()) {
            return Err(Error::PromptSyntax(format!("weight for <{}> is not finite", t.concept)));
        }
        let cfg_scale = (terms.len() >= MULTI_CONCEPT_TERMS).then_some(MULTI_CONCEPT_CFG);
        Ok(Self { terms, cfg_scale })
    }

    pub fn with_cfg(mut self, cfg_scale: f32) -> Self {
        self.cfg_scale = Some(cfg_scale);
        self
    }

    /// The prompt's own override if any, otherwise `default`.
    pub fn cfg_or(&self, default: f32) -> f32 {
        self.cfg_scale.unwrap_or(default)
    }

    /// Encodes each term as a bare-token prompt. Weights are passed through
    /// unnormalised.
    pub fn guidance<C: TextConditioner + ?Sized>(
        &self,
        registry: &EmbeddingRegistry,
        conditioner: &C,
        default_cfg: f32,
    ) -> Result<GuidanceSpec> {
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let e = registry
                    .get(&t.concept)
                    .ok_or_else(|| Error::UnknownConcept(t.concept.clone()))?;
                Ok(GuidanceTerm {
                    context: conditioner.encode(&[Token::Concept(e)])?,
                    weight: t.weight,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(GuidanceSpec {
            terms,
            cfg_scale: self.cfg_or(default_cfg),
        })
    }
}

impl fmt::Display for ComposedPrompt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" AND ")?;
            }
            write!(f, "{}*<{}>", t.weight, t.concept)?;
        }
        Ok(())
    }
}

fn parse_term(text: &str) -> Result<PromptTerm> {
    let (weight, name) = match text.rsplit_once('*') {
        Some((w, n)) => {
            let w = w.trim();
            let weight: f32 = w
                .parse()
                .map_err(|_| Error::PromptSyntax(format!("malformed weight `{w}`")))?;
            if !weight.is_finite() {
                return Err(Error::PromptSyntax(format!("weight `{w}` is not finite")));
            }
            (weight, n.trim())
        }
        None => (1.0, text.trim()),
    };
    let concept = name
        .strip_prefix('<')
        .and_then(|n| n.strip_suffix('>'))
        .filter(|n| !n.is_empty())
        .ok_or_else(|| Error::PromptSyntax(format!("expected `<name>`, found `{name}`")))?;
    Ok(PromptTerm {
        concept: concept.to_owned(),
        weight,
    })
}

/// Parses `[w*]<name> AND [w*]<name> ...`; `AND` must stand as its own word.
pub fn parse_prompt(text: &str, registry: &EmbeddingRegistry) -> Result<ComposedPrompt> {
    if text.trim().is_empty() {
        return Err(Error::PromptSyntax("empty prompt".into()));
    }
    let mut groups: Vec<Vec<&str>> = vec![Vec::new()];
    for word in text.split_whitespace() {
        if word == "AND" {
            groups.push(Vec::new());
        } else {
            groups.last_mut().expect("non-empty").push(word);
        }
    }
    let mut terms = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::PromptSyntax(format!("term {} is empty", i + 1)));
        }
        let term = parse_term(&g.concat())?;
        if registry.get(&term.concept).is_none() {
            return Err(Error::UnknownConcept(term.concept));
        }
        terms.push(term);
    }
    ComposedPrompt::new(terms)
}

/// One prompt per `alpha`, weighting `healthy` by `1 - alpha` and `diseased` by `alpha`.
pub fn interpolation_sweep(healthy: &str, diseased: &str, alphas: &[f32]) -> Result<Vec<ComposedPrompt>> {
    if alphas.is_empty() {
        return Err(Error::Empty("interpolation alphas"));
    }
    alphas
        .iter()
        .map(|&a| {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("alpha {a} is outside [0, 1]")));
            }
            Ok(ComposedPrompt {
                terms: vec![
                    PromptTerm {
                        concept: bare_name(healthy).to_owned(),
                        weight: 1.0 - a,
                    },
                    PromptTerm {
                        concept: bare_name(diseased).to_owned(),
                        weight: a,
                    },
                ],
                cfg_scale: None,
            })
        })
        .collect()
}
