//! FactWorld: a synthetic entity-relation environment rendered in a small
//! symbol vocabulary, with ground-truth answers by graph traversal.
//!
//! Entities are digit pairs (`d3 d9`), relations `r0…r7`, privacy aliases
//! `p0…p7`. A query is one line of symbols in three fixed regions:
//!
//! ```text
//! ctx  <rel> <s_hi> <s_lo> <o_hi> <o_lo>   locally known fact, or pads
//! priv <alias> <s_hi> <s_lo>               alias binding, or pads
//! ask  <rel> <subj_hi> <subj_lo> <rel2>    the question; alias replaces the
//! ?                                        subject on privacy queries
//! ```
//!
//! A query is structurally easy iff the answer is visible in the `ctx`
//! region. The cloud side knows every fact and resolves a request iff it
//! contains a relation symbol and an entity digit pair; a privacy leak is an
//! uploaded alias token. Together these induce the intended trade-offs: easy
//! queries are solvable solo, hard ones need a request, and on privacy
//! queries the lazy resolvable request (copy the question plus the binding)
//! leaks while the reformulated one (digits, no alias) does not.

use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{check_messages, Agent, AgentError, ChatMessage, GenerationParams, Role};
use crate::data::Query;
use crate::trajectory::{TokenId, Vocab};

pub const NUM_DIGITS: usize = 16;
pub const NUM_RELATIONS: usize = 8;
pub const NUM_ALIASES: usize = 8;

/// The toy vocabulary with cached ids for the structural symbols.
#[derive(Debug, Clone)]
pub struct ToyVocab {
    pub vocab: Vocab,
    pub pad: TokenId,
    pub qmark: TokenId,
    pub ctx_marker: TokenId,
    pub priv_marker: TokenId,
    pub ask_marker: TokenId,
    pub needctx: TokenId,
    pub digits: [TokenId; NUM_DIGITS],
    pub relations: [TokenId; NUM_RELATIONS],
    pub aliases: [TokenId; NUM_ALIASES],
}

impl ToyVocab {
    pub fn new() -> Self {
        let mut symbols: Vec<String> = vec![
            "pad".into(),
            "?".into(),
            "ctx".into(),
            "priv".into(),
            "ask".into(),
            "needctx".into(),
        ];
        for d in 0..NUM_DIGITS {
            symbols.push(format!("d{d}"));
        }
        for r in 0..NUM_RELATIONS {
            symbols.push(format!("r{r}"));
        }
        for p in 0..NUM_ALIASES {
            symbols.push(format!("p{p}"));
        }
        let vocab = Vocab::new(symbols);
        let id = |s: &str| vocab.id(s).unwrap();
        ToyVocab {
            pad: id("pad"),
            qmark: id("?"),
            ctx_marker: id("ctx"),
            priv_marker: id("priv"),
            ask_marker: id("ask"),
            needctx: id("needctx"),
            digits: std::array::from_fn(|d| id(&format!("d{d}"))),
            relations: std::array::from_fn(|r| id(&format!("r{r}"))),
            aliases: std::array::from_fn(|p| id(&format!("p{p}"))),
            vocab,
        }
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    /// The two digit tokens of an entity index.
    pub fn entity_tokens(&self, entity: usize) -> [TokenId; 2] {
        [self.digits[entity / NUM_DIGITS], self.digits[entity % NUM_DIGITS]]
    }

    pub fn entity_text(&self, entity: usize) -> String {
        let [hi, lo] = self.entity_tokens(entity);
        format!("{} {}", self.vocab.symbol(hi), self.vocab.symbol(lo))
    }

    /// Decode a digit pair back to an entity index.
    pub fn entity_from_tokens(&self, hi: TokenId, lo: TokenId) -> Option<usize> {
        let hi = self.digits.iter().position(|&d| d == hi)?;
        let lo = self.digits.iter().position(|&d| d == lo)?;
        Some(hi * NUM_DIGITS + lo)
    }

    pub fn relation_index(&self, tok: TokenId) -> Option<usize> {
        self.relations.iter().position(|&r| r == tok)
    }

    pub fn is_digit(&self, tok: TokenId) -> bool {
        self.digits.contains(&tok)
    }

    pub fn tokenize(&self, text: &str) -> Option<Vec<TokenId>> {
        self.vocab.tokenize_text(text).ok()
    }

    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens
            .iter()
            .map(|&t| self.vocab.symbol(t))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl Default for ToyVocab {
    fn default() -> Self {
        Self::new()
    }
}

/// Environment construction parameters (the `--env` JSON file).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactWorldSpec {
    pub entities: usize,
    pub relations: usize,
    pub cloud_only_fraction: f64,
    pub privacy_token_fraction: f64,
    pub hops: u8,
    pub seed: u64,
    #[serde(default = "default_train_queries")]
    pub train_queries: usize,
    #[serde(default = "default_heldout_queries")]
    pub heldout_queries: usize,
}

fn default_train_queries() -> usize {
    512
}
fn default_heldout_queries() -> usize {
    256
}

impl Default for FactWorldSpec {
    fn default() -> Self {
        FactWorldSpec {
            entities: 200,
            relations: 4,
            cloud_only_fraction: 0.5,
            privacy_token_fraction: 0.0,
            hops: 1,
            seed: 7,
            train_queries: default_train_queries(),
            heldout_queries: default_heldout_queries(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SpecError {
    #[error("entities must lie in 2..=256")]
    BadEntities,
    #[error("relations must lie in 1..=8")]
    BadRelations,
    #[error("fractions must lie in [0,1]")]
    BadFraction,
    #[error("hops must be 1 or 2")]
    BadHops,
    #[error("query counts must be at least 1")]
    BadCounts,
}

/// What the `ctx` region shows for a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowKind {
    /// The answer-bearing fact is visible: structurally easy.
    Answer,
    /// Only the first hop of a 2-hop chain is visible.
    Intermediate,
    /// Nothing is visible locally.
    None,
}

/// One environment query plus its ground-truth structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactQuery {
    pub query: Query,
    pub easy: bool,
    pub has_privacy: bool,
    pub know_kind: KnowKind,
    pub subject: usize,
    pub rel1: usize,
    pub rel2: Option<usize>,
    pub intermediate: Option<usize>,
    pub answer_entity: usize,
    pub alias: Option<usize>,
}

/// The environment: queries, the fact graph, and the cloud lookup.
#[derive(Debug, Clone)]
pub struct FactWorld {
    pub spec: FactWorldSpec,
    pub vocab: Arc<ToyVocab>,
    pub train: Vec<FactQuery>,
    pub heldout: Vec<FactQuery>,
    /// `(subject, relation) → object` for every entity and relation.
    pub facts: HashMap<(usize, usize), usize>,
}

impl FactWorld {
    pub fn labels(queries: &[FactQuery]) -> HashMap<String, bool> {
        queries.iter().map(|q| (q.query.id.clone(), q.easy)).collect()
    }

    pub fn queries(split: &[FactQuery]) -> Vec<Query> {
        split.iter().map(|q| q.query.clone()).collect()
    }

    pub fn cloud_agent(&self) -> ToyCloudAgent {
        ToyCloudAgent { vocab: Arc::clone(&self.vocab), facts: self.facts.clone() }
    }
}

fn exact_flags(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let k = (n as f64 * fraction).round() as usize;
    let mut flags = vec![false; n];
    for f in flags.iter_mut().take(k.min(n)) {
        *f = true;
    }
    flags.shuffle(rng);
    flags
}

fn render_query(v: &ToyVocab, know: &[TokenId], priv_region: &[TokenId], ask: &[TokenId]) -> String {
    let mut tokens = vec![v.ctx_marker];
    tokens.extend_from_slice(know);
    tokens.push(v.priv_marker);
    tokens.extend_from_slice(priv_region);
    tokens.push(v.ask_marker);
    tokens.extend_from_slice(ask);
    tokens.push(v.qmark);
    v.render(&tokens)
}

/// Build a seeded FactWorld. The fact graph is functional and total; the
/// local-visibility split (`cloud_only_fraction`) and the privacy flag are
/// assigned with exact proportions per split.
pub fn build_fact_world(spec: &FactWorldSpec) -> Result<FactWorld, SpecError> {
    if spec.entities < 2 || spec.entities > NUM_DIGITS * NUM_DIGITS {
        return Err(SpecError::BadEntities);
    }
    if spec.relations < 1 || spec.relations > NUM_RELATIONS {
        return Err(SpecError::BadRelations);
    }
    for f in [spec.cloud_only_fraction, spec.privacy_token_fraction] {
        if !(0.0..=1.0).contains(&f) {
            return Err(SpecError::BadFraction);
        }
    }
    if spec.hops != 1 && spec.hops != 2 {
        return Err(SpecError::BadHops);
    }
    if spec.train_queries == 0 || spec.heldout_queries == 0 {
        return Err(SpecError::BadCounts);
    }

    let vocab = Arc::new(ToyVocab::new());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut facts = HashMap::new();
    for e in 0..spec.entities {
        for r in 0..spec.relations {
            facts.insert((e, r), rng.gen_range(0..spec.entities));
        }
    }

    let mut make_split = |count: usize, split: &str| -> Vec<FactQuery> {
        let hard_flags = exact_flags(count, spec.cloud_only_fraction, &mut rng);
        let priv_flags = exact_flags(count, spec.privacy_token_fraction, &mut rng);
        (0..count)
            .map(|i| {
                let subject = rng.gen_range(0..spec.entities);
                let rel1 = rng.gen_range(0..spec.relations);
                let hard = hard_flags[i];
                let has_privacy = priv_flags[i];
                let (rel2, intermediate, answer_entity) = if spec.hops == 2 {
                    let r2 = rng.gen_range(0..spec.relations);
                    let m = facts[&(subject, rel1)];
                    (Some(r2), Some(m), facts[&(m, r2)])
                } else {
                    (None, None, facts[&(subject, rel1)])
                };

                let v = &*vocab;
                let s_tok = v.entity_tokens(subject);
                let o_tok = v.entity_tokens(answer_entity);
                let (know, know_kind) = if !hard {
                    // Answer-bearing fact visible.
                    let (kr, ks) = match (rel2, intermediate) {
                        (Some(r2), Some(m)) => (v.relations[r2], v.entity_tokens(m)),
                        _ => (v.relations[rel1], s_tok),
                    };
                    (vec![kr, ks[0], ks[1], o_tok[0], o_tok[1]], KnowKind::Answer)
                } else if spec.hops == 2 && rng.gen_bool(0.5) {
                    // First hop visible, second hop cloud-only.
                    let m = intermediate.unwrap();
                    let m_tok = v.entity_tokens(m);
                    (
                        vec![v.relations[rel1], s_tok[0], s_tok[1], m_tok[0], m_tok[1]],
                        KnowKind::Intermediate,
                    )
                } else {
                    (vec![v.pad; 5], KnowKind::None)
                };

                let alias = has_privacy.then(|| rng.gen_range(0..NUM_ALIASES));
                let priv_region = match alias {
                    Some(a) => vec![v.aliases[a], s_tok[0], s_tok[1]],
                    None => vec![v.pad; 3],
                };
                let rel2_slot = rel2.map(|r| v.relations[r]).unwrap_or(v.pad);
                let ask = match alias {
                    Some(a) => vec![v.relations[rel1], v.aliases[a], v.pad, rel2_slot],
                    None => vec![v.relations[rel1], s_tok[0], s_tok[1], rel2_slot],
                };

                let question = render_query(v, &know, &priv_region, &ask);
                let privacy_items = alias
                    .map(|a| vec![v.vocab.symbol(v.aliases[a]).to_string()])
                    .unwrap_or_default();
                FactQuery {
                    query: Query {
                        id: format!("fw-{split}-{i:05}"),
                        question,
                        answers: vec![v.entity_text(answer_entity)],
                        privacy_items,
                        source: "factworld".into(),
                    },
                    easy: know_kind == KnowKind::Answer,
                    has_privacy,
                    know_kind,
                    subject,
                    rel1,
                    rel2,
                    intermediate,
                    answer_entity,
                    alias,
                }
            })
            .collect()
    };

    let train = make_split(spec.train_queries, "train");
    let heldout = make_split(spec.heldout_queries, "held");
    Ok(FactWorld { spec: spec.clone(), vocab, train, heldout, facts })
}

/// Structured view of a rendered query, re-parsed from its text. This is all
/// a local policy may legitimately see.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryView {
    pub know: Vec<TokenId>,
    pub privacy: Vec<TokenId>,
    pub ask: Vec<TokenId>,
    pub has_know: bool,
    pub has_privacy: bool,
}

impl QueryView {
    pub fn parse(question: &str, v: &ToyVocab) -> Option<QueryView> {
        let tokens = v.tokenize(question)?;
        if tokens.len() != 14 + 1 + 1
            || tokens[0] != v.ctx_marker
            || tokens[6] != v.priv_marker
            || tokens[10] != v.ask_marker
            || tokens[15] != v.qmark
        {
            return None;
        }
        let know = tokens[1..6].to_vec();
        let privacy = tokens[7..10].to_vec();
        let ask = tokens[11..15].to_vec();
        Some(QueryView {
            has_know: know[0] != v.pad,
            has_privacy: privacy[0] != v.pad,
            know,
            privacy,
            ask,
        })
    }

    /// The answer evidence visible in the context region, if any.
    pub fn know_object(&self) -> Option<[TokenId; 2]> {
        if self.has_know {
            Some([self.know[3], self.know[4]])
        } else {
            None
        }
    }
}

/// Cloud agent over the full fact graph: resolves a request containing a
/// relation symbol and an adjacent digit pair; everything else gets a
/// context request (`needctx`). An uploaded alias alone never resolves; the
/// cloud does not hold user bindings.
#[derive(Debug, Clone)]
pub struct ToyCloudAgent {
    vocab: Arc<ToyVocab>,
    facts: HashMap<(usize, usize), usize>,
}

impl ToyCloudAgent {
    fn resolve(&self, request: &str) -> Option<usize> {
        let v = &*self.vocab;
        let tokens: Vec<TokenId> = request
            .split_whitespace()
            .filter_map(|s| v.vocab.id(s))
            .collect();
        let rel = tokens.iter().find_map(|&t| v.relation_index(t))?;
        let entity = tokens
            .windows(2)
            .find_map(|w| v.entity_from_tokens(w[0], w[1]))?;
        self.facts.get(&(entity, rel)).copied()
    }
}

impl Agent for ToyCloudAgent {
    fn generate(&self, messages: &[ChatMessage], _params: &GenerationParams) -> Result<String, AgentError> {
        check_messages(messages)?;
        let request = messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .ok_or_else(|| AgentError::InvalidRequest("no request".into()))?;
        Ok(match self.resolve(request) {
            Some(obj) => format!("<information>{}</information>", self.vocab.entity_text(obj)),
            None => "<need>needctx</need>".to_string(),
        })
    }

    fn tag(&self) -> String {
        "factworld-cloud".to_string()
    }
}
