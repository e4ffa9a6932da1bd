//! Synthetic agents with analytic competence regions.
//!
//! A world is a handful of competence balls in hashed-embedding space. Each
//! ball owns a lexicon of pseudo-words; its center is the embedding of the
//! whole lexicon. Queries are bags of lexicon and abstract words, so query
//! rewrites move through embedding space in predictable directions, and the
//! ground truth of every query is decided by cosine distance to the centers.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embedding::{cosine, Embedder, HashedEmbedder};
use super::{last_user, ChatBackend, ChatTurn, GatewayError};
use crate::explorer::TransformKind;
use crate::prompts::parse_fields;
use crate::text::{mix_seed, tokenize};

/// Bundled reference world.
pub const REFERENCE_WORLD: &str = include_str!("../../assets/reference_world.toml");

/// How many distinct distractor answers an out-of-competence query draws.
///
/// `clusters(d) = min(K, 1 + floor(extra_clusters * min(1, d / saturation_distance)))`
/// where `d` is the cosine distance to the nearest center. The K samples
/// are dealt round-robin over the clusters, so the cluster sizes (and
/// therefore the semantic entropy) follow from `d` and `K` alone.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistractorSchedule {
    pub extra_clusters: usize,
    pub saturation_distance: f64,
}

impl Default for DistractorSchedule {
    fn default() -> Self {
        Self { extra_clusters: 4, saturation_distance: 0.8 }
    }
}

impl DistractorSchedule {
    pub fn clusters(&self, distance: f64, k: usize) -> usize {
        let frac = (distance / self.saturation_distance).clamp(0.0, 1.0);
        let c = 1 + (self.extra_clusters as f64 * frac).floor() as usize;
        c.min(k).max(1)
    }

    /// Cluster sizes for `k` samples dealt round-robin over `clusters(d, k)`.
    pub fn sizes(&self, distance: f64, k: usize) -> Vec<usize> {
        let c = self.clusters(distance, k);
        (0..c).map(|j| k / c + usize::from(j < k % c)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub version: u32,
    pub dimension: usize,
    /// One cosine-distance radius per competence ball.
    pub radii: Vec<f64>,
    pub words_per_ball: usize,
    pub abstract_words: usize,
    pub noise_seed: u64,
    /// Seed queries replace up to this many lexicon words.
    pub seed_replacements: usize,
    /// Fresh queries replace exactly this many words of the previous query.
    pub fresh_replacements: usize,
    /// Evaluation draws replace up to this many words.
    pub eval_max_replacements: usize,
    #[serde(default)]
    pub distractor: DistractorSchedule,
    /// Random swaps may draw words of other balls, not just abstract words.
    #[serde(default = "yes")]
    pub swap_other_balls: bool,
    /// Random swaps draw only the first this-many abstract words; induction
    /// draws from the whole abstract lexicon. All of it when absent.
    #[serde(default)]
    pub common_words: Option<usize>,
    /// Embed with character trigrams as well as unigrams.
    #[serde(default = "yes")]
    pub trigrams: bool,
}

fn yes() -> bool {
    true
}

impl WorldConfig {
    pub fn reference() -> Self {
        toml::from_str(REFERENCE_WORLD).expect("bundled reference world parses")
    }

    pub fn from_path(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| GatewayError::Config(format!("world {}: {e}", path.display())))
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticWorld {
    pub dimension: usize,
    pub centers: Vec<Vec<f64>>,
    pub radii: Vec<f64>,
    pub noise_seed: u64,
    pub schedule: DistractorSchedule,
    lexicons: Vec<Vec<String>>,
    abstract_lexicon: Vec<String>,
    replacements: Replacements,
    embedder: HashedEmbedder,
}

#[derive(Clone, Copy, Debug, Default)]
struct Replacements {
    other_balls: bool,
    common: usize,
    seed: usize,
    fresh: usize,
    eval_max: usize,
}

const CONSONANTS: &[u8] = b"bcdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn pseudo_word(rng: &mut impl Rng) -> String {
    let syllables = rng.random_range(2..=3);
    let mut word = String::with_capacity(8);
    for _ in 0..syllables {
        word.push(*CONSONANTS.choose(rng).unwrap() as char);
        word.push(*VOWELS.choose(rng).unwrap() as char);
    }
    if rng.random_bool(0.5) {
        word.push(*CONSONANTS.choose(rng).unwrap() as char);
    }
    word
}

fn check_radii(radii: &[f64]) -> Result<(), GatewayError> {
    if radii.is_empty() {
        return Err(GatewayError::Config("world needs at least one competence ball".into()));
    }
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && **r < 2.0)) {
        return Err(GatewayError::Config(format!("radius {r} outside (0, 2)")));
    }
    Ok(())
}

impl SyntheticWorld {
    pub fn from_config(config: &WorldConfig) -> Result<Self, GatewayError> {
        check_radii(&config.radii)?;
        if config.dimension == 0 || config.words_per_ball < 2 || config.abstract_words == 0 {
            return Err(GatewayError::Config("world dimension and lexicon sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.noise_seed);
        let mut seen = HashSet::new();
        let mut fresh_word = |rng: &mut ChaCha8Rng| loop {
            let w = pseudo_word(rng);
            if seen.insert(w.clone()) {
                break w;
            }
        };
        let lexicons: Vec<Vec<String>> = config
            .radii
            .iter()
            .map(|_| (0..config.words_per_ball).map(|_| fresh_word(&mut rng)).collect())
            .collect();
        let abstract_lexicon = (0..config.abstract_words).map(|_| fresh_word(&mut rng)).collect();
        let embedder = if config.trigrams { HashedEmbedder::new(config.dimension) } else { HashedEmbedder::unigrams(config.dimension) };
        let centers = lexicons
            .iter()
            .map(|lex| embedder.embed(&lex.join(" ")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dimension: config.dimension,
            centers,
            radii: config.radii.clone(),
            noise_seed: config.noise_seed,
            schedule: config.distractor,
            lexicons,
            abstract_lexicon,
            replacements: Replacements {
                other_balls: config.swap_other_balls,
                common: config.common_words.unwrap_or(config.abstract_words).min(config.abstract_words),
                seed: config.seed_replacements,
                fresh: config.fresh_replacements,
                eval_max: config.eval_max_replacements,
            },
            embedder,
        })
    }

    pub fn reference() -> Self {
        Self::from_config(&WorldConfig::reference()).expect("reference world builds")
    }

    /// A world over explicit centers. It can answer queries but has no
    /// lexicon, so it cannot act as a query generator.
    pub fn from_centers(
        centers: Vec<Vec<f64>>,
        radii: Vec<f64>,
        noise_seed: u64,
        schedule: DistractorSchedule,
    ) -> Result<Self, GatewayError> {
        check_radii(&radii)?;
        if centers.len() != radii.len() {
            return Err(GatewayError::Config("one radius per center".into()));
        }
        let dimension = centers.first().map(Vec::len).unwrap_or(0);
        if dimension == 0 || centers.iter().any(|c| c.len() != dimension) {
            return Err(GatewayError::Config("centers must share a positive dimension".into()));
        }
        let centers = centers.into_iter().map(super::normalize).collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            dimension,
            centers,
            radii,
            noise_seed,
            schedule,
            lexicons: Vec::new(),
            abstract_lexicon: Vec::new(),
            replacements: Replacements::default(),
            embedder: HashedEmbedder::new(dimension),
        })
    }

    pub fn embedder(&self) -> &HashedEmbedder {
        &self.embedder
    }

    pub fn lexicon(&self, ball: usize) -> &[String] {
        &self.lexicons[ball]
    }

    pub fn abstract_lexicon(&self) -> &[String] {
        &self.abstract_lexicon
    }

    /// Index of and cosine distance to the nearest center.
    pub fn nearest(&self, v: &[f64]) -> (usize, f64) {
        self.centers
            .iter()
            .enumerate()
            .map(|(i, c)| (i, 1.0 - cosine(v, c)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    }

    /// Ground truth: inside some competence ball.
    pub fn in_competence(&self, v: &[f64]) -> bool {
        self.centers
            .iter()
            .zip(&self.radii)
            .any(|(c, r)| 1.0 - cosine(v, c) <= *r)
    }

    /// Signed distance past the nearest ball edge; positive outside competence.
    pub fn boundary_margin(&self, v: &[f64]) -> f64 {
        self.centers
            .iter()
            .zip(&self.radii)
            .map(|(c, r)| 1.0 - cosine(v, c) - r)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, GatewayError> {
        self.embedder.embed(text)
    }

    /// True when the agent would hallucinate on `query`.
    pub fn hallucinates(&self, query: &str) -> Result<bool, GatewayError> {
        Ok(!self.in_competence(&self.embed(query)?))
    }

    /// Cluster sizes the agent's `k` answers to `query` fall into.
    pub fn answer_clusters(&self, query: &str, k: usize) -> Result<Vec<usize>, GatewayError> {
        let v = self.embed(query)?;
        if self.in_competence(&v) {
            return Ok(vec![k]);
        }
        Ok(self.schedule.sizes(self.nearest(&v).1, k))
    }

    /// The agent's `n` sampled answers under backend seed `seed`.
    pub fn answers(&self, query: &str, seed: u64, n: usize) -> Result<Vec<String>, GatewayError> {
        let v = self.embed(query)?;
        if self.in_competence(&v) {
            return Ok(vec![faithful_answer(query); n]);
        }
        let c = self.schedule.clusters(self.nearest(&v).1, n);
        let key = tokenize(query).join(" ");
        let distractors: Vec<String> = (0..c)
            .map(|j| {
                let s = mix_seed(&[&self.noise_seed.to_le_bytes(), &seed.to_le_bytes(), key.as_bytes(), &j.to_le_bytes()]);
                distractor(&mut ChaCha8Rng::seed_from_u64(s))
            })
            .collect();
        Ok((0..n).map(|i| distractors[i % c].clone()).collect())
    }

    fn require_lexicon(&self) -> Result<(), GatewayError> {
        if self.lexicons.is_empty() {
            return Err(GatewayError::Config("world has no lexicon to generate queries from".into()));
        }
        Ok(())
    }

    fn ball_of(&self, word: &str) -> Option<usize> {
        self.lexicons.iter().position(|lex| lex.iter().any(|w| w == word))
    }

    fn dominant_ball(&self, words: &[String]) -> usize {
        let mut counts = vec![0usize; self.lexicons.len()];
        for w in words {
            if let Some(b) = self.ball_of(w) {
                counts[b] += 1;
            }
        }
        // First maximum wins ties.
        counts
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, &c)| if c > best.1 { (i, c) } else { best })
            .0
    }

    fn render(words: &[String]) -> String {
        format!("{}?", words.join(" "))
    }

    fn replace_random(&self, words: &mut [String], count: usize, rng: &mut impl Rng) {
        let mut positions: Vec<usize> = (0..words.len()).collect();
        positions.shuffle(rng);
        for &pos in positions.iter().take(count) {
            let present: HashSet<String> = words.iter().cloned().collect();
            let pool: Vec<&String> = self
                .lexicons
                .iter()
                .filter(|_| self.replacements.other_balls)
                .flatten()
                .chain(&self.abstract_lexicon[..self.replacements.common])
                .filter(|w| !present.contains(*w))
                .collect();
            if let Some(w) = pool.choose(rng) {
                words[pos] = (*w).clone();
            }
        }
    }

    fn lexicon_query(&self, replacements: usize, rng: &mut impl Rng) -> String {
        let ball = rng.random_range(0..self.lexicons.len());
        let mut words = self.lexicons[ball].clone();
        words.shuffle(rng);
        self.replace_random(&mut words, replacements, rng);
        Self::render(&words)
    }

    /// A seed query: one ball's lexicon with up to `seed_replacements` words swapped out.
    pub fn seed_query(&self, rng: &mut impl Rng) -> Result<String, GatewayError> {
        self.require_lexicon()?;
        let j = rng.random_range(0..=self.replacements.seed);
        Ok(self.lexicon_query(j, rng))
    }

    /// An evaluation query with up to `eval_max_replacements` words swapped out.
    pub fn eval_query(&self, rng: &mut impl Rng) -> Result<String, GatewayError> {
        self.require_lexicon()?;
        let j = rng.random_range(0..=self.replacements.eval_max);
        Ok(self.lexicon_query(j, rng))
    }

    /// A new query a few random word swaps away from `previous`.
    pub fn fresh_query(&self, previous: &str, rng: &mut impl Rng) -> Result<String, GatewayError> {
        self.require_lexicon()?;
        let mut words = tokenize(previous);
        if words.is_empty() {
            return self.seed_query(rng);
        }
        self.replace_random(&mut words, self.replacements.fresh.max(1), rng);
        Ok(Self::render(&words))
    }

    /// Rewrites `query` with one fractal transformation.
    ///
    /// Deduction swaps a foreign word for a missing word of the dominant
    /// ball (toward its center). Analogy swaps a dominant-ball word for a
    /// word of another ball (sideways). Induction swaps a dominant-ball word
    /// for an abstract word (away from every center).
    pub fn transform_query(&self, query: &str, kind: TransformKind, rng: &mut impl Rng) -> Result<String, GatewayError> {
        self.require_lexicon()?;
        let mut words = tokenize(query);
        if words.is_empty() {
            return Err(GatewayError::EmptyText);
        }
        let ball = self.dominant_ball(&words);
        let present: HashSet<String> = words.iter().cloned().collect();
        let own: Vec<usize> = (0..words.len()).filter(|&i| self.ball_of(&words[i]) == Some(ball)).collect();
        let foreign: Vec<usize> = (0..words.len()).filter(|&i| self.ball_of(&words[i]) != Some(ball)).collect();
        let absent = |pool: &[String]| -> Vec<String> {
            pool.iter().filter(|w| !present.contains(*w)).cloned().collect()
        };
        match kind {
            TransformKind::Deduction => {
                let missing = absent(&self.lexicons[ball]);
                match (foreign.choose(rng), missing.choose(rng)) {
                    (Some(&pos), Some(word)) => words[pos] = word.clone(),
                    _ => {
                        // Already fully specific: reorder instead.
                        let n = words.len();
                        if n > 1 {
                            let a = rng.random_range(0..n);
                            let b = (a + rng.random_range(1..n)) % n;
                            words.swap(a, b);
                        }
                    }
                }
            }
            TransformKind::Analogy => {
                let others: Vec<String> = (0..self.lexicons.len())
                    .filter(|&b| b != ball)
                    .flat_map(|b| absent(&self.lexicons[b]))
                    .collect();
                let pool = if others.is_empty() { absent(&self.abstract_lexicon) } else { others };
                let positions = if own.is_empty() { &foreign } else { &own };
                if let (Some(&pos), Some(word)) = (positions.choose(rng), pool.choose(rng)) {
                    words[pos] = word.clone();
                }
            }
            TransformKind::Induction => {
                let pool = absent(&self.abstract_lexicon);
                let positions: Vec<usize> = if own.is_empty() {
                    (0..words.len()).collect()
                } else {
                    own
                };
                if let (Some(&pos), Some(word)) = (positions.choose(rng), pool.choose(rng)) {
                    words[pos] = word.clone();
                }
            }
        }
        Ok(Self::render(&words))
    }
}

/// The answer an agent gives inside its competence.
pub fn faithful_answer(query: &str) -> String {
    format!("Grounded answer: {}.", tokenize(query).join(" "))
}

fn distractor(rng: &mut impl Rng) -> String {
    let words: Vec<String> = (0..6).map(|_| pseudo_word(rng)).collect();
    format!("{}.", words.join(" "))
}

fn sample_rng(world_seed: u64, backend_seed: u64, prompt: &str, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(&[
        &world_seed.to_le_bytes(),
        &backend_seed.to_le_bytes(),
        prompt.as_bytes(),
        &index.to_le_bytes(),
    ]))
}

/// Target agent whose reliability is decided by the world.
#[derive(Clone, Debug)]
pub struct SyntheticAgent {
    world: Arc<SyntheticWorld>,
    seed: u64,
}

impl SyntheticAgent {
    pub fn new(world: Arc<SyntheticWorld>, seed: u64) -> Self {
        Self { world, seed }
    }

    pub fn world(&self) -> &SyntheticWorld {
        &self.world
    }
}

impl ChatBackend for SyntheticAgent {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        self.world.answers(last_user(turns), self.seed, n)
    }

    fn name(&self) -> &str {
        "synthetic-agent"
    }
}

/// Query generator over the world's lexicons. Reads the trailing field
/// block of the generator prompts.
#[derive(Clone, Debug)]
pub struct SyntheticGenerator {
    world: Arc<SyntheticWorld>,
    seed: u64,
}

impl SyntheticGenerator {
    pub fn new(world: Arc<SyntheticWorld>, seed: u64) -> Self {
        Self { world, seed }
    }

    fn one(&self, prompt: &str, index: usize) -> Result<String, GatewayError> {
        let fields = parse_fields(prompt);
        let mut rng = sample_rng(self.world.noise_seed, self.seed, prompt, index);
        match fields.task.as_deref() {
            Some("seed") => {
                let count = fields.count.unwrap_or(1).max(1);
                let lines = (0..count)
                    .map(|_| self.world.seed_query(&mut rng))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(lines.join("\n"))
            }
            Some("fresh") => match fields.previous {
                Some(prev) => self.world.fresh_query(&prev, &mut rng),
                None => self.world.seed_query(&mut rng),
            },
            Some("transform") => {
                let kind = fields
                    .transformation
                    .as_deref()
                    .and_then(TransformKind::from_name)
                    .ok_or_else(|| GatewayError::Malformed("transform prompt without a known kind".into()))?;
                let query = fields
                    .query
                    .ok_or_else(|| GatewayError::Malformed("transform prompt without a query".into()))?;
                self.world.transform_query(&query, kind, &mut rng)
            }
            other => Err(GatewayError::Malformed(format!("synthetic generator cannot handle task {other:?}"))),
        }
    }
}

impl ChatBackend for SyntheticGenerator {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        let prompt = last_user(turns);
        (0..n).map(|i| self.one(prompt, i)).collect()
    }

    fn name(&self) -> &str {
        "synthetic-generator"
    }
}

/// Judge that knows what a faithful synthetic answer looks like.
#[derive(Clone, Copy, Debug, Default)]
pub struct SyntheticJudge;

impl SyntheticJudge {
    fn one(&self, prompt: &str) -> Result<String, GatewayError> {
        let fields = parse_fields(prompt);
        match fields.task.as_deref() {
            Some("judge") => {
                let query = fields.query.unwrap_or_default();
                let response = fields.response.unwrap_or_default();
                let verdict = if response == faithful_answer(&query) { "no" } else { "yes" };
                Ok(format!("verdict: {verdict}, confidence: 100"))
            }
            Some("entailment") => {
                let same = tokenize(&fields.premise.unwrap_or_default())
                    == tokenize(&fields.hypothesis.unwrap_or_default());
                Ok(if same { "yes" } else { "no" }.to_string())
            }
            other => Err(GatewayError::Malformed(format!("synthetic judge cannot handle task {other:?}"))),
        }
    }
}

impl ChatBackend for SyntheticJudge {
    fn complete_n(&self, turns: &[ChatTurn], n: usize) -> Result<Vec<String>, GatewayError> {
        let reply = self.one(last_user(turns))?;
        Ok(vec![reply; n])
    }

    fn name(&self) -> &str {
        "synthetic-judge"
    }
}
