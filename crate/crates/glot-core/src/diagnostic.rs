//! Synthetic signal-dilution datasets and the frozen toy backbone that
//! embeds token ids.
//!
//! Two generators share the same output shape:
//!
//! * `generate_diagnostic` builds needle-in-a-haystack samples: a signal
//!   phrase from a template set is injected at a random position into a
//!   sequence of distractor tokens, with the distractor ratio controlling
//!   difficulty.
//! * `generate_relational_xor` plants a relational task on top of a
//!   constructed embedding geometry: the label is whether exactly one of
//!   two signal classes occurs, which no per-token scoring pooler can
//!   decide but one round of message passing over the thresholded token
//!   graph can.
//!
//! The planted geometry guarantees that every signal-signal cosine
//! exceeds `tau_hi` while every cosine involving a distractor stays below
//! `tau_lo`; a certificate of these bounds is computed exhaustively at
//! build time.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::HiddenStates;
use crate::error::{GlotError, Result};
use crate::numeric::{dot, Matrix};

// ---------------------------------------------------------------------
// Toy backbone and planted geometry.

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub dim: usize,
    /// Signal vocabulary size; ids `0..n_signal` are signal tokens, split
    /// into class A (first half) and class B (second half).
    pub n_signal: usize,
    pub n_distractor: usize,
    /// Upper bound every distractor-involving cosine must stay below.
    pub tau_lo: f64,
    /// Lower bound every signal-signal cosine must exceed.
    pub tau_hi: f64,
    /// Relative size of the per-token perturbation around the shared
    /// signal direction; 0 makes all signal embeddings identical.
    pub perturbation: f64,
    pub seed: u64,
    /// Rejection-sampling budget per embedding.
    pub max_retries: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            n_signal: 2,
            n_distractor: 256,
            tau_lo: 0.4,
            tau_hi: 0.8,
            perturbation: 0.35,
            seed: 42,
            max_retries: 200,
        }
    }
}

/// Exhaustively verified cosine bounds of a planted embedding table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GeometryCertificate {
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub min_intra_signal_cosine: f64,
    pub max_signal_distractor_cosine: f64,
    pub max_distractor_distractor_cosine: f64,
}

impl GeometryCertificate {
    pub fn holds(&self) -> bool {
        self.min_intra_signal_cosine > self.tau_hi
            && self.max_signal_distractor_cosine < self.tau_lo
            && self.max_distractor_distractor_cosine < self.tau_lo
    }
}

/// Frozen embedding table mapping token ids to hidden states.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ToyBackbone {
    table: Matrix,
    n_signal: usize,
    planted: Option<GeometryCertificate>,
}

impl ToyBackbone {
    /// Plain random table (unit-normalized rows), for runs that do not
    /// need the planted separation.
    pub fn random(vocab: usize, dim: usize, seed: u64) -> Result<Self> {
        if vocab == 0 || dim == 0 {
            return Err(GlotError::InvalidConfig("vocab and dim must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Matrix::zeros(vocab, dim);
        for r in 0..vocab {
            let v = random_unit(dim, &mut rng);
            table.row_mut(r).copy_from_slice(&v);
        }
        Ok(Self { table, n_signal: 0, planted: None })
    }

    pub fn vocab_size(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn n_signal(&self) -> usize {
        self.n_signal
    }

    pub fn certificate(&self) -> Option<&GeometryCertificate> {
        self.planted.as_ref()
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn is_signal(&self, id: u32) -> bool {
        (id as usize) < self.n_signal
    }

    /// 0 for class A (first half of the signal ids), 1 for class B.
    pub fn signal_class(&self, id: u32) -> Option<usize> {
        if !self.is_signal(id) {
            return None;
        }
        Some(if (id as usize) < self.n_signal / 2 { 0 } else { 1 })
    }

    pub fn class_ids(&self, class: usize) -> Vec<u32> {
        (0..self.n_signal as u32)
            .filter(|&id| self.signal_class(id) == Some(class))
            .collect()
    }

    pub fn distractor_ids(&self) -> Vec<u32> {
        (self.n_signal as u32..self.vocab_size() as u32).collect()
    }

    /// Looks up each token id's embedding row.
    pub fn embed(&self, tokens: &[u32]) -> Result<HiddenStates> {
        if tokens.is_empty() {
            return Err(GlotError::EmptySentence);
        }
        let mut states = Matrix::zeros(tokens.len(), self.dim());
        for (r, &id) in tokens.iter().enumerate() {
            if id as usize >= self.vocab_size() {
                return Err(GlotError::OutOfVocab { id, vocab: self.vocab_size() });
            }
            states.row_mut(r).copy_from_slice(self.table.row(id as usize));
        }
        Ok(HiddenStates::all_valid(states))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let backbone: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        Ok(backbone)
    }
}

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.iter().map(|x| x / norm).collect();
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
}

/// Builds a planted embedding table: signal embeddings are perturbations
/// of one shared unit direction, distractors are rejection-sampled unit
/// vectors whose cosines against everything accepted so far stay below
/// `tau_lo`. Fails with a feasibility hint when the budget runs out.
pub fn build_planted_geometry(cfg: &PlantedConfig) -> Result<(ToyBackbone, GeometryCertificate)> {
    if cfg.tau_lo >= cfg.tau_hi {
        return Err(GlotError::InvalidConfig(format!(
            "tau_lo {} must be below tau_hi {}",
            cfg.tau_lo, cfg.tau_hi
        )));
    }
    if cfg.n_signal < 1 || cfg.dim < cfg.n_signal + 2 {
        return Err(GlotError::InvalidConfig(
            "need n_signal >= 1 and dim comfortably above n_signal".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Signal cluster: retry the whole set until all intra cosines clear
    // tau_hi.
    let shared = random_unit(cfg.dim, &mut rng);
    let mut signals: Vec<Vec<f64>> = Vec::new();
    let mut attempts = 0;
    loop {
        signals.clear();
        for _ in 0..cfg.n_signal {
            let noise = random_unit(cfg.dim, &mut rng);
            let v: Vec<f64> = shared
                .iter()
                .zip(&noise)
                .map(|(s, n)| s + cfg.perturbation * n)
                .collect();
            let norm = dot(&v, &v).sqrt();
            signals.push(v.iter().map(|x| x / norm).collect());
        }
        let ok = (0..signals.len()).all(|i| {
            (i + 1..signals.len()).all(|j| cosine(&signals[i], &signals[j]) > cfg.tau_hi)
        });
        if ok {
            break;
        }
        attempts += 1;
        if attempts >= cfg.max_retries {
            return Err(GlotError::InfeasibleGeometry(format!(
                "signal cluster with perturbation {} cannot clear tau_hi {}; \
                 lower the perturbation or tau_hi",
                cfg.perturbation, cfg.tau_hi
            )));
        }
    }

    // Distractors, one at a time against everything accepted so far.
    let mut distractors: Vec<Vec<f64>> = Vec::with_capacity(cfg.n_distractor);
    for k in 0..cfg.n_distractor {
        let mut attempts = 0;
        loop {
            let v = random_unit(cfg.dim, &mut rng);
            let clear_signals = signals.iter().all(|s| cosine(&v, s) < cfg.tau_lo);
            let clear_distractors = distractors.iter().all(|d| cosine(&v, d) < cfg.tau_lo);
            if clear_signals && clear_distractors {
                distractors.push(v);
                break;
            }
            attempts += 1;
            if attempts >= cfg.max_retries {
                return Err(GlotError::InfeasibleGeometry(format!(
                    "distractor {k} of {} rejected {attempts} times at tau_lo {}; \
                     raise tau_lo, raise dim, or lower n_distractor",
                    cfg.n_distractor, cfg.tau_lo
                )));
            }
        }
    }

    let vocab = cfg.n_signal + cfg.n_distractor;
    let mut table = Matrix::zeros(vocab, cfg.dim);
    for (r, v) in signals.iter().chain(distractors.iter()).enumerate() {
        table.row_mut(r).copy_from_slice(v);
    }

    let certificate = certify(&table, cfg.n_signal, cfg.tau_lo, cfg.tau_hi);
    if !certificate.holds() {
        return Err(GlotError::InfeasibleGeometry(format!(
            "certificate violated after construction: {certificate:?}"
        )));
    }
    let backbone = ToyBackbone { table, n_signal: cfg.n_signal, planted: Some(certificate) };
    Ok((backbone, certificate))
}

/// Brute-force all-pairs cosine bounds for a table split at `n_signal`.
pub fn certify(table: &Matrix, n_signal: usize, tau_lo: f64, tau_hi: f64) -> GeometryCertificate {
    let vocab = table.rows();
    let mut min_intra = f64::INFINITY;
    let mut max_sig_dis = f64::NEG_INFINITY;
    let mut max_dis_dis = f64::NEG_INFINITY;
    for i in 0..vocab {
        for j in i + 1..vocab {
            let c = cosine(table.row(i), table.row(j));
            match (i < n_signal, j < n_signal) {
                (true, true) => min_intra = min_intra.min(c),
                (false, false) => max_dis_dis = max_dis_dis.max(c),
                _ => max_sig_dis = max_sig_dis.max(c),
            }
        }
    }
    GeometryCertificate {
        tau_lo,
        tau_hi,
        min_intra_signal_cosine: min_intra,
        max_signal_distractor_cosine: max_sig_dis,
        max_distractor_distractor_cosine: max_dis_dis,
    }
}

// ---------------------------------------------------------------------
// Needle-in-a-haystack generation.

/// One element of a signal-phrase pattern: a fixed token id or a slot
/// filled at instantiation time.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TemplateToken {
    Fixed(u32),
    Slot(SlotName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SlotName {
    #[serde(rename = "[X]")]
    X,
    #[serde(rename = "[Y]")]
    Y,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Template {
    pub pattern: Vec<TemplateToken>,
    pub label: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiagnosticSpec {
    pub n_samples: usize,
    /// Total sequence length L.
    pub seq_len: usize,
    /// Distractor ratio d_r in (0, 1).
    pub distractor_ratio: f64,
    pub templates: Vec<Template>,
    pub distractor_vocab: Vec<u32>,
    /// Ids used to fill [X] / [Y] slots.
    pub slot_vocab: Vec<u32>,
    pub seed: u64,
}

impl DiagnosticSpec {
    /// Number of distractor-region tokens, per the floor rule.
    pub fn distractor_len(&self) -> usize {
        (self.seq_len as f64 * self.distractor_ratio).floor() as usize
    }

    /// Signal-block length.
    pub fn signal_len(&self) -> usize {
        self.seq_len - self.distractor_len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.distractor_ratio > 0.0 && self.distractor_ratio < 1.0) {
            return Err(GlotError::InvalidConfig(format!(
                "distractor ratio {} not in (0, 1)",
                self.distractor_ratio
            )));
        }
        if self.templates.is_empty() {
            return Err(GlotError::InvalidConfig("no templates".into()));
        }
        if self.distractor_vocab.is_empty() {
            return Err(GlotError::InvalidConfig("empty distractor vocabulary".into()));
        }
        if self.seq_len == 0 || self.n_samples == 0 {
            return Err(GlotError::InvalidConfig("seq_len and n_samples must be positive".into()));
        }
        let needs_slots = self
            .templates
            .iter()
            .any(|t| t.pattern.iter().any(|p| matches!(p, TemplateToken::Slot(_))));
        if needs_slots && self.slot_vocab.is_empty() {
            return Err(GlotError::InvalidConfig(
                "templates use slots but slot vocabulary is empty".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub injection_pos: usize,
    pub d_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSample {
    pub tokens: Vec<u32>,
    pub label: usize,
    pub meta: SampleMeta,
}

fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Needle-in-a-haystack generation: per sample, pick a template, fill its
/// slots, fit the phrase into the signal block (truncate or pad with
/// distractors), then inject the block at a uniform position of the
/// distractor region. Samples are generated in parallel with per-sample
/// seeds; output order is by sample index.
pub fn generate_diagnostic(spec: &DiagnosticSpec) -> Result<Vec<DiagnosticSample>> {
    spec.validate()?;
    let l_d = spec.distractor_len();
    let l_s = spec.signal_len();
    if l_s == 0 {
        return Err(GlotError::InvalidConfig(
            "distractor ratio leaves no room for the signal block".into(),
        ));
    }

    let truncations = std::sync::atomic::AtomicUsize::new(0);
    let samples: Vec<DiagnosticSample> = crate::par::map_indexed(spec.n_samples, |i| {
        let mut rng = sample_rng(spec.seed, i);
        let template = &spec.templates[rng.gen_range(0..spec.templates.len())];

        let mut signal: Vec<u32> = template
            .pattern
            .iter()
            .map(|t| match t {
                TemplateToken::Fixed(id) => *id,
                TemplateToken::Slot(_) => {
                    spec.slot_vocab[rng.gen_range(0..spec.slot_vocab.len())]
                }
            })
            .collect();
        if signal.len() > l_s {
            signal.truncate(l_s);
            truncations.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        } else {
            let padding = l_s - signal.len();
            for _ in 0..padding {
                signal.push(spec.distractor_vocab[rng.gen_range(0..spec.distractor_vocab.len())]);
            }
        }

        let distractors: Vec<u32> = (0..l_d)
            .map(|_| spec.distractor_vocab[rng.gen_range(0..spec.distractor_vocab.len())])
            .collect();
        let p = rng.gen_range(0..=l_d);

        let mut tokens = Vec::with_capacity(spec.seq_len);
        tokens.extend_from_slice(&distractors[..p]);
        tokens.extend_from_slice(&signal);
        tokens.extend_from_slice(&distractors[p..]);
        debug_assert_eq!(tokens.len(), spec.seq_len);

        DiagnosticSample {
            tokens,
            label: template.label,
            meta: SampleMeta { injection_pos: p, d_r: spec.distractor_ratio },
        }
    });

    let truncated = truncations.into_inner();
    if truncated > 0 {
        log::warn!("{truncated} signal phrases were truncated to fit the signal block");
    }
    Ok(samples)
}

// ---------------------------------------------------------------------
// Relational XOR on the planted geometry.

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct XorSpec {
    pub n_samples: usize,
    pub seq_len: usize,
    pub distractor_ratio: f64,
    /// Total signal tokens in any signal-bearing sample; even so the
    /// both-classes pattern splits it in half. Keeping it constant stops
    /// per-token scorers from reading class counts off the softmax mass.
    pub signal_count: usize,
    pub seed: u64,
}

impl Default for XorSpec {
    fn default() -> Self {
        Self { n_samples: 10_000, seq_len: 256, distractor_ratio: 0.9, signal_count: 4, seed: 42 }
    }
}

/// Label 1 iff exactly one of the two signal classes occurs in the
/// sequence; both or neither gives label 0. The pattern mix is
/// label-balanced with the no-signal pattern deliberately rare, and
/// distractors are drawn without replacement inside a sample so repeated
/// ids cannot fabricate distractor-distractor edges.
pub fn generate_relational_xor(
    spec: &XorSpec,
    backbone: &ToyBackbone,
) -> Result<Vec<DiagnosticSample>> {
    if backbone.n_signal() < 2 {
        return Err(GlotError::InvalidConfig(
            "relational XOR needs a planted backbone with two signal classes".into(),
        ));
    }
    if !(spec.distractor_ratio > 0.0 && spec.distractor_ratio < 1.0) {
        return Err(GlotError::InvalidConfig(format!(
            "distractor ratio {} not in (0, 1)",
            spec.distractor_ratio
        )));
    }
    let l = spec.seq_len;
    let l_d = (l as f64 * spec.distractor_ratio).floor() as usize;
    let l_s = l - l_d;
    if spec.signal_count == 0 || spec.signal_count % 2 != 0 || spec.signal_count > l_s {
        return Err(GlotError::InvalidConfig(format!(
            "signal_count {} must be even, positive, and fit the signal block ({l_s})",
            spec.signal_count
        )));
    }
    let n_distractor_ids = backbone.distractor_ids().len();
    if n_distractor_ids < l {
        return Err(GlotError::InvalidConfig(format!(
            "need at least {l} distractor ids for replacement-free fill, have {n_distractor_ids}"
        )));
    }

    let class_a = backbone.class_ids(0);
    let class_b = backbone.class_ids(1);
    if class_a.is_empty() || class_b.is_empty() {
        return Err(GlotError::InvalidConfig("both signal classes need ids".into()));
    }
    let distractor_ids = backbone.distractor_ids();

    let samples = crate::par::map_indexed(spec.n_samples, |i| {
        let mut rng = sample_rng(spec.seed, i);

        // Pattern mix (out of 16): A-only 4, B-only 4, both 7, neither 1.
        // Labels stay balanced while the free-to-detect no-signal pattern
        // stays rare.
        let roll = rng.gen_range(0u32..16);
        let (n_a, n_b, label) = if roll < 4 {
            (spec.signal_count, 0, 1)
        } else if roll < 8 {
            (0, spec.signal_count, 1)
        } else if roll < 15 {
            (spec.signal_count / 2, spec.signal_count / 2, 0)
        } else {
            (0, 0, 0)
        };

        let mut signal: Vec<u32> = Vec::with_capacity(l_s);
        for _ in 0..n_a {
            signal.push(class_a[rng.gen_range(0..class_a.len())]);
        }
        for _ in 0..n_b {
            signal.push(class_b[rng.gen_range(0..class_b.len())]);
        }

        // Distinct distractors for the block padding plus the haystack.
        let needed = (l_s - signal.len()) + l_d;
        let mut pool: Vec<u32> = distractor_ids.clone();
        for k in 0..needed {
            let j = rng.gen_range(k..pool.len());
            pool.swap(k, j);
        }
        let mut draws = pool.into_iter();
        for _ in 0..l_s - signal.len() {
            signal.push(draws.next().expect("pool sized above"));
        }
        let distractors: Vec<u32> = (0..l_d).map(|_| draws.next().expect("pool sized above")).collect();

        let p = rng.gen_range(0..=l_d);
        let mut tokens = Vec::with_capacity(l);
        tokens.extend_from_slice(&distractors[..p]);
        tokens.extend_from_slice(&signal);
        tokens.extend_from_slice(&distractors[p..]);
        debug_assert_eq!(tokens.len(), l);

        DiagnosticSample {
            tokens,
            label,
            meta: SampleMeta { injection_pos: p, d_r: spec.distractor_ratio },
        }
    });

    Ok(samples)
}

/// Writes samples in the JSONL interchange format.
pub fn save_jsonl(samples: &[DiagnosticSample], path: &Path) -> Result<()> {
    use std::io::Write;
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut w, s)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_templates() -> Vec<Template> {
        vec![
            Template {
                pattern: vec![
                    TemplateToken::Fixed(0),
                    TemplateToken::Slot(SlotName::X),
                    TemplateToken::Fixed(1),
                    TemplateToken::Slot(SlotName::Y),
                ],
                label: 0,
            },
            Template {
                pattern: vec![
                    TemplateToken::Fixed(1),
                    TemplateToken::Slot(SlotName::Y),
                    TemplateToken::Fixed(0),
                    TemplateToken::Slot(SlotName::X),
                ],
                label: 1,
            },
        ]
    }

    fn small_spec() -> DiagnosticSpec {
        DiagnosticSpec {
            n_samples: 200,
            seq_len: 32,
            distractor_ratio: 0.5,
            templates: default_templates(),
            distractor_vocab: (10..60).collect(),
            slot_vocab: (2..8).collect(),
            seed: 7,
        }
    }

    #[test]
    fn every_sequence_has_exact_length_and_counts() {
        let spec = small_spec();
        let samples = generate_diagnostic(&spec).unwrap();
        assert_eq!(samples.len(), 200);
        let l_d = spec.distractor_len();
        let l_s = spec.signal_len();
        assert_eq!(l_d + l_s, spec.seq_len);
        for s in &samples {
            assert_eq!(s.tokens.len(), spec.seq_len);
            assert!(s.meta.injection_pos <= l_d);
            // Everything outside the injected block comes from the
            // distractor vocabulary.
            let p = s.meta.injection_pos;
            for (i, t) in s.tokens.iter().enumerate() {
                if i < p || i >= p + l_s {
                    assert!(spec.distractor_vocab.contains(t));
                }
            }
        }
    }

    #[test]
    fn distractor_region_length_is_floor_exact() {
        for &(l, ratio, expected) in &[(32usize, 0.2, 6usize), (32, 0.5, 16), (32, 0.9, 28), (256, 0.9, 230)] {
            let spec = DiagnosticSpec { seq_len: l, distractor_ratio: ratio, ..small_spec() };
            assert_eq!(spec.distractor_len(), expected);
            assert_eq!(spec.signal_len(), l - expected);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small_spec();
        let a = generate_diagnostic(&spec).unwrap();
        let b = generate_diagnostic(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn no_distractor_room_is_rejected_and_tiny_ratio_works() {
        let mut spec = small_spec();
        spec.distractor_ratio = 1.5;
        assert!(generate_diagnostic(&spec).is_err());

        // Near-zero ratio: the signal block is almost the whole sequence
        // and injection position is forced into {0}.
        let mut spec = small_spec();
        spec.distractor_ratio = 0.01;
        assert_eq!(spec.distractor_len(), 0);
        let samples = generate_diagnostic(&spec).unwrap();
        for s in &samples {
            assert_eq!(s.meta.injection_pos, 0);
        }
    }

    #[test]
    fn planted_geometry_certificate() {
        let cfg = PlantedConfig { n_distractor: 64, ..PlantedConfig::default() };
        let (backbone, cert) = build_planted_geometry(&cfg).unwrap();
        assert!(cert.holds());
        // Re-certify from scratch by brute force.
        let recheck = certify(backbone.table(), backbone.n_signal(), cfg.tau_lo, cfg.tau_hi);
        assert!(recheck.holds());
        assert_eq!(backbone.vocab_size(), cfg.n_signal + 64);
    }

    #[test]
    fn zero_perturbation_gives_cosine_one() {
        let cfg = PlantedConfig {
            perturbation: 0.0,
            n_distractor: 16,
            ..PlantedConfig::default()
        };
        let (backbone, cert) = build_planted_geometry(&cfg).unwrap();
        assert!((cert.min_intra_signal_cosine - 1.0).abs() < 1e-12);
        let a = backbone.table().row(0);
        let b = backbone.table().row(1);
        assert!((cosine(a, b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_geometry_fails_with_hint() {
        // dim 8 with hundreds of distractors under a tight tau_lo cannot
        // be packed.
        let cfg = PlantedConfig {
            dim: 8,
            n_signal: 2,
            n_distractor: 400,
            tau_lo: 0.05,
            max_retries: 20,
            ..PlantedConfig::default()
        };
        assert!(matches!(
            build_planted_geometry(&cfg),
            Err(GlotError::InfeasibleGeometry(_))
        ));
    }

    #[test]
    fn embed_is_table_lookup() {
        let (backbone, _) = build_planted_geometry(&PlantedConfig {
            n_distractor: 8,
            ..PlantedConfig::default()
        })
        .unwrap();
        let h = backbone.embed(&[0, 0, 3]).unwrap();
        assert_eq!(h.states().row(0), h.states().row(1));
        assert_eq!(h.states().row(0), backbone.table().row(0));
        assert!(matches!(
            backbone.embed(&[255]),
            Err(GlotError::OutOfVocab { .. })
        ));

        // One-hot table: embedding is the identity on ids.
        let table = Matrix::identity(4);
        let onehot = ToyBackbone { table: table.clone(), n_signal: 0, planted: None };
        let h = onehot.embed(&[2]).unwrap();
        assert_eq!(h.states().row(0), table.row(2));
    }

    #[test]
    fn planted_mode_separates_signal_from_distractors() {
        let cfg = PlantedConfig { n_distractor: 32, ..PlantedConfig::default() };
        let (backbone, cert) = build_planted_geometry(&cfg).unwrap();
        let h = backbone.embed(&[0, 1, 10, 20]).unwrap();
        let s = crate::numeric::cosine_similarity_matrix(h.states()).unwrap();
        assert!(s.get(0, 1) > cert.tau_hi);
        for &(i, j) in &[(0, 2), (0, 3), (1, 2), (1, 3), (2, 3)] {
            assert!(s.get(i, j) < cert.tau_lo, "pair ({i},{j}) = {}", s.get(i, j));
        }
    }

    #[test]
    fn xor_labels_match_definition() {
        let (backbone, _) = build_planted_geometry(&PlantedConfig {
            n_distractor: 80,
            ..PlantedConfig::default()
        })
        .unwrap();
        let spec = XorSpec { n_samples: 400, seq_len: 32, distractor_ratio: 0.8, signal_count: 4, seed: 3 };
        let samples = generate_relational_xor(&spec, &backbone).unwrap();
        for s in &samples {
            let has_a = s.tokens.iter().any(|&t| backbone.signal_class(t) == Some(0));
            let has_b = s.tokens.iter().any(|&t| backbone.signal_class(t) == Some(1));
            let expected = usize::from(has_a ^ has_b);
            assert_eq!(s.label, expected);
        }
    }

    #[test]
    fn xor_distractors_are_distinct_within_a_sample() {
        let (backbone, _) = build_planted_geometry(&PlantedConfig {
            n_distractor: 64,
            ..PlantedConfig::default()
        })
        .unwrap();
        let spec = XorSpec { n_samples: 100, seq_len: 32, distractor_ratio: 0.8, signal_count: 4, seed: 5 };
        let samples = generate_relational_xor(&spec, &backbone).unwrap();
        for s in &samples {
            let mut seen = std::collections::HashSet::new();
            for &t in &s.tokens {
                if !backbone.is_signal(t) {
                    assert!(seen.insert(t), "distractor {t} repeated");
                }
            }
        }
    }

    #[test]
    fn xor_class_balance() {
        let (backbone, _) = build_planted_geometry(&PlantedConfig {
            n_distractor: 80,
            ..PlantedConfig::default()
        })
        .unwrap();
        let spec = XorSpec { n_samples: 10_000, seq_len: 32, distractor_ratio: 0.8, signal_count: 4, seed: 42 };
        let samples = generate_relational_xor(&spec, &backbone).unwrap();
        let positives = samples.iter().filter(|s| s.label == 1).count() as f64;
        let fraction = positives / samples.len() as f64;
        assert!((0.45..=0.55).contains(&fraction), "balance {fraction}");
    }

    #[test]
    fn backbone_save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("backbone.json");
        let (backbone, _) = build_planted_geometry(&PlantedConfig {
            n_distractor: 8,
            ..PlantedConfig::default()
        })
        .unwrap();
        backbone.save(&path).unwrap();
        let loaded = ToyBackbone::load(&path).unwrap();
        assert_eq!(loaded.table(), backbone.table());
        assert_eq!(loaded.n_signal(), backbone.n_signal());
    }

    #[test]
    fn template_tokens_serde_shape() {
        let t = Template {
            pattern: vec![
                TemplateToken::Fixed(5),
                TemplateToken::Slot(SlotName::X),
                TemplateToken::Slot(SlotName::Y),
            ],
            label: 1,
        };
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(json, r#"{"pattern":[5,"[X]","[Y]"],"label":1}"#);
        let back: Template = serde_json::from_str(&json).unwrap();
        assert_eq!(back.pattern, t.pattern);
    }
}
