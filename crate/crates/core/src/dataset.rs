//! Synthetic subtask/argument pairs built from {ACTION, ATTRIBUTE, VALUE}
//! triplets, and scoring of argument extractors against them.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::{index, IndexedRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::numbers::{is_number_word, value_to_words};
use crate::codegen::{canonicalize_value, extract_arguments, ArgumentExtractor, CodegenError, ReferenceExtractor};
use crate::corpus::{ApiFunction, ApiParameter, RoleHint, ValueType};
use crate::remote::JsonEndpoint;

pub const MAX_ARITY: usize = 4;
pub const FULL_SCALE: usize = 12_000;
pub const DESK_SCALE: usize = 1_200;
pub const TEST_FRACTION: f64 = 0.10;

pub const ACTIONS: &[&str] = &[
    "tweak", "set", "adjust", "change", "configure", "update", "modify", "tune", "shift", "raise",
];

pub const ATTRIBUTES: &[&str] = &[
    "volume", "brightness", "speed", "temperature", "threshold", "gain", "interval", "timeout", "exposure",
    "frequency", "voltage", "pressure", "humidity", "altitude", "angle", "torque", "bitrate", "delay",
    "capacity", "offset", "duration", "power", "position", "contrast",
];

/// Single-argument sentence frames. The attribute always comes shortly
/// before the value.
pub const FRAMES: &[&str] = &[
    "{action} the device's {attr} parameter to {value}",
    "{action} {attr} to {value}",
    "{action} the {attr} setting to {value}",
    "{action} the value of {attr} to {value}",
    "for {attr}, {action} it to {value}",
    "{action} the {attr} so that it equals {value}",
    "{action} {attr} to a value of {value}",
    "please {action} the {attr} to {value}",
    "{action} the {attr} of the device to {value}",
];

pub const CONNECTORS: &[&str] = &[" and ", ", then ", "; "];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("invalid dataset spec: {0}")]
    Spec(String),
    #[error("generated pair is not recoverable: {instruction:?} ({reason})")]
    Unrecoverable { instruction: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub action: String,
    pub attribute: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtaskArgPair {
    pub instruction: String,
    pub arguments: Vec<(String, String)>,
    pub arity: usize,
}

impl SubtaskArgPair {
    /// A function whose decimal parameters are this pair's attributes.
    pub fn function(&self) -> ApiFunction {
        synthetic_function(self.arguments.iter().map(|(a, _)| a.as_str()))
    }
}

pub fn synthetic_function<'a>(attributes: impl IntoIterator<Item = &'a str>) -> ApiFunction {
    ApiFunction {
        name: "configure_device".into(),
        description: "Configure device attributes.".into(),
        parameters: attributes
            .into_iter()
            .map(|a| ApiParameter {
                name: a.to_string(),
                value_type: ValueType::Decimal,
                range: None,
                units: None,
                description: format!("{a} value"),
            })
            .collect(),
        returns: None,
        role_hint: RoleHint::Normal,
    }
}

fn frame_words() -> impl Iterator<Item = String> {
    FRAMES
        .iter()
        .flat_map(|f| f.split(|c: char| !c.is_ascii_alphabetic() && c != '\''))
        .chain(CONNECTORS.iter().flat_map(|c| c.split(|c: char| !c.is_ascii_alphabetic())))
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Words a random attribute token must not spell.
fn reserved(word: &str) -> bool {
    let w = word.to_lowercase();
    is_number_word(&w)
        || ["true", "false", "on", "off", "yes", "no", "enable", "enabled", "disable", "disabled"].contains(&w.as_str())
        || ACTIONS.contains(&w.as_str())
        || ATTRIBUTES.contains(&w.as_str())
        || frame_words().any(|f| f == w)
}

fn random_token(rng: &mut ChaCha8Rng) -> String {
    loop {
        let len = rng.random_range(2..=4);
        let tok: String = (0..len).map(|_| rng.random_range(b'A'..=b'Z') as char).collect();
        if !reserved(&tok) {
            return tok;
        }
    }
}

/// Canonical value and its rendering: integers 0–999 or one-decimal values,
/// as digits or as words with equal probability.
fn random_value(rng: &mut ChaCha8Rng) -> (String, String) {
    let canonical = if rng.random_bool(0.5) {
        rng.random_range(0..=999u32).to_string()
    } else {
        format!("{}.{}", rng.random_range(0..=99u32), rng.random_range(1..=9u32))
    };
    let rendered = if rng.random_bool(0.5) {
        value_to_words(&canonical).expect("generated values have word forms")
    } else {
        canonical.clone()
    };
    (canonical, rendered)
}

pub fn random_triplet(rng: &mut ChaCha8Rng, taken: &[String]) -> (Triplet, String) {
    let action = ACTIONS.choose(rng).expect("pool non-empty").to_string();
    let attribute = loop {
        let a = if rng.random_bool(0.5) {
            ATTRIBUTES.choose(rng).expect("pool non-empty").to_string()
        } else {
            random_token(rng)
        };
        if !taken.iter().any(|t| t.eq_ignore_ascii_case(&a)) {
            break a;
        }
    };
    let (value, rendered) = random_value(rng);
    (Triplet { action, attribute, value }, rendered)
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// One sentence with `arity` single-argument clauses.
pub fn generate_pair(rng: &mut ChaCha8Rng, arity: usize) -> SubtaskArgPair {
    assert!((1..=MAX_ARITY).contains(&arity), "arity must be 1..=4");
    let mut sentence = String::new();
    let mut arguments: Vec<(String, String)> = Vec::with_capacity(arity);
    for i in 0..arity {
        let taken: Vec<String> = arguments.iter().map(|(a, _)| a.clone()).collect();
        let (t, rendered) = random_triplet(rng, &taken);
        let frame = FRAMES.choose(rng).expect("frames non-empty");
        let clause = frame
            .replace("{action}", &t.action)
            .replace("{attr}", &t.attribute)
            .replace("{value}", &rendered);
        if i > 0 {
            sentence.push_str(CONNECTORS.choose(rng).expect("connectors non-empty"));
            sentence.push_str(&clause);
        } else {
            sentence.push_str(&capitalize(&clause));
        }
        arguments.push((t.attribute, t.value));
    }
    sentence.push('.');
    SubtaskArgPair { instruction: sentence, arguments, arity }
}

/// Checks that the reference extractor recovers exactly the planted bindings.
pub fn verify_pair(pair: &SubtaskArgPair, extractor: &dyn ArgumentExtractor) -> Result<(), String> {
    let got = extract_arguments(&pair.instruction, &pair.function(), extractor).map_err(|e| e.to_string())?;
    let planted: Vec<(String, String)> = pair
        .arguments
        .iter()
        .map(|(a, v)| (a.clone(), canonicalize_value(v, ValueType::Decimal).unwrap_or_else(|| v.clone())))
        .collect();
    if got.bindings == planted {
        Ok(())
    } else {
        Err(format!("extracted {:?}, planted {:?}", got.bindings, planted))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    /// Pairs per arity, index 0 is arity 1.
    pub per_arity: [usize; MAX_ARITY],
    pub test_fraction: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn full(seed: u64) -> Self {
        DatasetSpec { per_arity: [FULL_SCALE; MAX_ARITY], test_fraction: TEST_FRACTION, seed }
    }

    pub fn desk(seed: u64) -> Self {
        DatasetSpec { per_arity: [DESK_SCALE; MAX_ARITY], test_fraction: TEST_FRACTION, seed }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.per_arity.contains(&0) {
            return Err(DatasetError::Spec("every arity needs at least one pair".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(DatasetError::Spec(format!("test fraction {} not in (0, 1)", self.test_fraction)));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.per_arity.iter().sum()
    }

    /// Test pairs per arity. The total is `round(total * test_fraction)`,
    /// apportioned by largest remainder so equal arities get equal shares.
    pub fn test_counts(&self) -> [usize; MAX_ARITY] {
        let target = (self.total() as f64 * self.test_fraction).round() as usize;
        let quotas = self.per_arity.map(|n| n as f64 * self.test_fraction);
        let mut counts = quotas.map(|q| q.floor() as usize);
        let mut order: Vec<usize> = (0..MAX_ARITY).collect();
        order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())).then(a.cmp(&b)));
        let short = target.saturating_sub(counts.iter().sum());
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuningMetadata {
    pub method: String,
    pub lora_rank: u32,
    pub lora_alpha: u32,
    pub lora_dropout: f64,
    pub batch_size: u32,
    pub learning_rate: f64,
    pub optimizer: String,
}

impl Default for FineTuningMetadata {
    fn default() -> Self {
        FineTuningMetadata {
            method: "LoRA".into(),
            lora_rank: 32,
            lora_alpha: 32,
            lora_dropout: 0.1,
            batch_size: 2,
            learning_rate: 2e-2,
            optimizer: "AdamW 8-bit".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: DatasetSpec,
    pub total: usize,
    pub train: usize,
    pub test: usize,
    pub test_per_arity: [usize; MAX_ARITY],
    pub train_file: String,
    pub test_file: String,
    pub actions: Vec<String>,
    pub attributes: Vec<String>,
    pub frames: Vec<String>,
    pub connectors: Vec<String>,
    pub fine_tuning: FineTuningMetadata,
}

pub struct GeneratedDataset {
    pub train: Vec<SubtaskArgPair>,
    pub test: Vec<SubtaskArgPair>,
    pub manifest: DatasetManifest,
}

/// Build every pair, verify it against the reference extractor, and split.
pub fn build_dataset(spec: &DatasetSpec) -> Result<GeneratedDataset, DatasetError> {
    spec.validate()?;
    let test_counts = spec.test_counts();
    let mut train = Vec::with_capacity(spec.total());
    let mut test = Vec::new();
    for (i, &count) in spec.per_arity.iter().enumerate() {
        let arity = i + 1;
        // Independent stream per arity.
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(arity as u64);
        let pairs: Vec<SubtaskArgPair> = (0..count).map(|_| generate_pair(&mut rng, arity)).collect();
        for p in &pairs {
            verify_pair(p, &ReferenceExtractor).map_err(|reason| DatasetError::Unrecoverable {
                instruction: p.instruction.clone(),
                reason,
            })?;
        }
        let mut in_test = vec![false; count];
        for j in index::sample(&mut rng, count, test_counts[i]) {
            in_test[j] = true;
        }
        for (p, t) in pairs.into_iter().zip(in_test) {
            if t { test.push(p) } else { train.push(p) }
        }
    }
    let manifest = DatasetManifest {
        spec: spec.clone(),
        total: spec.total(),
        train: train.len(),
        test: test.len(),
        test_per_arity: test_counts,
        train_file: "train.jsonl".into(),
        test_file: "test.jsonl".into(),
        actions: ACTIONS.iter().map(|s| s.to_string()).collect(),
        attributes: ATTRIBUTES.iter().map(|s| s.to_string()).collect(),
        frames: FRAMES.iter().map(|s| s.to_string()).collect(),
        connectors: CONNECTORS.iter().map(|s| s.to_string()).collect(),
        fine_tuning: FineTuningMetadata::default(),
    };
    Ok(GeneratedDataset { train, test, manifest })
}

pub fn write_jsonl(path: &Path, pairs: &[SubtaskArgPair]) -> Result<(), DatasetError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for p in pairs {
        let line = serde_json::to_string(p).expect("pairs serialize");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl(path: &Path) -> Result<Vec<SubtaskArgPair>, DatasetError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| DatasetError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}

/// Write `train.jsonl`, `test.jsonl` and `manifest.json` into `out_dir`.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest, DatasetError> {
    let data = build_dataset(spec)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_jsonl(&out_dir.join(&data.manifest.train_file), &data.train)?;
    write_jsonl(&out_dir.join(&data.manifest.test_file), &data.test)?;
    let manifest_path = out_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&data.manifest).expect("manifest serializes");
    fs::write(&manifest_path, text + "\n").map_err(io_err(&manifest_path))?;
    Ok(data.manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArityScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFailure {
    pub index: usize,
    pub instruction: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub extractor: String,
    pub accuracy: f64,
    pub total: usize,
    pub per_arity: BTreeMap<usize, ArityScore>,
    pub failures: Vec<EvalFailure>,
}

/// A pair counts only if every value is extracted and bound to the right attribute.
pub fn evaluate_extractor(extractor: &dyn ArgumentExtractor, pairs: &[SubtaskArgPair]) -> EvalReport {
    let mut per_arity: BTreeMap<usize, ArityScore> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut correct = 0;
    for (index, p) in pairs.iter().enumerate() {
        let score = per_arity.entry(p.arity).or_insert(ArityScore { correct: 0, total: 0, accuracy: 0.0 });
        score.total += 1;
        match verify_pair(p, extractor) {
            Ok(()) => {
                score.correct += 1;
                correct += 1;
            }
            Err(reason) => failures.push(EvalFailure { index, instruction: p.instruction.clone(), reason }),
        }
    }
    for s in per_arity.values_mut() {
        s.accuracy = s.correct as f64 / s.total as f64;
    }
    EvalReport {
        extractor: extractor.name().to_string(),
        accuracy: if pairs.is_empty() { 0.0 } else { correct as f64 / pairs.len() as f64 },
        total: pairs.len(),
        per_arity,
        failures,
    }
}

/// Returns nothing, for every sentence.
#[derive(Debug, Default, Clone, Copy)]
pub struct EmptyExtractor;

impl ArgumentExtractor for EmptyExtractor {
    fn name(&self) -> &str {
        "empty"
    }

    fn extract_values(&self, _: &str, _: &ApiFunction) -> Result<Vec<String>, CodegenError> {
        Ok(Vec::new())
    }
}

/// The reference extractor, but only for single-argument functions.
#[derive(Debug, Default, Clone, Copy)]
pub struct SingleArgumentExtractor;

impl ArgumentExtractor for SingleArgumentExtractor {
    fn name(&self) -> &str {
        "single-argument"
    }

    fn extract_values(&self, text: &str, function: &ApiFunction) -> Result<Vec<String>, CodegenError> {
        if function.arity() == 1 {
            ReferenceExtractor.extract_values(text, function)
        } else {
            Ok(Vec::new())
        }
    }
}

/// Rewrites generated sentences through a hosted model. Paraphrased output is
/// not held to the exact-recovery check.
pub trait Paraphraser {
    fn paraphrase(&self, sentence: &str) -> Result<String, String>;
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParaphraseBody {
    pub text: String,
}

pub struct RemoteParaphraser {
    endpoint: JsonEndpoint,
}

impl RemoteParaphraser {
    pub fn new(endpoint: JsonEndpoint) -> Self {
        RemoteParaphraser { endpoint }
    }
}

impl Paraphraser for RemoteParaphraser {
    fn paraphrase(&self, sentence: &str) -> Result<String, String> {
        let resp: ParaphraseBody = self.endpoint.post(&ParaphraseBody { text: sentence.to_string() })?;
        Ok(resp.text)
    }
}

/// Paraphrase every instruction; a failed call keeps the template sentence.
pub fn paraphrase_all(pairs: &mut [SubtaskArgPair], paraphraser: &dyn Paraphraser) -> usize {
    let mut changed = 0;
    for p in pairs {
        if let Ok(text) = paraphraser.paraphrase(&p.instruction) {
            p.instruction = text;
            changed += 1;
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn worked_example_recovers() {
        let pair = SubtaskArgPair {
            instruction: "Tweak the device's ABC parameter to twenty-six.".into(),
            arguments: vec![("ABC".into(), "26".into())],
            arity: 1,
        };
        assert!(verify_pair(&pair, &ReferenceExtractor).is_ok());
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate_pair(&mut ChaCha8Rng::seed_from_u64(4), 3);
        let b = generate_pair(&mut ChaCha8Rng::seed_from_u64(4), 3);
        assert_eq!(a, b);
        assert_eq!(a.arguments.len(), 3);
    }

    #[test]
    fn random_tokens_avoid_reserved_words() {
        for w in ["ONE", "TEN", "ON", "NO", "SET", "THE", "TO", "IT", "OF", "AND"] {
            assert!(reserved(w), "{w}");
        }
        assert!(!reserved("ABC"));
    }

    #[test]
    fn split_arithmetic() {
        let spec = DatasetSpec { per_arity: [3, 3, 2, 2], test_fraction: 0.5, seed: 1 };
        let d = build_dataset(&spec).unwrap();
        assert_eq!(d.train.len() + d.test.len(), 10);
        // The leftover pair goes to the lowest arity among equal remainders.
        assert_eq!(d.test.len(), 5);
        assert_eq!(spec.test_counts(), [2, 1, 1, 1]);
        assert!(DatasetSpec { per_arity: [1, 1, 1, 0], test_fraction: 0.1, seed: 0 }.validate().is_err());
        assert!(DatasetSpec { per_arity: [1; 4], test_fraction: 1.0, seed: 0 }.validate().is_err());
    }

    #[test]
    fn crippled_extractors() {
        let d = build_dataset(&DatasetSpec { per_arity: [40; 4], test_fraction: 0.5, seed: 2 }).unwrap();
        assert_eq!(evaluate_extractor(&ReferenceExtractor, &d.test).accuracy, 1.0);
        assert_eq!(evaluate_extractor(&EmptyExtractor, &d.test).accuracy, 0.0);
        assert_eq!(evaluate_extractor(&SingleArgumentExtractor, &d.test).accuracy, 0.25);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { per_arity: [20; 4], test_fraction: 0.1, seed: 9 };
        let m = generate_dataset(&spec, dir.path()).unwrap();
        let test = read_jsonl(&dir.path().join(&m.test_file)).unwrap();
        assert_eq!(test.len(), 8);
        assert_eq!(m.fine_tuning.lora_rank, 32);
        let line = fs::read_to_string(dir.path().join("test.jsonl")).unwrap();
        assert!(line.starts_with("{\"instruction\":"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn every_generated_pair_is_recoverable(seed: u64, arity in 1usize..=4) {
            let pair = generate_pair(&mut ChaCha8Rng::seed_from_u64(seed), arity);
            prop_assert_eq!(pair.arguments.len(), arity);
            prop_assert!(verify_pair(&pair, &ReferenceExtractor).is_ok(), "{:?}", pair);
        }

        #[test]
        fn test_counts_apportion_the_rounded_total(per_arity in prop::array::uniform4(1usize..5000), fraction in 0.01f64..0.99) {
            let spec = DatasetSpec { per_arity, test_fraction: fraction, seed: 0 };
            let counts = spec.test_counts();
            let total: usize = per_arity.iter().sum();
            prop_assert_eq!(counts.iter().sum::<usize>(), (total as f64 * fraction).round() as usize);
            for (c, n) in counts.iter().zip(per_arity) {
                let quota = n as f64 * fraction;
                prop_assert!(*c as f64 >= quota.floor() && *c as f64 <= quota.ceil(), "{} vs {}", c, quota);
            }
        }
    }
}
