//! Synthetic task/format datasets and mixture sampling.
//!
//! Prompts are token sequences `[TASK, FMT, payload.., SEP]` followed by the
//! answer tokens. The task marker names the operation and the format marker
//! names the symbol class the answer is written in, so two datasets can share
//! a task while disagreeing on output format (or the other way round).

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Example;

pub const SEP: usize = 1;

const WORDS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

const MARKERS: [&str; 7] = ["TASK_SUCC", "TASK_LEN", "TASK_REM", "TASK_CAT", "FMT_DIGIT", "FMT_WORD", "FMT_LETTER"];

/// Token strings and their indices. `PAD = 0` and `SEP = 1` are fixed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn standard() -> Self {
        let mut tokens: Vec<String> = vec!["PAD".into(), "SEP".into()];
        tokens.extend((0..10).map(|d| d.to_string()));
        tokens.extend(WORDS.iter().map(|w| w.to_string()));
        tokens.extend((b'a'..=b'z').map(|c| (c as char).to_string()));
        tokens.extend((0..4).map(|k| format!("CAT{k}")));
        tokens.extend(MARKERS.iter().map(|m| m.to_string()));
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    fn must(&self, token: &str) -> usize {
        self.index[token]
    }

    pub fn digit(&self, d: u32) -> usize {
        assert!(d < 10);
        2 + d as usize
    }

    /// Number word for `n` in 1..=20.
    pub fn word(&self, n: u32) -> usize {
        assert!((1..=20).contains(&n));
        12 + (n as usize - 1)
    }

    /// Letter index 0..26 (`a` = 0).
    pub fn letter(&self, i: u32) -> usize {
        assert!(i < 26);
        32 + i as usize
    }

    pub fn category(&self, k: u32) -> usize {
        assert!(k < 4);
        58 + k as usize
    }

    pub fn digits_of(&self, n: u32) -> Vec<usize> {
        n.to_string().bytes().map(|b| self.digit((b - b'0') as u32)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> Option<Vec<&str>> {
        ids.iter().map(|&i| self.token(i)).collect()
    }

    pub fn encode(&self, tokens: &[&str]) -> Option<Vec<usize>> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    P,
    Q,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    pub task_id: Label,
    pub format_id: Label,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        if self.examples.is_empty() {
            return Err(Error::DegenerateBatch(format!("dataset {} is empty", self.name)));
        }
        for ex in &self.examples {
            ex.validate(vocab.len())?;
        }
        Ok(())
    }

    /// Seeded shuffle, then `k` contiguous near-equal splits.
    pub fn split(&self, k: usize, seed: u64) -> Result<Vec<Dataset>> {
        if k == 0 || k > self.len() {
            return Err(Error::Config(format!("cannot split {} examples into {k} subsets", self.len())));
        }
        let mut ex = self.examples.clone();
        ex.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n = ex.len();
        Ok((0..k)
            .map(|i| Dataset {
                name: format!("{}/{i}", self.name),
                examples: ex[i * n / k..(i + 1) * n / k].to_vec(),
                task_id: self.task_id,
                format_id: self.format_id,
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumberFormat {
    Digits,
    Words,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alphabet {
    Letters,
    Digits,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChoiceFormat {
    LetterChoice,
    NumberChoice,
}

fn number_answer(v: &Vocab, fmt: NumberFormat, n: u32) -> Vec<usize> {
    match fmt {
        NumberFormat::Digits => v.digits_of(n),
        NumberFormat::Words => vec![v.word(n)],
    }
}

fn number_marker(v: &Vocab, fmt: NumberFormat) -> usize {
    match fmt {
        NumberFormat::Digits => v.must("FMT_DIGIT"),
        NumberFormat::Words => v.must("FMT_WORD"),
    }
}

/// One successor example. The input is always written in digits; the
/// format selects how the answer is written.
pub fn successor_example(v: &Vocab, fmt: NumberFormat, x: u32) -> Example {
    let mut prompt = vec![v.must("TASK_SUCC"), number_marker(v, fmt)];
    prompt.extend(v.digits_of(x));
    prompt.push(SEP);
    Example::from_parts(&prompt, &number_answer(v, fmt, x + 1))
}

/// Successor examples with `x` drawn uniformly from `xs`.
pub fn gen_successor_over(v: &Vocab, fmt: NumberFormat, xs: &[u32], n: usize, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| successor_example(v, fmt, *xs.choose(&mut rng).expect("non-empty x range"))).collect()
}

pub fn gen_successor(v: &Vocab, fmt: NumberFormat, n: usize, seed: u64) -> Dataset {
    let xs: Vec<u32> = (0..=18).collect();
    let format_id = if fmt == NumberFormat::Digits { Label::P } else { Label::Q };
    Dataset {
        name: format!("successor_{fmt:?}").to_lowercase(),
        examples: gen_successor_over(v, fmt, &xs, n, seed),
        task_id: Label::P,
        format_id,
    }
}

pub fn length_example(v: &Vocab, fmt: NumberFormat, letters: &[u32]) -> Example {
    let mut prompt = vec![v.must("TASK_LEN"), number_marker(v, fmt)];
    prompt.extend(letters.iter().map(|&c| v.letter(c)));
    prompt.push(SEP);
    Example::from_parts(&prompt, &number_answer(v, fmt, letters.len() as u32))
}

pub fn gen_length(v: &Vocab, fmt: NumberFormat, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|_| {
            let k = rng.gen_range(2..=9);
            let letters: Vec<u32> = (0..k).map(|_| rng.gen_range(0..26)).collect();
            length_example(v, fmt, &letters)
        })
        .collect();
    let format_id = if fmt == NumberFormat::Digits { Label::P } else { Label::Q };
    Dataset { name: format!("length_{fmt:?}").to_lowercase(), examples, task_id: Label::Q, format_id }
}

/// Removal example: `string` holds five distinct symbol tokens, `removed`
/// lists four of them; the answer is the one left over.
pub fn removal_example(v: &Vocab, alphabet: Alphabet, string: &[usize], removed: &[usize]) -> Example {
    let marker = match alphabet {
        Alphabet::Letters => v.must("FMT_LETTER"),
        Alphabet::Digits => v.must("FMT_DIGIT"),
    };
    let left: Vec<usize> = string.iter().copied().filter(|s| !removed.contains(s)).collect();
    assert_eq!(left.len(), 1, "exactly one symbol must remain");
    let mut prompt = vec![v.must("TASK_REM"), marker];
    prompt.extend_from_slice(string);
    prompt.extend_from_slice(removed);
    prompt.push(SEP);
    Example::from_parts(&prompt, &left)
}

fn random_removal(v: &Vocab, alphabet: Alphabet, rng: &mut ChaCha8Rng) -> Example {
    let mut digits: Vec<u32> = (0..10).collect();
    digits.shuffle(rng);
    let mut string: Vec<usize> = digits.iter().take(5).map(|&d| v.digit(d)).collect();
    if alphabet == Alphabet::Letters {
        string[4] = v.letter(rng.gen_range(0..26));
    }
    // string[4] is the survivor before shuffling
    let mut removed = string[..4].to_vec();
    removed.shuffle(rng);
    string.shuffle(rng);
    removal_example(v, alphabet, &string, &removed)
}

/// Removal example over five distinct letters; the test-side variant of the
/// removal task, whose survivor is never marked by its symbol class.
fn random_letter_removal(v: &Vocab, rng: &mut ChaCha8Rng) -> Example {
    let mut letters: Vec<u32> = (0..26).collect();
    letters.shuffle(rng);
    let mut string: Vec<usize> = letters.iter().take(5).map(|&c| v.letter(c)).collect();
    let mut removed = string[..4].to_vec();
    removed.shuffle(rng);
    string.shuffle(rng);
    removal_example(v, Alphabet::Letters, &string, &removed)
}

pub fn gen_removal(v: &Vocab, alphabet: Alphabet, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n).map(|_| random_removal(v, alphabet, &mut rng)).collect();
    let format_id = if alphabet == Alphabet::Letters { Label::P } else { Label::Q };
    Dataset { name: format!("removal_{alphabet:?}").to_lowercase(), examples, task_id: Label::P, format_id }
}

/// Seeded static letter → category table.
pub fn category_table(seed: u64) -> [u32; 26] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCA7E_6021);
    let mut t = [0u32; 26];
    for c in t.iter_mut() {
        *c = rng.gen_range(0..4);
    }
    t
}

/// `[TASK_CAT, FMT, symbol, a CAT0 b CAT1 c CAT2 d CAT3, SEP]` (or with
/// choice labels `0..3`), answered by the label of the symbol's category.
pub fn category_example(v: &Vocab, fmt: ChoiceFormat, table: &[u32; 26], symbol: u32) -> Example {
    let label = |k: u32| match fmt {
        ChoiceFormat::LetterChoice => v.letter(k),
        ChoiceFormat::NumberChoice => v.digit(k),
    };
    let marker = match fmt {
        ChoiceFormat::LetterChoice => v.must("FMT_LETTER"),
        ChoiceFormat::NumberChoice => v.must("FMT_DIGIT"),
    };
    let mut prompt = vec![v.must("TASK_CAT"), marker, v.letter(symbol)];
    for k in 0..4 {
        prompt.push(label(k));
        prompt.push(v.category(k));
    }
    prompt.push(SEP);
    Example::from_parts(&prompt, &[label(table[symbol as usize])])
}

pub fn gen_category(v: &Vocab, fmt: ChoiceFormat, n: usize, seed: u64, table_seed: u64) -> Dataset {
    let table = category_table(table_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n).map(|_| category_example(v, fmt, &table, rng.gen_range(0..26))).collect();
    let format_id = if fmt == ChoiceFormat::LetterChoice { Label::P } else { Label::Q };
    Dataset { name: format!("category_{fmt:?}").to_lowercase(), examples, task_id: Label::Q, format_id }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuiteKind {
    A,
    B,
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(SuiteKind::A),
            "B" | "b" => Ok(SuiteKind::B),
            other => Err(Error::Config(format!("unknown suite `{other}` (expected A or B)"))),
        }
    }
}

/// One test dataset and the training datasets that may influence it.
#[derive(Clone, Debug, PartialEq)]
pub struct Suite {
    pub test: Dataset,
    pub train: Vec<Dataset>,
}

impl Suite {
    pub fn train_names(&self) -> Vec<String> {
        self.train.iter().map(|d| d.name.clone()).collect()
    }
}

/// Successor inputs held out from train1 for the suite-A test set.
pub fn heldout_successor_inputs(seed: u64) -> Vec<u32> {
    let mut xs: Vec<u32> = (0..=18).collect();
    xs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x7E57));
    let mut held = xs[..5].to_vec();
    held.sort_unstable();
    held
}

/// Builds suite A (successor/length × digits/words) or suite B
/// (removal/category × letter/number answers). Datasets are named
/// `train1..train4` and `test`.
pub fn build_suite(which: SuiteKind, n: usize, seed: u64) -> Result<Suite> {
    if n == 0 {
        return Err(Error::Config("n_per_dataset must be at least 1".into()));
    }
    let v = Vocab::standard();
    let s = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
    let (test, train) = match which {
        SuiteKind::A => {
            let held = heldout_successor_inputs(seed);
            let rest: Vec<u32> = (0..=18).filter(|x| !held.contains(x)).collect();
            let mk = |fmt, xs: &[u32], k| gen_successor_over(&v, fmt, xs, n, s(k));
            let t1 = Dataset { name: "train1".into(), examples: mk(NumberFormat::Digits, &rest, 1), task_id: Label::P, format_id: Label::P };
            let t2 = gen_successor(&v, NumberFormat::Words, n, s(2)).renamed("train2");
            let t3 = gen_length(&v, NumberFormat::Digits, n, s(3)).renamed("train3");
            let t4 = gen_length(&v, NumberFormat::Words, n, s(4)).renamed("train4");
            let test = Dataset { name: "test".into(), examples: mk(NumberFormat::Digits, &held, 5), task_id: Label::P, format_id: Label::P };
            (test, vec![t1, t2, t3, t4])
        }
        SuiteKind::B => {
            let t1 = gen_removal(&v, Alphabet::Letters, n, s(1)).renamed("train1");
            let t2 = gen_removal(&v, Alphabet::Digits, n, s(2)).renamed("train2");
            let t3 = gen_category(&v, ChoiceFormat::LetterChoice, n, s(3), seed).renamed("train3");
            let t4 = gen_category(&v, ChoiceFormat::NumberChoice, n, s(4), seed).renamed("train4");
            let seen: HashSet<Vec<usize>> = t1.examples.iter().map(Example::prompt).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(s(5));
            let mut examples = Vec::with_capacity(n);
            while examples.len() < n {
                let ex = random_letter_removal(&v, &mut rng);
                if !seen.contains(&ex.prompt()) {
                    examples.push(ex);
                }
            }
            let test = Dataset { name: "test".into(), examples, task_id: Label::P, format_id: Label::P };
            (test, vec![t1, t2, t3, t4])
        }
    };
    Ok(Suite { test, train })
}

/// Four datasets of identical content distribution whose sizes follow
/// `weights`, plus a held-out test set from the same distribution.
pub fn build_size_suite(weights: &[f64], total: usize, seed: u64) -> Result<Suite> {
    if weights.is_empty() || weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::Config("size suite needs positive weights".into()));
    }
    let v = Vocab::standard();
    let sum: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5125);
    let mut draw = |k: usize| -> Vec<Example> { (0..k).map(|_| random_removal(&v, Alphabet::Letters, &mut rng)).collect() };
    let train = weights
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let k = ((w / sum) * total as f64).round().max(1.0) as usize;
            Dataset { name: format!("train{}", i + 1), examples: draw(k), task_id: Label::P, format_id: Label::P }
        })
        .collect::<Vec<_>>();
    let test = Dataset { name: "test".into(), examples: draw(total / 4), task_id: Label::P, format_id: Label::P };
    Ok(Suite { test, train })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionWeighting {
    /// Remaining weights rescaled to sum to one.
    #[default]
    Renormalized,
    /// Every remaining dataset gets the same weight.
    Equal,
}

/// Draws batches i.i.d.: a dataset by weight, then an example uniformly.
#[derive(Clone, Debug)]
pub struct MixtureSampler {
    datasets: Vec<Arc<Dataset>>,
    cumulative: Vec<f64>,
    last_positive: usize,
    rng: ChaCha8Rng,
}

impl MixtureSampler {
    pub fn new(datasets: Vec<Arc<Dataset>>, weights: &[f64], seed: u64) -> Result<Self> {
        if datasets.len() != weights.len() {
            return Err(Error::dim("mixture", "one weight per dataset required"));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config("mixture weights must be finite and non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if datasets.is_empty() || !(total > 0.0) {
            return Err(Error::EmptyMixture("no dataset carries positive weight".into()));
        }
        if let Some(d) = datasets.iter().zip(weights).find(|(d, &w)| w > 0.0 && d.is_empty()) {
            return Err(Error::DegenerateBatch(format!("dataset {} is empty", d.0.name)));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        let last_positive = weights.iter().rposition(|&w| w > 0.0).expect("positive total");
        Ok(MixtureSampler { datasets, cumulative, last_positive, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    /// The mixture without `excluded`, reweighted per `weighting`.
    pub fn excluding(
        datasets: &[Arc<Dataset>],
        weights: &[f64],
        excluded: &str,
        weighting: ExclusionWeighting,
        seed: u64,
    ) -> Result<Self> {
        if !datasets.iter().any(|d| d.name == excluded) {
            return Err(Error::UnknownDataset(excluded.to_string()));
        }
        let (ds, ws): (Vec<_>, Vec<_>) =
            datasets.iter().cloned().zip(weights.iter().copied()).filter(|(d, _)| d.name != excluded).unzip();
        if ds.is_empty() {
            return Err(Error::EmptyMixture(format!("excluding {excluded} leaves no datasets")));
        }
        let ws = match weighting {
            ExclusionWeighting::Renormalized => ws,
            ExclusionWeighting::Equal => vec![1.0; ds.len()],
        };
        Self::new(ds, &ws, seed)
    }

    pub fn datasets(&self) -> &[Arc<Dataset>] {
        &self.datasets
    }

    fn pick(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        // rounding can leave the last cumulative entry a hair below one
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.last_positive)
    }

    pub fn sample_batch(&mut self, batch_size: usize) -> Vec<Example> {
        (0..batch_size)
            .map(|_| {
                let k = self.pick();
                let d = &self.datasets[k];
                d.examples[self.rng.gen_range(0..d.len())].clone()
            })
            .collect()
    }

    /// Index of the next dataset draw; consumes the same randomness as one
    /// sampled example.
    pub fn sample_dataset_index(&mut self) -> usize {
        let k = self.pick();
        let _ = self.rng.gen_range(0..self.datasets[k].len());
        k
    }

    pub fn rng_position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub fn set_rng_position(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }
}

/// Sidecar metadata written next to a dataset file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub name: String,
    pub task_id: Label,
    pub format_id: Label,
    pub vocab_hash: String,
    pub n_examples: usize,
}

pub fn dataset_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.jsonl"))
}

pub fn meta_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("{name}.meta.json"))
}

/// Writes `<dir>/<name>.jsonl` plus `<dir>/<name>.meta.json`.
pub fn write_dataset(dir: &Path, ds: &Dataset, vocab: &Vocab) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut body = String::new();
    for ex in &ds.examples {
        body.push_str(&serde_json::to_string(ex).map_err(|e| Error::Schema(e.to_string()))?);
        body.push('\n');
    }
    let path = dataset_path(dir, &ds.name);
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    let meta = DatasetMeta {
        name: ds.name.clone(),
        task_id: ds.task_id,
        format_id: ds.format_id,
        vocab_hash: vocab.hash(),
        n_examples: ds.len(),
    };
    let mpath = meta_path(dir, &ds.name);
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Schema(e.to_string()))? + "\n";
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

pub fn read_dataset(dir: &Path, name: &str, vocab: &Vocab) -> Result<Dataset> {
    let mpath = meta_path(dir, name);
    let meta_text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::format(&mpath, e.to_string()))?;
    if meta.vocab_hash != vocab.hash() {
        return Err(Error::format(&mpath, "dataset was written with a different vocabulary"));
    }
    let path = dataset_path(dir, name);
    let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example =
            serde_json::from_str(&line).map_err(|e| Error::format(&path, format!("line {}: {e}", i + 1)))?;
        ex.validate(vocab.len()).map_err(|e| Error::format(&path, format!("line {}: {e}", i + 1)))?;
        examples.push(ex);
    }
    if examples.len() != meta.n_examples {
        return Err(Error::format(&path, format!("{} examples, metadata says {}", examples.len(), meta.n_examples)));
    }
    Ok(Dataset { name: meta.name, examples, task_id: meta.task_id, format_id: meta.format_id })
}
