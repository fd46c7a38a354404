#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use procwriter::data::{DatasetSplit, Process, ProcessExample, SplitName, SubEventSequence};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn tiny_dataset() -> PathBuf {
    fixtures_dir().join("tiny")
}

const ONSETS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// A pronounceable word that is unique for every `id` below 70^3.
pub fn pseudo_word(id: usize) -> String {
    let base = ONSETS.len() * VOWELS.len();
    let mut n = id;
    let mut word = String::new();
    for _ in 0..3 {
        let syl = n % base;
        n /= base;
        word.push(ONSETS[syl / VOWELS.len()] as char);
        word.push(VOWELS[syl % VOWELS.len()] as char);
    }
    word
}

fn sentence(words: &[String]) -> String {
    let mut s = words.join(" ");
    s[..1].make_ascii_uppercase();
    s.push('.');
    s
}

/// Processes whose titles and steps share no content word with any other
/// process. Process `i` draws from words `first_id + 8i .. first_id + 8i + 8`;
/// the title is the first two of them and every step mentions one.
pub fn disjoint_split(
    name: SplitName,
    n_processes: usize,
    first_id: usize,
    seed: u64,
) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n_processes)
        .map(|i| {
            let vocab: Vec<String> = (0..8).map(|j| pseudo_word(first_id + 8 * i + j)).collect();
            let title = format!("{} {}", vocab[0], vocab[1]);
            let m = rng.gen_range(2..=6);
            let mut steps: Vec<String> = Vec::new();
            while steps.len() < m {
                let len = rng.gen_range(2..=4);
                let mut words = vec![vocab[rng.gen_range(0..2)].clone()];
                words.extend((1..len).map(|_| vocab[rng.gen_range(2..8)].clone()));
                let s = sentence(&words);
                if !steps.contains(&s) {
                    steps.push(s);
                }
            }
            ProcessExample::new(
                Process::new(title).unwrap(),
                vec![SubEventSequence::from_texts(steps).unwrap()],
            )
            .unwrap()
        })
        .collect();
    DatasetSplit::new(name, examples)
}

/// A corpus of themed processes. Each theme has a verb and a fixed recipe of
/// step templates; a process applies the theme to an object, and each
/// reference keeps most recipe steps in order. Splits use disjoint objects.
pub struct ThemedCorpus {
    pub train: DatasetSplit,
    pub valid: DatasetSplit,
    pub test: DatasetSplit,
}

pub fn themed_corpus(n_themes: usize, objects: [usize; 3], seed: u64) -> ThemedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next_id = 50_000;
    let mut fresh = || {
        next_id += 1;
        pseudo_word(next_id)
    };
    let themes: Vec<(String, Vec<Vec<String>>)> = (0..n_themes)
        .map(|_| {
            let verb = fresh();
            let recipe = (0..rng.gen_range(3..=6))
                .map(|_| (0..rng.gen_range(2..=4)).map(|_| fresh()).collect())
                .collect();
            (verb, recipe)
        })
        .collect();
    let mut make = |name: SplitName, count: usize, rng: &mut ChaCha8Rng| {
        let mut examples = Vec::new();
        for _ in 0..count {
            let (verb, recipe) = themes.choose(rng).unwrap();
            let object = fresh();
            let references = (0..rng.gen_range(1..=2))
                .map(|_| {
                    let mut steps: Vec<String> = Vec::new();
                    for template in recipe {
                        if steps.is_empty() || rng.gen_bool(0.8) {
                            let mut words = template.clone();
                            words.insert(1.min(words.len()), object.clone());
                            steps.push(sentence(&words));
                        }
                    }
                    SubEventSequence::from_texts(steps).unwrap()
                })
                .collect();
            examples.push(
                ProcessExample::new(
                    Process::new(format!("{verb} the {object}")).unwrap(),
                    references,
                )
                .unwrap(),
            );
        }
        DatasetSplit::new(name, examples)
    };
    let train = make(SplitName::Train, objects[0], &mut rng);
    let valid = make(SplitName::Valid, objects[1], &mut rng);
    let test = make(SplitName::Test, objects[2], &mut rng);
    ThemedCorpus { train, valid, test }
}

pub fn write_dataset(dir: &Path, splits: &[&DatasetSplit]) {
    std::fs::create_dir_all(dir).unwrap();
    for split in splits {
        split
            .write_jsonl(&dir.join(split.name.file_name()))
            .unwrap();
    }
}
