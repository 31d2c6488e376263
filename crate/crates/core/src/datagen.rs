//! Synthetic benchmark generator.
//!
//! The generated world plants a selectional-preference rule at the hypernym
//! level: every word belongs to one or more classes (its senses), and
//! whether a prepositional phrase attaches to the noun candidate or falls
//! back to the verb is a pure function of (preposition, noun-candidate
//! class, dependent class) — never of surface identity. Ambiguous words are
//! disambiguated by the preposition's topic set, so the intended sense is
//! always recoverable from the surface sequence. Because labels key on
//! classes, a model that grounds words in the class hierarchy can solve
//! held-out ("rare") words whose classes were trained, while a type-level
//! model cannot.
//!
//! Class indices below `noun_classes` are noun classes; the rest are verb
//! classes. Prepositions are function words and intentionally stay outside
//! the grounding (they take the out-of-vocabulary path).

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;

use crate::attachment::PPAInstance;
use crate::error::{Error, Result};
use crate::ontology::Pos;

/// Shape of the generated world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Total hypernym classes; the first half are noun classes, the rest
    /// verb classes.
    pub classes: usize,
    pub words_per_class: usize,
    /// Senses given to each ambiguous word (all in distinct classes of the
    /// word's POS).
    pub senses_per_ambiguous: usize,
    /// Fraction of each class's words that are ambiguous.
    pub ambiguous_fraction: f64,
    pub prepositions: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub rare_size: usize,
    /// Fraction of each class's words held out of training for the
    /// rare-word split.
    pub rare_holdout_fraction: f64,
    /// Fraction of (preposition, noun class, dependent class) triples that
    /// attach to the noun; the table is balanced by construction.
    pub compat_density: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            words_per_class: 40,
            senses_per_ambiguous: 2,
            ambiguous_fraction: 0.3,
            prepositions: 3,
            train_size: 2000,
            test_size: 500,
            rare_size: 300,
            rare_holdout_fraction: 0.15,
            compat_density: 0.5,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn noun_classes(&self) -> usize {
        self.classes.div_ceil(2)
    }

    pub fn verb_classes(&self) -> usize {
        self.classes / 2
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("classes", self.classes),
            ("words_per_class", self.words_per_class),
            ("senses_per_ambiguous", self.senses_per_ambiguous),
            ("prepositions", self.prepositions),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config { detail: format!("{name} must be at least 1") });
            }
        }
        for (name, v) in [
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("rare_holdout_fraction", self.rare_holdout_fraction),
            ("compat_density", self.compat_density),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config { detail: format!("{name} must be in [0, 1], got {v}") });
            }
        }
        if self.ambiguous_fraction > 0.0 && self.senses_per_ambiguous > 1 {
            let need = self.senses_per_ambiguous;
            if self.noun_classes() < need || self.verb_classes() < need {
                return Err(Error::Config {
                    detail: format!(
                        "ambiguous words need {need} classes per POS; got {} noun and {} verb classes",
                        self.noun_classes(),
                        self.verb_classes()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// A generated word: its surface form and its classes in sense-rank order
/// (`classes[0]` is the primary class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynWord {
    pub name: String,
    pub pos: Pos,
    pub classes: Vec<usize>,
}

/// The generated class hierarchy and word inventory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticOntology {
    pub noun_classes: usize,
    pub verb_classes: usize,
    pub nouns: Vec<SynWord>,
    pub verbs: Vec<SynWord>,
}

impl SyntheticOntology {
    /// Sense id of `word` at `rank`.
    fn sense_id(word: &SynWord, rank: usize) -> String {
        format!("{}.{}.{rank:02}", word.name, word.pos.as_char())
    }

    fn class_id(class: usize, pos: Pos) -> String {
        format!("class{class:02}.{}.01", pos.as_char())
    }

    /// Emit the grounding (JSON lines): one root, one node per class, one
    /// leaf sense per (word, rank); every path is `[sense, class, root]`.
    pub fn emit_grounding<W: Write>(&self, mut w: W) -> Result<()> {
        for word in self.nouns.iter().chain(&self.verbs) {
            let senses: Vec<serde_json::Value> = word
                .classes
                .iter()
                .enumerate()
                .map(|(rank, &class)| {
                    let sense = Self::sense_id(word, rank);
                    serde_json::json!({
                        "id": sense,
                        "path": [sense, Self::class_id(class, word.pos), "root.n.01"],
                    })
                })
                .collect();
            let line = serde_json::json!({
                "word": word.name,
                "pos": word.pos.as_char().to_string(),
                "senses": senses,
            });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn grounding_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.emit_grounding(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn find_word(&self, name: &str) -> Option<&SynWord> {
        self.nouns.iter().chain(&self.verbs).find(|w| w.name == name)
    }
}

/// The planted rule: per-preposition topic sets (sense selectors) and
/// attachment compatibility over (noun-candidate class, dependent class).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedRules {
    pub preposition_names: Vec<String>,
    /// `topic[p][c]`: preposition `p` selects noun class `c` when
    /// disambiguating.
    pub topic: Vec<Vec<bool>>,
    /// `compat[p][c_noun][c_dep]`: attach to the noun candidate.
    pub compat: Vec<Vec<Vec<bool>>>,
}

impl PlantedRules {
    /// The class a word takes in the context of preposition `p`, when
    /// unambiguous: a single-sense word keeps its class; an ambiguous word
    /// resolves through the topic set if exactly one of its classes is
    /// selected.
    pub fn intended_class(&self, word: &SynWord, prep: usize) -> Option<usize> {
        if word.classes.len() == 1 {
            return Some(word.classes[0]);
        }
        let selected: Vec<usize> = word
            .classes
            .iter()
            .copied()
            .filter(|&c| self.topic[prep].get(c).copied().unwrap_or(false))
            .collect();
        if selected.len() == 1 {
            Some(selected[0])
        } else {
            None
        }
    }

    /// 0 = verb candidate, 1 = noun candidate.
    pub fn label(&self, prep: usize, noun_class: usize, dep_class: usize) -> usize {
        usize::from(self.compat[prep][noun_class][dep_class])
    }
}

/// Generated dataset splits plus the rules that labeled them.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub train: Vec<PPAInstance>,
    pub test: Vec<PPAInstance>,
    pub rare: Vec<PPAInstance>,
    pub rules: PlantedRules,
}

fn gen_words(
    spec: &SyntheticSpec,
    pos: Pos,
    class_offset: usize,
    class_count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<SynWord> {
    let prefix = if pos == Pos::Noun { "noun" } else { "verb" };
    let ambiguous_per_class =
        ((spec.words_per_class as f64) * spec.ambiguous_fraction).round() as usize;
    let mut words = Vec::new();
    for class_pos in 0..class_count {
        let class = class_offset + class_pos;
        for i in 0..spec.words_per_class {
            let idx = class_pos * spec.words_per_class + i;
            let mut classes = vec![class];
            if i < ambiguous_per_class.min(spec.words_per_class) && spec.senses_per_ambiguous > 1 {
                let mut others: Vec<usize> = (class_offset..class_offset + class_count)
                    .filter(|&c| c != class)
                    .collect();
                others.shuffle(rng);
                classes.extend(others.into_iter().take(spec.senses_per_ambiguous - 1));
            }
            words.push(SynWord { name: format!("{prefix}{idx:03}"), pos, classes });
        }
    }
    words
}

/// Generate the class hierarchy and word inventory.
pub fn gen_ontology(spec: &SyntheticSpec) -> Result<SyntheticOntology> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0xa076_1d64_78bd_642f));
    let nouns = gen_words(spec, Pos::Noun, 0, spec.noun_classes(), &mut rng);
    let verbs = gen_words(spec, Pos::Verb, spec.noun_classes(), spec.verb_classes(), &mut rng);
    Ok(SyntheticOntology {
        noun_classes: spec.noun_classes(),
        verb_classes: spec.verb_classes(),
        nouns,
        verbs,
    })
}

/// Generate the preposition inventory with its topic sets and a balanced
/// compatibility table.
pub fn gen_rules(spec: &SyntheticSpec) -> Result<PlantedRules> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0xe703_7ed1_a0b4_28db));
    let nc = spec.noun_classes();
    let mut topic = Vec::new();
    let mut compat = Vec::new();
    let mut names = Vec::new();
    for p in 0..spec.prepositions {
        names.push(format!("prep{p:02}"));
        // The first `nc` prepositions get singleton topic sets covering
        // every noun class, so each sense of an ambiguous word is selectable
        // by some preposition; the rest draw random proper subsets.
        let selected: Vec<usize> = if p < nc {
            vec![p]
        } else if nc == 1 {
            vec![0]
        } else {
            let size = rng.random_range(1..nc);
            let mut all: Vec<usize> = (0..nc).collect();
            all.shuffle(&mut rng);
            all.truncate(size);
            all
        };
        topic.push((0..nc).map(|c| selected.contains(&c)).collect());

        // Balanced compatibility: exactly round(density * cells) attach to
        // the noun, shuffled.
        let cells = nc * nc;
        let trues = ((cells as f64) * spec.compat_density).round() as usize;
        let mut flat: Vec<bool> = (0..cells).map(|i| i < trues).collect();
        flat.shuffle(&mut rng);
        compat.push((0..nc).map(|i| flat[i * nc..(i + 1) * nc].to_vec()).collect());
    }
    Ok(PlantedRules { preposition_names: names, topic, compat })
}

/// Split a word pool into (training, holdout) by holding out the last
/// `fraction` of each class block.
fn split_pool(words: &[SynWord], per_class: usize, fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let holdout_per_class = ((per_class as f64) * fraction).round() as usize;
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for (i, _) in words.iter().enumerate() {
        if i % per_class >= per_class - holdout_per_class {
            holdout.push(i);
        } else {
            train.push(i);
        }
    }
    (train, holdout)
}

/// Generate the train/test/rare splits. Labels are a pure function of the
/// planted rules; the rare split draws its content words exclusively from
/// the held-out inventory.
pub fn gen_dataset(spec: &SyntheticSpec, ontology: &SyntheticOntology) -> Result<SyntheticDataset> {
    spec.validate()?;
    if ontology.verb_classes == 0 {
        return Err(Error::Data {
            detail: "dataset generation needs at least one verb class (classes >= 2)".into(),
        });
    }
    let rules = gen_rules(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x2545_f491_4f6c_dd1d));

    let (noun_train, noun_holdout) =
        split_pool(&ontology.nouns, spec.words_per_class, spec.rare_holdout_fraction);
    let (verb_train, verb_holdout) =
        split_pool(&ontology.verbs, spec.words_per_class, spec.rare_holdout_fraction);

    let mut seen: HashSet<(usize, usize, usize, usize)> = HashSet::new();
    let mut sample_split = |rng: &mut ChaCha8Rng,
                            nouns: &[usize],
                            verbs: &[usize],
                            size: usize,
                            what: &str|
     -> Result<Vec<PPAInstance>> {
        if size == 0 {
            return Ok(Vec::new());
        }
        if nouns.len() < 2 || verbs.is_empty() {
            return Err(Error::Data {
                detail: format!("{what}: word pool too small (check rare_holdout_fraction)"),
            });
        }
        // Stratified by label so the marginal is balanced regardless of how
        // the topic sets skew the realized class pairs.
        let mut remaining = [size - size / 2, size / 2];
        let mut out = Vec::new();
        let mut attempts = 0usize;
        let budget = size.saturating_mul(1000).max(10_000);
        while out.len() < size {
            attempts += 1;
            if attempts > budget {
                return Err(Error::Data {
                    detail: format!(
                        "{what}: could not sample {size} instances (planted rules unsatisfiable \
                         for this pool); got {}",
                        out.len()
                    ),
                });
            }
            let v = verbs[rng.random_range(0..verbs.len())];
            let n = nouns[rng.random_range(0..nouns.len())];
            let d = nouns[rng.random_range(0..nouns.len())];
            let p = rng.random_range(0..spec.prepositions);
            let noun_word = &ontology.nouns[n];
            let dep_word = &ontology.nouns[d];
            let (Some(c_n), Some(c_d)) =
                (rules.intended_class(noun_word, p), rules.intended_class(dep_word, p))
            else {
                continue;
            };
            let label = rules.label(p, c_n, c_d);
            if remaining[label] == 0 {
                continue;
            }
            if !seen.insert((v, n, p, d)) {
                continue;
            }
            remaining[label] -= 1;
            out.push(PPAInstance::new(
                vec![
                    (ontology.verbs[v].name.clone(), Pos::Verb),
                    (noun_word.name.clone(), Pos::Noun),
                ],
                rules.preposition_names[p].clone(),
                dep_word.name.clone(),
                label,
            )?);
        }
        Ok(out)
    };

    let train = sample_split(&mut rng, &noun_train, &verb_train, spec.train_size, "train")?;
    let test = sample_split(&mut rng, &noun_train, &verb_train, spec.test_size, "test")?;
    let rare = sample_split(&mut rng, &noun_holdout, &verb_holdout, spec.rare_size, "rare")?;
    Ok(SyntheticDataset { train, test, rare, rules })
}
