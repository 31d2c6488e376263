//! Ontology ingestion: map each (word, POS) to its ordered senses and their
//! hypernym paths, and produce padded per-token grounding grids.
//!
//! Senses are ordered by descending corpus frequency (rank 0 first). Every
//! sense's hypernym path starts with the sense itself and runs toward the
//! ontology root. Word types absent from the table get a single synthetic
//! `word.pos.oov` concept; the `oov` field is outside the real id grammar
//! (`lemma.pos.NN`), so synthetic ids can never collide with real ones.

use std::collections::hash_map::Entry as MapEntry;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Part-of-speech tag. Grounding files accept `n`, `v`, `a`, `r`;
/// prepositions (`p`) occur only on tokens and always take the OOV path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pos {
    #[serde(rename = "n")]
    Noun,
    #[serde(rename = "v")]
    Verb,
    #[serde(rename = "a")]
    Adj,
    #[serde(rename = "r")]
    Adv,
    #[serde(rename = "p")]
    Prep,
}

impl Pos {
    pub fn as_char(self) -> char {
        match self {
            Pos::Noun => 'n',
            Pos::Verb => 'v',
            Pos::Adj => 'a',
            Pos::Adv => 'r',
            Pos::Prep => 'p',
        }
    }

    pub fn from_char(c: char) -> Option<Pos> {
        match c {
            'n' => Some(Pos::Noun),
            'v' => Some(Pos::Verb),
            'a' => Some(Pos::Adj),
            'r' => Some(Pos::Adv),
            'p' => Some(Pos::Prep),
            _ => None,
        }
    }
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Interned handle to a concept (synset) id string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConceptId(u32);

impl ConceptId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Split `lemma.pos.field` from the right; the lemma may itself contain
/// dots. Returns (lemma, pos char, trailing field).
fn split_concept_id(s: &str) -> Option<(&str, char, &str)> {
    let (rest, field) = s.rsplit_once('.')?;
    let (lemma, pos) = rest.rsplit_once('.')?;
    let mut chars = pos.chars();
    let c = chars.next()?;
    if chars.next().is_some() || lemma.is_empty() {
        return None;
    }
    Some((lemma, c, field))
}

/// Validate the real concept-id grammar `lemma.pos.NN` and return the POS.
pub fn parse_real_concept_id(s: &str) -> Option<char> {
    let (_, pos, field) = split_concept_id(s)?;
    if !matches!(pos, 'n' | 'v' | 'a' | 'r' | 's') {
        return None;
    }
    if field.len() != 2 || !field.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(pos)
}

/// True for synthetic out-of-vocabulary ids (`word.pos.oov`).
pub fn is_oov_concept_id(s: &str) -> bool {
    matches!(split_concept_id(s), Some((_, _, "oov")))
}

/// Interned set of concept id strings.
#[derive(Debug, Clone, Default)]
pub struct ConceptSet {
    ids: Vec<String>,
    index: HashMap<String, ConceptId>,
}

impl ConceptSet {
    pub fn intern(&mut self, s: &str) -> ConceptId {
        if let Some(&id) = self.index.get(s) {
            return id;
        }
        let id = ConceptId(self.ids.len() as u32);
        self.ids.push(s.to_string());
        self.index.insert(s.to_string(), id);
        id
    }

    pub fn get(&self, s: &str) -> Option<ConceptId> {
        self.index.get(s).copied()
    }

    pub fn name(&self, id: ConceptId) -> &str {
        &self.ids[id.index()]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }
}

/// One sense of a word: its concept, frequency rank, and hypernym path
/// (which starts at the sense itself).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenseEntry {
    pub sense: ConceptId,
    pub rank: usize,
    pub hypernym_path: Vec<ConceptId>,
}

/// Padded per-token grounding: an `s_max x h_max` grid of concept indices
/// with a validity mask. Row `r` corresponds to sense rank `r`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGroundingGrid {
    pub s_max: usize,
    pub h_max: usize,
    /// Row-major concept per cell; padded cells hold `ConceptId(0)` and are
    /// masked out.
    pub concepts: Vec<ConceptId>,
    pub mask: Vec<bool>,
    /// Sense rank per row (identity by construction).
    pub sense_ranks: Vec<usize>,
}

impl TokenGroundingGrid {
    pub fn cells(&self) -> usize {
        self.s_max * self.h_max
    }

    pub fn unmasked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sense row of a flat cell index.
    pub fn row_of(&self, cell: usize) -> usize {
        cell / self.h_max
    }
}

/// JSON-lines wire form of one grounding sense.
#[derive(Debug, Serialize, Deserialize)]
struct RawSense {
    id: String,
    path: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawEntry {
    word: String,
    pos: String,
    senses: Vec<RawSense>,
}

/// Map from (surface form, POS) to ordered senses with hypernym paths.
#[derive(Debug, Clone)]
pub struct GroundingTable {
    entries: HashMap<(String, Pos), Vec<SenseEntry>>,
    concepts: ConceptSet,
    s_max: usize,
    h_max: usize,
}

impl Default for GroundingTable {
    fn default() -> Self {
        Self::new()
    }
}

impl GroundingTable {
    pub fn new() -> Self {
        GroundingTable {
            entries: HashMap::new(),
            concepts: ConceptSet::default(),
            s_max: 3,
            h_max: 5,
        }
    }

    /// Caps applied when building token grids (senses kept, concepts per
    /// path including the sense itself).
    pub fn set_caps(&mut self, s_max: usize, h_max: usize) -> Result<()> {
        if s_max == 0 || h_max == 0 {
            return Err(Error::Config { detail: "S and H caps must be at least 1".into() });
        }
        self.s_max = s_max;
        self.h_max = h_max;
        Ok(())
    }

    pub fn caps(&self) -> (usize, usize) {
        (self.s_max, self.h_max)
    }

    pub fn concepts(&self) -> &ConceptSet {
        &self.concepts
    }

    pub fn entry_count(&self) -> usize {
        self.entries.len()
    }

    pub fn senses(&self, word: &str, pos: Pos) -> Option<&[SenseEntry]> {
        self.entries.get(&(word.to_string(), pos)).map(Vec::as_slice)
    }

    /// Load the JSON-lines grounding format. Senses whose concept POS is
    /// incompatible with the entry POS are rejected (dropped, survivors
    /// re-ranked contiguously); an entry left with no senses is treated as
    /// absent so the word takes the OOV path.
    pub fn load<R: Read>(reader: R, path_label: &str) -> Result<Self> {
        let mut table = GroundingTable::new();
        let reader = BufReader::new(reader);
        for (lineno, line) in reader.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawEntry = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path_label.to_string(),
                line: lineno,
                detail: e.to_string(),
            })?;
            table.insert_raw(raw, path_label, lineno)?;
        }
        Ok(table)
    }

    pub fn load_path(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::load(file, &path.display().to_string())
    }

    fn insert_raw(&mut self, raw: RawEntry, path_label: &str, lineno: usize) -> Result<()> {
        let parse_err = |detail: String| Error::Parse {
            path: path_label.to_string(),
            line: lineno,
            detail,
        };
        let pos_char = match (raw.pos.len(), raw.pos.chars().next()) {
            (1, Some(c)) if matches!(c, 'n' | 'v' | 'a' | 'r') => c,
            _ => return Err(parse_err(format!("invalid POS `{}`", raw.pos))),
        };
        let pos = Pos::from_char(pos_char).unwrap();

        let mut senses = Vec::new();
        for raw_sense in raw.senses {
            let sense_pos = parse_real_concept_id(&raw_sense.id)
                .ok_or_else(|| parse_err(format!("invalid concept id `{}`", raw_sense.id)))?;
            // POS-incompatible senses are excluded.
            if sense_pos != pos_char {
                continue;
            }
            if raw_sense.path.first().map(String::as_str) != Some(raw_sense.id.as_str()) {
                return Err(Error::PathNotStartingAtSense {
                    sense: raw_sense.id.clone(),
                    word: raw.word.clone(),
                });
            }
            let mut seen = HashSet::new();
            for c in &raw_sense.path {
                if parse_real_concept_id(c).is_none() {
                    return Err(parse_err(format!("invalid concept id `{c}` in path")));
                }
                if !seen.insert(c.as_str()) {
                    return Err(parse_err(format!(
                        "duplicate concept `{c}` in the path of `{}`",
                        raw_sense.id
                    )));
                }
            }
            let path: Vec<ConceptId> =
                raw_sense.path.iter().map(|c| self.concepts.intern(c)).collect();
            senses.push(SenseEntry {
                sense: path[0],
                rank: senses.len(),
                hypernym_path: path,
            });
        }
        if senses.is_empty() {
            return Ok(());
        }
        match self.entries.entry((raw.word.clone(), pos)) {
            MapEntry::Occupied(_) => Err(Error::DuplicateEntry {
                word: raw.word,
                pos: pos_char,
                line: lineno,
            }),
            MapEntry::Vacant(slot) => {
                slot.insert(senses);
                Ok(())
            }
        }
    }

    /// Canonical JSON-lines emitter: entries sorted by (word, POS), senses
    /// in rank order. `load(emit(t))` reproduces `t`'s entries.
    pub fn emit<W: Write>(&self, mut w: W) -> Result<()> {
        let mut keys: Vec<&(String, Pos)> = self.entries.keys().collect();
        keys.sort();
        for key in keys {
            let senses = &self.entries[key];
            let raw = RawEntry {
                word: key.0.clone(),
                pos: key.1.as_char().to_string(),
                senses: senses
                    .iter()
                    .map(|s| RawSense {
                        id: self.concepts.name(s.sense).to_string(),
                        path: s
                            .hypernym_path
                            .iter()
                            .map(|&c| self.concepts.name(c).to_string())
                            .collect(),
                    })
                    .collect(),
            };
            let line = serde_json::to_string(&raw).map_err(|e| Error::Data {
                detail: format!("serializing grounding entry: {e}"),
            })?;
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Entry-content equality (ignores caps and concept-set ordering).
    pub fn same_entries(&self, other: &GroundingTable) -> bool {
        if self.entries.len() != other.entries.len() {
            return false;
        }
        self.entries.iter().all(|(key, senses)| {
            other.entries.get(key).is_some_and(|other_senses| {
                senses.len() == other_senses.len()
                    && senses.iter().zip(other_senses).all(|(a, b)| {
                        a.rank == b.rank
                            && a.hypernym_path.len() == b.hypernym_path.len()
                            && a.hypernym_path.iter().zip(&b.hypernym_path).all(|(&x, &y)| {
                                self.concepts.name(x) == other.concepts.name(y)
                            })
                    })
            })
        })
    }

    /// Padded grounding grid for a token. Known words contribute their first
    /// `s_max` senses with paths truncated to `h_max` concepts; unknown
    /// (word, POS) pairs get a single synthetic `word.pos.oov` concept,
    /// registered in the concept set on first use.
    pub fn ground_token(&mut self, word: &str, pos: Pos) -> TokenGroundingGrid {
        let key = (word.to_string(), pos);
        if let Some(senses) = self.entries.get(&key) {
            if !senses.is_empty() {
                return Self::grid_from_senses(senses, self.s_max, self.h_max);
            }
        }
        let synthetic = format!("{word}.{}.oov", pos.as_char());
        let id = self.concepts.intern(&synthetic);
        Self::oov_grid(id, self.s_max, self.h_max)
    }

    /// Read-only grounding; `None` when the token is unknown and its
    /// synthetic concept has not been registered yet.
    pub fn try_ground(&self, word: &str, pos: Pos) -> Option<TokenGroundingGrid> {
        let key = (word.to_string(), pos);
        if let Some(senses) = self.entries.get(&key) {
            if !senses.is_empty() {
                return Some(Self::grid_from_senses(senses, self.s_max, self.h_max));
            }
        }
        let synthetic = format!("{word}.{}.oov", pos.as_char());
        self.concepts.get(&synthetic).map(|id| Self::oov_grid(id, self.s_max, self.h_max))
    }

    fn grid_from_senses(senses: &[SenseEntry], s_max: usize, h_max: usize) -> TokenGroundingGrid {
        let cells = s_max * h_max;
        let mut concepts = vec![ConceptId(0); cells];
        let mut mask = vec![false; cells];
        for (r, sense) in senses.iter().take(s_max).enumerate() {
            for (j, &c) in sense.hypernym_path.iter().take(h_max).enumerate() {
                concepts[r * h_max + j] = c;
                mask[r * h_max + j] = true;
            }
        }
        TokenGroundingGrid {
            s_max,
            h_max,
            concepts,
            mask,
            sense_ranks: (0..s_max).collect(),
        }
    }

    fn oov_grid(id: ConceptId, s_max: usize, h_max: usize) -> TokenGroundingGrid {
        let cells = s_max * h_max;
        let mut concepts = vec![ConceptId(0); cells];
        let mut mask = vec![false; cells];
        concepts[0] = id;
        mask[0] = true;
        TokenGroundingGrid {
            s_max,
            h_max,
            concepts,
            mask,
            sense_ranks: (0..s_max).collect(),
        }
    }
}

/// Build a grounding table from a hypernym edge list (child -> parent) and
/// per-word ordered sense lists. Each sense's path is a shortest path (by
/// edge count) from the sense toward a root, prefixed by the sense itself;
/// among equal-length paths the lexicographically smallest concept-id
/// sequence wins. Senses absent from the graph are isolated (`path =
/// [sense]`).
pub fn derive_paths(
    edges: &[(String, String)],
    senses: &[(String, Pos, Vec<String>)],
) -> Result<GroundingTable> {
    let mut parents: HashMap<&str, Vec<&str>> = HashMap::new();
    let mut nodes: HashSet<&str> = HashSet::new();
    for (child, parent) in edges {
        parents.entry(child.as_str()).or_default().push(parent.as_str());
        nodes.insert(child.as_str());
        nodes.insert(parent.as_str());
    }
    for v in parents.values_mut() {
        v.sort_unstable();
        v.dedup();
    }

    detect_cycle(&parents, &nodes)?;

    // Distance (in edges) from each node to its nearest root.
    let mut dist: HashMap<&str, usize> = HashMap::new();
    fn depth<'a>(
        node: &'a str,
        parents: &HashMap<&'a str, Vec<&'a str>>,
        dist: &mut HashMap<&'a str, usize>,
    ) -> usize {
        if let Some(&d) = dist.get(node) {
            return d;
        }
        let d = match parents.get(node) {
            None => 0,
            Some(ps) if ps.is_empty() => 0,
            Some(ps) => 1 + ps.iter().map(|p| depth(p, parents, dist)).min().unwrap(),
        };
        dist.insert(node, d);
        d
    }

    let mut table = GroundingTable::new();
    for (idx, (word, pos, sense_ids)) in senses.iter().enumerate() {
        if *pos == Pos::Prep {
            return Err(Error::Data {
                detail: format!("sense list for \"{word}\" uses POS `p`, not allowed in groundings"),
            });
        }
        let mut entries = Vec::new();
        for sense_id in sense_ids {
            let sense_pos = parse_real_concept_id(sense_id).ok_or_else(|| Error::Data {
                detail: format!("invalid concept id `{sense_id}` for word \"{word}\""),
            })?;
            if sense_pos != pos.as_char() {
                continue;
            }
            let mut path_names: Vec<&str> = vec![sense_id.as_str()];
            if nodes.contains(sense_id.as_str()) {
                let mut cur = sense_id.as_str();
                let mut d = depth(cur, &parents, &mut dist);
                while d > 0 {
                    let next = parents[cur]
                        .iter()
                        .filter(|p| depth(p, &parents, &mut dist) == d - 1)
                        .min()
                        .copied()
                        .unwrap();
                    path_names.push(next);
                    cur = next;
                    d -= 1;
                }
            }
            let path: Vec<ConceptId> =
                path_names.iter().map(|c| table.concepts.intern(c)).collect();
            entries.push(SenseEntry {
                sense: path[0],
                rank: entries.len(),
                hypernym_path: path,
            });
        }
        if entries.is_empty() {
            continue;
        }
        match table.entries.entry((word.clone(), *pos)) {
            MapEntry::Occupied(_) => {
                return Err(Error::DuplicateEntry {
                    word: word.clone(),
                    pos: pos.as_char(),
                    line: idx + 1,
                })
            }
            MapEntry::Vacant(slot) => {
                slot.insert(entries);
            }
        }
    }
    Ok(table)
}

fn detect_cycle<'a>(
    parents: &HashMap<&'a str, Vec<&'a str>>,
    nodes: &HashSet<&'a str>,
) -> Result<()> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let mut color: HashMap<&str, Color> = nodes.iter().map(|&n| (n, Color::White)).collect();
    let mut ordered: Vec<&str> = nodes.iter().copied().collect();
    ordered.sort_unstable();

    for &start in &ordered {
        if color[start] != Color::White {
            continue;
        }
        // Iterative DFS keeping the grey path for the cycle witness.
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        color.insert(start, Color::Grey);
        while let Some(&(node, next_child)) = stack.last() {
            let ps = parents.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if next_child < ps.len() {
                stack.last_mut().unwrap().1 += 1;
                let child = ps[next_child];
                match color[child] {
                    Color::White => {
                        color.insert(child, Color::Grey);
                        stack.push((child, 0));
                    }
                    Color::Grey => {
                        let mut witness: Vec<String> = stack
                            .iter()
                            .map(|&(n, _)| n.to_string())
                            .skip_while(|n| n != child)
                            .collect();
                        witness.push(child.to_string());
                        return Err(Error::Cycle { witness });
                    }
                    Color::Black => {}
                }
            } else {
                color.insert(node, Color::Black);
                stack.pop();
            }
        }
    }
    Ok(())
}

/// Parse the edge-list TSV (`child<TAB>parent` per line).
pub fn load_edges_tsv<R: Read>(reader: R, path_label: &str) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(reader);
    let mut edges = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(child), Some(parent), None) if !child.is_empty() && !parent.is_empty() => {
                edges.push((child.to_string(), parent.to_string()));
            }
            _ => {
                return Err(Error::Parse {
                    path: path_label.to_string(),
                    line: lineno + 1,
                    detail: "expected `child<TAB>parent`".into(),
                })
            }
        }
    }
    Ok(edges)
}

/// Parse the senses TSV (`word<TAB>pos<TAB>id,id,...` per line).
pub fn load_senses_tsv<R: Read>(
    reader: R,
    path_label: &str,
) -> Result<Vec<(String, Pos, Vec<String>)>> {
    let reader = BufReader::new(reader);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let err = |detail: String| Error::Parse {
            path: path_label.to_string(),
            line: lineno + 1,
            detail,
        };
        if fields.len() != 3 {
            return Err(err("expected `word<TAB>pos<TAB>comma-separated sense ids`".into()));
        }
        let pos = match (fields[1].len(), fields[1].chars().next()) {
            (1, Some(c)) if matches!(c, 'n' | 'v' | 'a' | 'r') => Pos::from_char(c).unwrap(),
            _ => return Err(err(format!("invalid POS `{}`", fields[1]))),
        };
        let ids: Vec<String> =
            fields[2].split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect();
        if ids.is_empty() {
            return Err(err("empty sense list".into()));
        }
        out.push((fields[0].to_string(), pos, ids));
    }
    Ok(out)
}
