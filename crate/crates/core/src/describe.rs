//! Rule-based description grammar plus a pluggable refiner that picks the
//! final wording among candidate orderings.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attributes::SceneFacts;
use crate::error::{Error, Result};
use crate::recognize::UNKNOWN;

pub const UNKNOWN_SUBJECT: &str = "An unknown person";
pub const FACELESS_SUBJECT: &str = "A person";
const WEAPON: &str = "with a gun";
const MASK: &str = "wearing a mask";
const PHONE: &str = "talking over the phone";
const ATTRS_PREFIX: &str = "who has ";
const LOCATION_PREFIX: &str = "at the ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ClauseTag {
    Subject,
    Weapon,
    Mask,
    Phone,
    Attrs,
    Location,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub tag: ClauseTag,
    pub text: String,
}

impl Clause {
    fn new(tag: ClauseTag, text: impl Into<String>) -> Self {
        Clause { tag, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionSequence {
    pub clauses: Vec<Clause>,
    pub rendered: String,
    /// Name used as the subject, when the person is known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location_label: Option<String>,
}

impl DescriptionSequence {
    pub fn from_clauses(clauses: Vec<Clause>, subject_name: Option<String>, location_label: Option<String>) -> Self {
        let rendered = clauses
            .iter()
            .map(|c| c.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
            .trim()
            .to_string();
        DescriptionSequence {
            clauses,
            rendered,
            subject_name,
            location_label,
        }
    }
}

/// Joins items as "a", "a and b", or "a, b, and c".
pub fn join_list(items: &[&str]) -> String {
    match items {
        [] => String::new(),
        [one] => one.to_string(),
        [a, b] => format!("{a} and {b}"),
        [init @ .., last] => format!("{}, and {last}", init.join(", ")),
    }
}

fn attribute_items(f: &SceneFacts) -> Vec<&'static str> {
    let mut items = Vec::new();
    match f.has_beard {
        Some(true) => items.push("beard"),
        Some(false) => items.push("no-beard"),
        None => {}
    }
    match f.has_mustache {
        Some(true) => items.push("mustache"),
        Some(false) => items.push("no-mustache"),
        None => {}
    }
    match f.is_bald {
        Some(true) => items.push("bald head"),
        Some(false) => items.push("hair"),
        None => {}
    }
    match f.has_eyeglass {
        Some(true) => items.push("eyeglass"),
        Some(false) => items.push("no-eyeglass"),
        None => {}
    }
    items
}

fn subject_of(f: &SceneFacts) -> (String, Option<String>) {
    if f.identity_known() {
        (f.identity.clone(), Some(f.identity.clone()))
    } else if f.person_present_without_face {
        (FACELESS_SUBJECT.to_string(), None)
    } else {
        (UNKNOWN_SUBJECT.to_string(), None)
    }
}

/// The grammar's clauses in canonical order.
pub fn facts_to_sequence(f: &SceneFacts) -> DescriptionSequence {
    let (subject, name) = subject_of(f);
    let mut clauses = vec![Clause::new(ClauseTag::Subject, subject)];
    if f.has_gun == Some(true) {
        clauses.push(Clause::new(ClauseTag::Weapon, WEAPON));
    }
    if f.has_mask == Some(true) {
        clauses.push(Clause::new(ClauseTag::Mask, MASK));
    }
    let phone = f.has_phone == Some(true);
    if phone {
        clauses.push(Clause::new(ClauseTag::Phone, PHONE));
    }
    let items = attribute_items(f);
    if !items.is_empty() {
        clauses.push(Clause::new(ClauseTag::Attrs, format!("{ATTRS_PREFIX}{}", join_list(&items))));
    }
    let location = (!f.location_label.is_empty()).then(|| f.location_label.clone());
    if let Some(loc) = &location {
        clauses.push(Clause::new(ClauseTag::Location, format!("{LOCATION_PREFIX}{loc}")));
    }
    // A known person doing nothing but talking on the phone reads location first.
    let only_phone_and_location = clauses
        .iter()
        .all(|c| matches!(c.tag, ClauseTag::Subject | ClauseTag::Phone | ClauseTag::Location));
    if name.is_some() && phone && location.is_some() && only_phone_and_location {
        clauses.swap(1, 2);
    }
    DescriptionSequence::from_clauses(clauses, name, location)
}

/// Rendered text only.
pub fn render(f: &SceneFacts) -> String {
    facts_to_sequence(f).rendered
}

const MARKERS: [(&str, ClauseTag); 5] = [
    (" with a gun", ClauseTag::Weapon),
    (" wearing a mask", ClauseTag::Mask),
    (" talking over the phone", ClauseTag::Phone),
    (" who has ", ClauseTag::Attrs),
    (" at the ", ClauseTag::Location),
];

/// Splits a rendered description back into its clauses.
pub fn parse_clauses(rendered: &str) -> Result<Vec<Clause>> {
    let bad = || Error::InvalidInput(format!("not a grammar sentence: {rendered:?}"));
    let first = MARKERS
        .iter()
        .filter_map(|(m, _)| rendered.find(m))
        .min()
        .unwrap_or(rendered.len());
    if first == 0 {
        return Err(bad());
    }
    let mut out = vec![Clause::new(ClauseTag::Subject, &rendered[..first])];
    let mut rest = &rendered[first..];
    let phone_suffix = MARKERS[2].0;
    while !rest.is_empty() {
        let (marker, tag) = MARKERS.iter().find(|(m, _)| rest.starts_with(m)).ok_or_else(bad)?;
        let end = match tag {
            ClauseTag::Weapon | ClauseTag::Mask | ClauseTag::Phone => marker.len(),
            ClauseTag::Attrs => [MARKERS[4].0, phone_suffix]
                .iter()
                .filter_map(|m| rest[1..].find(m).map(|i| i + 1))
                .min()
                .unwrap_or(rest.len()),
            ClauseTag::Location => {
                if rest.len() > marker.len() + phone_suffix.len() && rest.ends_with(phone_suffix) {
                    rest.len() - phone_suffix.len()
                } else {
                    rest.len()
                }
            }
            ClauseTag::Subject => unreachable!(),
        };
        if end <= 1 {
            return Err(bad());
        }
        out.push(Clause::new(*tag, &rest[1..end]));
        rest = &rest[end..];
    }
    Ok(out)
}

/// Items listed in an ATTRS clause.
pub fn parse_attribute_list(text: &str) -> Vec<String> {
    let body = text.strip_prefix(ATTRS_PREFIX).unwrap_or(text);
    if body.contains(", ") {
        body.split(", ")
            .map(|s| s.strip_prefix("and ").unwrap_or(s).to_string())
            .collect()
    } else {
        body.split(" and ").map(str::to_string).collect()
    }
}

/// Canonical sequence first, then every other ordering of its non-subject clauses.
pub fn candidates(f: &SceneFacts) -> Vec<DescriptionSequence> {
    let canonical = facts_to_sequence(f);
    let mut out = vec![canonical.clone()];
    let tail: Vec<Clause> = canonical.clauses[1..].to_vec();
    let mut idx: Vec<usize> = (0..tail.len()).collect();
    let mut seen = BTreeSet::new();
    seen.insert(canonical.rendered.clone());
    permutations(&mut idx, 0, &mut |perm| {
        let mut clauses = vec![canonical.clauses[0].clone()];
        clauses.extend(perm.iter().map(|&i| tail[i].clone()));
        let seq = DescriptionSequence::from_clauses(
            clauses,
            canonical.subject_name.clone(),
            canonical.location_label.clone(),
        );
        if seen.insert(seq.rendered.clone()) {
            out.push(seq);
        }
    });
    out
}

fn permutations(idx: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
    if k == idx.len() {
        visit(idx);
        return;
    }
    for i in k..idx.len() {
        idx.swap(k, i);
        permutations(idx, k + 1, visit);
        idx.swap(k, i);
    }
}

pub trait Refiner: Send + Sync {
    fn score(&self, seq: &DescriptionSequence) -> f64;

    /// Highest-scoring candidate; the earliest wins ties.
    fn refine(&self, candidates: &[DescriptionSequence]) -> Result<DescriptionSequence> {
        refine(candidates, self)
    }
}

pub fn refine<R: Refiner + ?Sized>(candidates: &[DescriptionSequence], refiner: &R) -> Result<DescriptionSequence> {
    let mut best: Option<(f64, &DescriptionSequence)> = None;
    for c in candidates {
        let s = refiner.score(c);
        if best.is_none_or(|(b, _)| s > b) {
            best = Some((s, c));
        }
    }
    best.map(|(_, c)| c.clone())
        .ok_or_else(|| Error::InvalidInput("refine needs at least one candidate".into()))
}

/// Keeps the grammar's first candidate.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityRefiner;

impl Refiner for IdentityRefiner {
    fn score(&self, _seq: &DescriptionSequence) -> f64 {
        0.0
    }
}

const BOS: &str = "<s>";
const EOS: &str = "</s>";
const NAME_TOKEN: &str = "<name>";
const LOC_TOKEN: &str = "<loc>";

/// Word trigram model with add-one smoothing. Names and location labels are
/// replaced by placeholder tokens before counting, and counts are kept per
/// clause signature (subject kind plus the set of clause tags), so the model
/// learns word order for each combination of facts separately.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrigramRefiner {
    pub trigrams: BTreeMap<String, u64>,
    pub contexts: BTreeMap<String, u64>,
    pub vocab: BTreeSet<String>,
}

fn tokens(seq: &DescriptionSequence) -> Vec<String> {
    let mut s = seq.rendered.clone();
    if let Some(loc) = &seq.location_label {
        s = s.replacen(&format!("{LOCATION_PREFIX}{loc}"), &format!("{LOCATION_PREFIX}\u{1}"), 1);
    }
    if let Some(name) = &seq.subject_name {
        if let Some(rest) = s.strip_prefix(name.as_str()) {
            s = format!("\u{2}{rest}");
        }
    }
    let mut out = vec![BOS.to_string(), BOS.to_string()];
    out.extend(s.split_whitespace().map(|t| match t {
        "\u{1}" => LOC_TOKEN.to_string(),
        "\u{2}" => NAME_TOKEN.to_string(),
        t => t.to_string(),
    }));
    out.push(EOS.to_string());
    out
}

fn signature(seq: &DescriptionSequence) -> String {
    let subject = match seq.clauses.first() {
        Some(c) if c.tag == ClauseTag::Subject && c.text == UNKNOWN_SUBJECT => "unknown",
        Some(c) if c.tag == ClauseTag::Subject && c.text == FACELESS_SUBJECT => "faceless",
        _ if seq.subject_name.is_some() => "named",
        _ => "other",
    };
    let tags: BTreeSet<String> = seq.clauses.iter().skip(1).map(|c| format!("{:?}", c.tag)).collect();
    let tags: Vec<String> = tags.into_iter().collect();
    format!("{subject}:{}", tags.join(","))
}

fn key(sig: &str, words: &[String]) -> String {
    format!("{sig}|{}", words.join(" "))
}

impl TrigramRefiner {
    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a DescriptionSequence>) -> Self {
        let mut m = TrigramRefiner::default();
        for seq in corpus {
            let t = tokens(seq);
            let sig = signature(seq);
            m.vocab.extend(t.iter().skip(2).cloned());
            for w in t.windows(3) {
                *m.trigrams.entry(key(&sig, w)).or_default() += 1;
                *m.contexts.entry(key(&sig, &w[..2])).or_default() += 1;
            }
        }
        m
    }

    /// Trains on every canonical sentence of the finite fact space.
    pub fn from_grammar() -> Self {
        let corpus: Vec<DescriptionSequence> = fact_space("Somebody", "somewhere").iter().map(facts_to_sequence).collect();
        Self::train(&corpus)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::storage::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }
}

impl Refiner for TrigramRefiner {
    fn score(&self, seq: &DescriptionSequence) -> f64 {
        let v = (self.vocab.len() + 1) as f64;
        let sig = signature(seq);
        tokens(seq)
            .windows(3)
            .map(|w| {
                let c3 = self.trigrams.get(&key(&sig, w)).copied().unwrap_or(0) as f64;
                let c2 = self.contexts.get(&key(&sig, &w[..2])).copied().unwrap_or(0) as f64;
                ((c3 + 1.0) / (c2 + v)).ln()
            })
            .sum()
    }
}

/// Every combination of subject kind, item flags and attribute tri-states
/// for one name and one location.
pub fn fact_space(name: &str, location: &str) -> Vec<SceneFacts> {
    let tri = [Some(true), Some(false), None];
    let mut out = Vec::new();
    for subject in 0..3 {
        for items in 0..8u8 {
            for beard in tri {
                for mustache in tri {
                    for bald in tri {
                        for glass in tri {
                            let face = subject != 2;
                            out.push(SceneFacts {
                                identity: if subject == 0 { name.to_string() } else { UNKNOWN.to_string() },
                                location_label: location.to_string(),
                                has_gun: Some(items & 1 != 0),
                                has_mask: Some(items & 2 != 0),
                                has_phone: Some(items & 4 != 0),
                                has_beard: if face { beard } else { None },
                                has_mustache: if face { mustache } else { None },
                                is_bald: if face { bald } else { None },
                                has_eyeglass: if face { glass } else { None },
                                hair_color: None,
                                person_present_without_face: !face,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// Grammar candidates, then refinement.
pub fn describe(f: &SceneFacts, refiner: &dyn Refiner) -> Result<DescriptionSequence> {
    refine(&candidates(f), refiner)
}
