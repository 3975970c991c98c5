//! Interaction logs: CSV parsing, id vocabularies and the in-memory dataset.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{encode_dataset, EncodingConfig, ExtraColumn, QMatrix, Triplet};
use crate::error::{KtmError, Result};
use crate::io::manifest::sha256_hex;
use crate::sparse::DesignMatrix;

/// Raw string id <-> dense index, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl IdMap {
    pub fn from_ids(ids: impl IntoIterator<Item = String>) -> Self {
        let mut map = Self::default();
        for id in ids {
            map.intern(&id);
        }
        map
    }

    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.ids.len();
        self.ids.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    pub fn get(&self, raw: &str) -> Option<usize> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, dense: usize) -> &str {
        &self.ids[dense]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

impl Serialize for IdMap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let sorted: BTreeMap<&str, usize> = self.ids.iter().map(String::as_str).zip(0..).collect();
        sorted.serialize(s)
    }
}

impl<'de> Deserialize<'de> for IdMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw: BTreeMap<String, usize> = BTreeMap::deserialize(d)?;
        let mut ids = vec![None; raw.len()];
        for (k, v) in raw {
            match ids.get_mut(v) {
                Some(slot @ None) => *slot = Some(k),
                _ => return Err(serde::de::Error::custom(format!("index {v} is duplicated or out of range"))),
            }
        }
        Ok(IdMap::from_ids(ids.into_iter().map(|s| s.expect("filled"))))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraVocab {
    pub name: String,
    pub values: IdMap,
}

/// Dense-id vocabularies for users, items and each extra column.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub users: IdMap,
    pub items: IdMap,
    #[serde(default)]
    pub extras: Vec<ExtraVocab>,
}

impl Vocab {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| KtmError::io(path, e))?)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Schema {
    /// `user_id,item_id,correct[,extra...]`, rows in chronological order.
    #[default]
    Triplets,
    /// Public ASSISTments 2009-2010 skill-builder export.
    Assistments,
}

/// Everything needed to encode a log under any preset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub triplets: Vec<Triplet>,
    pub extras: Vec<Vec<usize>>,
    pub extra_columns: Vec<ExtraColumn>,
    pub qmatrix: QMatrix,
    pub students: usize,
    pub vocab: Vocab,
}

impl Dataset {
    pub fn encode(&self, config: &EncodingConfig) -> Result<DesignMatrix> {
        let extras = if config.extra_columns.is_empty() {
            &[][..]
        } else {
            &self.extras[..]
        };
        encode_dataset(&self.triplets, &self.qmatrix, config, self.students, extras)
    }

    pub fn student_of_row(&self) -> Vec<usize> {
        self.triplets.iter().map(|t| t.student).collect()
    }

    /// Parses an in-memory triplet CSV; see [`Dataset::load`] for id rules.
    pub fn from_csv(text: &str, qmatrix: Option<QMatrix>, vocab: Option<&Vocab>) -> Result<Self> {
        parse_triplets(text, qmatrix, vocab)
    }

    /// Loads a log with the given schema. For [`Schema::Triplets`] a q-matrix
    /// path is expected; item ids are then its 0-based row numbers unless a
    /// vocabulary assigns them.
    pub fn load(
        data: impl AsRef<Path>,
        qmatrix: Option<&Path>,
        schema: Schema,
        vocab: Option<&Vocab>,
    ) -> Result<Self> {
        match schema {
            Schema::Assistments => load_assistments(data, vocab),
            Schema::Triplets => {
                let q = qmatrix.map(crate::encoder::load_qmatrix).transpose()?;
                let text = read(data.as_ref())?;
                parse_triplets(&text, q, vocab)
            }
        }
    }
}

fn read(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| KtmError::io(path, e))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn parse_outcome(raw: &str, line: usize) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(KtmError::Parse {
            line,
            msg: format!("outcome must be 0 or 1, got `{other}`"),
        }),
    }
}

fn lookup(map: &IdMap, kind: &str, raw: &str) -> Result<usize> {
    map.get(raw).ok_or_else(|| KtmError::UnknownCategory {
        kind: kind.to_string(),
        value: raw.to_string(),
    })
}

/// Reads a triplet CSV. Returns the dense triplets, per-row extra values and
/// the vocabulary used.
pub fn load_triplets(
    path: impl AsRef<Path>,
    qmatrix: Option<QMatrix>,
    vocab: Option<&Vocab>,
) -> Result<(Vec<Triplet>, Vec<Vec<usize>>, Vocab)> {
    let ds = parse_triplets(&read(path.as_ref())?, qmatrix, vocab)?;
    Ok((ds.triplets, ds.extras, ds.vocab))
}

pub(crate) fn parse_triplets(text: &str, qmatrix: Option<QMatrix>, vocab: Option<&Vocab>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    for (i, want) in ["user_id", "item_id", "correct"].iter().enumerate() {
        if headers.get(i) != Some(*want) {
            return Err(KtmError::MissingColumn(want.to_string()));
        }
    }
    let extra_names: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();

    let frozen = vocab.is_some();
    let mut out_vocab = match vocab {
        Some(v) => v.clone(),
        None => Vocab {
            extras: extra_names
                .iter()
                .map(|n| ExtraVocab {
                    name: n.clone(),
                    values: IdMap::default(),
                })
                .collect(),
            ..Default::default()
        },
    };
    if out_vocab.extras.len() != extra_names.len()
        || out_vocab.extras.iter().zip(&extra_names).any(|(e, n)| &e.name != n)
    {
        return Err(KtmError::MissingColumn(format!(
            "extra columns {extra_names:?} do not match the vocabulary"
        )));
    }
    let items_from_q = !frozen && qmatrix.is_some();
    if items_from_q {
        let m = qmatrix.as_ref().map_or(0, QMatrix::items);
        out_vocab.items = IdMap::from_ids((0..m).map(|j| j.to_string()));
    }

    let mut triplets = Vec::new();
    let mut extras = Vec::new();
    for (no, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = no + 2;
        if rec.len() != headers.len() {
            return Err(KtmError::Parse {
                line,
                msg: format!("expected {} fields, got {}", headers.len(), rec.len()),
            });
        }
        let student = if frozen {
            lookup(&out_vocab.users, "user", &rec[0])?
        } else {
            out_vocab.users.intern(&rec[0])
        };
        let item = if frozen || items_from_q {
            lookup(&out_vocab.items, "item", &rec[1])?
        } else {
            out_vocab.items.intern(&rec[1])
        };
        let outcome = parse_outcome(&rec[2], line)?;
        let mut row_extras = Vec::with_capacity(extra_names.len());
        for (c, ev) in out_vocab.extras.iter_mut().enumerate() {
            let raw = &rec[3 + c];
            row_extras.push(if frozen {
                lookup(&ev.values, &ev.name, raw)?
            } else {
                ev.values.intern(raw)
            });
        }
        triplets.push(Triplet {
            student,
            item,
            outcome,
        });
        extras.push(row_extras);
    }
    if triplets.is_empty() {
        return Err(KtmError::EmptyData);
    }
    let qmatrix = match qmatrix {
        Some(q) => {
            if q.items() < out_vocab.items.len() {
                return Err(KtmError::InvalidQMatrix(format!(
                    "{} rows but the vocabulary has {} items",
                    q.items(),
                    out_vocab.items.len()
                )));
            }
            q
        }
        None => QMatrix::from_skill_sets(0, vec![Vec::new(); out_vocab.items.len()])?,
    };
    finish(triplets, extras, qmatrix, out_vocab)
}

fn finish(triplets: Vec<Triplet>, extras: Vec<Vec<usize>>, qmatrix: QMatrix, vocab: Vocab) -> Result<Dataset> {
    let extra_columns = vocab
        .extras
        .iter()
        .map(|e| ExtraColumn {
            name: e.name.clone(),
            cardinality: e.values.len(),
        })
        .collect();
    Ok(Dataset {
        students: vocab.users.len(),
        triplets,
        extras,
        extra_columns,
        qmatrix,
        vocab,
    })
}

/// Writes triplets back to CSV with their raw ids.
pub fn write_triplets(triplets: &[Triplet], extras: &[Vec<usize>], vocab: &Vocab) -> String {
    let mut out = String::from("user_id,item_id,correct");
    for e in &vocab.extras {
        out.push(',');
        out.push_str(&e.name);
    }
    out.push('\n');
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for (r, t) in triplets.iter().enumerate() {
        let mut rec = vec![
            vocab.users.raw(t.student).to_string(),
            vocab.items.raw(t.item).to_string(),
            t.outcome.to_string(),
        ];
        if let Some(ex) = extras.get(r) {
            for (c, &v) in ex.iter().enumerate() {
                rec.push(vocab.extras[c].values.raw(v).to_string());
            }
        }
        w.write_record(&rec).expect("in-memory write");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8"));
    out
}

pub const ASSISTMENTS_EXTRAS: [&str; 4] = ["first_action", "school_id", "teacher_id", "tutor_mode"];

/// Loads the ASSISTments 2009-2010 skill-builder CSV. Rows sharing an
/// `order_id` are one attempt tagged with several skills; attempts are
/// ordered by `order_id`. The q-matrix is the union of skills seen per
/// problem; untagged problems keep an empty skill set.
pub fn load_assistments(path: impl AsRef<Path>, vocab: Option<&Vocab>) -> Result<Dataset> {
    let text = read(path.as_ref())?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| KtmError::MissingColumn(name.to_string()))
    };
    let (c_order, c_user, c_item, c_correct, c_skill) = (
        col("order_id")?,
        col("user_id")?,
        col("problem_id")?,
        col("correct")?,
        col("skill_id")?,
    );
    let c_extras = ASSISTMENTS_EXTRAS
        .iter()
        .map(|n| col(n))
        .collect::<Result<Vec<_>>>()?;

    struct Attempt {
        order: i64,
        first_line: usize,
        user: String,
        item: String,
        correct: u8,
        skills: Vec<String>,
        extras: Vec<String>,
    }
    let mut attempts: Vec<Attempt> = Vec::new();
    let mut by_order: HashMap<i64, usize> = HashMap::new();
    for (no, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = no + 2;
        let field = |c: usize| rec.get(c).unwrap_or("").to_string();
        let order: i64 = field(c_order).parse().map_err(|e| KtmError::Parse {
            line,
            msg: format!("order_id: {e}"),
        })?;
        let skill = field(c_skill);
        let has_skill = !skill.is_empty() && skill != "NA";
        match by_order.get(&order) {
            Some(&a) => {
                if has_skill && !attempts[a].skills.contains(&skill) {
                    attempts[a].skills.push(skill);
                }
            }
            None => {
                by_order.insert(order, attempts.len());
                attempts.push(Attempt {
                    order,
                    first_line: line,
                    user: field(c_user),
                    item: field(c_item),
                    correct: parse_outcome(&field(c_correct), line)?,
                    skills: if has_skill { vec![skill] } else { Vec::new() },
                    extras: c_extras.iter().map(|&c| field(c)).collect(),
                });
            }
        }
    }
    if attempts.is_empty() {
        return Err(KtmError::EmptyData);
    }
    attempts.sort_by_key(|a| (a.order, a.first_line));

    let frozen = vocab.is_some();
    let mut v = vocab.cloned().unwrap_or_else(|| Vocab {
        extras: ASSISTMENTS_EXTRAS
            .iter()
            .map(|n| ExtraVocab {
                name: n.to_string(),
                values: IdMap::default(),
            })
            .collect(),
        ..Default::default()
    });
    let mut skill_ids = IdMap::default();
    let mut item_skills: Vec<Vec<usize>> = Vec::new();
    let mut triplets = Vec::with_capacity(attempts.len());
    let mut extras = Vec::with_capacity(attempts.len());
    for a in &attempts {
        let (student, item) = if frozen {
            (lookup(&v.users, "user", &a.user)?, lookup(&v.items, "item", &a.item)?)
        } else {
            (v.users.intern(&a.user), v.items.intern(&a.item))
        };
        if item_skills.len() <= item {
            item_skills.resize(item + 1, Vec::new());
        }
        for s in &a.skills {
            item_skills[item].push(skill_ids.intern(s));
        }
        let mut row = Vec::with_capacity(a.extras.len());
        for (ev, raw) in v.extras.iter_mut().zip(&a.extras) {
            row.push(if frozen {
                lookup(&ev.values, &ev.name, raw)?
            } else {
                ev.values.intern(raw)
            });
        }
        triplets.push(Triplet {
            student,
            item,
            outcome: a.correct,
        });
        extras.push(row);
    }
    item_skills.resize(v.items.len(), Vec::new());
    let q = QMatrix::from_skill_sets(skill_ids.len(), item_skills)?;
    finish(triplets, extras, q, v)
}
