//! Turns chronological `(student, item, outcome)` logs into design matrices.
//!
//! Counter blocks (wins, fails, attempts) hold the per-(student, skill) tallies
//! *before* the current attempt and are only active on the skills of the
//! attempted item.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KtmError, Result};
use crate::sparse::{DesignMatrix, FeatureSpace, SparseRow};

pub const USERS: &str = "users";
pub const ITEMS: &str = "items";
pub const SKILLS: &str = "skills";
pub const WINS: &str = "wins";
pub const FAILS: &str = "fails";
pub const ATTEMPTS: &str = "attempts";

type CounterFn = fn(&CounterState, usize, usize) -> u32;

/// Binary item × skill matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QMatrix {
    skills: usize,
    kc: Vec<Vec<usize>>,
}

impl QMatrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let skills = rows.first().map_or(0, Vec::len);
        let mut kc = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            if row.len() != skills {
                return Err(KtmError::InvalidQMatrix(format!(
                    "row {} has {} columns, expected {skills}",
                    j + 1,
                    row.len()
                )));
            }
            let mut set = Vec::new();
            for (k, &q) in row.iter().enumerate() {
                match q {
                    0 => {}
                    1 => set.push(k),
                    other => {
                        return Err(KtmError::InvalidQMatrix(format!(
                            "cell ({}, {}) is {other}, expected 0 or 1",
                            j + 1,
                            k + 1
                        )))
                    }
                }
            }
            kc.push(set);
        }
        Ok(Self { skills, kc })
    }

    /// Builds a q-matrix from per-item skill sets.
    pub fn from_skill_sets(skills: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        let mut kc = Vec::with_capacity(sets.len());
        for (j, mut set) in sets.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if let Some(&k) = set.iter().find(|&&k| k >= skills) {
                return Err(KtmError::InvalidQMatrix(format!(
                    "item {j} references skill {k} but there are {skills} skills"
                )));
            }
            kc.push(set);
        }
        Ok(Self { skills, kc })
    }

    /// Headerless CSV, one row per item, one 0/1 column per skill.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| match c.trim() {
                    "0" => Ok(0u8),
                    "1" => Ok(1u8),
                    other => Err(KtmError::InvalidQMatrix(format!(
                        "line {}: cell `{other}` is not 0 or 1",
                        no + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn items(&self) -> usize {
        self.kc.len()
    }

    pub fn skills(&self) -> usize {
        self.skills
    }

    /// Skills involved by `item`, ascending.
    pub fn kc(&self, item: usize) -> &[usize] {
        &self.kc[item]
    }

    pub fn get(&self, item: usize, skill: usize) -> bool {
        self.kc[item].binary_search(&skill).is_ok()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.items() {
            let cells: Vec<&str> = (0..self.skills)
                .map(|k| if self.get(j, k) { "1" } else { "0" })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn load_qmatrix(path: impl AsRef<Path>) -> Result<QMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KtmError::io(path, e))?;
    QMatrix::parse(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub student: usize,
    pub item: usize,
    pub outcome: u8,
}

impl Triplet {
    pub fn new(student: usize, item: usize, outcome: bool) -> Self {
        Self {
            student,
            item,
            outcome: outcome as u8,
        }
    }
}

/// Per-(student, skill) wins and fails seen so far.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CounterState {
    skills: usize,
    wins: Vec<u32>,
    fails: Vec<u32>,
}

impl CounterState {
    pub fn new(students: usize, skills: usize) -> Self {
        Self {
            skills,
            wins: vec![0; students * skills],
            fails: vec![0; students * skills],
        }
    }

    pub fn wins(&self, student: usize, skill: usize) -> u32 {
        self.wins[student * self.skills + skill]
    }

    pub fn fails(&self, student: usize, skill: usize) -> u32 {
        self.fails[student * self.skills + skill]
    }

    pub fn attempts(&self, student: usize, skill: usize) -> u32 {
        self.wins(student, skill) + self.fails(student, skill)
    }

    /// Applies the outcome of `t` to every skill of its item.
    pub fn apply(&mut self, t: &Triplet, q: &QMatrix) {
        let base = t.student * self.skills;
        let counts = if t.outcome == 1 {
            &mut self.wins
        } else {
            &mut self.fails
        };
        for &k in q.kc(t.item) {
            counts[base + k] += 1;
        }
    }
}

pub fn update_counters(mut state: CounterState, t: &Triplet, q: &QMatrix) -> CounterState {
    state.apply(t, q);
    state
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraColumn {
    pub name: String,
    pub cardinality: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub users: bool,
    pub items: bool,
    pub skills: bool,
    pub wins: bool,
    pub fails: bool,
    pub attempts: bool,
    #[serde(default)]
    pub extra_columns: Vec<ExtraColumn>,
}

impl EncodingConfig {
    /// Parses block letters: `u`sers, `i`tems, `s`kills, `w`ins, `f`ails,
    /// `a`ttempts. Extras are attached separately.
    pub fn from_letters(code: &str) -> Result<(Self, bool)> {
        let mut cfg = Self::default();
        let mut extra = false;
        for c in code.chars() {
            let flag = match c {
                'u' => &mut cfg.users,
                'i' => &mut cfg.items,
                's' => &mut cfg.skills,
                'w' => &mut cfg.wins,
                'f' => &mut cfg.fails,
                'a' => &mut cfg.attempts,
                'e' => &mut extra,
                _ => return Err(KtmError::UnknownPreset(code.to_string())),
            };
            if *flag {
                return Err(KtmError::UnknownPreset(code.to_string()));
            }
            *flag = true;
        }
        Ok((cfg, extra))
    }

    pub fn letters(&self) -> String {
        [
            (self.users, 'u'),
            (self.items, 'i'),
            (self.skills, 's'),
            (self.wins, 'w'),
            (self.fails, 'f'),
            (self.attempts, 'a'),
            (!self.extra_columns.is_empty(), 'e'),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|&(_, c)| c)
        .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let any = self.users
            || self.items
            || self.skills
            || self.wins
            || self.fails
            || self.attempts
            || !self.extra_columns.is_empty();
        if !any {
            return Err(KtmError::InvalidConfig("no feature block enabled".into()));
        }
        if self.attempts && (self.wins || self.fails) {
            return Err(KtmError::InvalidConfig(
                "attempts cannot be combined with wins/fails counters".into(),
            ));
        }
        Ok(())
    }

    pub fn uses_counters(&self) -> bool {
        self.wins || self.fails || self.attempts
    }

    /// Block layout in canonical order: users, items, skills, wins, fails,
    /// attempts, then one block per extra column.
    pub fn feature_space(&self, students: usize, q: &QMatrix) -> Result<FeatureSpace> {
        self.validate()?;
        let s = q.skills();
        let mut blocks: Vec<(String, usize)> = Vec::new();
        for (on, name, width) in [
            (self.users, USERS, students),
            (self.items, ITEMS, q.items()),
            (self.skills, SKILLS, s),
            (self.wins, WINS, s),
            (self.fails, FAILS, s),
            (self.attempts, ATTEMPTS, s),
        ] {
            if on {
                blocks.push((name.to_string(), width));
            }
        }
        for col in &self.extra_columns {
            blocks.push((col.name.clone(), col.cardinality));
        }
        FeatureSpace::new(blocks)
    }
}

/// Stateless row builder for a fixed config and layout.
#[derive(Debug, Clone)]
pub struct RowEncoder<'a> {
    config: &'a EncodingConfig,
    q: &'a QMatrix,
    space: FeatureSpace,
    students: usize,
}

impl<'a> RowEncoder<'a> {
    pub fn new(config: &'a EncodingConfig, q: &'a QMatrix, students: usize) -> Result<Self> {
        let space = config.feature_space(students, q)?;
        Ok(Self {
            config,
            q,
            space,
            students,
        })
    }

    pub fn space(&self) -> &FeatureSpace {
        &self.space
    }

    pub fn check(&self, t: &Triplet) -> Result<()> {
        if t.student >= self.students {
            return Err(KtmError::IdOutOfRange {
                kind: "student",
                id: t.student,
                count: self.students,
            });
        }
        if t.item >= self.q.items() {
            return Err(KtmError::IdOutOfRange {
                kind: "item",
                id: t.item,
                count: self.q.items(),
            });
        }
        if t.outcome > 1 {
            return Err(KtmError::InvalidLabel(t.outcome.to_string()));
        }
        Ok(())
    }

    /// Row for `t` given the counters accumulated before it.
    pub fn encode(&self, t: &Triplet, counters: &CounterState, extras: &[usize]) -> Result<SparseRow> {
        self.check(t)?;
        let cfg = self.config;
        let kc = self.q.kc(t.item);
        let mut row = SparseRow::empty();
        if cfg.users {
            let off = self.space.offset(USERS)?;
            row.extend_sorted([(off + t.student, 1.0)]);
        }
        if cfg.items {
            let off = self.space.offset(ITEMS)?;
            row.extend_sorted([(off + t.item, 1.0)]);
        }
        if cfg.skills {
            let off = self.space.offset(SKILLS)?;
            row.extend_sorted(kc.iter().map(|&k| (off + k, 1.0)));
        }
        let counter_blocks: [(bool, &str, CounterFn); 3] = [
            (cfg.wins, WINS, CounterState::wins),
            (cfg.fails, FAILS, CounterState::fails),
            (cfg.attempts, ATTEMPTS, CounterState::attempts),
        ];
        for (on, name, count) in counter_blocks {
            if on {
                let off = self.space.offset(name)?;
                row.extend_sorted(
                    kc.iter()
                        .map(|&k| (off + k, f64::from(count(counters, t.student, k)))),
                );
            }
        }
        row.extend_sorted(encode_extra(&self.space, extras, cfg)?.into_entries());
        Ok(row)
    }
}

/// Encoded one-hot activations for the extra columns, or an empty fragment
/// when the config has none.
pub fn encode_extra(space: &FeatureSpace, extras: &[usize], config: &EncodingConfig) -> Result<SparseRow> {
    if config.extra_columns.is_empty() {
        return Ok(SparseRow::empty());
    }
    if extras.len() != config.extra_columns.len() {
        return Err(KtmError::LengthMismatch {
            expected: config.extra_columns.len(),
            actual: extras.len(),
        });
    }
    let mut entries = Vec::with_capacity(extras.len());
    for (col, &value) in config.extra_columns.iter().zip(extras) {
        if value >= col.cardinality {
            return Err(KtmError::IdOutOfRange {
                kind: "extra category",
                id: value,
                count: col.cardinality,
            });
        }
        entries.push((space.feature_index(&col.name, value)?, 1.0));
    }
    SparseRow::new(entries)
}

/// Encodes a whole chronological log. `extras` is either empty (no extra
/// columns) or holds one value vector per triplet.
pub fn encode_dataset(
    triplets: &[Triplet],
    q: &QMatrix,
    config: &EncodingConfig,
    students: usize,
    extras: &[Vec<usize>],
) -> Result<DesignMatrix> {
    let encoder = RowEncoder::new(config, q, students)?;
    if !config.extra_columns.is_empty() && extras.len() != triplets.len() {
        return Err(KtmError::LengthMismatch {
            expected: triplets.len(),
            actual: extras.len(),
        });
    }
    let mut counters = CounterState::new(
        if config.uses_counters() { students } else { 0 },
        q.skills(),
    );
    let mut rows = Vec::with_capacity(triplets.len());
    let mut labels = Vec::with_capacity(triplets.len());
    for (r, t) in triplets.iter().enumerate() {
        let ex = if config.extra_columns.is_empty() {
            &[][..]
        } else {
            &extras[r][..]
        };
        rows.push(encoder.encode(t, &counters, ex)?);
        labels.push(t.outcome);
        if config.uses_counters() {
            counters.apply(t, q);
        }
    }
    DesignMatrix::new(encoder.space, rows, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn example_q() -> QMatrix {
        QMatrix::parse("0,0,0\n1,1,0\n0,1,1\n").unwrap()
    }

    #[test]
    fn qmatrix_parse_example() {
        let q = example_q();
        assert_eq!((q.items(), q.skills()), (3, 3));
        assert!(q.kc(0).is_empty());
        assert_eq!(q.kc(1), &[0, 1]);
        assert_eq!(q.kc(2), &[1, 2]);
        assert_eq!(QMatrix::parse(&q.to_csv()).unwrap(), q);
    }

    #[test]
    fn qmatrix_all_zero_and_invalid() {
        let q = QMatrix::parse("0,0\n0,0\n").unwrap();
        assert!((0..2).all(|j| q.kc(j).is_empty()));
        assert!(QMatrix::parse("0,2\n").is_err());
        assert!(QMatrix::parse("0,1\n1\n").is_err());
    }

    #[test]
    fn load_qmatrix_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.csv");
        std::fs::write(&path, "0,0,0\n1,1,0\n0,1,1\n").unwrap();
        assert_eq!(load_qmatrix(&path).unwrap().kc(1), &[0, 1]);
        assert!(load_qmatrix(dir.path().join("missing.csv")).is_err());
    }

    #[test]
    fn update_counters_example() {
        let q = example_q();
        let state = update_counters(CounterState::new(2, 3), &Triplet::new(1, 1, true), &q);
        assert_eq!((state.wins(1, 0), state.wins(1, 1), state.wins(1, 2)), (1, 1, 0));
        assert_eq!((0..3).map(|k| state.fails(1, k)).sum::<u32>(), 0);
        let unchanged = update_counters(state.clone(), &Triplet::new(1, 0, false), &q);
        assert_eq!(unchanged, state);
    }

    #[test]
    fn update_counters_tally_oracle() {
        let q = QMatrix::parse("1,0,1\n0,1,0\n1,1,1\n0,0,0\n").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut state = CounterState::new(4, 3);
        let mut touches: HashMap<(usize, usize), u32> = HashMap::new();
        for _ in 0..50 {
            let t = Triplet::new(rng.random_range(0..4), rng.random_range(0..4), rng.random());
            for k in 0..3 {
                if q.get(t.item, k) {
                    *touches.entry((t.student, k)).or_default() += 1;
                }
            }
            state.apply(&t, &q);
        }
        for i in 0..4 {
            for k in 0..3 {
                let expected = touches.get(&(i, k)).copied().unwrap_or(0);
                assert_eq!(state.wins(i, k) + state.fails(i, k), expected);
                assert_eq!(state.attempts(i, k), expected);
            }
        }
    }

    #[test]
    fn single_triplet_has_no_history() {
        let q = example_q();
        let cfg = EncodingConfig {
            skills: true,
            wins: true,
            fails: true,
            ..Default::default()
        };
        let dm = encode_dataset(&[Triplet::new(0, 2, true)], &q, &cfg, 1, &[]).unwrap();
        let dense = dm.rows()[0].densify(9).unwrap();
        assert_eq!(dense, vec![0., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }

    #[test]
    fn config_validation() {
        assert!(EncodingConfig::default().validate().is_err());
        let bad = EncodingConfig {
            skills: true,
            attempts: true,
            wins: true,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let (cfg, extra) = EncodingConfig::from_letters("iswf").unwrap();
        assert!(cfg.items && cfg.skills && cfg.wins && cfg.fails && !cfg.users && !extra);
        assert!(EncodingConfig::from_letters("iix").is_err());
    }

    #[test]
    fn encode_errors() {
        let q = example_q();
        let cfg = EncodingConfig {
            users: true,
            items: true,
            ..Default::default()
        };
        assert!(encode_dataset(&[Triplet::new(2, 0, true)], &q, &cfg, 2, &[]).is_err());
        assert!(encode_dataset(&[Triplet::new(0, 3, true)], &q, &cfg, 2, &[]).is_err());
        let with_extra = EncodingConfig {
            extra_columns: vec![ExtraColumn {
                name: "tutor_mode".into(),
                cardinality: 4,
            }],
            ..cfg
        };
        assert!(encode_dataset(&[Triplet::new(0, 0, true)], &q, &with_extra, 2, &[]).is_err());
        assert!(
            encode_dataset(&[Triplet::new(0, 0, true)], &q, &with_extra, 2, &[vec![4]]).is_err()
        );
    }

    #[test]
    fn encode_extra_one_hot() {
        let cfg = EncodingConfig {
            items: true,
            extra_columns: vec![ExtraColumn {
                name: "tutor_mode".into(),
                cardinality: 4,
            }],
            ..Default::default()
        };
        let q = example_q();
        let space = cfg.feature_space(2, &q).unwrap();
        // tutor, test, pretest, posttest -> "test" is id 1
        let frag = encode_extra(&space, &[1], &cfg).unwrap();
        assert_eq!(frag.entries(), &[(4, 1.0)]);

        let none = EncodingConfig {
            items: true,
            ..Default::default()
        };
        assert!(encode_extra(&space, &[], &none).unwrap().is_empty());

        let two = EncodingConfig {
            items: true,
            extra_columns: vec![
                ExtraColumn { name: "a".into(), cardinality: 3 },
                ExtraColumn { name: "b".into(), cardinality: 5 },
            ],
            ..Default::default()
        };
        let space = two.feature_space(2, &q).unwrap();
        assert_eq!(space.total_width(), 3 + 3 + 5);
        assert_eq!(encode_extra(&space, &[2, 4], &two).unwrap().nnz(), 2);
        assert!(encode_extra(&space, &[3, 0], &two).is_err());
    }
}
