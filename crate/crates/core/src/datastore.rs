//! JSONL exchange format for QA records and their hidden-state vectors.
//!
//! One record per line:
//!
//! ```text
//! {"id": str, "question_text": str, "answer_text": str, "question": [int],
//!  "answer": [int], "role": str, "hidden": [float] | null}
//! ```
//!
//! There is no header line. The dataset dimension is taken from the first
//! record that carries a hidden vector. Floats are written as the shortest
//! decimal that parses back to the same bits.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Forget,
    Retain,
    Neighborhood,
    RealWorld,
    RealAuthors,
    Rephrase,
    Jailbreak,
}

impl Role {
    pub const ALL: [Role; 7] = [
        Role::Forget,
        Role::Retain,
        Role::Neighborhood,
        Role::RealWorld,
        Role::RealAuthors,
        Role::Rephrase,
        Role::Jailbreak,
    ];

    /// Roles whose likelihoods feed model utility.
    pub const UTILITY: [Role; 4] = [
        Role::Retain,
        Role::Neighborhood,
        Role::RealWorld,
        Role::RealAuthors,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Forget => "forget",
            Role::Retain => "retain",
            Role::Neighborhood => "neighborhood",
            Role::RealWorld => "real_world",
            Role::RealAuthors => "real_authors",
            Role::Rephrase => "rephrase",
            Role::Jailbreak => "jailbreak",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Role::ALL
            .iter()
            .copied()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub question_text: String,
    pub answer_text: String,
    pub question: Vec<u32>,
    pub answer: Vec<u32>,
    pub role: Role,
    pub hidden: Option<Vec<f64>>,
}

/// On-disk shape; `role` stays a string so unknown values get a line-numbered error.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    question_text: String,
    answer_text: String,
    question: Vec<u32>,
    answer: Vec<u32>,
    role: String,
    hidden: Option<Vec<f64>>,
}

/// Ordered records sharing one hidden dimension.
///
/// Equality compares records and dimension; `provenance` is a free-text tag
/// and is not part of the file.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    records: Vec<Record>,
    dim: usize,
    pub provenance: String,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.records == other.records
    }
}

impl Dataset {
    /// Build a dataset, enforcing every record invariant.
    pub fn new(records: Vec<Record>, provenance: impl Into<String>) -> Result<Self> {
        let mut ids = HashSet::with_capacity(records.len());
        let mut dim = None;
        for (i, rec) in records.iter().enumerate() {
            check_record(rec, i + 1, &mut ids, &mut dim)?;
        }
        Ok(Dataset {
            records,
            dim: dim.unwrap_or(0),
            provenance: provenance.into(),
        })
    }

    pub fn empty(provenance: impl Into<String>) -> Self {
        Dataset {
            records: Vec::new(),
            dim: 0,
            provenance: provenance.into(),
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn into_records(self) -> Vec<Record> {
        self.records
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&Record> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Id to hidden-vector map; errors on the first record without one.
    pub fn hidden_map(&self) -> Result<HashMap<String, Vec<f64>>> {
        self.records
            .iter()
            .map(|r| match &r.hidden {
                Some(h) => Ok((r.id.clone(), h.clone())),
                None => Err(Error::MissingHidden(r.id.clone())),
            })
            .collect()
    }

    /// Records whose ids are in `ids`, in dataset order.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Dataset {
        let wanted: HashSet<&str> = ids.iter().map(|s| s.as_ref()).collect();
        let records = self
            .records
            .iter()
            .filter(|r| wanted.contains(r.id.as_str()))
            .cloned()
            .collect();
        self.derived(records)
    }

    /// Replace every record's hidden vector. `hidden` must be parallel to the records.
    pub fn with_hidden(&self, hidden: Vec<Vec<f64>>) -> Result<Dataset> {
        if hidden.len() != self.records.len() {
            return Err(Error::invalid(format!(
                "{} hidden vectors for {} records",
                hidden.len(),
                self.records.len()
            )));
        }
        let records = self
            .records
            .iter()
            .zip(hidden)
            .map(|(r, h)| Record {
                hidden: Some(h),
                ..r.clone()
            })
            .collect();
        Dataset::new(records, self.provenance.clone())
    }

    /// Concatenate datasets; ids must stay unique.
    pub fn concat<'a>(
        parts: impl IntoIterator<Item = &'a Dataset>,
        provenance: &str,
    ) -> Result<Dataset> {
        let records = parts
            .into_iter()
            .flat_map(|d| d.records.iter().cloned())
            .collect();
        Dataset::new(records, provenance)
    }

    fn derived(&self, records: Vec<Record>) -> Dataset {
        let dim = if records.iter().any(|r| r.hidden.is_some()) {
            self.dim
        } else {
            0
        };
        Dataset {
            records,
            dim,
            provenance: self.provenance.clone(),
        }
    }
}

fn check_record<'a>(
    rec: &'a Record,
    line: usize,
    ids: &mut HashSet<&'a str>,
    dim: &mut Option<usize>,
) -> Result<()> {
    if !ids.insert(rec.id.as_str()) {
        return Err(Error::DuplicateId {
            line,
            id: rec.id.clone(),
        });
    }
    if rec.answer.is_empty() {
        return Err(Error::Malformed {
            line,
            msg: "answer is empty".into(),
        });
    }
    if let Some(h) = &rec.hidden {
        match *dim {
            None => *dim = Some(h.len()),
            Some(expected) if expected != h.len() => {
                return Err(Error::DimensionMismatch {
                    line,
                    expected,
                    got: h.len(),
                })
            }
            Some(_) => {}
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                line,
                msg: "hidden contains a non-finite value".into(),
            });
        }
    }
    Ok(())
}

/// Parse JSONL from any reader. Trailing blank lines are ignored; interior ones are errors.
pub fn read_dataset<R: BufRead>(reader: R, provenance: &str) -> Result<Dataset> {
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    let mut dim = None;
    let mut blank_line = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(provenance, e))?;
        if line.trim().is_empty() {
            blank_line.get_or_insert(lineno);
            continue;
        }
        if let Some(line) = blank_line {
            return Err(Error::Malformed {
                line,
                msg: "blank line".into(),
            });
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            line: lineno,
            msg: e.to_string(),
        })?;
        let role = raw
            .role
            .parse::<Role>()
            .map_err(|role| Error::UnknownRole { line: lineno, role })?;
        let rec = Record {
            id: raw.id,
            question_text: raw.question_text,
            answer_text: raw.answer_text,
            question: raw.question,
            answer: raw.answer,
            role,
            hidden: raw.hidden,
        };
        if !ids.insert(rec.id.clone()) {
            return Err(Error::DuplicateId {
                line: lineno,
                id: rec.id,
            });
        }
        check_record(&rec, lineno, &mut HashSet::new(), &mut dim)?;
        records.push(rec);
    }
    Ok(Dataset {
        records,
        dim: dim.unwrap_or(0),
        provenance: provenance.to_string(),
    })
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), &path.display().to_string())
}

pub fn write_records<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for rec in &ds.records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io(ds.provenance.clone(), e))?;
    }
    Ok(())
}

pub fn write_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(bad) = ds.records.iter().find(|r| {
        r.hidden
            .as_ref()
            .is_some_and(|h| h.iter().any(|v| !v.is_finite()))
    }) {
        return Err(Error::invalid(format!(
            "record {:?} has a non-finite hidden value",
            bad.id
        )));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_records(ds, &mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Partition records by role. Buckets keep input order; absent roles have no entry.
pub fn split_by_role(ds: &Dataset) -> BTreeMap<Role, Dataset> {
    let mut buckets: BTreeMap<Role, Vec<Record>> = BTreeMap::new();
    for rec in &ds.records {
        buckets.entry(rec.role).or_default().push(rec.clone());
    }
    buckets
        .into_iter()
        .map(|(role, records)| (role, ds.derived(records)))
        .collect()
}
