//! Roll-call records to a binary matrix oriented by party.
//!
//! Rows are senators and columns are bills. A bill is oriented toward the
//! party whose voting members support it at the higher rate: `Y = 1` for a
//! Yea on a bill favoured by `party_a`, and for a Nay on a bill favoured by
//! `party_b`. Absences are missing cells.
//!
//! Steps, each recorded in the audit log:
//!
//! 1. senators whose records span fewer than `min_service_days`, or who
//!    never cast a Yea or Nay, are dropped;
//! 2. bills with no Yea or Nay left are dropped;
//! 3. bills whose remaining votes are all the same are dropped;
//! 4. bills where either party has no voting member, or both parties
//!    support them at the same rate, are dropped;
//! 5. senators left without any vote are dropped.

use std::collections::HashMap;
use std::io::Read;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::MatrixMeta;
use crate::model::ObservedBinaryMatrix;

pub const DEFAULT_MIN_SERVICE_DAYS: i64 = 183;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Party {
    Rep,
    Dem,
    Ind,
}

impl std::str::FromStr for Party {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Rep" => Ok(Party::Rep),
            "Dem" => Ok(Party::Dem),
            "Ind" => Ok(Party::Ind),
            other => Err(format!("party must be Rep, Dem or Ind, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vote {
    Yea,
    Nay,
    Absent,
}

impl std::str::FromStr for Vote {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Yea" => Ok(Vote::Yea),
            "Nay" => Ok(Vote::Nay),
            "Absent" => Ok(Vote::Absent),
            other => Err(format!("vote must be Yea, Nay or Absent, got {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RollCallRecord {
    pub senator: String,
    pub party: Party,
    pub bill: String,
    pub vote: Vote,
    pub date: NaiveDate,
}

/// Reads `senator,party,bill,vote,date` rows with ISO dates.
pub fn read_rollcall<R: Read>(reader: R) -> Result<Vec<RollCallRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let parse = |line: u64, message: String| Error::Parse { line, message };
    let headers = rdr
        .headers()
        .map_err(|e| parse(1, e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    if headers != ["senator", "party", "bill", "vote", "date"] {
        return Err(parse(
            1,
            format!(
                "expected header senator,party,bill,vote,date, got {:?}",
                headers.join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != 5 {
            return Err(parse(line, format!("expected 5 fields, got {}", rec.len())));
        }
        let f = |k: usize| rec[k].trim();
        let party = f(1).parse().map_err(|m| parse(line, m))?;
        let vote = f(3).parse().map_err(|m| parse(line, m))?;
        let date = NaiveDate::parse_from_str(f(4), "%Y-%m-%d")
            .map_err(|e| parse(line, format!("bad date {:?}: {e}", f(4))))?;
        if f(0).is_empty() || f(2).is_empty() {
            return Err(parse(line, "empty senator or bill".into()));
        }
        if let Some(first) = seen.insert((f(0).to_string(), f(2).to_string()), line) {
            return Err(parse(
                line,
                format!("senator {:?} on bill {:?} already recorded at line {first}", f(0), f(2)),
            ));
        }
        out.push(RollCallRecord {
            senator: f(0).to_string(),
            party,
            bill: f(2).to_string(),
            vote,
            date,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    pub step: u8,
    pub kind: &'static str,
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PrepCounts {
    pub senators_in: usize,
    pub bills_in: usize,
    pub senators_short_service: usize,
    pub senators_never_voted: usize,
    pub bills_no_votes: usize,
    pub bills_constant: usize,
    pub bills_unoriented: usize,
    pub senators_emptied: usize,
    pub senators_out: usize,
    pub bills_out: usize,
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollCallMatrix {
    pub data: ObservedBinaryMatrix,
    pub meta: MatrixMeta,
    /// Party of each kept senator, in row order.
    pub parties: Vec<Party>,
    pub audit: Vec<AuditEntry>,
    pub counts: PrepCounts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrepOptions {
    pub min_service_days: i64,
    pub party_a: Party,
    pub party_b: Party,
}

impl Default for PrepOptions {
    fn default() -> Self {
        Self {
            min_service_days: DEFAULT_MIN_SERVICE_DAYS,
            party_a: Party::Rep,
            party_b: Party::Dem,
        }
    }
}

/// Index of each distinct name in order of first appearance.
fn first_seen<'a>(names: impl Iterator<Item = &'a str>) -> (Vec<String>, HashMap<&'a str, usize>) {
    let mut order = Vec::new();
    let mut index = HashMap::new();
    for n in names {
        index.entry(n).or_insert_with(|| {
            order.push(n.to_string());
            order.len() - 1
        });
    }
    (order, index)
}

pub fn preprocess_rollcall(records: &[RollCallRecord], opts: &PrepOptions) -> Result<RollCallMatrix> {
    if opts.party_a == opts.party_b {
        return Err(Error::InvalidArgument("party_a and party_b must differ".into()));
    }
    for p in [opts.party_a, opts.party_b] {
        if !records.iter().any(|r| r.party == p) {
            return Err(Error::InvalidArgument(format!(
                "no senator of party {p:?} in the input"
            )));
        }
    }
    let (senators, s_index) = first_seen(records.iter().map(|r| r.senator.as_str()));
    let (bills, b_index) = first_seen(records.iter().map(|r| r.bill.as_str()));
    let mut party = vec![None; senators.len()];
    for r in records {
        let s = s_index[r.senator.as_str()];
        match party[s] {
            None => party[s] = Some(r.party),
            Some(p) if p != r.party => {
                return Err(Error::Format(format!(
                    "senator {:?} listed under two parties",
                    r.senator
                )));
            }
            _ => {}
        }
    }
    let party: Vec<Party> = party
        .into_iter()
        .map(|p| p.expect("every senator has a record"))
        .collect();

    let mut audit = Vec::new();
    let mut counts = PrepCounts {
        senators_in: senators.len(),
        bills_in: bills.len(),
        ..PrepCounts::default()
    };

    // Step 1: service span and participation.
    let mut first = vec![NaiveDate::MAX; senators.len()];
    let mut last = vec![NaiveDate::MIN; senators.len()];
    let mut voted = vec![false; senators.len()];
    for r in records {
        let s = s_index[r.senator.as_str()];
        first[s] = first[s].min(r.date);
        last[s] = last[s].max(r.date);
        voted[s] |= r.vote != Vote::Absent;
    }
    let mut keep_s = vec![true; senators.len()];
    for s in 0..senators.len() {
        let span = (last[s] - first[s]).num_days();
        if span < opts.min_service_days {
            keep_s[s] = false;
            counts.senators_short_service += 1;
            audit.push(AuditEntry {
                step: 1,
                kind: "senator",
                id: senators[s].clone(),
                reason: format!("service span {span} days < {}", opts.min_service_days),
            });
        } else if !voted[s] {
            keep_s[s] = false;
            counts.senators_never_voted += 1;
            audit.push(AuditEntry {
                step: 1,
                kind: "senator",
                id: senators[s].clone(),
                reason: "no Yea or Nay votes".into(),
            });
        }
    }

    // Votes of kept senators, per bill.
    let mut by_bill: Vec<Vec<(usize, Vote)>> = vec![Vec::new(); bills.len()];
    for r in records {
        let s = s_index[r.senator.as_str()];
        if keep_s[s] && r.vote != Vote::Absent {
            by_bill[b_index[r.bill.as_str()]].push((s, r.vote));
        }
    }

    let mut keep_b = vec![true; bills.len()];
    let mut favours_a = vec![false; bills.len()];
    for (b, votes) in by_bill.iter().enumerate() {
        let drop = |step: u8, reason: String, audit: &mut Vec<AuditEntry>| {
            audit.push(AuditEntry {
                step,
                kind: "bill",
                id: bills[b].clone(),
                reason,
            })
        };
        // Step 2.
        if votes.is_empty() {
            keep_b[b] = false;
            counts.bills_no_votes += 1;
            drop(2, "no Yea or Nay votes".into(), &mut audit);
            continue;
        }
        // Step 3.
        if votes.iter().all(|&(_, v)| v == votes[0].1) {
            keep_b[b] = false;
            counts.bills_constant += 1;
            drop(3, format!("all {} votes {:?}", votes.len(), votes[0].1), &mut audit);
            continue;
        }
        // Step 4: support among each party's voting members.
        let support = |p: Party| {
            let (mut yea, mut total) = (0usize, 0usize);
            for &(s, v) in votes {
                if party[s] == p {
                    total += 1;
                    yea += usize::from(v == Vote::Yea);
                }
            }
            (yea, total)
        };
        let (ya, ta) = support(opts.party_a);
        let (yb, tb) = support(opts.party_b);
        if ta == 0 || tb == 0 {
            keep_b[b] = false;
            counts.bills_unoriented += 1;
            let silent = if ta == 0 { opts.party_a } else { opts.party_b };
            drop(4, format!("no {silent:?} member voted"), &mut audit);
            continue;
        }
        // Compare ya/ta with yb/tb exactly.
        let (lhs, rhs) = (ya * tb, yb * ta);
        if lhs == rhs {
            keep_b[b] = false;
            counts.bills_unoriented += 1;
            drop(4, format!("equal support {ya}/{ta} and {yb}/{tb}"), &mut audit);
            continue;
        }
        favours_a[b] = lhs > rhs;
    }

    // Step 5 and assembly.
    let mut has_vote = vec![false; senators.len()];
    for (b, votes) in by_bill.iter().enumerate() {
        if keep_b[b] {
            for &(s, _) in votes {
                has_vote[s] = true;
            }
        }
    }
    for s in 0..senators.len() {
        if keep_s[s] && !has_vote[s] {
            keep_s[s] = false;
            counts.senators_emptied += 1;
            audit.push(AuditEntry {
                step: 5,
                kind: "senator",
                id: senators[s].clone(),
                reason: "no votes left on kept bills".into(),
            });
        }
    }
    let mut row_of = vec![usize::MAX; senators.len()];
    let mut row_labels = Vec::new();
    let mut parties = Vec::new();
    for s in 0..senators.len() {
        if keep_s[s] {
            row_of[s] = row_labels.len();
            row_labels.push(senators[s].clone());
            parties.push(party[s]);
        }
    }
    let mut col_of = vec![usize::MAX; bills.len()];
    let mut col_labels = Vec::new();
    for b in 0..bills.len() {
        if keep_b[b] {
            col_of[b] = col_labels.len();
            col_labels.push(bills[b].clone());
        }
    }
    let mut entries = Vec::new();
    for (b, votes) in by_bill.iter().enumerate() {
        if !keep_b[b] {
            continue;
        }
        for &(s, v) in votes {
            if keep_s[s] {
                let y = u8::from((v == Vote::Yea) == favours_a[b]);
                entries.push((row_of[s], col_of[b], y));
            }
        }
    }
    let (n, j) = (row_labels.len(), col_labels.len());
    if n == 0 || j == 0 {
        return Err(Error::InvalidArgument(
            "preprocessing removed every senator or every bill".into(),
        ));
    }
    let data = ObservedBinaryMatrix::new(n, j, entries)?;
    counts.senators_out = n;
    counts.bills_out = j;
    counts.missing_fraction = data.design_stats().missing_fraction;
    Ok(RollCallMatrix {
        data,
        meta: MatrixMeta {
            n_rows: n,
            n_cols: j,
            row_labels,
            col_labels,
        },
        parties,
        audit,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &str, p: Party, b: &str, v: Vote, d: &str) -> RollCallRecord {
        RollCallRecord {
            senator: s.into(),
            party: p,
            bill: b.into(),
            vote: v,
            date: NaiveDate::parse_from_str(d, "%Y-%m-%d").unwrap(),
        }
    }

    #[test]
    fn orientation_follows_party_support() {
        use Party::*;
        use Vote::*;
        let r = vec![
            rec("r1", Rep, "b1", Yea, "2010-01-01"),
            rec("d1", Dem, "b1", Nay, "2010-01-01"),
            rec("r1", Rep, "b2", Nay, "2011-01-01"),
            rec("d1", Dem, "b2", Yea, "2011-01-01"),
        ];
        let m = preprocess_rollcall(&r, &PrepOptions::default()).unwrap();
        // b1 is a Rep bill, b2 a Dem bill: the Rep senator scores 1 on both.
        assert_eq!(m.data.value(0, 0), Some(1));
        assert_eq!(m.data.value(1, 0), Some(0));
        assert_eq!(m.data.value(0, 1), Some(1));
        assert_eq!(m.data.value(1, 1), Some(0));
    }

    #[test]
    fn absent_senator_is_audited() {
        use Party::*;
        use Vote::*;
        let r = vec![
            rec("r1", Rep, "b1", Yea, "2010-01-01"),
            rec("d1", Dem, "b1", Nay, "2010-01-01"),
            rec("x", Ind, "b1", Absent, "2010-01-01"),
            rec("r1", Rep, "b2", Nay, "2011-01-01"),
            rec("d1", Dem, "b2", Yea, "2011-01-01"),
            rec("x", Ind, "b2", Absent, "2011-01-01"),
        ];
        let m = preprocess_rollcall(&r, &PrepOptions::default()).unwrap();
        assert_eq!(m.counts.senators_never_voted, 1);
        assert!(m.audit.iter().any(|a| a.id == "x" && a.step == 1));
        assert_eq!(m.meta.row_labels, vec!["r1", "d1"]);
    }

    #[test]
    fn token_errors() {
        let bad = "senator,party,bill,vote,date\na,Rep,b,Maybe,2010-01-01\n";
        assert!(matches!(
            read_rollcall(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let bad = "senator,party,bill,vote,date\na,Whig,b,Yea,2010-01-01\n";
        assert!(matches!(
            read_rollcall(bad.as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        let dup = "senator,party,bill,vote,date\na,Rep,b,Yea,2010-01-01\na,Rep,b,Nay,2010-01-02\n";
        assert!(matches!(
            read_rollcall(dup.as_bytes()),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
