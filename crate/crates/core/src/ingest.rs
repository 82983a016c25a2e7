//! Turn a real message log into threshold-mix rounds.

use std::path::Path;

use indexmap::IndexSet;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::mixsim::{Counts, MixConfig, Trace};
use crate::population::UserPopulation;

pub const DEFAULT_THRESHOLD: u32 = 10;
pub const DEFAULT_MIN_SENDER_MESSAGES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub timestamp: i64,
    pub sender: String,
    pub receiver: String,
}

/// Events in non-decreasing timestamp order (ties keep file order), with
/// sender and receiver dictionaries in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventLog {
    pub events: Vec<Event>,
    pub senders: IndexSet<String>,
    pub receivers: IndexSet<String>,
}

impl EventLog {
    pub fn from_events(mut events: Vec<Event>) -> Result<Self> {
        if events.is_empty() {
            return Err(Error::EmptyLog);
        }
        events.sort_by_key(|e| e.timestamp);
        let senders = events.iter().map(|e| e.sender.clone()).collect();
        let receivers = events.iter().map(|e| e.receiver.clone()).collect();
        Ok(EventLog {
            events,
            senders,
            receivers,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let mut events = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let perr = |message: String| Error::Parse { line, message };
            if rec.len() != 3 {
                return Err(perr(format!(
                    "expected timestamp,sender,receiver; found {} field(s)",
                    rec.len()
                )));
            }
            let timestamp = rec[0]
                .parse::<i64>()
                .map_err(|_| perr(format!("bad timestamp '{}'", &rec[0])))?;
            if rec[1].is_empty() || rec[2].is_empty() {
                return Err(perr("empty sender or receiver id".into()));
            }
            events.push(Event {
                timestamp,
                sender: rec[1].to_string(),
                receiver: rec[2].to_string(),
            });
        }
        Self::from_events(events)
    }
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    EventLog::parse(&text)
}

/// Batch the log into rounds of exactly `t` messages.
///
/// Senders with fewer than `min_sender_messages` events are dropped first;
/// an incomplete final batch is discarded. The returned population holds the
/// empirical profiles and frequencies of the events that made it into a
/// round, indexed like the trace's rectangular sender and receiver axes.
pub fn build_rounds(
    log: &EventLog,
    t: u32,
    min_sender_messages: usize,
) -> Result<(Trace, UserPopulation)> {
    if t == 0 {
        return Err(Error::invalid("t must be at least 1"));
    }
    let mut per_sender = vec![0usize; log.senders.len()];
    for e in &log.events {
        per_sender[log.senders.get_index_of(&e.sender).unwrap()] += 1;
    }
    let kept: Vec<&Event> = log
        .events
        .iter()
        .filter(|e| per_sender[log.senders.get_index_of(&e.sender).unwrap()] >= min_sender_messages)
        .collect();

    let t_us = t as usize;
    let rho = kept.len() / t_us;
    if rho == 0 {
        return Err(Error::EmptyTrace(format!(
            "{} events retained, need at least t = {t}",
            kept.len()
        )));
    }
    let retained = &kept[..rho * t_us];

    let senders: IndexSet<&str> = retained.iter().map(|e| e.sender.as_str()).collect();
    let receivers: IndexSet<&str> = retained.iter().map(|e| e.receiver.as_str()).collect();
    let (ns, nr) = (senders.len(), receivers.len());

    let mut u = Counts::zeros(rho, ns);
    let mut y = Counts::zeros(rho, nr);
    let mut pair_counts = DMatrix::<f64>::zeros(ns, nr);
    let mut sent = vec![0u64; ns];
    for (k, e) in retained.iter().enumerate() {
        let r = k / t_us;
        let i = senders.get_index_of(e.sender.as_str()).unwrap();
        let j = receivers.get_index_of(e.receiver.as_str()).unwrap();
        u.row_mut(r)[i] += 1;
        y.row_mut(r)[j] += 1;
        pair_counts[(i, j)] += 1.0;
        sent[i] += 1;
    }

    let total = (rho * t_us) as f64;
    let mut profiles = pair_counts;
    for (i, mut row) in profiles.row_iter_mut().enumerate() {
        row /= sent[i] as f64;
    }
    let frequencies = DVector::from_iterator(ns, sent.iter().map(|&c| c as f64 / total));
    let pop = UserPopulation::new(profiles, frequencies)?.with_labels(
        senders.iter().map(|s| s.to_string()).collect(),
        receivers.iter().map(|s| s.to_string()).collect(),
    )?;

    let trace = Trace {
        u,
        y,
        config: MixConfig::threshold(t),
        seed: None,
        ground_truth: None,
    };
    Ok((trace, pop))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_counts_ids() {
        let log = EventLog::parse("0,a,x\n5,b,y").unwrap();
        assert_eq!(log.events.len(), 2);
        assert_eq!(log.senders.len(), 2);
        assert_eq!(log.receivers.len(), 2);
    }

    #[test]
    fn sorts_stably() {
        let log = EventLog::parse("# comment\n9,a,x\n3,b,y\n3,c,z\n").unwrap();
        let order: Vec<&str> = log.events.iter().map(|e| e.sender.as_str()).collect();
        assert_eq!(order, ["b", "c", "a"]);
    }

    #[test]
    fn arity_error_reports_line() {
        match EventLog::parse("0,a") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
        match EventLog::parse("0,a,x\n1,b,y\nzz,c,d\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(EventLog::parse(""), Err(Error::EmptyLog)));
        assert!(matches!(EventLog::parse("# only\n"), Err(Error::EmptyLog)));
    }

    #[test]
    fn batching() {
        let log = EventLog::parse("0,a,x\n1,b,y\n2,a,z\n").unwrap();
        let (tr, pop) = build_rounds(&log, 2, 1).unwrap();
        assert_eq!(tr.rounds(), 1);
        assert_eq!(tr.u.row(0), &[1, 1]);
        assert_eq!(tr.y.row(0), &[1, 1]);
        assert_eq!(pop.receiver_labels().unwrap(), ["x", "y"]);
        assert!(build_rounds(&log, 4, 1).is_err());
    }

    #[test]
    fn filter_and_empirical_profiles() {
        let log = EventLog::parse("0,a,x\n1,a,x\n2,a,y\n3,a,x\n4,b,z\n").unwrap();
        let (tr, pop) = build_rounds(&log, 2, 2).unwrap();
        assert_eq!(tr.n_senders(), 1);
        assert_eq!(pop.sender_labels().unwrap(), ["a"]);
        assert_eq!(pop.profiles()[(0, 0)], 0.75);
        assert_eq!(pop.frequencies()[0], 1.0);
        for r in 0..tr.rounds() {
            assert_eq!(tr.u.row(r).iter().sum::<u32>(), 2);
            assert_eq!(tr.y.row(r).iter().sum::<u32>(), 2);
        }
        let again = build_rounds(&log, 2, 2).unwrap();
        assert_eq!(again.0, tr);
        assert_eq!(again.1, pop);
    }
}
