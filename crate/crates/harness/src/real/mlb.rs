//! MLB per-event counts: predict the second half of a season from the first.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{check_headers, PredictionTask};
use crate::error::{Error, Result};

/// How a season is cut into halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MidpointRule {
    /// Events on or before the midpoint of the season's first and last dates.
    #[default]
    Calendar,
    /// Events on or before the date of the median event.
    MedianEvent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlbTasks {
    pub batting: Vec<PredictionTask>,
    pub pitching: Vec<PredictionTask>,
}

#[derive(Debug, Deserialize)]
struct Row {
    date: String,
    player_id: String,
    role: String,
    count: u64,
}

pub const MLB_COLUMNS: [&str; 4] = ["date", "player_id", "role", "count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Role {
    Batting,
    Pitching,
}

struct Event {
    day: i32,
    player: String,
    role: Role,
    count: u64,
}

/// Per-season batting and pitching tasks with `n_y = 1`.
pub fn load_mlb(path: &Path, rule: MidpointRule) -> Result<MlbTasks> {
    let schema = |reason: String| Error::Schema { path: path.to_path_buf(), reason };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    check_headers(path, rdr.headers()?, &MLB_COLUMNS)?;
    let mut seasons: BTreeMap<i32, Vec<Event>> = BTreeMap::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| schema(format!("row {}: {e}", i + 2)))?;
        let date = NaiveDate::parse_from_str(&row.date, "%Y-%m-%d")
            .map_err(|e| schema(format!("row {}: date `{}`: {e}", i + 2, row.date)))?;
        let role = match row.role.to_ascii_lowercase().as_str() {
            "batting" | "batter" | "b" => Role::Batting,
            "pitching" | "pitcher" | "p" => Role::Pitching,
            other => return Err(schema(format!("row {}: role must be batting or pitching, got `{other}`", i + 2))),
        };
        use chrono::Datelike;
        seasons.entry(date.year()).or_default().push(Event {
            day: date.num_days_from_ce(),
            player: row.player_id,
            role,
            count: row.count,
        });
    }
    if seasons.is_empty() {
        return Err(Error::EmptyTasks(format!("{}: no events", path.display())));
    }
    let mut out = MlbTasks { batting: Vec::new(), pitching: Vec::new() };
    for (year, events) in seasons {
        let in_first = first_half_test(&events, rule).ok_or_else(|| schema(format!("season {year} has no midpoint")))?;
        let mut roles: HashMap<&str, Role> = HashMap::new();
        let mut tallies: BTreeMap<Role, BTreeMap<String, (u64, u64)>> = BTreeMap::new();
        for e in &events {
            if let Some(prev) = roles.insert(&e.player, e.role) {
                if prev != e.role {
                    return Err(schema(format!("season {year}: player `{}` has both batting and pitching rows", e.player)));
                }
            }
            let t = tallies.entry(e.role).or_default().entry(e.player.clone()).or_default();
            if in_first(e.day) {
                t.0 += e.count;
            } else {
                t.1 += e.count;
            }
        }
        for (role, pairs) in tallies {
            let (name, dest) = match role {
                Role::Batting => ("batting", &mut out.batting),
                Role::Pitching => ("pitching", &mut out.pitching),
            };
            dest.push(PredictionTask::from_map(format!("mlb:{year}:{name}"), pairs, 1.0)?);
        }
    }
    Ok(out)
}

/// Predicate on day numbers selecting the first half, or `None` for a single-day season.
fn first_half_test(events: &[Event], rule: MidpointRule) -> Option<impl Fn(i32) -> bool> {
    let first = events.iter().map(|e| e.day).min()?;
    let last = events.iter().map(|e| e.day).max()?;
    if first == last {
        return None;
    }
    let cut2 = match rule {
        // Compare doubled days so a half-day midpoint needs no rounding.
        MidpointRule::Calendar => first as i64 + last as i64,
        MidpointRule::MedianEvent => {
            let mut days: Vec<i32> = events.iter().map(|e| e.day).collect();
            days.sort_unstable();
            let median = days[(days.len() - 1) / 2];
            if median == last {
                return None;
            }
            2 * median as i64
        }
    };
    Some(move |day: i32| 2 * day as i64 <= cut2)
}
