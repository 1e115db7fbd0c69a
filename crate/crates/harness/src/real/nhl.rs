//! NHL skater goals: predict season `j + 1` from season `j`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{check_headers, PredictionTask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionFilter {
    All,
    Defender,
    Center,
    Winger,
}

impl PositionFilter {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::All => "all",
            Self::Defender => "defender",
            Self::Center => "center",
            Self::Winger => "winger",
        }
    }

    /// Accepts full names and the usual abbreviations (`D`, `C`, `LW`, `RW`, `W`, `F`).
    fn admits(self, position: &str) -> Result<bool> {
        let p = position.trim().to_ascii_lowercase();
        let class = match p.as_str() {
            "d" | "defense" | "defence" | "defender" | "defenseman" => Self::Defender,
            "c" | "center" | "centre" => Self::Center,
            "lw" | "rw" | "w" | "l" | "r" | "f" | "winger" | "left wing" | "right wing" | "forward" => Self::Winger,
            _ => return Err(Error::InvalidArgument(format!("unknown position `{position}`"))),
        };
        Ok(self == Self::All || self == class)
    }
}

impl std::str::FromStr for PositionFilter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(Self::All),
            "defender" => Ok(Self::Defender),
            "center" => Ok(Self::Center),
            "winger" => Ok(Self::Winger),
            _ => Err(Error::InvalidArgument(format!("position filter must be all|defender|center|winger, got `{s}`"))),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Row {
    season: String,
    player_id: String,
    position: String,
    goals: u64,
}

pub const NHL_COLUMNS: [&str; 4] = ["season", "player_id", "position", "goals"];

/// One task per pair of adjacent seasons in the file, over players present in both.
///
/// Goals are summed per (season, player); seasons are ordered as strings.
pub fn load_nhl(path: &Path, filter: PositionFilter) -> Result<Vec<PredictionTask>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    check_headers(path, rdr.headers()?, &NHL_COLUMNS)?;
    let mut seasons: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    let mut all_seasons = BTreeSet::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        let row = rec.map_err(|e| Error::Schema { path: path.to_path_buf(), reason: format!("row {}: {e}", i + 2) })?;
        all_seasons.insert(row.season.clone());
        if filter.admits(&row.position)? {
            *seasons.entry(row.season).or_default().entry(row.player_id).or_default() += row.goals;
        }
    }
    let order: Vec<&String> = all_seasons.iter().collect();
    let mut tasks = Vec::new();
    for w in order.windows(2) {
        let (Some(a), Some(b)) = (seasons.get(w[0]), seasons.get(w[1])) else { continue };
        let pairs: BTreeMap<String, (u64, u64)> =
            a.iter().filter_map(|(p, &x)| b.get(p).map(|&y| (p.clone(), (x, y)))).collect();
        if pairs.is_empty() {
            continue;
        }
        tasks.push(PredictionTask::from_map(format!("nhl:{}:{}-{}", filter.as_str(), w[0], w[1]), pairs, 1.0)?);
    }
    if tasks.is_empty() {
        return Err(Error::EmptyTasks(format!(
            "{}: no consecutive seasons share players under filter `{}`",
            path.display(),
            filter.as_str()
        )));
    }
    Ok(tasks)
}
