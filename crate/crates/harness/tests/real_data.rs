use std::path::PathBuf;

use eb_harness::real::{
    aggregate_scores, load_mlb, load_nhl, load_wordfreq, score_tasks, MidpointRule, PositionFilter, WordfreqConfig,
};
use eb_harness::Error;
use poisson_eb::estimators::{build_estimator, Estimator, EstimatorContext};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

#[test]
fn nhl_fixture_round_trip() {
    let tasks = load_nhl(&fixture("nhl.csv"), PositionFilter::All).unwrap();
    assert_eq!(tasks.len(), 1);
    let t = &tasks[0];
    assert_eq!(t.task_id, "nhl:all:2018-19-2019-20");
    assert_eq!(t.keys, vec!["p01", "p02", "p03"]);
    assert_eq!(t.xs, vec![12, 3, 22]);
    assert_eq!(t.ys, vec![15, 1, 18]);
    assert_eq!(t.n_y, 1.0);
}

#[test]
fn nhl_position_filters() {
    let d = load_nhl(&fixture("nhl.csv"), PositionFilter::Defender).unwrap();
    assert_eq!((d[0].keys.clone(), d[0].xs.clone()), (vec!["p02".to_string()], vec![3]));
    let w = load_nhl(&fixture("nhl.csv"), PositionFilter::Winger).unwrap();
    assert_eq!(w[0].keys, vec!["p03"]);
}

#[test]
fn nhl_filter_excluding_everything_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.csv");
    std::fs::write(&p, "season,player_id,position,goals\n1,a,C,1\n2,a,C,2\n").unwrap();
    assert!(matches!(load_nhl(&p, PositionFilter::Defender), Err(Error::EmptyTasks(_))));
}

#[test]
fn nhl_missing_column_is_a_schema_error() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "season,player,position,goals\n1,a,C,1\n").unwrap();
    assert!(matches!(load_nhl(&p, PositionFilter::All), Err(Error::Schema { .. })));
}

#[test]
fn nhl_row_order_does_not_matter() {
    let text = std::fs::read_to_string(fixture("nhl.csv")).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[1..].reverse();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("shuffled.csv");
    std::fs::write(&p, lines.join("\n")).unwrap();
    assert_eq!(load_nhl(&p, PositionFilter::All).unwrap(), load_nhl(&fixture("nhl.csv"), PositionFilter::All).unwrap());
}

#[test]
fn mlb_fixture_halves() {
    let tasks = load_mlb(&fixture("mlb.csv"), MidpointRule::Calendar).unwrap();
    assert_eq!(tasks.batting.len(), 1);
    let b = &tasks.batting[0];
    assert_eq!(b.keys, vec!["b1", "b2"]);
    // The calendar midpoint is 2021-05-16, which counts as the first half.
    assert_eq!(b.xs, vec![4, 2]);
    assert_eq!(b.ys, vec![6, 1]);
    let p = &tasks.pitching[0];
    assert_eq!((p.keys.clone(), p.xs.clone(), p.ys.clone()), (vec!["p1".to_string()], vec![5], vec![6]));
    assert!(b.keys.iter().all(|k| !p.keys.contains(k)));
    assert_eq!(load_mlb(&fixture("mlb.csv"), MidpointRule::MedianEvent).unwrap(), tasks);
}

#[test]
fn mlb_player_in_both_roles_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("mixed.csv");
    std::fs::write(&p, "date,player_id,role,count\n2021-04-01,x,batting,1\n2021-05-01,x,pitching,1\n").unwrap();
    assert!(matches!(load_mlb(&p, MidpointRule::Calendar), Err(Error::Schema { .. })));
}

#[test]
fn mlb_single_day_season_has_no_midpoint() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("day.csv");
    std::fs::write(&p, "date,player_id,role,count\n2021-04-01,x,batting,1\n2021-04-01,y,batting,2\n").unwrap();
    assert!(matches!(load_mlb(&p, MidpointRule::Calendar), Err(Error::Schema { .. })));
}

#[test]
fn wordfreq_fixture() {
    let text = std::fs::read_to_string(fixture("book.txt")).unwrap();
    let t = load_wordfreq(&text, "book", &WordfreqConfig { head_tokens: 3, stopwords: None }).unwrap();
    assert_eq!(t.keys, vec!["alpha", "beta", "gamma"]);
    assert_eq!(t.xs, vec![3, 0, 0]);
    assert_eq!(t.ys, vec![9, 3, 3]);
    assert_eq!(t.n_y, 3.0);
}

#[test]
fn scoring_pipeline_on_fixtures() {
    let mut tasks = load_nhl(&fixture("nhl.csv"), PositionFilter::All).unwrap();
    let mlb = load_mlb(&fixture("mlb.csv"), MidpointRule::Calendar).unwrap();
    tasks.extend(mlb.batting);
    let ctx = EstimatorContext::default();
    let ests: Vec<Box<dyn Estimator>> = ["mle", "npmle", "erm"].iter().map(|id| build_estimator(id, &ctx).unwrap()).collect();
    let refs: Vec<&dyn Estimator> = ests.iter().map(|b| b.as_ref()).collect();
    let rows = score_tasks(&tasks, &refs).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().filter(|r| r.estimator_id == "mle").all(|r| r.rmse_ratio == 1.0 && r.mae_ratio == 1.0));
    let agg = aggregate_scores(&rows).unwrap();
    let mle = agg.rows.iter().find(|r| r.estimator_id == "mle").unwrap();
    assert_eq!((mle.rmse_improvement, mle.mae_improvement), (0.0, 0.0));
    assert_eq!(rows, score_tasks(&tasks, &refs).unwrap());
}
