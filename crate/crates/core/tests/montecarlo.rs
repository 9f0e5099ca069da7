use pdsinfer::dgp::DesignSpec;
use pdsinfer::montecarlo::{
    read_csv_report, run_cell, run_grid, write_report, Estimator, McConfig, McSummary, ReportFormat, REPORT_HEADER,
};

fn spec(design: &str, r2_y: f64, r2_d: f64) -> DesignSpec {
    DesignSpec::new(design.parse().unwrap()).with_r2(r2_y, r2_d)
}

#[test]
fn oracle_covers_without_confounding() {
    let rows = run_cell(&spec("1", 0.0, 0.0), &[Estimator::Oracle], 1000, 99, 4).unwrap();
    let c = rows[0].coverage_95;
    assert!((0.925..=0.975).contains(&c), "{c}");
}

#[test]
fn single_replication_runs_every_estimator() {
    let rows = run_cell(&spec("3", 0.4, 0.4), &Estimator::ALL, 1, 5, 1).unwrap();
    assert_eq!(rows.len(), Estimator::ALL.len());
    for (row, est) in rows.iter().zip(Estimator::ALL) {
        assert_eq!(row.estimator, est.name());
        assert_eq!(row.reps, 1);
    }
}

#[test]
fn thread_count_does_not_change_results() {
    let s = spec("4a", 0.2, 0.6).with_size(80, 60);
    let a = run_cell(&s, &Estimator::ALL, 25, 3, 1).unwrap();
    let b = run_cell(&s, &Estimator::ALL, 25, 3, 8).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropping_an_estimator_leaves_others_unchanged() {
    let s = spec("2", 0.4, 0.2).with_size(80, 60);
    let all = run_cell(&s, &Estimator::ALL, 20, 11, 2).unwrap();
    let some = run_cell(&s, &[Estimator::Split, Estimator::Ds], 20, 11, 2).unwrap();
    let find = |rows: &[McSummary], name: &str| rows.iter().find(|r| r.estimator == name).cloned().unwrap();
    assert_eq!(find(&all, "split"), find(&some, "split"));
    assert_eq!(find(&all, "ds"), find(&some, "ds"));
}

#[test]
fn grid_has_one_row_per_cell_and_estimator() {
    let s = spec("1", 0.0, 0.0).with_size(50, 20);
    let est = [Estimator::Oracle];
    let one = run_grid(&s, &[0.2], &est, 2, 1, 2, &McConfig::default()).unwrap();
    assert_eq!(one.len(), 1);
    let grid = [0.0, 0.2, 0.4, 0.6, 0.8];
    let full = run_grid(&s, &grid, &est, 2, 1, 2, &McConfig::default()).unwrap();
    assert_eq!(full.len(), 25);
    assert_eq!((full[1].r2_y, full[1].r2_d), (0.0, 0.2));
    assert_eq!((full[5].r2_y, full[5].r2_d), (0.2, 0.0));
}

#[test]
fn reports_round_trip() {
    let rows = run_cell(&spec("5", 0.4, 0.4).with_size(60, 40), &[Estimator::Oracle, Estimator::Ds], 6, 2, 2).unwrap();

    let mut json = Vec::new();
    write_report(&rows, ReportFormat::Json, &mut json).unwrap();
    let back: Vec<McSummary> = serde_json::from_slice(&json).unwrap();
    assert_eq!(back, rows);

    let mut csv = Vec::new();
    write_report(&rows, ReportFormat::Csv, &mut csv).unwrap();
    let text = String::from_utf8(csv.clone()).unwrap();
    assert_eq!(text.lines().count(), rows.len() + 1);
    assert_eq!(text.lines().next().unwrap(), REPORT_HEADER.join(","));
    let parsed = read_csv_report(csv.as_slice()).unwrap();
    assert_eq!(parsed.len(), rows.len());
    assert_eq!(parsed[1].estimator, "ds");
}

#[test]
fn estimator_names_parse() {
    let list = Estimator::parse_list("oracle, ds-union-ads,split").unwrap();
    assert_eq!(list, vec![Estimator::Oracle, Estimator::UnionAds, Estimator::Split]);
    assert!(Estimator::parse_list("ds,bogus").is_err());
    assert_eq!(Estimator::names().len(), 8);
}
