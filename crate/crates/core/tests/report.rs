use std::collections::HashSet;

use inferact::agent::{run_experiment, EnvConfig, RunConfig, RunLog};
use inferact::inference::BeliefState;
use inferact::model::Dims;
use inferact::policy::ActionKind;
use inferact::prob::Categorical;
use inferact::report::{
    action_heatmap, analyze, entropy_trajectory, export, heatmap_counts, ExportFormat, ExportKind, ExportSpec,
    StepSelection,
};

fn dims() -> Dims {
    Dims {
        prompts: 4,
        searches: 3,
        info_levels: 3,
        quality_levels: 11,
    }
}

fn write_run(dir: &std::path::Path, cfg: &RunConfig) -> std::path::PathBuf {
    let path = dir.join("log.jsonl");
    let mut buf = Vec::new();
    run_experiment(cfg, Some(&mut buf)).unwrap();
    std::fs::write(&path, buf).unwrap();
    path
}

fn cfg(steps: usize) -> RunConfig {
    RunConfig {
        dims: dims(),
        steps,
        seed: 2,
        snapshot_interval: Some(25),
        ..Default::default()
    }
}

fn spec(log: &std::path::Path, kind: ExportKind, out: std::path::PathBuf) -> ExportSpec {
    ExportSpec {
        log: log.to_path_buf(),
        kind,
        steps: StepSelection::All,
        out,
        format: ExportFormat::Csv,
    }
}

#[test]
fn timeline_has_one_row_per_step() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_run(dir.path(), &cfg(100));
    let out = dir.path().join("timeline.csv");
    export(&spec(&log, ExportKind::ActionTimeline, out.clone())).unwrap();
    let text = std::fs::read_to_string(out).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 100);
    for row in rows {
        let kind = row.split(',').nth(1).unwrap();
        assert!(["prompt", "search", "none"].contains(&kind));
    }
}

#[test]
fn heatmap_counts_every_action_but_none() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_run(dir.path(), &cfg(60));
    let log = RunLog::read(&path).unwrap();
    let records: Vec<_> = log.records.iter().collect();
    let counts = heatmap_counts(&log.header, &records);
    let total: usize = counts.iter().flatten().sum();
    let none = log.records.iter().filter(|r| r.action_kind == ActionKind::None).count();
    assert_eq!(total, log.records.len() - none);
    let csv = action_heatmap(&log, &StepSelection::All, ExportFormat::Csv).unwrap();
    let csv_total: usize = csv
        .lines()
        .skip(1)
        .flat_map(|l| l.split(',').skip(1).map(|v| v.parse::<usize>().unwrap()))
        .sum();
    assert_eq!(csv_total, total);
}

#[test]
fn a_matrices_start_uniform() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_run(dir.path(), &cfg(10));
    let out = dir.path().join("a");
    let files = export(&ExportSpec {
        steps: StepSelection::List(vec![0]),
        ..spec(&log, ExportKind::AMatrices, out)
    })
    .unwrap();
    assert_eq!(files.len(), 7);
    for (m, f) in files.iter().enumerate() {
        let text = std::fs::read_to_string(f).unwrap();
        let rows = if m == 6 { 3.0 } else { 11.0 };
        for line in text.lines().skip(1) {
            for v in line.split(',').skip(1) {
                assert!((v.parse::<f64>().unwrap() - 1.0 / rows).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn exports_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_run(dir.path(), &cfg(30));
    for kind in [
        ExportKind::AMatrices,
        ExportKind::EfeGrid,
        ExportKind::ActionHeatmap,
        ExportKind::ActionTimeline,
    ] {
        for format in [ExportFormat::Csv, ExportFormat::Json] {
            let read = |run: &str| {
                let out = dir.path().join(format!("{kind:?}-{format:?}-{run}"));
                let files = export(&ExportSpec {
                    format,
                    steps: if kind == ExportKind::AMatrices {
                        StepSelection::Last
                    } else {
                        StepSelection::All
                    },
                    ..spec(&log, kind, out)
                })
                .unwrap();
                files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>()
            };
            assert_eq!(read("one"), read("two"), "{kind:?} {format:?}");
        }
    }
}

#[test]
fn export_rejects_bad_steps() {
    let dir = tempfile::tempdir().unwrap();
    let log = write_run(dir.path(), &cfg(10));
    let bad = |kind, steps| {
        export(&ExportSpec {
            steps,
            ..spec(&log, kind, dir.path().join("x"))
        })
        .is_err()
    };
    assert!(bad(ExportKind::ActionTimeline, StepSelection::List(vec![10])));
    assert!(bad(ExportKind::AMatrices, StepSelection::List(vec![11])));
    assert!(!bad(ExportKind::AMatrices, StepSelection::List(vec![10])));
    assert!(bad(ExportKind::EfeGrid, StepSelection::List(vec![3])));
}

#[test]
fn efe_grid_covers_legal_cells() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_run(dir.path(), &cfg(5));
    let log = RunLog::read(&path).unwrap();
    let csv = inferact::report::efe_grid(&log, &StepSelection::List(vec![0]), ExportFormat::Csv).unwrap();
    let cells: HashSet<(usize, usize)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<&str> = l.split(',').collect();
            (v[1].parse().unwrap(), v[2].parse().unwrap())
        })
        .collect();
    assert_eq!(cells.len(), 1 + 4 + 3);
    assert!(cells.iter().all(|&(p, s)| p == 0 || s == 0));
}

#[test]
fn all_no_action_log_has_no_transition() {
    let base = cfg(20);
    let n = base.policies().unwrap().len();
    let mut habits = vec![0.0; n];
    habits[0] = 1e5;
    let run = RunConfig {
        habits: Some(habits),
        ..base
    };
    let dir = tempfile::tempdir().unwrap();
    let log = RunLog::read(&write_run(dir.path(), &run)).unwrap();
    assert!(log.records.iter().all(|r| r.action_kind == ActionKind::None));
    let report = analyze(&log).unwrap();
    assert_eq!(report.transition_step, None);
    assert!(report.to_string().contains("transition step: none"));
    assert_eq!(report.quartiles[0].search_fraction, Some(0.0));
}

#[test]
fn entropy_falls_under_deterministic_observation() {
    let dir = tempfile::tempdir().unwrap();
    let run = RunConfig {
        env: EnvConfig::Synthetic {
            profile: None,
            good_prompts: None,
            noise_sd: Some(0.0),
        },
        ..cfg(40)
    };
    let mut log = RunLog::read(&write_run(dir.path(), &run)).unwrap();
    // Certain beliefs and a fixed observation per state: every update adds
    // mass to the dominant row of one column.
    for (t, r) in log.records.iter_mut().enumerate() {
        let s = [t % 4, (t / 2) % 3, (t / 3) % 3];
        r.beliefs = BeliefState::new(vec![
            Categorical::one_hot(4, s[0]),
            Categorical::one_hot(3, s[1]),
            Categorical::one_hot(3, s[2]),
        ]);
        r.observation = vec![s[0], 2 * s[0], 10 - s[0], s[1], s[1] + 4, 7, s[2]];
    }
    let traj = entropy_trajectory(&log).unwrap();
    assert_eq!(traj.len(), 41);
    for m in 0..7 {
        for k in 1..traj.len() {
            assert!(traj[k][m] <= traj[k - 1][m] + 1e-12, "modality {m} step {k}");
        }
        assert!(traj[40][m] < traj[0][m]);
    }
}

#[test]
fn analyze_rejects_empty_logs() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_run(dir.path(), &cfg(3));
    let mut log = RunLog::read(&path).unwrap();
    log.records.clear();
    assert!(analyze(&log).is_err());
}
