mod common;

use std::collections::BTreeSet;

use dasecount::convnet::evaluate;
use dasecount::csi::MotionType;
use dasecount::fewshot::sample_episode;
use dasecount::preprocess::{Sample, TaskId};
use dasecount::report::{
    emit_report, load_task_reports, parse_formats, run_baseline, run_metatest, run_with_predictor, BaselineKind, Protocol, TaskReport,
};

fn task(m: MotionType) -> TaskId {
    TaskId::new("roomT", m)
}

fn protocol(shots: usize) -> Protocol {
    Protocol { shots, queries_per_class: 4, repeats: 3, seed: 5, ..Default::default() }
}

#[test]
fn label_oracle_scores_perfectly() {
    let store = common::tiny_store(3, 8, 0);
    let samples = store.task(&task(MotionType::Static)).unwrap();
    let oracle = |_: &[usize], q: &[usize]| Ok(q.iter().map(|&i| samples[i].label).collect());
    let r = run_with_predictor(&store, &task(MotionType::Static), &protocol(2), "oracle", &oracle).unwrap();
    assert_eq!(r.mean_acc, 1.0);
    for (i, row) in r.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            assert_eq!(v, if i == j { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn constant_predictor_scores_one_over_c() {
    let store = common::tiny_store(4, 8, 0);
    let constant = |_: &[usize], q: &[usize]| Ok(vec![2; q.len()]);
    let r = run_with_predictor(&store, &task(MotionType::Mixed), &protocol(1), "const", &constant).unwrap();
    assert_eq!(r.mean_acc, 0.25);
    assert_eq!(r.std_acc, 0.0);
}

fn check_report_invariants(r: &TaskReport) {
    let c = r.confusion.len();
    for row in &r.confusion {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    // balanced queries: accuracy is the mean diagonal entry
    let diag = (0..c).map(|i| r.confusion[i][i]).sum::<f64>() / c as f64;
    assert!((diag - r.mean_acc).abs() <= 1e-9);
    let mean = r.accuracies().iter().sum::<f64>() / r.repeats.len() as f64;
    assert!((mean - r.mean_acc).abs() <= 1e-12);
}

#[test]
fn metatest_and_baselines_satisfy_report_invariants() {
    let store = common::tiny_store(3, 10, 1);
    let ex = common::tiny_extractor(3, 2);
    let t = task(MotionType::Dynamic);
    check_report_invariants(&run_metatest(&ex, &store, &t, &protocol(5)).unwrap());
    for kind in BaselineKind::ALL {
        let r = run_baseline(kind, &ex, &store, &t, &protocol(1)).unwrap();
        assert_eq!(r.method, kind.as_str());
        check_report_invariants(&r);
    }
}

#[test]
fn direct_transfer_matches_evaluate() {
    let store = common::tiny_store(3, 10, 1);
    let ex = common::tiny_extractor(3, 2);
    let t = task(MotionType::Static);
    let p = protocol(2);
    let r = run_baseline(BaselineKind::DirectTransferAmp, &ex, &store, &t, &p).unwrap();
    for rep in &r.repeats {
        let e = sample_episode(&store, &t, p.shots, p.queries_per_class, rep.seed).unwrap();
        let q: Vec<&Sample> = e.query.clone();
        let acc = evaluate(&ex, &q, dasecount::preprocess::Modality::Amp).unwrap();
        assert!((acc - rep.accuracy).abs() <= 1e-9);
    }
}

#[test]
fn more_shots_do_not_hurt_on_separable_tasks() {
    let store = common::tiny_store(3, 30, 2);
    let ex = common::tiny_extractor(3, 4);
    let t = task(MotionType::Static);
    let p = |k| Protocol { shots: k, queries_per_class: 20, repeats: 10, seed: 1, ..Default::default() };
    let one = run_metatest(&ex, &store, &t, &p(1)).unwrap();
    let five = run_metatest(&ex, &store, &t, &p(5)).unwrap();
    assert!(five.mean_acc >= one.mean_acc, "{} < {}", five.mean_acc, one.mean_acc);
}

fn all_reports() -> Vec<TaskReport> {
    let store = common::tiny_store(3, 10, 1);
    let ex = common::tiny_extractor(3, 2);
    let mut out = Vec::new();
    for k in [5, 1] {
        for m in MotionType::ALL {
            out.push(run_metatest(&ex, &store, &task(m), &protocol(k)).unwrap());
        }
    }
    out
}

#[test]
fn emitted_tables_are_complete_ordered_and_deterministic() {
    let reports = all_reports();
    let formats = parse_formats("csv,json").unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let written = emit_report(&reports, a.path(), &formats).unwrap();
    assert_eq!(written.len(), 1 + 6 + 1);
    emit_report(&all_reports(), b.path(), &formats).unwrap();
    for p in &written {
        let name = p.file_name().unwrap();
        if name.to_str().unwrap().ends_with(".csv") {
            assert_eq!(std::fs::read(p).unwrap(), std::fs::read(b.path().join(name)).unwrap());
        }
    }
    let csv = std::fs::read_to_string(a.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "task_id,motion_type,shots,tap,modality,classifier,mean_acc,std_acc,repeats");
    assert_eq!(lines.len(), 7);
    let keys: Vec<(String, usize)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].to_string(), f[2].parse().unwrap())
        })
        .collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);

    let confusion = std::fs::read_to_string(&written[1]).unwrap();
    assert_eq!(confusion.lines().count(), 3 + 1);
    assert!(confusion.lines().nth(1).unwrap().split(',').skip(1).all(|v| v.split('.').nth(1).unwrap().len() == 6));
}

#[test]
fn single_report_writes_three_files() {
    let r = &all_reports()[..1];
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(r, dir.path(), &parse_formats("csv,json").unwrap()).unwrap();
    assert_eq!(written.len(), 3);
    assert!(emit_report(&[], dir.path(), &BTreeSet::new()).is_err());
}

#[test]
fn task_reports_round_trip_through_the_runs_directory() {
    let reports = all_reports();
    let dir = tempfile::tempdir().unwrap();
    for r in &reports {
        r.save(dir.path()).unwrap();
    }
    let mut back = load_task_reports(dir.path()).unwrap();
    let mut orig = reports.clone();
    back.sort_by_key(|r| r.stem());
    orig.sort_by_key(|r| r.stem());
    assert_eq!(back, orig);
}

#[test]
fn seed_changes_episodes_but_not_schema() {
    let store = common::tiny_store(3, 10, 1);
    let ex = common::tiny_extractor(3, 2);
    let t = task(MotionType::Static);
    let a = run_metatest(&ex, &store, &t, &protocol(2)).unwrap();
    let b = run_metatest(&ex, &store, &t, &Protocol { seed: 6, ..protocol(2) }).unwrap();
    assert_ne!(a.repeats[0].seed, b.repeats[0].seed);
    let keys = |r: &TaskReport| serde_json::to_value(r).unwrap().as_object().unwrap().keys().cloned().collect::<Vec<_>>();
    assert_eq!(keys(&a), keys(&b));
}
