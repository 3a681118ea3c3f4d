use super::*;
use crate::math::RngStream;
use crate::training::{Spacing, TrainingTrace};

fn config(spec: ModelSpec, seed: u64) -> RunConfig {
    RunConfig {
        task: TaskParams::for_family(spec.family()),
        optimizer: OptimizerConfig::default(),
        schedule: Some(CheckpointSchedule::new(Spacing::Linear, 2, 4)),
        sgld: SgldConfig::default(),
        seed,
        point: GridPoint::single(),
        spec,
    }
}

fn random_params(spec: &ModelSpec, rng: &mut RngStream) -> ParamVector {
    let mut v = vec![0.0; spec.param_count()];
    for x in v.iter_mut() {
        // spread over many binades, including subnormal-adjacent magnitudes
        *x = rng.normal() * 10f64.powi(rng.index(40) as i32 - 20);
    }
    ParamVector::new(spec, v).unwrap()
}

#[test]
fn checkpoint_roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::low_rank(6, 2);
    let mut rng = RngStream::new(3, 0);
    for step in 0..50 {
        let params = random_params(&spec, &mut rng);
        let path = write_checkpoint(dir.path(), &spec, step, &params).unwrap();
        let (s, back) = read_checkpoint(&path, &spec).unwrap();
        assert_eq!(s, step);
        let bits = |p: &ParamVector| p.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&params), bits(&back));
    }
}

#[test]
fn payload_size_matches_param_count() {
    let spec = ModelSpec::low_rank(100, 10);
    let bytes = encode_checkpoint(&spec, 7, &ParamVector::zeros(&spec)).unwrap();
    let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
    assert_eq!(bytes.len() - header_len, 16000);
    let header = std::str::from_utf8(&bytes[..header_len]).unwrap();
    for key in ["family=low_rank", "step=7", "param_count=2000", "encoding=f64", "endianness=little", "layout="] {
        assert!(header.contains(key), "{header}");
    }
}

#[test]
fn truncated_or_foreign_checkpoints_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ModelSpec::low_rank(6, 2);
    let params = random_params(&spec, &mut RngStream::new(0, 0));
    let path = write_checkpoint(dir.path(), &spec, 3, &params).unwrap();
    let bytes = fs::read(&path).unwrap();
    for cut in [1, 8, 13] {
        let bad = &bytes[..bytes.len() - cut];
        assert!(matches!(
            decode_checkpoint(&path, bad, &spec),
            Err(Error::LayoutMismatch { .. })
        ));
    }
    assert!(matches!(
        decode_checkpoint(&path, &bytes, &ModelSpec::low_rank(6, 3)),
        Err(Error::LayoutMismatch { .. })
    ));
    assert!(matches!(
        decode_checkpoint(&path, b"garbage", &spec),
        Err(Error::LayoutMismatch { .. })
    ));
    // no temp files are left behind
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 1);
}

#[test]
fn csv_rows_roundtrip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    let mut rng = RngStream::new(1, 0);
    let rows: Vec<MetricRecord> = (0..40)
        .map(|k| MetricRecord {
            step: k * 3,
            train_loss: rng.normal().exp() * 1e-7,
            val_loss: (k % 2 == 0).then(|| rng.normal()),
            train_acc: (k % 3 == 0).then(|| rng.uniform(0.0, 1.0)),
            val_acc: Some(1.0 / 3.0),
        })
        .collect();
    csv::append_rows(&path, &rows[..10]).unwrap();
    csv::append_rows(&path, &rows[10..]).unwrap();
    assert_eq!(read_rows::<MetricRecord>(&path).unwrap(), rows);
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().nth(1), Some(METRICS_HEADER));
    assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
}

#[test]
fn parse_failure_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("llc.csv");
    fs::write(&path, format!("# format_version=1\n{LLC_HEADER}\n1,2,3,4,5\n2,x,3,4,5\n")).unwrap();
    match read_rows::<LlcRow>(&path) {
        Err(Error::ParseFailure { file, line, .. }) => {
            assert_eq!(file, path);
            assert_eq!(line, 4);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn run_roundtrip_reconstructs_everything() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let spec = ModelSpec::low_rank(5, 2);
    let mut rng = RngStream::new(9, 0);
    let mut handle = reg.create_run(ExperimentId::Q2E2, config(spec.clone(), 4), 40).unwrap();
    let trace = TrainingTrace {
        records: vec![
            MetricRecord { step: 2, train_loss: 0.5, val_loss: None, train_acc: None, val_acc: None },
            MetricRecord { step: 4, train_loss: 0.25, val_loss: None, train_acc: None, val_acc: None },
        ],
        checkpoints: vec![
            Checkpoint { step: 2, params: random_params(&spec, &mut rng) },
            Checkpoint { step: 4, params: random_params(&spec, &mut rng) },
        ],
        loss_curve: vec![1.0, 0.7, 0.4, 0.3],
        diverged_at: None,
    };
    handle.save_trace(&trace).unwrap();
    let llc = vec![LlcRow { step: 4, lambda_hat: 3.5, std_dev: 0.1, anchor_loss: 0.25, free_energy: 0.25 * 40.0 + 3.5 * 40f64.ln() }];
    handle.append_llc(&llc).unwrap();
    let events = vec![RunEvent::NoGrok, RunEvent::Failure { stage: "llc".into(), message: "x".into() }];
    handle.append_events(&events[..1]).unwrap();
    handle.append_events(&events[1..]).unwrap();
    let mut summary = RunSummary::new(RunStatus::Done, GridPoint::single(), 4);
    summary.lambda_hat = Some(3.5);
    handle.write_summary(&summary).unwrap();
    handle.set_status(RunStatus::Done).unwrap();

    let loaded = reg.load_run(handle.run_id()).unwrap();
    assert_eq!(loaded.record, *handle.record());
    assert_eq!(loaded.trace, trace);
    assert_eq!(loaded.llc, llc);
    assert_eq!(loaded.events, events);
    assert_eq!(loaded.summary, Some(summary));
    assert_eq!(reg.checkpoint_steps(handle.run_id()).unwrap(), vec![2, 4]);
    assert!(matches!(
        reg.load_checkpoint(handle.run_id(), 3),
        Err(Error::MissingCheckpoint { step: 3, .. })
    ));
    assert!(handle.save_checkpoint(5, &trace.checkpoints[0].params).is_err());

    let hash = handle.record().config_hash.clone();
    assert_eq!(reg.find_completed(ExperimentId::Q2E2, &hash).unwrap().unwrap().run_id, handle.run_id());
    assert!(reg.find_completed(ExperimentId::Q2E1, &hash).unwrap().is_none());
}

#[test]
fn run_without_llc_rows_loads_empty() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let handle = reg.create_run(ExperimentId::Q1E2, config(ModelSpec::tms(), 0), 10).unwrap();
    let loaded = reg.load_run(handle.run_id()).unwrap();
    assert!(loaded.llc.is_empty());
    assert!(loaded.events.is_empty());
    assert!(loaded.summary.is_none());
    assert!(matches!(reg.load_run("01ARZ3NDEKTSV4RRFFQ69G5FAV"), Err(Error::Missing(_))));
}

#[test]
fn enumeration_matches_directory_scan() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let spec = ModelSpec::polynomial(1);
    let mut created = Vec::new();
    for k in 0..500 {
        let exp = if k % 2 == 0 { ExperimentId::Q2E1 } else { ExperimentId::Q2E3 };
        created.push(reg.create_run(exp, config(spec.clone(), k), 1).unwrap().run_id().to_string());
    }
    // stray files are not runs
    fs::write(reg.experiment_dir(ExperimentId::Q2E1).join("summary.json"), "{}").unwrap();
    let listed: Vec<String> = reg.list_runs(None).unwrap().into_iter().map(|r| r.run_id).collect();
    let mut scanned = Vec::new();
    for exp in ["Q2E1", "Q2E3"] {
        for e in fs::read_dir(dir.path().join("runs").join(exp)).unwrap() {
            let e = e.unwrap();
            if e.path().is_dir() {
                scanned.push(e.file_name().to_string_lossy().into_owned());
            }
        }
    }
    scanned.sort();
    assert_eq!(listed.len(), 500);
    assert_eq!(listed, scanned);
    assert_eq!(listed, created);
    assert_eq!(reg.list_runs(Some(ExperimentId::Q2E1)).unwrap().len(), 250);
}

#[test]
fn concurrent_appends_to_distinct_runs() {
    let dir = tempfile::tempdir().unwrap();
    let reg = Registry::new(dir.path());
    let handles: Vec<RunHandle> = (0..8)
        .map(|k| reg.create_run(ExperimentId::Q1E1, config(ModelSpec::polynomial(2), k), 5).unwrap())
        .collect();
    std::thread::scope(|s| {
        for (k, h) in handles.iter().enumerate() {
            s.spawn(move || {
                for step in 0..200 {
                    let row = LlcRow {
                        step,
                        lambda_hat: k as f64 + step as f64 / 7.0,
                        std_dev: 0.0,
                        anchor_loss: 0.0,
                        free_energy: 0.0,
                    };
                    h.append_llc(&[row]).unwrap();
                }
            });
        }
    });
    for (k, h) in handles.iter().enumerate() {
        let rows = reg.load_run(h.run_id()).unwrap().llc;
        assert_eq!(rows.len(), 200);
        for (step, row) in rows.iter().enumerate() {
            assert_eq!(row.step, step);
            assert_eq!(row.lambda_hat, k as f64 + step as f64 / 7.0);
        }
    }
}

#[test]
fn config_hash_is_content_based() {
    let a = config(ModelSpec::low_rank(10, 2), 1);
    assert_eq!(a.hash(), a.clone().hash());
    let mut b = a.clone();
    b.seed = 2;
    assert_ne!(a.hash(), b.hash());
    let mut c = a.clone();
    c.sgld.epsilon *= 1.0 + f64::EPSILON;
    assert_ne!(a.hash(), c.hash());
}
