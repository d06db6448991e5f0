use scd_core::config::{ModelConfig, RunConfig};
use scd_core::data::{generate, GenConfig, InMemory, TransitionTable};
use scd_core::train::{checkpoint, evaluate, write_report, Control, GroundTruthPredictor, ModelPredictor, Trainer};
use scd_core::ScdError;

fn tiny_config(iterations: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        stage_channels: [8, 16, 16, 24],
        stage_depths: [1, 1, 1, 1],
        state_dim: 4,
        input_height: 32,
        input_width: 32,
        ..ModelConfig::toy()
    };
    cfg.optim.iterations = iterations;
    cfg.optim.batch_size = 2;
    cfg.eval_interval = 3;
    cfg
}

fn tiny_data(n: usize) -> InMemory {
    let gen = GenConfig {
        size: 32,
        side: 6..=16,
        ..GenConfig::default()
    };
    InMemory(generate(n, &gen, &TransitionTable::uniform_change(3, 0.4).unwrap(), 9).unwrap().samples)
}

#[test]
fn ten_iterations_write_ten_finite_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny_config(10)).unwrap();
    let losses = t.run(&tiny_data(2), Some(dir.path()), |_| Ok(Control::Continue)).unwrap();
    assert_eq!(losses.len(), 10);
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 11);
    assert_eq!(lines[0], "iteration,ce_bcd,ce_t1,ce_t2,miou_loss,sek_loss,total");
    for (i, line) in lines[1..].iter().enumerate() {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert_eq!(cols[0] as usize, i + 1);
        assert!(cols.iter().all(|v| v.is_finite()), "{line}");
    }
    for f in ["config.toml", "model.json", "checkpoint.bin", "checkpoint_000003.bin", "checkpoint_000009.bin"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn same_seed_gives_identical_curves() {
    let data = tiny_data(3);
    let run = |seed| {
        let mut cfg = tiny_config(4);
        cfg.model.seed = seed;
        Trainer::new(cfg).unwrap().run(&data, None, |_| Ok(Control::Continue)).unwrap()
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert_ne!(a, run(4));
}

#[test]
fn resume_from_checkpoint_continues_the_same_run() {
    let data = tiny_data(3);
    let dir = tempfile::tempdir().unwrap();
    let mut whole = Trainer::new(tiny_config(6)).unwrap();
    let full = whole.run(&data, None, |_| Ok(Control::Continue)).unwrap();

    let mut first = Trainer::new(tiny_config(6)).unwrap();
    first
        .run(&data, Some(dir.path()), |t| Ok(if t.iteration == 3 { Control::Stop } else { Control::Continue }))
        .unwrap();
    assert_eq!(first.iteration, 3);
    let ck = checkpoint::load(&dir.path().join("checkpoint.bin")).unwrap();
    assert_eq!(ck.iteration, 3);
    assert_eq!(ck.store.checksum(), first.store.checksum());
    assert_eq!(ck.config, first.config);
    for id in first.store.trainable_ids() {
        assert_eq!(ck.optimizer.state(id), first.optimizer.state(id));
    }

    let mut resumed = Trainer::from_checkpoint(ck);
    let rest = resumed.run(&data, Some(dir.path()), |_| Ok(Control::Continue)).unwrap();
    assert_eq!(rest, full[3..]);
    assert_eq!(resumed.store.checksum(), whole.store.checksum());
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::new(tiny_config(1)).unwrap();
    let path = dir.path().join("c.bin");
    t.save_checkpoint(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    assert!(checkpoint::decode(&bytes).is_ok());
    bytes.push(0);
    assert_eq!(checkpoint::decode(&bytes).unwrap_err().kind(), "checkpoint");
    bytes[0] = b'X';
    assert_eq!(checkpoint::decode(&bytes).unwrap_err().kind(), "checkpoint");
}

#[test]
fn nan_parameter_aborts_with_iteration_and_last_finite_row() {
    let data = tiny_data(2);
    let mut t = Trainer::new(tiny_config(5)).unwrap();
    let (id, _) = t.store.iter().find(|(_, e)| e.name.starts_with("bcd.head")).unwrap();
    let before = t.store.checksum();
    t.store.data_mut(id)[0] = f64::NAN;
    let poisoned = t.store.checksum();
    assert_ne!(before, poisoned);
    match t.run(&data, None, |_| Ok(Control::Continue)).unwrap_err() {
        ScdError::NonFiniteLoss { iteration, last_finite } => {
            assert_eq!(iteration, 1);
            assert_eq!(last_finite, "none");
        }
        e => panic!("unexpected {e:?}"),
    }
    assert_eq!(t.store.checksum(), poisoned, "no update after a NaN loss");

    let mut t = Trainer::new(tiny_config(5)).unwrap();
    t.run(&data, None, |t| Ok(if t.iteration == 3 { Control::Stop } else { Control::Continue }))
        .unwrap();
    t.store.data_mut(id)[0] = f64::NAN;
    t.config.optim.iterations = 5;
    let err = t.run(&data, None, |_| Ok(Control::Continue)).unwrap_err();
    let msg = err.to_string();
    assert_eq!(err.kind(), "numerical");
    assert!(matches!(err, ScdError::NonFiniteLoss { iteration: 4, ref last_finite } if last_finite.starts_with("3,")), "{msg}");
}

#[test]
fn ground_truth_predictor_scores_perfectly() {
    let data = tiny_data(3);
    let ev = evaluate(&GroundTruthPredictor, &data, 4, 2).unwrap();
    let s = ev.evaluation.summary();
    assert_eq!(s.oa, 1.0);
    assert_eq!(s.fscd, 1.0);
    assert_eq!(s.changed_accuracy, 1.0);
    assert_eq!(ev.predicted_transitions, ev.gt_transitions);
}

#[test]
fn metrics_json_is_byte_deterministic() {
    let data = tiny_data(3);
    let t = Trainer::new(tiny_config(1)).unwrap();
    let p = ModelPredictor {
        model: &t.model,
        store: &t.store,
    };
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    write_report(&a, &evaluate(&p, &data, 4, 2).unwrap()).unwrap();
    // a different batch size must not change the numbers either
    write_report(&b, &evaluate(&p, &data, 4, 3).unwrap()).unwrap();
    for f in ["metrics.json", "confusion_t1.csv", "transitions.csv", "transitions_gt.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn empty_source_is_a_data_error() {
    let mut t = Trainer::new(tiny_config(1)).unwrap();
    let err = t.run(&InMemory(Vec::new()), None, |_| Ok(Control::Continue)).unwrap_err();
    assert_eq!(err.kind(), "data");
}
