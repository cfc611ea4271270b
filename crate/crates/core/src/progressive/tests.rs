use super::*;
use crate::data::{generate_synthetic, Dataset, SyntheticRig, TrajectorySpec};
use crate::error::Error;
use crate::field::FieldConfig;
use crate::geometry::Pose;
use std::cell::RefCell;
use std::io::Write;
use std::rc::Rc;
use std::sync::{Arc, Mutex};

fn tiny_ds(frames: usize, trajectory: TrajectorySpec) -> Dataset {
    let rig = SyntheticRig {
        frames,
        width: 8,
        height: 6,
        focal: 8.0,
        trajectory,
        ..Default::default()
    };
    generate_synthetic(&rig, 5).unwrap()
}

fn tiny_cfg() -> TrainConfig {
    TrainConfig {
        schedule: ScheduleConfig {
            iters_per_frame: 2,
            batch_rays: 16,
            refine_iters: Some(5),
            ..Default::default()
        },
        field: FieldConfig {
            spatial_res: 4,
            temporal_res: Some(2),
            channels_per_plane: 2,
            hidden_width: 4,
            hidden_layers: 1,
            view_frequencies: 1,
            coarse_factor: 2,
            ..Default::default()
        },
        sampling: SamplingConfig {
            n_samples: 4,
            ..Default::default()
        },
        log_every: 1,
        ..Default::default()
    }
}

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(b);
        Ok(b.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

impl SharedBuf {
    fn records(&self) -> Vec<serde_json::Value> {
        let text = String::from_utf8(self.0.lock().unwrap().clone()).unwrap();
        text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
    }
}

fn spans(out: &[SpawnRecord]) -> Vec<(usize, usize)> {
    out.iter().map(|r| (r.first, r.last)).collect()
}

#[test]
fn spawn_rule() {
    let c = ScheduleConfig::default();
    assert_eq!(should_spawn(101, 0.0, &c), Some(SpawnTrigger::FrameCount));
    assert_eq!(should_spawn(100, 0.0, &c), None);
    assert_eq!(should_spawn(3, 1.5, &c), Some(SpawnTrigger::Distance));
    assert_eq!(should_spawn(50, 0.2, &c), None);
}

#[test]
fn count_triggered_spans_tile_the_sequence() {
    let ds = tiny_ds(250, TrajectorySpec::Line { end: [0.5, 0.0, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.iters_per_frame = 1;
    cfg.schedule.refine_iters = Some(1);
    cfg.schedule.t_d = 100.0;
    let mut t = Trainer::<f64>::new(&ds, cfg).unwrap();
    t.bootstrap().unwrap();
    assert_eq!(t.state.appended_upto, Some(4));
    assert_eq!(t.state.unfrozen_count(), 1);
    let mut frozen: Vec<(usize, crate::field::LocalField<f64>)> = Vec::new();
    for k in 5..250 {
        t.append_frame(k).unwrap();
        assert_eq!(t.state.unfrozen_count(), 1, "frame {k}");
        for j in 0..=k {
            assert!(t.state.fields.iter().any(|s| s.frames().contains(j)), "frame {j} uncovered");
        }
        let n = t.state.fields.len();
        if n >= 2 && frozen.len() < n - 1 {
            frozen.push((n - 2, t.state.fields[n - 2].resident().unwrap().clone()));
        }
    }
    t.run_final().unwrap();
    let out = t.finish().unwrap();
    assert_eq!(spans(&out.spawn_log), vec![(0, 99), (70, 169), (140, 239), (210, 249)]);
    assert!(out.spawn_log[1..].iter().all(|r| r.trigger == SpawnTrigger::FrameCount));
    for (i, f) in frozen {
        assert_eq!(out.fields[i], f, "frozen field {i} changed");
    }
    let fields: Vec<_> = out.fields.iter().map(|f| f.frames).collect();
    assert_eq!(fields.iter().map(|s| (s.first, s.last)).collect::<Vec<_>>(), spans(&out.spawn_log));
}

#[test]
fn distance_trigger_fires_before_the_count() {
    // 3 units over 60 frames: the camera leaves a unit ball after ~20 frames
    let ds = tiny_ds(60, TrajectorySpec::Line { end: [3.0, 0.0, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.pose_optimization = false;
    cfg.schedule.iters_per_frame = 1;
    let out = train_progressive::<f64>(&ds, &cfg).unwrap();
    let r = &out.spawn_log[1];
    assert_eq!(r.trigger, SpawnTrigger::Distance);
    assert!(r.origin_frame < 30);
    let gt = ds.gt_trajectory.as_ref().unwrap();
    let d = (gt[r.origin_frame].position() - gt[0].position()).norm();
    let d_prev = (gt[r.origin_frame - 1].position() - gt[0].position()).norm();
    assert!(d > 1.0 && d_prev <= 1.0);
    assert_eq!(r.first, r.origin_frame.saturating_sub(30).max(1));
}

#[test]
fn append_initializes_from_previous_pose() {
    let ds = tiny_ds(8, TrajectorySpec::Line { end: [0.2, 0.0, 0.0] });
    let mut t = Trainer::<f64>::new(&ds, tiny_cfg()).unwrap();
    t.bootstrap().unwrap();
    assert!(t.push_frame(6).is_err());
    t.push_frame(5).unwrap();
    assert_eq!(t.state.poses[5], t.state.poses[4]);
    assert_eq!(t.recent_frames().unwrap(), vec![2, 3, 4, 5]);
    assert_eq!(t.state.poses[0], Pose::identity());
}

#[test]
fn append_batches_come_from_the_recent_window() {
    let ds = tiny_ds(12, TrajectorySpec::Line { end: [0.2, 0.0, 0.0] });
    let seen = Rc::new(RefCell::new(Vec::new()));
    let mut t = Trainer::<f64>::new(&ds, tiny_cfg()).unwrap();
    let s = seen.clone();
    t.set_observer(move |info, batch| s.borrow_mut().push((*info, batch.frames.clone())));
    t.run().unwrap();
    let seen = seen.borrow();
    let mut appends = 0;
    for (info, frames) in seen.iter() {
        assert_eq!(frames.len(), 16);
        match info.phase {
            Phase::Append => {
                appends += 1;
                let k = info.frame;
                assert!(frames.iter().all(|&f| f + 3 >= k && f <= k), "{frames:?} at {k}");
            }
            Phase::Bootstrap => assert!(frames.iter().all(|&f| f < 5)),
            Phase::Refine => {}
        }
    }
    assert_eq!(appends, 7 * 2);
}

#[test]
fn refinement_drops_flow_and_freezes_poses() {
    let ds = tiny_ds(20, TrajectorySpec::Line { end: [0.2, 0.0, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.refine_iters = Some(200);
    cfg.schedule.batch_rays = 64;
    cfg.schedule.eval_stride = 0;
    let buf = SharedBuf::default();
    let mut t = Trainer::<f64>::new(&ds, cfg)
        .unwrap()
        .with_log(TrainLog::new(Box::new(buf.clone())));
    let hist = Rc::new(RefCell::new([0usize; 20]));
    let flags = Rc::new(RefCell::new(Vec::new()));
    let (h, fl) = (hist.clone(), flags.clone());
    t.set_observer(move |info, batch| {
        if info.phase == Phase::Refine {
            batch.frames.iter().for_each(|&k| h.borrow_mut()[k] += 1);
            fl.borrow_mut().push((info.phase_iter, info.flow_active));
        }
    });
    t.run().unwrap();
    let flags = flags.borrow();
    assert_eq!(flags.len(), 200);
    // iterations 1..=40 (one-based) keep the flow term
    for &(i, on) in flags.iter() {
        assert_eq!(on, i < 40, "iteration {i}");
    }
    let (n, p) = (200.0f64 * 64.0, 1.0 / 20.0);
    let sd = (n * p * (1.0 - p)).sqrt();
    for (k, &c) in hist.borrow().iter().enumerate() {
        assert!((c as f64 - n * p).abs() < 3.0 * sd, "frame {k}: {c}");
    }
    let recs = buf.records();
    let refine: Vec<_> = recs.iter().filter(|r| r["phase"] == "refine").collect();
    assert_eq!(refine.len(), 200);
    for r in &refine {
        if r["flow_active"] == false {
            assert_eq!(r["pose_updates"], 0);
            assert_eq!(r["flow"], 0.0);
        }
    }
    assert!(refine.iter().any(|r| r["pose_updates"].as_u64().unwrap() > 0));
}

#[test]
fn iteration_bookkeeping() {
    let ds = tiny_ds(14, TrajectorySpec::Line { end: [0.2, 0.0, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.t_k = 10;
    cfg.schedule.overlap = 3;
    cfg.schedule.refine_iters = None;
    let out = train_progressive::<f64>(&ds, &cfg).unwrap();
    assert_eq!(spans(&out.spawn_log), vec![(0, 9), (7, 13)]);
    let ipf = 2;
    let refine: usize = out.spawn_log.iter().map(|r| ipf * (r.last + 1 - r.first) / 4).sum();
    assert_eq!(out.iterations.total(), (5 + 9) * ipf + refine);
    assert_eq!(out.iterations.refine, refine);
    assert_eq!(out.poses[0], Pose::identity());
    assert!(out.fields.iter().all(|f| f.frozen));
}

#[test]
fn fixed_poses_never_change() {
    let ds = tiny_ds(10, TrajectorySpec::Line { end: [0.3, 0.1, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.pose_optimization = false;
    let out = train_progressive::<f64>(&ds, &cfg).unwrap();
    assert_eq!(out.pose_updates, 0);
    let gt = ds.gt_trajectory.as_ref().unwrap();
    assert!(out.poses.iter().zip(gt).all(|(a, b)| a == b));
}

#[test]
fn static_scene_stays_at_identity() {
    let rig = SyntheticRig {
        frames: 8,
        width: 32,
        height: 24,
        focal: 30.0,
        trajectory: TrajectorySpec::Static,
        ..Default::default()
    };
    let ds = generate_synthetic(&rig, 5).unwrap();
    let mut cfg = tiny_cfg();
    cfg.schedule.iters_per_frame = 30;
    cfg.schedule.batch_rays = 128;
    // at the optimum every L1 residual is rounding noise, so the pose
    // jitter scales with the step size
    cfg.lr.pose = 1e-3;
    let out = train_progressive::<f64>(&ds, &cfg).unwrap();
    assert!(out.pose_updates > 0);
    for p in &out.poses {
        assert!(p.position().norm() < 1e-3);
        assert!(p.angle() < 1e-3);
    }
}

#[test]
fn seeded_runs_are_reproducible() {
    let ds = tiny_ds(16, TrajectorySpec::Line { end: [0.3, 0.0, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.t_k = 8;
    cfg.schedule.overlap = 2;
    let a = train_progressive::<f64>(&ds, &cfg).unwrap();
    let b = train_progressive::<f64>(&ds, &cfg).unwrap();
    assert_eq!(a.spawn_log, b.spawn_log);
    assert_eq!(a.poses, b.poses);
    assert_eq!(a.fields, b.fields);
}

#[test]
fn offloaded_fields_come_back() {
    let ds = tiny_ds(16, TrajectorySpec::Line { end: [0.3, 0.0, 0.0] });
    let mut cfg = tiny_cfg();
    cfg.schedule.t_k = 6;
    cfg.schedule.overlap = 2;
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::<f32>::new(&ds, cfg.clone())
        .unwrap()
        .with_offload_dir(dir.path().to_path_buf());
    t.run().unwrap();
    let n = t.state.fields.len();
    assert!(n >= 3);
    assert!(matches!(t.state.fields[0], FieldSlot::Offloaded { .. }));
    assert!(t.state.fields[n - 1].resident().is_some());
    let out = t.finish().unwrap();
    let plain = train_progressive::<f32>(&ds, &cfg).unwrap();
    assert_eq!(out.fields, plain.fields);
}

#[test]
fn too_few_frames() {
    let mut ds = tiny_ds(5, TrajectorySpec::Static);
    ds.frames.pop();
    ds.gt_trajectory.as_mut().unwrap().pop();
    assert!(matches!(
        Trainer::<f64>::new(&ds, tiny_cfg()),
        Err(Error::SequenceTooShort { got: 4, need: 5 })
    ));
}
