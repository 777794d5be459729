//! Subcommand implementations. Each writes its artifacts into `out`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use brainstate::datagen::{generate_dataset, generate_offgrid_testset, sweep_provenance, GatedRecording};
use brainstate::dataset::{Dataset, Stats};
use brainstate::estimator::{EstimationContext, Estimator, Registry, Resources};
use brainstate::eval::{
    compare_timevarying, eval_recordings, run_grid_eval, score, split_sigma, timevarying_scenario, Aggregate, RmseReport,
};
use brainstate::io::{ingest, Recording};
use brainstate::lstm::{train, InputScaling, LossConfig, LstmWeights};
use brainstate::model::layout::{PARAMS, TARGET_NAMES};
use brainstate::model::{simulate, ParamSchedule, Trajectory, TrajectoryMeta};
use brainstate::track::EstimateTrack;
use brainstate::{Error, Result};
use log::info;

use crate::config::{EstimateSection, RunConfig};

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

pub fn simulate_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.simulate;
    s.params.validate()?;
    let schedule = ParamSchedule::Constant(s.params);
    let traj = simulate(&schedule, s.duration, s.seed)?;
    traj.export(&out.join("trajectory.csv"), &TrajectoryMeta::new(&schedule, s.seed, s.duration))?;
    info!("wrote {} samples", traj.len());
    Ok(())
}

pub fn datagen_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let d = &cfg.datagen;
    let gen = generate_dataset(&d.sweep, d.inputs_per_pair, d.windows_per_recording)?;
    gen.dataset.save(&out.join("dataset"))?;
    write_json(&out.join("sweeps.json"), &gen.sweeps)?;
    info!(
        "dataset: {} train / {} val / {} test windows",
        gen.dataset.train.len(),
        gen.dataset.val.len(),
        gen.dataset.test.len()
    );
    if d.offgrid {
        let off = generate_offgrid_testset(&d.sweep, &gen.dataset.stats, d.inputs_per_pair, d.windows_per_recording)?;
        off.dataset.save(&out.join("dataset-offgrid"))?;
        info!("off-grid test set: {} windows", off.dataset.test.len());
    }
    Ok(())
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let t = &cfg.train;
    let ds = Dataset::load(&t.dataset)?;
    let (sweep, _) = sweep_provenance(&ds)?;
    let loss = LossConfig {
        k: t.optimizer.k,
        dt: ds.dt,
        sigmoid: sweep.base.sigmoid(),
    };
    let outcome = train(&ds.train, &ds.val, &ds.stats, &loss, &t.optimizer)?;
    let meta = serde_json::json!({
        "stats": ds.stats,
        "train": t.optimizer,
        "loss": loss,
        "config_digest": cfg.digest()?,
        "dataset": t.dataset,
        "best_epoch": outcome.best_epoch,
        "best_val": outcome.best_val(),
        "stop": outcome.stop,
    });
    outcome.weights.save(&out.join("weights.bin"), &meta)?;
    outcome.write_log_csv(&out.join("train-log.csv"))?;
    info!("best epoch {} val loss {:.5} ({:?})", outcome.best_epoch, outcome.best_val(), outcome.stop);
    Ok(())
}

/// Weights plus the standardization statistics stored alongside them.
pub fn load_lstm(path: &Path) -> Result<(LstmWeights, Stats)> {
    let (w, meta) = LstmWeights::load(path)?;
    let stats = meta
        .get("stats")
        .cloned()
        .ok_or_else(|| Error::Format(format!("{}: weights carry no standardization stats", path.display())))?;
    Ok((w, serde_json::from_value(stats)?))
}

fn resources(methods: &[String], weights: &Path, scaling: InputScaling) -> Result<Resources> {
    let lstm = if methods.iter().any(|m| m == "lstm") {
        Some(load_lstm(weights)?)
    } else {
        None
    };
    Ok(Resources { lstm, scaling })
}

/// Rolling std of each parameter track over consecutive windows.
fn stability_csv(track: &EstimateTrack, window_s: f64) -> Result<String> {
    if !(window_s > 0.0) {
        return Err(Error::Config("stability_window_s must be positive".into()));
    }
    let n = ((window_s / track.dt).round() as usize).max(2);
    let mut s = String::from("t_start");
    for &j in &PARAMS {
        write!(s, ",std_{}", TARGET_NAMES[j]).expect("string write");
    }
    s.push('\n');
    for start in (0..track.len()).step_by(n) {
        let rows = &track.estimates[start..(start + n).min(track.len())];
        write!(s, "{}", track.times[start]).expect("string write");
        for &j in &PARAMS {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            let v = rows.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / rows.len() as f64;
            write!(s, ",{}", v.sqrt()).expect("string write");
        }
        s.push('\n');
    }
    Ok(s)
}

/// `akf` and `infer`: one estimator over one recording or trajectory.
pub fn estimate_cmd(sec: &EstimateSection, out: &Path) -> Result<()> {
    let registry = Registry::default();
    let res = resources(std::slice::from_ref(&sec.method), &sec.weights, sec.scaling)?;
    let est = registry.build(&sec.method, &res)?;
    let started = Instant::now();
    let track = match (&sec.input, &sec.trajectory) {
        (Some(_), Some(_)) => return Err(Error::Config("give either input or trajectory, not both".into())),
        (None, None) => return Err(Error::Config("no input recording or trajectory given".into())),
        (None, Some(path)) => {
            let (traj, _) = Trajectory::import(path)?;
            if traj.is_empty() {
                return Err(Error::Empty(format!("{}: no samples", path.display())));
            }
            let truth = traj.params_truth[0];
            let ctx = EstimationContext::simulated(traj.dt, &traj.states[0], &truth);
            est.estimate(&traj.observations, &ctx)?
        }
        (Some(path), None) => {
            let rec: Recording = ingest(path, &sec.ingest)?;
            write_json(&out.join("recording.json"), &rec.source)?;
            est.estimate(&rec.samples, &EstimationContext::recording(rec.dt()))?
        }
    };
    let seconds = started.elapsed().as_secs_f64();
    track.write_csv(&out.join("track.csv"))?;
    std::fs::write(out.join("stability.csv"), stability_csv(&track, sec.stability_window_s)?)?;
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "method": track.method,
            "samples": track.len(),
            "finite": track.is_finite(),
            "divergence": track.divergence,
            "seconds": seconds,
        }),
    )?;
    info!("{}: {} samples in {seconds:.1} s", track.method, track.len());
    Ok(())
}

fn noise_tag(noise: f64) -> String {
    format!("{noise}").replace('.', "p")
}

pub fn eval_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let e = &cfg.eval;
    let ds = Dataset::load(&e.dataset)?;
    let (sweep, sweeps) = sweep_provenance(&ds)?;
    let ranges: Vec<_> = sweeps.iter().filter_map(|s| s.range).collect();
    let sigma = split_sigma(&ds.test, &ds.stats)?;
    let recs = eval_recordings(&ranges, &sweep, e.inputs_per_pair, e.duration, e.seed)?;
    if recs.is_empty() {
        return Err(Error::Empty("no evaluation recordings passed the gate".into()));
    }
    if let Some(dir) = &e.from_tracks {
        let report = rescore_tracks(dir, &recs, &e.methods, &e.noise_levels, &sigma)?;
        return write_reports(&report, &e.noise_levels, out);
    }
    let registry = Registry::default();
    let res = resources(&e.methods, &e.weights, e.scaling)?;
    let built = e.methods.iter().map(|m| registry.build(m, &res)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Estimator> = built.iter().map(|b| b.as_ref()).collect();
    let (report, tracks) = run_grid_eval(&recs, &refs, &e.noise_levels, &sigma, e.seed)?;
    if e.save_tracks {
        let dir = out.join("tracks");
        std::fs::create_dir_all(&dir)?;
        for (k, (key, track)) in tracks.iter().enumerate() {
            track.write_csv(&dir.join(track_file(k, &key.method, key.noise)))?;
        }
    }
    write_reports(&report, &e.noise_levels, out)
}

fn track_file(k: usize, method: &str, noise: f64) -> String {
    format!("{k:05}_{method}_{}.csv", noise_tag(noise))
}

/// Scores persisted tracks in the order [`run_grid_eval`] produced them.
fn rescore_tracks(
    dir: &Path,
    recs: &[GatedRecording],
    methods: &[String],
    noise_levels: &[f64],
    sigma: &[f64; TARGET_NAMES.len()],
) -> Result<RmseReport> {
    let mut report = RmseReport::default();
    let mut k = 0;
    for rec in recs {
        for &noise in noise_levels {
            for m in methods {
                let track = EstimateTrack::read_csv(&dir.join(track_file(k, m, noise)))?;
                if track.method != *m {
                    return Err(Error::Format(format!("track {k} was produced by '{}', expected '{m}'", track.method)));
                }
                report.runs.push(score(rec, &track, noise, sigma)?);
                k += 1;
            }
        }
    }
    Ok(report)
}

/// Long-format report, heat grids, difference grids and a text summary.
pub fn write_reports(report: &RmseReport, noise_levels: &[f64], out: &Path) -> Result<()> {
    report.write_csv(&out.join("report.csv"))?;
    let grids = out.join("grids");
    std::fs::create_dir_all(&grids)?;
    let methods = report.methods();
    let mut aggs = vec![Aggregate::Overall, Aggregate::Parameters, Aggregate::Gains];
    aggs.extend((0..TARGET_NAMES.len()).map(Aggregate::Variable));
    let mut summary = String::from("method noise parameters gains overall diverged\n");
    for &noise in noise_levels {
        for m in &methods {
            for agg in &aggs {
                let g = report.grid(m, noise, *agg);
                g.write_csv(&grids.join(format!("{m}_noise{}_{}.csv", noise_tag(noise), agg.label())))?;
                if m == "lstm" {
                    for other in methods.iter().filter(|o| *o != "lstm") {
                        let d = g.difference(&report.grid(other, noise, *agg))?;
                        d.write_csv(&grids.join(format!("diff_lstm-{other}_noise{}_{}.csv", noise_tag(noise), agg.label())))?;
                    }
                }
            }
            let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.4}"));
            writeln!(
                summary,
                "{m} {noise} {} {} {} {}",
                fmt(report.median(m, noise, Aggregate::Parameters)),
                fmt(report.median(m, noise, Aggregate::Gains)),
                fmt(report.median(m, noise, Aggregate::Overall)),
                report.diverged_count(m)
            )
            .expect("string write");
        }
    }
    std::fs::write(out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

pub fn scenario_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    let s = &cfg.scenario;
    let tv = timevarying_scenario(s.seed, s.n_segments, &s.base)?;
    let duration = tv.trajectory.len() as f64 * tv.trajectory.dt;
    tv.trajectory
        .export(&out.join("trajectory.csv"), &TrajectoryMeta::new(&tv.schedule, s.seed, duration))?;
    let ds = Dataset::load(&s.dataset)?;
    let sigma = split_sigma(&ds.test, &ds.stats)?;
    let registry = Registry::default();
    let res = resources(&s.methods, &s.weights, s.scaling)?;
    let truth = tv.trajectory.params_truth[0];
    let ctx = EstimationContext::simulated(tv.trajectory.dt, &tv.trajectory.states[0], &truth);
    let mut tracks = Vec::new();
    for m in &s.methods {
        let track = registry.build(m, &res)?.estimate(&tv.trajectory.observations, &ctx)?;
        track.write_csv(&out.join(format!("track_{m}.csv")))?;
        tracks.push(track);
    }
    let refs: Vec<&EstimateTrack> = tracks.iter().collect();
    let cmp = compare_timevarying(&tv, &refs, &sigma)?;
    write_json(&out.join("comparison.json"), &cmp)?;
    for m in &cmp.methods {
        let segs: Vec<String> = (0..m.segments.len()).map(|k| format!("{:.4}", m.segment_parameter(k))).collect();
        println!("{} whole {:.4} segments [{}]", m.method, m.whole_parameter(), segs.join(", "));
    }
    Ok(())
}
