//! The six subcommands.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use lauerl::agent::{evaluate, worker_threads, Agent, MetricRow, OraclePolicy, Policy, Trainer};
use lauerl::env::LaueEnv;
use lauerl::geometry::{angular_distance, beam_axis, nearest_target, target_set, CrystalSystem, TargetMode};
use lauerl::inference::classifier::{NUM_CLASSES, CONFIDENCE_THRESHOLD};
use lauerl::inference::hough::{offset_canvas, offset_orientation, random_pole_base};
use lauerl::inference::tta::{EnsemblePolicy, TtaPolicy};
use lauerl::inference::{hough_fine_align, train_classifier, Calibration, Classifier, Dataset, DatasetSpec, FineAlignment};
use lauerl::nn::checkpoint::{read_checkpoint, write_checkpoint};
use lauerl::pattern_io::{extract_spots, read_frame, write_frame, write_observation_pgm, write_spot_csv, RawFrame};
use lauerl::render::{render_canvas, render_observation, Canvas};
use lauerl::simulator::{LaueSimulator, Spot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{mean_ci, stereo_svg, target_poles, trajectory, write_json, Csv};

fn prepare(cfg: &RunConfig) -> CliResult<(PathBuf, String)> {
    std::fs::create_dir_all(&cfg.out)?;
    write_json(&cfg.out.join("config.json"), cfg)?;
    Ok((cfg.out.clone(), cfg.sha256()))
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

pub fn load_agent(path: &Path, cfg: &RunConfig) -> CliResult<Agent> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    let tensors = read_checkpoint(BufReader::new(file)).map_err(|e| data_err(path, e))?;
    let mut agent = Agent::new(&cfg.train, &mut ChaCha8Rng::seed_from_u64(0));
    agent.load_tensors(&tensors).map_err(|e| data_err(path, e))?;
    Ok(agent)
}

pub fn load_classifier(path: &Path, cfg: &RunConfig) -> CliResult<Classifier> {
    let file = File::open(path).map_err(|e| data_err(path, e))?;
    let tensors = read_checkpoint(BufReader::new(file)).map_err(|e| data_err(path, e))?;
    let mut clf = Classifier::new(cfg.classify.training.lr, &mut ChaCha8Rng::seed_from_u64(0));
    clf.load_tensors(&tensors).map_err(|e| data_err(path, e))?;
    Ok(clf)
}

const SPOT_HEADER: &str = "x_px,y_px,h,k,l,intensity";

fn spot_rows(csv: &mut Csv, spots: &[Spot]) -> CliResult<()> {
    for s in spots {
        let hkl = s.hkl.map_or(",,".to_string(), |[h, k, l]| format!("{h},{k},{l}"));
        csv.row(&format!("{:.4},{:.4},{hkl},{:.6e}", s.x_px, s.y_px, s.intensity))?;
    }
    Ok(())
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let (out, hash) = prepare(cfg)?;
    let mut env = LaueEnv::new(cfg.env.clone(), cfg.seed())?;
    let targets = env.targets().clone();
    let mut labels = Csv::create(
        &out.join("labels.csv"),
        &hash,
        "index,space_group,lattice_a,lattice_c,detector_distance_cm,spot_count,theta0_deg,chi0_deg,phi0_deg,\
         distance_deg,target_x,target_y,target_z,m00,m01,m02,m10,m11,m12,m20,m21,m22",
    )?;
    for i in 0..cfg.simulate.count {
        let (obs, _) = env.reset()?;
        let ep = env.episode().expect("episode after reset");
        let m = ep.orientation();
        let (ti, d) = nearest_target(&m, &targets, &beam_axis());
        let v = targets.axes[ti];
        let [t0, c0, p0] = ep.initial_angles;
        let mflat: Vec<String> = (0..9).map(|k| format!("{:.12}", m[(k / 3, k % 3)])).collect();
        labels.row(&format!(
            "{i},{},{},{},{},{},{t0:.6},{c0:.6},{p0:.6},{d:.6},{:.6},{:.6},{:.6},{}",
            ep.spec.space_group.number(),
            ep.spec.lattice.a,
            ep.spec.lattice.c,
            ep.detector.distance_cm,
            ep.spots.len(),
            v.x,
            v.y,
            v.z,
            mflat.join(",")
        ))?;
        let canvas = render_canvas(&ep.spots, &ep.detector);
        write_frame(&RawFrame::from_canvas(&canvas), &out.join(format!("pattern_{i:04}.pgm")))?;
        write_observation_pgm(BufWriter::new(File::create(out.join(format!("obs_{i:04}.pgm")))?), &obs)?;
        let mut spots = Csv::create(&out.join(format!("spots_{i:04}.csv")), &hash, SPOT_HEADER)?;
        spot_rows(&mut spots, &ep.spots)?;
        spots.finish()?;
    }
    labels.finish()?;
    log::info!("wrote {} patterns to {}", cfg.simulate.count, out.display());
    Ok(())
}

const METRIC_HEADER: &str = "step,percent,success_rate,mean_episode_length,mean_episode_reward,actor_loss,critic_loss,stddev";

fn metric_line(r: &MetricRow, total: u64) -> String {
    let pct = 100.0 * r.step as f64 / total.max(1) as f64;
    let rest = r.csv_line();
    let rest = rest.split_once(',').map(|x| x.1).unwrap_or("");
    format!("{},{pct:.4},{rest}", r.step)
}

pub fn train(cfg: &RunConfig, resume: bool, checkpoint: bool) -> CliResult<()> {
    let (out, hash) = prepare(cfg)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed_{seed}"));
        let ckpt = dir.join("checkpoint");
        std::fs::create_dir_all(&dir)?;
        let mut trainer = if resume && ckpt.join("state.json").exists() {
            let t = Trainer::load(&ckpt)?;
            if t.env_cfg != cfg.env || t.cfg != cfg.train || t.seed != seed {
                return Err(CliError::Config(format!("checkpoint in {} was written by a different configuration", ckpt.display())));
            }
            log::info!("seed {seed}: resuming at step {}", t.step);
            t
        } else {
            Trainer::new(cfg.env.clone(), cfg.train.clone(), seed)?
        };
        trainer.threads = worker_threads();
        trainer.run(checkpoint.then_some(ckpt.as_path()))?;
        let mut csv = Csv::create(&dir.join("metrics.csv"), &hash, METRIC_HEADER)?;
        for r in &trainer.metrics {
            csv.row(&metric_line(r, cfg.train.train_steps))?;
        }
        csv.finish()?;
        trainer.save_weights(&dir.join("agent.ckpt"))?;
        if let Some(last) = trainer.metrics.last() {
            log::info!("seed {seed}: final success rate {:.3}, mean length {:.2}", last.success_rate, last.mean_episode_length);
        }
        runs.push(trainer.metrics);
    }
    if runs.len() > 1 {
        let mut csv = Csv::create(
            &out.join("aggregate.csv"),
            &hash,
            "step,percent,seeds,success_mean,success_ci95,length_mean,length_ci95,reward_mean,reward_ci95",
        )?;
        let rows = runs.iter().map(Vec::len).min().unwrap_or(0);
        for i in 0..rows {
            let step = runs[0][i].step;
            let col = |f: fn(&MetricRow) -> f64| mean_ci(&runs.iter().map(|r| f(&r[i])).collect::<Vec<_>>());
            let (s, sc) = col(|r| r.success_rate);
            let (l, lc) = col(|r| r.mean_episode_length);
            let (w, wc) = col(|r| r.mean_episode_reward);
            let pct = 100.0 * step as f64 / cfg.train.train_steps.max(1) as f64;
            csv.row(&format!("{step},{pct:.4},{},{s:.6},{sc:.6},{l:.6},{lc:.6},{w:.6},{wc:.6}", runs.len()))?;
        }
        csv.finish()?;
    }
    Ok(())
}

pub fn eval(cfg: &RunConfig) -> CliResult<()> {
    let (out, hash) = prepare(cfg)?;
    let e = &cfg.eval;
    let agents: Vec<Agent> = if e.oracle {
        Vec::new()
    } else {
        let first = e.checkpoint.as_ref().ok_or_else(|| CliError::Config("eval needs a checkpoint or --oracle".into()))?;
        std::iter::once(first).chain(&e.ensemble).map(|p| load_agent(p, cfg)).collect::<CliResult<_>>()?
    };
    if agents.len() > 1 && !e.tta.is_empty() {
        return Err(CliError::Config("test-time augmentation and ensembles are exclusive".into()));
    }
    let threads = worker_threads();
    let (label, stats) = if e.oracle {
        ("oracle", evaluate(&OraclePolicy, &cfg.env, e.episodes, cfg.seed(), threads)?)
    } else if agents.len() > 1 {
        let n = agents.len();
        let p = EnsemblePolicy { members: agents };
        log::info!("ensemble of {n} agents");
        ("ensemble", evaluate(&p, &cfg.env, e.episodes, cfg.seed(), threads)?)
    } else if !e.tta.is_empty() {
        let p = TtaPolicy { inner: &agents[0], transforms: e.tta.clone() };
        ("tta", evaluate(&p, &cfg.env, e.episodes, cfg.seed(), threads)?)
    } else {
        ("agent", evaluate(&agents[0] as &dyn Policy, &cfg.env, e.episodes, cfg.seed(), threads)?)
    };
    log::info!("{label}: success {:.3}, mean length {:.2}", stats.success_rate, stats.mean_length);

    let mut hist = Csv::create(&out.join("histogram.csv"), &hash, "episode_length,count")?;
    for (k, c) in stats.histogram.iter().enumerate() {
        hist.row(&format!("{},{c}", k + 1))?;
    }
    hist.finish()?;
    let mut eps = Csv::create(&out.join("episodes.csv"), &hash, "episode,success,length,total_reward,initial_distance_deg,final_distance_deg")?;
    for (i, (rec, ok)) in stats.records.iter().zip(&stats.successes).enumerate() {
        let (d0, d1) = (rec.steps[0].distance_deg, rec.steps.last().expect("initial step").distance_deg);
        eps.row(&format!("{i},{},{},{:.6},{d0:.6},{d1:.6}", *ok as u8, rec.len(), rec.total_reward()))?;
    }
    eps.finish()?;
    let shown = e.trajectories.min(stats.records.len());
    let mut traj = Csv::create(&out.join("trajectories.csv"), &hash, "episode,t,stereo_x,stereo_y,distance_deg")?;
    let mut paths = Vec::with_capacity(shown);
    for (i, rec) in stats.records.iter().take(shown).enumerate() {
        let path = trajectory(rec);
        for (s, p) in rec.steps.iter().zip(&path) {
            traj.row(&format!("{i},{},{:.6},{:.6},{:.6}", s.t, p.0, p.1, s.distance_deg))?;
        }
        paths.push(path);
    }
    traj.finish()?;
    let targets = target_set(&cfg.env.crystal, cfg.env.target_mode)?;
    std::fs::write(out.join("stereo.svg"), stereo_svg(&target_poles(&targets), &paths))?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "policy": label,
            "episodes": stats.episodes,
            "success_rate": stats.success_rate,
            "mean_length": stats.mean_length,
            "mean_reward": stats.mean_reward,
            "config_sha256": hash,
        }),
    )?;
    Ok(())
}

fn calibration(k1: Option<f64>, samples: usize, max_offset: f64, cfg: &RunConfig) -> CliResult<Calibration> {
    if let Some(k1) = k1 {
        return Ok(Calibration { k1 });
    }
    let e = &cfg.env;
    let c = Calibration::fit(&e.crystal, &e.detector, &e.band, e.spot_count, samples, max_offset, cfg.seed())?;
    log::info!("fitted calibration k1 = {:.4}", c.k1);
    Ok(c)
}

/// Binary canvas of detected spots, as the simulator would draw them.
pub fn spot_canvas(spots: &[Spot], cfg: &RunConfig) -> Canvas {
    let det = &cfg.env.detector;
    let mut c = render_canvas(spots, det);
    c.mask_pinhole(det.pinhole_frac);
    c
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "frame".into())
}

pub fn align(cfg: &RunConfig) -> CliResult<()> {
    let (out, hash) = prepare(cfg)?;
    let a = &cfg.align;
    if a.images.is_empty() {
        return Err(CliError::Config("align needs at least one image".into()));
    }
    let path = a.checkpoint.as_ref().ok_or_else(|| CliError::Config("align needs a checkpoint".into()))?;
    let agent = load_agent(path, cfg)?;
    let clf = a.classifier.as_ref().map(|p| load_classifier(p, cfg)).transpose()?;
    let calib = if a.fine { Some(calibration(a.k1, cfg.finealign.calibration_samples, cfg.finealign.max_offset_deg, cfg)?) } else { None };
    let det = cfg.env.detector;
    let scale = cfg.env.action_scale_deg;
    let mut csv = Csv::create(
        &out.join("actions.csv"),
        &hash,
        "file,spots,a_theta_deg,a_phi_deg,class,confidence,eoe,fine_dtheta_deg,fine_dphi_deg,error",
    )?;
    let mut failures = 0;
    for img in &a.images {
        let row = (|| -> CliResult<String> {
            let frame = read_frame(img).map_err(|e| data_err(img, e))?;
            let spots = extract_spots(&frame, &cfg.pipeline, &det);
            if spots.is_empty() {
                log::warn!("{}: no spots detected", img.display());
            }
            let obs = render_observation(&spots, &det);
            let name = stem(img);
            write_observation_pgm(BufWriter::new(File::create(out.join(format!("{name}_obs.pgm")))?), &obs)?;
            write_spot_csv(BufWriter::new(File::create(out.join(format!("{name}_spots.csv")))?), &spots)?;
            let act = agent.act(&obs, 0.0, 0.0, true, &mut ChaCha8Rng::seed_from_u64(0))?;
            let (mut class, mut conf, mut eoe) = (String::new(), String::new(), false);
            if let Some(c) = &clf {
                let o = c.classify(&obs)?;
                eoe = o.triggers(CONFIDENCE_THRESHOLD);
                class = o.label.to_string();
                conf = format!("{:.4}", o.confidence());
            }
            let mut fine = (String::new(), String::new());
            if let (Some(cal), true) = (&calib, eoe) {
                match hough_fine_align(&spot_canvas(&spots, cfg), &det, cal) {
                    Ok(f) => fine = (format!("{:.4}", f.delta_theta_deg), format!("{:.4}", f.delta_phi_deg)),
                    Err(e) => log::warn!("{}: fine alignment failed: {e}", img.display()),
                }
            }
            Ok(format!(
                "{},{},{:.4},{:.4},{class},{conf},{},{},{},",
                img.display(),
                spots.len(),
                act[0] * scale,
                act[1] * scale,
                eoe as u8,
                fine.0,
                fine.1
            ))
        })();
        match row {
            Ok(r) => csv.row(&r)?,
            Err(e) => {
                log::error!("{e}");
                failures += 1;
                csv.row(&format!("{},,,,,,,,,\"{}\"", img.display(), e.to_string().replace('"', "'")))?;
            }
        }
    }
    csv.finish()?;
    if failures == a.images.len() {
        return Err(CliError::Data(format!("none of the {failures} images could be processed")));
    }
    Ok(())
}

pub fn classify(cfg: &RunConfig) -> CliResult<()> {
    let (out, hash) = prepare(cfg)?;
    if cfg.env.crystal.system() != CrystalSystem::Cubic {
        return Err(CliError::Config("the orientation classifier is defined for cubic crystals".into()));
    }
    let c = &cfg.classify;
    let spec = DatasetSpec { env: cfg.env.clone(), tolerance_deg: c.tolerance_deg, near_miss_max_deg: c.near_miss_max_deg };
    let threads = worker_threads();
    let seed = cfg.seed();
    let train = Dataset::generate(&spec, c.train_samples, seed, threads)?;
    let test = Dataset::generate(&spec, c.test_samples, seed ^ 0xA5A5_A5A5_A5A5_A5A5, threads)?;
    log::info!("datasets: train {:?}, test {:?}", train.class_counts(), test.class_counts());
    let (clf, curves) = train_classifier(&train, &c.training, seed)?;
    let mut cv = Csv::create(&out.join("cv.csv"), &hash, "fold,epoch,train_loss,val_loss,val_accuracy")?;
    for (k, f) in curves.iter().enumerate() {
        for ep in 0..f.train_loss.len() {
            cv.row(&format!("{k},{ep},{:.6},{:.6},{:.6}", f.train_loss[ep], f.val_loss[ep], f.val_accuracy[ep]))?;
        }
    }
    cv.finish()?;
    let idx: Vec<usize> = (0..test.len()).collect();
    let scores = clf.score(&test, &idx)?;
    let header = std::iter::once("truth".to_string()).chain((0..NUM_CLASSES).map(|j| format!("pred_{j}"))).collect::<Vec<_>>();
    let mut conf = Csv::create(&out.join("confusion.csv"), &hash, &header.join(","))?;
    for (i, row) in scores.confusion.iter().enumerate() {
        conf.row(&format!("{i},{}", row.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")))?;
    }
    conf.finish()?;
    write_checkpoint(BufWriter::new(File::create(out.join("classifier.ckpt"))?), &clf.to_tensors())?;
    log::info!("test accuracy {:.4}, diagonal dominant {}", scores.accuracy, scores.diagonal_dominant());
    write_json(
        &out.join("summary.json"),
        &json!({
            "folds": curves.len(),
            "test_accuracy": scores.accuracy,
            "test_loss": scores.loss,
            "diagonal_dominant": scores.diagonal_dominant(),
            "train_class_counts": train.class_counts(),
            "test_class_counts": test.class_counts(),
            "config_sha256": hash,
        }),
    )?;
    Ok(())
}

pub fn finealign(cfg: &RunConfig) -> CliResult<()> {
    let (out, hash) = prepare(cfg)?;
    let f = &cfg.finealign;
    let calib = calibration(f.k1, f.calibration_samples, f.max_offset_deg, cfg)?;
    let det = cfg.env.detector;
    let header = format!("source,true_theta_deg,true_phi_deg,{},residual_deg,error", FineAlignment::CSV_HEADER);
    let mut csv = Csv::create(&out.join("finealign.csv"), &hash, &header)?;
    let empty = ",,,";
    if !f.images.is_empty() {
        let mut failures = 0;
        for img in &f.images {
            let res = read_frame(img)
                .map_err(|e| data_err(img, e))
                .and_then(|frame| Ok(hough_fine_align(&spot_canvas(&extract_spots(&frame, &cfg.pipeline, &det), cfg), &det, &calib)?));
            match res {
                Ok(fa) => csv.row(&format!("{},,,{},,", img.display(), fa.csv_line()))?,
                Err(e) => {
                    failures += 1;
                    log::error!("{e}");
                    csv.row(&format!("{},,,{empty},,\"{}\"", img.display(), e.to_string().replace('"', "'")))?;
                }
            }
        }
        csv.finish()?;
        if failures == f.images.len() {
            return Err(CliError::Data(format!("none of the {failures} images could be processed")));
        }
        return Ok(());
    }
    let e = &cfg.env;
    let sim = LaueSimulator::new(&e.crystal)?;
    let targets = target_set(&e.crystal, TargetMode::Family001)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed());
    let (mut below, mut worst) = (0usize, 0f64);
    for i in 0..f.samples {
        let base = random_pole_base(&e.crystal, &mut rng);
        let m = f.max_offset_deg;
        let (theta, phi) = loop {
            let (t, p) = (rng.random_range(-m..=m), rng.random_range(-m..=m));
            if angular_distance(&offset_orientation(&base, t, p), &targets, &beam_axis()) <= m {
                break (t, p);
            }
        };
        let canvas = offset_canvas(&sim, &base, theta, phi, &e.detector, &e.band, e.spot_count)?;
        let (line, residual) = match hough_fine_align(&canvas, &e.detector, &calib) {
            Ok(fa) => {
                let r = angular_distance(&offset_orientation(&base, theta + fa.delta_theta_deg, phi + fa.delta_phi_deg), &targets, &beam_axis());
                (format!("{},{r:.5},", fa.csv_line()), r)
            }
            Err(err) => (format!("{empty},,{err}"), f64::INFINITY),
        };
        below += (residual < 1.0) as usize;
        worst = worst.max(residual);
        csv.row(&format!("sim_{i},{theta:.5},{phi:.5},{line}"))?;
    }
    csv.finish()?;
    let rate = below as f64 / f.samples.max(1) as f64;
    log::info!("fine alignment: {below}/{} below 1 deg (worst {worst:.3})", f.samples);
    write_json(
        &out.join("summary.json"),
        &json!({
            "k1": calib.k1,
            "samples": f.samples,
            "fraction_below_1deg": rate,
            "worst_residual_deg": if worst.is_finite() { json!(worst) } else { json!(null) },
            "config_sha256": hash,
        }),
    )?;
    Ok(())
}
