use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use topotrack::features::{bin_diagram_from, skew_transform, BinningParams};
use topotrack::persistence::PersistenceDiagram;
use topotrack::pipeline::{signal_diagrams, BehaviorClassifier};
use topotrack::sim::{
    generate_intersection_scenario, generate_population, monte_carlo, train_tracker_model,
    window_slices, windowed_dataset, DriverClass,
};
use topotrack::tracker::{read_scans, run_tracker, write_scans};
use topotrack::trajectory::{
    attach_labels, read_labels, read_tracklets, write_labels, write_tracklets, SignalKind, Tracklet,
};

use crate::artifact::{open_input, read_input, write_json, write_with, Provenance};
use crate::config::{require_path, ExperimentConfig, ScenarioKind};
use crate::error::CliError;

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

fn load_tracklets(data: &Path, labels: Option<&Path>) -> Result<Vec<Tracklet>, CliError> {
    let mut tracklets = read_tracklets(open_input(data)?)?;
    if tracklets.is_empty() {
        return Err(CliError::Input(format!(
            "{} contains no tracklets",
            data.display()
        )));
    }
    if let Some(labels) = labels {
        attach_labels(&mut tracklets, &read_labels(open_input(labels)?)?)?;
    }
    Ok(tracklets)
}

fn write_dataset(dir: &Path, stem: &str, tracklets: &[Tracklet]) -> Result<Vec<PathBuf>, CliError> {
    let data = dir.join(format!("{stem}.csv"));
    let labels = dir.join(format!("{stem}_labels.csv"));
    write_with(&data, |w| Ok(write_tracklets(w, tracklets)?))?;
    write_with(&labels, |w| Ok(write_labels(w, tracklets)?))?;
    Ok(vec![data, labels])
}

pub fn generate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let dir = require_path(&cfg.paths.out_dir, "output directory")?;
    let prov = Provenance::new("generate", cfg);
    let g = &cfg.generate;
    match g.scenario {
        ScenarioKind::Population => {
            let paths = generate_population(g.n, g.length, &cfg.population, seed)?;
            let split = windowed_dataset(&paths, &[], g.train_fraction, seed)?;
            let mut files = write_dataset(&dir, "train", &split.train_paths)?;
            files.extend(write_dataset(&dir, "test", &split.test_paths)?);
            prov.write_manifest(
                &dir.join("manifest.json"),
                &files,
                json!({ "train_paths": split.train_paths.len(), "test_paths": split.test_paths.len() }),
            )?;
            println!(
                "wrote {} train and {} test paths to {}",
                split.train_paths.len(),
                split.test_paths.len(),
                dir.display()
            );
        }
        ScenarioKind::Intersection => {
            let sigma = g.sigma.unwrap_or(cfg.scenario.sensor.angular_noise);
            if sigma.is_nan() || sigma < 0.0 {
                return Err(CliError::Config(format!(
                    "sigma must be non-negative, got {sigma}"
                )));
            }
            let scenario = generate_intersection_scenario(sigma, &cfg.scenario, seed)?;
            let scans = dir.join("scans.jsonl");
            write_with(&scans, |w| Ok(write_scans(w, &scenario.scans)?))?;
            let mut files = vec![scans];
            files.extend(write_dataset(&dir, "truth", &scenario.truth)?);
            prov.write_manifest(
                &dir.join("manifest.json"),
                &files,
                json!({
                    "sigma": sigma,
                    "stop_time": scenario.stop_time,
                    "depart_time": scenario.depart_time,
                    "origins": scenario.origins,
                }),
            )?;
            println!("wrote {} scans to {}", scenario.scans.len(), dir.display());
        }
    }
    Ok(())
}

/// One diagram of one signal of one tracklet; a superset of the diagram JSON.
#[derive(Debug, Serialize, Deserialize)]
struct DiagramRecord {
    id: String,
    signal: SignalKind,
    #[serde(flatten)]
    diagram: PersistenceDiagram,
}

pub fn diagram(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let data = require_path(&cfg.paths.data, "trajectory")?;
    let out = require_path(&cfg.paths.out, "output")?;
    let prov = Provenance::new("diagram", cfg);
    let tracklets = load_tracklets(&data, None)?;
    let signals = &cfg.classifier.signals;
    let mut records = Vec::new();
    for tr in &tracklets {
        let diagrams = signal_diagrams(&tr.samples, signals, cfg.classifier.augmented)
            .map_err(|e| CliError::Input(format!("tracklet {}: {e}", tr.id)))?;
        for (&signal, diagram) in signals.iter().zip(diagrams) {
            records.push(DiagramRecord {
                id: tr.id.clone(),
                signal,
                diagram,
            });
        }
    }
    let count = records.len();
    write_with(&out, |w| {
        for rec in &records {
            serde_json::to_writer(&mut *w, rec).map_err(|e| CliError::Runtime(e.to_string()))?;
            writeln!(w).map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Ok(())
    })?;
    prov.write_sidecar(
        &out,
        json!({ "tracklets": tracklets.len(), "diagrams": count }),
    )?;
    println!("wrote {count} diagrams to {}", out.display());
    Ok(())
}

fn read_diagrams(path: &Path) -> Result<Vec<DiagramRecord>, CliError> {
    let text = read_input(path)?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DiagramRecord = serde_json::from_str(line)
            .map_err(|e| CliError::Input(format!("{} line {}: {e}", path.display(), n + 1)))?;
        // re-validate and canonicalize
        let diagram = PersistenceDiagram::new(rec.diagram.pairs, rec.diagram.augmented)?;
        out.push(DiagramRecord { diagram, ..rec });
    }
    if out.is_empty() {
        return Err(CliError::Input(format!(
            "{} contains no diagrams",
            path.display()
        )));
    }
    Ok(out)
}

#[derive(Serialize)]
struct BinRow<'a> {
    id: &'a str,
    signal: SignalKind,
    row: usize,
    col: usize,
    count: u32,
}

pub fn bin(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let input = require_path(&cfg.paths.diagrams, "diagram")?;
    let out = require_path(&cfg.paths.out, "output")?;
    let prov = Provenance::new("bin", cfg);
    let records = read_diagrams(&input)?;
    let mut params: BTreeMap<SignalKind, BinningParams> = BTreeMap::new();
    for signal in records.iter().map(|r| r.signal) {
        if params.contains_key(&signal) {
            continue;
        }
        let p = match cfg.binning.get(&signal) {
            Some(p) => {
                p.validate()?;
                *p
            }
            None => BinningParams::from_quantiles(
                cfg.classifier.rows,
                cfg.classifier.cols,
                records
                    .iter()
                    .filter(|r| r.signal == signal)
                    .map(|r| &r.diagram),
            )?,
        };
        params.insert(signal, p);
    }
    write_with(&out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for rec in &records {
            let p = &params[&rec.signal];
            let binned = bin_diagram_from(&skew_transform(&rec.diagram), p, vec![rec.signal])?;
            for row in 0..p.rows {
                for col in 0..p.cols {
                    wtr.serialize(BinRow {
                        id: &rec.id,
                        signal: rec.signal,
                        row,
                        col,
                        count: binned.get(row, col),
                    })
                    .map_err(csv_err(&out))?;
                }
            }
        }
        wtr.flush().map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    prov.write_sidecar(&out, json!({ "binning": params }))?;
    println!("binned {} diagrams into {}", records.len(), out.display());
    Ok(())
}

pub fn train(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let data = require_path(&cfg.paths.data, "training trajectory")?;
    let labels = require_path(&cfg.paths.labels, "training label")?;
    let out = require_path(&cfg.paths.out, "model output")?;
    let prov = Provenance::new("train", cfg);
    let c = &cfg.classifier;
    let paths = load_tracklets(&data, Some(&labels))?;
    let examples: Vec<Tracklet> = match c.window {
        Some(w) => paths.iter().flat_map(|p| window_slices(p, w)).collect(),
        None => paths,
    };
    if examples.is_empty() {
        return Err(CliError::Input(
            "no training examples after windowing".into(),
        ));
    }
    let mut train = c.train;
    train.sgd.seed = seed;
    let mut clf = BehaviorClassifier::train(
        c.model,
        &examples,
        &class_names(&examples),
        &c.signals,
        c.augmented,
        (c.rows, c.cols),
        &train,
    )?;
    let mut meta = prov.meta();
    meta["window"] = json!(c.window);
    meta["examples"] = json!(examples.len());
    clf.meta = Some(meta);
    write_with(&out, |w| {
        writeln!(w, "{}", clf.to_json()?).map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    println!(
        "trained {} model on {} examples -> {}",
        c.model,
        examples.len(),
        out.display()
    );
    Ok(())
}

/// The simulator's class order when the labels are its classes, otherwise sorted labels.
fn class_names(examples: &[Tracklet]) -> Vec<String> {
    let mut seen: Vec<String> = examples.iter().filter_map(|t| t.label.clone()).collect();
    seen.sort();
    seen.dedup();
    let sim = DriverClass::class_names();
    if seen.iter().all(|l| sim.contains(l)) {
        sim
    } else {
        seen
    }
}

pub fn load_model(path: &Path) -> Result<BehaviorClassifier, CliError> {
    Ok(BehaviorClassifier::from_json(&read_input(path)?)?)
}

#[derive(Serialize)]
struct EvalRow {
    model: String,
    signals: String,
    train_window: String,
    test_window: String,
    examples: usize,
    error: f64,
}

fn window_label(w: Option<usize>) -> String {
    w.map_or_else(|| "full".to_string(), |w| w.to_string())
}

pub fn eval(cfg: &ExperimentConfig, models: &[PathBuf]) -> Result<(), CliError> {
    if models.is_empty() {
        return Err(CliError::Config("at least one --model is required".into()));
    }
    let data = require_path(&cfg.paths.data, "test trajectory")?;
    let labels = require_path(&cfg.paths.labels, "test label")?;
    let out = require_path(&cfg.paths.out, "metrics output")?;
    let prov = Provenance::new("eval", cfg);
    let paths = load_tracklets(&data, Some(&labels))?;
    let mut sets: Vec<(Option<usize>, Vec<Tracklet>)> = vec![(None, paths.clone())];
    for &w in &cfg.eval.windows {
        let windows: Vec<Tracklet> = paths.iter().flat_map(|p| window_slices(p, w)).collect();
        if windows.is_empty() {
            return Err(CliError::Config(format!(
                "test window {w} is longer than every path"
            )));
        }
        sets.push((Some(w), windows));
    }
    let mut rows = Vec::new();
    // full-path error per signal set, for the combined-vs-speed note
    let mut full: Vec<(Vec<SignalKind>, f64)> = Vec::new();
    for path in models {
        let clf = load_model(path)?;
        let signals = clf.featurizer.signals.clone();
        let train_window = clf
            .meta
            .as_ref()
            .and_then(|m| m.get("window"))
            .and_then(Value::as_u64)
            .map(|w| w as usize);
        for (w, set) in &sets {
            let error = clf.error_rate(set)?;
            if w.is_none() {
                full.push((signals.clone(), error));
            }
            rows.push(EvalRow {
                model: path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                signals: signals
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join("+"),
                train_window: window_label(train_window),
                test_window: window_label(*w),
                examples: set.len(),
                error,
            });
        }
    }
    write_with(&out, |w| {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &rows {
            wtr.serialize(row).map_err(csv_err(&out))?;
        }
        wtr.flush().map_err(|e| CliError::Runtime(e.to_string()))
    })?;
    let speed = full
        .iter()
        .find(|(s, _)| s.as_slice() == [SignalKind::Speed])
        .map(|x| x.1);
    let combined = full
        .iter()
        .find(|(s, _)| s.len() > 1 && s.contains(&SignalKind::Speed));
    let mut details = json!({ "rows": rows.len() });
    if let (Some(speed), Some((_, comb))) = (speed, combined) {
        let holds = *comb <= speed + 0.02;
        details["combined_within_speed_margin"] = json!(holds);
        eprintln!(
            "note: combined error {comb:.4} vs speed-only {speed:.4} ({})",
            if holds {
                "within 0.02"
            } else {
                "exceeds speed-only by more than 0.02"
            }
        );
    }
    prov.write_sidecar(&out, details)?;
    for row in rows.iter().filter(|r| r.test_window == "full") {
        println!(
            "{} [{}] full-path error {:.4}",
            row.model, row.signals, row.error
        );
    }
    Ok(())
}

pub fn track(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let scans_path = require_path(&cfg.paths.scans, "scan")?;
    let out = require_path(&cfg.paths.out, "tracker output")?;
    let prov = Provenance::new("track", cfg);
    let scans = read_scans(open_input(&scans_path)?)?;
    let model = cfg.paths.model.as_deref().map(load_model).transpose()?;
    let behavior = model
        .as_ref()
        .map(|m| m as &dyn topotrack::tracker::BehaviorLikelihood);
    let mut output = run_tracker(&scans, &cfg.tracker, behavior)?;
    output.meta = Some(prov.meta());
    write_json(&out, &output)?;
    println!(
        "tracked {} scans: {} tracks, score {:.3} -> {}",
        scans.len(),
        output.tracks.len(),
        output.score,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrialRow {
    sigma: f64,
    trial: usize,
    seed: u64,
    baseline_correct: bool,
    behavior_correct: bool,
}

pub fn montecarlo(cfg: &ExperimentConfig, trials_out: Option<&Path>) -> Result<(), CliError> {
    let seed = cfg.require_seed()?;
    let out = require_path(&cfg.paths.out, "results output")?;
    let prov = Provenance::new("montecarlo", cfg);
    let mc = cfg.monte_carlo();
    let model = match &cfg.paths.model {
        Some(path) => load_model(path)?,
        None => train_tracker_model(&cfg.training, &mc.scenario.sensor, &mc.tracker, seed)?,
    };
    let table = monte_carlo(&mc, &model, seed)?;
    write_with(&out, |w| Ok(table.write_csv(w)?))?;
    prov.write_sidecar(&out, json!({ "model": cfg.paths.model }))?;
    if let Some(path) = trials_out {
        write_with(path, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            for t in &table.trials {
                wtr.serialize(TrialRow {
                    sigma: t.sigma,
                    trial: t.trial,
                    seed: t.seed,
                    baseline_correct: t.baseline_correct,
                    behavior_correct: t.behavior_correct,
                })
                .map_err(csv_err(path))?;
            }
            wtr.flush().map_err(|e| CliError::Runtime(e.to_string()))
        })?;
        prov.write_sidecar(path, Value::Null)?;
    }
    for r in &table.rows {
        println!(
            "sigma {:<8} {:<9} {:>4}/{:<4} rate {:.3} +- {:.3}",
            r.sigma, r.variant, r.successes, r.trials, r.rate, r.stderr
        );
    }
    Ok(())
}
