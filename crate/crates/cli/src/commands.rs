use std::path::Path;

use wardrisk::cohort::{parse_cohort, write_cohort_to, Cohort};
use wardrisk::eval::{
    curve_svg, run_benchmark, snapshot_baseline, stationary_baseline, write_curve_csv,
    write_lead_csv, BenchmarkReport, MetricCurve, ModelEvaluation, FULL, SNAPSHOT, STATIONARY,
};
use wardrisk::mixture::{self, em_fit, ModelParams};
use wardrisk::scoring::{score_cohort, score_cohort_by, write_traces_csv, ScoreTrace};
use wardrisk::simulator::{sample_cohort, write_truth_csv, SimConfig};

use crate::failure::{Context, Failure, Result};
use crate::output::{Manifest, Outputs};
use crate::settings::{
    require_dir, require_file, BenchmarkCmdSettings, EvaluateSettings, ScoreSettings, Scorer,
    SelectSettings, SimulateSettings, TrainSettings,
};

fn load_model(path: &Path) -> Result<ModelParams> {
    ModelParams::load(path).context(format!("model `{}`", path.display()))
}

fn load_cohort(path: &Path) -> Result<Cohort> {
    parse_cohort(path).context(format!("cohort `{}`", path.display()))
}

fn cohort_bytes(cohort: &Cohort) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_cohort_to(cohort, &mut buf)?;
    Ok(buf)
}

fn json_line<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::data(e.to_string()))
}

/// Rejects scoring a cohort whose streams differ from the model's.
fn check_compatible(model: &ModelParams, cohort: &Cohort) -> Result<()> {
    let names =
        |c: &[wardrisk::cohort::StreamInfo]| c.iter().map(|s| s.name.clone()).collect::<Vec<_>>();
    if names(&model.stream_catalog) != names(&cohort.stream_catalog) {
        return Err(Failure::data(
            "cohort streams do not match the model's stream catalog",
        ));
    }
    if model.encoder.vocabulary != cohort.vocabulary {
        return Err(Failure::data(
            "cohort vocabulary does not match the model's vocabulary",
        ));
    }
    Ok(())
}

fn finish<C: serde::Serialize>(
    mut manifest: Manifest<C>,
    mut outputs: Outputs,
    dir: &Path,
) -> Result<()> {
    manifest.outputs = outputs
        .checksums()
        .into_iter()
        .map(|(p, h)| {
            let name = Path::new(&p)
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or(p);
            (name, h)
        })
        .collect();
    outputs.add_text(dir.join("manifest.json"), manifest.to_json()?);
    for path in outputs.commit()? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

pub fn simulate(s: &SimulateSettings) -> Result<()> {
    require_dir(&s.out_dir)?;
    let mut manifest = Manifest::new("simulate", s);
    let params = match &s.model {
        Some(path) => {
            require_file(path, "--model")?;
            manifest.input(path)?;
            load_model(path)?
        }
        None => s.truth.build(s.truth_seed),
    };
    let mut config = SimConfig::new(params, s.patients, s.seed);
    config.schedule = s.schedule;
    config.id_prefix = s.id_prefix.clone();
    let (cohort, truth) = sample_cohort(&config)?;
    let mut out = Outputs::default();
    out.add(s.out_dir.join("cohort.jsonl"), cohort_bytes(&cohort)?);
    let mut truth_csv = Vec::new();
    write_truth_csv(&truth, &mut truth_csv)?;
    out.add(s.out_dir.join("truth.csv"), truth_csv);
    out.add_text(
        s.out_dir.join("truth_model.json"),
        config.params.to_json()? + "\n",
    );
    finish(manifest, out, &s.out_dir)
}

pub fn train(s: &TrainSettings) -> Result<()> {
    require_file(&s.cohort, "--cohort")?;
    require_dir(&s.out_dir)?;
    let mut manifest = Manifest::new("train", s);
    manifest.input(&s.cohort)?;
    let cohort = load_cohort(&s.cohort)?;
    let (params, report) = em_fit(&cohort, s.phenotypes, s.epochs, &s.em)?;
    log::info!(
        "trained G={} K={} in {} iterations, final log likelihood {:.3}",
        s.phenotypes,
        s.epochs,
        report.iterations,
        report.trace.last().copied().unwrap_or(f64::NAN)
    );
    let mut out = Outputs::default();
    out.add_text(s.out_dir.join("model.json"), params.to_json()? + "\n");
    out.add_text(s.out_dir.join("fit_report.json"), json_line(&report)?);
    finish(manifest, out, &s.out_dir)
}

pub fn select_model(s: &SelectSettings) -> Result<()> {
    require_file(&s.cohort, "--cohort")?;
    require_dir(&s.out_dir)?;
    let mut manifest = Manifest::new("select-model", s);
    manifest.input(&s.cohort)?;
    let cohort = load_cohort(&s.cohort)?;
    let selection = mixture::select_model(&cohort, &s.phenotypes, &s.epochs, &s.em)?;
    let mut table = csv::Writer::from_writer(Vec::new());
    for row in &selection.table {
        table
            .serialize(row)
            .map_err(|e| Failure::data(format!("bic table: {e}")))?;
    }
    let table = table
        .into_inner()
        .map_err(|e| Failure::data(e.to_string()))?;
    let mut out = Outputs::default();
    out.add_text(
        s.out_dir.join("model.json"),
        selection.params.to_json()? + "\n",
    );
    out.add(s.out_dir.join("bic.csv"), table);
    finish(manifest, out, &s.out_dir)
}

fn traces_for(
    scorer: Scorer,
    model: &ModelParams,
    cohort: &Cohort,
    s: &ScoreSettings,
) -> Result<Vec<ScoreTrace>> {
    Ok(match scorer {
        Scorer::Full => score_cohort(model, cohort, &s.options)?,
        Scorer::Stationary => score_cohort_by(cohort, |p| stationary_baseline(model, p))?,
        Scorer::Snapshot => score_cohort_by(cohort, |p| snapshot_baseline(model, p))?,
    })
}

pub fn score(s: &ScoreSettings) -> Result<()> {
    require_file(&s.model, "--model")?;
    require_file(&s.cohort, "--cohort")?;
    require_dir(&s.out_dir)?;
    let mut manifest = Manifest::new("score", s);
    manifest.input(&s.model)?;
    manifest.input(&s.cohort)?;
    let model = load_model(&s.model)?;
    let cohort = load_cohort(&s.cohort)?;
    check_compatible(&model, &cohort)?;
    let traces = traces_for(s.scorer, &model, &cohort, s)?;
    let mut csv = Vec::new();
    write_traces_csv(&traces, &mut csv)?;
    let mut out = Outputs::default();
    out.add(s.out_dir.join("scores.csv"), csv);
    finish(manifest, out, &s.out_dir)
}

fn add_curve(
    out: &mut Outputs,
    dir: &Path,
    stem: &str,
    title: &str,
    curve: &MetricCurve,
    lead: bool,
) -> Result<()> {
    let mut csv = Vec::new();
    write_curve_csv(curve, &mut csv)?;
    out.add(dir.join(format!("{stem}.csv")), csv);
    out.add_text(
        dir.join(format!("{stem}.svg")),
        curve_svg(curve, title, lead),
    );
    Ok(())
}

fn add_evaluation(out: &mut Outputs, dir: &Path, column: &str, e: &ModelEvaluation) -> Result<()> {
    add_curve(
        out,
        dir,
        &format!("{column}_roc"),
        &format!("{column}: TPR vs PPV"),
        &e.roc,
        false,
    )?;
    for (lower, curve) in &e.dual {
        add_curve(
            out,
            dir,
            &format!("{column}_discharge_{lower}"),
            &format!("{column}: discharge below {lower}"),
            curve,
            false,
        )?;
    }
    if let Some(t) = &e.timeliness {
        add_curve(
            out,
            dir,
            &format!("{column}_timeliness"),
            &format!("{column}: timeliness"),
            t,
            true,
        )?;
    }
    if !e.lead_tradeoff.is_empty() {
        let mut csv = Vec::new();
        write_lead_csv(&e.lead_tradeoff, &mut csv)?;
        out.add(dir.join(format!("{column}_lead_tradeoff.csv")), csv);
    }
    Ok(())
}

pub fn evaluate(s: &EvaluateSettings) -> Result<()> {
    require_file(&s.model, "--model")?;
    require_file(&s.cohort, "--cohort")?;
    if let Some(p) = &s.stationary_model {
        require_file(p, "--stationary-model")?;
    }
    require_dir(&s.out_dir)?;
    if !(0.0..=1.0).contains(&s.target_tpr) {
        return Err(Failure::config("--target-tpr must lie in [0, 1]"));
    }
    let mut manifest = Manifest::new("evaluate", s);
    manifest.input(&s.model)?;
    manifest.input(&s.cohort)?;
    let model = load_model(&s.model)?;
    let cohort = load_cohort(&s.cohort)?;
    check_compatible(&model, &cohort)?;
    let stationary = match &s.stationary_model {
        Some(p) => {
            manifest.input(p)?;
            let m = load_model(p)?;
            check_compatible(&m, &cohort)?;
            Some(m)
        }
        None => {
            log::warn!("no --stationary-model given: ablation columns are left empty");
            None
        }
    };
    let full = score_cohort(&model, &cohort, &s.options)?;
    let mut evaluations = vec![(
        FULL,
        ModelEvaluation::compute(&full, &s.lower_thresholds, s.target_tpr)?,
    )];
    if let Some(m) = &stationary {
        let st = score_cohort_by(&cohort, |p| stationary_baseline(m, p))?;
        let sn = score_cohort_by(&cohort, |p| snapshot_baseline(m, p))?;
        evaluations.push((
            STATIONARY,
            ModelEvaluation::compute(&st, &s.lower_thresholds, s.target_tpr)?,
        ));
        evaluations.push((
            SNAPSHOT,
            ModelEvaluation::compute(&sn, &s.lower_thresholds, s.target_tpr)?,
        ));
    }
    let columns: Vec<(&str, &ModelEvaluation)> = evaluations.iter().map(|(n, e)| (*n, e)).collect();
    let mut report = BenchmarkReport::new(&full, &columns);
    for name in [STATIONARY, SNAPSHOT] {
        if !report.columns.iter().any(|c| c == name) {
            report.columns.push(name.to_string());
            for row in &mut report.rows {
                row.values.insert(name.to_string(), None);
            }
        }
    }
    let mut out = Outputs::default();
    out.add_text(s.out_dir.join("report.json"), report.to_json()? + "\n");
    for (name, e) in &evaluations {
        add_evaluation(&mut out, &s.out_dir, name, e)?;
    }
    finish(manifest, out, &s.out_dir)
}

pub fn benchmark(s: &BenchmarkCmdSettings) -> Result<()> {
    require_dir(&s.out_dir)?;
    let manifest = Manifest::new("benchmark", s);
    let truth = s.truth.build(s.truth_seed);
    let run = run_benchmark(&truth, &s.run)?;
    let mut out = Outputs::default();
    out.add_text(s.out_dir.join("report.json"), run.report.to_json()? + "\n");
    out.add_text(
        s.out_dir.join("model_full.json"),
        run.full_model.to_json()? + "\n",
    );
    out.add_text(
        s.out_dir.join("model_stationary.json"),
        run.stationary_model.to_json()? + "\n",
    );
    out.add(
        s.out_dir.join("test_cohort.jsonl"),
        cohort_bytes(&run.test)?,
    );
    for (name, e) in &run.evaluations {
        add_evaluation(&mut out, &s.out_dir, name, e)?;
    }
    finish(manifest, out, &s.out_dir)
}
