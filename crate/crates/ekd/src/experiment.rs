//! Config-driven experiment runner: build one frozen teacher ensemble,
//! distill a student per requested mode, probe each result, and write
//! one metrics report per mode. Also renders comparison tables over
//! previously written reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{make_split, parse_json, DatasetSplit, SplitConfig};
use crate::error::{Error, Result};
use crate::model::{
    build_teacher_ensemble, validate_tap_layers, DistillMode, EncoderConfig, StudentModel,
    TeacherEnsemble,
};
use crate::probe::{
    evaluate, train_probe, MetricsReport, ParamCounts, ProbeConfig, SeedInfo, REPORT_VERSION,
};
use crate::rng::derive_seed;
use crate::trainer::{init_state, train_steps, TeacherCache, TrainConfig, TrainState};

/// Schema version accepted in experiment config files.
pub const CONFIG_VERSION: u32 = 1;

/// Environment variable that overrides the configured output directory.
pub const OUTPUT_DIR_ENV: &str = "EKD_OUTPUT_DIR";

/// Every runnable mode name, in canonical table order.
pub const VALID_MODES: [&str; 5] = ["single", "avg", "concat", "multi_pred", "distilled_ensemble"];

/// One experiment: a teacher ensemble, a student shape, a dataset, and
/// the list of training modes to compare.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub modes: Vec<String>,
    #[serde(default = "EncoderConfig::teacher_default")]
    pub teacher: EncoderConfig,
    #[serde(default = "EncoderConfig::student_default")]
    pub student: EncoderConfig,
    pub teacher_seeds: Vec<u64>,
    pub tap_layers: Vec<usize>,
    pub train: TrainConfig,
    #[serde(default)]
    pub data: SplitConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no modes requested".into()));
        }
        for m in &self.modes {
            if !VALID_MODES.contains(&m.as_str()) {
                return Err(Error::Config(format!(
                    "unknown mode `{m}`; valid modes: {}",
                    VALID_MODES.join(", ")
                )));
            }
        }
        for (i, m) in self.modes.iter().enumerate() {
            if self.modes[..i].contains(m) {
                return Err(Error::Config(format!("mode `{m}` requested twice")));
            }
        }
        self.teacher.validate()?;
        self.student.validate()?;
        if self.teacher_seeds.is_empty() {
            return Err(Error::Config("no teacher seeds".into()));
        }
        validate_tap_layers(&self.tap_layers, self.teacher.n_layers)?;
        self.train.validate()?;
        let min_len = self.teacher.window.max(self.student.window);
        if self.data.length < min_len {
            return Err(Error::Config(format!(
                "dataset length {} is shorter than the largest front-end window {min_len}",
                self.data.length
            )));
        }
        Ok(())
    }
}

fn parse_toml<T: serde::de::DeserializeOwned>(src: &str, what: &str) -> Result<T> {
    toml::from_str(src).map_err(|e| {
        let offset = e.span().map(|s| s.start).unwrap_or(0);
        Error::Parse { offset, message: format!("{what}: {e}") }
    })
}

/// Load an experiment config from a TOML or JSON file (chosen by
/// extension; unknown extensions are sniffed by the leading character).
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let cfg: ExperimentConfig = match ext {
        "json" => parse_json(&text, "experiment config")?,
        "toml" => parse_toml(&text, "experiment config")?,
        _ => {
            if text.trim_start().starts_with('{') {
                parse_json(&text, "experiment config")?
            } else {
                parse_toml(&text, "experiment config")?
            }
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Write `bytes` to `path` atomically (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    // A bare file name has an empty parent; that means the current directory.
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        Some(_) => Path::new("."),
        None => {
            return Err(Error::Config(format!("no parent directory for {}", path.display())));
        }
    };
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::Config(format!("bad file name {}", path.display())))?;
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize one report to `path` atomically.
pub fn write_report(report: &MetricsReport, path: &Path) -> Result<()> {
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    atomic_write(path, json.as_bytes())
}

/// Read a report back, rejecting schema-version mismatches.
pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path)?;
    let report: MetricsReport = parse_json(&text, "metrics report")?;
    if report.version != REPORT_VERSION {
        return Err(Error::Incompatible(format!(
            "report {} has schema version {} (expected {REPORT_VERSION})",
            path.display(),
            report.version
        )));
    }
    Ok(report)
}

/// What one full run produced: written reports plus per-mode failures.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub reports: Vec<(String, PathBuf)>,
    pub failures: Vec<(String, Error)>,
}

fn append_train_log(state: &TrainState, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in &state.records {
        let line = serde_json::to_string(r).expect("record serializes");
        out.push_str(&line);
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

fn distill_one(
    cfg: &ExperimentConfig,
    train_cfg: &TrainConfig,
    split: &DatasetSplit,
    ens: &TeacherEnsemble,
    cache: &mut TeacherCache,
) -> Result<TrainState> {
    let mut state = init_state(train_cfg, &cfg.student, ens)?;
    train_steps(&mut state, &split.train, ens, train_cfg.steps, cache)?;
    Ok(state)
}

fn seeds_for(cfg: &ExperimentConfig, student_seed: u64) -> SeedInfo {
    SeedInfo {
        teacher_seeds: cfg.teacher_seeds.clone(),
        student_seed,
        data_seed: cfg.data.seed,
        probe_seed: cfg.probe.seed,
    }
}

fn run_mode(
    cfg: &ExperimentConfig,
    mode_str: &str,
    split: &DatasetSplit,
    ens: &TeacherEnsemble,
    cache: &mut TeacherCache,
) -> Result<MetricsReport> {
    let n_classes = cfg.data.n_classes;
    if mode_str == "distilled_ensemble" {
        let mut students: Vec<StudentModel> = Vec::new();
        let mut backbone = 0;
        let mut heads = 0;
        for i in 0..ens.m() {
            let tc = TrainConfig {
                mode: DistillMode::Single,
                single_teacher_index: i,
                seed: derive_seed(cfg.train.seed, 0xD15E_0000 + i as u64),
                ..cfg.train.clone()
            };
            let state = distill_one(cfg, &tc, split, ens, cache)?;
            append_train_log(
                &state,
                &cfg.output_dir.join(format!("train_distilled_ensemble_{i}.jsonl")),
            )?;
            backbone += state.student.backbone_param_count();
            heads += state.student.head_param_count();
            let mut s = state.student;
            s.discard_heads();
            students.push(s);
        }
        let refs: Vec<&StudentModel> = students.iter().collect();
        let probe = train_probe(&refs, &split.train, &cfg.probe, n_classes)?;
        let metrics = evaluate(&refs, &probe, split)?;
        return Ok(MetricsReport {
            version: REPORT_VERSION,
            mode: mode_str.to_string(),
            seeds: seeds_for(cfg, cfg.train.seed),
            params: ParamCounts { backbone, heads },
            metrics,
        });
    }

    let mode: DistillMode = match mode_str {
        "single" => DistillMode::Single,
        "avg" => DistillMode::Avg,
        "concat" => DistillMode::Concat,
        "multi_pred" => DistillMode::MultiPred,
        other => {
            return Err(Error::Config(format!(
                "unknown mode `{other}`; valid modes: {}",
                VALID_MODES.join(", ")
            )))
        }
    };
    let tc = TrainConfig { mode, ..cfg.train.clone() };
    let state = distill_one(cfg, &tc, split, ens, cache)?;
    append_train_log(&state, &cfg.output_dir.join(format!("train_{mode_str}.jsonl")))?;
    let backbone = state.student.backbone_param_count();
    let heads = state.student.head_param_count();
    let mut student = state.student;
    student.discard_heads();
    let probe = train_probe(&[&student], &split.train, &cfg.probe, n_classes)?;
    let metrics = evaluate(&[&student], &probe, split)?;
    Ok(MetricsReport {
        version: REPORT_VERSION,
        mode: mode_str.to_string(),
        seeds: seeds_for(cfg, tc.seed),
        params: ParamCounts { backbone, heads },
        metrics,
    })
}

/// Run every requested mode. Completed reports stay on disk even when a
/// later mode fails; failures are returned alongside the successes.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir)?;
    let split = make_split(&cfg.data)?;
    let ens = build_teacher_ensemble(&cfg.teacher, &cfg.teacher_seeds, &cfg.tap_layers, false)?;
    let mut cache = TeacherCache::new();
    let mut outcome = ExperimentOutcome { reports: Vec::new(), failures: Vec::new() };
    for mode in &cfg.modes {
        match run_mode(cfg, mode, &split, &ens, &mut cache) {
            Ok(report) => {
                let path = cfg.output_dir.join(format!("report_{mode}.json"));
                write_report(&report, &path)?;
                outcome.reports.push((mode.clone(), path));
            }
            Err(e) => outcome.failures.push((mode.clone(), e)),
        }
    }
    Ok(outcome)
}

// ── comparison tables ──────────────────────────────────────────────────

/// Rendered comparison: human-readable text plus machine-readable CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompareTable {
    pub text: String,
    pub csv: String,
}

fn mode_rank(mode: &str) -> (usize, String) {
    match VALID_MODES.iter().position(|m| *m == mode) {
        Some(i) => (i, String::new()),
        None => (VALID_MODES.len(), mode.to_string()),
    }
}

/// Render reports as a table: rows = modes, columns = params and the
/// three eval conditions. With a baseline mode, accuracy cells strictly
/// above the baseline's are flagged with `*` (ties are not flagged).
pub fn compare(reports: &[MetricsReport], baseline: Option<&str>) -> Result<CompareTable> {
    if reports.is_empty() {
        return Err(Error::Config("no reports to compare".into()));
    }
    if let Some(bad) = reports.iter().find(|r| r.version != REPORT_VERSION) {
        return Err(Error::Incompatible(format!(
            "report for mode `{}` has schema version {} (expected {REPORT_VERSION})",
            bad.mode, bad.version
        )));
    }
    let mut rows: Vec<&MetricsReport> = reports.iter().collect();
    rows.sort_by(|a, b| mode_rank(&a.mode).cmp(&mode_rank(&b.mode)));

    let base = match baseline {
        None => None,
        Some(name) => Some(
            rows.iter()
                .find(|r| r.mode == name)
                .copied()
                .ok_or_else(|| {
                    Error::Config(format!("baseline mode `{name}` is not among the reports"))
                })?,
        ),
    };

    let flag = |value: f64, base_value: Option<f64>| -> &'static str {
        match base_value {
            Some(b) if value > b => "*",
            _ => "",
        }
    };

    let mut text = String::new();
    text.push_str(&format!(
        "{:<20} {:>12} {:>12} {:>12} {:>12}\n",
        "mode", "params", "clean", "seen_noise", "unseen_noise"
    ));
    let mut csv = String::from("mode,params,clean,seen_noise,unseen_noise\n");
    for r in &rows {
        let m = &r.metrics;
        let b = base.map(|x| x.metrics);
        let cells = [
            format!("{:.4}{}", m.clean, flag(m.clean, b.map(|x| x.clean))),
            format!("{:.4}{}", m.seen_noise, flag(m.seen_noise, b.map(|x| x.seen_noise))),
            format!(
                "{:.4}{}",
                m.unseen_noise,
                flag(m.unseen_noise, b.map(|x| x.unseen_noise))
            ),
        ];
        text.push_str(&format!(
            "{:<20} {:>12} {:>12} {:>12} {:>12}\n",
            r.mode, r.params.backbone, cells[0], cells[1], cells[2]
        ));
        csv.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4}\n",
            r.mode, r.params.backbone, m.clean, m.seen_noise, m.unseen_noise
        ));
    }
    Ok(CompareTable { text, csv })
}
