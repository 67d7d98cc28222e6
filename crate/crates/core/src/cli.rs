//! `neurofuse` command line: file-to-file wrappers around [`crate::pipeline`].

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use crate::datamodel::EegRecording;
use crate::error::{Error, Result, EXIT_OK, EXIT_WARNINGS};
use crate::formats::{
    export_table, parse_brainvision_with, read_nifti, write_brainvision, write_nifti, write_statmap, BinaryFormat, Cell, FormatError,
    NiftiDatatype, ParseOptions, Table, TableFormat,
};
use crate::phantom::{gen_phantom, rle, task_rest_spans, Condition};
use crate::pipeline::{self, Align, PipelineConfig, SCHEMA_VERSION};
use crate::plot::{bar_plot, line_plot, Series};

pub const THREADS_ENV: &str = "NEUROFUSE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "neurofuse", version, about = "Simultaneous EEG-fMRI denoising and EEG-informed BOLD mapping")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML parameter file; omitted sections keep their defaults
    #[arg(short = 'c', long = "config", global = true)]
    pub config: Option<PathBuf>,
    /// output directory (overrides io.out_dir)
    #[arg(short = 'o', long = "out-dir", global = true)]
    pub out_dir: Option<PathBuf>,
    /// validate and print the resolved parameters without writing anything
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// worker threads for voxel-parallel work; results do not depend on it
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic dataset and its ground truth
    Phantom {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Gradient, pulse and optional ICA cleanup of a BrainVision recording
    Denoise(DenoiseArgs),
    /// Task-vs-rest spectra, contrast and topography of cleaned EEG
    Analyze {
        /// cleaned EEG header (overrides io.cleaned)
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// EEG-informed and block-design maps and their comparison
    Fuse {
        /// cleaned EEG header (overrides io.cleaned)
        #[arg(long)]
        eeg: Option<PathBuf>,
        /// fMRI NIfTI (overrides io.fmri)
        #[arg(long)]
        fmri: Option<PathBuf>,
    },
    /// Collect the stage reports of an output directory into summary.json
    Report,
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// raw EEG header (overrides io.eeg)
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// cleaned EEG header to write (overrides io.cleaned)
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub window_epochs: Option<usize>,
    #[arg(long)]
    pub bcg_window: Option<usize>,
    #[arg(long)]
    pub bcg_delay: Option<f64>,
    #[arg(long, value_enum)]
    pub align: Option<Align>,
    #[arg(long)]
    pub skip_ga: bool,
    #[arg(long)]
    pub skip_bcg: bool,
    /// run ICA after the template stages
    #[arg(long)]
    pub ica: bool,
    /// components to remove, replacing automatic scoring (implies --ica)
    #[arg(long, value_delimiter = ',')]
    pub reject: Option<Vec<usize>>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { crate::error::EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(Outcome { warnings }) if warnings.is_empty() => EXIT_OK,
        Ok(Outcome { warnings }) => {
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            EXIT_WARNINGS
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub struct Outcome {
    pub warnings: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    FormatError::io(path, e).into()
}

/// Config file, then command-line overrides, then validation.
pub fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.global.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            PipelineConfig::from_toml(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(o) = &cli.global.out_dir {
        cfg.io.out_dir = o.clone();
    }
    match &cli.command {
        Command::Phantom { seed } => {
            if let Some(s) = seed {
                cfg.phantom.seed = *s;
            }
        }
        Command::Denoise(a) => {
            let d = &mut cfg.denoise;
            if let Some(p) = &a.input {
                cfg.io.eeg = Some(p.clone());
            }
            if let Some(p) = &a.output {
                cfg.io.cleaned = Some(p.clone());
            }
            if let Some(w) = a.window_epochs {
                d.aas_window = w;
            }
            if let Some(w) = a.bcg_window {
                d.bcg_window = w;
            }
            if let Some(x) = a.bcg_delay {
                d.bcg_delay_s = x;
            }
            if let Some(x) = a.align {
                d.align = x;
            }
            d.skip_ga |= a.skip_ga;
            d.skip_bcg |= a.skip_bcg;
            d.ica |= a.ica || a.reject.is_some();
            if a.reject.is_some() {
                d.reject = a.reject.clone();
            }
        }
        Command::Analyze { input } => {
            if let Some(p) = input {
                cfg.io.cleaned = Some(p.clone());
            }
        }
        Command::Fuse { eeg, fmri } => {
            if let Some(p) = eeg {
                cfg.io.cleaned = Some(p.clone());
            }
            if let Some(p) = fmri {
                cfg.io.fmri = Some(p.clone());
            }
        }
        Command::Report => {}
    }
    if cli.global.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let cfg = resolve_config(cli)?;
    if cli.global.dry_run {
        print!("{}", cfg.to_toml()?);
        return Ok(Outcome { warnings: Vec::new() });
    }
    let work = || match &cli.command {
        Command::Phantom { .. } => cmd_phantom(&cfg),
        Command::Denoise(_) => cmd_denoise(&cfg),
        Command::Analyze { .. } => cmd_analyze(&cfg),
        Command::Fuse { .. } => cmd_fuse(&cfg),
        Command::Report => cmd_report(&cfg),
    };
    match cli.global.threads {
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::Config(format!("thread pool: {e}")))?.install(work)
        }
        None => work(),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| FormatError::Serialize(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

fn config_value(cfg: &PipelineConfig) -> Result<Value> {
    serde_json::to_value(cfg).map_err(|e| FormatError::Serialize(e.to_string()).into())
}

fn stem(path: &Path) -> PathBuf {
    path.with_extension("")
}

fn load_eeg(path: &Path, cfg: &PipelineConfig) -> Result<EegRecording> {
    let opts = ParseOptions { markers: cfg.markers.map(), strict_markers: cfg.markers.strict };
    Ok(parse_brainvision_with(path, &opts)?.0)
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn cmd_phantom(cfg: &PipelineConfig) -> Result<Outcome> {
    let out = &cfg.io.out_dir;
    create_dir(out)?;
    let p = gen_phantom(&cfg.phantom)?;
    let map = cfg.markers.map();
    let mut files = Vec::new();
    for (cond, name) in [(Condition::Outside, "outside"), (Condition::ScannerOff, "scanner_off"), (Condition::ScannerOn, "scanner_on")] {
        let written = write_brainvision(&p.emit(cond), out.join(name), BinaryFormat::Float32, 1.0, &map)?;
        files.extend(written.iter().map(|f| display(f)));
    }
    let fmri_path = cfg.io.fmri_path();
    write_nifti(&p.fmri, &fmri_path, NiftiDatatype::Float32)?;
    files.push(display(&fmri_path));
    let t = &p.truth;
    let truth = json!({
        "schema_version": SCHEMA_VERSION,
        "seed": t.seed,
        "eeg_rate_hz": cfg.phantom.eeg_rate_hz,
        "channels": p.labels,
        "ecg_channel": p.labels[p.ecg_index()],
        "occipital_channels": cfg.phantom.occipital_channels,
        "r_peaks": t.r_peaks,
        "fmri_dims": cfg.phantom.fmri_dims,
        "active_mask_rle": rle(&t.active_mask),
        "brain_mask_rle": rle(&t.brain_mask),
        "bold_regressor": t.bold_regressor,
        "ssvep_power": t.ssvep_power,
    });
    write_json(&out.join("truth.json"), &truth)?;
    files.push(display(&out.join("truth.json")));
    write_json(
        &out.join("phantom_report.json"),
        &json!({ "schema_version": SCHEMA_VERSION, "command": "phantom", "files": files, "config": config_value(cfg)? }),
    )?;
    Ok(Outcome { warnings: Vec::new() })
}

pub fn cmd_denoise(cfg: &PipelineConfig) -> Result<Outcome> {
    let rec = load_eeg(&cfg.io.eeg_path(), cfg)?;
    let out = pipeline::denoise(&rec, &cfg.denoise)?;
    let cleaned = cfg.io.cleaned_path();
    if let Some(dir) = cleaned.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    create_dir(&cfg.io.out_dir)?;
    write_brainvision(&out.cleaned, stem(&cleaned), BinaryFormat::Float32, 1.0, &cfg.markers.map())?;
    write_json(
        &cfg.io.out_dir.join("denoise_report.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "denoise",
            "input": display(&cfg.io.eeg_path()),
            "output": display(&cleaned),
            "report": out.report,
            "config": config_value(cfg)?,
        }),
    )?;
    Ok(Outcome { warnings: out.report.warnings })
}

fn psd_table(psd: &crate::dsp::PsdEstimate, power: &ndarray::Array2<f64>, max_hz: f64) -> Table {
    let mut t = Table::new(std::iter::once("freq_hz".to_string()).chain(psd.channel_labels.iter().cloned()));
    for (j, &f) in psd.freqs.iter().enumerate().filter(|(_, f)| **f <= max_hz) {
        t.push(std::iter::once(Cell::Num(f)).chain(power.column(j).iter().map(|v| Cell::Num(*v))).collect());
    }
    t
}

pub fn cmd_analyze(cfg: &PipelineConfig) -> Result<Outcome> {
    let rec = load_eeg(&cfg.io.cleaned_path(), cfg)?;
    let a = &cfg.analysis;
    let out = pipeline::analyze(&rec, a, &cfg.denoise.ecg_channel)?;
    let dir = &cfg.io.out_dir;
    create_dir(dir)?;
    export_table(&psd_table(&out.psd_task, &out.psd_task.power, a.max_freq_hz), dir.join("psd_task.csv"), TableFormat::Csv)?;
    export_table(&psd_table(&out.psd_rest, &out.psd_rest.power, a.max_freq_hz), dir.join("psd_rest.csv"), TableFormat::Csv)?;
    let mut contrast = psd_table(&out.psd_task, &out.contrast, a.max_freq_hz);
    contrast.columns.push("contrast_mean".into());
    for (row, c) in contrast.rows.iter_mut().zip(&out.curve) {
        row.push(Cell::Num(*c));
    }
    export_table(&contrast, dir.join("contrast.csv"), TableFormat::Csv)?;
    let mut topo = Table::new(["channel", "value", "floor", "significant"]);
    for e in &out.topography {
        topo.push(vec![e.channel.as_str().into(), e.value.into(), e.floor.into(), Cell::Int(e.significant as i64)]);
    }
    export_table(&topo, dir.join("topography.csv"), TableFormat::Csv)?;

    let keep = |j: &usize| out.psd_task.freqs[*j] <= a.max_freq_hz;
    let rows: Vec<usize> = a.contrast_channels.iter().filter_map(|l| rec.channel_index(l)).collect();
    let mean_of = |m: &ndarray::Array2<f64>, j: usize| rows.iter().map(|&c| m[[c, j]]).sum::<f64>() / rows.len() as f64;
    let idx: Vec<usize> = (0..out.psd_task.freqs.len()).filter(keep).collect();
    let f = |j: usize| out.psd_task.freqs[j];
    let log = |v: f64| v.max(1e-12).log10();
    write_text(
        &dir.join("psd.svg"),
        &line_plot(
            "PSD, contrast channels",
            "frequency (Hz)",
            "log10 power (uV^2/Hz)",
            &[
                Series { name: "task", points: idx.iter().map(|&j| (f(j), log(mean_of(&out.psd_task.power, j)))).collect() },
                Series { name: "rest", points: idx.iter().map(|&j| (f(j), log(mean_of(&out.psd_rest.power, j)))).collect() },
            ],
        ),
    )?;
    write_text(
        &dir.join("contrast.svg"),
        &line_plot(
            "task - rest",
            "frequency (Hz)",
            "power difference (uV^2/Hz)",
            &[Series { name: "contrast", points: idx.iter().map(|&j| (f(j), out.curve[j])).collect() }],
        ),
    )?;
    let bars: Vec<(String, f64)> = out.topography.iter().map(|e| (e.channel.clone(), e.value)).collect();
    write_text(&dir.join("topography.svg"), &bar_plot(&format!("{} Hz band power difference", a.topo_freq_hz), "uV^2", &bars))?;

    let (task, rest) = task_rest_spans(rec.markers(), rec.n_samples());
    write_json(
        &dir.join("analysis_report.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "analyze",
            "input": display(&cfg.io.cleaned_path()),
            "report": out.report(task.len(), rest.len()),
            "config": config_value(cfg)?,
        }),
    )?;
    Ok(Outcome { warnings: Vec::new() })
}

pub fn cmd_fuse(cfg: &PipelineConfig) -> Result<Outcome> {
    let rec = load_eeg(&cfg.io.cleaned_path(), cfg)?;
    let fmri = read_nifti(cfg.io.fmri_path())?;
    let out = pipeline::fuse(&rec, &fmri, &cfg.fusion, &cfg.hrf)?;
    let dir = &cfg.io.out_dir;
    create_dir(dir)?;
    let vox = fmri.voxel_size();
    for (name, map) in [
        ("r_eeg.nii", &out.r_eeg.r),
        ("r_boxcar.nii", &out.r_boxcar.r),
        ("t_eeg.nii", &out.glm_eeg.t),
        ("t_boxcar.nii", &out.glm_boxcar.t),
        ("p_eeg.nii", &out.glm_eeg.p),
        ("p_boxcar.nii", &out.glm_boxcar.p),
        ("fdr_mask_eeg.nii", &out.mask_eeg),
        ("fdr_mask_boxcar.nii", &out.mask_boxcar),
    ] {
        write_statmap(map, vox, dir.join(name))?;
    }
    let tr = cfg.fusion.tr_s.unwrap_or(fmri.tr());
    let mut pred = Table::new(["volume", "time_s", "eeg", "boxcar"]);
    for (k, (e, b)) in out.eeg_predictor.values.iter().zip(&out.boxcar_predictor.values).enumerate() {
        pred.push(vec![k.into(), (k as f64 * tr).into(), (*e).into(), (*b).into()]);
    }
    export_table(&pred, dir.join("predictors.csv"), TableFormat::Csv)?;
    let pts = |v: &[f64]| v.iter().enumerate().map(|(k, x)| (k as f64 * tr, *x)).collect();
    write_text(
        &dir.join("predictors.svg"),
        &line_plot(
            "predictors",
            "time (s)",
            "z",
            &[
                Series { name: "EEG-informed", points: pts(&out.eeg_predictor.values) },
                Series { name: "boxcar", points: pts(&out.boxcar_predictor.values) },
            ],
        ),
    )?;
    write_json(
        &dir.join("comparison.json"),
        &json!({
            "schema_version": SCHEMA_VERSION,
            "command": "fuse",
            "eeg": display(&cfg.io.cleaned_path()),
            "fmri": display(&cfg.io.fmri_path()),
            "report": out.report(cfg.fusion.q),
            "config": config_value(cfg)?,
        }),
    )?;
    Ok(Outcome { warnings: Vec::new() })
}

const REPORTS: [&str; 4] = ["phantom_report.json", "denoise_report.json", "analysis_report.json", "comparison.json"];

pub fn cmd_report(cfg: &PipelineConfig) -> Result<Outcome> {
    let dir = &cfg.io.out_dir;
    let mut stages = serde_json::Map::new();
    let mut warnings = Vec::new();
    for name in REPORTS {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| FormatError::MalformedHeader(format!("{}: {e}", path.display())))?;
        if let Some(ws) = v.pointer("/report/warnings").and_then(Value::as_array) {
            warnings.extend(ws.iter().filter_map(|w| w.as_str().map(String::from)));
        }
        if let Some(obj) = v.as_object_mut() {
            obj.remove("config");
        }
        stages.insert(name.trim_end_matches(".json").to_string(), v.get("report").cloned().unwrap_or(v));
    }
    if stages.is_empty() {
        return Err(Error::Config(format!("no stage reports found in {}", dir.display())));
    }
    let summary = json!({ "schema_version": SCHEMA_VERSION, "stages": stages, "warnings": warnings, "config": config_value(cfg)? });
    write_json(&dir.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary["stages"]).unwrap_or_default());
    Ok(Outcome { warnings })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("neurofuse").chain(args.iter().copied())).unwrap()
    }

    #[test]
    fn flags_override_config_keys() {
        let cli = parse(&["denoise", "--window-epochs", "21", "--align", "slice", "--reject", "0,3", "-o", "x"]);
        let cfg = resolve_config(&cli).unwrap();
        assert_eq!(cfg.denoise.aas_window, 21);
        assert_eq!(cfg.denoise.align, Align::Slice);
        assert_eq!(cfg.denoise.reject, Some(vec![0, 3]));
        assert!(cfg.denoise.ica);
        assert_eq!(cfg.io.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn invalid_override_is_a_config_error() {
        let cli = parse(&["denoise", "--window-epochs", "0"]);
        assert_eq!(resolve_config(&cli).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unknown_flag_exits_with_config_code() {
        assert_eq!(run(["neurofuse", "denoise", "--bogus"]), 2);
    }
}
