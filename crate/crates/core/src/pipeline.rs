//! Library side of the command line: one serializable parameter record and
//! the denoise / analyze / fuse stages as in-memory transformations.

use std::collections::BTreeSet;
use std::path::PathBuf;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::artifacts::{self, attenuation_db, CleanResult};
use crate::datamodel::{select_channels, DataError, EegRecording, EventMarkers, FmriSeries, Marker, MarkerKind, StatKind, StatMap};
use crate::dsp::{self, DriftFilter, PsdEstimate};
use crate::error::{Error, Result};
use crate::formats::{MarkerMap, MarkerRule};
use crate::fusion::{self, CorrelationMap, FusionError, GlmOptions, GlmResult, HrfParams, MapComparison, Predictor};
use crate::ica::{self, ComponentScore, IcaOptions, Verdict};
use crate::phantom::{task_rest_spans, PhantomConfig, ECG_LABEL};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub io: IoConfig,
    pub markers: MarkerConfig,
    pub phantom: PhantomConfig,
    pub denoise: DenoiseConfig,
    pub analysis: AnalysisConfig,
    pub fusion: FusionConfig,
    pub hrf: HrfParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: PathBuf,
    /// raw EEG header; defaults to the phantom's scanner-on recording
    pub eeg: Option<PathBuf>,
    /// cleaned EEG header; defaults to `<out_dir>/cleaned.vhdr`
    pub cleaned: Option<PathBuf>,
    pub fmri: Option<PathBuf>,
}

impl Default for IoConfig {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("neurofuse_out"), eeg: None, cleaned: None, fmri: None }
    }
}

impl IoConfig {
    pub fn eeg_path(&self) -> PathBuf {
        self.eeg.clone().unwrap_or_else(|| self.out_dir.join("scanner_on.vhdr"))
    }

    pub fn cleaned_path(&self) -> PathBuf {
        self.cleaned.clone().unwrap_or_else(|| self.out_dir.join("cleaned.vhdr"))
    }

    pub fn fmri_path(&self) -> PathBuf {
        self.fmri.clone().unwrap_or_else(|| self.out_dir.join("fmri.nii"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkerConfig {
    /// replaces the built-in rule table when set
    pub rules: Option<Vec<MarkerRule>>,
    pub strict: bool,
}

impl MarkerConfig {
    pub fn map(&self) -> MarkerMap {
        self.rules.clone().map(|rules| MarkerMap { rules }).unwrap_or_default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Align {
    Volume,
    Slice,
}

impl Align {
    pub fn kind(self) -> MarkerKind {
        match self {
            Align::Volume => MarkerKind::VolumeTrigger,
            Align::Slice => MarkerKind::SliceTrigger,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiseConfig {
    pub align: Align,
    pub aas_window: usize,
    pub skip_ga: bool,
    pub skip_bcg: bool,
    pub ecg_channel: String,
    pub bcg_delay_s: f64,
    pub bcg_window: usize,
    /// slices per volume, used for the slice frequency when the record
    /// carries no slice triggers
    pub slices_per_volume: usize,
    pub ica: bool,
    pub ica_components: Option<usize>,
    pub ica_seed: u64,
    pub ica_stride: usize,
    pub ica_max_iter: usize,
    pub ica_tol: f64,
    pub reject_threshold: f64,
    /// explicit component list; overrides automatic scoring
    pub reject: Option<Vec<usize>>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            align: Align::Volume,
            aas_window: artifacts::DEFAULT_AAS_WINDOW,
            skip_ga: false,
            skip_bcg: false,
            ecg_channel: ECG_LABEL.to_string(),
            bcg_delay_s: artifacts::DEFAULT_BCG_DELAY_S,
            bcg_window: artifacts::DEFAULT_BCG_WINDOW,
            slices_per_volume: 20,
            ica: false,
            ica_components: None,
            ica_seed: 0,
            ica_stride: 4,
            ica_max_iter: ica::DEFAULT_MAX_ITER,
            ica_tol: ica::DEFAULT_TOL,
            reject_threshold: ica::DEFAULT_REJECT_THRESHOLD,
            reject: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub segment_s: f64,
    pub overlap: f64,
    pub contrast_channels: Vec<String>,
    pub n_peaks: usize,
    pub topo_freq_hz: f64,
    pub topo_bandwidth_hz: f64,
    /// upper frequency of the exported curves and plots
    pub max_freq_hz: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            segment_s: 4.0,
            overlap: 0.5,
            contrast_channels: ["O1", "Oz", "O2"].map(String::from).to_vec(),
            n_peaks: 3,
            topo_freq_hz: 12.0,
            topo_bandwidth_hz: 1.0,
            max_freq_hz: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub channel: String,
    pub band_hz: (f64, f64),
    pub block_s: f64,
    pub first_block_on: bool,
    pub smooth_fwhm_mm: f64,
    pub highpass_hz: f64,
    pub prewhiten: bool,
    pub q: f64,
    /// overrides the repetition time stored with the fMRI series
    pub tr_s: Option<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            channel: "Oz".into(),
            band_hz: (11.0, 13.0),
            block_s: 24.0,
            first_block_on: false,
            smooth_fwhm_mm: 8.0,
            highpass_hz: 0.005,
            prewhiten: true,
            q: fusion::DEFAULT_Q,
            tr_s: None,
        }
    }
}

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(msg()))
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Numeric preconditions of every stage. Paths are checked by the
    /// commands that read them.
    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        let d = &self.denoise;
        check(d.aas_window >= 1, || "denoise.aas_window must be >= 1".into())?;
        check(d.bcg_window >= 1, || "denoise.bcg_window must be >= 1".into())?;
        check(d.bcg_delay_s.is_finite() && d.bcg_delay_s >= 0.0, || "denoise.bcg_delay_s must be >= 0".into())?;
        check(d.slices_per_volume >= 1, || "denoise.slices_per_volume must be >= 1".into())?;
        check(d.ica_stride >= 1 && d.ica_max_iter >= 1, || "denoise.ica_stride and ica_max_iter must be >= 1".into())?;
        check(d.ica_tol > 0.0, || "denoise.ica_tol must be positive".into())?;
        check((0.0..=1.0).contains(&d.reject_threshold), || "denoise.reject_threshold must lie in [0, 1]".into())?;
        let a = &self.analysis;
        check(a.segment_s > 0.0, || "analysis.segment_s must be positive".into())?;
        check((0.0..1.0).contains(&a.overlap), || "analysis.overlap must lie in [0, 1)".into())?;
        check(!a.contrast_channels.is_empty(), || "analysis.contrast_channels is empty".into())?;
        check(a.topo_freq_hz > 0.0 && a.topo_bandwidth_hz > 0.0, || "analysis topography band must be positive".into())?;
        check(a.max_freq_hz > 0.0, || "analysis.max_freq_hz must be positive".into())?;
        let f = &self.fusion;
        check(f.band_hz.0 > 0.0 && f.band_hz.1 > f.band_hz.0, || "fusion.band_hz must satisfy 0 < lo < hi".into())?;
        check(f.block_s > 0.0, || "fusion.block_s must be positive".into())?;
        check(f.smooth_fwhm_mm >= 0.0, || "fusion.smooth_fwhm_mm must be >= 0".into())?;
        check(f.highpass_hz >= 0.0, || "fusion.highpass_hz must be >= 0".into())?;
        check(f.q > 0.0 && f.q < 1.0, || "fusion.q must lie in (0, 1)".into())?;
        check(f.tr_s.is_none_or(|t| t > 0.0), || "fusion.tr_s must be positive".into())?;
        let h = &self.hrf;
        check([h.peak_delay, h.undershoot_delay, h.peak_dispersion, h.undershoot_dispersion, h.duration].iter().all(|v| *v > 0.0), || {
            "hrf parameters must be positive".into()
        })?;
        Ok(())
    }
}

// ---------------------------------------------------------------- denoise

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageReport {
    pub stage: String,
    pub applied: bool,
    pub epochs: usize,
    pub mean_residual_rms_uv: Option<f64>,
    /// artifact-band power before over after, averaged over EEG channels
    pub reduction_db: Option<f64>,
}

impl StageReport {
    fn skipped(stage: &str) -> Self {
        Self { stage: stage.into(), applied: false, epochs: 0, mean_residual_rms_uv: None, reduction_db: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IcaReport {
    pub n_components: usize,
    pub scores: Vec<ComponentScore>,
    pub rejected: Vec<usize>,
    pub manual: bool,
    pub all_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DenoiseReport {
    pub schema_version: u32,
    pub slice_hz: Option<f64>,
    pub r_peaks: usize,
    pub mean_heart_rate_bpm: Option<f64>,
    pub stages: Vec<StageReport>,
    pub ica: Option<IcaReport>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub cleaned: EegRecording,
    pub r_peaks: Vec<usize>,
    pub report: DenoiseReport,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

fn median_interval(samples: &[usize]) -> Option<f64> {
    median(samples.windows(2).map(|w| (w[1] - w[0]) as f64).collect())
}

/// Slice repetition frequency from slice triggers, else from volume
/// triggers and the configured slice count.
pub fn slice_frequency(rec: &EegRecording, slices_per_volume: usize) -> Option<f64> {
    let fs = rec.sampling_rate();
    let m = rec.markers();
    median_interval(&m.samples_of(MarkerKind::SliceTrigger))
        .map(|d| fs / d)
        .or_else(|| median_interval(&m.samples_of(MarkerKind::VolumeTrigger)).map(|d| fs * slices_per_volume as f64 / d))
}

/// EEG channels: everything except the ECG and bad channels.
fn eeg_channels(rec: &EegRecording, ecg: &str) -> Vec<usize> {
    (0..rec.n_channels()).filter(|&c| !rec.is_bad(c) && rec.channel_labels()[c] != ecg).collect()
}

fn ga_reduction_db(before: &EegRecording, after: &EegRecording, channels: &[usize], slice_hz: f64) -> Option<f64> {
    let nyq = before.sampling_rate() / 2.0;
    let freqs: Vec<f64> = (1..=6).map(|k| k as f64 * slice_hz).filter(|f| *f < nyq).collect();
    if freqs.is_empty() || channels.is_empty() {
        return None;
    }
    let db: f64 = channels
        .iter()
        .map(|&c| {
            let a = before.data().row(c).to_vec();
            let b = after.data().row(c).to_vec();
            attenuation_db(&a, &b, before.sampling_rate(), &freqs, 0.1)
        })
        .sum();
    Some(db / channels.len() as f64)
}

/// Power of the cardiac-locked average over `[R, R + 0.8 s)`, summed over channels.
fn cardiac_locked_power(rec: &EegRecording, channels: &[usize], peaks: &[usize]) -> f64 {
    let len = (0.8 * rec.sampling_rate()) as usize;
    let n = rec.n_samples();
    let starts: Vec<usize> = peaks.iter().copied().filter(|&p| p + len <= n).collect();
    if starts.is_empty() || len == 0 {
        return 0.0;
    }
    channels
        .iter()
        .map(|&c| {
            let row = rec.data().row(c);
            let mut avg = vec![0.0; len];
            for &p in &starts {
                for (a, x) in avg.iter_mut().zip(row.slice(s![p..p + len])) {
                    *a += x;
                }
            }
            let k = starts.len() as f64;
            let m = avg.iter().sum::<f64>() / (k * len as f64);
            avg.iter().map(|a| (a / k - m).powi(2)).sum::<f64>() / len as f64
        })
        .sum()
}

fn stage_from(name: &str, res: &CleanResult, reduction_db: Option<f64>) -> StageReport {
    let n = res.epoch_residual_rms.len();
    StageReport {
        stage: name.into(),
        applied: true,
        epochs: n,
        mean_residual_rms_uv: (n > 0).then(|| res.epoch_residual_rms.iter().sum::<f64>() / n as f64),
        reduction_db,
    }
}

/// Gradient correction, R-peak detection, pulse correction and optional
/// ICA, always in that order.
pub fn denoise(rec: &EegRecording, cfg: &DenoiseConfig) -> Result<DenoiseOutput> {
    let mut warnings = Vec::new();
    let mut stages = Vec::new();
    let ecg = cfg.ecg_channel.as_str();
    let eeg = eeg_channels(rec, ecg);
    let slice_hz = slice_frequency(rec, cfg.slices_per_volume);

    let mut current = rec.clone();
    if cfg.skip_ga {
        stages.push(StageReport::skipped("gradient"));
    } else {
        if current.markers().count(cfg.align.kind()) == 0 {
            return Err(DataError::NoMarkers(cfg.align.kind()).into());
        }
        let res = artifacts::aas_correct(&current, cfg.align.kind(), cfg.aas_window)?;
        let db = slice_hz.and_then(|f| ga_reduction_db(&current, &res.cleaned, &eeg, f));
        stages.push(stage_from("gradient", &res, db));
        current = res.cleaned;
    }

    let need_peaks = !cfg.skip_bcg || cfg.ica;
    let r_peaks = if need_peaks {
        let ecg_row = current.channel(ecg)?;
        artifacts::detect_r_peaks(ecg_row, current.sampling_rate())?.samples_of(MarkerKind::RPeak)
    } else {
        Vec::new()
    };
    let hr = median_interval(&r_peaks).map(|d| 60.0 * current.sampling_rate() / d);
    if let Some(bpm) = hr {
        if !(30.0..=200.0).contains(&bpm) {
            warnings.push(format!("implausible heart rate {bpm:.1} bpm from {} R-peaks", r_peaks.len()));
        }
    }

    if cfg.skip_bcg {
        stages.push(StageReport::skipped("pulse"));
    } else {
        let res = artifacts::bcg_correct_except(&current, &r_peaks, cfg.bcg_delay_s, cfg.bcg_window, &[ecg])?;
        let before = cardiac_locked_power(&current, &eeg, &r_peaks);
        let after = cardiac_locked_power(&res.cleaned, &eeg, &r_peaks);
        let db = (before > 0.0 && after > 0.0).then(|| 10.0 * (before / after).log10());
        stages.push(stage_from("pulse", &res, db));
        current = res.cleaned;
    }

    let mut ica_report = None;
    if cfg.ica {
        let labels: Vec<&str> = eeg.iter().map(|&c| current.channel_labels()[c].as_str()).collect();
        let sub = select_channels(&current, &labels)?;
        let opts = IcaOptions {
            n_components: cfg.ica_components,
            max_iter: cfg.ica_max_iter,
            tol: cfg.ica_tol,
            seed: cfg.ica_seed,
            stride: cfg.ica_stride,
        };
        let model = ica::fit(&sub, &opts)?;
        let sources = model.sources(&sub)?;
        let scores =
            ica::score_components(sources.view(), current.sampling_rate(), &r_peaks, slice_hz.unwrap_or(0.0), cfg.reject_threshold);
        let manual = cfg.reject.is_some();
        let rejected: BTreeSet<usize> = match &cfg.reject {
            Some(list) => list.iter().copied().collect(),
            None => scores.iter().filter(|s| s.verdict == Verdict::Reject).map(|s| s.component).collect(),
        };
        for (k, ok) in model.converged.iter().enumerate() {
            if !ok {
                warnings.push(format!("ica component {k} did not converge in {} iterations", cfg.ica_max_iter));
            }
        }
        let before = current.clone();
        current = ica::remove_components(&current, &model, &rejected)?;
        let diff = before.data() - current.data();
        let removed_rms = (diff.iter().map(|v| v * v).sum::<f64>() / diff.len().max(1) as f64).sqrt();
        stages.push(StageReport {
            stage: "ica".into(),
            applied: true,
            epochs: 0,
            mean_residual_rms_uv: Some(removed_rms),
            reduction_db: None,
        });
        ica_report = Some(IcaReport {
            n_components: model.n_components,
            scores,
            rejected: rejected.into_iter().collect(),
            manual,
            all_converged: model.converged.iter().all(|c| *c),
        });
    }

    if !r_peaks.is_empty() && current.markers().count(MarkerKind::RPeak) == 0 {
        let merged = current.markers().merged(r_peaks.iter().map(|&s| Marker::new(s, MarkerKind::RPeak, "R")));
        current = current.with_markers(merged)?;
    }

    Ok(DenoiseOutput {
        cleaned: current,
        report: DenoiseReport {
            schema_version: SCHEMA_VERSION,
            slice_hz,
            r_peaks: r_peaks.len(),
            mean_heart_rate_bpm: hr,
            stages,
            ica: ica_report,
            warnings,
        },
        r_peaks,
    })
}

// ---------------------------------------------------------------- analyze

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralPeak {
    pub freq_hz: f64,
    pub contrast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopoEntry {
    pub channel: String,
    pub value: f64,
    /// noise floor of this channel's band-power difference
    pub floor: f64,
    pub significant: bool,
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub psd_task: PsdEstimate,
    pub psd_rest: PsdEstimate,
    /// task − rest, channels × freqs
    pub contrast: Array2<f64>,
    /// contrast averaged over the configured channels
    pub curve: Vec<f64>,
    pub peaks: Vec<SpectralPeak>,
    pub topography: Vec<TopoEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub task_spans: usize,
    pub rest_spans: usize,
    pub segments_task: usize,
    pub segments_rest: usize,
    pub peaks: Vec<SpectralPeak>,
    pub topography: Vec<TopoEntry>,
    /// topography channels by descending value
    pub topography_rank: Vec<String>,
}

/// Robust spread of a channel's contrast away from DC, scaled to band power.
fn topo_floor(contrast: ndarray::ArrayView1<'_, f64>, freqs: &[f64], bandwidth_hz: f64, max_hz: f64) -> f64 {
    let vals: Vec<f64> = freqs.iter().zip(contrast).filter(|(f, _)| **f >= 1.0 && **f <= max_hz).map(|(_, c)| *c).collect();
    let Some(med) = median(vals.clone()) else { return 0.0 };
    let mad = median(vals.iter().map(|v| (v - med).abs()).collect()).unwrap_or(0.0);
    3.0 * 1.4826 * mad * bandwidth_hz
}

pub fn analyze(rec: &EegRecording, cfg: &AnalysisConfig, ecg_channel: &str) -> Result<AnalysisOutput> {
    let contrast_rows: Vec<usize> = cfg
        .contrast_channels
        .iter()
        .map(|l| rec.channel_index(l).ok_or_else(|| DataError::UnknownChannel(l.clone())))
        .collect::<Result<_, _>>()?;
    let (task, rest) = task_rest_spans(rec.markers(), rec.n_samples());
    if task.is_empty() {
        return Err(DataError::NoMarkers(MarkerKind::StimulusOn).into());
    }
    if rest.is_empty() {
        return Err(DataError::NoMarkers(MarkerKind::StimulusOff).into());
    }
    let psd_task = dsp::welch_psd_spans(rec, &task, cfg.segment_s, cfg.overlap)?;
    let psd_rest = dsp::welch_psd_spans(rec, &rest, cfg.segment_s, cfg.overlap)?;
    let contrast = fusion::spectral_contrast(&psd_task, &psd_rest)?;
    let nf = psd_task.freqs.len();
    let curve: Vec<f64> =
        (0..nf).map(|j| contrast_rows.iter().map(|&c| contrast[[c, j]]).sum::<f64>() / contrast_rows.len() as f64).collect();
    let peaks = fusion::ranked_peaks(&curve)
        .into_iter()
        .take(cfg.n_peaks)
        .map(|j| SpectralPeak { freq_hz: psd_task.freqs[j], contrast: curve[j] })
        .collect();

    let mut excluded = rec.bad_channels().clone();
    if let Some(e) = rec.channel_index(ecg_channel) {
        excluded.insert(e);
    }
    let values = fusion::topography_from_psd(&psd_task, &psd_rest, &excluded, cfg.topo_freq_hz, cfg.topo_bandwidth_hz)?;
    let topography = values
        .into_iter()
        .map(|(channel, value)| {
            let c = rec.channel_index(&channel).expect("label from this recording");
            let floor = topo_floor(contrast.row(c), &psd_task.freqs, cfg.topo_bandwidth_hz, cfg.max_freq_hz);
            TopoEntry { significant: value > floor, channel, value, floor }
        })
        .collect();
    Ok(AnalysisOutput { psd_task, psd_rest, contrast, curve, peaks, topography })
}

impl AnalysisOutput {
    pub fn report(&self, task_spans: usize, rest_spans: usize) -> AnalysisReport {
        let mut rank: Vec<&TopoEntry> = self.topography.iter().collect();
        rank.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| a.channel.cmp(&b.channel)));
        AnalysisReport {
            schema_version: SCHEMA_VERSION,
            task_spans,
            rest_spans,
            segments_task: self.psd_task.n_segments,
            segments_rest: self.psd_rest.n_segments,
            peaks: self.peaks.clone(),
            topography: self.topography.clone(),
            topography_rank: rank.into_iter().map(|t| t.channel.clone()).collect(),
        }
    }
}

// ---------------------------------------------------------------- fuse

#[derive(Debug, Clone)]
pub struct FusionOutput {
    pub eeg_predictor: Predictor,
    pub boxcar_predictor: Predictor,
    pub brain: Vec<bool>,
    pub r_eeg: CorrelationMap,
    pub r_boxcar: CorrelationMap,
    pub glm_eeg: GlmResult,
    pub glm_boxcar: GlmResult,
    pub mask_eeg: StatMap,
    pub mask_boxcar: StatMap,
    pub threshold_eeg: Option<f64>,
    pub threshold_boxcar: Option<f64>,
    pub comparison: MapComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    pub fdr_voxels: usize,
    pub p_threshold: Option<f64>,
    pub max_abs_r: f64,
    pub max_t: f64,
    pub ar1: Option<f64>,
    pub dof: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionReport {
    pub schema_version: u32,
    pub spatial_r: f64,
    pub dice: Option<f64>,
    pub predictor_r: f64,
    pub brain_voxels: usize,
    pub q: f64,
    pub eeg: MapSummary,
    pub boxcar: MapSummary,
}

/// Smooths, re-masks to the raw in-brain voxels and removes slow drift.
pub fn preprocess_fmri(fmri: &FmriSeries, brain: &[bool], cfg: &FusionConfig) -> Result<FmriSeries> {
    let smoothed = if cfg.smooth_fwhm_mm > 0.0 { fusion::smooth_series(fmri, cfg.smooth_fwhm_mm)? } else { fmri.clone() };
    let nv = smoothed.n_voxels();
    let nt = smoothed.n_volumes();
    let mut m = smoothed.voxel_matrix();
    let filter = (cfg.highpass_hz > 0.0).then(|| DriftFilter::new(nt, fmri.tr(), cfg.highpass_hz)).transpose()?;
    for (v, mut row) in m.outer_iter_mut().enumerate() {
        if !brain[v] {
            row.fill(0.0);
        } else if let Some(f) = &filter {
            let mut x = row.to_vec();
            f.apply(&mut x);
            row.assign(&ndarray::Array1::from(x));
        }
    }
    debug_assert_eq!(m.dim(), (nv, nt));
    Ok(FmriSeries::from_voxel_matrix(fmri.spatial_dims(), fmri.voxel_size(), fmri.tr(), &m)?)
}

fn summary(r: &CorrelationMap, glm: &GlmResult, mask: &StatMap, thr: Option<f64>) -> MapSummary {
    MapSummary {
        fdr_voxels: mask.values().iter().filter(|v| **v > 0.5).count(),
        p_threshold: thr,
        max_abs_r: r.r.values().iter().fold(0.0, |a, v| a.max(v.abs())),
        max_t: glm.t.values().iter().fold(f64::NEG_INFINITY, |a, v| a.max(*v)),
        ar1: glm.ar1,
        dof: glm.dof,
    }
}

/// Both predictors, both map families and their comparison.
pub fn fuse(rec: &EegRecording, fmri: &FmriSeries, cfg: &FusionConfig, hrf: &HrfParams) -> Result<FusionOutput> {
    let tr = cfg.tr_s.unwrap_or(fmri.tr());
    let nvol = fmri.n_volumes();
    let volumes = rec.markers().count(MarkerKind::VolumeTrigger);
    if volumes > 0 && volumes != nvol {
        return Err(FusionError::LengthMismatch { expected: nvol, got: volumes }.into());
    }
    let start = rec.markers().samples_of(MarkerKind::VolumeTrigger).first().copied().unwrap_or(0);
    let needed = (nvol as f64 * tr * rec.sampling_rate()).round() as usize;
    let got = rec.n_samples() - start;
    let slack = (0.5 * tr * rec.sampling_rate()) as usize;
    if got + slack < needed {
        return Err(FusionError::LengthMismatch { expected: needed, got }.into());
    }
    let h = fusion::hrf_with(tr, *hrf);
    let eeg_predictor = fusion::build_eeg_predictor(rec, &cfg.channel, cfg.band_hz, tr, nvol, &h)?;
    let boxcar_predictor = fusion::boxcar_predictor(cfg.block_s, nvol, tr, cfg.first_block_on, &h)?;

    let brain = fusion::brain_mask(fmri);
    let pre = preprocess_fmri(fmri, &brain, cfg)?;
    let r_eeg = fusion::pearson_map(&pre, &eeg_predictor.values)?;
    let r_boxcar = fusion::pearson_map(&pre, &boxcar_predictor.values)?;
    let opts = GlmOptions { drift_order: fusion::drift_order_for(nvol, tr, cfg.highpass_hz), prewhiten: cfg.prewhiten };
    let glm_eeg = fusion::glm_tmap_with(&pre, &eeg_predictor.values, &opts)?;
    let glm_boxcar = fusion::glm_tmap_with(&pre, &boxcar_predictor.values, &opts)?;
    let (mask_eeg, threshold_eeg) = fusion::fdr_map(&glm_eeg.p, &brain, cfg.q)?;
    let (mask_boxcar, threshold_boxcar) = fusion::fdr_map(&glm_boxcar.p, &brain, cfg.q)?;
    let comparison = fusion::compare_maps(&r_eeg.r, &r_boxcar.r, &mask_eeg.flags(), &mask_boxcar.flags(), &brain)?;
    Ok(FusionOutput {
        eeg_predictor,
        boxcar_predictor,
        brain,
        r_eeg,
        r_boxcar,
        glm_eeg,
        glm_boxcar,
        mask_eeg,
        mask_boxcar,
        threshold_eeg,
        threshold_boxcar,
        comparison,
    })
}

impl FusionOutput {
    pub fn report(&self, q: f64) -> FusionReport {
        FusionReport {
            schema_version: SCHEMA_VERSION,
            spatial_r: self.comparison.spatial_r,
            dice: self.comparison.dice,
            predictor_r: fusion::pearson(&self.eeg_predictor.values, &self.boxcar_predictor.values),
            brain_voxels: self.brain.iter().filter(|b| **b).count(),
            q,
            eeg: summary(&self.r_eeg, &self.glm_eeg, &self.mask_eeg, self.threshold_eeg),
            boxcar: summary(&self.r_boxcar, &self.glm_boxcar, &self.mask_boxcar, self.threshold_boxcar),
        }
    }
}

/// In-brain fraction of voxels flagged by `mask`.
pub fn flagged_fraction(mask: &StatMap, brain: &[bool]) -> f64 {
    debug_assert_eq!(mask.kind(), StatKind::Mask);
    let n = brain.iter().filter(|b| **b).count();
    let k = mask.values().iter().zip(brain).filter(|(v, b)| **b && **v > 0.5).count();
    k as f64 / n.max(1) as f64
}

/// Marker stream with R-peaks replaced by `peaks`.
pub fn with_r_peaks(markers: &EventMarkers, peaks: &[usize]) -> EventMarkers {
    markers.without(MarkerKind::RPeak).merged(peaks.iter().map(|&s| Marker::new(s, MarkerKind::RPeak, "R")))
}
