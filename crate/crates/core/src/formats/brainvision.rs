//! BrainVision Core Data Format 1.0: `.vhdr` header, `.vmrk` markers and a
//! little-endian binary `.eeg` payload.
//!
//! Only BINARY data is read. Both multiplexed and vectorized orientations
//! are accepted; the writer always emits multiplexed files.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{ByteOrder, LittleEndian};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::datamodel::{EegRecording, EventMarkers, Marker, MarkerKind};

const HEADER_MAGIC: &str = "Brain Vision Data Exchange Header File";
const HEADER_MAGIC_ALT: &str = "BrainVision Data Exchange Header File";
const MARKER_MAGIC: &str = "Brain Vision Data Exchange Marker File";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Multiplexed,
    Vectorized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BinaryFormat {
    Int16,
    Float32,
}

impl BinaryFormat {
    fn width(self) -> usize {
        match self {
            BinaryFormat::Int16 => 2,
            BinaryFormat::Float32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub label: String,
    pub reference: String,
    /// µV per stored unit
    pub resolution: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrainVisionHeader {
    pub data_file: String,
    pub marker_file: String,
    pub orientation: Orientation,
    pub sampling_interval_us: f64,
    pub binary_format: BinaryFormat,
    pub channels: Vec<ChannelInfo>,
}

impl BrainVisionHeader {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn sampling_rate(&self) -> f64 {
        1e6 / self.sampling_interval_us
    }
}

/// One description-or-type rule mapping a marker entry to a kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerRule {
    /// Marker type field (`Stimulus`, `Response`, ...); `None` matches any.
    #[serde(default)]
    pub marker_type: Option<String>,
    /// Description field; `None` matches any.
    #[serde(default)]
    pub description: Option<String>,
    pub kind: MarkerKind,
}

/// Ordered rule table; the first matching rule wins, unmatched entries
/// become [`MarkerKind::Other`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerMap {
    pub rules: Vec<MarkerRule>,
}

impl Default for MarkerMap {
    fn default() -> Self {
        let desc = |d: &str, kind| MarkerRule { marker_type: None, description: Some(d.into()), kind };
        let ty = |t: &str, kind| MarkerRule { marker_type: Some(t.into()), description: None, kind };
        Self {
            rules: vec![
                desc("R128", MarkerKind::VolumeTrigger),
                desc("S  1", MarkerKind::StimulusOn),
                desc("S  2", MarkerKind::StimulusOff),
                ty("Volume", MarkerKind::VolumeTrigger),
                ty("Slice", MarkerKind::SliceTrigger),
                ty("Pulse Artifact", MarkerKind::RPeak),
            ],
        }
    }
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect()
}

impl MarkerMap {
    pub fn classify(&self, marker_type: &str, description: &str) -> MarkerKind {
        self.rules
            .iter()
            .find(|r| {
                r.marker_type.as_deref().is_none_or(|t| t.eq_ignore_ascii_case(marker_type.trim()))
                    && r.description.as_deref().is_none_or(|d| d == description || squash(d) == squash(description))
            })
            .map(|r| r.kind)
            .unwrap_or(MarkerKind::Other)
    }

    fn canonical_description(&self, kind: MarkerKind) -> Option<&str> {
        self.rules.iter().find(|r| r.kind == kind).and_then(|r| r.description.as_deref())
    }
}

fn type_name(kind: MarkerKind) -> &'static str {
    match kind {
        MarkerKind::VolumeTrigger => "Volume",
        MarkerKind::SliceTrigger => "Slice",
        MarkerKind::StimulusOn | MarkerKind::StimulusOff => "Stimulus",
        MarkerKind::RPeak => "Pulse Artifact",
        MarkerKind::Other => "Comment",
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub markers: MarkerMap,
    /// Fail on malformed marker lines instead of dropping them.
    pub strict_markers: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ParseReport {
    pub marker_lines: usize,
    pub segment_markers: usize,
    pub dropped_markers: usize,
}

type Sections = HashMap<String, Vec<(String, String)>>;

fn parse_ini(text: &str) -> Sections {
    let mut sections: Sections = HashMap::new();
    let mut current: Option<String> = None;
    for raw in text.lines() {
        let line = raw.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with(';') {
            continue;
        }
        if line.len() >= 2 && line.starts_with('[') && line.ends_with(']') {
            let name = line[1..line.len() - 1].trim().to_string();
            sections.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        if let (Some(sec), Some((k, v))) = (&current, line.split_once('=')) {
            sections.entry(sec.clone()).or_default().push((k.trim().to_string(), v.to_string()));
        }
    }
    sections
}

fn lookup<'a>(sections: &'a Sections, section: &str, key: &str) -> Result<&'a str, FormatError> {
    let entries = sections.get(section).ok_or_else(|| FormatError::MissingSection(section.into()))?;
    entries
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case(key))
        .map(|(_, v)| v.trim())
        .ok_or_else(|| FormatError::MissingKey { section: section.into(), key: key.into() })
}

fn read_text(path: &Path) -> Result<String, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        // legacy files are Latin-1; every byte maps to the same code point
        Err(e) => e.into_bytes().iter().map(|&b| b as char).collect(),
    })
}

/// Parses header text. Paths inside are kept as written.
pub fn parse_header(text: &str) -> Result<BrainVisionHeader, FormatError> {
    let first = text.lines().next().unwrap_or("").trim_start_matches('\u{feff}').trim();
    if !(first.starts_with(HEADER_MAGIC) || first.starts_with(HEADER_MAGIC_ALT)) {
        return Err(FormatError::MalformedHeader(format!("unexpected first line {first:?}")));
    }
    let s = parse_ini(text);
    let common = "Common Infos";
    let data_file = lookup(&s, common, "DataFile")?.to_string();
    let marker_file = lookup(&s, common, "MarkerFile")?.to_string();
    let format = lookup(&s, common, "DataFormat")?;
    if !format.eq_ignore_ascii_case("BINARY") {
        return Err(FormatError::UnsupportedFormat(format!("DataFormat={format}")));
    }
    let orientation = match lookup(&s, common, "DataOrientation")?.to_ascii_uppercase().as_str() {
        "MULTIPLEXED" => Orientation::Multiplexed,
        "VECTORIZED" => Orientation::Vectorized,
        other => return Err(FormatError::UnsupportedFormat(format!("DataOrientation={other}"))),
    };
    let n_channels: usize =
        lookup(&s, common, "NumberOfChannels")?.parse().map_err(|_| FormatError::MalformedHeader("NumberOfChannels".into()))?;
    let sampling_interval_us: f64 =
        lookup(&s, common, "SamplingInterval")?.parse().map_err(|_| FormatError::MalformedHeader("SamplingInterval".into()))?;
    if n_channels == 0 || !(sampling_interval_us.is_finite() && sampling_interval_us > 0.0) {
        return Err(FormatError::MalformedHeader("channel count and sampling interval must be positive".into()));
    }
    let binary_format = match lookup(&s, "Binary Infos", "BinaryFormat")?.to_ascii_uppercase().as_str() {
        "INT_16" => BinaryFormat::Int16,
        "IEEE_FLOAT_32" => BinaryFormat::Float32,
        other => return Err(FormatError::UnsupportedFormat(format!("BinaryFormat={other}"))),
    };

    let entries = s.get("Channel Infos").ok_or_else(|| FormatError::MissingSection("Channel Infos".into()))?;
    let mut by_index: HashMap<usize, &str> = HashMap::new();
    for (k, v) in entries {
        if let Some(i) = k.strip_prefix("Ch").and_then(|i| i.parse::<usize>().ok()) {
            by_index.insert(i, v.as_str());
        }
    }
    if by_index.len() != n_channels {
        return Err(FormatError::MalformedHeader(format!("{} channel entries for NumberOfChannels={n_channels}", by_index.len())));
    }
    let mut channels = Vec::with_capacity(n_channels);
    for i in 1..=n_channels {
        let v = by_index.get(&i).ok_or_else(|| FormatError::MissingKey { section: "Channel Infos".into(), key: format!("Ch{i}") })?;
        channels.push(parse_channel(v, binary_format)?);
    }
    Ok(BrainVisionHeader { data_file, marker_file, orientation, sampling_interval_us, binary_format, channels })
}

fn parse_channel(value: &str, format: BinaryFormat) -> Result<ChannelInfo, FormatError> {
    // commas inside names are escaped as "\1"
    let fields: Vec<String> = value.split(',').map(|f| f.replace("\\1", ",")).collect();
    let label = fields.first().map(|s| s.trim().to_string()).unwrap_or_default();
    if label.is_empty() {
        return Err(FormatError::MalformedHeader(format!("channel without name: {value:?}")));
    }
    let reference = fields.get(1).map(|s| s.trim().to_string()).unwrap_or_default();
    let resolution = match fields.get(2).map(|s| s.trim()) {
        None | Some("") => 1.0,
        Some(r) => r.parse::<f64>().map_err(|_| FormatError::MalformedHeader(format!("resolution {r:?}")))?,
    };
    if format == BinaryFormat::Int16 && !(resolution.is_finite() && resolution > 0.0) {
        return Err(FormatError::MalformedHeader(format!("resolution {resolution} for {label}")));
    }
    let unit = fields.get(3).map(|s| s.trim().to_string()).filter(|u| !u.is_empty()).unwrap_or_else(|| "µV".into());
    Ok(ChannelInfo { label, reference, resolution, unit })
}

fn unit_to_microvolts(unit: &str) -> f64 {
    match unit {
        "V" => 1e6,
        "mV" => 1e3,
        "nV" => 1e-3,
        _ => 1.0,
    }
}

fn resolve(base: &Path, name: &str) -> PathBuf {
    let p = Path::new(name);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Reads a recording with the default marker vocabulary.
pub fn parse_brainvision(path_to_vhdr: impl AsRef<Path>) -> Result<EegRecording, FormatError> {
    parse_brainvision_with(path_to_vhdr, &ParseOptions::default()).map(|(rec, _)| rec)
}

/// Reads header, payload and markers. Samples are returned in µV.
pub fn parse_brainvision_with(path_to_vhdr: impl AsRef<Path>, options: &ParseOptions) -> Result<(EegRecording, ParseReport), FormatError> {
    let vhdr = path_to_vhdr.as_ref();
    let base = vhdr.parent().unwrap_or(Path::new("."));
    let header = parse_header(&read_text(vhdr)?)?;

    let eeg_path = resolve(base, &header.data_file);
    let payload = fs::read(&eeg_path).map_err(|e| FormatError::io(&eeg_path, e))?;
    let data = decode_payload(&header, &payload)?;

    let vmrk_path = resolve(base, &header.marker_file);
    let (markers, report) = parse_markers(&read_text(&vmrk_path)?, data.ncols(), options)?;
    let labels = header.channels.iter().map(|c| c.label.clone()).collect();
    let rec = EegRecording::new(labels, header.sampling_rate(), data, markers)?;
    Ok((rec, report))
}

fn decode_payload(header: &BrainVisionHeader, payload: &[u8]) -> Result<Array2<f64>, FormatError> {
    let n_ch = header.n_channels();
    let width = header.binary_format.width();
    let frame = n_ch * width;
    if !payload.len().is_multiple_of(frame) {
        return Err(FormatError::PayloadSizeMismatch {
            expected: format!("a multiple of {frame} bytes ({n_ch} channels × {width} bytes)"),
            got: payload.len(),
        });
    }
    let n = payload.len() / frame;
    let scale: Vec<f64> = header
        .channels
        .iter()
        .map(|c| match header.binary_format {
            BinaryFormat::Int16 => c.resolution * unit_to_microvolts(&c.unit),
            BinaryFormat::Float32 => unit_to_microvolts(&c.unit),
        })
        .collect();
    let value = |i: usize| -> f64 {
        let b = &payload[i * width..(i + 1) * width];
        match header.binary_format {
            BinaryFormat::Int16 => LittleEndian::read_i16(b) as f64,
            BinaryFormat::Float32 => LittleEndian::read_f32(b) as f64,
        }
    };
    let data = match header.orientation {
        Orientation::Multiplexed => Array2::from_shape_fn((n_ch, n), |(c, t)| value(t * n_ch + c) * scale[c]),
        Orientation::Vectorized => Array2::from_shape_fn((n_ch, n), |(c, t)| value(c * n + t) * scale[c]),
    };
    Ok(data)
}

fn parse_markers(text: &str, n_samples: usize, options: &ParseOptions) -> Result<(EventMarkers, ParseReport), FormatError> {
    let first = text.lines().next().unwrap_or("").trim_start_matches('\u{feff}').trim();
    if !(first.starts_with(MARKER_MAGIC) || first.starts_with("BrainVision Data Exchange Marker File")) {
        return Err(FormatError::MalformedHeader(format!("unexpected marker file header {first:?}")));
    }
    let sections = parse_ini(text);
    let entries = sections.get("Marker Infos").ok_or_else(|| FormatError::MissingSection("Marker Infos".into()))?;
    let mut report = ParseReport::default();
    let mut markers = Vec::new();
    for (key, value) in entries {
        if !key.starts_with("Mk") {
            continue;
        }
        report.marker_lines += 1;
        let fields: Vec<String> = value.split(',').map(|f| f.replace("\\1", ",")).collect();
        let parsed = (|| {
            let ty = fields.first()?.trim().to_string();
            let desc = fields.get(1)?.to_string();
            let pos: usize = fields.get(2)?.trim().parse().ok()?;
            fields.get(3)?.trim().parse::<usize>().ok()?;
            if pos == 0 || pos > n_samples {
                return None;
            }
            Some((ty, desc, pos - 1))
        })();
        match parsed {
            Some((ty, _, _)) if ty.eq_ignore_ascii_case("New Segment") => report.segment_markers += 1,
            Some((ty, desc, sample)) => {
                let kind = options.markers.classify(&ty, &desc);
                markers.push(Marker::new(sample, kind, desc));
            }
            None if options.strict_markers => return Err(FormatError::BadMarkerLine(format!("{key}={value}"))),
            None => report.dropped_markers += 1,
        }
    }
    Ok((EventMarkers::new(markers), report))
}

/// Writes `<stem>.vhdr`, `<stem>.vmrk` and `<stem>.eeg` (multiplexed).
/// `Int16` stores round(µV / resolution), saturating at the i16 range.
pub fn write_brainvision(
    rec: &EegRecording,
    path_stem: impl AsRef<Path>,
    format: BinaryFormat,
    int16_resolution: f64,
    markers: &MarkerMap,
) -> Result<Vec<PathBuf>, FormatError> {
    let stem = path_stem.as_ref();
    let name = stem
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .ok_or_else(|| FormatError::MalformedHeader(format!("bad output stem {}", stem.display())))?;
    let with_ext = |ext: &str| stem.with_file_name(format!("{name}.{ext}"));
    let (vhdr, vmrk, eeg) = (with_ext("vhdr"), with_ext("vmrk"), with_ext("eeg"));

    let resolution = match format {
        BinaryFormat::Int16 if !(int16_resolution.is_finite() && int16_resolution > 0.0) => {
            return Err(FormatError::MalformedHeader(format!("resolution {int16_resolution}")))
        }
        BinaryFormat::Int16 => int16_resolution,
        BinaryFormat::Float32 => 1.0,
    };

    let mut h = String::new();
    let _ = writeln!(h, "{HEADER_MAGIC} Version 1.0");
    let _ = writeln!(h, "; Data created by neurofuse");
    let _ = writeln!(h, "\n[Common Infos]\nCodepage=UTF-8\nDataFile={name}.eeg\nMarkerFile={name}.vmrk");
    let _ = writeln!(h, "DataFormat=BINARY\nDataOrientation=MULTIPLEXED");
    let _ = writeln!(h, "NumberOfChannels={}", rec.n_channels());
    let _ = writeln!(h, "SamplingInterval={}", 1e6 / rec.sampling_rate());
    let bf = match format {
        BinaryFormat::Int16 => "INT_16",
        BinaryFormat::Float32 => "IEEE_FLOAT_32",
    };
    let _ = writeln!(h, "\n[Binary Infos]\nBinaryFormat={bf}\n\n[Channel Infos]");
    let _ = writeln!(h, "; Ch<n>=<Name>,<Reference>,<Resolution in µV>,<Unit>");
    for (i, label) in rec.channel_labels().iter().enumerate() {
        let _ = writeln!(h, "Ch{}={},,{},µV", i + 1, label.replace(',', "\\1"), resolution);
    }

    let mut m = String::new();
    let _ = writeln!(m, "{MARKER_MAGIC}, Version 1.0\n\n[Common Infos]\nCodepage=UTF-8\nDataFile={name}.eeg");
    let _ = writeln!(m, "\n[Marker Infos]\n; Mk<n>=<Type>,<Description>,<Position in data points>,<Size>,<Channel>");
    let _ = writeln!(m, "Mk1=New Segment,,1,1,0");
    for (i, mk) in rec.markers().iter().enumerate() {
        let ty = type_name(mk.kind);
        let desc = if markers.classify(ty, &mk.label) == mk.kind {
            mk.label.clone()
        } else {
            markers.canonical_description(mk.kind).unwrap_or("").to_string()
        };
        let _ = writeln!(m, "Mk{}={},{},{},1,0", i + 2, ty, desc.replace(',', "\\1"), mk.sample + 1);
    }

    let n_ch = rec.n_channels();
    let mut payload = vec![0u8; n_ch * rec.n_samples() * format.width()];
    let data = rec.data();
    for t in 0..rec.n_samples() {
        for c in 0..n_ch {
            let v = data[[c, t]];
            let off = (t * n_ch + c) * format.width();
            match format {
                BinaryFormat::Int16 => {
                    let q = (v / resolution).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                    LittleEndian::write_i16(&mut payload[off..off + 2], q);
                }
                BinaryFormat::Float32 => LittleEndian::write_f32(&mut payload[off..off + 4], v as f32),
            }
        }
    }

    if let Some(dir) = stem.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    }
    fs::write(&vhdr, h).map_err(|e| FormatError::io(&vhdr, e))?;
    fs::write(&vmrk, m).map_err(|e| FormatError::io(&vmrk, e))?;
    fs::write(&eeg, payload).map_err(|e| FormatError::io(&eeg, e))?;
    Ok(vec![vhdr, vmrk, eeg])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path, orientation: &str, format: &str, res: &str, payload: &[u8], extra_markers: &str) -> PathBuf {
        let vhdr = dir.join("fx.vhdr");
        fs::write(
            &vhdr,
            format!(
                "Brain Vision Data Exchange Header File Version 1.0\n\n[Common Infos]\nDataFile=fx.eeg\nMarkerFile=fx.vmrk\n\
                 DataFormat=BINARY\nDataOrientation={orientation}\nNumberOfChannels=2\nSamplingInterval=200\n\n\
                 [Binary Infos]\nBinaryFormat={format}\n\n[Channel Infos]\nCh1=Fp1,,{res},µV\nCh2=Fp2,,{res},µV\n"
            ),
        )
        .unwrap();
        fs::write(dir.join("fx.eeg"), payload).unwrap();
        fs::write(
            dir.join("fx.vmrk"),
            format!(
                "Brain Vision Data Exchange Marker File, Version 1.0\n\n[Marker Infos]\nMk1=New Segment,,1,1,0,20200101000000000000\n{extra_markers}"
            ),
        )
        .unwrap();
        vhdr
    }

    fn i16_bytes(v: &[i16]) -> Vec<u8> {
        let mut b = vec![0u8; v.len() * 2];
        LittleEndian::write_i16_into(v, &mut b);
        b
    }

    #[test]
    fn decodes_int16_multiplexed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let vhdr = fixture(dir.path(), "MULTIPLEXED", "INT_16", "0.5", &i16_bytes(&[10, -4, 6, 8]), "");
        let rec = parse_brainvision(&vhdr).unwrap();
        assert_eq!(rec.data().row(0).to_vec(), vec![5.0, 3.0]);
        assert_eq!(rec.data().row(1).to_vec(), vec![-2.0, 4.0]);
        assert_eq!(rec.sampling_rate(), 5000.0);
    }

    #[test]
    fn decodes_vectorized_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let vhdr = fixture(dir.path(), "VECTORIZED", "INT_16", "0.5", &i16_bytes(&[10, -4, 6, 8]), "");
        let rec = parse_brainvision(&vhdr).unwrap();
        assert_eq!(rec.data().row(0).to_vec(), vec![5.0, -2.0]);
        assert_eq!(rec.data().row(1).to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn truncated_payload_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bytes = i16_bytes(&[10, -4, 6, 8]);
        bytes.pop();
        let vhdr = fixture(dir.path(), "MULTIPLEXED", "INT_16", "0.5", &bytes, "");
        assert!(matches!(parse_brainvision(&vhdr), Err(FormatError::PayloadSizeMismatch { .. })));
    }

    #[test]
    fn ascii_and_unknown_formats_rejected() {
        let text = "Brain Vision Data Exchange Header File Version 1.0\n[Common Infos]\nDataFile=a\nMarkerFile=b\nDataFormat=ASCII\n";
        assert!(matches!(parse_header(text), Err(FormatError::UnsupportedFormat(_))));
        assert!(matches!(parse_header("hello"), Err(FormatError::MalformedHeader(_))));
        let no_binary = "Brain Vision Data Exchange Header File Version 1.0\n[Common Infos]\nDataFile=a\nMarkerFile=b\nDataFormat=BINARY\nDataOrientation=MULTIPLEXED\nNumberOfChannels=1\nSamplingInterval=2\n";
        assert!(matches!(parse_header(no_binary), Err(FormatError::MissingSection(_))));
    }

    #[test]
    fn markers_mapped_and_malformed_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let extra = "Mk2=Response,R128,1,1,0\nMk3=Stimulus,S  1,2,1,0\nMk4=Stimulus,S  2,2,1,0\nMk5=Stimulus,S 99,1,1,0\nMk6=garbage\nMk7=Stimulus,S  1,99,1,0\n";
        let vhdr = fixture(dir.path(), "MULTIPLEXED", "INT_16", "0.5", &i16_bytes(&[10, -4, 6, 8]), extra);
        let (rec, report) = parse_brainvision_with(&vhdr, &ParseOptions::default()).unwrap();
        let kinds: Vec<MarkerKind> = rec.markers().iter().map(|m| m.kind).collect();
        assert_eq!(kinds, vec![MarkerKind::VolumeTrigger, MarkerKind::Other, MarkerKind::StimulusOn, MarkerKind::StimulusOff]);
        assert_eq!(report.marker_lines, 7);
        assert_eq!(report.dropped_markers, 2);
        assert_eq!(rec.markers().len(), report.marker_lines - report.dropped_markers - report.segment_markers);

        let strict = ParseOptions { strict_markers: true, ..Default::default() };
        assert!(matches!(parse_brainvision_with(&vhdr, &strict), Err(FormatError::BadMarkerLine(_))));
    }

    #[test]
    fn custom_marker_vocabulary() {
        let map =
            MarkerMap { rules: vec![MarkerRule { marker_type: None, description: Some("T  1".into()), kind: MarkerKind::SliceTrigger }] };
        assert_eq!(map.classify("Response", "T  1"), MarkerKind::SliceTrigger);
        assert_eq!(map.classify("Response", "T1"), MarkerKind::SliceTrigger);
        assert_eq!(map.classify("Response", "R128"), MarkerKind::Other);
    }

    fn sample_rec(values: impl Fn(usize, usize) -> f64, markers: Vec<Marker>) -> EegRecording {
        let data = Array2::from_shape_fn((3, 500), |(c, t)| values(c, t));
        EegRecording::new(vec!["Oz".into(), "O1".into(), "ECG".into()], 500.0, data, EventMarkers::new(markers)).unwrap()
    }

    #[test]
    fn float32_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let markers = vec![
            Marker::new(0, MarkerKind::VolumeTrigger, "R128"),
            Marker::new(10, MarkerKind::StimulusOn, "S  1"),
            Marker::new(20, MarkerKind::RPeak, "R"),
            Marker::new(30, MarkerKind::SliceTrigger, "Sl"),
            Marker::new(499, MarkerKind::StimulusOff, "S  2"),
            Marker::new(40, MarkerKind::Other, "note"),
        ];
        let rec = sample_rec(|c, t| ((c * 7 + t) as f32 * 0.37 - 50.0) as f64, markers);
        write_brainvision(&rec, dir.path().join("run"), BinaryFormat::Float32, 1.0, &MarkerMap::default()).unwrap();
        let back = parse_brainvision(dir.path().join("run.vhdr")).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn int16_round_trip_within_half_lsb() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample_rec(|c, t| (t as f64 * 0.0137 + c as f64).sin() * 800.0, vec![]);
        write_brainvision(&rec, dir.path().join("q"), BinaryFormat::Int16, 0.1, &MarkerMap::default()).unwrap();
        let back = parse_brainvision(dir.path().join("q.vhdr")).unwrap();
        let err = (back.data() - rec.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(err <= 0.05 + 1e-12, "{err}");
    }

    #[test]
    fn empty_marker_list_writes_only_new_segment() {
        let dir = tempfile::tempdir().unwrap();
        let rec = sample_rec(|_, _| 0.0, vec![]);
        write_brainvision(&rec, dir.path().join("e"), BinaryFormat::Float32, 1.0, &MarkerMap::default()).unwrap();
        let text = fs::read_to_string(dir.path().join("e.vmrk")).unwrap();
        let mk: Vec<&str> = text.lines().filter(|l| l.starts_with("Mk")).collect();
        assert_eq!(mk, vec!["Mk1=New Segment,,1,1,0"]);
        let (back, report) = parse_brainvision_with(dir.path().join("e.vhdr"), &ParseOptions::default()).unwrap();
        assert!(back.markers().is_empty());
        assert_eq!(report.segment_markers, 1);
    }
}
