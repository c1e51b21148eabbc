//! Experiment configuration files.
//!
//! Files are TOML with linear frequencies in GHz, times in ns, detector
//! timing in ps and coupling phases in units of pi. Loading converts to the
//! angular rad/ns units used by the model.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::PipelineSettings;
use crate::correlate::{intensity_g1_node, output_operator, Direction, TransmissionSolver};
use crate::error::{Error, Result};
use crate::model::{
    alpha_for_mean_photon_number, DetectionParams, DriveParams, EmitterParams, PulseShape, SystemConfig, TimeGrid,
};
use crate::noise::{diffusion_nodes, AveragingMode, DiffusionDescriptor, Scheme};

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterEntry {
    /// Identifier used by emitter subsets; defaults to the 1-based position.
    pub label: Option<u32>,
    pub gamma_ghz: f64,
    pub beta: f64,
    #[serde(default)]
    pub gamma_d_ghz: f64,
    #[serde(default)]
    pub delta_ghz: f64,
    #[serde(default)]
    pub sigma_sd_ghz: f64,
    /// Waveguide phase in units of pi.
    #[serde(default)]
    pub phi_pi: f64,
    /// Fano asymmetry; recorded but not used by the model.
    pub xi: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveEntry {
    #[serde(default = "default_shape")]
    pub shape: PulseShape,
    /// Mean photon number per lifetime of the reference emitter.
    pub mean_photons: Option<f64>,
    /// Peak amplitude in sqrt(photons/ns); overrides `mean_photons`.
    pub alpha0: Option<f64>,
    /// Reference decay rate for `mean_photons`, GHz; defaults to the first
    /// emitter.
    pub reference_gamma_ghz: Option<f64>,
    #[serde(default = "one")]
    pub sigma_ns: f64,
    #[serde(default)]
    pub t_center_ns: f64,
    #[serde(default = "default_period")]
    pub rep_period_ns: f64,
}

fn default_shape() -> PulseShape {
    PulseShape::Gaussian
}
fn one() -> f64 {
    1.0
}
fn default_period() -> f64 {
    20.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionEntry {
    #[serde(default)]
    pub sigma_irf_ps: f64,
    #[serde(default = "three")]
    pub n_channels: usize,
    pub split_probs: Option<Vec<f64>>,
    #[serde(default = "default_bin")]
    pub bin_width_ps: f64,
    #[serde(default = "one")]
    pub efficiency: f64,
    /// Ratio of reflected emitter photons to background photons per pulse.
    pub background_snr: Option<f64>,
    /// Background amplitude at the pulse peak, sqrt(photons/ns).
    pub background_amp: Option<f64>,
    #[serde(default = "eight")]
    pub background_phase_nodes: usize,
}

fn three() -> usize {
    3
}
fn eight() -> usize {
    8
}
fn default_bin() -> f64 {
    32.0
}

impl Default for DetectionEntry {
    fn default() -> Self {
        DetectionEntry {
            sigma_irf_ps: 0.0,
            n_channels: 3,
            split_probs: None,
            bin_width_ps: 32.0,
            efficiency: 1.0,
            background_snr: None,
            background_amp: None,
            background_phase_nodes: 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridEntry {
    pub t_min_ns: f64,
    pub t_max_ns: f64,
    pub dt_ps: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiffusionKind {
    None,
    GaussHermite,
    MonteCarlo,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionEntry {
    #[serde(default = "no_diffusion")]
    pub kind: DiffusionKind,
    #[serde(default = "seven")]
    pub nodes: usize,
    #[serde(default = "thousand")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "within")]
    pub mode: AveragingMode,
}

fn no_diffusion() -> DiffusionKind {
    DiffusionKind::None
}
fn seven() -> usize {
    7
}
fn thousand() -> usize {
    1000
}
fn within() -> AveragingMode {
    AveragingMode::WithinSample
}

impl Default for DiffusionEntry {
    fn default() -> Self {
        DiffusionEntry {
            kind: DiffusionKind::None,
            nodes: 7,
            samples: 1000,
            seed: 0,
            mode: AveragingMode::WithinSample,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisEntry {
    #[serde(default = "four")]
    pub rebin: usize,
    #[serde(default = "band3")]
    pub band_ns: f64,
    #[serde(default = "window3")]
    pub window_ps: [f64; 2],
    #[serde(default = "bin2")]
    pub g2_bin_ps: f64,
    #[serde(default = "one")]
    pub g2_band_ns: f64,
    #[serde(default = "window2")]
    pub g2_window_ps: f64,
    #[serde(default = "forward")]
    pub direction: Direction,
    /// Largest correlation order of the scalar zero-delay summaries.
    #[serde(default = "three")]
    pub n_max: usize,
}

fn four() -> usize {
    4
}
fn band3() -> f64 {
    1.3
}
fn window3() -> [f64; 2] {
    [417.0, 362.0]
}
fn bin2() -> f64 {
    16.0
}
fn window2() -> f64 {
    256.0
}
fn forward() -> Direction {
    Direction::Forward
}

impl Default for AnalysisEntry {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

impl AnalysisEntry {
    pub fn pipeline(&self) -> PipelineSettings {
        PipelineSettings {
            rebin: self.rebin,
            band_ns: self.band_ns,
            window: (self.window_ps[0] * 1e-3, self.window_ps[1] * 1e-3),
            g2_dt: self.g2_bin_ps * 1e-3,
            g2_band_ns: self.g2_band_ns,
            g2_window: self.g2_window_ps * 1e-3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionEntry {
    #[serde(default = "span_lo")]
    pub delta_min_ghz: f64,
    #[serde(default = "span_hi")]
    pub delta_max_ghz: f64,
    #[serde(default = "points")]
    pub points: usize,
    #[serde(default)]
    pub solver: TransmissionSolver,
    /// Nested emitter subsets (labels) whose transmission minima are compared.
    #[serde(default)]
    pub chains: Vec<Vec<Vec<u32>>>,
}

fn span_lo() -> f64 {
    -2.0
}
fn span_hi() -> f64 {
    2.0
}
fn points() -> usize {
    201
}

impl Default for TransmissionEntry {
    fn default() -> Self {
        toml::from_str("").expect("defaults")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseScanEntry {
    /// Number of intervals between 0 and pi.
    #[serde(default = "sixteen")]
    pub steps: usize,
}

fn sixteen() -> usize {
    16
}

impl Default for PhaseScanEntry {
    fn default() -> Self {
        PhaseScanEntry { steps: 16 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingEntry {
    #[serde(default = "m_list")]
    pub m: Vec<usize>,
    #[serde(default = "five")]
    pub n_max: usize,
}

fn m_list() -> Vec<usize> {
    vec![1, 2, 3]
}
fn five() -> usize {
    5
}

impl Default for ScalingEntry {
    fn default() -> Self {
        ScalingEntry { m: m_list(), n_max: 5 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TagsEntry {
    #[serde(default = "pulses")]
    pub n_pulses: u64,
    #[serde(default)]
    pub binary: bool,
}

fn pulses() -> u64 {
    200_000
}

impl Default for TagsEntry {
    fn default() -> Self {
        TagsEntry {
            n_pulses: 200_000,
            binary: false,
        }
    }
}

/// Schema of a configuration file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Labels of the emitters to keep (all when absent).
    pub select: Option<Vec<u32>>,
    pub emitters: Vec<EmitterEntry>,
    pub drive: DriveEntry,
    #[serde(default)]
    pub detection: DetectionEntry,
    pub time_grid: TimeGridEntry,
    #[serde(default)]
    pub diffusion: DiffusionEntry,
    #[serde(default)]
    pub analysis: AnalysisEntry,
    #[serde(default)]
    pub transmission: TransmissionEntry,
    #[serde(default)]
    pub phase_scan: PhaseScanEntry,
    #[serde(default)]
    pub scaling: ScalingEntry,
    #[serde(default)]
    pub tags: TagsEntry,
}

/// A loaded configuration: the file contents after overrides, and the
/// model parameters in angular units.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub file: FileConfig,
    pub system: SystemConfig,
    /// Labels of `system.emitters`, in order.
    pub labels: Vec<u32>,
    /// Resolved document (after overrides), as written to manifests.
    pub resolved: toml::Value,
    /// SHA-256 of the resolved document.
    pub hash: String,
}

impl ExperimentConfig {
    /// Same configuration restricted to the emitters with the given labels,
    /// in their spatial order.
    pub fn subset(&self, labels: &[u32]) -> Result<ExperimentConfig> {
        let mut out = self.clone();
        out.labels.clear();
        out.system.emitters.clear();
        for l in labels {
            if !self.labels.contains(l) {
                return Err(Error::invalid("select", format!("no emitter labelled {l}")));
            }
        }
        for (l, e) in self.labels.iter().zip(&self.system.emitters) {
            if labels.contains(l) {
                out.labels.push(*l);
                out.system.emitters.push(e.clone());
            }
        }
        Ok(out)
    }
}

/// Splits `a.b[2].c` into keys and indices.
fn path_segments(path: &str) -> Result<Vec<PathSeg>> {
    let mut out = Vec::new();
    for part in path.split('.') {
        let (name, rest) = match part.find('[') {
            Some(i) => (&part[..i], &part[i..]),
            None => (part, ""),
        };
        if let Ok(i) = name.parse::<usize>() {
            out.push(PathSeg::Index(i));
        } else if !name.is_empty() {
            out.push(PathSeg::Key(name.to_string()));
        }
        let mut r = rest;
        while let Some(s) = r.strip_prefix('[') {
            let end = s.find(']').ok_or_else(|| Error::Config(format!("unbalanced brackets in `{path}`")))?;
            let i = s[..end]
                .parse()
                .map_err(|_| Error::Config(format!("bad index in `{path}`")))?;
            out.push(PathSeg::Index(i));
            r = &s[end + 1..];
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!("empty override path `{path}`")));
    }
    Ok(out)
}

enum PathSeg {
    Key(String),
    Index(usize),
}

/// Applies `key.path=value`; the value is read as a TOML literal and falls
/// back to a plain string.
pub fn apply_override(doc: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not key=value")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {}", raw.trim()))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let segs = path_segments(path.trim())?;
    let mut cur = doc;
    for (k, seg) in segs.iter().enumerate() {
        let last = k + 1 == segs.len();
        cur = match seg {
            PathSeg::Key(name) => {
                let t = cur
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("`{path}`: `{name}` is not inside a table")))?;
                if last {
                    t.insert(name.clone(), value);
                    return Ok(());
                }
                t.entry(name.clone()).or_insert_with(|| toml::Value::Table(Default::default()))
            }
            PathSeg::Index(i) => {
                let a = cur
                    .as_array_mut()
                    .ok_or_else(|| Error::Config(format!("`{path}`: index {i} applied to a non-array")))?;
                let len = a.len();
                let slot = a
                    .get_mut(*i)
                    .ok_or_else(|| Error::Config(format!("`{path}`: index {i} out of range ({len} entries)")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
        };
    }
    unreachable!()
}

pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse(&text, overrides)
}

/// Parses a configuration, applies overrides and resolves the model.
pub fn parse(text: &str, overrides: &[String]) -> Result<ExperimentConfig> {
    let (file, resolved) = parse_file(text, overrides)?;
    let (system, labels) = build_system(&file)?;
    system.validate().map_err(rename_field)?;
    let mut exp = ExperimentConfig {
        hash: hash_value(&resolved),
        file,
        system,
        labels,
        resolved,
    };
    if let Some(snr) = exp.file.detection.background_snr {
        if exp.file.detection.background_amp.is_none() {
            exp.system.detection.background_amp_backward = background_for_snr(&exp.system, snr)?;
        }
    }
    Ok(exp)
}

fn parse_file(text: &str, overrides: &[String]) -> Result<(FileConfig, toml::Value)> {
    let mut doc: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    let file: FileConfig = doc.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
    Ok((file, doc))
}

pub fn hash_value(doc: &toml::Value) -> String {
    let canonical = toml::to_string(doc).unwrap_or_default();
    let digest = Sha256::digest(canonical.as_bytes());
    digest.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn build_system(file: &FileConfig) -> Result<(SystemConfig, Vec<u32>)> {
    let mut emitters = Vec::new();
    let mut labels = Vec::new();
    for (j, e) in file.emitters.iter().enumerate() {
        let label = e.label.unwrap_or(j as u32 + 1);
        if file.select.as_ref().is_some_and(|s| !s.contains(&label)) {
            continue;
        }
        labels.push(label);
        emitters.push(EmitterParams {
            gamma_total: e.gamma_ghz * TAU,
            beta: e.beta,
            gamma_d: e.gamma_d_ghz * TAU,
            delta: e.delta_ghz * TAU,
            sigma_sd: e.sigma_sd_ghz * TAU,
            phi: e.phi_pi * PI,
        });
    }
    if let Some(sel) = &file.select {
        if let Some(missing) = sel.iter().find(|l| !labels.contains(l)) {
            return Err(Error::invalid("select", format!("no emitter labelled {missing}")));
        }
    }
    let d = &file.drive;
    let alpha0 = match (d.alpha0, d.mean_photons) {
        (Some(a), _) => a,
        (None, Some(n)) => {
            let g = d
                .reference_gamma_ghz
                .map(|g| g * TAU)
                .or_else(|| emitters.first().map(|e| e.gamma_total))
                .ok_or_else(|| Error::invalid("drive.reference_gamma_ghz", "needed when there are no emitters"))?;
            alpha_for_mean_photon_number(n, g)
        }
        (None, None) => return Err(Error::invalid("drive", "set either mean_photons or alpha0")),
    };
    let drive = DriveParams {
        shape: d.shape,
        alpha0,
        sigma_pulse: d.sigma_ns,
        t_center: d.t_center_ns,
        rep_period: d.rep_period_ns,
    };
    let det = &file.detection;
    let detection = DetectionParams {
        sigma_irf_ps: det.sigma_irf_ps,
        n_channels: det.n_channels,
        split_probs: det
            .split_probs
            .clone()
            .unwrap_or_else(|| vec![1.0 / det.n_channels.max(1) as f64; det.n_channels]),
        bin_width_ps: det.bin_width_ps,
        efficiency: det.efficiency,
        background_amp_backward: det.background_amp.unwrap_or(0.0),
        background_phase_nodes: det.background_phase_nodes,
    };
    let tg = &file.time_grid;
    let df = &file.diffusion;
    let scheme = match df.kind {
        DiffusionKind::None => Scheme::None,
        DiffusionKind::GaussHermite => Scheme::GaussHermite { nodes: df.nodes },
        DiffusionKind::MonteCarlo => Scheme::MonteCarlo {
            samples: df.samples,
            seed: df.seed,
        },
    };
    let mut system = SystemConfig::new(emitters, drive, TimeGrid::new(tg.t_min_ns, tg.t_max_ns, tg.dt_ps * 1e-3));
    system.detection = detection;
    system.diffusion = DiffusionDescriptor { scheme, mode: df.mode };
    system.seed = file.seed;
    Ok((system, labels))
}

/// Background amplitude whose photon number per pulse is the reflected
/// emitter photon number divided by `snr`.
pub fn background_for_snr(config: &SystemConfig, snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::invalid("detection.background_snr", "must be > 0"));
    }
    let mut c = config.clone();
    c.detection.background_amp_backward = 0.0;
    let axis = c.time_grid.points();
    let dt = c.time_grid.dt;
    let out = output_operator(&c, Direction::Backward);
    let mut signal = 0.0;
    for node in diffusion_nodes(&c.emitters, &c.diffusion.scheme) {
        let g1 = intensity_g1_node(&c, &node.offsets, &out, &axis)?;
        signal += node.weight * g1.iter().sum::<f64>() * dt;
    }
    let profile: f64 = axis.iter().map(|t| c.drive.profile(*t).powi(2)).sum::<f64>() * dt;
    Ok((signal / snr / profile).sqrt())
}

/// Model field names as they appear in configuration files.
fn file_field(path: &str) -> String {
    let renames = [
        (".gamma_total", ".gamma_ghz"),
        (".gamma_d", ".gamma_d_ghz"),
        (".sigma_sd", ".sigma_sd_ghz"),
        (".delta", ".delta_ghz"),
        ("drive.sigma_pulse", "drive.sigma_ns"),
        ("drive.rep_period", "drive.rep_period_ns"),
        ("detection.background_amp_backward", "detection.background_amp"),
        ("time_grid.dt_ns", "time_grid.dt_ps"),
    ];
    for (a, b) in renames {
        if let Some(i) = path.find(a) {
            if path[i + a.len()..].is_empty() {
                return format!("{}{}", &path[..i], b);
            }
        }
    }
    path.to_string()
}

fn rename_field(e: Error) -> Error {
    match e {
        Error::InvalidParameter { field, reason } => Error::InvalidParameter {
            field: file_field(&field),
            reason,
        },
        other => other,
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub errors: Vec<(String, String)>,
    pub warnings: Vec<(String, String)>,
    /// Resolved values in angular units.
    pub resolved: BTreeMap<String, String>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for (f, r) in &self.errors {
            let _ = writeln!(s, "error: {f}: {r}");
        }
        for (f, r) in &self.warnings {
            let _ = writeln!(s, "warning: {f}: {r}");
        }
        if self.ok() {
            s.push_str("ok\n");
            for (k, v) in &self.resolved {
                let _ = writeln!(s, "  {k} = {v}");
            }
        }
        s
    }
}

pub fn validate_config(path: &Path, overrides: &[String]) -> Result<ValidationReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(validate_text(&text, overrides))
}

/// Collects every violation instead of stopping at the first.
pub fn validate_text(text: &str, overrides: &[String]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let file = match parse_file(text, overrides) {
        Ok((f, _)) => f,
        Err(e) => {
            report.errors.push(("<file>".into(), e.to_string()));
            return report;
        }
    };
    let (system, labels) = match build_system(&file) {
        Ok(s) => s,
        Err(e) => {
            report.errors.push(match rename_field(e) {
                Error::InvalidParameter { field, reason } => (field, reason),
                other => ("<file>".into(), other.to_string()),
            });
            return report;
        }
    };
    report.errors = system.violations().into_iter().map(|(f, r)| (file_field(&f), r)).collect();
    if file.analysis.rebin == 0 {
        report.errors.push(("analysis.rebin".into(), "must be >= 1".into()));
    }
    if let Some(snr) = file.detection.background_snr {
        if !(snr > 0.0) {
            report.errors.push(("detection.background_snr".into(), "must be > 0".into()));
        }
    }
    let rate = system.fastest_rate();
    if rate > 0.0 && system.time_grid.dt * rate > 0.25 {
        report.warnings.push((
            "time_grid.dt_ps".into(),
            format!(
                "coarse compared with the fastest rate {rate:.3} rad/ns; suggested dt_ps <= {:.1}",
                200.0 / rate
            ),
        ));
    }
    let r = &mut report.resolved;
    r.insert("m".into(), system.m().to_string());
    r.insert("dim".into(), system.dim().to_string());
    for (j, (e, l)) in system.emitters.iter().zip(&labels).enumerate() {
        r.insert(
            format!("emitters[{j}]"),
            format!(
                "label={l} gamma={:.4} gamma_d={:.4} delta={:.4} sigma_sd={:.4} rad/ns, beta={}, phi={:.4} rad",
                e.gamma_total, e.gamma_d, e.delta, e.sigma_sd, e.beta, e.phi
            ),
        );
    }
    r.insert("drive.alpha0".into(), format!("{:.6} sqrt(1/ns)", system.drive.alpha0));
    r.insert("fastest_rate".into(), format!("{rate:.4} rad/ns"));
    r.insert("diffusion".into(), system.diffusion.describe());
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
name = "test"
seed = 3

[[emitters]]
gamma_ghz = 0.388
beta = 0.95
gamma_d_ghz = 0.09
delta_ghz = -0.3
phi_pi = 0.0

[[emitters]]
gamma_ghz = 0.345
beta = 0.85
phi_pi = 0.75

[drive]
mean_photons = 0.1
sigma_ns = 3.0

[time_grid]
t_min_ns = -9.984
t_max_ns = 9.984
dt_ps = 32
"#;

    #[test]
    fn units_are_converted() {
        let c = parse(BASE, &[]).unwrap();
        let e = &c.system.emitters;
        assert!((e[0].gamma_total - 0.388 * TAU).abs() < 1e-12);
        assert!((e[0].delta + 0.3 * TAU).abs() < 1e-12);
        assert!((e[1].phi - 0.75 * PI).abs() < 1e-12);
        assert!((c.system.time_grid.dt - 0.032).abs() < 1e-15);
        let n = c.system.drive.alpha0.powi(2) / e[0].gamma_total;
        assert!((n - 0.1).abs() < 1e-12);
        assert_eq!(c.labels, vec![1, 2]);
    }

    #[test]
    fn overrides_change_the_hash() {
        let a = parse(BASE, &[]).unwrap();
        let b = parse(BASE, &["emitters[1].beta=0.5".into(), "diffusion.kind=gauss-hermite".into()]).unwrap();
        assert_eq!(b.system.emitters[1].beta, 0.5);
        assert!(matches!(b.system.diffusion.scheme, Scheme::GaussHermite { nodes: 7 }));
        assert_ne!(a.hash, b.hash);
        let c = parse(BASE, &["emitters.1.beta=0.5".into(), "diffusion.kind=\"gauss-hermite\"".into()]).unwrap();
        assert_eq!(b.hash, c.hash);
        assert!(parse(BASE, &["emitters[5].beta=0.5".into()]).is_err());
    }

    #[test]
    fn invalid_beta_names_the_field() {
        let r = validate_text(BASE, &["emitters[0].beta=1.2".into()]);
        assert!(!r.ok());
        assert_eq!(r.errors[0].0, "emitters[0].beta");
        match parse(BASE, &["emitters[0].beta=1.2".into()]) {
            Err(Error::InvalidParameter { field, .. }) => assert_eq!(field, "emitters[0].beta"),
            other => panic!("{other:?}"),
        }
        let r = validate_text(BASE, &["emitters[0].gamma_ghz=-1".into()]);
        assert_eq!(r.errors[0].0, "emitters[0].gamma_ghz");
    }

    #[test]
    fn coarse_grid_warns_with_suggestion() {
        let r = validate_text(BASE, &["time_grid.dt_ps=500".into()]);
        assert!(r.ok());
        assert_eq!(r.warnings[0].0, "time_grid.dt_ps");
        assert!(r.warnings[0].1.contains("suggested"));
        let ok = validate_text(BASE, &[]);
        assert!(ok.warnings.is_empty());
        assert!(ok.render().starts_with("ok"));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let r = validate_text(&format!("{BASE}\nbogus = 1\n"), &[]);
        assert!(!r.ok());
    }

    #[test]
    fn selection_keeps_spatial_order() {
        let c = parse(BASE, &["select=[2]".into()]).unwrap();
        assert_eq!(c.labels, vec![2]);
        let full = parse(BASE, &[]).unwrap();
        let s = full.subset(&[2, 1]).unwrap();
        assert_eq!(s.labels, vec![1, 2]);
        assert!(full.subset(&[7]).is_err());
    }

    #[test]
    fn snr_sets_background() {
        let c = parse(BASE, &["detection.background_snr=20".into(), "time_grid.dt_ps=100".into()]).unwrap();
        assert!(c.system.detection.background_amp_backward > 0.0);
    }
}
