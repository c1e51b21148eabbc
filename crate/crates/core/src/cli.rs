//! Command-line front end: named recipes over a configuration file, each
//! writing data files plus `manifest.json` and `summary.json` into the
//! output directory.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use crate::analysis::{self, JacobiMap, PipelineSettings};
use crate::config::{self, ExperimentConfig};
use crate::correlate::{self, write_binary_grid, Direction};
use crate::error::{Error, Result};
use crate::model::{self, PulseShape};
use crate::noise::{self, diffusion_nodes};
use crate::tagstream;
use crate::trajectories;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Recipe {
    G1,
    G2map,
    G3map,
    Jacobi,
    Cumulant,
    Transmission,
    PhaseScan,
    Scaling,
    SimulateTags,
    CorrelateTags,
    Calibrate,
}

impl Recipe {
    pub fn name(&self) -> &'static str {
        match self {
            Recipe::G1 => "g1",
            Recipe::G2map => "g2map",
            Recipe::G3map => "g3map",
            Recipe::Jacobi => "jacobi",
            Recipe::Cumulant => "cumulant",
            Recipe::Transmission => "transmission",
            Recipe::PhaseScan => "phase-scan",
            Recipe::Scaling => "scaling",
            Recipe::SimulateTags => "simulate-tags",
            Recipe::CorrelateTags => "correlate-tags",
            Recipe::Calibrate => "calibrate",
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        <Recipe as ValueEnum>::from_str(s, true).map_err(|_| Error::UnknownRecipe(s.to_string()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "wgqed", version, about = "Waveguide QED correlation simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a recipe and write its artifacts.
    Run(RunArgs),
    /// Check a configuration file and print the resolved values.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub recipe: Recipe,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override a config entry, e.g. `--set drive.mean_photons=0.05`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, env = "WGQED_WORKERS")]
    pub workers: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Tag file read by `correlate-tags`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Everything needed to run one recipe.
#[derive(Clone, Debug)]
pub struct ExperimentSpec {
    pub recipe: Recipe,
    pub config: PathBuf,
    pub out: PathBuf,
    pub overrides: Vec<String>,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub input: Option<PathBuf>,
}

impl From<RunArgs> for ExperimentSpec {
    fn from(a: RunArgs) -> Self {
        ExperimentSpec {
            recipe: a.recipe,
            config: a.config,
            out: a.out,
            overrides: a.set,
            workers: a.workers,
            seed: a.seed,
            input: a.input,
        }
    }
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: Value,
    pub files: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.dir.join(name);
        self.files.push(p.clone());
        p
    }
}

pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut overrides = spec.overrides.clone();
    if let Some(seed) = spec.seed {
        overrides.push(format!("seed={seed}"));
    }
    let exp = config::load(&spec.config, &overrides)?;
    fs::create_dir_all(&spec.out).map_err(|e| Error::io(&spec.out, e))?;
    let mut art = Artifacts {
        dir: spec.out.clone(),
        files: Vec::new(),
    };
    log::info!("{} on {} ({} emitters)", spec.recipe, spec.config.display(), exp.system.m());
    let summary = match spec.workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::invalid("workers", e.to_string()))?;
            pool.install(|| dispatch(spec, &exp, &mut art))?
        }
        None => dispatch(spec, &exp, &mut art)?,
    };
    let manifest = json!({
        "recipe": spec.recipe.name(),
        "config_path": spec.config.display().to_string(),
        "overrides": overrides,
        "config_hash": exp.hash,
        "seed": exp.file.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "workers": spec.workers.unwrap_or_else(rayon::current_num_threads),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "resolved_config": exp.resolved,
        "files": art.files.iter().filter_map(|p| p.file_name()).map(|n| n.to_string_lossy().into_owned()).collect::<Vec<_>>(),
    });
    write_json(&art.path("manifest.json"), &manifest)?;
    write_json(&art.path("summary.json"), &summary)?;
    Ok(RunOutcome {
        summary,
        files: art.files,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("json values serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn dispatch(spec: &ExperimentSpec, exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    match spec.recipe {
        Recipe::G1 => recipe_g1(exp, art),
        Recipe::G2map => recipe_g2map(exp, art),
        Recipe::G3map | Recipe::Jacobi | Recipe::Cumulant => recipe_third_order(spec.recipe, exp, art),
        Recipe::Transmission => recipe_transmission(exp, art),
        Recipe::PhaseScan => recipe_phase_scan(exp, art),
        Recipe::Scaling => recipe_scaling(exp, art),
        Recipe::SimulateTags => recipe_simulate_tags(exp, art),
        Recipe::CorrelateTags => {
            let input = spec
                .input
                .as_ref()
                .ok_or_else(|| Error::invalid("input", "correlate-tags needs --input"))?;
            recipe_correlate_tags(exp, input, art)
        }
        Recipe::Calibrate => recipe_calibrate(exp, art),
    }
}

fn common(exp: &ExperimentConfig) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("name".into(), json!(exp.file.name));
    m.insert("emitters".into(), json!(exp.labels));
    m.insert("direction".into(), json!(exp.file.analysis.direction.as_str()));
    m
}

fn sigma_irf_ns(exp: &ExperimentConfig) -> f64 {
    exp.system.detection.sigma_irf_ps * 1e-3
}

fn recipe_g1(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let sys = &exp.system;
    let axis = sys.time_grid.points();
    let dt = sys.time_grid.dt;
    let mut series = Vec::new();
    for dir in [Direction::Forward, Direction::Backward] {
        let mut acc = vec![0.0; axis.len()];
        for node in diffusion_nodes(&sys.emitters, &sys.diffusion.scheme) {
            let g1 = correlate::intensity_g1(sys, &node.offsets, dir, &axis)?;
            for (a, v) in acc.iter_mut().zip(g1) {
                *a += node.weight * v;
            }
        }
        series.push(acc);
    }
    let mut csv = String::from("t_ns,g1_forward,g1_backward\n");
    for (i, t) in axis.iter().enumerate() {
        csv.push_str(&format!("{t},{:e},{:e}\n", series[0][i], series[1][i]));
    }
    write_text(&art.path("g1.csv"), csv)?;
    write_binary_grid(&art.path("g1_forward.bin"), &[axis.clone()], &series[0])?;
    write_binary_grid(&art.path("g1_backward.bin"), &[axis.clone()], &series[1])?;
    let mut s = common(exp);
    let photons = |v: &[f64]| v.iter().sum::<f64>() * dt;
    s.insert("photons_forward".into(), json!(photons(&series[0])));
    s.insert("photons_backward".into(), json!(photons(&series[1])));
    let peak = |v: &[f64]| {
        let i = argmax(v);
        json!({"index": i, "t_ns": axis[i], "value": v[i]})
    };
    s.insert("peak_forward".into(), peak(&series[0]));
    s.insert("peak_backward".into(), peak(&series[1]));
    Ok(Value::Object(s))
}

fn recipe_g2map(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let settings = exp.file.analysis.pipeline();
    let dir = exp.file.analysis.direction;
    let avg = analysis::averaged_second_order(&exp.system, dir, &settings, exp.system.diffusion.mode)?;
    let irf = sigma_irf_ns(exp);
    let g2 = avg.g2.as_ref().expect("second order present");
    let g11 = avg.g1g1.as_ref().expect("second order present");
    noise::convolve_irf(g2, irf).write_csv(&art.path("G2.csv"))?;
    noise::convolve_irf(g2, irf).write_binary(&art.path("G2.bin"))?;
    noise::convolve_irf(g11, irf).write_binary(&art.path("G1G1.bin"))?;
    let with = analysis::second_order_from(&avg, irf, &settings)?;
    let without = analysis::second_order_from(&avg, 0.0, &settings)?;
    with.map.write_csv(&art.path("g2_delay.csv"))?;
    without.map.write_csv(&art.path("g2_delay_no_irf.csv"))?;
    let mut s = common(exp);
    s.insert("averaging".into(), json!(exp.system.diffusion.describe()));
    s.insert("g2_zero_delay".into(), json!(with.zero_delay));
    s.insert("g2_zero_delay_no_irf".into(), json!(without.zero_delay));
    s.insert("g2_argmin_tau_ns".into(), json!(with.map.tau[argmin(&with.map.values)]));
    Ok(Value::Object(s))
}

fn recipe_third_order(recipe: Recipe, exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let settings = exp.file.analysis.pipeline();
    let dir = exp.file.analysis.direction;
    let mode = exp.system.diffusion.mode;
    let avg = analysis::averaged_third_order(&exp.system, dir, &settings, &[mode])?.remove(0);
    let irf = sigma_irf_ns(exp);
    let with = analysis::third_order_maps(&avg, irf, &settings)?;
    let without = analysis::third_order_maps(&avg, 0.0, &settings)?;
    let mut s = common(exp);
    s.insert("averaging".into(), json!(exp.system.diffusion.describe()));
    s.insert("g3_zero_delay".into(), json!(with.g3.zero_delay));
    s.insert("g3_zero_delay_no_irf".into(), json!(without.g3.zero_delay));
    match recipe {
        Recipe::G3map => {
            let prep = |g: &correlate::CorrelationGrid| noise::rebin(&noise::convolve_irf(g, irf), settings.rebin);
            let g3 = prep(avg.g3.as_ref().expect("third order present"))?;
            let cube = prep(avg.g1g1g1.as_ref().expect("third order present"))?;
            g3.write_csv(&art.path("G3.csv"))?;
            g3.write_binary(&art.path("G3.bin"))?;
            cube.write_binary(&art.path("G1G1G1.bin"))?;
        }
        Recipe::Jacobi => {
            write_map(&with.g3.map, art, "g3_jacobi")?;
            write_map(&without.g3.map, art, "g3_jacobi_no_irf")?;
        }
        _ => {
            let disconnected = |m: &analysis::ThirdOrderMaps| m.g3.map.map2(&m.g3c.map, |a, b| a - b);
            write_map(&with.g3.map, art, "g3_jacobi")?;
            write_map(&with.g3c.map, art, "g3c_jacobi")?;
            write_map(&disconnected(&with)?, art, "g3d_jacobi")?;
            write_map(&without.g3c.map, art, "g3c_jacobi_no_irf")?;
            write_map(&disconnected(&without)?, art, "g3d_jacobi_no_irf")?;
            s.insert("g3c_zero_delay".into(), json!(with.g3c.zero_delay));
            s.insert("g3c_zero_delay_no_irf".into(), json!(without.g3c.zero_delay));
            s.insert("g3d_zero_delay".into(), json!(with.g3.zero_delay - with.g3c.zero_delay));
            s.insert(
                "g3d_zero_delay_no_irf".into(),
                json!(without.g3.zero_delay - without.g3c.zero_delay),
            );
            let n_max = exp.file.analysis.n_max.max(3);
            let eq = analysis::zero_delay(&exp.system, dir, n_max, mode)?;
            s.insert("equal_time_g".into(), json!(eq.g));
            s.insert("equal_time_gc".into(), json!(eq.gc));
        }
    }
    Ok(Value::Object(s))
}

fn write_map(map: &JacobiMap, art: &mut Artifacts, stem: &str) -> Result<()> {
    map.write_csv(&art.path(&format!("{stem}.csv")))?;
    map.write_binary(&art.path(&format!("{stem}.bin")))
}

fn delta_grid(exp: &ExperimentConfig) -> Vec<f64> {
    let t = &exp.file.transmission;
    let n = t.points.max(2);
    (0..n)
        .map(|i| TAU * (t.delta_min_ghz + (t.delta_max_ghz - t.delta_min_ghz) * i as f64 / (n - 1) as f64))
        .collect()
}

fn cw(exp: &ExperimentConfig) -> ExperimentConfig {
    let mut e = exp.clone();
    e.system.drive.shape = PulseShape::Cw;
    e
}

fn label_stem(labels: &[u32]) -> String {
    labels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("-")
}

fn recipe_transmission(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let exp = cw(exp);
    let grid = delta_grid(&exp);
    let solver = exp.file.transmission.solver;
    let scan_of = |e: &ExperimentConfig| {
        correlate::transmission_scan_with(&e.system, &grid, &e.system.diffusion, solver)
    };
    let describe = |scan: &correlate::TransmissionScan, labels: &[u32]| {
        let i = argmin(&scan.total);
        json!({
            "emitters": labels,
            "min_transmission": scan.total[i],
            "argmin_delta_ghz": scan.delta[i] / TAU,
            "far_detuned_transmission": scan.total[0].max(scan.total[scan.total.len() - 1]),
        })
    };
    let mut s = common(&exp);
    let full = scan_of(&exp)?;
    full.write_csv(&art.path("transmission.csv"))?;
    s.insert("scan".into(), describe(&full, &exp.labels));
    let mut chains = Vec::new();
    for chain in &exp.file.transmission.chains {
        let mut minima = Vec::new();
        let mut entries = Vec::new();
        for labels in chain {
            let sub = exp.subset(labels)?;
            let scan = scan_of(&sub)?;
            scan.write_csv(&art.path(&format!("transmission_{}.csv", label_stem(labels))))?;
            minima.push(scan.min_total());
            entries.push(describe(&scan, labels));
        }
        let decreasing = minima.windows(2).all(|w| w[1] < w[0]);
        chains.push(json!({"subsets": entries, "strictly_decreasing": decreasing}));
    }
    s.insert("chains".into(), Value::Array(chains));
    Ok(Value::Object(s))
}

fn recipe_phase_scan(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let steps = exp.file.phase_scan.steps.max(1);
    let grid: Vec<f64> = (0..=steps).map(|i| PI * i as f64 / steps as f64).collect();
    let scan = analysis::phase_scan(&exp.system, &grid, exp.file.analysis.direction)?;
    scan.write_csv(&art.path("phase_scan.csv"))?;
    let local_max: Vec<usize> = (1..scan.g3c.len().saturating_sub(1))
        .filter(|&i| scan.g3c[i] > scan.g3c[i - 1] && scan.g3c[i] > scan.g3c[i + 1])
        .collect();
    let mut s = common(exp);
    let at = |i: usize| json!({"index": i, "phi_pi": scan.phi[i] / PI});
    s.insert("argmin_g2".into(), at(argmin(&scan.g2)));
    s.insert("argmax_g3".into(), at(argmax(&scan.g3)));
    s.insert("argmax_g3c".into(), at(argmax(&scan.g3c)));
    s.insert(
        "g3c_local_maxima_phi_pi".into(),
        json!(local_max.iter().map(|i| scan.phi[*i] / PI).collect::<Vec<_>>()),
    );
    Ok(Value::Object(s))
}

fn recipe_scaling(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let sc = &exp.file.scaling;
    let table = analysis::scaling_table(&exp.system, &sc.m, sc.n_max, exp.file.analysis.direction)?;
    table.write_csv(&art.path("scaling.csv"))?;
    let mut s = common(exp);
    s.insert("m".into(), json!(table.m));
    s.insert("n".into(), json!(table.n));
    s.insert("gc_raw".into(), json!(table.raw));
    s.insert("argmax_n".into(), json!(table.argmax_n()));
    Ok(Value::Object(s))
}

fn recipe_simulate_tags(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let n = exp.file.tags.n_pulses;
    let stream = trajectories::simulate_tags(&exp.system, n, exp.file.seed)?;
    if exp.file.tags.binary {
        tagstream::write_tags_binary(&stream, &art.path("tags.bin"))?;
    } else {
        tagstream::write_tags(&stream, &art.path("tags.txt"))?;
    }
    let mut per_channel = [0u64; 6];
    for r in &stream.records {
        per_channel[r.channel as usize % 6] += 1;
    }
    let mut s = common(exp);
    s.insert("n_pulses".into(), json!(n));
    s.insert("n_records".into(), json!(stream.records.len()));
    s.insert("counts_per_channel".into(), json!(per_channel));
    Ok(Value::Object(s))
}

fn recipe_correlate_tags(exp: &ExperimentConfig, input: &Path, art: &mut Artifacts) -> Result<Value> {
    let stream = tagstream::read_tags(input)?;
    let settings: PipelineSettings = exp.file.analysis.pipeline();
    let dir = exp.file.analysis.direction;
    let bin3 = exp.system.detection.bin_width_ps.round() as i64;
    let bin2 = exp.file.analysis.g2_bin_ps.round() as i64;
    let (third, second) = tagstream::estimate_correlations(&stream, dir, &settings, bin3, bin2)?;
    write_map(&third.g3.map, art, "g3_jacobi")?;
    write_map(&third.g3c.map, art, "g3c_jacobi")?;
    second.map.write_csv(&art.path("g2_delay.csv"))?;
    tagstream::hist_g3(&stream, [0, 0, 0], bin3, dir)?.write_csv(&art.path("hist_g3_correlated.csv"))?;
    let mut s = common(exp);
    s.insert("input".into(), json!(input.display().to_string()));
    s.insert("n_records".into(), json!(stream.records.len()));
    s.insert("g3_zero_delay".into(), json!(third.g3.zero_delay));
    s.insert("g3_zero_delay_error".into(), json!(third.g3_error()));
    s.insert("g3c_zero_delay".into(), json!(third.g3c.zero_delay));
    s.insert("window_counts".into(), json!(third.window_counts));
    s.insert("reference_counts".into(), json!(third.reference_counts));
    s.insert("g2_zero_delay".into(), json!(second.zero_delay));
    Ok(Value::Object(s))
}

/// Resonant transmission dip of each emitter alone versus input power,
/// mirroring a power calibration series.
fn recipe_calibrate(exp: &ExperimentConfig, art: &mut Artifacts) -> Result<Value> {
    let photons: Vec<f64> = (0..=24).map(|i| 10f64.powf(-3.0 + 4.0 * i as f64 / 24.0)).collect();
    let mut csv = String::from("mean_photons");
    let mut columns = Vec::new();
    let mut emitters = Vec::new();
    for (label, e) in exp.labels.iter().zip(&exp.system.emitters) {
        csv.push_str(&format!(",min_transmission_{label}"));
        let mut single = cw(&exp.subset(&[*label])?);
        let offsets = [-e.delta];
        let mut col = Vec::with_capacity(photons.len());
        for n in &photons {
            single.system.drive.alpha0 = model::alpha_for_mean_photon_number(*n, e.gamma_total);
            let t = correlate::transmission_point(&single.system, &offsets, correlate::TransmissionSolver::Exact)?;
            col.push(t.total);
        }
        single.system.drive.alpha0 = exp.system.drive.alpha0;
        let at_config = correlate::transmission_point(&single.system, &offsets, correlate::TransmissionSolver::Exact)?;
        emitters.push(json!({
            "label": label,
            "mean_photons": model::mean_photon_number(exp.system.drive.alpha0, e.beta, e.gamma_total),
            "resonant_transmission": at_config.total,
        }));
        columns.push(col);
    }
    csv.push('\n');
    for (i, n) in photons.iter().enumerate() {
        csv.push_str(&format!("{n:e}"));
        for c in &columns {
            csv.push_str(&format!(",{:e}", c[i]));
        }
        csv.push('\n');
    }
    write_text(&art.path("calibration.csv"), csv)?;
    let mut s = common(exp);
    s.insert("alpha0".into(), json!(exp.system.drive.alpha0));
    s.insert(
        "background_amp_backward".into(),
        json!(exp.system.detection.background_amp_backward),
    );
    s.insert("emitters_calibration".into(), Value::Array(emitters));
    Ok(Value::Object(s))
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] > v[b] { i } else { b })
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |b, i| if v[i] < v[b] { i } else { b })
}

/// Entry point of the binary; returns the process exit status.
pub fn main_with(cli: Cli) -> i32 {
    match cli.command {
        Command::Run(args) => {
            let spec = ExperimentSpec::from(args);
            match run(&spec) {
                Ok(out) => {
                    println!("{}", serde_json::to_string_pretty(&out.summary).unwrap_or_default());
                    0
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    1
                }
            }
        }
        Command::Validate(args) => match config::validate_config(&args.config, &args.set) {
            Ok(report) => {
                print!("{}", report.render());
                if report.ok() {
                    0
                } else {
                    1
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
    }

    #[test]
    fn recipe_names_parse() {
        for r in Recipe::value_variants() {
            assert_eq!(r.name().parse::<Recipe>().unwrap(), *r);
        }
        assert!(matches!("g4map".parse::<Recipe>(), Err(Error::UnknownRecipe(_))));
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "wgqed", "run", "--config", "a.cfg", "--recipe", "phase-scan", "--set", "x=1", "--set", "y=2", "--seed", "4",
        ])
        .unwrap();
        let Command::Run(a) = cli.command else { panic!() };
        assert_eq!(a.recipe, Recipe::PhaseScan);
        assert_eq!(a.set, vec!["x=1", "y=2"]);
        assert_eq!(a.seed, Some(4));
    }

    #[test]
    fn single_emitter_transmission_is_normalized_far_off_resonance() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ExperimentSpec {
            recipe: Recipe::Transmission,
            config: cfg("table_s1.cfg"),
            out: dir.path().to_path_buf(),
            overrides: vec![
                "select=[1]".into(),
                "diffusion.kind=\"none\"".into(),
                "transmission.delta_min_ghz=-60.0".into(),
                "transmission.delta_max_ghz=60.0".into(),
                "transmission.points=41".into(),
                "drive.mean_photons=0.001".into(),
            ],
            workers: Some(1),
            seed: None,
            input: None,
        };
        let out = run(&spec).unwrap();
        let far = out.summary["scan"]["far_detuned_transmission"].as_f64().unwrap();
        assert!((far - 1.0).abs() < 1e-3, "{far}");
        let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["resolved_config"]["select"], json!([1]));
        assert!(dir.path().join("transmission.csv").exists());
    }

    #[test]
    fn artifacts_do_not_depend_on_worker_count() {
        let mut csv = Vec::new();
        for w in [1, 3] {
            let dir = tempfile::tempdir().unwrap();
            let spec = ExperimentSpec {
                recipe: Recipe::G1,
                config: cfg("fig_s11.cfg"),
                out: dir.path().to_path_buf(),
                overrides: vec![],
                workers: Some(w),
                seed: None,
                input: None,
            };
            run(&spec).unwrap();
            csv.push(fs::read(dir.path().join("g1.csv")).unwrap());
        }
        assert_eq!(csv[0], csv[1]);
    }

    #[test]
    fn validation_failure_names_the_field() {
        let code = main_with(Cli {
            command: Command::Validate(ValidateArgs {
                config: cfg("table_s1.cfg"),
                set: vec!["emitters[0].beta=1.2".into()],
            }),
        });
        assert_eq!(code, 1);
        let report = config::validate_config(&cfg("table_s1.cfg"), &["emitters[0].beta=1.2".into()]).unwrap();
        assert!(report.errors.iter().any(|(f, _)| f == "emitters[0].beta"));
    }
}
