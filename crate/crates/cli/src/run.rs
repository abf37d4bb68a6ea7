//! Subcommand implementations. Each returns a JSON summary listing the files
//! written and the headline numbers.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use adiabat::ansatz::{Ansatz, SampledWaveform};
use adiabat::io::{self, FileHeader};
use adiabat::metrics::EvalSettings;
use adiabat::optimizer::{optimize, OptimizedPulse};
use adiabat::simulator::{
    bloch_trajectory, ensemble_offset_sweep, ensemble_train_decay, fit_per_pulse_accuracy,
    half_max_half_width, multispin_dipolar_sim, offset_sweep, rabi_sweep, selectivity_profile,
    weighted_signal, PulseTrainConfig, ResponseCurve, SpinGeometry,
};
use adiabat::{Error, Execution, Result};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::config::{parse_config, Mode, RunConfig};
use crate::presets;

/// `pulse.json`: header plus the optimizer result.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PulseFile {
    pub header: FileHeader,
    pub pulse: OptimizedPulse,
}

/// A waveform ready for simulation.
pub struct LoadedPulse {
    pub family: Arc<Ansatz>,
    pub x: Vec<f64>,
    pub rng_seed: Option<u64>,
}

/// Reads a config from a file path, or a preset of that name.
pub fn load_config(arg: &str) -> Result<RunConfig> {
    let path = Path::new(arg);
    let text = if path.exists() {
        fs::read_to_string(path)?
    } else if let Some(t) = presets::get(arg) {
        t.to_string()
    } else {
        return Err(Error::config(
            "<config>",
            format!(
                "`{arg}` is neither a readable file nor a preset ({})",
                presets::names().join(", ")
            ),
        ));
    };
    parse_config(&text)
}

/// Sets the mode from the subcommand; an explicit, different mode is an error.
pub fn with_mode(mut cfg: RunConfig, mode: Mode) -> Result<RunConfig> {
    match cfg.mode {
        Some(m) if m != mode => Err(Error::config(
            "mode",
            format!("config declares {m:?} but the {mode:?} command was run"),
        )),
        _ => {
            cfg.mode = Some(mode);
            Ok(cfg)
        }
    }
}

/// Loads `pulse.json` or a waveform CSV.
pub fn load_pulse(path: &Path) -> Result<LoadedPulse> {
    let text = fs::read_to_string(path)?;
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let f: PulseFile = serde_json::from_str(&text)?;
        let family = match f.pulse.family {
            Ansatz::Sampled(s) => Ansatz::Sampled(s.prepared()?),
            other => other,
        };
        family.validate()?;
        Ok(LoadedPulse {
            family: Arc::new(family),
            x: f.pulse.x,
            rng_seed: f.header.rng_seed,
        })
    } else {
        let header = FileHeader::parse(&text);
        let wave = io::read_waveform_csv(text.as_bytes())?;
        Ok(LoadedPulse {
            family: Arc::new(Ansatz::Sampled(wave)),
            x: Vec::new(),
            rng_seed: header.rng_seed,
        })
    }
}

struct Writer {
    dir: PathBuf,
    header: FileHeader,
    files: Vec<String>,
}

impl Writer {
    fn new(dir: &Path, header: FileHeader) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header,
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.dir.join(name);
        self.files.push(p.display().to_string());
        Ok(BufWriter::new(File::create(p)?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    }

    fn table(&mut self, name: &str, curves: &[ResponseCurve]) -> Result<()> {
        let w = self.create(name)?;
        io::write_table_csv(w, &self.header, curves)
    }
}

fn settings(cfg: &RunConfig) -> EvalSettings {
    let n = cfg.problem.numerics;
    EvalSettings {
        solver: n.report,
        quadrature: n.quadrature,
        tip_samples: n.tip_samples,
        execution: Execution::default(),
    }
}

fn resolved_json(cfg: &RunConfig) -> Result<Value> {
    Ok(serde_json::to_value(cfg)?)
}

/// `optimize`: searches for a pulse, then runs every configured simulation.
pub fn optimize_cmd(cfg: &RunConfig) -> Result<Value> {
    let cfg = with_mode(cfg.clone(), Mode::Optimize)?.resolved()?;
    let problem = cfg.build_problem()?;
    let seed = problem.policy.rng_seed;
    let header = FileHeader::new(cfg.hash()?, Some(seed));
    let mut out = Writer::new(&cfg.output_dir, header.clone())?;
    let pulse = optimize(&problem)?;
    out.json("resolved_config.json", &resolved_json(&cfg)?)?;
    out.json(
        "pulse.json",
        &PulseFile {
            header: header.clone(),
            pulse: pulse.clone(),
        },
    )?;
    let wave = SampledWaveform::from_family(&*problem.ensemble.family, &pulse.x, 1001)?;
    let w = out.create("waveform.csv")?;
    io::write_waveform_csv(w, &header, &wave)?;
    let w = out.create("trace.csv")?;
    io::write_trace_csv(w, &header, &pulse.trace)?;
    let loaded = LoadedPulse {
        family: problem.ensemble.family.clone(),
        x: pulse.x.clone(),
        rng_seed: Some(seed),
    };
    let mut results = Map::new();
    results.insert("phi".into(), json!(pulse.phi));
    results.insert("report_total".into(), json!(pulse.report.total));
    results.insert("restarts".into(), json!(pulse.restarts));
    results.insert("converged".into(), json!(pulse.converged));
    results.insert("evaluations".into(), json!(pulse.evaluations));
    run_simulations(&cfg, &loaded, &mut out, &mut results, true, true)?;
    Ok(summary(Mode::Optimize, &cfg, out, results))
}

/// `simulate`: train, multi-spin, selectivity and Bloch blocks on a pulse.
pub fn simulate_cmd(cfg: &RunConfig, pulse: &Path) -> Result<Value> {
    sim_cmd(cfg, pulse, Mode::Simulate)
}

/// `sweep`: Rabi and offset sweeps on a pulse.
pub fn sweep_cmd(cfg: &RunConfig, pulse: &Path) -> Result<Value> {
    sim_cmd(cfg, pulse, Mode::Sweep)
}

fn sim_cmd(cfg: &RunConfig, pulse: &Path, mode: Mode) -> Result<Value> {
    let cfg = with_mode(cfg.clone(), mode)?.resolved()?;
    let loaded = load_pulse(pulse)?;
    let header = FileHeader::new(cfg.hash()?, loaded.rng_seed);
    let mut out = Writer::new(&cfg.output_dir, header)?;
    out.json("resolved_config.json", &resolved_json(&cfg)?)?;
    let mut results = Map::new();
    let (sweeps, sims) = (mode == Mode::Sweep, mode == Mode::Simulate);
    run_simulations(&cfg, &loaded, &mut out, &mut results, sweeps, sims)?;
    Ok(summary(mode, &cfg, out, results))
}

/// `export`: samples a stored pulse as a waveform CSV.
pub fn export_cmd(pulse: &Path, samples: usize, out_path: &Path) -> Result<Value> {
    let text = fs::read_to_string(pulse)?;
    let f: PulseFile = serde_json::from_str(&text)?;
    let family = match f.pulse.family {
        Ansatz::Sampled(s) => Ansatz::Sampled(s.prepared()?),
        other => other,
    };
    let wave = SampledWaveform::from_family(&family, &f.pulse.x, samples)?;
    if let Some(dir) = out_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    io::write_waveform_csv(BufWriter::new(File::create(out_path)?), &f.header, &wave)?;
    Ok(json!({
        "mode": "export",
        "files": [out_path.display().to_string()],
        "samples": wave.times.len(),
    }))
}

fn summary(mode: Mode, cfg: &RunConfig, out: Writer, results: Map<String, Value>) -> Value {
    json!({
        "mode": mode,
        "output_dir": cfg.output_dir.display().to_string(),
        "config_hash": out.header.config_hash,
        "files": out.files,
        "results": results,
    })
}

fn run_simulations(
    cfg: &RunConfig,
    pulse: &LoadedPulse,
    out: &mut Writer,
    results: &mut Map<String, Value>,
    sweeps: bool,
    sims: bool,
) -> Result<()> {
    let sims_cfg = &cfg.simulations;
    let settings = settings(cfg);
    let opts = settings.solver;
    let exec = settings.execution;
    let problem = cfg.build_problem()?;
    let members = &problem.ensemble.members;
    let family = &pulse.family;
    let x = &pulse.x;
    let w1max = family.omega1_max();
    let to_scale = |w: f64| w / w1max;

    if sweeps {
        if let Some(r) = &sims_cfg.rabi_sweep {
            let grid: Vec<f64> = r.omega1.values().into_iter().map(|v| cfg.freq(v)).collect();
            let sweep = rabi_sweep(family, &members[r.member], x, &grid, &settings);
            out.table("rabi_sweep.csv", &sweep.curves())?;
            let mut entry = json!({
                "max_one_minus_phi0": finite_or_null(max_finite(&sweep.infidelity)),
                "max_alpha_deg": finite_or_null(max_finite(&sweep.alpha_max_deg)),
                "failed_points": sweep.errors.iter().filter(|e| e.is_some()).count(),
            });
            if let Some(path) = &r.weights_file {
                let table: Vec<(f64, f64)> = io::read_weight_table(File::open(path)?)?
                    .into_iter()
                    .map(|(w, p)| (cfg.freq(w), p))
                    .collect();
                let zeta = ResponseCurve::new(
                    "omega1_rad_s",
                    "zeta",
                    sweep.omega1.clone(),
                    sweep.infidelity.iter().map(|e| 1.0 - 2.0 * e).collect(),
                );
                entry["weighted_signal"] = json!(weighted_signal(&zeta, &table)?);
            }
            results.insert("rabi_sweep".into(), entry);
        }
        if let Some(o) = &sims_cfg.offset_sweep {
            let train = PulseTrainConfig {
                offset_nodes: o.offset_nodes,
                truncation: o.truncation,
                ..PulseTrainConfig::new(
                    o.n_pulses,
                    cfg.time(o.t_wait),
                    cfg.time(o.t2),
                    cfg.time(o.t2_star),
                )
            };
            let det: Vec<f64> = o
                .detuning
                .values()
                .into_iter()
                .map(|v| cfg.freq(v))
                .collect();
            let curve = match &o.omega1 {
                Some(g) => {
                    let scales: Vec<f64> = g
                        .values()
                        .into_iter()
                        .map(|v| to_scale(cfg.freq(v)))
                        .collect();
                    let weights = vec![1.0; scales.len()];
                    ensemble_offset_sweep(
                        family, x, &scales, &weights, o.n_pulses, &det, &train, o.n_cap, &opts,
                        exec,
                    )?
                }
                None => offset_sweep(
                    family,
                    x,
                    o.rabi_scale,
                    o.n_pulses,
                    &det,
                    &train,
                    o.n_cap,
                    &opts,
                    exec,
                ),
            };
            out.table("offset_sweep.csv", std::slice::from_ref(&curve))?;
            let hw = half_max_half_width(&curve).map(|h| cfg.units.frequency_from_rad_s(h));
            results.insert("offset_sweep".into(), json!({ "half_width": hw }));
        }
    }

    if sims {
        if let Some(b) = &sims_cfg.bloch {
            let m = &members[b.member];
            let field = m.field(family);
            let traj = bloch_trajectory(&field, x, &m.initial, b.samples, &opts)?;
            let t: Vec<f64> = traj.iter().map(|s| s.t).collect();
            let col = |name: &str, f: &dyn Fn(&adiabat::simulator::BlochSample) -> f64| {
                ResponseCurve::new("t_s", name, t.clone(), traj.iter().map(f).collect())
            };
            let curves = vec![
                col("mx", &|s| s.m[0]),
                col("my", &|s| s.m[1]),
                col("mz", &|s| s.m[2]),
                col("bx_rad_s", &|s| s.b.bx),
                col("by_rad_s", &|s| s.b.by),
                col("bz_rad_s", &|s| s.b.bz),
                col("alpha_deg", &|s| s.alpha.map_or(f64::NAN, f64::to_degrees)),
            ];
            out.table("bloch.csv", &curves)?;
            let amax = traj
                .iter()
                .filter_map(|s| s.alpha)
                .fold(0.0f64, f64::max)
                .to_degrees();
            results.insert(
                "bloch".into(),
                json!({ "alpha_max_deg": amax, "final_m": traj.last().map(|s| s.m) }),
            );
        }
        if let Some(tc) = &sims_cfg.train {
            let train = PulseTrainConfig {
                detuning: cfg.freq(tc.detuning),
                offset_nodes: tc.offset_nodes,
                truncation: tc.truncation,
                ..PulseTrainConfig::new(
                    tc.n_max,
                    cfg.time(tc.t_wait),
                    cfg.time(tc.t2),
                    cfg.time(tc.t2_star),
                )
            };
            let scales: Vec<f64> = match &tc.omega1 {
                Some(g) => g
                    .values()
                    .into_iter()
                    .map(|v| to_scale(cfg.freq(v)))
                    .collect(),
                None => vec![1.0],
            };
            let weights = vec![1.0; scales.len()];
            let curve = ensemble_train_decay(family, x, &scales, &weights, &train, &opts, exec)?;
            out.table("train.csv", std::slice::from_ref(&curve))?;
            let fit = fit_per_pulse_accuracy(&curve.abscissa, &curve.ordinate, 1e-12).ok();
            results.insert(
                "train".into(),
                json!({
                    "per_pulse_accuracy": fit.map(|f| f.0),
                    "mz_final": curve.ordinate.last(),
                }),
            );
        }
        if let Some(m) = &sims_cfg.multispin {
            let geometry = SpinGeometry::cube_face_centers(
                m.cube_side,
                m.jitter,
                m.gamma.rad_s_per_t(),
                m.seed,
            );
            let grid: Vec<f64> = m.omega1.values().into_iter().map(|v| cfg.freq(v)).collect();
            let scales: Vec<f64> = grid.iter().map(|w| to_scale(*w)).collect();
            let fid =
                multispin_dipolar_sim(family, x, &geometry, m.convention, &scales, &opts, exec)?;
            let curve = ResponseCurve::new("omega1_rad_s", "mean_fidelity", grid, fid.clone());
            out.table("multispin.csv", &[curve])?;
            out.json("geometry.json", &geometry)?;
            let mean_inf = fid.iter().map(|f| 1.0 - f).sum::<f64>() / fid.len() as f64;
            results.insert("multispin".into(), json!({ "mean_infidelity": mean_inf }));
        }
        if let Some(s) = &sims_cfg.selectivity {
            let m = &members[s.member];
            let offsets: Vec<f64> = s.offset.values().into_iter().map(|v| cfg.freq(v)).collect();
            let p = selectivity_profile(
                family,
                x,
                s.rabi_scale,
                &m.initial,
                &m.target,
                &offsets,
                s.repetitions,
                &opts,
                exec,
            )?;
            out.table("selectivity.csv", std::slice::from_ref(&p.curve))?;
            let f = |v: f64| cfg.units.frequency_from_rad_s(v);
            results.insert(
                "selectivity".into(),
                json!({
                    "band_width": p.band_width.map(f),
                    "edge_widths": p.edge_widths.map(|(a, b)| [f(a), f(b)]),
                }),
            );
        }
    }
    Ok(())
}

fn max_finite(v: &[f64]) -> f64 {
    v.iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}
