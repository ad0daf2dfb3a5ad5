//! Executes one experiment configuration and writes its result files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use crate::dynamics::{propagate, Integrator};
use crate::error::Error;
use crate::floquet::{detect_avoided_crossings, floquet_mean_velocity, refine_crossing, CrossingKind, CrossingOptions, Crossing};
use crate::load::load_characteristic;
use crate::model::{initial_state, DriveProtocol, ModelParams};
use crate::observables::{dc_velocity_direct, t0_ensemble, T0Ensemble, MIN_DC_PERIODS};
use crate::scan::{grid_distance, map_points, resonance_peaks, spectrum_at, theta_scan};

use super::config::{ConfigError, Experiment, ExperimentConfig};
use super::svg;

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code for an invalid or unreadable configuration.
pub const EXIT_VALIDATION: i32 = 1;
/// Exit code when any parameter point failed numerically.
pub const EXIT_NUMERICAL: i32 = 2;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "invalid configuration: {e}"),
            RunError::Io(e) => write!(f, "i/o failure: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

impl From<csv::Error> for RunError {
    fn from(e: csv::Error) -> Self {
        RunError::Io(e.into())
    }
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_VALIDATION,
            RunError::Io(_) => EXIT_NUMERICAL,
        }
    }
}

/// Status of one parameter point.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct PointStatus {
    pub point: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub files: Vec<PathBuf>,
    pub manifest: PathBuf,
    pub points: Vec<PointStatus>,
}

impl RunOutcome {
    pub fn failures(&self) -> usize {
        self.points.iter().filter(|p| !p.ok).count()
    }

    pub fn exit_code(&self) -> i32 {
        if self.failures() == 0 {
            EXIT_OK
        } else {
            EXIT_NUMERICAL
        }
    }
}

/// Twelve significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.11e}")
}

struct Output {
    dir: PathBuf,
    files: Vec<PathBuf>,
    points: Vec<PointStatus>,
    svg: bool,
}

impl Output {
    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf, RunError> {
        let path = self.dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        self.files.push(path.clone());
        Ok(path)
    }

    fn plot(&mut self, csv_path: &Path, title: &str, x: &str, ys: &[&str]) -> Result<(), RunError> {
        if !self.svg {
            return Ok(());
        }
        let svg = svg::plot_csv(csv_path, title, x, ys)?;
        let path = csv_path.with_extension("svg");
        fs::write(&path, svg)?;
        self.files.push(path);
        Ok(())
    }

    fn status<T>(&mut self, point: String, r: &Result<T, Error>) {
        self.points.push(PointStatus { point, ok: r.is_ok(), error: r.as_ref().err().map(|e| e.to_string()) });
    }
}

/// Runs `config` inside a worker pool of the configured size.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    config.validate().map_err(RunError::Config)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = config.workers {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| RunError::Io(std::io::Error::other(e.to_string())))?;
    pool.install(|| run_in_pool(config))
}

fn run_in_pool(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let started = Instant::now();
    fs::create_dir_all(&config.output)?;
    let mut out = Output { dir: config.output.clone(), files: Vec::new(), points: Vec::new(), svg: config.svg };
    let p = config.model;
    let integ = config.integrator;
    match &config.experiment {
        Experiment::ThetaScan { thetas, l_c, n_t0, horizon } => theta_scan_exp(&mut out, &p, integ, &thetas.values(), *l_c, *n_t0, *horizon)?,
        Experiment::T0DispersionScan { sizes, l_c, n_t0, horizon } => dispersion_exp(&mut out, &p, integ, sizes, *l_c, *n_t0, *horizon)?,
        Experiment::LoadScan { q, r, l_c, n_t0, refine_r } => load_exp(&mut out, &p, integ, q, *r, *l_c, *n_t0, *refine_r)?,
        Experiment::Trace { l_c, periods, samples_per_period } => trace_exp(&mut out, &p, integ, *l_c, *periods, *samples_per_period)?,
        Experiment::Spectrum { thetas, samples_per_period } => spectrum_exp(&mut out, &p, integ, &thetas.values(), *samples_per_period)?,
        Experiment::CrossingScan { thetas, l_c, n_t0, threshold_fraction, refine_points } => {
            let options = CrossingOptions { threshold_fraction: *threshold_fraction, include_true: true };
            crossing_exp(&mut out, &p, integ, &thetas.values(), *l_c, *n_t0, options, *refine_points)?
        }
    }
    let manifest_path = out.dir.join("manifest.json");
    let files: Vec<String> = out.files.iter().map(|f| f.file_name().unwrap().to_string_lossy().into_owned()).collect();
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "wall_time_s": started.elapsed().as_secs_f64(),
        "files": files,
        "points": out.points,
    });
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).expect("manifest serializes"))?;
    Ok(RunOutcome { files: out.files, manifest: manifest_path, points: out.points })
}

fn theta_scan_exp(out: &mut Output, p: &ModelParams<f64>, integ: Integrator, thetas: &[f64], l_c: usize, n_t0: usize, horizon: usize) -> Result<(), RunError> {
    let results = theta_scan(p, thetas, integ, l_c, n_t0, Some(horizon));
    let direct = format!("v_direct_{horizon}T");
    let mut rows = Vec::new();
    for (th, r) in thetas.iter().zip(&results) {
        out.status(format!("theta={}", fmt(*th)), r);
        if let Ok(pt) = r {
            let e = &pt.ensemble;
            rows.push(vec![
                fmt(*th),
                fmt(e.mean_floquet()),
                fmt(e.mean_direct().unwrap_or(f64::NAN)),
                fmt(e.continuous_band(20)),
                fmt(e.mean_floquet_starter()),
                fmt(e.dispersion_floquet()),
            ]);
        }
    }
    let path = out.table("theta_scan.csv", &["theta", "v_floquet", &direct, "band_20T", "v_s_floquet", "sigma_v"], &rows)?;
    out.plot(&path, "t0-averaged carrier velocity", "theta", &["v_floquet", &direct])
}

fn running_rows(e: &T0Ensemble<f64>) -> Vec<Vec<String>> {
    let mean = e.mean_running();
    let finals: Vec<f64> = e.members.iter().map(|m| m.direct().unwrap_or(f64::NAN)).collect();
    let hi = (0..finals.len()).max_by(|&a, &b| finals[a].total_cmp(&finals[b])).unwrap_or(0);
    let lo = (0..finals.len()).min_by(|&a, &b| finals[a].total_cmp(&finals[b])).unwrap_or(0);
    (0..mean.len())
        .map(|i| {
            vec![
                (i + 1).to_string(),
                fmt(mean[i]),
                fmt(e.members[hi].running[i]),
                fmt(e.members[lo].running[i]),
                fmt(e.members[hi].t0),
                fmt(e.members[lo].t0),
            ]
        })
        .collect()
}

fn dispersion_exp(out: &mut Output, p: &ModelParams<f64>, integ: Integrator, sizes: &[usize], l_c: usize, n_t0: usize, horizon: usize) -> Result<(), RunError> {
    let results = map_points(sizes, |&l| {
        let q = p.with_sites(l);
        let d = DriveProtocol::from_params(&q);
        t0_ensemble(&q, &d, integ, d.period(), l_c, n_t0, Some(horizon))
    });
    let mut rows = Vec::new();
    for (&l, r) in sizes.iter().zip(&results) {
        out.status(format!("L={l}"), r);
        if let Ok(e) = r {
            rows.push(vec![
                l.to_string(),
                fmt(e.dispersion_direct().unwrap_or(f64::NAN)),
                fmt(e.dispersion_floquet()),
                fmt(e.mean_direct().unwrap_or(f64::NAN)),
                fmt(e.mean_floquet()),
            ]);
            let path = out.table(
                &format!("running_L{l}.csv"),
                &["period", "mean", "t0_max_curve", "t0_min_curve", "t0_max", "t0_min"],
                &running_rows(e),
            )?;
            out.plot(&path, &format!("running carrier average, L = {l}"), "period", &["mean", "t0_max_curve", "t0_min_curve"])?;
        }
    }
    let path = out.table("dispersion.csv", &["L", "Sigma_v", "Sigma_v_floquet", "v_mean_direct", "v_mean_floquet"], &rows)?;
    out.plot(&path, "t0 dispersion", "L", &["Sigma_v", "Sigma_v_floquet"])
}

#[allow(clippy::too_many_arguments)]
fn load_exp(out: &mut Output, p: &ModelParams<f64>, integ: Integrator, q: &[i64], r: u64, l_c: usize, n_t0: usize, refine_r: Option<u64>) -> Result<(), RunError> {
    let header = ["q", "r", "q_reduced", "r_reduced", "omega_B", "v_range_min", "v_range_max", "v_c", "v_s", "uphill"];
    let emit = |out: &mut Output, name: &str, q: &[i64], r: u64| -> Result<(), RunError> {
        let results = load_characteristic(p, q, r, l_c, n_t0, integ);
        let mut rows = Vec::new();
        for (&qi, res) in q.iter().zip(&results) {
            out.status(format!("q={qi},r={r}"), res);
            if let Ok(pt) = res {
                rows.push(vec![
                    qi.to_string(),
                    r.to_string(),
                    pt.reduced.q.to_string(),
                    pt.reduced.r.to_string(),
                    fmt(pt.omega_b),
                    fmt(pt.v_range_min),
                    fmt(pt.v_range_max),
                    fmt(pt.v_c),
                    fmt(pt.v_s),
                    pt.is_uphill().to_string(),
                ]);
            }
        }
        let path = out.table(name, &header, &rows)?;
        out.plot(&path, "load characteristic", "omega_B", &["v_range_min", "v_range_max", "v_c"])
    };
    emit(out, "load.csv", q, r)?;
    if let Some(r2) = refine_r {
        let (lo, hi) = (*q.iter().min().unwrap(), *q.iter().max().unwrap());
        let scale = r2 as f64 / r as f64;
        let fine: Vec<i64> = ((lo as f64 * scale).ceil() as i64..=(hi as f64 * scale).floor() as i64).collect();
        emit(out, "load_refined.csv", &fine, r2)?;
    }
    Ok(())
}

fn trace_exp(out: &mut Output, p: &ModelParams<f64>, integ: Integrator, l_c: usize, periods: usize, spp: usize) -> Result<(), RunError> {
    let d = DriveProtocol::from_params(p);
    let result = initial_state(p, l_c).and_then(|psi| {
        propagate(p, &psi, &d, integ, p.t0 + d.period() * periods as f64, periods * spp)
    });
    out.status(format!("t0={}", fmt(p.t0)), &result);
    if let Ok(prop) = result {
        let tr = &prop.trace;
        let rows: Vec<Vec<String>> = (0..tr.times.len())
            .map(|i| vec![fmt(tr.times[i]), fmt((tr.times[i] - p.t0) / d.period()), fmt(tr.v_c[i]), fmt(tr.v_s[i]), fmt(tr.running_avg[i])])
            .collect();
        let path = out.table("trace.csv", &["time", "t_over_T", "v_c", "v_s", "running_avg"], &rows)?;
        out.plot(&path, "carrier velocity", "t_over_T", &["v_c", "running_avg"])?;
        if periods as f64 >= MIN_DC_PERIODS {
            if let Ok(dc) = dc_velocity_direct(tr) {
                out.table("dc.csv", &["v_dc", "band", "periods"], &[vec![fmt(dc.value), fmt(dc.band), fmt(dc.periods)]])?;
            }
        }
    }
    Ok(())
}

fn spectrum_exp(out: &mut Output, p: &ModelParams<f64>, integ: Integrator, thetas: &[f64], samples: usize) -> Result<(), RunError> {
    let results = map_points(thetas, |&th| {
        let q = p.with_theta(th);
        let s = spectrum_at(&q, integ)?;
        let v = floquet_mean_velocity(&s, &q, &DriveProtocol::from_params(&q), integ, samples)?;
        Ok::<_, Error>((s, v))
    });
    let mut spec_rows = Vec::new();
    let mut trace_rows = Vec::new();
    for (&th, r) in thetas.iter().zip(&results) {
        out.status(format!("theta={}", fmt(th)), r);
        if let Ok((s, v)) = r {
            for n in 0..s.len() {
                spec_rows.push(vec![
                    fmt(th),
                    n.to_string(),
                    s.k_labels[n].to_string(),
                    fmt(s.k_value(n)),
                    fmt(s.quasienergies[n]),
                    fmt(s.mean_velocities[n]),
                    fmt(v.mean[n]),
                    fmt(s.starter_velocities[n]),
                ]);
            }
            for n in s.block_indices(0) {
                for (i, &t) in v.times.iter().enumerate() {
                    trace_rows.push(vec![fmt(th), n.to_string(), fmt((t - s.t0) / s.period), fmt(v.traces[n][i])]);
                }
            }
        }
    }
    out.table("spectrum.csv", &["theta", "n", "k_block", "k", "quasienergy", "v_bar", "v_bar_propagated", "v_s_bar"], &spec_rows)?;
    out.table("floquet_traces_k0.csv", &["theta", "n", "t_over_T", "v"], &trace_rows)?;
    Ok(())
}

fn crossing_row(c: &Crossing<f64>, source: &str) -> Vec<String> {
    vec![
        fmt(c.theta),
        c.grid_index.to_string(),
        c.curves.0.to_string(),
        c.curves.1.to_string(),
        c.blocks.0.to_string(),
        c.blocks.1.to_string(),
        match c.kind {
            CrossingKind::Avoided => "avoided".into(),
            CrossingKind::True => "true".into(),
        },
        fmt(c.gap),
        fmt(c.t_obs),
        source.into(),
    ]
}

#[allow(clippy::too_many_arguments)]
fn crossing_exp(
    out: &mut Output,
    p: &ModelParams<f64>,
    integ: Integrator,
    thetas: &[f64],
    l_c: usize,
    n_t0: usize,
    options: CrossingOptions,
    refine_points: usize,
) -> Result<(), RunError> {
    let results = theta_scan(p, thetas, integ, l_c, n_t0, None);
    let mut ok = Vec::new();
    for (&th, r) in thetas.iter().zip(results) {
        out.status(format!("theta={}", fmt(th)), &r);
        if let Ok(pt) = r {
            ok.push(pt);
        }
    }
    let rows: Vec<Vec<String>> = ok
        .iter()
        .map(|pt| vec![fmt(pt.theta), fmt(pt.ensemble.mean_floquet()), fmt(pt.ensemble.mean_floquet_starter())])
        .collect();
    let path = out.table("resonances.csv", &["theta", "v_c", "v_s"], &rows)?;
    out.plot(&path, "asymptotic velocities", "theta", &["v_c", "v_s"])?;
    if ok.len() < 3 {
        return Ok(());
    }
    let spectra: Vec<_> = ok.iter().map(|pt| pt.spectrum.clone()).collect();
    let report = match detect_avoided_crossings(&spectra, options) {
        Ok(r) => r,
        Err(e) => {
            out.points.push(PointStatus { point: "crossing-detection".into(), ok: false, error: Some(e.to_string()) });
            return Ok(());
        }
    };
    let mut qrows = Vec::new();
    for (i, s) in spectra.iter().enumerate() {
        for (c, &idx) in report.curves[i].iter().enumerate() {
            qrows.push(vec![fmt(s.theta), c.to_string(), s.k_labels[idx].to_string(), fmt(s.quasienergies[idx])]);
        }
    }
    out.table("quasienergies.csv", &["theta", "curve", "k_block", "quasienergy"], &qrows)?;

    let mut crows: Vec<Vec<String>> = report.crossings.iter().map(|c| crossing_row(c, "coarse")).collect();
    if refine_points > 0 {
        let v: Vec<f64> = ok.iter().map(|pt| pt.ensemble.mean_floquet()).collect();
        let n = v.len();
        for peak in resonance_peaks(&v, 3.0, true) {
            let nearest = report
                .crossings
                .iter()
                .enumerate()
                .filter(|(_, c)| c.kind == CrossingKind::Avoided && grid_distance(c.grid_index, peak, n, true) <= 1)
                .min_by(|a, b| a.1.gap.total_cmp(&b.1.gap));
            let Some((idx, _)) = nearest else { continue };
            let refined = refine_crossing(&report, idx, refine_points, options, |th| spectrum_at(&p.with_theta(th), integ));
            out.status(format!("refine-theta={}", fmt(ok[peak].theta)), &refined);
            if let Ok(r) = refined {
                crows.extend(r.nested.iter().map(|c| crossing_row(c, &format!("nested-in-{idx}"))));
            }
        }
    }
    out.table(
        "crossings.csv",
        &["theta", "grid_index", "curve_a", "curve_b", "block_a", "block_b", "kind", "gap", "t_obs", "source"],
        &crows,
    )?;
    Ok(())
}
