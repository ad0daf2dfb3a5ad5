//! Named figure configurations, each at desk or full scale.

use std::f64::consts::PI;
use std::path::PathBuf;

use crate::dynamics::Integrator;
use crate::model::ModelParams;

use super::config::{Experiment, ExperimentConfig, Grid, Scale};

pub const PRESET_NAMES: [&str; 5] = ["fig2", "fig3", "fig4", "fig5", "fig6"];

fn base(name: &str, model: ModelParams<f64>, experiment: Experiment, scale: Scale) -> ExperimentConfig {
    ExperimentConfig {
        name: name.into(),
        model,
        experiment,
        integrator: Integrator::default(),
        output: PathBuf::from("out").join(name),
        workers: None,
        svg: true,
        scale,
    }
}

fn full_circle(count: usize) -> Grid {
    Grid::Linspace { start: -PI, stop: PI, count, endpoint: false }
}

/// The preset `name` at the given scale.
pub fn preset(name: &str, scale: Scale) -> Option<ExperimentConfig> {
    let full = scale == Scale::Full;
    let config = match name {
        "fig2" => base(
            name,
            ModelParams::harmonic_mixing_motor(16, 0.0),
            Experiment::Spectrum { thetas: Grid::Values(vec![0.0, PI / 2.0]), samples_per_period: 128 },
            scale,
        ),
        "fig3" => base(
            name,
            ModelParams::harmonic_mixing_motor(16, 0.0),
            Experiment::ThetaScan { thetas: full_circle(if full { 128 } else { 32 }), l_c: 1, n_t0: 20, horizon: 200 },
            scale,
        ),
        "fig4" => base(
            name,
            ModelParams::resonance_motor(4, 0.0),
            Experiment::CrossingScan {
                thetas: full_circle(if full { 512 } else { 256 }),
                l_c: 1,
                n_t0: 20,
                threshold_fraction: 0.25,
                refine_points: if full { 65 } else { 33 },
            },
            scale,
        ),
        "fig5" => base(
            name,
            ModelParams::harmonic_mixing_motor(4, PI / 2.0),
            Experiment::T0DispersionScan {
                sizes: if full { vec![4, 8, 16, 32, 64] } else { vec![4, 8, 16, 32] },
                l_c: 1,
                n_t0: 20,
                horizon: if full { 500 } else { 200 },
            },
            scale,
        ),
        "fig6" => base(
            name,
            ModelParams::harmonic_mixing_motor(4, PI / 2.0),
            Experiment::LoadScan {
                q: if full { (-20..=20).collect() } else { (-10..=10).collect() },
                r: 10,
                l_c: 1,
                n_t0: 20,
                refine_r: if full { Some(20) } else { None },
            },
            scale,
        ),
        _ => return None,
    };
    Some(config)
}

/// Every preset at the given scale.
pub fn presets(scale: Scale) -> Vec<ExperimentConfig> {
    PRESET_NAMES.iter().filter_map(|n| preset(n, scale)).collect()
}
