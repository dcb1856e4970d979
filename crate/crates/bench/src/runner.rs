//! Monte Carlo execution of an [`ExperimentSpec`].

use std::time::Instant;

use hfce_core::dictionary::DictionarySet;
use hfce_core::estimators::{
    oracle_ls, omp_baseline, sbl_baseline, tsjbe, EstimateResult, EstimatorConfig, OmpConfig, SblConfig,
};
use hfce_core::geometry::{observe, sample_paths, sample_vr, synthesize_channel, PathConfig, SystemGeometry};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{EstimatorKind, ExperimentSpec, Scale, SweepVar};
use crate::error::Result;
use crate::table::{RawRow, ResultTable, TimingRow};

/// Per-trial seed from the master seed and the (sweep, trial) position.
pub fn trial_seed(master: u64, sweep_index: usize, trial: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"hfce-trial");
    h.update(master.to_le_bytes());
    h.update((sweep_index as u64).to_le_bytes());
    h.update((trial as u64).to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// `p10` giving stationary visibility `lambda_vr` for a given `p01`.
pub fn p10_for(lambda_vr: f64, p01: f64) -> f64 {
    p01 * (1.0 - lambda_vr) / lambda_vr
}

pub fn geometry_for(scale: Scale) -> SystemGeometry {
    match scale {
        Scale::Desk => SystemGeometry::desk_scale(),
        Scale::Full => SystemGeometry::full_scale(),
    }
}

/// Parameters of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointParams {
    pub snr_db: f64,
    pub pilots: usize,
    pub lambda_vr: f64,
    pub outer_iterations: usize,
}

pub fn point_params(spec: &ExperimentSpec, value: f64) -> PointParams {
    let c = &spec.channel;
    let mut p = PointParams {
        snr_db: c.snr_db,
        pilots: c.pilots,
        lambda_vr: c.lambda_vr,
        outer_iterations: spec.estimator.outer_iterations,
    };
    match spec.experiment.sweep {
        SweepVar::SnrDb => p.snr_db = value,
        SweepVar::Pilots => p.pilots = value as usize,
        SweepVar::VrSparsity => p.lambda_vr = value,
        // one run to the last requested count; earlier counts come from its trace
        SweepVar::Iterations => {
            p.outer_iterations = spec.experiment.values.iter().fold(0.0f64, |a, &b| a.max(b)) as usize;
        }
    }
    p
}

pub fn estimator_config(spec: &ExperimentSpec, dict: &DictionarySet, p: &PointParams) -> Result<EstimatorConfig> {
    let c = &spec.channel;
    let s = &spec.estimator;
    let mut cfg = EstimatorConfig::new(c.user_paths, c.bs_paths, dict, p.lambda_vr, c.p01)?;
    cfg.i_out = p.outer_iterations;
    cfg.vbi.i_x = s.gain_iterations;
    cfg.vbi.i_g = s.gradient_steps;
    cfg.vr.i_v = s.vr_iterations;
    cfg.enable_offgrid = s.offgrid;
    Ok(cfg)
}

struct Context<'a> {
    spec: &'a ExperimentSpec,
    geom: SystemGeometry,
    dict: DictionarySet,
}

type TrialOutput = (Vec<RawRow>, Vec<TimingRow>);

/// NMSE after `count` iterations, when the estimator tracks it.
fn nmse_at(res: &EstimateResult, count: usize) -> Option<f64> {
    if res.iteration_trace.is_empty() {
        return res.nmse;
    }
    let i = count.min(res.iteration_trace.len()) - 1;
    res.iteration_trace[i].nmse.or(res.nmse)
}

fn run_trial(ctx: &Context, sweep_index: usize, trial: usize) -> Result<TrialOutput> {
    let spec = ctx.spec;
    let value = spec.experiment.values[sweep_index];
    let p = point_params(spec, value);
    let seed = trial_seed(spec.experiment.seed, sweep_index, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = &spec.channel;

    let drawn = (|| -> hfce_core::Result<_> {
        let path_cfg = PathConfig {
            l_u: c.user_paths,
            l_rb: c.bs_paths,
            ..PathConfig::default()
        };
        let paths = sample_paths(&ctx.geom, &path_cfg, &mut rng)?;
        let vr = sample_vr(&ctx.geom, c.user_paths, c.p01, p10_for(p.lambda_vr, c.p01), &mut rng)?;
        let ch = synthesize_channel(&ctx.geom, &paths, &vr)?;
        let obs = observe(&ch, p.pilots, p.snr_db, &mut rng)?;
        Ok((ch, obs))
    })();

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    let Ok((ch, obs)) = drawn else {
        for &e in &spec.experiment.estimators {
            rows.push(RawRow::failed(e, value, trial));
        }
        return Ok((rows, timings));
    };
    let truth = Some(&ch.h_cascaded);
    let cfg = estimator_config(spec, &ctx.dict, &p)?;

    for &e in &spec.experiment.estimators {
        let start = Instant::now();
        let res = match e {
            EstimatorKind::Tsjbe => tsjbe(&obs, &ctx.dict, &cfg, truth),
            EstimatorKind::TsjbeNoVr => {
                let novr = EstimatorConfig {
                    enable_vr: false,
                    ..cfg
                };
                tsjbe(&obs, &ctx.dict, &novr, truth)
            }
            EstimatorKind::Omp => {
                let omp = OmpConfig {
                    sparsity: spec.estimator.omp_sparsity.unwrap_or(c.user_paths * c.bs_paths),
                    residual_tol: spec.estimator.omp_residual,
                };
                omp_baseline(&obs, &ctx.dict, &omp, truth)
            }
            EstimatorKind::Sbl => {
                let sbl = SblConfig {
                    max_iter: spec.estimator.sbl_max_iterations,
                    tol: spec.estimator.sbl_tolerance,
                };
                sbl_baseline(&obs, &ctx.dict, &sbl, truth)
            }
            EstimatorKind::Oracle => oracle_ls(&obs, &ctx.geom, &ch, truth),
        };
        let wall = start.elapsed().as_secs_f64();
        match res {
            Ok(r) => {
                if spec.experiment.sweep == SweepVar::Iterations {
                    for &v in &spec.experiment.values {
                        rows.push(RawRow {
                            estimator: e,
                            value: v,
                            trial,
                            nmse: nmse_at(&r, v as usize),
                            converged: r.converged,
                            failed: r.failure.is_some(),
                        });
                    }
                } else {
                    rows.push(RawRow {
                        estimator: e,
                        value,
                        trial,
                        nmse: r.nmse,
                        converged: r.converged,
                        failed: r.failure.is_some(),
                    });
                }
            }
            Err(_) => rows.push(RawRow::failed(e, value, trial)),
        }
        timings.push(TimingRow {
            estimator: e,
            value,
            trial,
            wall_time_s: wall,
        });
    }
    Ok((rows, timings))
}

/// Run every (sweep point, trial) pair. Rows are ordered by sweep index,
/// then trial, then the configured estimator order, whatever the
/// execution order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    spec.validate()?;
    let geom = geometry_for(spec.geometry.scale);
    let dict = DictionarySet::for_user_range(&geom)?;
    let ctx = Context { spec, geom, dict };
    let points = if spec.experiment.sweep == SweepVar::Iterations {
        1
    } else {
        spec.experiment.values.len()
    };
    let jobs: Vec<(usize, usize)> = (0..points)
        .flat_map(|s| (0..spec.experiment.trials).map(move |t| (s, t)))
        .collect();
    let outputs: Vec<TrialOutput> = jobs
        .par_iter()
        .map(|&(s, t)| run_trial(&ctx, s, t))
        .collect::<Result<_>>()?;
    let mut table = ResultTable::new(spec.experiment.sweep);
    for (rows, timings) in outputs {
        table.rows.extend(rows);
        table.timings.extend(timings);
    }
    if spec.experiment.sweep == SweepVar::Iterations {
        // group by iteration count rather than by trial
        let order = |v: f64| spec.experiment.values.iter().position(|&x| x == v).unwrap_or(usize::MAX);
        table.rows.sort_by_key(|r| (order(r.value), r.trial));
    }
    Ok(table)
}
