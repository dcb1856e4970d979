use crate::error::{BenchError, Result};

pub const PRESET_NAMES: [&str; 4] = ["fig2-convergence", "fig3-snr", "fig4-pilots", "fig5-vr-sparsity"];

/// Config layer for a named preset.
pub fn preset(name: &str) -> Result<&'static str> {
    Ok(match name {
        "fig2-convergence" => {
            r#"
[experiment]
name = "fig2-convergence"
sweep = "iterations"
values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0, 13.0, 14.0, 15.0, 16.0, 17.0, 18.0, 19.0, 20.0,
          21.0, 22.0, 23.0, 24.0, 25.0, 26.0, 27.0, 28.0, 29.0, 30.0, 31.0, 32.0, 33.0, 34.0, 35.0, 36.0, 37.0, 38.0, 39.0, 40.0]
trials = 50
estimators = ["tsjbe", "tsjbe-novr", "omp", "sbl"]
"#
        }
        "fig3-snr" => {
            r#"
[experiment]
name = "fig3-snr"
sweep = "snr_db"
values = [0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
"#
        }
        "fig4-pilots" => {
            r#"
[experiment]
name = "fig4-pilots"
sweep = "pilots"
values = [16.0, 32.0, 48.0, 64.0, 80.0, 96.0]
"#
        }
        "fig5-vr-sparsity" => {
            r#"
[experiment]
name = "fig5-vr-sparsity"
sweep = "vr_sparsity"
values = [0.5, 0.625, 0.75, 0.875, 1.0]
"#
        }
        other => {
            return Err(BenchError::config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESET_NAMES.join(", ")
            )))
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentSpec, SweepVar};

    #[test]
    fn every_preset_is_valid() {
        let sweeps: Vec<SweepVar> = PRESET_NAMES
            .iter()
            .map(|p| ExperimentSpec::layered(&[preset(p).unwrap()]).unwrap().experiment.sweep)
            .collect();
        assert_eq!(sweeps, [SweepVar::Iterations, SweepVar::SnrDb, SweepVar::Pilots, SweepVar::VrSparsity]);
        assert!(preset("fig9").is_err());
    }
}
