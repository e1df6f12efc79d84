//! Ablation sweeps: rerun evaluation while varying one voting or sampling
//! parameter, collecting a metric row per grid point.
//!
//! The sweep owns only the grid bookkeeping and the CSV schema; the actual
//! model evaluation is injected as a closure so the sweep logic stays
//! independent of any particular network. `pts_per_sec` records scenes
//! processed per second, the frame-rate analogue: raw point throughput would
//! rise as the grid step shrinks (the fixed per-scene encoder pass amortizes
//! over ~8x more points per halving), which would invert the expected
//! ordering of the column.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::pose_field::VotingParams;
use crate::scalar::{rl, Real};

/// The parameter axis being swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    /// Near-surface clamping distance delta, mm.
    Delta,
    /// KNN count used when building targets.
    K,
    /// Fraction of valid voters kept per joint.
    Fraction,
    /// Inference grid step, mm.
    Step,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Delta => "delta",
            SweepAxis::K => "k",
            SweepAxis::Fraction => "fraction",
            SweepAxis::Step => "step",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "delta" => Ok(SweepAxis::Delta),
            "k" => Ok(SweepAxis::K),
            "fraction" => Ok(SweepAxis::Fraction),
            "step" => Ok(SweepAxis::Step),
            other => Err(Error::Config(format!("unknown sweep axis '{other}'"))),
        }
    }
}

/// One evaluated grid point.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub param_name: String,
    pub param_value: f64,
    pub report: MetricReport,
    /// Scenes processed per second during inference.
    pub pts_per_sec: f64,
    /// Joints across the eval set that produced no valid voters; reported,
    /// not fatal.
    pub invalid_joint_count: usize,
}

/// The evaluator's per-grid-point output.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub report: MetricReport,
    pub pts_per_sec: f64,
    pub invalid_joint_count: usize,
}

/// Runs `evaluate` once per grid value, substituting the value into the base
/// voting parameters (or the grid step) along the chosen axis.
pub fn run_ablation<S, F>(
    axis: SweepAxis,
    values: &[f64],
    base_params: &VotingParams<S>,
    base_step: S,
    mut evaluate: F,
) -> Result<Vec<AblationRow>>
where
    S: Real,
    F: FnMut(&VotingParams<S>, S) -> Result<SweepOutcome>,
{
    if values.is_empty() {
        return Err(Error::Config("empty ablation grid".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut params = base_params.clone();
        let mut step = base_step;
        match axis {
            SweepAxis::Delta => params.delta = rl(value),
            SweepAxis::K => params.k = value as usize,
            SweepAxis::Fraction => params.fraction = rl(value),
            SweepAxis::Step => step = rl(value),
        }
        let out = evaluate(&params, step)?;
        rows.push(AblationRow {
            param_name: axis.name().to_string(),
            param_value: value,
            report: out.report,
            pts_per_sec: out.pts_per_sec,
            invalid_joint_count: out.invalid_joint_count,
        });
    }
    Ok(rows)
}

pub const ABLATION_CSV_HEADER: &str =
    "param_name,param_value,cs_mje,cs_auc,te,de,mje,rs_mje,pts_per_sec,invalid_joint_count";

/// Serializes rows in the fixed CSV schema. Formatting is fixed-precision so
/// identical runs produce identical bytes.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
            row.param_name,
            row.param_value,
            r.cs_mje,
            r.cs_auc,
            r.te,
            r.de,
            r.mje,
            r.rs_mje,
            row.pts_per_sec,
            row.invalid_joint_count
        ));
    }
    out
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(ablation_csv(rows).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricAccumulator;
    use crate::math::Vec3;
    use crate::pose_field::JointSet;

    fn dummy_outcome(shift: f64) -> SweepOutcome {
        let gt = JointSet::new(
            (0..21)
                .map(|i| Vec3::new(i as f64, 0.0, 500.0))
                .collect::<Vec<_>>(),
        );
        let pred = gt.translated(Vec3::new(shift, 0.0, 0.0));
        let mut acc = MetricAccumulator::new();
        acc.add(&pred, &gt).unwrap();
        SweepOutcome {
            report: acc.finish().unwrap(),
            pts_per_sec: 10.0 / (1.0 + shift),
            invalid_joint_count: 0,
        }
    }

    #[test]
    fn one_row_per_grid_value() {
        let base = VotingParams::<f64>::default();
        let rows = run_ablation(
            SweepAxis::Fraction,
            &[0.25, 0.5, 1.0],
            &base,
            16.0,
            |params, _step| {
                assert_eq!(params.delta, base.delta);
                Ok(dummy_outcome(params.fraction))
            },
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].param_name, "fraction");
        assert_eq!(rows[2].param_value, 1.0);
    }

    #[test]
    fn step_axis_substitutes_the_grid_step() {
        let base = VotingParams::<f64>::default();
        let mut seen = Vec::new();
        run_ablation(SweepAxis::Step, &[8.0, 16.0, 32.0], &base, 16.0, |params, step| {
            assert_eq!(params.delta, base.delta);
            seen.push(step);
            Ok(dummy_outcome(step))
        })
        .unwrap();
        assert_eq!(seen, vec![8.0, 16.0, 32.0]);
    }

    #[test]
    fn csv_schema_and_determinism() {
        let base = VotingParams::<f64>::default();
        let run = || {
            run_ablation(SweepAxis::Delta, &[2.5, 5.0], &base, 16.0, |params, _| {
                Ok(dummy_outcome(params.delta))
            })
            .unwrap()
        };
        let a = ablation_csv(&run());
        let b = ablation_csv(&run());
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next().unwrap(), ABLATION_CSV_HEADER);
        let first = lines.next().unwrap();
        assert!(first.starts_with("delta,2.5,"));
        assert_eq!(first.split(',').count(), 10);
    }

    #[test]
    fn empty_grid_rejected_and_axis_names_round_trip() {
        let base = VotingParams::<f64>::default();
        assert!(matches!(
            run_ablation(SweepAxis::K, &[], &base, 16.0, |_, _| Ok(dummy_outcome(1.0))),
            Err(Error::Config(_))
        ));
        for axis in [
            SweepAxis::Delta,
            SweepAxis::K,
            SweepAxis::Fraction,
            SweepAxis::Step,
        ] {
            assert_eq!(SweepAxis::parse(axis.name()).unwrap(), axis);
        }
        assert!(SweepAxis::parse("nonsense").is_err());
    }
}
