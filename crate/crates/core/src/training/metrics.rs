use crate::data::window::Channel;
use crate::data::{NormStats, WindowSample};
use crate::error::{contract, Result};
use crate::model::Model;

/// Accuracy of one evaluation, pooled over every (window, step) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    /// mg/dL
    pub rmse: f64,
    /// mg/dL
    pub mae: f64,
    pub pearson: f64,
    pub n_windows: usize,
    /// Set when predictions or targets had zero variance; `pearson` is then 0.
    pub degenerate: bool,
    /// RMSE at each forecast step, in mg/dL.
    pub per_step_rmse: Vec<f64>,
}

pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    (pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / n).sqrt()
}

pub fn mae(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n
}

/// Sample correlation, or `None` when either side is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Metrics over flat row-major `n_windows × horizon` predictions and targets.
pub fn metrics_report(pred: &[f64], target: &[f64], horizon: usize) -> Result<MetricsReport> {
    contract!(
        pred.len() == target.len(),
        "{} predictions for {} targets",
        pred.len(),
        target.len()
    );
    contract!(!pred.is_empty(), "cannot score an empty set");
    contract!(
        horizon >= 1 && pred.len().is_multiple_of(horizon),
        "{} values do not divide into rows of {horizon}",
        pred.len()
    );
    let per_step_rmse = (0..horizon)
        .map(|s| {
            let p: Vec<f64> = pred.iter().skip(s).step_by(horizon).copied().collect();
            let t: Vec<f64> = target.iter().skip(s).step_by(horizon).copied().collect();
            rmse(&p, &t)
        })
        .collect();
    let r = pearson(pred, target);
    Ok(MetricsReport {
        rmse: rmse(pred, target),
        mae: mae(pred, target),
        pearson: r.unwrap_or(0.0),
        n_windows: pred.len() / horizon,
        degenerate: r.is_none(),
        per_step_rmse,
    })
}

/// Scores `model` on `windows`, forecasts converted back to mg/dL with the
/// glucose statistics in `stats`.
pub fn evaluate(model: &Model, windows: &[WindowSample], stats: &NormStats) -> Result<MetricsReport> {
    contract!(!windows.is_empty(), "cannot evaluate on an empty test set");
    let pred = predict_mg_dl(model, windows, stats)?;
    let target: Vec<f64> = windows.iter().flat_map(|w| w.target.iter().copied()).collect();
    metrics_report(&pred, &target, model.horizon())
}

const EVAL_BATCH: usize = 64;

/// Row-major `windows × horizon` forecasts in mg/dL.
pub fn predict_mg_dl(model: &Model, windows: &[WindowSample], stats: &NormStats) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(windows.len() * model.horizon());
    for chunk in windows.chunks(EVAL_BATCH) {
        for w in chunk {
            contract!(
                w.x_g.len() == model.window() && w.target.len() == model.horizon(),
                "window of {} inputs / {} targets does not fit a model with t={} m={}",
                w.x_g.len(),
                w.target.len(),
                model.window(),
                model.horizon()
            );
        }
        let inputs: Vec<_> = chunk.iter().map(WindowSample::input).collect();
        for row in model.predict(&inputs)? {
            out.extend(row.into_iter().map(|z| stats.denormalize(Channel::Glucose, z)));
        }
    }
    Ok(out)
}

/// Field-wise mean of several reports; window counts are summed.
pub fn mean_report(reports: &[MetricsReport]) -> Option<MetricsReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let avg = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    let steps = first.per_step_rmse.len();
    Some(MetricsReport {
        rmse: avg(|r| r.rmse),
        mae: avg(|r| r.mae),
        pearson: avg(|r| r.pearson),
        n_windows: reports.iter().map(|r| r.n_windows).sum(),
        degenerate: reports.iter().any(|r| r.degenerate),
        per_step_rmse: (0..steps)
            .map(|s| reports.iter().map(|r| r.per_step_rmse[s]).sum::<f64>() / n)
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let r = metrics_report(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 1).unwrap();
        assert_eq!((r.rmse, r.mae, r.pearson), (0.0, 0.0, 1.0));
        assert!(!r.degenerate);
    }

    #[test]
    fn constant_prediction_is_flagged() {
        let r = metrics_report(&[0.0, 0.0], &[3.0, 4.0], 2).unwrap();
        assert!((r.rmse - 12.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.mae, 3.5);
        assert_eq!(r.pearson, 0.0);
        assert!(r.degenerate);
        assert_eq!(r.n_windows, 1);
        assert_eq!(r.per_step_rmse, vec![3.0, 4.0]);
    }

    #[test]
    fn shifted_targets() {
        let p = [1.0, 5.0, 2.0, 8.0];
        let t: Vec<f64> = p.iter().map(|x| x + 2.5).collect();
        let r = metrics_report(&p, &t, 2).unwrap();
        assert_eq!(r.mae, 2.5);
        assert!((r.pearson - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(metrics_report(&[], &[], 1).is_err());
        assert!(metrics_report(&[1.0], &[1.0, 2.0], 1).is_err());
        assert!(metrics_report(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0], 2).is_err());
    }
}
