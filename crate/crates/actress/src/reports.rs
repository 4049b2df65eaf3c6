//! CSV reports. Every writer has a parser and the pair round-trips exactly:
//! floats use the shortest representation that parses back to the same bits.
//!
//! * `stages.csv`: `stage,pool_size,selected,mean_fused,steps,acc_regression,acc_quantized`
//!   with empty accuracy cells when no test set was given.
//! * `losses.csv`: `stage,epoch,loss`.
//! * `pseudo/stage<m>.csv`: `sample_id,cx,cy,w,h,qx,qy,qw,qh,faith,robust,conf,faith_degenerate,fused,selected`.
//! * `curves.csv`: `ranker,top50,top40,top30,top20,top10,auc`, accuracies in percent.
//! * `ablation.csv`: `metrics,selected,mean_fused,pseudo_acc,acc_regression,acc_quantized`.

use std::fmt::Write as _;

use actress_core::curation::{MetricSet, PseudoLabel, ScoreTriple};
use actress_core::evalreport::{AblationReport, Accuracy, CurveRow, QualityCurve, Ranker, CURVE_THRESHOLDS};
use actress_core::geometry::{Box, QuantizedBox};
use actress_core::trainer::StageReport;

use crate::error::{Error, Result};

pub const STAGES_HEADER: &str = "stage,pool_size,selected,mean_fused,steps,acc_regression,acc_quantized";
pub const LOSSES_HEADER: &str = "stage,epoch,loss";
pub const PSEUDO_HEADER: &str = "sample_id,cx,cy,w,h,qx,qy,qw,qh,faith,robust,conf,faith_degenerate,fused,selected";
pub const CURVES_HEADER: &str = "ranker,top50,top40,top30,top20,top10,auc";
pub const ABLATION_HEADER: &str = "metrics,selected,mean_fused,pseudo_acc,acc_regression,acc_quantized";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

struct Rows<'a> {
    what: &'a str,
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Rows<'a> {
    fn new(what: &'a str, text: &'a str, header: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == header => Ok(Self { what, lines }),
            _ => Err(Error::parse(what, 1, format!("expected header `{header}`"))),
        }
    }

    fn each<T>(self, width: usize, mut f: impl FnMut(&[&str]) -> std::result::Result<T, String>) -> Result<Vec<T>> {
        let what = self.what;
        self.lines
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                let cells: Vec<&str> = l.split(',').collect();
                if cells.len() != width {
                    return Err(Error::parse(what, i + 1, format!("expected {width} cells, found {}", cells.len())));
                }
                f(&cells).map_err(|m| Error::parse(what, i + 1, m))
            })
            .collect()
    }
}

fn num<T: std::str::FromStr>(s: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("`{s}`: {e}"))
}

fn opt_num(s: &str) -> std::result::Result<Option<f64>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        num(s).map(Some)
    }
}

fn stage_row(r: &StageReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.stage,
        r.pool_size,
        r.selected,
        r.mean_fused,
        r.steps,
        opt(r.accuracy.map(|a| a.regression)),
        opt(r.accuracy.map(|a| a.quantized))
    )
}

pub fn stages_csv(reports: &[StageReport]) -> String {
    let mut s = format!("{STAGES_HEADER}\n");
    for r in reports {
        s.push_str(&stage_row(r));
        s.push('\n');
    }
    s
}

pub fn losses_csv(reports: &[StageReport]) -> String {
    let mut s = format!("{LOSSES_HEADER}\n");
    for r in reports {
        for (e, l) in r.epoch_losses.iter().enumerate() {
            let _ = writeln!(s, "{},{e},{l}", r.stage);
        }
    }
    s
}

/// Rebuilds reports from `stages.csv` and `losses.csv`.
pub fn parse_reports(stages: &str, losses: &str) -> Result<Vec<StageReport>> {
    let mut reports = Rows::new("stages.csv", stages, STAGES_HEADER)?.each(7, |c| {
        let acc = match (opt_num(c[5])?, opt_num(c[6])?) {
            (Some(regression), Some(quantized)) => Some(Accuracy { regression, quantized }),
            (None, None) => None,
            _ => return Err("accuracy cells must both be set or both empty".into()),
        };
        Ok(StageReport {
            stage: num(c[0])?,
            pool_size: num(c[1])?,
            selected: num(c[2])?,
            mean_fused: num(c[3])?,
            steps: num(c[4])?,
            epoch_losses: Vec::new(),
            accuracy: acc,
        })
    })?;
    let rows = Rows::new("losses.csv", losses, LOSSES_HEADER)?
        .each(3, |c| Ok((num::<usize>(c[0])?, num::<usize>(c[1])?, num::<f64>(c[2])?)))?;
    for (stage, epoch, loss) in rows {
        let r = reports
            .iter_mut()
            .find(|r| r.stage == stage)
            .ok_or_else(|| Error::Invalid(format!("losses.csv names unknown stage {stage}")))?;
        if epoch != r.epoch_losses.len() {
            return Err(Error::Invalid(format!("losses.csv: stage {stage} epochs out of order")));
        }
        r.epoch_losses.push(loss);
    }
    Ok(reports)
}

/// One report as a single line, used inside checkpoints.
pub fn report_line(r: &StageReport) -> String {
    let losses: Vec<String> = r.epoch_losses.iter().map(f64::to_string).collect();
    format!("{};{}", stage_row(r), losses.join(" "))
}

pub fn parse_report_line(line: &str) -> Result<StageReport> {
    let (row, losses) = line.split_once(';').ok_or_else(|| Error::parse("report", 1, "missing `;`"))?;
    let mut r = parse_reports(&format!("{STAGES_HEADER}\n{row}\n"), &format!("{LOSSES_HEADER}\n"))?.remove(0);
    r.epoch_losses =
        losses.split_whitespace().map(|v| num(v).map_err(|m| Error::parse("report", 1, m))).collect::<Result<_>>()?;
    Ok(r)
}

pub fn pseudo_csv(pool: &[PseudoLabel], selected: &[bool]) -> String {
    let mut s = format!("{PSEUDO_HEADER}\n");
    for (p, &sel) in pool.iter().zip(selected) {
        let b = p.pred_box;
        let q = p.qbox;
        let t = p.scores;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            p.sample_id,
            b.cx,
            b.cy,
            b.w,
            b.h,
            q.bx,
            q.by,
            q.bw,
            q.bh,
            t.faith,
            t.robust,
            t.conf,
            p.faith_degenerate as u8,
            p.i_act,
            sel as u8
        );
    }
    s
}

pub fn parse_pseudo(text: &str) -> Result<(Vec<PseudoLabel>, Vec<bool>)> {
    let flag = |s: &str| match s {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(format!("expected 0 or 1, found `{s}`")),
    };
    let rows = Rows::new("pseudo manifest", text, PSEUDO_HEADER)?.each(15, |c| {
        let label = PseudoLabel {
            sample_id: num(c[0])?,
            pred_box: Box::new(num(c[1])?, num(c[2])?, num(c[3])?, num(c[4])?),
            qbox: QuantizedBox::from_array([num(c[5])?, num(c[6])?, num(c[7])?, num(c[8])?]),
            scores: ScoreTriple { faith: num(c[9])?, robust: num(c[10])?, conf: num(c[11])? },
            faith_degenerate: flag(c[12])?,
            i_act: num(c[13])?,
        };
        Ok((label, flag(c[14])?))
    })?;
    Ok(rows.into_iter().unzip())
}

pub fn curves_csv(curve: &QualityCurve) -> String {
    let mut s = format!("{CURVES_HEADER}\n");
    for row in &curve.rows {
        let acc: Vec<String> = row.accuracy.iter().map(f64::to_string).collect();
        let _ = writeln!(s, "{},{},{}", row.ranker.name(), acc.join(","), curve.auc(row.ranker).unwrap_or(0.0));
    }
    s
}

pub fn parse_curves(text: &str) -> Result<QualityCurve> {
    let rows = Rows::new("curves.csv", text, CURVES_HEADER)?.each(7, |c| {
        Ok(CurveRow {
            ranker: Ranker::from_name(c[0]).ok_or_else(|| format!("unknown ranker `{}`", c[0]))?,
            accuracy: c[1..6].iter().map(|v| num(v)).collect::<std::result::Result<_, _>>()?,
        })
    })?;
    Ok(QualityCurve { thresholds: CURVE_THRESHOLDS.to_vec(), rows })
}

pub fn ablation_csv(reports: &[AblationReport]) -> String {
    let mut s = format!("{ABLATION_HEADER}\n");
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.metrics.label(),
            r.stage.selected,
            r.stage.mean_fused,
            opt(r.pseudo_accuracy),
            opt(r.stage.accuracy.map(|a| a.regression)),
            opt(r.stage.accuracy.map(|a| a.quantized))
        );
    }
    s
}

/// Ablation rows as `(metrics, selected, mean_fused, pseudo_acc, accuracy)`.
pub type AblationRow = (MetricSet, usize, f64, Option<f64>, Option<Accuracy>);

pub fn parse_ablation(text: &str) -> Result<Vec<AblationRow>> {
    Rows::new("ablation.csv", text, ABLATION_HEADER)?.each(6, |c| {
        let acc = match (opt_num(c[4])?, opt_num(c[5])?) {
            (Some(regression), Some(quantized)) => Some(Accuracy { regression, quantized }),
            _ => None,
        };
        Ok((
            MetricSet::parse(c[0]).ok_or_else(|| format!("bad metric set `{}`", c[0]))?,
            num(c[1])?,
            num(c[2])?,
            opt_num(c[3])?,
            acc,
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(stage: usize, acc: bool) -> StageReport {
        StageReport {
            stage,
            pool_size: 90,
            selected: 9,
            mean_fused: 0.1 + stage as f64 / 3.0,
            steps: 123,
            epoch_losses: vec![6.25, 1.0 / 3.0, 0.1],
            accuracy: acc.then_some(Accuracy { regression: 41.2, quantized: 1.0 / 7.0 }),
        }
    }

    #[test]
    fn stage_reports_round_trip() {
        let reports = vec![report(0, true), report(1, false), report(2, true)];
        let back = parse_reports(&stages_csv(&reports), &losses_csv(&reports)).unwrap();
        assert_eq!(back, reports);
        for r in &reports {
            assert_eq!(&parse_report_line(&report_line(r)).unwrap(), r);
        }
    }

    #[test]
    fn pseudo_round_trip() {
        let pool = vec![PseudoLabel {
            sample_id: 4,
            pred_box: Box::new(0.1, 0.2, 0.3, 0.4),
            qbox: QuantizedBox::from_array([3, 6, 9, 12]),
            scores: ScoreTriple { faith: 0.5, robust: -0.25, conf: 1.0 / 3.0 },
            i_act: 0.75,
            faith_degenerate: true,
        }];
        let text = pseudo_csv(&pool, &[true]);
        assert_eq!(parse_pseudo(&text).unwrap(), (pool, vec![true]));
    }

    #[test]
    fn curves_round_trip() {
        let curve = QualityCurve {
            thresholds: CURVE_THRESHOLDS.to_vec(),
            rows: Ranker::STANDARD.iter().map(|&r| CurveRow { ranker: r, accuracy: vec![10.0, 20.5, 30.0, 1.0 / 3.0, 50.0] }).collect(),
        };
        let text = curves_csv(&curve);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(parse_curves(&text).unwrap(), curve);
        assert!(parse_curves("bad\n").is_err());
    }
}
