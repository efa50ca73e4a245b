//! Video-level scoring and biometric evaluation.
//!
//! Frame scores pool into one score per clip (the mean over the clip's
//! predicted scores). A decision threshold is calibrated on validation data
//! at the equal error rate and then applied unchanged to test data, where
//! errors split into BPCER (bona-fide wrongly rejected) and APCER (attacks
//! wrongly accepted, reported per attack type). ACER averages the two.
//! Throughout, higher score means more bona-fide, and `score >= threshold`
//! accepts. Rates are stored as fractions in [0, 1]; rendering multiplies
//! by 100 and rounds to two decimals, so numeric identities hold exactly on
//! the stored values.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Attack instrument vocabulary used in manifests and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AttackType {
    /// Mannequin head.
    MH,
    /// Laminated 2D tracing paper.
    L2TP,
    /// Plastic mask.
    PlM,
    /// Latex mask.
    LM,
    /// Curved printed photo ("3D curved paper mask").
    #[serde(rename = "3CPM")]
    ThreeCPM,
    /// Printed mask.
    PrM,
    /// Video replay on a screen.
    VR,
    /// Printed photo.
    Pr,
    /// Silicone mask.
    SM,
    /// Photo replay on a screen.
    PR,
    /// Printed 3D layered mask.
    Pr3LM,
}

impl AttackType {
    pub const ALL: [AttackType; 11] = [
        AttackType::MH,
        AttackType::L2TP,
        AttackType::PlM,
        AttackType::LM,
        AttackType::ThreeCPM,
        AttackType::PrM,
        AttackType::VR,
        AttackType::Pr,
        AttackType::SM,
        AttackType::PR,
        AttackType::Pr3LM,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttackType::MH => "MH",
            AttackType::L2TP => "L2TP",
            AttackType::PlM => "PlM",
            AttackType::LM => "LM",
            AttackType::ThreeCPM => "3CPM",
            AttackType::PrM => "PrM",
            AttackType::VR => "VR",
            AttackType::Pr => "Pr",
            AttackType::SM => "SM",
            AttackType::PR => "PR",
            AttackType::Pr3LM => "Pr3LM",
        }
    }

    /// Exact, case-sensitive lookup ("Pr" and "PR" are different attacks).
    pub fn parse(s: &str) -> Option<AttackType> {
        AttackType::ALL.iter().copied().find(|a| a.as_str() == s)
    }
}

impl fmt::Display for AttackType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a clip actually is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClipClass {
    BonaFide,
    Attack(AttackType),
}

impl ClipClass {
    pub fn is_bona_fide(&self) -> bool {
        matches!(self, ClipClass::BonaFide)
    }
}

/// One evaluated clip: its per-frame scores and their mean.
#[derive(Debug, Clone)]
pub struct VideoScore {
    pub clip_id: String,
    pub class: ClipClass,
    pub frame_scores: Vec<f64>,
    pub pooled: f64,
}

impl VideoScore {
    pub fn new(clip_id: impl Into<String>, class: ClipClass, frame_scores: Vec<f64>) -> Result<Self> {
        let pooled = pool_video(&frame_scores)?;
        Ok(VideoScore { clip_id: clip_id.into(), class, frame_scores, pooled })
    }
}

/// Pools a clip's frame scores into its video score: the plain mean.
pub fn pool_video(frame_scores: &[f64]) -> Result<f64> {
    if frame_scores.is_empty() {
        return Err(Error::InvalidArgument("cannot pool an empty score sequence".to_string()));
    }
    if frame_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::nonfinite("frame scores"));
    }
    Ok(frame_scores.iter().sum::<f64>() / frame_scores.len() as f64)
}

/// Outcome of the equal-error-rate sweep on a validation set.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EerResult {
    pub threshold: f64,
    pub eer: f64,
    pub fnr: f64,
    pub fpr: f64,
}

fn split_pooled(scores: &[VideoScore]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut bona = Vec::new();
    let mut attack = Vec::new();
    for s in scores {
        match s.class {
            ClipClass::BonaFide => bona.push(s.pooled),
            ClipClass::Attack(_) => attack.push(s.pooled),
        }
    }
    if bona.is_empty() || attack.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need both classes to evaluate: {} bona-fide, {} attacks",
            bona.len(),
            attack.len()
        )));
    }
    Ok((bona, attack))
}

fn rates_at(bona: &[f64], attack: &[f64], threshold: f64) -> (f64, f64) {
    // Inputs are sorted ascending. Accept means score >= threshold.
    let fnr = bona.partition_point(|s| *s < threshold) as f64 / bona.len() as f64;
    let fpr = (attack.len() - attack.partition_point(|s| *s < threshold)) as f64 / attack.len() as f64;
    (fnr, fpr)
}

/// Sweeps candidate thresholds (midpoints between adjacent distinct pooled
/// scores, plus -inf and +inf sentinels) and returns the one where the
/// false-rejection and false-acceptance rates meet. Ties prefer the lower
/// combined error, then the smaller threshold. With completely
/// non-discriminating scores the sweep lands on a sentinel and the EER is
/// 0.5 by this convention.
pub fn eer_threshold(scores: &[VideoScore]) -> Result<EerResult> {
    let (mut bona, mut attack) = split_pooled(scores)?;
    bona.sort_by(f64::total_cmp);
    attack.sort_by(f64::total_cmp);

    let mut all: Vec<f64> = bona.iter().chain(attack.iter()).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();

    let mut candidates = Vec::with_capacity(all.len() + 1);
    candidates.push(f64::NEG_INFINITY);
    for w in all.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(f64::INFINITY);

    let mut best: Option<EerResult> = None;
    for t in candidates {
        let (fnr, fpr) = rates_at(&bona, &attack, t);
        let cand = EerResult { threshold: t, eer: (fnr + fpr) / 2.0, fnr, fpr };
        let better = match &best {
            None => true,
            Some(b) => {
                let (da, db) = ((fnr - fpr).abs(), (b.fnr - b.fpr).abs());
                da < db || (da == db && cand.eer < b.eer)
            }
        };
        // Candidates ascend, so strict improvement keeps the smallest
        // threshold among exact ties.
        if better {
            best = Some(cand);
        }
    }
    Ok(best.expect("candidate list is never empty"))
}

/// Per-attack line of a report. `acer` pairs this attack's APCER with the
/// global BPCER.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackReportRow {
    pub attack: AttackType,
    pub n: usize,
    pub apcer: f64,
    pub acer: f64,
}

/// Threshold-applied evaluation over a scored set. All rates are fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub threshold: f64,
    pub n_bonafide: usize,
    pub n_attacks: usize,
    pub bpcer: f64,
    pub apcer: f64,
    pub acer: f64,
    pub rows: Vec<AttackReportRow>,
}

/// Applies a fixed threshold: BPCER is the fraction of bona-fide clips
/// scoring below it, APCER the fraction of attacks scoring at or above it
/// (overall and per attack type), ACER their mean.
pub fn classify_and_report(scores: &[VideoScore], threshold: f64) -> Result<MetricsReport> {
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold {threshold} must be finite")));
    }
    let (bona, attack) = split_pooled(scores)?;
    let bpcer = bona.iter().filter(|s| **s < threshold).count() as f64 / bona.len() as f64;
    let apcer = attack.iter().filter(|s| **s >= threshold).count() as f64 / attack.len() as f64;

    let mut rows = Vec::new();
    for kind in AttackType::ALL {
        let of_kind: Vec<f64> = scores
            .iter()
            .filter(|s| s.class == ClipClass::Attack(kind))
            .map(|s| s.pooled)
            .collect();
        if of_kind.is_empty() {
            continue;
        }
        let kind_apcer = of_kind.iter().filter(|s| **s >= threshold).count() as f64 / of_kind.len() as f64;
        rows.push(AttackReportRow {
            attack: kind,
            n: of_kind.len(),
            apcer: kind_apcer,
            acer: (kind_apcer + bpcer) / 2.0,
        });
    }

    Ok(MetricsReport {
        threshold,
        n_bonafide: bona.len(),
        n_attacks: attack.len(),
        bpcer,
        apcer,
        acer: (apcer + bpcer) / 2.0,
        rows,
    })
}

/// One operating point of a ROC curve. Positive class is bona-fide, so
/// `tpr` is the bona-fide acceptance rate and `fpr` the attack acceptance
/// rate at `threshold`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over raw pooled scores: one point per distinct score value (as the
/// threshold), starting from (0, 0) at +inf, ordered by ascending FPR down
/// to (1, 1). AUC is the trapezoidal integral, which equals the
/// Mann-Whitney statistic with ties counted half.
pub fn roc_curve(bona: &[f64], attack: &[f64]) -> Result<RocCurve> {
    if bona.is_empty() || attack.is_empty() {
        return Err(Error::InvalidArgument("roc_curve needs both classes".to_string()));
    }
    if bona.iter().chain(attack).any(|s| !s.is_finite()) {
        return Err(Error::nonfinite("roc scores"));
    }
    let mut sb = bona.to_vec();
    let mut sa = attack.to_vec();
    sb.sort_by(f64::total_cmp);
    sa.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = sb.iter().chain(sa.iter()).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let mut points = vec![RocPoint { fpr: 0.0, tpr: 0.0, threshold: f64::INFINITY }];
    for t in thresholds.iter().rev() {
        let tpr = (sb.len() - sb.partition_point(|s| *s < *t)) as f64 / sb.len() as f64;
        let fpr = (sa.len() - sa.partition_point(|s| *s < *t)) as f64 / sa.len() as f64;
        points.push(RocPoint { fpr, tpr, threshold: *t });
    }

    let mut auc = 0.0;
    for w in points.windows(2) {
        auc += (w[1].fpr - w[0].fpr) * (w[0].tpr + w[1].tpr) / 2.0;
    }
    Ok(RocCurve { points, auc })
}

/// Aggregate plus per-attack curves (each attack against all bona-fide),
/// and a vertically averaged mean of the per-attack curves on a fixed FPR
/// grid.
#[derive(Debug, Clone)]
pub struct RocReport {
    pub aggregate: RocCurve,
    pub per_attack: Vec<(AttackType, RocCurve)>,
    pub mean: Vec<(f64, f64)>,
}

fn tpr_at(curve: &RocCurve, fpr: f64) -> f64 {
    // Step interpolation: best TPR reachable without exceeding this FPR.
    let mut tpr = 0.0;
    for p in &curve.points {
        if p.fpr <= fpr + 1e-12 && p.tpr > tpr {
            tpr = p.tpr;
        }
    }
    tpr
}

pub fn roc_report(scores: &[VideoScore]) -> Result<RocReport> {
    let (bona, attack) = split_pooled(scores)?;
    let aggregate = roc_curve(&bona, &attack)?;

    let mut per_attack = Vec::new();
    for kind in AttackType::ALL {
        let of_kind: Vec<f64> = scores
            .iter()
            .filter(|s| s.class == ClipClass::Attack(kind))
            .map(|s| s.pooled)
            .collect();
        if !of_kind.is_empty() {
            per_attack.push((kind, roc_curve(&bona, &of_kind)?));
        }
    }

    let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
    let mean = grid
        .into_iter()
        .map(|g| {
            let avg = per_attack.iter().map(|(_, c)| tpr_at(c, g)).sum::<f64>()
                / per_attack.len().max(1) as f64;
            (g, avg)
        })
        .collect();

    Ok(RocReport { aggregate, per_attack, mean })
}

/// Calibration artifact produced from validation data and consumed by eval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub eer: f64,
    pub n_val: usize,
}

fn pct(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

/// Plain-text report table, one line per attack type plus a total line.
pub fn render_table(report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!("threshold: {:.6} (score >= threshold accepts)\n", report.threshold));
    out.push_str(&format!(
        "{:<8} {:>6} {:>9} {:>9} {:>9}\n",
        "attack", "n", "APCER%", "BPCER%", "ACER%"
    ));
    for row in &report.rows {
        out.push_str(&format!(
            "{:<8} {:>6} {:>9} {:>9} {:>9}\n",
            row.attack.as_str(),
            row.n,
            pct(row.apcer),
            pct(report.bpcer),
            pct(row.acer)
        ));
    }
    out.push_str(&format!(
        "{:<8} {:>6} {:>9} {:>9} {:>9}\n",
        "total",
        report.n_attacks,
        pct(report.apcer),
        pct(report.bpcer),
        pct(report.acer)
    ));
    out
}

/// CSV twin of the table: `row,n,apcer,bpcer,acer` with percentages.
pub fn report_csv(report: &MetricsReport) -> String {
    let mut out = String::from("row,n,apcer,bpcer,acer\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.attack.as_str(),
            row.n,
            pct(row.apcer),
            pct(report.bpcer),
            pct(row.acer)
        ));
    }
    out.push_str(&format!(
        "total,{},{},{},{}\n",
        report.n_attacks,
        pct(report.apcer),
        pct(report.bpcer),
        pct(report.acer)
    ));
    out
}

fn fmt_threshold(t: f64) -> String {
    if t == f64::INFINITY {
        "inf".to_string()
    } else if t == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        format!("{t:.6}")
    }
}

/// Aggregate ROC as CSV: `fpr,tpr,threshold`.
pub fn roc_csv(curve: &RocCurve) -> String {
    let mut out = String::from("fpr,tpr,threshold\n");
    for p in &curve.points {
        out.push_str(&format!("{:.6},{:.6},{}\n", p.fpr, p.tpr, fmt_threshold(p.threshold)));
    }
    out
}

const SVG_PALETTE: [&str; 11] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf", "#4c3b8f",
];

/// Self-contained SVG of the per-attack ROC curves plus their mean.
pub fn render_roc_svg(report: &RocReport) -> String {
    let (w, h) = (640.0, 480.0);
    let (ml, mr, mt, mb) = (60.0, 170.0, 20.0, 50.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let px = |fpr: f64| ml + fpr * pw;
    let py = |tpr: f64| mt + (1.0 - tpr) * ph;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n"
    ));
    s.push_str(&format!(
        "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    ));
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            px(f), py(0.0), px(f), py(1.0)
        ));
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            px(0.0), py(f), px(1.0), py(f)
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{:.1}</text>\n",
            px(f), py(0.0) + 16.0, f
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{:.1}</text>\n",
            px(0.0) - 6.0, py(f) + 4.0, f
        ));
    }
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#999999\" stroke-dasharray=\"4 4\"/>\n",
        px(0.0), py(0.0), px(1.0), py(1.0)
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">attack acceptance rate (APCER)</text>\n",
        px(0.5), h - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"14\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 {:.2})\">bona-fide acceptance rate</text>\n",
        py(0.5), py(0.5)
    ));

    let polyline = |curve: &RocCurve| -> String {
        curve
            .points
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(p.fpr), py(p.tpr)))
            .collect::<Vec<_>>()
            .join(" ")
    };

    let mut legend_y = mt + 10.0;
    for (i, (kind, curve)) in report.per_attack.iter().enumerate() {
        let color = SVG_PALETTE[i % SVG_PALETTE.len()];
        s.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            polyline(curve)
        ));
        s.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{legend_y:.2}\" x2=\"{:.2}\" y2=\"{legend_y:.2}\" stroke=\"{color}\" stroke-width=\"3\"/>\n",
            w - mr + 10.0,
            w - mr + 34.0
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">{} (AUC {:.3})</text>\n",
            w - mr + 40.0,
            legend_y + 4.0,
            kind.as_str(),
            curve.auc
        ));
        legend_y += 18.0;
    }

    let mean_pts: String = report
        .mean
        .iter()
        .map(|(f, t)| format!("{:.2},{:.2}", px(*f), py(*t)))
        .collect::<Vec<_>>()
        .join(" ");
    s.push_str(&format!(
        "<polyline points=\"{mean_pts}\" fill=\"none\" stroke=\"black\" stroke-width=\"2\" stroke-dasharray=\"6 3\"/>\n"
    ));
    s.push_str(&format!(
        "<line x1=\"{:.2}\" y1=\"{legend_y:.2}\" x2=\"{:.2}\" y2=\"{legend_y:.2}\" stroke=\"black\" stroke-width=\"3\" stroke-dasharray=\"6 3\"/>\n",
        w - mr + 10.0,
        w - mr + 34.0
    ));
    s.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\">mean</text>\n",
        w - mr + 40.0,
        legend_y + 4.0
    ));
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vs(id: &str, class: ClipClass, pooled: f64) -> VideoScore {
        VideoScore::new(id, class, vec![pooled]).unwrap()
    }

    #[test]
    fn pooling_is_the_mean() {
        assert_eq!(pool_video(&[0.2, 0.4, 0.9]).unwrap(), 0.5);
        assert!(pool_video(&[]).is_err());
        assert!(pool_video(&[f64::NAN]).is_err());
    }

    #[test]
    fn attack_names_round_trip_and_stay_case_sensitive() {
        for kind in AttackType::ALL {
            assert_eq!(AttackType::parse(kind.as_str()), Some(kind));
        }
        assert_ne!(AttackType::parse("Pr"), AttackType::parse("PR"));
        assert_eq!(AttackType::parse("3CPM"), Some(AttackType::ThreeCPM));
        assert_eq!(serde_json::to_string(&AttackType::ThreeCPM).unwrap(), "\"3CPM\"");
    }

    #[test]
    fn eer_on_separable_scores_is_zero() {
        let scores = vec![
            vs("b1", ClipClass::BonaFide, 0.8),
            vs("b2", ClipClass::BonaFide, 0.9),
            vs("a1", ClipClass::Attack(AttackType::Pr), 0.1),
            vs("a2", ClipClass::Attack(AttackType::Pr), 0.2),
        ];
        let r = eer_threshold(&scores).unwrap();
        assert_eq!(r.eer, 0.0);
        assert!(r.threshold > 0.2 && r.threshold < 0.8);
    }

    #[test]
    fn eer_on_identical_scores_is_half() {
        let scores = vec![
            vs("b", ClipClass::BonaFide, 0.5),
            vs("a", ClipClass::Attack(AttackType::VR), 0.5),
        ];
        let r = eer_threshold(&scores).unwrap();
        assert_eq!(r.eer, 0.5);
    }

    #[test]
    fn eer_requires_both_classes() {
        let scores = vec![vs("b", ClipClass::BonaFide, 0.5)];
        assert!(eer_threshold(&scores).is_err());
    }

    #[test]
    fn report_counts_errors_per_side() {
        // 2 of 3 bona-fide below threshold, 1 of 4 attacks at or above.
        let scores = vec![
            vs("b1", ClipClass::BonaFide, 0.3),
            vs("b2", ClipClass::BonaFide, 0.4),
            vs("b3", ClipClass::BonaFide, 0.9),
            vs("a1", ClipClass::Attack(AttackType::Pr), 0.1),
            vs("a2", ClipClass::Attack(AttackType::Pr), 0.2),
            vs("a3", ClipClass::Attack(AttackType::VR), 0.7),
            vs("a4", ClipClass::Attack(AttackType::VR), 0.2),
        ];
        let r = classify_and_report(&scores, 0.5).unwrap();
        assert!((r.bpcer - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.apcer - 0.25).abs() < 1e-15);
        assert_eq!(r.acer, (r.apcer + r.bpcer) / 2.0);
        let vr = r.rows.iter().find(|row| row.attack == AttackType::VR).unwrap();
        assert_eq!(vr.n, 2);
        assert!((vr.apcer - 0.5).abs() < 1e-15);
        assert_eq!(vr.acer, (vr.apcer + r.bpcer) / 2.0);
        assert!(classify_and_report(&scores, f64::INFINITY).is_err());
    }

    #[test]
    fn roc_hits_corners_and_auc_matches_perfect_split() {
        let curve = roc_curve(&[0.8, 0.9], &[0.1, 0.2]).unwrap();
        let first = curve.points.first().unwrap();
        let last = curve.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(curve.auc, 1.0);
    }

    #[test]
    fn roc_ties_score_half() {
        let curve = roc_curve(&[0.5], &[0.5]).unwrap();
        assert!((curve.auc - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rendered_rates_use_two_decimal_percent() {
        let scores = vec![
            vs("b1", ClipClass::BonaFide, 0.9),
            vs("b2", ClipClass::BonaFide, 0.2),
            vs("b3", ClipClass::BonaFide, 0.8),
            vs("a1", ClipClass::Attack(AttackType::PlM), 0.1),
        ];
        let r = classify_and_report(&scores, 0.5).unwrap();
        let csv = report_csv(&r);
        assert!(csv.contains("total,1,0.00,33.33,16.67"), "csv was:\n{csv}");
        let table = render_table(&r);
        assert!(table.contains("PlM"));
    }

    #[test]
    fn svg_holds_one_polyline_per_attack_plus_mean() {
        let scores = vec![
            vs("b1", ClipClass::BonaFide, 0.9),
            vs("b2", ClipClass::BonaFide, 0.7),
            vs("a1", ClipClass::Attack(AttackType::Pr), 0.1),
            vs("a2", ClipClass::Attack(AttackType::VR), 0.8),
        ];
        let rep = roc_report(&scores).unwrap();
        assert_eq!(rep.per_attack.len(), 2);
        let svg = render_roc_svg(&rep);
        assert_eq!(svg.matches("<polyline").count(), 3);
        assert!(svg.contains("mean"));
    }
}
