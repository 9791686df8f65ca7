use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::data::{box_to_cube, Dataset, Patient};
use super::infer::{infer_study, StudyPrediction};
use super::split::SplitSpec;
use super::PipelineConfig;
use crate::enet3d::Enet;
use crate::error::{Error, Result};
use crate::fsio;
use crate::localize::{bbox_metrics, landmark_errors, median};
use crate::volcore::{LandmarkId, Vec3};

/// Row labels in report order.
pub const TABLE_ROWS: [&str; 8] = ["LVA", "MV", "AV", "RVA", "TV", "PV", "Average Median Error", "Median Error"];
const ROW_IDS: [LandmarkId; 6] = [LandmarkId::LVA, LandmarkId::MV, LandmarkId::AV, LandmarkId::RVA, LandmarkId::TV, LandmarkId::PV];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCell {
    pub median_mm: Option<f64>,
    /// Annotated landmark instances scored.
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub row: String,
    pub train: SplitCell,
    pub val: SplitCell,
    pub test: SplitCell,
}

/// One scored landmark in one annotated frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub split: String,
    pub patient: String,
    pub frame: usize,
    pub landmark: LandmarkId,
    pub error_mm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBoxAggregate {
    pub studies: usize,
    /// Ground-truth landmarks, pooled over studies and frames, inside the
    /// predicted box.
    pub containment_fraction: f64,
    pub volume_fraction: f64,
    pub dice: f64,
    pub pixel_accuracy: f64,
    pub fallbacks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub table: Vec<TableRow>,
    pub errors: Vec<ErrorRecord>,
    pub bbox: BTreeMap<String, BBoxAggregate>,
}

impl EvalReport {
    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.table.iter().find(|r| r.row == label)
    }
}

fn cell(errors: &[ErrorRecord], split: &str, id: Option<LandmarkId>) -> SplitCell {
    let mut v: Vec<f64> =
        errors.iter().filter(|e| e.split == split && id.is_none_or(|id| e.landmark == id)).map(|e| e.error_mm).collect();
    SplitCell { count: v.len(), median_mm: median(&mut v) }
}

/// Per-landmark medians, their mean, and the median over every record.
pub fn table_from_errors(errors: &[ErrorRecord]) -> Vec<TableRow> {
    let mut rows: Vec<TableRow> = ROW_IDS
        .iter()
        .map(|&id| TableRow {
            row: id.name().to_string(),
            train: cell(errors, "train", Some(id)),
            val: cell(errors, "val", Some(id)),
            test: cell(errors, "test", Some(id)),
        })
        .collect();
    let avg = |pick: fn(&TableRow) -> &SplitCell, rows: &[TableRow]| {
        let meds: Vec<f64> = rows.iter().filter_map(|r| pick(r).median_mm).collect();
        SplitCell {
            count: rows.iter().map(|r| pick(r).count).sum(),
            median_mm: (!meds.is_empty()).then(|| meds.iter().sum::<f64>() / meds.len() as f64),
        }
    };
    let average = TableRow {
        row: TABLE_ROWS[6].into(),
        train: avg(|r| &r.train, &rows),
        val: avg(|r| &r.val, &rows),
        test: avg(|r| &r.test, &rows),
    };
    let overall = TableRow {
        row: TABLE_ROWS[7].into(),
        train: cell(errors, "train", None),
        val: cell(errors, "val", None),
        test: cell(errors, "test", None),
    };
    rows.push(average);
    rows.push(overall);
    rows
}

fn bbox_for(p: &Patient, pred: &StudyPrediction, cfg: &PipelineConfig) -> Option<(usize, usize, [f64; 3])> {
    let (map, transform, truth_box) = (pred.bbox_map.as_ref()?, pred.cube_transform.as_ref()?, p.bbox.as_ref()?);
    let src = p.series.frame(cfg.reference_frames[0]);
    let cube_truth = box_to_cube(truth_box, src, transform, cfg.prep.target_edge)?;
    let sets = p.truth.as_ref().unwrap_or(&p.annotations);
    let lms: Vec<Vec3> = sets.iter().flat_map(|s| s.iter().map(|(_, w)| w)).collect();
    let m = bbox_metrics(map, &cube_truth, &lms, cfg.bbox_lo, cfg.bbox_hi);
    let inside = (m.containment_fraction * lms.len() as f64).round() as usize;
    Some((inside, lms.len(), [m.volume_fraction, m.dice, m.pixel_accuracy]))
}

/// Scores `predict` on every split. Frames are scored against the
/// annotations, not the unabridged truth, like a clinical test set.
pub fn evaluate_predictions(
    ds: &Dataset,
    split: &SplitSpec,
    cfg: &PipelineConfig,
    mut predict: impl FnMut(&Patient) -> Result<StudyPrediction>,
) -> Result<EvalReport> {
    if split.test.is_empty() {
        return Err(Error::Empty("test split"));
    }
    let mut errors = Vec::new();
    let mut bbox = BTreeMap::new();
    for (name, ids) in split.parts() {
        let (mut inside, mut total, mut sums, mut studies, mut fallbacks) = (0, 0, [0.0; 3], 0, 0);
        for p in ds.select(ids)? {
            let pred = predict(p)?;
            for (t, ann) in p.annotations.iter().enumerate() {
                for (id, e) in LandmarkId::ALL.into_iter().zip(landmark_errors(&pred.per_frame[t], ann)) {
                    if let Some(error_mm) = e {
                        errors.push(ErrorRecord { split: name.into(), patient: p.id.clone(), frame: t, landmark: id, error_mm });
                    }
                }
            }
            fallbacks += pred.bbox_fallback as usize;
            if let Some((i, n, m)) = bbox_for(p, &pred, cfg) {
                inside += i;
                total += n;
                studies += 1;
                (0..3).for_each(|k| sums[k] += m[k]);
            }
        }
        if studies > 0 {
            let s = studies as f64;
            bbox.insert(
                name.to_string(),
                BBoxAggregate {
                    studies,
                    containment_fraction: if total == 0 { 1.0 } else { inside as f64 / total as f64 },
                    volume_fraction: sums[0] / s,
                    dice: sums[1] / s,
                    pixel_accuracy: sums[2] / s,
                    fallbacks,
                },
            );
        }
    }
    Ok(EvalReport { table: table_from_errors(&errors), errors, bbox })
}

/// Full two-stage inference on every patient of every split.
pub fn evaluate(ds: &Dataset, split: &SplitSpec, bbox_net: &mut Enet<f32>, lm_net: &mut Enet<f32>, cfg: &PipelineConfig) -> Result<EvalReport> {
    evaluate_predictions(ds, split, cfg, |p| infer_study(&p.series, bbox_net, lm_net, cfg))
}

/// `report.json` and the per-landmark `table.csv`.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    fsio::write_json(&dir.join("report.json"), report)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["row", "train_median_mm", "train_count", "val_median_mm", "val_count", "test_median_mm", "test_count"])?;
    let f = |c: &SplitCell| [c.median_mm.map(|m| format!("{m:.3}")).unwrap_or_default(), c.count.to_string()];
    for r in &report.table {
        let [a, b] = f(&r.train);
        let [c, d] = f(&r.val);
        let [e, g] = f(&r.test);
        w.write_record([r.row.clone(), a, b, c, d, e, g])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(dir.join("table.csv"), e.into_error()))?;
    fsio::write_atomic(&dir.join("table.csv"), &bytes)
}
