//! Ablation reporting: one row per front-end/branch combination, rendered
//! as an aligned text table and as JSON. All metrics are reported to four
//! decimal places in both forms.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::trainer::{load_checkpoint, TrainSummary};

/// One trained variant and its scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub use_ndp: bool,
    pub use_spb: bool,
    pub dice: f64,
    pub iou: f64,
}

impl AblationRow {
    /// Canonical table position: baseline, +NDP, +SPB, +NDP+SPB.
    fn order(&self) -> usize {
        match (self.use_ndp, self.use_spb) {
            (false, false) => 0,
            (true, false) => 1,
            (false, true) => 2,
            (true, true) => 3,
        }
    }
}

pub fn method_name(use_ndp: bool, use_spb: bool) -> &'static str {
    match (use_ndp, use_spb) {
        (false, false) => "unet",
        (true, false) => "unet+ndp",
        (false, true) => "unet+spb",
        (true, true) => "unet+ndp+spb",
    }
}

fn normalize(rows: &[AblationRow]) -> Result<Vec<AblationRow>> {
    if rows.is_empty() {
        return Err(Error::Config("report has no rows".into()));
    }
    let mut sorted = rows.to_vec();
    sorted.sort_by_key(AblationRow::order);
    for pair in sorted.windows(2) {
        if pair[0].order() == pair[1].order() {
            return Err(Error::Config(format!(
                "duplicate ablation row for {}",
                method_name(pair[0].use_ndp, pair[0].use_spb)
            )));
        }
    }
    Ok(sorted)
}

/// Render the table, rows in canonical order.
pub fn render_text(rows: &[AblationRow]) -> Result<String> {
    let rows = normalize(rows)?;
    let mut s = String::from("method        ndp  spb  dice    iou\n");
    for r in rows {
        s.push_str(&format!(
            "{:<12}  {:<3}  {:<3}  {:.4}  {:.4}\n",
            method_name(r.use_ndp, r.use_spb),
            if r.use_ndp { "yes" } else { "no" },
            if r.use_spb { "yes" } else { "no" },
            r.dice,
            r.iou
        ));
    }
    Ok(s)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// JSON rendering with the same rows and rounding as the text table.
pub fn render_json(rows: &[AblationRow]) -> Result<String> {
    #[derive(Serialize)]
    struct Row<'a> {
        method: &'a str,
        use_ndp: bool,
        use_spb: bool,
        dice: f64,
        iou: f64,
    }
    let rows = normalize(rows)?;
    let out: Vec<Row> = rows
        .iter()
        .map(|r| Row {
            method: method_name(r.use_ndp, r.use_spb),
            use_ndp: r.use_ndp,
            use_spb: r.use_spb,
            dice: round4(r.dice),
            iou: round4(r.iou),
        })
        .collect();
    serde_json::to_string_pretty(&out)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))
}

/// Build a row from a training-run directory: the variant flags come from
/// the checkpoint's config fingerprint, the scores from `summary.json`.
pub fn row_from_run_dir(dir: &Path) -> Result<AblationRow> {
    let ckpt = load_checkpoint(&dir.join("checkpoint.bin"))?;
    let config = PipelineConfig::parse(&ckpt.fingerprint)?;
    let summary_path = dir.join("summary.json");
    let text = std::fs::read_to_string(&summary_path)
        .map_err(|e| Error::format(&summary_path, format!("cannot read summary: {e}")))?;
    let summary: TrainSummary = serde_json::from_str(&text)
        .map_err(|e| Error::format(&summary_path, format!("bad summary: {e}")))?;
    let eval = summary.eval.ok_or_else(|| {
        Error::Config(format!(
            "run {} recorded no evaluation metrics; train with eval_every > 0",
            dir.display()
        ))
    })?;
    Ok(AblationRow {
        use_ndp: config.network.use_ndp,
        use_spb: config.network.use_spb,
        dice: eval.dice,
        iou: eval.iou,
    })
}
