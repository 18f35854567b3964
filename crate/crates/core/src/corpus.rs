//! Corpus manifests, parallel corpus evaluation and the ablation grid.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{BoundingBox, PointingTally};
use crate::oracle::OracleSpec;
use crate::pipeline::{evaluate_image, ExplainConfig, ImageReport, MaskMode};
use crate::raster::load_image;
use crate::scoring::ScoreMode;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: PathBuf,
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub target_class: Option<usize>,
    /// `[x0, y0, x1, y1]` half-open boxes in the original image's pixels.
    #[serde(default)]
    pub boxes: Vec<[usize; 4]>,
}

impl ManifestEntry {
    pub fn image_id(&self) -> String {
        self.id.clone().unwrap_or_else(|| {
            self.image.file_stem().map_or_else(
                || self.image.display().to_string(),
                |s| s.to_string_lossy().into_owned(),
            )
        })
    }
}

/// A manifest line that could not be parsed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedItem {
    pub line: usize,
    pub image: Option<String>,
    pub error: String,
}

/// Parsed manifest entries with their 1-based line numbers, plus the lines
/// that could not be parsed.
pub type Manifest = (Vec<(usize, ManifestEntry)>, Vec<SkippedItem>);

/// Parse a JSON-lines manifest. Relative image paths are resolved against
/// the manifest's directory; blank lines are ignored.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ManifestEntry>(line) {
            Ok(mut entry) => {
                if entry.image.is_relative() {
                    entry.image = base.join(&entry.image);
                }
                entries.push((line_no, entry));
            }
            Err(e) => skipped.push(SkippedItem {
                line: line_no,
                image: None,
                error: format!("malformed manifest line: {e}"),
            }),
        }
    }
    Ok((entries, skipped))
}

/// Rescale a box from `from` (width, height) pixels to `to`, widening to
/// whole pixels.
pub fn scale_box(b: [usize; 4], from: (u32, u32), to: (usize, usize)) -> Result<BoundingBox> {
    let (fw, fh) = (f64::from(from.0), f64::from(from.1));
    let (tw, th) = (to.0 as f64, to.1 as f64);
    let x0 = (b[0] as f64 * tw / fw).floor() as usize;
    let y0 = (b[1] as f64 * th / fh).floor() as usize;
    let x1 = ((b[2] as f64 * tw / fw).ceil() as usize).min(to.0);
    let y1 = ((b[3] as f64 * th / fh).ceil() as usize).min(to.1);
    BoundingBox::new(x0, y0, x1.max(x0 + 1), y1.max(y0 + 1), to.0, to.1)
}

fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingSummary {
    pub hits: usize,
    pub misses: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub num_images: usize,
    pub skipped: usize,
    pub skipped_items: Vec<SkippedItem>,
    pub mean_deletion_auc: Option<f64>,
    pub mean_insertion_auc: Option<f64>,
    pub pointing_game: PointingSummary,
    pub mean_k: Option<f64>,
    pub std_k: Option<f64>,
    pub mean_mu: Option<f64>,
    pub mean_seconds: Option<f64>,
    pub std_seconds: Option<f64>,
}

impl CorpusSummary {
    pub fn from_reports(reports: &[ImageReport], skipped_items: Vec<SkippedItem>) -> Self {
        let col = |f: fn(&ImageReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        let mut tally = PointingTally::default();
        for hit in reports.iter().filter_map(|r| r.pointing_hit) {
            tally.record(hit);
        }
        let (mean_k, std_k) = mean_std(&col(|r| r.k as f64));
        let (mean_seconds, std_seconds) = mean_std(&col(|r| r.explain_seconds));
        Self {
            num_images: reports.len(),
            skipped: skipped_items.len(),
            skipped_items,
            mean_deletion_auc: mean_std(&col(|r| r.deletion_auc)).0,
            mean_insertion_auc: mean_std(&col(|r| r.insertion_auc)).0,
            pointing_game: PointingSummary {
                hits: tally.hits,
                misses: tally.misses,
                accuracy: tally.accuracy(),
            },
            mean_k,
            std_k,
            mean_mu: mean_std(&col(|r| r.mu)).0,
            mean_seconds,
            std_seconds,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CorpusOptions {
    pub oracle: OracleSpec,
    pub explain: ExplainConfig,
    pub steps: usize,
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusOutcome {
    pub reports: Vec<ImageReport>,
    pub summary: CorpusSummary,
}

fn evaluate_entry(
    oracle: &dyn crate::oracle::ModelOracle,
    entry: &ManifestEntry,
    opts: &CorpusOptions,
) -> Result<ImageReport> {
    let info = oracle.info()?;
    let (image, original) = load_image(&entry.image, info.input_height, info.input_width)?;
    let boxes = entry
        .boxes
        .iter()
        .map(|&b| scale_box(b, original, (info.input_width, info.input_height)))
        .collect::<Result<Vec<_>>>()?;
    let cfg = ExplainConfig {
        target_class: entry.target_class.or(opts.explain.target_class),
        ..opts.explain.clone()
    };
    evaluate_image(oracle, &entry.image_id(), &image, &cfg, &boxes, opts.steps)
}

/// Evaluate every manifest entry on a pool of `opts.jobs` workers, each
/// with its own oracle connection. Per-image failures are recorded as
/// skips; failing to open an oracle connection aborts the run.
pub fn evaluate_corpus(manifest: &Path, opts: &CorpusOptions) -> Result<CorpusOutcome> {
    opts.explain.validate()?;
    let (entries, mut skipped) = read_manifest(manifest)?;
    let results: Vec<Mutex<Option<Result<ImageReport>>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = opts.jobs.clamp(1, entries.len().max(1));

    std::thread::scope(|scope| -> Result<()> {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                scope.spawn(|| -> Result<()> {
                    let oracle = opts.oracle.connect()?;
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some((_, entry)) = entries.get(i) else { break };
                        let outcome = evaluate_entry(oracle.as_ref(), entry, opts);
                        *results[i].lock().unwrap() = Some(outcome);
                    }
                    Ok(())
                })
            })
            .collect();
        for h in handles {
            h.join().expect("worker panicked")?;
        }
        Ok(())
    })?;

    let mut reports = Vec::with_capacity(entries.len());
    for ((line, entry), slot) in entries.iter().zip(results) {
        match slot.into_inner().unwrap() {
            Some(Ok(report)) => reports.push(report),
            Some(Err(e)) => {
                log::warn!("skipping {}: {e}", entry.image.display());
                skipped.push(SkippedItem {
                    line: *line,
                    image: Some(entry.image.display().to_string()),
                    error: e.to_string(),
                });
            }
            None => unreachable!("every entry is visited"),
        }
    }
    skipped.sort_by_key(|s| s.line);
    let summary = CorpusSummary::from_reports(&reports, skipped);
    Ok(CorpusOutcome { reports, summary })
}

/// One row of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Variant {
    pub name: &'static str,
    pub mask_mode: MaskMode,
    pub score_mode: ScoreMode,
    pub pcb: bool,
}

pub const VARIANTS: [Variant; 6] = [
    Variant {
        name: "vit-cx",
        mask_mode: MaskMode::Vit,
        score_mode: ScoreMode::Debiased,
        pcb: true,
    },
    Variant {
        name: "variant-1",
        mask_mode: MaskMode::VitUnclustered,
        score_mode: ScoreMode::Debiased,
        pcb: true,
    },
    Variant {
        name: "variant-2",
        mask_mode: MaskMode::Random,
        score_mode: ScoreMode::Debiased,
        pcb: true,
    },
    Variant {
        name: "variant-3",
        mask_mode: MaskMode::Vit,
        score_mode: ScoreMode::Raw,
        pcb: true,
    },
    Variant {
        name: "variant-4",
        mask_mode: MaskMode::Vit,
        score_mode: ScoreMode::Debiased,
        pcb: false,
    },
    Variant {
        name: "variant-5",
        mask_mode: MaskMode::Vit,
        score_mode: ScoreMode::Raw,
        pcb: false,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub summary: CorpusSummary,
    pub wall_seconds: f64,
}

/// Run the whole corpus once per variant. Each variant overrides the mask,
/// score and PCB settings of `opts.explain`.
pub fn ablate(manifest: &Path, opts: &CorpusOptions) -> Result<(Vec<AblationRow>, Vec<Vec<ImageReport>>)> {
    let mut rows = Vec::new();
    let mut all_reports = Vec::new();
    for variant in VARIANTS {
        let started = Instant::now();
        let variant_opts = CorpusOptions {
            explain: ExplainConfig {
                mask_mode: variant.mask_mode,
                score_mode: variant.score_mode,
                pcb: variant.pcb,
                ..opts.explain.clone()
            },
            ..opts.clone()
        };
        let outcome = evaluate_corpus(manifest, &variant_opts)?;
        rows.push(AblationRow {
            variant,
            summary: outcome.summary,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        all_reports.push(outcome.reports);
    }
    Ok((rows, all_reports))
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("cannot create {}: {e}", dir.display()),
        ))
    })
}
