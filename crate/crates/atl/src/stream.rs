//! Dataset ingestion, the covariate-shift split, the prequential
//! test-then-train loop, and metrics emission.

use crate::error::{AtlError, Result};
use crate::trainer::{AtlState, SourceBatch, TargetBatch, TrainerConfig};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::{Path, PathBuf};

/// One equal-sized batch of the raw stream, in file order.
#[derive(Debug, Clone)]
pub struct StreamChunk {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub chunk_index: usize,
}

/// Where the rows come from and how they are chunked and split.
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    pub path: PathBuf,
    pub label_column: String,
    pub chunk_size: usize,
    /// Fraction of each chunk drawn (with bias toward the chunk mean) into
    /// the source domain; the rest becomes the unlabelled target.
    pub source_fraction: f64,
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size < 2 {
            return Err(AtlError::InvalidConfig("chunk_size must be >= 2".into()));
        }
        if !(self.source_fraction > 0.0 && self.source_fraction < 1.0) {
            return Err(AtlError::InvalidConfig(
                "source_fraction must lie strictly between 0 and 1".into(),
            ));
        }
        Ok(())
    }
}

/// Loads a numeric CSV and cuts it into equal chunks without reordering.
///
/// A header row is detected by a non-numeric first line; with a header the
/// label column is found by name, without one `label_column` must be a
/// column index. A trailing partial chunk shorter than 10% of the chunk
/// size is merged into the previous chunk.
pub fn load_csv(path: &Path, label_column: &str, chunk_size: usize) -> Result<Vec<StreamChunk>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_path(path)
        .map_err(|e| AtlError::Dataset {
            row: 0,
            message: e.to_string(),
        })?;

    let mut records = reader.records();
    let first = match records.next() {
        Some(rec) => rec.map_err(|e| AtlError::Dataset {
            row: 1,
            message: e.to_string(),
        })?,
        None => {
            return Err(AtlError::Dataset {
                row: 0,
                message: "file contains no rows".into(),
            })
        }
    };

    let has_header = first.iter().any(|cell| cell.trim().parse::<f64>().is_err());
    let column_count = first.len();
    if column_count < 2 {
        return Err(AtlError::Dataset {
            row: 1,
            message: "need at least one feature column and one label column".into(),
        });
    }
    let label_idx = if has_header {
        first
            .iter()
            .position(|name| name.trim() == label_column)
            .ok_or_else(|| AtlError::Dataset {
                row: 1,
                message: format!("label column {label_column:?} not found in header"),
            })?
    } else {
        label_column
            .parse::<usize>()
            .ok()
            .filter(|&i| i < column_count)
            .ok_or_else(|| AtlError::Dataset {
                row: 1,
                message: "headerless file: label column must be a valid column index".into(),
            })?
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut parse_row = |record: &csv::StringRecord, row_number: usize| -> Result<()> {
        let mut feats = Vec::with_capacity(column_count - 1);
        let mut label = None;
        for (col, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| AtlError::Dataset {
                row: row_number,
                message: format!("non-numeric cell {:?} in column {col}", cell),
            })?;
            if !value.is_finite() {
                return Err(AtlError::Dataset {
                    row: row_number,
                    message: format!("non-finite value in column {col}"),
                });
            }
            if col == label_idx {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(AtlError::Dataset {
                        row: row_number,
                        message: format!("label {value} is not a nonnegative integer"),
                    });
                }
                label = Some(value as usize);
            } else {
                feats.push(value);
            }
        }
        rows.push(feats);
        labels.push(label.expect("label column within record"));
        Ok(())
    };

    if !has_header {
        parse_row(&first, 1)?;
    }
    for (i, record) in records.enumerate() {
        let row_number = i + 2;
        let record = record.map_err(|e| AtlError::Dataset {
            row: row_number,
            message: e.to_string(),
        })?;
        parse_row(&record, row_number)?;
    }
    if rows.is_empty() {
        return Err(AtlError::Dataset {
            row: 0,
            message: "file contains no data rows".into(),
        });
    }

    let feature_count = rows[0].len();
    let total = rows.len();
    let mut boundaries: Vec<usize> = (0..total / chunk_size.max(1))
        .map(|k| (k + 1) * chunk_size)
        .collect();
    if boundaries.is_empty() {
        boundaries.push(total);
    } else {
        let remainder = total - boundaries.last().unwrap();
        if remainder > 0 {
            if (remainder as f64) >= 0.1 * chunk_size as f64 {
                boundaries.push(total);
            } else {
                *boundaries.last_mut().unwrap() = total;
            }
        }
    }

    let mut chunks = Vec::with_capacity(boundaries.len());
    let mut start = 0;
    for (chunk_index, &end) in boundaries.iter().enumerate() {
        let n = end - start;
        let mut features = Array2::zeros((n, feature_count));
        for (i, row) in rows[start..end].iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                features[[i, j]] = v;
            }
        }
        chunks.push(StreamChunk {
            features,
            labels: labels[start..end].to_vec(),
            chunk_index,
        });
        start = end;
    }
    Ok(chunks)
}

/// Per-feature min-max scaling fit on the warm-up chunk; later values are
/// clamped into `[0, 1]` and constant features map to 0.5.
#[derive(Debug, Clone)]
pub struct FeatureScaler {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl FeatureScaler {
    pub fn fit(features: &Array2<f64>) -> Self {
        let mut mins = vec![f64::INFINITY; features.ncols()];
        let mut maxs = vec![f64::NEG_INFINITY; features.ncols()];
        for row in features.rows() {
            for (j, &v) in row.iter().enumerate() {
                mins[j] = mins[j].min(v);
                maxs[j] = maxs[j].max(v);
            }
        }
        FeatureScaler { mins, maxs }
    }

    pub fn transform(&self, features: &mut Array2<f64>) {
        for mut row in features.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.maxs[j] > self.mins[j] {
                    ((*v - self.mins[j]) / (self.maxs[j] - self.mins[j])).clamp(0.0, 1.0)
                } else {
                    0.5
                };
            }
        }
    }

    pub fn bounds(&self) -> (&[f64], &[f64]) {
        (&self.mins, &self.maxs)
    }
}

/// Scales every chunk with statistics from the first (warm-up) chunk;
/// returns the fitted scaler.
pub fn scale_chunks(chunks: &mut [StreamChunk]) -> FeatureScaler {
    let scaler = FeatureScaler::fit(&chunks[0].features);
    for chunk in chunks.iter_mut() {
        scaler.transform(&mut chunk.features);
    }
    scaler
}

/// Splits one chunk into a labelled source batch and an unlabelled target
/// batch. Rows close to the chunk mean are more likely to land in the
/// source, inducing covariate shift between the two halves; the target
/// rows' labels are returned separately for evaluation only.
pub fn covariate_split<R: Rng>(
    chunk: &StreamChunk,
    source_fraction: f64,
    rng: &mut R,
) -> Result<(SourceBatch, TargetBatch, Vec<usize>)> {
    let n = chunk.features.nrows();
    if n < 2 {
        return Err(AtlError::InvalidConfig(
            "cannot split a chunk with fewer than 2 rows".into(),
        ));
    }
    let mean = chunk
        .features
        .mean_axis(Axis(0))
        .expect("non-empty chunk");
    let sigma = {
        let u = chunk.features.ncols() as f64;
        let mut acc = 0.0;
        for col in chunk.features.columns() {
            let m = col.mean().unwrap();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            acc += var.sqrt();
        }
        acc / u
    };

    let mut weights: Vec<f64> = if sigma > 0.0 {
        chunk
            .features
            .rows()
            .into_iter()
            .map(|row| {
                let d2: f64 = row
                    .iter()
                    .zip(mean.iter())
                    .map(|(v, m)| (v - m) * (v - m))
                    .sum();
                (-d2 / sigma).exp()
            })
            .collect()
    } else {
        vec![1.0; n]
    };
    if weights.iter().sum::<f64>() <= 0.0 {
        weights = vec![1.0; n];
    }

    let n_source = ((source_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut picked = vec![false; n];
    for _ in 0..n_source {
        let total: f64 = weights.iter().sum();
        let mut draw = rng.gen::<f64>() * total;
        let mut chosen = None;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            draw -= w;
            if draw <= 0.0 {
                chosen = Some(i);
                break;
            }
        }
        let idx = chosen.unwrap_or_else(|| {
            weights
                .iter()
                .position(|&w| w > 0.0)
                .expect("fewer draws than rows")
        });
        picked[idx] = true;
        weights[idx] = 0.0;
    }

    let source_rows: Vec<usize> = (0..n).filter(|&i| picked[i]).collect();
    let target_rows: Vec<usize> = (0..n).filter(|&i| !picked[i]).collect();
    let source = SourceBatch {
        features: chunk.features.select(Axis(0), &source_rows),
        labels: source_rows.iter().map(|&i| chunk.labels[i]).collect(),
    };
    let target = TargetBatch {
        features: chunk.features.select(Axis(0), &target_rows),
    };
    let target_labels = target_rows.iter().map(|&i| chunk.labels[i]).collect();
    Ok((source, target, target_labels))
}

/// Metrics of one evaluated chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub chunk_index: usize,
    pub target_accuracy: f64,
    pub source_accuracy: f64,
    pub hidden_nodes: usize,
    pub source_components: usize,
    pub target_components: usize,
    pub cumulative_seconds: f64,
}

/// Full result of a prequential run. The warm-up chunk trains the model
/// but contributes no record; reported accuracies are means of the
/// per-chunk accuracies.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub records: Vec<ChunkRecord>,
    pub final_hidden_nodes: usize,
    pub final_source_components: usize,
    pub final_target_components: usize,
    pub training_seconds: f64,
}

impl RunMetrics {
    pub fn mean_target_accuracy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.target_accuracy).sum::<f64>() / self.records.len() as f64
    }

    pub fn mean_source_accuracy(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.source_accuracy).sum::<f64>() / self.records.len() as f64
    }

    /// One-line JSON summary for standard output.
    pub fn summary_json(&self, dataset: &Path, config: &TrainerConfig) -> serde_json::Value {
        serde_json::json!({
            "dataset": dataset.display().to_string(),
            "chunks_evaluated": self.records.len(),
            "mean_target_accuracy": self.mean_target_accuracy(),
            "mean_source_accuracy": self.mean_source_accuracy(),
            "final_hidden_nodes": self.final_hidden_nodes,
            "final_source_components": self.final_source_components,
            "final_target_components": self.final_target_components,
            "training_seconds": self.training_seconds,
            "seed": config.seed,
            "epochs_per_batch": config.epochs_per_batch,
            "kl_disabled": config.disable_kl,
            "agmm_disabled": config.disable_agmm_ns,
            "structural_disabled": config.disable_structural,
        })
    }
}

fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / predictions.len() as f64
}

/// Runs the prequential test-then-train protocol over a CSV stream.
///
/// Chunk 0 is the warm-up: it fits the feature scaler and trains the model
/// without contributing metrics. Every later chunk is split on the raw
/// feature scale (where the bias toward the chunk mean is computed),
/// scaled, predicted with the frozen model, then used for training and
/// discarded.
pub fn run_prequential(dataset: &DatasetConfig, config: &TrainerConfig) -> Result<RunMetrics> {
    dataset.validate()?;
    config.validate()?;
    let chunks = load_csv(&dataset.path, &dataset.label_column, dataset.chunk_size)?;
    let class_count = chunks
        .iter()
        .flat_map(|c| c.labels.iter())
        .max()
        .map(|&m| m + 1)
        .unwrap_or(0);
    if class_count < 2 {
        return Err(AtlError::InvalidConfig(
            "dataset must contain at least two classes".into(),
        ));
    }
    let scaler = FeatureScaler::fit(&chunks[0].features);

    let input_dim = chunks[0].features.ncols();
    let mut state = AtlState::new(input_dim, class_count, dataset.chunk_size as u64, config)?;
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut records = Vec::with_capacity(chunks.len().saturating_sub(1));
    let mut cumulative_seconds = 0.0;
    for chunk in &chunks {
        let (mut source, mut target, target_labels) =
            covariate_split(chunk, dataset.source_fraction, &mut split_rng)?;
        scaler.transform(&mut source.features);
        scaler.transform(&mut target.features);
        if chunk.chunk_index == 0 {
            let start = std::time::Instant::now();
            state.train_chunk(&source, &target, config)?;
            cumulative_seconds += start.elapsed().as_secs_f64();
            continue;
        }
        let outcome = state.process_chunk(&source, &target, config)?;
        cumulative_seconds += outcome.train_seconds;
        records.push(ChunkRecord {
            chunk_index: chunk.chunk_index,
            target_accuracy: accuracy(&outcome.target_predictions, &target_labels),
            source_accuracy: accuracy(&outcome.source_predictions, &source.labels),
            hidden_nodes: state.hidden_nodes(),
            source_components: state.source_components(),
            target_components: state.target_components(),
            cumulative_seconds,
        });
    }

    Ok(RunMetrics {
        records,
        final_hidden_nodes: state.hidden_nodes(),
        final_source_components: state.source_components(),
        final_target_components: state.target_components(),
        training_seconds: cumulative_seconds,
    })
}

/// Writes per-chunk records plus a trailing summary record as CSV. Every
/// row carries the same field count.
pub fn write_metrics(metrics: &RunMetrics, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(
        out,
        "record,chunk_index,target_acc,source_acc,hidden_nodes,agmm_source_m,agmm_target_m,cumulative_seconds"
    )?;
    for r in &metrics.records {
        writeln!(
            out,
            "chunk,{},{:.6},{:.6},{},{},{},{:.3}",
            r.chunk_index,
            r.target_accuracy,
            r.source_accuracy,
            r.hidden_nodes,
            r.source_components,
            r.target_components,
            r.cumulative_seconds
        )?;
    }
    writeln!(
        out,
        "summary,{},{:.6},{:.6},{},{},{},{:.3}",
        metrics.records.len(),
        metrics.mean_target_accuracy(),
        metrics.mean_source_accuracy(),
        metrics.final_hidden_nodes,
        metrics.final_source_components,
        metrics.final_target_components,
        metrics.training_seconds
    )?;
    out.flush()?;
    Ok(())
}
