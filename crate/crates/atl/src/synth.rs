//! Seed-deterministic synthetic benchmark streams with scheduled concept
//! drift, plus a CSV writer so runs need no external downloads.

use crate::error::{AtlError, Result};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// An in-memory labelled dataset in stream order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Sea,
    Hyperplane,
}

/// Thresholds of the recurring abrupt drift, applied per quartile.
const SEA_THRESHOLDS: [f64; 4] = [4.0, 7.0, 4.0, 7.0];

/// Three features uniform in `[0, 10]`; the label tests `f1 + f2 < theta`
/// with the threshold switching 4 -> 7 -> 4 -> 7 at quartile boundaries.
pub fn generate_sea(rows: usize, seed: u64) -> Result<Dataset> {
    if rows == 0 || !rows.is_multiple_of(SEA_THRESHOLDS.len()) {
        return Err(AtlError::InvalidConfig(format!(
            "row count must be a positive multiple of {}",
            SEA_THRESHOLDS.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segment = rows / SEA_THRESHOLDS.len();
    let mut features = Array2::zeros((rows, 3));
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        let theta = SEA_THRESHOLDS[i / segment];
        for j in 0..3 {
            features[[i, j]] = rng.gen_range(0.0..10.0);
        }
        labels.push(usize::from(features[[i, 0]] + features[[i, 1]] < theta));
    }
    Ok(Dataset {
        feature_names: vec!["f1".into(), "f2".into(), "f3".into()],
        features,
        labels,
    })
}

/// Four features uniform in `[0, 1]`; the label tests a random hyperplane.
/// A second hyperplane gradually replaces the first across the middle
/// fifth of the stream, drawing each row from a mixture of the two
/// concepts with linearly shifting probability.
pub fn generate_hyperplane(rows: usize, seed: u64) -> Result<Dataset> {
    const DIM: usize = 4;
    if rows == 0 || !rows.is_multiple_of(5) {
        return Err(AtlError::InvalidConfig(
            "row count must be a positive multiple of 5".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut concept = || -> (Vec<f64>, f64) {
        let w: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w0 = 0.5 * w.iter().sum::<f64>();
        (w, w0)
    };
    let (w_a, w0_a) = concept();
    let (w_b, w0_b) = concept();

    let start = 2 * rows / 5;
    let end = 3 * rows / 5;
    let mut features = Array2::zeros((rows, DIM));
    let mut labels = Vec::with_capacity(rows);
    for i in 0..rows {
        for j in 0..DIM {
            features[[i, j]] = rng.gen_range(0.0..1.0);
        }
        let p_second = if i < start {
            0.0
        } else if i >= end {
            1.0
        } else {
            (i - start) as f64 / (end - start) as f64
        };
        let use_second = rng.gen::<f64>() < p_second;
        let (w, w0) = if use_second {
            (&w_b, w0_b)
        } else {
            (&w_a, w0_a)
        };
        let activation: f64 = (0..DIM).map(|j| w[j] * features[[i, j]]).sum();
        labels.push(usize::from(activation > w0));
    }
    Ok(Dataset {
        feature_names: (1..=DIM).map(|j| format!("f{j}")).collect(),
        features,
        labels,
    })
}

pub fn generate(kind: SyntheticKind, rows: usize, seed: u64) -> Result<Dataset> {
    match kind {
        SyntheticKind::Sea => generate_sea(rows, seed),
        SyntheticKind::Hyperplane => generate_hyperplane(rows, seed),
    }
}

/// Writes the dataset as a headered CSV with a trailing `label` column.
pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    writeln!(out, "{},label", dataset.feature_names.join(","))?;
    for (row, &label) in dataset.features.rows().into_iter().zip(&dataset.labels) {
        for v in row.iter() {
            write!(out, "{v},")?;
        }
        writeln!(out, "{label}")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sea_label_rule() {
        // theta = 4 in the first quartile: 1+2 < 4 -> 1, 3+2 >= 4 -> 0
        let ds = generate_sea(400, 0).unwrap();
        for i in 0..100 {
            let expected = usize::from(ds.features[[i, 0]] + ds.features[[i, 1]] < 4.0);
            assert_eq!(ds.labels[i], expected);
        }
        for i in 100..200 {
            let expected = usize::from(ds.features[[i, 0]] + ds.features[[i, 1]] < 7.0);
            assert_eq!(ds.labels[i], expected);
        }
    }

    #[test]
    fn sea_segment_rates_match_geometry() {
        // P(f1 + f2 < theta) for f1, f2 ~ U[0, 10] is theta^2 / 200:
        // 0.08 for theta = 4 and 0.245 for theta = 7
        let ds = generate_sea(10_000, 7).unwrap();
        let expected = [0.08, 0.245, 0.08, 0.245];
        for (seg, chunk) in ds.labels.chunks(2500).enumerate() {
            let positive = chunk.iter().sum::<usize>() as f64 / chunk.len() as f64;
            assert!(
                (positive - expected[seg]).abs() < 0.03,
                "segment {seg}: rate {positive}, expected {}",
                expected[seg]
            );
        }
    }

    #[test]
    fn sea_rejects_bad_row_counts() {
        assert!(generate_sea(0, 0).is_err());
        assert!(generate_sea(1001, 0).is_err());
    }

    #[test]
    fn hyperplane_balance_and_drift_window() {
        let ds = generate_hyperplane(10_000, 3).unwrap();
        let positive = ds.labels.iter().sum::<usize>() as f64 / ds.labels.len() as f64;
        assert!((0.25..=0.75).contains(&positive), "imbalance: {positive}");
    }

    #[test]
    fn generators_are_seed_deterministic() {
        let a = generate_sea(400, 9).unwrap();
        let b = generate_sea(400, 9).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.labels, b.labels);
        let c = generate_hyperplane(500, 9).unwrap();
        let d = generate_hyperplane(500, 9).unwrap();
        assert_eq!(c.features, d.features);
        assert_eq!(c.labels, d.labels);
    }

    #[test]
    fn csv_roundtrip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sea.csv");
        let ds = generate_sea(40, 1).unwrap();
        write_csv(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "f1,f2,f3,label");
        assert_eq!(lines.count(), 40);
    }
}
