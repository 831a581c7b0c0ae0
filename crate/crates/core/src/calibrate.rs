//! Threshold selection from labeled genuine and impostor chips.

use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster;
use crate::recognize::{chi_square, lbp_histogram, LbpHistogram};

/// A chip with its identity label.
#[derive(Debug, Clone)]
pub struct LabeledChip {
    pub label: String,
    pub digest: String,
    pub histogram: LbpHistogram,
}

impl LabeledChip {
    pub fn new(label: impl Into<String>, digest: impl Into<String>, chip: &GrayImage) -> Result<Self> {
        Ok(LabeledChip {
            label: label.into(),
            digest: digest.into(),
            histogram: lbp_histogram(chip)?,
        })
    }
}

/// Loads `dir/<label>/*.png`; images directly in `dir` take their file stem as label.
pub fn load_labeled(dir: &Path) -> Result<Vec<LabeledChip>> {
    if !dir.is_dir() {
        return Err(Error::NotFound(format!("{} is not a directory", dir.display())));
    }
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::storage(dir, e))?
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::storage(dir, e))?
        .into_iter()
        .map(|e| e.path())
        .collect();
    entries.sort();
    let mut out = Vec::new();
    for p in entries {
        if p.is_dir() {
            let label = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            for f in raster::list_images(&p)? {
                out.push(load_one(&label, &f)?);
            }
        } else if raster::is_image_file(&p) {
            let label = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            out.push(load_one(&label, &p)?);
        }
    }
    Ok(out)
}

fn load_one(label: &str, path: &Path) -> Result<LabeledChip> {
    let bytes = std::fs::read(path).map_err(|e| Error::storage(path, e))?;
    let img = raster::decode_image(&bytes)?;
    LabeledChip::new(label, raster::digest_hex(&bytes), &raster::dynamic_to_gray(&img))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub count: usize,
    pub min: f64,
    pub median: f64,
    pub mean: f64,
    pub max: f64,
}

impl DistanceStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 };
        Some(DistanceStats {
            count: n,
            min: v[0],
            median,
            mean: v.iter().sum::<f64>() / n as f64,
            max: v[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub f1: f64,
    pub genuine_pairs: usize,
    pub impostor_pairs: usize,
    /// Impostor pairs accepted at the threshold, as a fraction.
    pub false_accept_rate: f64,
    /// Genuine pairs rejected at the threshold, as a fraction.
    pub false_reject_rate: f64,
    pub genuine: DistanceStats,
    pub impostor: DistanceStats,
    /// The genuine and impostor sets hold the same images.
    pub degenerate: bool,
}

/// F1 of the rule "same person iff distance <= t".
pub fn f1_at(genuine: &[f64], impostor: &[f64], t: f64) -> f64 {
    let tp = genuine.iter().filter(|&&d| d <= t).count() as f64;
    let fp = impostor.iter().filter(|&&d| d <= t).count() as f64;
    let fn_ = genuine.len() as f64 - tp;
    if tp == 0.0 {
        return 0.0;
    }
    2.0 * tp / (2.0 * tp + fp + fn_)
}

/// Best-F1 threshold among the observed distances; ties go to the smallest.
pub fn best_threshold(genuine: &[f64], impostor: &[f64]) -> Result<Calibration> {
    if genuine.is_empty() {
        return Err(Error::InvalidInput("no genuine pairs to calibrate from".into()));
    }
    if impostor.is_empty() {
        return Err(Error::InvalidInput("no impostor pairs to calibrate from".into()));
    }
    let mut cands: Vec<f64> = genuine.iter().chain(impostor).copied().filter(|d| *d > 0.0).collect();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    if cands.is_empty() {
        return Err(Error::InvalidInput("every pair distance is zero".into()));
    }
    let mut best = (cands[0], f1_at(genuine, impostor, cands[0]));
    for &t in &cands[1..] {
        let f = f1_at(genuine, impostor, t);
        if f > best.1 {
            best = (t, f);
        }
    }
    let (t, f1) = best;
    Ok(Calibration {
        threshold: t,
        f1,
        genuine_pairs: genuine.len(),
        impostor_pairs: impostor.len(),
        false_accept_rate: impostor.iter().filter(|&&d| d <= t).count() as f64 / impostor.len() as f64,
        false_reject_rate: genuine.iter().filter(|&&d| d > t).count() as f64 / genuine.len() as f64,
        genuine: DistanceStats::of(genuine).expect("non-empty"),
        impostor: DistanceStats::of(impostor).expect("non-empty"),
        degenerate: false,
    })
}

/// Genuine pairs: distinct chips sharing a label within `genuine`.
/// Impostor pairs: each genuine chip against each impostor chip of another label.
pub fn pair_distances(genuine: &[LabeledChip], impostor: &[LabeledChip]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Vec::new();
    for (i, a) in genuine.iter().enumerate() {
        for b in &genuine[i + 1..] {
            if a.label == b.label {
                g.push(chi_square(a.histogram.values(), b.histogram.values())?);
            }
        }
    }
    let mut im = Vec::new();
    for a in genuine {
        for b in impostor {
            if a.label != b.label {
                im.push(chi_square(a.histogram.values(), b.histogram.values())?);
            }
        }
    }
    Ok((g, im))
}

pub fn calibrate(genuine: &[LabeledChip], impostor: &[LabeledChip]) -> Result<Calibration> {
    let (g, im) = pair_distances(genuine, impostor)?;
    let mut cal = best_threshold(&g, &im)?;
    let mut a: Vec<&str> = genuine.iter().map(|c| c.digest.as_str()).collect();
    let mut b: Vec<&str> = impostor.iter().map(|c| c.digest.as_str()).collect();
    a.sort_unstable();
    b.sort_unstable();
    cal.degenerate = a == b;
    if cal.degenerate {
        log::warn!("genuine and impostor sets contain the same images; the threshold is meaningless");
    }
    Ok(cal)
}

/// Nearest-neighbour accuracy with each chip held out in turn. With a
/// threshold, a hit also needs the nearest distance to be within it.
pub fn leave_one_out_accuracy(chips: &[LabeledChip], threshold: Option<f64>) -> Result<f64> {
    if chips.len() < 2 {
        return Err(Error::InvalidInput("need at least two chips".into()));
    }
    let mut correct = 0usize;
    for (i, probe) in chips.iter().enumerate() {
        let mut best: Option<(f64, &str)> = None;
        for (j, t) in chips.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = chi_square(probe.histogram.values(), t.histogram.values())?;
            if best.is_none_or(|(bd, bl)| d < bd || (d == bd && t.label.as_str() < bl)) {
                best = Some((d, &t.label));
            }
        }
        let hit = best.is_some_and(|(d, l)| l == probe.label && threshold.is_none_or(|t| d <= t));
        if hit {
            correct += 1;
        }
    }
    Ok(correct as f64 / chips.len() as f64)
}
