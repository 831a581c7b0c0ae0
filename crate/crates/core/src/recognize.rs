//! Open-set face identification.
//!
//! Default path: uniform LBP(8,1) histograms over an 8x8 grid of a 128x128
//! chip, compared with chi-square distance. Alternative path: backend
//! embeddings compared with squared Euclidean distance.

use std::collections::HashMap;
use std::sync::OnceLock;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::backend::Embedding;
use crate::error::{Error, Result};
use crate::raster;

pub const CHIP_SIDE: u32 = 128;
pub const GRID: u32 = 8;
pub const CELL_SIDE: u32 = CHIP_SIDE / GRID;
pub const BINS: usize = 59;
pub const HISTOGRAM_LEN: usize = (GRID * GRID) as usize * BINS;
pub const UNKNOWN: &str = "Unknown";

const CHI_EPS: f64 = 1e-12;

/// LBP code of a 3x3 window `w[row][col]`. Bit `i` is set when neighbor `i`
/// is `>=` the center; neighbors run clockwise from the top-left.
pub fn lbp_code(w: &[[u8; 3]; 3]) -> u8 {
    let c = w[1][1];
    let ring = [w[0][0], w[0][1], w[0][2], w[1][2], w[2][2], w[2][1], w[2][0], w[1][0]];
    ring.iter()
        .enumerate()
        .fold(0u8, |acc, (i, &n)| acc | (u8::from(n >= c) << i))
}

/// Number of 0/1 changes walking the 8 bits circularly.
pub fn transitions(code: u8) -> u32 {
    (code ^ code.rotate_right(1)).count_ones()
}

/// Maps each code to its histogram bin: the 58 uniform codes get bins 0..58
/// in ascending code order, every other code shares bin 58.
pub fn uniform_bin_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [(BINS - 1) as u8; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if transitions(code) <= 2 {
                t[code as usize] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next as usize, BINS - 1);
        t
    })
}

/// Concatenated per-cell uniform-LBP histograms (64 cells x 59 bins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LbpHistogram(Vec<f64>);

impl LbpHistogram {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.len() != HISTOGRAM_LEN {
            return Err(Error::InvalidInput(format!(
                "histogram has {} values, expected {HISTOGRAM_LEN}",
                values.len()
            )));
        }
        Ok(LbpHistogram(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.0[i * BINS..(i + 1) * BINS]
    }
}

/// Uniform LBP histogram of `chip` after nearest-neighbor resampling to 128x128.
/// Border pixels of the resampled chip are not coded.
pub fn lbp_histogram(chip: &GrayImage) -> Result<LbpHistogram> {
    if chip.width() == 0 || chip.height() == 0 {
        return Err(Error::InvalidInput("empty chip".into()));
    }
    let resampled;
    let img = if chip.dimensions() == (CHIP_SIDE, CHIP_SIDE) {
        chip
    } else {
        resampled = raster::resample_nearest(chip, CHIP_SIDE, CHIP_SIDE);
        &resampled
    };
    let table = uniform_bin_table();
    let px = img.as_raw();
    let stride = CHIP_SIDE as usize;
    let mut counts = vec![0u32; HISTOGRAM_LEN];
    let mut totals = [0u32; (GRID * GRID) as usize];

    for y in 1..stride - 1 {
        let up = &px[(y - 1) * stride..y * stride];
        let mid = &px[y * stride..(y + 1) * stride];
        let down = &px[(y + 1) * stride..(y + 2) * stride];
        let cell_row = (y / CELL_SIDE as usize) * GRID as usize;
        for x in 1..stride - 1 {
            let c = mid[x];
            let code = u8::from(up[x - 1] >= c)
                | u8::from(up[x] >= c) << 1
                | u8::from(up[x + 1] >= c) << 2
                | u8::from(mid[x + 1] >= c) << 3
                | u8::from(down[x + 1] >= c) << 4
                | u8::from(down[x] >= c) << 5
                | u8::from(down[x - 1] >= c) << 6
                | u8::from(mid[x - 1] >= c) << 7;
            let cell = cell_row + x / CELL_SIDE as usize;
            counts[cell * BINS + table[code as usize] as usize] += 1;
            totals[cell] += 1;
        }
    }

    let mut values = vec![0.0f64; HISTOGRAM_LEN];
    for (cell, &total) in totals.iter().enumerate() {
        if total == 0 {
            continue;
        }
        let t = f64::from(total);
        for b in 0..BINS {
            values[cell * BINS + b] = f64::from(counts[cell * BINS + b]) / t;
        }
    }
    Ok(LbpHistogram(values))
}

/// `sum (a_i - b_i)^2 / (a_i + b_i + 1e-12)`.
pub fn chi_square(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput(format!(
            "histogram lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x - y;
            d * d / (x + y + CHI_EPS)
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecognitionMode {
    #[default]
    Lbp,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceTemplate {
    pub person_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub histogram: Option<LbpHistogram>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Embedding>,
    pub source_image_ref: String,
}

/// Immutable set of templates plus the display name of each person.
#[derive(Debug, Clone, Default)]
pub struct Gallery {
    templates: Vec<FaceTemplate>,
    names: HashMap<String, String>,
}

impl Gallery {
    pub fn new() -> Self {
        Gallery::default()
    }

    pub fn add(&mut self, name: &str, template: FaceTemplate) {
        self.names.insert(template.person_id.clone(), name.to_string());
        self.templates.push(template);
    }

    pub fn templates(&self) -> &[FaceTemplate] {
        &self.templates
    }

    pub fn name_of(&self, person_id: &str) -> Option<&str> {
        self.names.get(person_id).map(String::as_str)
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }
}

/// What is being identified: a chip's histogram or its embedding.
#[derive(Debug, Clone, Copy)]
pub enum Probe<'a> {
    Histogram(&'a LbpHistogram),
    Embedding(&'a Embedding),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Person name, or `"Unknown"`.
    pub identity: String,
    pub distance: f64,
    pub person_id: Option<String>,
    pub matched_template: Option<String>,
}

impl MatchResult {
    pub fn unknown(distance: f64) -> Self {
        MatchResult {
            identity: UNKNOWN.to_string(),
            distance,
            person_id: None,
            matched_template: None,
        }
    }

    pub fn is_known(&self) -> bool {
        self.person_id.is_some()
    }
}

/// Nearest template under the probe's metric; named when `distance <= threshold`.
/// Equal distances resolve to the lexicographically lowest `person_id`.
pub fn identify(probe: Probe<'_>, gallery: &Gallery, threshold: f64) -> Result<MatchResult> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::InvalidInput(format!("threshold must be > 0, got {threshold}")));
    }
    let mut best: Option<(f64, &FaceTemplate)> = None;
    for t in &gallery.templates {
        let d = match (probe, &t.histogram, &t.embedding) {
            (Probe::Histogram(h), Some(th), _) => chi_square(h.values(), th.values())?,
            (Probe::Embedding(e), _, Some(te)) => {
                if e.0.len() != te.0.len() {
                    return Err(Error::InvalidInput("embedding dimensions differ".into()));
                }
                e.squared_distance(te)
            }
            _ => continue,
        };
        let better = match best {
            None => true,
            Some((bd, bt)) => d < bd || (d == bd && t.person_id < bt.person_id),
        };
        if better {
            best = Some((d, t));
        }
    }
    Ok(match best {
        None => MatchResult::unknown(f64::INFINITY),
        Some((d, t)) if d <= threshold => MatchResult {
            identity: gallery.name_of(&t.person_id).unwrap_or(&t.person_id).to_string(),
            distance: d,
            person_id: Some(t.person_id.clone()),
            matched_template: Some(t.source_image_ref.clone()),
        },
        Some((d, _)) => MatchResult::unknown(d),
    })
}

/// LBP-mode identification of a grayscale chip.
pub fn identify_chip(chip: &GrayImage, gallery: &Gallery, threshold: f64) -> Result<MatchResult> {
    let h = lbp_histogram(chip)?;
    identify(Probe::Histogram(&h), gallery, threshold)
}
