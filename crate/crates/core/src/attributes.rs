//! Attribute classes, the nearest-centroid patch classifier, hair colour,
//! training-chip augmentation, and assembly of [`SceneFacts`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use image::{DynamicImage, GrayImage, ImageBuffer, Pixel};
use serde::{Deserialize, Serialize};

use crate::backend::BackendClient;
use crate::error::{Error, Result};
use crate::faceparts::{PatchKind, MIN_PATCH_SIDE};
use crate::recognize::{chi_square, lbp_histogram, LbpHistogram, MatchResult, HISTOGRAM_LEN, UNKNOWN};
use crate::raster;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeClass {
    Cellphone,
    Gun,
    Eyeglass,
    Mask,
    Beard,
    Nobeard,
    Mustache,
    Nomustache,
    Baldhead,
    Hair,
}

impl AttributeClass {
    pub const ALL: [AttributeClass; 10] = [
        AttributeClass::Cellphone,
        AttributeClass::Gun,
        AttributeClass::Eyeglass,
        AttributeClass::Mask,
        AttributeClass::Beard,
        AttributeClass::Nobeard,
        AttributeClass::Mustache,
        AttributeClass::Nomustache,
        AttributeClass::Baldhead,
        AttributeClass::Hair,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttributeClass::Cellphone => "cellphone",
            AttributeClass::Gun => "gun",
            AttributeClass::Eyeglass => "eyeglass",
            AttributeClass::Mask => "mask",
            AttributeClass::Beard => "beard",
            AttributeClass::Nobeard => "nobeard",
            AttributeClass::Mustache => "mustache",
            AttributeClass::Nomustache => "nomustache",
            AttributeClass::Baldhead => "baldhead",
            AttributeClass::Hair => "hair",
        }
    }

    pub fn region(self) -> Region {
        match self {
            AttributeClass::Cellphone | AttributeClass::Gun | AttributeClass::Mask => Region::Person,
            AttributeClass::Eyeglass => Region::Eye,
            AttributeClass::Beard | AttributeClass::Nobeard => Region::Beard,
            AttributeClass::Mustache | AttributeClass::Nomustache => Region::Mustache,
            AttributeClass::Baldhead | AttributeClass::Hair => Region::Head,
        }
    }
}

impl fmt::Display for AttributeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttributeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AttributeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidInput(format!("unknown attribute class {s:?}")))
    }
}

/// Directory name for eye patches without glasses; not one of the ten classes.
pub const NO_EYEGLASS_DIR: &str = "noeyeglass";

/// Default acceptance radius for person-region labels.
pub const DEFAULT_PERSON_RADIUS: f64 = 12.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    #[serde(rename = "ep")]
    Eye,
    #[serde(rename = "hp")]
    Head,
    #[serde(rename = "bp")]
    Beard,
    #[serde(rename = "mp")]
    Mustache,
    Person,
}

impl Region {
    pub fn name(self) -> &'static str {
        match self {
            Region::Eye => "ep",
            Region::Head => "hp",
            Region::Beard => "bp",
            Region::Mustache => "mp",
            Region::Person => "person",
        }
    }
}

impl From<PatchKind> for Region {
    fn from(k: PatchKind) -> Self {
        match k {
            PatchKind::Eye => Region::Eye,
            PatchKind::Head => Region::Head,
            PatchKind::Beard => Region::Beard,
            PatchKind::Mustache => Region::Mustache,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid {
    pub region: Region,
    /// `None` is the eye region's "no eyeglass" side.
    pub class: Option<AttributeClass>,
    pub centroid: LbpHistogram,
}

impl Centroid {
    fn order_key(&self) -> usize {
        self.class
            .map(|c| AttributeClass::ALL.iter().position(|x| *x == c).unwrap())
            .unwrap_or(AttributeClass::ALL.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub label: Option<AttributeClass>,
    /// Second-best distance minus best distance.
    pub margin: f64,
}

/// Anything that can label a region patch. `Ok(None)` means "not classified"
/// (region unsupported or patch too small) and maps to an unknown tri-state.
pub trait AttributeClassifier: Send + Sync {
    fn classify(&self, region: Region, patch: &GrayImage) -> Result<Option<Classification>>;

    /// All person-region classes that apply; defaults to the single best label.
    fn person_labels(&self, patch: &GrayImage) -> Result<Option<Vec<AttributeClass>>> {
        Ok(self
            .classify(Region::Person, patch)?
            .map(|c| c.label.into_iter().collect()))
    }
}

/// Built-in baseline: class-mean LBP histograms, nearest by chi-square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchClassifier {
    /// Person-region labels further than this from every centroid become "none".
    pub person_radius: f64,
    pub centroids: Vec<Centroid>,
}

impl PatchClassifier {
    /// Averages the histograms of labelled samples. Sample names are class
    /// names or [`NO_EYEGLASS_DIR`].
    pub fn train(samples: &[(String, GrayImage)], person_radius: f64) -> Result<Self> {
        let mut groups: Vec<(Region, Option<AttributeClass>, Vec<f64>, usize)> = Vec::new();
        for (name, img) in samples {
            let (region, class) = parse_label(name)?;
            let h = lbp_histogram(img)?;
            let slot = match groups.iter().position(|g| g.1 == class && g.0 == region) {
                Some(i) => i,
                None => {
                    groups.push((region, class, vec![0.0; HISTOGRAM_LEN], 0));
                    groups.len() - 1
                }
            };
            let g = &mut groups[slot];
            for (acc, v) in g.2.iter_mut().zip(h.values()) {
                *acc += v;
            }
            g.3 += 1;
        }
        let mut centroids: Vec<Centroid> = groups
            .into_iter()
            .map(|(region, class, sum, n)| {
                let mean = sum.into_iter().map(|v| v / n as f64).collect();
                Ok(Centroid {
                    region,
                    class,
                    centroid: LbpHistogram::from_values(mean)?,
                })
            })
            .collect::<Result<_>>()?;
        centroids.sort_by_key(|c| c.order_key());
        let model = PatchClassifier {
            person_radius,
            centroids,
        };
        model.validate()?;
        Ok(model)
    }

    /// Loads `root/<class>/*.png` training directories.
    pub fn train_from_dir(root: &Path, person_radius: f64) -> Result<Self> {
        let mut samples = Vec::new();
        let rd = std::fs::read_dir(root).map_err(|e| Error::storage(root, e))?;
        let mut dirs: Vec<_> = rd.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        dirs.sort();
        for dir in dirs {
            let name = dir.file_name().unwrap().to_string_lossy().to_string();
            if parse_label(&name).is_err() {
                log::warn!("ignoring training directory {}", dir.display());
                continue;
            }
            for file in raster::list_images(&dir)? {
                samples.push((name.clone(), raster::dynamic_to_gray(&raster::load_image(&file)?)));
            }
        }
        if samples.is_empty() {
            return Err(Error::InvalidInput(format!("no training images under {}", root.display())));
        }
        Self::train(&samples, person_radius)
    }

    /// Every face region that is present has exactly its two centroids.
    pub fn validate(&self) -> Result<()> {
        for region in [Region::Eye, Region::Head, Region::Beard, Region::Mustache] {
            let n = self.centroids.iter().filter(|c| c.region == region).count();
            if n != 0 && n != 2 {
                return Err(Error::InvalidInput(format!(
                    "region {} has {n} centroids, expected 2",
                    region.name()
                )));
            }
        }
        for c in &self.centroids {
            if c.class.map(AttributeClass::region).unwrap_or(Region::Eye) != c.region {
                return Err(Error::InvalidInput(format!("centroid {:?} filed under wrong region", c.class)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::storage(path, e))?;
        let model: PatchClassifier = serde_json::from_str(&text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::storage::write_atomic(path, serde_json::to_string(self)?.as_bytes())
    }

    fn ranked(&self, region: Region, h: &LbpHistogram) -> Result<Vec<(f64, &Centroid)>> {
        let mut out = Vec::new();
        for c in self.centroids.iter().filter(|c| c.region == region) {
            out.push((chi_square(h.values(), c.centroid.values())?, c));
        }
        // stable sort keeps enumeration order among equal distances
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(out)
    }
}

impl AttributeClassifier for PatchClassifier {
    fn classify(&self, region: Region, patch: &GrayImage) -> Result<Option<Classification>> {
        classify_patch(self, region, patch)
    }

    fn person_labels(&self, patch: &GrayImage) -> Result<Option<Vec<AttributeClass>>> {
        if !patch_ok(patch) || !self.centroids.iter().any(|c| c.region == Region::Person) {
            return Ok(None);
        }
        let h = lbp_histogram(patch)?;
        let ranked = self.ranked(Region::Person, &h)?;
        Ok(Some(
            ranked
                .into_iter()
                .filter(|(d, _)| *d <= self.person_radius)
                .filter_map(|(_, c)| c.class)
                .collect(),
        ))
    }
}

fn patch_ok(patch: &GrayImage) -> bool {
    i64::from(patch.width()) >= MIN_PATCH_SIDE && i64::from(patch.height()) >= MIN_PATCH_SIDE
}

fn parse_label(name: &str) -> Result<(Region, Option<AttributeClass>)> {
    if name == NO_EYEGLASS_DIR {
        return Ok((Region::Eye, None));
    }
    let c: AttributeClass = name.parse()?;
    Ok((c.region(), Some(c)))
}

/// Nearest-centroid label for `patch` in `region`. Ties resolve in class
/// enumeration order. Returns `Ok(None)` for patches under 20x20 or regions
/// the model does not cover.
pub fn classify_patch(model: &PatchClassifier, region: Region, patch: &GrayImage) -> Result<Option<Classification>> {
    if !patch_ok(patch) {
        return Ok(None);
    }
    let h = lbp_histogram(patch)?;
    let ranked = model.ranked(region, &h)?;
    let Some(&(best, c)) = ranked.first() else {
        return Ok(None);
    };
    let margin = ranked.get(1).map(|(d, _)| d - best).unwrap_or(0.0);
    let label = if region == Region::Person && best > model.person_radius {
        None
    } else {
        c.class
    };
    Ok(Some(Classification { label, margin }))
}

/// Delegates classification to the backend's `classify` task.
pub struct BackendClassifier(pub Arc<BackendClient>);

impl AttributeClassifier for BackendClassifier {
    fn classify(&self, region: Region, patch: &GrayImage) -> Result<Option<Classification>> {
        if !patch_ok(patch) {
            return Ok(None);
        }
        let (label, margin) = self.0.classify(region.name(), &DynamicImage::ImageLuma8(patch.clone()))?;
        let label = match label.as_deref() {
            None | Some("none") | Some(NO_EYEGLASS_DIR) => None,
            Some(s) => Some(s.parse()?),
        };
        Ok(Some(Classification { label, margin }))
    }
}

/// Mean-intensity cut points and colour names for hair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HairPalette {
    /// Ascending upper bounds (exclusive) for every name except the last.
    pub cuts: Vec<f64>,
    pub names: Vec<String>,
}

impl Default for HairPalette {
    fn default() -> Self {
        HairPalette {
            cuts: vec![64.0, 128.0, 192.0],
            names: ["black", "brown", "gray", "white/blond"].map(String::from).to_vec(),
        }
    }
}

impl HairPalette {
    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.cuts.len() + 1 || self.cuts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("hair palette needs ascending cuts and one more name than cuts".into()));
        }
        Ok(())
    }

    pub fn name_for(&self, mean: f64) -> &str {
        let i = self.cuts.iter().take_while(|&&c| mean >= c).count();
        &self.names[i]
    }
}

/// Colour name from the mean of the head patch's 256-bin intensity histogram.
/// `None` for patches under 20x20.
pub fn hair_color(head_patch: &GrayImage, palette: &HairPalette) -> Option<String> {
    if !patch_ok(head_patch) {
        return None;
    }
    let mut hist = [0u64; 256];
    for p in head_patch.as_raw() {
        hist[*p as usize] += 1;
    }
    let n: u64 = hist.iter().sum();
    let weighted: u64 = hist.iter().enumerate().map(|(i, &c)| i as u64 * c).sum();
    let mean = weighted as f64 / n as f64;
    Some(palette.name_for(mean).to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "op", content = "value")]
pub enum AugmentOp {
    /// Zero border of this many pixels on every side.
    Pad(u32),
    FlipH,
    /// Degrees, counter-clockwise as displayed.
    Rotate(f64),
    Scale(f64),
}

impl AugmentOp {
    pub fn standard() -> Vec<AugmentOp> {
        vec![
            AugmentOp::Pad(4),
            AugmentOp::FlipH,
            AugmentOp::Rotate(-15.0),
            AugmentOp::Rotate(15.0),
            AugmentOp::Scale(0.9),
            AugmentOp::Scale(1.1),
        ]
    }
}

type Buf<P> = ImageBuffer<P, Vec<<P as Pixel>::Subpixel>>;

/// One output per op, each applied to the original chip.
pub fn augment<P: Pixel + 'static>(chip: &Buf<P>, ops: &[AugmentOp]) -> Vec<Buf<P>> {
    ops.iter().map(|op| apply_op(chip, *op)).collect()
}

fn apply_op<P: Pixel + 'static>(chip: &Buf<P>, op: AugmentOp) -> Buf<P> {
    let (w, h) = chip.dimensions();
    match op {
        AugmentOp::Pad(n) => {
            let mut out = ImageBuffer::new(w + 2 * n, h + 2 * n);
            image::imageops::replace(&mut out, chip, i64::from(n), i64::from(n));
            out
        }
        AugmentOp::FlipH => image::imageops::flip_horizontal(chip),
        AugmentOp::Rotate(deg) => rotate_nearest(chip, deg),
        AugmentOp::Scale(s) => {
            let nw = ((f64::from(w) * s).round() as u32).max(1);
            let nh = ((f64::from(h) * s).round() as u32).max(1);
            raster::resample_nearest(chip, nw, nh)
        }
    }
}

/// Rotation about the image centre with nearest-neighbour sampling; pixels
/// that map outside the source are zero.
pub fn rotate_nearest<P: Pixel>(chip: &Buf<P>, degrees: f64) -> Buf<P> {
    let (w, h) = chip.dimensions();
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    let mut out: Buf<P> = ImageBuffer::new(w, h);
    for (x, y, px) in out.enumerate_pixels_mut() {
        let dx = f64::from(x) - cx;
        let dy = f64::from(y) - cy;
        let sx = (cx + c * dx - s * dy).round();
        let sy = (cy + s * dx + c * dy).round();
        if sx >= 0.0 && sy >= 0.0 && sx < f64::from(w) && sy < f64::from(h) {
            *px = *chip.get_pixel(sx as u32, sy as u32);
        }
    }
    out
}

/// Everything known about one detected person, ready for the description grammar.
///
/// Face-derived booleans are tri-state: `None` means "not determined".
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFacts {
    pub identity: String,
    pub location_label: String,
    pub has_gun: Option<bool>,
    pub has_phone: Option<bool>,
    pub has_mask: Option<bool>,
    pub has_eyeglass: Option<bool>,
    pub has_beard: Option<bool>,
    pub has_mustache: Option<bool>,
    pub is_bald: Option<bool>,
    pub hair_color: Option<String>,
    pub person_present_without_face: bool,
}

impl SceneFacts {
    pub fn identity_known(&self) -> bool {
        self.identity != UNKNOWN && !self.identity.is_empty()
    }

    /// The attribute classes these facts assert, in enumeration order.
    pub fn classes(&self) -> Vec<AttributeClass> {
        use AttributeClass::*;
        let pairs = [
            (self.has_phone, Some(Cellphone), None),
            (self.has_gun, Some(Gun), None),
            (self.has_eyeglass, Some(Eyeglass), None),
            (self.has_mask, Some(Mask), None),
            (self.has_beard, Some(Beard), Some(Nobeard)),
            (self.has_mustache, Some(Mustache), Some(Nomustache)),
            (self.is_bald, Some(Baldhead), Some(Hair)),
        ];
        let mut out: Vec<AttributeClass> = pairs
            .into_iter()
            .filter_map(|(v, yes, no)| match v {
                Some(true) => yes,
                Some(false) => no,
                None => None,
            })
            .collect();
        out.sort();
        out
    }
}

/// Merges identity, per-region labels, hair colour and location into facts.
///
/// `labels` holds one entry per classified region; a region absent from the
/// list stays unknown. For [`Region::Person`] every entry's label is one
/// detected item, and a single `(Person, None)` entry means "checked, nothing found".
pub fn build_facts(
    identity: Option<&MatchResult>,
    labels: &[(Region, Option<AttributeClass>)],
    hair: Option<String>,
    location_label: &str,
    person_without_face: bool,
) -> SceneFacts {
    let find = |region: Region| labels.iter().find(|(r, _)| *r == region).map(|(_, l)| *l);
    let binary = |region: Region, yes: AttributeClass| find(region).map(|l| l == Some(yes));
    let person: Vec<AttributeClass> = labels
        .iter()
        .filter(|(r, _)| *r == Region::Person)
        .filter_map(|(_, l)| *l)
        .collect();
    let person_checked = labels.iter().any(|(r, _)| *r == Region::Person);
    let item = |c: AttributeClass| person_checked.then(|| person.contains(&c));

    let is_bald = binary(Region::Head, AttributeClass::Baldhead);
    SceneFacts {
        identity: identity.map(|m| m.identity.clone()).unwrap_or_else(|| UNKNOWN.to_string()),
        location_label: location_label.to_string(),
        has_gun: item(AttributeClass::Gun),
        has_phone: item(AttributeClass::Cellphone),
        has_mask: item(AttributeClass::Mask),
        has_eyeglass: binary(Region::Eye, AttributeClass::Eyeglass),
        has_beard: binary(Region::Beard, AttributeClass::Beard),
        has_mustache: binary(Region::Mustache, AttributeClass::Mustache),
        hair_color: if is_bald == Some(false) { hair } else { None },
        is_bald,
        person_present_without_face: person_without_face,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Luma, Rgb, RgbImage};
    use proptest::prelude::*;

    fn stripes(period: u32, vertical: bool) -> GrayImage {
        GrayImage::from_fn(40, 40, |x, y| {
            let t = if vertical { x } else { y };
            Luma([if (t / period).is_multiple_of(2) { 30 } else { 220 }])
        })
    }

    fn checker() -> GrayImage {
        GrayImage::from_fn(40, 40, |x, y| Luma([if (x / 3 + y / 3) % 2 == 0 { 10 } else { 240 }]))
    }

    #[test]
    fn class_names_round_trip_and_order() {
        for c in AttributeClass::ALL {
            assert_eq!(c.name().parse::<AttributeClass>().unwrap(), c);
        }
        assert_eq!(AttributeClass::ALL.len(), 10);
        assert!("knife".parse::<AttributeClass>().is_err());
    }

    #[test]
    fn training_exemplar_classifies_as_itself() {
        let samples = vec![
            ("beard".to_string(), stripes(2, false)),
            ("nobeard".to_string(), stripes(5, true)),
        ];
        let m = PatchClassifier::train(&samples, 1.0).unwrap();
        let c = classify_patch(&m, Region::Beard, &stripes(2, false)).unwrap().unwrap();
        assert_eq!(c.label, Some(AttributeClass::Beard));
        assert!(c.margin > 0.0);
        // unsupported region and tiny patch are both "unknown"
        assert!(classify_patch(&m, Region::Head, &stripes(2, false)).unwrap().is_none());
        assert!(classify_patch(&m, Region::Beard, &GrayImage::new(19, 40)).unwrap().is_none());
    }

    #[test]
    fn identical_centroids_tie_in_enum_order() {
        let samples = vec![
            ("nomustache".to_string(), checker()),
            ("mustache".to_string(), checker()),
        ];
        let m = PatchClassifier::train(&samples, 1.0).unwrap();
        let c = classify_patch(&m, Region::Mustache, &stripes(3, true)).unwrap().unwrap();
        assert_eq!(c.label, Some(AttributeClass::Mustache));
        assert_eq!(c.margin, 0.0);
    }

    #[test]
    fn duplicated_exemplars_leave_labels_unchanged() {
        let base = vec![
            ("hair".to_string(), stripes(2, true)),
            ("baldhead".to_string(), GrayImage::from_pixel(40, 40, Luma([200]))),
        ];
        let mut doubled = base.clone();
        doubled.extend(base.clone());
        let a = PatchClassifier::train(&base, 1.0).unwrap();
        let b = PatchClassifier::train(&doubled, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn person_radius_yields_none() {
        let samples = vec![("gun".to_string(), checker()), ("cellphone".to_string(), stripes(4, true))];
        let m = PatchClassifier::train(&samples, 0.5).unwrap();
        let c = classify_patch(&m, Region::Person, &checker()).unwrap().unwrap();
        assert_eq!(c.label, Some(AttributeClass::Gun));
        let flat = GrayImage::from_pixel(40, 40, Luma([9]));
        assert_eq!(classify_patch(&m, Region::Person, &flat).unwrap().unwrap().label, None);
        assert_eq!(m.person_labels(&flat).unwrap(), Some(vec![]));
    }

    #[test]
    fn face_region_with_one_centroid_is_invalid() {
        let samples = vec![("beard".to_string(), checker())];
        assert!(PatchClassifier::train(&samples, 1.0).is_err());
    }

    #[test]
    fn model_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let samples = vec![
            ("eyeglass".to_string(), checker()),
            (NO_EYEGLASS_DIR.to_string(), stripes(6, false)),
        ];
        let m = PatchClassifier::train(&samples, 1.0).unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        assert_eq!(PatchClassifier::load(&path).unwrap(), m);
        let c = classify_patch(&m, Region::Eye, &stripes(6, false)).unwrap().unwrap();
        assert_eq!(c.label, None);
    }

    #[test]
    fn train_from_directories() {
        let dir = tempfile::tempdir().unwrap();
        for (name, img) in [("beard", stripes(2, false)), ("nobeard", stripes(7, true))] {
            std::fs::create_dir(dir.path().join(name)).unwrap();
            img.save(dir.path().join(name).join("a.png")).unwrap();
        }
        std::fs::create_dir(dir.path().join("scratch")).unwrap();
        let m = PatchClassifier::train_from_dir(dir.path(), 1.0).unwrap();
        assert_eq!(m.centroids.len(), 2);
        assert_eq!(m.centroids[0].class, Some(AttributeClass::Beard));
    }

    #[test]
    fn hair_color_examples() {
        let p = HairPalette::default();
        assert_eq!(hair_color(&GrayImage::new(20, 20), &p).as_deref(), Some("black"));
        assert_eq!(hair_color(&GrayImage::from_pixel(20, 20, Luma([255])), &p).as_deref(), Some("white/blond"));
        let half = GrayImage::from_fn(20, 20, |x, _| Luma([if x < 10 { 0 } else { 255 }]));
        assert_eq!(hair_color(&half, &p).as_deref(), Some("brown"));
        assert_eq!(hair_color(&GrayImage::new(10, 30), &p), None);
    }

    proptest! {
        #[test]
        fn hair_palette_partitions_intensity(mean in 0.0f64..256.0) {
            let p = HairPalette::default();
            let hits: Vec<usize> = (0..4)
                .filter(|&i| {
                    let lo = if i == 0 { 0.0 } else { p.cuts[i - 1] };
                    let hi = if i == 3 { 256.0 } else { p.cuts[i] };
                    mean >= lo && mean < hi
                })
                .collect();
            prop_assert_eq!(hits.len(), 1);
            prop_assert_eq!(p.name_for(mean), p.names[hits[0]].as_str());
        }

        #[test]
        fn augment_preserves_channels_and_range(w in 1u32..40, h in 1u32..40, seed in any::<u8>()) {
            let img = RgbImage::from_fn(w, h, |x, y| Rgb([seed, x as u8, y as u8]));
            for out in augment(&img, &AugmentOp::standard()) {
                prop_assert!(out.width() >= 1 && out.height() >= 1);
                prop_assert_eq!(out.as_raw().len(), (out.width() * out.height() * 3) as usize);
            }
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = GrayImage::from_fn(9, 5, |x, y| Luma([(x * 13 + y) as u8]));
        let once = augment(&img, &[AugmentOp::FlipH]).remove(0);
        assert_ne!(once, img);
        assert_eq!(augment(&once, &[AugmentOp::FlipH]).remove(0), img);
    }

    #[test]
    fn pad_then_center_crop_is_identity() {
        let img = GrayImage::from_fn(9, 5, |x, y| Luma([(x * 13 + y) as u8]));
        let padded = augment(&img, &[AugmentOp::Pad(3)]).remove(0);
        assert_eq!(padded.dimensions(), (15, 11));
        assert_eq!(raster::crop(&padded, raster::Rect::new(3, 3, 12, 8)), img);
    }

    #[test]
    fn scale_sizes() {
        let img = GrayImage::new(40, 20);
        let out = augment(&img, &[AugmentOp::Scale(0.9), AugmentOp::Scale(1.1)]);
        assert_eq!(out[0].dimensions(), (36, 18));
        assert_eq!(out[1].dimensions(), (44, 22));
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let img = GrayImage::from_fn(8, 6, |x, y| Luma([(x * 31 + y * 7) as u8]));
        assert_eq!(rotate_nearest(&img, 0.0), img);
    }

    fn john_facts() -> SceneFacts {
        let m = MatchResult {
            identity: "John".into(),
            distance: 0.0,
            person_id: Some("john".into()),
            matched_template: None,
        };
        build_facts(
            Some(&m),
            &[(Region::Person, Some(AttributeClass::Cellphone))],
            None,
            "entrance",
            false,
        )
    }

    #[test]
    fn facts_for_named_person_on_phone() {
        let f = john_facts();
        assert_eq!(f.identity, "John");
        assert_eq!((f.has_phone, f.has_gun, f.has_mask), (Some(true), Some(false), Some(false)));
        assert_eq!((f.has_beard, f.is_bald, f.has_eyeglass), (None, None, None));
        assert_eq!(f.classes(), vec![AttributeClass::Cellphone]);
    }

    #[test]
    fn facts_for_unknown_armed_person() {
        let labels = [
            (Region::Person, Some(AttributeClass::Gun)),
            (Region::Beard, Some(AttributeClass::Beard)),
            (Region::Mustache, Some(AttributeClass::Mustache)),
            (Region::Head, Some(AttributeClass::Hair)),
            (Region::Eye, None),
        ];
        let f = build_facts(Some(&MatchResult::unknown(9.0)), &labels, Some("black".into()), "back door", false);
        assert_eq!(f.identity, UNKNOWN);
        assert_eq!(f.has_gun, Some(true));
        assert_eq!((f.has_beard, f.has_mustache, f.is_bald, f.has_eyeglass), (Some(true), Some(true), Some(false), Some(false)));
        assert_eq!(f.hair_color.as_deref(), Some("black"));
        assert_eq!(
            f.classes(),
            vec![AttributeClass::Gun, AttributeClass::Beard, AttributeClass::Mustache, AttributeClass::Hair]
        );
    }

    #[test]
    fn facts_without_face_are_all_unknown() {
        let f = build_facts(None, &[], None, "driveway", true);
        assert!(f.person_present_without_face);
        assert_eq!(f.identity, UNKNOWN);
        assert!(f.classes().is_empty());
        assert_eq!(f.has_gun, None);
    }

    #[test]
    fn bald_drops_hair_color() {
        let f = build_facts(None, &[(Region::Head, Some(AttributeClass::Baldhead))], Some("gray".into()), "x", false);
        assert_eq!(f.is_bald, Some(true));
        assert_eq!(f.hair_color, None);
    }
}
