//! Regenerates `tests/fixtures/`: identity chips, attribute training patches,
//! camera scenes with their stub annotations, calibration records, and golden
//! files. Deterministic; run with `cargo run --example gen_fixtures`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::TimeZone;
use image::{DynamicImage, GenericImageView, GrayImage, Luma, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use doorwatch::attributes::{augment, rotate_nearest, AttributeClass, AugmentOp, PatchClassifier, Region};
use doorwatch::backend::{image_id, AnnotationSet, BoundingBox, FaceAnnotation, ImageAnnotation, Landmarks68};
use doorwatch::faceparts::{crop_face_patches, PatchKind};
use doorwatch::notify::{compose_mms, ComposeContext, Recipient, DEFAULT_ATTACHMENT_CAP};
use doorwatch::orchestrate::ThreatEvent;
use doorwatch::profile::laplacian_variance;
use doorwatch::raster;
use doorwatch::recognize::lbp_histogram;

const FRAME: u32 = 400;
const CHIP: u32 = 64;
const EMBED_DIM: usize = 16;

pub const IDENTITIES: [&str; 5] = ["alice", "bob", "carol", "dave", "john"];
pub const IMPOSTORS: [&str; 3] = ["erin", "frank", "grace"];

/// (angle1, period1, angle2, period2) of the two gratings behind each face.
fn identity_params(name: &str) -> (f64, f64, f64, f64) {
    match name {
        "alice" => (0.0, 7.0, 90.0, 11.0),
        "bob" => (30.0, 9.0, 120.0, 6.0),
        "carol" => (60.0, 5.0, 150.0, 13.0),
        "dave" => (15.0, 12.0, 75.0, 8.0),
        "john" => (45.0, 6.0, 135.0, 10.0),
        "erin" => (100.0, 8.0, 10.0, 14.0),
        "frank" => (170.0, 5.5, 80.0, 9.5),
        _ => (125.0, 11.0, 35.0, 6.5),
    }
}

fn seed_of(s: &str, n: u64) -> u64 {
    s.bytes().fold(n.wrapping_mul(0x9E37_79B9_7F4A_7C15), |a, b| a.rotate_left(7) ^ u64::from(b))
}

/// One face chip: two sinusoidal gratings with per-chip phase, angle jitter and noise.
fn identity_chip(name: &str, index: u64) -> GrayImage {
    let (a1, p1, a2, p2) = identity_params(name);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_of(name, index + 1));
    let j1 = (a1 + rng.gen_range(-1.0..1.0)).to_radians();
    let j2 = (a2 + rng.gen_range(-1.0..1.0)).to_radians();
    let ph1 = rng.gen_range(-0.6..0.6);
    let ph2 = rng.gen_range(-0.6..0.6);
    let gain = rng.gen_range(0.85..1.15);
    GrayImage::from_fn(CHIP, CHIP, |x, y| {
        let (xf, yf) = (f64::from(x), f64::from(y));
        let u1 = xf * j1.cos() + yf * j1.sin() + ph1;
        let u2 = xf * j2.cos() + yf * j2.sin() + ph2;
        let v = 128.0 + gain * (45.0 * (2.0 * PI * u1 / p1).sin() + 45.0 * (2.0 * PI * u2 / p2).sin());
        let n: f64 = rng.gen_range(-3.0..3.0);
        Luma([(v + n).round().clamp(0.0, 255.0) as u8])
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Tex {
    Hair,
    Bald,
    Eyeglass,
    NoEyeglass,
    Beard,
    NoBeard,
    Mustache,
    NoMustache,
    Gun,
    Phone,
    Mask,
}

/// Noise-free procedural textures; the seed moves phases and grey levels.
fn tex_value(t: Tex, seed: u64, x: i64, y: i64) -> u8 {
    let ph = (seed % 7) as i64;
    let hi = 190 + (seed % 5) as i64 * 8;
    let lo = 40 + (seed % 3) as i64 * 10;
    let pick = |b: bool| if b { hi as u8 } else { lo as u8 };
    let x = x + ph;
    let y = y + ph * 2;
    match t {
        Tex::Hair => pick((x + y).rem_euclid(10) < 5),
        Tex::Bald => (120 + ((x + y) / 40).rem_euclid(3) * 10 + (seed % 4) as i64 * 5) as u8,
        Tex::Eyeglass => {
            let r = ((x.rem_euclid(24) - 12).pow(2) + (y.rem_euclid(24) - 12).pow(2)) as f64;
            pick((r.sqrt() as i64).rem_euclid(6) < 3)
        }
        Tex::NoEyeglass => pick(x.rem_euclid(14) < 7),
        Tex::Beard => {
            let h = (x.wrapping_mul(73_856_093) ^ y.wrapping_mul(19_349_663) ^ seed as i64).rem_euclid(97);
            pick(h < 40)
        }
        Tex::NoBeard => pick(y.rem_euclid(16) < 8),
        Tex::Mustache => pick((x - y).rem_euclid(8) < 4),
        Tex::NoMustache => pick(x.rem_euclid(9) == 0 && y.rem_euclid(9) == 0),
        Tex::Gun => pick((x / 4 + y / 4).rem_euclid(2) == 0),
        Tex::Phone => pick(y.rem_euclid(6) < 3),
        Tex::Mask => pick(x.rem_euclid(6) < 3),
    }
}

fn fill(img: &mut GrayImage, x0: i64, y0: i64, x1: i64, y1: i64, t: Tex, seed: u64) {
    for y in y0.max(0)..y1.min(i64::from(img.height())) {
        for x in x0.max(0)..x1.min(i64::from(img.width())) {
            img.put_pixel(x as u32, y as u32, Luma([tex_value(t, seed, x, y)]));
        }
    }
}

fn paste(img: &mut GrayImage, chip: &GrayImage, x0: u32, y0: u32) {
    image::imageops::replace(img, chip, i64::from(x0), i64::from(y0));
}

fn background() -> GrayImage {
    GrayImage::from_fn(FRAME, FRAME, |_, y| Luma([80 + (y / 50) as u8 * 4]))
}

fn landmarks(points: &[(usize, i64, i64)], fill_with: (i64, i64)) -> Landmarks68 {
    let mut l = Landmarks68::new([[fill_with.0, fill_with.1]; 68]);
    for &(i, x, y) in points {
        l.set(i, x, y);
    }
    l
}

/// The face geometry of the back-door scene.
fn backdoor_landmarks() -> Landmarks68 {
    landmarks(
        &[
            (0, 100, 200),
            (16, 300, 200),
            (19, 140, 160),
            (24, 260, 160),
            (4, 110, 290),
            (12, 290, 290),
            (8, 200, 340),
            (30, 200, 250),
            (33, 200, 270),
            (31, 180, 262),
            (29, 200, 230),
            (57, 200, 300),
        ],
        (200, 220),
    )
}

const BACKDOOR_FACE: [i64; 4] = [100, 80, 200, 240];
const BACKDOOR_PERSON: [i64; 4] = [60, 0, 280, 400];

/// Small face whose parts all fall under the 20-pixel minimum.
fn entrance_landmarks(fx: i64, fy: i64) -> Landmarks68 {
    let rel = [
        (0, 10, 30),
        (16, 54, 30),
        (19, 20, 8),
        (24, 44, 5),
        (4, 12, 32),
        (12, 52, 32),
        (8, 32, 40),
        (30, 32, 35),
        (33, 32, 38),
        (31, 28, 36),
    ];
    let pts: Vec<_> = rel.iter().map(|&(i, x, y)| (i, fx + x, fy + y)).collect();
    landmarks(&pts, (fx + 32, fy + 32))
}

const ENTRANCE_FACE: [i64; 4] = [168, 60, 64, 64];
const ENTRANCE_PERSON: [i64; 4] = [120, 40, 160, 340];
const DRIVEWAY_PERSON: [i64; 4] = [150, 100, 100, 250];

struct FaceTextures {
    head: Tex,
    eye: Tex,
    beard: Tex,
    mustache: Tex,
}

fn render_backdoor(seed: u64, body: Tex, face: &FaceTextures) -> GrayImage {
    let mut img = background();
    let [px, py, pw, ph] = BACKDOOR_PERSON;
    fill(&mut img, px, py, px + pw, py + ph, body, seed);
    fill(&mut img, 100, 0, 300, 160, face.head, seed);
    fill(&mut img, 100, 154, 300, 294, face.eye, seed);
    fill(&mut img, 110, 290, 290, 340, face.beard, seed);
    fill(&mut img, 110, 270, 290, 290, face.mustache, seed);
    img
}

fn render_small_face(seed: u64, body: Tex, face: &GrayImage) -> GrayImage {
    let mut img = background();
    let [px, py, pw, ph] = ENTRANCE_PERSON;
    fill(&mut img, px, py, px + pw, py + ph, body, seed);
    paste(&mut img, face, ENTRANCE_FACE[0] as u32, ENTRANCE_FACE[1] as u32);
    img
}

fn render_driveway() -> GrayImage {
    let mut img = background();
    let [px, py, pw, ph] = DRIVEWAY_PERSON;
    for y in py..py + ph {
        for x in px..px + pw {
            img.put_pixel(x as u32, y as u32, Luma([140]));
        }
    }
    img
}

fn to_rgb(g: &GrayImage) -> RgbImage {
    RgbImage::from_fn(g.width(), g.height(), |x, y| {
        let v = g.get_pixel(x, y)[0];
        image::Rgb([v, v, v])
    })
}

fn png(g: &GrayImage) -> Vec<u8> {
    raster::encode_png(&DynamicImage::ImageRgb8(to_rgb(g))).unwrap()
}

fn write(path: &Path, bytes: &[u8]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, bytes).unwrap();
}

fn crop(g: &GrayImage, r: [i64; 4]) -> GrayImage {
    raster::crop(g, raster::Rect::new(r[0], r[1], r[0] + r[2], r[1] + r[3]))
}

fn naive_chi(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d / (a[i] + b[i] + 1e-12);
    }
    s
}

fn embedding_for(name: &str, index: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_of(name, 1000 + index));
    let slot = IDENTITIES.iter().chain(IMPOSTORS.iter()).position(|n| *n == name).unwrap_or(15);
    (0..EMBED_DIM)
        .map(|i| if i == slot { 1.0 } else { 0.0 } + rng.gen_range(-0.05..0.05))
        .map(|v: f64| (v * 1e6).round() / 1e6)
        .collect()
}

fn main() {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures");
    if root.exists() {
        fs::remove_dir_all(&root).unwrap();
    }
    let mut annotations = AnnotationSet::new();

    // identity chips
    let mut genuine: Vec<(String, Vec<f64>, String)> = Vec::new();
    let mut impostor: Vec<(String, Vec<f64>, String)> = Vec::new();
    let mut sharp_min = f64::INFINITY;
    let mut blurred_max: f64 = 0.0;
    for (set, names, count) in [("genuine", &IDENTITIES[..], 10u64), ("impostor", &IMPOSTORS[..], 5)] {
        for name in names {
            for i in 0..count {
                let chip = identity_chip(name, i);
                let bytes = png(&chip);
                write(&root.join(format!("chips/{set}/{name}/{i:02}.png")), &bytes);
                let decoded = raster::decode_image(&bytes).unwrap();
                annotations.insert(
                    image_id(&decoded).unwrap(),
                    ImageAnnotation {
                        embedding: Some(embedding_for(name, i)),
                        ..Default::default()
                    },
                );
                sharp_min = sharp_min.min(laplacian_variance(&chip));
                let hist = lbp_histogram(&chip).unwrap().values().to_vec();
                let entry = (name.to_string(), hist, raster::digest_hex(&bytes));
                if set == "genuine" {
                    let blurred = image::imageops::blur(&chip, 2.5);
                    blurred_max = blurred_max.max(laplacian_variance(&blurred));
                    write(&root.join(format!("chips/blurred/{name}/{i:02}.png")), &png(&blurred));
                    genuine.push(entry);
                } else {
                    impostor.push(entry);
                }
            }
        }
    }
    write(&root.join("chips/tiny/00.png"), &png(&identity_chip("alice", 99).view(0, 0, 15, 15).to_image()));
    write(&root.join("chips/tiny/01.png"), &png(&identity_chip("bob", 99).view(0, 0, 15, 15).to_image()));

    // calibration oracle: observed-distance sweep for best F1
    let mut gd = Vec::new();
    for i in 0..genuine.len() {
        for j in i + 1..genuine.len() {
            if genuine[i].0 == genuine[j].0 {
                gd.push(naive_chi(&genuine[i].1, &genuine[j].1));
            }
        }
    }
    let mut idd = Vec::new();
    for g in &genuine {
        for m in &impostor {
            idd.push(naive_chi(&g.1, &m.1));
        }
    }
    let mut best = (0.0, -1.0);
    let mut cands: Vec<f64> = gd.iter().chain(idd.iter()).copied().collect();
    cands.sort_by(f64::total_cmp);
    for &t in &cands {
        let tp = gd.iter().filter(|&&d| d <= t).count() as f64;
        let fp = idd.iter().filter(|&&d| d <= t).count() as f64;
        let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + (gd.len() as f64 - tp)) };
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    let tau = best.0;
    let max_genuine = gd.iter().copied().fold(0.0, f64::max);
    let mut correct = 0;
    for (i, p) in genuine.iter().enumerate() {
        let mut nearest = (f64::INFINITY, String::new());
        for (j, t) in genuine.iter().enumerate() {
            if i != j {
                let d = naive_chi(&p.1, &t.1);
                if d < nearest.0 || (d == nearest.0 && t.0 < nearest.1) {
                    nearest = (d, t.0.clone());
                }
            }
        }
        if nearest.1 == p.0 && nearest.0 <= tau {
            correct += 1;
        }
    }
    let loo = correct as f64 / genuine.len() as f64;
    println!(
        "tau {tau} (F1 {}), max genuine {max_genuine}, min impostor {}, LOO {loo}",
        best.1,
        idd.iter().copied().fold(f64::INFINITY, f64::min)
    );
    println!("sharp min {sharp_min}, blurred max {blurred_max}");

    // scenes
    let john = identity_chip("john", 0);
    let sample2_face = FaceTextures {
        head: Tex::Hair,
        eye: Tex::NoEyeglass,
        beard: Tex::Beard,
        mustache: Tex::Mustache,
    };
    let entrance = render_small_face(0, Tex::Phone, &john);
    let backdoor = render_backdoor(0, Tex::Gun, &sample2_face);
    let driveway = render_driveway();
    let entrance_png = png(&entrance);
    let backdoor_png = png(&backdoor);
    write(&root.join("cameras/entrance/000.png"), &entrance_png);
    write(&root.join("cameras/backdoor/000.png"), &backdoor_png);
    for i in 0..10 {
        write(&root.join(format!("cameras/driveway/{i:03}.png")), &png(&driveway));
    }
    let bbox = |r: [i64; 4], s: f64| BoundingBox::new(r[0], r[1], r[2], r[3], s);
    let id = |g: &GrayImage| image_id(&DynamicImage::ImageRgb8(to_rgb(g))).unwrap();
    annotations.insert(
        id(&entrance),
        ImageAnnotation {
            persons: vec![bbox(ENTRANCE_PERSON, 0.97)],
            faces: vec![FaceAnnotation {
                rect: ENTRANCE_FACE,
                score: 0.99,
                landmarks: entrance_landmarks(ENTRANCE_FACE[0], ENTRANCE_FACE[1]),
            }],
            embedding: None,
        },
    );
    annotations.insert(
        id(&backdoor),
        ImageAnnotation {
            persons: vec![bbox(BACKDOOR_PERSON, 0.95)],
            faces: vec![FaceAnnotation {
                rect: BACKDOOR_FACE,
                score: 0.98,
                landmarks: backdoor_landmarks(),
            }],
            embedding: None,
        },
    );
    annotations.insert(
        id(&driveway),
        ImageAnnotation {
            persons: vec![bbox(DRIVEWAY_PERSON, 0.9)],
            faces: vec![],
            embedding: None,
        },
    );
    annotations.insert(
        id(&crop(&backdoor, BACKDOOR_FACE)),
        ImageAnnotation {
            embedding: Some(embedding_for("stranger", 0).iter().map(|v| v - 0.5).collect()),
            ..Default::default()
        },
    );

    // attribute training data from alternate-seed renders
    let mut train: BTreeMap<String, Vec<GrayImage>> = BTreeMap::new();
    let variants = [
        (AttributeClass::Hair, Tex::Hair, PatchKind::Head),
        (AttributeClass::Baldhead, Tex::Bald, PatchKind::Head),
        (AttributeClass::Eyeglass, Tex::Eyeglass, PatchKind::Eye),
        (AttributeClass::Beard, Tex::Beard, PatchKind::Beard),
        (AttributeClass::Nobeard, Tex::NoBeard, PatchKind::Beard),
        (AttributeClass::Mustache, Tex::Mustache, PatchKind::Mustache),
        (AttributeClass::Nomustache, Tex::NoMustache, PatchKind::Mustache),
    ];
    let lm = backdoor_landmarks();
    let face_box = bbox(BACKDOOR_FACE, 1.0);
    let mut region_samples = |dir: &str, kind: PatchKind, make: &dyn Fn(u64) -> FaceTextures| {
        for seed in 1..=5u64 {
            let frame = render_backdoor(seed, Tex::Gun, &make(seed));
            let patches = crop_face_patches(&frame, &face_box, &lm).unwrap();
            let p = patches.get(kind).unwrap().clone();
            let flipped = augment(&p, &[AugmentOp::FlipH]).remove(0);
            train.entry(dir.to_string()).or_default().extend([p, flipped]);
        }
    };
    let alt = [Tex::Bald, Tex::Eyeglass, Tex::NoBeard, Tex::NoMustache];
    for (class, tex, kind) in variants {
        region_samples(class.name(), kind, &|seed| {
            let mut f = FaceTextures {
                head: if seed % 2 == 0 { Tex::Hair } else { alt[0] },
                eye: if seed % 2 == 0 { Tex::NoEyeglass } else { alt[1] },
                beard: if seed % 3 == 0 { Tex::Beard } else { alt[2] },
                mustache: if seed % 3 == 0 { Tex::Mustache } else { alt[3] },
            };
            match kind {
                PatchKind::Head => f.head = tex,
                PatchKind::Eye => f.eye = tex,
                PatchKind::Beard => f.beard = tex,
                PatchKind::Mustache => f.mustache = tex,
            }
            f
        });
    }
    region_samples(doorwatch::attributes::NO_EYEGLASS_DIR, PatchKind::Eye, &|seed| FaceTextures {
        head: if seed % 2 == 0 { Tex::Hair } else { Tex::Bald },
        eye: Tex::NoEyeglass,
        beard: if seed % 3 == 0 { Tex::Beard } else { Tex::NoBeard },
        mustache: if seed % 3 == 0 { Tex::Mustache } else { Tex::NoMustache },
    });
    for seed in 1..=5u64 {
        let f = FaceTextures {
            head: if seed % 2 == 0 { Tex::Hair } else { Tex::Bald },
            eye: if seed % 2 == 1 { Tex::NoEyeglass } else { Tex::Eyeglass },
            beard: if seed % 2 == 0 { Tex::Beard } else { Tex::NoBeard },
            mustache: if seed % 2 == 1 { Tex::Mustache } else { Tex::NoMustache },
        };
        let other = IDENTITIES[(seed as usize) % 4];
        let samples = [
            (AttributeClass::Gun, crop(&render_backdoor(seed, Tex::Gun, &f), BACKDOOR_PERSON)),
            (
                AttributeClass::Cellphone,
                crop(&render_small_face(seed, Tex::Phone, &identity_chip(other, 20 + seed)), ENTRANCE_PERSON),
            ),
            (
                AttributeClass::Mask,
                crop(&render_small_face(seed, Tex::Mask, &identity_chip(other, 30 + seed)), ENTRANCE_PERSON),
            ),
        ];
        for (class, c) in samples {
            let flipped = augment(&c, &[AugmentOp::FlipH]).remove(0);
            train.entry(class.name().to_string()).or_default().extend([c, flipped]);
        }
    }
    let mut flat: Vec<(String, GrayImage)> = Vec::new();
    for (dir, imgs) in &train {
        for (i, img) in imgs.iter().enumerate() {
            write(&root.join(format!("attributes/train/{dir}/{i:02}.png")), &png(img));
            flat.push((dir.clone(), img.clone()));
        }
    }

    // person radius between the farthest own-class sample and the nearest foreign one
    let probe = PatchClassifier::train(&flat, f64::INFINITY).unwrap();
    let centroid = |c: AttributeClass| {
        probe
            .centroids
            .iter()
            .find(|k| k.class == Some(c))
            .unwrap()
            .centroid
            .values()
            .to_vec()
    };
    let person = [AttributeClass::Gun, AttributeClass::Cellphone, AttributeClass::Mask];
    let mut within: f64 = 0.0;
    let mut foreign = f64::INFINITY;
    let mut person_probes: Vec<(Option<AttributeClass>, GrayImage)> = flat
        .iter()
        .filter_map(|(n, g)| n.parse::<AttributeClass>().ok().filter(|c| person.contains(c)).map(|c| (Some(c), g.clone())))
        .collect();
    person_probes.push((None, crop(&driveway, DRIVEWAY_PERSON)));
    person_probes.push((Some(AttributeClass::Gun), crop(&backdoor, BACKDOOR_PERSON)));
    person_probes.push((Some(AttributeClass::Cellphone), crop(&entrance, ENTRANCE_PERSON)));
    for (own, g) in &person_probes {
        let h = lbp_histogram(g).unwrap().values().to_vec();
        for c in person {
            let d = naive_chi(&h, &centroid(c));
            if Some(c) == *own {
                within = within.max(d);
            } else {
                foreign = foreign.min(d);
            }
        }
    }
    assert!(within < foreign, "person classes overlap: {within} vs {foreign}");
    let radius = ((within + foreign) / 2.0 * 1000.0).round() / 1000.0;
    println!("person radius {radius} (within {within}, foreign {foreign})");
    let model = PatchClassifier::train(&flat, radius).unwrap();
    model.save(&root.join("attributes/model.json")).unwrap();

    // training-set accuracy with an independent nearest-centroid loop
    let mut hits = 0;
    let mut total = 0;
    for (name, img) in &flat {
        let own_region = match name.parse::<AttributeClass>() {
            Ok(c) => c.region(),
            Err(_) => Region::Eye,
        };
        if own_region == Region::Person {
            continue;
        }
        let h = lbp_histogram(img).unwrap().values().to_vec();
        let mut best = (f64::INFINITY, None);
        for c in model.centroids.iter().filter(|c| c.region == own_region) {
            let d = naive_chi(&h, c.centroid.values());
            if d < best.0 {
                best = (d, c.class);
            }
        }
        let want = name.parse::<AttributeClass>().ok();
        total += 1;
        if best.1 == want {
            hits += 1;
        }
    }
    let attr_acc = f64::from(hits) / f64::from(total);
    println!("attribute accuracy {attr_acc}");

    let calibration = json!({
        "threshold": tau,
        "f1": best.1,
        "threshold_max_genuine_x1_1": max_genuine * 1.1,
        "loo_accuracy_floor": loo,
        "sharp_laplacian_min": sharp_min,
        "blurred_laplacian_max": blurred_max,
        "person_radius": radius,
        "attribute_accuracy_floor": attr_acc,
    });
    write(&root.join("calibration.json"), serde_json::to_string_pretty(&calibration).unwrap().as_bytes());
    write(&root.join("annotations.json"), serde_json::to_string_pretty(&annotations).unwrap().as_bytes());

    // golden files
    let src = GrayImage::from_fn(32, 32, |x, y| {
        let base = (x * 5 + y * 2) as u8;
        if x < 12 && y < 6 {
            Luma([250])
        } else if x > 24 && y > 20 {
            Luma([10])
        } else {
            Luma([base])
        }
    });
    write(&root.join("golden/rotate_src.png"), &raster::encode_png(&DynamicImage::ImageLuma8(src.clone())).unwrap());
    let rotated = rotate_nearest(&src, 15.0);
    write(&root.join("golden/rotate_p15.png"), &raster::encode_png(&DynamicImage::ImageLuma8(rotated)).unwrap());

    let event = sample2_event();
    let ctx = golden_context();
    let mms = compose_mms(&event, &golden_recipient(), Some(&backdoor_png), &ctx, DEFAULT_ATTACHMENT_CAP).unwrap();
    write(&root.join("golden/mms_sample2.eml"), &mms);
    println!("fixtures written to {}", root.display());
}

fn sample2_event() -> ThreatEvent {
    ThreatEvent {
        event_id: "00000000-0000-4000-8000-000000000002".into(),
        timestamp: chrono::Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 5).unwrap(),
        camera_id: "cam-backdoor".into(),
        location_label: "back door".into(),
        identity: "Unknown".into(),
        classes: vec![
            AttributeClass::Gun,
            AttributeClass::Beard,
            AttributeClass::Mustache,
            AttributeClass::Hair,
        ],
        description: "An unknown person with a gun who has beard, mustache, hair, and no-eyeglass at the back door".into(),
        image_ref: "images/cam-backdoor_000000.png".into(),
        notified: true,
    }
}

fn golden_context() -> ComposeContext {
    ComposeContext {
        date: chrono::Utc.with_ymd_and_hms(2026, 1, 2, 3, 4, 6).unwrap(),
        boundary_seed: 7,
        sender: "doorwatch@example.org".into(),
    }
}

fn golden_recipient() -> Recipient {
    Recipient {
        name: "Owner".into(),
        email: Some("owner@example.org".into()),
        phone_number: Some("+1 (555) 010-0199".into()),
        carrier_gateway_domain: Some("mms.example.net".into()),
    }
}
