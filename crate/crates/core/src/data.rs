//! Frame streams: binary PGM I/O, COIL-20 ingestion, and a synthetic
//! temporally correlated stream for self-contained runs.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Number of poses per object in COIL-20.
pub const COIL20_VIEWS: usize = 72;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// `[1, H, W]`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub object_id: usize,
    pub view_angle_index: usize,
}

impl Frame {
    /// One-hot target for this frame's label.
    pub fn target(&self, num_classes: usize) -> Result<Tensor> {
        one_hot(self.label, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ordering {
    /// By object, then pose.
    Temporal,
    /// All frames of class k before any frame of class k+1, poses ascending.
    ClassIncremental,
    /// Seeded permutation.
    Shuffled(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStream {
    pub frames: Vec<Frame>,
    pub ordering: Ordering,
}

impl FrameStream {
    pub fn new(mut frames: Vec<Frame>, ordering: Ordering) -> Self {
        match ordering {
            Ordering::Temporal => frames.sort_by_key(|f| (f.object_id, f.view_angle_index)),
            Ordering::ClassIncremental => {
                frames.sort_by_key(|f| (f.label, f.object_id, f.view_angle_index))
            }
            Ordering::Shuffled(seed) => {
                frames.sort_by_key(|f| (f.object_id, f.view_angle_index));
                frames.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            }
        }
        FrameStream { frames, ordering }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Which poses go to the test split.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// Pose indices with `view % n == 0` are held out.
    EveryNth(usize),
    /// Everything is training data; the test split is empty.
    None,
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::EveryNth(4)
    }
}

impl SplitRule {
    fn is_test(self, view: usize) -> bool {
        match self {
            SplitRule::EveryNth(n) => n > 0 && view.is_multiple_of(n),
            SplitRule::None => false,
        }
    }
}

fn split_frames(frames: Vec<Frame>, rule: SplitRule, ordering: Ordering) -> (FrameStream, FrameStream) {
    let (test, train): (Vec<Frame>, Vec<Frame>) =
        frames.into_iter().partition(|f| rule.is_test(f.view_angle_index));
    (
        FrameStream::new(train, ordering),
        FrameStream::new(test, Ordering::Temporal),
    )
}

pub fn one_hot(label: usize, n: usize) -> Result<Tensor> {
    if label >= n {
        return Err(Error::Index {
            index: label,
            detail: format!("one-hot over {n} classes"),
        });
    }
    let mut t = Tensor::zeros(&[n]);
    t.data_mut()[label] = 1.0;
    Ok(t)
}

/// Parses a binary (P5) PGM with maxval 255 into `[1, H, W]` scaled to `[0, 1]`.
pub fn parse_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::Pgm {
            offset: 0,
            detail: "missing P5 magic".into(),
        });
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for (k, name) in ["width", "height", "maxval"].iter().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Pgm {
                offset: start,
                detail: format!("expected {name}"),
            });
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        fields[k] = text.parse().map_err(|_| Error::Pgm {
            offset: start,
            detail: format!("{name} out of range"),
        })?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::Pgm {
            offset: pos,
            detail: format!("empty image {width}x{height}"),
        });
    }
    if maxval != 255 {
        return Err(Error::Pgm {
            offset: pos,
            detail: format!("unsupported maxval {maxval}, only 255 is accepted"),
        });
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Pgm {
            offset: pos,
            detail: "expected single whitespace before raster".into(),
        });
    }
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| Error::Pgm {
        offset: bytes.len(),
        detail: format!("truncated raster: need {n} bytes from offset {pos}"),
    })?;
    let data = raster.iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(vec![1, height, width], data)
}

pub fn load_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

/// Encodes a `[1, H, W]` or `[H, W]` tensor as P5, rounding `value·255`.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = match image.shape() {
        [1, h, w] | [h, w] => (*h, *w),
        s => return Err(Error::dim("encode_pgm", format!("expected [1,H,W] or [H,W], got {s:?}"))),
    };
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}

/// `obj<k>__<angle>.pgm` → `(k, angle)`.
pub fn parse_coil20_name(name: &str) -> Option<(usize, usize)> {
    let stem = name.strip_prefix("obj")?.strip_suffix(".pgm")?;
    let (obj, angle) = stem.split_once("__")?;
    Some((obj.parse().ok()?, angle.parse().ok()?))
}

/// Loads every `obj<k>__<angle>.pgm` in `dir`. Objects must be numbered
/// `1..=N` and each must have all 72 poses exactly once; label is `k − 1`.
pub fn load_coil20(dir: &Path, ordering: Ordering, split: SplitRule) -> Result<(FrameStream, FrameStream)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut found: BTreeMap<(usize, usize), Vec<String>> = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(key) = parse_coil20_name(&name) {
            found.entry(key).or_default().push(name);
        }
    }
    if found.is_empty() {
        return Err(Error::Ingest(format!("no obj<k>__<angle>.pgm files in {}", dir.display())));
    }
    let max_obj = found.keys().map(|k| k.0).max().unwrap_or(0);
    let mut problems = Vec::new();
    for ((obj, angle), names) in &found {
        if *obj == 0 {
            problems.push(format!("object index 0 in {}", names.join(", ")));
        }
        if *angle >= COIL20_VIEWS {
            problems.push(format!("pose {angle} out of range in {}", names.join(", ")));
        }
        if names.len() > 1 {
            problems.push(format!("duplicate view obj{obj} pose {angle}: {}", names.join(", ")));
        }
    }
    for obj in 1..=max_obj {
        let missing: Vec<String> = (0..COIL20_VIEWS)
            .filter(|a| !found.contains_key(&(obj, *a)))
            .map(|a| a.to_string())
            .collect();
        if !missing.is_empty() {
            problems.push(format!("obj{obj} missing poses [{}]", missing.join(",")));
        }
    }
    if !problems.is_empty() {
        return Err(Error::Ingest(problems.join("; ")));
    }
    let mut frames = Vec::with_capacity(found.len());
    for ((obj, angle), names) in found {
        let image = load_pgm(&dir.join(&names[0]))?;
        frames.push(Frame {
            image,
            label: obj - 1,
            object_id: obj,
            view_angle_index: angle,
        });
    }
    Ok(split_frames(frames, split, ordering))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    pub num_classes: usize,
    /// Poses per class, before the train/test split.
    pub frames_per_class: usize,
    /// Square image side.
    pub size: usize,
    /// Pixels a pattern point at radius `size/4` moves between poses.
    pub drift_step: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        SyntheticParams {
            seed: 0,
            num_classes: 20,
            frames_per_class: 16,
            size: 64,
            drift_step: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
struct Blob {
    radius: f64,
    angle: f64,
    width: f64,
    amplitude: f64,
}

#[derive(Debug, Clone)]
struct Bar {
    angle: f64,
    offset: f64,
    half_length: f64,
    width: f64,
}

#[derive(Debug, Clone)]
struct Pattern {
    blobs: Vec<Blob>,
    bar: Bar,
}

impl Pattern {
    fn random(rng: &mut ChaCha8Rng, size: f64) -> Self {
        let blobs = (0..3)
            .map(|_| Blob {
                radius: rng.gen_range(0.08..0.38) * size,
                angle: rng.gen_range(0.0..std::f64::consts::TAU),
                width: rng.gen_range(0.04..0.09) * size,
                amplitude: rng.gen_range(0.5..1.0),
            })
            .collect();
        let bar = Bar {
            angle: rng.gen_range(0.0..std::f64::consts::PI),
            offset: rng.gen_range(-0.25..0.25) * size,
            half_length: rng.gen_range(0.15..0.35) * size,
            width: rng.gen_range(0.02..0.04) * size,
        };
        Pattern { blobs, bar }
    }

    fn render(&self, size: usize, rotation: f64) -> Tensor {
        let c = (size as f64 - 1.0) / 2.0;
        let centers: Vec<(f64, f64, &Blob)> = self
            .blobs
            .iter()
            .map(|b| {
                let a = b.angle + rotation;
                (c + b.radius * a.cos(), c + b.radius * a.sin(), b)
            })
            .collect();
        let bar_angle = self.bar.angle + rotation;
        let (dx, dy) = (bar_angle.cos(), bar_angle.sin());
        // bar centre offset perpendicular to its axis, rotated with the pattern
        let (bx, by) = (c - self.bar.offset * dy, c + self.bar.offset * dx);
        let mut data = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                let (x, y) = (col as f64, row as f64);
                let mut v = 0.0;
                for (cx, cy, b) in &centers {
                    let r2 = (x - cx).powi(2) + (y - cy).powi(2);
                    v += b.amplitude * (-r2 / (2.0 * b.width * b.width)).exp();
                }
                let (rx, ry) = (x - bx, y - by);
                let along = rx * dx + ry * dy;
                let across = -rx * dy + ry * dx;
                let excess = (along.abs() - self.bar.half_length).max(0.0);
                let d2 = across * across + excess * excess;
                v += 0.8 * (-d2 / (2.0 * self.bar.width * self.bar.width)).exp();
                data.push(v.clamp(0.0, 1.0));
            }
        }
        Tensor::new(vec![1, size, size], data).expect("size*size pixels")
    }
}

/// Class `k` is a fixed arrangement of three blobs and a bar; successive
/// poses rotate it about the image centre so that a point at radius
/// `size/4` moves `drift_step` pixels per pose. Test split: every 4th pose.
pub fn synthetic_stream(params: &SyntheticParams, ordering: Ordering) -> Result<(FrameStream, FrameStream)> {
    if params.size < 16 {
        return Err(Error::Config(format!("synthetic size must be at least 16, got {}", params.size)));
    }
    if params.num_classes == 0 || params.frames_per_class == 0 {
        return Err(Error::Config("synthetic stream needs classes and frames".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let radius = params.size as f64 / 4.0;
    let step = params.drift_step / radius;
    let mut frames = Vec::with_capacity(params.num_classes * params.frames_per_class);
    for class in 0..params.num_classes {
        let pattern = Pattern::random(&mut rng, params.size as f64);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        for view in 0..params.frames_per_class {
            frames.push(Frame {
                image: pattern.render(params.size, phase + step * view as f64),
                label: class,
                object_id: class + 1,
                view_angle_index: view,
            });
        }
    }
    Ok(split_frames(frames, SplitRule::default(), ordering))
}

/// A stream repeating one frame `len` times.
pub fn constant_stream(frame: &Frame, len: usize) -> FrameStream {
    let frames = (0..len)
        .map(|i| Frame {
            view_angle_index: i,
            ..frame.clone()
        })
        .collect();
    FrameStream::new(frames, Ordering::Temporal)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_hand_file() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        let t = parse_pgm(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn pgm_comments_and_errors() {
        let mut bytes = b"P5\n# made by hand\n1 1\n255\n".to_vec();
        bytes.push(51);
        assert_eq!(parse_pgm(&bytes).unwrap().data(), &[0.2]);

        let mut bad = b"P5\n2 2\n65535\n".to_vec();
        bad.extend([0u8; 8]);
        assert!(matches!(parse_pgm(&bad), Err(Error::Pgm { .. })));

        let trunc = b"P5\n2 2\n255\n\x00\x01".to_vec();
        match parse_pgm(&trunc) {
            Err(Error::Pgm { offset, .. }) => assert_eq!(offset, trunc.len()),
            other => panic!("{other:?}"),
        }
        match parse_pgm(b"P2\n1 1\n255\n0") {
            Err(Error::Pgm { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("{other:?}"),
        }
        match parse_pgm(b"P5\n1 x\n255\n0") {
            Err(Error::Pgm { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pgm_round_trip() {
        let data: Vec<f64> = (0..12).map(|v| f64::from(v * 20) / 255.0).collect();
        let t = Tensor::new(vec![1, 3, 4], data).unwrap();
        assert_eq!(parse_pgm(&encode_pgm(&t).unwrap()).unwrap(), t);
    }

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(3, 5).unwrap().data(), &[0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(one_hot(0, 1).unwrap().data(), &[1.0]);
        assert!(one_hot(5, 5).is_err());
        for l in 0..7 {
            assert_eq!(one_hot(l, 7).unwrap().sum(), 1.0);
        }
    }

    #[test]
    fn coil_names() {
        assert_eq!(parse_coil20_name("obj12__71.pgm"), Some((12, 71)));
        assert_eq!(parse_coil20_name("obj1__0.png"), None);
        assert_eq!(parse_coil20_name("readme.txt"), None);
    }

    #[test]
    fn synthetic_zero_drift_repeats_frames() {
        let p = SyntheticParams {
            num_classes: 3,
            frames_per_class: 8,
            size: 16,
            drift_step: 0.0,
            ..Default::default()
        };
        let (train, test) = synthetic_stream(&p, Ordering::Temporal).unwrap();
        assert_eq!(train.len(), 18);
        assert_eq!(test.len(), 6);
        for w in train.frames.windows(2) {
            if w[0].label == w[1].label {
                assert_eq!(w[0].image, w[1].image);
            }
        }
    }

    #[test]
    fn synthetic_deterministic_in_seed() {
        let p = SyntheticParams {
            num_classes: 4,
            frames_per_class: 4,
            size: 16,
            ..Default::default()
        };
        let a = synthetic_stream(&p, Ordering::Temporal).unwrap();
        let b = synthetic_stream(&p, Ordering::Temporal).unwrap();
        assert_eq!(a, b);
        let c = synthetic_stream(&SyntheticParams { seed: 9, ..p }, Ordering::Temporal).unwrap();
        assert_ne!(a.0.frames[0].image, c.0.frames[0].image);
        for f in &a.0.frames {
            assert!(f.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert!(synthetic_stream(&SyntheticParams { size: 8, ..p }, Ordering::Temporal).is_err());
    }

    #[test]
    fn orderings() {
        let p = SyntheticParams {
            num_classes: 3,
            frames_per_class: 8,
            size: 16,
            ..Default::default()
        };
        let (ci, _) = synthetic_stream(&p, Ordering::ClassIncremental).unwrap();
        assert!(ci.frames.windows(2).all(|w| w[0].label <= w[1].label));
        let (sh, _) = synthetic_stream(&p, Ordering::Shuffled(1)).unwrap();
        let (sh2, _) = synthetic_stream(&p, Ordering::Shuffled(1)).unwrap();
        assert_eq!(sh, sh2);
        assert_ne!(sh.frames, ci.frames);
    }
}
