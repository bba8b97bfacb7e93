use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use image::RgbImage;
use ndarray::Array2;
use serde::Deserialize;

use crate::corpus::{Post, StudentBag};
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

/// Per-post visual feature names, in column order.
pub const VISUAL_COLUMNS: [&str; 4] = ["hue", "saturation", "value", "faces"];

/// Channel means in HSV space, each in `[0, 1]` (hue in `[0, 1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hsv<T> {
    pub h: T,
    pub s: T,
    pub v: T,
}

/// Converts an 8-bit RGB pixel to HSV with hue scaled to `[0, 1)`.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = rgb.map(f64::from);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max / 255.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    (h / 6.0, s, v)
}

/// Arithmetic channel means over all pixels. Hue is averaged linearly.
pub fn hsv_mean_pixels<T: Scalar>(pixels: &[[u8; 3]]) -> Result<Hsv<T>> {
    if pixels.is_empty() {
        return Err(Error::EmptyImage);
    }
    let (mut h, mut s, mut v) = (0.0, 0.0, 0.0);
    for &p in pixels {
        let (ph, ps, pv) = rgb_to_hsv(p);
        h += ph;
        s += ps;
        v += pv;
    }
    let n = pixels.len() as f64;
    Ok(Hsv {
        h: T::of(h / n),
        s: T::of(s / n),
        v: T::of(v / n),
    })
}

pub fn hsv_mean<T: Scalar>(img: &RgbImage) -> Result<Hsv<T>> {
    let pixels: Vec<[u8; 3]> = img.pixels().map(|p| p.0).collect();
    hsv_mean_pixels(&pixels)
}

/// Resolves a post's `image_ref` to decoded pixels.
pub trait ImageSource: Send + Sync {
    fn load(&self, image_ref: &str) -> Result<RgbImage>;
}

/// Reads PNG or JPEG files relative to a root directory.
#[derive(Debug, Clone)]
pub struct DirImageSource {
    root: PathBuf,
}

impl DirImageSource {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DirImageSource { root: root.into() }
    }
}

impl ImageSource for DirImageSource {
    fn load(&self, image_ref: &str) -> Result<RgbImage> {
        let path = self.root.join(image_ref);
        let img = image::open(&path).map_err(|e| Error::Image {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(img.to_rgb8())
    }
}

/// Images held in memory, keyed by `image_ref`.
#[derive(Debug, Clone, Default)]
pub struct MemoryImageSource {
    pub images: BTreeMap<String, RgbImage>,
}

impl ImageSource for MemoryImageSource {
    fn load(&self, image_ref: &str) -> Result<RgbImage> {
        self.images.get(image_ref).cloned().ok_or_else(|| Error::Image {
            path: image_ref.to_string(),
            message: "not in memory source".into(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceProvenance {
    /// The post has no image, so no detector was consulted.
    NoImage,
    Stub,
    Sidecar,
    /// Taken from the post's own `face_count` field.
    Recorded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceCount {
    pub count: u32,
    pub provenance: FaceProvenance,
}

/// Pluggable face counter.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, post: &Post) -> Result<FaceCount>;

    fn count(&self, post: &Post) -> Result<FaceCount> {
        if post.image_ref.is_none() {
            return Ok(FaceCount {
                count: 0,
                provenance: FaceProvenance::NoImage,
            });
        }
        self.detect(post)
    }
}

/// Reports zero faces for every image.
#[derive(Debug, Clone, Copy, Default)]
pub struct StubFaces;

impl FaceDetector for StubFaces {
    fn detect(&self, _post: &Post) -> Result<FaceCount> {
        Ok(FaceCount {
            count: 0,
            provenance: FaceProvenance::Stub,
        })
    }
}

/// Precomputed counts from a `post_id,count` CSV.
#[derive(Debug, Clone, Default)]
pub struct SidecarFaces {
    counts: HashMap<String, u32>,
}

impl SidecarFaces {
    pub fn new(counts: HashMap<String, u32>) -> Self {
        SidecarFaces { counts }
    }
}

impl FaceDetector for SidecarFaces {
    fn detect(&self, post: &Post) -> Result<FaceCount> {
        self.counts
            .get(&post.post_id)
            .map(|&count| FaceCount {
                count,
                provenance: FaceProvenance::Sidecar,
            })
            .ok_or_else(|| Error::MissingFaceCount(post.post_id.clone()))
    }
}

/// Uses the `face_count` stored on each post.
#[derive(Debug, Clone, Copy, Default)]
pub struct RecordedFaces;

impl FaceDetector for RecordedFaces {
    fn detect(&self, post: &Post) -> Result<FaceCount> {
        post.face_count
            .map(|count| FaceCount {
                count,
                provenance: FaceProvenance::Recorded,
            })
            .ok_or_else(|| Error::MissingFaceCount(post.post_id.clone()))
    }
}

#[derive(Deserialize)]
struct SidecarRow {
    post_id: String,
    count: u32,
}

pub fn load_face_sidecar(path: &Path) -> Result<SidecarFaces> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_face_sidecar(file)
}

pub fn read_face_sidecar<R: std::io::Read>(input: R) -> Result<SidecarFaces> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(input);
    let mut counts = HashMap::new();
    for row in rdr.deserialize() {
        let row: SidecarRow = row?;
        if counts.insert(row.post_id.clone(), row.count).is_some() {
            return Err(Error::DuplicateId(row.post_id));
        }
    }
    Ok(SidecarFaces::new(counts))
}

/// `post_id,count` rows in the order given.
pub fn write_face_sidecar<'a, I, W>(rows: I, out: W) -> Result<()>
where
    I: IntoIterator<Item = (&'a str, u32)>,
    W: std::io::Write,
{
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["post_id", "count"])?;
    for (id, n) in rows {
        w.write_record([id, &n.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<faces>", e))
}

/// Per-post `(hue, saturation, value, faces)` in corpus order. Posts without
/// an image yield a zero row.
pub fn visual_matrix<T: Scalar>(
    corpus: &[StudentBag],
    images: &dyn ImageSource,
    faces: &dyn FaceDetector,
) -> Result<FeatureMatrix<T>> {
    let n: usize = corpus.iter().map(StudentBag::len).sum();
    let mut data = Array2::zeros((n, VISUAL_COLUMNS.len()));
    let mut ids = Vec::with_capacity(n);
    let mut r = 0;
    for bag in corpus {
        for post in &bag.posts {
            if let Some(image_ref) = &post.image_ref {
                let hsv: Hsv<T> = hsv_mean(&images.load(image_ref)?)?;
                data[[r, 0]] = hsv.h;
                data[[r, 1]] = hsv.s;
                data[[r, 2]] = hsv.v;
                data[[r, 3]] = T::of(faces.count(post)?.count as f64);
            }
            ids.push(format!("{}/{}", bag.student_id, post.post_id));
            r += 1;
        }
    }
    FeatureMatrix::new(ids, VISUAL_COLUMNS.iter().map(|c| c.to_string()).collect(), data)
}
