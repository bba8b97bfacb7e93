//! Precomputed deep embeddings: the `MILEMB v1` file formats, mean pooling,
//! and post-level matrix assembly.
//!
//! Both formats start with one ASCII header line
//! `MILEMB v1 <modality> <encoder> <d> <count>\n`. In the binary format each
//! of the `count` rows is the post id, a `\n`, then `d` little-endian IEEE
//! 754 32-bit floats. The CSV twin instead has one text line per row:
//! `post_id,v1,...,vd`. Files ending in `.csv` are read and written as the
//! CSV twin; every other path uses the binary format.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::StudentBag;
use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;
use crate::scalar::Scalar;

pub const MAGIC: &str = "MILEMB";
pub const VERSION: &str = "v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Image => "image",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Modality::Text),
            "image" => Ok(Modality::Image),
            _ => Err(Error::EmbeddingHeader(format!("unknown modality `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireFormat {
    Binary,
    Csv,
}

impl WireFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => WireFormat::Csv,
            _ => WireFormat::Binary,
        }
    }
}

/// Vectors of one dimension keyed by post id, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    modality: Modality,
    encoder: String,
    dim: usize,
    ids: Vec<String>,
    index: HashMap<String, usize>,
    data: Vec<f32>,
}

impl EmbeddingTable {
    pub fn new(modality: Modality, encoder: impl Into<String>, dim: usize) -> Result<Self> {
        let encoder = encoder.into();
        if encoder.is_empty() || encoder.chars().any(char::is_whitespace) {
            return Err(Error::EmbeddingHeader(format!(
                "encoder name `{encoder}` must be non-empty without whitespace"
            )));
        }
        if dim == 0 {
            return Err(Error::EmbeddingHeader("dimension must be positive".into()));
        }
        Ok(EmbeddingTable {
            modality,
            encoder,
            dim,
            ids: Vec::new(),
            index: HashMap::new(),
            data: Vec::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        let row = self.ids.len() + 1;
        if id.is_empty() || id.contains(['\n', '\r', ',']) {
            return Err(Error::EmbeddingRow {
                row,
                message: format!("invalid post id {id:?}"),
            });
        }
        if vector.len() != self.dim {
            return Err(Error::EmbeddingRow {
                row,
                message: format!("expected {} values, got {}", self.dim, vector.len()),
            });
        }
        if let Some(v) = vector.iter().find(|v| !v.is_finite()) {
            return Err(Error::EmbeddingRow {
                row,
                message: format!("non-finite value {v}"),
            });
        }
        if self.index.contains_key(&id) {
            return Err(Error::EmbeddingRow {
                row,
                message: format!("duplicate post id `{id}`"),
            });
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(vector);
        Ok(())
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn encoder(&self) -> &str {
        &self.encoder
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    fn header(&self) -> String {
        format!(
            "{MAGIC} {VERSION} {} {} {} {}\n",
            self.modality,
            self.encoder,
            self.dim,
            self.len()
        )
    }

    pub fn write<W: Write>(&self, mut out: W, format: WireFormat) -> Result<()> {
        let io = |e| Error::io("<embeddings>", e);
        out.write_all(self.header().as_bytes()).map_err(io)?;
        for (i, id) in self.ids.iter().enumerate() {
            let row = &self.data[i * self.dim..(i + 1) * self.dim];
            match format {
                WireFormat::Binary => {
                    out.write_all(id.as_bytes()).map_err(io)?;
                    out.write_all(b"\n").map_err(io)?;
                    for v in row {
                        out.write_all(&v.to_le_bytes()).map_err(io)?;
                    }
                }
                WireFormat::Csv => {
                    let mut line = id.clone();
                    for v in row {
                        line.push(',');
                        line.push_str(&v.to_string());
                    }
                    line.push('\n');
                    out.write_all(line.as_bytes()).map_err(io)?;
                }
            }
        }
        out.flush().map_err(io)
    }

    pub fn read<R: Read>(input: R, format: WireFormat) -> Result<Self> {
        let mut input = BufReader::new(input);
        let mut header = String::new();
        input
            .read_line(&mut header)
            .map_err(|e| Error::io("<embeddings>", e))?;
        let fields: Vec<&str> = header.trim_end_matches(['\n', '\r']).split(' ').collect();
        let [magic, version, modality, encoder, dim, count] = fields[..] else {
            return Err(Error::EmbeddingHeader(format!(
                "expected 6 fields, got {:?}",
                header.trim_end()
            )));
        };
        if magic != MAGIC || version != VERSION {
            return Err(Error::EmbeddingHeader(format!(
                "unsupported format `{magic} {version}`"
            )));
        }
        let parse_num = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::EmbeddingHeader(format!("bad {what} `{s}`")))
        };
        let dim = parse_num(dim, "dimension")?;
        let count = parse_num(count, "row count")?;
        let mut table = EmbeddingTable::new(modality.parse()?, encoder, dim)?;
        let mut vector = vec![0f32; dim];
        let mut line = String::new();
        for row in 1..=count {
            let short = |what: &str| Error::EmbeddingRow {
                row,
                message: format!("truncated file: {what}"),
            };
            line.clear();
            let n = input
                .read_line(&mut line)
                .map_err(|e| Error::io("<embeddings>", e))?;
            if n == 0 {
                return Err(short("missing row"));
            }
            match format {
                WireFormat::Binary => {
                    let id = line
                        .strip_suffix('\n')
                        .ok_or_else(|| short("missing id terminator"))?;
                    let mut buf = vec![0u8; 4 * dim];
                    input.read_exact(&mut buf).map_err(|_| short("missing values"))?;
                    for (v, chunk) in vector.iter_mut().zip(buf.chunks_exact(4)) {
                        *v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                    }
                    table.insert(id, &vector)?;
                }
                WireFormat::Csv => {
                    let mut parts = line.trim_end_matches(['\n', '\r']).split(',');
                    let id = parts.next().unwrap_or_default().to_string();
                    let values = parts
                        .map(|s| {
                            s.trim().parse::<f32>().map_err(|_| Error::EmbeddingRow {
                                row,
                                message: format!("bad number `{s}`"),
                            })
                        })
                        .collect::<Result<Vec<f32>>>()?;
                    table.insert(id, &values)?;
                }
            }
        }
        let mut rest = Vec::new();
        input
            .read_to_end(&mut rest)
            .map_err(|e| Error::io("<embeddings>", e))?;
        if !rest.iter().all(u8::is_ascii_whitespace) {
            return Err(Error::EmbeddingRow {
                row: count + 1,
                message: format!("trailing data beyond declared {count} rows"),
            });
        }
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(file), WireFormat::for_path(path))
    }
}

pub fn load_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    EmbeddingTable::read(file, WireFormat::for_path(path))
}

/// Component-wise mean; an empty list gives the zero vector of `dim`.
pub fn mean_pool<T: Scalar, V: AsRef<[T]>>(vectors: &[V], dim: usize) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); dim];
    for v in vectors {
        let v = v.as_ref();
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        for (a, &x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    if !vectors.is_empty() {
        let n = T::of_usize(vectors.len());
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(acc)
}

/// Mean of the word vectors of the known tokens of a caption. Captions
/// without known tokens map to the zero vector.
pub fn caption_embedding<S: AsRef<str>>(tokens: &[S], words: &EmbeddingTable) -> Vec<f32> {
    let vecs: Vec<&[f32]> = tokens.iter().filter_map(|t| words.get(t.as_ref())).collect();
    mean_pool(&vecs, words.dim()).expect("table vectors share its dimension")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnMissing {
    Error,
    Zero,
}

/// A post-level embedding matrix and the posts that had no table entry.
#[derive(Debug, Clone)]
pub struct PostEmbeddings<T> {
    pub matrix: FeatureMatrix<T>,
    pub missing: Vec<String>,
}

/// One row per post in corpus order. Posts with an empty caption (text) or
/// no image (image) get a zero row without a table lookup; other posts
/// absent from the table are handled per `on_missing`.
pub fn posts_to_matrix<T: Scalar>(
    corpus: &[StudentBag],
    table: &EmbeddingTable,
    on_missing: OnMissing,
) -> Result<PostEmbeddings<T>> {
    let n: usize = corpus.iter().map(StudentBag::len).sum();
    let d = table.dim();
    let mut data = Array2::zeros((n, d));
    let mut ids = Vec::with_capacity(n);
    let mut missing = Vec::new();
    let mut r = 0;
    for bag in corpus {
        for post in &bag.posts {
            let blank = match table.modality() {
                Modality::Text => post.caption.trim().is_empty(),
                Modality::Image => post.image_ref.is_none(),
            };
            if !blank {
                match table.get(&post.post_id) {
                    Some(v) => {
                        for (j, &x) in v.iter().enumerate() {
                            data[[r, j]] = T::of(x as f64);
                        }
                    }
                    None => missing.push(post.post_id.clone()),
                }
            }
            ids.push(format!("{}/{}", bag.student_id, post.post_id));
            r += 1;
        }
    }
    if on_missing == OnMissing::Error && !missing.is_empty() {
        return Err(Error::MissingEmbeddings(missing));
    }
    let columns = (0..d).map(|j| format!("{}:{}_{j}", table.modality(), table.encoder())).collect();
    Ok(PostEmbeddings {
        matrix: FeatureMatrix::new(ids, columns, data)?,
        missing,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn table(rows: &[(&str, [f32; 4])]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(Modality::Text, "toy", 4).unwrap();
        for (id, v) in rows {
            t.insert(*id, v).unwrap();
        }
        t
    }

    fn bytes(t: &EmbeddingTable, f: WireFormat) -> Vec<u8> {
        let mut buf = Vec::new();
        t.write(&mut buf, f).unwrap();
        buf
    }

    #[test]
    fn three_rows_load() {
        let t = table(&[("a", [1.0; 4]), ("b", [0.5; 4]), ("c", [-2.0, 0.0, 1e-7, 3.25])]);
        for f in [WireFormat::Binary, WireFormat::Csv] {
            let back = EmbeddingTable::read(&bytes(&t, f)[..], f).unwrap();
            assert_eq!(back.len(), 3);
            assert_eq!(back, t);
        }
        let csv = String::from_utf8(bytes(&t, WireFormat::Csv)).unwrap();
        assert!(csv.starts_with("MILEMB v1 text toy 4 3\na,1,1,1,1\n"));
    }

    #[test]
    fn short_row_names_the_row() {
        let text = "MILEMB v1 image r34 4 2\na,1,2,3,4\nb,1,2,3\n";
        match EmbeddingTable::read(text.as_bytes(), WireFormat::Csv) {
            Err(Error::EmbeddingRow { row: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_duplicates_nonfinite_and_bad_headers() {
        let dup = "MILEMB v1 text t 1 2\na,1\na,2\n";
        assert!(matches!(
            EmbeddingTable::read(dup.as_bytes(), WireFormat::Csv),
            Err(Error::EmbeddingRow { row: 2, .. })
        ));
        let nan = "MILEMB v1 text t 1 1\na,NaN\n";
        assert!(EmbeddingTable::read(nan.as_bytes(), WireFormat::Csv).is_err());
        for h in ["MILEMB v2 text t 1 0\n", "MILEMB v1 audio t 1 0\n", "FOO\n", "MILEMB v1 text t 0 0\n"] {
            assert!(EmbeddingTable::read(h.as_bytes(), WireFormat::Csv).is_err(), "{h}");
        }
        let extra = "MILEMB v1 text t 1 1\na,1\nb,2\n";
        assert!(EmbeddingTable::read(extra.as_bytes(), WireFormat::Csv).is_err());
        let mut bin = bytes(&table(&[("a", [1.0; 4])]), WireFormat::Binary);
        bin.truncate(bin.len() - 1);
        assert!(EmbeddingTable::read(&bin[..], WireFormat::Binary).is_err());
    }

    #[test]
    fn format_follows_extension() {
        assert_eq!(WireFormat::for_path(Path::new("x.CSV")), WireFormat::Csv);
        assert_eq!(WireFormat::for_path(Path::new("x.milemb")), WireFormat::Binary);
        let dir = tempfile::tempdir().unwrap();
        let t = table(&[("p1", [0.1, 0.2, 0.3, 0.4])]);
        for name in ["e.csv", "e.bin"] {
            let p = dir.path().join(name);
            t.save(&p).unwrap();
            assert_eq!(load_embeddings(&p).unwrap(), t);
        }
    }

    #[test]
    fn mean_pool_examples() {
        let v = [1.0_f64, -2.0];
        assert_eq!(mean_pool(&[v, v, v], 2).unwrap(), v);
        assert_eq!(mean_pool(&[[1.0_f64, 0.0], [0.0, 1.0]], 2).unwrap(), [0.5, 0.5]);
        let empty: [[f64; 3]; 0] = [];
        assert_eq!(mean_pool(&empty, 3).unwrap(), [0.0; 3]);
        let mixed: Vec<Vec<f64>> = vec![vec![1.0], vec![1.0, 2.0]];
        assert!(mean_pool(&mixed, 1).is_err());
    }

    fn bag(id: &str, posts: &[(&str, &str)]) -> StudentBag {
        StudentBag {
            student_id: id.into(),
            bdi: crate::corpus::BdiScore::new(10).unwrap(),
            survey_date: NaiveDate::from_ymd_opt(2018, 10, 15).unwrap(),
            demographics: Default::default(),
            posts: posts
                .iter()
                .map(|(pid, cap)| crate::corpus::Post {
                    post_id: pid.to_string(),
                    timestamp: NaiveDate::from_ymd_opt(2018, 10, 1)
                        .unwrap()
                        .and_hms_opt(0, 0, 0)
                        .unwrap(),
                    caption: cap.to_string(),
                    image_ref: None,
                    face_count: None,
                })
                .collect(),
        }
    }

    #[test]
    fn posts_to_matrix_policies() {
        let t = table(&[("p1", [1.0; 4]), ("p2", [2.0; 4]), ("p3", [3.0; 4])]);
        let corpus = [bag("a", &[("p1", "x"), ("p2", "y")]), bag("b", &[("p3", "z"), ("e", "")])];
        let m = posts_to_matrix::<f64>(&corpus, &t, OnMissing::Error).unwrap();
        assert_eq!(m.matrix.n_rows(), 4);
        assert_eq!(m.matrix.row_ids(), ["a/p1", "a/p2", "b/p3", "b/e"]);
        assert_eq!(m.matrix.row(3).sum(), 0.0);
        assert!(m.missing.is_empty());

        let corpus = [bag("a", &[("p1", "x"), ("q1", "y"), ("q2", "z")])];
        assert!(matches!(
            posts_to_matrix::<f64>(&corpus, &t, OnMissing::Error),
            Err(Error::MissingEmbeddings(ref ids)) if ids.len() == 2
        ));
        let m = posts_to_matrix::<f64>(&corpus, &t, OnMissing::Zero).unwrap();
        assert_eq!(m.missing, ["q1", "q2"]);
        assert_eq!(m.matrix.row(1).sum() + m.matrix.row(2).sum(), 0.0);
    }

    proptest! {
        #[test]
        fn binary_round_trip_is_bit_exact(rows in prop::collection::vec(
            prop::collection::vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), 3), 0..12)) {
            let mut t = EmbeddingTable::new(Modality::Image, "enc", 3).unwrap();
            for (i, r) in rows.iter().enumerate() {
                t.insert(format!("p{i}"), r).unwrap();
            }
            for f in [WireFormat::Binary, WireFormat::Csv] {
                let mut buf = Vec::new();
                t.write(&mut buf, f).unwrap();
                let back = EmbeddingTable::read(&buf[..], f).unwrap();
                for id in t.ids() {
                    let (a, b) = (t.get(id).unwrap(), back.get(id).unwrap());
                    prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
                }
            }
        }

        #[test]
        fn mean_pool_is_permutation_invariant_and_linear(
            vs in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 2), 1..8),
            k in -3.0f64..3.0) {
            let m = mean_pool(&vs, 2).unwrap();
            let mut rev = vs.clone();
            rev.reverse();
            let r = mean_pool(&rev, 2).unwrap();
            let scaled: Vec<Vec<f64>> = vs.iter().map(|v| v.iter().map(|x| x * k).collect()).collect();
            let s = mean_pool(&scaled, 2).unwrap();
            for j in 0..2 {
                prop_assert!((m[j] - r[j]).abs() < 1e-12);
                prop_assert!((s[j] - k * m[j]).abs() < 1e-9);
            }
        }
    }
}
