//! Engineered features: caption normalization, tf-idf, lexicon categories,
//! HSV colour means, face counts and user-level aggregation.

mod aggregate;
mod demographics;
mod image;
mod lexicon;
mod text;
mod tfidf;

pub use self::aggregate::{aggregate_corpus, aggregate_names, concat_features, aggregate_user, UserAggregate, NO_POSTS_COLUMN};
pub use self::demographics::demographics_matrix;
pub use self::image::{
    hsv_mean, hsv_mean_pixels, load_face_sidecar, rgb_to_hsv, visual_matrix, DirImageSource, FaceCount,
    FaceDetector, FaceProvenance, Hsv, ImageSource, MemoryImageSource, RecordedFaces, SidecarFaces,
    StubFaces, VISUAL_COLUMNS, write_face_sidecar,
};
pub use self::lexicon::{lexicon_matrix, Lexicon, LexiconCounts, Pattern};
pub use self::text::{extract_hashtags, normalize_caption};
pub use self::tfidf::{TfidfVectorizer, Vocabulary};
