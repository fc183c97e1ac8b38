//! File formats, manifests, the pixel featurizer and result records.

mod bundle;
mod featurize;
mod manifest;
mod results;
mod tensor_file;

pub use bundle::{
    global_stats_bundle, global_stats_from_bundle, model_bundle, model_from_bundle,
    projection_bundle, projection_from_bundle, Bundle, BUNDLE_MAGIC,
};
pub use featurize::{featurize_pixels, load_gray_image, FeaturizerMode, GrayImage, PixelFeaturizerConfig};
pub use manifest::{input_kind, InputKind, Manifest, ManifestEntry, Role};
pub use results::{
    encode_results, encode_series, parse_results, read_results, write_results, write_series,
    BestMatch, QueryRecord, RotationMode, RunMeta,
};
pub use tensor_file::{
    read_feature_map, read_tensor, write_feature_map, write_tensor, Tensor, TensorData, TENSOR_MAGIC,
};
