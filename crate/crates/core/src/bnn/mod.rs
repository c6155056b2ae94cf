//! Plaintext integer BNN: model types, batch-norm folding and quantization,
//! overflow analysis, file formats and a reference trainer.

pub mod format;
pub mod idx;
pub mod model;
pub mod quant;
pub mod train;

pub use format::{load_model, load_quantized, model_from_bytes, quantized_to_bytes, real_to_bytes, save_quantized, save_real, ModelFile};
pub use idx::{Dataset, Split};
pub use model::{
    activation, argmax, batch_norm, full_connection, infer, infer_trace, FloatBnnModel, FloatLayer,
    FoldedBnParams, LayerTrace, ModelMeta, QuantLayer, QuantizedBnParams, QuantizedBnnModel, RealBnParams,
    SignMatrix,
};
pub use quant::{fold_bn, layer_bounds, overflow_bound, quantize_bn, quantize_model, LayerBound, DEFAULT_Q, PIXEL_MAX};
pub use train::{float_accuracy, quantized_accuracy, train_reference, TrainConfig};
