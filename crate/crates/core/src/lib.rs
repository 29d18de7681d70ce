//! Learned P-frame codec.
//!
//! Two frames are embedded by a shared encoder, their embedding difference is
//! compressed through an importance-masked 8-bit latent, and the decoder
//! rebuilds the current frame from that latent and the previous frame. Latent
//! symbols are arithmetic coded under a multi-scale discretized logistic
//! mixture model.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix it to `f32`, the precision of the codec.
//!
//! ```no_run
//! use ntcodec::{codec, io, CodecModel};
//! use rand::SeedableRng;
//!
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let model = CodecModel::new(codec::CodecConfig::default(), &mut rng)?;
//! let pair = io::synthetic_pair::<f32>(&mut rng, 32, 32);
//! let enc = codec::encode_frame(&model, &pair.prev, &pair.cur)?;
//! let frame = codec::decode_frame(&model, &pair.prev, &enc.bytes())?;
//! assert_eq!(frame.data(), enc.recon.data());
//! # Ok::<(), ntcodec::Error>(())
//! ```

pub mod autodiff;
pub mod checkpoint;
pub mod codec;
pub mod entropy;
pub mod error;
pub mod io;
pub mod mask_quant;
pub mod metrics;
pub mod msprob;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};

pub type Tensor = tensor::Tensor<f32>;
pub type Graph = autodiff::Graph<f32>;
pub type ParamStore = nn::ParamStore<f32>;
pub type CodecModel = codec::CodecModel<f32>;
pub type FramePair = train::FramePair<f32>;
pub type Encoded = codec::Encoded<f32>;
