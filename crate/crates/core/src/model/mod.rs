//! Two-branch forward model: motor state in, predicted image and predicted
//! prediction-error out.
//!
//! A shared fully-connected trunk lifts the motor state to a low-resolution
//! 32-channel map; two structurally identical branches (three
//! upsample+conv stages, then a channel taper down to RGB) produce the image
//! prediction and the error prediction. All layers use SeLU except the final
//! ReLU that keeps both outputs nonnegative.

mod adam;
mod losses;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use losses::{alpha_at, loss_err, loss_rec, loss_total, lr_at};
pub use train::{batch_gradients, train, IterStats, TrainConfig};

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use smbi_autodiff::{self as ad, Real, Tape, Tensor, VarId};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    InvalidArch(String),
    #[error("motor state has {got} components, network expects {expected}")]
    MotorDim { expected: usize, got: usize },
    #[error("record {index} has image dims {got:?}, network expects {expected:?}")]
    ImageDims {
        index: usize,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint holds {got} tensors, architecture expects {expected}")]
    CheckpointLayout { expected: usize, got: usize },
    #[error("checkpoint tensor {index} has shape {got:?}, expected {expected:?}")]
    CheckpointShape {
        index: usize,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error(transparent)]
    Autodiff(#[from] ad::Error),
}

/// Structural description of the network. [`NetworkArch::standard`] is the
/// production layout; the free constructor exists so tests can build small
/// two-branch networks on tiny images.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkArch {
    /// Output image dims (H, W); must be divisible by 2^deconv_stages.
    pub image_dims: (usize, usize),
    pub motor_dim: usize,
    /// Width of the first fully-connected layer.
    pub trunk_hidden: usize,
    /// Number of upsample+conv stages per branch.
    pub deconv_stages: usize,
    /// Channel count through the deconv stages.
    pub stage_channels: usize,
    /// Channels of the trailing convolutions; the last entry must be 3.
    pub head_channels: Vec<usize>,
}

impl NetworkArch {
    /// The production architecture: three deconv stages at 32 channels, then
    /// a 32 -> 16 -> 8 -> 3 convolution taper. Requires H and W divisible
    /// by 8.
    pub fn standard(image_dims: (usize, usize), motor_dim: usize) -> Result<Self, ModelError> {
        let arch = Self {
            image_dims,
            motor_dim,
            trunk_hidden: 128,
            deconv_stages: 3,
            stage_channels: 32,
            head_channels: vec![16, 8, 3],
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let scale = 1usize << self.deconv_stages;
        let (h, w) = self.image_dims;
        if self.deconv_stages == 0 {
            return Err(ModelError::InvalidArch("needs at least one deconv stage".into()));
        }
        if h == 0 || w == 0 || h % scale != 0 || w % scale != 0 {
            return Err(ModelError::InvalidArch(format!(
                "image dims {h}x{w} not divisible by 2^{} = {scale}",
                self.deconv_stages
            )));
        }
        if self.motor_dim == 0 || self.trunk_hidden == 0 || self.stage_channels == 0 {
            return Err(ModelError::InvalidArch("zero-width layer".into()));
        }
        if self.head_channels.last() != Some(&3) {
            return Err(ModelError::InvalidArch(
                "head must taper to 3 output channels".into(),
            ));
        }
        if self.head_channels.iter().any(|&c| c == 0) {
            return Err(ModelError::InvalidArch("zero-channel head conv".into()));
        }
        Ok(())
    }

    /// (h0, w0, c0): spatial dims and channels of the reshaped trunk output.
    pub fn reshape_dims(&self) -> (usize, usize, usize) {
        let scale = 1usize << self.deconv_stages;
        (
            self.image_dims.0 / scale,
            self.image_dims.1 / scale,
            self.stage_channels,
        )
    }

    /// (cin, cout) per convolution of one branch, in forward order.
    fn branch_conv_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.stage_channels, self.stage_channels); self.deconv_stages];
        let mut cin = self.stage_channels;
        for &cout in &self.head_channels {
            dims.push((cin, cout));
            cin = cout;
        }
        dims
    }

    /// Closed-form parameter count over the declared layer shapes.
    pub fn param_count(&self) -> usize {
        let (h0, w0, c0) = self.reshape_dims();
        let reshape = h0 * w0 * c0;
        let trunk = self.motor_dim * self.trunk_hidden
            + self.trunk_hidden
            + self.trunk_hidden * reshape
            + reshape;
        let branch: usize = self
            .branch_conv_dims()
            .iter()
            .map(|&(cin, cout)| 9 * cin * cout + cout)
            .sum();
        trunk + 2 * branch
    }
}

/// One convolution layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    /// [3, 3, cin, cout]
    pub kernels: Tensor<T>,
    /// [cout]
    pub bias: Tensor<T>,
}

/// All trainable parameters plus the architecture they instantiate.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    pub arch: NetworkArch,
    pub fc1_weight: Tensor<T>,
    pub fc1_bias: Tensor<T>,
    pub fc2_weight: Tensor<T>,
    pub fc2_bias: Tensor<T>,
    pub image_branch: Vec<ConvLayer<T>>,
    pub error_branch: Vec<ConvLayer<T>>,
}

impl<T: Real> NetworkParams<T> {
    /// Parameter tensors in canonical (checkpoint) order.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![
            &self.fc1_weight,
            &self.fc1_bias,
            &self.fc2_weight,
            &self.fc2_bias,
        ];
        for layer in self.image_branch.iter().chain(&self.error_branch) {
            out.push(&layer.kernels);
            out.push(&layer.bias);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ];
        for layer in self
            .image_branch
            .iter_mut()
            .chain(self.error_branch.iter_mut())
        {
            out.push(&mut layer.kernels);
            out.push(&mut layer.bias);
        }
        out
    }

    /// Actual parameter count by introspection.
    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.elems()).sum()
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), ModelError> {
        ad::save_tensors(path, &self.tensors())?;
        Ok(())
    }

    pub fn load_checkpoint(arch: NetworkArch, path: &Path) -> Result<Self, ModelError> {
        arch.validate()?;
        let tensors = ad::load_tensors::<T>(path)?;
        let mut template = build_network_arch::<T>(arch, 0)?;
        let expected: Vec<Vec<usize>> = template
            .tensors()
            .iter()
            .map(|t| t.shape().to_vec())
            .collect();
        if tensors.len() != expected.len() {
            return Err(ModelError::CheckpointLayout {
                expected: expected.len(),
                got: tensors.len(),
            });
        }
        for (index, (t, want)) in tensors.iter().zip(&expected).enumerate() {
            if t.shape() != want.as_slice() {
                return Err(ModelError::CheckpointShape {
                    index,
                    expected: want.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        for (slot, loaded) in template.tensors_mut().into_iter().zip(tensors) {
            *slot = loaded;
        }
        Ok(template)
    }
}

/// Builds the standard network with weights drawn i.i.d. from
/// N(0, 1/fan_in) and zero biases; deterministic per seed.
pub fn build_network<T: Real>(
    image_dims: (usize, usize),
    motor_dim: usize,
    seed: u64,
) -> Result<NetworkParams<T>, ModelError> {
    build_network_arch(NetworkArch::standard(image_dims, motor_dim)?, seed)
}

/// Same initialization for an arbitrary (validated) architecture.
pub fn build_network_arch<T: Real>(
    arch: NetworkArch,
    seed: u64,
) -> Result<NetworkParams<T>, ModelError> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Weights are drawn in f64 and cast, so f32 and f64 builds share the
    // same underlying sequence.
    let mut normal = move |fan_in: usize, shape: Vec<usize>| -> Tensor<T> {
        let dist = Normal::new(0.0f64, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of_f64(dist.sample(&mut rng))).collect();
        Tensor::new(shape, data).expect("init shape")
    };

    let (h0, w0, c0) = arch.reshape_dims();
    let reshape = h0 * w0 * c0;
    let fc1_weight = normal(arch.motor_dim, vec![arch.trunk_hidden, arch.motor_dim]);
    let fc1_bias = Tensor::zeros(vec![arch.trunk_hidden]);
    let fc2_weight = normal(arch.trunk_hidden, vec![reshape, arch.trunk_hidden]);
    let fc2_bias = Tensor::zeros(vec![reshape]);

    let mut branch = |normal: &mut dyn FnMut(usize, Vec<usize>) -> Tensor<T>| {
        arch.branch_conv_dims()
            .iter()
            .map(|&(cin, cout)| ConvLayer {
                kernels: normal(9 * cin, vec![3, 3, cin, cout]),
                bias: Tensor::zeros(vec![cout]),
            })
            .collect::<Vec<_>>()
    };
    let image_branch = branch(&mut normal);
    let error_branch = branch(&mut normal);

    Ok(NetworkParams {
        arch,
        fc1_weight,
        fc1_bias,
        fc2_weight,
        fc2_bias,
        image_branch,
        error_branch,
    })
}

/// Parameter VarIds after insertion on a tape, canonical order preserved.
pub(crate) struct TapeNet {
    pub fc1_w: VarId,
    pub fc1_b: VarId,
    pub fc2_w: VarId,
    pub fc2_b: VarId,
    pub image_layers: Vec<(VarId, VarId)>,
    pub error_layers: Vec<(VarId, VarId)>,
}

impl TapeNet {
    pub fn param_ids(&self) -> Vec<VarId> {
        let mut ids = vec![self.fc1_w, self.fc1_b, self.fc2_w, self.fc2_b];
        for &(k, b) in self.image_layers.iter().chain(&self.error_layers) {
            ids.push(k);
            ids.push(b);
        }
        ids
    }
}

pub(crate) fn insert_params<T: Real>(tape: &mut Tape<T>, params: &NetworkParams<T>) -> TapeNet {
    let mut conv = |tape: &mut Tape<T>, layers: &[ConvLayer<T>]| {
        layers
            .iter()
            .map(|l| (tape.leaf(l.kernels.clone()), tape.leaf(l.bias.clone())))
            .collect::<Vec<_>>()
    };
    TapeNet {
        fc1_w: tape.leaf(params.fc1_weight.clone()),
        fc1_b: tape.leaf(params.fc1_bias.clone()),
        fc2_w: tape.leaf(params.fc2_weight.clone()),
        fc2_b: tape.leaf(params.fc2_bias.clone()),
        image_layers: conv(tape, &params.image_branch),
        error_layers: conv(tape, &params.error_branch),
    }
}

/// Shared trunk then both branches; returns (s_hat, e_hat) node ids.
pub(crate) fn forward<T: Real>(
    tape: &mut Tape<T>,
    net: &TapeNet,
    arch: &NetworkArch,
    motor: VarId,
) -> Result<(VarId, VarId), ModelError> {
    let (h0, w0, c0) = arch.reshape_dims();
    let fc1 = tape.fully_connected(motor, net.fc1_w, net.fc1_b)?;
    let a1 = tape.selu(fc1);
    let fc2 = tape.fully_connected(a1, net.fc2_w, net.fc2_b)?;
    let a2 = tape.selu(fc2);
    let trunk = tape.reshape(a2, vec![h0, w0, c0])?;

    let mut run_branch = |tape: &mut Tape<T>, layers: &[(VarId, VarId)]| -> Result<VarId, ModelError> {
        let mut z = trunk;
        for (i, &(k, b)) in layers.iter().enumerate() {
            if i < arch.deconv_stages {
                z = tape.upsample2x(z)?;
            }
            z = tape.conv2d(z, k, b)?;
            z = if i + 1 == layers.len() {
                tape.relu(z)
            } else {
                tape.selu(z)
            };
        }
        Ok(z)
    };
    let s_hat = run_branch(tape, &net.image_layers)?;
    let e_hat = run_branch(tape, &net.error_layers)?;
    Ok((s_hat, e_hat))
}

/// Anything that maps a motor state to (predicted image, predicted error),
/// both flattened H*W*3 and nonnegative. Lets evaluation run against stub
/// oracles as well as trained networks.
pub trait Predictor {
    fn image_dims(&self) -> (usize, usize);
    fn predict(&self, motor: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError>;
}

impl<T: Real> Predictor for NetworkParams<T> {
    fn image_dims(&self) -> (usize, usize) {
        self.arch.image_dims
    }

    fn predict(&self, motor: &[f64]) -> Result<(Vec<f64>, Vec<f64>), ModelError> {
        if motor.len() != self.arch.motor_dim {
            return Err(ModelError::MotorDim {
                expected: self.arch.motor_dim,
                got: motor.len(),
            });
        }
        let mut tape = Tape::new();
        let net = insert_params(&mut tape, self);
        let m = tape.leaf(Tensor::new(
            vec![motor.len()],
            motor.iter().map(|&v| T::of_f64(v)).collect(),
        )?);
        let (s_hat, e_hat) = forward(&mut tape, &net, &self.arch, m)?;
        let to_f64 = |id: VarId| tape.value(id).data().iter().map(|v| v.as_f64()).collect();
        Ok((to_f64(s_hat), to_f64(e_hat)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_arch_reshape_dims() {
        let arch = NetworkArch::standard((24, 32), 4).unwrap();
        assert_eq!(arch.reshape_dims(), (3, 4, 32));
    }

    #[test]
    fn standard_arch_rejects_indivisible_dims() {
        assert!(NetworkArch::standard((30, 40), 4).is_err());
        assert!(NetworkArch::standard((60, 80), 4).is_err());
        assert!(NetworkArch::standard((64, 80), 4).is_ok());
    }

    #[test]
    fn same_seed_same_parameters() {
        let a: NetworkParams<f64> = build_network((16, 16), 4, 11).unwrap();
        let b: NetworkParams<f64> = build_network((16, 16), 4, 11).unwrap();
        assert_eq!(a, b);
        let c: NetworkParams<f64> = build_network((16, 16), 4, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn param_count_closed_form_matches_introspection() {
        for (dims, motor) in [((16, 16), 4), ((24, 32), 4), ((8, 8), 2)] {
            let params: NetworkParams<f32> = build_network(dims, motor, 0).unwrap();
            assert_eq!(params.param_count(), params.arch.param_count());
        }
        // Also for a reduced test architecture.
        let arch = NetworkArch {
            image_dims: (4, 4),
            motor_dim: 3,
            trunk_hidden: 8,
            deconv_stages: 2,
            stage_channels: 4,
            head_channels: vec![4, 3],
        };
        let params: NetworkParams<f64> = build_network_arch(arch, 5).unwrap();
        assert_eq!(params.param_count(), params.arch.param_count());
    }

    #[test]
    fn predict_shapes_nonnegativity_determinism() {
        let params: NetworkParams<f32> = build_network((16, 16), 4, 3).unwrap();
        let (s, e) = params.predict(&[0.1, -0.5, 0.9, 0.0]).unwrap();
        assert_eq!(s.len(), 16 * 16 * 3);
        assert_eq!(e.len(), 16 * 16 * 3);
        assert!(s.iter().all(|&v| v >= 0.0));
        assert!(e.iter().all(|&v| v >= 0.0));
        let (s2, e2) = params.predict(&[0.1, -0.5, 0.9, 0.0]).unwrap();
        assert_eq!(s, s2);
        assert_eq!(e, e2);
    }

    #[test]
    fn predict_nonnegative_over_random_motors() {
        use rand::{Rng, SeedableRng};
        let params: NetworkParams<f32> = build_network((8, 8), 4, 9).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let m: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (s, e) = params.predict(&m).unwrap();
            assert!(s.iter().all(|&v| v >= 0.0));
            assert!(e.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn predict_rejects_wrong_motor_dim() {
        let params: NetworkParams<f32> = build_network((8, 8), 4, 0).unwrap();
        assert!(matches!(
            params.predict(&[0.0; 3]),
            Err(ModelError::MotorDim {
                expected: 4,
                got: 3
            })
        ));
    }

    #[test]
    fn checkpoint_roundtrip_and_shape_validation() {
        let dir = std::env::temp_dir().join("smbi_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("net.smnn");
        let params: NetworkParams<f32> = build_network((8, 8), 4, 77).unwrap();
        params.save_checkpoint(&path).unwrap();
        let back =
            NetworkParams::<f32>::load_checkpoint(params.arch.clone(), &path).unwrap();
        assert_eq!(params, back);

        let wrong = NetworkArch::standard((16, 16), 4).unwrap();
        assert!(matches!(
            NetworkParams::<f32>::load_checkpoint(wrong, &path),
            Err(ModelError::CheckpointShape { .. })
        ));
        std::fs::remove_file(&path).ok();
    }
}
