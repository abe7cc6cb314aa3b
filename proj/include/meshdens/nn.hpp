#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meshdens/image.hpp"
#include "meshdens/imaging.hpp"
#include "meshdens/rng.hpp"
#include "meshdens/tensor.hpp"

namespace meshdens {

/// Learnable array with its gradient accumulator.
template <class T>
struct Param {
  std::string name;
  std::vector<int> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> s);
  std::size_t size() const { return value.size(); }
  void zero_grad();
};

/// Kaiming-uniform fill: U(-b, b) with b = sqrt(6 / fan_in).
template <class T>
void kaiming_uniform(Param<T>& p, int fan_in, Rng& rng);

/// Output extent of a convolution: floor((in - k + 2p) / s) + 1.
int conv_out_size(int in, int k, int stride, int pad);
/// Output extent of a transposed convolution: (in - 1) s - 2p + k + output_pad.
int conv_transpose_out_size(int in, int k, int stride, int pad, int output_pad);

/// Cross-correlation with zero padding. Weight shape (out, in, k, k).
template <class T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_c, int out_c, int k, int stride, int pad, const std::string& name = "conv");

  Tensor4<T> forward(const Tensor4<T>& x);
  /// Accumulates weight and bias gradients; returns the input gradient.
  Tensor4<T> backward(const Tensor4<T>& grad_out);

  int out_size(int in) const { return conv_out_size(in, k, stride, pad); }
  void init(Rng& rng);

  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0;
  Param<T> weight, bias;

 private:
  Tensor4<T> x_;
};

/// Adjoint of Conv2d in its input. Weight shape (in, out, k, k).
template <class T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(int in_c, int out_c, int k, int stride, int pad, int output_pad,
                  const std::string& name = "deconv");

  Tensor4<T> forward(const Tensor4<T>& x);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

  int out_size(int in) const { return conv_transpose_out_size(in, k, stride, pad, output_pad); }
  void init(Rng& rng);

  int in_c = 0, out_c = 0, k = 1, stride = 1, pad = 0, output_pad = 0;
  Param<T> weight, bias;

 private:
  Tensor4<T> x_;
};

template <class T>
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels, const std::string& name = "bn");

  /// Train mode normalizes with batch statistics (batch >= 2) and updates the
  /// running estimates; eval mode uses the running estimates.
  Tensor4<T> forward(const Tensor4<T>& x, bool train);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

  int channels = 0;
  T momentum = T(0.9);
  T eps = T(1e-5);
  Param<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  std::string name;

 private:
  bool train_ = false;
  Tensor4<T> xhat_;
  std::vector<T> inv_std_;
};

template <class T>
class ReLU {
 public:
  Tensor4<T> forward(const Tensor4<T>& x);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

 private:
  Tensor4<T> x_;
};

template <class T>
class Sigmoid {
 public:
  Tensor4<T> forward(const Tensor4<T>& x);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

 private:
  Tensor4<T> y_;
};

/// Windowed max; ties go to the first element in row-major window order.
template <class T>
class MaxPool2d {
 public:
  MaxPool2d(int k = 2, int stride = 1) : k(k), stride(stride) {}
  Tensor4<T> forward(const Tensor4<T>& x);
  Tensor4<T> backward(const Tensor4<T>& grad_out);

  int k, stride;

 private:
  Tensor4<T> x_;
  std::vector<std::size_t> argmax_;
};

/// Channel concatenation of equal-size tensors.
template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b);
/// Splits a gradient back into the parts of a concatenation at channel `ca`.
template <class T>
void split_channels(const Tensor4<T>& g, int ca, Tensor4<T>& ga, Tensor4<T>& gb);

template <class T>
struct Loss {
  T value;
  Tensor4<T> grad;
};

/// Mean squared error over every entry; grad = 2 (pred - target) / n.
template <class T>
Loss<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target);
double mse(const GrayImage& pred, const GrayImage& target);

// ---------------------------------------------------------------------------

struct UNetConfig {
  int base = 32;
  int in_channels = 3;
  int resolution = 60;

  bool operator==(const UNetConfig&) const = default;
};

/// Encoder 60-30-15-8-4, max pool to 3 at the bottleneck, transposed-conv
/// decoder back to 60 with skip concatenations, 1x1 sigmoid head.
template <class T>
class UNet {
 public:
  explicit UNet(const UNetConfig& cfg = {}, std::uint64_t seed = 0);

  Tensor4<T> forward(const Tensor4<T>& x, bool train = false);
  /// Back-propagates dL/dy from the last forward; accumulates parameter grads.
  Tensor4<T> backward(const Tensor4<T>& grad_out);

  std::vector<Param<T>*> parameters();
  /// Batch-norm running statistics, in a fixed order.
  std::vector<std::pair<std::string, std::vector<T>*>> buffers();
  std::size_t parameter_count();
  void zero_grad();

  const UNetConfig& config() const { return cfg_; }
  /// Spatial size after each encoder stage and the bottleneck pool.
  std::vector<int> encoder_sizes() const;
  /// Spatial size after each decoder stage, dec4 first.
  std::vector<int> decoder_sizes() const;

 private:
  struct Down {
    Conv2d<T> conv;
    BatchNorm2d<T> bn;
    ReLU<T> relu;
  };
  struct Up {
    ConvTranspose2d<T> deconv;
    BatchNorm2d<T> bn;
    ReLU<T> relu;
  };

  Tensor4<T> down(Down& d, const Tensor4<T>& x, bool train, const char* block);
  Tensor4<T> up(Up& u, const Tensor4<T>& x, bool train, const char* block);

  UNetConfig cfg_;
  Down enc_[4];
  MaxPool2d<T> pool_{2, 1};
  Conv2d<T> mid_conv_;
  BatchNorm2d<T> mid_bn_;
  Up dec_[5];
  Conv2d<T> head_;
  Sigmoid<T> sigmoid_;
  int skip_c_[4] = {};
};

/// Stacks inputs as a (batch, 3, res, res) tensor: geometry, dirichlet, neumann.
Tensor4<float> to_tensor(std::span<const InputStack> stacks);
Tensor4<float> to_tensor(std::span<const GrayImage> images);
GrayImage to_image(const Tensor4<float>& t, int sample = 0);

/// Eval-mode prediction for one input stack.
GrayImage unet_forward(UNet<float>& model, const InputStack& stack);

// ---------------------------------------------------------------------------

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const AdamConfig& cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<Param<float>*>& params);

  const AdamConfig& config() const { return cfg_; }
  long steps() const { return t_; }
  std::vector<std::vector<float>> m, v;

 private:
  AdamConfig cfg_;
  long t_ = 0;
};

struct TrainingPair {
  InputStack input;
  GrayImage target;
};

struct TrainConfig {
  AdamConfig adam;
  int batch_size = 16;
  int max_epochs = 200;
  long max_steps = 0;  // 0 = no limit
  int patience = 5;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN without a validation split
};

struct TrainState {
  Adam optimizer;
  std::uint64_t seed = 0;
  int epoch = 0;
  long steps = 0;
  int best_epoch = -1;
  double best_val = 0.0;
  bool stopped_early = false;
  std::vector<std::vector<float>> best_snapshot;
  std::vector<EpochLog> history;
  std::vector<std::size_t> train_indices, val_indices;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Adam on shuffled mini-batches; stops after `patience` epochs without a new
/// best validation loss and restores the best parameters.
TrainState train(UNet<float>& model, const std::vector<TrainingPair>& data, const TrainConfig& cfg = {},
                 const EpochCallback& on_epoch = {});

/// Mean eval-mode loss over the given samples.
double evaluate_loss(UNet<float>& model, const std::vector<TrainingPair>& data, std::span<const std::size_t> idx,
                     int batch_size = 16);

std::vector<std::vector<float>> snapshot(UNet<float>& model);
void restore(UNet<float>& model, const std::vector<std::vector<float>>& snap);

// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kModelVersion = 1;

/// "UNET", u32 version, u32 descriptor length, JSON descriptor, f32 blobs.
/// `metadata` is a JSON object stored verbatim in the descriptor under "meta".
void save_model(const std::string& path, UNet<float>& model, const std::string& metadata = "{}");
UNet<float> load_model(const std::string& path);
/// The JSON descriptor of a model file, without reading the parameters.
std::string read_model_descriptor(const std::string& path);

}  // namespace meshdens
