#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace anyshot {

enum class Activation : std::uint8_t { kIdentity = 0, kRelu = 1, kLeakyRelu = 2, kSigmoid = 3 };

inline constexpr double kLeakyReluSlope = 0.2;

const char* to_string(Activation activation);

struct DenseLayer {
  Eigen::MatrixXd weight;  // in x out
  Eigen::MatrixXd bias;    // 1 x out
  Activation activation = Activation::kIdentity;
};

// A stack of affine layers, each followed by an elementwise activation.
// Batches are row-major in meaning: one sample per row.
class DenseNet {
 public:
  DenseNet() = default;

  // dims = {in, hidden..., out}; one activation per layer. Weights are
  // Glorot-uniform from `seed`, biases zero, all rounded to float32.
  DenseNet(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
           std::uint64_t seed);

  explicit DenseNet(std::vector<DenseLayer> layers);

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t input_dim() const;
  std::size_t output_dim() const;
  std::size_t num_parameters() const;

  const DenseLayer& layer(std::size_t i) const { return layers_.at(i); }
  // Any mutable access invalidates caches from earlier forward passes.
  DenseLayer& mutable_layer(std::size_t i);

  // W0, b0, W1, b1, ... in layer order.
  std::vector<Eigen::MatrixXd*> parameters();
  std::vector<const Eigen::MatrixXd*> parameters() const;

  std::uint64_t version() const { return version_; }

  friend bool operator==(const DenseNet& a, const DenseNet& b);

 private:
  std::vector<DenseLayer> layers_;
  std::uint64_t version_ = 0;
};

struct ForwardCache {
  const DenseNet* net = nullptr;
  std::uint64_t version = 0;
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> outputs;  // post-activation, per layer
};

struct ForwardResult {
  Eigen::MatrixXd output;
  ForwardCache cache;
};

ForwardResult forward(const DenseNet& net, const Eigen::MatrixXd& batch);

// Forward pass without keeping a cache.
Eigen::MatrixXd predict(const DenseNet& net, const Eigen::MatrixXd& batch);

struct NetGradients {
  std::vector<Eigen::MatrixXd> params;  // same order as DenseNet::parameters()
  Eigen::MatrixXd input;
};

// Reverse-mode pass for the forward pass recorded in `cache`. Throws
// ContractError when the cache belongs to another net or the net's
// parameters changed since.
NetGradients backward(const DenseNet& net, const ForwardCache& cache,
                      const Eigen::MatrixXd& upstream);

// Zero-filled gradient buffers shaped like the net's parameters.
std::vector<Eigen::MatrixXd> zero_gradients(const DenseNet& net);

// Adds `from` into `into` elementwise.
void accumulate(std::vector<Eigen::MatrixXd>& into, const std::vector<Eigen::MatrixXd>& from);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Keep parameters representable in float32 so checkpoints are lossless.
  bool round_to_float = true;
};

struct AdamState {
  AdamConfig config;
  std::vector<Eigen::MatrixXd> first_moment;
  std::vector<Eigen::MatrixXd> second_moment;
  std::uint64_t step = 0;
};

// One bias-corrected adaptive-moment update. Moments are allocated on the
// first call; later calls must present the same parameter shapes. Throws
// NumericError (leaving everything untouched) on a non-finite gradient.
void adam_step(std::span<Eigen::MatrixXd* const> params, std::span<const Eigen::MatrixXd> grads,
               AdamState& state);

struct LossAndGrad {
  double loss = 0.0;
  Eigen::MatrixXd grad;  // dLoss / dInput
};

// Mean over the batch of -log softmax(logits)[target].
LossAndGrad softmax_cross_entropy(const Eigen::MatrixXd& logits,
                                  std::span<const std::size_t> targets);

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_parameter = 0;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor keeps entries whose true value
// is ~0 from being judged on finite-difference rounding noise alone.
double relative_error(double analytic, double numeric, double floor = 1e-6);

// Central differences of `loss` with step h over every entry of every
// parameter, compared with the supplied analytic gradients.
GradCheckReport check_gradients(std::span<Eigen::MatrixXd* const> params,
                                std::span<const Eigen::MatrixXd> analytic,
                                const std::function<double()>& loss, double h = 1e-5);

using OutputLoss = std::function<LossAndGrad(const Eigen::MatrixXd&)>;

// Checks backward() of `net` (parameters and input) under loss_fn at batch.
GradCheckReport grad_check(DenseNet& net, const OutputLoss& loss_fn, const Eigen::MatrixXd& batch,
                           double h = 1e-5);

}  // namespace anyshot
