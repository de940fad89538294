#include <cmath>

#include "anyshot/errors.hpp"
#include "anyshot/neural.hpp"
#include "anyshot/rng.hpp"

namespace anyshot {
namespace {

void apply_activation(Eigen::MatrixXd& z, Activation activation) {
  switch (activation) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      z = z.cwiseMax(0.0);
      break;
    case Activation::kLeakyRelu:
      z = z.unaryExpr([](double v) { return v > 0.0 ? v : kLeakyReluSlope * v; });
      break;
    case Activation::kSigmoid:
      z = z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
      break;
  }
}

// d(activation)/dz expressed through the activation output, which is all the
// cache keeps.
void multiply_by_derivative(Eigen::MatrixXd& grad, const Eigen::MatrixXd& out, Activation activation) {
  switch (activation) {
    case Activation::kIdentity:
      break;
    case Activation::kRelu:
      grad = (out.array() > 0.0).select(grad, 0.0);
      break;
    case Activation::kLeakyRelu:
      grad = (out.array() > 0.0).select(grad, kLeakyReluSlope * grad);
      break;
    case Activation::kSigmoid:
      grad = grad.cwiseProduct(out.cwiseProduct((1.0 - out.array()).matrix()));
      break;
  }
}

Eigen::MatrixXd affine(const DenseLayer& layer, const Eigen::MatrixXd& x) {
  Eigen::MatrixXd z = x * layer.weight;
  z.rowwise() += layer.bias.row(0);
  return z;
}

}  // namespace

const char* to_string(Activation activation) {
  switch (activation) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

DenseNet::DenseNet(const std::vector<std::size_t>& dims, const std::vector<Activation>& activations,
                   std::uint64_t seed) {
  if (dims.size() < 2 || activations.size() != dims.size() - 1) {
    throw ShapeError("DenseNet needs one activation per layer");
  }
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const auto fan_in = static_cast<Eigen::Index>(dims[i]);
    const auto fan_out = static_cast<Eigen::Index>(dims[i + 1]);
    if (fan_in == 0 || fan_out == 0) throw ShapeError("DenseNet layer with zero width");
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng = make_rng(seed, i);
    DenseLayer layer;
    layer.weight.resize(fan_in, fan_out);
    for (Eigen::Index r = 0; r < fan_in; ++r) {
      for (Eigen::Index c = 0; c < fan_out; ++c) {
        layer.weight(r, c) = static_cast<float>(uniform(rng, -limit, limit));
      }
    }
    layer.bias = Eigen::MatrixXd::Zero(1, fan_out);
    layer.activation = activations[i];
    layers_.push_back(std::move(layer));
  }
}

DenseNet::DenseNet(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw ShapeError("DenseNet needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.bias.rows() != 1 || l.bias.cols() != l.weight.cols()) {
      throw ShapeError("layer " + std::to_string(i) + " bias does not match weight columns");
    }
    if (i > 0 && layers_[i - 1].weight.cols() != l.weight.rows()) {
      throw ShapeError("layer " + std::to_string(i) + " input width does not chain");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) throw NumericError("non-finite layer parameters");
  }
}

std::size_t DenseNet::input_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.front().weight.rows());
}

std::size_t DenseNet::output_dim() const {
  return layers_.empty() ? 0 : static_cast<std::size_t>(layers_.back().weight.cols());
}

std::size_t DenseNet::num_parameters() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

DenseLayer& DenseNet::mutable_layer(std::size_t i) {
  ++version_;
  return layers_.at(i);
}

std::vector<Eigen::MatrixXd*> DenseNet::parameters() {
  ++version_;
  std::vector<Eigen::MatrixXd*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Eigen::MatrixXd*> DenseNet::parameters() const {
  std::vector<const Eigen::MatrixXd*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

bool operator==(const DenseNet& a, const DenseNet& b) {
  if (a.layers_.size() != b.layers_.size()) return false;
  for (std::size_t i = 0; i < a.layers_.size(); ++i) {
    const auto& x = a.layers_[i];
    const auto& y = b.layers_[i];
    if (x.activation != y.activation || x.weight.rows() != y.weight.rows() ||
        x.weight.cols() != y.weight.cols() || x.weight != y.weight || x.bias != y.bias) {
      return false;
    }
  }
  return true;
}

ForwardResult forward(const DenseNet& net, const Eigen::MatrixXd& batch) {
  if (net.num_layers() == 0) throw ContractError("forward through an empty net");
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim()) {
    throw ShapeError("batch width " + std::to_string(batch.cols()) + " != net input " +
                     std::to_string(net.input_dim()));
  }
  ForwardResult result;
  result.cache.net = &net;
  result.cache.version = net.version();
  result.cache.input = batch;
  result.cache.outputs.reserve(net.num_layers());
  const Eigen::MatrixXd* x = &batch;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    Eigen::MatrixXd z = affine(net.layer(i), *x);
    apply_activation(z, net.layer(i).activation);
    result.cache.outputs.push_back(std::move(z));
    x = &result.cache.outputs.back();
  }
  result.output = result.cache.outputs.back();
  return result;
}

Eigen::MatrixXd predict(const DenseNet& net, const Eigen::MatrixXd& batch) {
  if (static_cast<std::size_t>(batch.cols()) != net.input_dim()) {
    throw ShapeError("batch width " + std::to_string(batch.cols()) + " != net input " +
                     std::to_string(net.input_dim()));
  }
  Eigen::MatrixXd x = batch;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    x = affine(net.layer(i), x);
    apply_activation(x, net.layer(i).activation);
  }
  return x;
}

NetGradients backward(const DenseNet& net, const ForwardCache& cache,
                      const Eigen::MatrixXd& upstream) {
  if (cache.net != &net || cache.version != net.version() ||
      cache.outputs.size() != net.num_layers()) {
    throw ContractError("stale forward cache: parameters changed or cache from another net");
  }
  if (upstream.rows() != cache.input.rows() ||
      static_cast<std::size_t>(upstream.cols()) != net.output_dim()) {
    throw ShapeError("upstream gradient shape does not match the forward output");
  }
  NetGradients grads;
  grads.params.resize(2 * net.num_layers());
  Eigen::MatrixXd delta = upstream;
  for (std::size_t li = net.num_layers(); li-- > 0;) {
    const DenseLayer& layer = net.layer(li);
    multiply_by_derivative(delta, cache.outputs[li], layer.activation);
    const Eigen::MatrixXd& x = li == 0 ? cache.input : cache.outputs[li - 1];
    grads.params[2 * li] = x.transpose() * delta;
    grads.params[2 * li + 1] = delta.colwise().sum();
    delta = delta * layer.weight.transpose();
  }
  grads.input = std::move(delta);
  return grads;
}

std::vector<Eigen::MatrixXd> zero_gradients(const DenseNet& net) {
  std::vector<Eigen::MatrixXd> out;
  for (const auto* p : net.parameters()) out.push_back(Eigen::MatrixXd::Zero(p->rows(), p->cols()));
  return out;
}

void accumulate(std::vector<Eigen::MatrixXd>& into, const std::vector<Eigen::MatrixXd>& from) {
  if (into.size() != from.size()) throw ShapeError("gradient lists differ in length");
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += from[i];
}

LossAndGrad softmax_cross_entropy(const Eigen::MatrixXd& logits,
                                  std::span<const std::size_t> targets) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size()) {
    throw ShapeError("logit rows and target count differ");
  }
  if (logits.rows() == 0) throw ShapeError("empty batch");
  const double batch = static_cast<double>(logits.rows());
  LossAndGrad out;
  out.grad.resizeLike(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const std::size_t t = targets[static_cast<std::size_t>(i)];
    if (t >= static_cast<std::size_t>(logits.cols())) throw ShapeError("target index >= class count");
    const double max = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - max).exp().matrix();
    const double sum = e.sum();
    total += std::log(sum) + max - logits(i, static_cast<Eigen::Index>(t));
    out.grad.row(i) = e / sum;
    out.grad(i, static_cast<Eigen::Index>(t)) -= 1.0;
  }
  out.grad /= batch;
  out.loss = total / batch;
  return out;
}

}  // namespace anyshot
