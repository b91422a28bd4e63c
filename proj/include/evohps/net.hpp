#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "evohps/random.hpp"

namespace evohps {

enum class Activation { Tanh, Relu };
enum class Head { Linear, TanhBounded, Softmax };

std::string_view to_string(Activation a);
std::string_view to_string(Head h);
Activation parse_activation(std::string_view text);
Head parse_head(std::string_view text);

/// Dense feed-forward network. Parameters live in one flat vector: for each
/// layer the weight matrix (out x in, row-major) followed by its bias.
class MLPModel {
 public:
  MLPModel() = default;
  /// Zero-initialized model; throws std::invalid_argument on fewer than two
  /// dims or a dim < 1.
  MLPModel(std::vector<int> layer_dims, Activation activation, Head head);

  const std::vector<int>& layer_dims() const { return dims_; }
  Activation activation() const { return activation_; }
  Head head() const { return head_; }
  int input_dim() const { return dims_.front(); }
  int output_dim() const { return dims_.back(); }
  std::size_t layer_count() const { return dims_.size() - 1; }
  std::size_t parameter_count() const { return params_.size(); }

  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }
  void set_parameters(std::span<const double> values);

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<RowMajor> weight(std::size_t layer);
  Eigen::Map<const RowMajor> weight(std::size_t layer) const;
  Eigen::Map<Eigen::VectorXd> bias(std::size_t layer);
  Eigen::Map<const Eigen::VectorXd> bias(std::size_t layer) const;

  /// Offset of a layer's weights in the flat vector; its bias follows them.
  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }

  friend bool operator==(const MLPModel&, const MLPModel&) = default;

 private:
  std::vector<int> dims_;
  Activation activation_ = Activation::Tanh;
  Head head_ = Head::Linear;
  std::vector<double> params_;
  std::vector<std::size_t> offsets_;
};

/// Glorot-uniform weights, zero biases.
MLPModel init_model(std::vector<int> layer_dims, Activation activation, Head head, Rng& rng);

/// Per-layer outputs (column per sample) retained for backward. Entry 0 is
/// the input batch; the last entry is the head output.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> layers;
  std::size_t batch() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().cols()); }
};

struct ForwardResult {
  std::vector<double> output;
  ForwardCache cache;
};

ForwardResult forward(const MLPModel& model, std::span<const double> input);

/// Batched forward over the columns of `inputs` (input_dim x batch).
Eigen::MatrixXd forward_batch(const MLPModel& model, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache = nullptr);

/// Gradients of sum(output . output_grad) over the batch.
struct GradientSet {
  std::vector<double> params;  // same layout as MLPModel::parameters()
  Eigen::MatrixXd input;       // input_dim x batch
};

GradientSet backward(const MLPModel& model, const ForwardCache& cache,
                     std::span<const double> output_grad);
GradientSet backward_batch(const MLPModel& model, const ForwardCache& cache,
                           const Eigen::MatrixXd& output_grad);

struct LossAndGrad {
  double loss = 0.0;
  std::vector<double> grad;
};

/// Mean squared error and its gradient 2 (prediction - target) / len.
LossAndGrad mse_loss(std::span<const double> prediction, std::span<const double> target);

std::string save_model(const MLPModel& model);
void save_model_file(const MLPModel& model, const std::string& path);

/// Throws ModelParseError carrying the byte offset of the first bad token.
MLPModel load_model(std::string_view text);
MLPModel load_model_file(const std::string& path);

class ModelParseError : public std::runtime_error {
 public:
  ModelParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace evohps
