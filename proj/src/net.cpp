#include "evohps/net.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace evohps {

std::string_view to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

std::string_view to_string(Head h) {
  switch (h) {
    case Head::Linear: return "linear";
    case Head::TanhBounded: return "tanh";
    case Head::Softmax: return "softmax";
  }
  return "?";
}

Activation parse_activation(std::string_view text) {
  if (text == "tanh") return Activation::Tanh;
  if (text == "relu") return Activation::Relu;
  throw std::invalid_argument("unknown activation '" + std::string(text) + "'");
}

Head parse_head(std::string_view text) {
  if (text == "linear") return Head::Linear;
  if (text == "tanh") return Head::TanhBounded;
  if (text == "softmax") return Head::Softmax;
  throw std::invalid_argument("unknown output head '" + std::string(text) + "'");
}

MLPModel::MLPModel(std::vector<int> layer_dims, Activation activation, Head head)
    : dims_(std::move(layer_dims)), activation_(activation), head_(head) {
  if (dims_.size() < 2) throw std::invalid_argument("MLPModel: need at least input and output dims");
  for (int d : dims_) {
    if (d < 1) throw std::invalid_argument("MLPModel: every layer dim must be >= 1");
  }
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    offsets_.push_back(total);
    total += static_cast<std::size_t>(dims_[l + 1]) * static_cast<std::size_t>(dims_[l] + 1);
  }
  params_.assign(total, 0.0);
}

void MLPModel::set_parameters(std::span<const double> values) {
  if (values.size() != params_.size()) {
    throw std::invalid_argument("set_parameters: expected " + std::to_string(params_.size()) +
                                " values, got " + std::to_string(values.size()));
  }
  std::copy(values.begin(), values.end(), params_.begin());
}

Eigen::Map<MLPModel::RowMajor> MLPModel::weight(std::size_t layer) {
  return {params_.data() + offsets_[layer], dims_[layer + 1], dims_[layer]};
}

Eigen::Map<const MLPModel::RowMajor> MLPModel::weight(std::size_t layer) const {
  return {params_.data() + offsets_[layer], dims_[layer + 1], dims_[layer]};
}

Eigen::Map<Eigen::VectorXd> MLPModel::bias(std::size_t layer) {
  const std::size_t off = offsets_[layer] + static_cast<std::size_t>(dims_[layer + 1] * dims_[layer]);
  return {params_.data() + off, dims_[layer + 1]};
}

Eigen::Map<const Eigen::VectorXd> MLPModel::bias(std::size_t layer) const {
  const std::size_t off = offsets_[layer] + static_cast<std::size_t>(dims_[layer + 1] * dims_[layer]);
  return {params_.data() + off, dims_[layer + 1]};
}

MLPModel init_model(std::vector<int> layer_dims, Activation activation, Head head, Rng& rng) {
  MLPModel model(std::move(layer_dims), activation, head);
  for (std::size_t l = 0; l < model.layer_count(); ++l) {
    auto w = model.weight(l);
    const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = (2.0 * uniform01(rng) - 1.0) * limit;
    }
  }
  return model;
}

namespace {

void apply_activation(Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::Tanh) {
    z = z.array().tanh();
  } else {
    z = z.cwiseMax(0.0);
  }
}

void apply_head(Eigen::MatrixXd& z, Head h) {
  switch (h) {
    case Head::Linear: break;
    case Head::TanhBounded: z = z.array().tanh(); break;
    case Head::Softmax:
      for (Eigen::Index c = 0; c < z.cols(); ++c) {
        auto col = z.col(c);
        const double m = col.maxCoeff();
        col = (col.array() - m).exp();
        col /= col.sum();
      }
      break;
  }
}

}  // namespace

Eigen::MatrixXd forward_batch(const MLPModel& model, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache) {
  if (inputs.rows() != model.input_dim()) {
    throw std::invalid_argument("forward: expected input of length " +
                                std::to_string(model.input_dim()) + ", got " +
                                std::to_string(inputs.rows()));
  }
  if (cache) {
    cache->layers.clear();
    cache->layers.push_back(inputs);
  }
  Eigen::MatrixXd a = inputs;
  const std::size_t last = model.layer_count() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    Eigen::MatrixXd z = model.weight(l) * a;
    z.colwise() += model.bias(l);
    if (l < last) {
      apply_activation(z, model.activation());
    } else {
      apply_head(z, model.head());
    }
    a = std::move(z);
    if (cache) cache->layers.push_back(a);
  }
  return a;
}

ForwardResult forward(const MLPModel& model, std::span<const double> input) {
  const Eigen::Map<const Eigen::MatrixXd> in(input.data(), static_cast<Eigen::Index>(input.size()), 1);
  ForwardResult result;
  const Eigen::MatrixXd out = forward_batch(model, in, &result.cache);
  result.output.assign(out.data(), out.data() + out.size());
  return result;
}

GradientSet backward_batch(const MLPModel& model, const ForwardCache& cache,
                           const Eigen::MatrixXd& output_grad) {
  const std::size_t layers = model.layer_count();
  if (cache.layers.size() != layers + 1 || cache.layers.back().rows() != model.output_dim() ||
      output_grad.rows() != model.output_dim() || output_grad.cols() != cache.layers.back().cols()) {
    throw std::invalid_argument("backward: cache or output gradient does not match the model");
  }
  for (std::size_t l = 0; l <= layers; ++l) {
    if (cache.layers[l].rows() != model.layer_dims()[l] || cache.layers[l].cols() != output_grad.cols()) {
      throw std::invalid_argument("backward: cache does not match the model layer dims");
    }
  }
  GradientSet grads;
  grads.params.assign(model.parameter_count(), 0.0);

  const Eigen::MatrixXd& y = cache.layers.back();
  Eigen::MatrixXd dz;
  switch (model.head()) {
    case Head::Linear: dz = output_grad; break;
    case Head::TanhBounded: dz = output_grad.array() * (1.0 - y.array().square()); break;
    case Head::Softmax: {
      dz.resize(y.rows(), y.cols());
      for (Eigen::Index c = 0; c < y.cols(); ++c) {
        const double dot = y.col(c).dot(output_grad.col(c));
        dz.col(c) = y.col(c).array() * (output_grad.col(c).array() - dot);
      }
      break;
    }
  }

  for (std::size_t l = layers; l-- > 0;) {
    const Eigen::MatrixXd& a_prev = cache.layers[l];
    const auto rows = static_cast<Eigen::Index>(model.layer_dims()[l + 1]);
    const auto cols = static_cast<Eigen::Index>(model.layer_dims()[l]);
    Eigen::Map<MLPModel::RowMajor> dw(grads.params.data() + model.weight_offset(l), rows, cols);
    Eigen::Map<Eigen::VectorXd> db(grads.params.data() + model.weight_offset(l) + rows * cols, rows);
    dw.noalias() = dz * a_prev.transpose();
    db = dz.rowwise().sum();
    Eigen::MatrixXd da = model.weight(l).transpose() * dz;
    if (l == 0) {
      grads.input = std::move(da);
    } else if (model.activation() == Activation::Tanh) {
      dz = da.array() * (1.0 - a_prev.array().square());
    } else {
      dz = da.array() * (a_prev.array() > 0.0).cast<double>();
    }
  }
  return grads;
}

GradientSet backward(const MLPModel& model, const ForwardCache& cache,
                     std::span<const double> output_grad) {
  const Eigen::Map<const Eigen::MatrixXd> g(output_grad.data(),
                                            static_cast<Eigen::Index>(output_grad.size()), 1);
  return backward_batch(model, cache, g);
}

LossAndGrad mse_loss(std::span<const double> prediction, std::span<const double> target) {
  if (prediction.size() != target.size() || prediction.empty()) {
    throw std::invalid_argument("mse_loss: prediction and target lengths differ");
  }
  LossAndGrad out;
  out.grad.resize(prediction.size());
  const double n = static_cast<double>(prediction.size());
  for (std::size_t i = 0; i < prediction.size(); ++i) {
    const double d = prediction[i] - target[i];
    out.loss += d * d;
    out.grad[i] = 2.0 * d / n;
  }
  out.loss /= n;
  return out;
}

namespace {

constexpr std::string_view kMagic = "evohps-mlp";

void append_number(std::string& out, double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, ptr);
}

// Whitespace tokenizer that remembers where each token started.
class Tokens {
 public:
  explicit Tokens(std::string_view text) : text_(text) {}

  std::string_view next(std::string_view what) {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ >= text_.size()) throw ModelParseError("unexpected end of model file, expected " + std::string(what), pos_);
    start_ = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return text_.substr(start_, pos_ - start_);
  }

  void expect(std::string_view keyword) {
    const auto t = next(keyword);
    if (t != keyword) fail("expected '" + std::string(keyword) + "', found '" + std::string(t) + "'");
  }

  template <typename T>
  T number(std::string_view what) {
    const auto t = next(what);
    T v{};
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) {
      fail("malformed " + std::string(what) + " '" + std::string(t) + "'");
    }
    return v;
  }

  bool at_end() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    return pos_ >= text_.size();
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ModelParseError(msg, start_); }
  std::size_t position() const { return pos_; }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t start_ = 0;
};

}  // namespace

std::string save_model(const MLPModel& model) {
  std::string out;
  out += kMagic;
  out += " 1\nlayer_dims";
  for (int d : model.layer_dims()) {
    out += ' ';
    out += std::to_string(d);
  }
  out += "\nactivation ";
  out += to_string(model.activation());
  out += "\nhead ";
  out += to_string(model.head());
  out += "\nparameters ";
  out += std::to_string(model.parameter_count());
  out += '\n';
  for (double v : model.parameters()) {
    append_number(out, v);
    out += '\n';
  }
  return out;
}

void save_model_file(const MLPModel& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write model file '" + path + "'");
  f << save_model(model);
  if (!f.flush()) throw std::runtime_error("failed writing model file '" + path + "'");
}

MLPModel load_model(std::string_view text) {
  Tokens tok(text);
  tok.expect(kMagic);
  if (tok.number<int>("format version") != 1) tok.fail("unsupported model format version");
  tok.expect("layer_dims");
  std::vector<int> dims;
  while (true) {
    const auto t = tok.next("layer dim or 'activation'");
    if (t == "activation") break;
    int d = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), d);
    if (ec != std::errc() || ptr != t.data() + t.size() || d < 1) {
      tok.fail("malformed layer dim '" + std::string(t) + "'");
    }
    dims.push_back(d);
  }
  if (dims.size() < 2) tok.fail("model needs at least two layer dims");
  Activation act{};
  Head head{};
  try {
    act = parse_activation(tok.next("activation"));
  } catch (const std::invalid_argument& e) {
    tok.fail(e.what());
  }
  tok.expect("head");
  try {
    head = parse_head(tok.next("head"));
  } catch (const std::invalid_argument& e) {
    tok.fail(e.what());
  }
  MLPModel model(dims, act, head);
  tok.expect("parameters");
  const auto count = tok.number<std::size_t>("parameter count");
  if (count != model.parameter_count()) {
    tok.fail("parameter count " + std::to_string(count) + " does not match layer dims (" +
             std::to_string(model.parameter_count()) + ")");
  }
  auto params = model.parameters();
  for (std::size_t i = 0; i < count; ++i) {
    params[i] = tok.number<double>("parameter");
    if (!std::isfinite(params[i])) tok.fail("non-finite parameter");
  }
  if (!tok.at_end()) throw ModelParseError("trailing data after parameters", tok.position());
  return model;
}

MLPModel load_model_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open model file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return load_model(ss.str());
}

}  // namespace evohps
