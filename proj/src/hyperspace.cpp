#include "evohps/hyperspace.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace evohps {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double parse_number(std::string_view text, std::string_view context) {
  const std::string t = trim(text);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw std::invalid_argument("invalid number '" + t + "' for " + std::string(context));
  }
  return v;
}

bool is_integral(double v) { return std::isfinite(v) && std::floor(v) == v; }

}  // namespace

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::DQN: return "DQN";
    case Algorithm::DDPG: return "DDPG";
    case Algorithm::A2C: return "A2C";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view id) {
  const std::string l = lower(trim(id));
  if (l == "dqn") return Algorithm::DQN;
  if (l == "ddpg") return Algorithm::DDPG;
  if (l == "a2c") return Algorithm::A2C;
  throw std::invalid_argument("unknown algorithm id '" + std::string(id) + "'");
}

std::string_view to_string(SpecKind kind) {
  switch (kind) {
    case SpecKind::Categorical: return "categorical";
    case SpecKind::OrdinalGrid: return "grid";
    case SpecKind::ContinuousRange: return "continuous";
    case SpecKind::IntegerRange: return "integer";
  }
  return "?";
}

SpecKind parse_spec_kind(std::string_view text) {
  if (text == "categorical") return SpecKind::Categorical;
  if (text == "grid") return SpecKind::OrdinalGrid;
  if (text == "continuous") return SpecKind::ContinuousRange;
  if (text == "integer") return SpecKind::IntegerRange;
  throw std::invalid_argument("unknown spec kind '" + std::string(text) + "'");
}

std::string format_value(const ParamValue& value) {
  if (const auto* s = std::get_if<std::string>(&value)) return *s;
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, std::get<double>(value));
  return std::string(buf, ptr);
}

HyperparamSpec HyperparamSpec::categorical(std::string name, std::vector<std::string> values) {
  if (values.empty()) throw std::invalid_argument("categorical spec '" + name + "' is empty");
  HyperparamSpec spec;
  spec.name_ = std::move(name);
  spec.kind_ = SpecKind::Categorical;
  for (auto& v : values) {
    if (std::find(spec.allowed_.begin(), spec.allowed_.end(), ParamValue{v}) != spec.allowed_.end()) {
      throw std::invalid_argument("categorical spec '" + spec.name_ + "' repeats '" + v + "'");
    }
    spec.allowed_.emplace_back(std::move(v));
  }
  return spec;
}

HyperparamSpec HyperparamSpec::grid(std::string name, std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("grid spec '" + name + "' is empty");
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw std::invalid_argument("grid spec '" + name + "' has a non-finite value");
    }
    if (i > 0 && !(values[i - 1] < values[i])) {
      throw std::invalid_argument("grid spec '" + name + "' is not strictly increasing");
    }
  }
  HyperparamSpec spec;
  spec.name_ = std::move(name);
  spec.kind_ = SpecKind::OrdinalGrid;
  spec.allowed_.assign(values.begin(), values.end());
  return spec;
}

HyperparamSpec HyperparamSpec::continuous(std::string name, double lo, double hi) {
  if (!(std::isfinite(lo) && std::isfinite(hi) && lo < hi)) {
    throw std::invalid_argument("range spec '" + name + "' needs finite lo < hi");
  }
  HyperparamSpec spec;
  spec.name_ = std::move(name);
  spec.kind_ = SpecKind::ContinuousRange;
  spec.lo_ = lo;
  spec.hi_ = hi;
  return spec;
}

HyperparamSpec HyperparamSpec::integer(std::string name, double lo, double hi) {
  HyperparamSpec spec = continuous(std::move(name), lo, hi);
  if (!is_integral(lo) || !is_integral(hi)) {
    throw std::invalid_argument("integer spec '" + spec.name_ + "' needs integral bounds");
  }
  spec.kind_ = SpecKind::IntegerRange;
  return spec;
}

bool HyperparamSpec::admits(const ParamValue& value) const {
  switch (kind_) {
    case SpecKind::Categorical:
    case SpecKind::OrdinalGrid:
      return index_of(value).has_value();
    case SpecKind::ContinuousRange: {
      const auto* v = std::get_if<double>(&value);
      return v != nullptr && *v >= lo_ && *v <= hi_;
    }
    case SpecKind::IntegerRange: {
      const auto* v = std::get_if<double>(&value);
      return v != nullptr && is_integral(*v) && *v >= lo_ && *v <= hi_;
    }
  }
  return false;
}

std::optional<std::size_t> HyperparamSpec::index_of(const ParamValue& value) const {
  const auto it = std::find(allowed_.begin(), allowed_.end(), value);
  if (it == allowed_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - allowed_.begin());
}

std::optional<std::size_t> GeneSchema::position(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name() == name) return i;
  }
  return std::nullopt;
}

const HyperparamSpec& GeneSchema::at(std::string_view name) const {
  const auto pos = position(name);
  if (!pos) throw std::out_of_range("schema '" + id + "' has no parameter '" + std::string(name) + "'");
  return params[*pos];
}

GeneSchema make_schema(std::string id, std::optional<Algorithm> algorithm,
                       std::vector<HyperparamSpec> params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = i + 1; j < params.size(); ++j) {
      if (params[i].name() == params[j].name()) {
        throw std::invalid_argument("schema '" + id + "' repeats parameter '" + params[i].name() + "'");
      }
    }
  }
  if (params.empty()) throw std::invalid_argument("schema '" + id + "' has no parameters");
  return GeneSchema{std::move(id), algorithm, std::move(params)};
}

GeneSchema build_schema(Algorithm algorithm) {
  std::vector<HyperparamSpec> params{
      HyperparamSpec::grid("episodes", {50, 200, 500}),
      HyperparamSpec::grid("gamma", {0.01, 0.1, 0.5, 0.99}),
      HyperparamSpec::grid("learning_rate", {0.001, 0.01, 0.1}),
      HyperparamSpec::grid("batch_size", {16, 32, 64}),
      HyperparamSpec::grid("neurons", {10, 32, 64, 128}),
      HyperparamSpec::grid("layers", {1, 2, 3}),
      HyperparamSpec::categorical("optimizer", {"adam", "cg", "lbfgs", "lm"}),
      HyperparamSpec::categorical("activation", {"tanh", "relu"}),
  };
  if (algorithm == Algorithm::A2C) {
    params.push_back(HyperparamSpec::grid("trajectory_size", {10, 20, 50, 100, 1000}));
    params.push_back(HyperparamSpec::grid("kl_value", {0.001, 0.01, 0.1}));
  }
  return make_schema(std::string(to_string(algorithm)), algorithm, std::move(params));
}

GeneSchema build_schema(std::string_view algorithm_id) {
  return build_schema(parse_algorithm(algorithm_id));
}

GeneSchema override_spec(const GeneSchema& schema, std::string_view name,
                         const std::vector<std::string>& values) {
  const auto pos = schema.position(name);
  if (!pos) {
    throw std::invalid_argument("search-space override names unknown parameter '" +
                                std::string(name) + "' for schema " + schema.id);
  }
  const HyperparamSpec& old = schema.params[*pos];
  const std::string context = "space." + std::string(name);
  HyperparamSpec replacement = old;
  switch (old.kind()) {
    case SpecKind::Categorical: {
      std::vector<std::string> vs;
      for (const auto& v : values) vs.push_back(trim(v));
      replacement = HyperparamSpec::categorical(old.name(), std::move(vs));
      break;
    }
    case SpecKind::OrdinalGrid: {
      std::vector<double> vs;
      for (const auto& v : values) vs.push_back(parse_number(v, context));
      std::sort(vs.begin(), vs.end());
      replacement = HyperparamSpec::grid(old.name(), std::move(vs));
      break;
    }
    case SpecKind::ContinuousRange:
    case SpecKind::IntegerRange: {
      if (values.size() != 2) throw std::invalid_argument(context + " needs 'lo,hi'");
      const double lo = parse_number(values[0], context);
      const double hi = parse_number(values[1], context);
      replacement = old.kind() == SpecKind::ContinuousRange
                        ? HyperparamSpec::continuous(old.name(), lo, hi)
                        : HyperparamSpec::integer(old.name(), lo, hi);
      break;
    }
  }
  GeneSchema out = schema;
  out.params[*pos] = std::move(replacement);
  return out;
}

Gene sample_gene(const GeneSchema& schema, Rng& rng) {
  Gene gene{schema.id, {}};
  gene.values.reserve(schema.size());
  for (const auto& spec : schema.params) {
    switch (spec.kind()) {
      case SpecKind::Categorical:
      case SpecKind::OrdinalGrid:
        gene.values.push_back(spec.allowed()[uniform_index(rng, spec.allowed().size())]);
        break;
      case SpecKind::ContinuousRange:
        gene.values.emplace_back(spec.lo() + uniform01(rng) * (spec.hi() - spec.lo()));
        break;
      case SpecKind::IntegerRange: {
        const auto count = static_cast<std::size_t>(spec.hi() - spec.lo()) + 1;
        gene.values.emplace_back(spec.lo() + static_cast<double>(uniform_index(rng, count)));
        break;
      }
    }
  }
  return gene;
}

bool validate(const Gene& gene, const GeneSchema& schema) {
  if (gene.schema_id != schema.id || gene.values.size() != schema.size()) return false;
  for (std::size_t i = 0; i < schema.size(); ++i) {
    if (!schema.params[i].admits(gene.values[i])) return false;
  }
  return true;
}

std::vector<double> encode_unit_cube(const Gene& gene, const GeneSchema& schema) {
  if (!validate(gene, schema)) {
    throw std::invalid_argument("encode_unit_cube: gene does not satisfy schema " + schema.id);
  }
  std::vector<double> x(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& spec = schema.params[i];
    if (spec.is_discrete()) {
      const std::size_t m = spec.allowed().size();
      const std::size_t j = *spec.index_of(gene.values[i]);
      x[i] = m == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(m - 1);
    } else {
      x[i] = (std::get<double>(gene.values[i]) - spec.lo()) / (spec.hi() - spec.lo());
    }
  }
  return x;
}

Gene decode_unit_cube(const std::vector<double>& x, const GeneSchema& schema) {
  if (x.size() != schema.size()) {
    throw std::invalid_argument("decode_unit_cube: expected " + std::to_string(schema.size()) +
                                " coordinates, got " + std::to_string(x.size()));
  }
  Gene gene{schema.id, {}};
  gene.values.reserve(schema.size());
  for (std::size_t i = 0; i < schema.size(); ++i) {
    const auto& spec = schema.params[i];
    const double u = std::clamp(std::isfinite(x[i]) ? x[i] : 0.0, 0.0, 1.0);
    if (spec.is_discrete()) {
      const std::size_t m = spec.allowed().size();
      std::size_t j = 0;
      if (m > 1) {
        // Nearest index; an exact half goes to the lower one.
        const double t = u * static_cast<double>(m - 1) - 0.5;
        j = static_cast<std::size_t>(std::max(0.0, std::ceil(t)));
        j = std::min(j, m - 1);
      }
      gene.values.push_back(spec.allowed()[j]);
    } else if (spec.kind() == SpecKind::ContinuousRange) {
      gene.values.emplace_back(spec.lo() + u * (spec.hi() - spec.lo()));
    } else {
      const double v = std::round(spec.lo() + u * (spec.hi() - spec.lo()));
      gene.values.emplace_back(std::clamp(v, spec.lo(), spec.hi()));
    }
  }
  return gene;
}

double number_at(const Gene& gene, const GeneSchema& schema, std::string_view name) {
  const auto pos = schema.position(name);
  if (!pos || *pos >= gene.values.size()) {
    throw std::out_of_range("gene has no parameter '" + std::string(name) + "'");
  }
  const auto* v = std::get_if<double>(&gene.values[*pos]);
  if (v == nullptr) throw std::invalid_argument("parameter '" + std::string(name) + "' is not numeric");
  return *v;
}

std::string text_at(const Gene& gene, const GeneSchema& schema, std::string_view name) {
  const auto pos = schema.position(name);
  if (!pos || *pos >= gene.values.size()) {
    throw std::out_of_range("gene has no parameter '" + std::string(name) + "'");
  }
  const auto* v = std::get_if<std::string>(&gene.values[*pos]);
  if (v == nullptr) throw std::invalid_argument("parameter '" + std::string(name) + "' is not categorical");
  return *v;
}

std::string describe(const Gene& gene, const GeneSchema& schema) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < gene.values.size(); ++i) {
    if (i) os << ", ";
    if (i < schema.size()) os << schema.params[i].name() << '=';
    os << format_value(gene.values[i]);
  }
  os << ')';
  return os.str();
}

}  // namespace evohps
