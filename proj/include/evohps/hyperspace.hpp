#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "evohps/random.hpp"

namespace evohps {

enum class Algorithm { DQN, DDPG, A2C };

std::string_view to_string(Algorithm algorithm);

/// Parses "DQN", "DDPG" or "A2C" (case-insensitive). Throws std::invalid_argument
/// naming the id otherwise.
Algorithm parse_algorithm(std::string_view id);

enum class SpecKind { Categorical, OrdinalGrid, ContinuousRange, IntegerRange };

std::string_view to_string(SpecKind kind);
SpecKind parse_spec_kind(std::string_view text);

/// A hyperparameter value: numeric for grids and ranges, text for categoricals.
using ParamValue = std::variant<double, std::string>;

std::string format_value(const ParamValue& value);

/// One tunable hyperparameter and the set of values it may take.
class HyperparamSpec {
 public:
  static HyperparamSpec categorical(std::string name, std::vector<std::string> values);
  /// Values must be strictly increasing.
  static HyperparamSpec grid(std::string name, std::vector<double> values);
  static HyperparamSpec continuous(std::string name, double lo, double hi);
  static HyperparamSpec integer(std::string name, double lo, double hi);

  const std::string& name() const { return name_; }
  SpecKind kind() const { return kind_; }
  const std::vector<ParamValue>& allowed() const { return allowed_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  bool is_discrete() const {
    return kind_ == SpecKind::Categorical || kind_ == SpecKind::OrdinalGrid;
  }

  bool admits(const ParamValue& value) const;
  /// Position of value in the allowed list; nullopt for ranges or foreign values.
  std::optional<std::size_t> index_of(const ParamValue& value) const;

  friend bool operator==(const HyperparamSpec&, const HyperparamSpec&) = default;

 private:
  HyperparamSpec() = default;

  std::string name_;
  SpecKind kind_ = SpecKind::OrdinalGrid;
  std::vector<ParamValue> allowed_;
  double lo_ = 0.0;
  double hi_ = 0.0;
};

/// Ordered hyperparameter layout for one algorithm. Different algorithms have
/// different lengths (A2C carries trajectory size and KL value).
struct GeneSchema {
  std::string id;
  std::optional<Algorithm> algorithm;
  std::vector<HyperparamSpec> params;

  std::size_t size() const { return params.size(); }
  std::optional<std::size_t> position(std::string_view name) const;
  const HyperparamSpec& at(std::string_view name) const;

  friend bool operator==(const GeneSchema&, const GeneSchema&) = default;
};

/// Checks name uniqueness; throws std::invalid_argument on violation.
GeneSchema make_schema(std::string id, std::optional<Algorithm> algorithm,
                       std::vector<HyperparamSpec> params);

struct Gene {
  std::string schema_id;
  std::vector<ParamValue> values;

  friend bool operator==(const Gene&, const Gene&) = default;
};

/// Default search space for an algorithm.
GeneSchema build_schema(Algorithm algorithm);
GeneSchema build_schema(std::string_view algorithm_id);

/// Replaces the allowed values of one grid or categorical spec. The value text
/// is parsed according to the spec's kind; throws on an unknown name.
GeneSchema override_spec(const GeneSchema& schema, std::string_view name,
                         const std::vector<std::string>& values);

Gene sample_gene(const GeneSchema& schema, Rng& rng);

bool validate(const Gene& gene, const GeneSchema& schema);

/// Continuous relaxation: grid index j of m maps to j/(m-1), ranges are
/// normalized linearly. Single-value grids map to 0.5.
std::vector<double> encode_unit_cube(const Gene& gene, const GeneSchema& schema);

/// Inverse of encode_unit_cube. Coordinates are clamped to [0,1] and snapped to
/// the nearest grid index, ties going to the lower index.
Gene decode_unit_cube(const std::vector<double>& x, const GeneSchema& schema);

double number_at(const Gene& gene, const GeneSchema& schema, std::string_view name);
std::string text_at(const Gene& gene, const GeneSchema& schema, std::string_view name);

std::string describe(const Gene& gene, const GeneSchema& schema);

}  // namespace evohps
