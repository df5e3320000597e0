#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace fedarks {

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;

  std::size_t element_count() const;
  bool operator==(const TensorSpec&) const = default;
};

// Ordered description of how a flat value array maps onto named tensors.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<TensorSpec> tensors);

  const std::vector<TensorSpec>& tensors() const { return tensors_; }
  std::size_t total_size() const { return total_; }

  // Flat offset of the named tensor; StructuralError if unknown.
  std::size_t offset_of(std::string_view name) const;
  const TensorSpec& spec_of(std::string_view name) const;

  bool operator==(const ParamLayout& other) const {
    return tensors_ == other.tensors_;
  }

 private:
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

// Flat real-valued parameter vector. The unit of broadcast, upload,
// aggregation and norm computation.
class ParamVector {
 public:
  ParamVector() = default;
  ParamVector(ParamLayout layout, std::vector<double> values);

  static ParamVector zeros(ParamLayout layout);

  const ParamLayout& layout() const { return layout_; }
  const std::vector<double>& values() const { return values_; }
  std::vector<double>& values() { return values_; }
  std::size_t size() const { return values_.size(); }

  std::span<double> tensor(std::string_view name);
  std::span<const double> tensor(std::string_view name) const;

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

// Elementwise difference of two ParamVectors with equal layout.
struct ParamDelta {
  ParamLayout layout;
  std::vector<double> values;
};

// Euclidean norm; InvalidInputError on NaN/Inf entries.
double l2_norm(const ParamVector& v);
double l2_norm(const ParamDelta& d);

// a - b elementwise; StructuralError on layout mismatch.
ParamDelta subtract(const ParamVector& a, const ParamVector& b);

// Sum_k weights[k] * vectors[k], accumulated sequentially in the given
// order. Callers pass operands in ascending client order so results are
// bit-reproducible.
ParamVector weighted_sum(std::span<const ParamVector* const> vectors,
                         std::span<const double> weights);
ParamVector weighted_sum(const std::vector<ParamVector>& vectors,
                         const std::vector<double>& weights);

// Checkpoint blob: magic, little-endian JSON layout header, little-endian
// f64 values. See docs/formats.md.
std::vector<std::uint8_t> serialize(const ParamVector& v);
ParamVector deserialize_param_vector(std::span<const std::uint8_t> bytes);
void save_param_vector(const std::filesystem::path& path, const ParamVector& v);
ParamVector load_param_vector(const std::filesystem::path& path);

}  // namespace fedarks
