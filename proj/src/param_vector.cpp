#include "fedarks/param_vector.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "fedarks/errors.hpp"
#include "json.hpp"

namespace fedarks {

namespace {

constexpr char kMagic[8] = {'F', 'A', 'R', 'K', 'P', 'V', '1', '\n'};

void check_finite(const std::vector<double>& values, const char* what) {
  for (double x : values) {
    if (!std::isfinite(x)) {
      throw InvalidInputError(std::string(what) + ": non-finite entry");
    }
  }
}

double accumulate_norm(const std::vector<double>& values) {
  double acc = 0.0;
  for (double x : values) {
    acc += x * x;
  }
  return std::sqrt(acc);
}

void append_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }
}

void append_f64_le(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    out.push_back(static_cast<std::uint8_t>((bits >> (8 * i)) & 0xff));
  }
}

std::uint32_t read_u32_le(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) {
    v = (v << 8) | b[at + static_cast<std::size_t>(i)];
  }
  return v;
}

double read_f64_le(std::span<const std::uint8_t> b, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) {
    bits = (bits << 8) | b[at + static_cast<std::size_t>(i)];
  }
  return std::bit_cast<double>(bits);
}

}  // namespace

std::size_t TensorSpec::element_count() const {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    n *= d;
  }
  return n;
}

ParamLayout::ParamLayout(std::vector<TensorSpec> tensors)
    : tensors_(std::move(tensors)) {
  for (const auto& t : tensors_) {
    total_ += t.element_count();
  }
}

std::size_t ParamLayout::offset_of(std::string_view name) const {
  std::size_t off = 0;
  for (const auto& t : tensors_) {
    if (t.name == name) {
      return off;
    }
    off += t.element_count();
  }
  throw StructuralError("layout has no tensor named '" + std::string(name) + "'");
}

const TensorSpec& ParamLayout::spec_of(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) {
      return t;
    }
  }
  throw StructuralError("layout has no tensor named '" + std::string(name) + "'");
}

ParamVector::ParamVector(ParamLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total_size()) {
    throw StructuralError("value count " + std::to_string(values_.size()) +
                          " does not match layout size " +
                          std::to_string(layout_.total_size()));
  }
}

ParamVector ParamVector::zeros(ParamLayout layout) {
  std::vector<double> values(layout.total_size(), 0.0);
  return ParamVector(std::move(layout), std::move(values));
}

std::span<double> ParamVector::tensor(std::string_view name) {
  const std::size_t off = layout_.offset_of(name);
  const std::size_t n = layout_.spec_of(name).element_count();
  return {values_.data() + off, n};
}

std::span<const double> ParamVector::tensor(std::string_view name) const {
  const std::size_t off = layout_.offset_of(name);
  const std::size_t n = layout_.spec_of(name).element_count();
  return {values_.data() + off, n};
}

double l2_norm(const ParamVector& v) {
  check_finite(v.values(), "l2_norm");
  return accumulate_norm(v.values());
}

double l2_norm(const ParamDelta& d) {
  check_finite(d.values, "l2_norm");
  return accumulate_norm(d.values);
}

ParamDelta subtract(const ParamVector& a, const ParamVector& b) {
  if (!(a.layout() == b.layout())) {
    throw StructuralError("subtract: layout mismatch");
  }
  ParamDelta delta{a.layout(), std::vector<double>(a.size())};
  for (std::size_t i = 0; i < a.size(); ++i) {
    delta.values[i] = a.values()[i] - b.values()[i];
  }
  return delta;
}

ParamVector weighted_sum(std::span<const ParamVector* const> vectors,
                         std::span<const double> weights) {
  if (vectors.empty()) {
    throw StructuralError("weighted_sum: empty vector list");
  }
  if (vectors.size() != weights.size()) {
    throw StructuralError("weighted_sum: " + std::to_string(vectors.size()) +
                          " vectors but " + std::to_string(weights.size()) +
                          " weights");
  }
  const ParamLayout& layout = vectors.front()->layout();
  for (const ParamVector* v : vectors) {
    if (!(v->layout() == layout)) {
      throw StructuralError("weighted_sum: layout mismatch");
    }
  }
  for (double w : weights) {
    if (!std::isfinite(w)) {
      throw InvalidInputError("weighted_sum: non-finite weight");
    }
  }
  ParamVector out = ParamVector::zeros(layout);
  for (std::size_t k = 0; k < vectors.size(); ++k) {
    const double w = weights[k];
    const std::vector<double>& vals = vectors[k]->values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      out.values()[i] += w * vals[i];
    }
  }
  return out;
}

ParamVector weighted_sum(const std::vector<ParamVector>& vectors,
                         const std::vector<double>& weights) {
  std::vector<const ParamVector*> ptrs;
  ptrs.reserve(vectors.size());
  for (const auto& v : vectors) {
    ptrs.push_back(&v);
  }
  return weighted_sum(std::span<const ParamVector* const>(ptrs), weights);
}

std::vector<std::uint8_t> serialize(const ParamVector& v) {
  nlohmann::json header;
  header["version"] = 1;
  header["count"] = v.size();
  auto& layout = header["layout"];
  layout = nlohmann::json::array();
  for (const auto& t : v.layout().tensors()) {
    layout.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string header_text = header.dump();

  std::vector<std::uint8_t> out;
  out.reserve(12 + header_text.size() + 8 * v.size());
  out.insert(out.end(), kMagic, kMagic + 8);
  append_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
  out.insert(out.end(), header_text.begin(), header_text.end());
  for (double x : v.values()) {
    append_f64_le(out, x);
  }
  return out;
}

ParamVector deserialize_param_vector(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw StructuralError("param vector blob: bad magic");
  }
  const std::size_t header_len = read_u32_le(bytes, 8);
  if (bytes.size() < 12 + header_len) {
    throw StructuralError("param vector blob: truncated header");
  }
  const std::string header_text(
      reinterpret_cast<const char*>(bytes.data()) + 12, header_len);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw StructuralError(std::string("param vector blob: bad header: ") +
                          e.what());
  }

  std::vector<TensorSpec> tensors;
  for (const auto& t : header.at("layout")) {
    TensorSpec spec;
    spec.name = t.at("name").get<std::string>();
    spec.shape = t.at("shape").get<std::vector<std::size_t>>();
    tensors.push_back(std::move(spec));
  }
  ParamLayout layout(std::move(tensors));

  const std::size_t count = header.at("count").get<std::size_t>();
  if (count != layout.total_size()) {
    throw StructuralError("param vector blob: count does not match layout");
  }
  if (bytes.size() != 12 + header_len + 8 * count) {
    throw StructuralError("param vector blob: value section size mismatch");
  }
  std::vector<double> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = read_f64_le(bytes, 12 + header_len + 8 * i);
  }
  return ParamVector(std::move(layout), std::move(values));
}

void save_param_vector(const std::filesystem::path& path,
                       const ParamVector& v) {
  const auto bytes = serialize(v);
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

ParamVector load_param_vector(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error("cannot open '" + path.string() + "' for reading");
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_param_vector(bytes);
}

}  // namespace fedarks
