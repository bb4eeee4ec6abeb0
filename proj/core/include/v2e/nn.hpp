#pragma once

// Named parameter storage and the few layer primitives the model needs.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "v2e/random.hpp"
#include "v2e/tensor.hpp"

namespace v2e {

// Parameters are grouped by the stream that owns them so that a disabled
// stream can be excluded from optimization as a unit.
namespace group {
inline constexpr const char* kBackbone = "backbone";
inline constexpr const char* kStream1 = "stream1";
inline constexpr const char* kEva = "eva";
inline constexpr const char* kEp = "ep";
inline constexpr const char* kClassifier = "classifier";
}  // namespace group

class ParameterStore {
 public:
  // Registers a trainable tensor. Names must be unique.
  ag::Tensor add(const std::string& name, const std::string& group, ag::Shape shape, std::vector<double> values);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  ag::Tensor get(const std::string& name) const;
  const std::string& group_of(const std::string& name) const;

  // Insertion order.
  const std::vector<std::string>& names() const { return names_; }
  std::vector<std::string> names_in(const std::vector<std::string>& groups) const;
  std::vector<ag::Tensor> tensors_in(const std::vector<std::string>& groups) const;

  int64_t scalar_count() const;
  void zero_grad();

  // FNV-1a over the raw bytes of the named parameters, in insertion order.
  uint64_t hash(const std::vector<std::string>& names) const;
  uint64_t hash_groups(const std::vector<std::string>& groups) const { return hash(names_in(groups)); }

  // Overwrites values from another store with matching names and shapes.
  void copy_values_from(const std::map<std::string, std::vector<double>>& values);
  std::map<std::string, std::vector<double>> snapshot() const;

 private:
  struct Entry {
    std::string group;
    ag::Tensor tensor;
  };
  std::vector<std::string> names_;
  std::map<std::string, Entry> index_;
};

// He-normal weights for a layer with the given fan-in.
std::vector<double> he_normal(Rng& rng, int64_t count, int64_t fan_in);
std::vector<double> normal_values(Rng& rng, int64_t count, double stddev);

// x: [N,in], w: [in,out], b: [out] or undefined.
ag::Tensor linear(const ag::Tensor& x, const ag::Tensor& w, const ag::Tensor& b);

}  // namespace v2e
