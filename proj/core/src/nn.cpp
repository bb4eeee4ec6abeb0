#include "v2e/nn.hpp"

#include <cmath>
#include <cstring>

#include "v2e/errors.hpp"
#include "v2e/ops.hpp"

namespace v2e {

ag::Tensor ParameterStore::add(const std::string& name, const std::string& group, ag::Shape shape,
                               std::vector<double> values) {
  if (index_.count(name)) throw ConfigError("duplicate parameter '" + name + "'");
  auto t = ag::Tensor::from(std::move(shape), std::move(values), true);
  index_.emplace(name, Entry{group, t});
  names_.push_back(name);
  return t;
}

ag::Tensor ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.tensor;
}

const std::string& ParameterStore::group_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return it->second.group;
}

std::vector<std::string> ParameterStore::names_in(const std::vector<std::string>& groups) const {
  std::vector<std::string> out;
  for (const auto& n : names_) {
    const auto& g = index_.at(n).group;
    for (const auto& want : groups)
      if (g == want) {
        out.push_back(n);
        break;
      }
  }
  return out;
}

std::vector<ag::Tensor> ParameterStore::tensors_in(const std::vector<std::string>& groups) const {
  std::vector<ag::Tensor> out;
  for (const auto& n : names_in(groups)) out.push_back(index_.at(n).tensor);
  return out;
}

int64_t ParameterStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& [_, e] : index_) n += e.tensor.numel();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& [_, e] : index_) e.tensor.zero_grad();
}

uint64_t ParameterStore::hash(const std::vector<std::string>& names) const {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& n : names) {
    feed(n.data(), n.size());
    auto data = get(n).data();
    feed(data.data(), data.size() * sizeof(double));
  }
  return h;
}

void ParameterStore::copy_values_from(const std::map<std::string, std::vector<double>>& values) {
  for (const auto& [name, v] : values) {
    auto t = get(name);
    if (static_cast<int64_t>(v.size()) != t.numel())
      throw ConfigError("parameter '" + name + "' has " + std::to_string(t.numel()) + " values, got " +
                        std::to_string(v.size()));
    std::memcpy(t.mutable_data().data(), v.data(), v.size() * sizeof(double));
  }
}

std::map<std::string, std::vector<double>> ParameterStore::snapshot() const {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, e] : index_) {
    auto d = e.tensor.data();
    out[name] = std::vector<double>(d.begin(), d.end());
  }
  return out;
}

std::vector<double> normal_values(Rng& rng, int64_t count, double stddev) {
  std::vector<double> v(static_cast<size_t>(count));
  for (auto& x : v) x = rng.normal() * stddev;
  return v;
}

std::vector<double> he_normal(Rng& rng, int64_t count, int64_t fan_in) {
  return normal_values(rng, count, std::sqrt(2.0 / static_cast<double>(fan_in)));
}

ag::Tensor linear(const ag::Tensor& x, const ag::Tensor& w, const ag::Tensor& b) {
  auto y = ag::matmul(x, w);
  return b.defined() ? y + b : y;
}

}  // namespace v2e
