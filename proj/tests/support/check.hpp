#pragma once

// Shared helpers for the unit suites and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "v2e/random.hpp"
#include "v2e/tensor.hpp"
#include "v2e/types.hpp"

namespace v2e::check {

using TensorFn = std::function<ag::Tensor(const std::vector<ag::Tensor>&)>;

struct GradCheck {
  double rel_error = 0;  // ||analytic - numeric|| / max(||numeric||, floor)
  double numeric_norm = 0;
};

// Compares the reverse-mode gradient of a scalar function with central
// differences for every input flagged in `wrt` (all inputs when empty).
GradCheck grad_check(const TensorFn& f, const std::vector<ag::Tensor>& inputs, double h = 1e-6,
                     std::vector<bool> wrt = {}, double norm_floor = 1e-8);

std::vector<double> uniform_values(Rng& rng, size_t n, double lo, double hi);
std::vector<double> normal_values(Rng& rng, size_t n, double stddev = 1.0);

// Fresh directory under the system temp path, removed by the destructor.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::string& path() const { return path_; }
  std::string operator/(const std::string& child) const { return path_ + "/" + child; }

 private:
  std::string path_;
};

Image random_image(Rng& rng, int height, int width);

}  // namespace v2e::check
