#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ffield/tape.hpp"

namespace ffield::testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("ffield_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& leaf) const { return (path_ / leaf).string(); }

 private:
  std::filesystem::path path_;
};

inline Tensor<double> RandomTensor(Shape shape, std::mt19937_64& rng, double lo = -2.0,
                                   double hi = 2.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.storage()) v = u(rng);
  return t;
}

struct GradCheck {
  double max_rel_error = 0.0;
  double max_abs_grad = 0.0;
  std::size_t checked = 0;
};

// |a - n| / max(|a|, |n|, floor)
inline double RelError(double a, double n, double floor = 1e-3) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

// Compares backward() against central differences for every entry of every
// parameter (or a random subset of `limit` entries per parameter).
// `build` records a scalar loss on a fresh tape from the parameters.
inline GradCheck CheckGradients(
    const std::vector<Parameter<double>*>& params,
    const std::function<Var(Tape<double>&, const std::vector<Var>&)>& build,
    double step = 1e-5, std::size_t limit = 0, std::uint64_t seed = 1) {
  auto evaluate = [&](bool with_grad) {
    Tape<double> tape(with_grad);
    std::vector<Var> vars;
    for (Parameter<double>* p : params) vars.push_back(tape.parameter(*p));
    const Var loss = build(tape, vars);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)[0];
  };
  for (Parameter<double>* p : params) p->zero_grad();
  evaluate(true);
  std::vector<Tensor<double>> analytic;
  for (Parameter<double>* p : params) analytic.push_back(p->grad);

  GradCheck out;
  std::mt19937_64 rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<double>& p = *params[k];
    std::vector<std::size_t> entries(p.value.size());
    for (std::size_t i = 0; i < entries.size(); ++i) entries[i] = i;
    if (limit > 0 && entries.size() > limit) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(limit);
    }
    for (const std::size_t i : entries) {
      const double saved = p.value[i];
      p.value[i] = saved + step;
      const double up = evaluate(false);
      p.value[i] = saved - step;
      const double down = evaluate(false);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      out.max_rel_error = std::max(out.max_rel_error, RelError(analytic[k][i], numeric));
      out.max_abs_grad = std::max(out.max_abs_grad, std::abs(analytic[k][i]));
      ++out.checked;
    }
  }
  return out;
}

}  // namespace ffield::testing
