#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ptdet/rng.hpp"
#include "ptdet/tensor.hpp"

namespace ptdet {

/// Central finite-difference check of every tracked input of `forward`
/// against the tape's analytic gradients. The forward's output is reduced to
/// a scalar through a fixed random projection so all output elements carry
/// signal. Per input, at most `max_elems` elements are probed (all when <=0).
/// Returns the max elementwise relative error.
double check_gradients(Rng& rng, const std::function<Tensor()>& forward,
                       const std::vector<Tensor>& inputs, double h = 1e-5,
                       int max_elems = 48);

struct GradCheckResult {
  std::string op;
  double max_rel_err = 0.0;
  bool pass = false;
};

using GradCheckFn = std::function<double(uint64_t seed)>;

/// Named registry of differentiable-op checks; the CLI and the test suites
/// run it. Extensible so fault-injection fixtures can be added in tests.
class GradCheckRegistry {
 public:
  static GradCheckRegistry& instance();

  void add(const std::string& name, GradCheckFn fn);
  bool has(const std::string& name) const;
  std::vector<std::string> names() const;

  GradCheckResult run(const std::string& name, uint64_t base_seed, double tolerance,
                      int n_seeds) const;
  std::vector<GradCheckResult> run_many(const std::vector<std::string>& which,
                                        uint64_t base_seed, double tolerance, int n_seeds) const;

 private:
  std::vector<std::pair<std::string, GradCheckFn>> checks_;
};

/// Registers the built-in op checks (idempotent). The "full_model" entry is
/// the frozen tiny detector configuration and runs at tolerance 1e-3.
void register_builtin_gradchecks();

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kModelGradTolerance = 1e-3;

}  // namespace ptdet
