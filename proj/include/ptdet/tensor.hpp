#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ptdet {

using Buffer = std::shared_ptr<std::vector<double>>;

int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

/// Dense row-major tensor of 64-bit floats. `data` is shared, so copies are
/// cheap handles onto the same storage. A tensor participates in gradient
/// flow iff `grad` is allocated; `node` is the id of the tape record that
/// produced it (-1 for leaves and constants).
struct Tensor {
  std::vector<int> shape;
  Buffer data;
  Buffer grad;
  long node = -1;

  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return data != nullptr; }
  int64_t numel() const { return data ? static_cast<int64_t>(data->size()) : 0; }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const;

  double* ptr() { return data->data(); }
  const double* ptr() const { return data->data(); }
  double* gptr() { return grad->data(); }
  const double* gptr() const { return grad->data(); }

  double value() const;  // scalar tensors only
  double at(const std::vector<int>& idx) const;
  void set(const std::vector<int>& idx, double v);

  bool tracked() const { return grad != nullptr; }
  void ensure_grad();
  void zero_grad();
  Tensor detached() const;
};

/// Ordered record of primitive operations. backward() replays the backward
/// closures in reverse record order; since records are appended in execution
/// order this is a valid reverse-topological sweep, and the fixed order makes
/// replay deterministic.
class Tape {
 public:
  struct Record {
    std::vector<long> parents;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  long push(std::vector<long> parents, std::function<void()> backward);
  void backward(Tensor& loss);
  void backward(Tensor& loss, double seed);
  size_t size() const { return records_.size(); }
  void clear() { records_.clear(); }

  static Tape* current();

 private:
  std::vector<Record> records_;
  friend class TapeScope;
  static thread_local Tape* current_;
};

/// RAII binding of the thread's active tape. Ops record onto the active tape;
/// with none bound they run forward-only (inference mode, reentrant).
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

inline bool grad_enabled() { return Tape::current() != nullptr; }

/// Shape mismatch and configuration problems surface as this.
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

/// NaN/Inf where finite values are required (gradients, costs, losses).
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

void require(bool cond, const std::string& msg);

}  // namespace ptdet
