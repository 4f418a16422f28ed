#include "ptdet/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ptdet {

thread_local Tape* Tape::current_ = nullptr;

int64_t shape_numel(const std::vector<int>& shape) {
  int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw DimensionError(msg);
}

Tensor Tensor::zeros(std::vector<int> shape) {
  Tensor t;
  int64_t n = shape_numel(shape);
  require(n >= 0, "tensor: negative dimension in " + shape_str(shape));
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(static_cast<size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  for (double& v : *t.data) v = value;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> values) {
  require(shape_numel(shape) == static_cast<int64_t>(values.size()),
          "tensor: data length " + std::to_string(values.size()) +
              " does not match shape " + shape_str(shape));
  Tensor t;
  t.shape = std::move(shape);
  t.data = std::make_shared<std::vector<double>>(std::move(values));
  return t;
}

Tensor Tensor::scalar(double value) { return from({1}, {value}); }

int Tensor::dim(int i) const {
  int n = ndim();
  if (i < 0) i += n;
  require(i >= 0 && i < n, "tensor: axis out of range");
  return shape[static_cast<size_t>(i)];
}

double Tensor::value() const {
  require(numel() == 1, "tensor: value() needs a scalar, got " + shape_str(shape));
  return (*data)[0];
}

static size_t flat_index(const std::vector<int>& shape, const std::vector<int>& idx) {
  require(idx.size() == shape.size(), "tensor: index rank mismatch");
  size_t off = 0;
  for (size_t i = 0; i < shape.size(); ++i) {
    require(idx[i] >= 0 && idx[i] < shape[i], "tensor: index out of bounds");
    off = off * static_cast<size_t>(shape[i]) + static_cast<size_t>(idx[i]);
  }
  return off;
}

double Tensor::at(const std::vector<int>& idx) const { return (*data)[flat_index(shape, idx)]; }

void Tensor::set(const std::vector<int>& idx, double v) { (*data)[flat_index(shape, idx)] = v; }

void Tensor::ensure_grad() {
  if (!grad) grad = std::make_shared<std::vector<double>>(data->size(), 0.0);
}

void Tensor::zero_grad() {
  if (grad) std::fill(grad->begin(), grad->end(), 0.0);
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape = shape;
  t.data = data;
  return t;
}

long Tape::push(std::vector<long> parents, std::function<void()> backward) {
  records_.push_back(Record{std::move(parents), std::move(backward)});
  return static_cast<long>(records_.size()) - 1;
}

void Tape::backward(Tensor& loss) { backward(loss, 1.0); }

void Tape::backward(Tensor& loss, double seed) {
  require(loss.numel() == 1, "backward: loss must be scalar");
  require(loss.tracked(), "backward: loss is not tracked on any tape");
  (*loss.grad)[0] += seed;
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) {
    if (it->backward) it->backward();
  }
}

Tape* Tape::current() { return current_; }

TapeScope::TapeScope(Tape& tape) : prev_(Tape::current_) { Tape::current_ = &tape; }

TapeScope::~TapeScope() { Tape::current_ = prev_; }

}  // namespace ptdet
