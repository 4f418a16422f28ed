#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ptdet/ops.hpp"
#include "ptdet/rng.hpp"
#include "ptdet/tensor.hpp"

namespace ptdet {

/// Named parameter registry. Registration order is the deterministic order
/// used by the optimizer and the checkpoint writer. `state` entries (e.g.
/// batch-norm running stats) are checkpointed but not optimized.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& add_state(const std::string& name, Tensor t);

  std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
  std::vector<std::pair<std::string, Tensor>>& state() { return state_; }
  const std::vector<std::pair<std::string, Tensor>>& state() const { return state_; }

  Tensor* find(const std::string& name);
  int64_t total_params() const;
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> params_;
  std::vector<std::pair<std::string, Tensor>> state_;
  std::unordered_map<std::string, size_t> index_;
};

struct Linear {
  Tensor w, b;
  Linear() = default;
  Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
         bool bias = true);
  Tensor forward(const Tensor& x) const { return linear(x, w, b); }
};

/// MLP with ReLU between layers (none after the last).
struct Mlp {
  std::vector<Linear> layers;
  Mlp() = default;
  Mlp(ParamStore& store, const std::string& name, const std::vector<int>& dims, Rng& rng);
  Tensor forward(Tensor x) const;
};

struct LayerNorm {
  Tensor gamma, beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& store, const std::string& name, int dim);
  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

/// Standard scaled dot-product attention over groups: inputs are
/// [G, L, d_model]; attention runs over L independently per group.
struct MultiHeadAttention {
  int n_heads = 0;
  Linear wq, wk, wv, wo;
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore& store, const std::string& name, int d_model, int n_heads,
                     Rng& rng);
  Tensor forward(const Tensor& q, const Tensor& k, const Tensor& v) const;
};

/// 1-D batch norm over rows: input [R, C], statistics per channel across the
/// R rows. Running stats start at mean 0 / var 1, momentum 0.1.
struct BatchNorm1d {
  Tensor gamma, beta;
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;
  BatchNorm1d() = default;
  BatchNorm1d(ParamStore& store, const std::string& name, int channels);
  Tensor forward(const Tensor& x, bool training);
};

struct Conv2dLayer {
  Tensor kernel, bias;
  int stride = 1, pad = 0;
  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& store, const std::string& name, int kh, int kw, int cin, int cout,
              int stride, int pad, Rng& rng);
  Tensor forward(const Tensor& x) const { return conv2d(x, kernel, bias, stride, pad); }
};

}  // namespace ptdet
