#include "ptdet/nn.hpp"

#include <cmath>

namespace ptdet {

Tensor& ParamStore::add(const std::string& name, Tensor t) {
  require(!index_.count(name), "param store: duplicate name " + name);
  t.ensure_grad();
  index_[name] = params_.size();
  params_.emplace_back(name, std::move(t));
  return params_.back().second;
}

Tensor& ParamStore::add_state(const std::string& name, Tensor t) {
  require(!index_.count(name), "param store: duplicate name " + name);
  index_[name] = params_.size() + 1000000;  // sentinel range for state
  state_.emplace_back(name, std::move(t));
  return state_.back().second;
}

Tensor* ParamStore::find(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) return nullptr;
  if (it->second >= 1000000) {
    for (auto& [n, t] : state_)
      if (n == name) return &t;
    return nullptr;
  }
  return &params_[it->second].second;
}

int64_t ParamStore::total_params() const {
  int64_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

Linear::Linear(ParamStore& store, const std::string& name, int in, int out, Rng& rng,
               bool bias) {
  Tensor weights = Tensor::zeros({in, out});
  double k = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : *weights.data) v = rng.uniform(-k, k);
  w = store.add(name + ".w", std::move(weights));
  if (bias) b = store.add(name + ".b", Tensor::zeros({out}));
}

Mlp::Mlp(ParamStore& store, const std::string& name, const std::vector<int>& dims, Rng& rng) {
  require(dims.size() >= 2, "mlp: need at least input and output dims");
  for (size_t i = 0; i + 1 < dims.size(); ++i)
    layers.emplace_back(store, name + ".l" + std::to_string(i), dims[i], dims[i + 1], rng);
}

Tensor Mlp::forward(Tensor x) const {
  for (size_t i = 0; i < layers.size(); ++i) {
    x = layers[i].forward(x);
    if (i + 1 < layers.size()) x = relu(x);
  }
  return x;
}

LayerNorm::LayerNorm(ParamStore& store, const std::string& name, int dim) {
  gamma = store.add(name + ".gamma", Tensor::full({dim}, 1.0));
  beta = store.add(name + ".beta", Tensor::zeros({dim}));
}

MultiHeadAttention::MultiHeadAttention(ParamStore& store, const std::string& name, int d_model,
                                       int n_heads, Rng& rng)
    : n_heads(n_heads),
      wq(store, name + ".q", d_model, d_model, rng),
      wk(store, name + ".k", d_model, d_model, rng),
      wv(store, name + ".v", d_model, d_model, rng),
      wo(store, name + ".o", d_model, d_model, rng) {
  require(d_model % n_heads == 0, "attention: d_model " + std::to_string(d_model) +
                                      " not divisible by " + std::to_string(n_heads) + " heads");
}

Tensor MultiHeadAttention::forward(const Tensor& q_in, const Tensor& k_in,
                                   const Tensor& v_in) const {
  require(q_in.ndim() == 3 && k_in.ndim() == 3 && v_in.ndim() == 3,
          "attention: inputs must be [G, L, d]");
  int g = q_in.shape[0], lq = q_in.shape[1], d = q_in.shape[2];
  int lk = k_in.shape[1];
  require(k_in.shape[0] == g && v_in.shape[0] == g && v_in.shape[1] == lk,
          "attention: group/length mismatch");
  int dh = d / n_heads;

  auto split_heads = [&](const Tensor& x, int len) {
    // [G, L, d] -> [G*heads, L, dh]
    Tensor t = reshape(x, {g, len, n_heads, dh});
    t = permute(t, {0, 2, 1, 3});
    return reshape(t, {g * n_heads, len, dh});
  };

  Tensor q = split_heads(wq.forward(q_in), lq);
  Tensor k = split_heads(wk.forward(k_in), lk);
  Tensor v = split_heads(wv.forward(v_in), lk);

  Tensor scores = scale(bmm(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor attn = softmax(scores);
  Tensor ctx = bmm(attn, v);  // [G*heads, Lq, dh]
  ctx = reshape(ctx, {g, n_heads, lq, dh});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, {g, lq, d});
  return wo.forward(ctx);
}

BatchNorm1d::BatchNorm1d(ParamStore& store, const std::string& name, int channels) {
  gamma = store.add(name + ".gamma", Tensor::full({channels}, 1.0));
  beta = store.add(name + ".beta", Tensor::zeros({channels}));
  running_mean = store.add_state(name + ".running_mean", Tensor::zeros({channels}));
  running_var = store.add_state(name + ".running_var", Tensor::full({channels}, 1.0));
}

Tensor BatchNorm1d::forward(const Tensor& x, bool training) {
  require(x.ndim() == 2, "batch_norm_1d: input must be [rows, channels]");
  int rows = x.shape[0], c = x.shape[1];
  require(c == gamma.shape[0], "batch_norm_1d: channel mismatch");
  bool track = grad_enabled() && (x.tracked() || gamma.tracked() || beta.tracked());
  Tensor out = Tensor::zeros({rows, c});
  if (track) out.ensure_grad();

  std::vector<double> mean(c), inv_std(c);
  if (training) {
    require(rows >= 1, "batch_norm_1d: empty batch in training mode");
    for (int j = 0; j < c; ++j) {
      double m = 0.0;
      for (int r = 0; r < rows; ++r) m += x.ptr()[static_cast<int64_t>(r) * c + j];
      m /= rows;
      double v = 0.0;
      for (int r = 0; r < rows; ++r) {
        double d = x.ptr()[static_cast<int64_t>(r) * c + j] - m;
        v += d * d;
      }
      v /= rows;
      mean[j] = m;
      inv_std[j] = 1.0 / std::sqrt(v + eps);
      running_mean.ptr()[j] = (1.0 - momentum) * running_mean.ptr()[j] + momentum * m;
      running_var.ptr()[j] = (1.0 - momentum) * running_var.ptr()[j] + momentum * v;
    }
  } else {
    for (int j = 0; j < c; ++j) {
      mean[j] = running_mean.ptr()[j];
      inv_std[j] = 1.0 / std::sqrt(running_var.ptr()[j] + eps);
    }
  }
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < c; ++j) {
      int64_t i = static_cast<int64_t>(r) * c + j;
      out.ptr()[i] = (x.ptr()[i] - mean[j]) * inv_std[j] * gamma.ptr()[j] + beta.ptr()[j];
    }

  if (track) {
    Tensor gm = gamma, bt = beta, xin = x;
    Tensor o = out;
    bool train_stats = training;
    auto mn = std::make_shared<std::vector<double>>(mean);
    auto is = std::make_shared<std::vector<double>>(inv_std);
    out.node = Tape::current()->push({x.node, gamma.node, beta.node},
                                     [xin, gm, bt, o, mn, is, rows, c, train_stats] {
      const double* g = o.gptr();
      for (int j = 0; j < c; ++j) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0, sum_g = 0.0, sum_g_xhat = 0.0;
        for (int r = 0; r < rows; ++r) {
          int64_t i = static_cast<int64_t>(r) * c + j;
          double xhat = (xin.ptr()[i] - (*mn)[j]) * (*is)[j];
          double gr = g[i];
          sum_g += gr;
          sum_g_xhat += gr * xhat;
          double dxh = gr * gm.ptr()[j];
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * xhat;
        }
        if (gm.tracked()) gm.grad->data()[j] += sum_g_xhat;
        if (bt.tracked()) bt.grad->data()[j] += sum_g;
        if (xin.tracked()) {
          double* gx = xin.grad->data();
          if (train_stats) {
            double m1 = sum_dxhat / rows, m2 = sum_dxhat_xhat / rows;
            for (int r = 0; r < rows; ++r) {
              int64_t i = static_cast<int64_t>(r) * c + j;
              double xhat = (xin.ptr()[i] - (*mn)[j]) * (*is)[j];
              gx[i] += (*is)[j] * (g[i] * gm.ptr()[j] - m1 - xhat * m2);
            }
          } else {
            for (int r = 0; r < rows; ++r) {
              int64_t i = static_cast<int64_t>(r) * c + j;
              gx[i] += (*is)[j] * g[i] * gm.ptr()[j];
            }
          }
        }
      }
    });
  }
  return out;
}

Conv2dLayer::Conv2dLayer(ParamStore& store, const std::string& name, int kh, int kw, int cin,
                         int cout, int stride, int pad, Rng& rng)
    : stride(stride), pad(pad) {
  Tensor k = Tensor::zeros({kh, kw, cin, cout});
  double bound = 1.0 / std::sqrt(static_cast<double>(kh * kw * cin));
  for (double& v : *k.data) v = rng.uniform(-bound, bound);
  kernel = store.add(name + ".kernel", std::move(k));
  bias = store.add(name + ".bias", Tensor::zeros({cout}));
}

}  // namespace ptdet
