#include "ptdet/ops.hpp"

#include <Eigen/Core>
#include <cmath>
#include <utility>

namespace ptdet {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

namespace {

bool any_tracked(std::initializer_list<const Tensor*> ins) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ins)
    if (t->defined() && t->tracked()) return true;
  return false;
}

Tensor make_out(std::vector<int> shape, bool track) {
  Tensor out = Tensor::zeros(std::move(shape));
  if (track) out.ensure_grad();
  return out;
}

void record(Tensor& out, std::vector<long> parents, std::function<void()> bw) {
  out.node = Tape::current()->push(std::move(parents), std::move(bw));
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch " +
                                  shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  bool track = any_tracked({&a, &b});
  Tensor out = make_out(a.shape, track);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  if (track) {
    record(out, {a.node, b.node}, [a, b, out] {
      const double* g = out.gptr();
      int64_t m = out.numel();
      if (a.tracked()) {
        double* ga = a.grad->data();
        for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (b.tracked()) {
        double* gb = b.grad->data();
        for (int64_t i = 0; i < m; ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  bool track = any_tracked({&a, &b});
  Tensor out = make_out(a.shape, track);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  if (track) {
    record(out, {a.node, b.node}, [a, b, out] {
      const double* g = out.gptr();
      int64_t m = out.numel();
      if (a.tracked()) {
        double* ga = a.grad->data();
        for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
      }
      if (b.tracked()) {
        double* gb = b.grad->data();
        for (int64_t i = 0; i < m; ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  bool track = any_tracked({&a, &b});
  Tensor out = make_out(a.shape, track);
  const double* pa = a.ptr();
  const double* pb = b.ptr();
  double* po = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  if (track) {
    record(out, {a.node, b.node}, [a, b, out] {
      const double* g = out.gptr();
      int64_t m = out.numel();
      if (a.tracked()) {
        double* ga = a.grad->data();
        const double* pb2 = b.ptr();
        for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * pb2[i];
      }
      if (b.tracked()) {
        double* gb = b.grad->data();
        const double* pa2 = a.ptr();
        for (int64_t i = 0; i < m; ++i) gb[i] += g[i] * pa2[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double s) {
  bool track = any_tracked({&a});
  Tensor out = make_out(a.shape, track);
  const double* pa = a.ptr();
  double* po = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] * s;
  if (track) {
    record(out, {a.node}, [a, out, s] {
      const double* g = out.gptr();
      double* ga = a.grad->data();
      int64_t m = out.numel();
      for (int64_t i = 0; i < m; ++i) ga[i] += g[i] * s;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double s) {
  bool track = any_tracked({&a});
  Tensor out = make_out(a.shape, track);
  const double* pa = a.ptr();
  double* po = out.ptr();
  int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + s;
  if (track) {
    record(out, {a.node}, [a, out] {
      const double* g = out.gptr();
      double* ga = a.grad->data();
      int64_t m = out.numel();
      for (int64_t i = 0; i < m; ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.ndim() == 2 && b.ndim() == 2, "matmul: expects 2-D operands");
  require(a.shape[1] == b.shape[0], "matmul: inner dimensions differ: " +
                                        shape_str(a.shape) + " x " + shape_str(b.shape));
  int m = a.shape[0], k = a.shape[1], n = b.shape[1];
  bool track = any_tracked({&a, &b});
  Tensor out = make_out({m, n}, track);
  MatMap(out.ptr(), m, n).noalias() = CMatMap(a.ptr(), m, k) * CMatMap(b.ptr(), k, n);
  if (track) {
    record(out, {a.node, b.node}, [a, b, out, m, k, n] {
      CMatMap g(out.gptr(), m, n);
      if (a.tracked())
        MatMap(a.grad->data(), m, k).noalias() += g * CMatMap(b.ptr(), k, n).transpose();
      if (b.tracked())
        MatMap(b.grad->data(), k, n).noalias() += CMatMap(a.ptr(), m, k).transpose() * g;
    });
  }
  return out;
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
  require(a.ndim() == 3 && b.ndim() == 3, "bmm: expects 3-D operands");
  int bs = a.shape[0], m = a.shape[1], k = a.shape[2];
  require(b.shape[0] == bs, "bmm: batch dims differ");
  int n = transpose_b ? b.shape[1] : b.shape[2];
  int bk = transpose_b ? b.shape[2] : b.shape[1];
  require(bk == k, "bmm: inner dimensions differ");
  bool track = any_tracked({&a, &b});
  Tensor out = make_out({bs, m, n}, track);
  for (int i = 0; i < bs; ++i) {
    CMatMap ma(a.ptr() + static_cast<int64_t>(i) * m * k, m, k);
    MatMap mo(out.ptr() + static_cast<int64_t>(i) * m * n, m, n);
    if (transpose_b) {
      CMatMap mb(b.ptr() + static_cast<int64_t>(i) * n * k, n, k);
      mo.noalias() = ma * mb.transpose();
    } else {
      CMatMap mb(b.ptr() + static_cast<int64_t>(i) * k * n, k, n);
      mo.noalias() = ma * mb;
    }
  }
  if (track) {
    record(out, {a.node, b.node}, [a, b, out, bs, m, k, n, transpose_b] {
      for (int i = 0; i < bs; ++i) {
        CMatMap g(out.gptr() + static_cast<int64_t>(i) * m * n, m, n);
        CMatMap ma(a.ptr() + static_cast<int64_t>(i) * m * k, m, k);
        if (transpose_b) {
          CMatMap mb(b.ptr() + static_cast<int64_t>(i) * n * k, n, k);
          if (a.tracked())
            MatMap(a.grad->data() + static_cast<int64_t>(i) * m * k, m, k).noalias() += g * mb;
          if (b.tracked())
            MatMap(b.grad->data() + static_cast<int64_t>(i) * n * k, n, k).noalias() +=
                g.transpose() * ma;
        } else {
          CMatMap mb(b.ptr() + static_cast<int64_t>(i) * k * n, k, n);
          if (a.tracked())
            MatMap(a.grad->data() + static_cast<int64_t>(i) * m * k, m, k).noalias() +=
                g * mb.transpose();
          if (b.tracked())
            MatMap(b.grad->data() + static_cast<int64_t>(i) * k * n, k, n).noalias() +=
                ma.transpose() * g;
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(w.ndim() == 2, "linear: weight must be 2-D");
  int in = w.shape[0], outd = w.shape[1];
  require(x.ndim() >= 1 && x.shape.back() == in,
          "linear: input last dim " + shape_str(x.shape) + " does not match weight " +
              shape_str(w.shape));
  require(!b.defined() || (b.ndim() == 1 && b.shape[0] == outd), "linear: bad bias shape");
  int64_t rows = x.numel() / in;
  bool track = any_tracked({&x, &w, &b});
  std::vector<int> out_shape = x.shape;
  out_shape.back() = outd;
  Tensor out = make_out(out_shape, track);
  MatMap yo(out.ptr(), rows, outd);
  yo.noalias() = CMatMap(x.ptr(), rows, in) * CMatMap(w.ptr(), in, outd);
  if (b.defined()) {
    const double* pb = b.ptr();
    for (int64_t r = 0; r < rows; ++r) {
      double* row = out.ptr() + r * outd;
      for (int c = 0; c < outd; ++c) row[c] += pb[c];
    }
  }
  if (track) {
    record(out, {x.node, w.node, b.node}, [x, w, b, out, rows, in, outd] {
      CMatMap g(out.gptr(), rows, outd);
      if (x.tracked())
        MatMap(x.grad->data(), rows, in).noalias() += g * CMatMap(w.ptr(), in, outd).transpose();
      if (w.tracked())
        MatMap(w.grad->data(), in, outd).noalias() += CMatMap(x.ptr(), rows, in).transpose() * g;
      if (b.defined() && b.tracked()) {
        double* gb = b.grad->data();
        const double* pg = out.gptr();
        for (int64_t r = 0; r < rows; ++r)
          for (int c = 0; c < outd; ++c) gb[c] += pg[r * outd + c];
      }
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  bool track = any_tracked({&x});
  Tensor out = make_out(x.shape, track);
  const double* px = x.ptr();
  double* po = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0 ? px[i] : 0.0;
  if (track) {
    record(out, {x.node}, [x, out] {
      const double* g = out.gptr();
      const double* px2 = x.ptr();
      double* gx = x.grad->data();
      int64_t m = out.numel();
      for (int64_t i = 0; i < m; ++i)
        if (px2[i] > 0.0) gx[i] += g[i];
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  bool track = any_tracked({&x});
  Tensor out = make_out(x.shape, track);
  const double* px = x.ptr();
  double* po = out.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) {
    double v = px[i];
    po[i] = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  if (track) {
    record(out, {x.node}, [x, out] {
      const double* g = out.gptr();
      const double* po2 = out.ptr();
      double* gx = x.grad->data();
      int64_t m = out.numel();
      for (int64_t i = 0; i < m; ++i) gx[i] += g[i] * po2[i] * (1.0 - po2[i]);
    });
  }
  return out;
}

Tensor inverse_sigmoid(const Tensor& x) {
  bool track = any_tracked({&x});
  Tensor out = make_out(x.shape, track);
  const double* px = x.ptr();
  double* po = out.ptr();
  int64_t n = x.numel();
  const double eps = kInverseSigmoidEps;
  for (int64_t i = 0; i < n; ++i) {
    double p = std::min(std::max(px[i], eps), 1.0 - eps);
    po[i] = std::log(p) - std::log1p(-p);
  }
  if (track) {
    record(out, {x.node}, [x, out] {
      const double* g = out.gptr();
      const double* px2 = x.ptr();
      double* gx = x.grad->data();
      int64_t m = out.numel();
      const double e = kInverseSigmoidEps;
      for (int64_t i = 0; i < m; ++i) {
        double p = px2[i];
        if (p > e && p < 1.0 - e) gx[i] += g[i] / (p * (1.0 - p));
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x) {
  require(x.ndim() >= 1, "softmax: needs at least 1-D input");
  int d = x.shape.back();
  int64_t rows = x.numel() / d;
  bool track = any_tracked({&x});
  Tensor out = make_out(x.shape, track);
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = x.ptr() + r * d;
    double* po = out.ptr() + r * d;
    double mx = px[0];
    for (int i = 1; i < d; ++i) mx = std::max(mx, px[i]);
    double sum = 0.0;
    for (int i = 0; i < d; ++i) {
      po[i] = std::exp(px[i] - mx);
      sum += po[i];
    }
    double inv = 1.0 / sum;
    for (int i = 0; i < d; ++i) po[i] *= inv;
  }
  if (track) {
    record(out, {x.node}, [x, out, rows, d] {
      const double* g = out.gptr();
      const double* po2 = out.ptr();
      double* gx = x.grad->data();
      for (int64_t r = 0; r < rows; ++r) {
        const double* gr = g + r * d;
        const double* yr = po2 + r * d;
        double* gxr = gx + r * d;
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += gr[i] * yr[i];
        for (int i = 0; i < d; ++i) gxr[i] += yr[i] * (gr[i] - dot);
      }
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  require(x.ndim() >= 1, "layer_norm: needs at least 1-D input");
  int d = x.shape.back();
  require(gamma.ndim() == 1 && gamma.shape[0] == d && beta.ndim() == 1 && beta.shape[0] == d,
          "layer_norm: affine params must be [last_dim]");
  int64_t rows = x.numel() / d;
  const double eps = 1e-12;
  bool track = any_tracked({&x, &gamma, &beta});
  Tensor out = make_out(x.shape, track);
  auto stats = std::make_shared<std::vector<double>>(rows * 2);  // mean, inv_std per row
  for (int64_t r = 0; r < rows; ++r) {
    const double* px = x.ptr() + r * d;
    double mean = 0.0;
    for (int i = 0; i < d; ++i) mean += px[i];
    mean /= d;
    double var = 0.0;
    for (int i = 0; i < d; ++i) {
      double c = px[i] - mean;
      var += c * c;
    }
    var /= d;
    double inv_std = 1.0 / std::sqrt(var + eps);
    (*stats)[r * 2] = mean;
    (*stats)[r * 2 + 1] = inv_std;
    double* po = out.ptr() + r * d;
    const double* pg = gamma.ptr();
    const double* pb = beta.ptr();
    for (int i = 0; i < d; ++i) po[i] = (px[i] - mean) * inv_std * pg[i] + pb[i];
  }
  if (track) {
    record(out, {x.node, gamma.node, beta.node}, [x, gamma, beta, out, stats, rows, d] {
      const double* g = out.gptr();
      for (int64_t r = 0; r < rows; ++r) {
        const double* px = x.ptr() + r * d;
        const double* gr = g + r * d;
        double mean = (*stats)[r * 2];
        double inv_std = (*stats)[r * 2 + 1];
        const double* pg = gamma.ptr();
        if (gamma.tracked() || beta.tracked()) {
          double* gg = gamma.tracked() ? gamma.grad->data() : nullptr;
          double* gb = beta.tracked() ? beta.grad->data() : nullptr;
          for (int i = 0; i < d; ++i) {
            double xhat = (px[i] - mean) * inv_std;
            if (gg) gg[i] += gr[i] * xhat;
            if (gb) gb[i] += gr[i];
          }
        }
        if (x.tracked()) {
          // dxhat = g * gamma; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int i = 0; i < d; ++i) {
            double xhat = (px[i] - mean) * inv_std;
            double dxh = gr[i] * pg[i];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xhat;
          }
          double m1 = sum_dxhat / d, m2 = sum_dxhat_xhat / d;
          double* gx = x.grad->data() + r * d;
          for (int i = 0; i < d; ++i) {
            double xhat = (px[i] - mean) * inv_std;
            gx[i] += inv_std * (gr[i] * pg[i] - m1 - xhat * m2);
          }
        }
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, std::vector<int> shape) {
  require(shape_numel(shape) == x.numel(),
          "reshape: element count mismatch " + shape_str(x.shape) + " -> " + shape_str(shape));
  Tensor out = x;  // shares data, grad and node: a pure view
  out.shape = std::move(shape);
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  int nd = x.ndim();
  require(static_cast<int>(perm.size()) == nd, "permute: rank mismatch");
  std::vector<int> out_shape(nd);
  for (int i = 0; i < nd; ++i) out_shape[i] = x.shape[perm[i]];
  // in-strides of the source, walked in output order
  std::vector<int64_t> in_strides(nd, 1);
  for (int i = nd - 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * x.shape[i + 1];
  std::vector<int64_t> walk(nd);
  for (int i = 0; i < nd; ++i) walk[i] = in_strides[perm[i]];
  bool track = any_tracked({&x});
  Tensor out = make_out(out_shape, track);
  int64_t n = x.numel();
  const double* px = x.ptr();
  double* po = out.ptr();
  std::vector<int> idx(nd, 0);
  int64_t src = 0;
  for (int64_t i = 0; i < n; ++i) {
    po[i] = px[src];
    for (int ax = nd - 1; ax >= 0; --ax) {
      idx[ax]++;
      src += walk[ax];
      if (idx[ax] < out_shape[ax]) break;
      idx[ax] = 0;
      src -= walk[ax] * out_shape[ax];
    }
  }
  if (track) {
    record(out, {x.node}, [x, out, out_shape, walk, nd] {
      const double* g = out.gptr();
      double* gx = x.grad->data();
      int64_t n2 = out.numel();
      std::vector<int> idx2(nd, 0);
      int64_t src2 = 0;
      for (int64_t i = 0; i < n2; ++i) {
        gx[src2] += g[i];
        for (int ax = nd - 1; ax >= 0; --ax) {
          idx2[ax]++;
          src2 += walk[ax];
          if (idx2[ax] < out_shape[ax]) break;
          idx2[ax] = 0;
          src2 -= walk[ax] * out_shape[ax];
        }
      }
    });
  }
  return out;
}

Tensor tile0(const Tensor& x, int times) {
  require(times >= 1, "tile0: times must be >= 1");
  bool track = any_tracked({&x});
  std::vector<int> out_shape;
  out_shape.push_back(times);
  for (int d : x.shape) out_shape.push_back(d);
  Tensor out = make_out(out_shape, track);
  int64_t n = x.numel();
  for (int t = 0; t < times; ++t)
    std::copy(x.ptr(), x.ptr() + n, out.ptr() + static_cast<int64_t>(t) * n);
  if (track) {
    record(out, {x.node}, [x, out, times, n] {
      double* gx = x.grad->data();
      const double* g = out.gptr();
      for (int t = 0; t < times; ++t) {
        const double* gt = g + static_cast<int64_t>(t) * n;
        for (int64_t i = 0; i < n; ++i) gx[i] += gt[i];
      }
    });
  }
  return out;
}

Tensor repeat_axis1(const Tensor& x, int times) {
  require(x.ndim() >= 1 && times >= 1, "repeat_axis1: bad arguments");
  int a = x.shape[0];
  int64_t block = x.numel() / a;
  std::vector<int> out_shape;
  out_shape.push_back(a);
  out_shape.push_back(times);
  for (size_t i = 1; i < x.shape.size(); ++i) out_shape.push_back(x.shape[i]);
  bool track = any_tracked({&x});
  Tensor out = make_out(out_shape, track);
  for (int i = 0; i < a; ++i) {
    const double* src = x.ptr() + static_cast<int64_t>(i) * block;
    for (int t = 0; t < times; ++t)
      std::copy(src, src + block, out.ptr() + (static_cast<int64_t>(i) * times + t) * block);
  }
  if (track) {
    record(out, {x.node}, [x, out, a, times, block] {
      double* gx = x.grad->data();
      const double* g = out.gptr();
      for (int i = 0; i < a; ++i)
        for (int t = 0; t < times; ++t) {
          const double* gt = g + (static_cast<int64_t>(i) * times + t) * block;
          double* gxi = gx + static_cast<int64_t>(i) * block;
          for (int64_t k = 0; k < block; ++k) gxi[k] += gt[k];
        }
    });
  }
  return out;
}

Tensor repeat_rows_grouped(const Tensor& x, int times) {
  require(x.ndim() >= 2 && times >= 1, "repeat_rows_grouped: bad arguments");
  int r = x.shape[0];
  int64_t block = x.numel() / r;
  std::vector<int> out_shape = x.shape;
  out_shape[0] = r * times;
  bool track = any_tracked({&x});
  Tensor out = make_out(out_shape, track);
  for (int i = 0; i < r; ++i) {
    const double* src = x.ptr() + static_cast<int64_t>(i) * block;
    for (int t = 0; t < times; ++t)
      std::copy(src, src + block, out.ptr() + (static_cast<int64_t>(i) * times + t) * block);
  }
  if (track) {
    record(out, {x.node}, [x, out, r, times, block] {
      double* gx = x.grad->data();
      const double* g = out.gptr();
      for (int i = 0; i < r; ++i)
        for (int t = 0; t < times; ++t) {
          const double* gt = g + (static_cast<int64_t>(i) * times + t) * block;
          double* gxi = gx + static_cast<int64_t>(i) * block;
          for (int64_t k = 0; k < block; ++k) gxi[k] += gt[k];
        }
    });
  }
  return out;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  require(a.ndim() == b.ndim() && a.ndim() >= 1, "concat_last: rank mismatch");
  for (int i = 0; i + 1 < a.ndim(); ++i)
    require(a.shape[i] == b.shape[i], "concat_last: leading dims differ");
  int da = a.shape.back(), db = b.shape.back();
  int64_t rows = a.numel() / da;
  std::vector<int> out_shape = a.shape;
  out_shape.back() = da + db;
  bool track = any_tracked({&a, &b});
  Tensor out = make_out(out_shape, track);
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(a.ptr() + r * da, a.ptr() + (r + 1) * da, out.ptr() + r * (da + db));
    std::copy(b.ptr() + r * db, b.ptr() + (r + 1) * db, out.ptr() + r * (da + db) + da);
  }
  if (track) {
    record(out, {a.node, b.node}, [a, b, out, rows, da, db] {
      const double* g = out.gptr();
      for (int64_t r = 0; r < rows; ++r) {
        if (a.tracked()) {
          double* ga = a.grad->data() + r * da;
          for (int i = 0; i < da; ++i) ga[i] += g[r * (da + db) + i];
        }
        if (b.tracked()) {
          double* gb = b.grad->data() + r * db;
          for (int i = 0; i < db; ++i) gb[i] += g[r * (da + db) + da + i];
        }
      }
    });
  }
  return out;
}

Tensor gather_rows(const Tensor& x, const std::vector<int>& rows) {
  require(x.ndim() >= 2, "gather_rows: needs at least 2-D input");
  int r = x.shape[0];
  int64_t block = x.numel() / r;
  for (int i : rows) require(i >= 0 && i < r, "gather_rows: index out of range");
  std::vector<int> out_shape = x.shape;
  out_shape[0] = static_cast<int>(rows.size());
  bool track = any_tracked({&x});
  Tensor out = make_out(out_shape, track);
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy(x.ptr() + static_cast<int64_t>(rows[i]) * block,
              x.ptr() + static_cast<int64_t>(rows[i] + 1) * block,
              out.ptr() + static_cast<int64_t>(i) * block);
  if (track) {
    record(out, {x.node}, [x, out, rows, block] {
      double* gx = x.grad->data();
      const double* g = out.gptr();
      for (size_t i = 0; i < rows.size(); ++i) {
        double* dst = gx + static_cast<int64_t>(rows[i]) * block;
        const double* src = g + static_cast<int64_t>(i) * block;
        for (int64_t k = 0; k < block; ++k) dst[k] += src[k];
      }
    });
  }
  return out;
}

Tensor colwise_scale(const Tensor& x, const std::vector<double>& factors) {
  int c = x.shape.back();
  require(static_cast<int>(factors.size()) == c, "colwise_scale: factor count mismatch");
  int64_t rows = x.numel() / c;
  bool track = any_tracked({&x});
  Tensor out = make_out(x.shape, track);
  for (int64_t r = 0; r < rows; ++r)
    for (int i = 0; i < c; ++i) out.ptr()[r * c + i] = x.ptr()[r * c + i] * factors[i];
  if (track) {
    record(out, {x.node}, [x, out, factors, rows, c] {
      double* gx = x.grad->data();
      const double* g = out.gptr();
      for (int64_t r = 0; r < rows; ++r)
        for (int i = 0; i < c; ++i) gx[r * c + i] += g[r * c + i] * factors[i];
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  bool track = any_tracked({&x});
  double s = 0.0;
  const double* px = x.ptr();
  int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) s += px[i];
  Tensor out = make_out({1}, track);
  (*out.data)[0] = s;
  if (track) {
    record(out, {x.node}, [x, out] {
      double g = (*out.grad)[0];
      double* gx = x.grad->data();
      int64_t m = x.numel();
      for (int64_t i = 0; i < m; ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor mean_axis(const Tensor& x, int axis) {
  int nd = x.ndim();
  if (axis < 0) axis += nd;
  require(axis >= 0 && axis < nd, "mean_axis: axis out of range");
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.shape[i];
  for (int i = axis + 1; i < nd; ++i) inner *= x.shape[i];
  int k = x.shape[axis];
  std::vector<int> out_shape;
  for (int i = 0; i < nd; ++i)
    if (i != axis) out_shape.push_back(x.shape[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  bool track = any_tracked({&x});
  Tensor out = make_out(out_shape, track);
  const double inv = 1.0 / k;
  for (int64_t o = 0; o < outer; ++o)
    for (int64_t i = 0; i < inner; ++i) {
      double s = 0.0;
      for (int j = 0; j < k; ++j) s += x.ptr()[(o * k + j) * inner + i];
      out.ptr()[o * inner + i] = s * inv;
    }
  if (track) {
    record(out, {x.node}, [x, out, outer, inner, k, inv] {
      double* gx = x.grad->data();
      const double* g = out.gptr();
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          double gv = g[o * inner + i] * inv;
          for (int j = 0; j < k; ++j) gx[(o * k + j) * inner + i] += gv;
        }
    });
  }
  return out;
}

Tensor detach(const Tensor& x) { return x.detached(); }

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
  check_same_shape(pred, target, "l1_loss");
  bool track = any_tracked({&pred, &target});
  int64_t n = pred.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += std::abs(pred.ptr()[i] - target.ptr()[i]);
  Tensor out = make_out({1}, track);
  (*out.data)[0] = s / n;
  if (track) {
    record(out, {pred.node, target.node}, [pred, target, out, n] {
      double g = (*out.grad)[0] / n;
      for (int64_t i = 0; i < n; ++i) {
        double d = pred.ptr()[i] - target.ptr()[i];
        double sg = d > 0.0 ? g : (d < 0.0 ? -g : 0.0);
        if (pred.tracked()) pred.grad->data()[i] += sg;
        if (target.tracked()) target.grad->data()[i] -= sg;
      }
    });
  }
  return out;
}

Tensor focal_loss_sum(const Tensor& probs, const std::vector<double>& targets,
                      double alpha, double gamma) {
  require(static_cast<int64_t>(targets.size()) == probs.numel(),
          "focal_loss: target count mismatch");
  const double eps = 1e-12;
  bool track = any_tracked({&probs});
  int64_t n = probs.numel();
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    double p = std::min(std::max(probs.ptr()[i], eps), 1.0 - eps);
    if (targets[i] > 0.5)
      s += -alpha * std::pow(1.0 - p, gamma) * std::log(p);
    else
      s += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
  }
  Tensor out = make_out({1}, track);
  (*out.data)[0] = s;
  if (track) {
    record(out, {probs.node}, [probs, out, targets, alpha, gamma, n] {
      double g = (*out.grad)[0];
      double* gp = probs.grad->data();
      const double eps2 = 1e-12;
      for (int64_t i = 0; i < n; ++i) {
        double p = std::min(std::max(probs.ptr()[i], eps2), 1.0 - eps2);
        double d;
        if (targets[i] > 0.5)
          d = -alpha * (-gamma * std::pow(1.0 - p, gamma - 1.0) * std::log(p) +
                        std::pow(1.0 - p, gamma) / p);
        else
          d = -(1.0 - alpha) * (gamma * std::pow(p, gamma - 1.0) * std::log(1.0 - p) -
                                std::pow(p, gamma) / (1.0 - p));
        gp[i] += g * d;
      }
    });
  }
  return out;
}

Tensor circular_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias) {
  require(x.ndim() == 2 || x.ndim() == 3, "circular_conv1d: input must be [N,C] or [G,N,C]");
  bool batched = x.ndim() == 3;
  int g = batched ? x.shape[0] : 1;
  int n = batched ? x.shape[1] : x.shape[0];
  int cin = batched ? x.shape[2] : x.shape[1];
  require(kernel.ndim() == 3 && kernel.shape[1] == cin,
          "circular_conv1d: kernel must be [C_out, C_in, ksize] with C_in = " +
              std::to_string(cin));
  int cout = kernel.shape[0];
  int ks = kernel.shape[2];
  require(ks % 2 == 1, "circular_conv1d: kernel size must be odd");
  require(ks <= n, "circular_conv1d: kernel size " + std::to_string(ks) +
                       " exceeds sequence length " + std::to_string(n));
  require(!bias.defined() || (bias.ndim() == 1 && bias.shape[0] == cout),
          "circular_conv1d: bad bias shape");
  int half = (ks - 1) / 2;
  bool track = any_tracked({&x, &kernel, &bias});

  // im2col with wrap-around, then one GEMM
  int64_t rows = static_cast<int64_t>(g) * n;
  int inner = cin * ks;
  auto cols = std::make_shared<std::vector<double>>(rows * inner);
  for (int b = 0; b < g; ++b)
    for (int i = 0; i < n; ++i) {
      double* dst = cols->data() + (static_cast<int64_t>(b) * n + i) * inner;
      for (int ci = 0; ci < cin; ++ci)
        for (int o = 0; o < ks; ++o) {
          int src = ((i + o - half) % n + n) % n;
          dst[ci * ks + o] = x.ptr()[(static_cast<int64_t>(b) * n + src) * cin + ci];
        }
    }
  // kernel [C_out, C_in, ks] repacked to [C_in*ks, C_out]
  std::vector<double> wmat(static_cast<size_t>(inner) * cout);
  for (int co = 0; co < cout; ++co)
    for (int ci = 0; ci < cin; ++ci)
      for (int o = 0; o < ks; ++o)
        wmat[(static_cast<size_t>(ci) * ks + o) * cout + co] =
            kernel.ptr()[(static_cast<int64_t>(co) * cin + ci) * ks + o];

  std::vector<int> out_shape = batched ? std::vector<int>{g, n, cout} : std::vector<int>{n, cout};
  Tensor out = make_out(out_shape, track);
  MatMap(out.ptr(), rows, cout).noalias() =
      CMatMap(cols->data(), rows, inner) * CMatMap(wmat.data(), inner, cout);
  if (bias.defined())
    for (int64_t r = 0; r < rows; ++r)
      for (int co = 0; co < cout; ++co) out.ptr()[r * cout + co] += bias.ptr()[co];

  if (track) {
    record(out, {x.node, kernel.node, bias.node},
           [x, kernel, bias, out, cols, g, n, cin, cout, ks, half, rows, inner] {
             CMatMap gy(out.gptr(), rows, cout);
             if (kernel.tracked()) {
               RowMat gw = CMatMap(cols->data(), rows, inner).transpose() * gy;
               double* gk = kernel.grad->data();
               for (int co = 0; co < cout; ++co)
                 for (int ci = 0; ci < cin; ++ci)
                   for (int o = 0; o < ks; ++o)
                     gk[(static_cast<int64_t>(co) * cin + ci) * ks + o] +=
                         gw(static_cast<int64_t>(ci) * ks + o, co);
             }
             if (x.tracked()) {
               std::vector<double> wmat2(static_cast<size_t>(inner) * cout);
               for (int co = 0; co < cout; ++co)
                 for (int ci = 0; ci < cin; ++ci)
                   for (int o = 0; o < ks; ++o)
                     wmat2[(static_cast<size_t>(ci) * ks + o) * cout + co] =
                         kernel.ptr()[(static_cast<int64_t>(co) * cin + ci) * ks + o];
               RowMat gcols = gy * CMatMap(wmat2.data(), inner, cout).transpose();
               double* gx = x.grad->data();
               for (int b = 0; b < g; ++b)
                 for (int i = 0; i < n; ++i)
                   for (int ci = 0; ci < cin; ++ci)
                     for (int o = 0; o < ks; ++o) {
                       int src = ((i + o - half) % n + n) % n;
                       gx[(static_cast<int64_t>(b) * n + src) * cin + ci] +=
                           gcols(static_cast<int64_t>(b) * n + i,
                                 static_cast<int64_t>(ci) * ks + o);
                     }
             }
             if (bias.defined() && bias.tracked()) {
               double* gb = bias.grad->data();
               for (int64_t r = 0; r < rows; ++r)
                 for (int co = 0; co < cout; ++co) gb[co] += out.gptr()[r * cout + co];
             }
           });
  }
  return out;
}

Tensor sine_positional_encoding(const Tensor& points, int d_model) {
  require(points.ndim() >= 1 && points.shape.back() == 2,
          "sine_positional_encoding: points must be [..., 2]");
  require(d_model % 4 == 0, "sine_positional_encoding: d_model must be divisible by 4, got " +
                                std::to_string(d_model));
  int half = d_model / 2;
  int quarter = d_model / 4;
  int64_t npts = points.numel() / 2;
  std::vector<int> out_shape = points.shape;
  out_shape.back() = d_model;
  bool track = any_tracked({&points});
  Tensor out = make_out(out_shape, track);
  const double two_pi = 2.0 * 3.14159265358979323846;
  std::vector<double> omega(quarter);
  for (int j = 0; j < quarter; ++j)
    omega[j] = two_pi / std::pow(10000.0, (2.0 * j) / half);
  for (int64_t p = 0; p < npts; ++p) {
    double cx = points.ptr()[p * 2];
    double cy = points.ptr()[p * 2 + 1];
    double* po = out.ptr() + p * d_model;
    for (int j = 0; j < quarter; ++j) {
      po[2 * j] = std::sin(cx * omega[j]);
      po[2 * j + 1] = std::cos(cx * omega[j]);
      po[half + 2 * j] = std::sin(cy * omega[j]);
      po[half + 2 * j + 1] = std::cos(cy * omega[j]);
    }
  }
  if (track) {
    record(out, {points.node}, [points, out, omega, npts, d_model, half, quarter] {
      const double* g = out.gptr();
      double* gp = points.grad->data();
      for (int64_t p = 0; p < npts; ++p) {
        double cx = points.ptr()[p * 2];
        double cy = points.ptr()[p * 2 + 1];
        const double* gr = g + p * d_model;
        double dx = 0.0, dy = 0.0;
        for (int j = 0; j < quarter; ++j) {
          double w = omega[j];
          dx += gr[2 * j] * std::cos(cx * w) * w - gr[2 * j + 1] * std::sin(cx * w) * w;
          dy += gr[half + 2 * j] * std::cos(cy * w) * w -
                gr[half + 2 * j + 1] * std::sin(cy * w) * w;
        }
        gp[p * 2] += dx;
        gp[p * 2 + 1] += dy;
      }
    });
  }
  return out;
}

namespace {

struct BilinearCell {
  int x0, x1, y0, y1;
  double fx, fy;
  bool grad_x, grad_y;
};

BilinearCell bilinear_cell(double xn, double yn, int w, int h) {
  BilinearCell c{};
  double px = xn * w - 0.5;
  double py = yn * h - 0.5;
  c.grad_x = px > 0.0 && px < w - 1.0;
  c.grad_y = py > 0.0 && py < h - 1.0;
  double pxc = std::min(std::max(px, 0.0), static_cast<double>(w - 1));
  double pyc = std::min(std::max(py, 0.0), static_cast<double>(h - 1));
  if (w == 1) {
    c.x0 = c.x1 = 0;
    c.fx = 0.0;
  } else {
    c.x0 = std::min(static_cast<int>(std::floor(pxc)), w - 2);
    c.x1 = c.x0 + 1;
    c.fx = pxc - c.x0;
  }
  if (h == 1) {
    c.y0 = c.y1 = 0;
    c.fy = 0.0;
  } else {
    c.y0 = std::min(static_cast<int>(std::floor(pyc)), h - 2);
    c.y1 = c.y0 + 1;
    c.fy = pyc - c.y0;
  }
  return c;
}

}  // namespace

Tensor bilinear_sample(const Tensor& feature_map, const Tensor& locations) {
  require(feature_map.ndim() == 3, "bilinear_sample: feature map must be [H, W, C]");
  require(locations.ndim() >= 1 && locations.shape.back() == 2,
          "bilinear_sample: locations must be [..., 2]");
  int h = feature_map.shape[0], w = feature_map.shape[1], ch = feature_map.shape[2];
  int64_t npts = locations.numel() / 2;
  std::vector<int> out_shape(locations.shape.begin(), locations.shape.end() - 1);
  out_shape.push_back(ch);
  bool track = any_tracked({&feature_map, &locations});
  Tensor out = make_out(out_shape, track);
  const double* pm = feature_map.ptr();
  for (int64_t p = 0; p < npts; ++p) {
    BilinearCell c = bilinear_cell(locations.ptr()[p * 2], locations.ptr()[p * 2 + 1], w, h);
    const double* v00 = pm + (static_cast<int64_t>(c.y0) * w + c.x0) * ch;
    const double* v01 = pm + (static_cast<int64_t>(c.y0) * w + c.x1) * ch;
    const double* v10 = pm + (static_cast<int64_t>(c.y1) * w + c.x0) * ch;
    const double* v11 = pm + (static_cast<int64_t>(c.y1) * w + c.x1) * ch;
    double* po = out.ptr() + p * ch;
    for (int k = 0; k < ch; ++k)
      po[k] = (1.0 - c.fy) * ((1.0 - c.fx) * v00[k] + c.fx * v01[k]) +
              c.fy * ((1.0 - c.fx) * v10[k] + c.fx * v11[k]);
  }
  if (track) {
    record(out, {feature_map.node, locations.node}, [feature_map, locations, out, h, w, ch, npts] {
      const double* g = out.gptr();
      const double* pm2 = feature_map.ptr();
      for (int64_t p = 0; p < npts; ++p) {
        BilinearCell c = bilinear_cell(locations.ptr()[p * 2], locations.ptr()[p * 2 + 1], w, h);
        int64_t i00 = (static_cast<int64_t>(c.y0) * w + c.x0) * ch;
        int64_t i01 = (static_cast<int64_t>(c.y0) * w + c.x1) * ch;
        int64_t i10 = (static_cast<int64_t>(c.y1) * w + c.x0) * ch;
        int64_t i11 = (static_cast<int64_t>(c.y1) * w + c.x1) * ch;
        const double* gr = g + p * ch;
        if (feature_map.tracked()) {
          double* gm = feature_map.grad->data();
          for (int k = 0; k < ch; ++k) {
            gm[i00 + k] += gr[k] * (1.0 - c.fy) * (1.0 - c.fx);
            gm[i01 + k] += gr[k] * (1.0 - c.fy) * c.fx;
            gm[i10 + k] += gr[k] * c.fy * (1.0 - c.fx);
            gm[i11 + k] += gr[k] * c.fy * c.fx;
          }
        }
        if (locations.tracked()) {
          double dx = 0.0, dy = 0.0;
          for (int k = 0; k < ch; ++k) {
            double ddx = (1.0 - c.fy) * (pm2[i01 + k] - pm2[i00 + k]) +
                         c.fy * (pm2[i11 + k] - pm2[i10 + k]);
            double ddy = (1.0 - c.fx) * (pm2[i10 + k] - pm2[i00 + k]) +
                         c.fx * (pm2[i11 + k] - pm2[i01 + k]);
            dx += gr[k] * ddx;
            dy += gr[k] * ddy;
          }
          if (c.grad_x) locations.grad->data()[p * 2] += dx * w;
          if (c.grad_y) locations.grad->data()[p * 2 + 1] += dy * h;
        }
      }
    });
  }
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias, int stride, int pad) {
  require(x.ndim() == 3, "conv2d: input must be [H, W, C_in]");
  require(kernel.ndim() == 4, "conv2d: kernel must be [kh, kw, C_in, C_out]");
  int h = x.shape[0], w = x.shape[1], cin = x.shape[2];
  int kh = kernel.shape[0], kw = kernel.shape[1];
  require(kernel.shape[2] == cin, "conv2d: channel mismatch");
  int cout = kernel.shape[3];
  require(!bias.defined() || (bias.ndim() == 1 && bias.shape[0] == cout), "conv2d: bad bias");
  int ho = (h + 2 * pad - kh) / stride + 1;
  int wo = (w + 2 * pad - kw) / stride + 1;
  require(ho > 0 && wo > 0, "conv2d: empty output");
  bool track = any_tracked({&x, &kernel, &bias});

  int inner = kh * kw * cin;
  int64_t rows = static_cast<int64_t>(ho) * wo;
  auto cols = std::make_shared<std::vector<double>>(rows * inner, 0.0);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      double* dst = cols->data() + (static_cast<int64_t>(oy) * wo + ox) * inner;
      for (int ky = 0; ky < kh; ++ky) {
        int iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= w) continue;
          const double* src = x.ptr() + (static_cast<int64_t>(iy) * w + ix) * cin;
          std::copy(src, src + cin, dst + (static_cast<int64_t>(ky) * kw + kx) * cin);
        }
      }
    }
  Tensor out = make_out({ho, wo, cout}, track);
  // kernel [kh, kw, C_in, C_out] is already [inner, C_out] row-major
  MatMap(out.ptr(), rows, cout).noalias() =
      CMatMap(cols->data(), rows, inner) * CMatMap(kernel.ptr(), inner, cout);
  if (bias.defined())
    for (int64_t r = 0; r < rows; ++r)
      for (int co = 0; co < cout; ++co) out.ptr()[r * cout + co] += bias.ptr()[co];

  if (track) {
    record(out, {x.node, kernel.node, bias.node},
           [x, kernel, bias, out, cols, h, w, cin, cout, kh, kw, ho, wo, stride, pad, rows,
            inner] {
             CMatMap gy(out.gptr(), rows, cout);
             if (kernel.tracked())
               MatMap(kernel.grad->data(), inner, cout).noalias() +=
                   CMatMap(cols->data(), rows, inner).transpose() * gy;
             if (x.tracked()) {
               RowMat gcols = gy * CMatMap(kernel.ptr(), inner, cout).transpose();
               double* gx = x.grad->data();
               for (int oy = 0; oy < ho; ++oy)
                 for (int ox = 0; ox < wo; ++ox) {
                   const double* src = gcols.data() + (static_cast<int64_t>(oy) * wo + ox) * inner;
                   for (int ky = 0; ky < kh; ++ky) {
                     int iy = oy * stride + ky - pad;
                     if (iy < 0 || iy >= h) continue;
                     for (int kx = 0; kx < kw; ++kx) {
                       int ix = ox * stride + kx - pad;
                       if (ix < 0 || ix >= w) continue;
                       double* dst = gx + (static_cast<int64_t>(iy) * w + ix) * cin;
                       const double* s = src + (static_cast<int64_t>(ky) * kw + kx) * cin;
                       for (int ci = 0; ci < cin; ++ci) dst[ci] += s[ci];
                     }
                   }
                 }
             }
             if (bias.defined() && bias.tracked()) {
               double* gb = bias.grad->data();
               for (int64_t r = 0; r < rows; ++r)
                 for (int co = 0; co < cout; ++co) gb[co] += out.gptr()[r * cout + co];
             }
           });
  }
  return out;
}

Tensor deform_sample_agg(const Tensor& value_map, const Tensor& locations,
                         const Tensor& weights, int n_heads) {
  require(value_map.ndim() == 3, "deform_sample_agg: value map must be [H, W, C]");
  require(locations.ndim() == 4 && locations.shape.back() == 2,
          "deform_sample_agg: locations must be [Q, heads, S, 2]");
  require(weights.ndim() == 3, "deform_sample_agg: weights must be [Q, heads, S]");
  int h = value_map.shape[0], w = value_map.shape[1], ch = value_map.shape[2];
  int q = locations.shape[0], hd = locations.shape[1], s = locations.shape[2];
  require(weights.shape[0] == q && weights.shape[1] == hd && weights.shape[2] == s,
          "deform_sample_agg: weights shape mismatch");
  require(hd == n_heads && ch % n_heads == 0,
          "deform_sample_agg: channels not divisible by heads");
  int dh = ch / n_heads;
  bool track = any_tracked({&value_map, &locations, &weights});
  Tensor out = make_out({q, ch}, track);
  const double* pm = value_map.ptr();
  for (int qi = 0; qi < q; ++qi)
    for (int hi = 0; hi < hd; ++hi) {
      double* po = out.ptr() + static_cast<int64_t>(qi) * ch + hi * dh;
      for (int si = 0; si < s; ++si) {
        int64_t li = ((static_cast<int64_t>(qi) * hd + hi) * s + si) * 2;
        double wt = weights.ptr()[(static_cast<int64_t>(qi) * hd + hi) * s + si];
        BilinearCell c = bilinear_cell(locations.ptr()[li], locations.ptr()[li + 1], w, h);
        const double* v00 = pm + (static_cast<int64_t>(c.y0) * w + c.x0) * ch + hi * dh;
        const double* v01 = pm + (static_cast<int64_t>(c.y0) * w + c.x1) * ch + hi * dh;
        const double* v10 = pm + (static_cast<int64_t>(c.y1) * w + c.x0) * ch + hi * dh;
        const double* v11 = pm + (static_cast<int64_t>(c.y1) * w + c.x1) * ch + hi * dh;
        for (int k = 0; k < dh; ++k)
          po[k] += wt * ((1.0 - c.fy) * ((1.0 - c.fx) * v00[k] + c.fx * v01[k]) +
                         c.fy * ((1.0 - c.fx) * v10[k] + c.fx * v11[k]));
      }
    }
  if (track) {
    record(out, {value_map.node, locations.node, weights.node},
           [value_map, locations, weights, out, h, w, ch, q, hd, s, dh] {
             const double* pm2 = value_map.ptr();
             const double* g = out.gptr();
             for (int qi = 0; qi < q; ++qi)
               for (int hi = 0; hi < hd; ++hi) {
                 const double* gr = g + static_cast<int64_t>(qi) * ch + hi * dh;
                 for (int si = 0; si < s; ++si) {
                   int64_t li = ((static_cast<int64_t>(qi) * hd + hi) * s + si) * 2;
                   int64_t wi = (static_cast<int64_t>(qi) * hd + hi) * s + si;
                   double wt = weights.ptr()[wi];
                   BilinearCell c =
                       bilinear_cell(locations.ptr()[li], locations.ptr()[li + 1], w, h);
                   int64_t i00 = (static_cast<int64_t>(c.y0) * w + c.x0) * ch + hi * dh;
                   int64_t i01 = (static_cast<int64_t>(c.y0) * w + c.x1) * ch + hi * dh;
                   int64_t i10 = (static_cast<int64_t>(c.y1) * w + c.x0) * ch + hi * dh;
                   int64_t i11 = (static_cast<int64_t>(c.y1) * w + c.x1) * ch + hi * dh;
                   double w00 = (1.0 - c.fy) * (1.0 - c.fx), w01 = (1.0 - c.fy) * c.fx;
                   double w10 = c.fy * (1.0 - c.fx), w11 = c.fy * c.fx;
                   if (value_map.tracked()) {
                     double* gm = value_map.grad->data();
                     for (int k = 0; k < dh; ++k) {
                       double gv = gr[k] * wt;
                       gm[i00 + k] += gv * w00;
                       gm[i01 + k] += gv * w01;
                       gm[i10 + k] += gv * w10;
                       gm[i11 + k] += gv * w11;
                     }
                   }
                   if (weights.tracked()) {
                     double dot = 0.0;
                     for (int k = 0; k < dh; ++k)
                       dot += gr[k] * (w00 * pm2[i00 + k] + w01 * pm2[i01 + k] +
                                       w10 * pm2[i10 + k] + w11 * pm2[i11 + k]);
                     weights.grad->data()[wi] += dot;
                   }
                   if (locations.tracked()) {
                     double dx = 0.0, dy = 0.0;
                     for (int k = 0; k < dh; ++k) {
                       double ddx = (1.0 - c.fy) * (pm2[i01 + k] - pm2[i00 + k]) +
                                    c.fy * (pm2[i11 + k] - pm2[i10 + k]);
                       double ddy = (1.0 - c.fx) * (pm2[i10 + k] - pm2[i00 + k]) +
                                    c.fx * (pm2[i11 + k] - pm2[i01 + k]);
                       dx += gr[k] * wt * ddx;
                       dy += gr[k] * wt * ddy;
                     }
                     if (c.grad_x) locations.grad->data()[li] += dx * w;
                     if (c.grad_y) locations.grad->data()[li + 1] += dy * h;
                   }
                 }
               }
           });
  }
  return out;
}

}  // namespace ptdet
