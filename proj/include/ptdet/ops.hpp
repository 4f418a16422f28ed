#pragma once

#include <vector>

#include "ptdet/tensor.hpp"

namespace ptdet {

// Elementwise / arithmetic
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

// Linear algebra (Eigen-backed)
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched matmul over matching leading batch axis: [B,M,K] x [B,K,N].
/// With transpose_b, b is [B,N,K] and multiplied transposed.
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false);
/// x [..., in] * w [in, out] + bias [out]; leading axes flattened.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Activations and normalization
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor inverse_sigmoid(const Tensor& x);  // logit of input clamped to [eps, 1-eps]
Tensor softmax(const Tensor& x);          // along the last axis
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// Shape plumbing
Tensor reshape(const Tensor& x, std::vector<int> shape);  // zero-copy view
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor tile0(const Tensor& x, int times);                  // prepend axis of copies
Tensor repeat_axis1(const Tensor& x, int times);           // [A, ...] -> [A, times, ...]
Tensor repeat_rows_grouped(const Tensor& x, int times);    // row r -> rows r*times..+times-1
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor gather_rows(const Tensor& x, const std::vector<int>& rows);
Tensor colwise_scale(const Tensor& x, const std::vector<double>& factors);

// Reductions
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor mean_axis(const Tensor& x, int axis);
Tensor detach(const Tensor& x);

// Losses
Tensor l1_loss(const Tensor& pred, const Tensor& target);  // mean |pred - target|
/// Binary focal loss on probabilities, summed over elements.
/// targets[i] in {0, 1}.
Tensor focal_loss_sum(const Tensor& probs, const std::vector<double>& targets,
                      double alpha, double gamma);

// Geometry-aware primitives
/// x [G, N, C_in] (or [N, C_in]), kernel [C_out, C_in, ksize], optional bias
/// [C_out]. Index arithmetic wraps modulo N. ksize must be odd and <= N.
Tensor circular_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias = Tensor());
/// points [..., 2] with coordinates in [0,1] -> [..., d_model]; DETR-style
/// sine/cosine interleave, temperature 10000, coordinates scaled by 2*pi.
/// d_model must be divisible by 4 (half per coordinate).
Tensor sine_positional_encoding(const Tensor& points, int d_model);
/// feature_map [H, W, C], locations [..., 2] normalized; border clamp.
Tensor bilinear_sample(const Tensor& feature_map, const Tensor& locations);
/// x [H, W, C_in], kernel [kh, kw, C_in, C_out], bias [C_out].
Tensor conv2d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
              int stride, int pad);
/// Deformable-attention aggregation: value_map [H, W, C], locations
/// [Q, heads, S, 2], weights [Q, heads, S] (softmaxed over S upstream).
/// Head h reads channel slice [h*C/heads, (h+1)*C/heads). Returns [Q, C].
Tensor deform_sample_agg(const Tensor& value_map, const Tensor& locations,
                         const Tensor& weights, int n_heads);

inline constexpr double kInverseSigmoidEps = 1e-6;

}  // namespace ptdet
