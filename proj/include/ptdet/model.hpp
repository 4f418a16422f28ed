#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "ptdet/geometry.hpp"
#include "ptdet/nn.hpp"
#include "ptdet/ops.hpp"

namespace ptdet {

enum class QueryMode { kBoxBaseline, kExplicitPoint };
enum class EfsaMode { kFsa, kEfsa };

std::string query_mode_name(QueryMode m);
QueryMode query_mode_from_name(const std::string& s);
std::string efsa_mode_name(EfsaMode m);
EfsaMode efsa_mode_from_name(const std::string& s);

struct ModelConfig {
  int d_model = 64;
  int n_heads = 8;
  int n_deform_points = 4;   // S
  int n_encoder_layers = 2;
  int n_decoder_layers = 3;
  int num_queries = 20;      // K composite queries
  int n_ctrl_points = 8;     // N control points
  int efsa_conv_layers = 1;
  int efsa_neighborhood = 4;  // adjacent elements total -> kernel size +1
  int d_ffn = 128;
  std::vector<int> stem_channels = {8, 16};  // third stage is d_model
  QueryMode query_mode = QueryMode::kExplicitPoint;
  EfsaMode efsa_mode = EfsaMode::kEfsa;

  int circ_kernel_size() const { return efsa_neighborhood + 1; }
  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

struct AnchorBoxProposal {
  double cx = 0, cy = 0, w = 0, h = 0;
  double objectness = 0;
};

/// Uniform placement of N/2 points on the top and bottom box sides:
/// left-to-right on top, right-to-left on bottom (clockwise order); clipped
/// to [0,1]. N must be even and >= 4.
std::vector<Vec2> prior_points_sampling(const AnchorBoxProposal& box, int n_points);

struct EncoderOutput {
  Tensor memory;  // [HW, d]
  int feat_h = 0, feat_w = 0;
  Tensor obj_logits;  // [HW]
  Tensor boxes;       // [HW, 4] (cx, cy fixed grid; w, h sigmoid-decoded)
  std::vector<int> topk_indices;
  std::vector<AnchorBoxProposal> proposals;  // detached, clipped to the unit square
};

struct LayerOutput {
  Tensor class_logits;  // [K]
  Tensor points;        // [K, N, 2]
};

/// The detached quantities of one forward pass: top-K proposals and the
/// per-layer reference points (explicit-point mode). Gradients do not flow
/// through these by construction; finite-difference checks pin them so the
/// numeric derivative matches the same stop-gradient semantics.
struct ReferenceTrace {
  std::vector<AnchorBoxProposal> proposals;
  std::vector<std::vector<double>> layer_points;  // [n_layers][K*N*2]
};

struct DetectionOutput {
  EncoderOutput encoder;
  std::vector<LayerOutput> layers;  // one per decoder layer; back() is final
  ReferenceTrace refs;
};

struct Detection {
  double score = 0;
  std::vector<Vec2> points;  // normalized
};

class TextDetector {
 public:
  TextDetector(const ModelConfig& cfg, uint64_t seed);

  /// image: [H, W, 1], values roughly in [-1, 1]. Training mode switches
  /// batch-norm statistics; the tape decides whether gradients are recorded.
  /// With `pinned`, the detached references (proposal selection, per-layer
  /// points) are reused instead of recomputed.
  DetectionOutput forward(const Tensor& image, bool training,
                          const ReferenceTrace* pinned = nullptr);

  /// Final-layer detections with sigmoid scores (inference helper).
  std::vector<Detection> detect(const Tensor& image);

  /// Explicit-point positional part: per-point sine encoding through the
  /// shared linear + layer norm. points: [..., 2] -> [..., d_model].
  Tensor positional_query_encode(const Tensor& points);
  /// Box-mode positional part (Eq. 1 style): the encoded box vector is
  /// broadcast to all N content queries. Returns [K, N, d_model].
  Tensor baseline_box_query_encode(const std::vector<AnchorBoxProposal>& boxes);
  /// EFSA block of decoder layer `layer`; q = c + p. In fsa mode the local
  /// circular-convolution branch is skipped.
  Tensor efsa(int layer, const Tensor& q, const Tensor& c, const Tensor& p, bool training);
  /// The isolated Q_local branch: ReLU(BN(CirConv(q))).
  Tensor efsa_local_branch(int layer, const Tensor& q, bool training);

  ParamStore& params() { return store_; }
  const ModelConfig& config() const { return cfg_; }

  void save_checkpoint(const std::string& path) const;
  static std::unique_ptr<TextDetector> load_checkpoint(const std::string& path);

 private:
  struct EncoderLayer {
    Linear off, wgt, val, out;
    LayerNorm ln_attn;
    Linear ffn1, ffn2;
    LayerNorm ln_ffn;
  };
  struct CircBlock {
    Tensor kernel, bias;
    BatchNorm1d bn;
  };
  struct DecoderLayer {
    MultiHeadAttention intra, inter;
    std::vector<CircBlock> circ;
    Linear fc_fuse;
    LayerNorm ln_fuse_inner, ln_fuse_out, ln_inter;
    Linear ca_off, ca_wgt, ca_val, ca_out;
    LayerNorm ln_ca;
    Linear ffn1, ffn2;
    LayerNorm ln_ffn;
    Linear cls_head;
    Mlp point_head;
  };

  EncoderOutput run_encoder(const Tensor& image);
  Tensor deformable_cross_attention(DecoderLayer& dl, const Tensor& queries,
                                    const Tensor& ref_points, const Tensor& memory, int fh,
                                    int fw);

  ModelConfig cfg_;
  ParamStore store_;
  Conv2dLayer stem1_, stem2_, stem3_;
  std::vector<EncoderLayer> enc_;
  Linear prop_obj_, prop_size_;
  Tensor content_;  // [N, d] learnable control point content queries
  Linear phi_point_;
  LayerNorm phi_point_ln_;
  Linear phi_box_;
  LayerNorm phi_box_ln_;
  std::vector<DecoderLayer> dec_;
  bool training_ = false;
};

}  // namespace ptdet
