#include "ptdet/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "ptdet/annotations.hpp"

using nlohmann::json;

namespace ptdet {

std::string query_mode_name(QueryMode m) {
  return m == QueryMode::kBoxBaseline ? "box_baseline" : "explicit_point";
}

QueryMode query_mode_from_name(const std::string& s) {
  if (s == "box_baseline") return QueryMode::kBoxBaseline;
  if (s == "explicit_point") return QueryMode::kExplicitPoint;
  throw DimensionError("unknown query mode '" + s + "'");
}

std::string efsa_mode_name(EfsaMode m) { return m == EfsaMode::kFsa ? "fsa" : "efsa"; }

EfsaMode efsa_mode_from_name(const std::string& s) {
  if (s == "fsa") return EfsaMode::kFsa;
  if (s == "efsa") return EfsaMode::kEfsa;
  throw DimensionError("unknown efsa mode '" + s + "'");
}

void ModelConfig::validate() const {
  require(n_ctrl_points >= 4 && n_ctrl_points % 2 == 0,
          "model config: N must be even and >= 4, got " + std::to_string(n_ctrl_points));
  require(d_model % n_heads == 0, "model config: d_model not divisible by n_heads");
  require(d_model % 4 == 0, "model config: d_model must be divisible by 4");
  require(circ_kernel_size() % 2 == 1,
          "model config: efsa_neighborhood must be odd+1 (kernel size must be odd)");
  require(efsa_mode == EfsaMode::kFsa || circ_kernel_size() <= n_ctrl_points,
          "model config: circular conv kernel size " + std::to_string(circ_kernel_size()) +
              " exceeds N = " + std::to_string(n_ctrl_points));
  require(stem_channels.size() == 2, "model config: stem_channels needs 2 entries");
  require(n_encoder_layers >= 1 && n_decoder_layers >= 1, "model config: need >= 1 layer");
}

std::string ModelConfig::to_json() const {
  json j = {{"d_model", d_model},
            {"n_heads", n_heads},
            {"n_deform_points", n_deform_points},
            {"n_encoder_layers", n_encoder_layers},
            {"n_decoder_layers", n_decoder_layers},
            {"num_queries", num_queries},
            {"n_ctrl_points", n_ctrl_points},
            {"efsa_conv_layers", efsa_conv_layers},
            {"efsa_neighborhood", efsa_neighborhood},
            {"d_ffn", d_ffn},
            {"stem_channels", stem_channels},
            {"query_mode", query_mode_name(query_mode)},
            {"efsa_mode", efsa_mode_name(efsa_mode)}};
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  json j = json::parse(text);
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_deform_points = j.value("n_deform_points", c.n_deform_points);
  c.n_encoder_layers = j.value("n_encoder_layers", c.n_encoder_layers);
  c.n_decoder_layers = j.value("n_decoder_layers", c.n_decoder_layers);
  c.num_queries = j.value("num_queries", c.num_queries);
  c.n_ctrl_points = j.value("n_ctrl_points", c.n_ctrl_points);
  c.efsa_conv_layers = j.value("efsa_conv_layers", c.efsa_conv_layers);
  c.efsa_neighborhood = j.value("efsa_neighborhood", c.efsa_neighborhood);
  c.d_ffn = j.value("d_ffn", c.d_ffn);
  if (j.contains("stem_channels")) c.stem_channels = j["stem_channels"].get<std::vector<int>>();
  if (j.contains("query_mode")) c.query_mode = query_mode_from_name(j["query_mode"]);
  if (j.contains("efsa_mode")) c.efsa_mode = efsa_mode_from_name(j["efsa_mode"]);
  c.validate();
  return c;
}

std::vector<Vec2> prior_points_sampling(const AnchorBoxProposal& box, int n_points) {
  require(n_points >= 4 && n_points % 2 == 0,
          "prior_points_sampling: N must be even and >= 4, got " + std::to_string(n_points));
  int half = n_points / 2;
  double denom = static_cast<double>(half - 1);
  std::vector<Vec2> pts;
  pts.reserve(n_points);
  auto clip01 = [](double v) { return std::min(std::max(v, 0.0), 1.0); };
  for (int n = 1; n <= n_points; ++n) {
    double x, y;
    if (n <= half) {
      x = box.cx - box.w / 2.0 + (static_cast<double>(n - 1) * box.w) / denom;
      y = box.cy - box.h / 2.0;
    } else {
      x = box.cx - box.w / 2.0 + (static_cast<double>(n_points - n) * box.w) / denom;
      y = box.cy + box.h / 2.0;
    }
    pts.push_back({clip01(x), clip01(y)});
  }
  return pts;
}

namespace {

AnchorBoxProposal clip_to_unit_square(double cx, double cy, double w, double h, double score) {
  double x0 = std::min(std::max(cx - w / 2.0, 0.0), 1.0);
  double x1 = std::min(std::max(cx + w / 2.0, 0.0), 1.0);
  double y0 = std::min(std::max(cy - h / 2.0, 0.0), 1.0);
  double y1 = std::min(std::max(cy + h / 2.0, 0.0), 1.0);
  AnchorBoxProposal b;
  b.cx = (x0 + x1) / 2.0;
  b.cy = (y0 + y1) / 2.0;
  b.w = std::max(x1 - x0, 1e-4);
  b.h = std::max(y1 - y0, 1e-4);
  b.objectness = score;
  return b;
}

Tensor grid_centers(int fh, int fw) {
  Tensor g = Tensor::zeros({fh * fw, 2});
  for (int i = 0; i < fh; ++i)
    for (int j = 0; j < fw; ++j) {
      g.ptr()[(static_cast<int64_t>(i) * fw + j) * 2] = (j + 0.5) / fw;
      g.ptr()[(static_cast<int64_t>(i) * fw + j) * 2 + 1] = (i + 0.5) / fh;
    }
  return g;
}

}  // namespace

TextDetector::TextDetector(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  const int d = cfg_.d_model;

  stem1_ = Conv2dLayer(store_, "stem.c0", 3, 3, 1, cfg_.stem_channels[0], 2, 1, rng);
  stem2_ = Conv2dLayer(store_, "stem.c1", 3, 3, cfg_.stem_channels[0], cfg_.stem_channels[1], 2,
                       1, rng);
  stem3_ = Conv2dLayer(store_, "stem.c2", 3, 3, cfg_.stem_channels[1], d, 2, 1, rng);

  for (int l = 0; l < cfg_.n_encoder_layers; ++l) {
    std::string p = "enc.l" + std::to_string(l);
    EncoderLayer el{Linear(store_, p + ".off", d, cfg_.n_heads * cfg_.n_deform_points * 2, rng),
                    Linear(store_, p + ".wgt", d, cfg_.n_heads * cfg_.n_deform_points, rng),
                    Linear(store_, p + ".val", d, d, rng),
                    Linear(store_, p + ".out", d, d, rng),
                    LayerNorm(store_, p + ".ln_attn", d),
                    Linear(store_, p + ".ffn1", d, cfg_.d_ffn, rng),
                    Linear(store_, p + ".ffn2", cfg_.d_ffn, d, rng),
                    LayerNorm(store_, p + ".ln_ffn", d)};
    enc_.push_back(std::move(el));
  }
  prop_obj_ = Linear(store_, "prop.obj", d, 1, rng);
  prop_size_ = Linear(store_, "prop.size", d, 2, rng);

  Tensor content = Tensor::zeros({cfg_.n_ctrl_points, d});
  for (double& v : *content.data) v = rng.normal();
  content_ = store_.add("dec.content", std::move(content));

  phi_point_ = Linear(store_, "dec.phi_point", d, d, rng);
  phi_point_ln_ = LayerNorm(store_, "dec.phi_point_ln", d);
  phi_box_ = Linear(store_, "dec.phi_box", 2 * d, d, rng);
  phi_box_ln_ = LayerNorm(store_, "dec.phi_box_ln", d);

  for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
    std::string p = "dec.l" + std::to_string(l);
    DecoderLayer dl;
    dl.intra = MultiHeadAttention(store_, p + ".intra", d, cfg_.n_heads, rng);
    dl.inter = MultiHeadAttention(store_, p + ".inter", d, cfg_.n_heads, rng);
    if (cfg_.efsa_mode == EfsaMode::kEfsa) {
      int ks = cfg_.circ_kernel_size();
      for (int c = 0; c < cfg_.efsa_conv_layers; ++c) {
        std::string cp = p + ".circ" + std::to_string(c);
        Tensor k = Tensor::zeros({d, d, ks});
        double bound = 1.0 / std::sqrt(static_cast<double>(d * ks));
        for (double& v : *k.data) v = rng.uniform(-bound, bound);
        CircBlock cb;
        cb.kernel = store_.add(cp + ".kernel", std::move(k));
        cb.bias = store_.add(cp + ".bias", Tensor::zeros({d}));
        cb.bn = BatchNorm1d(store_, cp + ".bn", d);
        dl.circ.push_back(std::move(cb));
      }
    }
    dl.fc_fuse = Linear(store_, p + ".fc_fuse", d, d, rng);
    dl.ln_fuse_inner = LayerNorm(store_, p + ".ln_fuse_inner", d);
    dl.ln_fuse_out = LayerNorm(store_, p + ".ln_fuse_out", d);
    dl.ln_inter = LayerNorm(store_, p + ".ln_inter", d);
    dl.ca_off = Linear(store_, p + ".ca_off", d, cfg_.n_heads * cfg_.n_deform_points * 2, rng);
    dl.ca_wgt = Linear(store_, p + ".ca_wgt", d, cfg_.n_heads * cfg_.n_deform_points, rng);
    dl.ca_val = Linear(store_, p + ".ca_val", d, d, rng);
    dl.ca_out = Linear(store_, p + ".ca_out", d, d, rng);
    dl.ln_ca = LayerNorm(store_, p + ".ln_ca", d);
    dl.ffn1 = Linear(store_, p + ".ffn1", d, cfg_.d_ffn, rng);
    dl.ffn2 = Linear(store_, p + ".ffn2", cfg_.d_ffn, d, rng);
    dl.ln_ffn = LayerNorm(store_, p + ".ln_ffn", d);
    dl.cls_head = Linear(store_, p + ".cls", d, 1, rng);
    dl.point_head = Mlp(store_, p + ".point_head", {d, d, d, 2}, rng);
    dec_.push_back(std::move(dl));
  }
}

Tensor TextDetector::positional_query_encode(const Tensor& points) {
  Tensor enc = sine_positional_encoding(points, cfg_.d_model);
  return phi_point_ln_.forward(phi_point_.forward(enc));
}

Tensor TextDetector::baseline_box_query_encode(const std::vector<AnchorBoxProposal>& boxes) {
  int k = static_cast<int>(boxes.size());
  Tensor centers = Tensor::zeros({k, 2});
  Tensor sizes = Tensor::zeros({k, 2});
  for (int i = 0; i < k; ++i) {
    centers.ptr()[i * 2] = boxes[i].cx;
    centers.ptr()[i * 2 + 1] = boxes[i].cy;
    sizes.ptr()[i * 2] = boxes[i].w;
    sizes.ptr()[i * 2 + 1] = boxes[i].h;
  }
  Tensor enc = concat_last(sine_positional_encoding(centers, cfg_.d_model),
                           sine_positional_encoding(sizes, cfg_.d_model));
  Tensor box_vec = phi_box_ln_.forward(phi_box_.forward(enc));  // [K, d]
  return repeat_axis1(box_vec, cfg_.n_ctrl_points);             // [K, N, d]
}

Tensor TextDetector::efsa(int layer, const Tensor& q, const Tensor& c, const Tensor& p,
                          bool training) {
  DecoderLayer& dl = dec_.at(layer);
  Tensor q_intra = dl.intra.forward(q, q, c);  // values exclude the positional part
  Tensor fuse_in = q_intra;
  if (cfg_.efsa_mode == EfsaMode::kEfsa)
    fuse_in = add(q_intra, efsa_local_branch(layer, q, training));
  Tensor q_fuse =
      dl.ln_fuse_out.forward(dl.fc_fuse.forward(add(c, dl.ln_fuse_inner.forward(fuse_in))));

  // inter-group attention across the K instances, shared over point index;
  // queries/keys/values all carry the positional part here
  Tensor x = add(q_fuse, p);
  Tensor xt = permute(x, {1, 0, 2});  // [N, K, d]
  Tensor inter = permute(dl.inter.forward(xt, xt, xt), {1, 0, 2});
  return dl.ln_inter.forward(add(q_fuse, inter));
}

Tensor TextDetector::efsa_local_branch(int layer, const Tensor& q, bool training) {
  DecoderLayer& dl = dec_.at(layer);
  require(cfg_.efsa_mode == EfsaMode::kEfsa, "efsa_local_branch: model runs in fsa mode");
  int k = q.shape[0], n = q.shape[1];
  const int d = cfg_.d_model;
  Tensor z = q;
  for (CircBlock& cb : dl.circ) {
    z = circular_conv1d(z, cb.kernel, cb.bias);
    z = reshape(relu(cb.bn.forward(reshape(z, {k * n, d}), training)), {k, n, d});
  }
  return z;
}

EncoderOutput TextDetector::run_encoder(const Tensor& image) {
  require(image.ndim() == 3 && image.shape[2] == 1, "encoder: image must be [H, W, 1]");
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads, s = cfg_.n_deform_points;

  Tensor f = relu(stem1_.forward(image));
  f = relu(stem2_.forward(f));
  f = relu(stem3_.forward(f));
  int fh = f.shape[0], fw = f.shape[1];
  int hw = fh * fw;
  require(cfg_.num_queries <= hw, "encoder: K = " + std::to_string(cfg_.num_queries) +
                                      " exceeds " + std::to_string(hw) + " memory positions");

  Tensor memory = reshape(f, {hw, d});
  Tensor grid = grid_centers(fh, fw);
  Tensor pos = sine_positional_encoding(grid, d);
  Tensor grid_rep = repeat_rows_grouped(grid, heads * s);
  std::vector<double> inv_size = {1.0 / fw, 1.0 / fh};

  for (EncoderLayer& el : enc_) {
    Tensor q = add(memory, pos);
    Tensor off = reshape(el.off.forward(q), {hw * heads * s, 2});
    Tensor locs = reshape(add(colwise_scale(off, inv_size), grid_rep), {hw, heads, s, 2});
    Tensor wts = reshape(softmax(reshape(el.wgt.forward(q), {hw * heads, s})), {hw, heads, s});
    Tensor vmap = reshape(el.val.forward(memory), {fh, fw, d});
    Tensor attn = el.out.forward(deform_sample_agg(vmap, locs, wts, heads));
    memory = el.ln_attn.forward(add(memory, attn));
    Tensor ffn = el.ffn2.forward(relu(el.ffn1.forward(memory)));
    memory = el.ln_ffn.forward(add(memory, ffn));
  }

  EncoderOutput out;
  out.memory = memory;
  out.feat_h = fh;
  out.feat_w = fw;
  out.obj_logits = reshape(prop_obj_.forward(memory), {hw});
  Tensor wh = sigmoid(prop_size_.forward(memory));
  out.boxes = concat_last(grid, wh);

  std::vector<int> order(hw);
  std::iota(order.begin(), order.end(), 0);
  const double* scores = out.obj_logits.ptr();
  std::stable_sort(order.begin(), order.end(),
                   [scores](int a, int b) { return scores[a] > scores[b]; });
  order.resize(cfg_.num_queries);
  out.topk_indices = order;
  for (int idx : order) {
    double cx = grid.ptr()[idx * 2];
    double cy = grid.ptr()[idx * 2 + 1];
    double w = wh.ptr()[idx * 2];
    double h = wh.ptr()[idx * 2 + 1];
    double sc = 1.0 / (1.0 + std::exp(-scores[idx]));
    out.proposals.push_back(clip_to_unit_square(cx, cy, w, h, sc));
  }
  return out;
}

Tensor TextDetector::deformable_cross_attention(DecoderLayer& dl, const Tensor& queries,
                                                const Tensor& ref_points, const Tensor& memory,
                                                int fh, int fw) {
  const int d = cfg_.d_model;
  const int heads = cfg_.n_heads, s = cfg_.n_deform_points;
  int r = queries.shape[0];
  Tensor off = reshape(dl.ca_off.forward(queries), {r * heads * s, 2});
  Tensor ref_rep = repeat_rows_grouped(ref_points, heads * s);
  std::vector<double> inv_size = {1.0 / fw, 1.0 / fh};
  Tensor locs = reshape(add(colwise_scale(off, inv_size), ref_rep), {r, heads, s, 2});
  Tensor wts =
      reshape(softmax(reshape(dl.ca_wgt.forward(queries), {r * heads, s})), {r, heads, s});
  Tensor vmap = reshape(dl.ca_val.forward(memory), {fh, fw, d});
  return dl.ca_out.forward(deform_sample_agg(vmap, locs, wts, heads));
}

DetectionOutput TextDetector::forward(const Tensor& image, bool training,
                                      const ReferenceTrace* pinned) {
  const int d = cfg_.d_model;
  const int k = cfg_.num_queries;
  const int n = cfg_.n_ctrl_points;

  DetectionOutput out;
  out.encoder = run_encoder(image);
  if (pinned) out.encoder.proposals = pinned->proposals;
  out.refs.proposals = out.encoder.proposals;
  const EncoderOutput& enc = out.encoder;

  Tensor content = tile0(content_, k);  // [K, N, d], identical across K

  // reference points / positional parts, per query mode
  Tensor pts_const;      // [K, N, 2] explicit-point reference points (untracked)
  Tensor box_pos;        // [K, N, d] baseline positional part, identical across N
  Tensor box_ref_const;  // [K*N, 2] baseline fixed reference: box centers
  if (cfg_.query_mode == QueryMode::kExplicitPoint) {
    pts_const = Tensor::zeros({k, n, 2});
    for (int i = 0; i < k; ++i) {
      std::vector<Vec2> pts = prior_points_sampling(enc.proposals[i], n);
      for (int j = 0; j < n; ++j) {
        pts_const.ptr()[(static_cast<int64_t>(i) * n + j) * 2] = pts[j].x;
        pts_const.ptr()[(static_cast<int64_t>(i) * n + j) * 2 + 1] = pts[j].y;
      }
    }
    if (pinned) std::copy(pinned->layer_points[0].begin(), pinned->layer_points[0].end(),
                          pts_const.ptr());
  } else {
    box_pos = baseline_box_query_encode(enc.proposals);
    Tensor centers = Tensor::zeros({k, 2});
    for (int i = 0; i < k; ++i) {
      centers.ptr()[i * 2] = enc.proposals[i].cx;
      centers.ptr()[i * 2 + 1] = enc.proposals[i].cy;
    }
    box_ref_const = repeat_rows_grouped(centers, n);
  }

  Tensor c = content;
  for (int l = 0; l < cfg_.n_decoder_layers; ++l) {
    DecoderLayer& dl = dec_[l];
    if (cfg_.query_mode == QueryMode::kExplicitPoint)
      out.refs.layer_points.emplace_back(pts_const.ptr(), pts_const.ptr() + pts_const.numel());
    Tensor p = cfg_.query_mode == QueryMode::kExplicitPoint ? positional_query_encode(pts_const)
                                                            : box_pos;
    Tensor q = add(c, p);
    Tensor q_inter = efsa(l, q, c, p, training);

    Tensor ref = cfg_.query_mode == QueryMode::kExplicitPoint ? reshape(pts_const, {k * n, 2})
                                                              : box_ref_const;
    Tensor ca = deformable_cross_attention(dl, reshape(q_inter, {k * n, d}), ref, enc.memory,
                                           enc.feat_h, enc.feat_w);
    Tensor c_a = dl.ln_ca.forward(add(q_inter, reshape(ca, {k, n, d})));
    Tensor ffn = dl.ffn2.forward(relu(dl.ffn1.forward(c_a)));
    Tensor c_out = dl.ln_ffn.forward(add(c_a, ffn));

    Tensor pooled = mean_axis(c_out, 1);  // [K, d]
    Tensor logits = reshape(dl.cls_head.forward(pooled), {k});
    Tensor pred;
    if (cfg_.query_mode == QueryMode::kExplicitPoint) {
      Tensor offsets = dl.point_head.forward(c_out);  // [K, N, 2]
      pred = sigmoid(add(inverse_sigmoid(pts_const), offsets));
      // next layer refines a detached estimate
      Tensor next = Tensor::zeros({k, n, 2});
      std::copy(pred.ptr(), pred.ptr() + pred.numel(), next.ptr());
      if (pinned && l + 1 < cfg_.n_decoder_layers)
        std::copy(pinned->layer_points[l + 1].begin(), pinned->layer_points[l + 1].end(),
                  next.ptr());
      pts_const = next;
    } else {
      // no reference refinement in box mode: direct per-layer head
      pred = sigmoid(dl.point_head.forward(c_out));
    }
    out.layers.push_back({logits, pred});
    c = c_out;
  }
  return out;
}

std::vector<Detection> TextDetector::detect(const Tensor& image) {
  DetectionOutput out = forward(image, /*training=*/false);
  const LayerOutput& last = out.layers.back();
  const int k = cfg_.num_queries, n = cfg_.n_ctrl_points;
  std::vector<Detection> dets;
  dets.reserve(k);
  for (int i = 0; i < k; ++i) {
    Detection det;
    det.score = 1.0 / (1.0 + std::exp(-last.class_logits.ptr()[i]));
    for (int j = 0; j < n; ++j)
      det.points.push_back({last.points.ptr()[(static_cast<int64_t>(i) * n + j) * 2],
                            last.points.ptr()[(static_cast<int64_t>(i) * n + j) * 2 + 1]});
    dets.push_back(std::move(det));
  }
  return dets;
}

// --- Checkpoint: JSON manifest + raw little-endian doubles -----------------

namespace {
constexpr char kCkptMagic[8] = {'P', 'T', 'C', 'K', 'P', 'T', '1', '\n'};
}

void TextDetector::save_checkpoint(const std::string& path) const {
  json manifest;
  manifest["format"] = "ptdet-ckpt-v1";
  manifest["config"] = json::parse(cfg_.to_json());
  json params = json::array();
  int64_t total = 0;
  for (const auto& [name, t] : store_.params()) {
    params.push_back({{"name", name}, {"shape", t.shape}});
    total += t.numel();
  }
  json state = json::array();
  for (const auto& [name, t] : store_.state()) {
    state.push_back({{"name", name}, {"shape", t.shape}});
    total += t.numel();
  }
  manifest["params"] = params;
  manifest["state"] = state;
  std::string mtext = manifest.dump();

  std::string blob;
  blob.reserve(sizeof(kCkptMagic) + 8 + mtext.size() + total * sizeof(double));
  blob.append(kCkptMagic, sizeof(kCkptMagic));
  uint64_t len = mtext.size();
  char lenbuf[8];
  std::memcpy(lenbuf, &len, 8);
  blob.append(lenbuf, 8);
  blob += mtext;
  auto append_tensor = [&blob](const Tensor& t) {
    blob.append(reinterpret_cast<const char*>(t.ptr()), t.numel() * sizeof(double));
  };
  for (const auto& [name, t] : store_.params()) append_tensor(t);
  for (const auto& [name, t] : store_.state()) append_tensor(t);
  atomic_write_file(path, blob);
}

std::unique_ptr<TextDetector> TextDetector::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCkptMagic, 8) != 0)
    throw DataError(path + ": not a ptdet checkpoint");
  uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), 8);
  std::string mtext(len, '\0');
  in.read(mtext.data(), static_cast<std::streamsize>(len));
  if (!in) throw DataError(path + ": truncated checkpoint manifest");
  json manifest = json::parse(mtext);
  ModelConfig cfg = ModelConfig::from_json(manifest.at("config").dump());
  auto model = std::make_unique<TextDetector>(cfg, /*seed=*/0);

  auto read_group = [&](const json& listed, std::vector<std::pair<std::string, Tensor>>& group,
                        const char* what) {
    require(listed.size() == group.size(),
            path + ": checkpoint " + what + " count mismatch");
    for (size_t i = 0; i < group.size(); ++i) {
      const std::string name = listed[i].at("name").get<std::string>();
      std::vector<int> shape = listed[i].at("shape").get<std::vector<int>>();
      auto& [gname, t] = group[i];
      if (name != gname || shape != t.shape)
        throw DataError(path + ": checkpoint entry '" + name + "' does not match model '" +
                        gname + "'");
      in.read(reinterpret_cast<char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(double)));
      if (!in) throw DataError(path + ": truncated checkpoint data at '" + name + "'");
    }
  };
  read_group(manifest.at("params"), model->store_.params(), "parameter");
  read_group(manifest.at("state"), model->store_.state(), "state");
  return model;
}

}  // namespace ptdet
