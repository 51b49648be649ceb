#include "crowd/model.hpp"

#include <cmath>

#include "crowd/rng.hpp"

namespace crowd {

void ModelConfig::validate() const {
  if (stage_channels.size() != 5)
    throw ConfigError("stage_channels must list 5 stages, got " +
                      std::to_string(stage_channels.size()));
  for (int c : stage_channels)
    if (c < 1) throw ConfigError("stage channel counts must be >= 1");
  if (decoder_c1 < 1 || decoder_c2 < 1)
    throw ConfigError("decoder channel counts must be >= 1");
  if (encoder_layers < 0) throw ConfigError("encoder_layers must be >= 0");
  if (hidden < 4 || hidden % 4 != 0)
    throw ConfigError("hidden size must be a positive multiple of 4");
  if (heads < 1 || hidden % heads != 0)
    throw ConfigError("hidden size must be divisible by the head count");
  if (ffn < 1) throw ConfigError("ffn size must be >= 1");
  if (proj_dim < 1) throw ConfigError("proj_dim must be >= 1");
}

Tensor positional_table(int h, int w, int dim) {
  if (h < 1 || w < 1) throw BadSize("positional_table: empty grid");
  if (dim < 4 || dim % 4 != 0)
    throw BadSize("positional_table: dim must be a positive multiple of 4");
  int half = dim / 2;
  std::vector<double> out(static_cast<std::size_t>(h) * w * dim);
  auto fill_1d = [&](double* row, double coord) {
    for (int i = 0; i < half / 2; ++i) {
      double freq = std::pow(10000.0, -2.0 * i / half);
      row[2 * i] = std::sin(coord * freq);
      row[2 * i + 1] = std::cos(coord * freq);
    }
  };
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double* row = out.data() + (static_cast<std::size_t>(r) * w + c) * dim;
      fill_1d(row, static_cast<double>(c));         // column code
      fill_1d(row + half, static_cast<double>(r));  // row code
    }
  return Tensor::from_data({h * w, dim}, std::move(out));
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  const auto& ch = cfg_.stage_channels;

  int in_c = 1;
  for (int s = 0; s < 5; ++s) {
    std::string p = "backbone.s" + std::to_string(s + 1);
    add_param(p + ".c1.w", {ch[static_cast<std::size_t>(s)], in_c, 3, 3}, in_c * 9.0);
    add_const_param(p + ".c1.b", {ch[static_cast<std::size_t>(s)]}, 0.0);
    add_param(p + ".c2.w",
              {ch[static_cast<std::size_t>(s)], ch[static_cast<std::size_t>(s)], 3, 3},
              ch[static_cast<std::size_t>(s)] * 9.0);
    add_const_param(p + ".c2.b", {ch[static_cast<std::size_t>(s)]}, 0.0);
    in_c = ch[static_cast<std::size_t>(s)];
  }

  int C = cfg_.cdeep(), H = cfg_.hidden, F = cfg_.ffn;
  // Residual-branch projections (attention output, second ffn matrix) start
  // damped by 1/sqrt(2*layers) so the residual stream keeps roughly unit
  // scale at depth; undamped, the stacked additions inflate the deep-feature
  // scale and the decoder inherits a density map hundreds of counts heavy.
  double res_scale =
      cfg_.encoder_layers > 0
          ? 1.0 / std::sqrt(2.0 * static_cast<double>(cfg_.encoder_layers))
          : 1.0;
  add_param("mpm.proj.w", {C, H}, C);
  add_const_param("mpm.proj.b", {H}, 0.0);
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    std::string p = "mpm.layer" + std::to_string(l);
    add_const_param(p + ".ln1.g", {H}, 1.0);
    add_const_param(p + ".ln1.b", {H}, 0.0);
    for (const char* m : {"wq", "wk", "wv", "wo"}) {
      bool residual_out = m[1] == 'o';
      add_param(p + ".attn." + m, {H, H}, H, residual_out ? res_scale : 1.0);
      add_const_param(p + ".attn.b" + std::string(1, m[1]), {H}, 0.0);
    }
    add_const_param(p + ".ln2.g", {H}, 1.0);
    add_const_param(p + ".ln2.b", {H}, 0.0);
    add_param(p + ".ffn.w1", {H, F}, H);
    add_const_param(p + ".ffn.b1", {F}, 0.0);
    add_param(p + ".ffn.w2", {F, H}, F, res_scale);
    add_const_param(p + ".ffn.b2", {H}, 0.0);
  }
  if (cfg_.encoder_layers > 0) {
    // Final row normalization of the residual stream (standard for pre-norm
    // stacks). Besides conditioning the counting read-out, it bounds the
    // encodings that the masked-prediction distance compares, which keeps
    // that objective from inflating the stream without limit.
    add_const_param("mpm.lnf.g", {H}, 1.0);
    add_const_param("mpm.lnf.b", {H}, 0.0);
  }
  add_param("mpm.readout.w", {H, C}, H);
  add_const_param("mpm.readout.b", {C}, 0.0);

  int cf = cfg_.cf();
  add_param("decoder.c1.w", {cfg_.decoder_c1, cf, 3, 3}, cf * 9.0);
  add_const_param("decoder.c1.b", {cfg_.decoder_c1}, 0.0);
  add_param("decoder.c2.w", {cfg_.decoder_c2, cfg_.decoder_c1, 3, 3},
            cfg_.decoder_c1 * 9.0);
  add_const_param("decoder.c2.b", {cfg_.decoder_c2}, 0.0);
  // The density head starts near zero on purpose: the initial predicted mass
  // sits well below any plausible crowd count, so the sign-shaped early count
  // gradients push the map upward for almost every image.
  add_param("decoder.c3.w", {1, cfg_.decoder_c2, 1, 1}, cfg_.decoder_c2, 0.01);
  add_const_param("decoder.c3.b", {1}, 0.0);

  int D = cfg_.proj_dim;
  add_param("clm.c1.w", {D, cf, 3, 3}, cf * 9.0);
  add_const_param("clm.c1.b", {D}, 0.0);
  add_param("clm.c2.w", {D, D, 1, 1}, D);
  add_const_param("clm.c2.b", {D}, 0.0);
}

Tensor Model::add_param(const std::string& name, const Shape& shape,
                        double fan_in, double scale) {
  // He-style fan-in scaling; one stream seeded per tensor so the layout of
  // earlier tensors never shifts later draws.
  Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(params_.size()) + 1));
  double stddev = scale * std::sqrt(2.0 / fan_in);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.normal() * stddev;
  Tensor t = Tensor::from_data(shape, std::move(v), true);
  index_[name] = params_.size();
  params_.emplace_back(name, t);
  return t;
}

Tensor Model::add_const_param(const std::string& name, const Shape& shape,
                              double v) {
  Tensor t = Tensor::full(shape, v, true);
  index_[name] = params_.size();
  params_.emplace_back(name, t);
  return t;
}

const Tensor& Model::param(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  return params_[it->second].second;
}

void Model::set_param(const std::string& name, const Tensor& t) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter: " + name);
  if (t.shape() != params_[it->second].second.shape())
    throw ShapeMismatch("set_param " + name + ": " + shape_str(t.shape()) +
                        " vs " + shape_str(params_[it->second].second.shape()));
  params_[it->second].second = t;
}

std::size_t Model::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

Tensor Model::conv_block(const Tensor& x, const std::string& prefix,
                         int pad) const {
  Tensor h = relu(conv2d(x, param(prefix + ".c1.w"), param(prefix + ".c1.b"), 1, pad));
  return relu(conv2d(h, param(prefix + ".c2.w"), param(prefix + ".c2.b"), 1, pad));
}

FeaturePyramid Model::encode(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(0) != 1)
    throw ShapeMismatch("encode expects a 1xHxW image, got " +
                        shape_str(image.shape()));
  int h = image.dim(1), w = image.dim(2);
  if (h < 64 || w < 64 || h % 32 || w % 32)
    throw BadSize("encode: image sides must be multiples of 32 and >= 64, got " +
                  shape_str(image.shape()));
  Tensor s1 = conv_block(image, "backbone.s1", 1);
  Tensor s2 = conv_block(maxpool2x2(s1), "backbone.s2", 1);
  Tensor s3 = conv_block(maxpool2x2(s2), "backbone.s3", 1);
  Tensor f8 = conv_block(maxpool2x2(s3), "backbone.s4", 1);
  Tensor s5 = conv_block(maxpool2x2(f8), "backbone.s5", 1);
  return {f8, maxpool2x2(s5)};
}

Tensor Model::encode_tokens(const Tensor& tokens, const Tensor& pos,
                            const std::vector<int>& blocks) const {
  if (tokens.ndim() != 2 || tokens.dim(1) != cfg_.cdeep())
    throw ShapeMismatch("encode_tokens expects MxC rows, got " +
                        shape_str(tokens.shape()));
  if (blocks.empty()) throw EmptyInput("encode_tokens: no blocks");
  int total = 0;
  for (int b : blocks) {
    if (b < 1) throw BadSize("encode_tokens: empty block");
    if (b != pos.dim(0))
      throw ShapeMismatch("encode_tokens: block length " + std::to_string(b) +
                          " vs positional table " + shape_str(pos.shape()));
    total += b;
  }
  if (total != tokens.dim(0) || pos.dim(1) != cfg_.hidden)
    throw ShapeMismatch("encode_tokens: blocks cover " + std::to_string(total) +
                        " rows of " + std::to_string(tokens.dim(0)));

  Tensor x = add_rowvec(matmul(tokens, param("mpm.proj.w")), param("mpm.proj.b"));
  if (blocks.size() == 1) {
    x = add(x, pos);
  } else {
    std::vector<Tensor> tiles(blocks.size(), pos);
    x = add(x, concat(tiles, 0));
  }

  int nh = cfg_.heads, dh = cfg_.hidden / cfg_.heads;
  double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (int l = 0; l < cfg_.encoder_layers; ++l) {
    std::string p = "mpm.layer" + std::to_string(l);
    Tensor h1 = layer_norm_rows(x, param(p + ".ln1.g"), param(p + ".ln1.b"));
    Tensor q = add_rowvec(matmul(h1, param(p + ".attn.wq")), param(p + ".attn.bq"));
    Tensor k = add_rowvec(matmul(h1, param(p + ".attn.wk")), param(p + ".attn.bk"));
    Tensor v = add_rowvec(matmul(h1, param(p + ".attn.wv")), param(p + ".attn.bv"));

    std::vector<Tensor> block_outs;
    int row0 = 0;
    for (int b : blocks) {
      std::vector<int> idx(static_cast<std::size_t>(b));
      for (int i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = row0 + i;
      Tensor qb = gather_rows(q, idx);
      Tensor kb = gather_rows(k, idx);
      Tensor vb = gather_rows(v, idx);
      std::vector<Tensor> head_outs;
      for (int hd = 0; hd < nh; ++hd) {
        Tensor qh = slice_cols(qb, hd * dh, dh);
        Tensor kh = slice_cols(kb, hd * dh, dh);
        Tensor vh = slice_cols(vb, hd * dh, dh);
        Tensor att = softmax(scale(matmul(qh, transpose2d(kh)), att_scale), 1);
        head_outs.push_back(matmul(att, vh));
      }
      block_outs.push_back(nh == 1 ? head_outs[0] : concat(head_outs, 1));
      row0 += b;
    }
    Tensor o = block_outs.size() == 1 ? block_outs[0] : concat(block_outs, 0);
    x = add(x, add_rowvec(matmul(o, param(p + ".attn.wo")), param(p + ".attn.bo")));

    Tensor h2 = layer_norm_rows(x, param(p + ".ln2.g"), param(p + ".ln2.b"));
    Tensor f = relu(add_rowvec(matmul(h2, param(p + ".ffn.w1")), param(p + ".ffn.b1")));
    x = add(x, add_rowvec(matmul(f, param(p + ".ffn.w2")), param(p + ".ffn.b2")));
  }
  if (cfg_.encoder_layers > 0)
    x = layer_norm_rows(x, param("mpm.lnf.g"), param("mpm.lnf.b"));
  return x;
}

Tensor Model::encode_sequence(const Tensor& p5_flat, const Tensor& pos) const {
  if (p5_flat.ndim() != 2 || p5_flat.dim(0) != cfg_.cdeep())
    throw ShapeMismatch("encode_sequence expects CxN, got " +
                        shape_str(p5_flat.shape()));
  return encode_tokens(transpose2d(p5_flat), pos, {p5_flat.dim(1)});
}

Tensor Model::readout(const Tensor& fd) const {
  if (fd.ndim() != 2 || fd.dim(1) != cfg_.hidden)
    throw ShapeMismatch("readout expects Nxhidden, got " + shape_str(fd.shape()));
  return add_rowvec(matmul(fd, param("mpm.readout.w")), param("mpm.readout.b"));
}

Tensor Model::fuse_to_f8(const Tensor& fd_spatial, const Tensor& f8) const {
  if (fd_spatial.ndim() != 3 || f8.ndim() != 3 ||
      f8.dim(1) != 4 * fd_spatial.dim(1) || f8.dim(2) != 4 * fd_spatial.dim(2))
    throw ShapeMismatch("fuse_to_f8: " + shape_str(fd_spatial.shape()) +
                        " does not upsample x4 onto " + shape_str(f8.shape()));
  return concat({upsample_bilinear(fd_spatial, 4), f8}, 0);
}

Tensor Model::decode(const Tensor& fused) const {
  if (fused.ndim() != 3 || fused.dim(0) != cfg_.cf())
    throw ShapeMismatch("decode expects " + std::to_string(cfg_.cf()) +
                        " fused channels, got " + shape_str(fused.shape()));
  Tensor h = relu(conv2d(fused, param("decoder.c1.w"), param("decoder.c1.b"), 1, 1));
  h = relu(conv2d(h, param("decoder.c2.w"), param("decoder.c2.b"), 1, 1));
  // Absolute value keeps the map non-negative like a ReLU would, but its
  // gradient never vanishes over a whole region: concentration pressure from
  // the transport/variation terms pushes background cells toward zero without
  // ever being able to kill the head for the cells that must grow.
  return abs_val(conv2d(h, param("decoder.c3.w"), param("decoder.c3.b"), 1, 0));
}

Tensor Model::project(const Tensor& fused) const {
  if (fused.ndim() != 3 || fused.dim(0) != cfg_.cf())
    throw ShapeMismatch("project expects " + std::to_string(cfg_.cf()) +
                        " fused channels, got " + shape_str(fused.shape()));
  Tensor h = relu(conv2d(fused, param("clm.c1.w"), param("clm.c1.b"), 1, 1));
  return conv2d(h, param("clm.c2.w"), param("clm.c2.b"), 1, 0);
}

}  // namespace crowd
