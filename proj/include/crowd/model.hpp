#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "crowd/ops.hpp"
#include "crowd/tensor.hpp"

namespace crowd {

// Architecture hyperparameters. Defaults give the desk-scale network:
// five two-conv stages, 1/8 and 1/32 feature taps, a 4-layer pre-norm
// transformer over the 1/32 grid, and a [256,128,1] regression decoder.
struct ModelConfig {
  std::vector<int> stage_channels{16, 32, 64, 64, 64};
  int decoder_c1 = 256;
  int decoder_c2 = 128;
  int encoder_layers = 4;  // transformer depth (0 = projection + positions only)
  int hidden = 512;        // transformer width C_h
  int heads = 2;
  int ffn = 2048;
  int proj_dim = 64;  // pixel-embedding dimension D of the contrastive head

  int c8() const { return stage_channels[3]; }         // 1/8-scale channels
  int cdeep() const { return stage_channels.back(); }  // 1/32-scale channels C
  int cf() const { return c8() + cdeep(); }            // fused channels

  void validate() const;  // throws ConfigError
};

struct FeaturePyramid {
  Tensor f8;  // C8 x H/8 x W/8
  Tensor p5;  // C  x H/32 x W/32
};

// Fixed 2-D sinusoidal positional table for an h x w token grid, shape
// (h*w) x dim. First half of the channels encodes the column, second half
// the row. Constant (no gradient).
Tensor positional_table(int h, int w, int dim);

// The full network: owns every learnable tensor in a named, ordered registry
// (the checkpoint format serializes the registry in order).
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  const std::vector<std::pair<std::string, Tensor>>& params() const {
    return params_;
  }
  const Tensor& param(const std::string& name) const;
  void set_param(const std::string& name, const Tensor& t);  // shape-checked
  std::size_t param_count() const;  // total scalar count

  // Backbone: grayscale image 1xHxW (H, W multiples of 32, >= 64) to the
  // 1/8- and 1/32-scale feature maps.
  FeaturePyramid encode(const Tensor& image) const;

  // Transformer encoder over tokens. `tokens` is M x C rows of 1/32-scale
  // feature vectors (already masked or not); `blocks` partitions the rows
  // into independent sequences (attention never crosses a block boundary),
  // so several images/branches share one pass through the linear layers.
  // `pos` is the (block-local) positional table, added after projection.
  Tensor encode_tokens(const Tensor& tokens, const Tensor& pos,
                       const std::vector<int>& blocks) const;

  // Single-sequence convenience wrapper: p5_flat is C x N (channel rows),
  // output is N x hidden.
  Tensor encode_sequence(const Tensor& p5_flat, const Tensor& pos) const;

  // Learned map from transformer width back to C (shared by the counting
  // path and the feature-reconstruction loss variant). N x hidden -> N x C.
  Tensor readout(const Tensor& fd) const;

  // Bilinear x4 upsample of the 1/32 map, channel-concatenated with f8.
  Tensor fuse_to_f8(const Tensor& fd_spatial, const Tensor& f8) const;

  // Regression decoder: fused map to a non-negative 1 x h x w density map.
  Tensor decode(const Tensor& fused) const;

  // Contrastive projection head: fused map to D x h x w pixel embeddings.
  Tensor project(const Tensor& fused) const;

 private:
  Tensor add_param(const std::string& name, const Shape& shape, double fan_in,
                   double scale = 1.0);
  Tensor add_const_param(const std::string& name, const Shape& shape, double v);
  Tensor conv_block(const Tensor& x, const std::string& prefix, int pad) const;

  ModelConfig cfg_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::unordered_map<std::string, std::size_t> index_;
  std::uint64_t seed_ = 0;
};

}  // namespace crowd
