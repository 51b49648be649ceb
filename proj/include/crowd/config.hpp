#pragma once

#include <cstdint>
#include <string>

#include "crowd/clm.hpp"
#include "crowd/datagen.hpp"
#include "crowd/losses.hpp"
#include "crowd/model.hpp"
#include "crowd/mpm.hpp"

namespace crowd {

std::string to_string(DensityBand band);
DensityBand band_from_string(const std::string& s);  // ConfigError

// Every knob of a run, serializable to a flat key=value text file. Defaults
// describe the desk-scale reference run: 64px scenes with 0-40 heads, the
// full network, and a 30-epoch Adam schedule.
struct RunConfig {
  std::uint64_t seed = 0;

  ModelConfig model;
  LossWeights weights;
  SinkhornConfig sinkhorn;
  SceneConfig scene = desk_scene();

  int train_count = 200;  // generated dataset split sizes
  int val_count = 50;

  double mask_ratio = 0.15;
  MaskStrategy mask_strategy = MaskStrategy::random;
  ConsistentVariant mpm_variant = ConsistentVariant::masked_vectors;

  ClmVariant clm_variant = ClmVariant::single_global;
  Dilation dilation = Dilation::adaptive;

  double tv_sigma = 1.0;  // cells; <= 0 compares against the raw dot grid

  double lr = 1e-3;
  int epochs = 30;
  int batch_size = 4;

  double eval_sigma = 8.0;        // match radius, pixels
  double peak_threshold = 0.1;    // minimum density of a reported peak
  int peak_neighborhood = 3;      // odd window for the strict-maximum test

  static SceneConfig desk_scene() {
    SceneConfig s;
    s.count_min = 0;
    s.count_max = 40;
    return s;
  }

  void validate() const;  // ConfigError
};

// Applies one "key = value" assignment. Throws ConfigError (unknown key, bad
// value); `where` prefixes the message (file:line or flag name).
void set_config_key(RunConfig& cfg, const std::string& key,
                    const std::string& value, const std::string& where);

// Canonical text form: every key in a fixed order, doubles at full precision.
std::string config_to_text(const RunConfig& cfg);

// Reads a key=value file ('#' comments, blank lines allowed) over `base`.
RunConfig parse_config_text(const std::string& text, const std::string& origin,
                            RunConfig base = RunConfig{});
RunConfig parse_config_file(const std::string& path,
                            RunConfig base = RunConfig{});  // IoError

void write_config_file(const std::string& path, const RunConfig& cfg);

}  // namespace crowd
