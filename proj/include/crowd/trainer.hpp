#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crowd/config.hpp"
#include "crowd/model.hpp"

namespace crowd {

// Writes train_count + val_count scenes into `dir` (images/, points/,
// split.txt). Per-sample seeds derive from cfg.seed, so the split and every
// pixel are stable across runs.
void generate_dataset(const RunConfig& cfg, const std::string& dir);

struct EvalSummary {
  int images = 0;
  double mae = 0.0, rmse = 0.0;
  long long tp = 0, fp = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Counting path (no contrastive head) over one split, aggregating count and
// localization metrics. A non-empty csv_path gets one row per image plus a
// final summary row.
EvalSummary evaluate_model(const Model& model, const RunConfig& cfg,
                           const std::string& data_dir, bool val_split,
                           const std::string& csv_path = "");

// Same protocol with ground-truth-rendered density maps standing in for the
// model: the count error is exactly zero and every annotated cell carries a
// unit peak.
EvalSummary evaluate_oracle(const RunConfig& cfg, const std::string& data_dir,
                            bool val_split, const std::string& csv_path = "");

struct TrainResult {
  double init_val_mae = 0.0, init_val_rmse = 0.0;  // untrained model
  double best_val_mae = 0.0, best_val_rmse = 0.0;
  int best_epoch = 0;  // 1-based
  double final_val_mae = 0.0;
};

// Full run: writes config.txt and model_init.(bin|manifest) up front, then
// log.csv (exactly cfg.epochs rows: epoch,L_d,L_mp,L_cl,total,val_mae,
// val_rmse), model.(bin|manifest) at the best validation MAE, and skips.log
// with every degenerate-term skip. Deterministic per config.
TrainResult train_model(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& out_dir);

struct AblationRow {
  std::string axis;
  std::string value;
  std::uint64_t seed = 0;
  double val_mae = 0.0;
  double val_rmse = 0.0;
  double f1 = 0.0;
};

// Trains base with `axis` set to each value, once per seed, on a shared
// dataset; evaluates each best checkpoint on val. Axes: mask_ratio,
// mask_strategy, encoder_layers, clm_variant, dilation, alpha, beta,
// modules (none|mpm|clm|both). Throws UnknownAxis otherwise.
std::vector<AblationRow> ablate(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::vector<std::uint64_t>& seeds,
                                const std::string& data_dir,
                                const std::string& out_dir);

// Detail rows plus one "median" row per value (median of val_mae over seeds).
std::string ablation_csv(const std::vector<AblationRow>& rows);

}  // namespace crowd
