// Command-line front end: dataset generation, training, evaluation,
// ablation sweeps, and a built-in selftest.
//
// Exit codes: 0 success, 1 runtime failure (including selftest failures),
// 2 configuration/usage errors, 3 data errors (missing or malformed files).

#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "crowd/checks.hpp"
#include "crowd/config.hpp"
#include "crowd/errors.hpp"
#include "crowd/io.hpp"
#include "crowd/model.hpp"
#include "crowd/trainer.hpp"

namespace {

using namespace crowd;

std::string trimmed(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

// Flags shared by the data-touching subcommands. Values stay strings so the
// config layer owns all parsing, range checks, and error wording.
struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed, epochs, mask_ratio, mask_strategy, clm_variant, dilation,
      alpha, beta, sigma;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path,
                  "key=value config file (built-in defaults otherwise)");
  cmd->add_option("--set", o.sets,
                  "override any config key, e.g. --set train.lr=0.0005 "
                  "(repeatable)");
  cmd->add_option("--seed", o.seed, "run seed");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--mask-ratio", o.mask_ratio,
                  "fraction of 1/32-scale cells masked for the consistency "
                  "loss (0 disables)");
  cmd->add_option("--mask-strategy", o.mask_strategy, "random|block|grid");
  cmd->add_option("--clm-variant", o.clm_variant,
                  "contrastive pooling: single_global|single_local|"
                  "cross_global|cross_local|cross_global_collection");
  cmd->add_option("--dilation", o.dilation,
                  "target-label dilation: 1|3|5|adaptive");
  cmd->add_option("--alpha", o.alpha, "consistency loss weight");
  cmd->add_option("--beta", o.beta, "contrastive loss weight");
  cmd->add_option("--sigma", o.sigma, "evaluation match radius, pixels");
}

RunConfig resolve(const CommonOpts& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) cfg = parse_config_file(o.config_path);
  for (const std::string& kv : o.sets) {
    std::size_t eq = kv.find('=');
    if (eq == std::string::npos)
      throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_key(cfg, trimmed(kv.substr(0, eq)), trimmed(kv.substr(eq + 1)),
                   "--set " + kv);
  }
  struct FlagKey {
    const std::string* value;
    const char* key;
    const char* flag;
  };
  const FlagKey flags[] = {
      {&o.seed, "seed", "--seed"},
      {&o.epochs, "train.epochs", "--epochs"},
      {&o.mask_ratio, "mask.ratio", "--mask-ratio"},
      {&o.mask_strategy, "mask.strategy", "--mask-strategy"},
      {&o.clm_variant, "clm.variant", "--clm-variant"},
      {&o.dilation, "clm.dilation", "--dilation"},
      {&o.alpha, "loss.alpha", "--alpha"},
      {&o.beta, "loss.beta", "--beta"},
      {&o.sigma, "eval.sigma", "--sigma"},
  };
  for (const FlagKey& fk : flags)
    if (!fk.value->empty()) set_config_key(cfg, fk.key, *fk.value, fk.flag);
  cfg.validate();
  return cfg;
}

int run(int argc, char** argv) {
  CLI::App app{
      "Synthetic crowd-counting workbench: scene generation, training with "
      "masked-feature and contrastive regularizers, evaluation, ablations."};
  app.require_subcommand(1);

  // --- gen -----------------------------------------------------------------
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  CommonOpts gen_o;
  add_common(gen, gen_o);
  std::string gen_out;
  gen->add_option("--out", gen_out, "dataset directory to create")->required();
  gen->callback([&]() {
    RunConfig cfg = resolve(gen_o);
    generate_dataset(cfg, gen_out);
    std::printf("wrote %d train + %d val scenes (%dpx) under %s\n",
                cfg.train_count, cfg.val_count, cfg.scene.image_size,
                gen_out.c_str());
  });

  // --- train ---------------------------------------------------------------
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  CommonOpts tr_o;
  add_common(train, tr_o);
  std::string tr_data, tr_out;
  train->add_option("--data", tr_data, "dataset directory (from gen)")
      ->required();
  train->add_option("--out", tr_out, "run directory to create")->required();
  train->callback([&]() {
    RunConfig cfg = resolve(tr_o);
    TrainResult r = train_model(cfg, tr_data, tr_out);
    std::printf("initial val MAE %.4f  RMSE %.4f\n", r.init_val_mae,
                r.init_val_rmse);
    std::printf("best    val MAE %.4f  RMSE %.4f  (epoch %d)\n",
                r.best_val_mae, r.best_val_rmse, r.best_epoch);
    std::printf("final   val MAE %.4f\n", r.final_val_mae);
    std::printf(
        "artifacts: %s/{model.bin,model.manifest,log.csv,config.txt,"
        "skips.log}\n",
        tr_out.c_str());
  });

  // --- eval ----------------------------------------------------------------
  auto* eval = app.add_subcommand(
      "eval", "evaluate a checkpoint (or the annotation oracle) on a split");
  CommonOpts ev_o;
  add_common(eval, ev_o);
  std::string ev_data, ev_model, ev_out, ev_split = "val";
  bool ev_oracle = false;
  eval->add_option("--data", ev_data, "dataset directory")->required();
  eval->add_option("--model", ev_model,
                   "checkpoint prefix as written by train, e.g. RUN/model");
  eval->add_option("--out", ev_out, "write per-image metrics CSV here");
  eval->add_option("--split", ev_split, "val|train (default val)")
      ->check(CLI::IsMember({"val", "train"}));
  eval->add_flag("--oracle", ev_oracle,
                 "score ground-truth-rendered density maps instead of a model");
  eval->callback([&]() {
    RunConfig cfg = resolve(ev_o);
    bool val = ev_split == "val";
    EvalSummary s;
    if (ev_oracle) {
      s = evaluate_oracle(cfg, ev_data, val, ev_out);
    } else {
      if (ev_model.empty())
        throw ConfigError("eval: pass --model PREFIX or --oracle");
      Model model(cfg.model, 0);
      load_checkpoint(model, ev_model);
      s = evaluate_model(model, cfg, ev_data, val, ev_out);
    }
    std::printf("%s split, %d images%s\n", ev_split.c_str(), s.images,
                ev_oracle ? " (oracle)" : "");
    std::printf("count:        MAE %.4f  RMSE %.4f\n", s.mae, s.rmse);
    std::printf(
        "localization: precision %.4f  recall %.4f  F1 %.4f  "
        "(radius %g px; tp %lld fp %lld fn %lld)\n",
        s.precision, s.recall, s.f1, cfg.eval_sigma, s.tp, s.fp, s.fn);
    if (!ev_out.empty()) std::printf("per-image rows: %s\n", ev_out.c_str());
  });

  // --- ablate ----------------------------------------------------------------
  auto* ab = app.add_subcommand(
      "ablate", "train one run per (value, seed) along a config axis");
  CommonOpts ab_o;
  add_common(ab, ab_o);
  std::string ab_data, ab_out, ab_axis;
  std::vector<std::string> ab_values;
  std::vector<std::uint64_t> ab_seeds;
  ab->add_option("--data", ab_data, "dataset directory shared by all runs")
      ->required();
  ab->add_option("--out", ab_out, "sweep directory to create")->required();
  ab->add_option("--axis", ab_axis,
                 "mask_ratio|mask_strategy|encoder_layers|clm_variant|"
                 "dilation|alpha|beta|modules")
      ->required();
  ab->add_option("--values", ab_values, "comma-separated settings")
      ->required()
      ->delimiter(',');
  ab->add_option("--seeds", ab_seeds,
                 "comma-separated run seeds (default: the config seed)")
      ->delimiter(',');
  ab->callback([&]() {
    RunConfig cfg = resolve(ab_o);
    std::vector<std::uint64_t> seeds =
        ab_seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : ab_seeds;
    std::vector<AblationRow> rows =
        ablate(cfg, ab_axis, ab_values, seeds, ab_data, ab_out);
    std::string csv = ablation_csv(rows);
    std::string csv_path =
        (std::filesystem::path(ab_out) / "ablate.csv").string();
    std::ofstream f(csv_path, std::ios::binary);
    f << csv;
    if (!f) throw IoError("cannot write " + csv_path);
    f.close();
    std::fputs(csv.c_str(), stdout);
    std::printf("table: %s (runs under %s)\n", csv_path.c_str(),
                ab_out.c_str());
  });

  // --- selftest --------------------------------------------------------------
  auto* st = app.add_subcommand(
      "selftest", "quick gradient, transport, matching, and format checks");
  std::string st_scratch;
  st->add_option("--scratch", st_scratch,
                 "scratch directory (default: under the system temp dir)");
  int st_failures = -1;
  st->callback([&]() {
    if (st_scratch.empty())
      st_scratch =
          (std::filesystem::temp_directory_path() / "crowd-selftest").string();
    std::vector<CheckResult> rows;
    for (CheckResult& r : gradient_checks(3)) rows.push_back(std::move(r));
    rows.push_back(transport_cost_check(20));
    rows.push_back(transport_gradient_check(3));
    for (CheckResult& r : loss_identity_checks()) rows.push_back(std::move(r));
    rows.push_back(matching_check(20));
    for (CheckResult& r : io_checks(st_scratch)) rows.push_back(std::move(r));
    st_failures = 0;
    for (const CheckResult& r : rows) {
      std::printf("[%s] %-55s %s\n", r.pass ? " ok " : "FAIL", r.name.c_str(),
                  r.detail.c_str());
      if (!r.pass) ++st_failures;
    }
    std::printf("%zu checks, %d failed\n", rows.size(), st_failures);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  return st_failures > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const UnknownAxis& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const ManifestMismatch& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const EmptyInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
