#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "crowd/config.hpp"
#include "crowd/errors.hpp"
#include "crowd/io.hpp"
#include "crowd/model.hpp"
#include "crowd/trainer.hpp"

using namespace crowd;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(std::uint64_t seed = 5) {
  RunConfig cfg;
  cfg.model.stage_channels = {2, 2, 2, 2, 2};
  cfg.model.decoder_c1 = 3;
  cfg.model.decoder_c2 = 2;
  cfg.model.encoder_layers = 1;
  cfg.model.hidden = 4;
  cfg.model.heads = 2;
  cfg.model.ffn = 4;
  cfg.model.proj_dim = 2;
  cfg.train_count = 8;
  cfg.val_count = 3;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  cfg.scene.count_min = 0;
  cfg.scene.count_max = 6;
  cfg.sinkhorn.max_iters = 200;
  cfg.seed = seed;
  return cfg;
}

std::string fresh_dir(const std::string& name) {
  fs::path p = fs::path("trainer_test_tmp") / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in),
                     std::istreambuf_iterator<char>());
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) out.push_back(line);
  return out;
}

}  // namespace

TEST_CASE("generate_dataset: layout, split sizes, reproducibility") {
  RunConfig cfg = tiny_run();
  std::string d1 = fresh_dir("gen_a");
  std::string d2 = fresh_dir("gen_b");
  generate_dataset(cfg, d1);
  generate_dataset(cfg, d2);

  DatasetIndex idx = read_split(d1);
  CHECK(idx.train.size() == 8);
  CHECK(idx.val.size() == 3);
  for (int i = 0; i < 11; ++i) {
    CHECK(fs::exists(d1 + "/images/" + index_name(i) + ".pgm"));
    CHECK(fs::exists(d1 + "/points/" + index_name(i) + ".csv"));
  }
  CHECK(slurp(d1 + "/split.txt") == slurp(d2 + "/split.txt"));
  CHECK(slurp(d1 + "/images/0004.pgm") == slurp(d2 + "/images/0004.pgm"));
  CHECK(slurp(d1 + "/points/0004.csv") == slurp(d2 + "/points/0004.csv"));

  // Different master seed changes the scenes.
  RunConfig other = tiny_run(6);
  std::string d3 = fresh_dir("gen_c");
  generate_dataset(other, d3);
  CHECK(slurp(d1 + "/images/0004.pgm") != slurp(d3 + "/images/0004.pgm"));
}

TEST_CASE("train_model: artifacts, log schema, one row per epoch") {
  RunConfig cfg = tiny_run();
  std::string data = fresh_dir("train_data");
  generate_dataset(cfg, data);
  std::string out = fresh_dir("train_out");
  TrainResult res = train_model(cfg, data, out);

  CHECK(fs::exists(out + "/config.txt"));
  CHECK(fs::exists(out + "/model_init.bin"));
  CHECK(fs::exists(out + "/model_init.manifest"));
  CHECK(fs::exists(out + "/model.bin"));
  CHECK(fs::exists(out + "/skips.log"));

  auto log_lines = lines_of(slurp(out + "/log.csv"));
  REQUIRE(log_lines.size() == 2);  // header + 1 epoch
  CHECK(log_lines[0] == "epoch,L_d,L_mp,L_cl,total,val_mae,val_rmse");
  auto row = split_csv_line(log_lines[1]);
  REQUIRE(row.size() == 7);
  CHECK(row[0] == "1");
  CHECK(res.best_epoch == 1);
  CHECK(res.init_val_mae >= 0.0);

  // The saved config reproduces the run configuration.
  RunConfig back = parse_config_file(out + "/config.txt");
  CHECK(config_to_text(back) == config_to_text(cfg));
}

TEST_CASE("train_model: deterministic per seed, sensitive to seed") {
  RunConfig cfg = tiny_run();
  cfg.epochs = 2;
  std::string data = fresh_dir("det_data");
  generate_dataset(cfg, data);
  std::string o1 = fresh_dir("det_run1");
  std::string o2 = fresh_dir("det_run2");
  train_model(cfg, data, o1);
  train_model(cfg, data, o2);
  CHECK(slurp(o1 + "/log.csv") == slurp(o2 + "/log.csv"));
  CHECK(slurp(o1 + "/model.bin") == slurp(o2 + "/model.bin"));

  RunConfig other = tiny_run(99);
  other.epochs = 2;
  std::string o3 = fresh_dir("det_run3");
  train_model(other, data, o3);
  CHECK(slurp(o1 + "/log.csv") != slurp(o3 + "/log.csv"));
}

TEST_CASE("train_model: alpha=beta=0 zeroes the module columns") {
  RunConfig cfg = tiny_run();
  cfg.weights.alpha = 0.0;
  cfg.weights.beta = 0.0;
  std::string data = fresh_dir("zero_data");
  generate_dataset(cfg, data);
  std::string out = fresh_dir("zero_out");
  train_model(cfg, data, out);
  auto row = split_csv_line(lines_of(slurp(out + "/log.csv"))[1]);
  CHECK(row[2] == "0");
  CHECK(row[3] == "0");
}

TEST_CASE("train_model: mask ratio 0 gives an identically zero L_mp column") {
  RunConfig cfg = tiny_run();
  cfg.mask_ratio = 0.0;  // alpha stays > 0
  std::string data = fresh_dir("ratio0_data");
  generate_dataset(cfg, data);
  std::string out = fresh_dir("ratio0_out");
  train_model(cfg, data, out);
  auto row = split_csv_line(lines_of(slurp(out + "/log.csv"))[1]);
  CHECK(row[2] == "0");
  CHECK(row[3] != "0");  // the contrastive term still trains
}

TEST_CASE("train_model: empty scenes train and evaluate, skips are logged") {
  RunConfig cfg = tiny_run();
  cfg.scene.count_min = 0;
  cfg.scene.count_max = 0;  // every image is headless
  cfg.train_count = 4;
  cfg.val_count = 2;
  std::string data = fresh_dir("empty_data");
  generate_dataset(cfg, data);
  std::string out = fresh_dir("empty_out");
  TrainResult res = train_model(cfg, data, out);
  CHECK(res.final_val_mae >= 0.0);

  std::string skips = slurp(out + "/skips.log");
  CHECK(skips.find("ot skip") != std::string::npos);
  CHECK(skips.find("no target cells") != std::string::npos);

  Model m(cfg.model, 1);
  load_checkpoint(m, out + "/model");
  EvalSummary ev = evaluate_model(m, cfg, data, true);
  CHECK(ev.images == 2);
  CHECK(ev.fn == 0);  // no ground-truth points to miss
}

TEST_CASE("best checkpoint reproduces its logged validation MAE") {
  RunConfig cfg = tiny_run();
  cfg.epochs = 2;
  std::string data = fresh_dir("best_data");
  generate_dataset(cfg, data);
  std::string out = fresh_dir("best_out");
  TrainResult res = train_model(cfg, data, out);

  Model m(cfg.model, 12345);  // init is irrelevant, weights are loaded
  load_checkpoint(m, out + "/model");
  EvalSummary ev = evaluate_model(m, cfg, data, true, out + "/eval_val.csv");
  CHECK(ev.mae == res.best_val_mae);

  auto csv = lines_of(slurp(out + "/eval_val.csv"));
  CHECK(csv[0] == "index,gt_count,pred_count,abs_err,tp,fp,fn");
  REQUIRE(csv.size() == 1 + 3 + 1);  // header + 3 val images + summary
  CHECK(split_csv_line(csv.back())[0] == "summary");

  // Evaluation is deterministic too.
  evaluate_model(m, cfg, data, true, out + "/eval_val2.csv");
  CHECK(slurp(out + "/eval_val.csv") == slurp(out + "/eval_val2.csv"));
}

TEST_CASE("evaluate_oracle: exact counts and perfect F1 on separated points") {
  RunConfig cfg = tiny_run();
  cfg.scene.image_size = 128;
  cfg.scene.count_min = 3;
  cfg.scene.count_max = 8;
  cfg.scene.min_spacing = 24.0;  // occupied label cells are never adjacent
  cfg.train_count = 2;
  cfg.val_count = 6;
  std::string data = fresh_dir("oracle_data");
  generate_dataset(cfg, data);

  EvalSummary ev = evaluate_oracle(cfg, data, true, "");
  CHECK(ev.mae == 0.0);
  CHECK(ev.rmse == 0.0);
  CHECK(ev.f1 == 1.0);
  CHECK(ev.fp == 0);
  CHECK(ev.fn == 0);

  // Recall is non-decreasing in the match radius: at sigma=4 a cell-center
  // peak can sit farther than sigma from its point, at 8 it never does.
  RunConfig s4 = cfg;
  s4.eval_sigma = 4.0;
  RunConfig s16 = cfg;
  s16.eval_sigma = 16.0;
  EvalSummary e4 = evaluate_oracle(s4, data, true, "");
  EvalSummary e16 = evaluate_oracle(s16, data, true, "");
  CHECK(e4.recall <= ev.recall);
  CHECK(ev.recall <= e16.recall);
  CHECK(e16.f1 == 1.0);
}

TEST_CASE("evaluate_model: empty split is EmptyInput") {
  RunConfig cfg = tiny_run();
  cfg.train_count = 2;
  cfg.val_count = 0;
  std::string data = fresh_dir("noval_data");
  generate_dataset(cfg, data);
  Model m(cfg.model, 1);
  CHECK_THROWS_AS(evaluate_model(m, cfg, data, true), EmptyInput);
  CHECK_THROWS_AS(train_model(cfg, data, fresh_dir("noval_out")), EmptyInput);
}

TEST_CASE("ablate: sweep rows, medians, unknown axis") {
  RunConfig cfg = tiny_run();
  cfg.train_count = 4;
  cfg.val_count = 2;
  std::string data = fresh_dir("ablate_data");
  generate_dataset(cfg, data);

  CHECK_THROWS_AS(
      ablate(cfg, "optimizer", {"adam"}, {1}, data, fresh_dir("ablate_bad")),
      UnknownAxis);
  CHECK_THROWS_AS(
      ablate(cfg, "modules", {"everything"}, {1}, data, fresh_dir("ablate_bad2")),
      ConfigError);

  std::string out = fresh_dir("ablate_out");
  std::vector<AblationRow> rows =
      ablate(cfg, "mask_ratio", {"0", "0.25"}, {1, 2}, data, out);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].axis == "mask_ratio");
  CHECK(rows[0].value == "0");
  CHECK(rows[0].seed == 1);
  CHECK(rows[3].value == "0.25");
  CHECK(rows[3].seed == 2);
  CHECK(fs::exists(out + "/mask_ratio_0.25_s2/model.bin"));

  std::string csv = ablation_csv(rows);
  auto csv_lines = lines_of(csv);
  CHECK(csv_lines[0] == "axis,value,seed,val_mae,val_rmse,f1");
  REQUIRE(csv_lines.size() == 1 + 4 + 2);  // header, rows, one median per value
  CHECK(split_csv_line(csv_lines[5])[2] == "median");
  CHECK(split_csv_line(csv_lines[6])[2] == "median");

  // Same sweep again: identical metric rows (training is deterministic).
  std::vector<AblationRow> again =
      ablate(cfg, "mask_ratio", {"0", "0.25"}, {1, 2}, data,
             fresh_dir("ablate_out2"));
  CHECK(ablation_csv(again) == csv);
}
