#include "crowd/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "crowd/clm.hpp"
#include "crowd/errors.hpp"
#include "crowd/eval.hpp"
#include "crowd/io.hpp"
#include "crowd/losses.hpp"
#include "crowd/mpm.hpp"
#include "crowd/ops.hpp"
#include "crowd/rng.hpp"

namespace fs = std::filesystem;

namespace crowd {

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw IoError("write failure on " + path);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void shuffle_indices(std::vector<int>& v, Rng& rng) {
  for (std::size_t i = 0; i + 1 < v.size(); ++i) {
    std::size_t j = i + rng.next_u64() % (v.size() - i);
    std::swap(v[i], v[j]);
  }
}

struct LoadedSplit {
  std::vector<int> ids;
  std::vector<Sample> samples;
};

LoadedSplit load_split_samples(const std::string& data_dir, bool val_split) {
  DatasetIndex split = read_split(data_dir);
  LoadedSplit out;
  out.ids = val_split ? split.val : split.train;
  out.samples.reserve(out.ids.size());
  for (int id : out.ids) out.samples.push_back(read_dataset_sample(data_dir, id));
  return out;
}

// Counting path: backbone, transformer over the 1/32 tokens, fuse, decode.
// The contrastive projection head never runs here.
struct ImageFwd {
  Tensor p5_flat;  // C x N
  Tensor pos;
  Tensor fd;      // N x hidden, unmasked branch
  Tensor fused;   // Cf x h8 x w8
  Tensor density; // 1 x h8 x w8
  int gh = 0, gw = 0;
};

ImageFwd forward_image(const Model& m, const Tensor& image) {
  ImageFwd f;
  FeaturePyramid pyr = m.encode(image);
  const int c = m.config().cdeep();
  f.gh = pyr.p5.dim(1);
  f.gw = pyr.p5.dim(2);
  f.p5_flat = reshape(pyr.p5, {c, f.gh * f.gw});
  f.pos = positional_table(f.gh, f.gw, m.config().hidden);
  f.fd = m.encode_sequence(f.p5_flat, f.pos);
  Tensor fd_spatial = reshape(transpose2d(m.readout(f.fd)), {c, f.gh, f.gw});
  f.fused = m.fuse_to_f8(fd_spatial, pyr.f8);
  f.density = m.decode(f.fused);
  return f;
}

Tensor density_forward(const Model& m, const Tensor& image) {
  return forward_image(m, image).density;
}

// CNN stage only; the training loop runs it for a whole batch before a single
// shared transformer pass over every sequence the batch needs.
struct ImagePre {
  FeaturePyramid pyr;
  Tensor p5_flat;  // C x N
  int gh = 0, gw = 0;
};

ImagePre pre_encode(const Model& m, const Tensor& image) {
  ImagePre p;
  p.pyr = m.encode(image);
  p.gh = p.pyr.p5.dim(1);
  p.gw = p.pyr.p5.dim(2);
  p.p5_flat = reshape(p.pyr.p5, {m.config().cdeep(), p.gh * p.gw});
  return p;
}

double tensor_sum(const Tensor& t) {
  return std::accumulate(t.value().begin(), t.value().end(), 0.0);
}

EvalSummary eval_core(const LoadedSplit& data, const RunConfig& cfg,
                      const std::function<Tensor(const Sample&)>& density_fn,
                      const std::string& csv_path) {
  if (data.samples.empty())
    throw EmptyInput("the requested split has no samples");
  std::string csv = "index,gt_count,pred_count,abs_err,tp,fp,fn\n";
  std::vector<double> pred_counts, gt_counts;
  MatchResult agg;
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    Tensor d = density_fn(s);
    double pred = tensor_sum(d);
    double gt = static_cast<double>(s.points.size());
    pred_counts.push_back(pred);
    gt_counts.push_back(gt);
    PointList peaks =
        find_local_maxima(d, cfg.peak_threshold, cfg.peak_neighborhood, 8);
    MatchResult m = match_points(peaks, s.points, cfg.eval_sigma);
    agg.tp += m.tp;
    agg.fp += m.fp;
    agg.fn += m.fn;
    csv += index_name(data.ids[i]) + "," + fmt(gt) + "," + fmt(pred) + "," +
           fmt(std::abs(pred - gt)) + "," + std::to_string(m.tp) + "," +
           std::to_string(m.fp) + "," + std::to_string(m.fn) + "\n";
  }
  EvalSummary out;
  out.images = static_cast<int>(data.samples.size());
  std::tie(out.mae, out.rmse) = mae_rmse(pred_counts, gt_counts);
  out.tp = agg.tp;
  out.fp = agg.fp;
  out.fn = agg.fn;
  Prf p = prf(agg);
  out.precision = p.precision;
  out.recall = p.recall;
  out.f1 = p.f1;
  csv += "summary," + std::to_string(out.images) + "," + fmt(out.mae) + "," +
         fmt(out.rmse) + "," + fmt(out.precision) + "," + fmt(out.recall) +
         "," + fmt(out.f1) + "\n";
  if (!csv_path.empty()) write_text(csv_path, csv);
  return out;
}

// Adam on every registry tensor; handles share the model's nodes, so the
// in-place value updates feed the next forward pass directly.
class Adam {
 public:
  Adam(Model& model, double lr) : lr_(lr) {
    for (const auto& [name, t] : model.params())
      slots_.push_back(
          {t, std::vector<double>(t.size(), 0.0), std::vector<double>(t.size(), 0.0)});
  }

  void step() {
    ++steps_;
    const double bc1 = 1.0 - std::pow(0.9, steps_);
    const double bc2 = 1.0 - std::pow(0.999, steps_);
    for (Slot& s : slots_) {
      double* w = s.t.data();
      std::vector<double>& g = s.t.grad();
      double* m = s.m.data();
      double* v = s.v.data();
      const std::size_t n = g.size();
      for (std::size_t i = 0; i < n; ++i) {
        m[i] = 0.9 * m[i] + 0.1 * g[i];
        v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
        w[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + 1e-8);
        // backward accumulates into leaf grads, so each step clears its own
        // input here instead of paying a separate full sweep per batch
        g[i] = 0.0;
      }
    }
  }

 private:
  struct Slot {
    Tensor t;
    std::vector<double> m, v;
  };
  std::vector<Slot> slots_;
  double lr_;
  long steps_ = 0;
};

bool is_cross(ClmVariant v) {
  return v == ClmVariant::cross_global || v == ClmVariant::cross_local ||
         v == ClmVariant::cross_global_collection;
}

void apply_axis(RunConfig& cfg, const std::string& axis,
                const std::string& value) {
  const std::string where = "ablate " + axis;
  if (axis == "mask_ratio")
    set_config_key(cfg, "mask.ratio", value, where);
  else if (axis == "mask_strategy")
    set_config_key(cfg, "mask.strategy", value, where);
  else if (axis == "encoder_layers")
    set_config_key(cfg, "model.encoder_layers", value, where);
  else if (axis == "clm_variant")
    set_config_key(cfg, "clm.variant", value, where);
  else if (axis == "dilation")
    set_config_key(cfg, "clm.dilation", value, where);
  else if (axis == "alpha")
    set_config_key(cfg, "loss.alpha", value, where);
  else if (axis == "beta")
    set_config_key(cfg, "loss.beta", value, where);
  else if (axis == "modules") {
    if (value == "none") {
      cfg.weights.alpha = 0.0;
      cfg.weights.beta = 0.0;
    } else if (value == "mpm") {
      cfg.weights.beta = 0.0;
    } else if (value == "clm") {
      cfg.weights.alpha = 0.0;
    } else if (value != "both") {
      throw ConfigError(where + ": unknown value '" + value +
                        "' (want none, mpm, clm, both)");
    }
  } else {
    throw UnknownAxis(axis +
                      " (want mask_ratio, mask_strategy, encoder_layers, "
                      "clm_variant, dilation, alpha, beta, modules)");
  }
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

void generate_dataset(const RunConfig& cfg, const std::string& dir) {
  cfg.validate();
  if (cfg.train_count + cfg.val_count < 1)
    throw ConfigError("dataset needs at least one sample");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
  DatasetIndex idx;
  for (int i = 0; i < cfg.train_count + cfg.val_count; ++i) {
    SceneConfig sc = cfg.scene;
    sc.seed = mix_seed(cfg.seed, 0xDA7A5E7ull + static_cast<std::uint64_t>(i));
    write_dataset_sample(dir, i, gen_scene(sc));
    (i < cfg.train_count ? idx.train : idx.val).push_back(i);
  }
  write_split(dir, idx);
}

EvalSummary evaluate_model(const Model& model, const RunConfig& cfg,
                           const std::string& data_dir, bool val_split,
                           const std::string& csv_path) {
  LoadedSplit data = load_split_samples(data_dir, val_split);
  return eval_core(
      data, cfg,
      [&](const Sample& s) { return density_forward(model, s.image); },
      csv_path);
}

EvalSummary evaluate_oracle(const RunConfig& cfg, const std::string& data_dir,
                            bool val_split, const std::string& csv_path) {
  LoadedSplit data = load_split_samples(data_dir, val_split);
  return eval_core(
      data, cfg,
      [](const Sample& s) {
        GroundTruth gt =
            make_ground_truth(s.points, s.image.dim(1), s.image.dim(2), 8);
        return Tensor::from_data({1, gt.grid_h, gt.grid_w}, gt.dot_grid);
      },
      csv_path);
}

TrainResult train_model(const RunConfig& cfg, const std::string& data_dir,
                        const std::string& out_dir) {
  cfg.validate();
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  LoadedSplit train = load_split_samples(data_dir, false);
  LoadedSplit val = load_split_samples(data_dir, true);
  if (train.samples.empty())
    throw EmptyInput("no train samples listed in " + data_dir + "/split.txt");
  if (val.samples.empty())
    throw EmptyInput("no val samples listed in " + data_dir + "/split.txt");

  std::vector<GroundTruth> gts;
  gts.reserve(train.samples.size());
  for (const Sample& s : train.samples)
    gts.push_back(
        make_ground_truth(s.points, s.image.dim(1), s.image.dim(2), 8));

  Model model(cfg.model, mix_seed(cfg.seed, 0x30DE1ull));
  write_config_file(out_dir + "/config.txt", cfg);
  save_checkpoint(model, out_dir + "/model_init");

  auto val_metrics = [&] {
    std::vector<double> pc, gc;
    for (const Sample& s : val.samples) {
      pc.push_back(tensor_sum(density_forward(model, s.image)));
      gc.push_back(static_cast<double>(s.points.size()));
    }
    return mae_rmse(pc, gc);
  };
  auto [init_mae, init_rmse] = val_metrics();

  Adam opt(model, cfg.lr);
  std::vector<OtWarmStart> warm(train.samples.size());
  std::vector<std::string> skips;

  // Positional tables depend only on the grid shape; build each once per run.
  std::map<std::pair<int, int>, Tensor> pos_cache;
  auto pos_for = [&](int gh, int gw) -> const Tensor& {
    auto key = std::make_pair(gh, gw);
    auto it = pos_cache.find(key);
    if (it == pos_cache.end())
      it = pos_cache.emplace(key, positional_table(gh, gw, cfg.model.hidden))
               .first;
    return it->second;
  };

  const int n_train = static_cast<int>(train.samples.size());
  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  const bool use_mpm = cfg.weights.alpha > 0.0;
  const bool use_clm = cfg.weights.beta > 0.0;

  std::string log = "epoch,L_d,L_mp,L_cl,total,val_mae,val_rmse\n";
  TrainResult result;
  result.init_val_mae = init_mae;
  result.init_val_rmse = init_rmse;
  result.best_val_mae = std::numeric_limits<double>::infinity();

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng order_rng(mix_seed(cfg.seed, 0xA110ull + static_cast<std::uint64_t>(epoch)));
    shuffle_indices(order, order_rng);

    double sum_d = 0.0, sum_mp = 0.0, sum_cl = 0.0, sum_total = 0.0;
    int step = 0;
    for (int start = 0; start < n_train; start += cfg.batch_size, ++step) {
      const int bn = std::min(cfg.batch_size, n_train - start);
      const std::uint64_t batch_seed =
          mix_seed(mix_seed(cfg.seed, 0xBA7Cull),
                   static_cast<std::uint64_t>(epoch) * 1000003ull +
                       static_cast<std::uint64_t>(step));
      try {
        // CNN encodes and masks first, so every transformer sequence this
        // batch needs (counting branch per image, masked branch per image
        // with a non-empty mask) can share one block-diagonal encoder pass.
        // Attention blocks keep the sequences independent while the large
        // encoder weights stream once per batch instead of once per sequence.
        std::vector<ImagePre> pres(static_cast<std::size_t>(bn));
        std::vector<MaskSpec> masks(static_cast<std::size_t>(bn));
        for (int k = 0; k < bn; ++k)
          pres[static_cast<std::size_t>(k)] = pre_encode(
              model, train.samples[static_cast<std::size_t>(order[start + k])].image);
        bool same_grid = true;
        for (int k = 1; k < bn; ++k)
          same_grid = same_grid && pres[static_cast<std::size_t>(k)].gh == pres[0].gh &&
                      pres[static_cast<std::size_t>(k)].gw == pres[0].gw;

        std::vector<Tensor> seq_rows;
        std::vector<int> seq_owner;       // image index behind each sequence
        std::vector<int> masked_slot(static_cast<std::size_t>(bn), -1);
        for (int k = 0; k < bn; ++k) {
          seq_rows.push_back(transpose2d(pres[static_cast<std::size_t>(k)].p5_flat));
          seq_owner.push_back(k);
        }
        if (use_mpm)
          for (int k = 0; k < bn; ++k) {
            ImagePre& p = pres[static_cast<std::size_t>(k)];
            masks[static_cast<std::size_t>(k)] =
                make_mask(p.gh * p.gw, cfg.mask_ratio, cfg.mask_strategy, p.gh,
                          p.gw, mix_seed(batch_seed, 100 + static_cast<std::uint64_t>(k)));
            if (!masks[static_cast<std::size_t>(k)].masked.empty()) {
              masked_slot[static_cast<std::size_t>(k)] =
                  static_cast<int>(seq_rows.size());
              seq_rows.push_back(transpose2d(
                  apply_mask(p.p5_flat, masks[static_cast<std::size_t>(k)])));
              seq_owner.push_back(k);
            }
          }

        std::vector<Tensor> fds(seq_rows.size());
        if (same_grid) {
          const int n_tok = pres[0].gh * pres[0].gw;
          Tensor all = model.encode_tokens(
              seq_rows.size() == 1 ? seq_rows[0] : concat(seq_rows, 0),
              pos_for(pres[0].gh, pres[0].gw),
              std::vector<int>(seq_rows.size(), n_tok));
          std::vector<int> rows(static_cast<std::size_t>(n_tok));
          for (std::size_t si = 0; si < seq_rows.size(); ++si) {
            std::iota(rows.begin(), rows.end(), static_cast<int>(si) * n_tok);
            fds[si] = gather_rows(all, rows);
          }
        } else {
          for (std::size_t si = 0; si < seq_rows.size(); ++si) {
            ImagePre& p = pres[static_cast<std::size_t>(seq_owner[si])];
            fds[si] = model.encode_tokens(seq_rows[si], pos_for(p.gh, p.gw),
                                          {p.gh * p.gw});
          }
        }

        const int c_deep = model.config().cdeep();
        std::vector<Tensor> density(static_cast<std::size_t>(bn));
        std::vector<Tensor> projs(static_cast<std::size_t>(bn));
        std::vector<LabelGrid> labels(static_cast<std::size_t>(bn));
        for (int k = 0; k < bn; ++k) {
          ImagePre& p = pres[static_cast<std::size_t>(k)];
          Tensor fd_spatial = reshape(
              transpose2d(model.readout(fds[static_cast<std::size_t>(k)])),
              {c_deep, p.gh, p.gw});
          Tensor fused = model.fuse_to_f8(fd_spatial, p.pyr.f8);
          density[static_cast<std::size_t>(k)] = model.decode(fused);
          if (use_clm) {
            const Sample& s = train.samples[static_cast<std::size_t>(order[start + k])];
            projs[static_cast<std::size_t>(k)] = model.project(fused);
            labels[static_cast<std::size_t>(k)] = label_grid(
                s.points, s.image.dim(1), s.image.dim(2), 8, cfg.dilation);
          }
        }
        BatchContext ctx;
        const bool cross = use_clm && is_cross(cfg.clm_variant);
        if (cross) ctx = make_batch_context(projs, labels);

        Tensor batch_sum;
        for (int k = 0; k < bn; ++k) {
          const int idx = order[start + k];
          Tensor l_mp, l_cl;
          double mp_val = 0.0, cl_val = 0.0;
          if (use_mpm) {
            const int ms = masked_slot[static_cast<std::size_t>(k)];
            if (ms < 0) {
              l_mp = Tensor::scalar(0.0);
            } else {
              l_mp = consistent_loss(model, fds[static_cast<std::size_t>(ms)],
                                     fds[static_cast<std::size_t>(k)],
                                     masks[static_cast<std::size_t>(k)],
                                     cfg.mpm_variant,
                                     &pres[static_cast<std::size_t>(k)].p5_flat);
              mp_val = l_mp.item();
            }
          }
          if (use_clm) {
            l_cl = contrastive_loss(projs[static_cast<std::size_t>(k)],
                                    labels[static_cast<std::size_t>(k)],
                                    cfg.clm_variant, cross ? &ctx : nullptr, k,
                                    &skips);
            cl_val = l_cl.item();
          }
          Tensor total_i = combined_loss(
              density[static_cast<std::size_t>(k)], gts[static_cast<std::size_t>(idx)],
              l_mp, l_cl, cfg.weights, cfg.sinkhorn, cfg.tv_sigma,
              &warm[static_cast<std::size_t>(idx)], &skips);
          const double t_val = total_i.item();
          sum_total += t_val;
          sum_mp += mp_val;
          sum_cl += cl_val;
          sum_d += t_val - cfg.weights.alpha * mp_val - cfg.weights.beta * cl_val;
          batch_sum = batch_sum.defined() ? add(batch_sum, total_i) : total_i;
        }
        Tensor batch_loss = scale(batch_sum, 1.0 / bn);
        if (!std::isfinite(batch_loss.item()))
          throw NonFiniteValue("batch loss is not finite");
        backward(batch_loss);
        opt.step();
      } catch (const NonFiniteValue& e) {
        throw NonFiniteValue(std::string(e.what()) + " [epoch " +
                             std::to_string(epoch) + ", step " +
                             std::to_string(step) + ", batch seed " +
                             std::to_string(batch_seed) + "]");
      }
    }

    auto [val_mae, val_rmse] = val_metrics();
    log += std::to_string(epoch) + "," + fmt(sum_d / n_train) + "," +
           fmt(sum_mp / n_train) + "," + fmt(sum_cl / n_train) + "," +
           fmt(sum_total / n_train) + "," + fmt(val_mae) + "," +
           fmt(val_rmse) + "\n";
    if (val_mae < result.best_val_mae) {
      result.best_val_mae = val_mae;
      result.best_val_rmse = val_rmse;
      result.best_epoch = epoch;
      save_checkpoint(model, out_dir + "/model");
    }
    result.final_val_mae = val_mae;
  }

  write_text(out_dir + "/log.csv", log);
  std::string skip_text;
  for (const std::string& s : skips) skip_text += s + "\n";
  write_text(out_dir + "/skips.log", skip_text);
  return result;
}

std::vector<AblationRow> ablate(const RunConfig& base, const std::string& axis,
                                const std::vector<std::string>& values,
                                const std::vector<std::uint64_t>& seeds,
                                const std::string& data_dir,
                                const std::string& out_dir) {
  if (values.empty()) throw EmptyInput("ablation needs at least one value");
  if (seeds.empty()) throw EmptyInput("ablation needs at least one seed");
  // Validate the whole sweep before spending any training time.
  for (const std::string& v : values) {
    RunConfig probe = base;
    apply_axis(probe, axis, v);
    probe.validate();
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec)
    throw IoError("cannot create directory " + out_dir + ": " + ec.message());

  std::vector<AblationRow> rows;
  for (const std::string& v : values)
    for (std::uint64_t seed : seeds) {
      RunConfig cfg = base;
      apply_axis(cfg, axis, v);
      cfg.seed = seed;
      const std::string run_dir =
          out_dir + "/" + axis + "_" + v + "_s" + std::to_string(seed);
      train_model(cfg, data_dir, run_dir);
      Model m(cfg.model, mix_seed(seed, 0x30DE1ull));
      load_checkpoint(m, run_dir + "/model");
      EvalSummary ev =
          evaluate_model(m, cfg, data_dir, true, run_dir + "/eval_val.csv");
      rows.push_back({axis, v, seed, ev.mae, ev.rmse, ev.f1});
    }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string csv = "axis,value,seed,val_mae,val_rmse,f1\n";
  for (const AblationRow& r : rows)
    csv += r.axis + "," + r.value + "," + std::to_string(r.seed) + "," +
           fmt(r.val_mae) + "," + fmt(r.val_rmse) + "," + fmt(r.f1) + "\n";
  // One median row per distinct value, in first-appearance order.
  std::vector<std::string> seen;
  for (const AblationRow& r : rows) {
    if (std::find(seen.begin(), seen.end(), r.value) != seen.end()) continue;
    seen.push_back(r.value);
    std::vector<double> mae, rmse, f1;
    for (const AblationRow& q : rows)
      if (q.value == r.value) {
        mae.push_back(q.val_mae);
        rmse.push_back(q.val_rmse);
        f1.push_back(q.f1);
      }
    csv += r.axis + "," + r.value + ",median," + fmt(median(mae)) + "," +
           fmt(median(rmse)) + "," + fmt(median(f1)) + "\n";
  }
  return csv;
}

}  // namespace crowd
