#include "shiftvit/cli.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "shiftvit/data.hpp"
#include "shiftvit/error.hpp"
#include "shiftvit/gradcheck.hpp"
#include "shiftvit/model.hpp"
#include "shiftvit/shift.hpp"
#include "shiftvit/train.hpp"

namespace shiftvit {

namespace {

std::string join(const std::vector<std::string>& items, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += sep;
    out += items[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) parts.push_back(item);
  return parts;
}

VariantConfig preset_or_throw(const std::string& name) {
  auto cfg = variant_preset(name);
  if (!cfg) {
    throw ConfigError(fmt::format("unknown variant '{}'; presets: {}", name, join(variant_preset_names(), ", ")));
  }
  return *cfg;
}

std::string millions(std::size_t n) { return fmt::format("{:.2f}M", static_cast<double>(n) / 1e6); }
std::string giga(std::uint64_t n) { return fmt::format("{:.3f}G", static_cast<double>(n) / 1e9); }

int cmd_params(const std::string& variant, const std::string& config, std::optional<std::size_t> input,
               std::ostream& out) {
  auto [cfg, train] = load_run_config(config, variant, "shift-t");
  if (input) cfg.input_size = *input;
  cfg.validate();
  out << params_table(cfg);
  return kExitOk;
}

int cmd_flops(const std::string& variant, const std::string& config, std::optional<std::size_t> input,
              std::ostream& out) {
  auto [cfg, train] = load_run_config(config, variant, "shift-t");
  if (input) cfg.input_size = *input;
  cfg.validate();
  const ModelFacts f = count_flops(cfg, cfg.input_size);
  out << fmt::format("{:<10} {:>16}\n", "component", "macs");
  out << fmt::format("{:<10} {:>16}\n", "stem", f.stem_macs);
  for (std::size_t s = 0; s < 4; ++s) {
    if (s > 0) out << fmt::format("{:<10} {:>16}\n", fmt::format("merge{}", s + 1), f.merge_macs[s]);
    out << fmt::format("{:<10} {:>16}\n", fmt::format("stage{}", s + 1), f.block_macs[s]);
  }
  out << fmt::format("{:<10} {:>16}\n", "head", f.head_macs);
  out << fmt::format("{:<10} {:>16}  ({})\n", "total", f.total_macs, giga(f.total_macs));
  out << fmt::format("shift flops: {}\n", f.shift_flops);
  out << fmt::format("non-mac elementwise ops: {}\n", f.non_mac_ops);
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& dtype, std::ostream& out, std::ostream& err) {
  Dtype d;
  if (dtype == "f64") {
    d = Dtype::f64;
  } else if (dtype == "f32") {
    d = Dtype::f32;
  } else {
    throw ConfigError("--dtype must be f32 or f64");
  }
  const GradcheckReport report = run_gradcheck(seed, d);
  out << report.table();
  if (report.all_pass()) {
    out << fmt::format("all {} checks pass\n", report.rows.size());
    return kExitOk;
  }
  const GradcheckRow* w = report.worst();
  err << fmt::format("gradcheck failed; worst: {} {} rel err {:.3e} > {:.0e}\n", w->op, w->shape, w->max_rel_err,
                     w->threshold);
  return kExitCheckFailed;
}

struct TrainFlags {
  std::string config;
  std::string variant;
  std::string data = "synthetic:4000:0";
  std::string out_dir;
  std::string resume;
  std::optional<std::uint64_t> stop_after;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainFlags& f, std::ostream& out) {
  Checkpoint start;
  if (!f.resume.empty()) {
    start = load_checkpoint(f.resume);
  } else {
    auto [model, train] = load_run_config(f.config, f.variant);
    if (f.epochs) train.epochs = *f.epochs;
    if (f.seed) train.seed = *f.seed;
    model.validate();
    train.validate();
    const DataSplits data = load_data_spec(f.data, model.input_size);
    start = Checkpoint::initial(model, train, compute_norm_stats(data.train.images));
  }
  const DataSplits data = load_data_spec(f.data, start.model_config.input_size);
  TrainOptions opt;
  opt.out_dir = f.out_dir;
  opt.stop_after_steps = f.stop_after;
  opt.progress = &out;
  const TrainResult result = train_loop(std::move(start), data.train, data.eval, opt);
  const auto& log = result.state.log;
  if (!log.empty()) out << fmt::format("final eval_acc {:.4f}\n", log.back().eval_acc);
  out << fmt::format("{} at step {}\n", result.finished ? "finished" : "stopped", result.state.step);
  return kExitOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_spec, std::ostream& out) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  const DataSplits data = load_data_spec(data_spec, ckpt.model_config.input_size);
  const Dataset eval = normalized_copy(data.eval, ckpt.norm);
  const double acc = evaluate(ckpt.model, eval);
  out << fmt::format("top1 {:.4f} ({} samples)\n", acc, eval.size());
  return kExitOk;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
std::vector<double> time_calls(std::size_t iters, F&& f) {
  std::vector<double> us;
  us.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    const auto t1 = std::chrono::steady_clock::now();
    us.push_back(std::chrono::duration<double, std::micro>(t1 - t0).count());
  }
  return us;
}

int cmd_bench_shift(const std::string& shape_text, const std::string& gamma, std::size_t step, std::size_t iters,
                    std::ostream& out, std::ostream& err) {
  if (iters == 0) throw ConfigError("--iters must be at least 1");
  const auto dims = split(shape_text, ',');
  if (dims.size() != 4) throw ConfigError("--shape expects N,C,H,W");
  std::array<std::size_t, 4> d{};
  for (std::size_t i = 0; i < 4; ++i) d[i] = std::stoul(dims[i]);
  const Shape shape(d[0], d[1], d[2], d[3]);
  const ShiftSpec spec{Ratio::parse(gamma), step};
  spec.validate(shape.c());

  Rng rng(0);
  Tensor<float> x(shape);
  for (auto& v : x.data()) v = static_cast<float>(rng.normal());
  const std::size_t hidden = 2 * shape.c();
  Tensor<float> w1(Shape(hidden, shape.c(), 1, 1)), b1(Shape(hidden, 1, 1, 1));
  Tensor<float> w2(Shape(shape.c(), hidden, 1, 1)), b2(Shape(shape.c(), 1, 1, 1));
  for (auto* t : {&w1, &w2})
    for (auto& v : t->data()) v = static_cast<float>(rng.truncated_normal(kInitStd));

  volatile float sink = 0;
  const auto shift_us = time_calls(iters, [&] { sink = shift_forward(x, spec)[0]; });
  const auto mlp_us = time_calls(iters, [&] {
    sink = matmul_channels(gelu(matmul_channels(x, w1, b1)), w2, b2)[0];
  });
  const ShiftCost cost = shift_flop_count(spec, shape);
  const std::uint64_t mlp_flops = 2ull * 2 * shape.n() * shape.plane() * shape.c() * hidden;

  out << fmt::format("shape {} gamma {} step {} iters {}\n", shape.str(), spec.gamma.str(), step, iters);
  out << fmt::format("{:<8} {:>12} {:>12} {:>14} {:>14}\n", "kernel", "median_us", "mean_us", "bytes_moved", "flops");
  auto mean = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  out << fmt::format("{:<8} {:>12.2f} {:>12.2f} {:>14} {:>14}\n", "shift", median(shift_us), mean(shift_us),
                     cost.bytes_moved(sizeof(float)), cost.flops);
  out << fmt::format("{:<8} {:>12.2f} {:>12.2f} {:>14} {:>14}\n", "mlp_fwd", median(mlp_us), mean(mlp_us), "-",
                     mlp_flops);
  out << fmt::format("shift/mlp median ratio {:.4f}\n", median(shift_us) / median(mlp_us));
  if (cost.flops != 0) {
    err << "shift reported nonzero flops\n";
    return kExitCheckFailed;
  }
  return kExitOk;
}

struct SweepFlags {
  std::string values = "0,0.125,0.25";
  std::string steps = "1";
  std::string config;
  std::string variant;
  std::string data = "synthetic:4000:0";
  std::string out_file;
  std::optional<std::size_t> epochs;
};

int cmd_sweep_gamma(const SweepFlags& f, std::ostream& out, std::ostream& err) {
  auto [base_model, base_train] = load_run_config(f.config, f.variant);
  if (f.epochs) base_train.epochs = *f.epochs;
  base_train.validate();
  const DataSplits data = load_data_spec(f.data, base_model.input_size);
  const NormStats norm = compute_norm_stats(data.train.images);

  std::vector<std::size_t> steps;
  for (const auto& s : split(f.steps, ',')) steps.push_back(std::stoul(s));

  std::string csv = "gamma,step,final_eval_acc\n";
  out << csv << std::flush;
  for (const auto& token : split(f.values, ',')) {
    VariantConfig model = base_model;
    try {
      model.gamma = Ratio::parse(token);
      model.validate();
    } catch (const ConfigError& e) {
      err << fmt::format("warning: skipping gamma {}: {}\n", token, e.what());
      continue;
    }
    for (const std::size_t step : steps) {
      model.shift_step = step;
      const TrainResult r = train_loop(Checkpoint::initial(model, base_train, norm), data.train, data.eval);
      const double acc = r.state.log.empty() ? 0.0 : r.state.log.back().eval_acc;
      const std::string row = fmt::format("{},{},{:.6f}\n", token, step, acc);
      csv += row;
      out << row << std::flush;
    }
  }
  if (!f.out_file.empty()) {
    std::ofstream os(f.out_file);
    if (!os) throw FileError("cannot write " + f.out_file);
    os << csv;
  }
  return kExitOk;
}

}  // namespace

std::pair<VariantConfig, TrainConfig> load_run_config(const std::string& path, const std::string& variant_override,
                                                      const std::string& fallback_variant) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw FileError("cannot open config " + path);
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(fmt::format("config {}: {}", path, e.what()));
    }
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
  }
  for (const auto& [k, v] : j.items()) {
    if (k != "variant" && k != "model" && k != "train") throw ConfigError("unknown config key '" + k + "'");
  }
  std::string name = fallback_variant;
  if (j.contains("variant")) name = j["variant"].get<std::string>();
  if (!variant_override.empty()) name = variant_override;
  VariantConfig model = preset_or_throw(name);
  TrainConfig train;
  try {
    if (j.contains("model")) model = variant_from_json(j["model"], model);
    if (j.contains("train")) train = train_from_json(j["train"], train);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(fmt::format("config {}: {}", path, e.what()));
  }
  return {model, train};
}

std::string params_table(const VariantConfig& cfg) {
  const ModelFacts f = count_flops(cfg, cfg.input_size);
  std::string out;
  out += fmt::format("variant {}  channels {}  depths {},{},{},{}  tau {}  gamma {}  step {}  norm {}  act {}\n",
                     cfg.name, cfg.base_channels, cfg.depths[0], cfg.depths[1], cfg.depths[2], cfg.depths[3],
                     cfg.expand_ratio, cfg.gamma.str(), cfg.shift_step, to_string(cfg.norm), to_string(cfg.act));
  out += fmt::format("{:<7} {:>8} {:>6} {:>7} {:>12}\n", "stage", "channels", "grid", "blocks", "params");
  for (std::size_t s = 0; s < 4; ++s) {
    out += fmt::format("{:<7} {:>8} {:>6} {:>7} {:>12}\n", s + 1, cfg.stage_width(s), cfg.stage_grid(s),
                       cfg.depths[s], f.stage_params(s));
  }
  out += fmt::format("{:<7} {:>8} {:>6} {:>7} {:>12}\n", "norm", cfg.stage_width(3), "", "", f.final_norm_params);
  out += fmt::format("{:<7} {:>8} {:>6} {:>7} {:>12}\n", "head", cfg.num_classes, "", "", f.head_params);
  out += fmt::format("params total {} ({})\n", f.total_params, millions(f.total_params));
  out += fmt::format("params without head {} ({})\n", f.params_without_head, millions(f.params_without_head));
  out += fmt::format("macs at {} {} ({})\n", cfg.input_size, f.total_macs, giga(f.total_macs));
  out += fmt::format("shift flops {}\n", f.shift_flops);
  out += fmt::format("depth {}\n", f.depth);
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ShiftViT backbone toolkit: audits, gradient checks, training and shift benchmarks", "shiftvit"};
  app.require_subcommand(1);

  std::string variant, config;
  std::optional<std::size_t> input;
  auto* params = app.add_subcommand("params", "Per-stage and total parameters, MACs and depth");
  params->add_option("--variant", variant, "Preset name");
  params->add_option("--config", config, "JSON run config");
  params->add_option("--input", input, "Input resolution");

  auto* flops = app.add_subcommand("flops", "MAC breakdown by component");
  flops->add_option("--variant", variant, "Preset name");
  flops->add_option("--config", config, "JSON run config");
  flops->add_option("--input", input, "Input resolution");

  std::uint64_t seed = 0;
  std::string dtype = "f64";
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  gradcheck->add_option("--seed", seed, "Seed");
  gradcheck->add_option("--dtype", dtype, "f64 or f32")->check(CLI::IsMember({"f64", "f32"}));

  TrainFlags tf;
  auto* train = app.add_subcommand("train", "Train a model, writing metrics.csv and checkpoint.svck");
  train->add_option("--config", tf.config, "JSON run config");
  train->add_option("--variant", tf.variant, "Preset name");
  train->add_option("--data", tf.data, "synthetic:<n>:<seed> or idx:<images>,<labels>[,<eval-images>,<eval-labels>]");
  train->add_option("--out", tf.out_dir, "Output directory")->required();
  train->add_option("--resume", tf.resume, "Checkpoint to continue from");
  train->add_option("--stop-after", tf.stop_after, "Stop after this many optimizer steps");
  train->add_option("--epochs", tf.epochs, "Override epoch count");
  train->add_option("--seed", tf.seed, "Override training seed");

  std::string checkpoint, data_spec = "synthetic:4000:0";
  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--data", data_spec, "Data spec; the eval split is scored");

  std::string shape = "64,16,8,8", gamma = "1/8";
  std::size_t step = 1, iters = 100;
  auto* bench = app.add_subcommand("bench-shift", "Shift kernel timing against a same-shape MLP forward");
  bench->add_option("--shape", shape, "N,C,H,W");
  bench->add_option("--gamma", gamma, "Shifted fraction per direction");
  bench->add_option("--step", step, "Shift distance in pixels");
  bench->add_option("--iters", iters, "Timed calls");

  SweepFlags sf;
  auto* sweep = app.add_subcommand("sweep-gamma", "Train one model per gamma (and step), CSV of final accuracy");
  sweep->add_option("--values", sf.values, "Comma-separated gamma values");
  sweep->add_option("--steps", sf.steps, "Comma-separated shift steps");
  sweep->add_option("--config", sf.config, "JSON run config");
  sweep->add_option("--variant", sf.variant, "Preset name");
  sweep->add_option("--data", sf.data, "Data spec");
  sweep->add_option("--epochs", sf.epochs, "Override epoch count");
  sweep->add_option("--out", sf.out_file, "Also write the CSV here");

  std::vector<std::string> argv_store{"shiftvit"};
  argv_store.insert(argv_store.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_store) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n";
    if (!app.get_subcommands().empty()) {
      err << app.get_subcommands().front()->help();
    }
    return kExitUsage;
  }

  try {
    if (*params) return cmd_params(variant, config, input, out);
    if (*flops) return cmd_flops(variant, config, input, out);
    if (*gradcheck) return cmd_gradcheck(seed, dtype, out, err);
    if (*train) return cmd_train(tf, out);
    if (*eval) return cmd_eval(checkpoint, data_spec, out);
    if (*bench) return cmd_bench_shift(shape, gamma, step, iters, out, err);
    if (*sweep) return cmd_sweep_gamma(sf, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const FileError& e) {
    err << "file error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitUsage;
}

}  // namespace shiftvit
