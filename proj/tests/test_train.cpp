#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include "helpers.hpp"
#include "shiftvit/error.hpp"
#include "shiftvit/train.hpp"

using namespace shiftvit;

namespace {

struct ScratchDir {
  std::filesystem::path path;
  ScratchDir() {
    std::random_device rd;
    path = std::filesystem::temp_directory_path() / ("svtrain_" + std::to_string(rd()));
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }
};

ParamStore<double> scalar_store(double v) {
  ParamStore<double> s;
  s.add("p", Tensor<double>(Shape(1, 1, 1, 1), v));
  return s;
}

// Plain Adam on one scalar, decay applied before the moment update.
struct ScalarAdam {
  double p, m = 0, v = 0;
  int t = 0;
  void step(double g, double lr, double b1, double b2, double eps, double wd) {
    p -= lr * wd * p;
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t));
    const double vh = v / (1 - std::pow(b2, t));
    p -= lr * mh / (std::sqrt(vh) + eps);
  }
};

VariantConfig nano() { return *variant_preset("shift-nano"); }

TrainConfig small_train(std::size_t epochs, std::size_t batch) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = batch;
  tc.warmup_epochs = 1;
  tc.seed = 5;
  return tc;
}

Checkpoint fresh(const Dataset& train, const TrainConfig& tc, VariantConfig cfg = nano()) {
  return Checkpoint::initial(cfg, tc, compute_norm_stats(train.images));
}

std::string serialize(const Checkpoint& c) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, c);
  return os.str();
}

Checkpoint parse(const std::string& bytes) {
  std::istringstream is(bytes, std::ios::binary);
  return read_checkpoint(is);
}

}  // namespace

TEST_SUITE("train") {

TEST_CASE("adamw matches a hand recursion over two steps") {
  auto params = scalar_store(0.5);
  auto state = OptimizerState<double>::init(OptimizerKind::adamw, params);
  ScalarAdam ref{0.5};
  for (double g : {0.3, -0.7}) {
    ParamStore<double> grads = scalar_store(g);
    adamw_step(params, grads, state, 0.01, 0.9, 0.999, 1e-8, 0.1);
    ref.step(g, 0.01, 0.9, 0.999, 1e-8, 0.1);
  }
  CHECK(params.get("p")[0] == doctest::Approx(ref.p).epsilon(1e-14));
  CHECK(state.steps == 2);
  // first step moves by lr regardless of gradient scale
  auto p1 = scalar_store(0.0);
  auto s1 = OptimizerState<double>::init(OptimizerKind::adamw, p1);
  adamw_step(p1, scalar_store(123.0), s1, 0.01, 0.9, 0.999, 1e-8, 0.0);
  CHECK(p1.get("p")[0] == doctest::Approx(-0.01).epsilon(1e-9));
}

TEST_CASE("adamw without decay equals plain adam on random streams") {
  std::mt19937_64 gen(11);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 20; ++trial) {
    const double p0 = nd(gen);
    auto params = scalar_store(p0);
    auto state = OptimizerState<double>::init(OptimizerKind::adamw, params);
    ScalarAdam ref{p0};
    for (int k = 0; k < 15; ++k) {
      const double g = nd(gen) * std::pow(10.0, trial % 5 - 2);
      adamw_step(params, scalar_store(g), state, 1e-3, 0.9, 0.999, 1e-8, 0.0);
      ref.step(g, 1e-3, 0.9, 0.999, 1e-8, 0.0);
    }
    CHECK(params.get("p")[0] == doctest::Approx(ref.p).epsilon(1e-12));
  }
}

TEST_CASE("zero gradients only decay") {
  auto params = scalar_store(2.0);
  auto state = OptimizerState<double>::init(OptimizerKind::adamw, params);
  adamw_step(params, scalar_store(0.0), state, 0.1, 0.9, 0.999, 1e-8, 0.05);
  CHECK(params.get("p")[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.05)).epsilon(1e-15));
  auto untouched = scalar_store(2.0);
  auto s2 = OptimizerState<double>::init(OptimizerKind::adamw, untouched);
  adamw_step(untouched, scalar_store(0.0), s2, 0.1, 0.9, 0.999, 1e-8, 0.0);
  CHECK(untouched.get("p")[0] == 2.0);
}

TEST_CASE("sgd with and without momentum") {
  auto params = scalar_store(1.0);
  auto state = OptimizerState<double>::init(OptimizerKind::sgd, params);
  sgd_step(params, scalar_store(0.5), state, 0.1, 0.0, 0.01);
  CHECK(params.get("p")[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01 * 1.0)).epsilon(1e-15));

  auto p2 = scalar_store(0.0);
  auto s2 = OptimizerState<double>::init(OptimizerKind::sgd, p2);
  sgd_step(p2, scalar_store(2.0), s2, 0.1, 0.9, 0.0);
  sgd_step(p2, scalar_store(2.0), s2, 0.1, 0.9, 0.0);
  CHECK(s2.first.get("p")[0] == doctest::Approx(1.9 * 2.0).epsilon(1e-15));
  CHECK(p2.get("p")[0] == doctest::Approx(-0.1 * 2.0 - 0.1 * 3.8).epsilon(1e-15));
  CHECK(s2.second.size() == 0);
}

TEST_CASE("non-finite gradients name the parameter") {
  ParamStore<double> params;
  params.add("ok", Tensor<double>(Shape(2, 1, 1, 1), 1.0));
  params.add("stage2.merge.weight", Tensor<double>(Shape(2, 1, 1, 1), 1.0));
  ParamStore<double> grads = params;
  grads.get("stage2.merge.weight")[1] = std::numeric_limits<double>::quiet_NaN();
  for (auto kind : {OptimizerKind::adamw, OptimizerKind::sgd}) {
    auto state = OptimizerState<double>::init(kind, params);
    try {
      if (kind == OptimizerKind::adamw) adamw_step(params, grads, state, 0.1, 0.9, 0.999, 1e-8, 0.0);
      else sgd_step(params, grads, state, 0.1, 0.9, 0.0);
      FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
      CHECK(std::string(e.what()).find("stage2.merge.weight") != std::string::npos);
    }
  }
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 100, 1.0, 10) == 0.0);
  CHECK(cosine_lr(5, 100, 1.0, 10) == doctest::Approx(0.5));
  CHECK(cosine_lr(10, 100, 1.0, 10) == doctest::Approx(1.0));
  CHECK(cosine_lr(5, 11, 2.0, 0) == doctest::Approx(1.0));
  CHECK(cosine_lr(99, 100, 1.0, 10) == 0.0);
  CHECK(cosine_lr(0, 1, 1.0, 0) == 0.0);
  CHECK_THROWS_AS(cosine_lr(100, 100, 1.0, 10), ContractError);
  double prev = cosine_lr(10, 100, 1.0, 10);
  for (std::uint64_t s = 11; s < 100; ++s) {
    const double lr = cosine_lr(s, 100, 1.0, 10);
    CHECK(lr <= prev);
    CHECK(lr >= 0.0);
    prev = lr;
  }
  CHECK(scheduled_lr(ScheduleKind::constant, 50, 100, 0.3, 10) == 0.3);
  CHECK(scheduled_lr(ScheduleKind::constant, 5, 100, 0.3, 10) == doctest::Approx(0.15));
}

TEST_CASE("metrics csv") {
  const std::string csv = metrics_csv({MetricRow{1, 10, 0.5, 1.25, 0.5, 0.75}});
  CHECK(csv.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
  CHECK(std::string(kMetricsHeader) == "epoch,step,lr,train_loss,train_acc,eval_acc");
  CHECK(csv.find("\n1,10,0.5,1.25,0.500000,0.750000\n") != std::string::npos);
}

TEST_CASE("checkpoint round trip is bit exact") {
  const Dataset train = synthetic_shift_task(32, 32, 1);
  auto tc = small_train(1, 8);
  auto result = train_loop(fresh(train, tc), train, synthetic_shift_task(8, 32, 2));
  const std::string bytes = serialize(result.state);
  const Checkpoint back = parse(bytes);
  CHECK(same_state(back, result.state));
  CHECK(serialize(back) == bytes);

  ScratchDir dir;
  save_checkpoint(dir.path / "c.svck", result.state);
  CHECK(same_state(load_checkpoint(dir.path / "c.svck"), result.state));
  CHECK(same_state(load_checkpoint(dir.path / "c.svck", nano()), result.state));
  CHECK_THROWS_AS(load_checkpoint(dir.path / "missing.svck"), FileError);
}

TEST_CASE("checkpoint errors are distinct") {
  const Dataset train = synthetic_shift_task(8, 32, 1);
  const std::string bytes = serialize(fresh(train, small_train(1, 8)));

  std::string bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(parse(bad_version), VersionError);

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(parse(bad_magic), BadMagicError);

  for (std::size_t cut : {std::size_t{2}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(parse(bytes.substr(0, cut)), TruncatedError);

  ScratchDir dir;
  save_checkpoint(dir.path / "c.svck", fresh(train, small_train(1, 8)));
  auto other = nano();
  other.base_channels = 8;
  try {
    load_checkpoint(dir.path / "c.svck", other);
    FAIL("expected ShapeMismatchError");
  } catch (const ShapeMismatchError& e) {
    CHECK(std::string(e.what()).find("stem.proj.weight") != std::string::npos);
  }
}

TEST_CASE("resume equals an uninterrupted run") {
  const Dataset train = synthetic_shift_task(64, 32, 3);
  const Dataset eval = synthetic_shift_task(16, 32, 4);
  auto tc = small_train(2, 16);
  tc.hflip = true;
  const TrainResult straight = train_loop(fresh(train, tc), train, eval);
  CHECK(straight.finished);
  CHECK(straight.state.step == 8);
  CHECK(straight.state.log.size() == 2);

  for (std::uint64_t stop : {3u, 4u, 6u}) {
    CAPTURE(stop);
    ScratchDir dir;
    TrainOptions opts;
    opts.out_dir = dir.path;
    opts.stop_after_steps = stop;
    const TrainResult first = train_loop(fresh(train, tc), train, eval, opts);
    CHECK_FALSE(first.finished);
    CHECK(first.state.step == stop);
    const Checkpoint loaded = load_checkpoint(dir.path / "checkpoint.svck");
    CHECK(same_state(loaded, first.state));
    const TrainResult rest = train_loop(loaded, train, eval);
    CHECK(rest.finished);
    CHECK(same_state(rest.state, straight.state));
    CHECK(rest.state.log == straight.state.log);
  }
}

TEST_CASE("same seed gives the same log") {
  const Dataset train = synthetic_shift_task(48, 32, 5);
  const Dataset eval = synthetic_shift_task(16, 32, 6);
  auto tc = small_train(2, 16);
  const auto a = train_loop(fresh(train, tc), train, eval).state;
  const auto b = train_loop(fresh(train, tc), train, eval).state;
  CHECK(a.log == b.log);
  CHECK(a.model.params() == b.model.params());
  tc.seed = 6;
  const auto c = train_loop(fresh(train, tc), train, eval).state;
  CHECK_FALSE(c.model.params() == a.model.params());
}

TEST_CASE("zero epochs writes the initial checkpoint and an empty log") {
  const Dataset train = synthetic_shift_task(8, 32, 1);
  auto tc = small_train(0, 8);
  ScratchDir dir;
  TrainOptions opts;
  opts.out_dir = dir.path;
  const Checkpoint start = fresh(train, tc);
  const auto result = train_loop(start, train, train, opts);
  CHECK(result.finished);
  CHECK(result.state.log.empty());
  CHECK(same_state(load_checkpoint(dir.path / "checkpoint.svck"), start));
  std::ifstream csv(dir.path / "metrics.csv");
  std::string line, rest;
  std::getline(csv, line);
  CHECK(line == kMetricsHeader);
  CHECK_FALSE(std::getline(csv, rest));
}

TEST_CASE("batch-norm training skips single-sample batches") {
  const Dataset train = synthetic_shift_task(9, 32, 7);
  auto cfg = nano();
  cfg.norm = NormKind::batchnorm;
  auto tc = small_train(1, 4);
  const auto result = train_loop(fresh(train, tc, cfg), train, train);
  CHECK(result.state.step == 3);
  CHECK(result.state.log.size() == 1);
}

TEST_CASE("overfits a single batch") {
  const Dataset batch = synthetic_shift_task(8, 32, 9);
  auto tc = small_train(200, 8);
  tc.weight_decay = 0.0;
  const auto result = train_loop(fresh(batch, tc), batch, batch);
  const auto& log = result.state.log;
  REQUIRE(log.size() == 200);
  CHECK(log.back().train_acc == 1.0);
  CHECK(log.back().eval_acc == 1.0);
  std::size_t non_increasing = 0, total = 0;
  for (std::size_t i = 2; i < log.size(); ++i, ++total)
    if (log[i].train_loss <= log[i - 1].train_loss) ++non_increasing;
  CHECK(double(non_increasing) >= 0.95 * double(total));
}

TEST_CASE("exploding run stops with a non-finite error") {
  const Dataset train = synthetic_shift_task(16, 32, 8);
  auto tc = small_train(3, 8);
  tc.optimizer = OptimizerKind::sgd;
  tc.base_lr = 1e30;
  tc.warmup_epochs = 0;
  CHECK_THROWS_AS(train_loop(fresh(train, tc), train, train), NonFiniteError);
}

TEST_CASE("train config JSON and presets") {
  const TrainConfig paper = *train_preset("paper");
  CHECK(paper.batch_size == 1024);
  CHECK(paper.epochs == 300);
  CHECK(paper.base_lr == 1e-3);
  CHECK(paper.weight_decay == 0.05);
  const TrainConfig cnn = *train_preset("cnn");
  CHECK(cnn.optimizer == OptimizerKind::sgd);
  CHECK_FALSE(train_preset("huge").has_value());
  CHECK(train_from_json(to_json(paper)) == paper);
  auto j = nlohmann::json::parse(R"({"preset": "cnn", "epochs": 4})");
  const TrainConfig t = train_from_json(j);
  CHECK(t.optimizer == OptimizerKind::sgd);
  CHECK(t.epochs == 4);
  CHECK_THROWS_AS(train_from_json(nlohmann::json::parse(R"({"lr": 1})")), ConfigError);
  CHECK_THROWS_AS(train_from_json(nlohmann::json::parse(R"({"optimizer": "lion"})")), ConfigError);
  TrainConfig bad;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("ablation arms") {
  std::set<std::string> labels;
  for (auto opt : {OptimizerKind::adamw, OptimizerKind::sgd})
    for (auto act : {ActKind::gelu, ActKind::relu})
      for (auto norm : {NormKind::layernorm, NormKind::batchnorm})
        for (bool long_schedule : {true, false}) {
          auto cfg = nano();
          TrainConfig tc;
          const AblationArm arm{opt, act, norm, long_schedule};
          apply_arm(arm, 6, cfg, tc);
          labels.insert(arm.label());
          CHECK(cfg.act == act);
          CHECK(cfg.norm == norm);
          CHECK(tc.optimizer == opt);
          CHECK(tc.epochs == (long_schedule ? 6u : 2u));
          CHECK(tc.warmup_epochs < tc.epochs);
          if (opt == OptimizerKind::sgd) {
            CHECK(tc.base_lr == 0.1);
            CHECK(tc.weight_decay == 1e-4);
          } else {
            CHECK(tc.base_lr == 1e-3);
          }
          CHECK_NOTHROW(cfg.validate());
          CHECK_NOTHROW(tc.validate());
        }
  CHECK(labels.size() == 16);
}

}  // TEST_SUITE
