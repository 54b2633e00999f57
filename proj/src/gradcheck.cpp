#include "shiftvit/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <type_traits>

#include <fmt/format.h>

#include "shiftvit/blocks.hpp"
#include "shiftvit/config.hpp"
#include "shiftvit/model.hpp"
#include "shiftvit/rng.hpp"
#include "shiftvit/tape.hpp"

namespace shiftvit {

bool GradcheckReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const GradcheckRow& r) { return r.pass; });
}

const GradcheckRow* GradcheckReport::worst() const {
  const GradcheckRow* w = nullptr;
  for (const auto& r : rows) {
    if (w == nullptr || r.max_rel_err / r.threshold > w->max_rel_err / w->threshold) w = &r;
  }
  return w;
}

std::string GradcheckReport::table() const {
  std::string out = fmt::format("{:<22} {:<26} {:>12} {:>10}  {}\n", "op", "shape", "max_rel_err", "threshold", "result");
  for (const auto& r : rows) {
    out += fmt::format("{:<22} {:<26} {:>12.3e} {:>10.0e}  {}\n", r.op, r.shape, r.max_rel_err, r.threshold,
                       r.pass ? "pass" : "FAIL");
  }
  return out;
}

namespace {

Tensor<double> uniform(Shape shape, Rng& rng) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) v = 2.0 * rng.uniform() - 1.0;
  return t;
}

// Inputs for kinked ops stay at least `gap` away from zero.
Tensor<double> uniform_away_from_zero(Shape shape, Rng& rng, double gap) {
  Tensor<double> t(shape);
  for (auto& v : t.data()) {
    do {
      v = 2.0 * rng.uniform() - 1.0;
    } while (std::abs(v) < gap);
  }
  return t;
}

struct Check {
  std::string op;
  std::string shape;
  ParamStore<double> params;
  std::vector<Tensor<double>> inputs;
  std::function<Var(Tape<double>&, const std::vector<Var>&)> build_f64;
  std::function<Var(Tape<float>&, const std::vector<Var>&)> build_f32;
  double threshold = kOpTolerance;
};

template <typename F>
Check make_check(std::string op, std::string shape, ParamStore<double> params, std::vector<Tensor<double>> inputs,
                 F build) {
  Check c;
  c.op = std::move(op);
  c.shape = std::move(shape);
  c.params = std::move(params);
  c.inputs = std::move(inputs);
  c.build_f64 = build;
  c.build_f32 = build;
  return c;
}

double evaluate(const Check& c, ParamStore<double>& params, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape(&params);
  std::vector<Var> vars;
  for (const auto& x : inputs) vars.push_back(tape.input(x));
  return tape.value(c.build_f64(tape, vars))[0];
}

template <typename T>
std::pair<std::vector<Tensor<double>>, ParamStore<double>> analytic(const Check& c) {
  ParamStore<T> params = c.params.template cast<T>();
  Tape<T> tape(&params);
  std::vector<Var> vars;
  for (const auto& x : c.inputs) vars.push_back(tape.input(x.template cast<T>()));
  Var loss;
  if constexpr (std::is_same_v<T, double>) {
    loss = c.build_f64(tape, vars);
  } else {
    loss = c.build_f32(tape, vars);
  }
  Gradients<T> g = tape.backward(loss);
  std::vector<Tensor<double>> input_grads;
  for (const Var v : vars) input_grads.push_back(g.input(v).template cast<double>());
  return {std::move(input_grads), g.params.template cast<double>()};
}

GradcheckRow run_check(Check c, Dtype dtype) {
  auto [input_grads, param_grads] = dtype == Dtype::f64 ? analytic<double>(c) : analytic<float>(c);
  double worst = 0;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    auto f = [&](const Tensor<double>& x) {
      std::vector<Tensor<double>> in = c.inputs;
      in[i] = x;
      return evaluate(c, c.params, in);
    };
    worst = std::max(worst, max_rel_error(input_grads[i], finite_diff(f, c.inputs[i], kFiniteDiffStep)));
  }
  for (std::size_t p = 0; p < c.params.size(); ++p) {
    const Tensor<double> original = c.params[p].value;
    auto f = [&](const Tensor<double>& w) {
      c.params[p].value = w;
      const double v = evaluate(c, c.params, c.inputs);
      c.params[p].value = original;
      return v;
    };
    worst = std::max(worst, max_rel_error(param_grads[p].value, finite_diff(f, original, kFiniteDiffStep)));
  }
  const double threshold = dtype == Dtype::f64 ? c.threshold : kF32Tolerance;
  return GradcheckRow{c.op, c.shape, worst, threshold, worst <= threshold};
}

template <typename TapeT>
using ScalarOf = typename std::decay_t<TapeT>::value_type;

// Scalar loss <out, r> with a fixed random projection r.
template <typename TapeT>
Var project(TapeT& tape, Var out, const Tensor<double>& r) {
  using T = ScalarOf<TapeT>;
  return ad::weighted_sum(tape, out, r.template cast<T>());
}

void fill_uniform(ParamStore<double>& store, Rng& rng) {
  for (auto& e : store)
    for (auto& v : e.value.data()) v = 2.0 * rng.uniform() - 1.0;
}

std::vector<Check> op_checks(Rng& rng) {
  std::vector<Check> checks;
  const ParamStore<double> none;

  {
    const Shape xs(2, 3, 2, 2);
    auto r = uniform(Shape(2, 4, 2, 2), rng);
    checks.push_back(make_check("linear", xs.str(), none,
                                {uniform(xs, rng), uniform(Shape(4, 3, 1, 1), rng), uniform(Shape(4, 1, 1, 1), rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  return project(t, ad::linear(t, v[0], v[1], v[2]), r);
                                }));
  }
  {
    const Shape xs(1, 2, 4, 4);
    auto r = uniform(Shape(1, 3, 2, 2), rng);
    checks.push_back(make_check("conv2d_nonoverlap", xs.str(), none,
                                {uniform(xs, rng), uniform(Shape(3, 2, 2, 2), rng), uniform(Shape(3, 1, 1, 1), rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  return project(t, ad::conv(t, v[0], v[1], v[2], 2), r);
                                }));
  }
  {
    const Shape xs(1, 2, 4, 4);
    auto r = uniform(Shape(1, 8, 2, 2), rng);
    checks.push_back(make_check("space_to_depth", xs.str(), none, {uniform(xs, rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  return project(t, ad::space_to_depth(t, v[0], 2), r);
                                }));
  }
  {
    const Shape xs(2, 3, 2, 3);
    auto r = uniform(Shape(2, 3, 1, 1), rng);
    checks.push_back(make_check("global_avg_pool", xs.str(), none, {uniform(xs, rng)},
                                [r](auto& t, const std::vector<Var>& v) { return project(t, ad::avg_pool(t, v[0]), r); }));
  }
  {
    const Shape xs(1, 2, 3, 3);
    auto r = uniform(xs, rng);
    checks.push_back(make_check("add", xs.str(), none, {uniform(xs, rng), uniform(xs, rng)},
                                [r](auto& t, const std::vector<Var>& v) { return project(t, ad::add(t, v[0], v[1]), r); }));
    checks.push_back(make_check("scale", xs.str(), none, {uniform(xs, rng)}, [r](auto& t, const std::vector<Var>& v) {
      using T = ScalarOf<decltype(t)>;
      return project(t, ad::scale(t, v[0], T(-1.7)), r);
    }));
    checks.push_back(make_check("relu", xs.str(), none, {uniform_away_from_zero(xs, rng, 1e-3)},
                                [r](auto& t, const std::vector<Var>& v) { return project(t, ad::relu(t, v[0]), r); }));
    checks.push_back(make_check("gelu", xs.str(), none, {uniform(xs, rng)},
                                [r](auto& t, const std::vector<Var>& v) { return project(t, ad::gelu(t, v[0]), r); }));
    checks.push_back(make_check("gelu_tanh", xs.str(), none, {uniform(xs, rng)}, [r](auto& t, const std::vector<Var>& v) {
      return project(t, ad::gelu_tanh(t, v[0]), r);
    }));
    checks.push_back(make_check("sum", xs.str(), none, {uniform(xs, rng)},
                                [](auto& t, const std::vector<Var>& v) { return ad::sum(t, v[0]); }));
  }
  {
    const Shape xs(1, 8, 4, 4);
    auto r = uniform(xs, rng);
    checks.push_back(make_check("shift", xs.str() + " g=1/8 s=1", none, {uniform(xs, rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  return project(t, ad::shift(t, v[0], ShiftSpec{Ratio{1, 8}, 1}), r);
                                }));
  }
  {
    const Shape xs(2, 5, 2, 2);
    auto r = uniform(xs, rng);
    const Shape cs(5, 1, 1, 1);
    checks.push_back(make_check("layer_norm", xs.str(), none, {uniform(xs, rng), uniform(cs, rng), uniform(cs, rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  using T = ScalarOf<decltype(t)>;
                                  return project(t, ad::layer_norm(t, v[0], v[1], v[2], T(kLayerNormEps)), r);
                                }));
  }
  {
    const Shape xs(3, 4, 2, 2);
    auto r = uniform(xs, rng);
    const Shape cs(4, 1, 1, 1);
    checks.push_back(make_check("batch_norm_train", xs.str(), none, {uniform(xs, rng), uniform(cs, rng), uniform(cs, rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  using T = ScalarOf<decltype(t)>;
                                  auto state = BatchNormState<T>::fresh(4);
                                  return project(t,
                                                 ad::batch_norm(t, v[0], v[1], v[2], state, true, T(kBatchNormEps),
                                                                T(kBatchNormMomentum)),
                                                 r);
                                }));
    checks.push_back(make_check("batch_norm_eval", xs.str(), none, {uniform(xs, rng), uniform(cs, rng), uniform(cs, rng)},
                                [r](auto& t, const std::vector<Var>& v) {
                                  using T = ScalarOf<decltype(t)>;
                                  auto state = BatchNormState<T>::fresh(4);
                                  Tensor<T> mean(Shape(4, 1, 1, 1)), var(Shape(4, 1, 1, 1));
                                  for (std::size_t c = 0; c < 4; ++c) {
                                    mean[c] = T(0.1) * T(c);
                                    var[c] = T(0.5) + T(0.1) * T(c);
                                  }
                                  state.seed(mean, var);
                                  return project(t,
                                                 ad::batch_norm(t, v[0], v[1], v[2], state, false, T(kBatchNormEps),
                                                                T(kBatchNormMomentum)),
                                                 r);
                                }));
  }
  {
    const Shape ls(4, 5, 1, 1);
    std::vector<std::uint32_t> labels;
    for (int i = 0; i < 4; ++i) labels.push_back(static_cast<std::uint32_t>(rng.below(5)));
    checks.push_back(make_check("cross_entropy", ls.str(), none, {uniform(ls, rng)},
                                [labels](auto& t, const std::vector<Var>& v) {
                                  return ad::cross_entropy(t, v[0], std::span<const std::uint32_t>(labels));
                                }));
  }
  return checks;
}

std::vector<Check> layer_checks(Rng& rng) {
  std::vector<Check> checks;
  {
    ParamStore<double> p;
    register_linear(p, "mlp.fc1", 4, 8, rng);
    register_linear(p, "mlp.fc2", 8, 4, rng);
    fill_uniform(p, rng);
    const Shape xs(1, 4, 2, 2);
    auto r = uniform(xs, rng);
    checks.push_back(make_check("mlp", xs.str() + " tau=2", p, {uniform(xs, rng)}, [r](auto& t, const std::vector<Var>& v) {
      return project(t, mlp(t, v[0], "mlp", ActKind::gelu), r);
    }));
  }
  for (const NormKind norm : {NormKind::layernorm, NormKind::batchnorm}) {
    ParamStore<double> p;
    register_shift_block(p, "block", 8, 2, rng);
    fill_uniform(p, rng);
    const Shape xs(1, 8, 4, 4);
    auto r = uniform(xs, rng);
    checks.push_back(make_check(std::string("shift_block/") + to_string(norm), xs.str(), p, {uniform(xs, rng)},
                                [r, norm](auto& t, const std::vector<Var>& v) {
                                  using T = ScalarOf<decltype(t)>;
                                  auto state = BatchNormState<T>::fresh(8);
                                  const BlockOptions opt{ShiftSpec{Ratio{1, 8}, 1}, norm, ActKind::gelu, true};
                                  return project(t, shift_block(t, v[0], "block", opt, &state), r);
                                }));
  }
  {
    ParamStore<double> p;
    register_linear(p, "head", 6, 3, rng);
    fill_uniform(p, rng);
    const Shape xs(2, 6, 2, 2);
    auto r = uniform(Shape(2, 3, 1, 1), rng);
    checks.push_back(make_check("classifier_head", xs.str(), p, {uniform(xs, rng)}, [r](auto& t, const std::vector<Var>& v) {
      return project(t, classifier_head(t, v[0], "head"), r);
    }));
  }
  return checks;
}

// Full Nano forward plus cross-entropy: input gradient and a sample of parameter entries.
GradcheckRow end_to_end(std::uint64_t seed, Dtype dtype) {
  constexpr std::size_t kSampledParams = 48;
  VariantConfig cfg = *variant_preset("shift-nano");
  ShiftViT<double> model = ShiftViT<double>::build(cfg, seed);
  Rng rng(mix_seed(seed, 0xe2e));
  const Tensor<double> x = uniform(Shape(1, 3, cfg.input_size, cfg.input_size), rng);
  const std::vector<std::uint32_t> labels{static_cast<std::uint32_t>(rng.below(cfg.num_classes))};

  auto loss_of = [&](ShiftViT<double>& m, const Tensor<double>& input) {
    Tape<double> tape(&m.params());
    const Var logits = m.forward(tape, tape.input(input), true);
    return tape.value(ad::cross_entropy(tape, logits, std::span<const std::uint32_t>(labels)))[0];
  };
  auto analytic_grads = [&]<typename T>(ShiftViT<T> m) {
    Tape<T> tape(&m.params());
    const Var in = tape.input(x.template cast<T>());
    const Var logits = m.forward(tape, in, true);
    Gradients<T> g = tape.backward(ad::cross_entropy(tape, logits, std::span<const std::uint32_t>(labels)));
    return std::make_pair(g.input(in).template cast<double>(), g.params.template cast<double>());
  };
  auto [dx, dparams] = dtype == Dtype::f64 ? analytic_grads(model) : analytic_grads(model.cast<float>());

  double worst = max_rel_error(dx, finite_diff([&](const Tensor<double>& xi) { return loss_of(model, xi); }, x,
                                               kFiniteDiffStep));
  for (std::size_t s = 0; s < kSampledParams; ++s) {
    const std::size_t a = rng.below(model.params().size());
    Tensor<double>& w = model.params()[a].value;
    const std::size_t e = rng.below(w.numel());
    const double orig = w[e];
    w[e] = orig + kFiniteDiffStep;
    const double up = loss_of(model, x);
    w[e] = orig - kFiniteDiffStep;
    const double down = loss_of(model, x);
    w[e] = orig;
    const Tensor<double> fd(Shape(1, 1, 1, 1), (up - down) / (2 * kFiniteDiffStep));
    const Tensor<double> an(Shape(1, 1, 1, 1), dparams[a].value[e]);
    worst = std::max(worst, max_rel_error(an, fd));
  }
  const double threshold = dtype == Dtype::f64 ? kEndToEndTolerance : kF32Tolerance;
  return GradcheckRow{"nano_end_to_end", Shape(1, 3, cfg.input_size, cfg.input_size).str(), worst, threshold,
                      worst <= threshold};
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, Dtype dtype) {
  GradcheckReport report;
  Rng rng(seed);
  for (auto& c : op_checks(rng)) report.rows.push_back(run_check(std::move(c), dtype));
  for (auto& c : layer_checks(rng)) report.rows.push_back(run_check(std::move(c), dtype));
  report.rows.push_back(end_to_end(seed, dtype));
  return report;
}

}  // namespace shiftvit
