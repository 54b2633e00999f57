#include "shiftvit/train.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <ostream>
#include <sstream>

#include <fmt/format.h>

#include "shiftvit/binary_io.hpp"
#include "shiftvit/layers.hpp"

namespace shiftvit {

using nlohmann::json;

template <typename T>
OptimizerState<T> OptimizerState<T>::init(OptimizerKind kind, const ParamStore<T>& params) {
  OptimizerState s;
  s.kind = kind;
  for (const auto& e : params) {
    s.first.add(e.name, Tensor<T>(e.value.shape()));
    if (kind == OptimizerKind::adamw) s.second.add(e.name, Tensor<T>(e.value.shape()));
  }
  return s;
}

namespace {

template <typename T>
void check_grads(const ParamStore<T>& params, const ParamStore<T>& grads, const OptimizerState<T>& state) {
  if (grads.size() != params.size() || state.first.size() != params.size()) {
    throw DimensionError("optimizer: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].name != params[i].name || grads[i].value.shape() != params[i].value.shape()) {
      throw DimensionError("optimizer: gradient '" + grads[i].name + "' " + grads[i].value.shape().str() +
                           " does not match parameter '" + params[i].name + "' " + params[i].value.shape().str());
    }
    for (std::size_t j = 0; j < grads[i].value.numel(); ++j) {
      if (!std::isfinite(grads[i].value[j])) {
        throw NonFiniteError("non-finite gradient in parameter '" + params[i].name + "' at element " +
                             std::to_string(j));
      }
    }
  }
}

}  // namespace

template <typename T>
void adamw_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimizerState<T>& state, double lr,
                double beta1, double beta2, double eps, double weight_decay) {
  check_grads(params, grads, state);
  if (state.second.size() != params.size()) throw ContractError("adamw_step: state lacks second moments");
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(beta1, t);
  const double c2 = 1.0 - std::pow(beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].value;
    const Tensor<T>& g = grads[i].value;
    Tensor<T>& m = state.first[i].value;
    Tensor<T>& v = state.second[i].value;
    for (std::size_t j = 0; j < p.numel(); ++j) {
      double pj = p[j];
      pj -= lr * weight_decay * pj;
      const double gj = g[j];
      const double mj = beta1 * m[j] + (1.0 - beta1) * gj;
      const double vj = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      pj -= lr * (mj / c1) / (std::sqrt(vj / c2) + eps);
      p[j] = static_cast<T>(pj);
    }
  }
}

template <typename T>
void sgd_step(ParamStore<T>& params, const ParamStore<T>& grads, OptimizerState<T>& state, double lr,
              double momentum, double weight_decay) {
  check_grads(params, grads, state);
  ++state.steps;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<T>& p = params[i].value;
    const Tensor<T>& g = grads[i].value;
    Tensor<T>& vel = state.first[i].value;
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double d = static_cast<double>(g[j]) + weight_decay * p[j];
      const double vj = momentum * vel[j] + d;
      vel[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(p[j] - lr * vj);
    }
  }
}

double cosine_lr(std::uint64_t step, std::uint64_t total_steps, double base_lr, std::uint64_t warmup_steps) {
  if (step >= total_steps) {
    throw ContractError("cosine_lr: step " + std::to_string(step) + " outside [0," + std::to_string(total_steps) +
                        ")");
  }
  if (step + 1 == total_steps && step >= warmup_steps) return 0.0;
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - 1 - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double scheduled_lr(ScheduleKind kind, std::uint64_t step, std::uint64_t total_steps, double base_lr,
                    std::uint64_t warmup_steps) {
  if (kind == ScheduleKind::cosine) return cosine_lr(step, total_steps, base_lr, warmup_steps);
  if (step >= total_steps) throw ContractError("scheduled_lr: step out of range");
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return base_lr;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{:.9g},{:.9g},{:.6f},{:.6f}\n", r.epoch, r.step, r.lr, r.train_loss, r.train_acc,
                       r.eval_acc);
  }
  return out;
}

Checkpoint Checkpoint::initial(const VariantConfig& model_cfg, const TrainConfig& train_cfg, const NormStats& norm) {
  Checkpoint c;
  c.model_config = model_cfg;
  c.train_config = train_cfg;
  c.norm = norm;
  c.model = ShiftViT<float>::build(model_cfg, train_cfg.seed);
  c.optimizer = OptimizerState<float>::init(train_cfg.optimizer, c.model.params());
  c.rng = Rng(mix_seed(train_cfg.seed, 0x5eed)).state();
  return c;
}

bool same_state(const Checkpoint& a, const Checkpoint& b) {
  if (!(a.model_config == b.model_config && a.train_config == b.train_config && a.step == b.step &&
        a.partial == b.partial && a.norm == b.norm && a.log == b.log && a.rng == b.rng &&
        a.optimizer == b.optimizer && a.model.params() == b.model.params())) {
    return false;
  }
  const auto& sa = a.model.norm_states();
  const auto& sb = b.model.norm_states();
  if (sa.size() != sb.size()) return false;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i].first != sb[i].first || !(sa[i].second.running_mean == sb[i].second.running_mean) ||
        !(sa[i].second.running_var == sb[i].second.running_var) || sa[i].second.updates != sb[i].second.updates) {
      return false;
    }
  }
  return true;
}

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'V', 'C', 'K'};

json names_of(const ParamStore<float>& store) {
  json out = json::array();
  for (const auto& e : store) out.push_back(e.name);
  return out;
}

json row_to_json(const MetricRow& r) {
  return json{{"epoch", r.epoch}, {"step", r.step},         {"lr", r.lr},
              {"train_loss", r.train_loss}, {"train_acc", r.train_acc}, {"eval_acc", r.eval_acc}};
}

MetricRow row_from_json(const json& j) {
  return MetricRow{j.at("epoch").get<std::uint64_t>(), j.at("step").get<std::uint64_t>(), j.at("lr").get<double>(),
                   j.at("train_loss").get<double>(),   j.at("train_acc").get<double>(), j.at("eval_acc").get<double>()};
}

// Reads arrays listed in `names` into `store`, which already holds the expected shapes.
void read_arrays(std::istream& is, ParamStore<float>& store, const json& names, const char* section) {
  if (names.size() != store.size()) {
    throw ShapeMismatchError(fmt::format("checkpoint {} section has {} arrays, model expects {}", section,
                                         names.size(), store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto name = names[i].get<std::string>();
    Tensor<float> t = read_tensor<float>(is);
    if (name != store[i].name || t.shape() != store[i].value.shape()) {
      throw ShapeMismatchError(fmt::format("checkpoint array '{}' {} does not match expected '{}' {}", name,
                                           t.shape().str(), store[i].name, store[i].value.shape().str()));
    }
    store[i].value = std::move(t);
  }
}

Tensor<float> read_buffer(std::istream& is, const Tensor<float>& like, const std::string& name) {
  Tensor<float> t = read_tensor<float>(is);
  if (t.shape() != like.shape()) {
    throw ShapeMismatchError(fmt::format("checkpoint buffer '{}' {} does not match expected {}", name,
                                         t.shape().str(), like.shape().str()));
  }
  return t;
}

Checkpoint read_checkpoint_impl(std::istream& is, const VariantConfig* expected) {
  char magic[4];
  io::read_exact(is, magic, 4, "checkpoint magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw BadMagicError("not a checkpoint (expected SVCK magic)");
  const auto version = io::read_le<std::uint32_t>(is, "checkpoint version");
  if (version != Checkpoint::kVersion) {
    throw VersionError(fmt::format("checkpoint version {} unsupported (this build reads version {})", version,
                                   Checkpoint::kVersion));
  }
  const auto header_len = io::read_le<std::uint64_t>(is, "checkpoint header length");
  std::string header_text(header_len, '\0');
  io::read_exact(is, header_text.data(), header_len, "checkpoint header");
  json h;
  try {
    h = json::parse(header_text);
  } catch (const json::exception& e) {
    throw FileError(std::string("corrupt checkpoint header: ") + e.what());
  }

  Checkpoint c;
  c.model_config = variant_from_json(h.at("model"));
  c.train_config = train_from_json(h.at("train"));
  c.step = h.at("step").get<std::uint64_t>();
  const auto& p = h.at("partial");
  c.partial = EpochAccumulator{p.at("loss_sum").get<double>(), p.at("correct").get<std::uint64_t>(),
                               p.at("seen").get<std::uint64_t>()};
  const auto mean = h.at("norm").at("mean").get<std::vector<float>>();
  const auto sd = h.at("norm").at("std").get<std::vector<float>>();
  if (mean.size() != 3 || sd.size() != 3) throw FileError("checkpoint normalization constants must have 3 entries");
  std::copy(mean.begin(), mean.end(), c.norm.mean.begin());
  std::copy(sd.begin(), sd.end(), c.norm.std.begin());
  for (const auto& r : h.at("log")) c.log.push_back(row_from_json(r));
  c.rng = h.at("rng").get<std::string>();
  try {
    Rng().set_state(c.rng);
  } catch (const ContractError&) {
    throw FileError("checkpoint rng state is malformed");
  }

  // Arrays are checked against a model built from the expected config (or the stored one).
  const VariantConfig& shape_cfg = expected != nullptr ? *expected : c.model_config;
  c.model = ShiftViT<float>::build(shape_cfg, 0);
  read_arrays(is, c.model.params(), h.at("params"), "parameter");

  const auto& states = h.at("norm_states");
  auto& model_states = c.model.norm_states();
  if (states.size() != model_states.size()) {
    throw ShapeMismatchError(fmt::format("checkpoint has {} batch-norm states, model expects {}", states.size(),
                                         model_states.size()));
  }
  for (std::size_t i = 0; i < states.size(); ++i) {
    const auto name = states[i].at("name").get<std::string>();
    if (name != model_states[i].first) {
      throw ShapeMismatchError("checkpoint batch-norm state '" + name + "' does not match expected '" +
                               model_states[i].first + "'");
    }
    auto& st = model_states[i].second;
    st.running_mean = read_buffer(is, st.running_mean, name + ".running_mean");
    st.running_var = read_buffer(is, st.running_var, name + ".running_var");
    st.updates = states[i].at("updates").get<std::uint64_t>();
  }
  if (expected != nullptr) c.model_config = *expected;

  const auto& opt = h.at("optimizer");
  const auto kind = opt.at("kind").get<std::string>();
  c.optimizer = OptimizerState<float>::init(kind == "sgd" ? OptimizerKind::sgd : OptimizerKind::adamw,
                                            c.model.params());
  c.optimizer.steps = opt.at("steps").get<std::uint64_t>();
  read_arrays(is, c.optimizer.first, opt.at("first"), "optimizer first-moment");
  read_arrays(is, c.optimizer.second, opt.at("second"), "optimizer second-moment");

  return c;
}

}  // namespace

void write_checkpoint(std::ostream& os, const Checkpoint& c) {
  json h;
  h["model"] = to_json(c.model_config);
  h["train"] = to_json(c.train_config);
  h["step"] = c.step;
  h["partial"] = json{{"loss_sum", c.partial.loss_sum}, {"correct", c.partial.correct}, {"seen", c.partial.seen}};
  h["norm"] = json{{"mean", c.norm.mean}, {"std", c.norm.std}};
  h["log"] = json::array();
  for (const auto& r : c.log) h["log"].push_back(row_to_json(r));
  h["params"] = names_of(c.model.params());
  h["norm_states"] = json::array();
  for (const auto& [name, st] : c.model.norm_states()) {
    h["norm_states"].push_back(json{{"name", name}, {"updates", st.updates}});
  }
  h["optimizer"] = json{{"kind", to_string(c.optimizer.kind)},
                        {"steps", c.optimizer.steps},
                        {"first", names_of(c.optimizer.first)},
                        {"second", names_of(c.optimizer.second)}};
  h["rng"] = c.rng;
  const std::string text = h.dump();

  os.write(kCheckpointMagic, 4);
  io::write_le<std::uint32_t>(os, Checkpoint::kVersion);
  io::write_le<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& e : c.model.params()) write_tensor(os, e.value);
  for (const auto& [name, st] : c.model.norm_states()) {
    write_tensor(os, st.running_mean);
    write_tensor(os, st.running_var);
  }
  for (const auto& e : c.optimizer.first) write_tensor(os, e.value);
  for (const auto& e : c.optimizer.second) write_tensor(os, e.value);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FileError("cannot write checkpoint '" + tmp.string() + "'");
    write_checkpoint(os, ckpt);
    if (!os) throw FileError("write failed for checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(std::istream& is) { return read_checkpoint_impl(is, nullptr); }

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint_impl(is, nullptr);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const VariantConfig& expected) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError("cannot open checkpoint '" + path.string() + "'");
  return read_checkpoint_impl(is, &expected);
}

Dataset normalized_copy(const Dataset& data, const NormStats& norm) {
  Dataset out = data;
  normalize(out.images, norm);
  return out;
}

double evaluate(ShiftViT<float>& model, const Dataset& data, std::size_t batch_size) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(data.size(), start + batch_size); ++i) idx.push_back(i);
    const Batch b = gather(data, idx);
    const auto pred = argmax_rows(model.logits(b.images));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i] ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainResult train_loop(Checkpoint state, const Dataset& train_raw, const Dataset& eval_raw,
                       const TrainOptions& options) {
  const TrainConfig& tc = state.train_config;
  const bool write_files = !options.out_dir.empty();
  if (write_files) std::filesystem::create_directories(options.out_dir);
  const auto ckpt_path = options.out_dir / "checkpoint.svck";
  auto write_outputs = [&] {
    if (!write_files) return;
    save_checkpoint(ckpt_path, state);
    std::ofstream csv(options.out_dir / "metrics.csv", std::ios::trunc);
    csv << metrics_csv(state.log);
  };

  if (tc.epochs == 0) {
    write_outputs();
    return TrainResult{std::move(state), true};
  }
  tc.validate();
  train_raw.validate();
  eval_raw.validate();
  if (train_raw.size() == 0) throw ContractError("train_loop: empty training set");
  if (train_raw.num_classes > state.model_config.num_classes) {
    throw ConfigError(fmt::format("dataset has {} classes but the model head has {}", train_raw.num_classes,
                                  state.model_config.num_classes));
  }

  const Dataset train = normalized_copy(train_raw, state.norm);
  const Dataset eval = normalized_copy(eval_raw, state.norm);
  const std::uint64_t steps_per_epoch = (train.size() + tc.batch_size - 1) / tc.batch_size;
  const std::uint64_t total = steps_per_epoch * tc.epochs;
  const std::uint64_t warmup = steps_per_epoch * tc.warmup_epochs;
  const bool batch_norm = state.model_config.norm == NormKind::batchnorm;
  Rng rng;
  rng.set_state(state.rng);

  while (state.step < total) {
    const std::uint64_t epoch = state.step / steps_per_epoch;
    const auto order = batch_indices(train.size(), tc.batch_size, tc.seed, epoch);
    double lr = 0;
    for (std::uint64_t b = state.step % steps_per_epoch; b < steps_per_epoch; ++b) {
      lr = scheduled_lr(tc.schedule, state.step, total, tc.base_lr, warmup);
      Batch batch = gather(train, order[b]);
      if (tc.hflip) {
        for (std::size_t i = 0; i < batch.labels.size(); ++i)
          if ((rng.next() >> 63) != 0) hflip(batch.images, i);
      }
      // Batch statistics need at least two samples at the 1x1 last stage.
      if (!(batch_norm && batch.labels.size() < 2)) {
        Tape<float> tape(&state.model.params());
        const Var logits = state.model.forward(tape, tape.input(std::move(batch.images)), true);
        const Var loss = ad::cross_entropy(tape, logits, std::span<const std::uint32_t>(batch.labels));
        const float loss_value = tape.value(loss)[0];
        if (!std::isfinite(loss_value)) {
          throw NonFiniteError(fmt::format("non-finite loss at step {} (epoch {}); last checkpoint kept", state.step,
                                           epoch + 1));
        }
        const auto pred = argmax_rows(tape.value(logits));
        for (std::size_t i = 0; i < pred.size(); ++i) state.partial.correct += pred[i] == batch.labels[i] ? 1 : 0;
        state.partial.loss_sum += static_cast<double>(loss_value) * static_cast<double>(batch.labels.size());
        state.partial.seen += batch.labels.size();
        Gradients<float> grads = tape.backward(loss);
        if (tc.optimizer == OptimizerKind::adamw) {
          adamw_step(state.model.params(), grads.params, state.optimizer, lr, tc.beta1, tc.beta2, tc.adam_eps,
                     tc.weight_decay);
        } else {
          sgd_step(state.model.params(), grads.params, state.optimizer, lr, tc.momentum, tc.weight_decay);
        }
      }
      ++state.step;
      state.rng = rng.state();
      if (b + 1 < steps_per_epoch && options.stop_after_steps && state.step >= *options.stop_after_steps) {
        write_outputs();
        return TrainResult{std::move(state), false};
      }
    }
    MetricRow row;
    row.epoch = epoch + 1;
    row.step = state.step;
    row.lr = lr;
    const double seen = static_cast<double>(std::max<std::uint64_t>(1, state.partial.seen));
    row.train_loss = state.partial.loss_sum / seen;
    row.train_acc = static_cast<double>(state.partial.correct) / seen;
    row.eval_acc = evaluate(state.model, eval);
    state.log.push_back(row);
    state.partial = EpochAccumulator{};
    write_outputs();
    if (options.progress != nullptr) {
      *options.progress << fmt::format("epoch {:>3}  step {:>6}  lr {:.3e}  loss {:.4f}  train_acc {:.4f}  eval_acc {:.4f}\n",
                                       row.epoch, row.step, row.lr, row.train_loss, row.train_acc, row.eval_acc);
    }
    if (options.stop_after_steps && state.step >= *options.stop_after_steps && state.step < total) {
      return TrainResult{std::move(state), false};
    }
  }
  return TrainResult{std::move(state), true};
}

template struct OptimizerState<float>;
template struct OptimizerState<double>;
template void adamw_step(ParamStore<float>&, const ParamStore<float>&, OptimizerState<float>&, double, double, double,
                         double, double);
template void adamw_step(ParamStore<double>&, const ParamStore<double>&, OptimizerState<double>&, double, double,
                         double, double, double);
template void sgd_step(ParamStore<float>&, const ParamStore<float>&, OptimizerState<float>&, double, double, double);
template void sgd_step(ParamStore<double>&, const ParamStore<double>&, OptimizerState<double>&, double, double,
                       double);

}  // namespace shiftvit
