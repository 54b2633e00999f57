#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "shiftvit/error.hpp"
#include "shiftvit/gradcheck.hpp"
#include "shiftvit/tape.hpp"

using namespace shiftvit;

TEST_SUITE("autodiff") {

TEST_CASE("gradient of sum is ones") {
  Rng rng(1);
  auto x = test::random_tensor(Shape(2, 3, 2, 2), rng);
  Tape<double> tape;
  const Var in = tape.input(x);
  auto g = tape.backward(ad::sum(tape, in));
  CHECK(g.input(in) == Tensor<double>(x.shape(), 1.0));
}

TEST_CASE("gradient of sum(shift(x)) is the adjoint applied to ones") {
  Rng rng(2);
  const ShiftSpec spec{Ratio{1, 8}, 1};
  auto x = test::random_tensor(Shape(1, 8, 3, 4), rng);
  Tape<double> tape;
  const Var in = tape.input(x);
  auto g = tape.backward(ad::sum(tape, ad::shift(tape, in, spec)));
  CHECK(g.input(in) == shift_backward(Tensor<double>(x.shape(), 1.0), spec));
}

TEST_CASE("shift gradient does not depend on the input") {
  Rng rng(3);
  const ShiftSpec spec{Ratio{1, 4}, 2};
  auto r = test::random_tensor(Shape(1, 8, 5, 5), rng);
  auto grad_at = [&](const Tensor<double>& x) {
    Tape<double> tape;
    const Var in = tape.input(x);
    return tape.backward(ad::weighted_sum(tape, ad::shift(tape, in, spec), r)).input(in);
  };
  CHECK(grad_at(test::random_tensor(Shape(1, 8, 5, 5), rng)) == grad_at(test::random_tensor(Shape(1, 8, 5, 5), rng)));
}

TEST_CASE("a parameter used twice accumulates both paths") {
  Rng rng(4);
  ParamStore<double> store;
  store.add("w", test::random_tensor(Shape(3, 3, 1, 1), rng));
  store.add("b", Tensor<double>(Shape(3, 1, 1, 1)));
  store.add("unused", Tensor<double>(Shape(2, 1, 1, 1), 5.0));
  auto x = test::random_tensor(Shape(1, 3, 2, 2), rng);
  auto r = test::random_tensor(Shape(1, 3, 2, 2), rng);
  auto loss_of = [&](Tape<double>& tape) {
    const Var w = tape.param("w"), b = tape.param("b");
    const Var h = ad::gelu(tape, ad::linear(tape, tape.input(x), w, b));
    return ad::weighted_sum(tape, ad::linear(tape, h, w, b), r);
  };
  Tape<double> tape(&store);
  auto g = tape.backward(loss_of(tape));
  CHECK(g.param("unused") == Tensor<double>(Shape(2, 1, 1, 1)));

  const Tensor<double> w0 = store.get("w");
  auto fd = finite_diff(
      [&](const Tensor<double>& w) {
        store.get("w") = w;
        Tape<double> t(&store);
        const double v = t.value(loss_of(t))[0];
        store.get("w") = w0;
        return v;
      },
      w0);
  CHECK(max_rel_error(g.param("w"), fd) < 1e-7);
}

TEST_CASE("backward contracts") {
  Tape<double> empty;
  CHECK_THROWS_AS(empty.backward(Var{0}), ContractError);
  Tape<double> tape;
  const Var in = tape.input(Tensor<double>(Shape(1, 2, 1, 1), 1.0));
  CHECK_THROWS_AS(tape.backward(ad::gelu(tape, in)), ContractError);
  Tape<double> unbound;
  CHECK_THROWS_AS(unbound.param("w"), ContractError);
}

TEST_CASE("records replay in exact reverse order") {
  Tape<double> tape;
  std::vector<int> order;
  Var v = tape.input(Tensor<double>(Shape(1, 1, 1, 1), 1.0));
  for (int i = 0; i < 5; ++i) {
    const Var prev = v;
    const std::size_t before = tape.size();
    v = tape.push(OpKind::scale, tape.value(prev), [prev, i, &order](Tape<double>& t, const Tensor<double>& g) {
      order.push_back(i);
      t.accumulate(prev, g);
    });
    CHECK(tape.size() == before + 1);
  }
  tape.backward(v);
  CHECK(order == std::vector<int>{4, 3, 2, 1, 0});
}

TEST_CASE("zero upstream gradient gives zero gradients") {
  Rng rng(5);
  ParamStore<double> store;
  store.add("w", test::random_tensor(Shape(4, 3, 1, 1), rng));
  store.add("b", test::random_tensor(Shape(4, 1, 1, 1), rng));
  Tape<double> tape(&store);
  const Var in = tape.input(test::random_tensor(Shape(2, 3, 2, 2), rng));
  const Var lin = ad::linear(tape, in, tape.param("w"), tape.param("b"));
  const Var gain = tape.input(Tensor<double>(Shape(4, 1, 1, 1), 1.0));
  const Var y = ad::layer_norm(tape, lin, gain, tape.input(Tensor<double>(Shape(4, 1, 1, 1))), 1e-6);
  auto g = tape.backward(ad::sum(tape, y), 0.0);
  for (const auto& e : g.params)
    for (double v : e.value.data()) CHECK(v == 0);
  for (double v : g.input(in).data()) CHECK(v == 0);
}

TEST_CASE("finite_diff oracle") {
  Rng rng(6);
  auto x = test::random_tensor(Shape(1, 2, 3, 3), rng);
  auto ones = finite_diff([](const Tensor<double>& t) { return sum(t); }, x);
  for (double v : ones.data()) CHECK(v == doctest::Approx(1).epsilon(1e-9));
  auto half_sq = finite_diff([](const Tensor<double>& t) { return 0.5 * dot(t, t); }, x);
  CHECK(test::max_abs_diff(half_sq, x) < 1e-9);
  CHECK_THROWS_AS(finite_diff([](const Tensor<double>& t) { return sum(t); }, x, 0.0), ContractError);

  Tensor<double> a(Shape(1, 1, 1, 3), std::vector<double>{1, 0, 1e-12});
  Tensor<double> b(Shape(1, 1, 1, 3), std::vector<double>{1.1, 0, 0});
  CHECK(max_rel_error(a, b) == doctest::Approx(0.1 / 1.1));
}

TEST_CASE("gradcheck suite covers every op and passes") {
  for (const std::uint64_t seed : {0ull, 1ull}) {
    const GradcheckReport report = run_gradcheck(seed);
    CHECK(report.all_pass());
    std::set<std::string> ops;
    for (const auto& row : report.rows) {
      ops.insert(row.op);
      CHECK(row.max_rel_err <= row.threshold);
    }
    for (const char* op : {"linear", "conv2d_nonoverlap", "space_to_depth", "global_avg_pool", "add", "scale", "relu",
                           "gelu", "gelu_tanh", "sum", "shift", "layer_norm", "batch_norm_train", "batch_norm_eval",
                           "cross_entropy", "mlp", "shift_block/layernorm", "shift_block/batchnorm", "classifier_head",
                           "nano_end_to_end"})
      CHECK(ops.count(op) == 1);
    CHECK(report.table().find("max_rel_err") != std::string::npos);
  }
}

TEST_CASE("single precision gradcheck uses the relaxed threshold") {
  const GradcheckReport report = run_gradcheck(0, Dtype::f32);
  for (const auto& row : report.rows) CHECK(row.threshold == kF32Tolerance);
  CHECK(report.all_pass());
}

TEST_CASE("report picks the worst offender") {
  GradcheckReport r;
  r.rows.push_back({"a", "[1]", 1e-6, 1e-5, true});
  r.rows.push_back({"b", "[1]", 2e-5, 1e-4, true});
  r.rows.push_back({"c", "[1]", 3e-5, 1e-5, false});
  CHECK_FALSE(r.all_pass());
  CHECK(r.worst()->op == "c");
  CHECK(GradcheckReport{}.worst() == nullptr);
}

}  // TEST_SUITE
