#include <doctest.h>

#include <cmath>

#include "../support/gradcheck.hpp"
#include "lego/errors.hpp"
#include "lego/optim.hpp"

using namespace lego;
using lego::testing::check_gradients;
using lego::testing::random_tensor;
using lego::testing::TensorD;

namespace {

constexpr double kTol = 1e-4;

// Scalar readout with a fixed random projection so every output entry
// carries a distinct, O(1) weight.
TensorD readout(const TensorD& y, std::uint64_t seed) {
  Rng rng(seed);
  return ag::sum(ag::mul(y, random_tensor(y.shape(), rng, 1.0, false)));
}

void check_op(const char* name, const std::function<TensorD(const std::vector<TensorD>&)>& op,
              const std::vector<ag::Shape>& shapes, double scale = 1.0) {
  for (int point = 0; point < 10; ++point) {
    Rng rng(1000 + static_cast<std::uint64_t>(point));
    std::vector<TensorD> in;
    for (const auto& s : shapes) in.push_back(random_tensor(s, rng, scale));
    const auto res = check_gradients([&] { return readout(op(in), 77); }, in);
    INFO(name << " point " << point << " " << res.worst);
    CHECK(res.max_rel_error < kTol);
  }
}

}  // namespace

TEST_SUITE("tensor-autograd") {
  TEST_CASE("finite differences for every op") {
    using V = std::vector<TensorD>;
    check_op("matmul", [](const V& x) { return ag::matmul(x[0], x[1]); }, {{3, 4}, {4, 5}});
    check_op("matmul_t", [](const V& x) { return ag::matmul(x[0], x[1], true); }, {{3, 4}, {5, 4}});
    check_op("bmm", [](const V& x) { return ag::matmul(x[0], x[1]); }, {{2, 3, 4}, {2, 4, 3}});
    check_op("bmm_t", [](const V& x) { return ag::matmul(x[0], x[1], true); }, {{2, 3, 4}, {2, 5, 4}});
    check_op("linear", [](const V& x) { return ag::linear(x[0], x[1], x[2]); }, {{2, 3, 4}, {4, 5}, {5}});
    check_op("add", [](const V& x) { return ag::add(x[0], x[1]); }, {{3, 4}, {3, 4}});
    check_op("mul", [](const V& x) { return ag::mul(x[0], x[1]); }, {{3, 4}, {3, 4}});
    check_op("scale", [](const V& x) { return ag::scale(x[0], 0.37); }, {{3, 4}});
    check_op("sum", [](const V& x) { return ag::scale(ag::sum(ag::mul(x[0], x[0])), 0.5); }, {{3, 4}});
    check_op("softmax", [](const V& x) { return ag::softmax(x[0]); }, {{3, 5}});
    check_op("masked_softmax",
             [](const V& x) {
               static const std::vector<std::uint8_t> valid = {1, 1, 0, 1, 1, 1, 1, 0};
               return ag::masked_softmax(x[0], valid, 2);
             },
             {{4, 4, 4}});
    check_op("layer_norm", [](const V& x) { return ag::layer_norm(x[0], x[1], x[2], 1e-5); }, {{3, 6}, {6}, {6}});
    check_op("gelu", [](const V& x) { return ag::gelu(x[0]); }, {{4, 5}}, 2.0);
    check_op("embedding",
             [](const V& x) {
               static const std::vector<int> ids = {2, 0, 2, 4, 1};
               return ag::embedding(x[0], ids);
             },
             {{5, 3}});
    check_op("reshape", [](const V& x) { return ag::reshape(ag::mul(x[0], x[0]), {4, 3}); }, {{3, 4}});
    check_op("swap_axes12", [](const V& x) { return ag::swap_axes12(ag::mul(x[0], x[0])); }, {{2, 3, 4, 2}});
    check_op("masked_cross_entropy",
             [](const V& x) {
               static const std::vector<int> labels = {1, -1, 3, 0, -1};
               return ag::masked_cross_entropy(x[0], labels);
             },
             {{5, 4}});
    check_op("dropout",
             [](const V& x) {
               Rng r(5);
               return ag::dropout(x[0], 0.3, r);
             },
             {{4, 6}});
  }

  TEST_CASE("finite differences on random small graphs") {
    for (int g = 0; g < 20; ++g) {
      Rng rng(500 + static_cast<std::uint64_t>(g));
      const int width = 3 + g % 4;
      std::vector<TensorD> leaves = {random_tensor({3, width}, rng)};
      std::vector<int> plan;
      for (int step = 0; step < 4; ++step) plan.push_back(static_cast<int>(rng() % 6));
      std::size_t params = static_cast<std::size_t>(3 * width);
      for (int op : plan) {
        if (op == 0) {
          leaves.push_back(random_tensor({width, width}, rng, 0.5));
          leaves.push_back(random_tensor({width}, rng, 0.5));
          params += static_cast<std::size_t>(width * width + width);
        } else if (op == 1) {
          leaves.push_back(random_tensor({width}, rng));
          leaves.push_back(random_tensor({width}, rng));
          params += static_cast<std::size_t>(2 * width);
        } else if (op == 2) {
          leaves.push_back(random_tensor({3, width}, rng));
          params += static_cast<std::size_t>(3 * width);
        }
      }
      REQUIRE(params <= 200);
      auto f = [&] {
        TensorD y = leaves[0];
        std::size_t next = 1;
        for (int op : plan) {
          switch (op) {
            case 0: y = ag::gelu(ag::linear(y, leaves[next], leaves[next + 1])); next += 2; break;
            case 1: y = ag::layer_norm(y, leaves[next], leaves[next + 1], 1e-5); next += 2; break;
            case 2: y = ag::mul(y, leaves[next]); next += 1; break;
            case 3: y = ag::softmax(y); break;
            case 4: y = ag::scale(y, 1.7); break;
            default: y = ag::add(y, y); break;
          }
        }
        static const std::vector<int> labels = {0, -1, 2};
        return ag::add(ag::masked_cross_entropy(y, labels), readout(y, 9));
      };
      const auto res = check_gradients(f, leaves);
      INFO("graph " << g << " " << res.worst);
      CHECK(res.max_rel_error < kTol);
    }
  }

  TEST_CASE("elementary gradients") {
    auto x = TensorD::scalar(3.0, true);
    auto y = TensorD::scalar(-2.5, true);
    ag::backward(ag::mul(x, y));
    CHECK(x.grad()[0] == -2.5);
    CHECK(y.grad()[0] == 3.0);
    Rng rng(1);
    auto a = random_tensor({4, 3}, rng);
    ag::backward(ag::sum(a));
    for (double g : a.grad()) CHECK(g == 1.0);
  }

  TEST_CASE("softmax, layer norm and cross-entropy values") {
    const auto z = ag::softmax(TensorD::zeros({2, 5}));
    for (double v : z.values()) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
    Rng rng(3);
    const auto s = ag::softmax(random_tensor({6, 7}, rng, 5.0, false));
    for (int r = 0; r < 6; ++r) {
      double total = 0;
      for (int c = 0; c < 7; ++c) {
        CHECK(s.values()[static_cast<std::size_t>(r * 7 + c)] >= 0.0);
        total += s.values()[static_cast<std::size_t>(r * 7 + c)];
      }
      CHECK(std::abs(total - 1.0) < 1e-6);
    }
    const auto ln = ag::layer_norm(random_tensor({4, 8}, rng, 3.0, false), TensorD::full({8}, 1.0),
                                   TensorD::zeros({8}), 1e-12);
    for (int r = 0; r < 4; ++r) {
      double mean = 0, var = 0;
      for (int c = 0; c < 8; ++c) mean += ln.values()[static_cast<std::size_t>(r * 8 + c)] / 8;
      for (int c = 0; c < 8; ++c) var += std::pow(ln.values()[static_cast<std::size_t>(r * 8 + c)] - mean, 2) / 8;
      CHECK(std::abs(mean) < 1e-9);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
    const std::vector<int> labels = {-1, 2, -1};
    std::vector<double> logits(12, 0.0);
    logits[4 + 2] = 60.0;
    auto lg = TensorD::from({3, 4}, logits, true);
    const auto loss = ag::masked_cross_entropy(lg, labels);
    CHECK(loss.item() < 1e-20);
    // Gradient vanishes exactly at unlabeled rows.
    Rng r2(8);
    auto lg2 = random_tensor({3, 4}, r2);
    ag::backward(ag::masked_cross_entropy(lg2, labels));
    for (int c = 0; c < 4; ++c) {
      CHECK(lg2.grad()[static_cast<std::size_t>(c)] == 0.0);
      CHECK(lg2.grad()[static_cast<std::size_t>(8 + c)] == 0.0);
    }
  }

  TEST_CASE("shape errors and determinism") {
    CHECK_THROWS_AS(ag::add(TensorD::zeros({2, 3}), TensorD::zeros({3, 2})), ShapeError);
    CHECK_THROWS_AS(ag::matmul(TensorD::zeros({2, 3}), TensorD::zeros({2, 3})), ShapeError);
    auto run = [] {
      Rng rng(11);
      auto a = random_tensor({5, 6}, rng);
      auto w = random_tensor({6, 6}, rng);
      auto b = random_tensor({6}, rng);
      auto y = ag::softmax(ag::gelu(ag::linear(a, w, b)));
      return std::vector<double>(y.values().begin(), y.values().end());
    };
    CHECK(run() == run());
  }

  TEST_CASE("adam") {
    Rng rng(2);
    auto p = random_tensor({3}, rng);
    const std::vector<double> before(p.values().begin(), p.values().end());
    std::vector<TensorD> params = {p};
    AdamState<double> st;
    p.node()->grad_buffer();
    adam_step(params, st, 1e-2);
    CHECK(std::vector<double>(p.values().begin(), p.values().end()) == before);

    // Constant gradient: every step moves by about lr.
    auto q = TensorD::from({1}, {0.0}, true);
    std::vector<TensorD> qs = {q};
    AdamState<double> sq;
    double last = 0;
    for (int i = 0; i < 200; ++i) {
      q.node()->grad_buffer()[0] = 0.37;
      const double prev = q.values()[0];
      adam_step(qs, sq, 1e-3);
      last = prev - q.values()[0];
    }
    CHECK(last == doctest::Approx(1e-3).epsilon(1e-3));

    // Quadratic (w - 3)^2 converges within 2000 steps.
    auto w = TensorD::from({1}, {-2.0}, true);
    std::vector<TensorD> ws = {w};
    AdamState<double> sw;
    for (int i = 0; i < 2000; ++i) {
      auto d = ag::add(w, TensorD::from({1}, {-3.0}));
      ag::backward(ag::sum(ag::mul(d, d)));
      adam_step(ws, sw, 1e-2);
    }
    CHECK(std::abs(w.values()[0] - 3.0) < 1e-2);
  }

  TEST_CASE("cosine learning-rate schedule") {
    LrSchedule s;
    CHECK(s.base_lr == 5e-5);
    CHECK(s.t_max == 200);
    CHECK(lr_at(s, 0) == doctest::Approx(5e-5));
    CHECK(lr_at(s, 200) == doctest::Approx(0.0));
    CHECK(lr_at(s, 100) == doctest::Approx(2.5e-5));
    LrSchedule m{1e-3, 1e-4, 10};
    CHECK(m.at(5) == doctest::Approx(5.5e-4));
    m.mode = LrMode::restart;
    CHECK(m.at(57, 0) == doctest::Approx(1e-3));
    CHECK(lr_mode_from_string(to_string(LrMode::restart)) == LrMode::restart);
  }
}
