#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "gmsa/finite_diff.hpp"
#include "gmsa/rng.hpp"
#include "gmsa/tensor.hpp"

using namespace gmsa;

namespace {

Tensor param(const Shape& shape, Rng& rng, ParameterStore& store, const std::string& name,
             double stddev = 0.5) {
  Tensor t = Tensor::randn(shape, rng, stddev);
  t.set_requires_grad(true);
  store.add(name, t);
  return t;
}

}  // namespace

TEST_CASE("matmul forward") {
  SUBCASE("identity") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
    Tensor c = matmul(eye, a);
    CHECK(c.data() == std::vector<double>{1, 2, 3, 4});
  }
  SUBCASE("row times column") {
    Tensor a = Tensor::from_data({1, 2}, {1, 2});
    Tensor b = Tensor::from_data({2, 1}, {3, 4});
    CHECK(matmul(a, b).scalar() == doctest::Approx(11.0));
  }
  SUBCASE("shape mismatch names both shapes") {
    Tensor a = Tensor::from_data({2, 3}, std::vector<double>(6, 0.0));
    Tensor b = Tensor::from_data({2, 3}, std::vector<double>(6, 0.0));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), std::invalid_argument);
  }
}

TEST_CASE("matmul backward matches finite differences") {
  Rng rng(7);
  ParameterStore store;
  Tensor a = param({3, 4}, rng, store, "a");
  Tensor b = param({4, 2}, rng, store, "b");
  auto loss = [&] { return sum_all(matmul(a, b)); };
  auto report = finite_diff_check(loss, store, 1e-5, 1e-6);
  CHECK(report.passed);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("matmul_nt agrees with explicit transpose") {
  Rng rng(11);
  Tensor a = Tensor::randn({3, 5}, rng, 1.0);
  Tensor b = Tensor::randn({4, 5}, rng, 1.0);
  Tensor c = matmul_nt(a, b);
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      double expect = 0.0;
      for (int k = 0; k < 5; ++k) expect += a.at(i, k) * b.at(j, k);
      CHECK(c.at(i, j) == doctest::Approx(expect).epsilon(1e-12));
    }
  }

  ParameterStore store;
  Tensor pa = param({3, 5}, rng, store, "a");
  Tensor pb = param({4, 5}, rng, store, "b");
  auto loss = [&] { return sum_all(matmul_nt(pa, pb)); };
  CHECK(finite_diff_check(loss, store, 1e-5, 1e-6).passed);
}

TEST_CASE("row_softmax") {
  SUBCASE("symmetric row") {
    Tensor x = Tensor::from_data({1, 2}, {0, 0});
    Tensor p = row_softmax(x);
    CHECK(p.at(0, 0) == doctest::Approx(0.5));
    CHECK(p.at(0, 1) == doctest::Approx(0.5));
  }
  SUBCASE("large values do not overflow") {
    Tensor x = Tensor::from_data({1, 2}, {1000, 1000});
    Tensor p = row_softmax(x);
    CHECK(p.at(0, 0) == doctest::Approx(0.5));
    CHECK(std::isfinite(p.at(0, 1)));
  }
  SUBCASE("mask renormalizes over unmasked entries") {
    Tensor x = Tensor::from_data({1, 3}, {0, 0, 0});
    SoftmaxMask mask{1, 1, 0};
    Tensor p = row_softmax(x, &mask);
    CHECK(p.at(0, 0) == doctest::Approx(0.5));
    CHECK(p.at(0, 1) == doctest::Approx(0.5));
    CHECK(p.at(0, 2) == 0.0);
  }
  SUBCASE("fully masked row is a domain error") {
    Tensor x = Tensor::from_data({1, 2}, {0, 0});
    SoftmaxMask mask{0, 0};
    CHECK_THROWS_AS(row_softmax(x, &mask), std::domain_error);
  }
  SUBCASE("rows sum to one over unmasked entries") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor x = Tensor::randn({4, 6}, rng, 3.0);
      SoftmaxMask mask(24, 0);
      for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.next_double() < 0.7 ? 1 : 0;
      for (int i = 0; i < 4; ++i) mask[static_cast<size_t>(i) * 6 + i] = 1;  // keep rows alive
      Tensor p = row_softmax(x, &mask);
      for (int i = 0; i < 4; ++i) {
        double s = 0.0;
        for (int j = 0; j < 6; ++j) {
          s += p.at(i, j);
          if (!mask[static_cast<size_t>(i) * 6 + j]) CHECK(p.at(i, j) == 0.0);
        }
        CHECK(std::fabs(s - 1.0) < 1e-12);
      }
    }
  }
  SUBCASE("backward matches finite differences") {
    Rng rng(5);
    ParameterStore store;
    Tensor x = param({3, 4}, rng, store, "x");
    Tensor w = Tensor::randn({3, 4}, rng, 1.0);
    auto loss = [&] { return sum_all(mul(row_softmax(x), w)); };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
}

TEST_CASE("cross_entropy_mean") {
  SUBCASE("uniform logits give ln V") {
    Tensor logits = Tensor::zeros({3, 4});
    Tensor loss = cross_entropy_mean(logits, {0, 2, 3});
    CHECK(loss.scalar() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
  }
  SUBCASE("saturated logits give near-zero loss") {
    Tensor logits = Tensor::zeros({2, 5});
    logits.at(0, 1) = 20.0;
    logits.at(1, 4) = 20.0;
    Tensor loss = cross_entropy_mean(logits, {1, 4});
    CHECK(loss.scalar() < 1e-6);
  }
  SUBCASE("random case matches independent two-pass evaluation") {
    Rng rng(9);
    Tensor logits = Tensor::randn({5, 7}, rng, 2.0);
    std::vector<int> targets{3, 0, 6, 2, 2};
    // independent oracle: plain softmax then log, no shared code path
    double expect = 0.0;
    for (int i = 0; i < 5; ++i) {
      double denom = 0.0;
      for (int j = 0; j < 7; ++j) denom += std::exp(logits.at(i, j));
      expect += -std::log(std::exp(logits.at(i, targets[i])) / denom);
    }
    expect /= 5.0;
    CHECK(cross_entropy_mean(logits, targets).scalar() == doctest::Approx(expect).epsilon(1e-10));
  }
  SUBCASE("out of range target is an index error") {
    Tensor logits = Tensor::zeros({2, 4});
    CHECK_THROWS_AS(cross_entropy_mean(logits, {0, 4}), std::out_of_range);
  }
  SUBCASE("backward matches finite differences") {
    Rng rng(13);
    ParameterStore store;
    Tensor x = param({4, 6}, rng, store, "logits");
    auto loss = [&] { return cross_entropy_mean(x, {1, 5, 0, 3}); };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
}

TEST_CASE("backward basics") {
  SUBCASE("sum gradient is all ones") {
    Tensor w = Tensor::from_data({2, 3}, {1, -2, 3, 4, -5, 6});
    w.set_requires_grad(true);
    backward(sum_all(w));
    CHECK(w.grad() == std::vector<double>(6, 1.0));
  }
  SUBCASE("grad of sum(w*w)/2 is w") {
    Tensor w = Tensor::from_data({2, 2}, {1.5, -2.0, 0.25, 3.0});
    w.set_requires_grad(true);
    backward(scale(sum_all(mul(w, w)), 0.5));
    for (size_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == doctest::Approx(w.data()[i]));
  }
  SUBCASE("backward on non-scalar is a usage error") {
    Tensor w = Tensor::zeros({2, 2}, true);
    CHECK_THROWS_AS(backward(add(w, w)), std::invalid_argument);
  }
  SUBCASE("unreached parameters keep zero gradients") {
    Tensor used = Tensor::zeros({2}, true);
    Tensor unused = Tensor::zeros({2}, true);
    backward(sum_all(used));
    CHECK(!unused.has_grad());
  }
}

TEST_CASE("rmsnorm / silu / rope / layout op gradients") {
  Rng rng(21);
  ParameterStore store;
  Tensor x = param({3, 8}, rng, store, "x");
  Tensor s = param({8}, rng, store, "s", 0.3);
  Tensor w = Tensor::randn({3, 8}, rng, 1.0);

  SUBCASE("rmsnorm") {
    auto loss = [&] { return sum_all(mul(rmsnorm(x, s, 1e-5), w)); };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
  SUBCASE("silu") {
    auto loss = [&] { return sum_all(mul(silu(x), w)); };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
  SUBCASE("rope") {
    std::vector<int> pos{0, 3, 17};
    auto loss = [&] { return sum_all(mul(rope_apply(x, pos, 4), w)); };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
  SUBCASE("row and column slicing") {
    auto loss = [&] {
      Tensor top = slice_rows(x, 0, 2);
      Tensor cols = col_slice(x, 2, 4);
      return add(sum_all(top), sum_all(matmul_nt(cols, cols)));
    };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
  SUBCASE("concat") {
    auto loss = [&] {
      Tensor both = concat_rows(x, scale(x, 2.0));
      Tensor wide = col_concat({col_slice(x, 0, 4), col_slice(x, 4, 4)});
      return add(sum_all(mul(both, concat_rows(w, w))), sum_all(wide));
    };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
  SUBCASE("group_mean_rows") {
    auto loss = [&] { return sum_all(mul(group_mean_rows(x, 2), slice_rows(w, 0, 2))); };
    CHECK(finite_diff_check(loss, store, 1e-6, 1e-6).passed);
  }
  SUBCASE("embedding rows") {
    ParameterStore store2;
    Rng rng2(4);
    Tensor table = param({6, 4}, rng2, store2, "table");
    std::vector<int> ids{0, 3, 3, 5};
    Tensor mask = Tensor::randn({4, 4}, rng2, 1.0);
    auto loss = [&] { return sum_all(mul(embedding_rows(table, ids), mask)); };
    CHECK(finite_diff_check(loss, store2, 1e-6, 1e-6).passed);
  }
}

TEST_CASE("rope rotation properties") {
  SUBCASE("position zero is the identity") {
    Rng rng(2);
    Tensor x = Tensor::randn({1, 8}, rng, 1.0);
    Tensor y = rope_apply(x, {0}, 4);
    for (size_t i = 0; i < 8; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-15));
  }
  SUBCASE("quarter rotation maps (x, y) to (-y, x)") {
    // pair t=1 of a 4-wide head sees theta = pos * base^(-1/2); pick base so
    // that theta = pi/2 at position 1
    const double base = std::pow(2.0 / 3.141592653589793, 2.0);
    Tensor x = Tensor::from_data({1, 4}, {0.0, 0.0, 0.7, -0.2});
    Tensor y = rope_apply(x, {1}, 4, base);
    CHECK(y.at(0, 2) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(y.at(0, 3) == doctest::Approx(0.7).epsilon(1e-12));
  }
  SUBCASE("per-pair norm is preserved") {
    Rng rng(6);
    Tensor x = Tensor::randn({5, 8}, rng, 2.0);
    std::vector<int> pos{0, 1, 5, 9, 100};
    Tensor y = rope_apply(x, pos, 4);
    for (int i = 0; i < 5; ++i) {
      for (int p = 0; p < 4; ++p) {
        const double nx = std::hypot(x.at(i, 2 * p), x.at(i, 2 * p + 1));
        const double ny = std::hypot(y.at(i, 2 * p), y.at(i, 2 * p + 1));
        CHECK(std::fabs(nx - ny) < 1e-12);
      }
    }
  }
  SUBCASE("odd head_dim is a config error") {
    Tensor x = Tensor::zeros({1, 3});
    CHECK_THROWS_AS(rope_apply(x, {0}, 3), std::invalid_argument);
  }
}

TEST_CASE("group_mean_rows values") {
  SUBCASE("group length one is the identity") {
    Tensor h = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor g = group_mean_rows(h, 1);
    CHECK(g.data() == h.data());
  }
  SUBCASE("simple mean") {
    Tensor h = Tensor::from_data({2, 2}, {2, 4, 6, 8});
    Tensor g = group_mean_rows(h, 2);
    CHECK(g.shape() == Shape{1, 2});
    CHECK(g.at(0, 0) == doctest::Approx(4.0));
    CHECK(g.at(0, 1) == doctest::Approx(6.0));
  }
  SUBCASE("brute force equivalence for small sizes") {
    Rng rng(31);
    for (int nd = 1; nd <= 12; ++nd) {
      for (int lg = 1; lg <= 6; ++lg) {
        Tensor h = Tensor::randn({nd, 3}, rng, 1.0);
        Tensor g = group_mean_rows(h, lg);
        const int groups = (nd + lg - 1) / lg;
        REQUIRE(g.rows() == groups);
        for (int gi = 0; gi < groups; ++gi) {
          for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            int count = 0;
            for (int i = gi * lg; i < std::min(nd, (gi + 1) * lg); ++i) {
              acc += h.at(i, j);
              ++count;
            }
            CHECK(g.at(gi, j) == acc / count);
          }
        }
      }
    }
  }
  SUBCASE("invalid group length") {
    Tensor h = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(group_mean_rows(h, 0), std::invalid_argument);
  }
}

TEST_CASE("finite_diff_check oracle behavior") {
  SUBCASE("quadratic is exact to 1e-8") {
    ParameterStore store;
    Tensor w = Tensor::from_data({3}, {0.5, -1.25, 2.0});
    w.set_requires_grad(true);
    store.add("w", w);
    auto loss = [&] { return scale(sum_all(mul(w, w)), 0.5); };
    auto report = finite_diff_check(loss, store, 1e-5, 1e-8);
    CHECK(report.passed);
    CHECK(report.max_rel_err < 1e-8);
  }
  SUBCASE("frozen entries are skipped and reported") {
    ParameterStore store;
    Tensor w = Tensor::from_data({2}, {1.0, 2.0});
    w.set_requires_grad(true);
    Tensor frozen = Tensor::from_data({2}, {3.0, 4.0});
    store.add("w", w);
    store.add("frozen", frozen);
    auto loss = [&] { return sum_all(mul(w, frozen)); };
    auto report = finite_diff_check(loss, store, 1e-5, 1e-6);
    CHECK(report.passed);
    REQUIRE(report.entries.size() == 2);
    CHECK(report.entries[0].trainable);
    CHECK(!report.entries[1].trainable);
  }
  SUBCASE("non-deterministic loss is an oracle error") {
    ParameterStore store;
    Tensor w = Tensor::from_data({1}, {1.0});
    w.set_requires_grad(true);
    store.add("w", w);
    int calls = 0;
    auto loss = [&] {
      ++calls;
      return scale(sum_all(w), static_cast<double>(calls));
    };
    CHECK_THROWS_AS(finite_diff_check(loss, store, 1e-5, 1e-6), std::runtime_error);
  }
}

TEST_CASE("flop counter counts forward matmuls and softmax entries") {
  reset_flop_counter();
  Rng rng(1);
  Tensor a = Tensor::randn({3, 4}, rng, 1.0);
  Tensor b = Tensor::randn({4, 5}, rng, 1.0);
  matmul(a, b);
  CHECK(flop_counter() == 2ull * 3 * 4 * 5);
  row_softmax(Tensor::zeros({2, 7}));
  CHECK(flop_counter() == 2ull * 3 * 4 * 5 + 14);
  reset_flop_counter();
  CHECK(flop_counter() == 0);
}

TEST_CASE("no-grad forwards do not record onto the tape") {
  tape().clear();
  Tensor w = Tensor::zeros({2, 2}, true);
  {
    NoGradGuard ng;
    Tensor y = add(w, w);
    CHECK(!y.requires_grad());
  }
  CHECK(tape().size() == 0);
}
