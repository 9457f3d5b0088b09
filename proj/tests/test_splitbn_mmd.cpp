#include <algorithm>
#include <cmath>
#include <vector>

#include <doctest.h>

#include "asmmd/errors.hpp"
#include "asmmd/mmd.hpp"
#include "asmmd/rng.hpp"
#include "asmmd/splitbn.hpp"

using namespace asmmd;

namespace {

Tensor random_tensor(std::vector<std::int64_t> shape, Rng& rng,
                     double scale = 1.0, double offset = 0.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = offset + scale * rng.normal();
  return t;
}

// Plain running-statistics tracker, the reference for buffer updates.
struct BnOracle {
  std::vector<double> mean, var;

  explicit BnOracle(std::int64_t f) : mean(f, 0.0), var(f, 1.0) {}

  void update(const Tensor& x, double momentum) {
    const std::int64_t f = static_cast<std::int64_t>(mean.size());
    const std::int64_t rows = x.numel() / f;
    for (std::int64_t j = 0; j < f; ++j) {
      double m = 0.0;
      for (std::int64_t r = 0; r < rows; ++r) m += x.data[r * f + j];
      m /= static_cast<double>(rows);
      double ss = 0.0;
      for (std::int64_t r = 0; r < rows; ++r) {
        const double d = x.data[r * f + j] - m;
        ss += d * d;
      }
      const double unbiased = ss / static_cast<double>(rows - 1);
      mean[j] = (1.0 - momentum) * mean[j] + momentum * m;
      var[j] = (1.0 - momentum) * var[j] + momentum * unbiased;
    }
  }
};

double mmd2_brute(const Tensor& s, const Tensor& t, double sigma) {
  const std::int64_t n = s.dim(0), m = t.dim(0), c = s.dim(1);
  double ss = 0.0, tt = 0.0, st = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      if (i != j) ss += rbf_kernel(s.ptr() + i * c, s.ptr() + j * c, c, sigma);
    }
  }
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      if (i != j) tt += rbf_kernel(t.ptr() + i * c, t.ptr() + j * c, c, sigma);
    }
  }
  for (std::int64_t i = 0; i < n; ++i) {
    for (std::int64_t j = 0; j < m; ++j) {
      st += rbf_kernel(s.ptr() + i * c, t.ptr() + j * c, c, sigma);
    }
  }
  return ss / static_cast<double>(n * (n - 1)) +
         tt / static_cast<double>(m * (m - 1)) -
         2.0 * st / static_cast<double>(n * m);
}

}  // namespace

TEST_CASE("split-bn normalizes with batch statistics in train mode") {
  SplitBatchNorm bn(3);
  Rng rng(17);
  Tensor x = random_tensor({8, 3}, rng, 2.0, 5.0);
  Value y = bn.forward_train(Value::leaf(x));

  for (std::int64_t j = 0; j < 3; ++j) {
    double m = 0.0;
    for (std::int64_t r = 0; r < 8; ++r) m += x.at(r, j);
    m /= 8.0;
    double v = 0.0;
    for (std::int64_t r = 0; r < 8; ++r) {
      v += (x.at(r, j) - m) * (x.at(r, j) - m);
    }
    v /= 8.0;
    for (std::int64_t r = 0; r < 8; ++r) {
      const double want = (x.at(r, j) - m) / std::sqrt(v + bn.eps());
      CHECK(y.val().at(r, j) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("split-bn pools batch and time axes for rank-3 input") {
  SplitBatchNorm bn(2);
  Rng rng(3);
  Tensor x = random_tensor({4, 5, 2}, rng, 3.0, -1.0);
  Value y = bn.forward_train(Value::leaf(x));

  for (std::int64_t j = 0; j < 2; ++j) {
    double m = 0.0;
    for (std::int64_t r = 0; r < 20; ++r) m += x.data[r * 2 + j];
    m /= 20.0;
    double v = 0.0;
    for (std::int64_t r = 0; r < 20; ++r) {
      v += (x.data[r * 2 + j] - m) * (x.data[r * 2 + j] - m);
    }
    v /= 20.0;
    for (std::int64_t r = 0; r < 20; ++r) {
      const double want = (x.data[r * 2 + j] - m) / std::sqrt(v + bn.eps());
      CHECK(y.val()[r * 2 + j] == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("split-bn keeps one buffer set per domain") {
  SplitBatchNorm bn(2);
  Rng rng(9);

  Tensor xs = random_tensor({6, 2}, rng, 1.0, 4.0);
  Tensor xt = random_tensor({6, 2}, rng, 3.0, -4.0);

  bn.use_domain(Domain::source);
  bn.forward_train(Value::leaf(xs));
  bn.use_domain(Domain::target);
  bn.forward_train(Value::leaf(xt));

  BnOracle source_ref(2), target_ref(2);
  source_ref.update(xs, bn.momentum());
  target_ref.update(xt, bn.momentum());

  for (std::int64_t j = 0; j < 2; ++j) {
    CHECK(bn.running_mean(Domain::source)[j] ==
          doctest::Approx(source_ref.mean[j]).epsilon(1e-14));
    CHECK(bn.running_var(Domain::source)[j] ==
          doctest::Approx(source_ref.var[j]).epsilon(1e-14));
    CHECK(bn.running_mean(Domain::target)[j] ==
          doctest::Approx(target_ref.mean[j]).epsilon(1e-14));
    CHECK(bn.running_var(Domain::target)[j] ==
          doctest::Approx(target_ref.var[j]).epsilon(1e-14));
  }
}

TEST_CASE("interleaved domain traffic equals independent single-domain runs") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    SplitBatchNorm bn(3);
    SplitBatchNorm only_s(3, 0.1, 1e-5, true);
    SplitBatchNorm only_t(3, 0.1, 1e-5, true);
    for (int step = 0; step < 12; ++step) {
      const bool use_source = rng.uniform_below(2) == 0;
      Tensor x = random_tensor({5, 3}, rng, 1.0 + step * 0.1,
                               use_source ? 2.0 : -3.0);
      bn.use_domain(use_source ? Domain::source : Domain::target);
      bn.forward_train(Value::leaf(x));
      (use_source ? only_s : only_t).forward_train(Value::leaf(x));
    }
    for (std::int64_t j = 0; j < 3; ++j) {
      CHECK(bn.running_mean(Domain::source)[j] ==
            only_s.running_mean(Domain::source)[j]);
      CHECK(bn.running_var(Domain::source)[j] ==
            only_s.running_var(Domain::source)[j]);
      CHECK(bn.running_mean(Domain::target)[j] ==
            only_t.running_mean(Domain::target)[j]);
      CHECK(bn.running_var(Domain::target)[j] ==
            only_t.running_var(Domain::target)[j]);
    }
  }
}

TEST_CASE("pooled mode shares one buffer set across domains") {
  SplitBatchNorm bn(2, 0.1, 1e-5, true);
  Rng rng(12);
  bn.use_domain(Domain::source);
  bn.forward_train(Value::leaf(random_tensor({4, 2}, rng, 1.0, 1.0)));
  bn.use_domain(Domain::target);
  bn.forward_train(Value::leaf(random_tensor({4, 2}, rng, 1.0, -1.0)));
  for (std::int64_t j = 0; j < 2; ++j) {
    CHECK(bn.running_mean(Domain::source)[j] ==
          bn.running_mean(Domain::target)[j]);
    CHECK(bn.running_var(Domain::source)[j] ==
          bn.running_var(Domain::target)[j]);
  }
}

TEST_CASE("split-bn eval mode is pure and uses running statistics") {
  SplitBatchNorm bn(2);
  bn.mutable_running_mean(Domain::target) = Tensor::from({2}, {1.0, -1.0});
  bn.mutable_running_var(Domain::target) = Tensor::from({2}, {4.0, 9.0});
  bn.use_domain(Domain::target);

  Tensor x = Tensor::from({1, 2}, {3.0, 5.0});
  Value y = bn.forward_eval(Value::leaf(x));
  CHECK(y.val().at(0, 0) ==
        doctest::Approx((3.0 - 1.0) / std::sqrt(4.0 + bn.eps())));
  CHECK(y.val().at(0, 1) ==
        doctest::Approx((5.0 + 1.0) / std::sqrt(9.0 + bn.eps())));
  CHECK(bn.running_mean(Domain::target)[0] == 1.0);
  CHECK(bn.running_var(Domain::target)[1] == 9.0);
}

TEST_CASE("split-bn gradients pass a numeric check") {
  Rng rng(44);
  Tensor xt = random_tensor({6, 3}, rng, 2.0, 1.0);
  Value x = Value::leaf(xt, true, "x");

  SplitBatchNorm bn(3);
  bn.gamma().mutable_val() = random_tensor({3}, rng, 0.5, 1.0);
  bn.beta().mutable_val() = random_tensor({3}, rng, 0.5, 0.0);

  std::vector<Value> leaves{x, bn.gamma(), bn.beta()};
  auto f = [&] {
    // Reset the buffers so repeated calls see identical state.
    bn.mutable_running_mean(Domain::source) = Tensor::zeros({3});
    bn.mutable_running_var(Domain::source) = Tensor::full({3}, 1.0);
    Value y = bn.forward_train(x);
    return sum_all(mul(y, y));
  };
  GradCheckResult res = grad_check(f, leaves);
  INFO("worst leaf ", res.worst_leaf);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("split-bn rejects mismatched feature width") {
  SplitBatchNorm bn(3);
  CHECK_THROWS_AS(bn.forward_train(Value::leaf(Tensor::zeros({4, 2}))),
                  ShapeError);
  CHECK_THROWS_AS(bn.forward_train(Value::leaf(Tensor::zeros({1, 3}))),
                  ValueError);  // a single row has no batch variance
}

TEST_CASE("median bandwidth handles odd, even and degenerate pair counts") {
  // Rows {0} and {2}: one pair at distance 2.
  Tensor a = Tensor::from({1, 1}, {0.0});
  Tensor b = Tensor::from({1, 1}, {2.0});
  CHECK(median_bandwidth(a, b).sigma == doctest::Approx(2.0));

  // Rows {0, 1, 3}: distances {1, 2, 3}, median 2.
  Tensor c = Tensor::from({2, 1}, {0.0, 1.0});
  Tensor d = Tensor::from({1, 1}, {3.0});
  CHECK(median_bandwidth(c, d).sigma == doctest::Approx(2.0));

  // Rows {0, 1, 2, 4}: distances {1, 2, 4, 1, 3, 2}, central pair {2, 2}.
  Tensor e = Tensor::from({2, 1}, {0.0, 1.0});
  Tensor f = Tensor::from({2, 1}, {2.0, 4.0});
  CHECK(median_bandwidth(e, f).sigma == doctest::Approx(2.0));

  // Coincident points collapse to the floor.
  Tensor g = Tensor::from({2, 1}, {1.0, 1.0});
  CHECK(median_bandwidth(g, g).sigma == doctest::Approx(kSigmaFloor));
}

TEST_CASE("mmd2 frozen example and brute-force equivalence") {
  Tensor s = Tensor::from({2, 1}, {0.0, 2.0});
  const double sigma = std::sqrt(2.0);
  Value v = mmd2_unbiased(Value::leaf(s), Value::leaf(s), sigma);
  CHECK(std::abs(v.val()[0] - (std::exp(-1.0) - 1.0)) < 1e-12);

  Rng rng(77);
  for (int i = 0; i < 25; ++i) {
    const std::int64_t n = 2 + static_cast<std::int64_t>(rng.uniform_below(30));
    const std::int64_t m = 2 + static_cast<std::int64_t>(rng.uniform_below(30));
    const std::int64_t c = 1 + static_cast<std::int64_t>(rng.uniform_below(4));
    Tensor xs = random_tensor({n, c}, rng);
    Tensor xt = random_tensor({m, c}, rng, 1.3, 0.4);
    const double sig = 0.5 + rng.uniform() * 2.0;
    Value got = mmd2_unbiased(Value::leaf(xs), Value::leaf(xt), sig);
    CHECK(std::abs(got.val()[0] - mmd2_brute(xs, xt, sig)) < 1e-12);
  }
}

TEST_CASE("mmd2 rejects batches below the unbiased minimum") {
  Tensor one = Tensor::from({1, 2}, {0.0, 1.0});
  Tensor two = Tensor::from({2, 2}, {0.0, 1.0, 2.0, 3.0});
  CHECK_THROWS_AS(mmd2_unbiased(Value::leaf(one), Value::leaf(two), 1.0),
                  SkippedAlignment);
  CHECK_THROWS_AS(mmd2_unbiased(Value::leaf(two), Value::leaf(one), 1.0),
                  SkippedAlignment);
}

TEST_CASE("mmd2 gradients match numerics with sigma held fixed") {
  Rng rng(101);
  Value s = Value::leaf(random_tensor({5, 3}, rng), true, "s");
  Value t = Value::leaf(random_tensor({4, 3}, rng, 1.2, 0.5), true, "t");
  std::vector<Value> leaves{s, t};
  GradCheckResult res =
      grad_check([&] { return mmd2_unbiased(s, t, 1.7); }, leaves);
  INFO("worst leaf ", res.worst_leaf);
  CHECK(res.max_rel_err < 1e-5);
}

TEST_CASE("alignment_penalty freezes the bandwidth under backprop") {
  Rng rng(55);
  Tensor xs = random_tensor({6, 2}, rng);
  Tensor xt = random_tensor({6, 2}, rng, 1.5, 1.0);

  Value s = Value::leaf(xs, true, "s");
  Value t = Value::leaf(xt, true, "t");
  Value pen = alignment_penalty(s, t);
  backward(pen);

  // The penalty's gradients must be those of the estimator with sigma held
  // at the median of the current batch: no derivative flows through the
  // bandwidth choice.
  const double sigma = median_bandwidth(xs, xt).sigma;
  Value s2 = Value::leaf(xs, true, "s2");
  Value t2 = Value::leaf(xt, true, "t2");
  Value fixed = mmd2_unbiased(s2, t2, sigma);
  CHECK(pen.val()[0] == fixed.val()[0]);
  backward(fixed);

  REQUIRE(s.has_grad());
  REQUIRE(t.has_grad());
  CHECK(s.grad().data == s2.grad().data);
  CHECK(t.grad().data == t2.grad().data);
}

TEST_CASE("alignment_penalty degrades to a constant zero when skipped") {
  Value s = Value::leaf(Tensor::from({1, 2}, {0.0, 1.0}), true, "s");
  Value t = Value::leaf(Tensor::from({3, 2}, {0, 1, 2, 3, 4, 5}), true, "t");
  Value pen = alignment_penalty(s, t);
  CHECK(pen.val()[0] == 0.0);
  backward(pen);
  CHECK_FALSE(s.has_grad());
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("alignment_penalty clamp replaces negative estimates with zero") {
  Rng rng(202);
  // Same distribution on both sides: the unbiased estimate is negative for
  // some draws; retry until one shows up.
  for (int attempt = 0; attempt < 200; ++attempt) {
    Tensor xs = random_tensor({4, 2}, rng);
    Tensor xt = random_tensor({4, 2}, rng);
    Value s = Value::leaf(xs, true, "s");
    Value t = Value::leaf(xt, true, "t");
    Value raw = alignment_penalty(s, t, false);
    if (raw.val()[0] >= 0.0) continue;

    Value clamped = alignment_penalty(s, t, true);
    CHECK(clamped.val()[0] == 0.0);
    backward(clamped);
    CHECK_FALSE(s.has_grad());
    CHECK_FALSE(t.has_grad());
    return;
  }
  FAIL("no negative estimate found");
}
