#include <doctest.h>

#include <cmath>
#include <random>

#include "arcs/tensor.hpp"

using namespace arcs;
using ad::Mat;

TEST_SUITE_BEGIN("tensor");

namespace {

Mat randn(long r, long c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat m(r, c);
  for (long i = 0; i < r; ++i)
    for (long j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

// Central finite differences of a scalar tape program w.r.t. one input
// matrix, compared entrywise against the autodiff gradient.
template <typename BuildFn>
void check_gradient(Mat input, BuildFn build, double h = 1e-5,
                    double tol = 1e-6) {
  Mat grad_sink = Mat::Zero(input.rows(), input.cols());
  {
    ad::Tape tape;
    const int x = tape.leaf(input, &grad_sink);
    tape.backward(build(tape, x));
  }
  for (long i = 0; i < input.rows(); ++i) {
    for (long j = 0; j < input.cols(); ++j) {
      Mat plus = input, minus = input;
      plus(i, j) += h;
      minus(i, j) -= h;
      double f_plus, f_minus;
      {
        ad::Tape tape;
        f_plus = tape.val(build(tape, tape.leaf(plus, nullptr)))(0, 0);
      }
      {
        ad::Tape tape;
        f_minus = tape.val(build(tape, tape.leaf(minus, nullptr)))(0, 0);
      }
      const double fd = (f_plus - f_minus) / (2.0 * h);
      const double an = grad_sink(i, j);
      const double err =
          std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
      CHECK_MESSAGE(err < tol, "entry (", i, ",", j, ") fd=", fd, " ad=", an);
    }
  }
}

// Reduce a matrix node to a scalar with a fixed random projection so
// every entry influences the loss.
int to_scalar(ad::Tape& tape, int node, uint64_t seed = 1234) {
  const Mat& v = tape.val(node);
  std::mt19937_64 rng(seed);
  Mat left = randn(1, v.rows(), rng);
  Mat right = randn(v.cols(), 1, rng);
  return tape.matmul(tape.matmul_const_left(left, node),
                     tape.constant(right));
}

}  // namespace

TEST_CASE("matmul gradients") {
  std::mt19937_64 rng(1);
  Mat a = randn(3, 4, rng);
  Mat b = randn(4, 5, rng);
  check_gradient(a, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.matmul(x, t.constant(b)));
  });
  check_gradient(b, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.matmul(t.constant(a), x));
  });
  check_gradient(a, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.matmul_nt(t.constant(b.transpose().eval()), x));
  });
}

TEST_CASE("elementwise op gradients") {
  std::mt19937_64 rng(2);
  Mat a = randn(4, 6, rng);
  check_gradient(a, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.silu(x));
  });
  check_gradient(a, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.gelu(x));
  });
  Mat b = randn(4, 6, rng);
  check_gradient(a, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.hadamard(x, t.constant(b)));
  });
  check_gradient(a, [&](ad::Tape& t, int x) {
    return to_scalar(t, t.scale(t.add_const(x, b), 0.7));
  });
}

TEST_CASE("rmsnorm gradients and unit norm") {
  std::mt19937_64 rng(3);
  Mat x = randn(5, 8, rng);
  Mat gain = randn(1, 8, rng, 0.3);
  gain.array() += 1.0;

  {
    ad::Tape tape;
    int n = tape.rmsnorm(tape.constant(x), tape.constant(Mat::Ones(1, 8)));
    const Mat& y = tape.val(n);
    for (long r = 0; r < y.rows(); ++r)
      CHECK(std::sqrt(y.row(r).squaredNorm() / 8.0) ==
            doctest::Approx(1.0).epsilon(1e-3));
  }
  check_gradient(x, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.rmsnorm(in, t.constant(gain)));
  });
  check_gradient(gain, [&](ad::Tape& t, int g) {
    return to_scalar(t, t.rmsnorm(t.constant(x), g));
  });
}

TEST_CASE("softmax, slicing and stacking gradients") {
  std::mt19937_64 rng(4);
  Mat x = randn(4, 7, rng);
  check_gradient(x, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.softmax_rows(in));
  });
  check_gradient(x, [&](ad::Tape& t, int in) {
    int a = t.slice_cols(in, 0, 3);
    int b = t.slice_cols(in, 3, 4);
    return to_scalar(t, t.hstack({b, a}));
  });
}

TEST_CASE("gather, row_select, mean_rows and bias gradients") {
  std::mt19937_64 rng(5);
  Mat e = randn(10, 4, rng);
  std::vector<int> ids = {3, 3, 0, 7, 9};
  check_gradient(e, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.gather_rows(in, ids));
  });

  Mat a = randn(5, 4, rng), b = randn(5, 4, rng);
  std::vector<uint8_t> flags = {1, 0, 1, 1, 0};
  check_gradient(a, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.row_select(in, t.constant(b), flags));
  });
  check_gradient(b, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.row_select(t.constant(a), in, flags));
  });

  std::vector<uint8_t> keep = {1, 1, 0, 1, 0};
  check_gradient(a, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.mean_rows(in, keep));
  });

  Mat bias = randn(1, 4, rng);
  check_gradient(bias, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.add_rowvec(t.constant(a), in));
  });
}

TEST_CASE("scalar_times_const gradient") {
  std::mt19937_64 rng(6);
  Mat pattern = randn(4, 4, rng);
  Mat s(1, 1);
  s << 0.37;
  check_gradient(s, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.scalar_times_const(in, pattern));
  });
}

TEST_CASE("weighted_logprob value and gradient") {
  std::mt19937_64 rng(7);
  Mat z = randn(3, 6, rng);
  std::vector<int> targets = {2, 0, 5};
  std::vector<double> coeffs = {1.0, -0.5, 2.0};

  // hand-computed value
  double expected = 0.0;
  for (int t = 0; t < 3; ++t) {
    double lse = 0.0;
    const double m = z.row(t).maxCoeff();
    for (int j = 0; j < 6; ++j) lse += std::exp(z(t, j) - m);
    expected += coeffs[t] * (z(t, targets[t]) - (m + std::log(lse)));
  }
  {
    ad::Tape tape;
    int node = tape.weighted_logprob(tape.constant(z), targets, coeffs);
    CHECK(tape.val(node)(0, 0) == doctest::Approx(expected).epsilon(1e-12));
  }
  check_gradient(z, [&](ad::Tape& t, int in) {
    return t.weighted_logprob(in, targets, coeffs);
  });

  // masked variant: masked entries are unreachable and get zero grad
  Mat logmask = Mat::Zero(3, 6);
  logmask(0, 1) = ad::kNegInf;
  logmask(2, 0) = ad::kNegInf;
  check_gradient(z, [&](ad::Tape& t, int in) {
    return t.weighted_logprob(in, targets, coeffs, logmask);
  });
}

TEST_CASE("kl_vs_ref value matches a direct summation oracle") {
  std::mt19937_64 rng(8);
  Mat z = randn(2, 9, rng);
  Mat ref = randn(2, 9, rng);
  Mat logmask = Mat::Zero(2, 9);
  logmask(0, 3) = ad::kNegInf;

  // brute-force oracle over the support
  double expected = 0.0;
  for (int r = 0; r < 2; ++r) {
    double zp = 0.0, zq = 0.0;
    for (int j = 0; j < 9; ++j) {
      zp += std::exp(z(r, j) + logmask(r, j));
      zq += std::exp(ref(r, j) + logmask(r, j));
    }
    for (int j = 0; j < 9; ++j) {
      const double p = std::exp(z(r, j) + logmask(r, j)) / zp;
      const double q = std::exp(ref(r, j) + logmask(r, j)) / zq;
      if (p > 0.0) expected += p * std::log(p / q);
    }
  }
  {
    ad::Tape tape;
    int node = tape.kl_vs_ref(tape.constant(z), ref, logmask);
    CHECK(tape.val(node)(0, 0) == doctest::Approx(expected).epsilon(1e-10));
    CHECK(tape.val(node)(0, 0) >= 0.0);
  }
  {
    // KL(p || p) == 0
    ad::Tape tape;
    int node = tape.kl_vs_ref(tape.constant(z), z, logmask);
    CHECK(tape.val(node)(0, 0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  check_gradient(z, [&](ad::Tape& t, int in) {
    return t.kl_vs_ref(in, ref, logmask);
  });
}

TEST_CASE("huber values match the piecewise formula") {
  auto huber_at = [](double pred, double target, double delta) {
    ad::Tape tape;
    Mat p(1, 1);
    p << pred;
    return tape.val(tape.huber(tape.constant(p), target, delta))(0, 0);
  };
  CHECK(huber_at(0.5, 0.0, 1.0) == doctest::Approx(0.125));
  CHECK(huber_at(2.0, 0.0, 1.0) == doctest::Approx(1.5));
  CHECK(huber_at(-2.0, 0.0, 1.0) == doctest::Approx(1.5));
  CHECK(huber_at(1.0, 1.0, 1.0) == doctest::Approx(0.0));

  Mat p(1, 1);
  p << 1.7;
  check_gradient(p, [&](ad::Tape& t, int in) {
    return t.huber(in, 0.4, 1.0);
  });
}

TEST_CASE("gradients accumulate across shared leaf uses") {
  // f(x) = sum(x * x^T) exercises two uses of one leaf
  std::mt19937_64 rng(9);
  Mat x = randn(3, 3, rng);
  check_gradient(x, [&](ad::Tape& t, int in) {
    return to_scalar(t, t.matmul_nt(in, in));
  });
}

TEST_CASE("adamw decays weights decoupled from the gradient") {
  ad::ParamStore store;
  const int w = store.add("w", Mat::Ones(2, 2));
  store[w].grad = Mat::Zero(2, 2);
  ad::AdamWConfig cfg;
  cfg.weight_decay = 0.1;
  ad::adamw_step(store, 0.5, cfg, 1);
  CHECK(store[w].value(0, 0) == doctest::Approx(1.0 * (1.0 - 0.5 * 0.1)));

  // 1-D tensors (gains, biases) are not decayed
  ad::ParamStore store2;
  const int g = store2.add("g", Mat::Ones(1, 4));
  store2[g].grad = Mat::Zero(1, 4);
  ad::adamw_step(store2, 0.5, cfg, 1);
  CHECK(store2[g].value(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("cosine schedule: warmup peak and zero endpoint") {
  const double peak = 3e-4;
  CHECK(ad::cosine_lr(0, 100, 10, peak) == doctest::Approx(peak / 10.0));
  CHECK(ad::cosine_lr(9, 100, 10, peak) == doctest::Approx(peak));
  CHECK(ad::cosine_lr(99, 100, 10, peak) ==
        doctest::Approx(0.0).epsilon(1e-3));
  CHECK(ad::cosine_lr(100, 100, 10, peak) == doctest::Approx(0.0));
  // monotone decay after warmup
  for (long s = 10; s < 99; ++s)
    CHECK(ad::cosine_lr(s + 1, 100, 10, peak) <= ad::cosine_lr(s, 100, 10, peak));
}

TEST_SUITE_END();
