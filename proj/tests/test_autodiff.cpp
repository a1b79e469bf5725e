// Finite-difference checks for every tape op used by the encoders and losses.

#include "jobrec/autodiff.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>

using namespace jobrec;
using ad::Tape;
using ad::Var;

namespace {

Mat random_mat(Rng& rng, int r, int c, double lo = -1.0, double hi = 1.0) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = uniform_real(rng, lo, hi);
  return m;
}

Mat random_rows_simplex(Rng& rng, int r, int c) {
  Mat m(r, c);
  for (int i = 0; i < r; ++i) {
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      m(i, j) = uniform_real(rng, 0.05, 1.0);
      s += m(i, j);
    }
    m.row(i) /= s;
  }
  return m;
}

// Central finite differences against the analytic gradient of a scalar
// function of several leaf matrices.
void check_gradients(std::vector<Mat> inputs,
                     const std::function<Var(Tape&, std::vector<Var>&)>& f,
                     double h = 1e-5, double tol = 1e-6) {
  auto eval = [&](const std::vector<Mat>& ins) {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& m : ins) vars.push_back(tape.leaf(m, true));
    return tape.val(f(tape, vars))(0, 0);
  };

  Tape tape;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(tape.leaf(m, true));
  Var root = f(tape, vars);
  tape.backward(root);

  for (std::size_t v = 0; v < inputs.size(); ++v) {
    Mat analytic = tape.grad_of(vars[v]);
    for (Eigen::Index i = 0; i < inputs[v].size(); ++i) {
      std::vector<Mat> plus = inputs, minus = inputs;
      plus[v](i) += h;
      minus[v](i) -= h;
      double fd = (eval(plus) - eval(minus)) / (2.0 * h);
      double an = analytic(i);
      double denom = std::max({std::abs(fd), std::abs(an), 1.0});
      INFO("input " << v << " coeff " << i << " fd=" << fd << " an=" << an);
      REQUIRE(std::abs(fd - an) / denom < tol);
    }
  }
}

}  // namespace

TEST_CASE("matmul, add, transpose, broadcast bias gradients") {
  Rng rng(11);
  check_gradients({random_mat(rng, 3, 4), random_mat(rng, 4, 2),
                   random_mat(rng, 1, 2)},
                  [](Tape& t, std::vector<Var>& v) {
                    return t.sum_all(t.add_row_broadcast(
                        t.matmul(v[0], v[1]), v[2]));
                  });
  check_gradients({random_mat(rng, 3, 3)},
                  [](Tape& t, std::vector<Var>& v) {
                    return t.sum_all(t.matmul(t.transpose(v[0]), v[0]));
                  });
}

TEST_CASE("relu and sigmoid gradients") {
  Rng rng(12);
  check_gradients({random_mat(rng, 3, 5)}, [](Tape& t, std::vector<Var>& v) {
    return t.sum_all(t.cwise_mul(t.relu(v[0]), t.sigmoid(v[0])));
  });
}

TEST_CASE("masked row softmax: rows sum to one and gradient is exact") {
  Rng rng(13);
  auto mask = std::make_shared<ad::BoolArr>(3, 4);
  mask->setConstant(true);
  (*mask)(0, 1) = false;
  (*mask)(2, 0) = false;
  (*mask)(2, 3) = false;

  Mat logits = random_mat(rng, 3, 4, -2.0, 2.0);
  {
    Tape tape;
    Var a = tape.leaf(logits, true);
    Var s = tape.row_softmax_masked(a, mask);
    const Mat& S = tape.val(s);
    for (int r = 0; r < 3; ++r) REQUIRE(S.row(r).sum() == Catch::Approx(1.0));
    REQUIRE(S(0, 1) == 0.0);
    REQUIRE(S(2, 0) == 0.0);
  }
  Mat weights = random_mat(rng, 3, 4);
  check_gradients({logits}, [&](Tape& t, std::vector<Var>& v) {
    Var w = t.leaf(weights, false);
    return t.sum_all(t.cwise_mul(t.row_softmax_masked(v[0], mask), w));
  });
}

TEST_CASE("fully masked softmax row is rejected") {
  Tape tape;
  auto mask = std::make_shared<ad::BoolArr>(1, 2);
  mask->setConstant(false);
  Var a = tape.leaf(Mat::Zero(1, 2), false);
  REQUIRE_THROWS_AS(tape.row_softmax_masked(a, mask), ContractViolation);
}

TEST_CASE("flat softmax gradient") {
  Rng rng(14);
  Mat weights = random_mat(rng, 1, 6);
  check_gradients({random_mat(rng, 1, 6)}, [&](Tape& t, std::vector<Var>& v) {
    Var w = t.leaf(weights, false);
    return t.sum_all(t.cwise_mul(t.flat_softmax(v[0]), w));
  });
}

TEST_CASE("layer norm gradient (x, gamma, beta)") {
  Rng rng(15);
  Mat weights = random_mat(rng, 4, 5);
  check_gradients(
      {random_mat(rng, 4, 5), random_mat(rng, 1, 5, 0.5, 1.5),
       random_mat(rng, 1, 5)},
      [&](Tape& t, std::vector<Var>& v) {
        Var w = t.leaf(weights, false);
        return t.sum_all(
            t.cwise_mul(t.layer_norm_rows(v[0], v[1], v[2], 1e-5), w));
      },
      1e-6, 1e-5);
}

TEST_CASE("batch norm train-mode gradient") {
  Rng rng(16);
  Mat weights = random_mat(rng, 6, 3);
  check_gradients(
      {random_mat(rng, 6, 3), random_mat(rng, 1, 3, 0.5, 1.5),
       random_mat(rng, 1, 3)},
      [&](Tape& t, std::vector<Var>& v) {
        Var w = t.leaf(weights, false);
        return t.sum_all(
            t.cwise_mul(t.batch_norm_train(v[0], v[1], v[2], 1e-5), w));
      },
      1e-6, 1e-5);
}

TEST_CASE("batch norm eval-mode matches the frozen affine transform") {
  Rng rng(17);
  Mat x = random_mat(rng, 4, 3);
  RowVec mean = random_mat(rng, 1, 3).row(0);
  RowVec var = random_mat(rng, 1, 3, 0.5, 2.0).row(0);
  Mat gamma = random_mat(rng, 1, 3, 0.5, 1.5);
  Mat beta = random_mat(rng, 1, 3);
  Tape tape;
  Var xv = tape.leaf(x, false);
  Var g = tape.leaf(gamma, false);
  Var b = tape.leaf(beta, false);
  Mat y = tape.val(tape.batch_norm_eval(xv, g, b, mean, var, 1e-5));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 3; ++c) {
      double expect = gamma(0, c) * (x(r, c) - mean(c)) /
                          std::sqrt(var(c) + 1e-5) +
                      beta(0, c);
      REQUIRE(y(r, c) == Catch::Approx(expect));
    }
}

TEST_CASE("dropout scales kept entries and zeroes the rest") {
  Rng rng(18);
  Tape tape;
  Mat x = Mat::Ones(20, 20);
  Var v = tape.leaf(x, false);
  Rng drop_rng(99);
  Var y = tape.dropout(v, 0.4, drop_rng);
  const Mat& Y = tape.val(y);
  int kept = 0;
  for (Eigen::Index i = 0; i < Y.size(); ++i) {
    if (Y(i) != 0.0) {
      REQUIRE(Y(i) == Catch::Approx(1.0 / 0.6));
      ++kept;
    }
  }
  REQUIRE(kept > 150);
  REQUIRE(kept < 300);

  // p = 0 is a passthrough that consumes no randomness.
  Rng before = drop_rng;
  Var z = tape.dropout(v, 0.0, drop_rng);
  REQUIRE(z.id == v.id);
  REQUIRE(before == drop_rng);
}

TEST_CASE("gather, assemble, concat gradients") {
  Rng rng(19);
  check_gradients({random_mat(rng, 4, 3)}, [](Tape& t, std::vector<Var>& v) {
    Var g = t.gather_rows(v[0], {2, 0, 2});
    return t.sum_all(t.cwise_mul(g, g));
  });
  check_gradients({random_mat(rng, 2, 3), random_mat(rng, 2, 3)},
                  [](Tape& t, std::vector<Var>& v) {
                    Var a = t.assemble_rows(
                        4, 3, {{v[0], 1}, {ad::Var{}, 0}, {v[1], 0}, {v[0], 0}});
                    return t.sum_all(t.cwise_mul(a, a));
                  });
  check_gradients({random_mat(rng, 2, 2), random_mat(rng, 2, 3)},
                  [](Tape& t, std::vector<Var>& v) {
                    Var c = t.concat_cols({v[0], v[1]});
                    return t.sum_all(t.cwise_mul(c, c));
                  });
  check_gradients({random_mat(rng, 2, 3), random_mat(rng, 1, 3)},
                  [](Tape& t, std::vector<Var>& v) {
                    Var c = t.concat_rows({v[0], v[1]});
                    return t.sum_all(t.cwise_mul(c, c));
                  });
}

TEST_CASE("im2row_causal windows and gradient") {
  Tape tape;
  Mat x(3, 2);
  x << 1, 2, 3, 4, 5, 6;
  Var v = tape.leaf(x, false);
  Var w = tape.im2row_causal(v, 2, {{0, 3}});
  Mat expect(3, 4);
  // row s = [x_{s-1}, x_s], zero padded at the segment start
  expect << 0, 0, 1, 2, 1, 2, 3, 4, 3, 4, 5, 6;
  REQUIRE(tape.val(w) == expect);

  Rng rng(20);
  check_gradients({random_mat(rng, 5, 2)}, [](Tape& t, std::vector<Var>& v2) {
    Var win = t.im2row_causal(v2[0], 3, {{0, 2}, {2, 3}});
    return t.sum_all(t.cwise_mul(win, win));
  });
}

TEST_CASE("segment max pool forward and gradient routing") {
  Tape tape;
  Mat x(4, 2);
  x << 1, 9, 5, 2, 7, 3, 6, 8;
  Var v = tape.leaf(x, true);
  Var y = tape.segment_max_rows(v, {{0, 2}, {2, 2}});
  Mat expect(2, 2);
  expect << 5, 9, 7, 8;
  REQUIRE(tape.val(y) == expect);
  Var loss = tape.sum_all(y);
  tape.backward(loss);
  Mat g = tape.grad_of(v);
  Mat gx(4, 2);
  gx << 0, 1, 1, 0, 1, 0, 0, 1;
  REQUIRE(g == gx);

  Rng rng(21);
  check_gradients({random_mat(rng, 6, 3)}, [](Tape& t, std::vector<Var>& v2) {
    Var m = t.segment_max_rows(v2[0], {{0, 3}, {3, 3}});
    return t.sum_all(t.cwise_mul(m, m));
  });
}

TEST_CASE("cosine matrix gradient") {
  Rng rng(22);
  Mat weights = random_mat(rng, 3, 2);
  check_gradients(
      {random_mat(rng, 3, 4, 0.2, 1.0), random_mat(rng, 2, 4, 0.2, 1.0)},
      [&](Tape& t, std::vector<Var>& v) {
        Var w = t.leaf(weights, false);
        return t.sum_all(t.cwise_mul(t.cosine_matrix(v[0], v[1]), w));
      },
      1e-6, 1e-5);
}

TEST_CASE("pairwise euclid / kl distance vectors and kl_div gradients") {
  Rng rng(23);
  Mat w6 = random_mat(rng, 1, 6);
  check_gradients({random_mat(rng, 3, 4)}, [&](Tape& t, std::vector<Var>& v) {
    Var w = t.leaf(w6, false);
    return t.sum_all(t.cwise_mul(t.pairwise_euclid_rows(v[0]), w));
  });
  check_gradients({random_rows_simplex(rng, 3, 4)},
                  [&](Tape& t, std::vector<Var>& v) {
                    Var w = t.leaf(w6, false);
                    return t.sum_all(
                        t.cwise_mul(t.pairwise_kl_rows(v[0], 1e-12), w));
                  });
  check_gradients(
      {random_rows_simplex(rng, 1, 5), random_rows_simplex(rng, 1, 5)},
      [](Tape& t, std::vector<Var>& v) {
        return t.kl_div(v[0], v[1], 1e-12);
      });
}

TEST_CASE("bce_sum value and gradient") {
  Tape tape;
  Mat preds(2, 1);
  preds << 0.5, 0.5;
  Mat labels(2, 1);
  labels << 1, 0;
  Var p = tape.leaf(preds, false);
  REQUIRE(tape.val(tape.bce_sum(p, labels, 1e-7))(0, 0) ==
          Catch::Approx(2.0 * std::log(2.0)));

  Rng rng(24);
  Mat lab(3, 1);
  lab << 1, 0, 1;
  check_gradients({random_mat(rng, 3, 1, 0.1, 0.9)},
                  [&](Tape& t, std::vector<Var>& v) {
                    return t.bce_sum(v[0], lab, 1e-7);
                  });
}

TEST_CASE("backward requires scalar root") {
  Tape tape;
  Var v = tape.leaf(Mat::Zero(2, 2), true);
  REQUIRE_THROWS_AS(tape.backward(v), ContractViolation);
}
