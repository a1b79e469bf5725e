#pragma once
// Reverse-mode autodiff over dense double matrices.
//
// A Tape owns the forward values; every op records a closure that scatters
// the output gradient back to its parents. Ops are shaped around what the
// encoders and losses need (masked row softmax, segment max-pool, batch/layer
// norm, pairwise distance vectors) rather than a general tensor algebra.

#include "jobrec/common.hpp"

#include <functional>
#include <memory>
#include <utility>
#include <vector>

namespace jobrec::ad {

using jobrec::Mat;
using BoolArr = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

class Tape {
 public:
  Var leaf(Mat value, bool requires_grad = false) {
    return push(std::move(value), requires_grad, nullptr);
  }

  const Mat& val(Var v) const { return nodes_[check(v)].val; }

  // Valid after backward(); zero matrix if the node never received gradient.
  Mat grad_of(Var v) const {
    const Node& n = nodes_[check(v)];
    if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void clear() { nodes_.clear(); }

  // ---- elementwise / linear ----

  Var matmul(Var a, Var b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.rows()) throw ContractViolation("matmul shape mismatch");
    Mat y = A * B;
    return push(std::move(y), rg(a) || rg(b), [this, a, b](const Mat& g, Var out) {
      (void)out;
      if (rg(a)) acc(a, g * val(b).transpose());
      if (rg(b)) acc(b, val(a).transpose() * g);
    });
  }

  Var transpose(Var a) {
    Mat y = val(a).transpose();
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var) {
      if (rg(a)) acc(a, g.transpose());
    });
  }

  Var add(Var a, Var b) {
    same_shape(a, b, "add");
    Mat y = val(a) + val(b);
    return push(std::move(y), rg(a) || rg(b), [this, a, b](const Mat& g, Var) {
      if (rg(a)) acc(a, g);
      if (rg(b)) acc(b, g);
    });
  }

  Var sub(Var a, Var b) {
    same_shape(a, b, "sub");
    Mat y = val(a) - val(b);
    return push(std::move(y), rg(a) || rg(b), [this, a, b](const Mat& g, Var) {
      if (rg(a)) acc(a, g);
      if (rg(b)) acc(b, -g);
    });
  }

  // a: n x d, row: 1 x d, broadcast-added to every row of a.
  Var add_row_broadcast(Var a, Var row) {
    const Mat& A = val(a);
    const Mat& R = val(row);
    if (R.rows() != 1 || R.cols() != A.cols())
      throw ContractViolation("add_row_broadcast shape mismatch");
    Mat y = A.rowwise() + R.row(0);
    return push(std::move(y), rg(a) || rg(row), [this, a, row](const Mat& g, Var) {
      if (rg(a)) acc(a, g);
      if (rg(row)) acc(row, g.colwise().sum());
    });
  }

  Var scale(Var a, double s) {
    Mat y = val(a) * s;
    return push(std::move(y), rg(a), [this, a, s](const Mat& g, Var) {
      if (rg(a)) acc(a, g * s);
    });
  }

  Var add_const(Var a, double c) {
    Mat y = val(a).array() + c;
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var) {
      if (rg(a)) acc(a, g);
    });
  }

  Var cwise_mul(Var a, Var b) {
    same_shape(a, b, "cwise_mul");
    Mat y = val(a).cwiseProduct(val(b));
    return push(std::move(y), rg(a) || rg(b), [this, a, b](const Mat& g, Var) {
      if (rg(a)) acc(a, g.cwiseProduct(val(b)));
      if (rg(b)) acc(b, g.cwiseProduct(val(a)));
    });
  }

  Var relu(Var a) {
    Mat y = val(a).cwiseMax(0.0);
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var out) {
      if (!rg(a)) return;
      Mat mask = (val(a).array() > 0.0).cast<double>();
      (void)out;
      acc(a, g.cwiseProduct(mask));
    });
  }

  Var sigmoid(Var a) {
    Mat y = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var out) {
      if (!rg(a)) return;
      const Mat& y2 = val(out);
      acc(a, g.cwiseProduct(y2.cwiseProduct((1.0 - y2.array()).matrix())));
    });
  }

  // ---- softmax family ----

  Var row_softmax(Var a) { return row_softmax_masked(a, nullptr, nullptr); }

  // allowed(q, k) == false -> key k invisible to query row q. Every row must
  // keep at least one allowed key. `save` receives a copy of the weights.
  Var row_softmax_masked(Var a, std::shared_ptr<const BoolArr> allowed,
                         Mat* save = nullptr) {
    const Mat& A = val(a);
    if (allowed && (allowed->rows() != A.rows() || allowed->cols() != A.cols()))
      throw ContractViolation("softmax mask shape mismatch");
    Mat y(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      double m = -std::numeric_limits<double>::infinity();
      for (Eigen::Index c = 0; c < A.cols(); ++c)
        if (!allowed || (*allowed)(r, c)) m = std::max(m, A(r, c));
      if (!std::isfinite(m))
        throw ContractViolation("softmax row has no unmasked key");
      double sum = 0.0;
      for (Eigen::Index c = 0; c < A.cols(); ++c) {
        double e = (!allowed || (*allowed)(r, c)) ? std::exp(A(r, c) - m) : 0.0;
        y(r, c) = e;
        sum += e;
      }
      y.row(r) /= sum;
    }
    if (save) *save = y;
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var out) {
      if (!rg(a)) return;
      const Mat& y2 = val(out);
      Mat gy = g.cwiseProduct(y2);
      Vec rowsum = gy.rowwise().sum();
      acc(a, gy - y2.cwiseProduct(rowsum.replicate(1, y2.cols())));
    });
  }

  // Softmax over all coefficients jointly (input treated as one flat vector).
  Var flat_softmax(Var a) {
    const Mat& A = val(a);
    double m = A.maxCoeff();
    Mat e = (A.array() - m).exp();
    double sum = e.sum();
    Mat y = e / sum;
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var out) {
      if (!rg(a)) return;
      const Mat& y2 = val(out);
      double dot = (g.array() * y2.array()).sum();
      acc(a, (g.array() * y2.array() - y2.array() * dot).matrix());
    });
  }

  // ---- normalization ----

  // Per-row mean/variance normalization with learned 1 x d scale and shift.
  Var layer_norm_rows(Var x, Var gamma, Var beta, double eps) {
    const Mat& X = val(x);
    const Eigen::Index d = X.cols();
    Mat xhat(X.rows(), d);
    Vec invstd(X.rows());
    for (Eigen::Index r = 0; r < X.rows(); ++r) {
      double mu = X.row(r).mean();
      double var = (X.row(r).array() - mu).square().mean();
      double is = 1.0 / std::sqrt(var + eps);
      invstd(r) = is;
      xhat.row(r) = (X.row(r).array() - mu) * is;
    }
    Mat y = xhat.array().rowwise() * val(gamma).row(0).array();
    y = y.array().rowwise() + val(beta).row(0).array();
    auto xh = std::make_shared<Mat>(std::move(xhat));
    auto is = std::make_shared<Vec>(std::move(invstd));
    return push(std::move(y), rg(x) || rg(gamma) || rg(beta),
                [this, x, gamma, beta, xh, is](const Mat& g, Var) {
                  if (rg(gamma)) acc(gamma, g.cwiseProduct(*xh).colwise().sum());
                  if (rg(beta)) acc(beta, g.colwise().sum());
                  if (!rg(x)) return;
                  const Eigen::Index d = g.cols();
                  Mat gx(g.rows(), d);
                  for (Eigen::Index r = 0; r < g.rows(); ++r) {
                    Eigen::RowVectorXd h =
                        g.row(r).cwiseProduct(val(gamma).row(0));
                    double mh = h.mean();
                    double mhx = h.cwiseProduct(xh->row(r)).mean();
                    gx.row(r) =
                        ((h.array() - mh) - xh->row(r).array() * mhx) * (*is)(r);
                  }
                  acc(x, gx);
                });
  }

  // Batch norm over rows (rows = samples, cols = channels), batch statistics.
  // Biased variance; batch stats are written to *mean_out / *var_out so the
  // caller can maintain running averages.
  Var batch_norm_train(Var x, Var gamma, Var beta, double eps,
                       RowVec* mean_out = nullptr, RowVec* var_out = nullptr) {
    const Mat& X = val(x);
    const double n = static_cast<double>(X.rows());
    RowVec mu = X.colwise().mean();
    RowVec var = ((X.rowwise() - mu).array().square().colwise().sum() / n);
    if (mean_out) *mean_out = mu;
    if (var_out) *var_out = var;
    RowVec invstd = (var.array() + eps).rsqrt();
    Mat xhat = (X.rowwise() - mu).array().rowwise() * invstd.array();
    Mat y = xhat.array().rowwise() * val(gamma).row(0).array();
    y = y.array().rowwise() + val(beta).row(0).array();
    auto xh = std::make_shared<Mat>(std::move(xhat));
    auto is = std::make_shared<RowVec>(std::move(invstd));
    return push(std::move(y), rg(x) || rg(gamma) || rg(beta),
                [this, x, gamma, beta, xh, is](const Mat& g, Var) {
                  if (rg(gamma)) acc(gamma, g.cwiseProduct(*xh).colwise().sum());
                  if (rg(beta)) acc(beta, g.colwise().sum());
                  if (!rg(x)) return;
                  RowVec mg = g.colwise().mean();
                  RowVec mgx = g.cwiseProduct(*xh).colwise().mean();
                  Mat gx = ((g.rowwise() - mg).array() -
                            xh->array().rowwise() * mgx.array());
                  gx = gx.array().rowwise() *
                       (is->array() * val(gamma).row(0).array());
                  acc(x, gx);
                });
  }

  // Batch norm with frozen statistics (per-channel affine transform).
  Var batch_norm_eval(Var x, Var gamma, Var beta, const RowVec& run_mean,
                      const RowVec& run_var, double eps) {
    const Mat& X = val(x);
    RowVec invstd = (run_var.array() + eps).rsqrt();
    Mat xhat = (X.rowwise() - run_mean).array().rowwise() * invstd.array();
    Mat y = xhat.array().rowwise() * val(gamma).row(0).array();
    y = y.array().rowwise() + val(beta).row(0).array();
    auto xh = std::make_shared<Mat>(std::move(xhat));
    auto is = std::make_shared<RowVec>(std::move(invstd));
    return push(std::move(y), rg(x) || rg(gamma) || rg(beta),
                [this, x, gamma, beta, xh, is](const Mat& g, Var) {
                  if (rg(gamma)) acc(gamma, g.cwiseProduct(*xh).colwise().sum());
                  if (rg(beta)) acc(beta, g.colwise().sum());
                  if (rg(x))
                    acc(x, g.array().rowwise() *
                               (is->array() * val(gamma).row(0).array()));
                });
  }

  // Inverted dropout; p == 0 is a passthrough that draws nothing.
  Var dropout(Var a, double p, Rng& rng) {
    if (p <= 0.0) return a;
    if (p >= 1.0) throw ContractViolation("dropout rate must be < 1");
    const Mat& A = val(a);
    auto mask = std::make_shared<Mat>(A.rows(), A.cols());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep = 1.0 - p;
    for (Eigen::Index r = 0; r < A.rows(); ++r)
      for (Eigen::Index c = 0; c < A.cols(); ++c)
        (*mask)(r, c) = (u(rng) < keep) ? 1.0 / keep : 0.0;
    Mat y = A.cwiseProduct(*mask);
    return push(std::move(y), rg(a), [this, a, mask](const Mat& g, Var) {
      if (rg(a)) acc(a, g.cwiseProduct(*mask));
    });
  }

  // ---- shape ops ----

  Var concat_cols(const std::vector<Var>& vs) {
    if (vs.empty()) throw ContractViolation("concat_cols: empty");
    Eigen::Index rows = val(vs[0]).rows(), cols = 0;
    bool any = false;
    for (Var v : vs) {
      if (val(v).rows() != rows) throw ContractViolation("concat_cols rows");
      cols += val(v).cols();
      any = any || rg(v);
    }
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (Var v : vs) {
      y.middleCols(off, val(v).cols()) = val(v);
      off += val(v).cols();
    }
    auto parts = std::make_shared<std::vector<Var>>(vs);
    return push(std::move(y), any, [this, parts](const Mat& g, Var) {
      Eigen::Index off2 = 0;
      for (Var v : *parts) {
        Eigen::Index w = val(v).cols();
        if (rg(v)) acc(v, g.middleCols(off2, w));
        off2 += w;
      }
    });
  }

  Var concat_rows(const std::vector<Var>& vs) {
    if (vs.empty()) throw ContractViolation("concat_rows: empty");
    Eigen::Index cols = val(vs[0]).cols(), rows = 0;
    bool any = false;
    for (Var v : vs) {
      if (val(v).cols() != cols) throw ContractViolation("concat_rows cols");
      rows += val(v).rows();
      any = any || rg(v);
    }
    Mat y(rows, cols);
    Eigen::Index off = 0;
    for (Var v : vs) {
      y.middleRows(off, val(v).rows()) = val(v);
      off += val(v).rows();
    }
    auto parts = std::make_shared<std::vector<Var>>(vs);
    return push(std::move(y), any, [this, parts](const Mat& g, Var) {
      Eigen::Index off2 = 0;
      for (Var v : *parts) {
        Eigen::Index h = val(v).rows();
        if (rg(v)) acc(v, g.middleRows(off2, h));
        off2 += h;
      }
    });
  }

  Var gather_rows(Var a, std::vector<int> rows) {
    const Mat& A = val(a);
    Mat y(static_cast<Eigen::Index>(rows.size()), A.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] < 0 || rows[i] >= A.rows())
        throw ContractViolation("gather_rows index out of range");
      y.row(static_cast<Eigen::Index>(i)) = A.row(rows[i]);
    }
    auto idx = std::make_shared<std::vector<int>>(std::move(rows));
    return push(std::move(y), rg(a), [this, a, idx](const Mat& g, Var) {
      if (!rg(a)) return;
      Mat d = Mat::Zero(val(a).rows(), val(a).cols());
      for (std::size_t i = 0; i < idx->size(); ++i)
        d.row((*idx)[i]) += g.row(static_cast<Eigen::Index>(i));
      acc(a, d);
    });
  }

  // Builds a rows x cols matrix; each output row copies one row of a source
  // var, or stays zero when the source Var is invalid.
  Var assemble_rows(int rows, int cols,
                    std::vector<std::pair<Var, int>> sources) {
    if (static_cast<int>(sources.size()) != rows)
      throw ContractViolation("assemble_rows: source count != rows");
    Mat y = Mat::Zero(rows, cols);
    bool any = false;
    for (int r = 0; r < rows; ++r) {
      auto [v, sr] = sources[static_cast<std::size_t>(r)];
      if (!v.valid()) continue;
      y.row(r) = val(v).row(sr);
      any = any || rg(v);
    }
    auto src = std::make_shared<std::vector<std::pair<Var, int>>>(
        std::move(sources));
    return push(std::move(y), any, [this, src](const Mat& g, Var) {
      for (int r = 0; r < static_cast<int>(src->size()); ++r) {
        auto [v, sr] = (*src)[static_cast<std::size_t>(r)];
        if (!v.valid() || !rg(v)) continue;
        Mat d = Mat::Zero(val(v).rows(), val(v).cols());
        d.row(sr) = g.row(r);
        acc(v, d);
      }
    });
  }

  // Sliding windows of width w per segment, windows aligned so position s
  // covers rows [s-w+1, s] of its segment (zeros where the window hangs off
  // the segment start). segments: (begin, len) pairs over rows of x.
  Var im2row_causal(Var x, int w,
                    const std::vector<std::pair<int, int>>& segments) {
    const Mat& X = val(x);
    const Eigen::Index d = X.cols();
    Eigen::Index total = 0;
    for (auto& s : segments) total += s.second;
    Mat y = Mat::Zero(total, static_cast<Eigen::Index>(w) * d);
    Eigen::Index out_r = 0;
    for (auto& [begin, len] : segments) {
      for (int s = 0; s < len; ++s, ++out_r) {
        for (int k = 0; k < w; ++k) {
          int src = s - w + 1 + k;
          if (src < 0) continue;
          y.block(out_r, static_cast<Eigen::Index>(k) * d, 1, d) =
              X.row(begin + src);
        }
      }
    }
    auto segs =
        std::make_shared<std::vector<std::pair<int, int>>>(segments);
    return push(std::move(y), rg(x), [this, x, w, segs](const Mat& g, Var) {
      if (!rg(x)) return;
      const Eigen::Index d = val(x).cols();
      Mat dx = Mat::Zero(val(x).rows(), d);
      Eigen::Index out_r = 0;
      for (auto& [begin, len] : *segs) {
        for (int s = 0; s < len; ++s, ++out_r) {
          for (int k = 0; k < w; ++k) {
            int src = s - w + 1 + k;
            if (src < 0) continue;
            dx.row(begin + src) +=
                g.block(out_r, static_cast<Eigen::Index>(k) * d, 1, d);
          }
        }
      }
      acc(x, dx);
    });
  }

  // Column-wise max over each row segment: output row i = max over rows
  // [begin_i, begin_i+len_i). Gradient routes to the first argmax row.
  Var segment_max_rows(Var x,
                       const std::vector<std::pair<int, int>>& segments) {
    const Mat& X = val(x);
    const Eigen::Index d = X.cols();
    Mat y(static_cast<Eigen::Index>(segments.size()), d);
    auto arg = std::make_shared<std::vector<std::vector<int>>>(
        segments.size(), std::vector<int>(static_cast<std::size_t>(d)));
    for (std::size_t i = 0; i < segments.size(); ++i) {
      auto [begin, len] = segments[i];
      if (len < 1) throw ContractViolation("segment_max_rows: empty segment");
      for (Eigen::Index c = 0; c < d; ++c) {
        double best = X(begin, c);
        int bi = begin;
        for (int r = 1; r < len; ++r) {
          if (X(begin + r, c) > best) {
            best = X(begin + r, c);
            bi = begin + r;
          }
        }
        y(static_cast<Eigen::Index>(i), c) = best;
        (*arg)[i][static_cast<std::size_t>(c)] = bi;
      }
    }
    return push(std::move(y), rg(x), [this, x, arg](const Mat& g, Var) {
      if (!rg(x)) return;
      Mat dx = Mat::Zero(val(x).rows(), val(x).cols());
      for (std::size_t i = 0; i < arg->size(); ++i)
        for (Eigen::Index c = 0; c < dx.cols(); ++c)
          dx((*arg)[i][static_cast<std::size_t>(c)], c) +=
              g(static_cast<Eigen::Index>(i), c);
      acc(x, dx);
    });
  }

  // ---- reductions & similarity ----

  Var sum_all(Var a) {
    Mat y(1, 1);
    y(0, 0) = val(a).sum();
    return push(std::move(y), rg(a), [this, a](const Mat& g, Var) {
      if (rg(a))
        acc(a, Mat::Constant(val(a).rows(), val(a).cols(), g(0, 0)));
    });
  }

  Var gather_entry(Var a, int r, int c) {
    Mat y(1, 1);
    y(0, 0) = val(a)(r, c);
    return push(std::move(y), rg(a), [this, a, r, c](const Mat& g, Var) {
      if (!rg(a)) return;
      Mat d = Mat::Zero(val(a).rows(), val(a).cols());
      d(r, c) = g(0, 0);
      acc(a, d);
    });
  }

  // S(i, j) = cosine(A.row(i), B.row(j)); rows with zero norm produce 0.
  Var cosine_matrix(Var a, Var b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols() != B.cols()) throw ContractViolation("cosine_matrix dims");
    Vec na = A.rowwise().norm();
    Vec nb = B.rowwise().norm();
    Mat y(A.rows(), B.rows());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
      for (Eigen::Index j = 0; j < B.rows(); ++j) {
        double den = na(i) * nb(j);
        y(i, j) = den > 0.0 ? A.row(i).dot(B.row(j)) / den : 0.0;
      }
    auto pna = std::make_shared<Vec>(std::move(na));
    auto pnb = std::make_shared<Vec>(std::move(nb));
    return push(std::move(y), rg(a) || rg(b),
                [this, a, b, pna, pnb](const Mat& g, Var out) {
                  const Mat& S = val(out);
                  const Mat& A2 = val(a);
                  const Mat& B2 = val(b);
                  Mat da = Mat::Zero(A2.rows(), A2.cols());
                  Mat db = Mat::Zero(B2.rows(), B2.cols());
                  for (Eigen::Index i = 0; i < A2.rows(); ++i)
                    for (Eigen::Index j = 0; j < B2.rows(); ++j) {
                      double gij = g(i, j);
                      if (gij == 0.0) continue;
                      double den = (*pna)(i) * (*pnb)(j);
                      if (den <= 0.0) continue;
                      da.row(i) += gij * (B2.row(j) / den -
                                          S(i, j) * A2.row(i) /
                                              ((*pna)(i) * (*pna)(i)));
                      db.row(j) += gij * (A2.row(i) / den -
                                          S(i, j) * B2.row(j) /
                                              ((*pnb)(j) * (*pnb)(j)));
                    }
                  if (rg(a)) acc(a, da);
                  if (rg(b)) acc(b, db);
                });
  }

  // Ordered-pair L2 distances over rows of X: output 1 x n(n-1), pairs
  // enumerated (n1, n2), n1 = 0..n-1, n2 != n1 ascending.
  Var pairwise_euclid_rows(Var x) {
    const Mat& X = val(x);
    const int n = static_cast<int>(X.rows());
    if (n < 2) throw ContractViolation("pairwise_euclid_rows: need >= 2 rows");
    Mat y(1, n * (n - 1));
    int k = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        y(0, k++) = (X.row(i) - X.row(j)).norm();
      }
    return push(std::move(y), rg(x), [this, x, n](const Mat& g, Var out) {
      if (!rg(x)) return;
      const Mat& X2 = val(x);
      const Mat& D = val(out);
      Mat dx = Mat::Zero(X2.rows(), X2.cols());
      int k2 = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          double dist = D(0, k2);
          double gk = g(0, k2);
          ++k2;
          if (gk == 0.0 || dist <= 1e-30) continue;
          Eigen::RowVectorXd dir = (X2.row(i) - X2.row(j)) * (gk / dist);
          dx.row(i) += dir;
          dx.row(j) -= dir;
        }
      acc(x, dx);
    });
  }

  // Ordered-pair KL distances over rows of P (rows are distributions),
  // same pair order as pairwise_euclid_rows. Logs clamp below at eps.
  Var pairwise_kl_rows(Var p, double eps) {
    const Mat& P = val(p);
    const int n = static_cast<int>(P.rows());
    if (n < 2) throw ContractViolation("pairwise_kl_rows: need >= 2 rows");
    Mat y(1, n * (n - 1));
    int k = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        double s = 0.0;
        for (Eigen::Index c = 0; c < P.cols(); ++c)
          s += P(i, c) * (std::log(std::max(P(i, c), eps)) -
                          std::log(std::max(P(j, c), eps)));
        y(0, k++) = s;
      }
    return push(std::move(y), rg(p), [this, p, n, eps](const Mat& g, Var) {
      if (!rg(p)) return;
      const Mat& P2 = val(p);
      Mat dp = Mat::Zero(P2.rows(), P2.cols());
      int k2 = 0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          if (j == i) continue;
          double gk = g(0, k2++);
          if (gk == 0.0) continue;
          for (Eigen::Index c = 0; c < P2.cols(); ++c) {
            double pi = P2(i, c), pj = P2(j, c);
            double logdiff = std::log(std::max(pi, eps)) -
                             std::log(std::max(pj, eps));
            dp(i, c) += gk * (logdiff + (pi > eps ? 1.0 : 0.0));
            if (pj > eps) dp(j, c) += gk * (-pi / pj);
          }
        }
      acc(p, dp);
    });
  }

  // KL(a, b) = sum a_i (log a_i - log b_i), both inputs 1 x m, logs clamped
  // at eps; differentiable in both arguments.
  Var kl_div(Var a, Var b, double eps) {
    same_shape(a, b, "kl_div");
    const Mat& A = val(a);
    const Mat& B = val(b);
    Mat y(1, 1);
    double s = 0.0;
    for (Eigen::Index i = 0; i < A.size(); ++i)
      s += A(i) * (std::log(std::max(A(i), eps)) -
                   std::log(std::max(B(i), eps)));
    y(0, 0) = s;
    return push(std::move(y), rg(a) || rg(b),
                [this, a, b, eps](const Mat& g, Var) {
                  const Mat& A2 = val(a);
                  const Mat& B2 = val(b);
                  double g0 = g(0, 0);
                  if (rg(a)) {
                    Mat da(A2.rows(), A2.cols());
                    for (Eigen::Index i = 0; i < A2.size(); ++i)
                      da(i) = g0 * (std::log(std::max(A2(i), eps)) -
                                    std::log(std::max(B2(i), eps)) +
                                    (A2(i) > eps ? 1.0 : 0.0));
                    acc(a, da);
                  }
                  if (rg(b)) {
                    Mat db = Mat::Zero(B2.rows(), B2.cols());
                    for (Eigen::Index i = 0; i < B2.size(); ++i)
                      if (B2(i) > eps) db(i) = g0 * (-A2(i) / B2(i));
                    acc(b, db);
                  }
                });
  }

  // Summed binary cross-entropy; predictions clamped to [eps, 1-eps].
  // labels is a constant matrix of 0/1 with the same shape as preds.
  Var bce_sum(Var preds, const Mat& labels, double eps) {
    const Mat& P = val(preds);
    if (P.rows() != labels.rows() || P.cols() != labels.cols())
      throw ContractViolation("bce_sum shape mismatch");
    auto lab = std::make_shared<Mat>(labels);
    Mat y(1, 1);
    double s = 0.0;
    for (Eigen::Index i = 0; i < P.size(); ++i) {
      double p = std::min(std::max(P(i), eps), 1.0 - eps);
      s -= labels(i) * std::log(p) + (1.0 - labels(i)) * std::log(1.0 - p);
    }
    y(0, 0) = s;
    return push(std::move(y), rg(preds),
                [this, preds, lab, eps](const Mat& g, Var) {
                  if (!rg(preds)) return;
                  const Mat& P2 = val(preds);
                  Mat dp = Mat::Zero(P2.rows(), P2.cols());
                  for (Eigen::Index i = 0; i < P2.size(); ++i) {
                    if (P2(i) <= eps || P2(i) >= 1.0 - eps) continue;
                    dp(i) = g(0, 0) * (P2(i) - (*lab)(i)) /
                            (P2(i) * (1.0 - P2(i)));
                  }
                  acc(preds, dp);
                });
  }

  // ---- backward ----

  void backward(Var root) {
    Node& r = nodes_[check(root)];
    if (r.val.rows() != 1 || r.val.cols() != 1)
      throw ContractViolation("backward root must be scalar");
    r.grad = Mat::Ones(1, 1);
    for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.back || !n.rg || n.grad.size() == 0) continue;
      n.back(n.grad, Var{i});
    }
  }

 private:
  using BackFn = std::function<void(const Mat&, Var)>;
  struct Node {
    Mat val;
    Mat grad;
    bool rg = false;
    BackFn back;
  };

  int check(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size()))
      throw ContractViolation("invalid tape var");
    return v.id;
  }

  bool rg(Var v) const { return nodes_[check(v)].rg; }

  void same_shape(Var a, Var b, const char* what) const {
    if (val(a).rows() != val(b).rows() || val(a).cols() != val(b).cols())
      throw ContractViolation(std::string(what) + " shape mismatch");
  }

  void acc(Var v, const Mat& delta) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
    n.grad += delta;
  }

  template <typename M>
  void acc(Var v, const Eigen::MatrixBase<M>& delta) {
    acc(v, Mat(delta));
  }

  Var push(Mat val, bool requires_grad, BackFn back) {
    nodes_.push_back(Node{std::move(val), Mat(), requires_grad,
                          std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

}  // namespace jobrec::ad
