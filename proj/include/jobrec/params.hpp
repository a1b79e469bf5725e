#pragma once
// Named parameter tensors with optimizer state, uniform Glorot initialization
// and a per-tape binding helper.

#include "jobrec/autodiff.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace jobrec {

enum class ParamKind {
  Weight,    // Glorot-uniform init, trainable
  Bias,      // zero init, trainable
  Scale,     // one init, trainable (layer/batch norm gain)
  Shift,     // zero init, trainable (layer/batch norm offset)
  RunMean,   // zero init, non-trainable running statistic
  RunVar,    // one init, non-trainable running statistic
};

struct ParamEntry {
  std::string name;
  ParamKind kind;
  Mat value;
  Mat m;  // Adam first moment
  Mat v;  // Adam second moment
  bool trainable() const {
    return kind != ParamKind::RunMean && kind != ParamKind::RunVar;
  }
};

class ParamStore {
 public:
  int add(const std::string& name, int rows, int cols, ParamKind kind) {
    if (index_.count(name)) throw ContractViolation("duplicate param: " + name);
    ParamEntry e;
    e.name = name;
    e.kind = kind;
    e.value = Mat::Zero(rows, cols);
    e.m = Mat::Zero(rows, cols);
    e.v = Mat::Zero(rows, cols);
    entries_.push_back(std::move(e));
    int id = static_cast<int>(entries_.size()) - 1;
    index_.emplace(name, id);
    return id;
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  int id_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractViolation("unknown param: " + name);
    return it->second;
  }

  Mat& value(const std::string& name) { return entries_[static_cast<std::size_t>(id_of(name))].value; }
  const Mat& value(const std::string& name) const {
    return entries_[static_cast<std::size_t>(id_of(name))].value;
  }

  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }

  // Weight matrices uniform in +/- sqrt(6 / (n_in + n_out)); biases and
  // shifts zero; scales one; running stats at their neutral values.
  // Deterministic given the seed: entries are filled in insertion order,
  // row-major within each entry.
  void init(std::uint64_t seed) {
    Rng rng(seed);
    for (auto& e : entries_) {
      switch (e.kind) {
        case ParamKind::Weight: {
          double bound =
              std::sqrt(6.0 / static_cast<double>(e.value.rows() + e.value.cols()));
          for (Eigen::Index r = 0; r < e.value.rows(); ++r)
            for (Eigen::Index c = 0; c < e.value.cols(); ++c)
              e.value(r, c) = uniform_real(rng, -bound, bound);
          break;
        }
        case ParamKind::Bias:
        case ParamKind::Shift:
        case ParamKind::RunMean:
          e.value.setZero();
          break;
        case ParamKind::Scale:
        case ParamKind::RunVar:
          e.value.setOnes();
          break;
      }
      e.m.setZero();
      e.v.setZero();
    }
  }

  std::size_t total_coefficients() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += static_cast<std::size_t>(e.value.size());
    return n;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, int> index_;
};

// Leaf vars for every parameter on one tape; gradients read back by name.
class Binding {
 public:
  Binding(ad::Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {
    vars_.reserve(store.entries().size());
    for (auto& e : store.entries())
      vars_.push_back(tape.leaf(e.value, e.trainable()));
  }

  ad::Var operator[](const std::string& name) const {
    return vars_[static_cast<std::size_t>(store_->id_of(name))];
  }

  ad::Tape& tape() const { return *tape_; }
  ParamStore& store() const { return *store_; }

  Mat grad(const std::string& name) const {
    return tape_->grad_of((*this)[name]);
  }

  const std::vector<ad::Var>& vars() const { return vars_; }

 private:
  ad::Tape* tape_;
  ParamStore* store_;
  std::vector<ad::Var> vars_;
};

// Adam with bias correction; moment coefficients (0.9, 0.999), eps 1e-8.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(double beta1 = 0.9, double beta2 = 0.999,
                         double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore& store, const Binding& binding, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    auto& entries = store.entries();
    for (std::size_t i = 0; i < entries.size(); ++i) {
      auto& e = entries[i];
      if (!e.trainable()) continue;
      Mat g = binding.tape().grad_of(binding.vars()[i]);
      e.m = beta1_ * e.m + (1.0 - beta1_) * g;
      e.v = beta2_ * e.v + (1.0 - beta2_) * g.cwiseProduct(g);
      Mat mhat = e.m / bc1;
      Mat vhat = e.v / bc2;
      e.value.array() -=
          lr * mhat.array() / (vhat.array().sqrt() + eps_);
    }
  }

  long steps() const { return t_; }
  void set_steps(long t) { t_ = t; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace jobrec
