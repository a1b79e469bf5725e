#pragma once
// Recall-stage objective and evaluation: KL distribution loss, bidirectional
// hardest-negative margin loss between JD embeddings and auxiliary user info,
// relation-consistency regularizer over tuples, same-title neighbor
// selection, cosine candidate recall, and Recall@K / NDCG@K.

#include "jobrec/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace jobrec {

constexpr double kKlEps = 1e-12;

struct RecallLossConfig {
  double lambda = 0.2;  // weight of the correlation (margin) term
  double mu = 0.4;      // weight of the relation-consistency term
  double alpha = 0.2;   // ranking margin
  // Pairwise distances enter the relation softmax as exp(+d); set false to
  // flip the sign to exp(-d).
  bool relation_exp_positive = true;

  void validate() const {
    if (lambda < 0.0 || mu < 0.0) throw DomainError("lambda/mu must be >= 0");
    if (!(alpha > 0.0)) throw DomainError("alpha must be > 0");
  }
};

enum class RelationDistance { Kl, Euclid };

// ---- classifier head and aux-info encoder ----

struct RecallHeadConfig {
  int d = 512;
  int num_skills = 0;
  int position_name_count = 0;
  int max_position_level = 1;  // normalizer for the ordinal level
};

inline void add_recall_head_params(ParamStore& store,
                                   const RecallHeadConfig& cfg) {
  store.add("g.fc1.w", cfg.d, cfg.d, ParamKind::Weight);
  store.add("g.fc1.b", 1, cfg.d, ParamKind::Bias);
  store.add("g.fc2.w", cfg.d, cfg.num_skills, ParamKind::Weight);
  store.add("g.fc2.b", 1, cfg.num_skills, ParamKind::Bias);
  store.add("aux.fc.w", cfg.position_name_count + 1, cfg.d, ParamKind::Weight);
  store.add("aux.fc.b", 1, cfg.d, ParamKind::Bias);
}

// Two fully connected layers with ReLU between and row softmax on top;
// every output row is a valid skill distribution.
inline ad::Var classify_skills(Binding& bind, ad::Var cls_rows) {
  auto& tape = bind.tape();
  ad::Var h = tape.relu(tape.add_row_broadcast(
      tape.matmul(cls_rows, bind["g.fc1.w"]), bind["g.fc1.b"]));
  ad::Var logits = tape.add_row_broadcast(tape.matmul(h, bind["g.fc2.w"]),
                                          bind["g.fc2.b"]);
  return tape.row_softmax(logits);
}

// Encodes (one-hot position name, normalized level) rows into d-vectors.
inline ad::Var encode_aux_info(Binding& bind, const RecallHeadConfig& cfg,
                               const std::vector<AuxUserInfo>& infos) {
  auto& tape = bind.tape();
  const int in_dim = cfg.position_name_count + 1;
  Mat input = Mat::Zero(static_cast<Eigen::Index>(infos.size()), in_dim);
  for (std::size_t i = 0; i < infos.size(); ++i) {
    const auto& a = infos[i];
    if (a.position_name_id < 0 || a.position_name_id >= cfg.position_name_count)
      throw DomainError("position_name_id out of range");
    input(static_cast<Eigen::Index>(i), a.position_name_id) = 1.0;
    input(static_cast<Eigen::Index>(i), in_dim - 1) =
        static_cast<double>(a.position_level) /
        static_cast<double>(std::max(cfg.max_position_level, 1));
  }
  ad::Var x = tape.leaf(std::move(input), false);
  return tape.add_row_broadcast(tape.matmul(x, bind["aux.fc.w"]),
                                bind["aux.fc.b"]);
}

// ---- losses ----

// KL(y, p) = sum_c y_c log(y_c / p_c); p clamped below at 1e-12, 0 log 0 = 0.
inline double kl_distribution_loss(const SkillDistribution& y,
                                   const SkillDistribution& p) {
  if (y.size() != p.size())
    throw DomainError("kl_distribution_loss: length mismatch");
  double s = 0.0;
  for (int c = 0; c < y.size(); ++c) {
    double yc = y.probs(c);
    if (yc <= 0.0) continue;
    s += yc * (std::log(yc) - std::log(std::max(p.probs(c), kKlEps)));
  }
  return s;
}

// Tape version: targets are constants, predictions differentiable rows.
inline ad::Var kl_rows_loss(ad::Tape& tape, const std::vector<Vec>& targets,
                            ad::Var pred_rows,
                            const std::vector<int>& pred_row_idx) {
  if (targets.size() != pred_row_idx.size())
    throw ContractViolation("kl_rows_loss: size mismatch");
  ad::Var total = tape.leaf(Mat::Zero(1, 1), false);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    ad::Var p = tape.gather_rows(pred_rows, {pred_row_idx[i]});
    ad::Var y = tape.leaf(targets[i].transpose(), false);
    total = tape.add(total, tape.kl_div(y, p, kKlEps));
  }
  return total;
}

// Bidirectional hinge with hardest in-batch negatives; cosine similarity.
// Row i of each matrix is a matched (aux, cls) pair; loss is summed over i.
inline ad::Var skill_correlation_loss_tape(ad::Tape& tape, ad::Var aui,
                                           ad::Var cls, double alpha) {
  const Eigen::Index B = tape.val(aui).rows();
  if (B < 2)
    throw ContractViolation("skill correlation loss needs batch size >= 2");
  ad::Var sims = tape.cosine_matrix(aui, cls);  // sims(i, j) = s(aui_i, cls_j)
  const Mat S = tape.val(sims);  // copy: later ops may grow the tape

  ad::Var total = tape.leaf(Mat::Zero(1, 1), false);
  for (Eigen::Index i = 0; i < B; ++i) {
    // Hardest negative JD for aux i, and hardest negative aux for JD i.
    Eigen::Index jd_star = i == 0 ? 1 : 0;
    Eigen::Index aux_star = i == 0 ? 1 : 0;
    for (Eigen::Index j = 0; j < B; ++j) {
      if (j == i) continue;
      if (S(i, j) > S(i, jd_star)) jd_star = j;
      if (S(j, i) > S(aux_star, i)) aux_star = j;
    }
    ad::Var match = tape.gather_entry(sims, static_cast<int>(i),
                                      static_cast<int>(i));
    ad::Var neg_jd = tape.gather_entry(sims, static_cast<int>(i),
                                       static_cast<int>(jd_star));
    ad::Var neg_aux = tape.gather_entry(sims, static_cast<int>(aux_star),
                                        static_cast<int>(i));
    ad::Var h1 = tape.relu(tape.add_const(tape.sub(neg_jd, match), alpha));
    ad::Var h2 = tape.relu(tape.add_const(tape.sub(neg_aux, match), alpha));
    total = tape.add(total, tape.add(h1, h2));
  }
  return total;
}

inline double skill_correlation_loss(const Mat& aui_batch, const Mat& cls_batch,
                                     double alpha) {
  ad::Tape tape;
  ad::Var a = tape.leaf(aui_batch, false);
  ad::Var c = tape.leaf(cls_batch, false);
  return tape.val(skill_correlation_loss_tape(tape, a, c, alpha))(0, 0);
}

// Relation energy: flat softmax over all ordered-pair distances of a tuple.
// Pair order: (n1, n2), n1 major, n2 ascending skipping n1.
inline ad::Var relation_energy_tape(ad::Tape& tape, ad::Var vectors,
                                    RelationDistance distance,
                                    bool exp_positive) {
  if (tape.val(vectors).rows() < 2)
    throw ContractViolation("relation energy needs >= 2 vectors");
  ad::Var d = distance == RelationDistance::Kl
                  ? tape.pairwise_kl_rows(vectors, kKlEps)
                  : tape.pairwise_euclid_rows(vectors);
  if (!exp_positive) d = tape.scale(d, -1.0);
  return tape.flat_softmax(d);
}

inline Vec relation_energy(const std::vector<Vec>& vectors,
                           RelationDistance distance,
                           bool exp_positive = true) {
  if (vectors.size() < 2)
    throw ContractViolation("relation energy needs >= 2 vectors");
  Mat m(static_cast<Eigen::Index>(vectors.size()), vectors[0].size());
  for (std::size_t i = 0; i < vectors.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
  ad::Tape tape;
  ad::Var v = tape.leaf(std::move(m), false);
  return tape.val(relation_energy_tape(tape, v, distance, exp_positive))
      .row(0)
      .transpose();
}

// KL between the prediction-side relation energy (pairwise KL distances) and
// the representation-side relation energy (pairwise euclidean distances).
inline ad::Var relation_consistency_loss_tape(ad::Tape& tape, ad::Var preds,
                                              ad::Var reps,
                                              bool exp_positive) {
  if (tape.val(preds).rows() != tape.val(reps).rows())
    throw DomainError("relation consistency: tuple size mismatch");
  ad::Var qp = relation_energy_tape(tape, preds, RelationDistance::Kl,
                                    exp_positive);
  ad::Var qr = relation_energy_tape(tape, reps, RelationDistance::Euclid,
                                    exp_positive);
  return tape.kl_div(qp, qr, kKlEps);
}

inline double relation_consistency_loss(const std::vector<Vec>& preds,
                                        const std::vector<Vec>& reps,
                                        bool exp_positive = true) {
  if (preds.size() != reps.size())
    throw DomainError("relation consistency: tuple size mismatch");
  if (preds.size() < 2)
    throw ContractViolation("relation consistency needs >= 2 members");
  Mat mp(static_cast<Eigen::Index>(preds.size()), preds[0].size());
  Mat mr(static_cast<Eigen::Index>(reps.size()), reps[0].size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    mp.row(static_cast<Eigen::Index>(i)) = preds[i].transpose();
    mr.row(static_cast<Eigen::Index>(i)) = reps[i].transpose();
  }
  ad::Tape tape;
  ad::Var p = tape.leaf(std::move(mp), false);
  ad::Var r = tape.leaf(std::move(mr), false);
  return tape.val(relation_consistency_loss_tape(tape, p, r, exp_positive))(0, 0);
}

// ---- neighbor selection ----

struct NeighborPoolEntry {
  std::string jd_id;
  int title_id = 0;
  Vec embedding;  // u_cls from the current (or warm-up) model
};

// The L same-title pool entries nearest in euclidean distance to the query
// embedding; ties break on ascending jd_id; a same-title deficit is filled
// with the nearest different-title candidates. The pool must exclude the
// query JD itself.
inline std::vector<std::string> select_neighbors(
    const Vec& query_embedding, int query_title,
    const std::vector<NeighborPoolEntry>& pool, int L) {
  if (pool.empty()) throw ContractViolation("select_neighbors: empty pool");
  if (L < 1) throw DomainError("select_neighbors: L must be >= 1");

  struct Scored {
    double dist;
    const NeighborPoolEntry* entry;
  };
  std::vector<Scored> same, other;
  for (const auto& e : pool) {
    double d = (query_embedding - e.embedding).norm();
    (e.title_id == query_title ? same : other).push_back({d, &e});
  }
  auto by_dist_then_id = [](const Scored& a, const Scored& b) {
    if (a.dist != b.dist) return a.dist < b.dist;
    return a.entry->jd_id < b.entry->jd_id;
  };
  std::sort(same.begin(), same.end(), by_dist_then_id);
  std::sort(other.begin(), other.end(), by_dist_then_id);

  std::vector<std::string> out;
  for (const auto& s : same) {
    if (static_cast<int>(out.size()) == L) break;
    out.push_back(s.entry->jd_id);
  }
  for (const auto& s : other) {
    if (static_cast<int>(out.size()) == L) break;
    out.push_back(s.entry->jd_id);
  }
  return out;
}

// ---- candidate recall and metrics ----

inline double cosine_similarity(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw DomainError("cosine: length mismatch");
  double den = a.norm() * b.norm();
  return den > 0.0 ? a.dot(b) / den : 0.0;
}

struct ScoredCandidate {
  std::string jd_id;
  double score = 0.0;
};

// Pool sorted by descending cosine(predicted distribution, user profile),
// ties by ascending jd_id; top K returned.
inline std::vector<ScoredCandidate> recall_candidates(
    const SkillDistribution& user,
    const std::vector<std::pair<std::string, SkillDistribution>>& jd_pool_preds,
    int K) {
  if (K < 1) throw DomainError("recall_candidates: K must be >= 1");
  if (jd_pool_preds.empty())
    throw ContractViolation("recall_candidates: empty pool");
  std::vector<ScoredCandidate> scored;
  scored.reserve(jd_pool_preds.size());
  for (const auto& [id, pred] : jd_pool_preds)
    scored.push_back({id, cosine_similarity(pred.probs, user.probs)});
  std::sort(scored.begin(), scored.end(),
            [](const ScoredCandidate& a, const ScoredCandidate& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.jd_id < b.jd_id;
            });
  if (static_cast<int>(scored.size()) > K)
    scored.resize(static_cast<std::size_t>(K));
  return scored;
}

struct EvalCandidateSet {
  std::string user_id;
  std::string positive_jd;
  std::vector<std::string> negative_jds;
};

struct RecallMetrics {
  std::vector<int> k_values;
  std::vector<double> recall_at_k;
  std::vector<double> ndcg_at_k;
  std::vector<std::pair<std::string, int>> positive_ranks;  // per user
};

// scorer(user_id, jd_id) -> relevance score. Rank of the positive uses the
// recall_candidates tie rule (descending score, ascending jd_id).
inline RecallMetrics recall_metrics(
    const std::vector<EvalCandidateSet>& sets,
    const std::function<double(const std::string&, const std::string&)>& scorer,
    const std::vector<int>& k_values) {
  RecallMetrics out;
  out.k_values = k_values;
  for (int k : k_values)
    if (k < 1 || k > 201) throw DomainError("recall metrics: K outside 1..201");
  out.recall_at_k.assign(k_values.size(), 0.0);
  out.ndcg_at_k.assign(k_values.size(), 0.0);
  if (sets.empty()) return out;

  for (const auto& set : sets) {
    double pos_score = scorer(set.user_id, set.positive_jd);
    int rank = 1;
    for (const auto& neg : set.negative_jds) {
      double s = scorer(set.user_id, neg);
      if (s > pos_score || (s == pos_score && neg < set.positive_jd)) ++rank;
    }
    out.positive_ranks.emplace_back(set.user_id, rank);
    for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
      if (rank <= k_values[ki]) {
        out.recall_at_k[ki] += 1.0;
        out.ndcg_at_k[ki] += 1.0 / std::log2(1.0 + rank);
      }
    }
  }
  const double n = static_cast<double>(sets.size());
  for (std::size_t ki = 0; ki < k_values.size(); ++ki) {
    out.recall_at_k[ki] /= n;
    out.ndcg_at_k[ki] /= n;
  }
  return out;
}

}  // namespace jobrec
