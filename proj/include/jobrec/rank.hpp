#pragma once
// Ranking stage: cross-attention joint embedding of a candidate JD's global
// representation and the user's skill distribution, a sigmoid click head,
// summed cross-entropy training and AUC / MRR evaluation.

#include "jobrec/params.hpp"
#include "jobrec/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace jobrec {

constexpr double kClickEps = 1e-7;

struct RankerConfig {
  int d = 512;          // JD embedding width
  int num_skills = 0;   // n; must equal the dataset's C
};

inline void add_ranker_params(ParamStore& store, const RankerConfig& cfg) {
  store.add("rank.wq", cfg.d, cfg.d, ParamKind::Weight);
  store.add("rank.wk", cfg.num_skills, cfg.num_skills, ParamKind::Weight);
  store.add("rank.wv", cfg.num_skills, cfg.num_skills, ParamKind::Weight);
  store.add("rank.fc1.w", cfg.d, cfg.d, ParamKind::Weight);
  store.add("rank.fc1.b", 1, cfg.d, ParamKind::Bias);
  store.add("rank.fc2.w", cfg.d, 1, ParamKind::Weight);
  store.add("rank.fc2.b", 1, 1, ParamKind::Bias);
}

// Q = cls^T Wq (1 x d), K = s^T Wk (1 x n), V = s^T Wv (1 x n);
// A = Q^T K (d x n), row-softmax along n, e_joint = softmax(A) V^T (d).
// No sqrt scaling on the logits.
inline ad::Var joint_embedding(Binding& bind, const RankerConfig& cfg,
                               ad::Var jd_cls_row, ad::Var user_row) {
  auto& tape = bind.tape();
  if (tape.val(jd_cls_row).cols() != cfg.d)
    throw DomainError("joint_embedding: JD embedding width mismatch");
  if (tape.val(user_row).cols() != cfg.num_skills)
    throw DomainError("joint_embedding: skill count differs from trained C");
  ad::Var q = tape.matmul(jd_cls_row, bind["rank.wq"]);   // 1 x d
  ad::Var k = tape.matmul(user_row, bind["rank.wk"]);     // 1 x n
  ad::Var v = tape.matmul(user_row, bind["rank.wv"]);     // 1 x n
  ad::Var logits = tape.matmul(tape.transpose(q), k);     // d x n
  ad::Var attn = tape.row_softmax(logits);
  return tape.transpose(tape.matmul(attn, tape.transpose(v)));  // 1 x d
}

inline ad::Var click_logit(Binding& bind, ad::Var joint_row) {
  auto& tape = bind.tape();
  ad::Var h = tape.relu(tape.add_row_broadcast(
      tape.matmul(joint_row, bind["rank.fc1.w"]), bind["rank.fc1.b"]));
  return tape.add_row_broadcast(tape.matmul(h, bind["rank.fc2.w"]),
                                bind["rank.fc2.b"]);
}

inline ad::Var click_probability_tape(Binding& bind, const RankerConfig& cfg,
                                      ad::Var jd_cls_row, ad::Var user_row) {
  return bind.tape().sigmoid(
      click_logit(bind, joint_embedding(bind, cfg, jd_cls_row, user_row)));
}

inline double click_probability(Binding& bind, const RankerConfig& cfg,
                                const Vec& jd_cls, const Vec& user) {
  auto& tape = bind.tape();
  ad::Var c = tape.leaf(jd_cls.transpose(), false);
  ad::Var u = tape.leaf(user.transpose(), false);
  double p = tape.val(click_probability_tape(bind, cfg, c, u))(0, 0);
  return std::min(std::max(p, kClickEps), 1.0 - kClickEps);
}

struct CtrExample {
  Vec jd_cls;
  Vec user;
  int label = 0;
};

// Summed (not averaged) binary cross-entropy over the batch.
inline ad::Var ctr_loss_tape(Binding& bind, const RankerConfig& cfg,
                             const std::vector<CtrExample>& batch) {
  auto& tape = bind.tape();
  std::vector<ad::Var> probs;
  Mat labels(static_cast<Eigen::Index>(batch.size()), 1);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (batch[i].label != 0 && batch[i].label != 1)
      throw DomainError("ctr_loss: label must be 0 or 1");
    ad::Var c = tape.leaf(batch[i].jd_cls.transpose(), false);
    ad::Var u = tape.leaf(batch[i].user.transpose(), false);
    probs.push_back(click_probability_tape(bind, cfg, c, u));
    labels(static_cast<Eigen::Index>(i), 0) = batch[i].label;
  }
  return tape.bce_sum(tape.concat_rows(probs), labels, kClickEps);
}

// Plain summed BCE on already-computed probabilities.
inline double ctr_loss(const std::vector<std::pair<double, int>>& pred_label) {
  double s = 0.0;
  for (auto [p, y] : pred_label) {
    if (y != 0 && y != 1) throw DomainError("ctr_loss: label must be 0 or 1");
    double pc = std::min(std::max(p, kClickEps), 1.0 - kClickEps);
    s -= y == 1 ? std::log(pc) : std::log(1.0 - pc);
  }
  return s;
}

// ---- ranking metrics ----

struct RankedCandidate {
  std::string jd_id;
  double score = 0.0;
  int label = 0;
};

struct UserCandidateGroup {
  std::string user_id;
  std::vector<RankedCandidate> candidates;
};

struct RankMetrics {
  double auc = 0.0;           // pooled over all groups; ties count 0.5
  double mrr = 0.0;           // mean over users of 1 / rank of first positive
  double per_user_auc = 0.0;  // mean of per-group AUCs (groups with both classes)
  int users_scored = 0;
  int users_without_positive = 0;
  std::vector<std::string> flagged_users;  // groups excluded from MRR
};

// Pooled AUC via the rank-sum formulation with average ranks for ties
// (equivalent to pairwise counting with ties worth 0.5).
inline double pooled_auc(const std::vector<std::pair<double, int>>& scored) {
  std::size_t n_pos = 0, n_neg = 0;
  for (auto& [s, y] : scored) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0)
    throw ContractViolation("AUC needs at least one positive and one negative");
  std::vector<std::size_t> order(scored.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scored[a].first < scored[b].first;
  });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() &&
           scored[order[j]].first == scored[order[i]].first)
      ++j;
    double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average
    for (std::size_t k = i; k < j; ++k)
      if (scored[order[k]].second == 1) rank_sum_pos += avg_rank;
    i = j;
  }
  double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

inline RankMetrics rank_metrics(const std::vector<UserCandidateGroup>& groups) {
  RankMetrics out;
  std::vector<std::pair<double, int>> pooled;
  double mrr_sum = 0.0;
  int mrr_users = 0;
  double user_auc_sum = 0.0;
  int user_auc_groups = 0;

  for (const auto& g : groups) {
    for (const auto& c : g.candidates) pooled.emplace_back(c.score, c.label);

    std::vector<const RankedCandidate*> sorted;
    for (const auto& c : g.candidates) sorted.push_back(&c);
    std::sort(sorted.begin(), sorted.end(),
              [](const RankedCandidate* a, const RankedCandidate* b) {
                if (a->score != b->score) return a->score > b->score;
                return a->jd_id < b->jd_id;
              });
    int first_pos = 0;
    for (std::size_t r = 0; r < sorted.size(); ++r) {
      if (sorted[r]->label == 1) {
        first_pos = static_cast<int>(r) + 1;
        break;
      }
    }
    if (first_pos > 0) {
      mrr_sum += 1.0 / first_pos;
      ++mrr_users;
    } else {
      out.users_without_positive += 1;
      out.flagged_users.push_back(g.user_id);
    }

    std::vector<std::pair<double, int>> local;
    bool has_pos = false, has_neg = false;
    for (const auto& c : g.candidates) {
      local.emplace_back(c.score, c.label);
      (c.label == 1 ? has_pos : has_neg) = true;
    }
    if (has_pos && has_neg) {
      user_auc_sum += pooled_auc(local);
      ++user_auc_groups;
    }
  }

  out.auc = pooled_auc(pooled);
  out.mrr = mrr_users > 0 ? mrr_sum / mrr_users : 0.0;
  out.per_user_auc = user_auc_groups > 0 ? user_auc_sum / user_auc_groups : 0.0;
  out.users_scored = static_cast<int>(groups.size());
  return out;
}

}  // namespace jobrec
