#pragma once
// Training orchestration for both stages: tuple-grouped batching with a
// one-time neighbor refresh after the first epoch, Adam with a stepped
// learning-rate schedule, per-epoch held-out metrics, best-checkpoint
// tracking, and checkpoint assembly.

#include "jobrec/checkpoint.hpp"
#include "jobrec/dataset_io.hpp"
#include "jobrec/model.hpp"

#include <algorithm>
#include <map>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace jobrec {

class TrainAbort : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  std::string stage = "recall";  // "recall" | "rank"
  int batch_size = 32;
  double lr = 0.001;
  double lr_anneal_factor = 0.8;
  int lr_anneal_every = 3;  // epochs
  int max_epochs = 30;
  double dropout = 0.1;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int recall_negatives = 200;  // sampled negatives per user at evaluation
  int rank_negatives = 3;      // negatives per positive during rank training
  double eval_fraction = 0.2;
  std::string diagnostics_dir;  // where NaN batch dumps land; empty = no dump

  void validate() const {
    if (stage != "recall" && stage != "rank")
      throw DomainError("train config: unknown stage " + stage);
    if (stage == "recall" && batch_size < 2)
      throw DomainError(
          "train config: recall stage needs batch_size >= 2 "
          "(in-batch negatives)");
    if (batch_size < 1) throw DomainError("train config: batch_size >= 1");
    if (max_epochs < 1) throw DomainError("train config: max_epochs >= 1");
    if (!(lr > 0.0)) throw DomainError("train config: lr must be positive");
    if (lr_anneal_every < 1)
      throw DomainError("train config: lr_anneal_every >= 1");
    if (eval_fraction < 0.0 || eval_fraction >= 1.0)
      throw DomainError("train config: eval_fraction in [0,1)");
  }
};

// lr * factor^(epoch / every); epochs are 0-indexed, so epochs 0..every-1
// run at the base rate.
inline double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  return cfg.lr * std::pow(cfg.lr_anneal_factor, epoch / cfg.lr_anneal_every);
}

// Per-epoch shuffled batches of tuple indices. The trailing partial batch is
// kept when it still holds >= 2 tuples, otherwise dropped.
inline std::vector<std::vector<int>> make_recall_batches(
    const std::vector<int>& tuple_indices, int batch_size, std::uint64_t seed,
    int epoch) {
  if (batch_size < 2)
    throw ContractViolation("make_recall_batches: batch_size >= 2");
  std::vector<int> order = tuple_indices;
  Rng rng(derive_seed(seed, 0x5A5A0000ULL + static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < order.size(); i += static_cast<std::size_t>(batch_size)) {
    std::size_t end = std::min(order.size(), i + static_cast<std::size_t>(batch_size));
    if (end - i < 2) break;
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

// ---- dataset indexing helpers ----

struct JdIndex {
  std::unordered_map<std::string, const JobDescription*> by_id;
  std::unordered_map<std::string, int> record_of;

  static JdIndex build(const Dataset& ds) {
    JdIndex idx;
    for (std::size_t i = 0; i < ds.records.size(); ++i) {
      idx.by_id.emplace(ds.records[i].jd.jd_id, &ds.records[i].jd);
      idx.record_of.emplace(ds.records[i].jd.jd_id, static_cast<int>(i));
    }
    return idx;
  }

  const JobDescription* get(const std::string& id) const {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DomainError("unknown jd_id: " + id);
    return it->second;
  }
};

using NeighborMap = std::map<std::string, std::vector<std::string>>;

inline JDTuple resolve_tuple(const JobDescription* jd, const NeighborMap& map,
                             const JdIndex& index, int L) {
  JDTuple t;
  t.central = jd;
  if (L == 0) return t;
  auto it = map.find(jd->jd_id);
  if (it == map.end())
    throw DomainError("no neighbor assignment for jd_id: " + jd->jd_id);
  for (const auto& nid : it->second) t.neighbors.push_back(index.get(nid));
  if (static_cast<int>(t.neighbors.size()) != L)
    throw DomainError("neighbor list size != L for jd_id: " + jd->jd_id);
  return t;
}

// Deterministic train/eval record split.
inline void split_records(int n, double eval_fraction, std::uint64_t seed,
                          std::vector<int>* train_idx,
                          std::vector<int>* eval_idx) {
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, 0x5EED5EEDULL));
  std::shuffle(order.begin(), order.end(), rng);
  int n_eval = static_cast<int>(std::floor(eval_fraction * n));
  n_eval = std::min(n_eval, n - 1);
  eval_idx->assign(order.begin(), order.begin() + n_eval);
  train_idx->assign(order.begin() + n_eval, order.end());
  std::sort(train_idx->begin(), train_idx->end());
  std::sort(eval_idx->begin(), eval_idx->end());
}

// Initial neighbor assignment: L distinct random train JDs per record.
inline NeighborMap random_neighbors(const Dataset& ds,
                                    const std::vector<int>& train_idx, int L,
                                    std::uint64_t seed) {
  NeighborMap map;
  if (L == 0) {
    for (const auto& r : ds.records) map[r.jd.jd_id] = {};
    return map;
  }
  if (static_cast<int>(train_idx.size()) < L + 1)
    throw DomainError("not enough training JDs for L neighbors");
  for (const auto& rec : ds.records) {
    const std::string& id = rec.jd.jd_id;
    Rng rng(derive_seed(seed, 0x4E164B00ULL ^ fnv1a64(id)));
    std::vector<std::string> picked;
    std::unordered_set<int> used;
    while (static_cast<int>(picked.size()) < L) {
      int j = train_idx[static_cast<std::size_t>(uniform_int(
          rng, 0, static_cast<int>(train_idx.size()) - 1))];
      if (used.count(j)) continue;
      const std::string& cand = ds.records[static_cast<std::size_t>(j)].jd.jd_id;
      if (cand == id) continue;
      used.insert(j);
      picked.push_back(cand);
    }
    map[id] = std::move(picked);
  }
  return map;
}

// ---- batched eval-mode encoding ----

struct EncodedJds {
  Mat cls;    // n x d
  Mat preds;  // n x C
  std::unordered_map<std::string, int> row_of;
};

inline EncodedJds encode_jds_eval(RecallModel& model,
                                  const std::vector<const JobDescription*>& jds,
                                  const NeighborMap& neighbors,
                                  const JdIndex& index, int chunk = 64) {
  EncodedJds out;
  out.cls = Mat::Zero(static_cast<Eigen::Index>(jds.size()), model.cfg.d);
  out.preds =
      Mat::Zero(static_cast<Eigen::Index>(jds.size()), model.cfg.num_skills);
  for (std::size_t start = 0; start < jds.size();
       start += static_cast<std::size_t>(chunk)) {
    std::size_t end = std::min(jds.size(), start + static_cast<std::size_t>(chunk));
    std::vector<JDTuple> tuples;
    for (std::size_t i = start; i < end; ++i)
      tuples.push_back(resolve_tuple(jds[i], neighbors, index,
                                     model.cfg.neighbors));
    ad::Tape tape;
    Binding bind(tape, model.params);
    auto enc = encode_tuple_batch(bind, model.cfg, tuples, Mode::Eval, nullptr);
    const Mat& cls = tape.val(enc.all_cls);
    const Mat& preds = tape.val(enc.all_preds);
    for (std::size_t i = start; i < end; ++i) {
      int row = enc.central_row(static_cast<int>(i - start));
      out.cls.row(static_cast<Eigen::Index>(i)) = cls.row(row);
      out.preds.row(static_cast<Eigen::Index>(i)) = preds.row(row);
    }
  }
  for (std::size_t i = 0; i < jds.size(); ++i)
    out.row_of.emplace(jds[i]->jd_id, static_cast<int>(i));
  return out;
}

// ---- recall stage ----

struct RecallPipeline {
  RecallModel model;
  NeighborMap neighbors;
  std::vector<std::string> pool_ids;  // training JDs (neighbor candidates)
  std::vector<int> pool_titles;
  Mat pool_embeddings;  // refresh-time cls embeddings, one row per pool id
  std::vector<std::string> vocab_tokens;
  std::vector<int> train_indices;
  std::vector<int> eval_indices;
  std::string config_fingerprint;
};

struct RecallTrainResult {
  RecallPipeline best;
  RecallPipeline final;
  int best_epoch = -1;
  double best_recall20 = 0.0;
  std::vector<nlohmann::json> epoch_log;
};

// Negatives sampled per user from every other JD in the dataset.
inline std::vector<EvalCandidateSet> build_eval_sets(
    const Dataset& ds, const std::vector<int>& eval_indices, int negatives,
    std::uint64_t seed) {
  std::vector<EvalCandidateSet> sets;
  const int n = static_cast<int>(ds.records.size());
  for (int idx : eval_indices) {
    const auto& rec = ds.records[static_cast<std::size_t>(idx)];
    EvalCandidateSet set;
    set.user_id = rec.profile.user_id;
    set.positive_jd = rec.jd.jd_id;
    Rng rng(derive_seed(seed, 0xE7A1ULL ^ fnv1a64(set.user_id)));
    int want = std::min(negatives, n - 1);
    std::unordered_set<int> used{idx};
    while (static_cast<int>(set.negative_jds.size()) < want) {
      int j = uniform_int(rng, 0, n - 1);
      if (used.count(j)) continue;
      used.insert(j);
      set.negative_jds.push_back(ds.records[static_cast<std::size_t>(j)].jd.jd_id);
    }
    sets.push_back(std::move(set));
  }
  return sets;
}

inline RecallMetrics evaluate_recall_sets(
    const Dataset& ds, const EncodedJds& encoded,
    const std::vector<EvalCandidateSet>& sets,
    const std::vector<int>& k_values) {
  std::unordered_map<std::string, const Vec*> skills_of;
  for (const auto& r : ds.records)
    skills_of.emplace(r.profile.user_id, &r.profile.skills.probs);
  auto scorer = [&](const std::string& user_id, const std::string& jd_id) {
    auto u = skills_of.find(user_id);
    auto row = encoded.row_of.find(jd_id);
    if (u == skills_of.end() || row == encoded.row_of.end())
      throw DomainError("eval scorer: unknown id " + user_id + "/" + jd_id);
    Vec pred = encoded.preds.row(row->second).transpose();
    return cosine_similarity(pred, *u->second);
  };
  return recall_metrics(sets, scorer, k_values);
}

inline RecallTrainResult train_recall_stage(const Dataset& ds,
                                            RecallModelConfig model_cfg,
                                            const TrainConfig& train_cfg,
                                            const std::string& fingerprint = "") {
  train_cfg.validate();
  if (train_cfg.stage != "recall")
    throw DomainError("train_recall_stage: config stage must be 'recall'");
  model_cfg.dropout = train_cfg.dropout;
  model_cfg.validate();

  auto report = validate_dataset(ds.records, ds.clicks,
                                 bounds_of(ds, model_cfg.m_max));
  if (!report.ok())
    throw DomainError("dataset invalid: " + report.violations[0].record_id +
                      ": " + report.violations[0].message + " (+" +
                      std::to_string(report.violations.size() - 1) + " more)");

  const int n = static_cast<int>(ds.records.size());
  std::vector<int> train_idx, eval_idx;
  split_records(n, train_cfg.eval_fraction, train_cfg.seed, &train_idx,
                &eval_idx);

  JdIndex index = JdIndex::build(ds);
  NeighborMap neighbors = random_neighbors(ds, train_idx, model_cfg.neighbors,
                                           train_cfg.seed);

  RecallModel model = RecallModel::create(
      model_cfg, derive_seed(train_cfg.seed, 0x1217ULL));
  AdamOptimizer adam(train_cfg.adam_beta1, train_cfg.adam_beta2,
                     train_cfg.adam_eps);

  auto eval_sets = build_eval_sets(ds, eval_idx, train_cfg.recall_negatives,
                                   train_cfg.seed);
  std::vector<const JobDescription*> all_jds;
  for (const auto& r : ds.records) all_jds.push_back(&r.jd);

  RecallTrainResult result;
  result.best_recall20 = -1.0;

  auto snapshot_pipeline = [&](RecallPipeline* out) {
    out->model = model;
    out->neighbors = neighbors;
    out->vocab_tokens = ds.vocab.tokens();
    out->train_indices = train_idx;
    out->eval_indices = eval_idx;
    out->config_fingerprint = fingerprint;
  };

  Mat pool_embeddings;
  std::vector<std::string> pool_ids;
  std::vector<int> pool_titles;

  for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(train_cfg, epoch);
    auto batches = make_recall_batches(train_idx, train_cfg.batch_size,
                                       train_cfg.seed, epoch);
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      std::vector<RecallBatchItem> items;
      for (int rec_idx : batches[bi]) {
        const auto& rec = ds.records[static_cast<std::size_t>(rec_idx)];
        items.push_back({resolve_tuple(&rec.jd, neighbors, index,
                                       model_cfg.neighbors),
                         &rec});
      }
      Rng dropout_rng(derive_seed(
          train_cfg.seed,
          0xD09'0000ULL ^ (static_cast<std::uint64_t>(epoch) << 20) ^ bi));
      ad::Tape tape;
      Binding bind(tape, model.params);
      auto loss = total_recall_loss_tape(bind, model.cfg, items, Mode::Train,
                                         &dropout_rng);
      double loss_val = tape.val(loss.total)(0, 0);
      if (!std::isfinite(loss_val)) {
        nlohmann::json dump{{"stage", "recall"},
                            {"epoch", epoch},
                            {"batch", bi},
                            {"loss", "non-finite"},
                            {"jd_ids", nlohmann::json::array()}};
        for (const auto& it : items)
          dump["jd_ids"].push_back(it.tuple.central->jd_id);
        if (!train_cfg.diagnostics_dir.empty())
          atomic_write_file(std::filesystem::path(train_cfg.diagnostics_dir) /
                                "nan_batch.json",
                            dump.dump(2) + "\n");
        throw TrainAbort("non-finite recall loss at epoch " +
                         std::to_string(epoch) + " batch " +
                         std::to_string(bi) + ": " + dump["jd_ids"].dump());
      }
      epoch_loss += loss_val;
      tape.backward(loss.total);
      adam.step(model.params, bind, lr);
    }

    // One-time neighbor refresh after the first epoch: recompute embeddings
    // with the current model, re-select same-title nearest neighbors, then
    // keep them fixed for the remaining epochs.
    if (epoch == 0 && model_cfg.neighbors > 0) {
      EncodedJds enc = encode_jds_eval(model, all_jds, neighbors, index);
      pool_ids.clear();
      pool_titles.clear();
      pool_embeddings = Mat::Zero(static_cast<Eigen::Index>(train_idx.size()),
                                  model_cfg.d);
      std::vector<NeighborPoolEntry> pool;
      for (std::size_t p = 0; p < train_idx.size(); ++p) {
        const auto& rec = ds.records[static_cast<std::size_t>(train_idx[p])];
        Vec emb = enc.cls.row(enc.row_of.at(rec.jd.jd_id)).transpose();
        pool_embeddings.row(static_cast<Eigen::Index>(p)) = emb.transpose();
        pool_ids.push_back(rec.jd.jd_id);
        pool_titles.push_back(rec.jd.title_id);
        pool.push_back({rec.jd.jd_id, rec.jd.title_id, std::move(emb)});
      }
      NeighborMap refreshed;
      for (const auto& rec : ds.records) {
        const auto& jd = rec.jd;
        Vec q = enc.cls.row(enc.row_of.at(jd.jd_id)).transpose();
        std::vector<NeighborPoolEntry> usable;
        for (const auto& e : pool)
          if (e.jd_id != jd.jd_id) usable.push_back(e);
        refreshed[jd.jd_id] =
            select_neighbors(q, jd.title_id, usable, model_cfg.neighbors);
      }
      neighbors = std::move(refreshed);
    }

    EncodedJds enc = encode_jds_eval(model, all_jds, neighbors, index);
    RecallMetrics metrics;
    if (!eval_sets.empty())
      metrics = evaluate_recall_sets(ds, enc, eval_sets, {20});
    double recall20 = eval_sets.empty() ? 0.0 : metrics.recall_at_k[0];
    double ndcg20 = eval_sets.empty() ? 0.0 : metrics.ndcg_at_k[0];

    result.epoch_log.push_back(nlohmann::json{{"stage", "recall"},
                                              {"epoch", epoch},
                                              {"lr", lr},
                                              {"train_loss", epoch_loss},
                                              {"recall_at_20", recall20},
                                              {"ndcg_at_20", ndcg20}});
    if (recall20 > result.best_recall20) {
      result.best_recall20 = recall20;
      result.best_epoch = epoch;
      snapshot_pipeline(&result.best);
      result.best.pool_ids = pool_ids;
      result.best.pool_titles = pool_titles;
      result.best.pool_embeddings = pool_embeddings;
    }
  }

  snapshot_pipeline(&result.final);
  result.final.pool_ids = std::move(pool_ids);
  result.final.pool_titles = std::move(pool_titles);
  result.final.pool_embeddings = std::move(pool_embeddings);
  return result;
}

// ---- rank stage ----

struct RankTrainResult {
  RankModel best;
  RankModel final;
  int best_epoch = -1;
  double best_auc = 0.0;
  std::vector<nlohmann::json> epoch_log;
  int users_skipped_no_negatives = 0;
};

// Groups a user's click records into scored candidates using the model.
inline std::vector<UserCandidateGroup> score_click_groups(
    RankModel& model, const Dataset& ds, const EncodedJds& encoded,
    const std::vector<int>& user_record_indices) {
  std::unordered_map<std::string, const PersonJobRecord*> rec_of_user;
  for (int idx : user_record_indices) {
    const auto& r = ds.records[static_cast<std::size_t>(idx)];
    rec_of_user.emplace(r.profile.user_id, &r);
  }
  std::map<std::string, UserCandidateGroup> groups;
  ad::Tape tape;
  Binding bind(tape, model.params);
  for (const auto& c : ds.clicks) {
    auto it = rec_of_user.find(c.user_id);
    if (it == rec_of_user.end()) continue;
    auto row = encoded.row_of.find(c.jd_id);
    if (row == encoded.row_of.end()) continue;
    Vec cls = encoded.cls.row(row->second).transpose();
    double p = click_probability(bind, model.cfg, cls,
                                 it->second->profile.skills.probs);
    auto& g = groups[c.user_id];
    g.user_id = c.user_id;
    g.candidates.push_back({c.jd_id, p, c.label});
  }
  std::vector<UserCandidateGroup> out;
  for (auto& [_, g] : groups) out.push_back(std::move(g));
  return out;
}

inline RankTrainResult train_rank_stage(const Dataset& ds,
                                        const EncodedJds& encoded,
                                        int embedding_dim,
                                        const TrainConfig& train_cfg) {
  train_cfg.validate();
  if (train_cfg.stage != "rank")
    throw DomainError("train_rank_stage: config stage must be 'rank'");

  const int n = static_cast<int>(ds.records.size());
  std::vector<int> train_idx, eval_idx;
  split_records(n, train_cfg.eval_fraction, train_cfg.seed, &train_idx,
                &eval_idx);

  // Click records grouped per training user; 1 positive : rank_negatives
  // sampled from the same user's negative clicks.
  std::unordered_map<std::string, const PersonJobRecord*> rec_of_user;
  for (int idx : train_idx) {
    const auto& r = ds.records[static_cast<std::size_t>(idx)];
    rec_of_user.emplace(r.profile.user_id, &r);
  }
  std::map<std::string, std::pair<std::vector<const ClickRecord*>,
                                  std::vector<const ClickRecord*>>>
      per_user;  // positives, negatives
  for (const auto& c : ds.clicks) {
    if (!rec_of_user.count(c.user_id)) continue;
    auto& slot = per_user[c.user_id];
    (c.label == 1 ? slot.first : slot.second).push_back(&c);
  }

  RankTrainResult result;
  std::vector<CtrExample> examples;
  for (const auto& [user_id, slot] : per_user) {
    const auto& [positives, negatives] = slot;
    if (positives.empty()) continue;
    if (negatives.empty()) {
      ++result.users_skipped_no_negatives;
      continue;
    }
    const Vec& skills = rec_of_user.at(user_id)->profile.skills.probs;
    Rng rng(derive_seed(train_cfg.seed, 0x4A4BULL ^ fnv1a64(user_id)));
    for (const auto* pos : positives) {
      auto row = encoded.row_of.find(pos->jd_id);
      if (row == encoded.row_of.end())
        throw DomainError("click references jd without embedding: " +
                          pos->jd_id);
      examples.push_back(
          {encoded.cls.row(row->second).transpose(), skills, 1});
      for (int k = 0; k < train_cfg.rank_negatives; ++k) {
        const auto* neg = negatives[static_cast<std::size_t>(uniform_int(
            rng, 0, static_cast<int>(negatives.size()) - 1))];
        examples.push_back(
            {encoded.cls.row(encoded.row_of.at(neg->jd_id)).transpose(),
             skills, 0});
      }
    }
  }
  if (examples.empty())
    throw DomainError("rank stage has no usable training clicks");

  RankModel model = RankModel::create(
      RankerConfig{embedding_dim, ds.num_skills},
      derive_seed(train_cfg.seed, 0x7311ULL));
  AdamOptimizer adam(train_cfg.adam_beta1, train_cfg.adam_beta2,
                     train_cfg.adam_eps);

  result.best_auc = -1.0;
  for (int epoch = 0; epoch < train_cfg.max_epochs; ++epoch) {
    const double lr = lr_at_epoch(train_cfg, epoch);
    std::vector<int> order(examples.size());
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<int>(i);
    Rng shuffle_rng(derive_seed(train_cfg.seed,
                                0xA11C0000ULL + static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(train_cfg.batch_size)) {
      std::size_t end = std::min(order.size(),
                                 start + static_cast<std::size_t>(train_cfg.batch_size));
      std::vector<CtrExample> batch;
      for (std::size_t i = start; i < end; ++i)
        batch.push_back(examples[static_cast<std::size_t>(order[i])]);
      ad::Tape tape;
      Binding bind(tape, model.params);
      ad::Var loss = ctr_loss_tape(bind, model.cfg, batch);
      double loss_val = tape.val(loss)(0, 0);
      if (!std::isfinite(loss_val)) {
        if (!train_cfg.diagnostics_dir.empty())
          atomic_write_file(std::filesystem::path(train_cfg.diagnostics_dir) /
                                "nan_batch.json",
                            nlohmann::json{{"stage", "rank"},
                                           {"epoch", epoch},
                                           {"batch_start", start}}
                                    .dump(2) +
                                "\n");
        throw TrainAbort("non-finite rank loss at epoch " +
                         std::to_string(epoch));
      }
      epoch_loss += loss_val;
      tape.backward(loss);
      adam.step(model.params, bind, lr);
    }

    double auc = 0.0, mrr = 0.0;
    if (!eval_idx.empty()) {
      auto groups = score_click_groups(model, ds, encoded, eval_idx);
      if (!groups.empty()) {
        auto metrics = rank_metrics(groups);
        auc = metrics.auc;
        mrr = metrics.mrr;
      }
    }
    result.epoch_log.push_back(nlohmann::json{{"stage", "rank"},
                                              {"epoch", epoch},
                                              {"lr", lr},
                                              {"train_loss", epoch_loss},
                                              {"auc", auc},
                                              {"mrr", mrr}});
    if (auc > result.best_auc) {
      result.best_auc = auc;
      result.best_epoch = epoch;
      result.best = model;
    }
  }
  result.final = std::move(model);
  return result;
}

// ---- checkpoint assembly ----

inline Checkpoint make_recall_checkpoint(const RecallPipeline& pipe,
                                         int epochs_run) {
  Checkpoint ck;
  nlohmann::json neighbors = nlohmann::json::object();
  for (const auto& [id, list] : pipe.neighbors) neighbors[id] = list;
  const auto& cfg = pipe.model.cfg;
  ck.meta = nlohmann::json{
      {"kind", "recall"},
      {"config_fingerprint", pipe.config_fingerprint},
      {"epochs_run", epochs_run},
      {"model",
       {{"num_skills", cfg.num_skills},
        {"d", cfg.d},
        {"layers", cfg.layers},
        {"heads_local", cfg.heads_local},
        {"heads_global", cfg.heads_global},
        {"m_max", cfg.m_max},
        {"neighbors", cfg.neighbors},
        {"d_ff", cfg.d_ff},
        {"dropout", cfg.dropout},
        {"vocab_size", cfg.vocab_size},
        {"title_count", cfg.title_count},
        {"position_name_count", cfg.position_name_count},
        {"max_position_level", cfg.max_position_level},
        {"lambda", cfg.loss.lambda},
        {"mu", cfg.loss.mu},
        {"alpha", cfg.loss.alpha},
        {"relation_exp_positive", cfg.loss.relation_exp_positive}}},
      {"vocab", pipe.vocab_tokens},
      {"neighbors", neighbors},
      {"pool_ids", pipe.pool_ids},
      {"pool_titles", pipe.pool_titles},
      {"train_indices", pipe.train_indices},
      {"eval_indices", pipe.eval_indices}};
  ck.params = pipe.model.params;
  if (pipe.pool_embeddings.size() > 0)
    ck.extras["pool_cls"] = pipe.pool_embeddings;
  return ck;
}

inline RecallPipeline pipeline_from_checkpoint(Checkpoint ck) {
  if (ck.meta.value("kind", "") != "recall")
    throw DomainError("checkpoint is not a recall checkpoint");
  RecallPipeline pipe;
  const auto& m = ck.meta.at("model");
  RecallModelConfig cfg;
  cfg.num_skills = m.at("num_skills").get<int>();
  cfg.d = m.at("d").get<int>();
  cfg.layers = m.at("layers").get<int>();
  cfg.heads_local = m.at("heads_local").get<int>();
  cfg.heads_global = m.at("heads_global").get<int>();
  cfg.m_max = m.at("m_max").get<int>();
  cfg.neighbors = m.at("neighbors").get<int>();
  cfg.d_ff = m.at("d_ff").get<int>();
  cfg.dropout = m.at("dropout").get<double>();
  cfg.vocab_size = m.at("vocab_size").get<int>();
  cfg.title_count = m.at("title_count").get<int>();
  cfg.position_name_count = m.at("position_name_count").get<int>();
  cfg.max_position_level = m.at("max_position_level").get<int>();
  cfg.loss.lambda = m.at("lambda").get<double>();
  cfg.loss.mu = m.at("mu").get<double>();
  cfg.loss.alpha = m.at("alpha").get<double>();
  cfg.loss.relation_exp_positive = m.at("relation_exp_positive").get<bool>();
  pipe.model.cfg = cfg;
  pipe.model.params = std::move(ck.params);
  pipe.vocab_tokens = ck.meta.at("vocab").get<std::vector<std::string>>();
  for (auto it = ck.meta.at("neighbors").begin();
       it != ck.meta.at("neighbors").end(); ++it)
    pipe.neighbors[it.key()] = it.value().get<std::vector<std::string>>();
  pipe.pool_ids = ck.meta.at("pool_ids").get<std::vector<std::string>>();
  pipe.pool_titles = ck.meta.at("pool_titles").get<std::vector<int>>();
  pipe.train_indices = ck.meta.at("train_indices").get<std::vector<int>>();
  pipe.eval_indices = ck.meta.at("eval_indices").get<std::vector<int>>();
  pipe.config_fingerprint = ck.meta.value("config_fingerprint", "");
  if (ck.extras.count("pool_cls")) pipe.pool_embeddings = ck.extras["pool_cls"];
  return pipe;
}

inline Checkpoint make_rank_checkpoint(const RankModel& model,
                                       const std::string& fingerprint,
                                       int epochs_run) {
  Checkpoint ck;
  ck.meta = nlohmann::json{{"kind", "rank"},
                           {"config_fingerprint", fingerprint},
                           {"epochs_run", epochs_run},
                           {"model",
                            {{"d", model.cfg.d},
                             {"num_skills", model.cfg.num_skills}}}};
  ck.params = model.params;
  return ck;
}

inline RankModel rank_model_from_checkpoint(Checkpoint ck) {
  if (ck.meta.value("kind", "") != "rank")
    throw DomainError("checkpoint is not a rank checkpoint");
  RankModel model;
  model.cfg.d = ck.meta.at("model").at("d").get<int>();
  model.cfg.num_skills = ck.meta.at("model").at("num_skills").get<int>();
  model.params = std::move(ck.params);
  return model;
}

// Neighbor assignment for a JD unseen at training time: a provisional
// embedding from seeded random pool neighbors, then the standard same-title
// nearest-neighbor selection against the stored pool.
inline std::vector<std::string> assign_neighbors_for_new_jd(
    RecallPipeline& pipe, const JobDescription& jd, const JdIndex& index) {
  if (pipe.pool_ids.empty())
    throw DomainError("pipeline has no neighbor pool");
  const int L = pipe.model.cfg.neighbors;
  if (L == 0) return {};
  Rng rng(derive_seed(fnv1a64(jd.jd_id), 0xF2E5ULL));
  JDTuple provisional;
  provisional.central = &jd;
  std::unordered_set<std::string> used{jd.jd_id};
  while (static_cast<int>(provisional.neighbors.size()) < L) {
    const std::string& cand = pipe.pool_ids[static_cast<std::size_t>(uniform_int(
        rng, 0, static_cast<int>(pipe.pool_ids.size()) - 1))];
    if (used.count(cand)) continue;
    used.insert(cand);
    provisional.neighbors.push_back(index.get(cand));
  }
  ad::Tape tape;
  Binding bind(tape, pipe.model.params);
  auto enc = encode_tuple_batch(bind, pipe.model.cfg, {provisional},
                                Mode::Eval, nullptr);
  Vec q = tape.val(enc.all_cls).row(0).transpose();

  std::vector<NeighborPoolEntry> pool;
  for (std::size_t p = 0; p < pipe.pool_ids.size(); ++p) {
    if (pipe.pool_ids[p] == jd.jd_id) continue;
    pool.push_back({pipe.pool_ids[p], pipe.pool_titles[p],
                    pipe.pool_embeddings.row(static_cast<Eigen::Index>(p))
                        .transpose()});
  }
  return select_neighbors(q, jd.title_id, pool, L);
}

}  // namespace jobrec
