#pragma once
// Bundles the recall-stage modules (item encoder, tuple transformer, skill
// classifier, aux-info encoder) and the rank-stage modules behind single
// parameter stores, with batched forward passes and the combined recall loss.

#include "jobrec/rank.hpp"
#include "jobrec/recall.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace jobrec {

struct RecallModelConfig {
  int num_skills = 0;
  int d = 512;
  int layers = 4;
  int heads_local = 6;
  int heads_global = 2;
  int m_max = 40;
  int neighbors = 2;  // L
  int d_ff = 0;       // 0 -> 4d
  double dropout = 0.1;
  int vocab_size = 0;
  int title_count = 0;
  int position_name_count = 0;
  int max_position_level = 1;
  RecallLossConfig loss;

  ItemEncoderConfig item_config() const {
    return ItemEncoderConfig{vocab_size, d, 1e-5, 0.9};
  }
  TransformerConfig transformer_config() const {
    TransformerConfig t;
    t.d = d;
    t.layers = layers;
    t.heads_local = heads_local;
    t.heads_global = heads_global;
    t.m_max = m_max;
    t.d_ff = d_ff;
    t.dropout = dropout;
    return t;
  }
  RecallHeadConfig head_config() const {
    return RecallHeadConfig{d, num_skills, position_name_count,
                            max_position_level};
  }

  void validate() const {
    if (num_skills < 1) throw DomainError("config: num_skills must be >= 1");
    if (vocab_size < 2) throw DomainError("config: vocabulary too small");
    if (title_count < 1) throw DomainError("config: title_count must be >= 1");
    if (m_max < 1) throw DomainError("config: m_max must be >= 1");
    if (neighbors < 0) throw DomainError("config: neighbors must be >= 0");
    if (layers < 1) throw DomainError("config: layers must be >= 1");
    transformer_config().head_dim();  // divisibility
    loss.validate();
  }
};

struct RecallModel {
  RecallModelConfig cfg;
  ParamStore params;

  static RecallModel create(const RecallModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RecallModel m;
    m.cfg = cfg;
    add_item_encoder_params(m.params, cfg.item_config());
    add_transformer_params(m.params, cfg.transformer_config());
    add_recall_head_params(m.params, cfg.head_config());
    m.params.init(seed);
    return m;
  }
};

// Encoded batch of tuples; member rows are laid out tuple-major, central
// member first within each tuple: row(b, i) = b * (L_b+1) + i.
struct TupleBatchEncoding {
  ad::Var all_cls;    // (sum of tuple sizes) x d
  ad::Var all_preds;  // same rows x C, valid skill distributions
  std::vector<int> tuple_offsets;  // first row of each tuple
  std::vector<int> tuple_sizes;    // L+1 per tuple
  std::vector<AttentionCapture> captures;  // one per tuple when exporting

  int central_row(int b) const { return tuple_offsets[static_cast<std::size_t>(b)]; }
};

// Encodes every member JD of every tuple. All items in the batch share one
// batch-norm statistic in train mode.
inline TupleBatchEncoding encode_tuple_batch(Binding& bind,
                                             const RecallModelConfig& cfg,
                                             const std::vector<JDTuple>& tuples,
                                             Mode mode, Rng* dropout_rng,
                                             bool capture_attention = false) {
  auto& tape = bind.tape();
  if (tuples.empty()) throw ContractViolation("encode_tuple_batch: empty");

  std::vector<const TokenizedItem*> all_items;
  struct MemberRef {
    const JobDescription* jd;
    int first_item_row;
  };
  std::vector<std::vector<MemberRef>> members(tuples.size());
  for (std::size_t b = 0; b < tuples.size(); ++b) {
    check_tuple(tuples[b]);
    std::vector<const JobDescription*> jds{tuples[b].central};
    for (const auto* n : tuples[b].neighbors) jds.push_back(n);
    for (const auto* jd : jds) {
      if (static_cast<int>(jd->items.size()) > cfg.m_max)
        throw DomainError("JD " + jd->jd_id + " exceeds m_max items");
      members[b].push_back({jd, static_cast<int>(all_items.size())});
      for (const auto& it : jd->items) all_items.push_back(&it);
    }
  }

  auto item_enc = encode_items(bind, cfg.item_config(), all_items, mode);

  TupleBatchEncoding out;
  std::vector<ad::Var> cls_parts;
  int row = 0;
  for (std::size_t b = 0; b < tuples.size(); ++b) {
    std::vector<JDItemMatrix> jd_items;
    for (const auto& m : members[b])
      jd_items.push_back(place_jd_items(tape, item_enc.vectors,
                                        m.first_item_row,
                                        static_cast<int>(m.jd->items.size()),
                                        cfg.m_max, cfg.d));
    auto seq = build_tuple_sequence(bind, cfg.transformer_config(), jd_items);
    AttentionCapture* cap = nullptr;
    if (capture_attention) {
      out.captures.emplace_back();
      cap = &out.captures.back();
    }
    auto enc = encode_tuple_sequence(bind, cfg.transformer_config(),
                                     std::move(seq), mode, dropout_rng, cap);
    out.tuple_offsets.push_back(row);
    out.tuple_sizes.push_back(static_cast<int>(members[b].size()));
    row += static_cast<int>(members[b].size());
    cls_parts.push_back(enc.cls);
  }
  out.all_cls = tape.concat_rows(cls_parts);
  out.all_preds = classify_skills(bind, out.all_cls);
  return out;
}

// One training element: a tuple plus the central JD's supervision.
struct RecallBatchItem {
  JDTuple tuple;
  const PersonJobRecord* central = nullptr;
};

struct RecallLossBreakdown {
  ad::Var total;
  double kl = 0.0;
  double correlation = 0.0;
  double consistency = 0.0;
};

// L = sum_j l(j) + lambda * M(batch) + mu * sum_j R(j). The KL term uses the
// central JD's prediction; M runs over the batch of central (aux, cls) pairs;
// R runs per tuple over all members. Requires >= 2 tuples.
inline RecallLossBreakdown total_recall_loss_tape(
    Binding& bind, const RecallModelConfig& cfg,
    const std::vector<RecallBatchItem>& batch, Mode mode, Rng* dropout_rng) {
  auto& tape = bind.tape();
  if (batch.size() < 2)
    throw ContractViolation(
        "recall batches need >= 2 tuples (in-batch negatives)");

  std::vector<JDTuple> tuples;
  for (const auto& item : batch) {
    if (!item.central) throw ContractViolation("batch item without record");
    tuples.push_back(item.tuple);
  }
  auto enc = encode_tuple_batch(bind, cfg, tuples, mode, dropout_rng);

  std::vector<Vec> targets;
  std::vector<int> central_rows;
  std::vector<AuxUserInfo> aux_infos;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    targets.push_back(batch[b].central->profile.skills.probs);
    central_rows.push_back(enc.central_row(static_cast<int>(b)));
    aux_infos.push_back(batch[b].central->profile.aux_info);
  }

  RecallLossBreakdown out;
  ad::Var kl = kl_rows_loss(tape, targets, enc.all_preds, central_rows);
  out.kl = tape.val(kl)(0, 0);
  ad::Var total = kl;

  if (cfg.loss.lambda > 0.0) {
    ad::Var aux = encode_aux_info(bind, cfg.head_config(), aux_infos);
    ad::Var central_cls = tape.gather_rows(enc.all_cls, central_rows);
    ad::Var m = skill_correlation_loss_tape(tape, aux, central_cls,
                                            cfg.loss.alpha);
    out.correlation = tape.val(m)(0, 0);
    total = tape.add(total, tape.scale(m, cfg.loss.lambda));
  }

  if (cfg.loss.mu > 0.0) {
    ad::Var consistency = tape.leaf(Mat::Zero(1, 1), false);
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<int> rows;
      for (int i = 0; i < enc.tuple_sizes[b]; ++i)
        rows.push_back(enc.tuple_offsets[b] + i);
      ad::Var preds = tape.gather_rows(enc.all_preds, rows);
      ad::Var reps = tape.gather_rows(enc.all_cls, rows);
      consistency = tape.add(
          consistency,
          relation_consistency_loss_tape(tape, preds, reps,
                                         cfg.loss.relation_exp_positive));
    }
    out.consistency = tape.val(consistency)(0, 0);
    total = tape.add(total, tape.scale(consistency, cfg.loss.mu));
  }

  out.total = total;
  return out;
}

// ---- rank model ----

struct RankModel {
  RankerConfig cfg;
  ParamStore params;

  static RankModel create(const RankerConfig& cfg, std::uint64_t seed) {
    if (cfg.num_skills < 1 || cfg.d < 1)
      throw DomainError("ranker config: d and num_skills must be >= 1");
    RankModel m;
    m.cfg = cfg;
    add_ranker_params(m.params, cfg);
    m.params.init(seed);
    return m;
  }
};

}  // namespace jobrec
