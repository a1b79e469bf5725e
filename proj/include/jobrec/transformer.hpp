#pragma once
// Transformer over JD tuples with split attention heads: local heads attend
// within one JD's tokens, global heads attend across every JD in the tuple.
// Per JD the sequence is [CLS], item_1..item_M, [SEP]; the L+1 JDs are
// concatenated central-first. No positional encodings: items are an
// unordered bag.

#include "jobrec/item_encoder.hpp"

#include <memory>
#include <string>
#include <vector>

namespace jobrec {

struct TransformerConfig {
  int d = 512;
  int layers = 4;
  int heads_local = 6;   // N_l
  int heads_global = 2;  // N_g
  int m_max = 40;
  int d_ff = 0;          // 0 -> 4 * d
  double dropout = 0.1;
  double ln_eps = 1e-5;

  int heads() const { return heads_local + heads_global; }
  int head_dim() const {
    if (heads() <= 0 || d % heads() != 0)
      throw DomainError("model width must divide evenly across heads");
    return d / heads();
  }
  int ffn_dim() const { return d_ff > 0 ? d_ff : 4 * d; }
};

inline void add_transformer_params(ParamStore& store,
                                   const TransformerConfig& cfg) {
  const int dn = cfg.head_dim();
  store.add("tf.cls", 1, cfg.d, ParamKind::Weight);
  store.add("tf.sep", 1, cfg.d, ParamKind::Weight);
  for (int l = 0; l < cfg.layers; ++l) {
    std::string lp = "tf.l" + std::to_string(l);
    for (int h = 0; h < cfg.heads(); ++h) {
      std::string hp = lp + ".h" + std::to_string(h);
      store.add(hp + ".wq", cfg.d, dn, ParamKind::Weight);
      store.add(hp + ".wk", cfg.d, dn, ParamKind::Weight);
      store.add(hp + ".wv", cfg.d, dn, ParamKind::Weight);
    }
    store.add(lp + ".merge.w", cfg.d, cfg.d, ParamKind::Weight);
    store.add(lp + ".ffn.w1", cfg.d, cfg.ffn_dim(), ParamKind::Weight);
    store.add(lp + ".ffn.b1", 1, cfg.ffn_dim(), ParamKind::Bias);
    store.add(lp + ".ffn.w2", cfg.ffn_dim(), cfg.d, ParamKind::Weight);
    store.add(lp + ".ffn.b2", 1, cfg.d, ParamKind::Bias);
    store.add(lp + ".ln1.gamma", 1, cfg.d, ParamKind::Scale);
    store.add(lp + ".ln1.beta", 1, cfg.d, ParamKind::Shift);
    store.add(lp + ".ln2.gamma", 1, cfg.d, ParamKind::Scale);
    store.add(lp + ".ln2.beta", 1, cfg.d, ParamKind::Shift);
  }
}

// Position bookkeeping for a tuple sequence of (L+1) JDs.
struct TupleLayout {
  int n_jds = 0;
  int m_max = 0;

  int block() const { return m_max + 2; }
  int length() const { return n_jds * block(); }
  int cls_pos(int jd) const { return jd * block(); }
  int item_pos(int jd, int m) const { return jd * block() + 1 + m; }
  int sep_pos(int jd) const { return jd * block() + m_max + 1; }
  int jd_of(int pos) const { return pos / block(); }
};

struct TupleMasks {
  std::shared_ptr<ad::BoolArr> local;   // same JD, non-padded keys
  std::shared_ptr<ad::BoolArr> global;  // all non-padded keys
};

// item_counts: real item count per JD (central first). [CLS] and [SEP] are
// never masked; padded item rows are invisible as keys to every query.
inline TupleMasks build_tuple_masks(const TupleLayout& layout,
                                    const std::vector<int>& item_counts) {
  if (static_cast<int>(item_counts.size()) != layout.n_jds)
    throw ContractViolation("mask: item_counts size != tuple size");
  const int T = layout.length();
  std::vector<bool> padded(static_cast<std::size_t>(T), false);
  for (int j = 0; j < layout.n_jds; ++j)
    for (int m = item_counts[static_cast<std::size_t>(j)]; m < layout.m_max; ++m)
      padded[static_cast<std::size_t>(layout.item_pos(j, m))] = true;

  auto local = std::make_shared<ad::BoolArr>(T, T);
  auto global = std::make_shared<ad::BoolArr>(T, T);
  for (int q = 0; q < T; ++q) {
    for (int k = 0; k < T; ++k) {
      bool key_ok = !padded[static_cast<std::size_t>(k)];
      (*global)(q, k) = key_ok;
      (*local)(q, k) = key_ok && layout.jd_of(q) == layout.jd_of(k);
    }
  }
  return {std::move(local), std::move(global)};
}

struct TupleSequence {
  ad::Var rows;  // T x d
  TupleLayout layout;
  TupleMasks masks;
  std::vector<int> item_counts;
};

// Concatenates the tuple's JD blocks into one sequence with per-JD [CLS] and
// [SEP] token embeddings and the two attention masks.
inline TupleSequence build_tuple_sequence(
    Binding& bind, const TransformerConfig& cfg,
    const std::vector<JDItemMatrix>& jd_items) {
  auto& tape = bind.tape();
  TupleLayout layout{static_cast<int>(jd_items.size()), cfg.m_max};
  std::vector<std::pair<ad::Var, int>> sources;
  std::vector<int> item_counts;
  for (const auto& jd : jd_items) {
    int n_items = 0;
    sources.emplace_back(bind["tf.cls"], 0);
    for (int m = 0; m < cfg.m_max; ++m) {
      if (jd.item_mask[static_cast<std::size_t>(m)]) {
        sources.emplace_back(jd.matrix, m);
        ++n_items;
      } else {
        sources.emplace_back(ad::Var{}, 0);
      }
    }
    sources.emplace_back(bind["tf.sep"], 0);
    item_counts.push_back(n_items);
  }
  ad::Var rows = tape.assemble_rows(layout.length(), cfg.d, std::move(sources));
  TupleMasks masks = build_tuple_masks(layout, item_counts);
  return {rows, layout, std::move(masks), std::move(item_counts)};
}

// Attention weights captured for export: weights[layer][head] is the T x T
// row-softmax matrix of that head.
struct AttentionCapture {
  std::vector<std::vector<Mat>> weights;
};

// One scaled-dot-product head. Masked key positions are excluded before the
// softmax; every row over unmasked keys sums to 1.
inline ad::Var attention_head(ad::Tape& tape, ad::Var q, ad::Var k, ad::Var v,
                              std::shared_ptr<const ad::BoolArr> mask,
                              double scale, Mat* save_weights = nullptr) {
  ad::Var logits = tape.scale(tape.matmul(q, tape.transpose(k)), scale);
  ad::Var attn = tape.row_softmax_masked(logits, std::move(mask), save_weights);
  return tape.matmul(attn, v);
}

inline ad::Var encoder_layer(Binding& bind, const TransformerConfig& cfg,
                             int layer, ad::Var x, const TupleMasks& masks,
                             Mode mode, Rng* dropout_rng,
                             AttentionCapture* capture = nullptr) {
  auto& tape = bind.tape();
  const int dn = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dn));
  std::string lp = "tf.l" + std::to_string(layer);

  std::vector<ad::Var> heads;
  std::vector<Mat>* captured = nullptr;
  if (capture) {
    capture->weights.emplace_back();
    captured = &capture->weights.back();
  }
  for (int h = 0; h < cfg.heads(); ++h) {
    std::string hp = lp + ".h" + std::to_string(h);
    ad::Var q = tape.matmul(x, bind[hp + ".wq"]);
    ad::Var k = tape.matmul(x, bind[hp + ".wk"]);
    ad::Var v = tape.matmul(x, bind[hp + ".wv"]);
    auto mask = h < cfg.heads_local ? masks.local : masks.global;
    Mat* save = nullptr;
    if (captured) {
      captured->emplace_back();
      save = &captured->back();
    }
    heads.push_back(attention_head(tape, q, k, v, mask, scale, save));
  }
  // Per token, local head outputs and that token's global head outputs are
  // concatenated, then merged back to width d.
  ad::Var merged = tape.matmul(tape.concat_cols(heads), bind[lp + ".merge.w"]);
  if (mode == Mode::Train && cfg.dropout > 0.0) {
    if (!dropout_rng) throw ContractViolation("train mode needs dropout rng");
    merged = tape.dropout(merged, cfg.dropout, *dropout_rng);
  }
  ad::Var x1 = tape.layer_norm_rows(tape.add(x, merged), bind[lp + ".ln1.gamma"],
                                    bind[lp + ".ln1.beta"], cfg.ln_eps);

  ad::Var hidden = tape.relu(tape.add_row_broadcast(
      tape.matmul(x1, bind[lp + ".ffn.w1"]), bind[lp + ".ffn.b1"]));
  ad::Var ffn = tape.add_row_broadcast(tape.matmul(hidden, bind[lp + ".ffn.w2"]),
                                       bind[lp + ".ffn.b2"]);
  if (mode == Mode::Train && cfg.dropout > 0.0)
    ffn = tape.dropout(ffn, cfg.dropout, *dropout_rng);
  return tape.layer_norm_rows(tape.add(x1, ffn), bind[lp + ".ln2.gamma"],
                              bind[lp + ".ln2.beta"], cfg.ln_eps);
}

struct TupleEncoding {
  ad::Var cls;        // (L+1) x d, row i = JD i's [CLS] representation
  ad::Var sequence;   // final T x d sequence
  TupleLayout layout;
  std::vector<int> item_counts;
};

// Runs the full stack over an assembled tuple sequence and extracts each
// JD's [CLS] row; item rows stay addressable through `sequence` + layout.
inline TupleEncoding encode_tuple_sequence(Binding& bind,
                                           const TransformerConfig& cfg,
                                           TupleSequence seq, Mode mode,
                                           Rng* dropout_rng,
                                           AttentionCapture* capture = nullptr) {
  ad::Var x = seq.rows;
  for (int l = 0; l < cfg.layers; ++l)
    x = encoder_layer(bind, cfg, l, x, seq.masks, mode, dropout_rng, capture);
  std::vector<int> cls_rows;
  for (int j = 0; j < seq.layout.n_jds; ++j)
    cls_rows.push_back(seq.layout.cls_pos(j));
  ad::Var cls = bind.tape().gather_rows(x, cls_rows);
  return {cls, x, seq.layout, std::move(seq.item_counts)};
}

// Per-JD export of the [CLS] row's attention over that JD's item positions.
struct AttentionExportRow {
  int jd_index = 0;  // 0 = central
  int layer = 0;
  int head = 0;
  bool global_head = false;
  std::vector<double> item_weights;  // over the JD's real items
};

inline std::vector<AttentionExportRow> extract_cls_item_attention(
    const AttentionCapture& capture, const TransformerConfig& cfg,
    const TupleLayout& layout, const std::vector<int>& item_counts) {
  std::vector<AttentionExportRow> rows;
  for (std::size_t l = 0; l < capture.weights.size(); ++l) {
    for (std::size_t h = 0; h < capture.weights[l].size(); ++h) {
      const Mat& w = capture.weights[l][h];
      for (int j = 0; j < layout.n_jds; ++j) {
        AttentionExportRow row;
        row.jd_index = j;
        row.layer = static_cast<int>(l);
        row.head = static_cast<int>(h);
        row.global_head = static_cast<int>(h) >= cfg.heads_local;
        int cls = layout.cls_pos(j);
        for (int m = 0; m < item_counts[static_cast<std::size_t>(j)]; ++m)
          row.item_weights.push_back(w(cls, layout.item_pos(j, m)));
        rows.push_back(std::move(row));
      }
    }
  }
  return rows;
}

}  // namespace jobrec
