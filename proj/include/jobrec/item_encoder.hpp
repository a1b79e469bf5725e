#pragma once
// Shared convolutional item-level encoder: embeds an item's tokens, runs two
// one-dimensional convolutions (window sizes 2 and 3) with batch norm, ReLU
// and max-pooling over positions, then projects the concatenated pooled
// vectors back to width d.

#include "jobrec/core_types.hpp"
#include "jobrec/params.hpp"

#include <string>
#include <vector>

namespace jobrec {

enum class Mode { Train, Eval };

inline const std::vector<int>& conv_windows() {
  static const std::vector<int> w{2, 3};
  return w;
}

struct ItemEncoderConfig {
  int vocab_size = 0;
  int d = 512;
  double bn_eps = 1e-5;
  double bn_momentum = 0.9;  // running = m * running + (1-m) * batch
};

inline void add_item_encoder_params(ParamStore& store,
                                    const ItemEncoderConfig& cfg) {
  store.add("item.emb", cfg.vocab_size, cfg.d, ParamKind::Weight);
  for (int w : conv_windows()) {
    std::string p = "item.conv" + std::to_string(w);
    store.add(p + ".w", w * cfg.d, cfg.d, ParamKind::Weight);
    store.add(p + ".b", 1, cfg.d, ParamKind::Bias);
    std::string bn = "item.bn" + std::to_string(w);
    store.add(bn + ".gamma", 1, cfg.d, ParamKind::Scale);
    store.add(bn + ".beta", 1, cfg.d, ParamKind::Shift);
    store.add(bn + ".run_mean", 1, cfg.d, ParamKind::RunMean);
    store.add(bn + ".run_var", 1, cfg.d, ParamKind::RunVar);
  }
  store.add("item.proj.w", 2 * cfg.d, cfg.d, ParamKind::Weight);
  store.add("item.proj.b", 1, cfg.d, ParamKind::Bias);
}

struct ItemBatchEncoding {
  ad::Var vectors;  // n_items x d, one row per input item
  ad::Var pooled;   // n_items x 2d pooled pre-projection activations
};

// Encodes a batch of items jointly. Batch norm statistics are taken over all
// convolution output positions of all items in the batch (train mode), or the
// stored running statistics (eval mode); running stats update only in train
// mode. Items shorter than the widest window are left-padded with the pad id.
inline ItemBatchEncoding encode_items(
    Binding& bind, const ItemEncoderConfig& cfg,
    const std::vector<const TokenizedItem*>& items, Mode mode) {
  auto& tape = bind.tape();
  if (items.empty()) throw ContractViolation("encode_items: empty batch");

  const int max_window = conv_windows().back();
  std::vector<int> all_ids;
  std::vector<std::pair<int, int>> segments;  // (begin,len) rows per item
  for (const auto* item : items) {
    if (!item || item->token_ids.empty())
      throw ContractViolation("encode_items: item with no tokens");
    int len = static_cast<int>(item->token_ids.size());
    int padded = std::max(len, max_window);
    segments.emplace_back(static_cast<int>(all_ids.size()), padded);
    for (int k = 0; k < padded - len; ++k) all_ids.push_back(kPadTokenId);
    for (int id : item->token_ids) {
      if (id < 0 || id >= cfg.vocab_size)
        throw DomainError("token id " + std::to_string(id) +
                          " outside vocabulary of size " +
                          std::to_string(cfg.vocab_size));
      all_ids.push_back(id);
    }
  }

  ad::Var x = tape.gather_rows(bind["item.emb"], all_ids);

  std::vector<ad::Var> pooled_branches;
  for (int w : conv_windows()) {
    std::string p = "item.conv" + std::to_string(w);
    std::string bn = "item.bn" + std::to_string(w);
    ad::Var windows = tape.im2row_causal(x, w, segments);
    ad::Var conv = tape.add_row_broadcast(
        tape.matmul(windows, bind[p + ".w"]), bind[p + ".b"]);
    ad::Var normed;
    if (mode == Mode::Train) {
      RowVec batch_mean, batch_var;
      normed = tape.batch_norm_train(conv, bind[bn + ".gamma"],
                                     bind[bn + ".beta"], cfg.bn_eps,
                                     &batch_mean, &batch_var);
      auto& store = bind.store();
      Mat& rm = store.value(bn + ".run_mean");
      Mat& rv = store.value(bn + ".run_var");
      rm = cfg.bn_momentum * rm + (1.0 - cfg.bn_momentum) * batch_mean;
      rv = cfg.bn_momentum * rv + (1.0 - cfg.bn_momentum) * batch_var;
    } else {
      normed = tape.batch_norm_eval(
          conv, bind[bn + ".gamma"], bind[bn + ".beta"],
          bind.store().value(bn + ".run_mean").row(0),
          bind.store().value(bn + ".run_var").row(0), cfg.bn_eps);
    }
    pooled_branches.push_back(
        tape.segment_max_rows(tape.relu(normed), segments));
  }

  ad::Var pooled = tape.concat_cols(pooled_branches);
  ad::Var out = tape.add_row_broadcast(tape.matmul(pooled, bind["item.proj.w"]),
                                       bind["item.proj.b"]);
  return {out, pooled};
}

// Single-item convenience wrapper (a train-mode call normalizes with the
// statistics of this one item).
inline Vec encode_item(Binding& bind, const ItemEncoderConfig& cfg,
                       const TokenizedItem& item, Mode mode) {
  auto enc = encode_items(bind, cfg, {&item}, mode);
  return bind.tape().val(enc.vectors).row(0).transpose();
}

struct JDItemMatrix {
  ad::Var matrix;              // m_max x d; rows past len(items) stay zero
  std::vector<bool> item_mask; // true for real item rows
};

// Places a JD's encoded item vectors into a fixed m_max x d matrix.
inline JDItemMatrix place_jd_items(ad::Tape& tape, ad::Var item_vectors,
                                   int first_row, int n_items, int m_max,
                                   int d) {
  std::vector<std::pair<ad::Var, int>> sources;
  std::vector<bool> mask(static_cast<std::size_t>(m_max), false);
  for (int m = 0; m < m_max; ++m) {
    if (m < n_items) {
      sources.emplace_back(item_vectors, first_row + m);
      mask[static_cast<std::size_t>(m)] = true;
    } else {
      sources.emplace_back(ad::Var{}, 0);
    }
  }
  return {tape.assemble_rows(m_max, d, std::move(sources)), std::move(mask)};
}

// Full JD encoding as an m_max x d matrix plus item mask.
inline JDItemMatrix encode_all_items(Binding& bind,
                                     const ItemEncoderConfig& cfg,
                                     const JobDescription& jd, int m_max,
                                     Mode mode) {
  std::vector<const TokenizedItem*> items;
  for (const auto& it : jd.items) items.push_back(&it);
  auto enc = encode_items(bind, cfg, items, mode);
  return place_jd_items(bind.tape(), enc.vectors, 0,
                        static_cast<int>(items.size()), m_max, cfg.d);
}

}  // namespace jobrec
