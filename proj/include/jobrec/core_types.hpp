#pragma once
// Domain types shared by every stage: job descriptions as bags of short-text
// items, skill distributions, user profiles, click records, tuples.

#include "jobrec/common.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace jobrec {

constexpr int kPadTokenId = 0;
constexpr int kUnkTokenId = 1;

struct TokenizedItem {
  std::vector<int> token_ids;  // length >= 1
};

struct JobDescription {
  std::string jd_id;
  int title_id = 0;
  std::vector<TokenizedItem> items;     // <= m_max after truncation
  std::vector<std::string> raw_items;   // originals kept for export
};

struct SkillDistribution {
  Vec probs;  // length C, entries in [0,1], sums to 1 within 1e-6

  int size() const { return static_cast<int>(probs.size()); }
};

struct AuxUserInfo {
  int position_name_id = 0;
  int position_level = 0;  // ordinal >= 0
};

struct UserProfile {
  std::string user_id;
  SkillDistribution skills;
  AuxUserInfo aux_info;
};

struct ClickRecord {
  std::string user_id;
  std::string jd_id;
  int label = 0;  // 0 or 1
};

struct PersonJobRecord {
  JobDescription jd;
  UserProfile profile;
};

struct JDTuple {
  const JobDescription* central = nullptr;
  std::vector<const JobDescription*> neighbors;  // exactly L, distinct ids
};

// ---- skill distribution helpers ----

inline bool is_valid_distribution(const Vec& p, double tol = 1e-6) {
  if (p.size() == 0) return false;
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p(i)) || p(i) < 0.0 || p(i) > 1.0 + tol) return false;
  }
  return std::abs(p.sum() - 1.0) <= tol;
}

// Softmax of raw expert ratings. Max-subtraction makes the result exactly
// invariant to adding a constant to every entry.
inline SkillDistribution normalize_ratings(const Vec& ratings) {
  if (ratings.size() == 0) throw DomainError("normalize_ratings: empty vector");
  for (Eigen::Index i = 0; i < ratings.size(); ++i)
    if (!std::isfinite(ratings(i)))
      throw DomainError("normalize_ratings: non-finite entry at index " +
                        std::to_string(i));
  double m = ratings.maxCoeff();
  Vec e = (ratings.array() - m).exp();
  return SkillDistribution{e / e.sum()};
}

// ---- tokenizer and vocabulary ----

// Lowercase, split on whitespace and punctuation.
inline std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    unsigned char c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

// Word -> id table. Id 0 is reserved for padding, 1 for unknown words;
// real tokens start at 2. Built with min-frequency 1.
class Vocabulary {
 public:
  Vocabulary() : tokens_{"<pad>", "<unk>"} { rebuild_index(); }

  static Vocabulary build(const std::vector<std::string>& texts) {
    Vocabulary v;
    for (const auto& t : texts)
      for (const auto& w : split_words(t)) v.add_token(w);
    return v;
  }

  int add_token(const std::string& w) {
    auto it = index_.find(w);
    if (it != index_.end()) return it->second;
    tokens_.push_back(w);
    int id = static_cast<int>(tokens_.size()) - 1;
    index_.emplace(w, id);
    return id;
  }

  int id_of(const std::string& w) const {
    auto it = index_.find(w);
    return it == index_.end() ? kUnkTokenId : it->second;
  }

  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  static Vocabulary from_tokens(std::vector<std::string> tokens) {
    if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>")
      throw DomainError("vocabulary must start with <pad>, <unk>");
    Vocabulary v;
    v.tokens_ = std::move(tokens);
    v.rebuild_index();
    return v;
  }

  TokenizedItem tokenize_item(const std::string& text) const {
    TokenizedItem item;
    for (const auto& w : split_words(text)) item.token_ids.push_back(id_of(w));
    if (item.token_ids.empty()) item.token_ids.push_back(kUnkTokenId);
    return item;
  }

 private:
  void rebuild_index() {
    index_.clear();
    for (std::size_t i = 0; i < tokens_.size(); ++i)
      index_.emplace(tokens_[i], static_cast<int>(i));
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Tokenizes raw item strings into a JD, truncating to the first m_max items.
inline JobDescription make_job_description(std::string jd_id, int title_id,
                                           std::vector<std::string> raw_items,
                                           const Vocabulary& vocab,
                                           int m_max) {
  if (raw_items.empty())
    throw DomainError("JD " + jd_id + " has no items");
  if (static_cast<int>(raw_items.size()) > m_max)
    raw_items.resize(static_cast<std::size_t>(m_max));
  JobDescription jd;
  jd.jd_id = std::move(jd_id);
  jd.title_id = title_id;
  jd.raw_items = raw_items;
  for (const auto& text : raw_items) jd.items.push_back(vocab.tokenize_item(text));
  return jd;
}

// ---- dataset validation ----

struct Violation {
  std::string record_id;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
};

struct DatasetBounds {
  int vocab_size = 0;
  int title_count = 0;
  int position_name_count = 0;
  int num_skills = 0;
  int m_max = 40;
};

// Lists every invariant violation with the offending record's identifier.
// Clicks are optional at the recall stage; an empty click list passes.
inline ValidationReport validate_dataset(
    const std::vector<PersonJobRecord>& records,
    const std::vector<ClickRecord>& clicks, const DatasetBounds& bounds) {
  ValidationReport report;
  auto flag = [&](const std::string& id, const std::string& msg) {
    report.violations.push_back({id, msg});
  };

  std::unordered_set<std::string> jd_ids, user_ids;
  for (const auto& rec : records) {
    const auto& jd = rec.jd;
    if (!jd_ids.insert(jd.jd_id).second)
      flag(jd.jd_id, "duplicate jd_id");
    if (jd.items.empty())
      flag(jd.jd_id, "JD has no items");
    if (static_cast<int>(jd.items.size()) > bounds.m_max)
      flag(jd.jd_id, "JD exceeds " + std::to_string(bounds.m_max) + " items");
    if (jd.title_id < 0 || jd.title_id >= bounds.title_count)
      flag(jd.jd_id, "title_id out of range");
    for (std::size_t m = 0; m < jd.items.size(); ++m) {
      if (jd.items[m].token_ids.empty())
        flag(jd.jd_id, "item " + std::to_string(m) + " has no tokens");
      for (int tid : jd.items[m].token_ids)
        if (tid < 0 || tid >= bounds.vocab_size) {
          flag(jd.jd_id, "item " + std::to_string(m) + " token id " +
                             std::to_string(tid) + " outside vocabulary");
          break;
        }
    }

    const auto& prof = rec.profile;
    if (!user_ids.insert(prof.user_id).second)
      flag(prof.user_id, "duplicate user_id");
    if (bounds.num_skills > 0 &&
        prof.skills.size() != bounds.num_skills)
      flag(prof.user_id, "skill vector length != C");
    if (!is_valid_distribution(prof.skills.probs))
      flag(prof.user_id, "skill distribution invalid (entries in [0,1], sum 1)");
    if (prof.aux_info.position_name_id < 0 ||
        prof.aux_info.position_name_id >= bounds.position_name_count)
      flag(prof.user_id, "position_name_id out of range");
    if (prof.aux_info.position_level < 0)
      flag(prof.user_id, "position_level negative");
  }

  for (std::size_t i = 0; i < clicks.size(); ++i) {
    const auto& c = clicks[i];
    std::string id = c.user_id + "/" + c.jd_id;
    if (c.label != 0 && c.label != 1) flag(id, "click label not in {0,1}");
    if (!user_ids.count(c.user_id)) flag(id, "click references unknown user_id");
    if (!jd_ids.count(c.jd_id)) flag(id, "click references unknown jd_id");
  }
  return report;
}

inline void check_tuple(const JDTuple& tuple) {
  if (!tuple.central) throw ContractViolation("tuple has no central JD");
  std::unordered_set<std::string> ids{tuple.central->jd_id};
  for (const auto* n : tuple.neighbors) {
    if (!n) throw ContractViolation("tuple has null neighbor");
    if (!ids.insert(n->jd_id).second)
      throw ContractViolation("tuple neighbor ids not distinct: " + n->jd_id);
  }
}

}  // namespace jobrec
