#pragma once
// Flat key=value run configuration with [sections], pre-filled defaults,
// strict unknown-key rejection and an order-independent fingerprint hash
// that is stamped into every produced artifact.

#include "jobrec/common.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace jobrec {

class RunConfig {
 public:
  static RunConfig defaults() {
    RunConfig c;
    auto def = [&](const char* k, const char* v) { c.values_[k] = v; };
    // model
    def("model.d", "512");
    def("model.layers", "4");
    def("model.heads_local", "6");
    def("model.heads_global", "2");
    def("model.m_max", "40");
    def("model.neighbors", "2");
    def("model.d_ff", "0");  // 0 -> 4 * d
    // loss
    def("loss.lambda", "0.2");
    def("loss.mu", "0.4");
    def("loss.alpha", "0.2");
    def("loss.relation_exp_positive", "true");
    // train
    def("train.batch_size", "32");
    def("train.lr", "0.001");
    def("train.lr_anneal_factor", "0.8");
    def("train.lr_anneal_every", "3");
    def("train.max_epochs", "30");
    def("train.dropout", "0.1");
    def("train.seed", "1");
    def("train.eval_fraction", "0.2");
    def("train.recall_negatives", "200");
    def("train.rank_negatives", "3");
    // synth
    def("synth.num_skills", "20");
    def("synth.num_titles", "5");
    def("synth.num_jds", "2000");
    def("synth.num_users", "2000");
    def("synth.items_per_jd_min", "6");
    def("synth.items_per_jd_max", "10");
    def("synth.phrases_per_skill", "3");
    def("synth.neighbor_noise", "0.1");
    def("synth.click_temperature", "8.0");
    def("synth.clicks_per_user", "8");
    def("synth.seed", "7");
    // eval
    def("eval.k_values", "20,40,60,80,100");
    return c;
  }

  // key=value lines grouped under [section] headers; '#' starts a comment.
  static RunConfig parse(const std::string& text) {
    RunConfig c = defaults();
    std::istringstream in(text);
    std::string line;
    std::string section;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ParseError("unterminated section", line_no);
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ParseError("expected key = value", line_no);
      std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!section.empty()) key = section + "." + key;
      c.set(key, value);
    }
    return c;
  }

  static RunConfig load(const std::filesystem::path& path) {
    return parse(read_file(path));
  }

  void set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw DomainError("unknown config key: " + key);
    it->second = value;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw DomainError("unknown config key: " + key);
    return it->second;
  }

  int get_int(const std::string& key) const {
    try {
      std::size_t pos = 0;
      int v = std::stoi(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw DomainError("config key " + key + " is not an integer: " + get(key));
    }
  }

  std::uint64_t get_u64(const std::string& key) const {
    try {
      std::size_t pos = 0;
      unsigned long long v = std::stoull(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw DomainError("config key " + key + " is not an integer: " + get(key));
    }
  }

  double get_double(const std::string& key) const {
    try {
      std::size_t pos = 0;
      double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument(key);
      return v;
    } catch (const std::exception&) {
      throw DomainError("config key " + key + " is not a number: " + get(key));
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw DomainError("config key " + key + " is not a boolean: " + v);
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::istringstream ss(get(key));
    std::string part;
    while (std::getline(ss, part, ',')) {
      part = trim(part);
      if (part.empty()) continue;
      try {
        out.push_back(std::stoi(part));
      } catch (const std::exception&) {
        throw DomainError("config key " + key + " has a bad entry: " + part);
      }
    }
    if (out.empty()) throw DomainError("config key " + key + " is empty");
    return out;
  }

  // Hash over sorted key=value pairs: reordering keys or sections in the
  // source file cannot change it.
  std::string fingerprint() const {
    std::string canon;
    for (const auto& [k, v] : values_) canon += k + "=" + v + "\n";
    return hex64(fnv1a64(canon));
  }

  // Serialized with sections grouped; parse(to_string()) round-trips.
  std::string to_string() const {
    std::map<std::string, std::vector<std::pair<std::string, std::string>>>
        sections;
    for (const auto& [k, v] : values_) {
      auto dot = k.find('.');
      sections[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
    }
    std::string out;
    for (const auto& [sec, kvs] : sections) {
      out += "[" + sec + "]\n";
      for (const auto& [k, v] : kvs) out += k + " = " + v + "\n";
      out += "\n";
    }
    return out;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace jobrec
