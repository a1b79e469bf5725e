#pragma once
// Line-delimited dataset files: jds.jsonl, users.jsonl, clicks.jsonl plus a
// plain-text vocabulary file ("token id" per line). One JSON object per line;
// field names match the domain types one-to-one.

#include "jobrec/core_types.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace jobrec {

using json = nlohmann::json;

struct Dataset {
  std::vector<PersonJobRecord> records;
  std::vector<ClickRecord> clicks;
  Vocabulary vocab;
  int num_skills = 0;
  int title_count = 0;
  int position_name_count = 0;
};

namespace detail {

inline json jd_to_json(const JobDescription& jd) {
  json items = json::array();
  for (const auto& it : jd.items) items.push_back(it.token_ids);
  return json{{"jd_id", jd.jd_id},
              {"title_id", jd.title_id},
              {"items", items},
              {"raw_items", jd.raw_items}};
}

inline JobDescription jd_from_json(const json& j) {
  JobDescription jd;
  jd.jd_id = j.at("jd_id").get<std::string>();
  jd.title_id = j.at("title_id").get<int>();
  for (const auto& arr : j.at("items"))
    jd.items.push_back(TokenizedItem{arr.get<std::vector<int>>()});
  jd.raw_items = j.at("raw_items").get<std::vector<std::string>>();
  return jd;
}

inline json user_to_json(const UserProfile& u) {
  std::vector<double> probs(u.skills.probs.data(),
                            u.skills.probs.data() + u.skills.probs.size());
  return json{{"user_id", u.user_id},
              {"skills", probs},
              {"aux_info", {{"position_name_id", u.aux_info.position_name_id},
                            {"position_level", u.aux_info.position_level}}}};
}

inline UserProfile user_from_json(const json& j) {
  UserProfile u;
  u.user_id = j.at("user_id").get<std::string>();
  auto probs = j.at("skills").get<std::vector<double>>();
  u.skills.probs = Eigen::Map<const Vec>(probs.data(),
                                         static_cast<Eigen::Index>(probs.size()));
  const auto& aux = j.at("aux_info");
  u.aux_info.position_name_id = aux.at("position_name_id").get<int>();
  u.aux_info.position_level = aux.at("position_level").get<int>();
  return u;
}

inline json parse_line(const std::string& line, long line_no) {
  json j = json::parse(line, nullptr, false);
  if (j.is_discarded()) throw ParseError("malformed JSON", line_no);
  return j;
}

template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open: " + path.string());
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    fn(line, line_no);
  }
}

}  // namespace detail

inline void write_jds_file(const std::filesystem::path& path,
                           const std::vector<PersonJobRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records) out << detail::jd_to_json(r.jd).dump() << "\n";
  atomic_write_file(path, out.str());
}

inline void write_users_file(const std::filesystem::path& path,
                             const std::vector<PersonJobRecord>& records) {
  std::ostringstream out;
  for (const auto& r : records)
    out << detail::user_to_json(r.profile).dump() << "\n";
  atomic_write_file(path, out.str());
}

inline void write_clicks_file(const std::filesystem::path& path,
                              const std::vector<ClickRecord>& clicks) {
  std::ostringstream out;
  for (const auto& c : clicks)
    out << json{{"user_id", c.user_id}, {"jd_id", c.jd_id}, {"label", c.label}}
               .dump()
        << "\n";
  atomic_write_file(path, out.str());
}

inline void write_vocab_file(const std::filesystem::path& path,
                             const Vocabulary& vocab) {
  std::ostringstream out;
  for (int i = 0; i < vocab.size(); ++i) out << vocab.token(i) << " " << i << "\n";
  atomic_write_file(path, out.str());
}

inline Vocabulary read_vocab_file(const std::filesystem::path& path) {
  std::vector<std::string> tokens;
  detail::for_each_line(path, [&](const std::string& line, long line_no) {
    std::istringstream ss(line);
    std::string tok;
    int id = -1;
    if (!(ss >> tok >> id)) throw ParseError("bad vocabulary entry", line_no);
    if (id != static_cast<int>(tokens.size()))
      throw ParseError("vocabulary ids must be dense and ascending", line_no);
    tokens.push_back(tok);
  });
  return Vocabulary::from_tokens(std::move(tokens));
}

// A dataset directory holds jds.jsonl, users.jsonl, clicks.jsonl, vocab.txt.
// Records pair jds and users line-by-line (record i = jd line i + user line i).
inline void write_dataset(const std::filesystem::path& dir, const Dataset& ds) {
  std::filesystem::create_directories(dir);
  write_jds_file(dir / "jds.jsonl", ds.records);
  write_users_file(dir / "users.jsonl", ds.records);
  write_clicks_file(dir / "clicks.jsonl", ds.clicks);
  write_vocab_file(dir / "vocab.txt", ds.vocab);
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.vocab = read_vocab_file(dir / "vocab.txt");

  std::vector<JobDescription> jds;
  detail::for_each_line(dir / "jds.jsonl",
                        [&](const std::string& line, long line_no) {
                          jds.push_back(detail::jd_from_json(
                              detail::parse_line(line, line_no)));
                        });
  std::vector<UserProfile> users;
  detail::for_each_line(dir / "users.jsonl",
                        [&](const std::string& line, long line_no) {
                          users.push_back(detail::user_from_json(
                              detail::parse_line(line, line_no)));
                        });
  if (jds.size() != users.size())
    throw ParseError("jds.jsonl and users.jsonl have different record counts",
                     static_cast<long>(std::min(jds.size(), users.size())) + 1);
  for (std::size_t i = 0; i < jds.size(); ++i)
    ds.records.push_back({std::move(jds[i]), std::move(users[i])});

  detail::for_each_line(dir / "clicks.jsonl",
                        [&](const std::string& line, long line_no) {
                          json j = detail::parse_line(line, line_no);
                          ds.clicks.push_back(
                              {j.at("user_id").get<std::string>(),
                               j.at("jd_id").get<std::string>(),
                               j.at("label").get<int>()});
                        });

  for (const auto& r : ds.records) {
    ds.num_skills = std::max(ds.num_skills, r.profile.skills.size());
    ds.title_count = std::max(ds.title_count, r.jd.title_id + 1);
    ds.position_name_count = std::max(
        ds.position_name_count, r.profile.aux_info.position_name_id + 1);
  }
  return ds;
}

inline DatasetBounds bounds_of(const Dataset& ds, int m_max) {
  return DatasetBounds{ds.vocab.size(), ds.title_count,
                       ds.position_name_count, ds.num_skills, m_max};
}

}  // namespace jobrec
