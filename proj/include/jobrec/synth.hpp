#pragma once
// Synthetic person-job dataset generator with a known generative process, so
// end-to-end accuracy gates have verifiable ground truth. Also loads the
// generic feature-vector + label-distribution record format.

#include "jobrec/dataset_io.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

namespace jobrec {

struct SynthConfig {
  int num_skills = 20;
  int num_titles = 5;
  int num_jds = 2000;
  int num_users = 2000;  // every record gets its own user; the first
                         // num_users of them produce click candidates
  int items_per_jd_min = 6;
  int items_per_jd_max = 10;
  int phrases_per_skill = 3;
  double neighbor_noise = 0.1;      // in [0,1]
  double click_temperature = 8.0;   // > 0
  int clicks_per_user = 8;          // candidate pairs labeled per user
  std::uint64_t seed = 7;

  void validate() const {
    if (num_skills < 1 || num_titles < 1 || num_jds < 1 || num_users < 1 ||
        phrases_per_skill < 1 || clicks_per_user < 1)
      throw DomainError("synth config: all counts must be >= 1");
    if (items_per_jd_min < 1 || items_per_jd_max < items_per_jd_min)
      throw DomainError("synth config: empty items_per_jd range");
    if (neighbor_noise < 0.0 || neighbor_noise > 1.0)
      throw DomainError("synth config: neighbor_noise outside [0,1]");
    if (!(click_temperature > 0.0))
      throw DomainError("synth config: click_temperature must be positive");
  }
};

struct GenerativeTruth {
  std::vector<Vec> jd_latents;        // latent skill distribution per JD
  std::vector<int> jd_titles;
  double click_cosine_mean = 0.0;     // population mean used by the click rule
};

struct SynthResult {
  Dataset dataset;
  GenerativeTruth truth;
};

struct VectorLDLRecord {
  Vec features;
  SkillDistribution distribution;
};

namespace synth_detail {

// Skills are partitioned across titles round-robin; a title's JDs put most
// of their latent mass on the skills it owns.
inline bool title_owns_skill(int title, int skill, int num_titles) {
  return skill % num_titles == title;
}

inline Vec sample_latent(Rng& rng, int C, int title, int num_titles) {
  Vec w(C);
  for (int c = 0; c < C; ++c) {
    if (title_owns_skill(title, c, num_titles))
      w(c) = uniform_real(rng, 0.2, 1.0);
    else
      w(c) = uniform_real(rng, 0.0, 0.05);
  }
  return w / w.sum();
}

// Largest-remainder apportionment of n_items across skills proportionally to
// the latent distribution, so item counts mirror the degrees of demand.
inline std::vector<int> apportion_items(const Vec& latent, int n_items) {
  const int C = static_cast<int>(latent.size());
  std::vector<int> counts(static_cast<std::size_t>(C), 0);
  std::vector<std::pair<double, int>> fractional;
  int assigned = 0;
  for (int c = 0; c < C; ++c) {
    double quota = latent(c) * n_items;
    counts[static_cast<std::size_t>(c)] = static_cast<int>(std::floor(quota));
    assigned += counts[static_cast<std::size_t>(c)];
    fractional.emplace_back(quota - std::floor(quota), c);
  }
  std::sort(fractional.begin(), fractional.end(),
            [](const auto& a, const auto& b) {
              if (a.first != b.first) return a.first > b.first;
              return a.second < b.second;
            });
  for (int r = 0; r < n_items - assigned; ++r)
    counts[static_cast<std::size_t>(fractional[static_cast<std::size_t>(r)].second)] += 1;
  return counts;
}

inline Vec perturb_distribution(Rng& rng, const Vec& latent, double noise) {
  if (noise == 0.0) return latent;
  const int C = static_cast<int>(latent.size());
  Vec out(C);
  for (int c = 0; c < C; ++c) {
    double eps = uniform_real(rng, -1.0, 1.0);
    out(c) = std::max(latent(c) + noise * eps * (2.0 / C), 0.0);
  }
  double s = out.sum();
  if (s <= 0.0) return latent;
  return out / s;
}

inline double cosine(const Vec& a, const Vec& b) {
  double den = a.norm() * b.norm();
  return den > 0.0 ? a.dot(b) / den : 0.0;
}

inline std::string skill_phrase(int skill, int variant) {
  return "craft" + std::to_string(skill) + " " + "practice" +
         std::to_string(skill) + "v" + std::to_string(variant) + " " +
         "method" + std::to_string(skill) + "v" + std::to_string(variant);
}

inline const std::vector<std::string>& filler_pool() {
  static const std::vector<std::string> pool = {
      "team", "strong",  "experience", "with",    "projects",
      "daily", "support", "deliver",   "quality", "tools"};
  return pool;
}

inline double entropy(const Vec& p) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < p.size(); ++c)
    if (p(c) > 0.0) h -= p(c) * std::log(p(c));
  return h;
}

}  // namespace synth_detail

// Deterministic given the seed: every record derives its own RNG stream from
// (seed, record index), so generation order cannot leak between records.
inline SynthResult generate(const SynthConfig& cfg) {
  using namespace synth_detail;
  cfg.validate();

  SynthResult res;
  auto& ds = res.dataset;
  auto& truth = res.truth;
  ds.num_skills = cfg.num_skills;
  ds.title_count = cfg.num_titles;
  ds.position_name_count = cfg.num_titles;  // position name == paired JD title

  // Fixed phrase templates per skill; vocabulary covers all of them plus the
  // filler pool, so token ids are stable across datasets with equal config.
  std::vector<std::string> all_texts;
  for (int cs = 0; cs < cfg.num_skills; ++cs)
    for (int v = 0; v < cfg.phrases_per_skill; ++v)
      all_texts.push_back(skill_phrase(cs, v));
  for (const auto& f : filler_pool()) all_texts.push_back(f);
  ds.vocab = Vocabulary::build(all_texts);

  const int n_records = cfg.num_jds;
  const double max_entropy = std::log(static_cast<double>(cfg.num_skills));
  truth.jd_latents.resize(static_cast<std::size_t>(n_records));
  truth.jd_titles.resize(static_cast<std::size_t>(n_records));

  for (int i = 0; i < n_records; ++i) {
    Rng rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(i)));
    int title = uniform_int(rng, 0, cfg.num_titles - 1);
    Vec latent = sample_latent(rng, cfg.num_skills, title, cfg.num_titles);

    int n_items = uniform_int(rng, cfg.items_per_jd_min, cfg.items_per_jd_max);
    std::vector<int> item_skills;
    auto counts = apportion_items(latent, n_items);
    for (int c = 0; c < cfg.num_skills; ++c)
      for (int k = 0; k < counts[static_cast<std::size_t>(c)]; ++k)
        item_skills.push_back(c);
    std::shuffle(item_skills.begin(), item_skills.end(), rng);

    std::vector<std::string> raw_items;
    for (int skill : item_skills) {
      int variant = uniform_int(rng, 0, cfg.phrases_per_skill - 1);
      std::string text = skill_phrase(skill, variant);
      int fillers = uniform_int(rng, 0, 2);
      for (int f = 0; f < fillers; ++f) {
        const auto& pool = filler_pool();
        text += " " + pool[static_cast<std::size_t>(uniform_int(
                    rng, 0, static_cast<int>(pool.size()) - 1))];
      }
      raw_items.push_back(text);
    }

    PersonJobRecord rec;
    rec.jd = make_job_description("jd" + std::to_string(i), title, raw_items,
                                  ds.vocab, cfg.items_per_jd_max);

    UserProfile prof;
    prof.user_id = "user" + std::to_string(i);
    prof.skills.probs = perturb_distribution(rng, latent, cfg.neighbor_noise);
    prof.aux_info.position_name_id = title;
    // Lower-entropy (more focused) latents map to higher position levels.
    double focus = 1.0 - entropy(latent) / max_entropy;
    int level = static_cast<int>(std::floor(focus * 4.0));
    level = std::clamp(level + uniform_int(rng, -1, 1), 0, 3);
    prof.aux_info.position_level = level;
    rec.profile = prof;

    ds.records.push_back(std::move(rec));
    truth.jd_latents[static_cast<std::size_t>(i)] = latent;
    truth.jd_titles[static_cast<std::size_t>(i)] = title;
  }

  // Click candidates: each user labels their paired JD plus random others.
  // Probability follows sigmoid(T * (cos(latent_jd, user_skills) - mean)),
  // with the mean taken over all candidate pairs.
  struct Pair {
    int user_rec;
    int jd;
    double cos;
  };
  std::vector<Pair> pairs;
  const int n_users_present = std::min(cfg.num_users, n_records);
  for (int u = 0; u < n_users_present; ++u) {
    Rng rng(derive_seed(cfg.seed, 0x10000000ULL + static_cast<std::uint64_t>(u)));
    const Vec& skills = ds.records[static_cast<std::size_t>(u)].profile.skills.probs;
    std::vector<int> cand{u};
    while (static_cast<int>(cand.size()) < std::min(cfg.clicks_per_user, n_records)) {
      int j = uniform_int(rng, 0, n_records - 1);
      if (std::find(cand.begin(), cand.end(), j) == cand.end())
        cand.push_back(j);
    }
    for (int j : cand)
      pairs.push_back(
          {u, j, cosine(truth.jd_latents[static_cast<std::size_t>(j)], skills)});
  }
  double mean_cos = 0.0;
  for (const auto& p : pairs) mean_cos += p.cos;
  mean_cos /= static_cast<double>(pairs.size());
  truth.click_cosine_mean = mean_cos;

  for (std::size_t k = 0; k < pairs.size(); ++k) {
    Rng rng(derive_seed(cfg.seed, 0x20000000ULL + static_cast<std::uint64_t>(k)));
    const auto& p = pairs[k];
    double prob =
        1.0 / (1.0 + std::exp(-cfg.click_temperature * (p.cos - mean_cos)));
    int label = uniform_real(rng, 0.0, 1.0) < prob ? 1 : 0;
    ds.clicks.push_back(
        {ds.records[static_cast<std::size_t>(p.user_rec)].profile.user_id,
         ds.records[static_cast<std::size_t>(p.jd)].jd.jd_id, label});
  }
  return res;
}

// Truth file: one meta line then one line per JD (tests only).
inline void write_truth_file(const std::filesystem::path& path,
                             const GenerativeTruth& truth) {
  std::ostringstream out;
  out << json{{"kind", "meta"}, {"click_cosine_mean", truth.click_cosine_mean}}
             .dump()
      << "\n";
  for (std::size_t i = 0; i < truth.jd_latents.size(); ++i) {
    std::vector<double> latent(truth.jd_latents[i].data(),
                               truth.jd_latents[i].data() +
                                   truth.jd_latents[i].size());
    out << json{{"kind", "jd"},
                {"jd_id", "jd" + std::to_string(i)},
                {"title_id", truth.jd_titles[i]},
                {"latent", latent}}
               .dump()
        << "\n";
  }
  atomic_write_file(path, out.str());
}

inline GenerativeTruth read_truth_file(const std::filesystem::path& path) {
  GenerativeTruth truth;
  detail::for_each_line(path, [&](const std::string& line, long line_no) {
    json j = detail::parse_line(line, line_no);
    if (j.at("kind") == "meta") {
      truth.click_cosine_mean = j.at("click_cosine_mean").get<double>();
      return;
    }
    auto latent = j.at("latent").get<std::vector<double>>();
    truth.jd_latents.push_back(Eigen::Map<const Vec>(
        latent.data(), static_cast<Eigen::Index>(latent.size())));
    truth.jd_titles.push_back(j.at("title_id").get<int>());
  });
  return truth;
}

// Feature-vector + label-distribution records, one JSON object per line:
// {"features": [...], "distribution": [...]}. All rows must share one
// feature width; the distribution must be a valid probability vector.
inline std::vector<VectorLDLRecord> load_vector_ldl(
    const std::filesystem::path& path) {
  std::vector<VectorLDLRecord> out;
  Eigen::Index width = -1;
  detail::for_each_line(path, [&](const std::string& line, long line_no) {
    json j = detail::parse_line(line, line_no);
    auto feats = j.at("features").get<std::vector<double>>();
    auto dist = j.at("distribution").get<std::vector<double>>();
    if (width < 0) width = static_cast<Eigen::Index>(feats.size());
    if (static_cast<Eigen::Index>(feats.size()) != width)
      throw ParseError("inconsistent feature width (row " +
                           std::to_string(out.size() + 1) + ")",
                       line_no);
    VectorLDLRecord rec;
    rec.features = Eigen::Map<const Vec>(feats.data(),
                                         static_cast<Eigen::Index>(feats.size()));
    rec.distribution.probs = Eigen::Map<const Vec>(
        dist.data(), static_cast<Eigen::Index>(dist.size()));
    if (!is_valid_distribution(rec.distribution.probs))
      throw ParseError("row " + std::to_string(out.size() + 1) +
                           " distribution invalid",
                       line_no);
    out.push_back(std::move(rec));
  });
  return out;
}

}  // namespace jobrec
