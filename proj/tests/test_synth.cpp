// Generator contracts: determinism, the zero-noise identity, the noise
// monotonicity Monte-Carlo oracle, click-cosine correlation, and the
// feature-vector + label-distribution loader.

#include "jobrec/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <numeric>

using namespace jobrec;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("jobrec_synth_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double mean_latent_profile_cosine(double noise, std::uint64_t seed) {
  SynthConfig cfg;
  cfg.num_skills = 3;
  cfg.num_titles = 2;
  cfg.num_jds = 100;
  cfg.num_users = 100;
  cfg.neighbor_noise = noise;
  cfg.seed = seed;
  auto r = generate(cfg);
  double sum = 0.0;
  for (int i = 0; i < cfg.num_jds; ++i) {
    const Vec& latent = r.truth.jd_latents[static_cast<std::size_t>(i)];
    const Vec& prof =
        r.dataset.records[static_cast<std::size_t>(i)].profile.skills.probs;
    sum += latent.dot(prof) / (latent.norm() * prof.norm());
  }
  return sum / cfg.num_jds;
}
}  // namespace

TEST_CASE("same seed produces byte-identical dataset files") {
  SynthConfig cfg;
  cfg.num_jds = 60;
  cfg.num_users = 60;
  cfg.seed = 99;
  auto dir1 = temp_dir("det1");
  auto dir2 = temp_dir("det2");
  write_dataset(dir1, generate(cfg).dataset);
  write_dataset(dir2, generate(cfg).dataset);
  for (const char* f : {"jds.jsonl", "users.jsonl", "clicks.jsonl", "vocab.txt"})
    REQUIRE(read_file(dir1 / f) == read_file(dir2 / f));
  fs::remove_all(dir1);
  fs::remove_all(dir2);
}

TEST_CASE("zero noise: user profile equals the JD latent exactly") {
  SynthConfig cfg;
  cfg.num_jds = 30;
  cfg.num_users = 30;
  cfg.neighbor_noise = 0.0;
  cfg.seed = 3;
  auto r = generate(cfg);
  for (int i = 0; i < cfg.num_jds; ++i) {
    const Vec& latent = r.truth.jd_latents[static_cast<std::size_t>(i)];
    const Vec& prof =
        r.dataset.records[static_cast<std::size_t>(i)].profile.skills.probs;
    REQUIRE(latent == prof);
  }
}

TEST_CASE("profile cosine degrades monotonically with noise (MC oracle)") {
  double c_01 = mean_latent_profile_cosine(0.1, 42);
  double c_05 = mean_latent_profile_cosine(0.5, 42);
  CAPTURE(c_01, c_05);
  REQUIRE(c_01 > c_05);
}

TEST_CASE("generated distributions satisfy the distribution invariants") {
  SynthConfig cfg;
  cfg.num_jds = 80;
  cfg.num_users = 80;
  cfg.neighbor_noise = 0.7;
  cfg.seed = 17;
  auto r = generate(cfg);
  for (const auto& rec : r.dataset.records)
    REQUIRE(is_valid_distribution(rec.profile.skills.probs));
  for (const auto& latent : r.truth.jd_latents)
    REQUIRE(is_valid_distribution(latent));
}

TEST_CASE("clicks correlate positively with latent-profile cosine") {
  // >= 10k candidate pairs; Spearman rank correlation between the pair's
  // cosine and its click label must be positive at 99% confidence
  // (normal approximation: z = rho * sqrt(n - 1) > 2.33).
  SynthConfig cfg;
  cfg.num_jds = 1500;
  cfg.num_users = 1500;
  cfg.clicks_per_user = 8;
  cfg.seed = 11;
  auto r = generate(cfg);
  REQUIRE(r.dataset.clicks.size() >= 10000);

  std::unordered_map<std::string, int> rec_of_user, rec_of_jd;
  for (std::size_t i = 0; i < r.dataset.records.size(); ++i) {
    rec_of_user[r.dataset.records[i].profile.user_id] = static_cast<int>(i);
    rec_of_jd[r.dataset.records[i].jd.jd_id] = static_cast<int>(i);
  }
  std::vector<double> cosines;
  std::vector<double> labels;
  for (const auto& c : r.dataset.clicks) {
    const Vec& latent =
        r.truth.jd_latents[static_cast<std::size_t>(rec_of_jd.at(c.jd_id))];
    const Vec& prof = r.dataset.records[static_cast<std::size_t>(
                                            rec_of_user.at(c.user_id))]
                          .profile.skills.probs;
    cosines.push_back(latent.dot(prof) / (latent.norm() * prof.norm()));
    labels.push_back(c.label);
  }

  auto ranks = [](const std::vector<double>& xs) {
    std::vector<std::size_t> order(xs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
    std::vector<double> rk(xs.size());
    std::size_t i = 0;
    while (i < order.size()) {
      std::size_t j = i;
      while (j < order.size() && xs[order[j]] == xs[order[i]]) ++j;
      double avg = 0.5 * static_cast<double>(i + 1 + j);
      for (std::size_t k = i; k < j; ++k) rk[order[k]] = avg;
      i = j;
    }
    return rk;
  };
  auto ra = ranks(cosines);
  auto rb = ranks(labels);
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  double rho = num / std::sqrt(da * db);
  double z = rho * std::sqrt(static_cast<double>(ra.size()) - 1.0);
  CAPTURE(rho, z);
  REQUIRE(z > 2.33);
}

TEST_CASE("truth file round-trips") {
  SynthConfig cfg;
  cfg.num_jds = 25;
  cfg.num_users = 25;
  cfg.seed = 5;
  auto r = generate(cfg);
  auto dir = temp_dir("truth");
  write_truth_file(dir / "truth.jsonl", r.truth);
  auto loaded = read_truth_file(dir / "truth.jsonl");
  REQUIRE(loaded.jd_latents.size() == r.truth.jd_latents.size());
  REQUIRE(loaded.click_cosine_mean == r.truth.click_cosine_mean);
  for (std::size_t i = 0; i < loaded.jd_latents.size(); ++i) {
    REQUIRE(loaded.jd_latents[i] == r.truth.jd_latents[i]);
    REQUIRE(loaded.jd_titles[i] == r.truth.jd_titles[i]);
  }
  fs::remove_all(dir);
}

TEST_CASE("invalid synth configs are rejected") {
  SynthConfig cfg;
  cfg.num_jds = 0;
  REQUIRE_THROWS_AS(generate(cfg), DomainError);
  cfg = SynthConfig{};
  cfg.items_per_jd_min = 4;
  cfg.items_per_jd_max = 3;
  REQUIRE_THROWS_AS(generate(cfg), DomainError);
  cfg = SynthConfig{};
  cfg.neighbor_noise = 1.5;
  REQUIRE_THROWS_AS(generate(cfg), DomainError);
  cfg = SynthConfig{};
  cfg.click_temperature = 0.0;
  REQUIRE_THROWS_AS(generate(cfg), DomainError);
}

TEST_CASE("vector LDL loader: round trip and row-width error") {
  auto dir = temp_dir("ldl");
  std::string good;
  good += nlohmann::json{{"features", {1.0, 2.0, 3.0}},
                         {"distribution", {0.25, 0.75}}}
              .dump() +
          "\n";
  good += nlohmann::json{{"features", {0.5, -1.0, 0.25}},
                         {"distribution", {0.5, 0.5}}}
              .dump() +
          "\n";
  atomic_write_file(dir / "good.jsonl", good);
  auto recs = load_vector_ldl(dir / "good.jsonl");
  REQUIRE(recs.size() == 2);
  REQUIRE(recs[0].features.size() == 3);
  REQUIRE(recs[0].distribution.probs(1) == 0.75);

  std::string bad = good + nlohmann::json{{"features", {1.0}},
                                          {"distribution", {1.0}}}
                               .dump() +
                    "\n";
  atomic_write_file(dir / "bad.jsonl", bad);
  try {
    load_vector_ldl(dir / "bad.jsonl");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(std::string(e.what()).find("row 3") != std::string::npos);
    REQUIRE(e.line() == 3);
  }

  std::string invalid_dist =
      nlohmann::json{{"features", {1.0, 2.0}}, {"distribution", {0.6, 0.6}}}
          .dump() +
      "\n";
  atomic_write_file(dir / "invalid.jsonl", invalid_dist);
  REQUIRE_THROWS_AS(load_vector_ldl(dir / "invalid.jsonl"), ParseError);
  fs::remove_all(dir);
}
