// Domain types: softmax normalization, tokenization, validation, and the
// round-trip behaviour of the dataset files.

#include "jobrec/dataset_io.hpp"
#include "jobrec/synth.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

using namespace jobrec;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("jobrec_test_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("normalize_ratings: equal ratings give the uniform distribution") {
  for (double c : {-3.0, 0.0, 2.5}) {
    Vec r = Vec::Constant(4, c);
    auto d = normalize_ratings(r);
    for (int i = 0; i < 4; ++i) REQUIRE(d.probs(i) == Catch::Approx(0.25));
  }
}

TEST_CASE("normalize_ratings: two-entry closed form") {
  Vec r(2);
  r << 1.0, 2.0;
  auto d = normalize_ratings(r);
  // softmax(1, 2) = (1/(1+e), e/(1+e)), evaluated directly
  double e = std::exp(1.0);
  REQUIRE(d.probs(0) == Catch::Approx(1.0 / (1.0 + e)).epsilon(1e-12));
  REQUIRE(d.probs(1) == Catch::Approx(e / (1.0 + e)).epsilon(1e-12));
}

TEST_CASE("normalize_ratings: sums to one and shift-invariant for |x| <= 50") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    int n = uniform_int(rng, 1, 12);
    Vec r(n);
    for (int i = 0; i < n; ++i) r(i) = uniform_real(rng, -50.0, 50.0);
    auto d = normalize_ratings(r);
    REQUIRE(std::abs(d.probs.sum() - 1.0) <= 1e-9);
    REQUIRE(is_valid_distribution(d.probs));

    double shift = uniform_real(rng, -20.0, 20.0);
    auto d2 = normalize_ratings((r.array() + shift).matrix());
    for (int i = 0; i < n; ++i)
      REQUIRE(std::abs(d.probs(i) - d2.probs(i)) <= 1e-9);
  }
}

TEST_CASE("normalize_ratings rejects NaN and infinity") {
  Vec r(3);
  r << 1.0, std::nan(""), 0.0;
  REQUIRE_THROWS_AS(normalize_ratings(r), DomainError);
  r << 1.0, std::numeric_limits<double>::infinity(), 0.0;
  REQUIRE_THROWS_AS(normalize_ratings(r), DomainError);
}

TEST_CASE("tokenizer lowercases and splits on whitespace and punctuation") {
  auto words = split_words("Design Deep-Learning models, C++/Python!");
  REQUIRE(words == std::vector<std::string>{"design", "deep", "learning",
                                            "models", "c", "python"});
  Vocabulary v = Vocabulary::build({"alpha beta", "beta gamma"});
  REQUIRE(v.id_of("alpha") == 2);  // 0 = pad, 1 = unk
  REQUIRE(v.id_of("beta") == 3);
  REQUIRE(v.id_of("missing") == kUnkTokenId);
  auto item = v.tokenize_item("Beta ALPHA unseen");
  REQUIRE(item.token_ids == std::vector<int>{3, 2, kUnkTokenId});
}

TEST_CASE("make_job_description truncates to the first m_max items") {
  Vocabulary v = Vocabulary::build({"a b c"});
  auto jd = make_job_description("j1", 0, {"a", "b", "c", "a b"}, v, 2);
  REQUIRE(jd.items.size() == 2);
  REQUIRE(jd.raw_items == std::vector<std::string>{"a", "b"});
  REQUIRE_THROWS_AS(make_job_description("j2", 0, {}, v, 2), DomainError);
}

namespace {
Dataset tiny_dataset() {
  Dataset ds;
  ds.vocab = Vocabulary::build({"write code daily", "review designs"});
  ds.num_skills = 3;
  ds.title_count = 2;
  ds.position_name_count = 2;
  PersonJobRecord r1;
  r1.jd = make_job_description("jd0", 0, {"write code daily"}, ds.vocab, 5);
  r1.profile.user_id = "u0";
  r1.profile.skills.probs = Vec::Constant(3, 1.0 / 3.0);
  r1.profile.aux_info = {0, 1};
  PersonJobRecord r2;
  r2.jd = make_job_description("jd1", 1, {"review designs", "write code"},
                               ds.vocab, 5);
  r2.profile.user_id = "u1";
  Vec p(3);
  p << 0.5, 0.25, 0.25;
  r2.profile.skills.probs = p;
  r2.profile.aux_info = {1, 0};
  ds.records = {r1, r2};
  ds.clicks = {{"u0", "jd1", 1}, {"u1", "jd0", 0}};
  return ds;
}
}  // namespace

TEST_CASE("validate_dataset: well-formed dataset yields an empty report") {
  Dataset ds = tiny_dataset();
  auto report = validate_dataset(ds.records, ds.clicks, bounds_of(ds, 5));
  CAPTURE(report.violations.size());
  REQUIRE(report.ok());

  SECTION("clicks are optional at the recall stage") {
    auto r2 = validate_dataset(ds.records, {}, bounds_of(ds, 5));
    REQUIRE(r2.ok());
  }
}

TEST_CASE("validate_dataset flags a distribution that sums to 0.9") {
  Dataset ds = tiny_dataset();
  ds.records[0].profile.skills.probs = Vec::Constant(3, 0.3);
  auto report = validate_dataset(ds.records, ds.clicks, bounds_of(ds, 5));
  REQUIRE_FALSE(report.ok());
  bool found = false;
  for (const auto& v : report.violations)
    if (v.record_id == "u0" && v.message.find("distribution") != std::string::npos)
      found = true;
  REQUIRE(found);
}

TEST_CASE("validate_dataset flags a click with a dangling jd reference") {
  Dataset ds = tiny_dataset();
  ds.clicks.push_back({"u0", "jd_missing", 1});
  auto report = validate_dataset(ds.records, ds.clicks, bounds_of(ds, 5));
  REQUIRE(report.violations.size() == 1);
  REQUIRE(report.violations[0].record_id == "u0/jd_missing");
  REQUIRE(report.violations[0].message.find("unknown jd_id") !=
          std::string::npos);
}

TEST_CASE("validate_dataset flags out-of-vocabulary tokens and bad labels") {
  Dataset ds = tiny_dataset();
  ds.records[1].jd.items[0].token_ids.push_back(9999);
  ds.clicks[0].label = 2;
  auto report = validate_dataset(ds.records, ds.clicks, bounds_of(ds, 5));
  REQUIRE(report.violations.size() == 2);
}

TEST_CASE("dataset round-trip preserves token ids, distributions, labels") {
  auto dir = temp_dir("roundtrip");
  SynthConfig cfg;
  cfg.num_jds = 40;
  cfg.num_users = 40;
  cfg.seed = 321;
  auto generated = generate(cfg);
  write_dataset(dir, generated.dataset);
  Dataset loaded = read_dataset(dir);

  REQUIRE(loaded.records.size() == generated.dataset.records.size());
  for (std::size_t i = 0; i < loaded.records.size(); ++i) {
    const auto& a = generated.dataset.records[i];
    const auto& b = loaded.records[i];
    REQUIRE(a.jd.jd_id == b.jd.jd_id);
    REQUIRE(a.jd.title_id == b.jd.title_id);
    REQUIRE(a.jd.raw_items == b.jd.raw_items);
    REQUIRE(a.jd.items.size() == b.jd.items.size());
    for (std::size_t m = 0; m < a.jd.items.size(); ++m)
      REQUIRE(a.jd.items[m].token_ids == b.jd.items[m].token_ids);
    REQUIRE(a.profile.user_id == b.profile.user_id);
    // bit-exact distribution round trip
    REQUIRE(a.profile.skills.probs.size() == b.profile.skills.probs.size());
    for (Eigen::Index c = 0; c < a.profile.skills.probs.size(); ++c)
      REQUIRE(a.profile.skills.probs(c) == b.profile.skills.probs(c));
    REQUIRE(a.profile.aux_info.position_name_id ==
            b.profile.aux_info.position_name_id);
    REQUIRE(a.profile.aux_info.position_level ==
            b.profile.aux_info.position_level);
  }
  REQUIRE(loaded.clicks.size() == generated.dataset.clicks.size());
  for (std::size_t i = 0; i < loaded.clicks.size(); ++i) {
    REQUIRE(loaded.clicks[i].user_id == generated.dataset.clicks[i].user_id);
    REQUIRE(loaded.clicks[i].jd_id == generated.dataset.clicks[i].jd_id);
    REQUIRE(loaded.clicks[i].label == generated.dataset.clicks[i].label);
  }
  REQUIRE(loaded.vocab.tokens() == generated.dataset.vocab.tokens());

  // serialize(parse(file)) is byte-identical
  auto second = temp_dir("roundtrip2");
  write_dataset(second, loaded);
  for (const char* f : {"jds.jsonl", "users.jsonl", "clicks.jsonl", "vocab.txt"})
    REQUIRE(read_file(dir / f) == read_file(second / f));
  fs::remove_all(dir);
  fs::remove_all(second);
}

TEST_CASE("malformed jsonl reports the line number") {
  auto dir = temp_dir("badjson");
  Dataset ds = tiny_dataset();
  write_dataset(dir, ds);
  std::string jds = read_file(dir / "jds.jsonl");
  atomic_write_file(dir / "jds.jsonl", jds + "{not json\n");
  try {
    read_dataset(dir);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    REQUIRE(e.line() == 3);
  }
  fs::remove_all(dir);
}

TEST_CASE("tuple invariant: neighbor ids must be distinct") {
  Dataset ds = tiny_dataset();
  JDTuple t;
  t.central = &ds.records[0].jd;
  t.neighbors = {&ds.records[1].jd, &ds.records[1].jd};
  REQUIRE_THROWS_AS(check_tuple(t), ContractViolation);
  t.neighbors = {&ds.records[0].jd};
  REQUIRE_THROWS_AS(check_tuple(t), ContractViolation);
  t.neighbors = {&ds.records[1].jd};
  REQUIRE_NOTHROW(check_tuple(t));
}
