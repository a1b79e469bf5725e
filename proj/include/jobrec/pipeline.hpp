#pragma once
// Command-level operations shared by the CLI and the acceptance suite:
// synth, validate, train-recall, eval-recall, train-rank, eval-rank,
// recommend. Every artifact is written atomically and carries the run
// configuration's fingerprint.

#include "jobrec/config.hpp"
#include "jobrec/synth.hpp"
#include "jobrec/train.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace jobrec {

namespace fs = std::filesystem;

inline SynthConfig synth_config_from(const RunConfig& cfg) {
  SynthConfig s;
  s.num_skills = cfg.get_int("synth.num_skills");
  s.num_titles = cfg.get_int("synth.num_titles");
  s.num_jds = cfg.get_int("synth.num_jds");
  s.num_users = cfg.get_int("synth.num_users");
  s.items_per_jd_min = cfg.get_int("synth.items_per_jd_min");
  s.items_per_jd_max = cfg.get_int("synth.items_per_jd_max");
  s.phrases_per_skill = cfg.get_int("synth.phrases_per_skill");
  s.neighbor_noise = cfg.get_double("synth.neighbor_noise");
  s.click_temperature = cfg.get_double("synth.click_temperature");
  s.clicks_per_user = cfg.get_int("synth.clicks_per_user");
  s.seed = cfg.get_u64("synth.seed");
  return s;
}

inline RecallModelConfig model_config_from(const RunConfig& cfg,
                                           const Dataset& ds) {
  RecallModelConfig m;
  m.d = cfg.get_int("model.d");
  m.layers = cfg.get_int("model.layers");
  m.heads_local = cfg.get_int("model.heads_local");
  m.heads_global = cfg.get_int("model.heads_global");
  m.m_max = cfg.get_int("model.m_max");
  m.neighbors = cfg.get_int("model.neighbors");
  m.d_ff = cfg.get_int("model.d_ff");
  m.dropout = cfg.get_double("train.dropout");
  m.loss.lambda = cfg.get_double("loss.lambda");
  m.loss.mu = cfg.get_double("loss.mu");
  m.loss.alpha = cfg.get_double("loss.alpha");
  m.loss.relation_exp_positive = cfg.get_bool("loss.relation_exp_positive");
  m.num_skills = ds.num_skills;
  m.vocab_size = ds.vocab.size();
  m.title_count = ds.title_count;
  m.position_name_count = ds.position_name_count;
  int max_level = 1;
  for (const auto& r : ds.records)
    max_level = std::max(max_level, r.profile.aux_info.position_level);
  m.max_position_level = max_level;
  return m;
}

inline TrainConfig train_config_from(const RunConfig& cfg,
                                     const std::string& stage) {
  TrainConfig t;
  t.stage = stage;
  t.batch_size = cfg.get_int("train.batch_size");
  t.lr = cfg.get_double("train.lr");
  t.lr_anneal_factor = cfg.get_double("train.lr_anneal_factor");
  t.lr_anneal_every = cfg.get_int("train.lr_anneal_every");
  t.max_epochs = cfg.get_int("train.max_epochs");
  t.dropout = cfg.get_double("train.dropout");
  t.seed = cfg.get_u64("train.seed");
  t.recall_negatives = cfg.get_int("train.recall_negatives");
  t.rank_negatives = cfg.get_int("train.rank_negatives");
  t.eval_fraction = cfg.get_double("train.eval_fraction");
  return t;
}

inline void write_jsonl(const fs::path& path,
                        const std::vector<nlohmann::json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  atomic_write_file(path, out);
}

// ---- synth ----

inline void cmd_synth(const RunConfig& cfg, const fs::path& out_dir) {
  auto result = generate(synth_config_from(cfg));
  write_dataset(out_dir, result.dataset);
  write_truth_file(out_dir / "truth.jsonl", result.truth);
  atomic_write_file(
      out_dir / "manifest.json",
      nlohmann::json{{"config_fingerprint", cfg.fingerprint()},
                     {"num_records", result.dataset.records.size()},
                     {"num_clicks", result.dataset.clicks.size()},
                     {"vocab_size", result.dataset.vocab.size()},
                     {"num_skills", result.dataset.num_skills}}
              .dump(2) +
          "\n");
}

// ---- validate ----

inline ValidationReport cmd_validate(const RunConfig& cfg,
                                     const fs::path& data_dir) {
  Dataset ds = read_dataset(data_dir);
  return validate_dataset(ds.records, ds.clicks,
                          bounds_of(ds, cfg.get_int("model.m_max")));
}

// ---- train recall ----

inline RecallTrainResult cmd_train_recall(const RunConfig& cfg,
                                          const fs::path& data_dir,
                                          const fs::path& out_dir) {
  Dataset ds = read_dataset(data_dir);
  RecallModelConfig model_cfg = model_config_from(cfg, ds);
  TrainConfig train_cfg = train_config_from(cfg, "recall");
  fs::create_directories(out_dir);
  train_cfg.diagnostics_dir = out_dir.string();

  auto result = train_recall_stage(ds, model_cfg, train_cfg,
                                   cfg.fingerprint());
  save_checkpoint(out_dir / "recall_best.ckpt",
                  make_recall_checkpoint(result.best, train_cfg.max_epochs));
  save_checkpoint(out_dir / "recall_final.ckpt",
                  make_recall_checkpoint(result.final, train_cfg.max_epochs));
  write_jsonl(out_dir / "recall_train_log.jsonl", result.epoch_log);
  atomic_write_file(
      out_dir / "recall_train_manifest.json",
      nlohmann::json{{"config_fingerprint", cfg.fingerprint()},
                     {"best_epoch", result.best_epoch},
                     {"best_recall_at_20", result.best_recall20}}
              .dump(2) +
          "\n");
  return result;
}

// ---- eval recall ----

struct EvalRecallOutput {
  RecallMetrics metrics;
  nlohmann::json report;
};

inline void check_checkpoint_dataset(const RecallPipeline& pipe,
                                     const Dataset& ds) {
  if (pipe.model.cfg.num_skills != ds.num_skills)
    throw DomainError("checkpoint/dataset skill count mismatch: " +
                      std::to_string(pipe.model.cfg.num_skills) + " vs " +
                      std::to_string(ds.num_skills));
  if (pipe.vocab_tokens != ds.vocab.tokens())
    throw DomainError("checkpoint/dataset vocabulary mismatch");
}

inline EvalRecallOutput cmd_eval_recall(const RunConfig& cfg,
                                        const fs::path& checkpoint_path,
                                        const fs::path& data_dir,
                                        const fs::path& out_dir,
                                        std::vector<int> k_values = {}) {
  if (k_values.empty()) k_values = cfg.get_int_list("eval.k_values");
  Dataset ds = read_dataset(data_dir);
  RecallPipeline pipe = pipeline_from_checkpoint(load_checkpoint(checkpoint_path));
  check_checkpoint_dataset(pipe, ds);
  JdIndex index = JdIndex::build(ds);

  for (const auto& rec : ds.records)
    if (!pipe.neighbors.count(rec.jd.jd_id) && pipe.model.cfg.neighbors > 0)
      pipe.neighbors[rec.jd.jd_id] =
          assign_neighbors_for_new_jd(pipe, rec.jd, index);

  std::vector<const JobDescription*> all_jds;
  for (const auto& r : ds.records) all_jds.push_back(&r.jd);
  EncodedJds encoded = encode_jds_eval(pipe.model, all_jds, pipe.neighbors,
                                       index);

  TrainConfig train_cfg = train_config_from(cfg, "recall");
  for (int idx : pipe.eval_indices)
    if (idx < 0 || idx >= static_cast<int>(ds.records.size()))
      throw DomainError(
          "checkpoint eval split does not match this dataset (index " +
          std::to_string(idx) + ")");
  auto sets = build_eval_sets(ds, pipe.eval_indices,
                              train_cfg.recall_negatives, train_cfg.seed);

  EvalRecallOutput out;
  out.metrics = evaluate_recall_sets(ds, encoded, sets, k_values);

  nlohmann::json per_user = nlohmann::json::array();
  for (const auto& [user, rank] : out.metrics.positive_ranks)
    per_user.push_back({{"user_id", user}, {"positive_rank", rank}});
  nlohmann::json metrics = nlohmann::json::object();
  for (std::size_t i = 0; i < k_values.size(); ++i) {
    metrics["recall_at_" + std::to_string(k_values[i])] =
        out.metrics.recall_at_k[i];
    metrics["ndcg_at_" + std::to_string(k_values[i])] = out.metrics.ndcg_at_k[i];
  }
  out.report = nlohmann::json{{"config_fingerprint", cfg.fingerprint()},
                              {"users_evaluated", sets.size()},
                              {"metrics", metrics},
                              {"per_user", per_user}};
  fs::create_directories(out_dir);
  atomic_write_file(out_dir / "recall_report.json", out.report.dump(2) + "\n");

  // Candidate-set file for the ranking stage: the user's full sampled
  // candidate list, ranked by recall score.
  std::unordered_map<std::string, const Vec*> skills_of;
  for (const auto& r : ds.records)
    skills_of.emplace(r.profile.user_id, &r.profile.skills.probs);
  std::vector<nlohmann::json> rows;
  for (const auto& set : sets) {
    std::vector<std::pair<std::string, SkillDistribution>> pool;
    auto add = [&](const std::string& jd_id) {
      pool.emplace_back(jd_id,
                        SkillDistribution{encoded.preds
                                              .row(encoded.row_of.at(jd_id))
                                              .transpose()});
    };
    add(set.positive_jd);
    for (const auto& neg : set.negative_jds) add(neg);
    auto ranked = recall_candidates(
        SkillDistribution{*skills_of.at(set.user_id)}, pool,
        static_cast<int>(pool.size()));
    nlohmann::json ids = nlohmann::json::array();
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& c : ranked) {
      ids.push_back(c.jd_id);
      scores.push_back(c.score);
    }
    rows.push_back(nlohmann::json{
        {"user_id", set.user_id}, {"jd_ids", ids}, {"scores", scores}});
  }
  write_jsonl(out_dir / "candidates.jsonl", rows);
  return out;
}

// ---- train rank ----

inline RankTrainResult cmd_train_rank(const RunConfig& cfg,
                                      const fs::path& data_dir,
                                      const fs::path& recall_checkpoint,
                                      const fs::path& out_dir) {
  Dataset ds = read_dataset(data_dir);
  RecallPipeline pipe =
      pipeline_from_checkpoint(load_checkpoint(recall_checkpoint));
  check_checkpoint_dataset(pipe, ds);
  JdIndex index = JdIndex::build(ds);
  for (const auto& rec : ds.records)
    if (!pipe.neighbors.count(rec.jd.jd_id) && pipe.model.cfg.neighbors > 0)
      pipe.neighbors[rec.jd.jd_id] =
          assign_neighbors_for_new_jd(pipe, rec.jd, index);

  std::vector<const JobDescription*> all_jds;
  for (const auto& r : ds.records) all_jds.push_back(&r.jd);
  EncodedJds encoded = encode_jds_eval(pipe.model, all_jds, pipe.neighbors,
                                       index);

  TrainConfig train_cfg = train_config_from(cfg, "rank");
  fs::create_directories(out_dir);
  train_cfg.diagnostics_dir = out_dir.string();
  auto result = train_rank_stage(ds, encoded, pipe.model.cfg.d, train_cfg);

  save_checkpoint(out_dir / "rank_best.ckpt",
                  make_rank_checkpoint(result.best, cfg.fingerprint(),
                                       train_cfg.max_epochs));
  save_checkpoint(out_dir / "rank_final.ckpt",
                  make_rank_checkpoint(result.final, cfg.fingerprint(),
                                       train_cfg.max_epochs));
  write_jsonl(out_dir / "rank_train_log.jsonl", result.epoch_log);
  atomic_write_file(
      out_dir / "rank_train_manifest.json",
      nlohmann::json{{"config_fingerprint", cfg.fingerprint()},
                     {"best_epoch", result.best_epoch},
                     {"best_auc", result.best_auc},
                     {"users_skipped_no_negatives",
                      result.users_skipped_no_negatives}}
              .dump(2) +
          "\n");
  return result;
}

// ---- eval rank ----

struct EvalRankOutput {
  RankMetrics metrics;
  nlohmann::json report;
};

inline EvalRankOutput cmd_eval_rank(const RunConfig& cfg,
                                    const fs::path& recall_checkpoint,
                                    const fs::path& rank_checkpoint,
                                    const fs::path& candidates_path,
                                    const fs::path& data_dir,
                                    const fs::path& out_dir) {
  Dataset ds = read_dataset(data_dir);
  RecallPipeline pipe =
      pipeline_from_checkpoint(load_checkpoint(recall_checkpoint));
  check_checkpoint_dataset(pipe, ds);
  RankModel rank_model =
      rank_model_from_checkpoint(load_checkpoint(rank_checkpoint));
  if (rank_model.cfg.num_skills != ds.num_skills)
    throw DomainError("rank checkpoint/dataset skill count mismatch");
  JdIndex index = JdIndex::build(ds);
  for (const auto& rec : ds.records)
    if (!pipe.neighbors.count(rec.jd.jd_id) && pipe.model.cfg.neighbors > 0)
      pipe.neighbors[rec.jd.jd_id] =
          assign_neighbors_for_new_jd(pipe, rec.jd, index);

  std::vector<const JobDescription*> all_jds;
  for (const auto& r : ds.records) all_jds.push_back(&r.jd);
  EncodedJds encoded = encode_jds_eval(pipe.model, all_jds, pipe.neighbors,
                                       index);

  std::unordered_map<std::string, const Vec*> skills_of;
  for (const auto& r : ds.records)
    skills_of.emplace(r.profile.user_id, &r.profile.skills.probs);
  std::map<std::pair<std::string, std::string>, int> label_of;
  for (const auto& c : ds.clicks) label_of[{c.user_id, c.jd_id}] = c.label;

  // Candidate sets come from the recall stage's file; click scores are
  // computed for every candidate, labels attach where click data exists.
  std::vector<UserCandidateGroup> labeled_groups;
  std::vector<nlohmann::json> ranked_rows;
  ad::Tape tape;
  Binding bind(tape, rank_model.params);
  detail::for_each_line(candidates_path, [&](const std::string& line,
                                             long line_no) {
    nlohmann::json j = detail::parse_line(line, line_no);
    std::string user_id = j.at("user_id").get<std::string>();
    auto skills = skills_of.find(user_id);
    if (skills == skills_of.end())
      throw DomainError("candidates reference unknown user_id: " + user_id);
    std::vector<RankedCandidate> scored;
    UserCandidateGroup labeled{user_id, {}};
    for (const auto& jd_id_json : j.at("jd_ids")) {
      std::string jd_id = jd_id_json.get<std::string>();
      auto row = encoded.row_of.find(jd_id);
      if (row == encoded.row_of.end())
        throw DomainError("candidates reference unknown jd_id: " + jd_id);
      double p = click_probability(bind, rank_model.cfg,
                                   encoded.cls.row(row->second).transpose(),
                                   *skills->second);
      auto lab = label_of.find({user_id, jd_id});
      scored.push_back(
          {jd_id, p, lab == label_of.end() ? -1 : lab->second});
      if (lab != label_of.end())
        labeled.candidates.push_back({jd_id, p, lab->second});
    }
    if (!labeled.candidates.empty()) labeled_groups.push_back(labeled);

    std::sort(scored.begin(), scored.end(),
              [](const RankedCandidate& a, const RankedCandidate& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.jd_id < b.jd_id;
              });
    nlohmann::json ids = nlohmann::json::array();
    nlohmann::json scores = nlohmann::json::array();
    for (const auto& c : scored) {
      ids.push_back(c.jd_id);
      scores.push_back(c.score);
    }
    ranked_rows.push_back(nlohmann::json{
        {"user_id", user_id}, {"jd_ids", ids}, {"click_scores", scores}});
  });
  if (labeled_groups.empty())
    throw DomainError("no candidate has click labels; cannot evaluate ranking");

  EvalRankOutput out;
  out.metrics = rank_metrics(labeled_groups);
  out.report = nlohmann::json{
      {"config_fingerprint", cfg.fingerprint()},
      {"auc", out.metrics.auc},
      {"mrr", out.metrics.mrr},
      {"per_user_auc", out.metrics.per_user_auc},
      {"users_scored", out.metrics.users_scored},
      {"users_without_positive", out.metrics.users_without_positive},
      {"flagged_users", out.metrics.flagged_users}};
  fs::create_directories(out_dir);
  atomic_write_file(out_dir / "rank_report.json", out.report.dump(2) + "\n");
  write_jsonl(out_dir / "ranked.jsonl", ranked_rows);
  return out;
}

// ---- recommend ----

inline nlohmann::json cmd_recommend(const RunConfig& cfg,
                                    const fs::path& recall_checkpoint,
                                    const fs::path& rank_checkpoint,
                                    const fs::path& data_dir,
                                    const std::string& user_id, int k,
                                    const fs::path& out_dir) {
  if (k < 1) throw DomainError("recommend: K must be >= 1");
  Dataset ds = read_dataset(data_dir);
  RecallPipeline pipe =
      pipeline_from_checkpoint(load_checkpoint(recall_checkpoint));
  check_checkpoint_dataset(pipe, ds);
  RankModel rank_model =
      rank_model_from_checkpoint(load_checkpoint(rank_checkpoint));

  const PersonJobRecord* user_rec = nullptr;
  for (const auto& r : ds.records)
    if (r.profile.user_id == user_id) {
      user_rec = &r;
      break;
    }
  if (!user_rec) throw DomainError("unknown user_id: " + user_id);

  JdIndex index = JdIndex::build(ds);
  for (const auto& rec : ds.records)
    if (!pipe.neighbors.count(rec.jd.jd_id) && pipe.model.cfg.neighbors > 0)
      pipe.neighbors[rec.jd.jd_id] =
          assign_neighbors_for_new_jd(pipe, rec.jd, index);
  std::vector<const JobDescription*> all_jds;
  for (const auto& r : ds.records) all_jds.push_back(&r.jd);
  EncodedJds encoded = encode_jds_eval(pipe.model, all_jds, pipe.neighbors,
                                       index);

  std::vector<std::pair<std::string, SkillDistribution>> pool;
  for (const auto& r : ds.records) {
    if (r.jd.jd_id == user_rec->jd.jd_id && r.profile.user_id != user_id)
      continue;
    pool.emplace_back(
        r.jd.jd_id,
        SkillDistribution{
            encoded.preds.row(encoded.row_of.at(r.jd.jd_id)).transpose()});
  }
  auto candidates = recall_candidates(user_rec->profile.skills, pool, k);

  struct Entry {
    std::string jd_id;
    double recall_score;
    double click_score;
  };
  std::vector<Entry> entries;
  {
    ad::Tape tape;
    Binding bind(tape, rank_model.params);
    for (const auto& c : candidates) {
      double p = click_probability(
          bind, rank_model.cfg,
          encoded.cls.row(encoded.row_of.at(c.jd_id)).transpose(),
          user_rec->profile.skills.probs);
      entries.push_back({c.jd_id, c.score, p});
    }
  }
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    if (a.click_score != b.click_score) return a.click_score > b.click_score;
    return a.jd_id < b.jd_id;
  });

  // Attention export for the recommended JDs.
  std::vector<nlohmann::json> attention_rows;
  for (const auto& e : entries) {
    const JobDescription* jd = index.get(e.jd_id);
    JDTuple tuple = resolve_tuple(jd, pipe.neighbors, index,
                                  pipe.model.cfg.neighbors);
    ad::Tape tape;
    Binding bind(tape, pipe.model.params);
    auto enc = encode_tuple_batch(bind, pipe.model.cfg, {tuple}, Mode::Eval,
                                  nullptr, true);
    TupleLayout layout{pipe.model.cfg.neighbors + 1, pipe.model.cfg.m_max};
    std::vector<int> counts{static_cast<int>(jd->items.size())};
    for (const auto* nb : tuple.neighbors)
      counts.push_back(static_cast<int>(nb->items.size()));
    auto rows = extract_cls_item_attention(
        enc.captures[0], pipe.model.cfg.transformer_config(), layout, counts);
    for (const auto& row : rows) {
      if (row.jd_index != 0) continue;  // central JD only
      attention_rows.push_back(nlohmann::json{{"jd_id", e.jd_id},
                                              {"layer", row.layer},
                                              {"head", row.head},
                                              {"global_head", row.global_head},
                                              {"item_weights", row.item_weights}});
    }
  }

  nlohmann::json items = nlohmann::json::array();
  for (const auto& e : entries) {
    const JobDescription* jd = index.get(e.jd_id);
    items.push_back(nlohmann::json{{"jd_id", e.jd_id},
                                   {"title_id", jd->title_id},
                                   {"recall_score", e.recall_score},
                                   {"click_score", e.click_score},
                                   {"raw_items", jd->raw_items}});
  }
  nlohmann::json report{{"config_fingerprint", cfg.fingerprint()},
                        {"user_id", user_id},
                        {"k", k},
                        {"recommendations", items}};
  fs::create_directories(out_dir);
  atomic_write_file(out_dir / "recommendations.json", report.dump(2) + "\n");
  write_jsonl(out_dir / "attention.jsonl", attention_rows);
  return report;
}

}  // namespace jobrec
