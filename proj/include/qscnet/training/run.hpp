#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscnet/dataset/manifest.hpp"
#include "qscnet/dataset/pools.hpp"
#include "qscnet/evaluation/evaluate.hpp"
#include "qscnet/training/checkpoint.hpp"
#include "qscnet/training/trainer.hpp"

namespace qscnet::training {

namespace fs = std::filesystem;

struct RunOptions {
  fs::path run_dir;
  fs::path dataset_root;
  fs::path splits_dir;  // empty: <dataset_root>/splits
  std::string vocabulary = "I6";
  model::ModelConfig model = model::ModelConfig::qscnet();
  TrainConfig train;
  std::shared_ptr<const conditioning::Embedder> embedder;  // conditioned mode only
  dataset::PoolParams pool_params;                          // clip_samples comes from train.clip_seconds
  bool resume = false;
  bool preload_audio = false;  // keep training stems in memory instead of reading clips from disk
  std::function<void(const std::string&)> log;
};

struct RunResult {
  std::size_t epochs_completed = 0;
  std::string best_label;
  double best_score = 0;
  std::size_t best_epoch = 0;
  fs::path best_checkpoint;
};

/// Paths inside a run directory.
struct RunLayout {
  fs::path root;
  fs::path config() const { return root / "config.json"; }
  fs::path metrics() const { return root / "metrics.jsonl"; }
  fs::path timing() const { return root / "timing.jsonl"; }
  fs::path latest() const { return root / "checkpoints" / "latest.qsck"; }
  fs::path best() const { return root / "checkpoints" / "best.qsck"; }
  fs::path reports() const { return root / "reports"; }
  fs::path embeddings() const { return root / "embeddings.qemb"; }
};

namespace detail {

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Keeps metric records of epochs up to `epochs`, dropping any written
/// after the checkpoint being resumed.
inline void truncate_jsonl(const fs::path& path, std::size_t epochs) {
  if (!fs::exists(path)) return;
  std::ifstream in(path);
  std::vector<std::string> keep;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    if (nlohmann::json::parse(line).value("epoch", std::size_t{0}) <= epochs) keep.push_back(line);
  }
  in.close();
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : keep) out << l << '\n';
}

inline void append_jsonl(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  out << j.dump() << '\n';
}

}  // namespace detail

/// Validation objective of one parameter table: mean track SNR over the
/// validation songs with fixed queries.
class Validator {
 public:
  Validator(const model::ModelConfig& cfg, std::vector<evaluation::SongContext> songs, dataset::Vocabulary v,
            std::map<std::string, std::vector<float>> queries)
      : model_(cfg), songs_(std::move(songs)), vocab_(std::move(v)), queries_(std::move(queries)) {
    if (songs_.empty()) throw DataError("empty validation set");
  }

  evaluation::EvaluationReport report(const model::NamedTensors<float>& params) {
    model_.parameters().load(params);
    evaluation::ModelSeparator sep(model_, queries_, "validation");
    return evaluation::evaluate_songs(sep, songs_, vocab_);
  }

  double score(const model::NamedTensors<float>& params) { return evaluation::mean_track_snr(report(params)); }

 private:
  model::SeparationModel<float> model_;
  std::vector<evaluation::SongContext> songs_;
  dataset::Vocabulary vocab_;
  std::map<std::string, std::vector<float>> queries_;
};

/// Full training run: scan, pools, query embeddings, epochs with per-epoch
/// EMA and validation selection, checkpoints and metric logs. With
/// `resume`, continues from the latest checkpoint.
inline RunResult run_training(RunOptions opt) {
  auto say = [&](const std::string& s) {
    if (opt.log) opt.log(s);
  };
  auto& tc = opt.train;
  tc.validate();
  const bool conditioned = tc.mode == dataset::SampleMode::conditioned;
  const auto vocab = dataset::vocabulary_by_name(opt.vocabulary);
  if (conditioned != opt.model.conditioned()) throw InvalidConfig("model head does not match the training mode");
  if (!conditioned) {
    if (opt.model.stems.empty()) opt.model.stems = vocab.categories();
    if (opt.model.stems != vocab.categories())
      throw InvalidConfig("multi-stem model stems must equal the " + vocab.name() + " categories");
  }
  if (conditioned && !opt.embedder) throw InvalidConfig("conditioned training needs a query embedder");
  if (conditioned && opt.embedder->output_dim() != opt.model.embedding_dim)
    throw InvalidConfig("embedder dimension does not match model embedding_dim");
  model::validate(opt.model);

  RunLayout dir{opt.run_dir};
  const bool has_latest = fs::exists(dir.latest());
  if (has_latest && !opt.resume)
    throw InvalidInput("run directory " + opt.run_dir.string() + " already holds a checkpoint; resume it instead");

  // ---- data
  const fs::path splits = opt.splits_dir.empty() ? opt.dataset_root / "splits" : opt.splits_dir;
  auto scan = dataset::scan_dataset(opt.dataset_root, splits);
  detail::write_json(dir.reports() / "scan.json", scan.report.to_json());
  auto train_songs = dataset::filter_split(scan.songs, dataset::Split::train);
  auto valid_songs = dataset::filter_split(scan.songs, dataset::Split::valid);
  if (train_songs.empty()) throw DataError("no training songs under " + opt.dataset_root.string());
  if (valid_songs.empty()) throw DataError("empty validation set");

  auto pp = opt.pool_params;
  pp.clip_samples = tc.clip_samples();
  auto pools = dataset::build_pools(train_songs, vocab, pp);
  auto valid_pools = dataset::build_pools(valid_songs, vocab, pp);
  dataset::save_pools(dir.reports() / "pools_train.tsv", pools);
  dataset::save_pools(dir.reports() / "pools_valid.tsv", valid_pools);
  for (const auto& w : pools.warnings) say("pools: " + w);

  std::shared_ptr<const dataset::ClipSource> source;
  if (opt.preload_audio) {
    dataset::SongTracks tracks;
    for (const auto& m : train_songs) tracks[m.song_id] = dataset::build_stem_tracks(m, vocab);
    source = std::make_shared<dataset::MemoryClipSource>(std::move(tracks));
  } else {
    source = std::make_shared<dataset::FileClipSource>(train_songs, vocab);
  }
  dataset::SamplerConfig sc;
  sc.mode = tc.mode;
  sc.seed = tc.seed;
  dataset::MixSampler sampler(pools, vocab, source, sc);

  // ---- queries
  auto cache = std::make_shared<conditioning::EmbeddingCache>(opt.model.embedding_dim);
  QueryProvider queries;
  std::map<std::string, std::vector<float>> valid_queries;
  std::map<std::string, std::string> valid_query_ids;
  std::vector<evaluation::SongContext> valid_ctx;
  for (const auto& m : valid_songs) valid_ctx.push_back(evaluation::song_context(m, vocab));
  if (conditioned) {
    if (fs::exists(dir.embeddings())) *cache = conditioning::EmbeddingCache::load(dir.embeddings());
    const auto n = precompute_queries(pools.queries, *source, *opt.embedder, *cache);
    say("embedded " + std::to_string(n) + " training queries");
    dataset::FileClipSource valid_source(valid_songs, vocab);
    auto picks = evaluation::select_queries(valid_pools.queries, vocab, tc.validation_query_seed);
    valid_queries = evaluation::embed_queries(picks, valid_source, *opt.embedder, cache.get());
    for (const auto& [cat, c] : picks) valid_query_ids[cat] = evaluation::describe(c);
    if (valid_queries.empty()) throw DataError("validation songs have no usable query clips");
    cache->save(dir.embeddings());
    queries = cached_queries(opt.embedder, cache);
  }
  Validator validator(opt.model, std::move(valid_ctx), vocab, valid_queries);

  // ---- state
  model::SeparationModel<float> net(opt.model, tc.seed);
  Adam<float> adam({tc.learning_rate, 0.9, 0.999, 1e-8, tc.grad_clip});
  auto ema = EmaState<float>::from(net.parameters(), tc.ema_decays);
  std::size_t start = 0;
  RunResult result;
  result.best_score = -std::numeric_limits<double>::infinity();
  if (has_latest) {
    auto ck = load_checkpoint(dir.latest());
    if (!(ck.model_config() == opt.model)) throw InvalidConfig("model config differs from the checkpoint being resumed");
    net.parameters().load(ck.params());
    adam.restore(ck.table("adam.m"), ck.table("adam.v"), ck.meta.at("adam_steps").get<std::uint64_t>());
    if (ck.meta.at("ema_decays").get<std::vector<double>>() != tc.ema_decays)
      throw InvalidConfig("EMA decays differ from the checkpoint being resumed");
    for (std::size_t k = 0; k < ema.decays.size(); ++k) ema.shadows[k] = ck.table(EmaState<float>::label(ema.decays[k]));
    ema.update_count = ck.meta.at("ema_updates").get<std::uint64_t>();
    start = ck.meta.at("epoch").get<std::size_t>();
    const auto& best = ck.meta.at("best");
    result.best_label = best.at("label").get<std::string>();
    result.best_score = best.at("score").get<double>();
    result.best_epoch = best.at("epoch").get<std::size_t>();
    detail::truncate_jsonl(dir.metrics(), start);
    detail::truncate_jsonl(dir.timing(), start);
    say("resuming after epoch " + std::to_string(start));
  } else {
    fs::remove(dir.metrics());
    fs::remove(dir.timing());
  }
  result.epochs_completed = start;

  nlohmann::json snapshot = {{"model", opt.model},
                             {"train", tc},
                             {"dataset_root", opt.dataset_root.string()},
                             {"splits_dir", splits.string()},
                             {"vocabulary", vocab.name()},
                             {"embedder", conditioned ? opt.embedder->name() : ""},
                             {"pool_params",
                              {{"clip_samples", pp.clip_samples},
                               {"spacing_samples", pp.spacing_samples},
                               {"reject_zero_fraction", pp.reject_zero_fraction},
                               {"query_max_zero_fraction", pp.query_max_zero_fraction},
                               {"zero_epsilon", pp.zero_epsilon}}},
                             {"validation_queries", valid_query_ids}};
  detail::write_json(dir.config(), snapshot);

  auto make_checkpoint = [&](const model::NamedTensors<float>& params, const std::string& identity,
                             bool with_state) {
    Checkpoint ck;
    ck.meta = {{"model", opt.model},
               {"train", tc},
               {"vocabulary", vocab.name()},
               {"embedder", snapshot["embedder"]},
               {"epoch", result.epochs_completed},
               {"identity", identity},
               {"adam_steps", adam.steps()},
               {"ema_decays", ema.decays},
               {"ema_updates", ema.update_count},
               {"validation_query_seed", tc.validation_query_seed},
               {"best", {{"label", result.best_label}, {"score", result.best_score}, {"epoch", result.best_epoch}}}};
    ck.tables["params"] = params;
    if (with_state) {
      for (std::size_t k = 0; k < ema.decays.size(); ++k)
        ck.tables[EmaState<float>::label(ema.decays[k])] = ema.shadows[k];
      ck.tables["adam.m"] = adam.first_moments();
      ck.tables["adam.v"] = adam.second_moments();
    }
    return ck;
  };

  for (std::size_t epoch = start; epoch < tc.epochs; ++epoch) {
    EpochStats st;
    try {
      st = train_epoch(net, sampler, queries, tc, adam, epoch);
    } catch (const NumericalError& e) {
      detail::write_json(dir.reports() / "nonfinite.json",
                         {{"epoch", epoch + 1}, {"error", e.what()}, {"adam_steps", adam.steps()}});
      save_checkpoint(dir.root / "checkpoints" / "nonfinite.qsck",
                      make_checkpoint(net.parameters().snapshot(), "raw", true));
      throw;
    }
    ema_update(ema, net.parameters());
    result.epochs_completed = epoch + 1;

    std::vector<Candidate> candidates{{"raw", net.parameters().snapshot()}};
    for (std::size_t k = 0; k < ema.decays.size(); ++k)
      candidates.push_back({EmaState<float>::label(ema.decays[k]), ema.shadows[k]});
    auto sel = select_best(candidates, [&](const model::NamedTensors<float>& p) { return validator.score(p); });
    const bool improved = sel.score > result.best_score;
    if (improved) {
      result.best_label = sel.label;
      result.best_score = sel.score;
      result.best_epoch = epoch + 1;
      for (const auto& c : candidates)
        if (c.label == sel.label) save_checkpoint(dir.best(), make_checkpoint(c.parameters, c.label, false));
    }

    nlohmann::json rec = st;
    rec.erase("seconds");
    rec.erase("examples_per_second");
    rec["epoch"] = epoch + 1;
    rec["validation"] = sel.scores;
    rec["selected"] = sel.label;
    rec["best"] = {{"label", result.best_label}, {"score", result.best_score}, {"epoch", result.best_epoch}};
    detail::append_jsonl(dir.metrics(), rec);
    detail::append_jsonl(dir.timing(),
                         {{"epoch", epoch + 1}, {"seconds", st.seconds}, {"examples_per_second", st.examples_per_second}});
    save_checkpoint(dir.latest(), make_checkpoint(net.parameters().snapshot(), "raw", true));
    if (conditioned) cache->save(dir.embeddings());
    say("epoch " + std::to_string(epoch + 1) + "/" + std::to_string(tc.epochs) + " loss " +
        std::to_string(st.mean_loss) + " valid " + sel.label + " " + std::to_string(sel.score) + " dB" +
        (improved ? " (best)" : ""));
  }
  result.best_checkpoint = dir.best();
  return result;
}

}  // namespace qscnet::training
