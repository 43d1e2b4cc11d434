#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qscnet/qscnet.hpp"

using namespace qscnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open " + p.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

void write_json_file(const fs::path& p, const json& j) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw DataError("cannot write " + p.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- embedders

struct EmbedderArgs {
  std::string kind = "mock";
  std::string command;
  std::string name = "external";
  fs::path scratch;

  void add(CLI::App* app) {
    app->add_option("--embedder", kind, "Query embedder: mock or external")->check(CLI::IsMember({"mock", "external"}));
    app->add_option("--embed-command", command, "External embedder command with {in} and {out} placeholders");
    app->add_option("--embed-name", name, "Identity recorded for the external embedder");
  }

  std::shared_ptr<const conditioning::Embedder> make(const fs::path& scratch_dir) const {
    if (kind == "mock") return std::make_shared<conditioning::MockEmbedder>();
    if (command.empty()) throw UsageError("--embedder external needs --embed-command");
    return std::make_shared<conditioning::ExternalEmbedder>(command, name, scratch.empty() ? scratch_dir : scratch);
  }
};

// ---------------------------------------------------------------- commands

int cmd_toy_gen(const fs::path& out, std::uint64_t seed, const dataset::ToyOptions& opt) {
  dataset::generate_toy_dataset(out, seed, opt);
  std::cout << "wrote " << opt.songs << " toy songs to " << out.string() << "\n";
  return kOk;
}

fs::path default_splits(const fs::path& root, const std::string& splits) {
  return splits.empty() ? root / "splits" : fs::path(splits);
}

int cmd_scan(const fs::path& root, const std::string& splits, const std::string& out, bool strict) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " does not exist");
  auto r = dataset::scan_dataset(root, default_splits(root, splits));
  const json j = r.report.to_json();
  if (!out.empty()) write_json_file(out, j);
  std::cout << j.dump(2) << "\n";
  if (r.report.songs_found == 0) {
    std::cerr << "no songs found under " << root.string() << "\n";
    return kData;
  }
  if (strict && !r.report.excluded.empty()) {
    std::cerr << r.report.excluded.size() << " song(s) excluded\n";
    return kData;
  }
  return kOk;
}

std::vector<dataset::SongManifest> load_split(const fs::path& root, const std::string& splits,
                                              const std::string& split) {
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " does not exist");
  auto songs = dataset::scan_dataset(root, default_splits(root, splits)).songs;
  auto picked = dataset::filter_split(songs, dataset::split_from_string(split));
  if (picked.empty()) throw DataError("no " + split + " songs under " + root.string());
  return picked;
}

dataset::PoolParams pool_params(double clip_seconds) {
  if (!(clip_seconds > 0)) throw InvalidConfig("clip length must be positive");
  dataset::PoolParams p;
  p.clip_samples = static_cast<std::size_t>(std::llround(clip_seconds * spectral::kSampleRate));
  return p;
}

int cmd_pools(const fs::path& root, const std::string& splits, const std::string& split, const std::string& vocab,
              double clip_seconds, const fs::path& out) {
  auto songs = load_split(root, splits, split);
  const auto v = dataset::vocabulary_by_name(vocab);
  auto pools = dataset::build_pools(songs, v, pool_params(clip_seconds));
  dataset::save_pools(out, pools);
  for (const auto& w : pools.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "category\tclips\tqueries\n";
  for (const auto& cat : v.categories())
    std::cout << cat << '\t' << pools.clips.size(cat) << '\t' << pools.queries.size(cat) << '\n';
  return kOk;
}

int cmd_embed_cache(const fs::path& root, const std::string& splits, const std::string& split,
                    const fs::path& pools_path, const fs::path& out, const EmbedderArgs& ea) {
  auto pools = dataset::load_pools(pools_path);
  auto songs = load_split(root, splits, split);
  dataset::FileClipSource source(songs, dataset::vocabulary_by_name(pools.vocabulary));
  auto e = ea.make(out.parent_path() / "embed-scratch");
  conditioning::EmbeddingCache cache(e->output_dim());
  if (fs::exists(out)) cache = conditioning::EmbeddingCache::load(out);
  const auto n = training::precompute_queries(pools.queries, source, *e, cache);
  cache.save(out);
  std::cout << "embedded " << n << " query clips with " << e->name() << " (" << cache.size() << " cached)\n";
  return kOk;
}

int cmd_train(CLI::App& app, const std::string& config_file, training::RunOptions opt, const std::string& preset,
              const EmbedderArgs& ea, const json& flag_train) {
  // defaults < config file < flags
  json file = config_file.empty() ? json::object() : read_json_file(config_file);
  std::string model_preset = file.value("model_preset", std::string("qscnet"));
  if (app.get_option("--model")->count()) model_preset = preset;
  opt.model = model::ModelConfig::preset(model_preset);
  if (file.contains("model")) from_json(file.at("model"), opt.model);
  json train = file.value("train", json::object());
  train.update(flag_train);
  training::from_json(train, opt.train);
  if (!train.contains("samples_per_epoch"))
    opt.train.samples_per_epoch = opt.train.batch_size * opt.train.minibatches_per_epoch;
  if (!app.get_option("--vocab")->count()) opt.vocabulary = file.value("vocabulary", opt.vocabulary);
  if (opt.dataset_root.empty()) opt.dataset_root = file.value("dataset_root", std::string());
  if (opt.splits_dir.empty()) opt.splits_dir = file.value("splits_dir", std::string());
  if (!app.get_option("--preload")->count()) opt.preload_audio = file.value("preload_audio", false);
  if (opt.dataset_root.empty()) throw UsageError("train needs --root or dataset_root in the config file");
  if (opt.train.mode == dataset::SampleMode::multi_stem) {
    opt.model.head = model::HeadKind::multi_stem;
    if (opt.model.stems.empty()) opt.model.stems = dataset::vocabulary_by_name(opt.vocabulary).categories();
  } else {
    opt.model.head = model::HeadKind::conditioned;
    opt.model.stems.clear();
    auto e = ea;
    if (file.contains("embedder") && !app.get_option("--embedder")->count()) {
      e.kind = file["embedder"].value("kind", e.kind);
      e.command = file["embedder"].value("command", e.command);
      e.name = file["embedder"].value("name", e.name);
    }
    opt.embedder = e.make(opt.run_dir / "embed-scratch");
  }
  opt.log = [](const std::string& s) { std::cout << s << std::endl; };
  auto r = training::run_training(opt);
  std::cout << "best: " << r.best_label << " at epoch " << r.best_epoch << ", validation " << r.best_score
            << " dB -> " << r.best_checkpoint.string() << "\n";
  return kOk;
}

std::string file_stem_name(const fs::path& p) { return p.stem().string(); }

int cmd_separate(const fs::path& ck_path, const fs::path& mixture_path, const std::vector<std::string>& query_paths,
                 const std::vector<std::string>& stems, const fs::path& out_dir, double chunk_seconds,
                 const EmbedderArgs& ea) {
  auto ck = training::load_checkpoint(ck_path);
  auto m = training::model_from_checkpoint(ck);
  const auto& cfg = m->config();
  if (cfg.conditioned() && query_paths.empty()) throw UsageError("conditioned checkpoint needs at least one --query");
  if (cfg.conditioned() && !stems.empty()) throw UsageError("--stem applies to multi-stem checkpoints");
  if (!cfg.conditioned() && !query_paths.empty()) throw UsageError("multi-stem checkpoint takes --stem, not --query");
  for (const auto& s : stems)
    if (std::find(cfg.stems.begin(), cfg.stems.end(), s) == cfg.stems.end())
      throw UsageError("checkpoint has no stem '" + s + "'");

  const auto mixture = audio::read_wav(mixture_path);
  const auto chunk = static_cast<std::size_t>(std::llround(chunk_seconds * spectral::kSampleRate));
  ag::NoGradGuard no_grad;
  std::vector<std::pair<std::string, std::size_t>> outputs;  // file name, output index
  std::function<std::vector<spectral::Waveform<float>>(const spectral::Waveform<float>&)> run;
  Tensor<float> queries;
  if (cfg.conditioned()) {
    auto e = ea.make(out_dir / "embed-scratch");
    const std::string trained = ck.meta.value("embedder", std::string());
    if (!trained.empty() && trained != e->name())
      throw UsageError("checkpoint was trained with embedder '" + trained + "', not '" + e->name() + "'");
    queries = Tensor<float>({query_paths.size(), cfg.embedding_dim});
    for (std::size_t k = 0; k < query_paths.size(); ++k) {
      auto q = conditioning::embed_query(*e, audio::read_wav(query_paths[k]), query_paths[k]);
      if (q.vector.size() != cfg.embedding_dim) throw InvalidInput("query embedding size does not match the model");
      std::copy(q.vector.begin(), q.vector.end(), queries.data() + k * cfg.embedding_dim);
      outputs.emplace_back(file_stem_name(query_paths[k]), k);
    }
    run = [&](const spectral::Waveform<float>& piece) {
      Tensor<float> mix({1, 2, piece.length()});
      std::copy_n(piece.samples().data(), mix.size(), mix.data());
      auto y = m->separate_queries(mix, ag::constant(queries));
      std::vector<spectral::Waveform<float>> res;
      for (std::size_t k = 0; k < query_paths.size(); ++k) {
        spectral::Waveform<float> w(piece.length());
        std::copy_n(y.value().data() + k * mix.size(), mix.size(), w.samples().data());
        res.push_back(std::move(w));
      }
      return res;
    };
  } else {
    const auto& wanted = stems.empty() ? cfg.stems : stems;
    for (const auto& s : wanted)
      outputs.emplace_back(s, std::find(cfg.stems.begin(), cfg.stems.end(), s) - cfg.stems.begin());
    run = [&](const spectral::Waveform<float>& piece) {
      Tensor<float> mix({1, 2, piece.length()});
      std::copy_n(piece.samples().data(), mix.size(), mix.data());
      std::vector<spectral::Waveform<float>> res;
      for (auto& y : m->separate(mix, {})) res.emplace_back(y.value().reshaped({2, piece.length()}));
      return res;
    };
  }
  auto est = evaluation::chunked_inference(mixture, chunk, run);
  std::set<std::string> used;
  for (const auto& [name, idx] : outputs) {
    std::string file = name;
    for (int n = 2; !used.insert(file).second; ++n) file = name + "_" + std::to_string(n);
    const auto path = out_dir / (file + ".wav");
    audio::write_wav(path, est[idx]);
    std::cout << path.string() << "\n";
  }
  return kOk;
}

int cmd_evaluate(const std::string& ck_path, const std::string& separator, const fs::path& root,
                 const std::string& splits, const std::string& split, const std::string& vocab_name,
                 std::uint64_t seed, double query_seconds, double chunk_seconds, double excerpt_seconds,
                 const fs::path& out, const EmbedderArgs& ea) {
  if (excerpt_seconds < 0) throw UsageError("--excerpt-seconds must be >= 0");
  const auto vocab = dataset::vocabulary_by_name(vocab_name);
  auto songs = load_split(root, splits, split);
  std::unique_ptr<evaluation::Separator> sep;
  std::unique_ptr<model::SeparationModel<float>> m;
  std::map<std::string, std::string> query_ids;
  if (separator == "oracle") {
    sep = std::make_unique<evaluation::OracleSeparator>();
  } else if (separator == "zero") {
    sep = std::make_unique<evaluation::ZeroSeparator>();
  } else {
    if (ck_path.empty()) throw UsageError("evaluate needs --checkpoint for the model separator");
    auto ck = training::load_checkpoint(ck_path);
    m = training::model_from_checkpoint(ck);
    const std::string identity = ck_path + ":" + ck.meta.value("identity", std::string("raw"));
    std::map<std::string, std::vector<float>> queries;
    if (m->config().conditioned()) {
      auto pools = dataset::build_pools(songs, vocab, pool_params(query_seconds));
      auto picks = evaluation::select_queries(pools.queries, vocab, seed);
      dataset::FileClipSource source(songs, vocab);
      auto e = ea.make(out.parent_path() / "embed-scratch");
      queries = evaluation::embed_queries(picks, source, *e);
      for (const auto& [cat, c] : picks) query_ids[cat] = evaluation::describe(c);
    } else if (m->config().stems != vocab.categories()) {
      throw UsageError("multi-stem checkpoint stems do not match vocabulary " + vocab.name());
    }
    const auto chunk = static_cast<std::size_t>(std::llround(chunk_seconds * spectral::kSampleRate));
    sep = std::make_unique<evaluation::ModelSeparator>(*m, std::move(queries), identity, chunk);
  }
  const auto excerpt = static_cast<std::size_t>(std::llround(excerpt_seconds * spectral::kSampleRate));
  auto report = evaluation::evaluate_testset(*sep, songs, vocab, excerpt);
  report.query_seed = seed;
  report.queries = query_ids;
  if (!out.empty()) write_json_file(out, evaluation::to_json(report));
  std::cout << evaluation::render_table(report, separator == "model" ? fs::path(ck_path).stem().string() : separator);
  for (const auto& n : report.notes) std::cout << "note: " << n << "\n";
  return kOk;
}

int cmd_compare(const fs::path& a, const fs::path& b) {
  auto ra = evaluation::report_from_json(read_json_file(a));
  auto rb = evaluation::report_from_json(read_json_file(b));
  std::cout << evaluation::render_table(ra, a.stem().string()) << evaluation::render_table(rb, b.stem().string())
            << evaluation::render_delta(evaluation::compare_reports(ra, rb));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qscnet: query-conditioned music source separation"};
  app.require_subcommand(1);

  // toy-gen
  fs::path toy_out;
  std::uint64_t toy_seed = 0;
  dataset::ToyOptions toy;
  auto* toy_cmd = app.add_subcommand("toy-gen", "Write the synthetic four-stem toy corpus");
  toy_cmd->add_option("--out", toy_out, "Output directory")->required();
  toy_cmd->add_option("--seed", toy_seed, "Generator seed");
  toy_cmd->add_option("--songs", toy.songs, "Number of songs");
  toy_cmd->add_option("--seconds", toy.seconds, "Song length in seconds");

  // shared dataset flags
  fs::path root;
  std::string splits, split = "test", vocab = "I6";
  auto add_data = [&](CLI::App* c, bool needs_root) {
    auto* o = c->add_option("--root", root, "Dataset root");
    if (needs_root) o->required();
    c->add_option("--splits", splits, "Split-list directory (default <root>/splits)");
  };

  auto* scan_cmd = app.add_subcommand("scan", "Index a dataset and report excluded songs");
  add_data(scan_cmd, true);
  std::string scan_out;
  bool strict = false;
  scan_cmd->add_option("--out", scan_out, "Write the report as JSON");
  scan_cmd->add_flag("--strict", strict, "Fail when any song is excluded");

  auto* pools_cmd = app.add_subcommand("pools", "Build clip and query pools for one split");
  add_data(pools_cmd, true);
  double clip_seconds = 10.0;
  fs::path pools_out;
  pools_cmd->add_option("--split", split, "train, valid or test")->capture_default_str();
  pools_cmd->add_option("--vocab", vocab, "I6 or I6E")->capture_default_str();
  pools_cmd->add_option("--clip-seconds", clip_seconds, "Clip length")->capture_default_str();
  pools_cmd->add_option("--out", pools_out, "Pool index file")->required();

  auto* cache_cmd = app.add_subcommand("embed-cache", "Embed every query clip of a pool index");
  add_data(cache_cmd, true);
  fs::path cache_pools, cache_out;
  EmbedderArgs embed;
  cache_cmd->add_option("--split", split, "Split the pool index was built from")->capture_default_str();
  cache_cmd->add_option("--pools", cache_pools, "Pool index file")->required();
  cache_cmd->add_option("--out", cache_out, "Embedding cache file")->required();
  embed.add(cache_cmd);

  // train: flags mirror TrainConfig
  auto* train_cmd = app.add_subcommand("train", "Train a model into a run directory");
  std::string config_file, preset = "qscnet";
  training::RunOptions run;
  std::string run_root, run_splits;
  train_cmd->add_option("--config", config_file, "JSON config layered over the defaults");
  train_cmd->add_option("--model", preset, "Model preset: qscnet, scnet6 or tiny");
  train_cmd->add_option("--root", run_root, "Dataset root");
  train_cmd->add_option("--splits", run_splits, "Split-list directory");
  train_cmd->add_option("--vocab", run.vocabulary, "I6 or I6E");
  train_cmd->add_option("--out", run.run_dir, "Run directory")->required();
  train_cmd->add_flag("--resume", run.resume, "Continue from the latest checkpoint");
  train_cmd->add_flag("--preload", run.preload_audio, "Hold training stems in memory");
  std::size_t batch_size, samples, minibatches, epochs, workers;
  double lr, clip, clip_s;
  std::vector<double> ema_decays;
  std::string mode;
  std::uint64_t seed, vseed;
  std::map<std::string, CLI::Option*> tflags;
  tflags["batch_size"] = train_cmd->add_option("--batch-size", batch_size);
  tflags["samples_per_epoch"] = train_cmd->add_option("--samples-per-epoch", samples);
  tflags["minibatches_per_epoch"] = train_cmd->add_option("--minibatches-per-epoch", minibatches);
  tflags["epochs"] = train_cmd->add_option("--epochs", epochs);
  tflags["learning_rate"] = train_cmd->add_option("--learning-rate", lr);
  tflags["grad_clip"] = train_cmd->add_option("--grad-clip", clip);
  tflags["ema_decays"] = train_cmd->add_option("--ema-decays", ema_decays)->delimiter(',');
  tflags["clip_seconds"] = train_cmd->add_option("--clip-seconds", clip_s);
  tflags["mode"] = train_cmd->add_option("--mode", mode)->check(CLI::IsMember({"conditioned", "multi_stem", "multi-stem"}));
  tflags["seed"] = train_cmd->add_option("--seed", seed);
  tflags["validation_query_seed"] = train_cmd->add_option("--validation-query-seed", vseed);
  tflags["workers"] = train_cmd->add_option("--workers", workers, "Sampler threads");
  EmbedderArgs train_embed;
  train_embed.add(train_cmd);

  auto* sep_cmd = app.add_subcommand("separate", "Separate a mixture with a checkpoint");
  std::string sep_ck;
  fs::path sep_mix, sep_out;
  std::vector<std::string> sep_queries, sep_stems;
  double chunk_seconds = 10.0;
  EmbedderArgs sep_embed;
  sep_cmd->add_option("--checkpoint", sep_ck, "Checkpoint file")->required();
  sep_cmd->add_option("--mixture", sep_mix, "Mixture wav")->required();
  sep_cmd->add_option("--query", sep_queries, "Query wav (repeatable; conditioned checkpoints)");
  sep_cmd->add_option("--stem", sep_stems, "Stem name (repeatable; multi-stem checkpoints)");
  sep_cmd->add_option("--out", sep_out, "Output directory")->required();
  sep_cmd->add_option("--chunk-seconds", chunk_seconds, "Inference chunk length")->capture_default_str();
  sep_embed.add(sep_cmd);

  auto* eval_cmd = app.add_subcommand("evaluate", "Score a checkpoint on a split");
  add_data(eval_cmd, true);
  std::string eval_ck, eval_sep = "model", eval_out;
  std::uint64_t eval_seed = 0;
  double query_seconds = 10.0, eval_chunk = 10.0, excerpt_seconds = 0.0;
  EmbedderArgs eval_embed;
  eval_cmd->add_option("--checkpoint", eval_ck, "Checkpoint file");
  eval_cmd->add_option("--separator", eval_sep, "model, oracle or zero")
      ->check(CLI::IsMember({"model", "oracle", "zero"}))
      ->capture_default_str();
  eval_cmd->add_option("--split", split, "train, valid or test")->capture_default_str();
  eval_cmd->add_option("--vocab", vocab, "I6 or I6E")->capture_default_str();
  eval_cmd->add_option("--seed", eval_seed, "Query selection seed")->capture_default_str();
  eval_cmd->add_option("--query-seconds", query_seconds, "Query clip length")->capture_default_str();
  eval_cmd->add_option("--chunk-seconds", eval_chunk, "Inference chunk length")->capture_default_str();
  eval_cmd->add_option("--excerpt-seconds", excerpt_seconds, "Score only the first N seconds (0: full tracks)")
      ->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report JSON");
  eval_embed.add(eval_cmd);

  auto* cmp_cmd = app.add_subcommand("compare", "Per-category differences between two reports (b - a)");
  fs::path cmp_a, cmp_b;
  cmp_cmd->add_option("a", cmp_a, "Report A")->required();
  cmp_cmd->add_option("b", cmp_b, "Report B")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    if (*toy_cmd) return cmd_toy_gen(toy_out, toy_seed, toy);
    if (*scan_cmd) return cmd_scan(root, splits, scan_out, strict);
    if (*pools_cmd) return cmd_pools(root, splits, split, vocab, clip_seconds, pools_out);
    if (*cache_cmd) return cmd_embed_cache(root, splits, split, cache_pools, cache_out, embed);
    if (*train_cmd) {
      json flags = json::object();
      for (const auto& [key, o] : tflags)
        if (o->count()) {
          if (key == "ema_decays")
            flags[key] = ema_decays;
          else if (key == "mode")
            flags[key] = mode;
          else if (key == "learning_rate" || key == "grad_clip" || key == "clip_seconds")
            flags[key] = o->as<double>();
          else
            flags[key] = o->as<std::uint64_t>();
        }
      run.dataset_root = run_root;
      run.splits_dir = run_splits;
      return cmd_train(*train_cmd, config_file, run, preset, train_embed, flags);
    }
    if (*sep_cmd) return cmd_separate(sep_ck, sep_mix, sep_queries, sep_stems, sep_out, chunk_seconds, sep_embed);
    if (*eval_cmd)
      return cmd_evaluate(eval_ck, eval_sep, root, splits, split, vocab, eval_seed, query_seconds, eval_chunk,
                          excerpt_seconds, eval_out, eval_embed);
    if (*cmp_cmd) return cmd_compare(cmp_a, cmp_b);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidConfig& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kUsage;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kUsage;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "invalid configuration: " << e.what() << "\n";
    return kUsage;
  }
  return kUsage;
}
