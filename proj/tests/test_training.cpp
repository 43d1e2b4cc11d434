#include <gtest/gtest.h>

#include <algorithm>
#include <fstream>

#include "qscnet/dataset/toy.hpp"
#include "qscnet/training/run.hpp"
#include "support/tempdir.hpp"

using namespace qscnet;
using namespace qscnet::training;

namespace {

Tensor<float> random_tensor(Shape s, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  Tensor<float> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-scale, scale));
  return t;
}

model::ModelConfig tiny_config(std::size_t q = 16) {
  auto c = model::ModelConfig::tiny();
  c.frame_length = 256;
  c.hop = 64;
  c.embedding_dim = q;
  c.film_hidden = 8;
  return c;
}

Batch fixed_batch(std::size_t B = 2, std::size_t N = 2048, std::size_t q = 16) {
  Batch b;
  b.mixtures = random_tensor({B, 2, N}, 1, 0.3);
  b.targets = {b.mixtures};
  for (auto& v : b.targets[0].values()) v *= 0.5f;
  b.queries = random_tensor({B, q}, 2);
  return b;
}

std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

// --- loss ---------------------------------------------------------------

TEST(RmseLoss, TrivialCases) {
  auto t = random_tensor({2, 2, 50}, 3);
  EXPECT_EQ(rmse_loss(ag::constant(t), t).value()[0], 0.0f);
  auto p = t;
  for (auto& v : p.values()) v += 0.5f;
  EXPECT_NEAR(rmse_loss(ag::constant(p), t).value()[0], 0.5f, 1e-6);
  EXPECT_THROW(rmse_loss(ag::constant(Tensor<float>({2, 3})), Tensor<float>({3, 2})), InvalidInput);
}

TEST(RmseLoss, MatchesDoubleOracle) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto a = random_tensor({3, 2, 777}, seed), b = random_tensor({3, 2, 777}, seed + 100);
    double ss = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double d = double(a[i]) - double(b[i]);
      ss += d * d;
    }
    EXPECT_NEAR(rmse_loss(ag::constant(a), b).value()[0], std::sqrt(ss / double(a.size())), 1e-6);
  }
}

TEST(RmseLoss, GradientMatchesFiniteDifference) {
  auto t = random_tensor({1, 2, 8}, 4).cast<double>();
  auto p0 = random_tensor({1, 2, 8}, 5).cast<double>();
  ag::Var<double> p(p0, true);
  ag::backward(rmse_loss(p, t));
  for (std::size_t i = 0; i < p0.size(); ++i) {
    auto hi = p0, lo = p0;
    hi[i] += 1e-6;
    lo[i] -= 1e-6;
    const double fd = (rmse_loss(ag::constant(hi), t).value()[0] - rmse_loss(ag::constant(lo), t).value()[0]) / 2e-6;
    EXPECT_NEAR(p.grad()[i], fd, 1e-7);
  }
}

TEST(RmseLoss, MultiStemIsMeanOfStems) {
  auto cfg = tiny_config();
  cfg.head = model::HeadKind::multi_stem;
  cfg.stems = {"a", "b"};
  model::SeparationModel<float> m(cfg, 1);
  Batch b = fixed_batch();
  b.targets = {random_tensor({2, 2, 2048}, 8, 0.1), random_tensor({2, 2, 2048}, 9, 0.1)};
  b.queries = {};
  auto outs = m.separate(b.mixtures, {});
  const double expect = 0.5 * (rmse_loss(outs[0], b.targets[0]).value()[0] + rmse_loss(outs[1], b.targets[1]).value()[0]);
  EXPECT_NEAR(batch_loss(m, b).value()[0], expect, 1e-6);
}

// --- optimizer and EMA --------------------------------------------------

TEST(Adam, ZeroLearningRateLeavesParametersIdentical) {
  model::SeparationModel<float> m(tiny_config(), 3);
  const auto before = m.parameters().snapshot();
  Adam<float> opt({0.0});
  for (int i = 0; i < 2; ++i) train_step(m, opt, fixed_batch());
  EXPECT_EQ(m.parameters().snapshot(), before);
  EXPECT_EQ(opt.steps(), 2u);
}

TEST(Adam, FirstStepMovesBySignTimesLearningRate) {
  model::ParameterStore<double> store;
  auto w = store.add("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
  w.mutable_grad() = Tensor<double>({3}, std::vector<double>{0.3, -4.0, 0.0});
  Adam<double> opt({0.01});
  EXPECT_NEAR(opt.step(store), std::sqrt(0.09 + 16.0), 1e-12);
  EXPECT_NEAR(w.value()[0], 0.99, 1e-9);
  EXPECT_NEAR(w.value()[1], -1.99, 1e-9);
  EXPECT_EQ(w.value()[2], 0.5);
  w.mutable_grad()[0] = std::nan("");
  EXPECT_THROW(opt.step(store), NumericalError);
}

TEST(Adam, GlobalClipBoundsTheUpdate) {
  model::ParameterStore<double> store;
  auto w = store.add("w", Tensor<double>({2}));
  w.mutable_grad() = Tensor<double>({2}, std::vector<double>{3.0, 4.0});
  Adam<double> opt({1.0, 0.0, 0.0, 0.0, 1.0});  // beta 0: update = lr * sign(g)
  EXPECT_NEAR(opt.step(store), 5.0, 1e-12);
  EXPECT_NEAR(w.value()[0], -1.0, 1e-12);
  EXPECT_NEAR(w.value()[1], -1.0, 1e-12);
}

TEST(Ema, ClosedForms) {
  model::ParameterStore<float> store;
  auto w = store.add("w", Tensor<float>({4}, 0.0f));
  auto ema = EmaState<float>::from(store, {0.0, 1.0, 0.5});
  w.mutable_value().fill(3.0f);
  for (int k = 1; k <= 6; ++k) {
    ema_update(ema, store);
    EXPECT_EQ(ema.shadows[0].at("w")[0], 3.0f);
    EXPECT_EQ(ema.shadows[1].at("w")[0], 0.0f);
    EXPECT_NEAR(ema.shadows[2].at("w")[2], 3.0 * (1.0 - std::pow(2.0, -k)), 1e-6);
  }
  EXPECT_EQ(ema.update_count, 6u);
  EXPECT_THROW(EmaState<float>::from(store, {1.5}), InvalidConfig);
}

TEST(Ema, ShapeDriftIsAContractError) {
  model::ParameterStore<float> a, b;
  a.add("w", Tensor<float>({4}));
  b.add("w", Tensor<float>({5}));
  auto ema = EmaState<float>::from(a, {0.9});
  EXPECT_THROW(ema_update(ema, b), ContractError);
}

// --- training steps -----------------------------------------------------

TEST(TrainStep, OverfitsFixedExample) {
  model::SeparationModel<float> m(tiny_config(), 7);
  Adam<float> opt({3e-3});
  const Batch b = fixed_batch();
  std::vector<double> losses;
  for (int i = 0; i < 50; ++i) losses.push_back(train_step(m, opt, b).loss);
  const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0);
  const double last = std::accumulate(losses.end() - 10, losses.end(), 0.0);
  EXPECT_LT(last, first);
  EXPECT_LT(losses.back(), losses.front());
}

TEST(TrainStep, FilmReceivesGradient) {
  model::SeparationModel<float> m(tiny_config(), 2);
  m.parameters().zero_grad();
  ag::backward(batch_loss(m, fixed_batch()));
  std::size_t film = 0, nonzero = 0;
  for (const auto& [name, v] : m.parameters().entries()) {
    if (name.rfind("film.", 0) != 0) continue;
    ++film;
    if (max_abs(v.grad().values()) > 0) ++nonzero;
  }
  EXPECT_GT(film, 0u);
  EXPECT_EQ(nonzero, film);
}

TEST(TrainStep, NonFiniteLossThrows) {
  model::SeparationModel<float> m(tiny_config(), 2);
  Adam<float> opt;
  Batch b = fixed_batch();
  b.targets[0][5] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(train_step(m, opt, b), NumericalError);
}

TEST(TrainConfig, Invariants) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.steps_per_epoch(), 4000u);
  EXPECT_EQ(c.clip_samples(), 441000u);
  c.samples_per_epoch = 31999;
  EXPECT_THROW(c.validate(), InvalidConfig);
  c.with_steps(4, 25);
  EXPECT_EQ(c.samples_per_epoch, 100u);
  EXPECT_EQ(c.steps_per_epoch(), 25u);
  c.epochs = 0;
  EXPECT_THROW(c.validate(), InvalidConfig);
  TrainConfig d;
  d.mode = dataset::SampleMode::multi_stem;
  d.ema_decays = {0.5};
  nlohmann::json j = d;
  EXPECT_EQ(j.get<TrainConfig>().mode, d.mode);
  EXPECT_EQ(j.get<TrainConfig>().ema_decays, d.ema_decays);
}

// --- selection ----------------------------------------------------------

TEST(SelectBest, ArgmaxIndependentOfOrder) {
  auto table = [](float v) { return model::NamedTensors<float>{{"w", Tensor<float>({1}, v)}}; };
  auto score = [](const model::NamedTensors<float>& p) { return double(p.at("w")[0]); };
  std::vector<Candidate> c{{"raw", table(1.0f)}, {"ema0.99", table(3.0f)}, {"ema0.999", table(2.0f)}};
  auto s = select_best(c, score);
  EXPECT_EQ(s.label, "ema0.99");
  EXPECT_EQ(s.score, 3.0);
  EXPECT_EQ(s.scores.size(), 3u);
  std::sort(c.begin(), c.end(), [](auto& a, auto& b) { return a.label < b.label; });
  do {
    EXPECT_EQ(select_best(c, score).label, "ema0.99");
  } while (std::next_permutation(c.begin(), c.end(), [](auto& a, auto& b) { return a.label < b.label; }));
  std::vector<Candidate> tie{{"raw", table(1.0f)}, {"ema0.5", table(1.0f)}};
  EXPECT_EQ(select_best(tie, score).label, "ema0.5");
  std::reverse(tie.begin(), tie.end());
  EXPECT_EQ(select_best(tie, score).label, "ema0.5");
  EXPECT_EQ(select_best({{"raw", table(-4.0f)}}, score).label, "raw");
  EXPECT_THROW(select_best({}, score), InvalidInput);
}

// --- checkpoints ----------------------------------------------------------

TEST(Checkpoint, RoundTripRebuildsModel) {
  fixtures::TempDir dir;
  auto cfg = tiny_config();
  model::SeparationModel<float> m(cfg, 9);
  Checkpoint ck;
  ck.meta = {{"model", cfg}, {"epoch", 3}};
  ck.tables["params"] = m.parameters().snapshot();
  ck.tables["ema0.5"] = m.parameters().snapshot();
  save_checkpoint(dir / "c.qsck", ck);
  EXPECT_FALSE(std::filesystem::exists(dir / "c.qsck.tmp"));
  auto back = load_checkpoint(dir / "c.qsck");
  EXPECT_EQ(back.meta, ck.meta);
  EXPECT_EQ(back.tables, ck.tables);
  auto rebuilt = model_from_checkpoint(back);
  EXPECT_EQ(rebuilt->config(), cfg);
  EXPECT_EQ(rebuilt->parameters().snapshot(), m.parameters().snapshot());
  EXPECT_THROW(back.table("adam.m"), DataError);
}

TEST(Checkpoint, RejectsGarbage) {
  fixtures::TempDir dir;
  std::ofstream(dir / "bad.qsck") << "not a checkpoint";
  EXPECT_THROW(load_checkpoint(dir / "bad.qsck"), DataError);
  EXPECT_THROW(load_checkpoint(dir / "missing.qsck"), DataError);
  Checkpoint ck;
  ck.tables["params"]["w"] = Tensor<float>({100});
  save_checkpoint(dir / "t.qsck", ck);
  std::filesystem::resize_file(dir / "t.qsck", std::filesystem::file_size(dir / "t.qsck") - 8);
  EXPECT_THROW(load_checkpoint(dir / "t.qsck"), DataError);
}

// --- epochs and runs --------------------------------------------------------

class ToyRun : public ::testing::Test {
 protected:
  void SetUp() override { dataset::generate_toy_dataset(data.path(), 3, {3, 2.0}); }

  RunOptions options(const std::filesystem::path& run, std::size_t epochs) const {
    RunOptions o;
    o.run_dir = run;
    o.dataset_root = data.path();
    o.model = tiny_config(conditioning::kEmbeddingDim);
    o.train.with_steps(2, 3);
    o.train.epochs = epochs;
    o.train.clip_seconds = 0.25;
    o.train.learning_rate = 1e-3;
    o.train.seed = 5;
    o.embedder = std::make_shared<conditioning::MockEmbedder>();
    return o;
  }

  fixtures::TempDir data;
};

TEST_F(ToyRun, EpochIsDeterministic) {
  auto songs = dataset::scan_dataset(data.path(), data / "splits").songs;
  auto v = dataset::vocabulary_i6();
  dataset::PoolParams p;
  p.clip_samples = 11025;
  auto pools = dataset::build_pools(songs, v, p);
  auto src = std::make_shared<dataset::FileClipSource>(songs, v);
  dataset::MixSampler sampler(pools, v, src, {});
  auto queries = cached_queries(std::make_shared<conditioning::MockEmbedder>(),
                                std::make_shared<conditioning::EmbeddingCache>());
  TrainConfig cfg;
  cfg.with_steps(2, 4);
  cfg.learning_rate = 1e-3;
  auto run = [&](std::size_t workers) {
    auto mc = tiny_config(conditioning::kEmbeddingDim);
    model::SeparationModel<float> m(mc, 1);
    Adam<float> opt;
    cfg.workers = workers;
    std::size_t calls = 0;
    auto st = train_epoch(m, sampler, queries, cfg, opt, 0, [&](std::size_t, double) { ++calls; });
    EXPECT_EQ(calls, 4u);
    EXPECT_EQ(opt.steps(), 4u);
    return std::make_pair(st.losses, m.parameters().snapshot());
  };
  auto a = run(0), b = run(0), c = run(2);
  EXPECT_EQ(a.first, b.first);
  EXPECT_EQ(a.second, b.second);
  EXPECT_EQ(a.first, c.first);
  EXPECT_EQ(a.second, c.second);
}

TEST_F(ToyRun, ModeMismatchIsRejected) {
  auto o = options(data / "run", 1);
  o.train.mode = dataset::SampleMode::multi_stem;
  EXPECT_THROW(run_training(o), InvalidConfig);
}

TEST_F(ToyRun, RunWritesArtifactsAndResumes) {
  fixtures::TempDir out;
  auto full = run_training(options(out / "full", 2));
  EXPECT_EQ(full.epochs_completed, 2u);
  for (const char* f : {"config.json", "metrics.jsonl", "timing.jsonl", "checkpoints/latest.qsck",
                        "checkpoints/best.qsck", "reports/scan.json", "reports/pools_train.tsv", "embeddings.qemb"})
    EXPECT_TRUE(std::filesystem::exists(out / "full" / f)) << f;
  auto best = load_checkpoint(out / "full/checkpoints/best.qsck");
  EXPECT_EQ(best.meta.at("identity"), full.best_label);
  EXPECT_FALSE(best.tables.count("adam.m"));

  // One epoch, then resume to two: same metrics and weights as the straight run.
  run_training(options(out / "split", 1));
  EXPECT_THROW(run_training(options(out / "split", 2)), InvalidInput);
  auto o = options(out / "split", 2);
  o.resume = true;
  auto resumed = run_training(o);
  EXPECT_EQ(resumed.epochs_completed, 2u);
  EXPECT_EQ(load_checkpoint(out / "split/checkpoints/latest.qsck").meta.at("epoch"), 2);
  EXPECT_EQ(read_text(out / "split/metrics.jsonl"), read_text(out / "full/metrics.jsonl"));
  EXPECT_EQ(load_checkpoint(out / "split/checkpoints/latest.qsck").tables,
            load_checkpoint(out / "full/checkpoints/latest.qsck").tables);
}

TEST_F(ToyRun, MultiStemRun) {
  fixtures::TempDir out;
  auto o = options(out / "ms", 1);
  o.model.head = model::HeadKind::multi_stem;
  o.train.mode = dataset::SampleMode::multi_stem;
  o.embedder.reset();
  auto r = run_training(o);
  EXPECT_EQ(r.epochs_completed, 1u);
  auto ck = load_checkpoint(r.best_checkpoint);
  EXPECT_EQ(ck.model_config().stems, dataset::vocabulary_i6().categories());
}

TEST_F(ToyRun, MissingValidationSplitFails) {
  fixtures::TempDir out;
  std::ofstream(data / "splits/valid.txt", std::ios::trunc);
  std::ofstream(data / "splits/test.txt", std::ios::trunc);
  std::ofstream(data / "splits/train.txt", std::ios::trunc) << "toy_00\ntoy_01\ntoy_02\n";
  EXPECT_THROW(run_training(options(out / "r", 1)), DataError);
}
