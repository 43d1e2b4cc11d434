// Acceptance checks P1-P10. With no arguments every check runs; otherwise
// only the named ones (e.g. `acceptance P2 P7`). Exit status is nonzero if
// any selected check fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "qscnet/qscnet.hpp"
#include "support/configs.hpp"
#include "support/oracles.hpp"
#include "support/tempdir.hpp"

using namespace qscnet;
using spectral::Waveform;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Check {
  const char* id;
  const char* title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Tensor<float> random_mix(std::size_t batch, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<float> t({batch, 2, n});
  for (auto& v : t.values()) v = static_cast<float>(rng.uniform(-1, 1));
  return t;
}

template <typename T>
ag::Var<T> random_var(Shape s, std::uint64_t seed) {
  Rng rng(seed);
  Tensor<T> t(std::move(s));
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-1, 1));
  return ag::constant(std::move(t));
}

Outcome p1_round_trip() {
  Rng rng(2024);
  double worst = 0;
  for (int i = 0; i < 100; ++i) {
    const auto n = static_cast<std::size_t>(rng.uniform(1.0, 10.0) * spectral::kSampleRate);
    Waveform<float> w(n);
    double peak = 0;
    for (auto& v : w.samples().values()) {
      v = static_cast<float>(rng.uniform(-1, 1));
      peak = std::max(peak, std::abs(double(v)));
    }
    auto back = spectral::istft(spectral::stft(w, 4096, 1024));
    if (back.length() != n) return {false, fmt("clip %d: length %zu != %zu", i, back.length(), n)};
    double err = 0;
    for (std::size_t k = 0; k < w.samples().size(); ++k)
      err = std::max(err, std::abs(double(back.samples()[k]) - double(w.samples()[k])));
    worst = std::max(worst, err / peak);
  }
  return {worst <= 1e-6, fmt("worst relative Linf %.3g over 100 clips (limit 1e-6)", worst)};
}

Outcome p2_film_identity() {
  auto c = fixtures::small_config();
  model::SeparationModel<float> m(c, 12);
  conditioning::freeze_identity(m.film());
  int equal = 0;
  for (int i = 0; i < 10; ++i) {
    auto mix = random_mix(1, 300 + 97 * i, i);
    auto q = random_var<float>({1, c.embedding_dim}, 100 + i);
    equal += m.separate(mix, q)[0].value() == m.separate_body(mix)[0].value();
  }
  return {equal == 10, fmt("%d/10 inputs bit-equal", equal)};
}

Outcome p3_shape_duality() {
  Rng rng(77);
  int ok = 0;
  std::string first_bad;
  for (int i = 0; i < 25; ++i) {
    auto c = fixtures::random_valid_config(rng);
    try {
      model::validate(c);
      model::SeparationModel<float> m(c, i);
      const std::size_t T = 1 + rng.index(9);
      const Shape want{1, 4, c.input_bins(), T};
      auto enc = m.encode(random_var<float>(want, i));
      bool good = true;
      for (const auto& mask : m.decode(m.neck(enc.latent), enc)) good &= mask.shape() == want;
      auto wave = m.separate_body(random_mix(1, 1000 + 37 * i, i))[0];
      good &= wave.shape() == (Shape{1, 2, 1000 + 37 * std::size_t(i)});
      ok += good;
      if (!good && first_bad.empty()) first_bad = nlohmann::json(c).dump();
    } catch (const std::exception& e) {
      if (first_bad.empty()) first_bad = e.what();
    }
  }
  return {ok == 25, fmt("%d/25 configs keep F and T", ok) + (first_bad.empty() ? "" : "; first failure " + first_bad)};
}

Outcome p4_gradients() {
  auto c = fixtures::gradient_config();
  model::SeparationModel<double> m(c, 21);
  const auto count = m.parameters().count();
  Rng rng(4);
  Tensor<double> mix({2, 2, 40}), target({2, 2, 40});
  for (auto& v : mix.values()) v = rng.uniform(-1, 1);
  for (auto& v : target.values()) v = rng.uniform(-1, 1);
  auto q = random_var<double>({2, c.embedding_dim}, 9);
  auto loss = [&] {
    auto d = ag::sub(m.separate(mix, q)[0], ag::constant(target));
    return ag::mean(ag::mul(d, d));
  };
  std::vector<ag::Var<double>> params;
  for (const auto& [_, v] : m.parameters().entries()) params.push_back(v);
  auto r = oracle::check_gradients(loss, params, 1e-3, 1e-6, 1e-7);
  return {count <= 5000 && r.fraction() >= 0.95 && r.worst <= 1e-2,
          fmt("%zu params, %.2f%% within 1e-3, worst %.3g", count, 100 * r.fraction(), r.worst)};
}

Outcome p5_toy_training() {
  fixtures::TempDir tmp("qscnet-p5");
  const auto data = tmp / "toy";
  dataset::generate_toy_dataset(data, 7, {6, 12.0});

  training::RunOptions o;
  o.run_dir = tmp / "run";
  o.dataset_root = data;
  o.model = model::ModelConfig::tiny();
  o.train.with_steps(4, 250);
  o.train.epochs = 6;
  o.train.learning_rate = 2e-3;
  o.train.clip_seconds = 0.5;
  o.train.seed = 1;
  o.embedder = std::make_shared<conditioning::MockEmbedder>();
  o.preload_audio = true;
  const auto steps = o.train.epochs * o.train.steps_per_epoch();
  auto res = training::run_training(o);

  auto m = training::model_from_checkpoint(training::load_checkpoint(res.best_checkpoint));
  const auto vocab = dataset::vocabulary_i6();
  auto songs = dataset::scan_dataset(data, data / "splits").songs;
  auto train = dataset::filter_split(songs, dataset::Split::train);
  auto test = dataset::filter_split(songs, dataset::Split::test);
  auto pools = dataset::load_pools(o.run_dir / "reports" / "pools_train.tsv");
  dataset::FileClipSource source(train, vocab);
  auto queries = evaluation::embed_queries(evaluation::select_queries(pools.queries, vocab, 3), source, *o.embedder);
  evaluation::ModelSeparator sep(*m, queries, "p5");

  bool pass = !test.empty();
  std::string detail = fmt("%zu steps, best %s (epoch %zu);", steps, res.best_label.c_str(), res.best_epoch);
  for (const auto& song : test) {
    auto ctx = evaluation::song_context(song, vocab);
    auto est = sep.separate(ctx);
    if (est.size() != 4) pass = false;
    for (const auto& [cat, e] : est) {
      const double own = evaluation::snr(ctx.references.at(cat), e);
      double wrong = -1e9;
      for (const auto& [other, r] : ctx.references)
        if (other != cat) wrong = std::max(wrong, evaluation::snr(r, e));
      pass &= own >= 8.0 && own - wrong >= 6.0;
      detail += fmt(" %s %.1f dB (best wrong %.1f)", cat.c_str(), own, wrong);
    }
  }
  return {pass, detail};
}

Outcome p6_metrics() {
  using evaluation::report_from_medians;
  auto i6e = dataset::vocabulary_i6e().categories();
  std::erase(i6e, "others");
  auto avg5 =
      report_from_medians("I6", {"bass", "vocals", "drums", "guitar", "piano"}, {11.9, 9.8, 11.7, 5.7, 3.4}).aggregate;
  auto avg9 = report_from_medians("I6E", i6e, {11.8, 11.6, 8.5, 11.8, 1.3, 3.6, 4.0, 3.2, 0.7}).aggregate;
  std::vector<float> y{1.0f, 1.0f}, s{1.0f, 0.0f};
  const double hand = evaluation::snr(std::span<const float>(y), std::span<const float>(s));
  const bool pass = std::abs(avg5 - 8.5) < 1e-9 && std::abs(avg9 - 6.3) <= 0.05 &&
                    std::abs(hand - 3.0103) <= 1e-6;
  return {pass, fmt("Avg5 %.12g, Avg9 %.4f, hand SNR %.7f dB", avg5, avg9, hand)};
}

Outcome p7_parameter_counts() {
  const double q = model::count_parameters(model::ModelConfig::qscnet());
  const double s = model::count_parameters(model::ModelConfig::scnet6());
  const double ratio = s / q, ref = 26.6 / 10.2;
  const bool pass = std::abs(q / 10.2e6 - 1) <= 0.15 && std::abs(s / 26.6e6 - 1) <= 0.15 && ratio > 2 &&
                    std::abs(ratio / ref - 1) <= 0.15;
  return {pass, fmt("QSCNet %.0f (%.3fM), SCNet6 %.0f (%.3fM), ratio %.3f", q, q / 1e6, s, s / 1e6, ratio)};
}

Outcome p8_sampler() {
  auto v = dataset::vocabulary_i6();
  dataset::SongTracks tracks;
  std::uint64_t seed = 1;
  for (const char* song : {"a", "b", "c"})
    for (const auto& cat : v.categories()) {
      Rng rng(seed++);
      Waveform<float> w(200);
      for (auto& x : w.samples().values()) x = static_cast<float>(rng.uniform(-0.5, 0.5));
      tracks[song][cat] = w;
    }
  dataset::Pools pools;
  pools.params.clip_samples = 100;
  pools.params.spacing_samples = 50;
  pools.vocabulary = v.name();
  pools.clips = dataset::build_clip_pool(tracks, pools.params);
  pools.queries = dataset::build_query_pool(pools.clips, pools.params, v.categories()).pool;
  dataset::SamplerConfig cfg;
  cfg.seed = 3;
  dataset::MixSampler sampler(pools, v, std::make_shared<dataset::MemoryClipSource>(tracks), cfg);

  const std::size_t n = 10000;
  std::vector<std::size_t> counts(v.size(), 0);
  std::vector<double> gains;
  std::size_t exact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto ex = sampler.draw(0, i);
    ++counts[*ex.target];
    for (const auto& a : ex.augmentations) gains.push_back(a.gain);
    Waveform<float> sum(ex.mixture.length());
    for (const auto& st : ex.stems)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t k = 0; k < st.length(); ++k) sum(c, k) += st(c, k);
    exact += sum == ex.mixture;
  }
  double dev = 0;
  for (auto c : counts) dev = std::max(dev, std::abs(double(c) / n - 1.0 / v.size()));
  auto [d, p] = oracle::ks_uniform(gains, 0.25, 1.25);
  return {dev <= 0.02 && p > 0.01 && exact == n,
          fmt("category deviation %.4f, gain KS D=%.4f p=%.3f over %zu draws, %zu/%zu exact mixtures", dev, d, p,
              gains.size(), exact, n)};
}

Outcome p9_silence_filter() {
  dataset::PoolParams p;
  p.clip_samples = 100;
  p.spacing_samples = 100;
  // 200 samples per clip over both channels; the first `zeros` are zero.
  auto clip = [&](std::size_t zeros) {
    Waveform<float> w(100);
    for (auto& x : w.samples().values()) x = 0.25f;
    for (std::size_t i = 0; i < zeros; ++i) w.samples()[i] = 0.0f;
    return dataset::candidate_clips("s", "bass", w, p).at(0);
  };
  const bool c55 = dataset::clip_pool_accepts(clip(110), p), c50 = dataset::clip_pool_accepts(clip(100), p);
  const bool q20 = dataset::query_pool_accepts(clip(40), p), q15 = dataset::query_pool_accepts(clip(30), p);
  auto yn = [](bool b) { return b ? "accepted" : "rejected"; };
  return {!c55 && c50 && !q20 && q15,
          fmt("clip pool: 55%% %s, 50%% %s; query pool: 20%% %s, 15%% %s", yn(c55), yn(c50), yn(q20), yn(q15))};
}

Outcome p10_batched_queries() {
  auto c = fixtures::small_config();
  model::SeparationModel<float> m(c, 14);
  auto mix = random_mix(1, 22050, 3);
  const std::size_t k = 5;
  auto qs = random_var<float>({k, c.embedding_dim}, 9);
  ag::NoGradGuard no_grad;
  auto batched = m.separate_queries(mix, qs);
  double worst = 0;
  for (std::size_t i = 0; i < k; ++i) {
    auto single = m.separate(mix, ag::slice(qs, 0, i, i + 1))[0];
    for (std::size_t j = 0; j < single.size(); ++j)
      worst = std::max(worst, std::abs(double(batched.value()[i * single.size() + j]) - single.value()[j]));
  }
  return {worst <= 1e-5, fmt("%zu queries, max abs difference %.3g", k, worst)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Check> checks{
      {"P1", "spectral round trip", 60, p1_round_trip},
      {"P2", "FiLM identity", 60, p2_film_identity},
      {"P3", "shape duality sweep", 300, p3_shape_duality},
      {"P4", "gradient check", 600, p4_gradients},
      {"P5", "toy training discrimination", 1800, p5_toy_training},
      {"P6", "metric aggregation", 60, p6_metrics},
      {"P7", "parameter counts", 60, p7_parameter_counts},
      {"P8", "sampler statistics", 60, p8_sampler},
      {"P9", "silence filter boundaries", 60, p9_silence_filter},
      {"P10", "batched query equivalence", 60, p10_batched_queries},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  int failures = 0;
  for (const auto& c : checks) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), c.id) == wanted.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome r;
    try {
      r = c.run();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      r.pass = false;
      r.detail += fmt("; over the %.0f s budget", c.budget_seconds);
    }
    failures += !r.pass;
    std::printf("%-3s %s  %s: %s [%.1f s]\n", c.id, r.pass ? "PASS" : "FAIL", c.title, r.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
