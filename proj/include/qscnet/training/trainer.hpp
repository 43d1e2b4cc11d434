#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include "json.hpp"
#include "qscnet/conditioning/embedder.hpp"
#include "qscnet/dataset/sampler.hpp"
#include "qscnet/model/network.hpp"
#include "qscnet/training/optim.hpp"

namespace qscnet::training {

struct TrainConfig {
  std::size_t batch_size = 8;
  std::size_t samples_per_epoch = 32000;
  std::size_t minibatches_per_epoch = 4000;
  std::size_t epochs = 300;
  double learning_rate = 3e-4;
  double grad_clip = 0.0;
  std::vector<double> ema_decays{0.99, 0.999};
  double clip_seconds = 10.0;
  dataset::SampleMode mode = dataset::SampleMode::conditioned;
  std::uint64_t seed = 0;
  std::uint64_t validation_query_seed = 0;
  std::size_t workers = 0;  // sampler threads; 0 draws inline

  void validate() const {
    if (batch_size == 0 || samples_per_epoch == 0 || minibatches_per_epoch == 0 || epochs == 0)
      throw InvalidConfig("batch size, samples, minibatches and epochs must be positive");
    if (samples_per_epoch != batch_size * minibatches_per_epoch)
      throw InvalidConfig("samples_per_epoch (" + std::to_string(samples_per_epoch) + ") must equal batch_size x " +
                          "minibatches_per_epoch (" + std::to_string(batch_size * minibatches_per_epoch) + ")");
    if (!(learning_rate >= 0) || !(grad_clip >= 0)) throw InvalidConfig("learning rate and clip must be >= 0");
    if (!(clip_seconds > 0)) throw InvalidConfig("clip_seconds must be positive");
  }

  std::size_t steps_per_epoch() const { return samples_per_epoch / batch_size; }
  std::size_t clip_samples() const {
    return static_cast<std::size_t>(std::llround(clip_seconds * spectral::kSampleRate));
  }

  /// Sets samples_per_epoch from the other two fields.
  TrainConfig& with_steps(std::size_t batch, std::size_t steps) {
    batch_size = batch;
    minibatches_per_epoch = steps;
    samples_per_epoch = batch * steps;
    return *this;
  }
};

inline const char* to_string(dataset::SampleMode m) {
  return m == dataset::SampleMode::conditioned ? "conditioned" : "multi_stem";
}

inline dataset::SampleMode mode_from_string(const std::string& s) {
  if (s == "conditioned") return dataset::SampleMode::conditioned;
  if (s == "multi_stem" || s == "multi-stem") return dataset::SampleMode::multi_stem;
  throw InvalidConfig("unknown mode '" + s + "'");
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"samples_per_epoch", c.samples_per_epoch},
       {"minibatches_per_epoch", c.minibatches_per_epoch},
       {"epochs", c.epochs},
       {"learning_rate", c.learning_rate},
       {"grad_clip", c.grad_clip},
       {"ema_decays", c.ema_decays},
       {"clip_seconds", c.clip_seconds},
       {"mode", to_string(c.mode)},
       {"seed", c.seed},
       {"validation_query_seed", c.validation_query_seed},
       {"workers", c.workers}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
  c.minibatches_per_epoch = j.value("minibatches_per_epoch", c.minibatches_per_epoch);
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  c.ema_decays = j.value("ema_decays", c.ema_decays);
  c.clip_seconds = j.value("clip_seconds", c.clip_seconds);
  if (j.contains("mode")) c.mode = mode_from_string(j.at("mode").get<std::string>());
  c.seed = j.value("seed", c.seed);
  c.validation_query_seed = j.value("validation_query_seed", c.validation_query_seed);
  c.workers = j.value("workers", c.workers);
}

/// Query embedding of a conditioned example.
using QueryProvider = std::function<std::vector<float>(const dataset::TrainingExample&)>;

/// Embeds query audio through a shared cache; safe to call from sampler
/// threads.
inline QueryProvider cached_queries(std::shared_ptr<const conditioning::Embedder> e,
                                    std::shared_ptr<conditioning::EmbeddingCache> cache) {
  auto mutex = std::make_shared<std::mutex>();
  return [e, cache, mutex](const dataset::TrainingExample& ex) {
    const auto key = conditioning::content_hash(ex.query);
    {
      std::lock_guard lock(*mutex);
      if (cache->contains(key)) return cache->at(key);
    }
    auto q = conditioning::embed_query(*e, ex.query);
    std::lock_guard lock(*mutex);
    if (!cache->contains(key)) cache->insert(key, q);
    return cache->at(key);
  };
}

/// Embeds every query-pool clip ahead of training.
inline std::size_t precompute_queries(const dataset::QueryPool& pool, const dataset::ClipSource& source,
                                      const conditioning::Embedder& e, conditioning::EmbeddingCache& cache) {
  std::size_t n = 0;
  for (const auto& [_, list] : pool.clips)
    for (const auto& c : list) {
      cache.get_or_compute(e, source.read(c), c.song_id + "/" + c.category + "@" + std::to_string(c.start));
      ++n;
    }
  return n;
}

struct Batch {
  Tensor<float> mixtures;              // [B, 2, N]
  std::vector<Tensor<float>> targets;  // conditioned: one [B, 2, N]; multi-stem: one per stem
  Tensor<float> queries;               // [B, q], conditioned only
};

inline Batch make_batch(const dataset::MixSampler& sampler, const QueryProvider& queries, std::uint64_t epoch,
                        std::uint64_t step, std::size_t batch_size) {
  const bool conditioned = sampler.config().mode == dataset::SampleMode::conditioned;
  Batch b;
  for (std::size_t row = 0; row < batch_size; ++row) {
    auto ex = sampler.draw(epoch, step * batch_size + row);
    const std::size_t n = ex.mixture.length(), plane = 2 * n;
    if (row == 0) {
      b.mixtures = Tensor<float>({batch_size, 2, n});
      b.targets.assign(conditioned ? 1 : ex.stems.size(), Tensor<float>({batch_size, 2, n}));
    } else if (b.mixtures.dim(2) != n) {
      throw DataError("make_batch: examples differ in length");
    }
    std::copy_n(ex.mixture.samples().data(), plane, b.mixtures.data() + row * plane);
    if (conditioned) {
      std::copy_n(ex.target_stem().samples().data(), plane, b.targets[0].data() + row * plane);
      auto q = queries(ex);
      if (row == 0) b.queries = Tensor<float>({batch_size, q.size()});
      if (q.size() != b.queries.dim(1)) throw DataError("make_batch: query sizes differ");
      std::copy(q.begin(), q.end(), b.queries.data() + row * q.size());
    } else {
      for (std::size_t k = 0; k < ex.stems.size(); ++k)
        std::copy_n(ex.stems[k].samples().data(), plane, b.targets[k].data() + row * plane);
    }
  }
  return b;
}

/// Batch loss: RMSE of the conditioned output, or the mean of per-stem
/// RMSEs.
inline ag::Var<float> batch_loss(const model::SeparationModel<float>& m, const Batch& b) {
  if (m.config().conditioned()) {
    auto out = m.separate(b.mixtures, ag::constant(b.queries));
    return rmse_loss(out[0], b.targets[0]);
  }
  auto outs = m.separate(b.mixtures, {});
  if (outs.size() != b.targets.size()) throw ContractError("model stems do not match the sampler vocabulary");
  std::vector<ag::Var<float>> losses;
  for (std::size_t k = 0; k < outs.size(); ++k) losses.push_back(rmse_loss(outs[k], b.targets[k]));
  return ag::mean_of(losses);
}

struct StepResult {
  double loss = 0;
  double grad_norm = 0;
};

/// Forward, backward and one Adam update.
inline StepResult train_step(model::SeparationModel<float>& m, Adam<float>& opt, const Batch& b) {
  m.parameters().zero_grad();
  auto loss = batch_loss(m, b);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericalError("non-finite loss " + std::to_string(value));
  ag::backward(loss);
  return {value, opt.step(m.parameters())};
}

/// Produces batches for steps [0, steps) on worker threads, handing them
/// out in step order with at most `capacity` ready ahead of the consumer.
class BatchQueue {
 public:
  BatchQueue(std::size_t steps, std::size_t workers, std::size_t capacity, std::function<Batch(std::size_t)> make)
      : steps_(steps), capacity_(std::max<std::size_t>(capacity, 1)), make_(std::move(make)) {
    for (std::size_t w = 0; w < workers; ++w) threads_.emplace_back([this] { work(); });
  }

  ~BatchQueue() {
    {
      std::lock_guard lock(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  BatchQueue(const BatchQueue&) = delete;
  BatchQueue& operator=(const BatchQueue&) = delete;

  Batch next() {
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return ready_.count(consumed_) > 0; });
    auto node = ready_.extract(consumed_);
    ++consumed_;
    cv_.notify_all();
    if (node.mapped().error) std::rethrow_exception(node.mapped().error);
    return std::move(node.mapped().batch);
  }

 private:
  struct Slot {
    Batch batch;
    std::exception_ptr error;
  };

  void work() {
    for (;;) {
      std::size_t step;
      {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return stop_ || (claimed_ < steps_ && claimed_ < consumed_ + capacity_); });
        if (stop_ || claimed_ >= steps_) return;
        step = claimed_++;
      }
      Slot slot;
      try {
        slot.batch = make_(step);
      } catch (...) {
        slot.error = std::current_exception();
      }
      {
        std::lock_guard lock(mutex_);
        ready_.emplace(step, std::move(slot));
      }
      cv_.notify_all();
    }
  }

  std::size_t steps_, capacity_;
  std::function<Batch(std::size_t)> make_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::map<std::size_t, Slot> ready_;
  std::size_t claimed_ = 0, consumed_ = 0;
  bool stop_ = false;
  std::vector<std::thread> threads_;
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double mean_loss = 0;
  double final_window_loss = 0;  // mean over the last 10 steps
  double seconds = 0;
  double examples_per_second = 0;
  std::vector<double> losses;
};

inline void to_json(nlohmann::json& j, const EpochStats& s) {
  j = {{"epoch", s.epoch},
       {"steps", s.steps},
       {"mean_loss", s.mean_loss},
       {"final_window_loss", s.final_window_loss},
       {"seconds", s.seconds},
       {"examples_per_second", s.examples_per_second}};
}

/// steps_per_epoch optimizer steps on sampler draws of (epoch, index).
inline EpochStats train_epoch(model::SeparationModel<float>& m, const dataset::MixSampler& sampler,
                              const QueryProvider& queries, const TrainConfig& cfg, Adam<float>& opt,
                              std::size_t epoch, const std::function<void(std::size_t, double)>& on_step = {}) {
  cfg.validate();
  const bool conditioned = cfg.mode == dataset::SampleMode::conditioned;
  if (conditioned != m.config().conditioned()) throw ContractError("train_epoch: model head does not match mode");
  if (sampler.config().mode != cfg.mode) throw ContractError("train_epoch: sampler mode does not match");
  if (!conditioned && m.config().stems != sampler.vocabulary().categories())
    throw ContractError("train_epoch: model stems differ from the vocabulary categories");
  opt.config().learning_rate = cfg.learning_rate;
  opt.config().grad_clip = cfg.grad_clip;

  EpochStats st;
  st.epoch = epoch;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t steps = cfg.steps_per_epoch();
  auto make = [&](std::size_t s) { return make_batch(sampler, queries, epoch, s, cfg.batch_size); };
  std::unique_ptr<BatchQueue> queue;
  if (cfg.workers > 0) queue = std::make_unique<BatchQueue>(steps, cfg.workers, 2 * cfg.workers, make);
  for (std::size_t s = 0; s < steps; ++s) {
    Batch b = queue ? queue->next() : make(s);
    StepResult r;
    try {
      r = train_step(m, opt, b);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(s));
    }
    st.losses.push_back(r.loss);
    if (on_step) on_step(s, r.loss);
  }
  st.steps = steps;
  st.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double sum = 0, tail = 0;
  for (double l : st.losses) sum += l;
  const std::size_t w = std::min<std::size_t>(10, steps);
  for (std::size_t i = steps - w; i < steps; ++i) tail += st.losses[i];
  st.mean_loss = sum / static_cast<double>(steps);
  st.final_window_loss = tail / static_cast<double>(w);
  st.examples_per_second = st.seconds > 0 ? static_cast<double>(steps * cfg.batch_size) / st.seconds : 0.0;
  return st;
}

struct Candidate {
  std::string label;  // "raw" or "ema<decay>"
  model::NamedTensors<float> parameters;
};

struct Selection {
  std::string label;
  double score = 0;
  std::map<std::string, double> scores;
};

/// Highest score wins; ties go to the lexicographically smallest label so
/// the result does not depend on candidate order.
inline Selection select_best(const std::vector<Candidate>& candidates,
                             const std::function<double(const model::NamedTensors<float>&)>& score) {
  if (candidates.empty()) throw InvalidInput("select_best: no candidates");
  Selection best;
  bool first = true;
  for (const auto& c : candidates) {
    const double s = score(c.parameters);
    best.scores[c.label] = s;
    if (first || s > best.score || (s == best.score && c.label < best.label)) {
      best.label = c.label;
      best.score = s;
      first = false;
    }
  }
  return best;
}

}  // namespace qscnet::training
