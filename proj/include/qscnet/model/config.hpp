#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscnet/core/error.hpp"

namespace qscnet::model {

inline constexpr std::size_t kBands = 3;
using BandTriple = std::array<std::size_t, kBands>;

/// Coarse three-way frequency banding used by every encoder/decoder stage.
struct BandScheme {
  std::array<double, kBands> ratios{0.175, 0.392, 0.433};
  /// Downsampling factor per band, one entry per stage.
  std::vector<BandTriple> strides{{1, 4, 16}, {2, 2, 2}, {2, 2, 2}};
  /// Processing-conv kernel extent per band along (frequency, time); odd.
  std::array<std::array<std::size_t, 2>, kBands> kernels{{{3, 3}, {3, 3}, {3, 3}}};
  /// Residual processing blocks per band.
  BandTriple depths{4, 4, 4};

  friend bool operator==(const BandScheme&, const BandScheme&) = default;
};

enum class HeadKind { conditioned, multi_stem };

inline std::string to_string(HeadKind h) {
  return h == HeadKind::conditioned ? "conditioned" : "multi_stem";
}

inline HeadKind head_from_string(const std::string& s) {
  if (s == "conditioned") return HeadKind::conditioned;
  if (s == "multi_stem") return HeadKind::multi_stem;
  throw InvalidConfig("unknown head kind '" + s + "'");
}

/// Band widths of an F-bin axis: floor for the first two bands, the
/// remainder to the last.
inline BandTriple band_widths(std::size_t bins, const std::array<double, kBands>& ratios) {
  if (bins < kBands)
    throw InvalidConfig("cannot split " + std::to_string(bins) + " bins into 3 bands");
  BandTriple w{};
  w[0] = static_cast<std::size_t>(std::floor(ratios[0] * static_cast<double>(bins)));
  w[1] = static_cast<std::size_t>(std::floor(ratios[1] * static_cast<double>(bins)));
  if (w[0] + w[1] >= bins) throw InvalidConfig("band ratios leave no room for the top band");
  w[2] = bins - w[0] - w[1];
  for (std::size_t b = 0; b < kBands; ++b)
    if (w[b] == 0)
      throw InvalidConfig("band " + std::to_string(b) + " is empty at " + std::to_string(bins) + " bins");
  return w;
}

/// Shapes of one encoder stage, derived eagerly at build time.
struct StageSchedule {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t in_bins = 0;
  std::size_t out_bins = 0;
  BandTriple widths{};      // band widths at the stage input
  BandTriple out_widths{};  // band widths after downsampling
  BandTriple strides{};
};

struct ModelConfig {
  std::size_t frame_length = 4096;
  std::size_t hop = 1024;
  std::size_t base_channels = 32;
  /// Output channels of each encoder stage; L = stage_channels.size().
  std::vector<std::size_t> stage_channels{96, 128, 128};
  BandScheme bands;
  std::size_t norm_groups = 4;
  std::size_t neck_blocks = 6;
  std::size_t neck_hidden = 112;
  HeadKind head = HeadKind::conditioned;
  std::vector<std::string> stems;
  std::size_t embedding_dim = 768;
  std::size_t film_hidden = 128;

  std::size_t num_layers() const { return stage_channels.size(); }
  std::size_t input_bins() const { return frame_length / 2 + 1; }
  std::size_t latent_channels() const {
    return stage_channels.empty() ? base_channels : stage_channels.back();
  }
  std::size_t num_masks() const { return head == HeadKind::conditioned ? 1 : stems.size(); }
  bool conditioned() const { return head == HeadKind::conditioned; }

  /// QSCNet: one conditioned mask branch plus the FiLM module.
  static ModelConfig qscnet() { return ModelConfig{}; }

  /// Six-output baseline over (vocals, bass, drums, guitar, piano, others).
  static ModelConfig scnet6() {
    ModelConfig c;
    c.head = HeadKind::multi_stem;
    c.stems = {"vocals", "bass", "drums", "guitar", "piano", "others"};
    return c;
  }

  /// Small conditioned model that trains on a CPU in minutes; used for the
  /// toy corpus.
  static ModelConfig tiny() {
    ModelConfig c;
    c.frame_length = 1024;
    c.hop = 256;
    c.base_channels = 4;
    c.stage_channels = {8, 16};
    c.bands.strides = {{1, 4, 16}, {2, 2, 2}};
    c.bands.depths = {1, 1, 1};
    c.neck_blocks = 2;
    c.neck_hidden = 8;
    c.film_hidden = 32;
    return c;
  }

  static ModelConfig preset(const std::string& name) {
    if (name == "qscnet") return qscnet();
    if (name == "scnet6") return scnet6();
    if (name == "tiny") return tiny();
    throw InvalidConfig("unknown model preset '" + name + "' (qscnet, scnet6, tiny)");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Computes and validates every stage's shapes. Throws InvalidConfig on any
/// configuration whose frequency schedule cannot be realised.
inline std::vector<StageSchedule> shape_schedule(const ModelConfig& cfg) {
  if (cfg.frame_length < 4 || cfg.frame_length % 4 != 0 || cfg.hop != cfg.frame_length / 4)
    throw InvalidConfig("frame_length must be a multiple of 4 with hop = frame_length / 4");
  if (cfg.stage_channels.empty()) throw InvalidConfig("num_layers must be >= 1");
  if (cfg.bands.strides.size() != cfg.num_layers())
    throw InvalidConfig("band strides must list one triple per stage (" +
                        std::to_string(cfg.num_layers()) + ")");
  double ratio_sum = 0;
  for (double r : cfg.bands.ratios) {
    if (!(r > 0)) throw InvalidConfig("band ratios must be positive");
    ratio_sum += r;
  }
  if (std::abs(ratio_sum - 1.0) > 1e-6) throw InvalidConfig("band ratios must sum to 1");
  for (const auto& k : cfg.bands.kernels)
    if (k[0] % 2 == 0 || k[1] % 2 == 0) throw InvalidConfig("processing kernels must be odd");
  if (cfg.base_channels == 0) throw InvalidConfig("base_channels must be positive");
  for (auto c : cfg.stage_channels)
    if (c == 0) throw InvalidConfig("stage channels must be positive");
  if (cfg.norm_groups == 0) throw InvalidConfig("norm_groups must be positive");
  if (cfg.neck_blocks == 0 || cfg.neck_blocks % 2 != 0)
    throw InvalidConfig("neck_blocks must be a positive even number");
  if (cfg.neck_hidden == 0) throw InvalidConfig("neck_hidden must be positive");
  if (cfg.head == HeadKind::multi_stem && cfg.stems.empty())
    throw InvalidConfig("multi-stem head needs a stem vocabulary");
  if (cfg.head == HeadKind::conditioned && (cfg.embedding_dim == 0 || cfg.film_hidden == 0))
    throw InvalidConfig("conditioned head needs embedding_dim and film_hidden");

  std::vector<StageSchedule> stages;
  std::size_t bins = cfg.input_bins();
  std::size_t channels = cfg.base_channels;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    StageSchedule s;
    s.in_channels = channels;
    s.out_channels = cfg.stage_channels[l];
    s.in_bins = bins;
    s.widths = band_widths(bins, cfg.bands.ratios);
    s.strides = cfg.bands.strides[l];
    s.out_bins = 0;
    for (std::size_t b = 0; b < kBands; ++b) {
      if (s.strides[b] == 0) throw InvalidConfig("strides must be >= 1");
      s.out_widths[b] = (s.widths[b] + s.strides[b] - 1) / s.strides[b];
      s.out_bins += s.out_widths[b];
    }
    if (s.out_bins >= s.in_bins)
      throw InvalidConfig("stage " + std::to_string(l + 1) + " does not reduce frequency (" +
                          std::to_string(s.in_bins) + " -> " + std::to_string(s.out_bins) + ")");
    stages.push_back(s);
    bins = s.out_bins;
    channels = s.out_channels;
  }
  return stages;
}

inline void validate(const ModelConfig& cfg) { (void)shape_schedule(cfg); }

// ------------------------------------------------------------------ JSON

inline void to_json(nlohmann::json& j, const BandScheme& b) {
  j = nlohmann::json{{"ratios", b.ratios}, {"strides", b.strides}, {"kernels", b.kernels},
                     {"depths", b.depths}};
}

inline void from_json(const nlohmann::json& j, BandScheme& b) {
  BandScheme d;
  b.ratios = j.value("ratios", d.ratios);
  b.strides = j.value("strides", d.strides);
  b.kernels = j.value("kernels", d.kernels);
  b.depths = j.value("depths", d.depths);
}

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"frame_length", c.frame_length},   {"hop", c.hop},
                     {"base_channels", c.base_channels}, {"stage_channels", c.stage_channels},
                     {"bands", c.bands},                 {"norm_groups", c.norm_groups},
                     {"neck_blocks", c.neck_blocks},     {"neck_hidden", c.neck_hidden},
                     {"head", to_string(c.head)},        {"stems", c.stems},
                     {"embedding_dim", c.embedding_dim}, {"film_hidden", c.film_hidden}};
}

/// Missing keys keep the defaults, so partial files layer over presets.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (j.contains("frame_length")) c.frame_length = j.at("frame_length");
  if (j.contains("hop")) c.hop = j.at("hop");
  if (j.contains("base_channels")) c.base_channels = j.at("base_channels");
  if (j.contains("stage_channels")) c.stage_channels = j.at("stage_channels").get<std::vector<std::size_t>>();
  if (j.contains("bands")) c.bands = j.at("bands").get<BandScheme>();
  if (j.contains("norm_groups")) c.norm_groups = j.at("norm_groups");
  if (j.contains("neck_blocks")) c.neck_blocks = j.at("neck_blocks");
  if (j.contains("neck_hidden")) c.neck_hidden = j.at("neck_hidden");
  if (j.contains("head")) c.head = head_from_string(j.at("head"));
  if (j.contains("stems")) c.stems = j.at("stems").get<std::vector<std::string>>();
  if (j.contains("embedding_dim")) c.embedding_dim = j.at("embedding_dim");
  if (j.contains("film_hidden")) c.film_hidden = j.at("film_hidden");
}

}  // namespace qscnet::model
