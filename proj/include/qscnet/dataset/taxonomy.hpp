#pragma once

#include <algorithm>
#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "qscnet/core/error.hpp"

namespace qscnet::dataset {

struct FineLabel {
  std::string_view name;    // directory name in the dataset layout
  std::string_view coarse;  // one of the 11 stem categories
};

/// 30 fine labels under 11 coarse stem categories.
inline constexpr std::array<FineLabel, 30> kTaxonomy{{
    {"lead_male_singer", "vocals"},
    {"lead_female_singer", "vocals"},
    {"background_vocals", "vocals"},
    {"other_vocals", "vocals"},
    {"bass_guitar", "bass"},
    {"bass_synthesizer", "bass"},
    {"contrabass", "bass"},
    {"kick_drum", "drums"},
    {"snare_drum", "drums"},
    {"toms", "drums"},
    {"cymbals", "drums"},
    {"drum_machine", "drums"},
    {"acoustic_guitar", "guitar"},
    {"clean_electric_guitar", "guitar"},
    {"distorted_electric_guitar", "guitar"},
    {"grand_piano", "piano"},
    {"electric_piano", "piano"},
    {"a_tonal_percussion", "percussion"},
    {"pitched_percussion", "percussion"},
    {"organ", "other_keys"},
    {"synth_pad", "other_keys"},
    {"synth_lead", "other_keys"},
    {"violin", "bowed_strings"},
    {"cello", "bowed_strings"},
    {"string_section", "bowed_strings"},
    {"brass", "wind"},
    {"flutes", "wind"},
    {"reeds", "wind"},
    {"other_plucked", "other_plucked"},
    {"fx", "other"},
}};

inline bool is_known_label(std::string_view label) {
  return std::any_of(kTaxonomy.begin(), kTaxonomy.end(), [&](const FineLabel& f) { return f.name == label; });
}

inline std::string_view coarse_of(std::string_view label) {
  for (const auto& f : kTaxonomy)
    if (f.name == label) return f.coarse;
  return "other";
}

inline const std::string kOthers = "others";

/// Ordered target categories plus a total map from fine labels; labels
/// outside the map (including unknown ones) go to "others".
class Vocabulary {
 public:
  Vocabulary(std::string name, std::vector<std::string> categories, std::map<std::string, std::string> mapping)
      : name_(std::move(name)), categories_(std::move(categories)), mapping_(std::move(mapping)) {
    if (std::find(categories_.begin(), categories_.end(), kOthers) == categories_.end())
      throw InvalidConfig("vocabulary '" + name_ + "' must contain 'others'");
    for (const auto& [label, cat] : mapping_)
      if (std::find(categories_.begin(), categories_.end(), cat) == categories_.end())
        throw InvalidConfig("vocabulary '" + name_ + "' maps " + label + " to unknown category " + cat);
  }

  const std::string& name() const { return name_; }
  const std::vector<std::string>& categories() const { return categories_; }
  std::size_t size() const { return categories_.size(); }

  const std::string& category_of(const std::string& fine_label) const {
    auto it = mapping_.find(fine_label);
    return it == mapping_.end() ? kOthers : it->second;
  }

  std::size_t index_of(const std::string& category) const {
    auto it = std::find(categories_.begin(), categories_.end(), category);
    if (it == categories_.end()) throw InvalidInput("category '" + category + "' not in vocabulary " + name_);
    return static_cast<std::size_t>(it - categories_.begin());
  }

  bool contains(const std::string& category) const {
    return std::find(categories_.begin(), categories_.end(), category) != categories_.end();
  }

  /// Categories scored in averages: all but "others".
  std::vector<std::string> scored_categories() const {
    std::vector<std::string> out;
    for (const auto& c : categories_)
      if (c != kOthers) out.push_back(c);
    return out;
  }

 private:
  std::string name_;
  std::vector<std::string> categories_;
  std::map<std::string, std::string> mapping_;
};

/// (vocals, bass, drums, guitar, piano, others), grouped by coarse category.
inline Vocabulary vocabulary_i6() {
  std::map<std::string, std::string> m;
  for (const auto& f : kTaxonomy) {
    const std::string coarse(f.coarse);
    if (coarse == "vocals" || coarse == "bass" || coarse == "drums" || coarse == "guitar" || coarse == "piano")
      m[std::string(f.name)] = coarse;
  }
  return Vocabulary("I6", {"vocals", "bass", "drums", "guitar", "piano", "others"}, std::move(m));
}

/// Nine finer categories plus others.
inline Vocabulary vocabulary_i6e() {
  std::map<std::string, std::string> m;
  for (const auto& f : kTaxonomy) {
    const std::string coarse(f.coarse);
    if (coarse == "drums" || coarse == "bass") m[std::string(f.name)] = coarse;
  }
  m["lead_male_singer"] = "male_singer";
  m["lead_female_singer"] = "female_singer";
  for (const char* g : {"acoustic_guitar", "clean_electric_guitar", "distorted_electric_guitar", "grand_piano",
                        "electric_piano"})
    m[g] = g;
  return Vocabulary("I6E",
                    {"drums", "bass", "male_singer", "female_singer", "acoustic_guitar", "clean_electric_guitar",
                     "distorted_electric_guitar", "grand_piano", "electric_piano", "others"},
                    std::move(m));
}

inline Vocabulary vocabulary_by_name(const std::string& name) {
  if (name == "I6" || name == "i6") return vocabulary_i6();
  if (name == "I6E" || name == "i6e") return vocabulary_i6e();
  throw InvalidConfig("unknown vocabulary '" + name + "' (expected I6 or I6E)");
}

}  // namespace qscnet::dataset
