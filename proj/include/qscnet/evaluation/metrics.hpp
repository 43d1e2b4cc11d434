#pragma once

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscnet/spectral/spectral.hpp"

namespace qscnet::evaluation {

inline constexpr double kSnrCap = 100.0;

/// 10 log10(|y|^2 / |y - s|^2) for reference y and estimate s, capped at
/// kSnrCap when the error energy is below 1e-10 of the reference energy.
template <typename T>
double snr(std::span<const T> y, std::span<const T> s) {
  if (y.size() != s.size())
    throw InvalidInput("snr: reference has " + std::to_string(y.size()) + " samples, estimate " +
                       std::to_string(s.size()));
  double sig = 0, err = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double a = y[i], d = a - static_cast<double>(s[i]);
    sig += a * a;
    err += d * d;
  }
  if (sig == 0) throw InvalidInput("snr: reference is silent");
  if (err < 1e-10 * sig) return kSnrCap;
  return std::min(kSnrCap, 10.0 * std::log10(sig / err));
}

template <typename T>
double snr(const spectral::Waveform<T>& y, const spectral::Waveform<T>& s) {
  if (y.length() != s.length()) throw InvalidInput("snr: waveform lengths differ");
  return snr(std::span<const T>(y.samples().values()), std::span<const T>(s.samples().values()));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw InvalidInput("median of an empty list");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw InvalidInput("mean of an empty list");
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

struct TrackScore {
  std::string song_id;
  double snr = 0;
};

struct CategoryResult {
  std::vector<TrackScore> tracks;
  double median = 0;
};

/// Per-category medians plus the mean over the scored (non-others)
/// categories, labelled Avg<n>.
struct EvaluationReport {
  std::string vocabulary;
  std::vector<std::string> categories;  // column order
  std::map<std::string, CategoryResult> results;
  std::string aggregate_name;
  double aggregate = 0;
  std::optional<double> others_median;
  std::uint64_t query_seed = 0;
  std::string checkpoint;
  std::map<std::string, std::string> queries;  // category -> query clip
  std::vector<std::string> notes;

  /// Recomputes medians and the aggregate from the per-track scores.
  void finalize() {
    std::vector<double> medians;
    std::size_t scored = 0;
    others_median.reset();
    for (const auto& cat : categories) {
      auto it = results.find(cat);
      if (cat != "others") ++scored;
      if (it == results.end() || it->second.tracks.empty()) continue;
      std::vector<double> v;
      for (const auto& t : it->second.tracks) v.push_back(t.snr);
      it->second.median = median(v);
      if (cat == "others")
        others_median = it->second.median;
      else
        medians.push_back(it->second.median);
    }
    aggregate_name = "Avg" + std::to_string(scored);
    aggregate = medians.empty() ? 0.0 : mean(medians);
    const std::string note = aggregate_name + " averages " + std::to_string(medians.size()) + " present categories";
    if (medians.size() != scored && std::find(notes.begin(), notes.end(), note) == notes.end()) notes.push_back(note);
  }
};

/// Report built directly from category medians.
inline EvaluationReport report_from_medians(const std::string& vocabulary, const std::vector<std::string>& categories,
                                            const std::vector<double>& medians) {
  if (categories.size() != medians.size()) throw InvalidInput("report_from_medians: size mismatch");
  EvaluationReport r;
  r.vocabulary = vocabulary;
  r.categories = categories;
  for (std::size_t i = 0; i < categories.size(); ++i) r.results[categories[i]].tracks.push_back({"median", medians[i]});
  r.finalize();
  return r;
}

inline nlohmann::json to_json(const EvaluationReport& r) {
  nlohmann::json j;
  j["vocabulary"] = r.vocabulary;
  j["categories"] = r.categories;
  j["aggregate"] = {{"name", r.aggregate_name}, {"value", r.aggregate}};
  j["others_median"] = r.others_median ? nlohmann::json(*r.others_median) : nlohmann::json();
  j["query_seed"] = r.query_seed;
  j["checkpoint"] = r.checkpoint;
  j["queries"] = r.queries;
  j["notes"] = r.notes;
  auto& res = j["results"];
  res = nlohmann::json::object();
  for (const auto& [cat, c] : r.results) {
    nlohmann::json tracks = nlohmann::json::array();
    for (const auto& t : c.tracks) tracks.push_back({{"song", t.song_id}, {"snr", t.snr}});
    res[cat] = {{"median", c.median}, {"tracks", tracks}};
  }
  return j;
}

inline EvaluationReport report_from_json(const nlohmann::json& j) {
  EvaluationReport r;
  r.vocabulary = j.at("vocabulary").get<std::string>();
  r.categories = j.at("categories").get<std::vector<std::string>>();
  r.query_seed = j.value("query_seed", std::uint64_t{0});
  r.checkpoint = j.value("checkpoint", std::string());
  r.queries = j.value("queries", std::map<std::string, std::string>());
  r.notes = j.value("notes", std::vector<std::string>());
  for (const auto& [cat, c] : j.at("results").items())
    for (const auto& t : c.at("tracks")) r.results[cat].tracks.push_back({t.at("song"), t.at("snr")});
  r.finalize();
  return r;
}

namespace detail {
inline std::string fixed(double v, int digits = 1) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}
}  // namespace detail

/// One header row and one value row: categories in report order, then the
/// aggregate.
inline std::string render_table(const EvaluationReport& r, const std::string& row_label = "model") {
  std::ostringstream out;
  out << std::left << std::setw(14) << r.vocabulary;
  for (const auto& c : r.categories) out << std::right << std::setw(std::max<int>(8, int(c.size()) + 2)) << c;
  out << std::setw(8) << r.aggregate_name << '\n';
  out << std::left << std::setw(14) << row_label;
  for (const auto& c : r.categories) {
    auto it = r.results.find(c);
    const std::string cell = it == r.results.end() || it->second.tracks.empty() ? "-" : detail::fixed(it->second.median);
    out << std::right << std::setw(std::max<int>(8, int(c.size()) + 2)) << cell;
  }
  out << std::setw(8) << detail::fixed(r.aggregate) << '\n';
  return out.str();
}

struct ReportDelta {
  std::string vocabulary;
  std::vector<std::string> categories;
  std::map<std::string, double> per_category;  // b - a, categories present in both
  std::string aggregate_name;
  double aggregate = 0;
};

/// b - a per category and for the aggregate.
inline ReportDelta compare_reports(const EvaluationReport& a, const EvaluationReport& b) {
  if (a.vocabulary != b.vocabulary)
    throw InvalidInput("compare_reports: vocabularies differ (" + a.vocabulary + " vs " + b.vocabulary + ")");
  ReportDelta d;
  d.vocabulary = a.vocabulary;
  d.categories = a.categories;
  d.aggregate_name = a.aggregate_name;
  d.aggregate = b.aggregate - a.aggregate;
  for (const auto& c : a.categories) {
    auto ia = a.results.find(c), ib = b.results.find(c);
    if (ia == a.results.end() || ib == b.results.end() || ia->second.tracks.empty() || ib->second.tracks.empty())
      continue;
    d.per_category[c] = ib->second.median - ia->second.median;
  }
  return d;
}

inline std::string render_delta(const ReportDelta& d) {
  std::ostringstream out;
  out << std::left << std::setw(14) << d.vocabulary;
  for (const auto& c : d.categories) out << std::right << std::setw(std::max<int>(8, int(c.size()) + 2)) << c;
  out << std::setw(8) << d.aggregate_name << '\n' << std::left << std::setw(14) << "delta";
  auto sign = [](double v) { return (v >= 0 ? "+" : "") + detail::fixed(v); };
  for (const auto& c : d.categories) {
    auto it = d.per_category.find(c);
    out << std::right << std::setw(std::max<int>(8, int(c.size()) + 2)) << (it == d.per_category.end() ? "-" : sign(it->second));
  }
  out << std::setw(8) << sign(d.aggregate) << '\n';
  return out.str();
}

}  // namespace qscnet::evaluation
