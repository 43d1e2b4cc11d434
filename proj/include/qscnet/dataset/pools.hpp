#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "qscnet/dataset/manifest.hpp"

namespace qscnet::dataset {

struct ClipRef {
  std::string song_id;
  std::string category;
  std::size_t start = 0;
  std::size_t length = 0;
  std::size_t zero_count = 0;  // over both channels
  std::size_t total = 0;       // 2 * length

  double zero_fraction() const { return total ? static_cast<double>(zero_count) / static_cast<double>(total) : 1.0; }

  friend bool operator==(const ClipRef&, const ClipRef&) = default;
};

struct PoolParams {
  std::size_t clip_samples = 10 * spectral::kSampleRate;
  std::size_t spacing_samples = spectral::kSampleRate;
  double reject_zero_fraction = 0.5;     // clip pool keeps zero_fraction <= this
  double query_max_zero_fraction = 0.2;  // query pool keeps zero_fraction < this
  float zero_epsilon = 0.0f;             // |x| <= epsilon counts as zero

  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

/// Per-category clip lists, categories in insertion-independent sorted order.
struct ClipPool {
  std::map<std::string, std::vector<ClipRef>> clips;

  std::size_t size(const std::string& category) const {
    auto it = clips.find(category);
    return it == clips.end() ? 0 : it->second.size();
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (const auto& [_, v] : clips) n += v.size();
    return n;
  }
  const std::vector<ClipRef>& of(const std::string& category) const {
    static const std::vector<ClipRef> empty;
    auto it = clips.find(category);
    return it == clips.end() ? empty : it->second;
  }
};

using QueryPool = ClipPool;

// An exact ratio k/n rounds to the same double as the threshold literal, so
// boundary clips compare equal.
inline bool clip_pool_accepts(const ClipRef& c, const PoolParams& p) {
  return c.zero_fraction() <= p.reject_zero_fraction;
}

inline bool query_pool_accepts(const ClipRef& c, const PoolParams& p) {
  return c.zero_fraction() < p.query_max_zero_fraction;
}

/// Grid starts 0, spacing, 2*spacing, ... whose clip fits in the track.
inline std::vector<std::size_t> clip_starts(std::size_t track_length, const PoolParams& p) {
  if (p.clip_samples == 0 || p.spacing_samples == 0) throw InvalidConfig("pool clip and spacing must be positive");
  std::vector<std::size_t> out;
  for (std::size_t s = 0; s + p.clip_samples <= track_length; s += p.spacing_samples) out.push_back(s);
  return out;
}

/// Every grid clip of one track with its zero count, before filtering.
inline std::vector<ClipRef> candidate_clips(const std::string& song_id, const std::string& category,
                                            const spectral::Waveform<float>& track, const PoolParams& p) {
  const std::size_t n = track.length();
  // Prefix counts make each clip O(1).
  std::vector<std::size_t> zeros(n + 1, 0);
  for (std::size_t i = 0; i < n; ++i)
    zeros[i + 1] = zeros[i] + (std::fabs(track(0, i)) <= p.zero_epsilon) + (std::fabs(track(1, i)) <= p.zero_epsilon);
  std::vector<ClipRef> out;
  for (std::size_t s : clip_starts(n, p))
    out.push_back({song_id, category, s, p.clip_samples, zeros[s + p.clip_samples] - zeros[s], 2 * p.clip_samples});
  return out;
}

/// Adds the accepted clips of one song's category tracks.
inline void add_song_clips(ClipPool& pool, const std::string& song_id,
                           const std::map<std::string, spectral::Waveform<float>>& tracks, const PoolParams& p) {
  for (const auto& [cat, w] : tracks)
    for (auto& c : candidate_clips(song_id, cat, w, p))
      if (clip_pool_accepts(c, p)) pool.clips[cat].push_back(std::move(c));
}

/// song_id -> category -> track.
using SongTracks = std::map<std::string, std::map<std::string, spectral::Waveform<float>>>;

inline ClipPool build_clip_pool(const SongTracks& tracks, const PoolParams& p = {}) {
  ClipPool pool;
  for (const auto& [song, cats] : tracks) add_song_clips(pool, song, cats, p);
  return pool;
}

struct QueryPoolResult {
  QueryPool pool;
  std::vector<std::string> warnings;
};

/// Filters `pool` by the query rule; `categories` are checked for emptiness.
inline QueryPoolResult build_query_pool(const ClipPool& pool, const PoolParams& p,
                                        const std::vector<std::string>& categories) {
  QueryPoolResult r;
  for (const auto& [cat, list] : pool.clips)
    for (const auto& c : list)
      if (query_pool_accepts(c, p)) r.pool.clips[cat].push_back(c);
  for (const auto& cat : categories)
    if (r.pool.size(cat) == 0) r.warnings.push_back("category '" + cat + "' has no query clips and cannot be queried");
  return r;
}

struct Pools {
  PoolParams params;
  std::string vocabulary;
  ClipPool clips;
  QueryPool queries;
  std::vector<std::string> warnings;
};

/// Clip and query pools over a set of songs, one song decoded at a time.
inline Pools build_pools(const std::vector<SongManifest>& songs, const Vocabulary& v, const PoolParams& p = {}) {
  Pools out;
  out.params = p;
  out.vocabulary = v.name();
  for (const auto& m : songs) add_song_clips(out.clips, m.song_id, build_stem_tracks(m, v), p);
  auto q = build_query_pool(out.clips, p, v.categories());
  out.queries = std::move(q.pool);
  out.warnings = std::move(q.warnings);
  for (const auto& cat : v.categories())
    if (out.clips.size(cat) == 0) out.warnings.push_back("category '" + cat + "' has no training clips");
  return out;
}

// Tab-separated index: a parameter header, then one clip per line with a
// query-pool flag.
inline void save_pools(const std::filesystem::path& path, const Pools& pools) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  const auto& p = pools.params;
  out << "# qscnet-pools 1\n";
  out << "# vocabulary\t" << pools.vocabulary << "\n";
  out.precision(17);
  out << "# params\t" << p.clip_samples << '\t' << p.spacing_samples << '\t' << p.reject_zero_fraction << '\t'
      << p.query_max_zero_fraction << '\t' << p.zero_epsilon << "\n";
  out << "category\tsong_id\tstart\tlength\tzero_count\ttotal\tquery\n";
  for (const auto& [cat, list] : pools.clips.clips)
    for (const auto& c : list)
      out << cat << '\t' << c.song_id << '\t' << c.start << '\t' << c.length << '\t' << c.zero_count << '\t' << c.total
          << '\t' << (query_pool_accepts(c, p) ? 1 : 0) << '\n';
  if (!out) throw DataError("short write to " + path.string());
}

inline Pools load_pools(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pool index " + path.string());
  Pools pools;
  std::string line;
  auto bad = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  if (!std::getline(in, line) || line != "# qscnet-pools 1") throw bad("not a pool index");
  if (!std::getline(in, line) || line.rfind("# vocabulary\t", 0) != 0) throw bad("missing vocabulary line");
  pools.vocabulary = line.substr(13);
  if (!std::getline(in, line) || line.rfind("# params\t", 0) != 0) throw bad("missing params line");
  {
    std::istringstream ps(line.substr(9));
    auto& p = pools.params;
    if (!(ps >> p.clip_samples >> p.spacing_samples >> p.reject_zero_fraction >> p.query_max_zero_fraction >>
          p.zero_epsilon))
      throw bad("malformed params line");
  }
  std::getline(in, line);  // column header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ClipRef c;
    int query = 0;
    std::string cat;
    if (!std::getline(ls, cat, '\t') || !std::getline(ls, c.song_id, '\t') ||
        !(ls >> c.start >> c.length >> c.zero_count >> c.total >> query))
      throw bad("malformed row '" + line + "'");
    c.category = cat;
    if (query) pools.queries.clips[cat].push_back(c);
    pools.clips.clips[cat].push_back(std::move(c));
  }
  return pools;
}

}  // namespace qscnet::dataset
