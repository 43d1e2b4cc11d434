#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "qscnet/dataset/taxonomy.hpp"
#include "qscnet/spectral/wav.hpp"

namespace qscnet::dataset {

namespace fs = std::filesystem;

enum class Split { train, valid, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::valid: return "valid";
    default: return "test";
  }
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "valid") return Split::valid;
  if (s == "test") return Split::test;
  throw InvalidInput("unknown split '" + s + "'");
}

/// One song: fine label -> member files (sorted).
struct SongManifest {
  std::string song_id;
  std::map<std::string, std::vector<fs::path>> stem_tracks;
  Split split = Split::train;
};

struct ScanReport {
  std::size_t songs_found = 0;
  std::map<std::string, std::size_t> per_split;
  std::vector<std::string> excluded;
  std::vector<std::string> warnings;

  bool ok() const { return songs_found > 0 && excluded.empty(); }
  std::size_t included() const {
    std::size_t n = 0;
    for (const auto& [_, c] : per_split) n += c;
    return n;
  }

  nlohmann::json to_json() const {
    return {{"songs_found", songs_found}, {"per_split", per_split}, {"excluded", excluded}, {"warnings", warnings}};
  }
};

struct ScanResult {
  std::vector<SongManifest> songs;
  ScanReport report;
};

/// Reads `<dir>/train.txt`, `valid.txt`, `test.txt` (one song id per line;
/// blank lines and '#' comments ignored).
inline std::map<std::string, Split> read_splits(const fs::path& dir) {
  std::map<std::string, Split> out;
  for (Split s : {Split::train, Split::valid, Split::test}) {
    const fs::path file = dir / (std::string(to_string(s)) + ".txt");
    std::ifstream in(file);
    if (!in) throw DataError("missing split list " + file.string());
    std::string line;
    while (std::getline(in, line)) {
      line.erase(std::remove(line.begin(), line.end(), '\r'), line.end());
      const auto b = line.find_first_not_of(" \t"), e = line.find_last_not_of(" \t");
      if (b == std::string::npos || line[b] == '#') continue;
      const std::string id = line.substr(b, e - b + 1);
      if (!out.emplace(id, s).second) throw DataError("song '" + id + "' listed in more than one split");
    }
  }
  return out;
}

inline void write_splits(const fs::path& dir, const std::map<Split, std::vector<std::string>>& lists) {
  fs::create_directories(dir);
  for (Split s : {Split::train, Split::valid, Split::test}) {
    std::ofstream out(dir / (std::string(to_string(s)) + ".txt"));
    if (auto it = lists.find(s); it != lists.end())
      for (const auto& id : it->second) out << id << '\n';
  }
}

/// Walks `root/<song_id>/<fine_label>/<n>.wav`. Songs with unreadable
/// audio or absent from the split lists are excluded and reported.
inline ScanResult scan_dataset(const fs::path& root, const fs::path& splits_dir) {
  ScanResult result;
  auto& rep = result.report;
  if (!fs::is_directory(root)) {
    rep.warnings.push_back("dataset root " + root.string() + " is not a directory");
    return result;
  }
  const auto splits = read_splits(splits_dir);
  const fs::path splits_abs = fs::weakly_canonical(splits_dir);
  std::vector<fs::path> song_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::weakly_canonical(e.path()) != splits_abs) song_dirs.push_back(e.path());
  std::sort(song_dirs.begin(), song_dirs.end());

  for (const auto& dir : song_dirs) {
    const std::string id = dir.filename().string();
    SongManifest m;
    m.song_id = id;
    bool broken = false;
    std::vector<fs::path> label_dirs;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory()) label_dirs.push_back(e.path());
    std::sort(label_dirs.begin(), label_dirs.end());
    for (const auto& ld : label_dirs) {
      const std::string label = ld.filename().string();
      if (!is_known_label(label)) rep.warnings.push_back(id + ": unknown label '" + label + "' treated as others");
      std::vector<fs::path> files;
      for (const auto& f : fs::directory_iterator(ld))
        if (f.is_regular_file() && f.path().extension() == ".wav") files.push_back(f.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        try {
          const auto info = audio::probe_wav(f);
          if (info.channels != 2 || info.sample_rate != spectral::kSampleRate || info.frames == 0)
            throw DataError(f.string() + ": need non-empty stereo 44.1 kHz audio");
        } catch (const DataError& e) {
          rep.warnings.push_back(id + ": " + e.what());
          broken = true;
        }
      }
      if (!files.empty()) m.stem_tracks[label] = std::move(files);
    }
    ++rep.songs_found;
    if (broken || m.stem_tracks.empty()) {
      rep.excluded.push_back(id + (broken ? ": unreadable audio" : ": no tracks"));
      continue;
    }
    auto it = splits.find(id);
    if (it == splits.end()) {
      rep.excluded.push_back(id + ": not in any split list");
      continue;
    }
    m.split = it->second;
    ++rep.per_split[to_string(m.split)];
    result.songs.push_back(std::move(m));
  }
  if (rep.songs_found == 0) rep.warnings.push_back("no songs under " + root.string());
  return result;
}

inline std::vector<SongManifest> filter_split(const std::vector<SongManifest>& songs, Split s) {
  std::vector<SongManifest> out;
  for (const auto& m : songs)
    if (m.split == s) out.push_back(m);
  return out;
}

namespace detail {

inline void accumulate(spectral::Waveform<float>& acc, const spectral::Waveform<float>& w) {
  if (w.length() > acc.length()) {
    spectral::Waveform<float> grown(w.length());
    for (std::size_t c = 0; c < 2; ++c) std::copy_n(acc.channel(c).data(), acc.length(), grown.channel(c).data());
    acc = std::move(grown);
  }
  for (std::size_t c = 0; c < 2; ++c) {
    float* a = acc.channel(c).data();
    const float* x = w.channel(c).data();
    for (std::size_t i = 0; i < w.length(); ++i) a[i] += x[i];
  }
}

}  // namespace detail

/// Category -> sample-wise sum of its member tracks, accumulated in label
/// then file order. Categories without tracks are absent.
inline std::map<std::string, spectral::Waveform<float>> build_stem_tracks(const SongManifest& m, const Vocabulary& v) {
  std::map<std::string, spectral::Waveform<float>> out;
  for (const auto& [label, files] : m.stem_tracks) {
    const auto& cat = v.category_of(label);
    for (const auto& f : files) {
      auto [it, _] = out.try_emplace(cat, spectral::Waveform<float>(0));
      detail::accumulate(it->second, audio::read_wav(f));
    }
  }
  return out;
}

/// Sum of every raw track of the song in label then file order.
inline spectral::Waveform<float> sum_raw_tracks(const SongManifest& m) {
  spectral::Waveform<float> acc(0);
  for (const auto& [_, files] : m.stem_tracks)
    for (const auto& f : files) detail::accumulate(acc, audio::read_wav(f));
  return acc;
}

/// Samples [start, start + count) of a category's stem track, read
/// directly from the member files; equals the same slice of
/// build_stem_tracks.
inline spectral::Waveform<float> read_category_segment(const SongManifest& m, const Vocabulary& v,
                                                       const std::string& category, std::size_t start,
                                                       std::size_t count) {
  spectral::Waveform<float> acc(count);
  for (const auto& [label, files] : m.stem_tracks) {
    if (v.category_of(label) != category) continue;
    for (const auto& f : files) detail::accumulate(acc, audio::read_wav_segment(f, start, count));
  }
  return acc;
}

/// Length in samples of the longest member file.
inline std::size_t song_length(const SongManifest& m) {
  std::size_t n = 0;
  for (const auto& [_, files] : m.stem_tracks)
    for (const auto& f : files) n = std::max(n, audio::probe_wav(f).frames);
  return n;
}

}  // namespace qscnet::dataset
