#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <string>

#include "json.hpp"
#include "qscnet/model/network.hpp"

namespace qscnet::training {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-file container: JSON metadata plus named float32 tensor tables.
///
///   "QSCK" u32 version u64 meta_len meta
///   u32 tables { str name u64 entries { str name u32 rank u64 dims[rank] f32 data } }
///
/// Strings are u32 length + bytes; integers little-endian. Tables in use:
/// "params", one "ema<decay>" per EMA shadow, "adam.m" and "adam.v".
struct Checkpoint {
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, model::NamedTensors<float>> tables;

  model::ModelConfig model_config() const { return meta.at("model").get<model::ModelConfig>(); }
  const model::NamedTensors<float>& params() const { return table("params"); }

  const model::NamedTensors<float>& table(const std::string& name) const {
    auto it = tables.find(name);
    if (it == tables.end()) throw DataError("checkpoint has no table '" + name + "'");
    return it->second;
  }
};

namespace detail {

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename U>
U get(std::istream& is) {
  U v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw DataError("checkpoint: truncated file");
  return v;
}

inline std::string get_string(std::istream& is, std::size_t limit = 1u << 30) {
  const auto n = get<std::uint32_t>(is);
  if (n > limit) throw DataError("checkpoint: corrupt string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw DataError("checkpoint: truncated file");
  return s;
}

}  // namespace detail

/// Writes to a sibling temporary file and renames it into place.
inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write checkpoint " + tmp.string());
    os.write("QSCK", 4);
    detail::put<std::uint32_t>(os, kCheckpointVersion);
    const std::string meta = ck.meta.dump();
    detail::put<std::uint64_t>(os, meta.size());
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(ck.tables.size()));
    for (const auto& [tname, table] : ck.tables) {
      detail::put_string(os, tname);
      detail::put<std::uint64_t>(os, table.size());
      for (const auto& [name, t] : table) {
        detail::put_string(os, name);
        detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
        for (std::size_t d : t.shape()) detail::put<std::uint64_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
      }
    }
    if (!os.flush()) throw DataError("failed writing checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "QSCK", 4) != 0) throw DataError(path.string() + " is not a checkpoint");
  const auto version = detail::get<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint version " + std::to_string(version) + " is not supported");
  Checkpoint ck;
  const auto meta_len = detail::get<std::uint64_t>(is);
  if (meta_len > (1u << 30)) throw DataError("checkpoint: corrupt metadata length");
  std::string meta(meta_len, '\0');
  if (!is.read(meta.data(), static_cast<std::streamsize>(meta_len))) throw DataError("checkpoint: truncated file");
  try {
    ck.meta = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint metadata: " + std::string(e.what()));
  }
  const auto tables = detail::get<std::uint32_t>(is);
  for (std::uint32_t k = 0; k < tables; ++k) {
    auto& table = ck.tables[detail::get_string(is)];
    const auto entries = detail::get<std::uint64_t>(is);
    for (std::uint64_t e = 0; e < entries; ++e) {
      auto name = detail::get_string(is);
      const auto rank = detail::get<std::uint32_t>(is);
      if (rank > 8) throw DataError("checkpoint: tensor '" + name + "' has rank " + std::to_string(rank));
      Shape shape(rank);
      for (auto& d : shape) d = detail::get<std::uint64_t>(is);
      const std::size_t n = shape_numel(shape);
      if (n > (std::size_t{1} << 32)) throw DataError("checkpoint: tensor '" + name + "' is implausibly large");
      Tensor<float> t(shape);
      if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(n * sizeof(float))))
        throw DataError("checkpoint: truncated tensor '" + name + "'");
      table.emplace(std::move(name), std::move(t));
    }
  }
  return ck;
}

/// Model rebuilt from a checkpoint's config with its "params" table.
inline std::unique_ptr<model::SeparationModel<float>> model_from_checkpoint(const Checkpoint& ck) {
  auto m = std::make_unique<model::SeparationModel<float>>(ck.model_config());
  m->parameters().load(ck.params());
  return m;
}

}  // namespace qscnet::training
