#pragma once
#include <algorithm>
#include <bit>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "kinnet/errors.hpp"
#include "kinnet/text.hpp"

// Run provenance: which command produced which files from which config, with
// content digests so a rerun can be checked byte for byte.

namespace kinnet {
namespace detail {

struct Sha256 {
  std::uint32_t h[8] = {0x6a09e667u, 0xbb67ae85u, 0x3c6ef372u, 0xa54ff53au,
                        0x510e527fu, 0x9b05688cu, 0x1f83d9abu, 0x5be0cd19u};
  std::uint64_t total_bytes = 0;
  unsigned char block[64];
  std::size_t fill = 0;

  static constexpr std::uint32_t k[64] = {
      0x428a2f98u, 0x71374491u, 0xb5c0fbcfu, 0xe9b5dba5u, 0x3956c25bu, 0x59f111f1u, 0x923f82a4u,
      0xab1c5ed5u, 0xd807aa98u, 0x12835b01u, 0x243185beu, 0x550c7dc3u, 0x72be5d74u, 0x80deb1feu,
      0x9bdc06a7u, 0xc19bf174u, 0xe49b69c1u, 0xefbe4786u, 0x0fc19dc6u, 0x240ca1ccu, 0x2de92c6fu,
      0x4a7484aau, 0x5cb0a9dcu, 0x76f988dau, 0x983e5152u, 0xa831c66du, 0xb00327c8u, 0xbf597fc7u,
      0xc6e00bf3u, 0xd5a79147u, 0x06ca6351u, 0x14292967u, 0x27b70a85u, 0x2e1b2138u, 0x4d2c6dfcu,
      0x53380d13u, 0x650a7354u, 0x766a0abbu, 0x81c2c92eu, 0x92722c85u, 0xa2bfe8a1u, 0xa81a664bu,
      0xc24b8b70u, 0xc76c51a3u, 0xd192e819u, 0xd6990624u, 0xf40e3585u, 0x106aa070u, 0x19a4c116u,
      0x1e376c08u, 0x2748774cu, 0x34b0bcb5u, 0x391c0cb3u, 0x4ed8aa4au, 0x5b9cca4fu, 0x682e6ff3u,
      0x748f82eeu, 0x78a5636fu, 0x84c87814u, 0x8cc70208u, 0x90befffau, 0xa4506cebu, 0xbef9a3f7u,
      0xc67178f2u};

  void process(const unsigned char* p) {
    std::uint32_t w[64];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(p[4 * i]) << 24) | (std::uint32_t(p[4 * i + 1]) << 16) |
             (std::uint32_t(p[4 * i + 2]) << 8) | std::uint32_t(p[4 * i + 3]);
    for (int i = 16; i < 64; ++i) {
      const std::uint32_t s0 =
          std::rotr(w[i - 15], 7) ^ std::rotr(w[i - 15], 18) ^ (w[i - 15] >> 3);
      const std::uint32_t s1 = std::rotr(w[i - 2], 17) ^ std::rotr(w[i - 2], 19) ^ (w[i - 2] >> 10);
      w[i] = w[i - 16] + s0 + w[i - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3];
    std::uint32_t e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int i = 0; i < 64; ++i) {
      const std::uint32_t s1 = std::rotr(e, 6) ^ std::rotr(e, 11) ^ std::rotr(e, 25);
      const std::uint32_t ch = (e & f) ^ (~e & g);
      const std::uint32_t t1 = hh + s1 + ch + k[i] + w[i];
      const std::uint32_t s0 = std::rotr(a, 2) ^ std::rotr(a, 13) ^ std::rotr(a, 22);
      const std::uint32_t maj = (a & b) ^ (a & c) ^ (b & c);
      const std::uint32_t t2 = s0 + maj;
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }

  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    total_bytes += n;
    if (fill) {
      const std::size_t take = std::min(n, 64 - fill);
      std::memcpy(block + fill, p, take);
      fill += take;
      p += take;
      n -= take;
      if (fill == 64) {
        process(block);
        fill = 0;
      }
    }
    for (; n >= 64; p += 64, n -= 64) process(p);
    if (n) {
      std::memcpy(block, p, n);
      fill = n;
    }
  }

  std::string hex_digest() {
    const std::uint64_t bits = total_bytes * 8;
    unsigned char pad[72];
    pad[0] = 0x80;
    const std::size_t pad_len = (fill < 56 ? 56 - fill : 120 - fill);
    std::memset(pad + 1, 0, pad_len - 1);
    for (int i = 0; i < 8; ++i) pad[pad_len + i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(pad, pad_len + 8);
    std::string out(64, '0');
    static const char digits[] = "0123456789abcdef";
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j)
        out[8 * i + j] = digits[(h[i] >> (28 - 4 * j)) & 0xf];
    return out;
  }
};

}  // namespace detail

inline std::string sha256_hex(std::string_view data) {
  detail::Sha256 state;
  state.update(data.data(), data.size());
  return state.hex_digest();
}

struct ManifestFile {
  std::string path;  // relative to the run's output directory
  std::uint64_t bytes = 0;
  std::string sha256;
};

struct RunManifest {
  std::string command;
  std::string tool_version = "0.1.0";
  std::uint64_t rng_seed = 0;
  std::vector<std::uint64_t> cell_seeds;  // per-cell fan-out for sweeps
  std::string config_text;
  std::vector<ManifestFile> files;
  std::vector<std::pair<std::string, double>> timings;  // phase name, seconds
  double wall_seconds = 0.0;

  void record(std::string path, std::string_view content) {
    files.push_back({std::move(path), content.size(), sha256_hex(content)});
  }
};

inline std::string manifest_to_json(const RunManifest& m) {
  nlohmann::json j;
  j["command"] = m.command;
  j["tool_version"] = m.tool_version;
  j["rng_seed"] = m.rng_seed;
  j["cell_seeds"] = m.cell_seeds;
  j["config"] = m.config_text;
  j["wall_seconds"] = m.wall_seconds;
  j["timings"] = nlohmann::json::array();
  for (const auto& [name, seconds] : m.timings)
    j["timings"].push_back({{"phase", name}, {"seconds", seconds}});
  j["files"] = nlohmann::json::array();
  for (const auto& f : m.files)
    j["files"].push_back({{"path", f.path}, {"bytes", f.bytes}, {"sha256", f.sha256}});
  return j.dump(2) + "\n";
}

inline RunManifest manifest_from_json(std::string_view text) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
    m.cell_seeds = j.at("cell_seeds").get<std::vector<std::uint64_t>>();
    m.config_text = j.at("config").get<std::string>();
    m.wall_seconds = j.at("wall_seconds").get<double>();
    for (const auto& t : j.at("timings"))
      m.timings.emplace_back(t.at("phase").get<std::string>(), t.at("seconds").get<double>());
    for (const auto& f : j.at("files"))
      m.files.push_back({f.at("path").get<std::string>(), f.at("bytes").get<std::uint64_t>(),
                         f.at("sha256").get<std::string>()});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("manifest: ") + e.what());
  }
}

// Paths under dir whose current content no longer matches the recorded
// digest (or cannot be read). Empty means the manifest still verifies.
inline std::vector<std::string> manifest_mismatches(const RunManifest& m, const std::string& dir) {
  std::vector<std::string> bad;
  for (const auto& f : m.files) {
    try {
      const std::string content = read_text_file(dir + "/" + f.path);
      if (content.size() != f.bytes || sha256_hex(content) != f.sha256) bad.push_back(f.path);
    } catch (const io_error&) {
      bad.push_back(f.path);
    }
  }
  return bad;
}

}  // namespace kinnet
