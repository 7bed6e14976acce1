#pragma once

#include "safe/data.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path = std::filesystem::temp_directory_path() / ("safe_test_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  std::filesystem::path operator/(const std::string& name) const { return path / name; }
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

inline void put_be32(std::vector<unsigned char>& buf, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) buf.push_back(static_cast<unsigned char>(v >> shift));
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<unsigned char>& buf) {
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(buf.data()),
                                           static_cast<std::streamsize>(buf.size()));
}

inline std::vector<unsigned char> idx_images(std::uint32_t count, std::uint32_t rows, std::uint32_t cols,
                                             std::uint32_t magic = 0x803) {
  std::vector<unsigned char> buf;
  put_be32(buf, magic);
  put_be32(buf, count);
  put_be32(buf, rows);
  put_be32(buf, cols);
  for (std::uint32_t i = 0; i < count * rows * cols; ++i) buf.push_back(static_cast<unsigned char>(i % 256));
  return buf;
}

inline std::vector<unsigned char> idx_labels(std::uint32_t count, std::uint32_t magic = 0x801) {
  std::vector<unsigned char> buf;
  put_be32(buf, magic);
  put_be32(buf, count);
  for (std::uint32_t i = 0; i < count; ++i) buf.push_back(static_cast<unsigned char>(i % 10));
  return buf;
}

/// Classes with the given counts; features are class id plus noise.
inline safe::LabeledDataset dataset_with_counts(const std::vector<std::size_t>& counts, std::uint64_t seed = 1) {
  safe::LabeledDataset ds;
  ds.num_classes = static_cast<int>(counts.size());
  std::size_t total = 0;
  for (auto c : counts) total += c;
  ds.features.resize(static_cast<Eigen::Index>(total), 2);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise;
  Eigen::Index row = 0;
  for (std::size_t c = 0; c < counts.size(); ++c)
    for (std::size_t i = 0; i < counts[c]; ++i, ++row) {
      ds.labels.push_back(static_cast<int>(c));
      ds.features(row, 0) = static_cast<double>(c) + noise(rng);
      ds.features(row, 1) = noise(rng);
    }
  return ds;
}

}  // namespace testing
