#pragma once

#include "relprompt/model.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace testing_support {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    std::string name = info ? std::string(info->test_suite_name()) + "_" + info->name() : "relprompt";
    for (auto& ch : name) {
      if (ch == '/') ch = '_';
    }
    path_ = std::filesystem::temp_directory_path() / ("relprompt_" + name);
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

/// Same closed-form parameter pattern as tests/oracles/forward.py.
inline int name_hash(const std::string& name) {
  int sum = 0;
  for (const unsigned char ch : name) sum += ch;
  return sum % 101;
}

template <typename T>
void fill_pattern(relprompt::ParameterStore<T>& params) {
  for (auto& t : params.tensors()) {
    const double offset = 0.1 * name_hash(t.name) + 0.05;
    const bool gain = t.name.size() >= 5 && t.name.compare(t.name.size() - 5, 5, ".gain") == 0;
    for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        const double v = 0.5 * std::sin(0.7 * static_cast<double>(r) + 1.3 * static_cast<double>(c) + offset);
        t.value(r, c) = static_cast<T>(gain ? 1.0 + v : v);
      }
    }
  }
}

/// V=8, k=4, one layer, one head, FFN 6, max_len 10, m=2, untied.
inline relprompt::EncoderConfig pattern_config() {
  relprompt::EncoderConfig c;
  c.vocab_size = 8;
  c.hidden_dim = 4;
  c.num_layers = 1;
  c.num_heads = 1;
  c.ffn_dim = 6;
  c.max_len = 10;
  c.relation_tokens = 2;
  c.tie_mlm_weights = false;
  return c;
}

inline relprompt::Model<double> pattern_model() {
  const auto config = pattern_config();
  auto params = relprompt::declare_parameters(config).cast<double>();
  fill_pattern(params);
  return relprompt::Model<double>(config, std::move(params));
}

}  // namespace testing_support
