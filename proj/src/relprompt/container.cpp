#include "relprompt/container.hpp"

#include "relprompt/error.hpp"

#include <fmt/format.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

namespace relprompt {

namespace {

constexpr std::array<char, 8> kMagic = {'R', 'P', 'T', 'E', 'N', 'S', 'R', '1'};

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return v;
}

}  // namespace

const NamedTensor* TensorContainer::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void write_container(const std::filesystem::path& path, const TensorContainer& container) {
  nlohmann::json header = container.header;
  nlohmann::json directory = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& t : container.tensors) {
    directory.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}, {"offset", offset}});
    offset += static_cast<std::uint64_t>(t.value.size());
  }
  header["tensors"] = std::move(directory);
  const std::string header_text = header.dump();

  std::string bytes(kMagic.begin(), kMagic.end());
  put_u64(bytes, header_text.size());
  bytes += header_text;
  bytes.reserve(bytes.size() + offset * 4);
  for (const auto& t : container.tensors) {
    for (Eigen::Index i = 0; i < t.value.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(t.value.data()[i]);
      for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_io(fmt::format("cannot open '{}' for writing", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_io(fmt::format("failed writing '{}'", path.string()));
}

TensorContainer read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_io(fmt::format("cannot open '{}' for reading", path.string()));
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0) {
    throw_data(fmt::format("'{}' is not a relprompt tensor container", path.string()));
  }
  const std::uint64_t header_size = get_u64(bytes.data() + 8);
  if (header_size > bytes.size() - 16) throw_data(fmt::format("'{}': truncated header", path.string()));
  TensorContainer container;
  try {
    container.header = nlohmann::json::parse(bytes.substr(16, header_size));
  } catch (const nlohmann::json::exception& e) {
    throw_data(fmt::format("'{}': corrupt header: {}", path.string(), e.what()));
  }
  const char* payload = bytes.data() + 16 + header_size;
  const std::uint64_t payload_floats = (bytes.size() - 16 - header_size) / 4;
  try {
    for (const auto& entry : container.header.at("tensors")) {
      NamedTensor t;
      t.name = entry.at("name").get<std::string>();
      const auto rows = entry.at("rows").get<Eigen::Index>();
      const auto cols = entry.at("cols").get<Eigen::Index>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (rows < 0 || cols < 0 || offset + static_cast<std::uint64_t>(rows * cols) > payload_floats) {
        throw_data(fmt::format("'{}': tensor '{}' exceeds the payload", path.string(), t.name));
      }
      t.value.resize(rows, cols);
      for (Eigen::Index i = 0; i < t.value.size(); ++i) {
        std::uint32_t bits = 0;
        const char* p = payload + (offset + static_cast<std::uint64_t>(i)) * 4;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
        t.value.data()[i] = std::bit_cast<float>(bits);
      }
      container.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw_data(fmt::format("'{}': corrupt tensor directory: {}", path.string(), e.what()));
  }
  container.header.erase("tensors");
  return container;
}

}  // namespace relprompt
