#pragma once

#include "relprompt/numerics.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace relprompt {

struct NamedTensor {
  std::string name;
  Matrix<float> value;
};

/// Binary tensor container used for checkpoints and fine-tuned models.
///
/// Layout: the 8-byte magic "RPTENSR1", a little-endian u64 header length,
/// the UTF-8 JSON header, then every tensor as row-major little-endian
/// float32 values in header order. The header lists each tensor's name,
/// shape and element offset under "tensors"; everything else in it is
/// caller metadata.
struct TensorContainer {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const TensorContainer& container);
TensorContainer read_container(const std::filesystem::path& path);

}  // namespace relprompt
