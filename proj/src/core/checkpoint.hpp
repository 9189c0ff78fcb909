#pragma once

#include <string>
#include <utility>
#include <vector>

#include "config.hpp"
#include "tensor.hpp"

namespace sprig {

// Binary parameter archive: magic + format version header, embedded config
// snapshot, then (name, shape, raw float64 data) records. Round trips are
// bit-exact.
struct Checkpoint {
  uint32_t version = 1;
  std::string config_snapshot;
  std::vector<std::pair<std::string, Tensor>> params;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace sprig
