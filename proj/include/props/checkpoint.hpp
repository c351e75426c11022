#pragma once

#include "props/nn.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

// Checkpoint archive: a text manifest followed by a flat little-endian
// float64 payload. Every parameter section carries its own fingerprint.
namespace props {

struct IntegrityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Snapshot> sections;
};

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
/// Throws IntegrityError naming the section (manifest, payload or a
/// parameter section) that fails to read or verify.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace props
