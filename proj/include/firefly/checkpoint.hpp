#pragma once

#include <filesystem>
#include <string>

#include "firefly/network.hpp"

namespace firefly::net {

inline constexpr int kCheckpointSchemaVersion = 1;

// JSON checkpoint. Doubles are written in shortest round-trip form, so a
// save/load cycle reproduces every parameter bit.
std::string to_json(const GrowableNetwork& net);
GrowableNetwork from_json(const std::string& text);

void save_checkpoint(const GrowableNetwork& net, const std::filesystem::path& path);
GrowableNetwork load_checkpoint(const std::filesystem::path& path);

}  // namespace firefly::net
