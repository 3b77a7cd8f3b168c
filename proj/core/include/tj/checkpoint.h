#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tj/model.h"

namespace tj {

struct ManifestEntry {
    std::string name;
    std::vector<std::int64_t> shape;
};

// Single-file checkpoint: one JSON header line (format tag, model kind,
// config, array manifest with shapes) terminated by '\n', followed by the
// raw parameter arrays as little-endian 64-bit floats in manifest order.
void save_checkpoint(const SequenceModel& model, const std::string& path);

std::unique_ptr<SequenceModel> load_checkpoint(const std::string& path);

std::vector<ManifestEntry> read_checkpoint_manifest(const std::string& path);

}  // namespace tj
