#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lamformer/data.hpp"
#include "lamformer/model.hpp"

namespace lamformer {

// File layout: 8-byte magic "LAMFCKPT", u32 format version, u64 manifest
// length, UTF-8 JSON manifest (config, parameter names and shapes, scaler,
// feature names), then every parameter tensor as raw little-endian doubles
// in layout order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ForecastModel model;
  std::optional<Scaler> scaler;
  std::vector<std::string> feature_names;
};

void save_checkpoint(const std::string& path, const ForecastModel& model, const Scaler* scaler = nullptr,
                     const std::vector<std::string>& feature_names = {});

// Throws DataError naming the path when the file is missing or malformed.
Checkpoint load_checkpoint(const std::string& path);

}  // namespace lamformer
