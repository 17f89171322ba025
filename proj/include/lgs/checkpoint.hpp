#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lgs/train.hpp"

namespace lgs {

// Layout, all integers little-endian u32:
//   "LGSD" | version | tensor count |
//   per tensor: name length | UTF-8 name | rank | dims[rank] | f32 LE payload |
//   metadata length | UTF-8 JSON metadata
inline constexpr char kCheckpointMagic[4] = {'L', 'G', 'S', 'D'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointFile {
    std::vector<CheckpointTensor> tensors;
    nlohmann::ordered_json metadata;
};

std::string encode_checkpoint(const CheckpointFile& file);
/// Throws FormatError (bad magic), VersionError or CorruptionError.
CheckpointFile decode_checkpoint(std::string_view bytes);

struct LoadedCheckpoint {
    TrainConfig config;
    SegModel model;
    TrainState state;
};

/// Model weights, optimizer moments and the metadata needed to resume.
void save_checkpoint(const std::filesystem::path& path, const SegModel& model, const TrainState& state,
                     const TrainConfig& config);
/// Validates the whole file before building anything; on error nothing is
/// returned.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace lgs
