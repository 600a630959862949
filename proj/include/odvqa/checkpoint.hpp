#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "odvqa/autodiff.hpp"

// Parameter checkpoint file, all integers little-endian:
//   "ODVQACKP" | u32 version | u32 header bytes | header text
//   | u32 record count | records...
// record: u32 name bytes | name | u32 rank | u32 extents[rank] | f32 elements

namespace odvqa {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointRecord {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::string header;  // free-form text, used for the model configuration
    std::vector<CheckpointRecord> records;

    const CheckpointRecord* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

template <typename T>
Checkpoint snapshot(const ParameterStore<T>& store, std::string header);

/// Copies every record into the store. Throws if a store entry is missing from
/// the checkpoint or a shape differs.
template <typename T>
void restore(ParameterStore<T>& store, const Checkpoint& ckpt);

}  // namespace odvqa
