#pragma once

// Binary checkpoint, all integers little-endian:
//
//   "SMCK" | u32 version
//   u32 len | config text (serialized RunConfig)
//   i32 stage | u64 epoch | u64 step | u8 done | u64 rng key | u64 adam t
//   u32 count | count x tensor            parameters, registration order
//   u32 count | count x (tensor m, v)     Adam moments of the current stage
//
//   tensor = u32 name len | name | u32 rank | rank x u32 dim | f32 data

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "smamba/config.hpp"
#include "smamba/model.hpp"
#include "smamba/train.hpp"

namespace smamba {

constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorCode { Io = 1, Magic, Version, Truncated, Shape, Missing, Unknown, Config };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

struct StoredTensor {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> data;
};

struct CheckpointData {
  std::string config_text;
  TrainCursor cursor;
  std::uint64_t rng_key = 0;
  std::uint64_t adam_t = 0;
  std::vector<StoredTensor> params;
  std::vector<StoredTensor> moment_m, moment_v;
};

// Key of the stream behind batch order and scale draws; stored so a resume
// under a different seed is caught.
std::uint64_t run_rng_key(std::uint64_t seed);

std::string encode_checkpoint(const CheckpointData& c);
CheckpointData decode_checkpoint(const std::string& bytes);

CheckpointData snapshot(const SamMamba& m, const RunConfig& cfg, const TrainState& state);

struct Restored {
  RunConfig cfg;
  SamMamba model;
  TrainState state;
};
// Rebuilds the model from the stored config and copies every tensor in,
// checking names and shapes against the freshly built model.
Restored restore(const CheckpointData& c);

void save_checkpoint(const std::filesystem::path& path, const SamMamba& m, const RunConfig& cfg,
                     const TrainState& state);
Restored load_checkpoint(const std::filesystem::path& path);

// Copies every backbone tensor of `m` from a checkpoint by name. Other
// tensors in the file are ignored, so any checkpoint whose backbone matches
// the model's shape can supply externally trained weights. Returns the
// number of tensors copied.
std::size_t load_backbone(SamMamba& m, const CheckpointData& c);
std::size_t load_backbone(SamMamba& m, const std::filesystem::path& path);

}  // namespace smamba
