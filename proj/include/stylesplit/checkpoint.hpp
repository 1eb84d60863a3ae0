#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>

#include "stylesplit/config.hpp"
#include "stylesplit/training.hpp"

namespace stylesplit {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A checkpoint is a directory holding
//   manifest.txt  version, step, optimizer steps, rng state and one line
//                 "array <name> <offset> <count> <rank> <dims...>" per array
//   config.json   the run configuration
//   arrays.bin    every array as little-endian IEEE-754 float64
// Parameters, optimizer moments, the negative queue, style bank and replay
// store are all included, so a reloaded state continues bit-identically.
void save_checkpoint(const std::filesystem::path& dir, const RunConfig& cfg, const TrainState& state);

struct LoadedCheckpoint {
  RunConfig config;
  TrainState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace stylesplit
