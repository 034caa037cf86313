#pragma once

// Fine-tuning loop: clips of encoder features go through DyFN and the frozen
// synthetic decoder, and only the DyFN parameters are optimized (Adam).

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dyfn/dyfn.hpp"
#include "dyfn/losses.hpp"
#include "dyfn/simulator.hpp"

namespace dyfn {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t clip_length = 12;
  int stride_min = 1;
  int stride_max = 5;
  std::size_t steps = 2000;
  std::size_t batch = 1;
  AdamConfig adam;
  LossWeights weights;
  AlignStrategy strategy = AlignStrategy::FirstFrame;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 500;  // 0 disables intermediate checkpoints
  DyfnConfig dyfn;
};

void validate_train_config(const TrainConfig& c);
nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct ClipIndices {
  std::size_t sequence = 0;
  std::size_t start = 0;
  int stride = 1;
  std::vector<std::size_t> frames;
};

/// Every (start, stride) pair whose clip fits in a sequence of `length`.
std::vector<std::pair<std::size_t, int>> admissible_clips(std::size_t length, const TrainConfig& cfg);

/// Uniform draw over the admissible (start, stride) pairs.
ClipIndices sample_clip(std::size_t length, const TrainConfig& cfg, std::uint64_t step_seed);

struct TrainLogEntry {
  std::size_t step = 0;
  LossReport report;  // batch mean
  double grad_norm = 0.0;
  double wall_ms = 0.0;
  std::vector<ClipIndices> clips;
};
nlohmann::json to_json(const TrainLogEntry& e);

struct TrainResult {
  DyfnParams params;
  std::vector<TrainLogEntry> log;
  std::string decoder_checksum;
  std::vector<std::string> warnings;
};

/// Forward pass of one clip: DyFN from a zero state, then the decoder.
/// Returns the loss graph on `tape` with `params` bound as leaves.
struct ClipGraph {
  ParamVars params;
  LossResult loss;
};
ClipGraph clip_loss(Tape& tape, const DyfnParams& params, const Simulation& sim,
                    const std::vector<std::size_t>& frames, const LossWeights& weights,
                    AlignStrategy strategy, std::uint64_t seed, AlignmentMemo* memo = nullptr);

/// Writes the JSONL log, checkpoints/step_N/ and final/ under `out` when given.
TrainResult train(std::span<const Simulation> data, const TrainConfig& cfg,
                  const std::optional<std::filesystem::path>& out = std::nullopt,
                  std::optional<DyfnParams> initial = std::nullopt);

struct GradCheckReport {
  std::map<std::string, double> rel_error;  // per parameter tensor
  std::map<std::string, double> grad_norm;  // analytic, per parameter tensor
  double max_rel_error = 0.0;
  bool passed = false;
  double tolerance = 1e-4;
};
nlohmann::json to_json(const GradCheckReport& r);

/// End-to-end gradient check on the small fixture (3 frames, 8 x 8, C = 4)
/// with affine fits held constant.
GradCheckReport grad_check(const DyfnConfig& config, std::uint64_t seed = 7,
                           bool mask_all_invalid = false);

/// DyFN over the whole stream followed by the decoder.
Sequence stabilize_stream(const Simulation& sim, const DyfnParams& params);

}  // namespace dyfn
