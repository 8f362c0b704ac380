#pragma once

#include "refshape/losses.hpp"
#include "refshape/nets.hpp"
#include "refshape/synth.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace refshape {

/// Non-finite loss or another unrecoverable condition during training.
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Corrupt, truncated or version-mismatched checkpoint file.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 400;
  double learning_rate = 1e-4;
  int batch_size = 4;
  LossWeights weights;
  NetworkConfig network;  // n_points is taken from the data
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // 0: only the final checkpoint
  /// Pairs visited per epoch, drawn from the shuffled pair grid. 0 visits the
  /// whole grid.
  std::size_t pairs_per_epoch = 0;

  void check() const;
};

enum class NetKind { Simulator, Corrector };

struct LossRecord {
  int epoch = 0;
  int step = 0;
  NetKind net = NetKind::Simulator;
  double loss = 0.0;
  double jaw = 0.0;     // simulator only
  double smooth = 0.0;  // simulator only
  double reg = 0.0;
};

/// Everything needed to resume training or run inference.
struct Checkpoint {
  TrainConfig config;
  NormalizationBox box;
  int epoch = 0;  // completed epochs
  std::vector<LossRecord> history;
  std::unique_ptr<SimulatorNet> simulator;
  std::unique_ptr<CorrectorNet> corrector;
};

/// Fresh networks for `cfg` (network.n_points must already be set).
Checkpoint init_checkpoint(const TrainConfig& cfg, const NormalizationBox& box);

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loss history as CSV: epoch,step,net,loss,L_jaw,L_smooth,L_reg.
void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path);

/// Mean loss of one network over every step of `epoch`.
double epoch_mean(const std::vector<LossRecord>& history, int epoch, NetKind net);

/// Normalized training surfaces with cached sampling structures.
struct TrainingData {
  NormalizationBox box;
  std::vector<LabeledSurface> normals;
  std::vector<LabeledSurface> patients;
  std::vector<PointHierarchy> normal_hierarchies;
  std::vector<SmoothnessStencil> stencils;
};

/// Checks correspondence, normalizes with `box` and precomputes the
/// per-normal structures.
TrainingData prepare_training_data(std::vector<LabeledSurface> normals, std::vector<LabeledSurface> patients,
                                   const NormalizationBox& box, const NetworkConfig& network);

/// Loads the normals and patients listed in a manifest.
std::pair<std::vector<LabeledSurface>, std::vector<LabeledSurface>> load_training_surfaces(const Manifest& m);

/// Pair order of one epoch: indices into the normals x patients grid
/// (pair = normal * n_patients + patient), shuffled with a stream derived
/// from (seed, epoch).
std::vector<std::size_t> epoch_schedule(std::uint64_t seed, int epoch, std::size_t n_pairs, std::size_t take);

using EpochCallback = std::function<void(const Checkpoint&)>;

/// Trains `ck` from its current epoch up to `ck.config.epochs`. Each batch
/// runs one simulator update followed by one corrector update on the
/// simulator's detached output. `on_epoch` runs after every epoch.
void train(Checkpoint& ck, const TrainingData& data, const EpochCallback& on_epoch = {});

/// Convenience wrapper: loads a manifest, builds fresh networks and trains.
Checkpoint train(const Manifest& manifest, TrainConfig cfg, const EpochCallback& on_epoch = {});

struct InferenceResult {
  LabeledSurface reference;       // estimated normal shape, input units
  DisplacementField correction;   // reference - input, input units
};

/// Normalizes with the stored box, runs the corrector, maps back. Works on any
/// vertex count and ordering.
InferenceResult infer(const Checkpoint& ck, const LabeledSurface& patient);

}  // namespace refshape
