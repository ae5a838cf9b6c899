#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "a3rnn/dataset.hpp"
#include "a3rnn/model.hpp"

namespace a3rnn::training {

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 1e-3;
  double clip_norm = 1.0;
  /// Episodes per parameter update; 0 means the whole dataset.
  int batch_episodes = 0;
  std::vector<int> checkpoint_epochs{10, 100, 500};
  /// Dataset episode used to measure query similarity after each epoch.
  int probe_episode = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Adam with global gradient-norm clipping.
class Adam {
 public:
  explicit Adam(nn::ParameterStore& store, double learning_rate = 1e-3, double clip_norm = 1.0);
  /// Scales gradients by `grad_scale`, clips, updates, and clears gradients.
  /// Returns the pre-clip gradient norm.
  double step(double grad_scale = 1.0);

 private:
  nn::ParameterStore& store_;
  double lr_, clip_;
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long steps_ = 0;
  std::vector<Tensor> m_, v_;
};

/// Zero-safe cosine similarity of two equally sized vectors.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// For each TD head: mean over time of the best cosine match among the pseudo-queries.
/// q_a [T, N_TD, D], q_bu [T, N_BU, D] -> [N_TD].
std::vector<double> head_similarity(const Tensor& q_a, const Tensor& q_bu);

std::vector<double> query_similarity(const Model& model, const env::Episode& episode);

struct TrainRecord {
  int epoch = 0;
  losses::LossBreakdown loss;  ///< mean over episodes, measured before each update
  std::vector<double> similarity;
  int clamped_points = 0;
  double grad_norm = 0.0;  ///< mean pre-clip norm over updates
  std::string checkpoint;  ///< file name when one was written this epoch
  double wall_seconds = 0.0;

  /// Everything except wall time, so identical runs serialize identically.
  nlohmann::json to_json() const;
  static TrainRecord from_json(const nlohmann::json& j);
};

struct TrainOptions {
  /// Output directory for metrics.jsonl, timing.jsonl and checkpoints; empty keeps everything in memory.
  std::filesystem::path out_dir;
  bool verbose = false;
};

/// Full-sequence BPTT over the dataset. Throws DivergenceError (after logging a
/// diagnostic record) when a loss turns non-finite.
std::vector<TrainRecord> train(Model& model, const std::vector<env::Episode>& episodes, const TrainConfig& config,
                               const TrainOptions& options = {});

std::vector<TrainRecord> read_metrics(const std::filesystem::path& file);

// Checkpoints: "A3CK", u32 version, u64 config hash, u32 epoch, u32 config length,
// config JSON, u32 parameter count, then per parameter u32 name length, name,
// u32 rank, u32 dims, f64 values.

void save_checkpoint(const std::filesystem::path& file, const Model& model, int epoch);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  int epoch = 0;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& file);

enum class RolloutMode { open_loop, closed_loop };
std::string to_string(RolloutMode mode);
RolloutMode rollout_mode_from_string(const std::string& name);

struct RolloutTrace {
  int slot = 0;
  RolloutMode mode = RolloutMode::closed_loop;
  bool finite = true;
  int steps = 0;          ///< completed steps
  Tensor frames;          ///< [T, 3, S, S] frames the model observed
  Tensor joints;          ///< [T, 4] commanded joints
  Tensor joint_hat;       ///< [T, 4] raw predictions
  Tensor pt_td;           ///< [T, N_TD, 2]
  Tensor pt_bu;           ///< [T, N_BU, 2]
  Tensor m_bu;            ///< [T, N_BU, H, W]
  env::SuccessResult success;

  nlohmann::json to_json() const;
  static RolloutTrace from_json(const nlohmann::json& j);
};

/// Closed loop: each joint prediction becomes the next command and the next
/// frame is rendered from it. Open loop: the teacher episode supplies frames
/// and joint inputs. The start pose comes from the scripted demonstration with
/// `start_seed`.
RolloutTrace rollout(const Model& model, const env::EnvConfig& env, int slot, RolloutMode mode,
                     std::uint64_t start_seed);

struct SuiteConfig {
  std::filesystem::path dataset;
  std::filesystem::path out_dir;
  ModelConfig base;
  TrainConfig train;
  std::vector<Variant> variants{kAllVariants.begin(), kAllVariants.end()};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  /// Start-pose seed of the evaluation rollouts.
  std::uint64_t eval_seed = 7777;
  int jobs = 1;

  nlohmann::json to_json() const;
  /// Relative paths resolve against `base_dir`.
  static SuiteConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
};

struct CellResult {
  Variant variant = Variant::proposed;
  std::uint64_t seed = 0;
  bool completed = false;
  std::string error;
  std::vector<env::SuccessResult> slots;  ///< one per evaluated slot
  std::vector<double> final_similarity;

  nlohmann::json to_json() const;
  static CellResult from_json(const nlohmann::json& j);
};

struct AblationResults {
  /// Planned suite; cells missing from `cells` render as gaps.
  std::vector<Variant> variants;
  std::vector<std::uint64_t> seeds;
  std::vector<CellResult> cells;

  const CellResult* find(Variant v, std::uint64_t seed) const;

  nlohmann::json to_json() const;
  static AblationResults from_json(const nlohmann::json& j);
};

/// DIR/run.json: model and training configs plus the absolute dataset location.
void write_run_file(const std::filesystem::path& dir, const ModelConfig& model, const TrainConfig& train,
                    const std::filesystem::path& dataset);

/// Trains and evaluates every (variant, seed) cell; a failing cell is recorded and the suite continues.
/// DIR/results.json is rewritten as cells finish; each cell trains in its own subdirectory.
AblationResults run_ablation(const SuiteConfig& suite, bool verbose = false);

}  // namespace a3rnn::training
