#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cisper/cloze.hpp"
#include "cisper/config.hpp"
#include "cisper/corpus.hpp"
#include "cisper/encoders.hpp"
#include "cisper/model.hpp"

namespace cisper {

inline constexpr double kLogEpsilon = 1e-12;

// Negative mean log-probability of the gold words; probabilities below
// kLogEpsilon are clamped (and logged).
double compute_loss(std::span<const MaskDistribution> distributions, std::span<const int> gold_ids);

// ADAM with decoupled weight decay.
class AdamW {
 public:
  struct Moments {
    Matrix m;
    Matrix v;
  };

  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double epsilon = 1e-8);

  void step(std::span<Parameter* const> params);
  long steps() const { return steps_; }

  std::map<std::string, Moments>& moments() { return moments_; }
  const std::map<std::string, Moments>& moments() const { return moments_; }
  void set_steps(long s) { steps_ = s; }

 private:
  double lr_, wd_, b1_, b2_, eps_;
  long steps_ = 0;
  std::map<std::string, Moments> moments_;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  double train_loss = 0.0;  // utterance-weighted mean over the epoch
  double validation_f1 = 0.0;
  double train_accuracy = -1.0;  // -1 when not tracked
  long steps = 0;                // optimizer steps so far
  bool operator==(const EpochRecord&) const = default;
};

struct TrainerState {
  int epoch = 0;       // completed epochs
  int cursor = 0;      // conversations consumed in the running epoch
  long step = 0;
  double epoch_loss_sum = 0.0;
  long epoch_utterances = 0;
  double best_f1 = -1.0;
  int best_epoch = 0;
  int stale_epochs = 0;
  bool stopped = false;
  std::vector<EpochRecord> history;
  std::vector<double> step_losses;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t schema_version = kCheckpointVersion;
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::string> vocabulary;  // full token list
  int reserved_tokens = 0;
  std::vector<std::string> labels;
  std::map<std::string, std::string> thesaurus;
  std::map<std::string, Matrix> tensors;
  std::map<std::string, Matrix> best_tensors;  // empty until a validation pass
  std::map<std::string, AdamW::Moments> optimizer;
  long optimizer_steps = 0;
  TrainerState trainer;
};

// One file: magic, schema version, JSON manifest (names, shapes, dtype,
// offsets, config, trainer state), then raw little-endian payloads.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::unique_ptr<CisperModel> model_from_checkpoint(const Checkpoint& checkpoint,
                                                   bool use_best = true);
Vocabulary vocabulary_from_tokens(const std::vector<std::string>& tokens, int reserved);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  bool track_train_accuracy = false;
  std::optional<double> stop_at_train_accuracy;  // stop once reached (needs tracking)
};

struct TrainData {
  const Corpus* train = nullptr;
  std::span<const ConversationFeatures> train_features;
  const Corpus* validation = nullptr;  // optional
  std::span<const ConversationFeatures> validation_features;
};

class Trainer {
 public:
  Trainer(CisperModel& model, TrainData data, TrainOptions options = {});
  ~Trainer();

  // One optimizer step over the next conversations (at least batch_size
  // utterances or the rest of the epoch). Returns the step loss. Epoch-end
  // bookkeeping runs when the step finishes an epoch.
  double step();
  void run_epoch();
  // Until config.epochs or early stopping; restores the best weights.
  void train();

  bool finished() const;
  const TrainerState& state() const { return state_; }
  const AdamW& optimizer() const { return optimizer_; }

  Checkpoint checkpoint() const;
  void resume(const Checkpoint& checkpoint);

 private:
  std::vector<int> epoch_order(int epoch) const;
  void end_epoch();
  void log(const nlohmann::json& record);

  CisperModel& model_;
  TrainData data_;
  TrainOptions options_;
  AdamW optimizer_;
  TrainerState state_;
  std::vector<int> order_;
  std::map<std::string, Matrix> best_;
  std::unique_ptr<std::ofstream> log_;
};

}  // namespace cisper
