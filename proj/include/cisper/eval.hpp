#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cisper/cloze.hpp"
#include "cisper/config.hpp"
#include "cisper/corpus.hpp"
#include "cisper/encoders.hpp"

namespace cisper {

class CisperModel;

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int support = 0;
  bool operator==(const ClassMetrics&) const = default;
};

// Support-weighted mean of per-class F1 (F1 = 0 when P + R = 0). Classes are
// taken from the golds; predicted-only classes add false positives only.
double weighted_f1(std::span<const std::string> predictions, std::span<const std::string> golds);

struct EvalReport {
  double weighted_f1 = 0.0;
  std::vector<std::string> labels;
  std::map<std::string, ClassMetrics> per_class;
  std::vector<std::vector<int>> confusion;  // [gold][predicted], indexed like `labels`
  std::vector<std::pair<std::string, std::string>> config;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
  // Category, support, precision, recall, F1 in fixed-width columns.
  std::string per_class_table() const;
  bool operator==(const EvalReport&) const = default;
};

// `labels` fixes the row order; categories seen only in the data are appended.
EvalReport make_report(std::span<const std::string> predictions, std::span<const std::string> golds,
                       const std::vector<std::string>& labels = {});

// Predicted category for every labeled utterance, in corpus order, with the
// matching golds.
struct LabeledPredictions {
  std::vector<std::string> predictions;
  std::vector<std::string> golds;
};
LabeledPredictions predict_corpus(const CisperModel& model, const Corpus& corpus,
                                  std::span<const ConversationFeatures> features,
                                  ClassifyMode mode = ClassifyMode::restricted);

EvalReport evaluate(const CisperModel& model, const Corpus& corpus,
                    std::span<const ConversationFeatures> features);

// Everything a train + evaluate run needs besides the configuration.
struct ExperimentData {
  Corpus train;
  std::vector<ConversationFeatures> train_features;
  Corpus validation;
  std::vector<ConversationFeatures> validation_features;
  Corpus test;
  std::vector<ConversationFeatures> test_features;
  Vocabulary vocabulary;
  std::vector<std::string> labels;
  std::map<std::string, std::string> thesaurus;
};

struct RunOutcome {
  EvalReport report;  // on the test split
  double best_validation_f1 = 0.0;
  int epochs_run = 0;
};

// Trains a fresh model from `config` and evaluates the best-validation weights.
RunOutcome run_experiment(const RunConfig& config, const ExperimentData& data,
                          const std::filesystem::path& out_dir = {});

struct AblationRow {
  PromptMode mode = PromptMode::full;
  bool commonsense = false;
  bool context = false;
  std::vector<double> runs;  // weighted-F1 per repeat
  double weighted_f1 = 0.0;  // mean of runs
  double delta = 0.0;        // against the random row
};

// Modes random, context-only, commonsense-only, full with identical seeds and
// budgets. With `out_dir`, the table is rewritten after every row so a failed
// run leaves the finished rows behind.
std::vector<AblationRow> ablation_suite(const RunConfig& base, const ExperimentData& data,
                                        const std::filesystem::path& out_dir = {});
std::string ablation_csv(std::span<const AblationRow> rows);

struct SweepRow {
  int n = 0;             // N_e = N_p
  int pseudo_tokens = 0; // 2(N_e + N_p)
  std::vector<double> runs;
  double weighted_f1 = 0.0;
};

// One run per value, each seeded from the base config alone.
std::vector<SweepRow> sweep_prompt_length(const RunConfig& base, std::span<const int> values,
                                          const ExperimentData& data,
                                          const std::filesystem::path& out_dir = {});
std::string sweep_csv(std::span<const SweepRow> rows);
std::string sweep_svg(std::span<const SweepRow> rows, std::string_view title);

}  // namespace cisper
