#pragma once

// Per-utterance feature extraction: a semantic vector from the pooled first
// token of the last four layers of an encoder, and one vector per commonsense
// relation. Backends are pluggable; results can be persisted in a feature
// cache so that training never re-runs the extractors.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "cisper/corpus.hpp"
#include "cisper/masked_lm.hpp"

namespace cisper {

using FeatureVector = Eigen::VectorXf;
using FeatureMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kNumRelations = 9;
inline constexpr int kNumSpeakerRelations = 6;
inline constexpr std::array<std::string_view, kNumRelations> kRelations = {
    "xIntent", "xAttr", "xNeed", "xWant", "xEffect", "xReact", "oWant", "oEffect", "oReact"};

// 0-based position of a relation token; throws ConfigError when unknown.
int relation_index(std::string_view relation);

class SemanticBackend {
 public:
  virtual ~SemanticBackend() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  // First-token hidden states of the last four layers, oldest layer first.
  virtual std::array<Vector, 4> last_layer_states(const Utterance& utterance) const = 0;
};

class CommonsenseBackend {
 public:
  virtual ~CommonsenseBackend() = default;
  virtual std::string name() const = 0;
  virtual int dim() const = 0;
  virtual Vector encode(const Utterance& utterance, int relation) const = 0;
};

FeatureVector encode_utterance_semantics(const Utterance& utterance, const SemanticBackend& backend);
FeatureMatrix encode_semantics_batch(std::span<const Utterance> utterances,
                                     const SemanticBackend& backend);
FeatureVector encode_commonsense(const Utterance& utterance, std::string_view relation,
                                 const CommonsenseBackend& backend);

// Unit vectors keyed by a stable hash of (seed, input string); identical on
// every platform.
class ReferenceSemanticBackend final : public SemanticBackend {
 public:
  ReferenceSemanticBackend(int dim, std::uint64_t seed);
  std::string name() const override;
  int dim() const override { return dim_; }
  // Four layer vectors whose mean is the unit vector for the text.
  std::array<Vector, 4> last_layer_states(const Utterance& utterance) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

class ReferenceCommonsenseBackend final : public CommonsenseBackend {
 public:
  ReferenceCommonsenseBackend(int dim, std::uint64_t seed);
  std::string name() const override;
  int dim() const override { return dim_; }
  Vector encode(const Utterance& utterance, int relation) const override;

 private:
  int dim_;
  std::uint64_t seed_;
};

struct ReferenceBackends {
  std::unique_ptr<SemanticBackend> semantic;
  std::unique_ptr<CommonsenseBackend> commonsense;
};
ReferenceBackends reference_backend(int semantic_dim, int commonsense_dim, std::uint64_t seed);

// Unit-normalized pseudo-random vector of `dim` entries for a key string.
Vector hashed_unit_vector(std::uint64_t seed, std::string_view key, int dim);
std::uint64_t stable_hash(std::uint64_t seed, std::string_view key);

// Frozen masked LM used as a semantic extractor. Input is framed as
// [CLS] tokens [SEP]; text longer than max_length-2 is truncated with a warning.
class MaskedLmSemanticBackend final : public SemanticBackend {
 public:
  explicit MaskedLmSemanticBackend(const MaskedLanguageModel& lm);
  std::string name() const override { return "masked-lm"; }
  int dim() const override { return lm_->hidden_dim(); }
  std::array<Vector, 4> last_layer_states(const Utterance& utterance) const override;

 private:
  const MaskedLanguageModel* lm_;
};

// A transformer encoder fed with the utterance tokens followed by the
// relation token; the last-layer state of the final position is returned.
class MaskedLmCommonsenseBackend final : public CommonsenseBackend {
 public:
  explicit MaskedLmCommonsenseBackend(const MaskedLanguageModel& lm);
  std::string name() const override { return "masked-lm-commonsense"; }
  int dim() const override { return lm_->hidden_dim(); }
  Vector encode(const Utterance& utterance, int relation) const override;

 private:
  const MaskedLanguageModel* lm_;
};

struct ConversationFeatures {
  std::string conversation_id;
  FeatureMatrix semantic;     // L x d_u, row t = x_t
  FeatureMatrix commonsense;  // L x (9 * d_c), row t = c^t_1 ⊕ ... ⊕ c^t_9

  int length() const { return static_cast<int>(semantic.rows()); }
  int semantic_dim() const { return static_cast<int>(semantic.cols()); }
  int commonsense_dim() const { return static_cast<int>(commonsense.cols()) / kNumRelations; }
  // c^t_j for 0-based t and j.
  FeatureVector relation(int t, int j) const;
  bool operator==(const ConversationFeatures& o) const;
};

// Reads previously cached commonsense vectors back as a backend.
class PrecomputedCommonsenseBackend final : public CommonsenseBackend {
 public:
  explicit PrecomputedCommonsenseBackend(std::vector<ConversationFeatures> features);
  std::string name() const override { return "precomputed"; }
  int dim() const override { return dim_; }
  Vector encode(const Utterance& utterance, int relation) const override;

 private:
  std::unordered_map<std::string, ConversationFeatures> by_id_;
  int dim_ = 0;
};

ConversationFeatures extract_conversation_features(const Conversation& conversation,
                                                   const SemanticBackend& semantic,
                                                   const CommonsenseBackend& commonsense);
std::vector<ConversationFeatures> extract_corpus_features(const Corpus& corpus,
                                                          const SemanticBackend& semantic,
                                                          const CommonsenseBackend& commonsense);

struct CacheEntry {
  std::string file;  // relative to the cache root
  int rows = 0;
  std::uint32_t crc32 = 0;
};

struct CacheManifest {
  int semantic_dim = 0;
  int commonsense_dim = 0;
  std::vector<std::string> relations;
  std::string dtype = "float32";
  std::string endianness = "little";
  std::string semantic_backend;
  std::string commonsense_backend;
  std::map<std::string, CacheEntry> entries;
};

// Layout: root/manifest (JSON) and root/blobs/<id>.bin holding the semantic
// block then the commonsense block, row-major little-endian float32.
CacheManifest write_feature_cache(std::span<const ConversationFeatures> features,
                                  const std::filesystem::path& root,
                                  std::string_view semantic_backend = "unknown",
                                  std::string_view commonsense_backend = "unknown");
CacheManifest read_cache_manifest(const std::filesystem::path& root);
std::vector<ConversationFeatures> read_feature_cache(const std::filesystem::path& root,
                                                     std::span<const std::string> ids);
// Features for every conversation of `corpus`, in corpus order, validating row counts.
std::vector<ConversationFeatures> read_feature_cache(const std::filesystem::path& root,
                                                     const Corpus& corpus);

}  // namespace cisper
