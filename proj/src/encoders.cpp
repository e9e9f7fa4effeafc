#include "cisper/encoders.hpp"

#include <bit>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "cisper/error.hpp"

namespace cisper {

using nlohmann::json;

int relation_index(std::string_view relation) {
  for (int j = 0; j < kNumRelations; ++j) {
    if (kRelations[static_cast<std::size_t>(j)] == relation) return j;
  }
  throw ConfigError(fmt::format("unknown commonsense relation '{}'", relation));
}

std::uint64_t stable_hash(std::uint64_t seed, std::string_view key) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char b) {
    h ^= b;
    h *= 0x100000001b3ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(seed >> (8 * i)));
  for (char c : key) mix(static_cast<unsigned char>(c));
  return h;
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

FeatureVector to_float(const Vector& v) { return v.cast<float>(); }

}  // namespace

Vector hashed_unit_vector(std::uint64_t seed, std::string_view key, int dim) {
  std::uint64_t state = stable_hash(seed, key);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) {
    v(i) = static_cast<double>(splitmix64(state) >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  }
  const double n = v.norm();
  if (n == 0.0) {
    v.setZero();
    v(0) = 1.0;
    return v;
  }
  return v / n;
}

FeatureVector encode_utterance_semantics(const Utterance& utterance, const SemanticBackend& backend) {
  if (utterance.text.empty()) {
    throw BackendError(fmt::format("conversation {} utterance {}: empty text",
                                   utterance.conversation_id, utterance.index));
  }
  const auto layers = backend.last_layer_states(utterance);
  Vector mean = Vector::Zero(backend.dim());
  for (const auto& v : layers) {
    if (v.size() != backend.dim()) {
      throw BackendError(fmt::format("{} returned a {}-vector, expected {}", backend.name(),
                                     v.size(), backend.dim()));
    }
    mean += v;
  }
  return to_float(mean / 4.0);
}

FeatureMatrix encode_semantics_batch(std::span<const Utterance> utterances,
                                     const SemanticBackend& backend) {
  FeatureMatrix out(static_cast<Eigen::Index>(utterances.size()), backend.dim());
  for (std::size_t i = 0; i < utterances.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = encode_utterance_semantics(utterances[i], backend);
  }
  return out;
}

FeatureVector encode_commonsense(const Utterance& utterance, std::string_view relation,
                                 const CommonsenseBackend& backend) {
  const int j = relation_index(relation);
  const Vector v = backend.encode(utterance, j);
  if (v.size() != backend.dim()) {
    throw BackendError(fmt::format("{} returned a {}-vector, expected {}", backend.name(), v.size(),
                                   backend.dim()));
  }
  return to_float(v);
}

ReferenceSemanticBackend::ReferenceSemanticBackend(int dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim < 1) throw ConfigError("reference backend dimension must be >= 1");
}

std::string ReferenceSemanticBackend::name() const {
  return fmt::format("reference-semantic(seed={})", seed_);
}

std::array<Vector, 4> ReferenceSemanticBackend::last_layer_states(const Utterance& u) const {
  const Vector unit = hashed_unit_vector(seed_, u.text, dim_);
  std::array<Vector, 4> layers;
  Vector residual = Vector::Zero(dim_);
  for (int k = 0; k < 3; ++k) {
    const Vector delta = 0.5 * hashed_unit_vector(seed_, fmt::format("layer{}\x1f{}", k, u.text), dim_);
    residual += delta;
    layers[static_cast<std::size_t>(k)] = unit + delta;
  }
  layers[3] = unit - residual;
  return layers;
}

ReferenceCommonsenseBackend::ReferenceCommonsenseBackend(int dim, std::uint64_t seed)
    : dim_(dim), seed_(seed) {
  if (dim < 1) throw ConfigError("reference backend dimension must be >= 1");
}

std::string ReferenceCommonsenseBackend::name() const {
  return fmt::format("reference-commonsense(seed={})", seed_);
}

Vector ReferenceCommonsenseBackend::encode(const Utterance& u, int relation) const {
  if (relation < 0 || relation >= kNumRelations) {
    throw ConfigError(fmt::format("relation index {} out of range", relation));
  }
  return hashed_unit_vector(
      seed_, fmt::format("{}\x1f{}", u.text, kRelations[static_cast<std::size_t>(relation)]), dim_);
}

ReferenceBackends reference_backend(int semantic_dim, int commonsense_dim, std::uint64_t seed) {
  return {std::make_unique<ReferenceSemanticBackend>(semantic_dim, seed),
          std::make_unique<ReferenceCommonsenseBackend>(commonsense_dim, seed)};
}

namespace {

std::vector<int> truncated_ids(const MaskedLanguageModel& lm, const Utterance& u, int budget) {
  std::vector<int> ids = lm.tokenizer().encode(u.text);
  if (static_cast<int>(ids.size()) > budget) {
    spdlog::warn("conversation {} utterance {}: {} tokens truncated to {}", u.conversation_id,
                 u.index, ids.size(), budget);
    ids.resize(static_cast<std::size_t>(budget));
  }
  return ids;
}

}  // namespace

MaskedLmSemanticBackend::MaskedLmSemanticBackend(const MaskedLanguageModel& lm) : lm_(&lm) {
  if (lm.num_layers() + 1 < 4) {
    throw ConfigError(fmt::format(
        "semantic extraction pools the last 4 hidden states; the masked LM has only {}",
        lm.num_layers() + 1));
  }
}

std::array<Vector, 4> MaskedLmSemanticBackend::last_layer_states(const Utterance& u) const {
  std::vector<int> ids = {Vocabulary::kCls};
  const auto words = truncated_ids(*lm_, u, lm_->max_length() - 2);
  ids.insert(ids.end(), words.begin(), words.end());
  ids.push_back(Vocabulary::kSep);
  ag::Graph g;
  const auto states = lm_->encode(g, lm_->embed_tokens(g, ids));
  std::array<Vector, 4> out;
  for (std::size_t k = 0; k < 4; ++k) {
    out[k] = states[states.size() - 4 + k].value().row(0).transpose();
  }
  return out;
}

MaskedLmCommonsenseBackend::MaskedLmCommonsenseBackend(const MaskedLanguageModel& lm) : lm_(&lm) {}

Vector MaskedLmCommonsenseBackend::encode(const Utterance& u, int relation) const {
  if (relation < 0 || relation >= kNumRelations) {
    throw ConfigError(fmt::format("relation index {} out of range", relation));
  }
  const std::string_view rel = kRelations[static_cast<std::size_t>(relation)];
  const auto& vocab = lm_->vocabulary();
  auto rel_id = vocab.id(rel);
  if (!rel_id) {
    std::string lower(rel);
    for (char& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    rel_id = vocab.id(lower);
  }
  if (!rel_id) {
    throw BackendError(fmt::format("vocabulary has no token for relation {}", rel));
  }
  std::vector<int> ids = truncated_ids(*lm_, u, lm_->max_length() - 1);
  ids.push_back(*rel_id);
  ag::Graph g;
  const auto states = lm_->encode(g, lm_->embed_tokens(g, ids));
  return states.back().value().row(states.back().rows() - 1).transpose();
}

FeatureVector ConversationFeatures::relation(int t, int j) const {
  const int dc = commonsense_dim();
  return commonsense.row(t).segment(j * dc, dc).transpose();
}

bool ConversationFeatures::operator==(const ConversationFeatures& o) const {
  return conversation_id == o.conversation_id && semantic.rows() == o.semantic.rows() &&
         semantic.cols() == o.semantic.cols() && commonsense.rows() == o.commonsense.rows() &&
         commonsense.cols() == o.commonsense.cols() && semantic == o.semantic &&
         commonsense == o.commonsense;
}

PrecomputedCommonsenseBackend::PrecomputedCommonsenseBackend(
    std::vector<ConversationFeatures> features) {
  for (auto& f : features) {
    if (dim_ == 0) dim_ = f.commonsense_dim();
    if (f.commonsense_dim() != dim_) throw SchemaError("precomputed features disagree on d_c");
    std::string id = f.conversation_id;
    by_id_.emplace(std::move(id), std::move(f));
  }
}

Vector PrecomputedCommonsenseBackend::encode(const Utterance& u, int relation) const {
  auto it = by_id_.find(u.conversation_id);
  if (it == by_id_.end() || u.index < 0 || u.index >= it->second.length()) {
    throw BackendError(fmt::format("no precomputed commonsense for conversation {} utterance {}",
                                   u.conversation_id, u.index));
  }
  return it->second.relation(u.index, relation).cast<double>();
}

ConversationFeatures extract_conversation_features(const Conversation& conversation,
                                                   const SemanticBackend& semantic,
                                                   const CommonsenseBackend& commonsense) {
  const auto L = static_cast<Eigen::Index>(conversation.size());
  const int du = semantic.dim();
  const int dc = commonsense.dim();
  ConversationFeatures f;
  f.conversation_id = conversation.id;
  f.semantic.resize(L, du);
  f.commonsense.resize(L, static_cast<Eigen::Index>(kNumRelations) * dc);
  for (Eigen::Index t = 0; t < L; ++t) {
    const Utterance& u = conversation.utterances[static_cast<std::size_t>(t)];
    try {
      f.semantic.row(t) = encode_utterance_semantics(u, semantic).transpose();
      for (int j = 0; j < kNumRelations; ++j) {
        f.commonsense.row(t).segment(j * dc, dc) =
            encode_commonsense(u, kRelations[static_cast<std::size_t>(j)], commonsense).transpose();
      }
    } catch (const UserError&) {
      throw;
    } catch (const std::exception& e) {
      throw BackendError(
          fmt::format("conversation {} utterance {}: {}", conversation.id, u.index, e.what()));
    }
  }
  if (!f.semantic.allFinite() || !f.commonsense.allFinite()) {
    throw NumericalError(fmt::format("non-finite features for conversation {}", conversation.id));
  }
  return f;
}

std::vector<ConversationFeatures> extract_corpus_features(const Corpus& corpus,
                                                          const SemanticBackend& semantic,
                                                          const CommonsenseBackend& commonsense) {
  std::vector<ConversationFeatures> out;
  out.reserve(corpus.conversations.size());
  for (const auto& c : corpus.conversations) {
    out.push_back(extract_conversation_features(c, semantic, commonsense));
  }
  return out;
}

namespace {

constexpr const char* kManifestName = "manifest";

std::string blob_name(const std::string& id) {
  std::string out;
  for (unsigned char c : id) {
    if (std::isalnum(c) || c == '_' || c == '-' || c == '.') {
      out.push_back(static_cast<char>(c));
    } else {
      out += fmt::format("%{:02X}", c);
    }
  }
  if (out.empty() || out == "." || out == "..") out = "%" + out;
  return "blobs/" + out + ".bin";
}

std::vector<char> to_le_bytes(const FeatureMatrix& a, const FeatureMatrix& b) {
  std::vector<char> bytes(static_cast<std::size_t>(a.size() + b.size()) * 4);
  std::size_t off = 0;
  auto put = [&](const FeatureMatrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t w = std::bit_cast<std::uint32_t>(m.data()[i]);
      for (int k = 0; k < 4; ++k) bytes[off++] = static_cast<char>((w >> (8 * k)) & 0xFF);
    }
  };
  put(a);
  put(b);
  return bytes;
}

void from_le_bytes(const std::vector<char>& bytes, FeatureMatrix& a, FeatureMatrix& b) {
  std::size_t off = 0;
  auto get = [&](FeatureMatrix& m) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      std::uint32_t w = 0;
      for (int k = 0; k < 4; ++k) {
        w |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off++])) << (8 * k);
      }
      m.data()[i] = std::bit_cast<float>(w);
    }
  };
  get(a);
  get(b);
}

std::uint32_t checksum(const std::vector<char>& bytes) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

void write_atomic(const std::filesystem::path& path, const char* data, std::size_t size) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CorruptCacheError(fmt::format("cannot write {}", tmp));
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw CorruptCacheError(fmt::format("short write to {}", tmp));
  }
  std::filesystem::rename(tmp, path);
}

json manifest_to_json(const CacheManifest& m) {
  json blobs = json::object();
  for (const auto& [id, e] : m.entries) {
    blobs[id] = {{"file", e.file}, {"rows", e.rows}, {"crc32", e.crc32}};
  }
  return {{"format", "cisper-feature-cache"},
          {"version", 1},
          {"d_u", m.semantic_dim},
          {"d_c", m.commonsense_dim},
          {"relations", m.relations},
          {"dtype", m.dtype},
          {"endianness", m.endianness},
          {"semantic_backend", m.semantic_backend},
          {"commonsense_backend", m.commonsense_backend},
          {"blobs", blobs}};
}

}  // namespace

CacheManifest write_feature_cache(std::span<const ConversationFeatures> features,
                                  const std::filesystem::path& root,
                                  std::string_view semantic_backend,
                                  std::string_view commonsense_backend) {
  std::filesystem::create_directories(root / "blobs");
  CacheManifest m;
  m.relations.assign(kRelations.begin(), kRelations.end());
  m.semantic_backend = semantic_backend;
  m.commonsense_backend = commonsense_backend;
  for (const auto& f : features) {
    if (m.entries.empty()) {
      m.semantic_dim = f.semantic_dim();
      m.commonsense_dim = f.commonsense_dim();
    }
    if (f.semantic_dim() != m.semantic_dim || f.commonsense_dim() != m.commonsense_dim ||
        f.commonsense.rows() != f.semantic.rows() ||
        f.commonsense.cols() != static_cast<Eigen::Index>(kNumRelations) * m.commonsense_dim) {
      throw SchemaError(fmt::format("conversation {} has inconsistent feature shapes",
                                    f.conversation_id));
    }
    if (m.entries.count(f.conversation_id) != 0) {
      throw SchemaError(fmt::format("duplicate conversation id {} in cache", f.conversation_id));
    }
    const auto bytes = to_le_bytes(f.semantic, f.commonsense);
    CacheEntry e{blob_name(f.conversation_id), f.length(), checksum(bytes)};
    write_atomic(root / e.file, bytes.data(), bytes.size());
    m.entries.emplace(f.conversation_id, e);
  }
  const std::string text = manifest_to_json(m).dump(2) + "\n";
  write_atomic(root / kManifestName, text.data(), text.size());
  return m;
}

CacheManifest read_cache_manifest(const std::filesystem::path& root) {
  std::ifstream in(root / kManifestName);
  if (!in) throw NotFoundError(fmt::format("no feature cache manifest under {}", root.string()));
  CacheManifest m;
  try {
    const json j = json::parse(in);
    if (j.at("format") != "cisper-feature-cache" || j.at("version") != 1) {
      throw SchemaError(fmt::format("{}: unsupported cache format", root.string()));
    }
    m.semantic_dim = j.at("d_u").get<int>();
    m.commonsense_dim = j.at("d_c").get<int>();
    m.relations = j.at("relations").get<std::vector<std::string>>();
    m.dtype = j.at("dtype").get<std::string>();
    m.endianness = j.at("endianness").get<std::string>();
    m.semantic_backend = j.value("semantic_backend", "");
    m.commonsense_backend = j.value("commonsense_backend", "");
    for (const auto& [id, e] : j.at("blobs").items()) {
      m.entries.emplace(id, CacheEntry{e.at("file").get<std::string>(), e.at("rows").get<int>(),
                                       e.at("crc32").get<std::uint32_t>()});
    }
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("{}: malformed manifest: {}", root.string(), e.what()));
  }
  if (m.dtype != "float32" || m.endianness != "little") {
    throw SchemaError("feature cache must be little-endian float32");
  }
  if (m.relations != std::vector<std::string>(kRelations.begin(), kRelations.end())) {
    throw SchemaError("feature cache relation list differs from the nine ATOMIC relations");
  }
  return m;
}

std::vector<ConversationFeatures> read_feature_cache(const std::filesystem::path& root,
                                                     std::span<const std::string> ids) {
  const CacheManifest m = read_cache_manifest(root);
  std::vector<ConversationFeatures> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = m.entries.find(id);
    if (it == m.entries.end()) {
      std::string available;
      for (const auto& [k, v] : m.entries) available += (available.empty() ? "" : ", ") + k;
      throw NotFoundError(
          fmt::format("conversation {} not in feature cache; available: {}", id, available));
    }
    const CacheEntry& e = it->second;
    const auto path = root / e.file;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorruptCacheError(fmt::format("missing blob {}", e.file));
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::size_t expected = static_cast<std::size_t>(e.rows) *
                                 static_cast<std::size_t>(m.semantic_dim + kNumRelations * m.commonsense_dim) * 4;
    if (bytes.size() != expected) {
      throw SchemaError(fmt::format("blob {} (conversation {}) holds {} bytes; manifest dims (L={}, d_u={}, d_c={}) need {}",
                                    e.file, id, bytes.size(), e.rows, m.semantic_dim,
                                    m.commonsense_dim, expected));
    }
    if (checksum(bytes) != e.crc32) {
      throw CorruptCacheError(fmt::format("checksum mismatch in blob {} (conversation {})", e.file, id));
    }
    ConversationFeatures f;
    f.conversation_id = id;
    f.semantic.resize(e.rows, m.semantic_dim);
    f.commonsense.resize(e.rows, static_cast<Eigen::Index>(kNumRelations) * m.commonsense_dim);
    from_le_bytes(bytes, f.semantic, f.commonsense);
    out.push_back(std::move(f));
  }
  return out;
}

std::vector<ConversationFeatures> read_feature_cache(const std::filesystem::path& root,
                                                     const Corpus& corpus) {
  std::vector<std::string> ids;
  ids.reserve(corpus.conversations.size());
  for (const auto& c : corpus.conversations) ids.push_back(c.id);
  auto features = read_feature_cache(root, ids);
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].length() != static_cast<int>(corpus.conversations[i].size())) {
      throw SchemaError(fmt::format("cached conversation {} has {} rows, corpus has {} utterances",
                                    ids[i], features[i].length(), corpus.conversations[i].size()));
    }
  }
  return features;
}

}  // namespace cisper
