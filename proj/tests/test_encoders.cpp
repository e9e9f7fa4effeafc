#include <doctest.h>

#include "cisper/encoders.hpp"
#include "cisper/error.hpp"
#include "cisper/fixture.hpp"
#include "helpers.hpp"

using namespace cisper;
using testing::TempDir;

namespace {

class FixedLayers final : public SemanticBackend {
 public:
  FixedLayers(int dim, double alpha) : dim_(dim), alpha_(alpha) {}
  std::string name() const override { return "fixed"; }
  int dim() const override { return dim_; }
  std::array<Vector, 4> last_layer_states(const Utterance&) const override {
    std::array<Vector, 4> out;
    for (int k = 0; k < 4; ++k) {
      out[k] = Vector::Zero(dim_);
      out[k](0) = alpha_ * (k + 1);
      out[k](1) = alpha_ * 0.1 * k * k;
    }
    return out;
  }

 private:
  int dim_;
  double alpha_;
};

class Failing final : public CommonsenseBackend {
 public:
  std::string name() const override { return "failing"; }
  int dim() const override { return 2; }
  Vector encode(const Utterance& u, int) const override {
    if (u.index == 1) throw std::runtime_error("model exploded");
    return Vector::Zero(2);
  }
};

Conversation conversation(const std::string& id, int length) {
  Conversation c{id, {}};
  for (int t = 0; t < length; ++t) {
    c.utterances.push_back({id, t, t % 2 ? "B" : "A", "utterance number " + std::to_string(t) + " of " + id,
                            std::string("joy")});
  }
  return c;
}

Vocabulary vocabulary_with_relations() {
  std::vector<std::string> words = toy_vocabulary(20).tokens();
  words.erase(words.begin(), words.begin() + 25);
  for (auto r : kRelations) words.emplace_back(r);
  return Vocabulary(words, 20);
}

}  // namespace

TEST_CASE("semantic vector is the mean of the four layer states") {
  class Basis final : public SemanticBackend {
   public:
    std::string name() const override { return "basis"; }
    int dim() const override { return 3; }
    std::array<Vector, 4> last_layer_states(const Utterance&) const override {
      std::array<Vector, 4> out;
      for (int k = 0; k < 4; ++k) out[k] = Vector::Unit(3, 0) * (k + 1);
      return out;
    }
  } basis;
  const Utterance u{"c", 0, "A", "hi", std::nullopt};
  const FeatureVector x = encode_utterance_semantics(u, basis);
  CHECK(x(0) == 2.5f);
  CHECK(x(1) == 0.0f);
  CHECK(x(2) == 0.0f);
}

TEST_CASE("mean pooling is linear in the layer states") {
  const Utterance u{"c", 0, "A", "hi", std::nullopt};
  const FeatureVector base = encode_utterance_semantics(u, FixedLayers(4, 1.0));
  const FeatureVector scaled = encode_utterance_semantics(u, FixedLayers(4, 3.0));
  CHECK((scaled - 3.0f * base).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("reference backends: determinism, unit norm, seed sensitivity") {
  const auto a = reference_backend(16, 12, 5);
  const auto b = reference_backend(16, 12, 5);
  const auto c = reference_backend(16, 12, 6);
  const Utterance u{"c", 0, "A", "I slammed the door", std::nullopt};
  const FeatureVector xa = encode_utterance_semantics(u, *a.semantic);
  CHECK(xa == encode_utterance_semantics(u, *b.semantic));
  CHECK(xa != encode_utterance_semantics(u, *c.semantic));
  CHECK(std::abs(xa.norm() - 1.0f) < 1e-6);
  const FeatureVector react = encode_commonsense(u, "xReact", *a.commonsense);
  const FeatureVector oreact = encode_commonsense(u, "oReact", *a.commonsense);
  CHECK(react.size() == 12);
  CHECK(react != oreact);
  CHECK(react == encode_commonsense(u, "xReact", *b.commonsense));
  CHECK(std::abs(react.norm() - 1.0f) < 1e-6);
  CHECK_THROWS_AS(encode_commonsense(u, "xWish", *a.commonsense), ConfigError);
}

TEST_CASE("stable hash is fixed across platforms") {
  // golden values: FNV-1a 64 over the seed's 8 little-endian bytes, then the key
  CHECK(stable_hash(0, "") == 12161962213042174405ULL);
  CHECK(stable_hash(0, "a") != stable_hash(1, "a"));
  const Vector v = hashed_unit_vector(3, "key", 8);
  CHECK(v == hashed_unit_vector(3, "key", 8));
}

TEST_CASE("batch semantics equal a one-at-a-time loop") {
  const auto be = reference_backend(8, 4, 1);
  std::vector<Utterance> utts;
  for (int i = 0; i < 100; ++i) utts.push_back({"c", i, "A", "toy line " + std::to_string(i), std::nullopt});
  const FeatureMatrix batch = encode_semantics_batch(utts, *be.semantic);
  REQUIRE(batch.rows() == 100);
  for (int i = 0; i < 100; ++i) {
    CHECK(FeatureVector(batch.row(i).transpose()) == encode_utterance_semantics(utts[i], *be.semantic));
  }
}

TEST_CASE("conversation features: shapes and compositional oracle") {
  const auto be = reference_backend(8, 4, 2);
  for (int L : {1, 3}) {
    const Conversation conv = conversation("c" + std::to_string(L), L);
    const ConversationFeatures f = extract_conversation_features(conv, *be.semantic, *be.commonsense);
    CHECK(f.semantic.rows() == L);
    CHECK(f.semantic.cols() == 8);
    CHECK(f.commonsense.rows() == L);
    CHECK(f.commonsense.cols() == 9 * 4);
    for (int t = 0; t < L; ++t) {
      CHECK(FeatureVector(f.semantic.row(t).transpose()) ==
            encode_utterance_semantics(conv.utterances[t], *be.semantic));
      for (int j = 0; j < 9; ++j) {
        CHECK(f.relation(t, j) == encode_commonsense(conv.utterances[t], kRelations[j], *be.commonsense));
      }
    }
  }
}

TEST_CASE("backend failures carry the conversation id and index") {
  const auto be = reference_backend(4, 2, 0);
  Failing failing;
  try {
    extract_conversation_features(conversation("dlg9", 3), *be.semantic, failing);
    FAIL("expected BackendError");
  } catch (const BackendError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("dlg9") != std::string::npos);
    CHECK(msg.find("1") != std::string::npos);
  }
}

TEST_CASE("masked-lm backends truncate long input with a warning") {
  TransformerMaskedLm lm(vocabulary_with_relations(), TransformerMlmConfig{16, 3, 2, 32, 8}, 3);
  MaskedLmSemanticBackend sem(lm);
  MaskedLmCommonsenseBackend cs(lm);
  const Utterance longer{"c", 0, "A", "i feel so happy today i feel so happy today okay", std::nullopt};
  const FeatureVector x = encode_utterance_semantics(longer, sem);
  CHECK(x.size() == 16);
  CHECK(x.allFinite());
  CHECK(x == encode_utterance_semantics(longer, sem));
  const FeatureVector c = encode_commonsense(longer, "xIntent", cs);
  CHECK(c.size() == 16);
  CHECK(c != encode_commonsense(longer, "oReact", cs));
  TransformerMaskedLm bare(toy_vocabulary(20), TransformerMlmConfig{16, 3, 2, 32, 8}, 3);
  CHECK_THROWS_AS(encode_commonsense(longer, "xIntent", MaskedLmCommonsenseBackend(bare)), BackendError);
}

TEST_CASE("masked-lm semantic backend needs four hidden states") {
  TransformerMaskedLm lm(toy_vocabulary(20), TransformerMlmConfig{16, 2, 2, 32, 16}, 3);
  CHECK_THROWS(MaskedLmSemanticBackend{lm});
}

TEST_CASE("feature cache round-trip, byte-stable rewrites, and errors") {
  const auto be = reference_backend(6, 3, 4);
  std::vector<ConversationFeatures> feats;
  std::vector<std::string> ids;
  for (int c = 0; c < 5; ++c) {
    const auto conv = conversation("conv/" + std::to_string(c), 1 + c % 3);
    feats.push_back(extract_conversation_features(conv, *be.semantic, *be.commonsense));
    ids.push_back(conv.id);
  }
  TempDir dir;
  const CacheManifest m = write_feature_cache(feats, dir / "cache", be.semantic->name(), be.commonsense->name());
  CHECK(m.semantic_dim == 6);
  CHECK(m.commonsense_dim == 3);
  CHECK(m.relations.size() == 9);
  const auto back = read_feature_cache(dir / "cache", ids);
  REQUIRE(back.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) CHECK(back[i] == feats[i]);

  write_feature_cache(feats, dir / "again", be.semantic->name(), be.commonsense->name());
  CHECK(testing::read_file(dir / "cache" / "manifest") == testing::read_file(dir / "again" / "manifest"));
  for (const auto& [id, e] : m.entries) {
    CHECK(testing::read_file(dir / "cache" / e.file) == testing::read_file(dir / "again" / e.file));
  }

  SUBCASE("unknown id lists available ids") {
    const std::vector<std::string> missing{"nope"};
    try {
      read_feature_cache(dir / "cache", missing);
      FAIL("expected NotFoundError");
    } catch (const NotFoundError& e) {
      CHECK(std::string(e.what()).find("conv/0") != std::string::npos);
    }
  }
  SUBCASE("flipped byte is a corrupt-cache error naming the blob") {
    const auto path = dir / "cache" / m.entries.at("conv/1").file;
    std::string bytes = testing::read_file(path);
    bytes[3] ^= 0x55;
    testing::write_file(path, bytes);
    const std::vector<std::string> one{"conv/1"};
    try {
      read_feature_cache(dir / "cache", one);
      FAIL("expected CorruptCacheError");
    } catch (const CorruptCacheError& e) {
      CHECK(std::string(e.what()).find("conv/1") != std::string::npos);
    }
  }
  SUBCASE("blob sized for other dims is a schema error") {
    std::vector<ConversationFeatures> narrow = {feats[2]};
    narrow[0].commonsense = FeatureMatrix::Zero(narrow[0].length(), 9 * 2);
    write_feature_cache(narrow, dir / "narrow");
    const auto blob = read_cache_manifest(dir / "narrow").entries.at("conv/2").file;
    std::filesystem::copy_file(dir / "narrow" / blob, dir / "cache" / blob,
                               std::filesystem::copy_options::overwrite_existing);
    const std::vector<std::string> one{"conv/2"};
    CHECK_THROWS_AS(read_feature_cache(dir / "cache", one), SchemaError);
  }
}

TEST_CASE("precomputed commonsense backend replays cached vectors") {
  const auto be = reference_backend(4, 3, 8);
  const auto conv = conversation("p", 2);
  const auto f = extract_conversation_features(conv, *be.semantic, *be.commonsense);
  PrecomputedCommonsenseBackend pre({f});
  CHECK(pre.dim() == 3);
  const auto again = extract_conversation_features(conv, *be.semantic, pre);
  CHECK(again == f);
}
