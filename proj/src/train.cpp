#include "cisper/train.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "cisper/error.hpp"
#include "cisper/eval.hpp"

namespace cisper {

using nlohmann::json;

double compute_loss(std::span<const MaskDistribution> distributions, std::span<const int> gold_ids) {
  if (distributions.empty()) throw ShapeError("compute_loss needs at least one distribution");
  if (distributions.size() != gold_ids.size()) {
    throw ShapeError(fmt::format("{} distributions but {} gold ids", distributions.size(),
                                 gold_ids.size()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < distributions.size(); ++i) {
    const Vector& p = distributions[i].probabilities;
    const int id = gold_ids[i];
    if (id < 0 || id >= p.size()) {
      throw ShapeError(fmt::format("gold id {} outside vocabulary of {}", id, p.size()));
    }
    double prob = p(id);
    if (!(prob >= kLogEpsilon)) {
      spdlog::warn("probability {} of gold id {} clamped to {}", prob, id, kLogEpsilon);
      prob = kLogEpsilon;
    }
    total -= std::log(prob);
  }
  return total / static_cast<double>(distributions.size());
}

AdamW::AdamW(double lr, double weight_decay, double beta1, double beta2, double epsilon)
    : lr_(lr), wd_(weight_decay), b1_(beta1), b2_(beta2), eps_(epsilon) {}

void AdamW::step(std::span<Parameter* const> params) {
  ++steps_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(steps_));
  for (Parameter* p : params) {
    auto [it, fresh] = moments_.try_emplace(p->name);
    Moments& s = it->second;
    if (fresh) {
      s.m = Matrix::Zero(p->value.rows(), p->value.cols());
      s.v = Matrix::Zero(p->value.rows(), p->value.cols());
    }
    s.m = b1_ * s.m + (1.0 - b1_) * p->grad;
    s.v = b2_ * s.v + (1.0 - b2_) * p->grad.cwiseProduct(p->grad);
    const auto update = (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + eps_);
    p->value.array() -= lr_ * (update + wd_ * p->value.array());
  }
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'I', 'S', 'P', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write checkpoint {}", tmp));
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(fmt::format("short write to {}", tmp));
  }
  std::filesystem::rename(tmp, path);
}

json epoch_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"train_loss", r.train_loss},
          {"validation_f1", r.validation_f1},
          {"train_accuracy", r.train_accuracy},
          {"steps", r.steps}};
}

EpochRecord epoch_from_json(const json& j) {
  EpochRecord r;
  r.epoch = j.at("epoch").get<int>();
  r.train_loss = j.at("train_loss").get<double>();
  r.validation_f1 = j.at("validation_f1").get<double>();
  r.train_accuracy = j.at("train_accuracy").get<double>();
  r.steps = j.at("steps").get<long>();
  return r;
}

json state_to_json(const TrainerState& s) {
  json history = json::array();
  for (const auto& r : s.history) history.push_back(epoch_to_json(r));
  return {{"epoch", s.epoch},
          {"cursor", s.cursor},
          {"step", s.step},
          {"epoch_loss_sum", s.epoch_loss_sum},
          {"epoch_utterances", s.epoch_utterances},
          {"best_f1", s.best_f1},
          {"best_epoch", s.best_epoch},
          {"stale_epochs", s.stale_epochs},
          {"stopped", s.stopped},
          {"history", history},
          {"step_losses", s.step_losses}};
}

TrainerState state_from_json(const json& j) {
  TrainerState s;
  s.epoch = j.at("epoch").get<int>();
  s.cursor = j.at("cursor").get<int>();
  s.step = j.at("step").get<long>();
  s.epoch_loss_sum = j.at("epoch_loss_sum").get<double>();
  s.epoch_utterances = j.at("epoch_utterances").get<long>();
  s.best_f1 = j.at("best_f1").get<double>();
  s.best_epoch = j.at("best_epoch").get<int>();
  s.stale_epochs = j.at("stale_epochs").get<int>();
  s.stopped = j.at("stopped").get<bool>();
  for (const auto& r : j.at("history")) s.history.push_back(epoch_from_json(r));
  s.step_losses = j.at("step_losses").get<std::vector<double>>();
  return s;
}

struct TensorRef {
  std::string group;
  std::string name;
  const Matrix* value;
};

}  // namespace

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::vector<TensorRef> refs;
  for (const auto& [n, m] : c.tensors) refs.push_back({"model", n, &m});
  for (const auto& [n, m] : c.best_tensors) refs.push_back({"best", n, &m});
  for (const auto& [n, s] : c.optimizer) {
    refs.push_back({"adam_m", n, &s.m});
    refs.push_back({"adam_v", n, &s.v});
  }
  std::string payload;
  json tensors = json::array();
  for (const auto& r : refs) {
    const std::size_t bytes = static_cast<std::size_t>(r.value->size()) * sizeof(double);
    tensors.push_back({{"group", r.group},
                       {"name", r.name},
                       {"shape", {r.value->rows(), r.value->cols()}},
                       {"offset", payload.size()},
                       {"bytes", bytes}});
    payload.append(reinterpret_cast<const char*>(r.value->data()), bytes);
  }
  json config = json::array();
  for (const auto& [k, v] : c.config) config.push_back({k, v});
  const json manifest = {
      {"schema_version", c.schema_version},
      {"dtype", "float64"},
      {"endianness", "little"},
      {"tensors", tensors},
      {"payload_bytes", payload.size()},
      {"payload_crc32",
       crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size()))},
      {"config", config},
      {"vocabulary", c.vocabulary},
      {"reserved_tokens", c.reserved_tokens},
      {"labels", c.labels},
      {"thesaurus", c.thesaurus},
      {"optimizer_steps", c.optimizer_steps},
      {"trainer", state_to_json(c.trainer)},
  };
  const std::string text = manifest.dump();
  std::string out(kMagic, sizeof kMagic);
  const std::uint32_t version = c.schema_version;
  const std::uint64_t len = text.size();
  out.append(reinterpret_cast<const char*>(&version), sizeof version);
  out.append(reinterpret_cast<const char*>(&len), sizeof len);
  out += text;
  out += payload;
  write_atomic(path, out);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError(fmt::format("checkpoint {} not found", path.string()));
  const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  const std::size_t header = sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
    throw SchemaError(fmt::format("{} is not a checkpoint (bad header)", path.string()));
  }
  std::uint32_t version = 0;
  std::uint64_t len = 0;
  std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
  std::memcpy(&len, bytes.data() + sizeof kMagic + sizeof version, sizeof len);
  if (version != kCheckpointVersion) {
    throw SchemaError(fmt::format("{}: checkpoint schema version {}, this build reads version {}",
                                  path.string(), version, kCheckpointVersion));
  }
  if (len > bytes.size() - header) {
    throw SchemaError(fmt::format("{}: truncated checkpoint manifest", path.string()));
  }
  json m;
  try {
    m = json::parse(bytes.substr(header, len));
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("{}: unreadable checkpoint manifest: {}", path.string(), e.what()));
  }
  const std::size_t payload_start = header + len;
  Checkpoint c;
  try {
    if (m.at("schema_version").get<std::uint32_t>() != kCheckpointVersion) {
      throw SchemaError(fmt::format("{}: manifest schema version mismatch", path.string()));
    }
    if (m.at("dtype") != "float64" || m.at("endianness") != "little") {
      throw SchemaError(fmt::format("{}: unsupported tensor encoding", path.string()));
    }
    const auto payload_bytes = m.at("payload_bytes").get<std::size_t>();
    if (bytes.size() - payload_start != payload_bytes) {
      throw SchemaError(fmt::format("{}: payload holds {} bytes, manifest declares {} (truncated?)",
                                    path.string(), bytes.size() - payload_start, payload_bytes));
    }
    const char* payload = bytes.data() + payload_start;
    const auto crc = static_cast<std::uint32_t>(crc32(
        0L, reinterpret_cast<const Bytef*>(payload), static_cast<uInt>(payload_bytes)));
    if (crc != m.at("payload_crc32").get<std::uint32_t>()) {
      throw CorruptCacheError(fmt::format("{}: payload checksum mismatch", path.string()));
    }
    c.schema_version = version;
    for (const auto& t : m.at("tensors")) {
      const auto rows = t.at("shape").at(0).get<Eigen::Index>();
      const auto cols = t.at("shape").at(1).get<Eigen::Index>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto n = t.at("bytes").get<std::size_t>();
      if (n != static_cast<std::size_t>(rows * cols) * sizeof(double) || offset + n > payload_bytes) {
        throw SchemaError(fmt::format("{}: tensor {} has inconsistent extent", path.string(),
                                      t.at("name").get<std::string>()));
      }
      Matrix value(rows, cols);
      std::memcpy(value.data(), payload + offset, n);
      const auto group = t.at("group").get<std::string>();
      const auto name = t.at("name").get<std::string>();
      if (group == "model") c.tensors.emplace(name, std::move(value));
      else if (group == "best") c.best_tensors.emplace(name, std::move(value));
      else if (group == "adam_m") c.optimizer[name].m = std::move(value);
      else if (group == "adam_v") c.optimizer[name].v = std::move(value);
      else throw SchemaError(fmt::format("{}: unknown tensor group '{}'", path.string(), group));
    }
    for (const auto& kv : m.at("config")) {
      c.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
    c.vocabulary = m.at("vocabulary").get<std::vector<std::string>>();
    c.reserved_tokens = m.at("reserved_tokens").get<int>();
    c.labels = m.at("labels").get<std::vector<std::string>>();
    c.thesaurus = m.at("thesaurus").get<std::map<std::string, std::string>>();
    c.optimizer_steps = m.at("optimizer_steps").get<long>();
    c.trainer = state_from_json(m.at("trainer"));
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("{}: malformed checkpoint manifest: {}", path.string(), e.what()));
  }
  return c;
}

Vocabulary vocabulary_from_tokens(const std::vector<std::string>& tokens, int reserved) {
  const auto skip = static_cast<std::size_t>(5 + reserved);
  if (tokens.size() < skip) throw SchemaError("vocabulary shorter than its special and reserved ids");
  Vocabulary v({tokens.begin() + static_cast<std::ptrdiff_t>(skip), tokens.end()}, reserved);
  if (v.tokens() != tokens) throw SchemaError("vocabulary does not rebuild to the stored token list");
  return v;
}

std::unique_ptr<CisperModel> model_from_checkpoint(const Checkpoint& c, bool use_best) {
  auto model = std::make_unique<CisperModel>(RunConfig::from_entries(c.config),
                                             vocabulary_from_tokens(c.vocabulary, c.reserved_tokens),
                                             c.labels, c.thesaurus);
  model->restore(use_best && !c.best_tensors.empty() ? c.best_tensors : c.tensors);
  return model;
}

// ---- trainer --------------------------------------------------------------

Trainer::Trainer(CisperModel& model, TrainData data, TrainOptions options)
    : model_(model),
      data_(data),
      options_(std::move(options)),
      optimizer_(model.config().learning_rate, model.config().weight_decay,
                 model.config().adam_beta1, model.config().adam_beta2, model.config().adam_epsilon) {
  if (data_.train == nullptr) throw ConfigError("training needs a train corpus");
  if (data_.train_features.size() != data_.train->conversations.size()) {
    throw ShapeError(fmt::format("{} train conversations but {} feature sets",
                                 data_.train->conversations.size(), data_.train_features.size()));
  }
  if (data_.validation != nullptr &&
      data_.validation_features.size() != data_.validation->conversations.size()) {
    throw ShapeError("validation features do not match the validation corpus");
  }
  order_ = epoch_order(0);
  if (!options_.out_dir.empty()) {
    std::filesystem::create_directories(options_.out_dir);
    log_ = std::make_unique<std::ofstream>(options_.out_dir / "train_log.jsonl", std::ios::app);
    json cfg = json::object();
    for (const auto& [k, v] : model_.config().entries()) cfg[k] = v;
    log({{"type", "run"},
         {"seed", model_.config().seed},
         {"config_hash", model_.config().hash()},
         {"config", cfg}});
  }
}

Trainer::~Trainer() = default;

void Trainer::log(const json& record) {
  if (log_) {
    *log_ << record.dump() << '\n';
    log_->flush();
  }
}

std::vector<int> Trainer::epoch_order(int epoch) const {
  std::vector<int> order(data_.train->conversations.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(model_.config().seed * 0x9e3779b97f4a7c15ULL +
                      static_cast<std::uint64_t>(epoch) + 1);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

bool Trainer::finished() const {
  return state_.stopped || state_.epoch >= model_.config().epochs;
}

double Trainer::step() {
  if (finished()) throw ConfigError("training already finished");
  const auto n = static_cast<int>(order_.size());
  for (Parameter* p : model_.all_parameters()) p->zero_grad();

  double nll = 0.0;
  int count = 0;
  std::vector<std::string> ids;
  while (state_.cursor < n && count < model_.config().batch_size) {
    const int c = order_[static_cast<std::size_t>(state_.cursor++)];
    const Conversation& conv = data_.train->conversations[static_cast<std::size_t>(c)];
    ids.push_back(conv.id);
    ag::Graph g;
    int terms = 0;
    const ag::Expr loss = model_.conversation_nll(g, conv, data_.train_features[static_cast<std::size_t>(c)], &terms);
    if (terms == 0) continue;
    g.backward(loss);
    nll += loss.value()(0, 0);
    count += terms;
  }
  double loss = 0.0;
  if (count > 0) {
    loss = nll / count;
    if (!std::isfinite(loss)) {
      throw NumericalError(fmt::format("non-finite loss {} at step {} (epoch {}, conversations {})",
                                       loss, state_.step + 1, state_.epoch + 1,
                                       fmt::join(ids, ",")));
    }
    const auto params = model_.trainable_parameters();
    for (Parameter* p : params) p->grad /= static_cast<double>(count);
    optimizer_.step(params);
    ++state_.step;
    state_.step_losses.push_back(loss);
    state_.epoch_loss_sum += nll;
    state_.epoch_utterances += count;
    log({{"type", "step"}, {"step", state_.step}, {"epoch", state_.epoch + 1}, {"loss", loss},
         {"utterances", count}});
  }
  if (state_.cursor >= n) end_epoch();
  return loss;
}

void Trainer::end_epoch() {
  ++state_.epoch;
  state_.cursor = 0;
  EpochRecord rec;
  rec.epoch = state_.epoch;
  rec.train_loss = state_.epoch_utterances > 0
                       ? state_.epoch_loss_sum / static_cast<double>(state_.epoch_utterances)
                       : 0.0;
  rec.steps = state_.step;
  rec.validation_f1 = -1.0;
  if (data_.validation != nullptr) {
    const auto lp = predict_corpus(model_, *data_.validation, data_.validation_features);
    rec.validation_f1 = lp.golds.empty() ? 0.0 : weighted_f1(lp.predictions, lp.golds);
  }
  if (options_.track_train_accuracy) {
    const auto lp = predict_corpus(model_, *data_.train, data_.train_features);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < lp.golds.size(); ++i) hits += lp.predictions[i] == lp.golds[i];
    rec.train_accuracy = lp.golds.empty() ? 0.0 : static_cast<double>(hits) / lp.golds.size();
  }
  if (data_.validation != nullptr) {
    if (rec.validation_f1 > state_.best_f1) {
      state_.best_f1 = rec.validation_f1;
      state_.best_epoch = rec.epoch;
      state_.stale_epochs = 0;
      best_ = model_.snapshot();
    } else {
      ++state_.stale_epochs;
      const int patience = model_.config().patience;
      if (patience > 0 && state_.stale_epochs >= patience) state_.stopped = true;
    }
  }
  if (options_.stop_at_train_accuracy && rec.train_accuracy >= *options_.stop_at_train_accuracy) {
    state_.stopped = true;
  }
  state_.history.push_back(rec);
  state_.epoch_loss_sum = 0.0;
  state_.epoch_utterances = 0;
  order_ = epoch_order(state_.epoch);
  spdlog::info("epoch {} loss {:.6f} val-f1 {:.4f}{}", rec.epoch, rec.train_loss, rec.validation_f1,
               rec.train_accuracy >= 0 ? fmt::format(" train-acc {:.4f}", rec.train_accuracy) : "");
  json j = epoch_to_json(rec);
  j["type"] = "epoch";
  log(j);
  if (!options_.out_dir.empty()) save_checkpoint(checkpoint(), options_.out_dir / "last.ckpt");
}

void Trainer::run_epoch() {
  const int start = state_.epoch;
  while (!finished() && state_.epoch == start) step();
}

void Trainer::train() {
  while (!finished()) step();
  if (!best_.empty()) model_.restore(best_);
  if (!options_.out_dir.empty()) {
    Checkpoint c = checkpoint();
    c.tensors = model_.snapshot();
    save_checkpoint(c, options_.out_dir / "model.ckpt");
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = model_.config().entries();
  c.vocabulary = model_.vocabulary().tokens();
  c.reserved_tokens = model_.vocabulary().reserved_count();
  c.labels = model_.labels();
  c.thesaurus = model_.verbalizer().thesaurus();
  c.tensors = model_.snapshot();
  c.best_tensors = best_;
  c.optimizer = optimizer_.moments();
  c.optimizer_steps = optimizer_.steps();
  c.trainer = state_;
  return c;
}

void Trainer::resume(const Checkpoint& c) {
  model_.restore(c.tensors);
  best_ = c.best_tensors;
  optimizer_.moments() = c.optimizer;
  optimizer_.set_steps(c.optimizer_steps);
  state_ = c.trainer;
  order_ = epoch_order(state_.epoch);
  log({{"type", "resume"}, {"epoch", state_.epoch}, {"step", state_.step}});
}

}  // namespace cisper
