#include <doctest.h>

#include <cmath>

#include "cisper/error.hpp"
#include "cisper/fixture.hpp"
#include "cisper/train.hpp"
#include "helpers.hpp"

using namespace cisper;

namespace {

struct Toy {
  RunConfig config;
  ExperimentData data;
  std::unique_ptr<CisperModel> model;

  explicit Toy(RunConfig c = toy_config()) : config(std::move(c)), data(toy_experiment(config)) {
    model = std::make_unique<CisperModel>(config, data.vocabulary, data.labels, data.thesaurus);
  }
  TrainData train_data(bool with_validation = true) const {
    TrainData d;
    d.train = &data.train;
    d.train_features = data.train_features;
    if (with_validation) {
      d.validation = &data.validation;
      d.validation_features = data.validation_features;
    }
    return d;
  }
};

RunConfig small_batches() {
  RunConfig c = toy_config();
  c.batch_size = 4;
  return c;
}

bool same_tensors(const std::map<std::string, Matrix>& a, const std::map<std::string, Matrix>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it == b.end() || it->second.rows() != v.rows() || it->second.cols() != v.cols() || it->second != v) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("loss: certain prediction, hand value, clamping") {
  Vector one = Vector::Zero(3);
  one(1) = 1.0;
  const std::vector<MaskDistribution> single{{one}};
  const std::vector<int> gold1{1};
  CHECK(compute_loss(single, gold1) == 0.0);

  Vector a = Vector::Constant(4, 0.5 / 3);
  a(0) = 0.5;
  Vector b = Vector::Constant(4, 0.25);
  const std::vector<MaskDistribution> two{{a}, {b}};
  const std::vector<int> gold2{0, 2};
  CHECK(compute_loss(two, gold2) == doctest::Approx(-(std::log(0.5) + std::log(0.25)) / 2).epsilon(1e-12));
  CHECK(compute_loss(two, gold2) == doctest::Approx(1.0397).epsilon(1e-4));

  const std::vector<MaskDistribution> zero{{Vector::Zero(3)}};
  const double clamped = compute_loss(zero, gold1);
  CHECK(std::isfinite(clamped));
  CHECK(clamped == doctest::Approx(-std::log(kLogEpsilon)));
  CHECK_THROWS(compute_loss(std::span<const MaskDistribution>{}, std::span<const int>{}));
}

TEST_CASE("batched loss equals the mean of one-at-a-time losses") {
  Toy toy;
  std::vector<MaskDistribution> dists;
  std::vector<int> golds;
  double loop = 0.0;
  double model_nll = 0.0;
  int model_terms = 0;
  for (std::size_t c = 0; c < toy.data.train.conversations.size(); ++c) {
    const Conversation& conv = toy.data.train.conversations[c];
    const auto pred = toy.model->predict(conv, toy.data.train_features[c]);
    for (std::size_t t = 0; t < conv.size(); ++t) {
      const int gold = toy.model->verbalizer().token_id(*conv.utterances[t].emotion);
      dists.push_back(pred[t]);
      golds.push_back(gold);
      const MaskDistribution one[] = {pred[t]};
      const int g1[] = {gold};
      loop += compute_loss(one, g1);
    }
    ag::Graph g;
    int terms = 0;
    model_nll += toy.model->conversation_nll(g, conv, toy.data.train_features[c], &terms).value()(0, 0);
    model_terms += terms;
  }
  const double batched = compute_loss(dists, golds);
  CHECK(batched == doctest::Approx(loop / dists.size()).epsilon(1e-12));
  CHECK(model_terms == static_cast<int>(dists.size()));
  CHECK(model_nll / model_terms == doctest::Approx(batched).epsilon(1e-9));
}

TEST_CASE("adamw: first step moves each weight by about lr against the gradient") {
  Parameter p("w", Matrix::Constant(1, 2, 1.0));
  p.grad << 0.5, -2.0;
  AdamW opt(0.1, 0.0);
  Parameter* ps[] = {&p};
  opt.step(ps);
  CHECK(p.value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(p.value(0, 1) == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(opt.steps() == 1);
  Parameter q("q", Matrix::Constant(1, 1, 2.0));
  AdamW decay(0.1, 0.5);
  Parameter* qs[] = {&q};
  decay.step(qs);  // zero gradient: only the decoupled decay acts
  CHECK(q.value(0, 0) == doctest::Approx(2.0 * (1 - 0.1 * 0.5)));
}

TEST_CASE("seeded runs repeat their first three step losses") {
  std::vector<double> first, second;
  for (auto* out : {&first, &second}) {
    Toy toy(small_batches());
    Trainer t(*toy.model, toy.train_data());
    for (int i = 0; i < 3; ++i) out->push_back(t.step());
  }
  for (int i = 0; i < 3; ++i) CHECK(std::abs(first[i] - second[i]) <= 1e-6);
  CHECK(first[0] != first[1]);
}

TEST_CASE("epochs = 0 leaves parameters untouched") {
  RunConfig c = toy_config();
  c.epochs = 0;
  Toy toy(c);
  const auto before = toy.model->snapshot();
  Trainer t(*toy.model, toy.train_data());
  CHECK(t.finished());
  t.train();
  CHECK(same_tensors(before, toy.model->snapshot()));
  CHECK(t.state().step == 0);
}

TEST_CASE("checkpoint round-trip is bit-exact, bad files are schema errors") {
  Toy toy(small_batches());
  Trainer t(*toy.model, toy.train_data());
  for (int i = 0; i < 5; ++i) t.step();
  const Checkpoint c = t.checkpoint();
  testing::TempDir dir;
  save_checkpoint(c, dir / "a.ckpt");
  const Checkpoint back = load_checkpoint(dir / "a.ckpt");
  CHECK(same_tensors(back.tensors, c.tensors));
  CHECK(back.config == c.config);
  CHECK(back.vocabulary == c.vocabulary);
  CHECK(back.labels == c.labels);
  CHECK(back.optimizer_steps == c.optimizer_steps);
  CHECK(back.trainer.step == c.trainer.step);
  CHECK(back.trainer.cursor == c.trainer.cursor);
  CHECK(back.trainer.step_losses == c.trainer.step_losses);
  REQUIRE(back.optimizer.size() == c.optimizer.size());
  for (const auto& [k, m] : c.optimizer) {
    CHECK(back.optimizer.at(k).m == m.m);
    CHECK(back.optimizer.at(k).v == m.v);
  }

  // reloaded model reproduces forward outputs exactly
  const auto reloaded = model_from_checkpoint(back, false);
  const auto& conv = toy.data.test.conversations[0];
  const auto p1 = toy.model->predict(conv, toy.data.test_features[0]);
  const auto p2 = reloaded->predict(conv, toy.data.test_features[0]);
  for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].probabilities == p2[i].probabilities);

  save_checkpoint(back, dir / "b.ckpt");
  CHECK(testing::read_file(dir / "a.ckpt") == testing::read_file(dir / "b.ckpt"));

  const std::string bytes = testing::read_file(dir / "a.ckpt");
  testing::write_file(dir / "short.ckpt", bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), SchemaError);
  std::string future = bytes;
  future[8] = static_cast<char>(kCheckpointVersion + 1);
  testing::write_file(dir / "future.ckpt", future);
  CHECK_THROWS_AS(load_checkpoint(dir / "future.ckpt"), SchemaError);
  testing::write_file(dir / "junk.ckpt", "not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), SchemaError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), NotFoundError);
}

TEST_CASE("resume matches uninterrupted training") {
  // crosses an epoch boundary (7 steps per toy epoch at batch 4)
  std::vector<double> straight;
  {
    Toy toy(small_batches());
    Trainer t(*toy.model, toy.train_data());
    for (int i = 0; i < 12; ++i) straight.push_back(t.step());
  }
  testing::TempDir dir;
  {
    Toy toy(small_batches());
    Trainer t(*toy.model, toy.train_data());
    for (int i = 0; i < 5; ++i) t.step();
    save_checkpoint(t.checkpoint(), dir / "mid.ckpt");
  }
  const Checkpoint mid = load_checkpoint(dir / "mid.ckpt");
  Toy toy(small_batches());
  auto model = model_from_checkpoint(mid, false);
  Trainer t(*model, toy.train_data());
  t.resume(mid);
  for (int i = 5; i < 12; ++i) CHECK(std::abs(t.step() - straight[static_cast<std::size_t>(i)]) <= 1e-6);
}

TEST_CASE("frozen masked LM stays bit-identical") {
  RunConfig c = small_batches();
  c.tune_plm = false;
  c.epochs = 2;
  Toy toy(c);
  const auto before = toy.model->plm().parameters().snapshot();
  const auto prompts_before = toy.model->prompts().parameters().snapshot();
  Trainer t(*toy.model, toy.train_data(false));
  t.train();
  CHECK(same_tensors(before, toy.model->plm().parameters().snapshot()));
  CHECK(!same_tensors(prompts_before, toy.model->prompts().parameters().snapshot()));
}

TEST_CASE("gradient reach through the full loss") {
  for (PromptMode mode : {PromptMode::full, PromptMode::random}) {
    RunConfig c = toy_config();
    c.mode = mode;
    Toy toy(c);
    for (Parameter* p : toy.model->all_parameters()) p->zero_grad();
    for (std::size_t i = 0; i < 2; ++i) {
      ag::Graph g;
      g.backward(toy.model->conversation_nll(g, toy.data.train.conversations[i], toy.data.train_features[i]));
    }
    const auto trainable = toy.model->prompts().trainable_parameters(mode);
    for (Parameter* p : toy.model->prompts().parameters().all()) {
      INFO(p->name);
      const bool used = std::find(trainable.begin(), trainable.end(), p) != trainable.end();
      if (used) CHECK(p->grad.norm() > 0.0);
      else CHECK(p->grad.norm() == 0.0);
    }
    if (mode == PromptMode::random) {
      REQUIRE(trainable.size() == 1);
      CHECK(trainable[0]->name.find("random") != std::string::npos);
    } else {
      // every group: blend projections, encoders, MLPs, BiLSTM
      for (const char* group : {"speaker", "listener", "bilstm"}) {
        bool any = false;
        for (Parameter* p : trainable) any = any || p->name.find(group) != std::string::npos;
        INFO(group);
        CHECK(any);
      }
    }
  }
}

TEST_CASE("toy loss is non-increasing over 20 epochs within a 5% band") {
  RunConfig c = toy_config();
  c.epochs = 20;
  Toy toy(c);
  Trainer t(*toy.model, toy.train_data(false));
  t.train();
  const auto& h = t.state().history;
  REQUIRE(h.size() == 20);
  double best = h[0].train_loss;
  for (std::size_t e = 1; e < h.size(); ++e) {
    INFO("epoch " << e + 1 << " loss " << h[e].train_loss << " best so far " << best);
    CHECK(h[e].train_loss <= best * 1.05);
    best = std::min(best, h[e].train_loss);
  }
  CHECK(h.back().train_loss < h.front().train_loss);
}

TEST_CASE("early stopping, logs and best-weight restore") {
  RunConfig c = small_batches();
  c.epochs = 30;
  c.patience = 2;
  Toy toy(c);
  testing::TempDir dir;
  TrainOptions opts;
  opts.out_dir = dir.path();
  Trainer t(*toy.model, toy.train_data(), opts);
  t.train();
  const auto& s = t.state();
  CHECK(s.best_epoch >= 1);
  CHECK(s.history.size() <= 30);
  if (s.stopped) CHECK(s.stale_epochs >= 2);
  CHECK(std::filesystem::exists(dir / "model.ckpt"));
  CHECK(std::filesystem::exists(dir / "last.ckpt"));
  const std::string log = testing::read_file(dir / "train_log.jsonl");
  CHECK(log.find("\"type\":\"run\"") != std::string::npos);
  CHECK(log.find("\"seed\"") != std::string::npos);
  CHECK(log.find("validation_f1") != std::string::npos);
  const Checkpoint saved = load_checkpoint(dir / "model.ckpt");
  CHECK(same_tensors(saved.tensors, toy.model->snapshot()));
  CHECK(same_tensors(saved.best_tensors, toy.model->snapshot()));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
  Toy toy(small_batches());
  for (Parameter* p : toy.model->plm().parameters().all()) {
    if (p->name.find("lm_head.weight") != std::string::npos) p->value(0, 0) = std::nan("");
  }
  Trainer t(*toy.model, toy.train_data(false));
  try {
    t.step();
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}
