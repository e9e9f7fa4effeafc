#include "cisper/eval.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "cisper/error.hpp"
#include "cisper/model.hpp"
#include "cisper/train.hpp"

namespace cisper {

using nlohmann::json;

namespace {

std::vector<std::string> merged_labels(std::span<const std::string> preds,
                                       std::span<const std::string> golds,
                                       const std::vector<std::string>& labels) {
  std::vector<std::string> out = labels;
  auto add = [&](const std::string& s) {
    if (std::find(out.begin(), out.end(), s) == out.end()) out.push_back(s);
  };
  for (const auto& g : golds) add(g);
  for (const auto& p : preds) add(p);
  return out;
}

double safe_div(double a, double b) { return b > 0.0 ? a / b : 0.0; }

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error(fmt::format("cannot write {}", tmp));
    out << text;
  }
  std::filesystem::rename(tmp, path);
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

EvalReport make_report(std::span<const std::string> preds, std::span<const std::string> golds,
                       const std::vector<std::string>& labels) {
  if (preds.size() != golds.size()) {
    throw ShapeError(fmt::format("{} predictions but {} golds", preds.size(), golds.size()));
  }
  if (golds.empty()) throw ShapeError("metrics need at least one labeled item");
  EvalReport r;
  r.labels = merged_labels(preds, golds, labels);
  const std::size_t k = r.labels.size();
  auto index = [&](const std::string& s) {
    return static_cast<std::size_t>(std::find(r.labels.begin(), r.labels.end(), s) - r.labels.begin());
  };
  r.confusion.assign(k, std::vector<int>(k, 0));
  for (std::size_t i = 0; i < golds.size(); ++i) ++r.confusion[index(golds[i])][index(preds[i])];

  double weighted = 0.0;
  long total = 0;
  for (std::size_t c = 0; c < k; ++c) {
    long tp = r.confusion[c][c];
    long gold = 0, pred = 0;
    for (std::size_t o = 0; o < k; ++o) {
      gold += r.confusion[c][o];
      pred += r.confusion[o][c];
    }
    ClassMetrics m;
    m.support = static_cast<int>(gold);
    m.precision = safe_div(static_cast<double>(tp), static_cast<double>(pred));
    m.recall = safe_div(static_cast<double>(tp), static_cast<double>(gold));
    m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);
    r.per_class.emplace(r.labels[c], m);
    weighted += static_cast<double>(gold) * m.f1;
    total += gold;
  }
  r.weighted_f1 = weighted / static_cast<double>(total);
  return r;
}

double weighted_f1(std::span<const std::string> predictions, std::span<const std::string> golds) {
  return make_report(predictions, golds).weighted_f1;
}

json EvalReport::to_json() const {
  json pc = json::object();
  for (const auto& [label, m] : per_class) {
    pc[label] = {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"support", m.support}};
  }
  json cfg = json::array();
  for (const auto& [k, v] : config) cfg.push_back({k, v});
  return {{"weighted_f1", weighted_f1}, {"labels", labels},   {"per_class", pc},
          {"confusion", confusion},     {"config", cfg}};
}

EvalReport EvalReport::from_json(const json& j) {
  EvalReport r;
  try {
    r.weighted_f1 = j.at("weighted_f1").get<double>();
    r.labels = j.at("labels").get<std::vector<std::string>>();
    for (const auto& [label, m] : j.at("per_class").items()) {
      r.per_class[label] = {m.at("precision").get<double>(), m.at("recall").get<double>(),
                            m.at("f1").get<double>(), m.at("support").get<int>()};
    }
    r.confusion = j.at("confusion").get<std::vector<std::vector<int>>>();
    for (const auto& kv : j.at("config")) {
      r.config.emplace_back(kv.at(0).get<std::string>(), kv.at(1).get<std::string>());
    }
  } catch (const json::exception& e) {
    throw SchemaError(fmt::format("malformed evaluation report: {}", e.what()));
  }
  return r;
}

std::string EvalReport::per_class_table() const {
  std::string out = fmt::format("{:<12} {:>8} {:>10} {:>8} {:>8}\n", "category", "support",
                                "precision", "recall", "f1");
  for (const auto& label : labels) {
    const auto& m = per_class.at(label);
    out += fmt::format("{:<12} {:>8} {:>10.4f} {:>8.4f} {:>8.4f}\n", label, m.support, m.precision,
                       m.recall, m.f1);
  }
  out += fmt::format("{:<12} {:>8} {:>10} {:>8} {:>8.4f}\n", "weighted", [&] {
    int s = 0;
    for (const auto& [_, m] : per_class) s += m.support;
    return s;
  }(), "", "", weighted_f1);
  return out;
}

LabeledPredictions predict_corpus(const CisperModel& model, const Corpus& corpus,
                                  std::span<const ConversationFeatures> features, ClassifyMode mode) {
  if (features.size() != corpus.conversations.size()) {
    throw ShapeError(fmt::format("{} conversations but {} feature sets", corpus.conversations.size(),
                                 features.size()));
  }
  LabeledPredictions out;
  for (std::size_t c = 0; c < corpus.conversations.size(); ++c) {
    const auto& conv = corpus.conversations[c];
    const auto preds = model.classify(conv, features[c], mode);
    for (std::size_t t = 0; t < conv.size(); ++t) {
      if (!conv.utterances[t].emotion) continue;
      out.predictions.push_back(preds[t]);
      out.golds.push_back(*conv.utterances[t].emotion);
    }
  }
  return out;
}

EvalReport evaluate(const CisperModel& model, const Corpus& corpus,
                    std::span<const ConversationFeatures> features) {
  const auto lp = predict_corpus(model, corpus, features, ClassifyMode::restricted);
  if (lp.golds.empty()) throw DatasetError("cannot evaluate an unlabeled corpus");
  EvalReport r = make_report(lp.predictions, lp.golds, model.labels());
  r.config = model.config().entries();
  return r;
}

RunOutcome run_experiment(const RunConfig& config, const ExperimentData& data,
                          const std::filesystem::path& out_dir) {
  CisperModel model(config, data.vocabulary, data.labels, data.thesaurus);
  TrainData td;
  td.train = &data.train;
  td.train_features = data.train_features;
  if (!data.validation.conversations.empty()) {
    td.validation = &data.validation;
    td.validation_features = data.validation_features;
  }
  TrainOptions opts;
  opts.out_dir = out_dir;
  Trainer trainer(model, td, opts);
  trainer.train();
  RunOutcome out;
  out.report = evaluate(model, data.test, data.test_features);
  out.best_validation_f1 = trainer.state().best_f1;
  out.epochs_run = trainer.state().epoch;
  if (!out_dir.empty()) write_text(out_dir / "report.json", out.report.to_json().dump(2) + "\n");
  return out;
}

std::vector<AblationRow> ablation_suite(const RunConfig& base, const ExperimentData& data,
                                        const std::filesystem::path& out_dir) {
  struct Spec {
    PromptMode mode;
    bool commonsense;
    bool context;
  };
  const Spec specs[] = {{PromptMode::random, false, false},
                        {PromptMode::context_only, false, true},
                        {PromptMode::commonsense_only, true, false},
                        {PromptMode::full, true, true}};
  std::vector<AblationRow> rows;
  for (const auto& s : specs) {
    AblationRow row{s.mode, s.commonsense, s.context, {}, 0.0, 0.0};
    for (int r = 0; r < base.repeats; ++r) {
      RunConfig cfg = base;
      cfg.mode = s.mode;
      cfg.seed = base.seed + static_cast<std::uint64_t>(r);
      const auto dir = out_dir.empty()
                           ? std::filesystem::path{}
                           : out_dir / fmt::format("{}-r{}", to_string(s.mode), r);
      spdlog::info("ablation: mode {} repeat {}", to_string(s.mode), r);
      row.runs.push_back(run_experiment(cfg, data, dir).report.weighted_f1);
    }
    row.weighted_f1 = mean(row.runs);
    row.delta = row.weighted_f1 - (rows.empty() ? row.weighted_f1 : rows.front().weighted_f1);
    rows.push_back(row);
    if (!out_dir.empty()) write_text(out_dir / "ablation.csv", ablation_csv(rows));
  }
  return rows;
}

std::string ablation_csv(std::span<const AblationRow> rows) {
  std::string out = "mode,commonsense,context,weighted_f1,delta_vs_random,runs\n";
  for (const auto& r : rows) {
    std::string runs;
    for (std::size_t i = 0; i < r.runs.size(); ++i) runs += fmt::format("{}{:.6f}", i ? ";" : "", r.runs[i]);
    out += fmt::format("{},{},{},{:.6f},{:+.6f},{}\n", to_string(r.mode), r.commonsense ? "yes" : "no",
                       r.context ? "yes" : "no", r.weighted_f1, r.delta, runs);
  }
  return out;
}

std::vector<SweepRow> sweep_prompt_length(const RunConfig& base, std::span<const int> values,
                                          const ExperimentData& data,
                                          const std::filesystem::path& out_dir) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  for (int v : values) {
    if (v < 1) throw ConfigError(fmt::format("sweep value {} must be >= 1", v));
  }
  std::vector<SweepRow> rows;
  for (int n : values) {
    SweepRow row;
    row.n = n;
    row.pseudo_tokens = 4 * n;
    for (int r = 0; r < base.repeats; ++r) {
      RunConfig cfg = base;
      cfg.speaker_tokens = n;
      cfg.listener_tokens = n;
      cfg.reserved_tokens = std::max(cfg.reserved_tokens, 4 * n);
      cfg.seed = base.seed + static_cast<std::uint64_t>(r);
      const auto dir = out_dir.empty() ? std::filesystem::path{} : out_dir / fmt::format("n{}-r{}", n, r);
      spdlog::info("sweep: N = {} repeat {}", n, r);
      row.runs.push_back(run_experiment(cfg, data, dir).report.weighted_f1);
    }
    row.weighted_f1 = mean(row.runs);
    rows.push_back(row);
    if (!out_dir.empty()) write_text(out_dir / "sweep.csv", sweep_csv(rows));
  }
  if (!out_dir.empty()) write_text(out_dir / "sweep.svg", sweep_svg(rows, base.dataset));
  return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "n_e,n_p,pseudo_tokens,weighted_f1\n";
  for (const auto& r : rows) {
    out += fmt::format("{},{},{},{:.6f}\n", r.n, r.n, r.pseudo_tokens, r.weighted_f1);
  }
  return out;
}

std::string sweep_svg(std::span<const SweepRow> rows, std::string_view title) {
  const double w = 480, h = 320, left = 60, right = 20, top = 40, bottom = 50;
  const double pw = w - left - right, ph = h - top - bottom;
  double lo = 1.0, hi = 0.0;
  for (const auto& r : rows) {
    lo = std::min(lo, r.weighted_f1);
    hi = std::max(hi, r.weighted_f1);
  }
  if (rows.empty()) lo = 0.0, hi = 1.0;
  if (hi - lo < 1e-3) lo -= 0.01, hi += 0.01;
  const double pad = (hi - lo) * 0.1;
  lo = std::max(0.0, lo - pad);
  hi = std::min(1.0, hi + pad);
  auto x = [&](std::size_t i) {
    return rows.size() <= 1 ? left + pw / 2 : left + pw * static_cast<double>(i) / (rows.size() - 1);
  };
  auto y = [&](double v) { return top + ph * (1.0 - (v - lo) / (hi - lo)); };

  std::string s = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" font-family=\"sans-serif\" "
      "font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n",
      w, h);
  s += fmt::format("<text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{} weighted-F1 vs N</text>\n",
                   w / 2, title);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", left, top,
                   top + ph);
  s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", left,
                   top + ph, left + pw);
  for (int k = 0; k <= 4; ++k) {
    const double v = lo + (hi - lo) * k / 4.0;
    s += fmt::format("<text x=\"{}\" y=\"{:.1f}\" text-anchor=\"end\">{:.3f}</text>\n", left - 6,
                     y(v) + 4, v);
  }
  std::string points;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    points += fmt::format("{:.1f},{:.1f} ", x(i), y(rows[i].weighted_f1));
    s += fmt::format("<circle cx=\"{:.1f}\" cy=\"{:.1f}\" r=\"3\" fill=\"steelblue\"/>\n", x(i),
                     y(rows[i].weighted_f1));
    s += fmt::format("<text x=\"{:.1f}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", x(i),
                     top + ph + 18, rows[i].n);
  }
  s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n", points);
  s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">N_e = N_p</text>\n", left + pw / 2,
                   h - 10);
  s += "</svg>\n";
  return s;
}

}  // namespace cisper
