#include "cisper/cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>
#include <zlib.h>

#include "cisper/config.hpp"
#include "cisper/error.hpp"
#include "cisper/eval.hpp"
#include "cisper/fixture.hpp"
#include "cisper/model.hpp"
#include "cisper/train.hpp"

namespace cisper {

namespace {

using nlohmann::json;

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string mode;
  std::string out;
  std::string values;
  std::string checkpoint;
  std::string split = "test";
  int verbosity = 0;
  bool quiet = false;
};

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val" || s == "dev") return Split::validation;
  if (s == "test") return Split::test;
  throw ConfigError(fmt::format("unknown split '{}' (expected train, validation or test)", s));
}

std::string keys_help() {
  const RunConfig defaults;
  std::string out = "Configuration keys (file lines 'key = value', or --set key=value):\n";
  for (const auto& k : config_keys()) {
    std::string def;
    if (k.name.find('<') == std::string_view::npos) def = defaults.get(k.name);
    out += fmt::format("  {:<24} [{}] {}\n", k.name, def, k.help);
  }
  out += "Environment: CISPER_CACHE_DIR overrides cache_dir.\n";
  return out;
}

RunConfig resolve_config(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) c = load_config(o.config_path);
  if (const char* env = std::getenv("CISPER_CACHE_DIR"); env && *env) c.cache_dir = env;
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("--set expects key=value, got '{}'", kv));
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.mode.empty()) c.mode = parse_prompt_mode(o.mode);
  if (!o.out.empty()) c.out_dir = o.out;
  c.validate();
  return c;
}

const std::string& split_path(const RunConfig& c, Split s) {
  switch (s) {
    case Split::train: return c.train_path;
    case Split::validation: return c.validation_path;
    case Split::test: return c.test_path;
  }
  return c.train_path;
}

bool is_toy(const RunConfig& c) { return c.dataset == "toy"; }

std::map<Split, Corpus> load_corpora(const RunConfig& c) {
  std::map<Split, Corpus> out;
  for (Split s : {Split::train, Split::validation, Split::test}) {
    if (is_toy(c)) {
      out.emplace(s, toy_corpus(s));
      continue;
    }
    const auto& p = split_path(c, s);
    if (p.empty()) continue;
    out.emplace(s, load_dataset(p, c.adapter, s));
  }
  if (out.empty()) throw ConfigError("no dataset split configured (set train_path, validation_path or test_path)");
  return out;
}

std::vector<std::string> labels_of(const std::map<Split, Corpus>& corpora) {
  std::map<Split, const Corpus*> view;
  for (const auto& [s, c] : corpora) view.emplace(s, &c);
  if (!corpora.contains(Split::train)) throw ConfigError("train_path is required");
  return union_label_set(view);
}

Vocabulary make_vocabulary(const RunConfig& c, const std::map<Split, Corpus>& corpora,
                           const std::vector<std::string>& labels) {
  if (is_toy(c)) return toy_vocabulary(c.reserved_tokens);
  if (!c.vocab_path.empty()) {
    Vocabulary v = Vocabulary::load(c.vocab_path);
    if (v.reserved_count() < c.reserved_tokens) {
      throw ConfigError(fmt::format("{} reserves {} [unused] ids; reserved_tokens asks for {}",
                                    c.vocab_path, v.reserved_count(), c.reserved_tokens));
    }
    return v;
  }
  std::vector<std::string> texts;
  for (const auto& conv : corpora.at(Split::train).conversations) {
    for (const auto& u : conv.utterances) texts.push_back(u.text);
  }
  std::vector<std::string> required;
  for (const auto& l : labels) {
    auto it = c.label_words.find(l);
    required.push_back(it != c.label_words.end() ? it->second : l);
  }
  for (const auto& w : basic_split(kFixedTemplate)) required.push_back(w);
  for (auto r : kRelations) required.emplace_back(r);
  return Vocabulary::build(texts, required, c.vocab_size, c.reserved_tokens);
}

std::filesystem::path cache_root(const RunConfig& c, Split s) {
  return std::filesystem::path(c.cache_dir) / split_name(s);
}

std::vector<ConversationFeatures> features_for(const RunConfig& c, const Corpus& corpus, Split s) {
  if (is_toy(c)) {
    const auto b = reference_backend(c.semantic_dim, c.commonsense_dim, c.feature_seed);
    return extract_corpus_features(corpus, *b.semantic, *b.commonsense);
  }
  const auto root = cache_root(c, s);
  const auto manifest = read_cache_manifest(root);
  if (manifest.semantic_dim != c.semantic_dim || manifest.commonsense_dim != c.commonsense_dim) {
    throw ConfigError(fmt::format("feature cache {} has d_u={} d_c={}, config asks for d_u={} d_c={}",
                                  root.string(), manifest.semantic_dim, manifest.commonsense_dim,
                                  c.semantic_dim, c.commonsense_dim));
  }
  return read_feature_cache(root, corpus);
}

std::map<std::string, std::string> thesaurus_of(const RunConfig& c) {
  if (c.thesaurus_path.empty()) return {};
  return load_thesaurus(c.thesaurus_path);
}

ExperimentData experiment_data(const RunConfig& c) {
  auto corpora = load_corpora(c);
  ExperimentData d;
  d.labels = labels_of(corpora);
  d.vocabulary = make_vocabulary(c, corpora, d.labels);
  d.thesaurus = thesaurus_of(c);
  d.train = corpora.at(Split::train);
  d.train_features = features_for(c, d.train, Split::train);
  if (corpora.contains(Split::validation)) {
    d.validation = corpora.at(Split::validation);
    d.validation_features = features_for(c, d.validation, Split::validation);
  }
  if (corpora.contains(Split::test)) {
    d.test = corpora.at(Split::test);
    d.test_features = features_for(c, d.test, Split::test);
  } else {
    d.test = d.validation.conversations.empty() ? d.train : d.validation;
    d.test_features = d.validation.conversations.empty() ? d.train_features : d.validation_features;
    spdlog::warn("no test split configured; reporting on {}",
                 d.validation.conversations.empty() ? "train" : "validation");
  }
  return d;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error(fmt::format("cannot write {}", path.string()));
  f << text;
}

void write_metadata(const RunConfig& c, const std::string& subcommand) {
  json cfg = json::object();
  for (const auto& [k, v] : c.entries()) cfg[k] = v;
  const json meta = {
      {"subcommand", subcommand},
      {"seed", c.seed},
      {"config_hash", c.hash()},
      {"versions",
       {{"cisper", CISPER_VERSION},
        {"eigen", fmt::format("{}.{}.{}", EIGEN_WORLD_VERSION, EIGEN_MAJOR_VERSION, EIGEN_MINOR_VERSION)},
        {"fmt", FMT_VERSION},
        {"spdlog", fmt::format("{}.{}.{}", SPDLOG_VER_MAJOR, SPDLOG_VER_MINOR, SPDLOG_VER_PATCH)},
        {"zlib", ZLIB_VERSION}}},
      {"config", cfg},
  };
  write_file(std::filesystem::path(c.out_dir) / fmt::format("{}_metadata.json", subcommand),
             meta.dump(2) + "\n");
}

void setup_logging(const Options& o, const std::filesystem::path& log_file) {
  std::vector<spdlog::sink_ptr> sinks;
  auto console = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
  console->set_level(o.quiet ? spdlog::level::warn
                             : o.verbosity > 0 ? spdlog::level::debug : spdlog::level::info);
  sinks.push_back(console);
  if (!log_file.empty()) {
    std::filesystem::create_directories(log_file.parent_path());
    auto file = std::make_shared<spdlog::sinks::basic_file_sink_mt>(log_file.string(), true);
    file->set_level(spdlog::level::debug);
    sinks.push_back(file);
  }
  auto logger = std::make_shared<spdlog::logger>("cisper", sinks.begin(), sinks.end());
  logger->set_level(spdlog::level::debug);
  spdlog::set_default_logger(logger);
}

int cmd_stats(const RunConfig& c, std::ostream& out) {
  const auto corpora = load_corpora(c);
  std::map<Split, const Corpus*> view;
  for (const auto& [s, corpus] : corpora) view.emplace(s, &corpus);
  const auto report = split_counts(view);
  const std::string table = report.format_table(c.dataset);
  out << table;
  write_file(std::filesystem::path(c.out_dir) / "stats.txt", table);
  return 0;
}

int cmd_features(const RunConfig& c, std::ostream& out) {
  if (is_toy(c)) throw ConfigError("the toy dataset computes its features on the fly");
  const auto corpora = load_corpora(c);
  std::unique_ptr<TransformerMaskedLm> lm;
  if (c.semantic_backend == "masked-lm" || c.commonsense_backend == "masked-lm") {
    const auto labels = labels_of(corpora);
    lm = std::make_unique<TransformerMaskedLm>(make_vocabulary(c, corpora, labels), plm_config(c),
                                               c.feature_seed);
  }
  for (const auto& [s, corpus] : corpora) {
    std::unique_ptr<SemanticBackend> sem;
    std::unique_ptr<CommonsenseBackend> cs;
    if (c.semantic_backend == "masked-lm") sem = std::make_unique<MaskedLmSemanticBackend>(*lm);
    else sem = std::make_unique<ReferenceSemanticBackend>(c.semantic_dim, c.feature_seed);
    if (c.commonsense_backend == "masked-lm") {
      cs = std::make_unique<MaskedLmCommonsenseBackend>(*lm);
    } else if (c.commonsense_backend == "precomputed") {
      cs = std::make_unique<PrecomputedCommonsenseBackend>(read_feature_cache(cache_root(c, s), corpus));
    } else {
      cs = std::make_unique<ReferenceCommonsenseBackend>(c.commonsense_dim, c.feature_seed);
    }
    if (sem->dim() != c.semantic_dim || cs->dim() != c.commonsense_dim) {
      throw ConfigError(fmt::format("backends produce d_u={} d_c={}, config says d_u={} d_c={}",
                                    sem->dim(), cs->dim(), c.semantic_dim, c.commonsense_dim));
    }
    const auto feats = extract_corpus_features(corpus, *sem, *cs);
    write_feature_cache(feats, cache_root(c, s), sem->name(), cs->name());
    out << fmt::format("{}: {} conversations -> {}\n", split_name(s), feats.size(),
                       cache_root(c, s).string());
  }
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& out) {
  const auto data = experiment_data(c);
  const std::filesystem::path dir = c.out_dir;
  data.vocabulary.save(dir / "vocab.txt");
  const auto outcome = run_experiment(c, data, dir);
  out << outcome.report.per_class_table();
  out << fmt::format("epochs {}  best validation weighted-F1 {:.4f}  checkpoint {}\n", outcome.epochs_run,
                     outcome.best_validation_f1, (dir / "model.ckpt").string());
  return 0;
}

int cmd_eval(const RunConfig& c, const Options& o, std::ostream& out) {
  const std::filesystem::path ckpt =
      o.checkpoint.empty() ? std::filesystem::path(c.out_dir) / "model.ckpt" : std::filesystem::path(o.checkpoint);
  const auto model = model_from_checkpoint(load_checkpoint(ckpt));
  const Split s = parse_split(o.split);
  auto corpora = load_corpora(c);
  if (!corpora.contains(s)) throw ConfigError(fmt::format("no {} split configured", split_name(s)));
  const auto feats = features_for(c, corpora.at(s), s);
  const auto report = evaluate(*model, corpora.at(s), feats);
  write_file(std::filesystem::path(c.out_dir) / fmt::format("eval_{}.json", split_name(s)),
             report.to_json().dump(2) + "\n");
  out << report.per_class_table();
  return 0;
}

int cmd_ablate(const RunConfig& c, std::ostream& out) {
  const auto data = experiment_data(c);
  const auto rows = ablation_suite(c, data, std::filesystem::path(c.out_dir) / "ablation");
  out << ablation_csv(rows);
  return 0;
}

int cmd_sweep(RunConfig c, const Options& o, std::ostream& out) {
  if (!o.values.empty()) c.set("sweep_values", o.values);
  c.validate();
  const auto data = experiment_data(c);
  const auto dir = std::filesystem::path(c.out_dir) / "sweep";
  const auto rows = sweep_prompt_length(c, c.sweep_values, data, dir);
  out << sweep_csv(rows);
  out << fmt::format("table {}  chart {}\n", (dir / "sweep.csv").string(), (dir / "sweep.svg").string());
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Continuous-prompt emotion recognition in conversation", "cisper"};
  app.footer(keys_help());
  app.require_subcommand(1, 1);
  Options o;
  app.add_option("--config,-c", o.config_path, "key = value configuration file");
  app.add_option("--set", o.overrides, "override one key (repeatable), e.g. --set epochs=3");
  app.add_option("--seed", o.seed, "seed override");
  app.add_option("--mode", o.mode, "prompt mode override");
  app.add_option("--out,-o", o.out, "output directory override");
  app.add_flag("--verbose,-v", o.verbosity, "debug logging");
  app.add_flag("--quiet,-q", o.quiet, "warnings and errors only");
  app.fallthrough();

  auto* stats = app.add_subcommand("stats", "conversation/utterance counts per split");
  auto* features = app.add_subcommand("features", "extract and cache per-utterance features");
  auto* train = app.add_subcommand("train", "train, keep the best-validation checkpoint, report on test");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint file (default <out>/model.ckpt)");
  eval->add_option("--split", o.split, "train | validation | test")->capture_default_str();
  auto* ablate = app.add_subcommand("ablate", "random / context-only / commonsense-only / full");
  auto* sweep = app.add_subcommand("sweep", "prompt-length sweep over N_e = N_p");
  sweep->add_option("--values", o.values, "comma-separated N values (default: sweep_values)");
  for (auto* sub : {stats, features, train, eval, ablate, sweep}) sub->fallthrough();

  std::vector<std::string> argv_store = args;
  std::reverse(argv_store.begin(), argv_store.end());
  try {
    app.parse(argv_store);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  std::string sub = app.get_subcommands().front()->get_name();
  std::filesystem::path log_file;
  try {
    const RunConfig c = resolve_config(o);
    log_file = std::filesystem::path(c.out_dir) / "cisper.log";
    setup_logging(o, log_file);
    write_metadata(c, sub);
    spdlog::debug("{} with config hash {}", sub, c.hash());
    if (sub == "stats") return cmd_stats(c, out);
    if (sub == "features") return cmd_features(c, out);
    if (sub == "train") return cmd_train(c, out);
    if (sub == "eval") return cmd_eval(c, o, out);
    if (sub == "ablate") return cmd_ablate(c, out);
    if (sub == "sweep") return cmd_sweep(c, o, out);
    return 2;
  } catch (const UserError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    err << "internal error: " << e.what();
    if (!log_file.empty()) err << " (log: " << log_file.string() << ")";
    err << '\n';
    return 2;
  }
}

int run_cli(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run_cli(args, std::cout, std::cerr);
}

}  // namespace cisper
