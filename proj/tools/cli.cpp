#include "cli.hpp"

#include "dkge/checkpoint.hpp"
#include "dkge/parallel.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <unordered_map>
#include <vector>

namespace dkge::cli {

namespace {

using Json = nlohmann::ordered_json;

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError("invalid value '" + text + "' for " + key);
  return value;
}

std::string format_real(Real v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fixed(Real v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

struct Setting {
  const char* key;
  const char* help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Setting unsigned_setting(const char* key, const char* help, T TrainConfig::*field) {
  return {key, help, [=](RunConfig& c, const std::string& v) { c.train.*field = parse_number<T>(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.train.*field); }};
}

template <typename T>
Setting context_setting(const char* key, const char* help, T ContextConfig::*field) {
  return {key, help, [=](RunConfig& c, const std::string& v) { c.train.context.*field = parse_number<T>(key, v); },
          [=](const RunConfig& c) { return std::to_string(c.train.context.*field); }};
}

const std::vector<Setting>& settings() {
  static const std::vector<Setting> all = {
      {"d", "embedding dimension",
       [](RunConfig& c, const std::string& v) { c.train.dim = parse_number<Eigen::Index>("d", v); },
       [](const RunConfig& c) { return std::to_string(c.train.dim); }},
      {"lr", "SGD learning rate",
       [](RunConfig& c, const std::string& v) { c.train.learning_rate = parse_number<Real>("lr", v); },
       [](const RunConfig& c) { return format_real(c.train.learning_rate); }},
      unsigned_setting("batch", "minibatch size", &TrainConfig::batch_size),
      {"margin", "hinge margin",
       [](RunConfig& c, const std::string& v) { c.train.margin = parse_number<Real>("margin", v); },
       [](const RunConfig& c) { return format_real(c.train.margin); }},
      unsigned_setting("xe", "entity AGCN hidden layers (1 or 2)", &TrainConfig::entity_layers),
      unsigned_setting("xr", "relation AGCN hidden layers (1 or 2)", &TrainConfig::relation_layers),
      unsigned_setting("max-epochs", "maximum training epochs", &TrainConfig::max_epochs),
      unsigned_setting("patience", "evaluations without improvement before stopping", &TrainConfig::patience),
      unsigned_setting("eval-every", "epochs between validation runs", &TrainConfig::eval_every),
      unsigned_setting("seed", "seed for all randomness", &TrainConfig::seed),
      context_setting("cap", "maximum context size", &ContextConfig::cap),
      context_setting("pad-e", "padded entity context size", &ContextConfig::entity_padded_size),
      context_setting("pad-r", "padded relation context size", &ContextConfig::relation_padded_size),
      context_setting("max-midpoints", "midpoints scanned per pair for length-2 paths",
                      &ContextConfig::max_midpoints),
      unsigned_setting("threads", "worker threads", &TrainConfig::threads),
      {"filter-mode", "train | all",
       [](RunConfig& c, const std::string& v) {
         if (v == "train") {
           c.filter = FilterMode::train;
         } else if (v == "all") {
           c.filter = FilterMode::all;
         } else {
           throw ConfigError("filter-mode must be 'train' or 'all', got '" + v + "'");
         }
       },
       [](const RunConfig& c) { return std::string(c.filter == FilterMode::train ? "train" : "all"); }},
      {"tie-mode", "optimistic | pessimistic",
       [](RunConfig& c, const std::string& v) {
         if (v == "optimistic") {
           c.tie = TieMode::optimistic;
         } else if (v == "pessimistic") {
           c.tie = TieMode::pessimistic;
         } else {
           throw ConfigError("tie-mode must be 'optimistic' or 'pessimistic', got '" + v + "'");
         }
       },
       [](const RunConfig& c) {
         return std::string(c.tie == TieMode::optimistic ? "optimistic" : "pessimistic");
       }},
  };
  return all;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Command-line values of the settings, kept as text until precedence is resolved.
struct SettingFlags {
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_path;
  CLI::Option* config_option = nullptr;

  void attach(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& s : settings()) {
      if (std::find(keys.begin(), keys.end(), s.key) == keys.end()) continue;
      options[s.key] = app->add_option(std::string("--") + s.key, values[s.key], s.help);
    }
    config_option = app->add_option("--config", config_path, "key = value config file (default: $DKGE_CONFIG)");
  }

  bool given(const std::string& key) const {
    const auto it = options.find(key);
    return it != options.end() && it->second->count() > 0;
  }

  // Defaults, then the config file, then explicit flags. Returns the keys set
  // by the file or the flags, and the config path used.
  RunConfig resolve(std::set<std::string>& explicit_keys, std::string& used_config) const {
    RunConfig c = default_run_config();
    std::string path;
    if (config_option->count() > 0) {
      path = config_path;
    } else if (const char* env = std::getenv("DKGE_CONFIG"); env != nullptr && *env != '\0') {
      path = env;
    }
    if (!path.empty()) {
      for (const auto& [k, v] : read_config_file(path)) {
        apply_setting(c, k, v);
        explicit_keys.insert(k);
      }
    }
    for (const auto& [k, opt] : options) {
      if (opt->count() > 0) {
        apply_setting(c, k, values.at(k));
        explicit_keys.insert(k);
      }
    }
    used_config = path.empty() ? "none" : path;
    return c;
  }
};

const std::vector<std::string> kTrainKeys = {"d",      "lr",        "batch", "margin",        "xe",      "xr",
                                             "max-epochs", "patience", "eval-every", "seed", "cap", "pad-e",
                                             "pad-r", "max-midpoints", "threads"};
const std::vector<std::string> kEvalKeys = {"threads", "filter-mode", "tie-mode"};
const std::vector<std::string> kDiffKeys = {"threads", "max-midpoints"};

void write_header(std::ostream& out, const std::string& command, const RunConfig& c,
                  const std::vector<std::string>& keys, const std::string& config) {
  out << "# dkge " << command;
  for (const auto& s : settings()) {
    if (std::find(keys.begin(), keys.end(), s.key) != keys.end()) out << ' ' << s.key << '=' << s.get(c);
  }
  out << " config=" << config << '\n';
}

Json config_json(const RunConfig& c, const std::vector<std::string>& keys) {
  Json j = Json::object();
  for (const auto& s : settings()) {
    if (std::find(keys.begin(), keys.end(), s.key) != keys.end()) j[s.key] = s.get(c);
  }
  return j;
}

Json report_json(const std::string& command, const RunConfig& c, const std::vector<std::string>& keys,
                 const TrainReport& r) {
  Json j;
  j["command"] = command;
  j["config"] = config_json(c, keys);
  j["epochs_run"] = r.epochs_run;
  j["epoch_losses"] = r.epoch_losses;
  j["best_valid_hits10"] = r.best_valid_hits10 ? Json(*r.best_valid_hits10) : Json(nullptr);
  j["best_epoch"] = r.best_epoch;
  j["validation_triples"] = r.validation_triples;
  j["retrain_triples"] = r.retrain_triples;
  j["emerging_objects"] = r.emerging_objects;
  j["removed_objects"] = r.removed_objects;
  j["changed_context_objects"] = r.changed_objects;
  j["updated_parameters"] = r.updated_parameters;
  j["frozen_parameters"] = r.frozen_parameters;
  j["seconds"] = r.seconds;
  return j;
}

void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// Epoch progress to `out` and, when given, a log file.
class ProgressLog {
 public:
  ProgressLog(std::ostream& out, const std::string& path) : out_(out) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw Error("cannot write log file " + path);
    }
  }

  void operator()(const EpochRecord& e) {
    std::string line = "epoch=" + std::to_string(e.epoch) + " loss=" + fixed(e.loss) +
                       " valid_hits10=" + (e.valid_hits10 ? fixed(*e.valid_hits10) : std::string("na")) +
                       " seconds=" + fixed(e.seconds, 3) + "\n";
    out_ << line;
    if (file_.is_open()) file_ << line << std::flush;
  }

 private:
  std::ostream& out_;
  std::ofstream file_;
};

std::vector<Triple> resolve_reported(const Snapshot& s, std::span<const NamedTriple> named, const char* what,
                                     std::ostream& err, std::size_t* skipped_out = nullptr) {
  std::size_t skipped = 0;
  auto out = resolve_all(s, named, &skipped);
  if (skipped > 0) err << "warning: skipped " << skipped << ' ' << what << " triples with unknown objects\n";
  if (skipped_out) *skipped_out = skipped;
  return out;
}

int cmd_train(const SettingFlags& flags, const std::string& dir, const std::string& checkpoint,
              const std::string& report_path, const std::string& log_path, const std::string& cache_path,
              std::ostream& out, std::ostream& err) {
  std::set<std::string> explicit_keys;
  std::string config;
  const RunConfig c = flags.resolve(explicit_keys, config);
  c.train.validate();
  write_header(out, "train", c, kTrainKeys, config);
  const SnapshotDir sd = load_snapshot_dir(dir, 0);
  const std::vector<Triple> valid = resolve_reported(sd.train, sd.valid, "validation", err);
  out << "triples=" << sd.train.num_triples() << " entities=" << sd.train.num_entities()
      << " relations=" << sd.train.num_relations() << " valid=" << valid.size() << '\n';

  std::optional<ContextTable> cached;
  if (!cache_path.empty()) {
    ContextConfig cc = c.train.context;
    cc.seed = c.train.seed;
    cached = load_context_cache(cache_path, sd.train, cc);
    if (cached) {
      out << "context_cache=hit\n";
    } else {
      cached = build_context_table(sd.train, cc, c.train.threads);
      save_context_cache(cache_path, sd.train, cc, *cached);
      out << "context_cache=miss\n";
    }
  }

  ProgressLog log(out, log_path);
  const TrainResult r =
      train_from_scratch(sd.train, valid, c.train, std::ref(log), cached ? &*cached : nullptr);
  save_checkpoint(checkpoint, r.model);
  out << "epochs_run=" << r.report.epochs_run << " best_epoch=" << r.report.best_epoch << " best_valid_hits10="
      << (r.report.best_valid_hits10 ? fixed(*r.report.best_valid_hits10) : std::string("na")) << '\n';
  if (!report_path.empty()) write_json(report_path, report_json("train", c, kTrainKeys, r.report));
  return 0;
}

int cmd_update(const SettingFlags& flags, const std::string& old_dir, const std::string& new_dir,
               const std::string& checkpoint_in, const std::string& checkpoint_out, const std::string& report_path,
               const std::string& log_path, std::ostream& out, std::ostream& err) {
  std::set<std::string> explicit_keys;
  std::string config;
  RunConfig c = flags.resolve(explicit_keys, config);
  const Model model = load_checkpoint(checkpoint_in);
  // Shape and context settings come from the checkpoint unless given explicitly.
  if (!explicit_keys.contains("d")) c.train.dim = model.params.dim();
  if (!explicit_keys.contains("xe")) c.train.entity_layers = model.params.entity_agcn.layers();
  if (!explicit_keys.contains("xr")) c.train.relation_layers = model.params.relation_agcn.layers();
  c.train.context = model.context_config;
  c.train.validate();
  write_header(out, "update", c, kTrainKeys, config);

  const SnapshotDir old_sd = load_snapshot_dir(old_dir, 0);
  const SnapshotDir new_sd = load_snapshot_dir(new_dir, 1);
  if (!model.params.matches(old_sd.train)) {
    throw IntegrityError("checkpoint " + checkpoint_in + " was not trained on " + old_dir + "/train.txt");
  }
  const std::vector<Triple> valid = resolve_reported(new_sd.train, new_sd.valid, "validation", err);
  ProgressLog log(out, log_path);
  const TrainResult r = train_online(old_sd.train, new_sd.train, model, valid, c.train, std::ref(log));
  save_checkpoint(checkpoint_out, r.model);
  out << "retrain_triples=" << r.report.retrain_triples << " emerging_objects=" << r.report.emerging_objects
      << " removed_objects=" << r.report.removed_objects << " changed_context=" << r.report.changed_objects
      << " updated_parameters=" << r.report.updated_parameters
      << " frozen_parameters=" << r.report.frozen_parameters << " epochs_run=" << r.report.epochs_run << '\n';
  if (!report_path.empty()) write_json(report_path, report_json("update", c, kTrainKeys, r.report));
  return 0;
}

std::vector<int> parse_ks(const std::string& text) {
  std::vector<int> ks;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    const int k = parse_number<int>("ks", trim(part));
    if (k < 1) throw ConfigError("K must be positive");
    ks.push_back(k);
  }
  if (ks.empty()) throw ConfigError("no K given");
  return ks;
}

int cmd_eval(const SettingFlags& flags, const std::string& dir, const std::string& checkpoint,
             const std::string& ks_text, const std::string& report_path, std::ostream& out, std::ostream& err) {
  std::set<std::string> explicit_keys;
  std::string config;
  const RunConfig c = flags.resolve(explicit_keys, config);
  const std::vector<int> ks = parse_ks(ks_text);
  write_header(out, "eval", c, kEvalKeys, config);
  const SnapshotDir sd = load_snapshot_dir(dir, 0);
  if (!sd.has_test) throw Error("missing test file " + (std::filesystem::path(dir) / "test.txt").string());
  const Model model = load_checkpoint(checkpoint);
  if (!model.params.matches(sd.train)) {
    throw IntegrityError("checkpoint " + checkpoint + " was not trained on " + dir + "/train.txt");
  }
  std::size_t skipped = 0;
  const std::vector<Triple> test = resolve_reported(sd.train, sd.test, "test", err, &skipped);
  std::vector<Triple> filter_triples(sd.train.triples().begin(), sd.train.triples().end());
  if (c.filter == FilterMode::all) {
    const auto valid = resolve_all(sd.train, sd.valid);
    filter_triples.insert(filter_triples.end(), valid.begin(), valid.end());
    filter_triples.insert(filter_triples.end(), test.begin(), test.end());
  }
  MetricsReport m = evaluate(test, model, make_filter(filter_triples), ks, c.tie, c.train.threads);
  m.skipped = skipped;
  out << m.to_string() << '\n';
  if (!report_path.empty()) {
    Json j;
    j["command"] = "eval";
    j["config"] = config_json(c, kEvalKeys);
    j["mr"] = m.mr;
    j["mrr"] = m.mrr;
    for (const auto& [k, v] : m.hits) j["hits" + std::to_string(k)] = v;
    j["queries"] = m.queries;
    j["skipped"] = m.skipped;
    write_json(report_path, j);
  }
  return 0;
}

int cmd_answer(const std::string& checkpoint, const std::string& head, const std::string& relation, std::size_t k,
               std::ostream& out) {
  const Model model = load_checkpoint(checkpoint);
  auto find = [](const std::vector<std::string>& names, const std::string& name, const char* what) {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw LookupError(std::string("unknown ") + what + " '" + name + "'");
    return static_cast<std::int32_t>(it - names.begin());
  };
  const EntityId h{find(model.params.entity_names, head, "entity")};
  const RelationId r{find(model.params.relation_names, relation, "relation")};
  const auto answers = answer(h, r, k, model);
  for (std::size_t i = 0; i < answers.size(); ++i) {
    out << (i + 1) << ' ' << model.params.entity_names[answers[i].entity.index()] << ' ' << fixed(answers[i].score)
        << '\n';
  }
  return 0;
}

int cmd_diff(const SettingFlags& flags, const std::string& old_dir, const std::string& new_dir, bool verbose,
             std::ostream& out) {
  std::set<std::string> explicit_keys;
  std::string config;
  const RunConfig c = flags.resolve(explicit_keys, config);
  const SnapshotDir a = load_snapshot_dir(old_dir, 0);
  const SnapshotDir b = load_snapshot_dir(new_dir, 1);
  const SnapshotDiff diff = diff_snapshots(a.train, b.train);
  const auto changed =
      changed_context_objects(a.train, b.train, diff, c.train.context.max_midpoints, c.train.threads);
  const auto retrain = collect_retrain_set(b.train, diff, changed);
  out << "added_triples=" << diff.added_triples.size() << " deleted_triples=" << diff.deleted_triples.size()
      << " emerging_entities=" << diff.emerging_entities.size()
      << " emerging_relations=" << diff.emerging_relations.size()
      << " removed_entities=" << diff.removed_entities.size()
      << " removed_relations=" << diff.removed_relations.size() << " changed_context=" << changed.size()
      << " retrain_triples=" << retrain.size() << '\n';
  if (verbose) {
    auto list = [&](const char* label, const Snapshot& s, auto&& ids) {
      out << label << ':';
      for (const auto& id : ids) out << ' ' << s.name(ObjectRef::of(id));
      out << '\n';
    };
    list("emerging_entities", b.train, diff.emerging_entities);
    list("emerging_relations", b.train, diff.emerging_relations);
    list("removed_entities", a.train, diff.removed_entities);
    list("removed_relations", a.train, diff.removed_relations);
    out << "changed_context:";
    for (ObjectRef o : changed) out << ' ' << b.train.name(o);
    out << '\n';
    for (const Triple& t : retrain) {
      const NamedTriple n = b.train.named(t);
      out << "retrain\t" << n.head << '\t' << n.relation << '\t' << n.tail << '\n';
    }
  }
  return 0;
}

}  // namespace

RunConfig default_run_config() {
  RunConfig c;
  c.train.threads = default_threads();
  return c;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
  for (const auto& s : settings()) {
    if (key == s.key) {
      s.set(config, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::map<std::string, std::string> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(path.string(), lineno, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) throw ParseError(path.string(), lineno, "expected 'key = value'");
    const bool known = std::any_of(settings().begin(), settings().end(),
                                   [&](const Setting& s) { return key == s.key; });
    if (!known) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    out[key] = value;
  }
  return out;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Dynamic knowledge graph embedding: training, online updates, evaluation and question answering"};
  app.require_subcommand(1);

  std::string train_dir, checkpoint, checkpoint_out, report, log, cache, old_dir, new_dir, ks = "1,3,10";
  std::string head, relation;
  std::size_t k = 10;
  bool verbose = false;

  SettingFlags train_flags, update_flags, eval_flags, diff_flags;

  auto* train = app.add_subcommand("train", "learn embeddings from scratch on one snapshot");
  train->add_option("snapshot", train_dir, "directory with train.txt (valid.txt, test.txt optional)")->required();
  train->add_option("-o,--out", checkpoint_out, "checkpoint to write")->required();
  train->add_option("--report", report, "write the training report as JSON");
  train->add_option("--log", log, "also append epoch progress to this file");
  train->add_option("--context-cache", cache, "reuse or create a context cache file");
  train_flags.attach(train, kTrainKeys);

  auto* update = app.add_subcommand("update", "online learning from an old snapshot's checkpoint to a new snapshot");
  update->add_option("old", old_dir, "old snapshot directory")->required();
  update->add_option("new", new_dir, "new snapshot directory")->required();
  update->add_option("-c,--checkpoint", checkpoint, "checkpoint trained on the old snapshot")->required();
  update->add_option("-o,--out", checkpoint_out, "checkpoint to write")->required();
  update->add_option("--report", report, "write the training report as JSON");
  update->add_option("--log", log, "also append epoch progress to this file");
  update_flags.attach(update, kTrainKeys);

  auto* eval = app.add_subcommand("eval", "filtered link prediction on <snapshot>/test.txt");
  eval->add_option("snapshot", train_dir, "snapshot directory")->required();
  eval->add_option("-c,--checkpoint", checkpoint, "checkpoint trained on the snapshot")->required();
  eval->add_option("--ks", ks, "comma-separated K values for Hits@K");
  eval->add_option("--report", report, "write the metrics as JSON");
  eval_flags.attach(eval, kEvalKeys);

  auto* ans = app.add_subcommand("answer", "rank tail entities for (head, relation, ?)");
  ans->add_option("-c,--checkpoint", checkpoint, "checkpoint")->required();
  ans->add_option("head", head, "head entity name")->required();
  ans->add_option("relation", relation, "relation name")->required();
  ans->add_option("-k", k, "number of answers")->check(CLI::PositiveNumber);

  auto* diff = app.add_subcommand("diff", "compare two snapshots and report what online learning would retrain");
  diff->add_option("old", old_dir, "old snapshot directory")->required();
  diff->add_option("new", new_dir, "new snapshot directory")->required();
  diff->add_flag("-v,--verbose", verbose, "list objects and retrain triples by name");
  diff_flags.attach(diff, kDiffKeys);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(train_flags, train_dir, checkpoint_out, report, log, cache, out, err);
    if (*update) {
      return cmd_update(update_flags, old_dir, new_dir, checkpoint, checkpoint_out, report, log, out, err);
    }
    if (*eval) return cmd_eval(eval_flags, train_dir, checkpoint, ks, report, out, err);
    if (*ans) return cmd_answer(checkpoint, head, relation, k, out);
    if (*diff) return cmd_diff(diff_flags, old_dir, new_dir, verbose, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}

}  // namespace dkge::cli
