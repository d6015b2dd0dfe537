// Command-line driver: data generation, the three training stages,
// evaluation, decoding and corpus checks.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "unigen/checkpoint.hpp"
#include "unigen/config.hpp"
#include "unigen/corpus.hpp"
#include "unigen/decoding.hpp"
#include "unigen/error.hpp"
#include "unigen/training.hpp"

namespace fs = std::filesystem;
using namespace unigen;
using Json = nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kMissing = 3, kDivergence = 4 };

/// A missing prerequisite file or directory.
class MissingInput : public Error {
 public:
  using Error::Error;
};

/// Flag value, else the environment variable, else empty.
std::string path_or_env(const std::string& flag, const char* env) {
  if (!flag.empty()) return flag;
  const char* v = std::getenv(env);
  return v ? std::string(v) : std::string();
}

std::string require_path(const std::string& flag, const char* env, const std::string& what) {
  std::string p = path_or_env(flag, env);
  if (p.empty()) throw ConfigError("missing " + what + " (flag or " + env + ")");
  return p;
}

corpus::DatasetSplit load_data(const std::string& dir) {
  if (!fs::is_directory(dir)) throw MissingInput("dataset directory " + dir + " does not exist");
  if (!fs::exists(fs::path(dir) / "train.jsonl")) throw MissingInput("no train.jsonl in " + dir);
  return corpus::load_split(dir);
}

checkpoint::Loaded load_checkpoint(const std::string& path) {
  if (!fs::exists(path)) throw MissingInput("checkpoint " + path + " does not exist");
  return checkpoint::load(path);
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

Json dataset_hashes(const std::string& dir) {
  Json j = Json::object();
  for (const char* name : {"train", "valid", "test"}) {
    fs::path p = fs::path(dir) / (std::string(name) + ".jsonl");
    if (fs::exists(p)) j[name] = hex(corpus::file_hash(p.string()));
  }
  return j;
}

void write_json(const fs::path& path, const Json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

/// Metrics log plus progress on stderr.
class Logger {
 public:
  explicit Logger(const fs::path& path) : out_(path), start_(std::chrono::steady_clock::now()) {
    if (!out_) throw ConfigError("cannot write " + path.string());
  }
  training::Hooks hooks(int every) {
    training::Hooks h;
    h.log_every = every;
    h.log = [this](const training::LogRecord& r) {
      out_ << r.line() << '\n';
      out_.flush();
      if (r.epoch_end) std::cerr << "[" << elapsed() << "s] " << r.line() << '\n';
    };
    return h;
  }
  void line(const std::string& text) {
    out_ << text << '\n';
    out_.flush();
  }
  double elapsed() const {
    return std::round(std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count() * 10) / 10;
  }

 private:
  std::ofstream out_;
  std::chrono::steady_clock::time_point start_;
};

/// Options shared by the training commands.
struct TrainOptions {
  std::string data, config, out;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, lr;
  std::optional<int> epochs, batch_size, patience, d_model;
  std::optional<long> max_steps;
  int log_every = 50;

  void attach(CLI::App* cmd) {
    cmd->add_option("--data", data, "dataset directory (env UNIGEN_DATA)");
    cmd->add_option("--config", config, "JSON run config (env UNIGEN_CONFIG)");
    cmd->add_option("--out", out, "output directory (env UNIGEN_OUT)");
    cmd->add_option("--seed", seed, "training seed");
    cmd->add_option("--lambda", lambda, "distillation weight");
    cmd->add_option("--lr", lr, "peak learning rate");
    cmd->add_option("--epochs", epochs, "maximum epochs");
    cmd->add_option("--max-steps", max_steps, "maximum optimizer steps");
    cmd->add_option("--batch-size", batch_size, "batch size");
    cmd->add_option("--patience", patience, "early-stopping patience in epochs");
    cmd->add_option("--d-model", d_model, "model width");
    cmd->add_option("--log-every", log_every, "steps between metrics log lines");
  }

  /// Defaults, then the config file, then flags.
  config::RunConfig resolve() const {
    config::RunConfig rc;
    const std::string file = path_or_env(config, "UNIGEN_CONFIG");
    if (!file.empty()) {
      if (!fs::exists(file)) throw MissingInput("config file " + file + " does not exist");
      rc = config::RunConfig::load(file);
    }
    if (seed) rc.train.seed = rc.selector.seed = *seed;
    if (lambda) rc.train.lambda = *lambda;
    if (lr) rc.train.learning_rate = *lr;
    if (epochs) rc.train.max_epochs = rc.selector.max_epochs = *epochs;
    if (max_steps) rc.train.max_steps = *max_steps;
    if (batch_size) rc.train.batch_size = *batch_size;
    if (patience) rc.train.patience = rc.selector.patience = *patience;
    if (d_model) rc.model.d_model = *d_model;
    rc.validate();
    return rc;
  }
};

Json manifest(const std::string& command, const config::RunConfig& rc, const std::string& data) {
  Json j;
  j["command"] = command;
  j["config"] = rc.to_json();
  j["dataset"] = {{"dir", data}, {"hashes", dataset_hashes(data)}};
  return j;
}

/// The dataset decides the task; the run config records it.
void adopt_task(const corpus::DatasetSplit& split, config::RunConfig& rc) { rc.task = split.task; }

Json result_json(const training::TrainResult& r) {
  return {{"epochs", r.epochs},
          {"steps", r.steps},
          {"best_epoch", r.best_epoch},
          {"best_valid", r.best_valid},
          {"valid_history", r.valid_history}};
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const std::string& task, int size, std::uint64_t seed, int depth,
                 std::optional<int> train, std::optional<int> valid, std::optional<int> test,
                 const std::string& out_flag) {
  const std::string out = require_path(out_flag, "UNIGEN_OUT", "--out");
  corpus::GenerationConfig g;
  g.task = corpus::task_from_string(task);
  g.size = size;
  g.seed = seed;
  g.depth = depth;
  g.train_size = train;
  g.valid_size = valid;
  g.test_size = test;
  corpus::DatasetSplit split = corpus::generate_synthetic(g);
  corpus::save_split(split, out);
  std::cout << "wrote " << split.train.size() << "/" << split.valid.size() << "/" << split.test.size()
            << " examples to " << out << '\n';
  return kOk;
}

int cmd_train_teachers(const TrainOptions& o) {
  const std::string data = require_path(o.data, "UNIGEN_DATA", "--data");
  const fs::path out = require_path(o.out, "UNIGEN_OUT", "--out");
  config::RunConfig rc = o.resolve();
  corpus::DatasetSplit split = load_data(data);
  adopt_task(split, rc);
  fs::create_directories(out);
  Logger log(out / "metrics_teachers.log");
  training::TrainResult rs, rt;
  training::TeacherPair pair = training::train_teachers(split, rc.model, rc.train, log.hooks(o.log_every), &rs, &rt);
  checkpoint::save((out / "teacher_seq.ckpt").string(), pair.seq,
                   {"teacher_seq", rs.steps, rc.train.seed, {{"valid_L_s", rs.best_valid}}});
  checkpoint::save((out / "teacher_tree.ckpt").string(), pair.tree,
                   {"teacher_tree", rt.steps, rc.train.seed, {{"valid_L_t", rt.best_valid}}});
  Json m = manifest("train-teachers", rc, data);
  m["results"] = {{"teacher_seq", result_json(rs)}, {"teacher_tree", result_json(rt)}};
  write_json(out / "manifest_teachers.json", m);
  write_json(out / "config.json", rc.to_json());
  std::cerr << "teachers written to " << out.string() << " in " << log.elapsed() << "s\n";
  return kOk;
}

int cmd_train_backbone(const TrainOptions& o, const std::string& teachers_flag) {
  const std::string data = require_path(o.data, "UNIGEN_DATA", "--data");
  const fs::path out = require_path(o.out, "UNIGEN_OUT", "--out");
  const fs::path teachers_dir = teachers_flag.empty() ? out : fs::path(path_or_env(teachers_flag, "UNIGEN_TEACHERS"));
  config::RunConfig rc = o.resolve();
  corpus::DatasetSplit split = load_data(data);
  adopt_task(split, rc);
  auto seq = load_checkpoint((teachers_dir / "teacher_seq.ckpt").string());
  auto tree = load_checkpoint((teachers_dir / "teacher_tree.ckpt").string());
  if (seq.metadata.stage != "teacher_seq" || tree.metadata.stage != "teacher_tree")
    throw MissingInput("teacher checkpoints in " + teachers_dir.string() + " are not teachers");
  training::TeacherPair pair{std::move(seq.model), std::move(tree.model)};
  if (pair.seq.source_vocab != model::build_source_vocabulary(split.train))
    throw ConfigError("teachers were trained on a different dataset");

  fs::create_directories(out);
  Logger log(out / "metrics_backbone.log");
  Json m = manifest("train-backbone", rc, data);
  m["teachers"] = teachers_dir.string();
  model::Model student = [&] {
    if (rc.lambda_grid.empty()) {
      training::TrainResult r;
      model::Model s = training::train_backbone(split, pair, rc.model, rc.train, log.hooks(o.log_every), &r);
      m["results"] = result_json(r);
      m["lambda"] = rc.train.lambda;
      return s;
    }
    std::vector<training::SweepEntry> entries;
    model::Model s = training::sweep_lambda(split, pair, rc.model, rc.train, rc.lambda_grid,
                                            log.hooks(o.log_every), &entries);
    Json sweep = Json::array();
    double best = 0.0, best_loss = std::numeric_limits<double>::infinity();
    for (const auto& e : entries) {
      sweep.push_back({{"lambda", e.lambda}, {"valid_L_m", e.valid_L_m}, {"result", result_json(e.result)}});
      if (e.valid_L_m < best_loss) {
        best_loss = e.valid_L_m;
        best = e.lambda;
      }
    }
    m["sweep"] = sweep;
    m["lambda"] = best;
    return s;
  }();
  checkpoint::save((out / "backbone.ckpt").string(), student,
                   {"backbone", 0, rc.train.seed, {{"lambda", m["lambda"]}}});
  write_json(out / "manifest_backbone.json", m);
  write_json(out / "config.json", rc.to_json());
  std::cerr << "backbone written to " << (out / "backbone.ckpt").string() << " in " << log.elapsed() << "s\n";
  return kOk;
}

int cmd_train_selector(const TrainOptions& o, const std::string& backbone_flag) {
  const std::string data = require_path(o.data, "UNIGEN_DATA", "--data");
  const fs::path out = require_path(o.out, "UNIGEN_OUT", "--out");
  const fs::path backbone_path =
      backbone_flag.empty() ? out / "backbone.ckpt" : fs::path(path_or_env(backbone_flag, "UNIGEN_BACKBONE"));
  const fs::path target = out / "selector.ckpt";
  if (fs::exists(target) && fs::exists(backbone_path) && fs::equivalent(target, backbone_path))
    throw ConfigError("refusing to overwrite the backbone checkpoint " + backbone_path.string());
  config::RunConfig rc = o.resolve();
  corpus::DatasetSplit split = load_data(data);
  adopt_task(split, rc);
  auto loaded = load_checkpoint(backbone_path.string());
  if (loaded.metadata.stage != "backbone")
    throw MissingInput(backbone_path.string() + " is not a stage-one backbone checkpoint");
  model::Model m = std::move(loaded.model);
  if (m.source_vocab != model::build_source_vocabulary(split.train))
    throw ConfigError("backbone was trained on a different dataset");
  const std::uint64_t before = m.backbone.fingerprint();
  const std::uint64_t file_before = corpus::file_hash(backbone_path.string());

  fs::create_directories(out);
  Logger log(out / "metrics_selector.log");
  const auto strategy = decoding::Strategy::beam_search(rc.label_beam, rc.max_decode_length);
  auto train_labels = training::label_instances(split.train, m, strategy);
  auto valid_labels = training::label_instances(split.valid, m, strategy);
  std::size_t tree_tags = 0;
  for (const auto& l : train_labels) tree_tags += l.tag == model::Paradigm::tree;
  log.line("labels train=" + std::to_string(train_labels.size()) + " tree=" + std::to_string(tree_tags));
  write_json(out / "labels_train.json", training::labels_to_json(train_labels));
  write_json(out / "labels_valid.json", training::labels_to_json(valid_labels));

  training::TrainResult r = training::train_selector(m, split.train, train_labels, split.valid, valid_labels,
                                                     rc.selector, log.hooks(o.log_every));
  if (m.backbone.fingerprint() != before || corpus::file_hash(backbone_path.string()) != file_before) {
    std::cerr << "error: selector training changed the backbone\n";
    return kCheckFailed;
  }
  checkpoint::save(target.string(), m,
                   {"selector", r.steps, rc.selector.seed, {{"backbone", backbone_path.string()},
                                                            {"backbone_fingerprint", hex(before)}}});
  Json man = manifest("train-selector", rc, data);
  man["backbone"] = {{"path", backbone_path.string()}, {"fingerprint", hex(before)}};
  man["labels"] = {{"train", train_labels.size()},
                   {"train_tree", tree_tags},
                   {"train_seq", train_labels.size() - tree_tags}};
  man["results"] = result_json(r);
  write_json(out / "manifest_selector.json", man);
  std::cerr << "selector written to " << target.string() << " in " << log.elapsed() << "s\n";
  return kOk;
}

int cmd_eval(const std::string& ckpt_flag, const std::string& data_flag, const std::string& split_name,
             const std::string& mode, const std::string& report_flag, std::optional<int> beam,
             std::optional<std::uint64_t> seed, const std::string& config_flag, bool instances) {
  const std::string ckpt = require_path(ckpt_flag, "UNIGEN_CKPT", "--ckpt");
  const std::string data = require_path(data_flag, "UNIGEN_DATA", "--data");
  config::RunConfig rc;
  const std::string file = path_or_env(config_flag, "UNIGEN_CONFIG");
  if (!file.empty()) rc = config::RunConfig::load(file);
  auto loaded = load_checkpoint(ckpt);
  corpus::DatasetSplit split = load_data(data);
  const std::vector<corpus::ParallelExample>* part = split_name == "test"    ? &split.test
                                                     : split_name == "valid" ? &split.valid
                                                     : split_name == "train" ? &split.train
                                                                             : nullptr;
  if (!part) throw ConfigError("unknown split '" + split_name + "'");
  if (part->empty()) throw MissingInput("split '" + split_name + "' of " + data + " is empty");

  decoding::EvalConfig ec;
  ec.strategy = decoding::Strategy::beam_search(beam.value_or(rc.eval_beam), rc.max_decode_length);
  ec.random_seed = seed.value_or(rc.eval_seed);
  if (mode != "all") ec.modes = {decoding::mode_from_string(mode)};
  for (auto md : ec.modes)
    if (md == decoding::Mode::routed && !loaded.model.selector)
      throw MissingInput(ckpt + " carries no selector; routed mode needs train-selector first");
  if (mode == "all" && !loaded.model.selector) {
    ec.modes.erase(std::remove(ec.modes.begin(), ec.modes.end(), decoding::Mode::routed), ec.modes.end());
    std::cerr << "note: no selector in checkpoint, routed mode skipped\n";
  }

  decoding::Evaluation ev = decoding::evaluate(loaded.model, *part, ec);
  Json body = ev.to_json(instances);
  Json report;
  report["format"] = body["format"];
  report["version"] = body["version"];
  report["checkpoint"] = {{"path", ckpt},
                          {"stage", loaded.metadata.stage},
                          {"backbone_fingerprint", hex(loaded.model.backbone.fingerprint())}};
  report["dataset"] = {{"dir", data}, {"split", split_name}, {"count", part->size()}, {"hashes", dataset_hashes(data)}};
  report["decoding"] = {{"beam", ec.strategy.beam}, {"max_length", ec.strategy.max_length}, {"random_seed", ec.random_seed}};
  report["modes"] = body["modes"];
  if (body.contains("analysis")) report["analysis"] = body["analysis"];
  std::cout << ev.table();
  const std::string report_path = path_or_env(report_flag, "UNIGEN_REPORT");
  if (!report_path.empty()) {
    write_json(report_path, report);
    std::ofstream(report_path + ".txt") << ev.table();
  }
  return kOk;
}

int cmd_decode(const std::string& ckpt_flag, const std::string& paradigm, const std::string& text,
               std::optional<int> beam) {
  const std::string ckpt = require_path(ckpt_flag, "UNIGEN_CKPT", "--ckpt");
  auto loaded = load_checkpoint(ckpt);
  std::vector<std::string> words;
  std::istringstream in(text);
  for (std::string w; in >> w;) words.push_back(w);
  const auto strategy = decoding::Strategy::beam_search(beam.value_or(1));
  decoding::DecodeOutput out;
  if (paradigm == "routed") {
    auto r = decoding::route_and_decode(loaded.model, words, strategy);
    std::cerr << "p_seq=" << r.p[0] << " p_tree=" << r.p[1] << '\n';
    out = r.output;
  } else {
    out = decoding::decode(loaded.model, model::paradigm_from_string(paradigm), words, strategy);
  }
  std::string line;
  for (const auto& w : out.words()) line += (line.empty() ? "" : " ") + w;
  std::cout << line << '\n';
  std::cerr << "paradigm=" << model::to_string(out.paradigm) << " status=" << decoding::to_string(out.status)
            << " score=" << out.score << '\n';
  return out.status == decoding::Status::ok ? kOk : kCheckFailed;
}

int cmd_roundtrip(const std::string& data_flag) {
  const std::string data = require_path(data_flag, "UNIGEN_DATA", "--data");
  if (!fs::is_directory(data)) throw MissingInput("dataset directory " + data + " does not exist");
  corpus::RoundTripReport r;
  try {
    r = corpus::roundtrip_check(data);
  } catch (const EmptyCorpusError& e) {
    throw ConfigError(e.what());
  }
  for (const auto& f : r.failures)
    std::cout << "FAIL " << f.file << ":" << f.line << (f.id.empty() ? "" : " id=" + f.id) << ": " << f.error << '\n';
  std::cout << "checked " << r.checked << " passed " << r.passed << " failed " << r.checked - r.passed << '\n';
  return r.failures.empty() ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sequence and tree code generation with a learned paradigm selector"};
  app.require_subcommand(1);

  std::string task = "nl2code", out_dir;
  int size = 0, depth = 2;
  std::uint64_t gen_seed = 0;
  std::optional<int> train_size, valid_size, test_size;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--task", task, "nl2code or translation");
  gen->add_option("--size", size, "total examples")->required();
  gen->add_option("--seed", gen_seed, "generation seed");
  gen->add_option("--depth", depth, "maximum statement nesting depth");
  gen->add_option("--train-size", train_size);
  gen->add_option("--valid-size", valid_size);
  gen->add_option("--test-size", test_size);
  gen->add_option("--out", out_dir, "output directory (env UNIGEN_OUT)");

  TrainOptions teachers_opts, backbone_opts, selector_opts;
  auto* tt = app.add_subcommand("train-teachers", "train the seq-only and tree-only teachers");
  teachers_opts.attach(tt);
  auto* tb = app.add_subcommand("train-backbone", "stage one: multi-task and distillation training");
  backbone_opts.attach(tb);
  std::string teachers_dir;
  tb->add_option("--teachers", teachers_dir, "directory holding teacher checkpoints (default: --out)");
  auto* ts = app.add_subcommand("train-selector", "stage two: selector training on the frozen backbone");
  selector_opts.attach(ts);
  std::string backbone_ckpt;
  ts->add_option("--backbone", backbone_ckpt, "stage-one checkpoint (default: <out>/backbone.ckpt)");

  std::string ckpt, data, split_name = "test", mode = "all", report;
  std::string eval_config;
  std::optional<int> beam;
  std::optional<std::uint64_t> eval_seed;
  bool instances = false;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint (env UNIGEN_CKPT)");
  ev->add_option("--data", data, "dataset directory (env UNIGEN_DATA)");
  ev->add_option("--split", split_name, "train, valid or test");
  ev->add_option("--mode", mode, "seq, tree, routed, random, oracle or all");
  ev->add_option("--report", report, "JSON report path (env UNIGEN_REPORT)");
  ev->add_option("--beam", beam, "beam width (default from config: 5)");
  ev->add_option("--seed", eval_seed, "seed of the random routing mode");
  ev->add_option("--config", eval_config, "JSON run config");
  ev->add_flag("--instances", instances, "include per-instance records");

  std::string paradigm = "routed", text;
  std::string decode_ckpt;
  std::optional<int> decode_beam;
  auto* dec = app.add_subcommand("decode", "decode one input");
  dec->add_option("--ckpt", decode_ckpt, "checkpoint (env UNIGEN_CKPT)");
  dec->add_option("--paradigm", paradigm, "seq, tree or routed");
  dec->add_option("--input", text, "whitespace-separated source words")->required();
  dec->add_option("--beam", decode_beam, "beam width");

  std::string rt_data;
  auto* rt = app.add_subcommand("roundtrip-check", "verify transduction invariants of a dataset");
  rt->add_option("--data", rt_data, "dataset directory (env UNIGEN_DATA)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*gen) return cmd_gen_data(task, size, gen_seed, depth, train_size, valid_size, test_size, out_dir);
    if (*tt) return cmd_train_teachers(teachers_opts);
    if (*tb) return cmd_train_backbone(backbone_opts, teachers_dir);
    if (*ts) return cmd_train_selector(selector_opts, backbone_ckpt);
    if (*ev) return cmd_eval(ckpt, data, split_name, mode, report, beam, eval_seed, eval_config, instances);
    if (*dec) return cmd_decode(decode_ckpt, paradigm, text, decode_beam);
    if (*rt) return cmd_roundtrip(rt_data);
  } catch (const MissingInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const DivergenceError& e) {
    std::cerr << "error: training diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kConfig;
  }
  return kConfig;
}
