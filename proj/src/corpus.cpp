#include "unigen/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "unigen/error.hpp"
#include "unigen/random.hpp"

namespace unigen::corpus {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kManifestVersion = 1;

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

void describe_into(const AstNode& n, std::vector<std::string>& out) {
  namespace ml = minilang;
  const auto& c = n.children;
  switch (n.production) {
    case ml::prog_single:
      describe_into(c[0], out);
      break;
    case ml::prog_seq:
      describe_into(c[0], out);
      out.push_back("next");
      describe_into(c[1], out);
      break;
    case ml::stmt_let:
      out.insert(out.end(), {"let", c[1].lexeme, "be"});
      describe_into(c[3], out);
      break;
    case ml::stmt_return:
      out.push_back("return");
      describe_into(c[1], out);
      break;
    case ml::stmt_if:
      out.push_back("if");
      describe_into(c[2], out);
      out.push_back("then");
      describe_into(c[5], out);
      out.push_back("done");
      break;
    case ml::expr_term:
      describe_into(c[0], out);
      break;
    case ml::expr_plus:
      describe_into(c[0], out);
      out.push_back("plus");
      describe_into(c[2], out);
      break;
    case ml::term_id:
      out.insert(out.end(), {"the", "variable", c[0].lexeme});
      break;
    case ml::term_num:
      out.insert(out.end(), {"the", "number", c[0].lexeme});
      break;
    case ml::term_paren:
      out.push_back("open");
      describe_into(c[1], out);
      out.push_back("close");
      break;
    default:
      throw ConfigError("describe: unexpected production " + std::to_string(n.production));
  }
}

std::pair<const char*, const char*> field_names(Task task) {
  return task == Task::nl2code ? std::pair{"nl", "code"} : std::pair{"src", "tgt"};
}

}  // namespace

std::string to_string(Task task) { return task == Task::nl2code ? "nl2code" : "translation"; }

Task task_from_string(const std::string& name) {
  if (name == "nl2code") return Task::nl2code;
  if (name == "translation") return Task::translation;
  throw ConfigError("unknown task '" + name + "' (expected nl2code or translation)");
}

const Grammar& target_grammar(Task task) {
  return minilang::grammar(task == Task::nl2code ? minilang::Dialect::a : minilang::Dialect::b);
}

ParallelExample make_example(std::string id, std::vector<std::string> source,
                             const std::string& target_code, const Grammar& grammar) {
  ParallelExample ex;
  ex.id = std::move(id);
  ex.source = std::move(source);
  ex.target_tokens = lex(target_code, grammar);
  AstNode ast = parse(ex.target_tokens, grammar);
  ex.target_actions = ast_to_actions(ast, grammar);
  ex.alignment = align(ex.target_actions);
  if (ex.n() < 1 || ex.m() <= ex.n())
    throw ConfigError("example " + ex.id + " violates n >= 1, m > n");
  if (!alignment_is_valid(ex.alignment, ex.target_actions, ex.target_tokens))
    throw ConfigError("example " + ex.id + " has an invalid alignment");
  return ex;
}

std::vector<std::string> describe(const AstNode& program, const Grammar&) {
  std::vector<std::string> out;
  describe_into(program, out);
  return out;
}

DatasetSplit generate_synthetic(const GenerationConfig& config) {
  if (config.size < 3) throw ConfigError("dataset size must be at least 3");
  if (config.depth < 1) throw ConfigError("depth must be at least 1");
  int valid = config.valid_size.value_or(std::max(1, config.size / 10));
  int test = config.test_size.value_or(std::max(1, config.size / 10));
  int train = config.train_size.value_or(config.size - valid - test);
  if (train < 1 || valid < 0 || test < 0)
    throw ConfigError("split sizes must be positive");

  DatasetSplit split;
  split.task = config.task;
  split.seed = config.seed;
  split.depth = config.depth;

  const Grammar& source_grammar = minilang::grammar(minilang::Dialect::a);
  const Grammar& target = target_grammar(config.task);
  std::mt19937_64 rng(mix_seed(config.seed, static_cast<std::uint64_t>(config.task)));
  minilang::ProgramShape shape;
  shape.depth = config.depth;

  const std::string prefix = to_string(config.task) + "-";
  int counter = 0;
  auto fill = [&](std::vector<ParallelExample>& out, int count) {
    for (int k = 0; k < count; ++k) {
      AstNode program = minilang::random_program(rng, shape, minilang::Dialect::a);
      std::vector<std::string> source;
      if (config.task == Task::nl2code) {
        source = describe(program, source_grammar);
      } else {
        for (const auto& t : render(program, source_grammar)) source.push_back(t.lexeme);
      }
      AstNode tgt = retarget(program, target);
      char id[32];
      std::snprintf(id, sizeof id, "%06d", counter++);
      out.push_back(make_example(prefix + id, std::move(source), join(render(tgt, target)), target));
    }
  };
  fill(split.train, train);
  fill(split.valid, valid);
  fill(split.test, test);
  return split;
}

namespace {

bool blank(const std::string& line) { return line.find_first_not_of(" \t\r") == std::string::npos; }

ParallelExample parse_row(const std::string& line, Task task, const std::string& path,
                          const std::string& stem, std::size_t line_no) {
  auto fail = [&](const std::string& msg) {
    return FormatError(line_no, path + ":" + std::to_string(line_no) + ": " + msg);
  };
  auto [src_field, tgt_field] = field_names(task);
  json row;
  try {
    row = json::parse(line);
  } catch (const json::parse_error& e) {
    throw fail(std::string("malformed JSON: ") + e.what());
  }
  if (!row.is_object() || !row.contains(src_field) || !row.contains(tgt_field) ||
      !row[src_field].is_string() || !row[tgt_field].is_string())
    throw fail(std::string("expected string fields \"") + src_field + "\" and \"" + tgt_field + "\"");
  std::string id = row.contains("id") && row["id"].is_string()
                       ? row["id"].get<std::string>()
                       : stem + "-" + std::to_string(line_no);
  try {
    return make_example(id, split_words(row[src_field].get<std::string>()),
                        row[tgt_field].get<std::string>(), target_grammar(task));
  } catch (const Error& e) {
    throw fail(std::string("unusable target code: ") + e.what());
  }
}

}  // namespace

std::vector<ParallelExample> load_jsonl(const std::string& path, Task task) {
  std::ifstream in(path);
  if (!in) throw FormatError(0, "cannot open " + path);
  const std::string stem = fs::path(path).stem().string();
  std::vector<ParallelExample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!blank(line)) out.push_back(parse_row(line, task, path, stem, line_no));
  }
  return out;
}

std::string check_example(const ParallelExample& ex, const Grammar& grammar) {
  try {
    const std::string code = join(ex.target_tokens);
    if (lex(code, grammar) != ex.target_tokens) return "lexing the rendered code changes the tokens";
    const AstNode ast = parse(ex.target_tokens, grammar);
    if (render(ast, grammar) != ex.target_tokens) return "parse/render round trip changes the tokens";
    if (ast_to_actions(ast, grammar) != ex.target_actions) return "actions differ from the tree's derivation";
    if (!(actions_to_ast(ex.target_actions, grammar) == ast)) return "replaying the actions gives a different tree";
    if (ex.alignment != align(ex.target_actions)) return "alignment differs from the derived one";
    if (!alignment_is_valid(ex.alignment, ex.target_actions, ex.target_tokens)) return "alignment is invalid";
    if (ex.m() <= ex.n()) return "action sequence is not longer than the token sequence";
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

nlohmann::ordered_json RoundTripReport::to_json() const {
  json j;
  j["checked"] = checked;
  j["passed"] = passed;
  j["failed"] = checked - passed;
  j["failures"] = json::array();
  for (const auto& f : failures)
    j["failures"].push_back({{"file", f.file}, {"line", f.line}, {"id", f.id}, {"error", f.error}});
  return j;
}

RoundTripReport roundtrip_check(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory " + dir + " does not exist");
  Task task = Task::nl2code;
  bool have_task = false;
  const auto manifest_path = fs::path(dir) / "manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    try {
      task = task_from_string(json::parse(in).at("task").get<std::string>());
      have_task = true;
    } catch (const json::exception& e) {
      throw ConfigError("bad manifest in " + dir + ": " + e.what());
    }
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  RoundTripReport report;
  for (const auto& file : files) {
    std::ifstream in(file);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (blank(line)) continue;
      if (!have_task) {
        task = line.find("\"nl\"") != std::string::npos ? Task::nl2code : Task::translation;
        have_task = true;
      }
      ++report.checked;
      RoundTripFailure f{file.filename().string(), line_no, {}, {}};
      try {
        ParallelExample ex = parse_row(line, task, file.string(), file.stem().string(), line_no);
        f.id = ex.id;
        f.error = check_example(ex, target_grammar(task));
      } catch (const Error& e) {
        f.error = e.what();
      }
      if (f.error.empty()) ++report.passed;
      else report.failures.push_back(std::move(f));
    }
  }
  if (report.checked == 0) throw EmptyCorpusError("no examples under " + dir);
  return report;
}

void save_jsonl(const std::vector<ParallelExample>& examples, Task task, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(0, "cannot write " + path);
  auto [src_field, tgt_field] = field_names(task);
  for (const auto& ex : examples) {
    json row;
    row["id"] = ex.id;
    row[src_field] = join_words(ex.source);
    row[tgt_field] = join(ex.target_tokens);
    out << row.dump() << '\n';
  }
}

void save_split(const DatasetSplit& split, const std::string& dir) {
  fs::create_directories(dir);
  json manifest;
  manifest["format"] = "unigen-dataset";
  manifest["version"] = kManifestVersion;
  manifest["task"] = to_string(split.task);
  manifest["seed"] = split.seed;
  manifest["depth"] = split.depth;
  json sizes, hashes;
  for (auto [name, part] : {std::pair{"train", &split.train}, std::pair{"valid", &split.valid},
                            std::pair{"test", &split.test}}) {
    std::string path = (fs::path(dir) / (std::string(name) + ".jsonl")).string();
    save_jsonl(*part, split.task, path);
    sizes[name] = part->size();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(file_hash(path)));
    hashes[name] = hex;
  }
  manifest["sizes"] = sizes;
  manifest["hashes"] = hashes;
  std::ofstream out(fs::path(dir) / "manifest.json");
  out << manifest.dump(2) << '\n';
}

DatasetSplit load_split(const std::string& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory " + dir + " does not exist");
  DatasetSplit split;
  auto manifest_path = fs::path(dir) / "manifest.json";
  bool have_task = false;
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    json manifest;
    try {
      manifest = json::parse(in);
      split.task = task_from_string(manifest.at("task").get<std::string>());
      split.seed = manifest.value("seed", std::uint64_t{0});
      split.depth = manifest.value("depth", 0);
      have_task = true;
    } catch (const json::exception& e) {
      throw ConfigError("bad manifest in " + dir + ": " + e.what());
    }
  }
  auto train_path = fs::path(dir) / "train.jsonl";
  if (!fs::exists(train_path)) throw ConfigError("no train.jsonl in " + dir);
  if (!have_task) {
    std::ifstream in(train_path);
    std::string line;
    while (std::getline(in, line) && line.find_first_not_of(" \t\r") == std::string::npos) {}
    split.task = line.find("\"nl\"") != std::string::npos ? Task::nl2code : Task::translation;
  }
  split.train = load_jsonl(train_path.string(), split.task);
  for (auto [name, part] : {std::pair{"valid", &split.valid}, std::pair{"test", &split.test}}) {
    auto path = fs::path(dir) / (std::string(name) + ".jsonl");
    if (fs::exists(path)) *part = load_jsonl(path.string(), split.task);
  }
  return split;
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t file_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return fnv1a(buf.str());
}

}  // namespace unigen::corpus
