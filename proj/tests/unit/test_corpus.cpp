#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "unigen/corpus.hpp"
#include "unigen/error.hpp"

using namespace unigen;
using namespace unigen::corpus;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("unigen-test-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// Inverts the description templates back to dialect-A code.
struct DescriptionReader {
  const std::vector<std::string>& w;
  std::size_t i = 0;
  std::string prog() {
    std::string s = stmt();
    if (i < w.size() && w[i] == "next") {
      ++i;
      return s + " " + prog();
    }
    return s;
  }
  std::string stmt() {
    if (w[i] == "let") {
      std::string name = w[i + 1];
      i += 3;
      return "let " + name + " = " + expr() + " ;";
    }
    if (w[i] == "return") {
      ++i;
      return "return " + expr() + " ;";
    }
    ++i;  // if
    std::string c = expr();
    ++i;  // then
    std::string body = prog();
    ++i;  // done
    return "if ( " + c + " ) { " + body + " }";
  }
  std::string expr() {
    std::string t = term();
    if (i < w.size() && w[i] == "plus") {
      ++i;
      return t + " + " + expr();
    }
    return t;
  }
  std::string term() {
    if (w[i] == "open") {
      ++i;
      std::string e = expr();
      ++i;
      return "( " + e + " )";
    }
    std::string lexeme = w[i + 2];
    i += 3;
    return lexeme;
  }
};

}  // namespace

TEST_CASE("generation is deterministic and byte-identical on disk") {
  GenerationConfig cfg{Task::nl2code, 10, 7, 2};
  auto a = generate_synthetic(cfg);
  auto b = generate_synthetic(cfg);
  CHECK(a.train == b.train);
  CHECK(a.train.size() == 8);
  CHECK(a.valid.size() == 1);
  CHECK(a.test.size() == 1);
  auto d1 = temp_dir("gen1"), d2 = temp_dir("gen2");
  save_split(a, d1.string());
  save_split(b, d2.string());
  for (const char* f : {"train.jsonl", "valid.jsonl", "test.jsonl", "manifest.json"})
    CHECK(slurp(d1 / f) == slurp(d2 / f));
  cfg.seed = 8;
  CHECK(generate_synthetic(cfg).train != a.train);
}

TEST_CASE("generation config errors") {
  CHECK_THROWS_AS(generate_synthetic({Task::nl2code, 2, 1, 2}), ConfigError);
  CHECK_THROWS_AS(generate_synthetic({Task::nl2code, 10, 1, 0}), ConfigError);
  GenerationConfig explicit_sizes{Task::nl2code, 0, 1, 2, 20, 5, 5};
  CHECK_THROWS_AS(generate_synthetic(explicit_sizes), ConfigError);
  explicit_sizes.size = 30;
  auto split = generate_synthetic(explicit_sizes);
  CHECK(split.train.size() == 20);
  CHECK(split.valid.size() == 5);
  CHECK(split.test.size() == 5);
}

TEST_CASE("description template example") {
  const Grammar& g = target_grammar(Task::nl2code);
  AstNode ast = parse(minilang::lex("return x ;"), g);
  CHECK(describe(ast, g) == std::vector<std::string>{"return", "the", "variable", "x"});
  auto ex = make_example("e", describe(ast, g), "return x ;", g);
  CHECK(ex.n() == 3);
  CHECK(ex.m() == 7);
}

TEST_CASE("descriptions determine their programs") {
  auto split = generate_synthetic({Task::nl2code, 300, 3, 3});
  for (const auto& ex : split.train) {
    DescriptionReader reader{ex.source};
    CHECK(reader.prog() == join(ex.target_tokens));
    CHECK(reader.i == ex.source.size());
  }
}

TEST_CASE("translation sources differ only at assignment tokens") {
  auto split = generate_synthetic({Task::translation, 50, 4, 2});
  int assignments = 0;
  for (const auto& ex : split.train) {
    REQUIRE(ex.source.size() == ex.n());
    for (std::size_t k = 0; k < ex.n(); ++k) {
      if (ex.source[k] != ex.target_tokens[k].lexeme) {
        CHECK(ex.source[k] == "=");
        CHECK(ex.target_tokens[k].lexeme == ":=");
        ++assignments;
      }
    }
  }
  CHECK(assignments > 0);
}

TEST_CASE("every generated example satisfies the invariants") {
  for (Task task : {Task::nl2code, Task::translation}) {
    auto split = generate_synthetic({task, 200, 5, 3});
    const Grammar& g = target_grammar(task);
    std::set<std::string> ids;
    for (const auto* part : {&split.train, &split.valid, &split.test}) {
      for (const auto& ex : *part) {
        CHECK(ids.insert(ex.id).second);
        CHECK(ex.target_actions == ast_to_actions(parse(ex.target_tokens, g), g));
        CHECK(ex.alignment == align(ex.target_actions));
        CHECK(ex.n() >= 1);
        CHECK(ex.m() > ex.n());
      }
    }
  }
}

TEST_CASE("jsonl loading") {
  auto dir = temp_dir("jsonl");
  {
    std::ofstream(dir / "one.jsonl") << R"({"nl": "return the variable x", "code": "return x ;"})" << "\n";
    auto rows = load_jsonl((dir / "one.jsonl").string(), Task::nl2code);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].n() == 3);
    CHECK(rows[0].m() == 7);
    CHECK(rows[0].id == "one-1");
  }
  std::ofstream(dir / "empty.jsonl").close();
  CHECK(load_jsonl((dir / "empty.jsonl").string(), Task::nl2code).empty());
  {
    std::ofstream(dir / "bad.jsonl") << R"({"nl": "a", "code": "return x ;"})" << "\n"
                                     << R"({"nl": "b", "code": "return ;"})" << "\n";
    try {
      load_jsonl((dir / "bad.jsonl").string(), Task::nl2code);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(e.line() == 2);
    }
  }
  {
    std::ofstream(dir / "garbled.jsonl") << "{not json\n";
    CHECK_THROWS_AS(load_jsonl((dir / "garbled.jsonl").string(), Task::nl2code), FormatError);
  }
  {
    std::ofstream(dir / "oov.jsonl") << R"({"src": "return 100 ;", "tgt": "return 100 ;"})" << "\n";
    // Lexically valid; vocabulary limits are enforced by the model, not the loader.
    CHECK(load_jsonl((dir / "oov.jsonl").string(), Task::translation).size() == 1);
  }
}

TEST_CASE("save/load round-trips exactly") {
  auto split = generate_synthetic({Task::translation, 40, 9, 2});
  auto dir = temp_dir("roundtrip");
  save_split(split, dir.string());
  auto back = load_split(dir.string());
  CHECK(back.task == Task::translation);
  CHECK(back.seed == 9);
  CHECK(back.train == split.train);
  CHECK(back.valid == split.valid);
  CHECK(back.test == split.test);
  fs::remove(dir / "manifest.json");
  CHECK(load_split(dir.string()).task == Task::translation);
  CHECK_THROWS_AS(load_split((dir / "missing").string()), ConfigError);
}

TEST_CASE("per-line round-trip check") {
  auto split = generate_synthetic({Task::nl2code, 20, 4, 2});
  auto dir = temp_dir("roundtrip");
  save_split(split, dir.string());
  RoundTripReport ok = roundtrip_check(dir.string());
  CHECK(ok.checked == 20);
  CHECK(ok.passed == 20);
  CHECK(check_example(split.train[0], target_grammar(Task::nl2code)).empty());

  ParallelExample bad = split.train[1];
  std::swap(bad.target_actions[0], bad.target_actions[1]);
  CHECK_FALSE(check_example(bad, target_grammar(Task::nl2code)).empty());

  // Corrupt the second row of valid.jsonl; the other rows still pass.
  std::vector<std::string> lines;
  {
    std::ifstream in(dir / "valid.jsonl");
    for (std::string l; std::getline(in, l);) lines.push_back(l);
  }
  lines[1] = R"({"id":"broken","nl":"return the variable x","code":"return x"})";
  {
    std::ofstream out(dir / "valid.jsonl");
    for (const auto& l : lines) out << l << '\n';
  }
  RoundTripReport r = roundtrip_check(dir.string());
  CHECK(r.checked == 20);
  CHECK(r.passed == 19);
  REQUIRE(r.failures.size() == 1);
  CHECK(r.failures[0].file == "valid.jsonl");
  CHECK(r.failures[0].line == 2);
  CHECK(r.to_json()["failed"] == 1);

  auto empty = temp_dir("roundtrip-empty");
  CHECK_THROWS_AS(roundtrip_check(empty.string()), EmptyCorpusError);
  CHECK_THROWS_AS(roundtrip_check((empty / "nope").string()), ConfigError);
}
