#include "unigen/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "unigen/config.hpp"
#include "unigen/error.hpp"

namespace unigen::checkpoint {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

using Json = nlohmann::ordered_json;
using model::Matrix;
constexpr char kMagic[8] = {'U', 'N', 'I', 'G', 'E', 'N', 'C', 'K'};

template <class T>
void write_pod(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T read_pod(std::istream& in, const std::string& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError("truncated checkpoint " + path);
  return v;
}

std::vector<std::pair<std::string, Matrix*>> all_tensors(model::Model& m) {
  auto out = m.backbone.tensors();
  if (m.selector)
    for (auto& t : m.selector->tensors()) out.push_back(t);
  return out;
}

Json token_list(const UnifiedVocabulary& v) {
  Json j = Json::array();
  for (const auto& t : v.tokens()) j.push_back({t.cls, t.lexeme});
  return j;
}

}  // namespace

void save(const std::string& path, const model::Model& m, const Metadata& meta) {
  model::Model& mm = const_cast<model::Model&>(m);  // tensors() is only read here
  Json tensors = Json::array();
  for (const auto& [name, t] : all_tensors(mm)) tensors.push_back({{"name", name}, {"rows", t->rows()}, {"cols", t->cols()}});
  Json header = {{"format_version", kFormatVersion},
                 {"model_config", config::to_json(m.config)},
                 {"grammar", m.grammar.to_text()},
                 {"target_vocabulary", token_list(m.vocab)},
                 {"source_vocabulary", m.source_vocab.words()},
                 {"metadata", {{"stage", meta.stage}, {"step", meta.step}, {"seed", meta.seed}, {"extra", meta.extra}}},
                 {"has_selector", m.selector.has_value()},
                 {"backbone_fingerprint", m.backbone.fingerprint()},
                 {"tensors", tensors}};
  const std::string text = header.dump();

  const std::filesystem::path target(path);
  if (target.has_parent_path()) std::filesystem::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path);
    out.write(kMagic, sizeof kMagic);
    write_pod<std::uint32_t>(out, kFormatVersion);
    write_pod<std::uint64_t>(out, text.size());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [name, t] : all_tensors(mm))
      out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double)));
    if (!out) throw CheckpointError("failed writing checkpoint " + path);
  }
  std::filesystem::rename(tmp, path);
}

namespace {

Json read_header_from(std::istream& in, const std::string& path) {
  char magic[8];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw CheckpointError("not a checkpoint: " + path);
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != static_cast<std::uint32_t>(kFormatVersion))
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  const auto size = read_pod<std::uint64_t>(in, path);
  if (size > (std::uint64_t{1} << 32)) throw CheckpointError("corrupt checkpoint header in " + path);
  std::string text(size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(size))) throw CheckpointError("truncated checkpoint " + path);
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint header in " + path + ": " + e.what());
  }
}

std::ifstream open(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  return in;
}

}  // namespace

Json read_header(const std::string& path) {
  auto in = open(path);
  return read_header_from(in, path);
}

Loaded load(const std::string& path) {
  auto in = open(path);
  const Json header = read_header_from(in, path);
  try {
    model::ModelConfig mc;
    config::merge(mc, header.at("model_config"));
    Grammar grammar = Grammar::from_text(header.at("grammar").get<std::string>());
    SourceVocabulary source(header.at("source_vocabulary").get<std::vector<std::string>>());
    Loaded out{model::Model::create(mc, grammar, std::move(source)), {}};
    model::Model& m = out.model;
    if (token_list(m.vocab) != header.at("target_vocabulary"))
      throw CheckpointError("target vocabulary does not match the grammar in " + path);
    if (header.at("has_selector").get<bool>()) m.selector = model::init_selector(mc, 0);

    auto tensors = all_tensors(m);
    const Json& table = header.at("tensors");
    if (table.size() != tensors.size()) throw CheckpointError("tensor count mismatch in " + path);
    for (std::size_t k = 0; k < tensors.size(); ++k) {
      auto& [name, t] = tensors[k];
      const Json& e = table[k];
      if (e.at("name").get<std::string>() != name || e.at("rows").get<long>() != t->rows() ||
          e.at("cols").get<long>() != t->cols())
        throw CheckpointError("tensor '" + name + "' does not match the configuration in " + path);
      if (!in.read(reinterpret_cast<char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(double))))
        throw CheckpointError("truncated checkpoint " + path);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw CheckpointError("trailing bytes in " + path);
    if (m.backbone.fingerprint() != header.at("backbone_fingerprint").get<std::uint64_t>())
      throw CheckpointError("backbone fingerprint mismatch in " + path);

    const Json& meta = header.at("metadata");
    out.metadata.stage = meta.at("stage").get<std::string>();
    out.metadata.step = meta.at("step").get<long>();
    out.metadata.seed = meta.at("seed").get<std::uint64_t>();
    out.metadata.extra = meta.at("extra");
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("malformed checkpoint header in " + path + ": " + e.what());
  } catch (const CheckpointError&) {
    throw;
  } catch (const Error& e) {
    throw CheckpointError("invalid checkpoint " + path + ": " + e.what());
  }
}

}  // namespace unigen::checkpoint
