#pragma once

#include <filesystem>

#include "unigen/corpus.hpp"
#include "unigen/model.hpp"

namespace testutil {

inline unigen::model::ModelConfig micro_config(std::uint64_t seed = 1) {
  unigen::model::ModelConfig c;
  c.d_model = 8;
  c.n_heads = 2;
  c.n_enc_layers = 2;
  c.n_dec_layers = 2;
  c.ffn_dim = 16;
  c.dropout = 0.0;
  c.max_source_length = 256;
  c.max_target_length = 600;
  c.selector_hidden = 6;
  c.seed = seed;
  return c;
}

inline unigen::corpus::DatasetSplit small_split(int size = 30, std::uint64_t seed = 3, int depth = 2) {
  return unigen::corpus::generate_synthetic({unigen::corpus::Task::nl2code, size, seed, depth});
}

inline unigen::model::Model micro_model(const unigen::corpus::DatasetSplit& split,
                                        std::uint64_t seed = 1) {
  return unigen::model::Model::create(micro_config(seed),
                                      unigen::corpus::target_grammar(split.task),
                                      unigen::model::build_source_vocabulary(split.train));
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("unigen-test-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testutil
