// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

#include <json.hpp>

#include "memosight/corpus.hpp"
#include "memosight/infer.hpp"
#include "memosight/model.hpp"
#include "memosight/seqbuild.hpp"
#include "memosight/train.hpp"

namespace memosight {

/// Raised for unreadable/unparsable config files, unknown keys, and
/// cross-field violations. The CLI maps it to exit code 1.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised for filesystem failures (open/write). The CLI maps it to exit 3.
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// One JSON document covering every stage; flags override file values and the
/// merged result is echoed into each artifact.
struct RunConfig {
  CorpusParams corpus;
  BuildConfig build;
  TrainConfig train;
  ModelConfig model;
  InferConfig infer;
  std::string mode = "memosight";  // "memosight" or "plain" (no special tokens)

  struct Paths {
    std::string corpus_file;
    std::string out_dir;
    std::string checkpoint;
    std::string report;
  } paths;

  /// Special-token id assignment implied by the corpus vocab and l_max.
  SpecialIds specials() const;

  /// Embedding rows the configured mode needs.
  int required_vocab() const;

  /// Re-validates every constituent config plus the cross-field constraints;
  /// fills model.vocab_size from the mode when left at 0.
  void finalize();

  static RunConfig from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;

  /// Empty path -> defaults. Throws ConfigError / IoError.
  static RunConfig load(const std::string& path);
};

}  // namespace memosight
