// SPDX-License-Identifier: Apache-2.0
#include "memosight/run_config.hpp"

#include <fstream>
#include <initializer_list>
#include <sstream>

namespace memosight {

namespace {

using nlohmann::json;

void expect_keys(const json& j, const std::string& section,
                 std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError("config: \"" + section + "\" must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    bool known = false;
    for (const char* a : allowed) {
      if (key == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown key \"" + key + "\" in \"" + section + "\"");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for \"" + std::string(key) + "\": " + e.what());
  }
}

}  // namespace

SpecialIds RunConfig::specials() const {
  return make_special_ids(corpus.vocab_size, build.l_max, vocab::kDelim, vocab::kEos);
}

int RunConfig::required_vocab() const {
  if (mode == "plain") return corpus.vocab_size;
  return corpus.vocab_size + build.l_max + 2;  // foresight + memory pool + output
}

void RunConfig::finalize() {
  try {
    corpus.validate();
    build.validate();
    train.validate();
    infer.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (mode != "memosight" && mode != "plain") {
    throw ConfigError("config: mode must be \"memosight\" or \"plain\", got \"" + mode + "\"");
  }
  const int need = required_vocab();
  if (model.vocab_size == 0) model.vocab_size = need;
  if (model.vocab_size != need) {
    throw ConfigError("config: model.vocab_size=" + std::to_string(model.vocab_size) +
                      " but mode \"" + mode + "\" needs " + std::to_string(need));
  }
  try {
    model.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

RunConfig RunConfig::from_json(const json& j) {
  expect_keys(j, "(top level)", {"corpus", "build", "train", "model", "infer", "mode", "paths"});
  RunConfig c;

  if (j.contains("corpus")) {
    const json& s = j.at("corpus");
    expect_keys(s, "corpus", {"seed", "n_traces", "steps_min", "steps_max", "step_len_min",
                              "step_len_max", "modulus", "vocab_size"});
    read(s, "seed", c.corpus.seed);
    read(s, "n_traces", c.corpus.n_traces);
    read(s, "steps_min", c.corpus.steps_min);
    read(s, "steps_max", c.corpus.steps_max);
    read(s, "step_len_min", c.corpus.step_len_min);
    read(s, "step_len_max", c.corpus.step_len_max);
    read(s, "modulus", c.corpus.modulus);
    read(s, "vocab_size", c.corpus.vocab_size);
  }
  if (j.contains("build")) {
    const json& s = j.at("build");
    expect_keys(s, "build", {"c", "d_max", "l_max", "seed"});
    read(s, "c", c.build.c);
    read(s, "d_max", c.build.d_max);
    read(s, "l_max", c.build.l_max);
    read(s, "seed", c.build.seed);
  }
  if (j.contains("train")) {
    const json& s = j.at("train");
    expect_keys(s, "train", {"lambda", "peak_lr", "warmup_frac", "epochs", "batch_size",
                             "grad_clip", "seed"});
    read(s, "lambda", c.train.lambda);
    read(s, "peak_lr", c.train.peak_lr);
    read(s, "warmup_frac", c.train.warmup_frac);
    read(s, "epochs", c.train.epochs);
    read(s, "batch_size", c.train.batch_size);
    read(s, "grad_clip", c.train.grad_clip);
    read(s, "seed", c.train.seed);
  }
  if (j.contains("model")) {
    const json& s = j.at("model");
    expect_keys(s, "model", {"n_layers", "n_heads", "d_model", "vocab_size", "rope_base",
                             "max_pid", "param_seed"});
    read(s, "n_layers", c.model.n_layers);
    read(s, "n_heads", c.model.n_heads);
    read(s, "d_model", c.model.d_model);
    read(s, "vocab_size", c.model.vocab_size);
    read(s, "rope_base", c.model.rope_base);
    read(s, "max_pid", c.model.max_pid);
    read(s, "param_seed", c.model.param_seed);
  }
  if (j.contains("infer")) {
    const json& s = j.at("infer");
    expect_keys(s, "infer", {"d", "c", "max_new_tokens", "compression_enabled"});
    read(s, "d", c.infer.d);
    read(s, "c", c.infer.c);
    read(s, "max_new_tokens", c.infer.max_new_tokens);
    read(s, "compression_enabled", c.infer.compression_enabled);
  }
  read(j, "mode", c.mode);
  if (j.contains("paths")) {
    const json& s = j.at("paths");
    expect_keys(s, "paths", {"corpus_file", "out_dir", "checkpoint", "report"});
    read(s, "corpus_file", c.paths.corpus_file);
    read(s, "out_dir", c.paths.out_dir);
    read(s, "checkpoint", c.paths.checkpoint);
    read(s, "report", c.paths.report);
  }
  return c;
}

nlohmann::json RunConfig::to_json() const {
  json j;
  j["corpus"] = {{"seed", corpus.seed},
                 {"n_traces", corpus.n_traces},
                 {"steps_min", corpus.steps_min},
                 {"steps_max", corpus.steps_max},
                 {"step_len_min", corpus.step_len_min},
                 {"step_len_max", corpus.step_len_max},
                 {"modulus", corpus.modulus},
                 {"vocab_size", corpus.vocab_size}};
  j["build"] = {{"c", build.c}, {"d_max", build.d_max}, {"l_max", build.l_max},
                {"seed", build.seed}};
  j["train"] = {{"lambda", train.lambda},     {"peak_lr", train.peak_lr},
                {"warmup_frac", train.warmup_frac}, {"epochs", train.epochs},
                {"batch_size", train.batch_size},   {"grad_clip", train.grad_clip},
                {"seed", train.seed}};
  j["model"] = {{"n_layers", model.n_layers}, {"n_heads", model.n_heads},
                {"d_model", model.d_model},   {"vocab_size", model.vocab_size},
                {"rope_base", model.rope_base}, {"max_pid", model.max_pid},
                {"param_seed", model.param_seed}};
  j["infer"] = {{"d", infer.d},
                {"c", infer.c},
                {"max_new_tokens", infer.max_new_tokens},
                {"compression_enabled", infer.compression_enabled}};
  j["mode"] = mode;
  j["paths"] = {{"corpus_file", paths.corpus_file},
                {"out_dir", paths.out_dir},
                {"checkpoint", paths.checkpoint},
                {"report", paths.report}};
  return j;
}

RunConfig RunConfig::load(const std::string& path) {
  if (path.empty()) return RunConfig{};
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace memosight
