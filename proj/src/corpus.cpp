// SPDX-License-Identifier: Apache-2.0
#include "memosight/corpus.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "memosight/rng.hpp"

namespace memosight {

namespace {

int ndigits(int v) {
  int n = 1;
  while (v >= 10) {
    v /= 10;
    ++n;
  }
  return n;
}

bool is_digit_id(TokenId id) { return id >= vocab::kDigit0 && id < vocab::kDigit0 + 10; }

/// Parses a decimal number at steps[pos..]; returns value, advances pos.
int parse_digits(const std::vector<TokenId>& ids, std::size_t& pos) {
  if (pos >= ids.size() || !is_digit_id(ids[pos])) {
    throw std::invalid_argument("expected digit at position " + std::to_string(pos));
  }
  long v = 0;
  while (pos < ids.size() && is_digit_id(ids[pos])) {
    v = v * 10 + (ids[pos] - vocab::kDigit0);
    if (v > 1000000000L) throw std::invalid_argument("number too large");
    ++pos;
  }
  return static_cast<int>(v);
}

}  // namespace

int min_step_len(int modulus) {
  // Densest computation step: op, k, '=', result, delimiter.
  return 3 + 2 * ndigits(modulus - 1);
}

void CorpusParams::validate() const {
  if (n_traces < 1) throw std::invalid_argument("CorpusParams: n_traces < 1");
  if (modulus < 2) throw std::invalid_argument("CorpusParams: modulus < 2");
  if (steps_min < 1 || steps_min > steps_max) {
    throw std::invalid_argument("CorpusParams: bad steps_range");
  }
  if (step_len_min > step_len_max) throw std::invalid_argument("CorpusParams: bad step_len_range");
  if (step_len_min < min_step_len(modulus)) {
    throw std::invalid_argument("CorpusParams: step_len_min below " +
                                std::to_string(min_step_len(modulus)) +
                                " needed at modulus " + std::to_string(modulus));
  }
  if (vocab_size < vocab::kRegularCount) {
    throw std::invalid_argument("CorpusParams: vocab_size below " +
                                std::to_string(vocab::kRegularCount));
  }
}

std::vector<TokenId> digit_ids(int value) {
  if (value < 0) throw std::invalid_argument("digit_ids: negative value");
  std::vector<TokenId> out;
  do {
    out.insert(out.begin(), vocab::kDigit0 + value % 10);
    value /= 10;
  } while (value > 0);
  return out;
}

CoTTrace gen_trace(const CorpusParams& params, int index) {
  params.validate();
  SplitMix64 rng(mix_seed(params.seed, static_cast<std::uint64_t>(index)));

  // Draw order is part of the determinism contract: n_steps, start value,
  // per-op (op, k), then per-step lengths.
  const int n_steps = rng.next_int(params.steps_min, params.steps_max);
  const int n_ops = n_steps - 1;
  const int start = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(params.modulus)));

  CoTTrace t;
  t.prompt.push_back(vocab::kStart);
  for (TokenId d : digit_ids(start)) t.prompt.push_back(d);

  std::vector<TokenId> ops;
  std::vector<int> operands;
  std::vector<int> results;
  int v = start;
  for (int i = 0; i < n_ops; ++i) {
    const TokenId op = rng.next_below(2) == 0 ? vocab::kPlus : vocab::kTimes;
    const int k = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(params.modulus)));
    ops.push_back(op);
    operands.push_back(k);
    v = op == vocab::kPlus ? (v + k) % params.modulus : (v * k) % params.modulus;
    results.push_back(v);
    t.prompt.push_back(op);
    for (TokenId d : digit_ids(k)) t.prompt.push_back(d);
  }

  for (int i = 0; i < n_steps; ++i) {
    const int len = rng.next_int(params.step_len_min, params.step_len_max);
    std::vector<TokenId> step;
    if (i < n_ops) {
      step.push_back(ops[static_cast<std::size_t>(i)]);
      for (TokenId d : digit_ids(operands[static_cast<std::size_t>(i)])) step.push_back(d);
      step.push_back(vocab::kEquals);
      for (TokenId d : digit_ids(results[static_cast<std::size_t>(i)])) step.push_back(d);
    } else {
      step.push_back(vocab::kAnswer);
      t.answer_first = static_cast<int>(step.size());
      for (TokenId d : digit_ids(v)) step.push_back(d);
      t.answer_last = static_cast<int>(step.size()) - 1;
    }
    int filler = 0;
    while (static_cast<int>(step.size()) < len - 1) {
      step.push_back(vocab::kFiller0 + filler % vocab::kFillerCount);
      ++filler;
    }
    step.push_back(i < n_steps - 1 ? vocab::kDelim : vocab::kEos);
    t.steps.push_back(std::move(step));
  }
  return t;
}

std::vector<CoTTrace> gen_corpus(const CorpusParams& params) {
  params.validate();
  std::vector<CoTTrace> out;
  out.reserve(static_cast<std::size_t>(params.n_traces));
  for (int i = 0; i < params.n_traces; ++i) out.push_back(gen_trace(params, i));
  return out;
}

std::string trace_violation(const CoTTrace& trace, const SpecialIds& specials) {
  if (trace.steps.empty()) return "steps empty";
  for (TokenId id : trace.prompt) {
    if (id < 0) return "negative id in prompt";
    if (specials.is_special(id)) return "special id in prompt";
    if (id == specials.delimiter_id || id == specials.eos_id) {
      return "delimiter or eos inside prompt";
    }
  }
  for (std::size_t s = 0; s < trace.steps.size(); ++s) {
    const auto& step = trace.steps[s];
    const bool final_step = s + 1 == trace.steps.size();
    if (step.empty()) return "empty step " + std::to_string(s);
    for (std::size_t j = 0; j < step.size(); ++j) {
      const TokenId id = step[j];
      if (id < 0) return "negative id in step " + std::to_string(s);
      if (specials.is_special(id)) return "special id in step " + std::to_string(s);
      const bool last = j + 1 == step.size();
      if (!last && (id == specials.delimiter_id || id == specials.eos_id)) {
        return "delimiter or eos inside body of step " + std::to_string(s);
      }
    }
    if (!final_step && step.back() != specials.delimiter_id) {
      return "non-final step " + std::to_string(s) + " missing trailing delimiter";
    }
    if (final_step && step.back() != specials.eos_id) {
      return "final step missing trailing eos";
    }
  }
  return {};
}

std::vector<CoTTrace> load_jsonl(const std::string& path, const SpecialIds& specials) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_jsonl: cannot open " + path);
  std::vector<CoTTrace> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": parse error: " + e.what());
    }
    CoTTrace t;
    try {
      t.prompt = j.at("prompt").get<std::vector<TokenId>>();
      t.steps = j.at("steps").get<std::vector<std::vector<TokenId>>>();
    } catch (const std::exception& e) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": bad fields: " + e.what());
    }
    if (std::string v = trace_violation(t, specials); !v.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": " + v);
    }
    // Recover the answer span when the trace follows the builtin task shape.
    const auto& last = t.steps.back();
    for (std::size_t i = 0; i < last.size(); ++i) {
      if (last[i] == vocab::kAnswer && i + 1 < last.size() && is_digit_id(last[i + 1])) {
        t.answer_first = static_cast<int>(i) + 1;
        std::size_t e = i + 1;
        while (e < last.size() && is_digit_id(last[e])) ++e;
        t.answer_last = static_cast<int>(e) - 1;
        break;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

void save_jsonl(const std::string& path, const std::vector<CoTTrace>& traces) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_jsonl: cannot open " + path);
  for (const auto& t : traces) {
    nlohmann::json j;
    j["prompt"] = t.prompt;
    j["steps"] = t.steps;
    out << j.dump() << "\n";
  }
  if (!out) throw std::runtime_error("save_jsonl: write failed for " + path);
}

ChainEval eval_chain(const std::vector<TokenId>& prompt, int modulus) {
  if (modulus < 2) throw std::invalid_argument("eval_chain: modulus < 2");
  if (prompt.empty() || prompt.front() != vocab::kStart) {
    throw std::invalid_argument("eval_chain: prompt must begin with the start marker");
  }
  ChainEval ev;
  std::size_t pos = 1;
  ev.start = parse_digits(prompt, pos);
  int v = ev.start % modulus;
  while (pos < prompt.size()) {
    const TokenId op = prompt[pos];
    if (op != vocab::kPlus && op != vocab::kTimes) {
      throw std::invalid_argument("eval_chain: expected operator at position " +
                                  std::to_string(pos));
    }
    ++pos;
    const int k = parse_digits(prompt, pos);
    const long long lv = v;
    v = static_cast<int>(op == vocab::kPlus ? (lv + k) % modulus : (lv * k) % modulus);
    ev.ops.push_back(op);
    ev.operands.push_back(k);
    ev.results.push_back(v);
  }
  ev.answer = v;
  return ev;
}

bool trace_self_consistent(const CoTTrace& trace, int modulus) {
  ChainEval ev;
  try {
    ev = eval_chain(trace.prompt, modulus);
  } catch (const std::invalid_argument&) {
    return false;
  }
  const std::size_t n_ops = ev.ops.size();
  if (trace.steps.size() != n_ops + 1) return false;

  auto starts_with = [](const std::vector<TokenId>& step, const std::vector<TokenId>& prefix) {
    if (step.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
      if (step[i] != prefix[i]) return false;
    }
    return true;
  };

  for (std::size_t i = 0; i < n_ops; ++i) {
    std::vector<TokenId> expect{ev.ops[i]};
    for (TokenId d : digit_ids(ev.operands[i])) expect.push_back(d);
    expect.push_back(vocab::kEquals);
    for (TokenId d : digit_ids(ev.results[i])) expect.push_back(d);
    if (!starts_with(trace.steps[i], expect)) return false;
  }
  std::vector<TokenId> expect{vocab::kAnswer};
  for (TokenId d : digit_ids(ev.answer)) expect.push_back(d);
  return starts_with(trace.steps.back(), expect);
}

std::vector<TokenId> extract_answer_digits(const std::vector<TokenId>& ids) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] != vocab::kAnswer) continue;
    for (std::size_t j = i + 1; j < ids.size() && is_digit_id(ids[j]); ++j) out.push_back(ids[j]);
    break;
  }
  return out;
}

std::string render(const std::vector<TokenId>& ids, const SpecialIds& specials) {
  static const char* kGlyphs = "0123456789+*=>,A";
  std::string out;
  for (TokenId id : ids) {
    if (id >= 0 && id <= vocab::kAnswer) {
      out += kGlyphs[id];
    } else if (id >= vocab::kFiller0 && id < vocab::kFiller0 + vocab::kFillerCount) {
      out += static_cast<char>('a' + (id - vocab::kFiller0));
    } else if (id == vocab::kDelim) {
      out += ';';
    } else if (id == vocab::kEos) {
      out += '.';
    } else if (id == specials.foresight_id) {
      out += "<f>";
    } else if (id == specials.output_id) {
      out += "<o>";
    } else if (int m = specials.memory_index(id); m >= 0) {
      out += "<m" + std::to_string(m) + ">";
    } else {
      out += '?';
    }
  }
  return out;
}

}  // namespace memosight
