// SPDX-License-Identifier: Apache-2.0
#include "memosight/seqbuild.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

#include "memosight/rng.hpp"

namespace memosight {

void BuildConfig::validate() const {
  if (c < 1) throw std::invalid_argument("BuildConfig: c < 1");
  if (d_max < 0) throw std::invalid_argument("BuildConfig: d_max < 0");
  if (l_max < 1) throw std::invalid_argument("BuildConfig: l_max < 1");
}

int alloc_memory(int step_len, int c) {
  if (step_len < 1 || c < 1) throw std::invalid_argument("alloc_memory: bad arguments");
  return (step_len + c - 1) / c;
}

std::vector<Pid> memory_pids(Pid step_first_pid, int step_len, int c) {
  const int l = alloc_memory(step_len, c);
  std::vector<Pid> out;
  out.reserve(static_cast<std::size_t>(l));
  for (int g = 0; g < l; ++g) {
    const Pid first = step_first_pid + g * c;
    const Pid last = step_first_pid + std::min((g + 1) * c, step_len) - 1;
    out.push_back((first + last) / 2);
  }
  return out;
}

Pid foresight_pid(int t, int d_prime, const StepSpan& span) {
  if (t < 1 || t > span.len()) throw std::invalid_argument("foresight_pid: t out of range");
  const int idx = t + d_prime - 1;  // 1-based reasoning index whose pid is shared
  if (idx < 1) return span.first - 1;
  if (idx > span.len()) return span.last;
  return span.first + idx - 1;
}

int sample_dprime(std::uint64_t seed, std::uint64_t sample_index, int d_max) {
  SplitMix64 rng(mix_seed(seed, sample_index));
  return static_cast<int>(rng.next_below(static_cast<std::uint64_t>(d_max) + 1));
}

namespace {

TrainSequence build_impl(const CoTTrace& trace, const BuildConfig& cfg,
                         const SpecialIds& specials, int d_prime) {
  cfg.validate();
  if (trace.prompt.empty()) throw std::invalid_argument("build: empty prompt");
  if (trace.steps.empty()) throw std::invalid_argument("build: trace has no steps");
  if (static_cast<std::size_t>(cfg.l_max) > specials.memory_ids.size()) {
    throw std::invalid_argument("build: l_max exceeds the memory-id pool");
  }

  TrainSequence s;
  s.d_prime = d_prime;
  s.prompt_len = static_cast<int>(trace.prompt.size());
  s.n_steps = static_cast<int>(trace.steps.size());

  auto push = [&s](TokenId id, Role role, int step, int intra, Pid pid, TokenId label) {
    s.tokens.push_back(Token{id, role, step, intra});
    s.pids.push_back(pid);
    s.labels.push_back(label);
  };

  // Prompt: pids 0..|P|-1. The final prompt position is supervised with the
  // first reasoning token so the trained model can start a generation.
  for (int j = 0; j < s.prompt_len; ++j) {
    const bool last = j + 1 == s.prompt_len;
    push(trace.prompt[static_cast<std::size_t>(j)], Role::Prompt, 0, j, j,
         last ? trace.steps[0][0] : kNoLabel);
  }

  // Reasoning and output pids continue the prompt's count as if no special
  // tokens existed.
  Pid next_pid = s.prompt_len;
  for (int i = 0; i < s.n_steps; ++i) {
    const auto& step = trace.steps[static_cast<std::size_t>(i)];
    const int len = static_cast<int>(step.size());
    const bool final_step = i + 1 == s.n_steps;
    const StepSpan span{next_pid, next_pid + len - 1};
    s.step_spans.push_back(span);

    int intra = 0;
    for (int t = 1; t <= len; ++t) {
      const TokenId rt = step[static_cast<std::size_t>(t - 1)];
      const TokenId f_label = t + d_prime <= len ? step[static_cast<std::size_t>(t + d_prime - 1)]
                                                 : kNoLabel;
      push(specials.foresight_id, Role::Foresight, i + 1, intra++,
           foresight_pid(t, d_prime, span), f_label);
      const TokenId r_label = t < len ? step[static_cast<std::size_t>(t)] : kNoLabel;
      push(rt, Role::Reasoning, i + 1, intra++, span.first + t - 1, r_label);
    }
    next_pid = span.last + 1;

    if (!final_step) {
      const int l = alloc_memory(len, cfg.c);
      if (l > cfg.l_max) {
        throw std::runtime_error("memory capacity exceeded at step " + std::to_string(i + 1) +
                                 ": need " + std::to_string(l) + " tokens, pool holds " +
                                 std::to_string(cfg.l_max));
      }
      const std::vector<Pid> mpids = memory_pids(span.first, len, cfg.c);
      for (int j = 0; j < l; ++j) {
        push(specials.memory_ids[static_cast<std::size_t>(j)], Role::Memory, i + 1, intra++,
             mpids[static_cast<std::size_t>(j)], kNoLabel);
      }
      // The output token bridges to the next step's first reasoning token.
      push(specials.output_id, Role::Output, i + 1, intra++, next_pid,
           trace.steps[static_cast<std::size_t>(i + 1)][0]);
      ++next_pid;
    }
  }
  return s;
}

}  // namespace

TrainSequence build_training_sequence(const CoTTrace& trace, const BuildConfig& cfg,
                                      const SpecialIds& specials, std::uint64_t sample_index) {
  return build_impl(trace, cfg, specials, sample_dprime(cfg.seed, sample_index, cfg.d_max));
}

TrainSequence build_training_sequence_fixed(const CoTTrace& trace, const BuildConfig& cfg,
                                            const SpecialIds& specials, int d_prime) {
  if (d_prime < 0 || d_prime > cfg.d_max) {
    throw std::invalid_argument("build: d_prime outside [0, d_max]");
  }
  return build_impl(trace, cfg, specials, d_prime);
}

TrainSequence build_plain_sequence(const CoTTrace& trace, const SpecialIds& specials) {
  (void)specials;
  if (trace.prompt.empty()) throw std::invalid_argument("build: empty prompt");
  TrainSequence s;
  s.prompt_len = static_cast<int>(trace.prompt.size());
  s.n_steps = static_cast<int>(trace.steps.size());

  std::vector<TokenId> flat = trace.prompt;
  std::vector<int> step_of(flat.size(), 0);
  std::vector<int> intra_of(flat.size(), 0);
  for (std::size_t j = 0; j < trace.prompt.size(); ++j) intra_of[j] = static_cast<int>(j);
  for (int i = 0; i < s.n_steps; ++i) {
    const auto& step = trace.steps[static_cast<std::size_t>(i)];
    const Pid first = static_cast<Pid>(flat.size());
    for (std::size_t t = 0; t < step.size(); ++t) {
      flat.push_back(step[t]);
      step_of.push_back(i + 1);
      intra_of.push_back(static_cast<int>(t));
    }
    s.step_spans.push_back(StepSpan{first, static_cast<Pid>(flat.size()) - 1});
  }

  const std::size_t n = flat.size();
  for (std::size_t j = 0; j < n; ++j) {
    const Role role = step_of[j] == 0 ? Role::Prompt : Role::Reasoning;
    s.tokens.push_back(Token{flat[j], role, step_of[j], intra_of[j]});
    s.pids.push_back(static_cast<Pid>(j));
    s.labels.push_back(j + 1 < n ? flat[j + 1] : kNoLabel);
  }
  return s;
}

nlohmann::json sequence_to_json(const TrainSequence& seq) {
  nlohmann::json j;
  auto& ids = j["ids"] = nlohmann::json::array();
  auto& roles = j["roles"] = nlohmann::json::array();
  auto& pids = j["pids"] = nlohmann::json::array();
  auto& labels = j["labels"] = nlohmann::json::array();
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    ids.push_back(seq.tokens[i].id);
    roles.push_back(role_name(seq.tokens[i].role));
    pids.push_back(seq.pids[i]);
    if (seq.labels[i] == kNoLabel) {
      labels.push_back(nullptr);
    } else {
      labels.push_back(seq.labels[i]);
    }
  }
  j["d_prime"] = seq.d_prime;
  return j;
}

}  // namespace memosight
