// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <stdexcept>

#include "memosight/corpus.hpp"
#include "memosight/seqbuild.hpp"
#include "memosight/types.hpp"

using namespace memosight;

namespace {

SpecialIds micro_specials() { return make_special_ids(26, 4, vocab::kDelim, vocab::kEos); }

CoTTrace micro_trace() {
  CoTTrace t;
  t.prompt = {13, 4};
  t.steps = {{0, 1, 2, vocab::kDelim}, {5, 6, vocab::kEos}};
  return t;
}

TrainSequence valid_sequence() {
  BuildConfig cfg;
  cfg.c = 2;
  cfg.l_max = 4;
  return build_training_sequence_fixed(micro_trace(), cfg, micro_specials(), 1);
}

}  // namespace

TEST_CASE("make_special_ids packs above the regular vocabulary") {
  const SpecialIds s = make_special_ids(26, 3, 24, 25);
  CHECK(s.foresight_id == 26);
  CHECK(s.memory_ids == std::vector<TokenId>{27, 28, 29});
  CHECK(s.output_id == 30);
  CHECK(s.delimiter_id == 24);
  CHECK(s.eos_id == 25);
  CHECK_NOTHROW(s.validate());

  CHECK(s.is_memory(28));
  CHECK(!s.is_memory(26));
  CHECK(s.memory_index(29) == 2);
  CHECK(s.memory_index(26) == -1);
  CHECK(s.is_special(26));
  CHECK(s.is_special(30));
  CHECK(!s.is_special(24));
  CHECK(!s.is_special(25));
  CHECK(!s.is_special(0));
}

TEST_CASE("special id collisions are rejected") {
  SpecialIds s = make_special_ids(26, 2, 24, 25);
  s.output_id = s.memory_ids[0];
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  SpecialIds e = make_special_ids(26, 2, 24, 25);
  e.memory_ids.clear();
  CHECK_THROWS_AS(e.validate(), std::invalid_argument);
}

TEST_CASE("a built training sequence validates") {
  const TrainSequence s = valid_sequence();
  const ValidationReport rep = validate_sequence(s.tokens, s.pids, micro_specials());
  INFO(rep.message);
  CHECK(rep.ok);
}

TEST_CASE("rule a: prompt tokens after a reasoning block are flagged") {
  TrainSequence s = valid_sequence();
  s.tokens.push_back(Token{3, Role::Prompt, 0, 0});
  s.pids.push_back(0);
  const ValidationReport rep = validate_sequence(s.tokens, s.pids, micro_specials());
  CHECK(!rep.ok);
  CHECK(rep.rule == 'a');
  CHECK(rep.index == static_cast<std::ptrdiff_t>(s.tokens.size()) - 1);
}

TEST_CASE("rule b: memory without a following output token is flagged") {
  TrainSequence s = valid_sequence();
  // Drop the single output token of step 1.
  std::size_t out_at = 0;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.tokens[i].role == Role::Output) out_at = i;
  }
  s.tokens.erase(s.tokens.begin() + static_cast<std::ptrdiff_t>(out_at));
  s.pids.erase(s.pids.begin() + static_cast<std::ptrdiff_t>(out_at));
  // Re-number intra within the affected block so rule d stays quiet.
  for (std::size_t i = out_at; i < s.tokens.size() && s.tokens[i].step == 1; ++i) {
    s.tokens[i].intra -= 1;
  }
  const ValidationReport rep = validate_sequence(s.tokens, s.pids, micro_specials());
  CHECK(!rep.ok);
  CHECK(rep.rule == 'b');
}

TEST_CASE("rule b: reasoning after same-step memory is flagged") {
  TrainSequence s = valid_sequence();
  std::size_t mem_at = 0;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.tokens[i].role == Role::Memory) mem_at = i;  // last memory token
  }
  // Slip a reasoning token between the memory block and the output token.
  Token extra{7, Role::Reasoning, 1, s.tokens[mem_at].intra + 1};
  s.tokens.insert(s.tokens.begin() + static_cast<std::ptrdiff_t>(mem_at) + 1, extra);
  s.pids.insert(s.pids.begin() + static_cast<std::ptrdiff_t>(mem_at) + 1, s.pids[mem_at]);
  for (std::size_t i = mem_at + 2; i < s.tokens.size() && s.tokens[i].step == 1; ++i) {
    s.tokens[i].intra += 1;
  }
  const ValidationReport rep = validate_sequence(s.tokens, s.pids, micro_specials());
  CHECK(!rep.ok);
  CHECK(rep.rule == 'b');
  CHECK(rep.index == static_cast<std::ptrdiff_t>(mem_at) + 1);
}

TEST_CASE("rule c: foresight must be followed by same-step reasoning") {
  TrainSequence s = valid_sequence();
  // The first foresight token sits right after the prompt; delete its partner.
  std::size_t f_at = 0;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.tokens[i].role == Role::Foresight) {
      f_at = i;
      break;
    }
  }
  s.tokens.erase(s.tokens.begin() + static_cast<std::ptrdiff_t>(f_at) + 1);
  s.pids.erase(s.pids.begin() + static_cast<std::ptrdiff_t>(f_at) + 1);
  for (std::size_t i = f_at + 1; i < s.tokens.size() && s.tokens[i].step == 1; ++i) {
    s.tokens[i].intra -= 1;
  }
  const ValidationReport rep = validate_sequence(s.tokens, s.pids, micro_specials());
  CHECK(!rep.ok);
  CHECK(rep.rule == 'c');
  CHECK(rep.index == static_cast<std::ptrdiff_t>(f_at));
}

TEST_CASE("rule d: field inconsistencies are flagged") {
  const SpecialIds sp = micro_specials();

  SUBCASE("special id under a regular role") {
    TrainSequence s = valid_sequence();
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (s.tokens[i].role == Role::Reasoning) {
        s.tokens[i].id = sp.foresight_id;
        break;
      }
    }
    const ValidationReport rep = validate_sequence(s.tokens, s.pids, sp);
    CHECK(!rep.ok);
    CHECK(rep.rule == 'd');
  }
  SUBCASE("step numbers must increase by one") {
    TrainSequence s = valid_sequence();
    for (auto& t : s.tokens) {
      if (t.step == 2) t.step = 3;
    }
    const ValidationReport rep = validate_sequence(s.tokens, s.pids, sp);
    CHECK(!rep.ok);
    CHECK(rep.rule == 'd');
  }
  SUBCASE("intra must count from zero") {
    TrainSequence s = valid_sequence();
    s.tokens[1].intra = 5;  // first token of step 1
    const ValidationReport rep = validate_sequence(s.tokens, s.pids, sp);
    CHECK(!rep.ok);
    CHECK(rep.rule == 'd');
  }
  SUBCASE("negative pid") {
    TrainSequence s = valid_sequence();
    s.pids[3] = -1;
    const ValidationReport rep = validate_sequence(s.tokens, s.pids, sp);
    CHECK(!rep.ok);
    CHECK(rep.rule == 'd');
  }
  SUBCASE("prompt role off step zero") {
    TrainSequence s = valid_sequence();
    s.tokens[0].step = 1;
    const ValidationReport rep = validate_sequence(s.tokens, s.pids, sp);
    CHECK(!rep.ok);
    CHECK(rep.rule == 'd');
  }
}

TEST_CASE("length mismatch between tokens and pids throws") {
  TrainSequence s = valid_sequence();
  s.pids.pop_back();
  CHECK_THROWS_AS(validate_sequence(s.tokens, s.pids, micro_specials()), std::invalid_argument);
}

TEST_CASE("role names are stable") {
  CHECK(std::string(role_name(Role::Prompt)) == "prompt");
  CHECK(std::string(role_name(Role::Reasoning)) == "reasoning");
  CHECK(std::string(role_name(Role::Foresight)) == "foresight");
  CHECK(std::string(role_name(Role::Memory)) == "memory");
  CHECK(std::string(role_name(Role::Output)) == "output");
}
