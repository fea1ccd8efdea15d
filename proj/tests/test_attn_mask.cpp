// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <string>
#include <vector>

#include "memosight/attn_mask.hpp"
#include "memosight/corpus.hpp"
#include "memosight/seqbuild.hpp"

using namespace memosight;

namespace {

SpecialIds specials_for(int l_max) {
  return make_special_ids(vocab::kRegularCount, l_max, vocab::kDelim, vocab::kEos);
}

CoTTrace micro_trace() {
  CoTTrace t;
  t.prompt = {13};
  t.steps = {{0, 1, vocab::kDelim}, {2, 3, vocab::kEos}};
  return t;
}

TrainSequence micro_sequence() {
  BuildConfig bc;
  bc.c = 3;
  bc.l_max = 2;
  return build_training_sequence_fixed(micro_trace(), bc, specials_for(bc.l_max), 1);
}

/// Sequence with the foresight tokens deleted; build_mask reads only
/// roles/steps, so pids and labels just shrink in lockstep.
TrainSequence drop_foresight(const TrainSequence& seq) {
  TrainSequence out = seq;
  out.tokens.clear();
  out.pids.clear();
  out.labels.clear();
  for (std::size_t i = 0; i < seq.tokens.size(); ++i) {
    if (seq.tokens[i].role == Role::Foresight) continue;
    out.tokens.push_back(seq.tokens[i]);
    out.pids.push_back(seq.pids[i]);
    out.labels.push_back(seq.labels[i]);
  }
  return out;
}

}  // namespace

TEST_CASE("construction equals the pairwise oracle on random sequences") {
  CorpusParams cp;
  cp.n_traces = 30;
  cp.steps_min = 1;
  cp.steps_max = 5;
  cp.step_len_min = min_step_len(cp.modulus);
  cp.step_len_max = 12;
  const auto traces = gen_corpus(cp);
  BuildConfig bc;
  bc.d_max = 3;
  const SpecialIds sp = specials_for(bc.l_max);
  for (std::size_t k = 0; k < traces.size(); ++k) {
    bc.c = k % 2 == 0 ? 2 : 5;
    const TrainSequence s =
        build_training_sequence_fixed(traces[k], bc, sp, static_cast<int>(k % 4));
    const AttnMask m = build_mask(s);
    const int n = m.n;
    REQUIRE(n == static_cast<int>(s.tokens.size()));
    for (int q = 0; q < n; ++q) {
      for (int c = 0; c < n; ++c) {
        if (m.at(q, c) != visible(q, c, s)) {
          FAIL("mismatch at trace ", k, " q=", q, " k=", c);
        }
      }
    }
  }
}

TEST_CASE("masks are causal with a full diagonal") {
  const AttnMask m = build_mask(micro_sequence());
  for (int q = 0; q < m.n; ++q) {
    CHECK(m.at(q, q));
    for (int k = q + 1; k < m.n; ++k) CHECK(!m.at(q, k));
  }
}

TEST_CASE("foresight keys are visible only to themselves") {
  CorpusParams cp;
  cp.n_traces = 8;
  const auto traces = gen_corpus(cp);
  BuildConfig bc;
  const SpecialIds sp = specials_for(bc.l_max);
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const TrainSequence s = build_training_sequence(traces[t], bc, sp, t);
    const AttnMask m = build_mask(s);
    for (int k = 0; k < m.n; ++k) {
      if (s.tokens[static_cast<std::size_t>(k)].role != Role::Foresight) continue;
      int col_sum = 0;
      for (int q = 0; q < m.n; ++q) col_sum += m.at(q, k) ? 1 : 0;
      CHECK(col_sum == 1);
      CHECK(m.at(k, k));
    }
  }
}

TEST_CASE("a foresight row copies its paired reasoning row") {
  const TrainSequence s = micro_sequence();
  const AttnMask m = build_mask(s);
  for (int q = 0; q < m.n; ++q) {
    if (s.tokens[static_cast<std::size_t>(q)].role != Role::Foresight) continue;
    REQUIRE(q + 1 < m.n);
    REQUIRE(s.tokens[static_cast<std::size_t>(q + 1)].role == Role::Reasoning);
    for (int k = 0; k < q; ++k) CHECK(m.at(q, k) == m.at(q + 1, k));
    CHECK(m.at(q, q));
    CHECK(!m.at(q + 1, q));  // the reasoning token never sees its foresight
  }
}

TEST_CASE("micro layout rows match hand-derived visibility") {
  // Layout: 0 prompt; 1 f, 2 r, 3 f, 4 r, 5 f, 6 r; 7 mem, 8 out;
  //         9 f, 10 r, 11 f, 12 r, 13 f, 14 r.
  const TrainSequence s = micro_sequence();
  REQUIRE(s.tokens.size() == 15);
  REQUIRE(s.tokens[7].role == Role::Memory);
  REQUIRE(s.tokens[8].role == Role::Output);
  const AttnMask m = build_mask(s);

  // Output sees prompt, own-step memory, itself; never own-step reasoning.
  CHECK(m.at(8, 0));
  CHECK(m.at(8, 7));
  CHECK(m.at(8, 8));
  CHECK(!m.at(8, 2));
  CHECK(!m.at(8, 4));
  CHECK(!m.at(8, 6));
  CHECK(!m.at(8, 1));

  // Memory sees prompt plus all same-step reasoning, not foresight.
  CHECK(m.at(7, 0));
  CHECK(m.at(7, 2));
  CHECK(m.at(7, 4));
  CHECK(m.at(7, 6));
  CHECK(!m.at(7, 1));
  CHECK(!m.at(7, 3));
  CHECK(!m.at(7, 5));

  // Step-2 reasoning sees prompt + compressed step 1, never its raw text.
  CHECK(m.at(10, 0));
  CHECK(m.at(10, 7));
  CHECK(m.at(10, 8));
  CHECK(!m.at(10, 2));
  CHECK(!m.at(10, 4));
  CHECK(!m.at(10, 6));
  CHECK(!m.at(10, 9));
}

TEST_CASE("single-step sequences reduce to causal attention") {
  CoTTrace t;
  t.prompt = {13, 4};
  t.steps = {{15, 4, 16, 17, vocab::kEos}};
  BuildConfig bc;
  const SpecialIds sp = specials_for(bc.l_max);
  const TrainSequence s = build_training_sequence_fixed(t, bc, sp, 1);
  const AttnMask full = build_mask(s);

  std::vector<int> kept;
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    if (s.tokens[i].role != Role::Foresight) kept.push_back(static_cast<int>(i));
  }
  const AttnMask want = causal_mask(static_cast<int>(kept.size()));
  for (std::size_t a = 0; a < kept.size(); ++a) {
    for (std::size_t b = 0; b < kept.size(); ++b) {
      CHECK(full.at(kept[a], kept[b]) == want.at(static_cast<int>(a), static_cast<int>(b)));
    }
  }
}

TEST_CASE("deleting foresight tokens deletes exactly their rows and columns") {
  CorpusParams cp;
  cp.n_traces = 6;
  cp.steps_min = 2;
  cp.steps_max = 4;
  const auto traces = gen_corpus(cp);
  BuildConfig bc;
  bc.c = 3;
  const SpecialIds sp = specials_for(bc.l_max);
  for (std::size_t t = 0; t < traces.size(); ++t) {
    const TrainSequence s = build_training_sequence(traces[t], bc, sp, t);
    const AttnMask full = build_mask(s);
    const TrainSequence red = drop_foresight(s);
    const AttnMask got = build_mask(red);

    std::vector<int> kept;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      if (s.tokens[i].role != Role::Foresight) kept.push_back(static_cast<int>(i));
    }
    REQUIRE(got.n == static_cast<int>(kept.size()));
    for (int a = 0; a < got.n; ++a) {
      for (int b = 0; b < got.n; ++b) {
        CHECK(got.at(a, b) ==
              full.at(kept[static_cast<std::size_t>(a)], kept[static_cast<std::size_t>(b)]));
      }
    }
  }
}

TEST_CASE("pbm dump is stable") {
  CHECK(mask_to_pbm(causal_mask(2)) == "P1\n2 2\n1 0\n1 1\n");
  const AttnMask m = build_mask(micro_sequence());
  const std::string pbm = mask_to_pbm(m);
  CHECK(pbm.substr(0, 9) == "P1\n15 15\n");
  // One line per row plus the two header lines.
  CHECK(std::count(pbm.begin(), pbm.end(), '\n') == 17);
}
