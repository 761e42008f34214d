#pragma once

#include <cstdint>
#include <vector>

#include "gridvla/model.hpp"
#include "gridvla/sim.hpp"

namespace gridvla {

// Joint image+text attack on the policy's patch-to-token grounding: instead
// of pushing the action somewhere, it tears the attention-level alignment
// between what the camera shows and what the instruction says, and lets the
// downstream action fail on its own.

// Budget for the alternating search over (pixel perturbation, token swaps).
struct MisalignBudget {
  double eps_v = 0.06;    // L-inf pixel budget around the clean frame
  int visual_steps = 20;  // projected ascent steps per round
  int text_swaps = 1;     // greedy token substitutions per round
  int rounds = 4;         // alternation rounds
  void validate() const;  // throws on out-of-range fields
};

// {36, M} matrix of cosine similarities between every patch embedding and
// every non-PAD token embedding, M = non-PAD token count. Throws on an
// all-PAD instruction or a zero embedding vector.
Tensor alignment_map(const PolicyModel& m, const Tensor& image, const std::vector<int>& tokens);

// Mean absolute elementwise gap between the clean and adversarial alignment
// maps. Both instructions must carry the same number of non-PAD tokens
// (substitution-only text edits guarantee this); in [0, 2].
double misalignment_loss(const PolicyModel& m, const Tensor& clean_image,
                         const std::vector<int>& clean_tokens, const Tensor& adv_image,
                         const std::vector<int>& adv_tokens);

struct CrossmodalResult {
  Tensor adv_image;             // within eps_v of the clean frame, in [0,1]
  std::vector<int> adv_tokens;  // same length and non-PAD footprint as input
  std::vector<double> trace;    // achieved misalignment after every move
};

// Alternating maximization of the misalignment loss: per round, visual_steps
// sign-gradient pixel steps of size eps_v/visual_steps (projected to the
// eps_v ball and [0,1], kept only when the loss strictly improves), then
// text_swaps greedy whole-vocabulary substitutions at the position with the
// largest embedding gradient (accepted only on strict improvement).
// Deterministic given (weights, inputs, budget, seed).
CrossmodalResult crossmodal_attack(const PolicyModel& m, const Tensor& image,
                                   const std::vector<int>& tokens,
                                   const MisalignBudget& budget = {}, uint64_t seed = 0);

// One episode executed under a misaligned instruction.
struct CrossmodalEpisode {
  std::vector<int> clean_tokens;  // the attack's input instruction
  std::vector<int> adv_tokens;    // what the policy actually received
  double l_mis = 0.0;             // achieved misalignment on the first frame
  bool success = false;
};

struct MismatchedEval {
  double failure_rate = 0.0;
  std::vector<CrossmodalEpisode> episodes;
};

// Scene and success predicate come from the target category; the executed
// instruction is the attacked form of a source-category instruction, and the
// image perturbation rides along as a constant additive film over every
// frame. Episodes = target tasks x trials, seeds cycled per trial. Throws
// when source == target (the grid's diagonal is undefined).
MismatchedEval mismatched_pair_eval(const PolicyModel& m, Category source, Category target,
                                    int trials, const std::vector<uint64_t>& seeds,
                                    const MisalignBudget& budget = {});

// One row per episode for the inverse-correlation analysis: how much meaning
// the instruction kept, how hard the grounding was torn, and the outcome.
struct ResidualRow {
  double similarity;
  double l_mis;
  bool success;
};

std::vector<ResidualRow> residual_similarity_report(const PolicyModel& m,
                                                    const std::vector<CrossmodalEpisode>& episodes);

}  // namespace gridvla
