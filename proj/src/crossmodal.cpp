#include "gridvla/crossmodal.hpp"

#include <algorithm>
#include <cmath>

#include "gridvla/rng.hpp"
#include "gridvla/text_attacks.hpp"
#include "gridvla/vocab.hpp"

namespace gridvla {

namespace {

std::vector<int> content_positions(const std::vector<int>& tokens) {
  std::vector<int> pos;
  for (int i = 0; i < int(tokens.size()); ++i)
    if (tokens[i] != Vocabulary::instance().pad_id()) pos.push_back(i);
  return pos;
}

double cosine_rows(const Tensor& a, int i, const Tensor& b, int j) {
  int d = a.dim(1);
  auto ra = a.data.segment(Eigen::Index(i) * d, d);
  auto rb = b.data.segment(Eigen::Index(j) * d, d);
  double na = std::sqrt((ra * ra).sum()), nb = std::sqrt((rb * rb).sum());
  if (na == 0.0 || nb == 0.0) throw Error("alignment map: zero embedding vector");
  return (ra * rb).sum() / (na * nb);
}

Tensor map_from(const Tensor& patch_emb, const Tensor& token_emb, const std::vector<int>& pos) {
  Tensor map = Tensor::zeros({kPatchCount, int(pos.size())});
  for (int i = 0; i < kPatchCount; ++i)
    for (int j = 0; j < int(pos.size()); ++j)
      map.at(i, j) = cosine_rows(patch_emb, i, token_emb, pos[size_t(j)]);
  return map;
}

double lmis_value(const Tensor& map_a, const Tensor& map_b) {
  return (map_a.data - map_b.data).abs().sum() / double(map_a.size());
}

// Records the misalignment loss against a fixed clean map on the tape, so
// one backward pass yields gradients for both the pixels (when the image is
// differentiable) and the token-embedding rows.
struct TapedLmis {
  ForwardVars fv;
  Var loss;
};

TapedLmis lmis_on(TapeT<double>& tape, const PolicyModel& m, const Tensor& adv_image,
                  const std::vector<int>& adv_tokens, const std::vector<int>& pos,
                  const Tensor& clean_map, bool differentiable_image) {
  TapedLmis out;
  out.fv = build_forward(tape, m, adv_image, adv_tokens, differentiable_image);
  Var total;
  bool first = true;
  for (int i = 0; i < kPatchCount; ++i) {
    Var pi = tape.slice(out.fv.patch_embeddings, 0, i, i + 1);
    for (int j = 0; j < int(pos.size()); ++j) {
      Var wj = tape.slice(out.fv.token_embeddings, 0, pos[size_t(j)], pos[size_t(j)] + 1);
      Var gap = tape.abs(
          tape.sub(tape.cosine(pi, wj), tape.leaf(Tensor::scalar(clean_map.at(i, j)))));
      total = first ? gap : tape.add(total, gap);
      first = false;
    }
  }
  out.loss = tape.scale(total, 1.0 / double(clean_map.size()));
  return out;
}

}  // namespace

void MisalignBudget::validate() const {
  if (!(eps_v > 0.0) || eps_v > 1.0) throw Error("misalignment budget: eps_v must be in (0,1]");
  if (visual_steps < 1 || text_swaps < 1 || rounds < 1)
    throw Error("misalignment budget: step counts must be >= 1");
}

Tensor alignment_map(const PolicyModel& m, const Tensor& image, const std::vector<int>& tokens) {
  std::vector<int> pos = content_positions(tokens);
  if (pos.empty()) throw Error("alignment map: all-PAD instruction");
  return map_from(encode_vision(m, image), encode_text(m, tokens), pos);
}

double misalignment_loss(const PolicyModel& m, const Tensor& clean_image,
                         const std::vector<int>& clean_tokens, const Tensor& adv_image,
                         const std::vector<int>& adv_tokens) {
  std::vector<int> pos_clean = content_positions(clean_tokens);
  std::vector<int> pos_adv = content_positions(adv_tokens);
  if (pos_clean.size() != pos_adv.size())
    throw Error("misalignment loss: instructions differ in non-PAD length (" +
                std::to_string(pos_clean.size()) + " vs " + std::to_string(pos_adv.size()) + ")");
  return lmis_value(alignment_map(m, clean_image, clean_tokens),
                    alignment_map(m, adv_image, adv_tokens));
}

CrossmodalResult crossmodal_attack(const PolicyModel& m, const Tensor& image,
                                   const std::vector<int>& tokens, const MisalignBudget& budget,
                                   uint64_t seed) {
  budget.validate();
  std::vector<int> pos = content_positions(tokens);
  if (pos.empty()) throw Error("misalignment attack: all-PAD instruction");
  const Tensor clean_map = alignment_map(m, image, tokens);

  CrossmodalResult out;
  out.adv_tokens = tokens;
  // Random start inside the inner half of the pixel ball: gradient ascent
  // from the exact clean image would begin at a stationary zero of the loss.
  Rng rng(mix_seed(seed, "crossmodal-init"));
  out.adv_image = image;
  for (Eigen::Index i = 0; i < out.adv_image.size(); ++i)
    out.adv_image[i] = std::clamp(
        out.adv_image[i] + rng.uniform(-budget.eps_v / 2.0, budget.eps_v / 2.0), 0.0, 1.0);

  auto current_lmis = [&]() {
    return lmis_value(clean_map, map_from(encode_vision(m, out.adv_image),
                                          encode_text(m, out.adv_tokens), pos));
  };
  double current = current_lmis();
  const double alpha = budget.eps_v / double(budget.visual_steps);

  for (int round = 0; round < budget.rounds; ++round) {
    // (a) projected sign-gradient ascent on the pixels.
    for (int s = 0; s < budget.visual_steps; ++s) {
      TapeT<double> tape;
      TapedLmis rec = lmis_on(tape, m, out.adv_image, out.adv_tokens, pos, clean_map,
                              /*differentiable_image=*/true);
      tape.backward(rec.loss);
      const Tensor& g = tape.grad(rec.fv.image);
      Tensor candidate = out.adv_image;
      for (Eigen::Index i = 0; i < candidate.size(); ++i) {
        double step = g[i] > 0 ? alpha : (g[i] < 0 ? -alpha : 0.0);
        double v = candidate[i] + step;
        v = std::clamp(v, image[i] - budget.eps_v, image[i] + budget.eps_v);
        candidate[i] = std::clamp(v, 0.0, 1.0);
      }
      Tensor next_map = map_from(encode_vision(m, candidate), encode_text(m, out.adv_tokens), pos);
      double l = lmis_value(clean_map, next_map);
      if (l > current) {
        out.adv_image = candidate;
        current = l;
      }
      out.trace.push_back(current);
    }
    // (b) greedy token substitution at the position with the steepest
    // embedding gradient; any vocabulary word may land there.
    for (int s = 0; s < budget.text_swaps; ++s) {
      TapeT<double> tape;
      TapedLmis rec = lmis_on(tape, m, out.adv_image, out.adv_tokens, pos, clean_map,
                              /*differentiable_image=*/false);
      tape.backward(rec.loss);
      const Tensor& ge = tape.grad(rec.fv.token_embeddings);
      int d = ge.dim(1);
      int best_pos = pos.front();
      double best_norm = -1.0;
      for (int p : pos) {
        double n = ge.data.segment(Eigen::Index(p) * d, d).matrix().norm();
        if (n > best_norm) {
          best_norm = n;
          best_pos = p;
        }
      }
      const Tensor vision = encode_vision(m, out.adv_image);
      int best_id = -1;
      double best_loss = current;
      for (int cand = 0; cand < m.vocab_size(); ++cand) {
        if (cand == Vocabulary::instance().pad_id() || cand == out.adv_tokens[size_t(best_pos)])
          continue;
        std::vector<int> trial = out.adv_tokens;
        trial[size_t(best_pos)] = cand;
        double l = lmis_value(clean_map, map_from(vision, encode_text(m, trial), pos));
        if (l > best_loss) {
          best_loss = l;
          best_id = cand;
        }
      }
      if (best_id >= 0) {
        out.adv_tokens[size_t(best_pos)] = best_id;
        current = best_loss;
      }
      out.trace.push_back(current);
    }
  }
  return out;
}

MismatchedEval mismatched_pair_eval(const PolicyModel& m, Category source, Category target,
                                    int trials, const std::vector<uint64_t>& seeds,
                                    const MisalignBudget& budget) {
  if (source == target)
    throw Error("mismatched evaluation: the source/target diagonal is undefined");
  if (trials < 1) throw Error("mismatched evaluation: trials must be >= 1");
  if (seeds.empty()) throw Error("mismatched evaluation: empty seed list");
  budget.validate();

  const Vocabulary& vocab = Vocabulary::instance();
  std::vector<TaskSpec> src_tasks = task_catalog(source);
  std::vector<TaskSpec> tgt_tasks = task_catalog(target);

  MismatchedEval out;
  int failures = 0, episodes = 0;
  for (size_t ti = 0; ti < tgt_tasks.size(); ++ti) {
    const TaskSpec& task = tgt_tasks[ti];
    for (int t = 0; t < trials; ++t) {
      uint64_t ep_seed = seeds[size_t(t) % seeds.size()];
      Episode ep = reset(task, ep_seed);
      // Bind the source template to a concrete scene so its slots resolve.
      Episode src_ep = reset(src_tasks[(ti + size_t(t)) % src_tasks.size()], ep_seed);
      std::vector<int> clean = vocab.pad_to(vocab.tokenize(src_ep.instruction));

      Tensor frame0 = render(ep.state);
      CrossmodalResult atk = crossmodal_attack(
          m, frame0, clean, budget, mix_seed(ep_seed, "crossmodal-eval", fnv1a(task.id) ^ uint64_t(t)));
      // The pixel perturbation rides every frame as a constant film.
      Tensor delta = atk.adv_image;
      delta.data -= frame0.data;

      while (!ep.done) {
        Tensor frame = render(ep.state);
        frame.data += delta.data;
        for (Eigen::Index i = 0; i < frame.size(); ++i)
          frame[i] = std::clamp(frame[i], 0.0, 1.0);
        step(ep, forward(m, frame, atk.adv_tokens));
      }
      failures += ep.success ? 0 : 1;
      ++episodes;
      out.episodes.push_back(
          {clean, atk.adv_tokens, atk.trace.empty() ? 0.0 : atk.trace.back(), ep.success});
    }
  }
  out.failure_rate = double(failures) / double(episodes);
  return out;
}

std::vector<ResidualRow> residual_similarity_report(
    const PolicyModel& m, const std::vector<CrossmodalEpisode>& episodes) {
  const Vocabulary& vocab = Vocabulary::instance();
  std::vector<ResidualRow> rows;
  rows.reserve(episodes.size());
  for (const CrossmodalEpisode& e : episodes)
    rows.push_back({semantic_similarity(vocab.detokenize(e.clean_tokens),
                                        vocab.detokenize(e.adv_tokens), m),
                    e.l_mis, e.success});
  return rows;
}

}  // namespace gridvla
