#include <doctest.h>

#include <cmath>
#include <vector>

#include "gridvla/crossmodal.hpp"
#include "gridvla/model.hpp"
#include "gridvla/sim.hpp"
#include "gridvla/vocab.hpp"

using namespace gridvla;

namespace {

struct Fixture {
  PolicyModel m = PolicyModel::init(3, Vocabulary::instance().size());
  Episode ep = reset(find_task("object-bowl-color"), 5);
  Tensor img;
  std::vector<int> toks;
  Fixture() {
    img = render(ep.state);
    const Vocabulary& v = Vocabulary::instance();
    toks = v.pad_to(v.tokenize(ep.instruction));
  }
};

int non_pad(const std::vector<int>& t) {
  int n = 0;
  for (int id : t) n += id != 0;
  return n;
}

}  // namespace

TEST_CASE("alignment map matches a hand-rolled cosine grid") {
  Fixture f;
  Tensor map = alignment_map(f.m, f.img, f.toks);
  int m_cols = non_pad(f.toks);
  REQUIRE(map.shape == std::vector<int>{36, m_cols});

  // Independent arithmetic: explicit loops over the encoder outputs.
  Tensor p = encode_vision(f.m, f.img);
  Tensor w = encode_text(f.m, f.toks);
  std::vector<int> pos;
  for (int i = 0; i < int(f.toks.size()); ++i)
    if (f.toks[size_t(i)] != 0) pos.push_back(i);
  for (int i = 0; i < 36; i += 7)
    for (int j = 0; j < m_cols; ++j) {
      double dot = 0, na = 0, nb = 0;
      for (int k = 0; k < kEmbedDim; ++k) {
        double a = p.at(i, k), b = w.at(pos[size_t(j)], k);
        dot += a * b;
        na += a * a;
        nb += b * b;
      }
      CHECK(map.at(i, j) == doctest::Approx(dot / std::sqrt(na * nb)).epsilon(1e-12));
    }

  for (Eigen::Index i = 0; i < map.size(); ++i) {
    CHECK(map[i] >= -1.0);
    CHECK(map[i] <= 1.0);
  }

  // Determinism, and duplicate tokens give identical columns.
  Tensor again = alignment_map(f.m, f.img, f.toks);
  for (Eigen::Index i = 0; i < map.size(); ++i) CHECK(map[i] == again[i]);
  std::vector<int> dup = f.toks;
  dup[0] = 7;
  dup[1] = 7;
  Tensor dmp = alignment_map(f.m, f.img, dup);
  for (int i = 0; i < 36; ++i) CHECK(dmp.at(i, 0) == dmp.at(i, 1));

  CHECK_THROWS_AS(alignment_map(f.m, f.img, std::vector<int>(kSeqLen, 0)), Error&);
}

TEST_CASE("misalignment loss is a mean absolute map gap") {
  Fixture f;
  CHECK(misalignment_loss(f.m, f.img, f.toks, f.img, f.toks) == 0.0);

  // Perturb the image a little and swap one word.
  Tensor adv = f.img;
  for (Eigen::Index i = 0; i < adv.size(); ++i)
    adv[i] = std::clamp(adv[i] + (i % 3 == 0 ? 0.05 : -0.05), 0.0, 1.0);
  std::vector<int> adv_toks = f.toks;
  adv_toks[2] = adv_toks[2] == 5 ? 6 : 5;

  double l = misalignment_loss(f.m, f.img, f.toks, adv, adv_toks);
  CHECK(l > 0.0);
  CHECK(l <= 2.0);
  // Symmetric in the pair, and equal to the hand-computed mean |gap|.
  CHECK(misalignment_loss(f.m, adv, adv_toks, f.img, f.toks) == doctest::Approx(l).epsilon(1e-15));
  Tensor ma = alignment_map(f.m, f.img, f.toks), mb = alignment_map(f.m, adv, adv_toks);
  double acc = 0;
  for (Eigen::Index i = 0; i < ma.size(); ++i) acc += std::fabs(ma[i] - mb[i]);
  CHECK(l == doctest::Approx(acc / double(ma.size())).epsilon(1e-12));

  // Dropping a word breaks the equal-length precondition.
  std::vector<int> shorter = f.toks;
  for (int i = int(shorter.size()) - 1; i >= 0; --i)
    if (shorter[size_t(i)] != 0) {
      shorter[size_t(i)] = 0;
      break;
    }
  CHECK_THROWS_AS(misalignment_loss(f.m, f.img, f.toks, adv, shorter), Error&);
}

TEST_CASE("misalignment attack respects its budget and its acceptance rule") {
  Fixture f;
  MisalignBudget b;
  b.visual_steps = 6;
  b.rounds = 2;
  CrossmodalResult r = crossmodal_attack(f.m, f.img, f.toks, b, 4);

  REQUIRE(int(r.trace.size()) == b.rounds * (b.visual_steps + b.text_swaps));
  for (size_t i = 0; i + 1 < r.trace.size(); ++i) CHECK(r.trace[i] <= r.trace[i + 1] + 1e-12);

  for (Eigen::Index i = 0; i < r.adv_image.size(); ++i) {
    CHECK(r.adv_image[i] >= 0.0);
    CHECK(r.adv_image[i] <= 1.0);
    CHECK(std::fabs(r.adv_image[i] - f.img[i]) <= b.eps_v + 1e-12);
  }
  REQUIRE(r.adv_tokens.size() == f.toks.size());
  for (size_t i = 0; i < r.adv_tokens.size(); ++i) {
    CHECK((r.adv_tokens[i] == 0) == (f.toks[i] == 0));  // PAD footprint intact
  }
  CHECK(r.trace.back() ==
        doctest::Approx(misalignment_loss(f.m, f.img, f.toks, r.adv_image, r.adv_tokens))
            .epsilon(1e-12));

  CrossmodalResult r2 = crossmodal_attack(f.m, f.img, f.toks, b, 4);
  CHECK(r2.adv_tokens == r.adv_tokens);
  for (Eigen::Index i = 0; i < r.adv_image.size(); ++i) CHECK(r2.adv_image[i] == r.adv_image[i]);

  // A vanishing pixel budget and no useful swaps keep the loss near zero.
  MisalignBudget tiny;
  tiny.eps_v = 1e-9;
  tiny.visual_steps = 2;
  tiny.rounds = 1;
  std::vector<int> single = Vocabulary::instance().pad_to({5});
  CrossmodalResult small = crossmodal_attack(f.m, f.img, single, tiny, 0);
  // Token swaps may still move the loss; the image part cannot.
  for (Eigen::Index i = 0; i < small.adv_image.size(); ++i)
    CHECK(std::fabs(small.adv_image[i] - f.img[i]) <= 1e-9 + 1e-15);

  MisalignBudget bad;
  bad.eps_v = 0.0;
  CHECK_THROWS_AS(crossmodal_attack(f.m, f.img, f.toks, bad, 0), Error&);
  bad.eps_v = 0.06;
  bad.rounds = 0;
  CHECK_THROWS_AS(crossmodal_attack(f.m, f.img, f.toks, bad, 0), Error&);
}

TEST_CASE("optimized misalignment beats random same-budget perturbations") {
  Fixture f;
  MisalignBudget b;
  b.visual_steps = 8;
  b.rounds = 2;
  CrossmodalResult r = crossmodal_attack(f.m, f.img, f.toks, b, 0);

  double random_mean = 0;
  const int kRandomTrials = 10;
  for (uint64_t s = 0; s < kRandomTrials; ++s) {
    Rng rng(mix_seed(s, "crossmodal-random-baseline"));
    Tensor noisy = f.img;
    for (Eigen::Index i = 0; i < noisy.size(); ++i)
      noisy[i] = std::clamp(noisy[i] + rng.uniform(-b.eps_v, b.eps_v), 0.0, 1.0);
    random_mean += misalignment_loss(f.m, f.img, f.toks, noisy, f.toks);
  }
  random_mean /= kRandomTrials;
  CHECK(r.trace.back() > random_mean);
}

TEST_CASE("mismatched grid runs source instructions on target scenes") {
  PolicyModel m = PolicyModel::init(1, Vocabulary::instance().size());
  MisalignBudget b;
  b.visual_steps = 1;
  b.text_swaps = 1;
  b.rounds = 1;

  MismatchedEval ev = mismatched_pair_eval(m, Category::Spatial, Category::Object, 1, {0}, b);
  CHECK(ev.failure_rate >= 0.0);
  CHECK(ev.failure_rate <= 1.0);
  CHECK(ev.episodes.size() == task_catalog(Category::Object).size());
  for (const auto& e : ev.episodes) {
    CHECK(non_pad(e.clean_tokens) == non_pad(e.adv_tokens));
    CHECK(e.l_mis >= 0.0);
  }

  CHECK_THROWS_AS(mismatched_pair_eval(m, Category::Goal, Category::Goal, 1, {0}, b), Error&);
  CHECK_THROWS_AS(mismatched_pair_eval(m, Category::Goal, Category::Long, 0, {0}, b), Error&);
  CHECK_THROWS_AS(mismatched_pair_eval(m, Category::Goal, Category::Long, 1, {}, b), Error&);
}

TEST_CASE("residual similarity report joins outcomes with similarities") {
  PolicyModel m = PolicyModel::init(2, Vocabulary::instance().size());
  CHECK(residual_similarity_report(m, {}).empty());

  const Vocabulary& v = Vocabulary::instance();
  std::vector<int> a = v.pad_to(v.tokenize("pick up the red bowl"));
  std::vector<int> c = v.pad_to(v.tokenize("open the blue drawer"));
  std::vector<CrossmodalEpisode> eps = {{a, a, 0.0, true}, {a, c, 0.7, false}};
  auto rows = residual_similarity_report(m, eps);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].similarity == doctest::Approx(1.0));  // unchanged instruction
  CHECK(rows[0].l_mis == 0.0);
  CHECK(rows[0].success);
  CHECK(rows[1].similarity < 1.0);
  CHECK_FALSE(rows[1].success);
}
