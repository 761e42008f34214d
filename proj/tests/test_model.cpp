#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gridvla/model.hpp"
#include "gridvla/rng.hpp"
#include "gridvla/sim.hpp"
#include "gridvla/vocab.hpp"

using namespace gridvla;

namespace {

Tensor test_image() {
  Episode ep = reset(find_task("object-bowl-color"), 3);
  return render(ep.state);
}

std::vector<int> test_tokens() {
  const auto& v = Vocabulary::instance();
  Episode ep = reset(find_task("object-bowl-color"), 3);
  return v.pad_to(v.tokenize(ep.instruction));
}

}  // namespace

TEST_CASE("patch extraction shape and locality") {
  Tensor img = test_image();
  Tensor patches = extract_patches(img);
  CHECK(patches.shape == std::vector<int>{kPatchCount, kPatchDim});

  // A pixel belongs to exactly one patch row.
  Tensor bumped = img;
  bumped.at(0, 0, 1) += 0.25;
  Tensor p2 = extract_patches(bumped);
  for (int r = 0; r < kPatchCount; ++r) {
    bool same = true;
    for (int c = 0; c < kPatchDim; ++c)
      if (p2.at(r, c) != patches.at(r, c)) same = false;
    CHECK(same == (r != 0));
  }

  Tensor corner = img;
  corner.at(47, 47, 0) += 0.25;
  Tensor p3 = extract_patches(corner);
  for (int c = 0; c < kPatchDim; ++c)
    if (p3.at(kPatchCount - 1, c) != patches.at(kPatchCount - 1, c))
      CHECK(p3.at(kPatchCount - 1, c) == img.at(47, 47, 0) + 0.25);
}

TEST_CASE("vision encoder on an all-zero image yields the bias") {
  PolicyModel m = PolicyModel::init(11, Vocabulary::instance().size());
  Tensor z = Tensor::zeros({kImageSize, kImageSize, 3});
  Tensor emb = encode_vision(m, z);
  REQUIRE(emb.shape == std::vector<int>{kPatchCount, kEmbedDim});
  for (int r = 0; r < kPatchCount; ++r)
    for (int c = 0; c < kEmbedDim; ++c) CHECK(emb.at(r, c) == m.vision_b.at(0, c));
}

TEST_CASE("text encoder lookup semantics") {
  const auto& v = Vocabulary::instance();
  PolicyModel m = PolicyModel::init(12, v.size());

  std::vector<int> ids(kSeqLen, v.pad_id());
  ids[0] = 5;
  ids[1] = 9;
  ids[2] = 5;  // repeated token
  Tensor emb = encode_text(m, ids);
  REQUIRE(emb.shape == std::vector<int>{kSeqLen, kEmbedDim});
  for (int c = 0; c < kEmbedDim; ++c) {
    CHECK(emb.at(0, c) == emb.at(2, c));          // same token, same row
    CHECK(emb.at(0, c) == m.token_table.at(5, c));  // lookup is a row copy
    CHECK(emb.at(3, c) == m.token_table.at(v.pad_id(), c));
  }

  // All-PAD input: zero effective tokens, still a finite action.
  TapeT<double> tape;
  std::vector<int> pads(kSeqLen, v.pad_id());
  ForwardVars fv = build_forward(tape, m, test_image(), pads);
  CHECK(fv.effective_tokens == 0);
  const Tensor& a = tape.value(fv.action);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(std::isfinite(a[i]));
}

TEST_CASE("lookup gradient counts occurrences") {
  PolicyModel m = PolicyModel::init(13, Vocabulary::instance().size());
  TapeT<double> tape;
  Var table = tape.leaf(m.token_table);
  Var rows = lookup(table, {5, 5, 3});
  Var s = sum(rows);
  tape.backward(s);
  const Tensor& g = tape.grad(table);
  for (int c = 0; c < kEmbedDim; ++c) {
    CHECK(g.at(5, c) == 2.0);
    CHECK(g.at(3, c) == 1.0);
    CHECK(g.at(0, c) == 0.0);
  }
}

TEST_CASE("forward is deterministic and both image paths agree bitwise") {
  PolicyModel m = PolicyModel::init(1, Vocabulary::instance().size());
  Tensor img = test_image();
  std::vector<int> toks = test_tokens();

  Tensor a1 = forward(m, img, toks);
  Tensor a2 = forward(m, img, toks);
  REQUIRE(a1.shape == std::vector<int>{kActionDim});
  for (Eigen::Index i = 0; i < a1.size(); ++i) CHECK(a1[i] == a2[i]);

  TapeT<double> tape;
  ForwardVars fv = build_forward(tape, m, img, toks, /*differentiable_image=*/true);
  const Tensor& a3 = tape.value(fv.action);
  for (Eigen::Index i = 0; i < a1.size(); ++i) CHECK(a1[i] == a3[i]);

  // Translations live in (-0.5, 0.5) after scaling, the rest in (-1, 1).
  for (int i = 0; i < 3; ++i) CHECK(std::fabs(a1[i]) < 0.5);
  for (int i = 3; i < kActionDim; ++i) CHECK(std::fabs(a1[i]) < 1.0);
}

TEST_CASE("permuting PAD positions never changes the action") {
  const auto& v = Vocabulary::instance();
  PolicyModel m = PolicyModel::init(2, v.size());
  Tensor img = test_image();

  std::vector<int> tail(kSeqLen, v.pad_id());
  tail[0] = 7;
  tail[1] = 21;
  std::vector<int> spread(kSeqLen, v.pad_id());
  spread[3] = 7;
  spread[9] = 21;

  Tensor a = forward(m, img, tail);
  Tensor b = forward(m, img, spread);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("attack loss arithmetic") {
  Tensor zeros = Tensor::zeros({kActionDim});
  Tensor ones = Tensor::zeros({kActionDim});
  for (int i = 0; i < kActionDim; ++i) ones[i] = 1.0;

  CHECK(attack_loss(ones, ones) == 0.0);
  CHECK(attack_loss(zeros, ones) == doctest::Approx(7.0));
  Tensor x = zeros, y = ones;
  x[2] = 0.3;
  y[5] = -0.9;
  CHECK(attack_loss(x, y) == doctest::Approx(attack_loss(y, x)));

  // Tape version matches the numeric one and its gradient is 2(pred - ref).
  TapeT<double> tape;
  Var pred = tape.leaf(y);
  Var l = attack_loss_on(tape, pred, x);
  CHECK(tape.value(l).value() == doctest::Approx(attack_loss(x, y)));
  tape.backward(l);
  const Tensor& g = tape.grad(pred);
  for (int i = 0; i < kActionDim; ++i)
    CHECK(g[i] == doctest::Approx(2.0 * (y[i] - x[i])));
}

TEST_CASE("end-to-end gradients pass finite differences") {
  const auto& v = Vocabulary::instance();
  PolicyModel m = PolicyModel::init(3, v.size());
  Tensor img = test_image();
  std::vector<int> toks = test_tokens();
  Tensor ref = Tensor::zeros({kActionDim});
  for (int i = 0; i < kActionDim; ++i) ref[i] = 0.1 * (i - 3);

  TapeT<double> tape;
  ForwardVars fv = build_forward(tape, m, img, toks, /*differentiable_image=*/true);
  Var loss = attack_loss_on(tape, fv.action, ref);
  tape.backward(loss);

  auto value_at = [&](const PolicyModel& model, const Tensor& image) {
    return attack_loss(ref, forward(model, image, toks));
  };
  const double h = 1e-5;
  auto rel = [](double a, double b) {
    return std::fabs(a - b) / (std::fabs(a) + std::fabs(b) + 1e-12);
  };

  // Pixels: spot-check a deterministic sample of coordinates.
  const Tensor& gimg = tape.grad(fv.image);
  Rng pick(77);
  for (int k = 0; k < 24; ++k) {
    Eigen::Index i = Eigen::Index(pick.next_below(uint64_t(img.size())));
    Tensor up = img, dn = img;
    up[i] += h;
    dn[i] -= h;
    double central = (value_at(m, up) - value_at(m, dn)) / (2.0 * h);
    if (std::fabs(gimg[i]) + std::fabs(central) < 1e-10) continue;
    CHECK(rel(gimg[i], central) < 1e-4);
  }

  // Weights: a few entries in every parameter tensor.
  auto names = m.named_tensors();
  for (size_t wi = 0; wi < names.size(); ++wi) {
    const Tensor& g = tape.grad(fv.weight_vars[wi]);
    for (int k = 0; k < 4; ++k) {
      Eigen::Index i = Eigen::Index(pick.next_below(uint64_t(names[wi].second->size())));
      PolicyModel up = m, dn = m;
      (*up.named_tensors()[wi].second)[i] += h;
      (*dn.named_tensors()[wi].second)[i] -= h;
      double central = (value_at(up, img) - value_at(dn, img)) / (2.0 * h);
      bool ok = rel(g[i], central) < 1e-4 || std::fabs(g[i] - central) < 1e-7;
      CHECK(ok);  // relative bound with an absolute floor for tiny entries
    }
  }
}

TEST_CASE("behavior cloning is reproducible and learns") {
  std::vector<DemoStep> demos = collect_demos(0, 2);
  REQUIRE(demos.size() > 100);

  TrainConfig cfg;
  cfg.epochs = 6;
  TrainResult r1 = train_bc(demos, cfg);
  TrainResult r2 = train_bc(demos, cfg);
  CHECK(r1.model.weight_hash() == r2.model.weight_hash());

  REQUIRE(r1.loss_trace.size() == 6);
  for (int e = 0; e + 1 < 6; ++e) CHECK(r1.loss_trace[e + 1] < r1.loss_trace[e]);

  CHECK_THROWS_AS(train_bc({}, cfg), Error&);
}

TEST_CASE("checkpoints round-trip and reject corruption") {
  PolicyModel m = PolicyModel::init(21, Vocabulary::instance().size());
  TrainConfig cfg;
  cfg.seed = 21;
  cfg.epochs = 17;

  std::string dir = "ckpt-test";
  save_checkpoint(dir, m, cfg);
  Checkpoint back = load_checkpoint(dir);
  CHECK(back.model.weight_hash() == m.weight_hash());
  CHECK(back.config.seed == 21);
  CHECK(back.config.epochs == 17);
  CHECK(back.config.learning_rate == cfg.learning_rate);

  CHECK_THROWS_AS(load_checkpoint("no-such-dir"), Error&);

  {
    std::ofstream bad(dir + "/manifest.json");
    bad << "{ not json";
  }
  CHECK_THROWS_AS(load_checkpoint(dir), Error&);
  std::filesystem::remove_all(dir);
}
