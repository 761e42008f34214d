#include "gridvla/model.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "gridvla/rng.hpp"
#include "gridvla/sim.hpp"
#include "gridvla/vocab.hpp"

namespace gridvla {

namespace {

Tensor init_uniform(std::vector<int> shape, Rng& rng) {
  return Tensor::random_uniform(std::move(shape), -0.08, 0.08, rng);
}

// Balanced pairwise reduction keeps the concat tree shallow.
Var concat_all(std::vector<Var> parts) {
  while (parts.size() > 1) {
    std::vector<Var> next;
    for (size_t i = 0; i + 1 < parts.size(); i += 2)
      next.push_back(concat(parts[i], parts[i + 1]));
    if (parts.size() % 2) next.push_back(parts.back());
    parts = std::move(next);
  }
  return parts.front();
}

void check_image_shape(const Tensor& image) {
  if (image.shape != std::vector<int>{kImageSize, kImageSize, 3})
    throw Error("vision encoder: expected a 48x48x3 image, got " + shape_str(image.shape));
}

void check_token_ids(const std::vector<int>& ids, int vocab_size) {
  if (int(ids.size()) != kSeqLen)
    throw Error("text encoder: expected exactly " + std::to_string(kSeqLen) +
                " padded token ids, got " + std::to_string(ids.size()));
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw Error("text encoder: token id " + std::to_string(id) + " outside vocabulary of " +
                  std::to_string(vocab_size));
}

// Everything downstream of the patch embeddings. fv.weight_vars must already
// be populated in named_tensors() order and fv.patch_embeddings set; split
// out so the trainer can run the vision matmul once for a whole batch and
// carve per-sample slices from it.
void finish_from_embeddings(Tape& tape, ForwardVars& fv, const std::vector<int>& padded_ids) {
  Var table = fv.weight_vars[2];
  Var wq = fv.weight_vars[3], wk = fv.weight_vars[4], wv = fv.weight_vars[5];
  Var w1 = fv.weight_vars[6], b1 = fv.weight_vars[7];
  Var w2 = fv.weight_vars[8], b2 = fv.weight_vars[9];

  fv.token_embeddings = lookup(table, padded_ids);  // {16,32}

  Var q = matmul(fv.token_embeddings, wq);
  Var k = matmul(fv.patch_embeddings, wk);
  Var v = matmul(fv.patch_embeddings, wv);
  Var scores = scale(matmul(q, k, /*transpose_b=*/true), 1.0 / std::sqrt(double(kEmbedDim)));
  fv.attn_weights = softmax(scores);  // {16,36}
  // Residual around the attention head: tokens keep their own embedding and
  // gain what they attended to. Without it the pooled text code collapses to
  // a token-independent mean at the (uniform-attention) init and the
  // instruction never reaches the action head.
  Var attended = add(matmul(fv.attn_weights, v), fv.token_embeddings);  // {16,32}

  const int pad = Vocabulary::instance().pad_id();
  Tensor mask = Tensor::zeros({1, kSeqLen});
  int effective = 0;
  for (int i = 0; i < kSeqLen; ++i)
    if (padded_ids[size_t(i)] != pad) {
      mask.at(0, i) = 1.0;
      ++effective;
    }
  fv.effective_tokens = effective;

  // Masked mean over non-PAD tokens (zero vector when everything is PAD),
  // plain mean over patches, concatenated into the 64-dim fused code.
  Var text_pool = scale(matmul(tape.leaf(mask), attended), effective > 0 ? 1.0 / effective : 0.0);
  Var ones = tape.leaf(Tensor::full({1, kPatchCount}, 1.0));
  Var patch_pool = scale(matmul(ones, fv.patch_embeddings), 1.0 / kPatchCount);
  Var fused = reshape(concat(text_pool, patch_pool), {1, kFusedDim});

  Var h = tanh(add(matmul(fused, w1), b1));
  Var out = tanh(add(matmul(h, w2), b2));
  Tensor scaling = Tensor::from({1, kActionDim}, {0.5, 0.5, 0.5, 1, 1, 1, 1});
  fv.action = reshape(mul(out, tape.leaf(scaling)), {kActionDim});
}

// Both forward paths and the trainer funnel through finish_from_embeddings,
// so their values are bit-identical.
void finish_forward(Tape& tape, ForwardVars& fv, Var patches,
                    const std::vector<int>& padded_ids) {
  fv.patch_embeddings = add(matmul(patches, fv.weight_vars[0]), fv.weight_vars[1]);  // {36,32}
  finish_from_embeddings(tape, fv, padded_ids);
}

ForwardVars forward_from_patches(Tape& tape, const PolicyModel& m, const Tensor& patches,
                                 const std::vector<int>& padded_ids) {
  ForwardVars fv;
  for (const auto& [name, t] : m.named_tensors()) fv.weight_vars.push_back(tape.leaf(*t));
  finish_forward(tape, fv, tape.leaf(patches), padded_ids);
  return fv;
}

}  // namespace

PolicyModel PolicyModel::init(uint64_t seed, int vocab_size) {
  Rng rng(mix_seed(seed, "model-init", 0));
  PolicyModel m;
  m.vision_w = init_uniform({kPatchDim, kEmbedDim}, rng);
  m.vision_b = init_uniform({1, kEmbedDim}, rng);
  m.token_table = init_uniform({vocab_size, kEmbedDim}, rng);
  m.attn_q = init_uniform({kEmbedDim, kEmbedDim}, rng);
  m.attn_k = init_uniform({kEmbedDim, kEmbedDim}, rng);
  m.attn_v = init_uniform({kEmbedDim, kEmbedDim}, rng);
  m.mlp_w1 = init_uniform({kFusedDim, kFusedDim}, rng);
  m.mlp_b1 = init_uniform({1, kFusedDim}, rng);
  m.mlp_w2 = init_uniform({kFusedDim, kActionDim}, rng);
  m.mlp_b2 = init_uniform({1, kActionDim}, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor*>> PolicyModel::named_tensors() {
  return {{"vision_w", &vision_w}, {"vision_b", &vision_b}, {"token_table", &token_table},
          {"attn_q", &attn_q},     {"attn_k", &attn_k},     {"attn_v", &attn_v},
          {"mlp_w1", &mlp_w1},     {"mlp_b1", &mlp_b1},     {"mlp_w2", &mlp_w2},
          {"mlp_b2", &mlp_b2}};
}

std::vector<std::pair<std::string, const Tensor*>> PolicyModel::named_tensors() const {
  auto mut = const_cast<PolicyModel*>(this)->named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

uint64_t PolicyModel::weight_hash() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named_tensors()) {
    h = fnv1a(name, h);
    for (Eigen::Index i = 0; i < t->size(); ++i) {
      unsigned char b[8];
      uint64_t bits;
      double v = t->data[i];
      std::memcpy(&bits, &v, 8);
      for (int k = 0; k < 8; ++k) b[k] = (bits >> (8 * k)) & 0xff;
      h = fnv1a(b, 8, h);
    }
  }
  return h;
}

Tensor extract_patches(const Tensor& image) {
  check_image_shape(image);
  Tensor out = Tensor::zeros({kPatchCount, kPatchDim});
  for (int pr = 0; pr < kPatchGrid; ++pr)
    for (int pc = 0; pc < kPatchGrid; ++pc)
      for (int r = 0; r < kPatchPixels; ++r)
        for (int c = 0; c < kPatchPixels; ++c)
          for (int ch = 0; ch < 3; ++ch)
            out.at(pr * kPatchGrid + pc, (r * kPatchPixels + c) * 3 + ch) =
                image.at(pr * kPatchPixels + r, pc * kPatchPixels + c, ch);
  return out;
}

ForwardVars build_forward(Tape& tape, const PolicyModel& m, const Tensor& image,
                          const std::vector<int>& padded_ids, bool differentiable_image) {
  check_image_shape(image);
  check_token_ids(padded_ids, m.vocab_size());

  if (!differentiable_image)
    return forward_from_patches(tape, m, extract_patches(image), padded_ids);

  ForwardVars fv;
  for (const auto& [name, t] : m.named_tensors()) fv.weight_vars.push_back(tape.leaf(*t));
  fv.image = tape.leaf(image);
  // View rows as {48, 144}, carve six 8-row bands, then 24-column patch
  // strips, each flattened to a {1, 192} row — the extract_patches layout.
  Var rows = reshape(fv.image, {kImageSize, kImageSize * 3});
  std::vector<Var> parts;
  parts.reserve(kPatchCount);
  for (int pr = 0; pr < kPatchGrid; ++pr) {
    Var band = slice(rows, 0, pr * kPatchPixels, (pr + 1) * kPatchPixels);
    for (int pc = 0; pc < kPatchGrid; ++pc) {
      Var strip = slice(band, 1, pc * kPatchPixels * 3, (pc + 1) * kPatchPixels * 3);
      parts.push_back(reshape(strip, {1, kPatchDim}));
    }
  }
  finish_forward(tape, fv, concat_all(std::move(parts)), padded_ids);
  return fv;
}

Tensor forward(const PolicyModel& m, const Tensor& image, const std::vector<int>& padded_ids) {
  Tape tape;
  ForwardVars fv = build_forward(tape, m, image, padded_ids);
  return tape.value(fv.action);
}

Tensor encode_vision(const PolicyModel& m, const Tensor& image) {
  Tape tape;
  Var patches = tape.leaf(extract_patches(image));
  Var p = add(matmul(patches, tape.leaf(m.vision_w)), tape.leaf(m.vision_b));
  return tape.value(p);
}

Tensor encode_text(const PolicyModel& m, const std::vector<int>& padded_ids) {
  check_token_ids(padded_ids, m.vocab_size());
  Tape tape;
  return tape.value(lookup(tape.leaf(m.token_table), padded_ids));
}

double attack_loss(const Tensor& reference, const Tensor& predicted) {
  if (reference.shape != std::vector<int>{kActionDim} ||
      predicted.shape != std::vector<int>{kActionDim})
    throw Error("attack loss: expected two 7-vectors, got " + shape_str(reference.shape) +
                " and " + shape_str(predicted.shape));
  return ((reference.data - predicted.data) * (reference.data - predicted.data)).sum();
}

Var attack_loss_on(Tape& tape, Var predicted, const Tensor& reference) {
  return squared_norm(sub(predicted, tape.leaf(reference)));
}

std::vector<DemoStep> collect_demos(uint64_t demo_seed_base, int per_task) {
  // Generalization across scene layouts is bounded by how many distinct
  // layouts the corpus shows, not by how densely each one is sampled — so
  // spend the sample budget wide: record every third expert step (the phase
  // rotating per episode so all of them appear) plus a few scattered states.
  constexpr int kNaturalStride = 3;
  constexpr int kScattersPerEpisode = 5;
  const Vocabulary& vocab = Vocabulary::instance();
  // Patch index under the glyph center of whatever the expert pursues now;
  // the attention head is trained to put its mass there.
  auto focus_patch = [](const Episode& e) {
    Vec2 f = expert_focus(e);
    int pc = std::clamp(int(std::lround(7.0 * f.x - 1.0)), 0, kImageSize - 1) / kPatchPixels;
    int pr = std::clamp(int(std::lround(7.0 * f.y - 1.0)), 0, kImageSize - 1) / kPatchPixels;
    return pr * kPatchGrid + pc;
  };
  std::vector<DemoStep> demos;
  uint64_t episode_index = 0;
  for (const TaskSpec& task : full_catalog()) {
    for (int i = 0; i < per_task; ++i, ++episode_index) {
      Episode ep = reset(task, demo_seed_base + uint64_t(i));
      std::vector<int> tokens = vocab.pad_to(vocab.tokenize(ep.instruction));
      std::vector<WorldState> visited;
      int t = 0;
      while (!ep.done) {
        visited.push_back(ep.state);
        Tensor action = expert_action(ep);
        if ((t + int(episode_index)) % kNaturalStride == 0)
          demos.push_back({render(ep.state), tokens, action, focus_patch(ep)});
        step(ep, action);
        ++t;
      }
      // On-path states alone leave a cloned policy helpless the moment it
      // drifts off the demonstrated ridge. Re-seed the expert from scattered
      // claw positions — empty-handed, mid-carry, and after a mid-path drop —
      // and record the corrective step, so cloning learns a servo field over
      // the whole arena rather than a groove along the demonstrations.
      Rng aug(mix_seed(demo_seed_base, "demo-scatter", episode_index));
      for (int k = 0; k < kScattersPerEpisode; ++k) {
        Episode probe = ep;
        probe.state = visited[size_t(aug.next_below(visited.size()))];
        WorldState& s = probe.state;
        s.gripper = {aug.uniform(0.5, 6.5), aug.uniform(0.5, 6.5)};
        if (SceneObject* held = s.holding >= 0 ? s.find(s.holding) : nullptr) {
          if (aug.next_below(3) == 0) {
            // Fumble: the load ends up on a cell floor behind the claw.
            held->position = {std::floor(held->position.x) + 0.5,
                              std::floor(held->position.y) + 0.5};
            s.holding = -1;
          } else {
            held->position = {s.gripper.x, s.gripper.y};
          }
        }
        demos.push_back({render(s), tokens, expert_action(probe), focus_patch(probe)});
      }
    }
  }
  return demos;
}

TrainResult train_bc(const std::vector<DemoStep>& demos, const TrainConfig& cfg) {
  if (demos.empty()) throw Error("train: empty demonstration set");
  if (cfg.batch_size <= 0) throw Error("train: batch_size must be positive");
  const int vocab_size = Vocabulary::instance().size();

  PolicyModel model = PolicyModel::init(cfg.seed, vocab_size);
  auto tensors = model.named_tensors();
  const size_t nw = tensors.size();

  // Patch matrices are constant per demo; flatten once up front.
  std::vector<Tensor> patches;
  patches.reserve(demos.size());
  for (const DemoStep& d : demos) patches.push_back(extract_patches(d.image));

  // Feature warm start: gradient descent from random features reliably
  // stalls before it discovers which 32 projections of the pooled patch
  // code the tasks need, so compute them in closed form. Per instruction
  // group, ridge-fit the pooled patch vector to (dx, dy, grip); the top
  // singular directions of the stacked solutions span every group's linear
  // policy, and become the vision projection's starting point. Entirely
  // deterministic, and every weight remains trainable afterwards.
  {
    std::map<std::vector<int>, std::vector<size_t>> groups;
    for (size_t i = 0; i < demos.size(); ++i) groups[demos[i].tokens].push_back(i);
    std::vector<Eigen::VectorXd> solution_cols;
    for (const auto& [toks, rows] : groups) {
      if (rows.size() < 16) continue;
      Eigen::MatrixXd x(rows.size(), kPatchDim + 1);
      Eigen::MatrixXd y(rows.size(), 3);
      for (size_t r = 0; r < rows.size(); ++r) {
        const Tensor& p = patches[rows[r]];
        for (int d = 0; d < kPatchDim; ++d) {
          double s = 0.0;
          for (int pi = 0; pi < kPatchCount; ++pi) s += p.at(pi, d);
          x(Eigen::Index(r), d) = s / kPatchCount;
        }
        x(Eigen::Index(r), kPatchDim) = 1.0;
        const Tensor& a = demos[rows[r]].action;
        y(Eigen::Index(r), 0) = a[0];
        y(Eigen::Index(r), 1) = a[1];
        y(Eigen::Index(r), 2) = a[6];
      }
      Eigen::MatrixXd gram = x.transpose() * x;
      gram.diagonal().array() += 1e-6 * double(rows.size());
      Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
      for (int c = 0; c < 3; ++c) solution_cols.push_back(w.col(c).head(kPatchDim));
    }
    if (!solution_cols.empty()) {
      Eigen::MatrixXd stacked(kPatchDim, Eigen::Index(solution_cols.size()));
      for (size_t c = 0; c < solution_cols.size(); ++c)
        stacked.col(Eigen::Index(c)) = solution_cols[c];
      Eigen::BDCSVD<Eigen::MatrixXd> svd(stacked, Eigen::ComputeThinU);
      int keep = int(std::min<Eigen::Index>(kEmbedDim, svd.nonzeroSingularValues()));
      for (int c = 0; c < keep; ++c)
        for (int d = 0; d < kPatchDim; ++d)
          model.vision_w.at(d, c) = 0.1 * svd.matrixU()(d, c);
    }
  }

  // Adaptive per-coordinate steps (momentum plus RMS normalization with bias
  // correction). Plain gradient steps stall an order of magnitude short on
  // this loss surface; everything here is seeded and bit-reproducible.
  std::vector<Tensor> mom, vel;
  for (auto& [name, t] : tensors) {
    mom.push_back(Tensor::zeros(t->shape));
    vel.push_back(Tensor::zeros(t->shape));
  }
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  constexpr double kWeightDecay = 1e-4;  // decoupled, damps layout memorization
  constexpr double kAttnGuide = 0.25;    // weight of the attention-shaping term

  Rng shuffle_rng(mix_seed(cfg.seed, "bc-shuffle", 0));
  std::vector<size_t> order(demos.size());
  std::iota(order.begin(), order.end(), size_t(0));

  long step_count = 0;
  std::vector<double> trace;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[size_t(shuffle_rng.next_below(i))]);

    // Cosine decay from the configured rate down to a tenth of it.
    double ramp = cfg.epochs > 1 ? 0.5 * (1.0 + std::cos(M_PI * double(epoch) /
                                                         double(cfg.epochs - 1)))
                                 : 1.0;
    double lr = cfg.learning_rate * (0.1 + 0.9 * ramp);

    double epoch_loss = 0.0;
    for (size_t start = 0; start < order.size(); start += size_t(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + size_t(cfg.batch_size));
      size_t bsz = end - start;

      // One tape for the whole batch: a single vision matmul over the
      // stacked patch rows, per-sample slices downstream, one backward pass.
      Tensor block = Tensor::zeros({int(bsz) * kPatchCount, kPatchDim});
      for (size_t bi = start; bi < end; ++bi)
        block.data.segment(Eigen::Index(bi - start) * kPatchCount * kPatchDim,
                           kPatchCount * kPatchDim) = patches[order[bi]].data;

      Tape tape;
      std::vector<Var> weight_vars;
      weight_vars.reserve(nw);
      for (auto& [name, t] : tensors) weight_vars.push_back(tape.leaf(*t));
      Var embed_all = add(matmul(tape.leaf(block), weight_vars[0]), weight_vars[1]);

      Var total{};
      for (size_t bi = start; bi < end; ++bi) {
        const DemoStep& d = demos[order[bi]];
        ForwardVars fv;
        fv.weight_vars = weight_vars;
        int row = int(bi - start) * kPatchCount;
        fv.patch_embeddings = slice(embed_all, 0, row, row + kPatchCount);
        finish_from_embeddings(tape, fv, d.tokens);
        Var sample_loss = scale(squared_norm(sub(fv.action, tape.leaf(d.action))),
                                1.0 / double(kActionDim));
        // Attention guidance: the instruction tokens, pooled, should look at
        // the patch the expert is pursuing. Binding "which words pick which
        // patch" through action error alone is the slowest part of training;
        // this shaping term teaches it directly and fades as attention
        // sharpens onto the right patches.
        if (d.focus_patch >= 0 && fv.effective_tokens > 0) {
          Tensor mask = Tensor::zeros({1, kSeqLen});
          const int pad = 0;
          for (int i = 0; i < kSeqLen; ++i)
            if (d.tokens[size_t(i)] != pad) mask.at(0, i) = 1.0;
          Tensor onehot = Tensor::zeros({1, kPatchCount});
          onehot.at(0, d.focus_patch) = 1.0;
          Var pooled = scale(matmul(tape.leaf(mask), fv.attn_weights),
                             1.0 / double(fv.effective_tokens));
          Var aux = squared_norm(sub(pooled, tape.leaf(onehot)));
          sample_loss = add(sample_loss, scale(aux, kAttnGuide));
        }
        total = bi == start ? sample_loss : add(total, sample_loss);
      }
      // Per-component action MSE plus the attention-guidance term, averaged
      // over the batch.
      Var loss = scale(total, 1.0 / double(bsz));
      tape.backward(loss);
      epoch_loss += tape.value(loss).value() * double(bsz);

      ++step_count;
      double bias1 = 1.0 - std::pow(kBeta1, double(step_count));
      double bias2 = 1.0 - std::pow(kBeta2, double(step_count));
      for (size_t wi = 0; wi < nw; ++wi) {
        const auto& g = tape.grad(weight_vars[wi]).data;
        mom[wi].data = kBeta1 * mom[wi].data + (1.0 - kBeta1) * g;
        vel[wi].data = kBeta2 * vel[wi].data + (1.0 - kBeta2) * g * g;
        tensors[wi].second->data -=
            lr * ((mom[wi].data / bias1) / ((vel[wi].data / bias2).sqrt() + kEps) +
                  kWeightDecay * tensors[wi].second->data);
      }
    }
    trace.push_back(epoch_loss / double(demos.size()));
  }
  return {std::move(model), std::move(trace)};
}

// ---- checkpoints ---------------------------------------------------------

void write_tensor_blob(const std::string& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    double v = t.data[i];
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = (bits >> (8 * k)) & 0xff;
    f.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!f) throw Error("checkpoint: write to '" + path + "' failed");
}

Tensor read_tensor_blob(const std::string& path, const std::vector<int>& shape) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("checkpoint: cannot open '" + path + "'");
  Tensor t = Tensor::zeros(shape);
  for (Eigen::Index i = 0; i < t.size(); ++i) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw Error("checkpoint: truncated blob '" + path + "'");
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= uint64_t(b[k]) << (8 * k);
    double v;
    std::memcpy(&v, &bits, 8);
    t.data[i] = v;
  }
  char extra;
  if (f.read(&extra, 1))
    throw Error("checkpoint: blob '" + path + "' longer than manifest shape");
  return t;
}

void save_checkpoint(const std::string& dir, const PolicyModel& m, const TrainConfig& cfg) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["seed"] = cfg.seed;
  manifest["training"] = {{"learning_rate", cfg.learning_rate},
                          {"epochs", cfg.epochs},
                          {"batch_size", cfg.batch_size},
                          {"demos_per_task", cfg.demos_per_task},
                          {"demo_seed_base", cfg.demo_seed_base}};
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& [name, t] : m.named_tensors()) {
    tensors.push_back({{"name", name}, {"shape", t->shape}, {"file", name + ".bin"}});
    write_tensor_blob(dir + "/" + name + ".bin", *t);
  }
  manifest["tensors"] = tensors;
  std::ofstream f(dir + "/manifest.json");
  if (!f) throw Error("checkpoint: cannot open '" + dir + "/manifest.json' for writing");
  f << manifest.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw Error("checkpoint: missing manifest in '" + dir + "'");
  nlohmann::json manifest;
  try {
    f >> manifest;
  } catch (const std::exception& e) {
    throw Error("checkpoint: malformed manifest in '" + dir + "': " + e.what());
  }

  Checkpoint cp;
  cp.config.seed = manifest.at("seed").get<uint64_t>();
  const auto& tr = manifest.at("training");
  cp.config.learning_rate = tr.at("learning_rate").get<double>();
  cp.config.epochs = tr.at("epochs").get<int>();
  cp.config.batch_size = tr.at("batch_size").get<int>();
  cp.config.demos_per_task = tr.at("demos_per_task").get<int>();
  cp.config.demo_seed_base = tr.at("demo_seed_base").get<uint64_t>();

  auto want = cp.model.named_tensors();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != want.size())
    throw Error("checkpoint: manifest lists " + std::to_string(tensors.size()) +
                " tensors, expected " + std::to_string(want.size()));
  for (size_t i = 0; i < want.size(); ++i) {
    const auto& entry = tensors[i];
    if (entry.at("name").get<std::string>() != want[i].first)
      throw Error("checkpoint: tensor order mismatch at '" + want[i].first + "'");
    std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
    *want[i].second = read_tensor_blob(dir + "/" + entry.at("file").get<std::string>(), shape);
  }

  // Structural sanity beyond raw shapes.
  if (cp.model.vision_w.shape != std::vector<int>{kPatchDim, kEmbedDim} ||
      cp.model.token_table.rank() != 2 || cp.model.token_table.dim(1) != kEmbedDim)
    throw Error("checkpoint: tensor shapes in '" + dir + "' do not match this architecture");
  return cp;
}

}  // namespace gridvla
