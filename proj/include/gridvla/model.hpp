#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gridvla/autodiff.hpp"
#include "gridvla/tensor.hpp"

namespace gridvla {

// The victim policy: patch-based vision encoder, token-embedding text
// encoder, one cross-attention head fusing them (text queries over visual
// patch keys/values), and a two-layer tanh MLP emitting a 7-dim action
// (dx, dy, dz, three rotations, grip). Translations are scaled by 0.5
// after the output tanh so they match the simulator's step clamp.

inline constexpr int kPatchGrid = 6;                        // 6x6 patches
inline constexpr int kPatchCount = kPatchGrid * kPatchGrid;  // 36
inline constexpr int kPatchPixels = 8;                       // 8x8x3 per patch
inline constexpr int kPatchDim = kPatchPixels * kPatchPixels * 3;  // 192
inline constexpr int kEmbedDim = 32;
inline constexpr int kFusedDim = 2 * kEmbedDim;  // pooled text ++ pooled patches

struct PolicyModel {
  Tensor vision_w;    // {192, 32}
  Tensor vision_b;    // {1, 32}
  Tensor token_table;  // {V, 32}
  Tensor attn_q;      // {32, 32}
  Tensor attn_k;      // {32, 32}
  Tensor attn_v;      // {32, 32}
  Tensor mlp_w1;      // {64, 64}
  Tensor mlp_b1;      // {1, 64}
  Tensor mlp_w2;      // {64, 7}
  Tensor mlp_b2;      // {1, 7}

  // Seeded uniform [-0.08, 0.08] in declaration order from one stream.
  static PolicyModel init(uint64_t seed, int vocab_size);

  // Fixed-order (name, tensor) view used by training, checkpoints, hashing.
  std::vector<std::pair<std::string, Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const Tensor*>> named_tensors() const;

  int vocab_size() const { return token_table.dim(0); }
  uint64_t weight_hash() const;  // FNV-1a over raw little-endian bytes
};

// Flattens a 48x48x3 image into the {36, 192} patch matrix, row-major over
// the patch grid; each row is the patch's pixels in (row, col, channel)
// order. The on-tape encoder produces exactly this layout.
Tensor extract_patches(const Tensor& image);

// Handles into one recorded forward pass.
struct ForwardVars {
  Var image;             // the image leaf; only set when pixels are on the tape
  Var patch_embeddings;  // {36, 32}
  Var token_embeddings;  // {16, 32} — the embedding-lookup output
  Var attn_weights;      // {16, 36} — post-softmax attention over patches
  Var action;            // {7}
  std::vector<Var> weight_vars;  // same order as named_tensors()
  int effective_tokens = 0;      // non-PAD count
};

// Records the full forward pass on the tape. With differentiable_image the
// pixels enter as a leaf and patches are carved out on-tape (gradients wrt
// pixels become available); otherwise patches are precomputed numerically,
// which is cheaper and bit-identical in value.
ForwardVars build_forward(TapeT<double>& tape, const PolicyModel& m, const Tensor& image,
                          const std::vector<int>& padded_ids, bool differentiable_image = false);

// Value-only conveniences.
Tensor forward(const PolicyModel& m, const Tensor& image, const std::vector<int>& padded_ids);
Tensor encode_vision(const PolicyModel& m, const Tensor& image);            // {36, 32}
Tensor encode_text(const PolicyModel& m, const std::vector<int>& padded_ids);  // {16, 32}

// Squared L2 distance between a reference action and a prediction — the
// deviation objective every attack maximizes.
double attack_loss(const Tensor& reference, const Tensor& predicted);
Var attack_loss_on(TapeT<double>& tape, Var predicted, const Tensor& reference);

// ---- behavior cloning ----------------------------------------------------

struct DemoStep {
  Tensor image;            // {48,48,3}
  std::vector<int> tokens;  // padded to the model window
  Tensor action;           // expert 7-vector
  int focus_patch = -1;    // patch index holding the expert's current goal
};

struct TrainConfig {
  uint64_t seed = 0;
  double learning_rate = 3e-3;
  int epochs = 280;
  int batch_size = 32;
  int demos_per_task = 36;
  uint64_t demo_seed_base = 0;
};

struct TrainResult {
  PolicyModel model;
  std::vector<double> loss_trace;  // mean per-sample training objective per epoch
};

// Rolls the scripted expert over every catalog task and records
// (image, tokens, action) triples at each step before acting.
std::vector<DemoStep> collect_demos(uint64_t demo_seed_base, int per_task);

// Seeded SGD on mean squared action error; bit-reproducible for a given
// config. Throws on an empty dataset.
TrainResult train_bc(const std::vector<DemoStep>& demos, const TrainConfig& cfg);

// ---- checkpoints ---------------------------------------------------------
// A checkpoint is a directory: manifest.json (names, shapes, seed, training
// config) plus one flat little-endian float64 blob per tensor.

// Raw little-endian float64 blob IO, shared by checkpoints and saved
// attack artifacts. read throws on missing, truncated, or oversized files.
void write_tensor_blob(const std::string& path, const Tensor& t);
Tensor read_tensor_blob(const std::string& path, const std::vector<int>& shape);

void save_checkpoint(const std::string& dir, const PolicyModel& m, const TrainConfig& cfg);

struct Checkpoint {
  PolicyModel model;
  TrainConfig config;
};
Checkpoint load_checkpoint(const std::string& dir);

}  // namespace gridvla
