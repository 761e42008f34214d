#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "gridvla/model.hpp"
#include "gridvla/sim.hpp"
#include "gridvla/tensor.hpp"

namespace gridvla {

// Camera-side attacks: an optimized 8x8 pixel patch placed in the scene or
// riding on the arm, and six families of seeded sensor-noise corruption
// with severity sweeps.

inline constexpr int kAdvPatchSide = 8;

enum class Placement { Environmental, ArmMounted };

const char* to_string(Placement p);

// Adversarial patch: pixel content plus its anchor region. Environmental
// patches keep their anchor for a whole episode; arm-mounted patches are
// re-anchored on the gripper every frame.
struct AdvPatch {
  Tensor content;  // {8,8,3} in [0,1]
  Placement placement = Placement::Environmental;
  int row0 = 0;    // anchor top-left pixel
  int col0 = 0;
};

// Top-left corner of the 8x8 region centered on the gripper's rendered
// position, clamped inside the frame.
std::pair<int, int> arm_region(const WorldState& state);

// Seeded choice of an unoccupied cell, returned as the top-left corner of
// the 8x8 region over that cell's glyph area — a "small common object"
// spot that collides with nothing already drawn.
std::pair<int, int> environmental_region(const WorldState& state, uint64_t seed);

// Overwrites the 8x8 region at the patch anchor. Pixels outside the region
// are bit-identical to the input. Throws when the region leaves the frame.
Tensor place_patch(const Tensor& image, const AdvPatch& patch);

struct PatchResult {
  AdvPatch patch;
  std::vector<double> trace;  // attack loss per iteration, non-decreasing
};

// Projected sign-gradient ascent on the patch pixels maximizing the action
// deviation from `reference`, clipped to [0,1] each step. A step that fails
// to improve is rejected and the step size halves, so the trace never
// decreases. Content starts seeded-uniform in [0,1].
PatchResult optimize_patch(const PolicyModel& m, const Tensor& image,
                           const std::vector<int>& tokens, const Tensor& reference,
                           Placement placement, int row0, int col0, int iterations = 100,
                           double step_size = 0.05, uint64_t seed = 0);

// Patch persistence: content in the checkpoint blob format plus a JSON
// sidecar with placement and anchor.
void save_patch(const std::string& path_prefix, const AdvPatch& patch);
AdvPatch load_patch(const std::string& path_prefix);

enum class NoiseFamily { Gaussian, SaltPepper, Speckle, Uniform, Prng, DpLaplace };

const char* to_string(NoiseFamily f);
NoiseFamily noise_family_from_string(const std::string& s);

// Severity conventions: sigma on the 0..255 scale for gaussian / uniform /
// prng, flip probability for salt_pepper, amplitude for speckle, privacy
// budget epsilon for dp_laplace (smaller = noisier).
struct NoiseSpec {
  NoiseFamily family = NoiseFamily::Gaussian;
  double severity = 0.0;
  uint64_t seed = 0;
};

// Pure seeded corruption; the result is clipped to [0,1]. Throws on
// severities outside each family's documented range.
Tensor apply_noise(const Tensor& image, const NoiseSpec& spec);

struct SeverityRow {
  double severity = 0.0;
  double failure_rate = 0.0;
};

// Closed-loop failure rate under per-frame corruption, one row per grid
// point; trials episodes per task, seeds 0..trials-1. Severity 0 rows skip
// the corruption entirely and so reproduce the clean failure rate exactly.
std::vector<SeverityRow> severity_sweep(const PolicyModel& m, const std::vector<TaskSpec>& tasks,
                                        NoiseFamily family, const std::vector<double>& grid,
                                        int trials);

}  // namespace gridvla
