#include "gridvla/visual_attacks.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "gridvla/rng.hpp"
#include "gridvla/vocab.hpp"

namespace gridvla {

namespace {

constexpr int kMaxAnchor = kImageSize - kAdvPatchSide;  // 40

int gripper_pixel(double world) { return int(std::lround(7.0 * world - 1.0)); }

void check_anchor(int row0, int col0) {
  if (row0 < 0 || col0 < 0 || row0 > kMaxAnchor || col0 > kMaxAnchor)
    throw Error("patch anchor (" + std::to_string(row0) + "," + std::to_string(col0) +
                ") leaves the frame");
}

}  // namespace

const char* to_string(Placement p) {
  return p == Placement::Environmental ? "environmental" : "arm_mounted";
}

std::pair<int, int> arm_region(const WorldState& state) {
  int r = std::clamp(gripper_pixel(state.gripper.y) - kAdvPatchSide / 2, 0, kMaxAnchor);
  int c = std::clamp(gripper_pixel(state.gripper.x) - kAdvPatchSide / 2, 0, kMaxAnchor);
  return {r, c};
}

std::pair<int, int> environmental_region(const WorldState& state, uint64_t seed) {
  std::set<std::pair<int, int>> taken;  // (cell y, cell x)
  for (const auto& o : state.objects)
    taken.insert({int(std::floor(o.position.y)), int(std::floor(o.position.x))});
  taken.insert({int(std::floor(state.gripper.y)), int(std::floor(state.gripper.x))});

  std::vector<std::pair<int, int>> free_cells;
  for (int cy = 1; cy <= 6; ++cy)
    for (int cx = 1; cx <= 6; ++cx)
      if (!taken.count({cy, cx})) free_cells.push_back({cy, cx});
  if (free_cells.empty()) throw Error("environmental patch: no unoccupied cell");

  Rng rng(mix_seed(seed, "env-patch"));
  auto [cy, cx] = free_cells[size_t(rng.next_below(free_cells.size()))];
  int r = std::clamp(gripper_pixel(cy + 0.5) - 3, 0, kMaxAnchor);
  int c = std::clamp(gripper_pixel(cx + 0.5) - 3, 0, kMaxAnchor);
  return {r, c};
}

Tensor place_patch(const Tensor& image, const AdvPatch& patch) {
  if (image.shape != std::vector<int>{kImageSize, kImageSize, 3})
    throw Error("place_patch: image must be 48x48x3");
  if (patch.content.shape != std::vector<int>{kAdvPatchSide, kAdvPatchSide, 3})
    throw Error("place_patch: patch content must be 8x8x3");
  check_anchor(patch.row0, patch.col0);

  Tensor out = image;
  for (int r = 0; r < kAdvPatchSide; ++r)
    for (int c = 0; c < kAdvPatchSide; ++c)
      for (int k = 0; k < 3; ++k)
        out.at(patch.row0 + r, patch.col0 + c, k) =
            std::clamp(patch.content.at(r, c, k), 0.0, 1.0);
  return out;
}

PatchResult optimize_patch(const PolicyModel& m, const Tensor& image,
                           const std::vector<int>& tokens, const Tensor& reference,
                           Placement placement, int row0, int col0, int iterations,
                           double step_size, uint64_t seed) {
  if (iterations < 1) throw Error("optimize_patch: iterations must be >= 1");
  if (step_size < 0) throw Error("optimize_patch: step_size must be >= 0");
  check_anchor(row0, col0);

  Rng rng(mix_seed(seed, "patch-init"));
  Tensor content = Tensor::zeros({kAdvPatchSide, kAdvPatchSide, 3});
  for (Eigen::Index i = 0; i < content.size(); ++i) content[i] = rng.next_double();

  PatchResult out;
  out.patch = {content, placement, row0, col0};
  auto loss_of = [&](const Tensor& c) {
    AdvPatch trial = out.patch;
    trial.content = c;
    return attack_loss(reference, forward(m, place_patch(image, trial), tokens));
  };

  double current = loss_of(out.patch.content);
  double alpha = step_size;
  for (int it = 0; it < iterations; ++it) {
    TapeT<double> tape;
    ForwardVars fv =
        build_forward(tape, m, place_patch(image, out.patch), tokens, /*differentiable_image=*/true);
    tape.backward(attack_loss_on(tape, fv.action, reference));
    const Tensor& g = tape.grad(fv.image);

    Tensor candidate = out.patch.content;
    for (int r = 0; r < kAdvPatchSide; ++r)
      for (int c = 0; c < kAdvPatchSide; ++c)
        for (int k = 0; k < 3; ++k) {
          double gv = g.at(row0 + r, col0 + c, k);
          double step = gv > 0 ? alpha : (gv < 0 ? -alpha : 0.0);
          candidate.at(r, c, k) = std::clamp(candidate.at(r, c, k) + step, 0.0, 1.0);
        }
    double l = loss_of(candidate);
    if (l > current) {
      out.patch.content = candidate;
      current = l;
    } else {
      alpha *= 0.5;  // rejected ascent step: restart smaller from here
    }
    out.trace.push_back(current);
  }
  return out;
}

void save_patch(const std::string& path_prefix, const AdvPatch& patch) {
  write_tensor_blob(path_prefix + ".bin", patch.content);
  nlohmann::json j{{"placement", to_string(patch.placement)},
                   {"row0", patch.row0},
                   {"col0", patch.col0},
                   {"side", kAdvPatchSide}};
  std::ofstream f(path_prefix + ".json");
  if (!f) throw Error("save_patch: cannot write " + path_prefix + ".json");
  f << j.dump(2) << "\n";
}

AdvPatch load_patch(const std::string& path_prefix) {
  std::ifstream f(path_prefix + ".json");
  if (!f) throw Error("load_patch: cannot open " + path_prefix + ".json");
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_patch: bad sidecar " + path_prefix + ".json: " + e.what());
  }
  AdvPatch p;
  std::string pl = j.at("placement").get<std::string>();
  if (pl == "environmental") p.placement = Placement::Environmental;
  else if (pl == "arm_mounted") p.placement = Placement::ArmMounted;
  else throw Error("load_patch: unknown placement '" + pl + "'");
  p.row0 = j.at("row0").get<int>();
  p.col0 = j.at("col0").get<int>();
  check_anchor(p.row0, p.col0);
  p.content = read_tensor_blob(path_prefix + ".bin", {kAdvPatchSide, kAdvPatchSide, 3});
  return p;
}

const char* to_string(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::Gaussian: return "gaussian";
    case NoiseFamily::SaltPepper: return "salt_pepper";
    case NoiseFamily::Speckle: return "speckle";
    case NoiseFamily::Uniform: return "uniform";
    case NoiseFamily::Prng: return "prng";
    case NoiseFamily::DpLaplace: return "dp_laplace";
  }
  throw Error("unknown noise family");
}

NoiseFamily noise_family_from_string(const std::string& s) {
  for (NoiseFamily f : {NoiseFamily::Gaussian, NoiseFamily::SaltPepper, NoiseFamily::Speckle,
                        NoiseFamily::Uniform, NoiseFamily::Prng, NoiseFamily::DpLaplace})
    if (s == to_string(f)) return f;
  throw Error("unknown noise family '" + s + "'");
}

Tensor apply_noise(const Tensor& image, const NoiseSpec& spec) {
  if (image.shape != std::vector<int>{kImageSize, kImageSize, 3})
    throw Error("apply_noise: image must be 48x48x3");
  const double s = spec.severity;
  Tensor out = image;
  Rng rng(mix_seed(spec.seed, "noise", uint64_t(spec.family)));

  switch (spec.family) {
    case NoiseFamily::Gaussian: {
      if (s < 0) throw Error("gaussian: sigma must be >= 0");
      if (s == 0) return out;
      double sigma = s / 255.0;
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += sigma * rng.gaussian();
      break;
    }
    case NoiseFamily::SaltPepper: {
      if (s < 0 || s > 1) throw Error("salt_pepper: p must be in [0,1]");
      for (int r = 0; r < kImageSize; ++r)
        for (int c = 0; c < kImageSize; ++c) {
          if (rng.next_double() >= s) continue;
          double v = rng.next_double() < 0.5 ? 0.0 : 1.0;
          for (int k = 0; k < 3; ++k) out.at(r, c, k) = v;
        }
      break;
    }
    case NoiseFamily::Speckle: {
      if (s < 0) throw Error("speckle: amplitude must be >= 0");
      if (s == 0) return out;
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] *= 1.0 + s * rng.gaussian();
      break;
    }
    case NoiseFamily::Uniform: {
      if (s < 0) throw Error("uniform: sigma must be >= 0");
      if (s == 0) return out;
      double amp = s / 255.0;
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += rng.uniform(-amp, amp);
      break;
    }
    case NoiseFamily::Prng: {
      if (s < 0) throw Error("prng: sigma must be >= 0");
      if (s == 0) return out;
      // Fixed-multiplier LCG pattern — structured rather than white, and
      // reproducible from the seed alone.
      double amp = s / 255.0;
      uint64_t state = spec.seed;
      for (Eigen::Index i = 0; i < out.size(); ++i) {
        state = state * 6364136223846793005ULL + 1442695040888963407ULL;
        double u = double(state >> 11) * 0x1.0p-53;
        out[i] += amp * (2.0 * u - 1.0);
      }
      break;
    }
    case NoiseFamily::DpLaplace: {
      if (s <= 0) throw Error("dp_laplace: epsilon must be > 0");
      double scale = (1.0 / 255.0) / s;
      for (Eigen::Index i = 0; i < out.size(); ++i) out[i] += rng.laplace(scale);
      break;
    }
  }
  for (Eigen::Index i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], 0.0, 1.0);
  return out;
}

std::vector<SeverityRow> severity_sweep(const PolicyModel& m, const std::vector<TaskSpec>& tasks,
                                        NoiseFamily family, const std::vector<double>& grid,
                                        int trials) {
  if (grid.empty()) throw Error("severity_sweep: empty severity grid");
  if (trials < 1) throw Error("severity_sweep: trials must be >= 1");
  const Vocabulary& vocab = Vocabulary::instance();

  std::vector<SeverityRow> table;
  for (double severity : grid) {
    int failures = 0, episodes = 0;
    for (const TaskSpec& task : tasks) {
      uint64_t task_tag = fnv1a(task.id);
      for (int trial = 0; trial < trials; ++trial) {
        Episode ep = reset(task, uint64_t(trial));
        std::vector<int> toks = vocab.pad_to(vocab.tokenize(ep.instruction));
        while (!ep.done) {
          Tensor frame = render(ep.state);
          if (severity != 0.0) {
            NoiseSpec spec{family, severity,
                           mix_seed(task_tag ^ uint64_t(trial), "sweep-frame",
                                    uint64_t(ep.state.step_count))};
            frame = apply_noise(frame, spec);
          }
          step(ep, forward(m, frame, toks));
        }
        failures += ep.success ? 0 : 1;
        ++episodes;
      }
    }
    table.push_back({severity, double(failures) / double(episodes)});
  }
  return table;
}

}  // namespace gridvla
