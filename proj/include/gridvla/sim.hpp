#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gridvla/tensor.hpp"

namespace gridvla {

// Deterministic 2D grid manipulation world: an 8x8 cell table seen from
// above, rendered to a 48x48x3 image. Four task categories (spatial
// relations, object attributes, drawer goals, two-stage long-horizon) with
// templated instructions, per-task success predicates, and a scripted
// greedy expert used as the behavior-cloning teacher.

enum class Kind { Bowl, Plate, Drawer, Block };
enum class Color { Black, Red, Blue, White };
enum class Size { Small, Large };
enum class Material { Steel, Plastic };
enum class Category { Spatial, Object, Goal, Long };

const char* to_string(Kind k);
const char* to_string(Color c);
const char* to_string(Size s);
const char* to_string(Material m);
const char* to_string(Category c);
Category category_from_string(const std::string& s);

struct Vec2 {
  double x = 0, y = 0;
};

struct SceneObject {
  int id = -1;
  Kind kind = Kind::Bowl;
  Color color = Color::Black;
  Size size = Size::Small;
  Material material = Material::Steel;
  Vec2 position;
  bool open = false;  // drawers only
};

struct WorldState {
  int grid_size = 8;
  std::vector<SceneObject> objects;
  Vec2 gripper{4.0, 4.0};
  int holding = -1;  // object id, -1 when empty
  int step_count = 0;

  const SceneObject* find(int id) const;
  SceneObject* find(int id);
};

struct TaskSpec {
  std::string id;
  Category category = Category::Spatial;
  std::string instruction_template;
  std::string success_predicate;
  int max_steps = 60;
};

// One sub-goal of a task, bound to concrete object ids at reset time.
// Hold: grasp target and keep it. Open: toggle target drawer open.
// Put: carry target to dest (a plate cell or an open drawer) and release.
struct Subgoal {
  enum class Type { Hold, Open, Put };
  Type type = Type::Hold;
  int target = -1;
  int dest = -1;
};

struct Episode {
  TaskSpec task;
  uint64_t seed = 0;
  WorldState state;
  std::string instruction;
  std::vector<Subgoal> subgoals;
  bool success = false;  // latched: stays true once reached
  bool done = false;
};

struct StepResult {
  bool done = false;
  bool success = false;
};

inline constexpr int kImageSize = 48;
inline constexpr int kActionDim = 7;  // dx, dy, dz, three rotations, grip
inline constexpr double kStepClamp = 0.5;
inline constexpr double kGraspRadius = 0.75;

// Samples the scene from the seed, instantiates the instruction template
// with the sampled attributes, and binds the success predicate to concrete
// object ids. Same (task, seed) always yields the identical episode.
Episode reset(const TaskSpec& task, uint64_t seed);

// Physics only: moves the gripper by the clamped translation components,
// drags any held object along, then applies the grip channel (close grasps
// the nearest graspable object within reach or opens a closed drawer under
// the gripper; open releases onto the current cell, or into a drawer when
// over an open one). Throws on non-finite or wrongly shaped actions.
WorldState apply_action(const WorldState& state, const Tensor& action);

// apply_action plus success bookkeeping: success latches once the task
// predicate holds, done when success or the step cap is reached. Stepping a
// finished episode is a no-op.
StepResult step(Episode& ep, const Tensor& action);

// The position the scripted expert is currently steering for: the active
// sub-goal's destination while carrying its target, otherwise the object to
// grasp or the drawer to open. The gripper itself once everything is done.
Vec2 expert_focus(const Episode& ep);

// Evaluates the bound success predicate on the current state (un-latched).
bool predicate_holds(const WorldState& state, const std::vector<Subgoal>& subgoals);

// Pure function of the state: 48x48x3 image with values in [0,1].
Tensor render(const WorldState& state);

// Greedy waypoint teacher: drives toward the first incomplete sub-goal at
// full clamped speed, emitting sustained grip signals (-1 while approaching
// empty-handed, +1 while grasping and carrying, -1 to release). Throws if a
// bound object has vanished from the scene.
Tensor expert_action(const Episode& ep);

std::vector<TaskSpec> task_catalog(Category category);
std::vector<TaskSpec> full_catalog();
const TaskSpec& find_task(const std::string& id);

// Catalog as JSON: ids, categories, templates, predicate names, step caps.
std::string catalog_json();
void write_catalog_json(const std::string& path);

// Golden-image fixtures: 8-byte header (height, width as little-endian
// int32) followed by the flat float64 pixel data.
void write_image_fixture(const std::string& path, const Tensor& image);
Tensor read_image_fixture(const std::string& path);

}  // namespace gridvla
