#include "gridvla/sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>

#include "gridvla/rng.hpp"

namespace gridvla {

namespace {

constexpr double kReleaseOverRadius = 0.5;  // "over" a drawer or cell
constexpr double kPlacedRadius = 0.5;       // success distance for put goals
constexpr double kClawMin = 0.5;            // claw stays where the camera sees it
constexpr double kClawMax = 6.6;
constexpr double kWashGain = 0.30;          // peak brightness of the coordinate wash

double dist(const Vec2& a, const Vec2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

// Pixel anchor for a cell coordinate. The 7px stride (not 48/8 = 6) is
// deliberate: it gives every cell a distinct phase relative to the 8px
// patch grid of the policy's vision encoder, so absolute position stays
// recoverable from patch contents alone; the -1 keeps all glyphs of cells
// {1..6} inside the frame.
int pix(double p) { return int(std::lround(7.0 * p - 1.0)); }

// On the black tabletop every glyph is a positive sparse mass; "black"
// objects render dark gray so they stay visible.
std::array<double, 3> rgb(Color c) {
  switch (c) {
    case Color::Black: return {0.25, 0.25, 0.25};
    case Color::Red: return {0.95, 0.06, 0.06};
    case Color::Blue: return {0.06, 0.10, 0.95};
    case Color::White: return {0.95, 0.95, 0.95};
  }
  throw Error("render: unknown color");
}

void put_px(Tensor& img, int row, int col, const std::array<double, 3>& c) {
  if (row < 0 || row >= kImageSize || col < 0 || col >= kImageSize) return;
  for (int k = 0; k < 3; ++k) img.at(row, col, k) = c[k];
}

// Glyphs are built from Chebyshev shells around the anchor pixel so every
// (kind, size) pair leaves a linearly independent footprint in patch space:
//   block small  = center + the four shell-2 corners (a die face)
//   block large  = solid 3x3 (shells 0..1)
//   bowl  small  = shell-1 ring
//   bowl  large  = shell-2 ring
//   plate        = shell-2 ring minus corners (so stacked blocks stay visible)
//   drawer small = shell-1 ring border + center state pixel
//   drawer large = shell-2 ring border + 3x3 interior state area
// State areas render dimmed color when closed and near-black when open.
void draw_object(Tensor& img, const SceneObject& o, const Vec2& claw) {
  int cc = pix(o.position.x), cr = pix(o.position.y);
  auto col = rgb(o.color);
  std::array<double, 3> dim{0.5 * col[0], 0.5 * col[1], 0.5 * col[2]};
  std::array<double, 3> hole{0.85, 0.75, 0.10};  // lit interior once open
  // Every glyph's brightness carries its displacement from the claw: pixels
  // at even dx+dy offsets scale with the x offset, odd ones with y. The
  // driving command the policy must imitate is exactly clamp(object - claw),
  // and its pooled patch code cannot form glyph-times-position products on
  // its own — so the renderer computes them, turning "how far to the red
  // bowl" into a linear readout per kind-and-color class.
  double mod_x = 0.3 + 0.7 * (o.position.x - claw.x + 6.5) / 13.0;
  double mod_y = 0.3 + 0.7 * (o.position.y - claw.y + 6.5) / 13.0;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      int shell = std::max(std::abs(dx), std::abs(dy));
      bool corner = std::abs(dx) == 2 && std::abs(dy) == 2;
      bool on = false;
      std::array<double, 3> shade = col;
      switch (o.kind) {
        case Kind::Block:
          // Small: a 5px plus (center + side midpoints) — it needs lit
          // pixels of both offset parities; large: solid 3x3.
          on = o.size == Size::Small ? (shell <= 1 && (dx == 0 || dy == 0)) : shell <= 1;
          break;
        case Kind::Bowl:
          on = shell == (o.size == Size::Small ? 1 : 2);
          break;
        case Kind::Plate:
          on = shell == 2 && !corner;
          break;
        case Kind::Drawer: {
          int border = o.size == Size::Small ? 1 : 2;
          if (shell == border) {
            on = true;
          } else if (shell < border) {
            on = true;
            shade = o.open ? hole : dim;
          }
          break;
        }
      }
      if (on) {
        double m = std::abs(dx + dy) % 2 == 0 ? mod_x : mod_y;
        put_px(img, cr + dy, cc + dx, {m * shade[0], m * shade[1], m * shade[2]});
      }
    }
  }
}

// The claw writes only the green channel: a 3x3 upright cross while open, a
// 3x3 diagonal X while closed on something, so its position and the holding
// bit are readable from green alone — and an object right under the claw
// keeps its red/blue identity pixels at the very moment the grasp-or-not
// decision depends on them.
void draw_gripper(Tensor& img, const Vec2& g, bool holding) {
  int cc = pix(g.x), cr = pix(g.y);
  auto put_g = [&](int row, int col) {
    if (row < 0 || row >= kImageSize || col < 0 || col >= kImageSize) return;
    img.at(row, col, 1) = 0.98;
  };
  put_g(cr, cc);
  for (int d : {-1, 1}) {
    if (holding) {
      put_g(cr + d, cc + d);
      put_g(cr + d, cc - d);
    } else {
      put_g(cr, cc + d);
      put_g(cr + d, cc);
    }
  }
}

bool subgoal_done(const WorldState& s, const Subgoal& g) {
  switch (g.type) {
    case Subgoal::Type::Hold:
      return s.holding == g.target;
    case Subgoal::Type::Open: {
      const SceneObject* o = s.find(g.target);
      return o != nullptr && o->open;
    }
    case Subgoal::Type::Put: {
      const SceneObject* t = s.find(g.target);
      const SceneObject* d = s.find(g.dest);
      if (t == nullptr || d == nullptr) return false;
      if (s.holding == g.target) return false;
      if (d->kind == Kind::Drawer && !d->open) return false;
      return dist(t->position, d->position) <= kPlacedRadius;
    }
  }
  return false;
}

// ---- scene generation ----------------------------------------------------

struct Cell {
  int x, y;
};

Vec2 center(Cell c) { return {c.x + 0.5, c.y + 0.5}; }

// Free cells live in {1..6}^2 minus the 2x2 block under the gripper's home
// position; placements keep Chebyshev distance >= 2 so shapes never touch.
Cell place_free(Rng& rng, const std::vector<Cell>& occupied,
                const std::function<bool(int, int)>& excluded = nullptr) {
  std::vector<Cell> cands;
  for (int y = 1; y <= 6; ++y) {
    for (int x = 1; x <= 6; ++x) {
      if (x >= 3 && x <= 4 && y >= 3 && y <= 4) continue;
      bool ok = true;
      for (const Cell& c : occupied)
        if (std::max(std::abs(c.x - x), std::abs(c.y - y)) < 2) {
          ok = false;
          break;
        }
      if (ok && excluded && excluded(x, y)) ok = false;
      if (ok) cands.push_back({x, y});
    }
  }
  if (cands.empty()) throw Error("scene generator: no free cell satisfies the constraints");
  return cands[size_t(rng.next_below(cands.size()))];
}

// Loose objects and drawers come in black, red, or blue; white is reserved
// for plates and landmark glyphs so every role owns a clean color signature.
Color pick_color(Rng& rng) { return Color(rng.next_below(3)); }

std::pair<Color, Color> pick_two_colors(Rng& rng) {
  int a = int(rng.next_below(3));
  int b = (a + 1 + int(rng.next_below(2))) % 3;
  return {Color(a), Color(b)};
}

Size pick_size(Rng& rng) { return Size(rng.next_below(2)); }
Material pick_material(Rng& rng) { return Material(rng.next_below(2)); }

// Rows clear of the gripper's home block, usable for relation layouts.
int pick_row(Rng& rng) {
  static const int rows[4] = {1, 2, 5, 6};
  return rows[rng.next_below(4)];
}

struct SceneSetup {
  std::vector<SceneObject> objects;
  std::vector<Subgoal> subgoals;
  std::vector<std::pair<std::string, std::string>> slots;
};

int add_object(SceneSetup& s, Kind k, Color c, Size sz, Material m, Vec2 pos, bool open = false) {
  SceneObject o;
  o.id = int(s.objects.size());
  o.kind = k;
  o.color = c;
  o.size = sz;
  o.material = m;
  o.position = pos;
  o.open = open;
  s.objects.push_back(o);
  return o.id;
}

void hold_goal(SceneSetup& s, int target) {
  s.subgoals.push_back({Subgoal::Type::Hold, target, -1});
}
void open_goal(SceneSetup& s, int target) {
  s.subgoals.push_back({Subgoal::Type::Open, target, -1});
}
void put_goal(SceneSetup& s, int target, int dest) {
  s.subgoals.push_back({Subgoal::Type::Put, target, dest});
}

// Landmark at x in {3,4}; target strictly to one side, decoy on the other,
// all on one row so the relation stays visually crisp.
void side_layout(Rng& rng, bool target_left, Cell& landmark, Cell& target, Cell& decoy) {
  int y = pick_row(rng);
  int lx = 3 + int(rng.next_below(2));
  std::vector<int> lefts, rights;
  for (int x = 1; x <= lx - 2; ++x) lefts.push_back(x);
  for (int x = lx + 2; x <= 6; ++x) rights.push_back(x);
  int tl = lefts[rng.next_below(lefts.size())];
  int tr = rights[rng.next_below(rights.size())];
  landmark = {lx, y};
  target = target_left ? Cell{tl, y} : Cell{tr, y};
  decoy = target_left ? Cell{tr, y} : Cell{tl, y};
}

// Three collinear cells a < t < b with pairwise separation >= 2.
void between_layout(Rng& rng, Cell& a, Cell& t, Cell& b) {
  static const int triples[4][3] = {{1, 3, 5}, {2, 4, 6}, {1, 3, 6}, {1, 4, 6}};
  int y = pick_row(rng);
  const int* tr = triples[rng.next_below(4)];
  a = {tr[0], y};
  t = {tr[1], y};
  b = {tr[2], y};
}

SceneSetup generate_scene(const std::string& task_id, Rng& rng) {
  SceneSetup s;
  // Spatial scenes color-code the relation so the referent stays legible in
  // a 48x48 frame: the left-hand candidate is always black, the right-hand
  // one red, the "between" target blue; landmarks are white. The relation
  // word in the instruction remains the only cue for which one to take.
  if (task_id == "spatial-bowl-left" || task_id == "spatial-bowl-right") {
    Material m1 = pick_material(rng), m2 = pick_material(rng), m3 = pick_material(rng);
    Cell landmark, target, decoy;
    bool left = task_id == "spatial-bowl-left";
    side_layout(rng, left, landmark, target, decoy);
    int t = add_object(s, Kind::Bowl, left ? Color::Black : Color::Red, Size::Small, m1,
                       center(target));
    add_object(s, Kind::Bowl, left ? Color::Red : Color::Black, Size::Small, m2, center(decoy));
    add_object(s, Kind::Plate, Color::White, Size::Large, m3, center(landmark));
    hold_goal(s, t);
  } else if (task_id == "spatial-block-left") {
    Material m1 = pick_material(rng), m2 = pick_material(rng), m3 = pick_material(rng);
    Cell landmark, target, decoy;
    side_layout(rng, true, landmark, target, decoy);
    int t = add_object(s, Kind::Block, Color::Black, Size::Small, m1, center(target));
    add_object(s, Kind::Block, Color::Red, Size::Small, m2, center(decoy));
    add_object(s, Kind::Bowl, Color::White, Size::Large, m3, center(landmark));
    hold_goal(s, t);
  } else if (task_id == "spatial-bowl-between" || task_id == "spatial-block-between") {
    bool bowls = task_id == "spatial-bowl-between";
    Color decoy_color = rng.next_below(2) ? Color::Red : Color::Black;
    Material m1 = pick_material(rng), m2 = pick_material(rng);
    Material m3 = pick_material(rng), m4 = pick_material(rng);
    Cell a, t, b;
    between_layout(rng, a, t, b);
    Kind main = bowls ? Kind::Bowl : Kind::Block;
    // Landmarks: plate-and-block for the bowl task, bowl-and-plate for the
    // block task, matching the instruction order.
    Kind first = bowls ? Kind::Plate : Kind::Bowl;
    Kind second = bowls ? Kind::Block : Kind::Plate;
    int tid = add_object(s, main, Color::Blue, Size::Small, m1, center(t));
    add_object(s, first, Color::White, Size::Large, m3, center(a));
    add_object(s, second, Color::White, Size::Large, m4, center(b));
    auto excluded = [&](int x, int y) {
      return x >= a.x && x <= b.x && std::abs(y - a.y) <= 1;
    };
    Cell d = place_free(rng, {a, t, b}, excluded);
    add_object(s, main, decoy_color, Size::Small, m2, center(d));
    hold_goal(s, tid);
  } else if (task_id == "spatial-block-on") {
    Color dc = rng.next_below(2) ? Color::Red : Color::Blue;
    Material m1 = pick_material(rng), m2 = pick_material(rng), m3 = pick_material(rng);
    Cell p = place_free(rng, {});
    Cell d = place_free(rng, {p});
    add_object(s, Kind::Plate, Color::White, Size::Large, m3, center(p));
    int t = add_object(s, Kind::Block, Color::Black, Size::Small, m1, center(p));
    add_object(s, Kind::Block, dc, Size::Small, m2, center(d));
    hold_goal(s, t);
  } else if (task_id == "object-bowl-color" || task_id == "object-block-color") {
    Kind k = task_id == "object-bowl-color" ? Kind::Bowl : Kind::Block;
    auto [c1, c2] = pick_two_colors(rng);
    Material m1 = pick_material(rng), m2 = pick_material(rng), m3 = pick_material(rng);
    Cell pp = place_free(rng, {});
    Cell t = place_free(rng, {pp});
    Cell d = place_free(rng, {pp, t});
    int plate = add_object(s, Kind::Plate, Color::White, Size::Large, m3, center(pp));
    int tid = add_object(s, k, c1, Size::Small, m1, center(t));
    add_object(s, k, c2, Size::Small, m2, center(d));
    put_goal(s, tid, plate);
    s.slots.emplace_back("{color}", to_string(c1));
  } else if (task_id == "object-bowl-size" || task_id == "object-block-size") {
    Kind k = task_id == "object-bowl-size" ? Kind::Bowl : Kind::Block;
    auto [c1, c2] = pick_two_colors(rng);
    Size s1 = pick_size(rng);
    Size s2 = s1 == Size::Small ? Size::Large : Size::Small;
    Material m1 = pick_material(rng), m2 = pick_material(rng), m3 = pick_material(rng);
    Cell pp = place_free(rng, {});
    Cell t = place_free(rng, {pp});
    Cell d = place_free(rng, {pp, t});
    int plate = add_object(s, Kind::Plate, Color::White, Size::Large, m3, center(pp));
    int tid = add_object(s, k, c1, s1, m1, center(t));
    add_object(s, k, c2, s2, m2, center(d));
    put_goal(s, tid, plate);
    s.slots.emplace_back("{size}", to_string(s1));
  } else if (task_id == "object-bowl-material" || task_id == "object-block-material") {
    Kind k = task_id == "object-bowl-material" ? Kind::Bowl : Kind::Block;
    Color c1 = pick_color(rng);
    Material m1 = pick_material(rng), m3 = pick_material(rng);
    Cell pp = place_free(rng, {});
    Cell t = place_free(rng, {pp});
    int plate = add_object(s, Kind::Plate, Color::White, Size::Large, m3, center(pp));
    int tid = add_object(s, k, c1, Size::Small, m1, center(t));
    put_goal(s, tid, plate);
    s.slots.emplace_back("{material}", to_string(m1));
  } else if (task_id == "goal-open-color") {
    auto [c1, c2] = pick_two_colors(rng);
    Material m1 = pick_material(rng), m2 = pick_material(rng);
    Cell a = place_free(rng, {});
    Cell b = place_free(rng, {a});
    int t = add_object(s, Kind::Drawer, c1, Size::Large, m1, center(a));
    add_object(s, Kind::Drawer, c2, Size::Large, m2, center(b));
    open_goal(s, t);
    s.slots.emplace_back("{color}", to_string(c1));
  } else if (task_id == "goal-open-size") {
    auto [c1, c2] = pick_two_colors(rng);
    Size s1 = pick_size(rng);
    Size s2 = s1 == Size::Small ? Size::Large : Size::Small;
    Material m1 = pick_material(rng), m2 = pick_material(rng);
    Cell a = place_free(rng, {});
    Cell b = place_free(rng, {a});
    int t = add_object(s, Kind::Drawer, c1, s1, m1, center(a));
    add_object(s, Kind::Drawer, c2, s2, m2, center(b));
    open_goal(s, t);
    s.slots.emplace_back("{size}", to_string(s1));
  } else if (task_id == "goal-open-single" || task_id == "goal-open-material") {
    Color c1 = pick_color(rng);
    Material m1 = pick_material(rng);
    Cell a = place_free(rng, {});
    int t = add_object(s, Kind::Drawer, c1, Size::Large, m1, center(a));
    open_goal(s, t);
    if (task_id == "goal-open-material") s.slots.emplace_back("{material}", to_string(m1));
  } else if (task_id == "goal-bowl-in-drawer" || task_id == "goal-block-in-drawer") {
    Kind k = task_id == "goal-bowl-in-drawer" ? Kind::Bowl : Kind::Block;
    Color dc = pick_color(rng);
    Color oc = pick_color(rng);
    Material m1 = pick_material(rng), m2 = pick_material(rng);
    Cell a = place_free(rng, {});
    Cell b = place_free(rng, {a});
    int drawer = add_object(s, Kind::Drawer, dc, Size::Large, m1, center(a), /*open=*/true);
    int t = add_object(s, k, oc, Size::Small, m2, center(b));
    put_goal(s, t, drawer);
    s.slots.emplace_back("{color}", to_string(oc));
  } else if (task_id == "long-open-put-bowl" || task_id == "long-open-put-block") {
    Kind k = task_id == "long-open-put-bowl" ? Kind::Bowl : Kind::Block;
    Color dc = pick_color(rng);
    Color oc = pick_color(rng);
    Material m1 = pick_material(rng), m2 = pick_material(rng);
    Cell a = place_free(rng, {});
    Cell b = place_free(rng, {a});
    int drawer = add_object(s, Kind::Drawer, dc, Size::Large, m1, center(a));
    int t = add_object(s, k, oc, Size::Small, m2, center(b));
    open_goal(s, drawer);
    put_goal(s, t, drawer);
    s.slots.emplace_back("{color}", to_string(dc));
    s.slots.emplace_back("{color2}", to_string(oc));
  } else if (task_id == "long-put-open-bowl" || task_id == "long-put-open-block") {
    Kind k = task_id == "long-put-open-bowl" ? Kind::Bowl : Kind::Block;
    Color oc = pick_color(rng);
    Color dc = pick_color(rng);
    Material m1 = pick_material(rng), m2 = pick_material(rng), m3 = pick_material(rng);
    Cell pp = place_free(rng, {});
    Cell t = place_free(rng, {pp});
    Cell d = place_free(rng, {pp, t});
    int plate = add_object(s, Kind::Plate, Color::White, Size::Large, m3, center(pp));
    int tid = add_object(s, k, oc, Size::Small, m1, center(t));
    int drawer = add_object(s, Kind::Drawer, dc, Size::Large, m2, center(d));
    put_goal(s, tid, plate);
    open_goal(s, drawer);
    s.slots.emplace_back("{color}", to_string(oc));
  } else if (task_id == "long-open-both") {
    auto [c1, c2] = pick_two_colors(rng);
    Material m1 = pick_material(rng), m2 = pick_material(rng);
    Cell a = place_free(rng, {});
    Cell b = place_free(rng, {a});
    int d1 = add_object(s, Kind::Drawer, c1, Size::Large, m1, center(a));
    int d2 = add_object(s, Kind::Drawer, c2, Size::Large, m2, center(b));
    open_goal(s, d1);
    open_goal(s, d2);
    s.slots.emplace_back("{color}", to_string(c1));
    s.slots.emplace_back("{color2}", to_string(c2));
  } else {
    throw Error("scene generator: unknown task id '" + task_id + "'");
  }
  return s;
}

std::string fill_template(std::string text,
                          const std::vector<std::pair<std::string, std::string>>& slots) {
  for (const auto& [slot, value] : slots) {
    size_t at = text.find(slot);
    if (at == std::string::npos)
      throw Error("instruction template: slot " + slot + " not found in '" + text + "'");
    text.replace(at, slot.size(), value);
  }
  if (text.find('{') != std::string::npos)
    throw Error("instruction template: unfilled slot in '" + text + "'");
  return text;
}

const std::vector<TaskSpec>& catalog_storage() {
  static const std::vector<TaskSpec> all = [] {
    std::vector<TaskSpec> v;
    auto task = [&](const char* id, Category cat, const char* tmpl, const char* pred) {
      TaskSpec t;
      t.id = id;
      t.category = cat;
      t.instruction_template = tmpl;
      t.success_predicate = pred;
      v.push_back(t);
    };
    task("spatial-bowl-left", Category::Spatial, "pick up the bowl left of the plate",
         "holding-target");
    task("spatial-bowl-right", Category::Spatial, "pick up the bowl right of the plate",
         "holding-target");
    task("spatial-bowl-between", Category::Spatial,
         "pick up the bowl between the plate and the block", "holding-target");
    task("spatial-block-on", Category::Spatial, "pick up the block on the plate",
         "holding-target");
    task("spatial-block-left", Category::Spatial, "pick up the block left of the bowl",
         "holding-target");
    task("spatial-block-between", Category::Spatial,
         "pick up the block between the bowl and the plate", "holding-target");
    task("object-bowl-color", Category::Object,
         "pick up the {color} bowl and place it on the plate", "target-on-dest");
    task("object-block-color", Category::Object,
         "pick up the {color} block and place it on the plate", "target-on-dest");
    task("object-bowl-size", Category::Object,
         "pick up the {size} bowl and place it on the plate", "target-on-dest");
    task("object-block-size", Category::Object,
         "pick up the {size} block and place it on the plate", "target-on-dest");
    task("object-bowl-material", Category::Object,
         "pick up the {material} bowl and place it on the plate", "target-on-dest");
    task("object-block-material", Category::Object,
         "pick up the {material} block and place it on the plate", "target-on-dest");
    task("goal-open-color", Category::Goal, "open the {color} drawer", "drawer-open");
    task("goal-open-size", Category::Goal, "open the {size} drawer", "drawer-open");
    task("goal-open-single", Category::Goal, "open the drawer", "drawer-open");
    task("goal-open-material", Category::Goal, "open the {material} drawer", "drawer-open");
    task("goal-bowl-in-drawer", Category::Goal, "put the {color} bowl in the drawer",
         "target-in-drawer");
    task("goal-block-in-drawer", Category::Goal, "put the {color} block in the drawer",
         "target-in-drawer");
    task("long-open-put-bowl", Category::Long,
         "open the {color} drawer and put the {color2} bowl in it", "open-then-put");
    task("long-open-put-block", Category::Long,
         "open the {color} drawer and put the {color2} block in it", "open-then-put");
    task("long-put-open-bowl", Category::Long,
         "put the {color} bowl on the plate and open the drawer", "put-then-open");
    task("long-put-open-block", Category::Long,
         "put the {color} block on the plate and open the drawer", "put-then-open");
    task("long-open-both", Category::Long, "open the {color} drawer and open the {color2} drawer",
         "open-both");
    return v;
  }();
  return all;
}

}  // namespace

const char* to_string(Kind k) {
  switch (k) {
    case Kind::Bowl: return "bowl";
    case Kind::Plate: return "plate";
    case Kind::Drawer: return "drawer";
    case Kind::Block: return "block";
  }
  return "?";
}
const char* to_string(Color c) {
  switch (c) {
    case Color::Black: return "black";
    case Color::Red: return "red";
    case Color::Blue: return "blue";
    case Color::White: return "white";
  }
  return "?";
}
const char* to_string(Size s) { return s == Size::Small ? "small" : "large"; }
const char* to_string(Material m) { return m == Material::Steel ? "steel" : "plastic"; }
const char* to_string(Category c) {
  switch (c) {
    case Category::Spatial: return "spatial";
    case Category::Object: return "object";
    case Category::Goal: return "goal";
    case Category::Long: return "long";
  }
  return "?";
}

Category category_from_string(const std::string& s) {
  if (s == "spatial") return Category::Spatial;
  if (s == "object") return Category::Object;
  if (s == "goal") return Category::Goal;
  if (s == "long") return Category::Long;
  throw Error("unknown task category '" + s + "'");
}

const SceneObject* WorldState::find(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}
SceneObject* WorldState::find(int id) {
  for (auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

Episode reset(const TaskSpec& task, uint64_t seed) {
  Rng rng(mix_seed(seed, task.id, 0));
  SceneSetup setup = generate_scene(task.id, rng);
  Episode ep;
  ep.task = task;
  ep.seed = seed;
  ep.state.objects = std::move(setup.objects);
  ep.state.gripper = {4.0, 4.0};
  ep.subgoals = std::move(setup.subgoals);
  ep.instruction = fill_template(task.instruction_template, setup.slots);
  return ep;
}

WorldState apply_action(const WorldState& state, const Tensor& action) {
  if (action.rank() != 1 || action.dim(0) != kActionDim)
    throw Error("step: action must be a 7-vector, got " + shape_str(action.shape));
  if (!action.all_finite()) throw Error("step: non-finite action component");

  WorldState s = state;
  // The claw is confined to the band the camera can actually see: glyphs
  // anchor at pixel 7p-1, so coordinates past ~6.6 would render off-frame
  // and the policy would lose sight of its own claw.
  s.gripper.x = std::clamp(s.gripper.x + std::clamp(action[0], -kStepClamp, kStepClamp), kClawMin, kClawMax);
  s.gripper.y = std::clamp(s.gripper.y + std::clamp(action[1], -kStepClamp, kStepClamp), kClawMin, kClawMax);
  // Δz and the rotation channels are accepted but have no effect in 2D.
  if (s.holding >= 0)
    if (SceneObject* held = s.find(s.holding)) held->position = {s.gripper.x, s.gripper.y};

  double grip = action[6];
  if (grip > 0.5 && s.holding < 0) {
    // Close: grasp the nearest bowl or block within reach (ties to the
    // lowest id); failing that, a closed drawer under the claw swings open.
    int best = -1;
    double best_d = kGraspRadius;
    for (const auto& o : s.objects) {
      if (o.kind != Kind::Bowl && o.kind != Kind::Block) continue;
      double d = dist(o.position, s.gripper);
      if (d <= best_d && (best < 0 || d < best_d)) {
        best = o.id;
        best_d = d;
      }
    }
    if (best >= 0) {
      s.holding = best;
      s.find(best)->position = {s.gripper.x, s.gripper.y};
    } else {
      int drawer = -1;
      double drawer_d = kGraspRadius;
      for (const auto& o : s.objects) {
        if (o.kind != Kind::Drawer || o.open) continue;
        double d = dist(o.position, s.gripper);
        if (d <= drawer_d && (drawer < 0 || d < drawer_d)) {
          drawer = o.id;
          drawer_d = d;
        }
      }
      if (drawer >= 0) s.find(drawer)->open = true;
    }
  } else if (grip < -0.5 && s.holding >= 0) {
    // Open: release into an open drawer when over one, else onto the cell.
    SceneObject* held = s.find(s.holding);
    int drawer = -1;
    double drawer_d = kReleaseOverRadius;
    for (const auto& o : s.objects) {
      if (o.kind != Kind::Drawer || !o.open) continue;
      double d = dist(o.position, s.gripper);
      if (d <= drawer_d && (drawer < 0 || d < drawer_d)) {
        drawer = o.id;
        drawer_d = d;
      }
    }
    if (drawer >= 0)
      held->position = s.find(drawer)->position;
    else
      held->position = {std::floor(s.gripper.x) + 0.5, std::floor(s.gripper.y) + 0.5};
    s.holding = -1;
  }
  s.step_count += 1;
  return s;
}

bool predicate_holds(const WorldState& state, const std::vector<Subgoal>& subgoals) {
  for (const auto& g : subgoals)
    if (!subgoal_done(state, g)) return false;
  return !subgoals.empty();
}

StepResult step(Episode& ep, const Tensor& action) {
  if (ep.done) return {true, ep.success};
  ep.state = apply_action(ep.state, action);
  if (!ep.success && predicate_holds(ep.state, ep.subgoals)) ep.success = true;
  if (ep.success || ep.state.step_count >= ep.task.max_steps) ep.done = true;
  return {ep.done, ep.success};
}

Tensor render(const WorldState& state) {
  Tensor img = Tensor::zeros({kImageSize, kImageSize, 3});
  // The tabletop carries a faint claw-centered wash — red neutral at the
  // claw's column and brightening rightward of it, blue likewise downward.
  // Every patch therefore encodes its own displacement from the claw, which
  // is the coordinate frame the driving command lives in; the patch under
  // the claw reads a constant 0.5 wherever the claw happens to be. Green is
  // left at zero: it belongs exclusively to the claw and its telemetry.
  int claw_c = pix(state.gripper.x), claw_r = pix(state.gripper.y);
  for (int r = 0; r < kImageSize; ++r)
    for (int c = 0; c < kImageSize; ++c) {
      img.at(r, c, 0) = 0.5 + kWashGain * double(c - claw_c) / kImageSize;
      img.at(r, c, 2) = 0.5 + kWashGain * double(r - claw_r) / kImageSize;
    }
  if (state.objects.empty()) return img;  // empty table: nothing drawn on top
  // Surfaces first, then loose objects, then the held object, gripper last.
  for (const auto& o : state.objects)
    if (o.kind == Kind::Plate || o.kind == Kind::Drawer)
      draw_object(img, o, state.gripper);
  for (const auto& o : state.objects)
    if ((o.kind == Kind::Bowl || o.kind == Kind::Block) && o.id != state.holding)
      draw_object(img, o, state.gripper);
  if (state.holding >= 0)
    if (const SceneObject* held = state.find(state.holding))
      draw_object(img, *held, state.gripper);
  draw_gripper(img, state.gripper, state.holding >= 0);
  // Telemetry stripes along the top row and left column: their green
  // brightness is proportional to the claw's x and y. Glyph phases alias
  // every 8/7 cells once the policy's encoder pools patches, so brightness
  // — which sums linearly — is the only claw-position code that stays
  // unambiguous. Green keeps the stripes in the claw's exclusive channel.
  for (int c = 0; c < kImageSize; ++c)
    img.at(0, c, 1) = 0.9 * state.gripper.x / double(state.grid_size - 1);
  for (int r = 0; r < kImageSize; ++r)
    img.at(r, 0, 1) = 0.9 * state.gripper.y / double(state.grid_size - 1);
  return img;
}

Vec2 expert_focus(const Episode& ep) {
  const WorldState& s = ep.state;
  for (const auto& sg : ep.subgoals) {
    if (subgoal_done(s, sg)) continue;
    if (sg.type == Subgoal::Type::Put && s.holding == sg.target) {
      const SceneObject* dest = s.find(sg.dest);
      if (dest != nullptr) return dest->position;
    }
    const SceneObject* target = s.find(sg.target);
    if (target != nullptr) return target->position;
    break;
  }
  return s.gripper;  // nothing left to pursue
}

Tensor expert_action(const Episode& ep) {
  Tensor a = Tensor::zeros({kActionDim});
  const WorldState& s = ep.state;
  const Subgoal* g = nullptr;
  for (const auto& sg : ep.subgoals)
    if (!subgoal_done(s, sg)) {
      g = &sg;
      break;
    }
  if (g == nullptr) return a;  // all sub-goals satisfied; hold still

  const SceneObject* target = s.find(g->target);
  if (target == nullptr)
    throw Error("expert: bound object " + std::to_string(g->target) + " missing from scene");

  auto drive_toward = [&](const Vec2& p) {
    a[0] = std::clamp(p.x - s.gripper.x, -kStepClamp, kStepClamp);
    a[1] = std::clamp(p.y - s.gripper.y, -kStepClamp, kStepClamp);
  };
  // Grasp/release decisions are taken on pixel-snapped coordinates: two
  // states that render to the same image must get the same label, or the
  // cloning loss acquires an irreducible floor right at the decision radius.
  auto snap = [](const Vec2& p) {
    return Vec2{(std::lround(7.0 * p.x - 1.0) + 1.0) / 7.0,
                (std::lround(7.0 * p.y - 1.0) + 1.0) / 7.0};
  };
  auto vis_dist = [&](const Vec2& p, const Vec2& q) { return dist(snap(p), snap(q)); };

  switch (g->type) {
    case Subgoal::Type::Hold:
    case Subgoal::Type::Open: {
      if (s.holding >= 0) {  // carrying something that does not belong here
        a[6] = -1.0;
        return a;
      }
      if (vis_dist(s.gripper, target->position) <= 0.55) {
        a[6] = 1.0;  // grasp (or swing the drawer open)
        return a;
      }
      drive_toward(target->position);
      a[6] = -1.0;
      return a;
    }
    case Subgoal::Type::Put: {
      const SceneObject* dest = s.find(g->dest);
      if (dest == nullptr)
        throw Error("expert: bound object " + std::to_string(g->dest) + " missing from scene");
      if (s.holding == g->target) {
        if (vis_dist(s.gripper, dest->position) <= 0.35) {
          a[6] = -1.0;  // release onto the destination
          return a;
        }
        drive_toward(dest->position);
        a[6] = 1.0;
        return a;
      }
      if (s.holding >= 0) {  // wrong object in hand
        a[6] = -1.0;
        return a;
      }
      if (vis_dist(s.gripper, target->position) <= 0.55) {
        a[6] = 1.0;
        return a;
      }
      drive_toward(target->position);
      a[6] = -1.0;
      return a;
    }
  }
  return a;
}

std::vector<TaskSpec> task_catalog(Category category) {
  std::vector<TaskSpec> out;
  for (const auto& t : catalog_storage())
    if (t.category == category) out.push_back(t);
  return out;
}

std::vector<TaskSpec> full_catalog() { return catalog_storage(); }

const TaskSpec& find_task(const std::string& id) {
  for (const auto& t : catalog_storage())
    if (t.id == id) return t;
  throw Error("unknown task id '" + id + "'");
}

std::string catalog_json() {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& t : catalog_storage()) {
    arr.push_back({{"id", t.id},
                   {"category", to_string(t.category)},
                   {"template", t.instruction_template},
                   {"predicate", t.success_predicate},
                   {"max_steps", t.max_steps}});
  }
  return arr.dump(2) + "\n";
}

void write_catalog_json(const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("catalog: cannot open '" + path + "' for writing");
  f << catalog_json();
}

namespace {

void write_le32(std::ofstream& f, int32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (uint32_t(v) >> (8 * i)) & 0xff;
  f.write(reinterpret_cast<const char*>(b), 4);
}

int32_t read_le32(std::ifstream& f) {
  unsigned char b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= uint32_t(b[i]) << (8 * i);
  return int32_t(v);
}

}  // namespace

void write_image_fixture(const std::string& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(2) != 3)
    throw Error("fixture: expected an HxWx3 image, got " + shape_str(image.shape));
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("fixture: cannot open '" + path + "' for writing");
  write_le32(f, image.dim(0));
  write_le32(f, image.dim(1));
  for (Eigen::Index i = 0; i < image.size(); ++i) {
    uint64_t bits;
    double v = image.data[i];
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = (bits >> (8 * k)) & 0xff;
    f.write(reinterpret_cast<const char*>(b), 8);
  }
  if (!f) throw Error("fixture: write to '" + path + "' failed");
}

Tensor read_image_fixture(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("fixture: cannot open '" + path + "'");
  int32_t h = read_le32(f);
  int32_t w = read_le32(f);
  if (!f || h <= 0 || w <= 0)
    throw Error("fixture: bad header in '" + path + "'");
  Tensor img = Tensor::zeros({h, w, 3});
  for (Eigen::Index i = 0; i < img.size(); ++i) {
    unsigned char b[8];
    f.read(reinterpret_cast<char*>(b), 8);
    if (!f) throw Error("fixture: truncated data in '" + path + "'");
    uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= uint64_t(b[k]) << (8 * k);
    double v;
    std::memcpy(&v, &bits, 8);
    img.data[i] = v;
  }
  return img;
}

}  // namespace gridvla
