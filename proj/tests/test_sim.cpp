#include <doctest.h>

#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gridvla/sim.hpp"

using namespace gridvla;

namespace {

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

std::string data_path(const std::string& name) {
  return std::string(GRIDVLA_TEST_DATA) + "/" + name;
}

bool regen_goldens() { return std::getenv("GRIDVLA_REGEN_GOLDENS") != nullptr; }

Tensor zero_action() { return Tensor::zeros({kActionDim}); }

Tensor action(double dx, double dy, double grip) {
  Tensor a = Tensor::zeros({kActionDim});
  a[0] = dx;
  a[1] = dy;
  a[6] = grip;
  return a;
}

}  // namespace

TEST_CASE("catalog shape and uniqueness") {
  std::set<std::string> ids;
  for (Category c : {Category::Spatial, Category::Object, Category::Goal, Category::Long}) {
    auto tasks = task_catalog(c);
    CHECK(tasks.size() >= 5);
    for (const auto& t : tasks) {
      CHECK(t.category == c);
      CHECK(ids.insert(t.id).second);  // globally unique
      CHECK(t.max_steps == 60);
    }
  }
  CHECK(full_catalog().size() == ids.size());

  bool has_left = false, has_between = false;
  for (const auto& t : task_catalog(Category::Spatial)) {
    if (t.instruction_template.find("left of") != std::string::npos) has_left = true;
    if (t.instruction_template.find("between") != std::string::npos) has_between = true;
  }
  CHECK(has_left);
  CHECK(has_between);

  CHECK_THROWS_AS(category_from_string("kitchen"), Error&);
  CHECK_THROWS_AS(find_task("no-such-task"), Error&);
}

TEST_CASE("catalog json round-trips") {
  auto j = nlohmann::json::parse(catalog_json());
  CHECK(j.is_array());
  CHECK(j.size() == full_catalog().size());
  for (const auto& e : j) {
    const TaskSpec& t = find_task(e["id"].get<std::string>());
    CHECK(e["template"].get<std::string>() == t.instruction_template);
    CHECK(e["predicate"].get<std::string>() == t.success_predicate);
    CHECK(e["category"].get<std::string>() == to_string(t.category));
    CHECK(e["max_steps"].get<int>() == t.max_steps);
  }
}

TEST_CASE("reset is deterministic and byte-identical") {
  const TaskSpec& task = find_task("object-bowl-color");
  Episode a = reset(task, 7);
  Episode b = reset(task, 7);
  CHECK(a.instruction == b.instruction);
  REQUIRE(a.state.objects.size() == b.state.objects.size());
  for (size_t i = 0; i < a.state.objects.size(); ++i) {
    CHECK(a.state.objects[i].position.x == b.state.objects[i].position.x);
    CHECK(a.state.objects[i].position.y == b.state.objects[i].position.y);
    CHECK(a.state.objects[i].color == b.state.objects[i].color);
  }
  Tensor ia = render(a.state), ib = render(b.state);
  for (Eigen::Index i = 0; i < ia.size(); ++i) CHECK(ia[i] == ib[i]);

  // Different seeds eventually give different scenes.
  bool any_difference = false;
  for (uint64_t s = 0; s < 10 && !any_difference; ++s)
    any_difference = reset(task, s).instruction != a.instruction ||
                     reset(task, s).state.objects[1].position.x != a.state.objects[1].position.x;
  CHECK(any_difference);
}

TEST_CASE("frozen instruction for object task at seed 7") {
  // Regenerating the scene must reproduce this exact string; the color slot
  // is read off the sampled target bowl.
  Episode ep = reset(find_task("object-bowl-color"), 7);
  const SceneObject* target = ep.state.find(ep.subgoals[0].target);
  REQUIRE(target != nullptr);
  std::string expected =
      std::string("pick up the ") + to_string(target->color) + " bowl and place it on the plate";
  CHECK(ep.instruction == expected);
  CHECK(ep.instruction == "pick up the blue bowl and place it on the plate");
}

TEST_CASE("scene invariants over all tasks and 100 seeds") {
  for (const auto& task : full_catalog()) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Episode ep = reset(task, seed);
      CAPTURE(task.id);
      CAPTURE(seed);

      // Attribute triples unique within a kind; positions inside the grid.
      std::set<std::tuple<int, int, int>> triples;
      for (const auto& o : ep.state.objects) {
        CHECK(o.position.x >= 0);
        CHECK(o.position.x < 8);
        CHECK(o.position.y >= 0);
        CHECK(o.position.y < 8);
        CHECK(triples.insert({int(o.kind), int(o.color), int(o.size)}).second);
      }

      // Placements keep their distance except deliberate on-pairs.
      for (size_t i = 0; i < ep.state.objects.size(); ++i) {
        for (size_t j = i + 1; j < ep.state.objects.size(); ++j) {
          const auto& a = ep.state.objects[i];
          const auto& b = ep.state.objects[j];
          double cheb = std::max(std::fabs(a.position.x - b.position.x),
                                 std::fabs(a.position.y - b.position.y));
          bool stacked = cheb == 0.0 &&
                         (a.kind == Kind::Plate || b.kind == Kind::Plate);
          CHECK((cheb >= 2.0 || stacked));
        }
      }

      // Instructions stay well under the policy's 16-token window.
      CHECK(split_words(ep.instruction).size() <= 12);
    }
  }
}

TEST_CASE("spatial instructions carry exactly one relation word") {
  const std::set<std::string> relations = {"left", "right", "between", "on"};
  for (const auto& task : task_catalog(Category::Spatial)) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Episode ep = reset(task, seed);
      int count = 0;
      for (const auto& w : split_words(ep.instruction))
        if (relations.count(w)) ++count;
      CAPTURE(task.id);
      CHECK(count == 1);
    }
  }
}

TEST_CASE("expert succeeds on every task for seeds 0..99") {
  for (const auto& task : full_catalog()) {
    for (uint64_t seed = 0; seed < 100; ++seed) {
      Episode ep = reset(task, seed);
      StepResult r{};
      while (!ep.done) {
        Tensor img = render(ep.state);
        CHECK(img.shape == std::vector<int>{48, 48, 3});
        r = step(ep, expert_action(ep));
      }
      CAPTURE(task.id);
      CAPTURE(seed);
      CHECK(r.success);
      CHECK(ep.state.step_count <= task.max_steps);
    }
  }
}

TEST_CASE("success latches and stays latched") {
  Episode ep = reset(find_task("spatial-bowl-left"), 3);
  while (!ep.done) step(ep, expert_action(ep));
  CHECK(ep.success);
  int steps = ep.state.step_count;
  StepResult r = step(ep, action(0.5, 0.0, -1.0));  // would drop the bowl
  CHECK(r.done);
  CHECK(r.success);
  CHECK(ep.state.step_count == steps);  // finished episodes do not advance
}

TEST_CASE("step semantics") {
  Episode ep = reset(find_task("object-bowl-color"), 1);

  SUBCASE("zero action only advances the clock") {
    WorldState before = ep.state;
    WorldState after = apply_action(before, zero_action());
    CHECK(after.step_count == before.step_count + 1);
    CHECK(after.gripper.x == before.gripper.x);
    CHECK(after.gripper.y == before.gripper.y);
    CHECK(after.holding == before.holding);
    for (size_t i = 0; i < before.objects.size(); ++i) {
      CHECK(after.objects[i].position.x == before.objects[i].position.x);
      CHECK(after.objects[i].position.y == before.objects[i].position.y);
    }
  }

  SUBCASE("translation clamps to half a cell") {
    WorldState s = ep.state;
    s.gripper = {2.0, 2.0};
    WorldState after = apply_action(s, action(5.0, 0.0, 0.0));
    CHECK(after.gripper.x == 2.5);
    CHECK(after.gripper.y == 2.0);
  }

  SUBCASE("claw stays inside the visible arena") {
    WorldState s = ep.state;
    s.gripper = {0.6, 6.5};
    WorldState after = apply_action(s, action(-5.0, 5.0, 0.0));
    CHECK(after.gripper.x == 0.5);
    CHECK(after.gripper.y == 6.6);
  }

  SUBCASE("grasp misses outside the 0.75 radius") {
    WorldState s = ep.state;
    const SceneObject& target = s.objects[1];
    s.gripper = {target.position.x - 0.9, target.position.y};
    WorldState after = apply_action(s, action(0.0, 0.0, 1.0));
    CHECK(after.holding == -1);
  }

  SUBCASE("grasp picks up the nearest bowl and it tracks the gripper") {
    WorldState s = ep.state;
    const SceneObject& target = s.objects[1];
    s.gripper = {target.position.x, target.position.y};
    WorldState held = apply_action(s, action(0.0, 0.0, 1.0));
    CHECK(held.holding == target.id);
    WorldState moved = apply_action(held, action(0.5, 0.0, 1.0));
    CHECK(moved.find(target.id)->position.x == target.position.x + 0.5);
  }

  SUBCASE("release drops onto the current cell center") {
    WorldState s = ep.state;
    const SceneObject& target = s.objects[1];
    s.gripper = {target.position.x, target.position.y};
    WorldState held = apply_action(s, action(0.0, 0.0, 1.0));
    WorldState carried = apply_action(held, action(0.4, 0.0, 1.0));
    WorldState dropped = apply_action(carried, action(0.0, 0.0, -1.0));
    CHECK(dropped.holding == -1);
    const SceneObject* obj = dropped.find(target.id);
    CHECK(obj->position.x == std::floor(carried.gripper.x) + 0.5);
    CHECK(obj->position.y == std::floor(carried.gripper.y) + 0.5);
  }

  SUBCASE("bad actions are rejected loudly") {
    CHECK_THROWS_AS(apply_action(ep.state, Tensor::zeros({6})), Error&);
    Tensor nan = zero_action();
    nan[0] = std::nan("");
    CHECK_THROWS_AS(apply_action(ep.state, nan), Error&);
  }
}

TEST_CASE("drawer mechanics") {
  Episode ep = reset(find_task("goal-open-single"), 2);
  const SceneObject& drawer = ep.state.objects[0];
  REQUIRE(drawer.kind == Kind::Drawer);
  CHECK_FALSE(drawer.open);

  WorldState s = ep.state;
  s.gripper = {drawer.position.x, drawer.position.y};
  WorldState after = apply_action(s, action(0.0, 0.0, 1.0));
  CHECK(after.find(drawer.id)->open);
  CHECK(after.holding == -1);  // the drawer itself is never held

  // Releasing over the open drawer drops the object into it.
  Episode put = reset(find_task("goal-bowl-in-drawer"), 2);
  const SceneObject* pdrawer = nullptr;
  const SceneObject* bowl = nullptr;
  for (const auto& o : put.state.objects)
    (o.kind == Kind::Drawer ? pdrawer : bowl) = &o;
  REQUIRE(pdrawer != nullptr);
  REQUIRE(bowl != nullptr);
  CHECK(pdrawer->open);
  WorldState t = put.state;
  t.gripper = {bowl->position.x, bowl->position.y};
  t = apply_action(t, action(0.0, 0.0, 1.0));
  CHECK(t.holding == bowl->id);
  t.gripper = {pdrawer->position.x, pdrawer->position.y};
  t.find(bowl->id)->position = t.gripper;
  t = apply_action(t, action(0.0, 0.0, -1.0));
  CHECK(t.holding == -1);
  CHECK(t.find(bowl->id)->position.x == pdrawer->position.x);
  CHECK(t.find(bowl->id)->position.y == pdrawer->position.y);
  CHECK(predicate_holds(t, put.subgoals));
}

TEST_CASE("expert emits the pinned primitive actions") {
  Episode ep = reset(find_task("spatial-bowl-left"), 5);
  const SceneObject* target = ep.state.find(ep.subgoals[0].target);
  REQUIRE(target != nullptr);

  // On top of the target, hand empty: grasp.
  ep.state.gripper = {target->position.x, target->position.y};
  Tensor grasp = expert_action(ep);
  CHECK(grasp[6] == 1.0);
  CHECK(grasp[0] == 0.0);
  CHECK(grasp[1] == 0.0);

  // Three cells to the left: full-speed positive x, nothing else.
  ep.state.gripper = {target->position.x - 3.0, target->position.y};
  Tensor drive = expert_action(ep);
  CHECK(drive[0] == 0.5);
  CHECK(drive[1] == 0.0);
  CHECK(drive[6] == -1.0);

  // Grasp decisions run on pixel-snapped positions: at true distance 0.7
  // (inside the physical radius) but snapped distance > 0.55, keep driving.
  ep.state.gripper = {target->position.x + 0.7, target->position.y};
  Tensor close = expert_action(ep);
  CHECK(close[6] == -1.0);
  CHECK(close[0] < 0.0);

  // Bound object vanished: loud failure.
  ep.state.objects.clear();
  CHECK_THROWS_AS(expert_action(ep), Error&);
}

TEST_CASE("render invariants") {
  // Empty table: just the claw-centered coordinate wash, neutral 0.5 at the
  // claw's own pixel column/row (default claw parks at (4,4) -> pixel 27).
  WorldState empty;
  Tensor img = render(empty);
  CHECK(img.shape == std::vector<int>{48, 48, 3});
  for (int r = 0; r < 48; ++r)
    for (int c = 0; c < 48; ++c) {
      CHECK(img.at(r, c, 0) == doctest::Approx(0.5 + 0.30 * (c - 27) / 48.0));
      CHECK(img.at(r, c, 1) == 0.0);
      CHECK(img.at(r, c, 2) == doctest::Approx(0.5 + 0.30 * (r - 27) / 48.0));
    }

  // Rendering is pure.
  Episode ep = reset(find_task("long-open-put-bowl"), 4);
  Tensor a = render(ep.state);
  Tensor b = render(ep.state);
  for (Eigen::Index i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= 0.0);
    CHECK(a[i] <= 1.0);
  }

  // Moving only the claw shifts the whole wash by an exact constant, changes
  // glyph brightness only inside glyph footprints, and moves green only at
  // the two cross footprints and the telemetry stripes.
  WorldState s1 = ep.state;
  WorldState s2 = s1;
  s2.gripper = {s1.gripper.x + 1.0, s1.gripper.y};
  Tensor i1 = render(s1), i2 = render(s2);
  auto in_cross = [](int row, int col, double gx, double gy) {
    int cc = int(std::lround(7.0 * gx - 1.0));
    int cr = int(std::lround(7.0 * gy - 1.0));
    for (int d = -1; d <= 1; ++d)
      for (int e = -1; e <= 1; ++e)
        if (row == cr + d && col == cc + e) return true;
    return false;
  };
  auto in_glyph = [&](int row, int col) {
    for (const auto& o : s1.objects) {
      int cc = int(std::lround(7.0 * o.position.x - 1.0));
      int cr = int(std::lround(7.0 * o.position.y - 1.0));
      if (std::abs(row - cr) <= 2 && std::abs(col - cc) <= 2) return true;
    }
    return false;
  };
  // +1 in world x is exactly +7 wash pixels, so red drops by 7 wash steps.
  double wash_shift = -0.30 * 7.0 / 48.0;
  for (int r = 0; r < 48; ++r)
    for (int c = 0; c < 48; ++c) {
      bool footprint = in_glyph(r, c) || in_cross(r, c, s1.gripper.x, s1.gripper.y) ||
                       in_cross(r, c, s2.gripper.x, s2.gripper.y);
      if (footprint) continue;
      CHECK(i2.at(r, c, 0) - i1.at(r, c, 0) == doctest::Approx(wash_shift));
      CHECK(i2.at(r, c, 2) == i1.at(r, c, 2));
      if (i1.at(r, c, 1) != i2.at(r, c, 1)) CHECK((r == 0 || c == 0));
    }

  // Telemetry stripes encode the continuous claw position linearly.
  for (int c = 0; c < 48; ++c)
    CHECK(i1.at(0, c, 1) == doctest::Approx(0.9 * s1.gripper.x / 7.0));
  for (int r = 0; r < 48; ++r)
    CHECK(i1.at(r, 0, 1) == doctest::Approx(0.9 * s1.gripper.y / 7.0));
  CHECK(i2.at(0, 5, 1) == doctest::Approx(0.9 * s2.gripper.x / 7.0));

  // Glyph brightness scales linearly with the object's displacement from
  // the claw, so pooled pixel mass per object class reads out the very
  // offset the driving command needs: the same red block further from the
  // claw is brighter on its even-parity pixels.
  auto lone_block = [](double x, double y) {
    WorldState w;
    w.objects.push_back({0, Kind::Block, Color::Red, Size::Small,
                         Material::Steel, {x, y}, false});
    w.gripper = {0.5, 0.5};
    return render(w);
  };
  Tensor left = lone_block(1.5, 3.5), right = lone_block(5.5, 3.5);
  int lc = int(std::lround(7.0 * 1.5 - 1.0));
  int rc = int(std::lround(7.0 * 5.5 - 1.0));
  int rowc = int(std::lround(7.0 * 3.5 - 1.0));
  double lr_red = left.at(rowc, lc, 0), rr_red = right.at(rowc, rc, 0);
  CHECK(rr_red > lr_red);
  CHECK(rr_red / lr_red == doctest::Approx((0.3 + 0.7 * (5.0 + 6.5) / 13.0) /
                                           (0.3 + 0.7 * (1.0 + 6.5) / 13.0)));

  // The claw writes green only: an object right under it keeps its red and
  // blue identity pixels, so the grasp decision never loses sight of the
  // target at the decisive moment.
  WorldState under;
  under.objects.push_back({0, Kind::Block, Color::Red, Size::Small,
                           Material::Steel, {3.5, 3.5}, false});
  under.gripper = {3.5, 3.5};
  Tensor with_claw = render(under);
  under.gripper = {0.5, 0.5};  // park the claw far away
  Tensor without = render(under);
  int bc = int(std::lround(7.0 * 3.5 - 1.0));
  CHECK(with_claw.at(bc, bc, 1) == 0.98);
  CHECK(with_claw.at(bc, bc, 0) > 0.5);  // red shows through the claw
  // (wash differs between the two renders, so compare only glyph pixels,
  // whose red channel is set by color times the offset modulation)
  CHECK(without.at(bc, bc, 0) > 0.5);

  // Open and holding glyphs differ so state is visible to the policy.
  WorldState hold = ep.state;
  hold.holding = ep.subgoals[1].target;
  hold.find(hold.holding)->position = hold.gripper;
  Tensor ih = render(hold);
  bool differs = false;
  for (Eigen::Index i = 0; i < ih.size() && !differs; ++i) differs = ih[i] != a[i];
  CHECK(differs);
}

TEST_CASE("image fixtures round-trip and match goldens") {
  Episode ep = reset(find_task("object-bowl-color"), 7);
  Tensor img = render(ep.state);

  std::string tmp = "fixture-roundtrip.img";
  write_image_fixture(tmp, img);
  Tensor back = read_image_fixture(tmp);
  REQUIRE(back.shape == img.shape);
  for (Eigen::Index i = 0; i < img.size(); ++i) CHECK(back[i] == img[i]);
  std::remove(tmp.c_str());

  std::string golden = data_path("object-bowl-color-seed7.img");
  if (regen_goldens()) {
    write_image_fixture(golden, img);
  }
  Tensor expected = read_image_fixture(golden);
  REQUIRE(expected.shape == img.shape);
  for (Eigen::Index i = 0; i < img.size(); ++i) CHECK(expected[i] == img[i]);

  CHECK_THROWS_AS(read_image_fixture("does-not-exist.img"), Error&);
  CHECK_THROWS_AS(write_image_fixture(tmp, Tensor::zeros({4, 4})), Error&);
}
