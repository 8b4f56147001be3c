#include <doctest.h>

#include "odssd/error.hpp"
#include "odssd/geometry.hpp"
#include "odssd/synth.hpp"

using namespace odssd;

TEST_SUITE("synth") {
  TEST_CASE("same seed and index give identical scenes") {
    SceneSpec spec;
    spec.max_objects = 3;
    spec.dy_jitter = 5;
    const auto a = generate_scene(spec, 42), b = generate_scene(spec, 42);
    CHECK(a.left == b.left);
    CHECK(a.right == b.right);
    CHECK(a.objects == b.objects);
    CHECK(a.dense_disparity.pixels == b.dense_disparity.pixels);
    const auto c = generate_scene(spec, 43);
    CHECK_FALSE(c.left == a.left);
  }

  TEST_CASE("right box is the left box moved by the disparity") {
    PlacedObject o;
    o.x = 100;
    o.y = 100;
    o.width = 50;
    o.height = 40;
    o.dx = 20;
    CHECK(o.left_box() == BBox{100, 100, 150, 140});
    CHECK(o.right_box() == BBox{80, 100, 130, 140});
  }

  TEST_CASE("emitted boxes agree with geometry") {
    SceneSpec spec;
    spec.max_objects = 3;
    spec.dy_jitter = 8;
    for (std::uint64_t i = 0; i < 200; ++i) {
      const auto layout = sample_layout(spec, i);
      const auto s = render_scene(layout);
      CHECK(s.left.width == spec.view_width);
      CHECK(s.left.height == spec.view_height);
      for (const auto& o : s.objects) {
        const auto d = object_disparity(o.left_box, o.right_box, spec.view_width, spec.view_height);
        REQUIRE(d == o.disparity);
        CHECK(o.disparity.dx >= spec.min_disparity);
        CHECK(o.disparity.dx <= spec.max_disparity);
        CHECK(std::abs(o.disparity.dy) <= spec.dy_jitter);
      }
    }
  }

  TEST_CASE("dense disparity marks object pixels") {
    SceneSpec spec;
    const auto s = generate_scene(spec, 3);
    REQUIRE(s.objects.size() == 1);
    const auto& b = s.objects[0].left_box;
    const int cx = static_cast<int>(b.cx()), cy = static_cast<int>(b.cy());
    const auto raw = s.dense_disparity.pixels[static_cast<std::size_t>(cy * s.dense_disparity.width + cx)];
    CHECK(raw == static_cast<std::uint16_t>(s.objects[0].disparity.dx * 256));
  }

  TEST_CASE("shifting the right view") {
    SceneSpec spec;
    spec.max_disparity = 10;
    const auto layout = sample_layout(spec, 5);
    const auto moved = shift_right_view_object(layout, 0, 7);
    const auto a = render_scene(layout), b = render_scene(moved);
    CHECK(a.left == b.left);
    CHECK_FALSE(a.right == b.right);
    CHECK(b.objects[0].disparity.dx == a.objects[0].disparity.dx + 7);
    CHECK(render_scene(shift_right_view_object(layout, 0, 0)).right == a.right);
    CHECK_THROWS_AS(shift_right_view_object(layout, 0, 1000), InvalidInput);
    CHECK_THROWS_AS(shift_right_view_object(layout, 9, 1), InvalidInput);
  }

  TEST_CASE("spec validation") {
    SceneSpec spec;
    spec.max_disparity = 100;
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec = {};
    spec.dy_jitter = 20;
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
    spec = {};
    spec.min_objects = 3;
    spec.max_objects = 2;
    CHECK_THROWS_AS(spec.validate(), InvalidInput);
  }
}
