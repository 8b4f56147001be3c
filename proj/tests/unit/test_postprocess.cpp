#include <doctest.h>

#include <cmath>
#include <sstream>

#include "odssd/error.hpp"
#include "odssd/postprocess.hpp"
#include "odssd/rng.hpp"
#include "oracles.hpp"

using namespace odssd;

TEST_SUITE("postprocess") {
  TEST_CASE("nms basics") {
    const std::vector<BBox> one{{0, 0, 10, 10}};
    CHECK(nms(one, std::vector<double>{0.3}, 0.45, 10) == std::vector<std::size_t>{0});
    const std::vector<BBox> twins{{0, 0, 10, 10}, {0, 0, 10, 10}};
    CHECK(nms(twins, std::vector<double>{0.3, 0.9}, 0.45, 10) == std::vector<std::size_t>{1});
    CHECK(nms(twins, std::vector<double>{0.5, 0.5}, 0.45, 10) == std::vector<std::size_t>{0});
    CHECK(nms({}, {}, 0.45, 10).empty());
  }

  TEST_CASE("nms against the O(n^2) oracle") {
    SplitMix64 rng(17);
    for (int trial = 0; trial < 2000; ++trial) {
      const auto n = static_cast<std::size_t>(rng.between(0, 60));
      std::vector<BBox> boxes(n);
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) {
        boxes[i] = oracle::random_box(rng, 50, 50, trial % 2 == 0);
        scores[i] = trial % 3 == 0 ? std::round(rng.unit() * 5) / 5 : rng.unit();
      }
      const double thr = rng.uniform(0.1, 0.9);
      const auto top_k = static_cast<std::size_t>(rng.between(1, 70));
      REQUIRE(nms(boxes, scores, thr, top_k) == oracle::nms(boxes, scores, thr, top_k));
    }
  }

  TEST_CASE("softmax") {
    const std::vector<float> row{1, 2, 3};
    const auto p = softmax(row);
    double s = 0;
    for (double v : p) s += v;
    CHECK(s == doctest::Approx(1.0));
    CHECK(p[2] / p[1] == doctest::Approx(std::exp(1.0)));
    const std::vector<float> big{1000, 1000};
    CHECK(softmax(big)[0] == doctest::Approx(0.5));
  }

  TEST_CASE("one dominant prior reads out its disparity") {
    auto cfg = ModelConfig::stereo640();
    const auto priors = generate_priors(cfg);
    const auto P = static_cast<std::int64_t>(priors.size());
    const auto K = cfg.num_classes();
    Tensor<float> conf({1, P, K}, 0.0f), loc({1, P, 6}, 0.0f);
    for (std::int64_t p = 0; p < P; ++p) conf.values()[static_cast<std::size_t>(p * K)] = 10.0f;  // background
    const std::size_t chosen = 6 * 215 + 1;
    conf.values()[chosen * K] = 0.0f;
    conf.values()[chosen * K + 1] = 10.0f;  // car
    const auto& pr = priors[chosen];
    loc.values()[chosen * 6 + 4] = static_cast<float>(33.0 / cfg.view_width / pr.w / cfg.center_variance);
    loc.values()[chosen * 6 + 5] = static_cast<float>(1.0 / cfg.view_height / pr.h / cfg.center_variance);
    const auto dets = detect(conf, loc, priors, cfg);
    REQUIRE(dets.size() == 1);
    REQUIRE(dets[0].size() == 1);
    const auto& d = dets[0][0];
    CHECK(d.class_id == 1);
    CHECK(std::lround(d.dx) == 33);
    CHECK(std::lround(d.dy) == 1);
    CHECK(d.right_box().xmin == doctest::Approx(d.left_box.xmin - d.dx));

    cfg.score_threshold = 0.99999;
    CHECK(detect(conf, loc, priors, cfg)[0].empty());
    CHECK_THROWS_AS(detect(conf, Tensor<float>({1, P, 4}), priors, cfg), ShapeError);
  }

  TEST_CASE("detection records round trip") {
    std::vector<DetectionRecord> recs{{"a", "car", {1, 0.123456789, {1.5, 2, 30.25, 40}, 12.125, -0.5}},
                                      {"b", "person", {2, 0.5, {0, 0, 1, 1}, 1.0 / 3.0, 0}}};
    std::stringstream ss;
    write_detection_records(ss, recs);
    const auto back = read_detection_records(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[0].image_id == "a");
    CHECK(back[0].detection.score == recs[0].detection.score);
    CHECK(back[1].detection.dx == recs[1].detection.dx);
    CHECK(back[0].detection.left_box == recs[0].detection.left_box);
    std::stringstream bad("a\tcar\tnot-a-number\t1\t2\t3\t4\t5\t6\n");
    CHECK_THROWS_AS(read_detection_records(bad), FormatError);
  }
}
