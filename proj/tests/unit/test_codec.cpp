#include <doctest.h>

#include <cmath>

#include "odssd/annotation.hpp"
#include "odssd/codec.hpp"
#include "odssd/error.hpp"
#include "odssd/gradcheck.hpp"
#include "odssd/rng.hpp"
#include "odssd/synth.hpp"
#include "odssd/train.hpp"
#include "oracles.hpp"

using namespace odssd;

namespace {

Prior random_prior(SplitMix64& rng) {
  return {rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), rng.uniform(0.02, 1.0), rng.uniform(0.02, 1.0)};
}

}  // namespace

TEST_SUITE("codec") {
  TEST_CASE("encode examples") {
    const CodecParams params{100, 100, 0.1, 0.2};
    const Prior p{0.5, 0.5, 0.2, 0.2};
    const auto same = encode({40, 40, 60, 60}, {0, 0}, p, params);
    CHECK(same.cx == doctest::Approx(0).epsilon(1e-12));
    CHECK(same.w == doctest::Approx(0).epsilon(1e-12));
    CHECK(same.dx == 0.0);
    CHECK(encode({45, 40, 65, 60}, {0, 0}, p, params).cx == doctest::Approx(2.5));
    LocationVector doubled{0, 0, std::log(2.0) / 0.2, 0, 0, 0};
    CHECK(decode(doubled, p, params).left_box.width() == doctest::Approx(40.0));
  }

  TEST_CASE("zero locations decode exactly to the priors") {
    for (const auto& cfg : {ModelConfig::stereo640(), ModelConfig::stereo320(), ModelConfig::toy()}) {
      const auto priors = generate_priors(cfg);
      const auto params = CodecParams::from(cfg);
      const std::vector<float> zeros(priors.size() * 6, 0.0f);
      const auto dec = decode_locations<float>(zeros, priors, params);
      for (std::size_t i = 0; i < priors.size(); ++i) {
        const auto b = prior_to_box(priors[i]);
        REQUIRE(dec[i].left_box == BBox{b.xmin * params.view_width, b.ymin * params.view_height,
                                        b.xmax * params.view_width, b.ymax * params.view_height});
        REQUIRE(dec[i].dx == 0.0);
        REQUIRE(dec[i].dy == 0.0);
      }
    }
  }

  TEST_CASE("round trip on 10^4 random pairs") {
    SplitMix64 rng(99);
    const CodecParams params{640, 320, 0.1, 0.2};
    double worst = 0;
    for (int i = 0; i < 10000; ++i) {
      const auto p = random_prior(rng);
      const double x0 = rng.uniform(0, 600), y0 = rng.uniform(0, 290);
      const BBox g{x0, y0, x0 + rng.uniform(1, 640 - x0), y0 + rng.uniform(1, 320 - y0)};
      const ObjectDisparity d{rng.uniform(-160, 160), rng.uniform(-20, 20)};
      const auto back = decode(encode(g, d, p, params), p, params);
      worst = std::max({worst, std::abs(back.left_box.xmin - g.xmin), std::abs(back.left_box.ymin - g.ymin),
                        std::abs(back.left_box.xmax - g.xmax), std::abs(back.left_box.ymax - g.ymax),
                        std::abs(back.dx - d.dx), std::abs(back.dy - d.dy)});
      CHECK_FALSE(back.clamped);
    }
    CHECK(worst < 1e-5);
  }

  TEST_CASE("overflowing size exponents are clamped and flagged") {
    const auto d = decode({0, 0, 1e6, 0, 0, 0}, {0.5, 0.5, 0.1, 0.1}, {640, 320, 0.1, 0.2});
    CHECK(d.clamped);
    CHECK(std::isfinite(d.left_box.xmax));
  }

  TEST_CASE("prior matching against the exhaustive matcher") {
    const auto cfg = ModelConfig::stereo320();
    const auto priors = generate_priors(cfg);
    SplitMix64 rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
      std::vector<BBox> gts;
      const auto n = rng.between(0, 5);
      for (int k = 0; k < n; ++k) {
        auto b = oracle::random_box(rng, 1, 1, false);
        if (rng.below(10) == 0) b.xmax = b.xmin;  // degenerate
        if (rng.below(10) == 0 && !priors.empty()) b = oracle::prior_box(priors[rng.below(priors.size())]);
        gts.push_back(b);
      }
      const double thr = trial % 2 ? 0.5 : 0.4;
      const auto got = match_priors(gts, priors, thr);
      const auto want = oracle::match_priors(gts, priors, thr);
      REQUIRE(got.gt_index == want);
      for (auto e : got.excluded) CHECK(gts[e].area() == 0.0);
    }
  }

  TEST_CASE("gt equal to a prior makes it positive; no gt leaves all background") {
    const auto cfg = ModelConfig::stereo320();
    const auto priors = generate_priors(cfg);
    const std::vector<BBox> one{prior_to_box(priors[123])};
    CHECK(match_priors(one, priors, 0.5).gt_index[123] == 0);
    const auto t = encode_targets({}, priors, cfg);
    CHECK(t.positives() == 0);
    CHECK_THROWS_AS(encode_targets(std::vector<StereoObject>{{"zebra", {1, 1, 9, 9}, {1, 1, 9, 9}, {}}}, priors, cfg),
                    InvalidInput);
    const auto degenerate =
        encode_targets(std::vector<StereoObject>{{"car", {5, 5, 5, 9}, {5, 5, 5, 9}, {}}}, priors, cfg);
    CHECK(degenerate.warnings.size() == 1);
    CHECK(degenerate.positives() == 0);
  }

  TEST_CASE("hard-negative mining against the sort oracle") {
    SplitMix64 rng(13);
    for (int trial = 0; trial < 1000; ++trial) {
      const auto n = static_cast<std::size_t>(rng.between(1, 300));
      std::vector<double> loss(n);
      std::vector<int> labels(n);
      for (std::size_t i = 0; i < n; ++i) {
        // Coarse values force ties.
        loss[i] = std::round(rng.uniform(0, 20)) / 4;
        labels[i] = rng.below(8) == 0 ? static_cast<int>(rng.between(1, 4)) : 0;
      }
      const double ratio = trial % 3 == 0 ? 3.0 : rng.uniform(0, 5);
      REQUIRE(hard_negative_mask(loss, labels, ratio) == oracle::hard_negatives(loss, labels, ratio));
    }
  }

  TEST_CASE("loss parts") {
    const auto cfg = ModelConfig::stereo320();
    const auto priors = generate_priors(cfg);
    const auto P = static_cast<std::int64_t>(priors.size());
    const std::vector<StereoObject> objs{{"car", {40, 30, 120, 90}, {20, 30, 100, 90}, {20, 0}},
                                         {"person", {200, 50, 230, 150}, {190, 51, 220, 151}, {10, -1}}};
    const std::vector<EncodedTargets> targets{encode_targets(objs, priors, cfg)};
    const auto pos = targets[0].positives();
    REQUIRE(pos > 0);
    Tensor<double> conf({1, P, cfg.num_classes()}, 0.0), loc({1, P, 6}, 0.0);
    for (std::int64_t p = 0; p < P; ++p) {
      const auto& v = targets[0].locations[static_cast<std::size_t>(p)];
      const double row[6] = {v.cx, v.cy, v.w, v.h, v.dx, v.dy};
      for (int d = 0; d < 6; ++d) loc.values()[static_cast<std::size_t>(p * 6 + d)] = row[d];
    }
    const auto r = multibox_disparity_loss<double>(nullptr, conf, loc, targets, 3.0);
    CHECK(r.regression == doctest::Approx(0.0));
    const double counted = static_cast<double>(pos + std::min<std::int64_t>(3 * pos, P - pos));
    CHECK(r.classification == doctest::Approx(std::log(cfg.num_classes()) * counted / static_cast<double>(pos)));
    CHECK(r.positives == pos);

    const std::vector<EncodedTargets> empty{encode_targets({}, priors, cfg)};
    const auto z = multibox_disparity_loss<double>(nullptr, conf, loc, empty, 3.0);
    CHECK(z.total.item() == 0.0);
    CHECK_FALSE(z.warning.empty());
    CHECK_THROWS_AS(multibox_disparity_loss<double>(nullptr, Tensor<double>({1, P - 1, cfg.num_classes()}), loc, targets, 3.0),
                    ShapeError);
  }

  TEST_CASE("end-to-end loss gradient") {
    auto cfg = ModelConfig::toy();
    cfg.width_multiplier = 0.125;
    Model<double> model(cfg, 3);
    // Random biases keep ReLUs away from their kinks.
    SplitMix64 rng(9);
    for (auto& p : model.parameters()) {
      if (p.tensor.rank() == 1)
        for (auto& v : p.tensor.values()) v = rng.uniform(-0.1, 0.1);
    }
    const auto priors = generate_priors(cfg);
    SceneSpec spec;
    std::vector<EncodedTargets> targets;
    std::vector<Image> images;
    for (int i = 0; i < 2; ++i) {
      const auto s = generate_scene(spec, static_cast<std::uint64_t>(i));
      images.push_back(stack_pair(s.left, s.right));
      targets.push_back(encode_targets(s.objects, priors, cfg));
    }
    const auto xf = images_to_tensor(images);
    Tensor<double> x(xf.shape());
    for (std::int64_t i = 0; i < xf.numel(); ++i) x.values()[i] = xf.values()[i];
    auto params = model.parameter_tensors();
    LossFn f = [&](Graph<double>* g) {
      const auto out = model.forward(g, x);
      return multibox_disparity_loss<double>(g, out.confidences, out.locations, targets, 3.0, 3.0).total;
    };
    const auto rep = grad_check_fn(f, params, 1e-3, 3);
    CAPTURE(rep.worst);
    CHECK(rep.passed);
    CHECK(rep.max_rel_error < 1e-3);
  }
}
