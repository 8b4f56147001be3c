#include <doctest.h>

#include <cmath>

#include "odssd/error.hpp"
#include "odssd/model.hpp"
#include "odssd/rng.hpp"
#include "odssd/weights.hpp"
#include "oracles.hpp"

using namespace odssd;

TEST_SUITE("model") {
  TEST_CASE("head grids and prior counts") {
    CHECK(head_grids(ModelConfig::stereo640()) == std::vector<GridSize>{{20, 40}, {10, 20}, {5, 10}, {3, 5}});
    CHECK(head_grids(ModelConfig::stereo320()) == std::vector<GridSize>{{10, 20}, {5, 10}, {3, 5}, {2, 3}});
    CHECK(prior_count(ModelConfig::stereo640()) == 6390);
    CHECK(prior_count(ModelConfig::stereo320()) == 1626);
  }

  TEST_CASE("priors") {
    const auto cfg = ModelConfig::stereo640();
    const auto priors = generate_priors(cfg);
    REQUIRE(priors.size() == 6390);
    CHECK(priors[0].cx == doctest::Approx(0.5 / 40));
    CHECK(priors[0].cy == doctest::Approx(0.5 / 20));
    CHECK(priors[0].w == doctest::Approx(0.1));
    CHECK(priors[1].w == doctest::Approx(std::sqrt(0.1 * (0.1 + 0.8 / 3))));
    CHECK(priors[2].w / priors[2].h == doctest::Approx(2.0));
    CHECK(priors[5].h / priors[5].w == doctest::Approx(3.0));
    // Second cell of head 0 moves one column right.
    CHECK(priors[6].cx == doctest::Approx(1.5 / 40));
    // First prior of head 1.
    CHECK(priors[800 * 6].cx == doctest::Approx(0.5 / 20));
    for (const auto& p : priors) {
      CHECK(p.cx >= 0);
      CHECK(p.cx <= 1);
      CHECK(p.w >= 0);
      CHECK(p.w <= 1);
      CHECK(p.h <= 1);
    }
  }

  TEST_CASE("640 forward shapes") {
    const Model<float> model(ModelConfig::stereo640(), 3);
    const auto out = model.forward(nullptr, Tensor<float>({1, 3, 640, 640}, 0.25f));
    CHECK(out.tap_shape == Shape{1, 256, 40, 40});
    CHECK(out.folded_tap_shape == Shape{1, 512, 20, 40});
    CHECK(out.grids == std::vector<GridSize>{{20, 40}, {10, 20}, {5, 10}, {3, 5}});
    CHECK(out.confidences.shape() == Shape{1, 6390, 5});
    CHECK(out.locations.shape() == Shape{1, 6390, 6});
    CHECK_THROWS_AS(model.forward(nullptr, Tensor<float>({1, 3, 320, 320})), ShapeError);
  }

  TEST_CASE("zero weights give zero outputs") {
    Model<float> model(ModelConfig::toy(), 1);
    model.fill_parameters(0.0f);
    const auto out = model.forward(nullptr, Tensor<float>({2, 3, 160, 160}, 0.7f));
    for (float v : out.confidences.values()) REQUIRE(v == 0.0f);
    for (float v : out.locations.values()) REQUIRE(v == 0.0f);
  }

  TEST_CASE("parameter count matches the per-layer formulas") {
    CHECK(oracle::fire_params(64, 16, 64, 64) == 11408);
    CHECK(oracle::base_params() == 541760);
    for (const auto& cfg : {ModelConfig::stereo640(), ModelConfig::voc_reference640(), ModelConfig::stereo320()}) {
      const Model<float> m(cfg, 1);
      CHECK(m.parameter_count() == oracle::model_params(cfg.num_classes()));
      std::int64_t registry = 0;
      for (const auto& p : m.parameters()) registry += p.tensor.numel();
      CHECK(registry == m.parameter_count());
      CHECK(m.parameter_count() >= 1250000);
      CHECK(m.parameter_count() <= 1600000);
    }
  }

  TEST_CASE("channel arithmetic that does not close is refused") {
    auto cfg = ModelConfig::toy();
    cfg.width_multiplier = 0.33;
    CHECK_THROWS_AS(Model<float>(cfg, 1), ShapeError);
  }

  TEST_CASE("config json round trip and validation") {
    auto cfg = ModelConfig::toy();
    cfg.score_threshold = 0.31;
    CHECK(ModelConfig::from_json(cfg.to_json()) == cfg);
    cfg.priors_per_cell = 5;
    CHECK_THROWS_AS(cfg.validate(), InvalidInput);
  }
}

TEST_SUITE("weights") {
  TEST_CASE("fp32 round trip is bit exact") {
    const Model<float> m(ModelConfig::toy(), 9);
    const auto blob = serialize_weights(m, WeightPrecision::Float32);
    const auto back = deserialize_weights(blob);
    CHECK(back.config() == m.config());
    REQUIRE(back.parameters().size() == m.parameters().size());
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      const auto a = m.parameters()[i].tensor.values(), b = back.parameters()[i].tensor.values();
      CHECK(std::equal(a.begin(), a.end(), b.begin(), b.end()));
    }
    SplitMix64 rng(2);
    Tensor<float> x({1, 3, 160, 160});
    for (auto& v : x.values()) v = static_cast<float>(rng.uniform(-1, 1));
    const auto o1 = m.forward(nullptr, x), o2 = back.forward(nullptr, x);
    CHECK(std::equal(o1.locations.values().begin(), o1.locations.values().end(), o2.locations.values().begin()));
    CHECK(std::equal(o1.confidences.values().begin(), o1.confidences.values().end(),
                     o2.confidences.values().begin()));
  }

  TEST_CASE("int8 error is bounded by half a step") {
    const Model<float> m(ModelConfig::toy(), 4);
    const auto back = deserialize_weights(serialize_weights(m, WeightPrecision::Int8));
    for (std::size_t i = 0; i < m.parameters().size(); ++i) {
      const auto a = m.parameters()[i].tensor.values(), b = back.parameters()[i].tensor.values();
      float amax = 0;
      for (float v : a) amax = std::max(amax, std::abs(v));
      const double scale = amax > 0 ? amax / 127.0 : 1.0;
      for (std::size_t k = 0; k < a.size(); ++k) REQUIRE(std::abs(a[k] - b[k]) <= scale / 2 + 1e-7);
    }
  }

  TEST_CASE("sizes scale with the parameter count") {
    const Model<float> m(ModelConfig::toy(), 1);
    const auto s = summarize_weights(m);
    CHECK(s.parameters == m.parameter_count());
    CHECK(s.fp32_bytes > 4 * static_cast<std::size_t>(s.parameters));
    CHECK(s.fp32_bytes < 4 * static_cast<std::size_t>(s.parameters) + 20000);
    CHECK(s.int8_bytes > static_cast<std::size_t>(s.parameters));
    CHECK(s.int8_bytes < static_cast<std::size_t>(s.parameters) + 20000);
  }

  TEST_CASE("corruption is detected") {
    const Model<float> m(ModelConfig::toy(), 1);
    auto blob = serialize_weights(m, WeightPrecision::Float32);
    auto flipped = blob;
    flipped[flipped.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_weights(flipped), FormatError);
    auto cut = blob;
    cut.resize(cut.size() - 9);
    CHECK_THROWS_AS(deserialize_weights(cut), FormatError);
    CHECK_THROWS_AS(deserialize_weights(std::vector<std::uint8_t>{'x', 'y'}), FormatError);
    CHECK(parse_precision("int8") == WeightPrecision::Int8);
    CHECK_THROWS_AS(parse_precision("fp16"), InvalidInput);
  }
}
