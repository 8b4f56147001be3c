#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>

#include <unistd.h>

#include "example_annotation.hpp"
#include "odssd/annotation.hpp"
#include "odssd/error.hpp"
#include "odssd/rng.hpp"
#include "oracles.hpp"

using namespace odssd;
namespace fs = std::filesystem;

namespace {

std::string replace(std::string s, const std::string& from, const std::string& to) {
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

std::string schema_element(const std::string& xml) {
  try {
    parse_annotation(xml);
  } catch (const SchemaError& e) {
    return e.element();
  }
  return "";
}

AnnotationDoc random_doc(SplitMix64& rng) {
  AnnotationDoc doc;
  doc.filename = "scene_" + std::to_string(rng.below(1000)) + ".png";
  doc.folder = "f";
  doc.width = static_cast<int>(rng.between(50, 400));
  const int vh = static_cast<int>(rng.between(20, 200));
  doc.height = 2 * vh;
  const auto n = rng.between(0, 4);
  for (int i = 0; i < n; ++i) {
    AnnotatedObject o;
    o.name = i % 2 ? "car" : "person";
    o.bndbox = oracle::random_box(rng, doc.width, vh, rng.below(2) == 0);
    const auto r = oracle::random_box(rng, doc.width, vh, rng.below(2) == 0);
    o.bndbox2 = r.translated(0, vh);
    o.delta = object_disparity(o.bndbox, r, doc.width, vh);
    if (rng.below(4) == 0) o.delta.dx += 3.25;  // inconsistent on purpose
    doc.objects.push_back(o);
  }
  return doc;
}

// Field-by-field comparison, ignoring the non-serialized warnings.
void check_same(const AnnotationDoc& a, const AnnotationDoc& b) {
  CHECK(a.folder == b.folder);
  CHECK(a.filename == b.filename);
  CHECK(a.path == b.path);
  CHECK(a.database == b.database);
  CHECK(a.width == b.width);
  CHECK(a.height == b.height);
  CHECK(a.depth == b.depth);
  CHECK(a.segmented == b.segmented);
  REQUIRE(a.objects.size() == b.objects.size());
  for (std::size_t i = 0; i < a.objects.size(); ++i) CHECK(a.objects[i] == b.objects[i]);
  CHECK(a.extra_elements == b.extra_elements);
}

}  // namespace

TEST_SUITE("annotation") {
  TEST_CASE("example document") {
    const auto doc = parse_annotation(kExampleXml);
    CHECK(doc.width == 1242);
    CHECK(doc.height == 750);
    CHECK(doc.view_height() == 375);
    CHECK(doc.filename == "kitti_stacked_000008_10.jpg");
    REQUIRE(doc.objects.size() == 1);
    const auto& o = doc.objects[0];
    CHECK(o.name == "car");
    CHECK(o.bndbox == BBox{325, 192, 416, 261});
    CHECK(o.bndbox2 == BBox{297, 569, 388, 638});
    CHECK(o.delta == ObjectDisparity{28.0, -2.0});
    CHECK(doc.warnings.empty());

    const auto t = doc_to_targets(doc);
    REQUIRE(t.objects.size() == 1);
    CHECK(t.objects[0].right_box == BBox{297, 194, 388, 263});
    CHECK(t.objects[0].disparity == ObjectDisparity{28.0, -2.0});
    CHECK(t.warnings.empty());
  }

  TEST_CASE("writer keeps the canonical element order and decimal deltas") {
    const auto xml = write_annotation(parse_annotation(kExampleXml));
    const std::vector<std::string> order{"<folder>", "<filename>", "<path>",   "<source>", "<size>",  "<segmented>",
                                         "<object>", "<name>",     "<pose>",   "<truncated>", "<difficult>",
                                         "<bndbox>", "<delta>",    "<bndbox2>"};
    std::size_t at = 0;
    for (const auto& tag : order) {
      const auto pos = xml.find(tag, at);
      REQUIRE_MESSAGE(pos != std::string::npos, tag);
      at = pos;
    }
    CHECK(xml.find("<dx>28.0</dx>") != std::string::npos);
    CHECK(xml.find("<dy>-2.0</dy>") != std::string::npos);
    CHECK(xml.find("<xmin>325</xmin>") != std::string::npos);
  }

  TEST_CASE("round trip over random documents") {
    SplitMix64 rng(21);
    for (int i = 0; i < 300; ++i) {
      const auto doc = random_doc(rng);
      const auto back = parse_annotation(write_annotation(doc));
      check_same(doc, back);
      // Warnings come back exactly for the tampered objects.
      std::size_t tampered = 0;
      for (const auto& o : doc.objects) {
        const auto d = object_disparity(o.bndbox, o.bndbox2.translated(0, -doc.view_height()), doc.width,
                                        doc.view_height());
        if (std::abs(d.dx - o.delta.dx) > 0.5 || std::abs(d.dy - o.delta.dy) > 0.5) ++tampered;
      }
      CHECK(back.warnings.size() == tampered);
      // doc_to_targets keeps the stored delta and moves the right box.
      const auto t = doc_to_targets(back);
      REQUIRE(t.objects.size() == doc.objects.size());
      for (std::size_t k = 0; k < doc.objects.size(); ++k) {
        CHECK(t.objects[k].right_box == doc.objects[k].bndbox2.translated(0, -doc.view_height()));
        CHECK(t.objects[k].disparity == doc.objects[k].delta);
      }
    }
  }

  TEST_CASE("unknown elements survive a round trip") {
    auto xml = replace(kExampleXml, "<segmented>0</segmented>", "<segmented>0</segmented><note a=\"1\">hi</note>");
    xml = replace(xml, "<difficult>0</difficult>", "<difficult>0</difficult><occluded>2</occluded>");
    const auto doc = parse_annotation(xml);
    REQUIRE(doc.extra_elements.size() == 1);
    REQUIRE(doc.objects[0].extra_elements.size() == 1);
    check_same(doc, parse_annotation(write_annotation(doc)));
  }

  TEST_CASE("inconsistent delta is kept with a warning") {
    const auto doc = parse_annotation(replace(kExampleXml, "<dx>28.0</dx>", "<dx>31.0</dx>"));
    CHECK(doc.objects[0].delta.dx == 31.0);
    CHECK(doc.warnings.size() == 1);
    CHECK(doc_to_targets(doc).warnings.size() == 1);
    // Within half a pixel is fine.
    CHECK(parse_annotation(replace(kExampleXml, "<dx>28.0</dx>", "<dx>28.5</dx>")).warnings.empty());
  }

  TEST_CASE("schema errors name the element") {
    CHECK(schema_element("<annotation><folder>") == "annotation");
    CHECK(schema_element(std::regex_replace(std::string(kExampleXml), std::regex("<bndbox2>[\\s\\S]*</bndbox2>"), "")) ==
          "object[0]/bndbox2");
    CHECK(schema_element(std::regex_replace(std::string(kExampleXml), std::regex("<delta>[\\s\\S]*</delta>"), "")) ==
          "object[0]/delta");
    CHECK(schema_element(std::regex_replace(std::string(kExampleXml), std::regex("<size>[\\s\\S]*</size>"), "")) == "size");
    // bndbox2 in the top half.
    CHECK(schema_element(replace(replace(kExampleXml, "<ymin>569</ymin>", "<ymin>169</ymin>"), "<ymax>638</ymax>",
                                 "<ymax>238</ymax>")) == "object[0]/bndbox2");
    // Duplicated coordinate.
    CHECK(schema_element(replace(kExampleXml, "<ymax>261</ymax>", "<ymin>261</ymin>")).find("ymin") !=
          std::string::npos);
    CHECK(schema_element(replace(kExampleXml, "<xmin>325</xmin>", "<xmin>abc</xmin>")).find("xmin") !=
          std::string::npos);
    CHECK(schema_element(replace(kExampleXml, "<height>750</height>", "<height>751</height>")) == "size/height");
  }

  TEST_CASE("writer refuses invalid documents") {
    auto doc = parse_annotation(kExampleXml);
    doc.objects[0].bndbox2 = {1, 1, 2, 2};
    CHECK_THROWS_AS(write_annotation(doc), SchemaError);
  }

  TEST_CASE("stack and unstack") {
    Image a(1, 1, 1, 7), b(1, 1, 1, 9);
    const auto s = stack_pair(a, b);
    CHECK(s.width == 1);
    CHECK(s.height == 2);
    CHECK(s.pixels == std::vector<std::uint8_t>{7, 9});

    SplitMix64 rng(4);
    Image l(640, 320, 3), r(640, 320, 3);
    for (auto& p : l.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    for (auto& p : r.pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const auto st = stack_pair(l, r);
    CHECK(st.width == 640);
    CHECK(st.height == 640);
    const auto [l2, r2] = unstack(st);
    CHECK(l2 == l);
    CHECK(r2 == r);

    try {
      stack_pair(Image(4, 3, 3), Image(4, 2, 3));
      FAIL("expected InvalidInput");
    } catch (const InvalidInput& e) {
      const std::string msg = e.what();
      CHECK(msg.find("4x3x3") != std::string::npos);
      CHECK(msg.find("4x2x3") != std::string::npos);
    }
  }

  TEST_CASE("doc_from_objects") {
    StereoObject o{"car", {10, 10, 30, 30}, {5, 10, 25, 30}, {5, 0}};
    const auto doc = doc_from_objects("x.png", 100, 50, {o});
    CHECK(doc.height == 100);
    CHECK(doc.objects[0].bndbox2 == BBox{5, 60, 25, 80});
    CHECK(doc.warnings.empty());
  }

  TEST_CASE("dataset index") {
    const auto dir = fs::temp_directory_path() / ("odssd_index_" + std::to_string(::getpid()));
    fs::create_directories(dir / "img");
    std::ofstream(dir / "img" / "a.png") << "x";
    std::ofstream(dir / "img" / "b.png") << "x";
    {
      std::ofstream f(dir / "index.tsv");
      f << "img/a.png\tann/a.xml\tKitti\n" << "img/b.png\tann/b.xml\tsynthetic\n";
    }
    const auto idx = read_dataset_index(dir / "index.tsv");
    REQUIRE(idx.entries.size() == 2);
    CHECK(idx.entries[0].image == dir / "img" / "a.png");
    CHECK(idx.find("b") != nullptr);
    CHECK(idx.find("c") == nullptr);

    write_dataset_index(dir / "copy.tsv", idx);
    const auto again = read_dataset_index(dir / "copy.tsv");
    REQUIRE(again.entries.size() == 2);
    CHECK(again.entries[1].image == idx.entries[1].image);
    CHECK(again.entries[1].source == "synthetic");

    std::ofstream(dir / "bad.tsv") << "img/a.png\tann/a.xml\tMars\n";
    CHECK_THROWS_AS(read_dataset_index(dir / "bad.tsv"), FormatError);
    std::ofstream(dir / "dup.tsv") << "img/a.png\tx.xml\tKitti\nimg/a.png\ty.xml\tKitti\n";
    CHECK_THROWS_AS(read_dataset_index(dir / "dup.tsv"), FormatError);
    std::ofstream(dir / "missing.tsv") << "img/zz.png\tx.xml\tKitti\n";
    CHECK_THROWS_AS(read_dataset_index(dir / "missing.tsv"), IoError);
    IndexLoadOptions lenient;
    lenient.require_images = false;
    CHECK(read_dataset_index(dir / "missing.tsv", lenient).entries.size() == 1);
    fs::remove_all(dir);
  }
}
