#include <doctest.h>

#include <filesystem>
#include <thread>

#include <httplib.h>
#include <unistd.h>

#include "example_annotation.hpp"
#include "json.hpp"
#include "odssd/annotation.hpp"
#include "odssd/image.hpp"
#include "odssd/service.hpp"

using namespace odssd;
namespace fs = std::filesystem;

namespace {

struct Fixture {
  fs::path dir;
  DatasetIndex index;

  Fixture() {
    dir = fs::temp_directory_path() / ("odssd_service_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir / "images");
    for (const char* id : {"pair_a", "pair_b"}) {
      write_png(dir / "images" / (std::string(id) + ".png"), Image(1242, 750, 3, 90));
      index.entries.push_back({dir / "images" / (std::string(id) + ".png"), dir / "ann" / (std::string(id) + ".xml"),
                               "Kitti"});
    }
  }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_SUITE("service") {
  TEST_CASE("handlers") {
    Fixture fx;
    AnnotationService svc(fx.index, fx.dir / "ann");

    const auto pairs = nlohmann::json::parse(svc.list_pairs().body);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0]["id"] == "pair_a");
    CHECK(pairs[0]["image"] == "/image/pair_a");
    CHECK(pairs[0]["annotation"] == "/annotation/pair_a");
    CHECK(pairs[0]["size"]["width"] == 1242);

    const auto img = svc.get_image("pair_b");
    CHECK(img.status == 200);
    CHECK(img.content_type == "image/png");
    CHECK(decode_image(std::vector<std::uint8_t>(img.body.begin(), img.body.end())).height == 750);
    CHECK(svc.get_image("nope").status == 404);

    CHECK(svc.get_annotation("pair_a").status == 404);
    const auto put = svc.put_annotation("pair_a", kExampleXml, std::nullopt);
    CHECK(put.status == 201);
    const auto got = svc.get_annotation("pair_a");
    CHECK(got.status == 200);
    CHECK(got.body == kExampleXml);
    CHECK(got.headers.at("ETag") == put.headers.at("ETag"));

    const auto bad = svc.put_annotation("pair_a", "<annotation><size>", std::nullopt);
    CHECK(bad.status == 422);
    CHECK(bad.headers.at("X-Schema-Element") == "annotation");
    CHECK(svc.get_annotation("pair_a").body == kExampleXml);

    // Optimistic concurrency.
    const std::string edited = std::string(kExampleXml).replace(std::string(kExampleXml).find("car"), 3, "bus");
    CHECK(svc.put_annotation("pair_a", edited, std::string("\"stale\"")).status == 409);
    const auto ok = svc.put_annotation("pair_a", edited, got.headers.at("ETag"));
    CHECK(ok.status == 200);
    CHECK(svc.put_annotation("pair_a", kExampleXml, got.headers.at("ETag")).status == 409);
    CHECK(svc.put_annotation("pair_b", kExampleXml, std::string("*")).status == 409);
    CHECK(svc.put_annotation("zzz", kExampleXml, std::nullopt).status == 404);

    // Size must match the stacked image.
    std::string wrong = kExampleXml;
    wrong.replace(wrong.find("1242"), 4, "1000");
    const auto sz = svc.put_annotation("pair_b", wrong, std::nullopt);
    CHECK(sz.status == 422);
    CHECK(sz.headers.at("X-Schema-Element") == "size");

    // Warnings travel back as headers.
    std::string inconsistent = kExampleXml;
    inconsistent.replace(inconsistent.find("28.0"), 4, "35.0");
    const auto warn = svc.put_annotation("pair_b", inconsistent, std::nullopt);
    CHECK(warn.status == 201);
    CHECK(warn.headers.count("X-Warning-0") == 1);
  }

  TEST_CASE("http round trip") {
    Fixture fx;
    AnnotationService svc(fx.index, fx.dir / "ann");
    AnnotationServer server(svc);
    const int port = server.bind("127.0.0.1", 0);
    std::thread t([&] { server.listen(); });
    httplib::Client cli("127.0.0.1", port);
    cli.set_connection_timeout(5);
    for (int i = 0; i < 100; ++i) {
      if (cli.Get("/pairs")) break;
      std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }

    auto pairs = cli.Get("/pairs");
    REQUIRE(pairs);
    CHECK(pairs->status == 200);
    CHECK(nlohmann::json::parse(pairs->body).size() == 2);

    auto img = cli.Get("/image/pair_a");
    REQUIRE(img);
    CHECK(img->status == 200);
    CHECK(img->get_header_value("Content-Type") == "image/png");

    auto missing = cli.Get("/annotation/pair_a");
    REQUIRE(missing);
    CHECK(missing->status == 404);

    auto put = cli.Put("/annotation/pair_a", kExampleXml, "application/xml");
    REQUIRE(put);
    CHECK(put->status == 201);
    auto get = cli.Get("/annotation/pair_a");
    REQUIRE(get);
    CHECK(get->status == 200);
    CHECK(get->body == kExampleXml);
    const auto tag = get->get_header_value("ETag");
    CHECK(parse_annotation(get->body).objects[0].delta == ObjectDisparity{28.0, -2.0});

    auto invalid = cli.Put("/annotation/pair_a", "<annotation>", "application/xml");
    REQUIRE(invalid);
    CHECK(invalid->status == 422);
    CHECK(invalid->body.find("annotation") != std::string::npos);

    httplib::Headers stale{{"If-Match", "\"0-0\""}};
    auto conflict = cli.Put("/annotation/pair_a", stale, kExampleXml, "application/xml");
    REQUIRE(conflict);
    CHECK(conflict->status == 409);
    httplib::Headers fresh{{"If-Match", tag}};
    auto update = cli.Put("/annotation/pair_a", fresh, kExampleXml, "application/xml");
    REQUIRE(update);
    CHECK(update->status == 200);

    auto preflight = cli.Options("/annotation/pair_a");
    REQUIRE(preflight);
    CHECK(preflight->status == 204);

    server.stop();
    t.join();
  }
}
