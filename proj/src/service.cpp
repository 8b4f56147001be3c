#include "odssd/service.hpp"

#include <zlib.h>

#include <cstdio>
#include <httplib.h>
#include "json.hpp"

#include "odssd/error.hpp"
#include "odssd/image.hpp"

namespace odssd {

std::string entity_tag(std::string_view bytes) {
  const auto crc = crc32(crc32(0L, Z_NULL, 0), reinterpret_cast<const Bytef*>(bytes.data()),
                         static_cast<uInt>(bytes.size()));
  char buf[48];
  std::snprintf(buf, sizeof(buf), "\"%08lx-%zx\"", static_cast<unsigned long>(crc), bytes.size());
  return buf;
}

namespace {

HttpResponse text(int status, std::string body) {
  HttpResponse r;
  r.status = status;
  r.body = std::move(body);
  return r;
}

std::string to_string(const std::vector<std::uint8_t>& bytes) { return std::string(bytes.begin(), bytes.end()); }

std::optional<std::string> read_if_exists(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  return to_string(read_file(path));
}

}  // namespace

AnnotationService::AnnotationService(DatasetIndex index, std::optional<std::filesystem::path> annotations_dir)
    : index_(std::move(index)), annotations_dir_(std::move(annotations_dir)) {
  if (annotations_dir_) std::filesystem::create_directories(*annotations_dir_);
}

std::filesystem::path AnnotationService::annotation_path(const std::string& id) const {
  if (annotations_dir_) return *annotations_dir_ / (id + ".xml");
  const auto* e = index_.find(id);
  if (e == nullptr) throw InvalidInput("unknown pair '" + id + "'");
  return e->annotation;
}

std::mutex& AnnotationService::file_mutex(const std::string& id) const {
  std::lock_guard lock(table_mutex_);
  auto& slot = file_mutexes_[id];
  if (!slot) slot = std::make_unique<std::mutex>();
  return *slot;
}

std::pair<int, int> AnnotationService::image_size(const DatasetEntry& entry) const {
  {
    std::lock_guard lock(table_mutex_);
    if (auto it = sizes_.find(entry.id()); it != sizes_.end()) return it->second;
  }
  const auto img = read_image(entry.image);
  std::lock_guard lock(table_mutex_);
  return sizes_[entry.id()] = {img.width, img.height};
}

HttpResponse AnnotationService::list_pairs() const {
  auto list = nlohmann::json::array();
  for (const auto& e : index_.entries) {
    nlohmann::json item;
    item["id"] = e.id();
    item["image"] = "/image/" + e.id();
    item["annotation"] = "/annotation/" + e.id();
    try {
      const auto [w, h] = image_size(e);
      item["size"] = {{"width", w}, {"height", h}};
    } catch (const Error&) {
      item["size"] = nullptr;
    }
    list.push_back(std::move(item));
  }
  HttpResponse r;
  r.content_type = "application/json; charset=utf-8";
  r.body = list.dump();
  return r;
}

HttpResponse AnnotationService::get_image(const std::string& id) const {
  const auto* e = index_.find(id);
  if (e == nullptr) return text(404, "unknown pair '" + id + "'");
  try {
    HttpResponse r;
    r.body = to_string(read_file(e->image));
    const auto ext = e->image.extension().string();
    r.content_type = (ext == ".jpg" || ext == ".jpeg" || ext == ".JPG") ? "image/jpeg" : "image/png";
    return r;
  } catch (const Error& ex) {
    return text(404, ex.what());
  }
}

HttpResponse AnnotationService::get_annotation(const std::string& id) const {
  if (index_.find(id) == nullptr) return text(404, "unknown pair '" + id + "'");
  std::lock_guard lock(file_mutex(id));
  const auto body = read_if_exists(annotation_path(id));
  if (!body) return text(404, "no annotation for '" + id + "'");
  HttpResponse r;
  r.content_type = "application/xml; charset=utf-8";
  r.body = *body;
  r.headers["ETag"] = entity_tag(*body);
  return r;
}

HttpResponse AnnotationService::put_annotation(const std::string& id, const std::string& body,
                                               const std::optional<std::string>& if_match) {
  const auto* e = index_.find(id);
  if (e == nullptr) return text(404, "unknown pair '" + id + "'");
  AnnotationDoc doc;
  try {
    doc = parse_annotation(body);
  } catch (const SchemaError& ex) {
    auto r = text(422, ex.what());
    r.headers["X-Schema-Element"] = ex.element();
    return r;
  }
  try {
    const auto [w, h] = image_size(*e);
    if (doc.width != w || doc.height != h) {
      auto r = text(422, "size: annotation is " + std::to_string(doc.width) + "x" + std::to_string(doc.height) +
                             " but the stacked image is " + std::to_string(w) + "x" + std::to_string(h));
      r.headers["X-Schema-Element"] = "size";
      return r;
    }
  } catch (const Error&) {
    // Image unreadable: size cannot be cross-checked.
  }
  std::lock_guard lock(file_mutex(id));
  const auto path = annotation_path(id);
  const auto current = read_if_exists(path);
  if (if_match && *if_match != "*") {
    if (!current || entity_tag(*current) != *if_match) {
      return text(409, "annotation for '" + id + "' changed since it was read");
    }
  } else if (if_match && !current) {
    return text(409, "annotation for '" + id + "' does not exist");
  }
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
  HttpResponse r = text(current ? 200 : 201, "stored");
  r.headers["ETag"] = entity_tag(body);
  for (std::size_t i = 0; i < doc.warnings.size(); ++i) r.headers["X-Warning-" + std::to_string(i)] = doc.warnings[i];
  return r;
}

struct AnnotationServer::Impl {
  AnnotationService& service;
  httplib::Server server;

  static void apply(const HttpResponse& in, httplib::Response& out) {
    out.status = in.status;
    for (const auto& [k, v] : in.headers) out.set_header(k, v);
    out.set_header("Access-Control-Allow-Origin", "*");
    out.set_header("Access-Control-Expose-Headers", "ETag");
    out.set_content(in.body, in.content_type);
  }

  explicit Impl(AnnotationService& s) : service(s) {
    server.Get("/pairs", [this](const httplib::Request&, httplib::Response& res) { apply(service.list_pairs(), res); });
    server.Get(R"(/image/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      apply(service.get_image(req.matches[1]), res);
    });
    server.Get(R"(/annotation/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      apply(service.get_annotation(req.matches[1]), res);
    });
    server.Put(R"(/annotation/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      std::optional<std::string> if_match;
      if (req.has_header("If-Match")) if_match = req.get_header_value("If-Match");
      apply(service.put_annotation(req.matches[1], req.body, if_match), res);
    });
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Origin", "*");
      res.set_header("Access-Control-Allow-Methods", "GET, PUT, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, If-Match");
      res.status = 204;
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      res.status = 500;
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        res.set_content(e.what(), "text/plain; charset=utf-8");
      } catch (...) {
        res.set_content("internal error", "text/plain; charset=utf-8");
      }
    });
  }
};

AnnotationServer::AnnotationServer(AnnotationService& service) : impl_(std::make_unique<Impl>(service)) {}
AnnotationServer::~AnnotationServer() { stop(); }

int AnnotationServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return bound;
}

void AnnotationServer::listen() { impl_->server.listen_after_bind(); }

void AnnotationServer::stop() {
  if (impl_ && impl_->server.is_running()) impl_->server.stop();
}

}  // namespace odssd
