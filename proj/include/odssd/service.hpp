#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "odssd/annotation.hpp"

namespace odssd {

struct HttpResponse {
  int status = 200;
  std::string content_type = "text/plain; charset=utf-8";
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Strong entity tag of a byte string (quoted CRC-32 and length).
std::string entity_tag(std::string_view bytes);

/// Request handlers behind the annotation UI, independent of the transport.
///
/// Annotations live in `annotations_dir/<id>.xml` when a directory is given,
/// otherwise at the index entry's annotation path. Writes are validated with
/// the annotation parser, serialized per file and stored through a temporary
/// file and rename. A PUT carrying If-Match whose tag differs from the stored
/// file's tag is refused with 409.
class AnnotationService {
 public:
  AnnotationService(DatasetIndex index, std::optional<std::filesystem::path> annotations_dir);

  HttpResponse list_pairs() const;
  HttpResponse get_image(const std::string& id) const;
  HttpResponse get_annotation(const std::string& id) const;
  HttpResponse put_annotation(const std::string& id, const std::string& body,
                              const std::optional<std::string>& if_match);

  std::filesystem::path annotation_path(const std::string& id) const;
  const DatasetIndex& index() const { return index_; }

 private:
  std::mutex& file_mutex(const std::string& id) const;
  std::pair<int, int> image_size(const DatasetEntry& entry) const;

  DatasetIndex index_;
  std::optional<std::filesystem::path> annotations_dir_;
  mutable std::mutex table_mutex_;
  mutable std::map<std::string, std::unique_ptr<std::mutex>> file_mutexes_;
  mutable std::map<std::string, std::pair<int, int>> sizes_;
};

/// HTTP front end: GET /pairs, GET /image/{id}, GET /annotation/{id},
/// PUT /annotation/{id}.
class AnnotationServer {
 public:
  explicit AnnotationServer(AnnotationService& service);
  ~AnnotationServer();
  AnnotationServer(const AnnotationServer&) = delete;
  AnnotationServer& operator=(const AnnotationServer&) = delete;

  /// Binds (port 0 picks a free port) and returns the bound port.
  /// Throws IoError when the address cannot be bound.
  int bind(const std::string& host, int port);
  /// Serves until stop() is called from another thread.
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace odssd
