#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "odssd/geometry.hpp"
#include "odssd/image.hpp"

namespace odssd {

/// One object of a stacked-pair annotation. Both boxes are in stacked-image
/// coordinates: `bndbox` in the top (left view) half, `bndbox2` in the
/// bottom (right view) half.
struct AnnotatedObject {
  std::string name;
  std::string pose = "Unspecified";
  std::string truncated = "0";
  std::string difficult = "0";
  BBox bndbox;
  ObjectDisparity delta;
  BBox bndbox2;
  /// Unrecognized child elements, kept verbatim (compact XML) in order.
  std::vector<std::string> extra_elements;

  friend bool operator==(const AnnotatedObject&, const AnnotatedObject&) = default;
};

/// Extended Pascal VOC annotation of a stacked stereo image.
struct AnnotationDoc {
  std::string folder;
  std::string filename;
  std::string path;
  std::string database = "Unknown";
  int width = 0;
  int height = 0;  // stacked height = 2 x view height
  int depth = 3;
  std::string segmented = "0";
  std::vector<AnnotatedObject> objects;
  std::vector<std::string> extra_elements;
  /// Consistency findings (delta vs. boxes); not serialized.
  std::vector<std::string> warnings;

  int view_height() const { return height / 2; }

  friend bool operator==(const AnnotationDoc&, const AnnotationDoc&) = default;
};

/// Parses the extended VOC format. Throws SchemaError naming the element for
/// malformed XML, missing mandatory elements (bndbox, delta, bndbox2, size),
/// duplicated coordinates, or boxes in the wrong half. A delta that differs
/// from the recomputed object disparity by more than 0.5 px is kept and
/// reported in `warnings`.
AnnotationDoc parse_annotation(std::string_view xml);

/// Serializes with the element order folder, filename, path, source, size,
/// segmented, then per object name, pose, truncated, difficult, bndbox,
/// delta, bndbox2. delta values always carry a decimal point.
/// Throws SchemaError if the document violates its invariants.
std::string write_annotation(const AnnotationDoc& doc);

/// Checks the document invariants; throws SchemaError.
void validate_annotation(const AnnotationDoc& doc);

struct TargetConversion {
  std::vector<StereoObject> objects;  // right boxes in the right-view frame
  std::vector<std::string> warnings;
};

/// Moves bndbox2 into the right-view frame. The stored delta is kept as the
/// object disparity; disagreement with the boxes beyond 0.5 px is reported.
TargetConversion doc_to_targets(const AnnotationDoc& doc);

/// Builds a document from per-view objects (right boxes in right-view frame).
AnnotationDoc doc_from_objects(const std::string& filename, int view_width, int view_height,
                               const std::vector<StereoObject>& objects);

/// Left image on top, right image below. Throws InvalidInput listing both
/// shapes when width, height or channel count differ.
Image stack_pair(const Image& left, const Image& right);
std::pair<Image, Image> unstack(const Image& stacked);

/// Source systems a dataset index may name.
std::vector<std::string> known_source_systems();

struct DatasetEntry {
  std::filesystem::path image;
  std::filesystem::path annotation;
  std::string source;

  /// File stem of the stacked image; unique within an index.
  std::string id() const { return image.stem().string(); }
};

struct DatasetIndex {
  std::vector<DatasetEntry> entries;
  const DatasetEntry* find(const std::string& id) const;
};

struct IndexLoadOptions {
  bool require_images = true;
  bool require_annotations = false;
  /// Empty means known_source_systems().
  std::vector<std::string> allowed_sources;
};

/// Tab-separated lines: stacked image path, annotation path, source tag.
/// Relative paths are resolved against the index file's directory.
DatasetIndex read_dataset_index(const std::filesystem::path& path, const IndexLoadOptions& options = {});
/// Writes paths relative to the index file's directory when possible.
void write_dataset_index(const std::filesystem::path& path, const DatasetIndex& index);

}  // namespace odssd
