#include "odssd/annotation.hpp"

#include <algorithm>
#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "odssd/error.hpp"

namespace odssd {

namespace pt = boost::property_tree;

namespace {

constexpr double kDeltaTolerance = 0.5;

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string format_delta(double v) {
  std::string s = format_number(v);
  if (s.find_first_of(".en") == std::string::npos) s += ".0";
  return s;
}

std::string escape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

bool is_meta(const std::string& key) { return key == "<xmlattr>" || key == "<xmlcomment>"; }

std::string compact_xml(const std::string& key, const pt::ptree& node) {
  std::ostringstream os;
  pt::xml_parser::write_xml_element(os, key, node, 0, pt::xml_writer_settings<std::string>());
  std::string s = os.str();
  while (!s.empty() && (s.back() == '\n' || s.back() == ' ')) s.pop_back();
  return s;
}

const pt::ptree& only_child(const pt::ptree& parent, const std::string& key, const std::string& where) {
  const auto count = parent.count(key);
  if (count == 0) throw SchemaError(where + key, "missing mandatory element");
  if (count > 1) throw SchemaError(where + key, "element appears " + std::to_string(count) + " times");
  return parent.get_child(key);
}

std::string text_of(const pt::ptree& parent, const std::string& key, const std::string& where,
                    const std::string* fallback = nullptr) {
  if (fallback != nullptr && parent.count(key) == 0) return *fallback;
  return only_child(parent, key, where).get_value<std::string>();
}

double number_of(const pt::ptree& parent, const std::string& key, const std::string& where) {
  const std::string s = text_of(parent, key, where);
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw SchemaError(where + key, "not a finite number: '" + s + "'");
  }
  return v;
}

BBox box_of(const pt::ptree& parent, const std::string& key, const std::string& where) {
  const auto& node = only_child(parent, key, where);
  const std::string inner = where + key + "/";
  for (const auto& [k, child] : node) {
    if (is_meta(k)) continue;
    if (k != "xmin" && k != "ymin" && k != "xmax" && k != "ymax") {
      throw SchemaError(inner + k, "unexpected element in box");
    }
  }
  return {number_of(node, "xmin", inner), number_of(node, "ymin", inner), number_of(node, "xmax", inner),
          number_of(node, "ymax", inner)};
}

int dimension_of(const pt::ptree& size, const std::string& key) {
  const double v = number_of(size, key, "size/");
  if (v < 0 || v != std::floor(v) || v > 1e9) throw SchemaError("size/" + key, "must be a non-negative integer");
  return static_cast<int>(v);
}

std::string describe(const BBox& b) {
  return "(" + format_number(b.xmin) + "," + format_number(b.ymin) + "," + format_number(b.xmax) + "," +
         format_number(b.ymax) + ")";
}

BBox to_right_frame(const BBox& stacked, int view_height) { return stacked.translated(0.0, -view_height); }

std::vector<std::string> consistency_warnings(const AnnotationDoc& doc) {
  std::vector<std::string> out;
  const double vw = doc.width, vh = doc.view_height();
  for (std::size_t i = 0; i < doc.objects.size(); ++i) {
    const auto& o = doc.objects[i];
    const auto d = object_disparity(o.bndbox, to_right_frame(o.bndbox2, doc.view_height()), vw, vh);
    if (std::abs(d.dx - o.delta.dx) > kDeltaTolerance || std::abs(d.dy - o.delta.dy) > kDeltaTolerance) {
      out.push_back("object[" + std::to_string(i) + "] (" + o.name + "): stored delta (" + format_number(o.delta.dx) +
                    ", " + format_number(o.delta.dy) + ") disagrees with boxes (" + format_number(d.dx) + ", " +
                    format_number(d.dy) + ")");
    }
  }
  return out;
}

}  // namespace

void validate_annotation(const AnnotationDoc& doc) {
  if (doc.width <= 0) throw SchemaError("size/width", "must be positive");
  if (doc.height <= 0 || doc.height % 2 != 0) throw SchemaError("size/height", "must be positive and even");
  if (doc.depth != 3) throw SchemaError("size/depth", "must be 3");
  if (doc.filename.empty()) throw SchemaError("filename", "must not be empty");
  const double w = doc.width, half = doc.view_height(), h = doc.height;
  for (std::size_t i = 0; i < doc.objects.size(); ++i) {
    const auto& o = doc.objects[i];
    const std::string where = "object[" + std::to_string(i) + "]/";
    if (o.name.empty()) throw SchemaError(where + "name", "must not be empty");
    if (!o.bndbox.valid() || o.bndbox.xmin < 0 || o.bndbox.xmax > w || o.bndbox.ymin < 0 || o.bndbox.ymax > half) {
      throw SchemaError(where + "bndbox", "left box " + describe(o.bndbox) + " must lie in the top half");
    }
    if (!o.bndbox2.valid() || o.bndbox2.xmin < 0 || o.bndbox2.xmax > w || o.bndbox2.ymin < half ||
        o.bndbox2.ymax > h) {
      throw SchemaError(where + "bndbox2", "right box " + describe(o.bndbox2) + " must lie in the bottom half");
    }
    if (!std::isfinite(o.delta.dx) || !std::isfinite(o.delta.dy)) throw SchemaError(where + "delta", "not finite");
  }
}

AnnotationDoc parse_annotation(std::string_view xml) {
  pt::ptree tree;
  try {
    std::istringstream in{std::string(xml)};
    pt::read_xml(in, tree, pt::xml_parser::trim_whitespace);
  } catch (const pt::xml_parser_error& e) {
    throw SchemaError("annotation", std::string("malformed XML: ") + e.message() + " at line " +
                                        std::to_string(e.line()));
  }
  const auto& root = only_child(tree, "annotation", "");
  AnnotationDoc doc;
  static const std::set<std::string> known_root{"folder", "filename", "path", "source", "size", "segmented", "object"};
  const std::string empty;
  const std::string unknown_db = "Unknown";
  const std::string zero = "0";
  const std::string unspecified = "Unspecified";
  doc.folder = text_of(root, "folder", "", &empty);
  doc.filename = text_of(root, "filename", "");
  doc.path = text_of(root, "path", "", &empty);
  if (root.count("source")) doc.database = text_of(only_child(root, "source", ""), "database", "source/", &unknown_db);
  const auto& size = only_child(root, "size", "");
  doc.width = dimension_of(size, "width");
  doc.height = dimension_of(size, "height");
  doc.depth = dimension_of(size, "depth");
  doc.segmented = text_of(root, "segmented", "", &zero);

  static const std::set<std::string> known_object{"name",  "pose",    "truncated", "difficult",
                                                  "bndbox", "bndbox2", "delta"};
  for (const auto& [key, node] : root) {
    if (is_meta(key)) continue;
    if (!known_root.contains(key)) {
      doc.extra_elements.push_back(compact_xml(key, node));
      continue;
    }
    if (key != "object") continue;
    const std::string where = "object[" + std::to_string(doc.objects.size()) + "]/";
    AnnotatedObject o;
    o.name = text_of(node, "name", where);
    o.pose = text_of(node, "pose", where, &unspecified);
    o.truncated = text_of(node, "truncated", where, &zero);
    o.difficult = text_of(node, "difficult", where, &zero);
    o.bndbox = box_of(node, "bndbox", where);
    const auto& delta = only_child(node, "delta", where);
    o.delta = {number_of(delta, "dx", where + "delta/"), number_of(delta, "dy", where + "delta/")};
    o.bndbox2 = box_of(node, "bndbox2", where);
    for (const auto& [k, child] : node) {
      if (!is_meta(k) && !known_object.contains(k)) o.extra_elements.push_back(compact_xml(k, child));
    }
    doc.objects.push_back(std::move(o));
  }
  validate_annotation(doc);
  doc.warnings = consistency_warnings(doc);
  return doc;
}

std::string write_annotation(const AnnotationDoc& doc) {
  validate_annotation(doc);
  std::ostringstream os;
  auto box = [&os](const char* tag, const BBox& b) {
    os << "    <" << tag << ">\n"
       << "      <xmin>" << format_number(b.xmin) << "</xmin>\n"
       << "      <ymin>" << format_number(b.ymin) << "</ymin>\n"
       << "      <xmax>" << format_number(b.xmax) << "</xmax>\n"
       << "      <ymax>" << format_number(b.ymax) << "</ymax>\n"
       << "    </" << tag << ">\n";
  };
  os << "<annotation>\n"
     << "  <folder>" << escape(doc.folder) << "</folder>\n"
     << "  <filename>" << escape(doc.filename) << "</filename>\n"
     << "  <path>" << escape(doc.path) << "</path>\n"
     << "  <source>\n"
     << "    <database>" << escape(doc.database) << "</database>\n"
     << "  </source>\n"
     << "  <size>\n"
     << "    <width>" << doc.width << "</width>\n"
     << "    <height>" << doc.height << "</height>\n"
     << "    <depth>" << doc.depth << "</depth>\n"
     << "  </size>\n"
     << "  <segmented>" << escape(doc.segmented) << "</segmented>\n";
  for (const auto& o : doc.objects) {
    os << "  <object>\n"
       << "    <name>" << escape(o.name) << "</name>\n"
       << "    <pose>" << escape(o.pose) << "</pose>\n"
       << "    <truncated>" << escape(o.truncated) << "</truncated>\n"
       << "    <difficult>" << escape(o.difficult) << "</difficult>\n";
    box("bndbox", o.bndbox);
    os << "    <delta>\n"
       << "      <dx>" << format_delta(o.delta.dx) << "</dx>\n"
       << "      <dy>" << format_delta(o.delta.dy) << "</dy>\n"
       << "    </delta>\n";
    box("bndbox2", o.bndbox2);
    for (const auto& extra : o.extra_elements) os << "    " << extra << "\n";
    os << "  </object>\n";
  }
  for (const auto& extra : doc.extra_elements) os << "  " << extra << "\n";
  os << "</annotation>\n";
  return os.str();
}

TargetConversion doc_to_targets(const AnnotationDoc& doc) {
  validate_annotation(doc);
  TargetConversion out;
  out.warnings = consistency_warnings(doc);
  for (const auto& o : doc.objects) {
    out.objects.push_back({o.name, o.bndbox, to_right_frame(o.bndbox2, doc.view_height()), o.delta});
  }
  return out;
}

AnnotationDoc doc_from_objects(const std::string& filename, int view_width, int view_height,
                               const std::vector<StereoObject>& objects) {
  AnnotationDoc doc;
  doc.filename = filename;
  doc.width = view_width;
  doc.height = 2 * view_height;
  for (const auto& o : objects) {
    AnnotatedObject a;
    a.name = o.label;
    a.bndbox = o.left_box;
    a.bndbox2 = o.right_box.translated(0.0, view_height);
    a.delta = o.disparity;
    doc.objects.push_back(std::move(a));
  }
  validate_annotation(doc);
  doc.warnings = consistency_warnings(doc);
  return doc;
}

Image stack_pair(const Image& left, const Image& right) {
  if (left.width != right.width || left.height != right.height || left.channels != right.channels) {
    throw InvalidInput("stack_pair: left " + std::to_string(left.width) + "x" + std::to_string(left.height) + "x" +
                       std::to_string(left.channels) + " vs right " + std::to_string(right.width) + "x" +
                       std::to_string(right.height) + "x" + std::to_string(right.channels));
  }
  Image out(left.width, left.height * 2, left.channels);
  std::copy(left.pixels.begin(), left.pixels.end(), out.pixels.begin());
  std::copy(right.pixels.begin(), right.pixels.end(),
            out.pixels.begin() + static_cast<std::ptrdiff_t>(left.pixels.size()));
  return out;
}

std::pair<Image, Image> unstack(const Image& stacked) {
  if (stacked.height % 2 != 0) throw InvalidInput("unstack: stacked height must be even");
  Image left(stacked.width, stacked.height / 2, stacked.channels);
  Image right(stacked.width, stacked.height / 2, stacked.channels);
  const auto half = static_cast<std::ptrdiff_t>(left.pixels.size());
  std::copy(stacked.pixels.begin(), stacked.pixels.begin() + half, left.pixels.begin());
  std::copy(stacked.pixels.begin() + half, stacked.pixels.end(), right.pixels.begin());
  return {std::move(left), std::move(right)};
}

std::vector<std::string> known_source_systems() { return {"S1", "S2", "DashCam", "Kitti", "synthetic"}; }

const DatasetEntry* DatasetIndex::find(const std::string& id) const {
  for (const auto& e : entries) {
    if (e.id() == id) return &e;
  }
  return nullptr;
}

DatasetIndex read_dataset_index(const std::filesystem::path& path, const IndexLoadOptions& options) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset index " + path.string());
  const auto base = path.parent_path();
  const auto allowed = options.allowed_sources.empty() ? known_source_systems() : options.allowed_sources;
  DatasetIndex index;
  std::set<std::string> ids;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3) throw FormatError(where + ": expected 3 tab-separated fields");
    DatasetEntry e;
    auto resolve = [&base](const std::string& f) {
      const std::filesystem::path p(f);
      return p.is_absolute() ? p : base / p;
    };
    e.image = resolve(fields[0]);
    e.annotation = resolve(fields[1]);
    e.source = fields[2];
    if (std::find(allowed.begin(), allowed.end(), e.source) == allowed.end()) {
      throw FormatError(where + ": unknown source system '" + e.source + "'");
    }
    if (options.require_images && !std::filesystem::exists(e.image)) {
      throw IoError(where + ": missing image " + e.image.string());
    }
    if (options.require_annotations && !std::filesystem::exists(e.annotation)) {
      throw IoError(where + ": missing annotation " + e.annotation.string());
    }
    if (!ids.insert(e.id()).second) throw FormatError(where + ": duplicate sample id '" + e.id() + "'");
    index.entries.push_back(std::move(e));
  }
  return index;
}

void write_dataset_index(const std::filesystem::path& path, const DatasetIndex& index) {
  const auto base = path.parent_path().empty() ? std::filesystem::path(".") : path.parent_path();
  auto rel = [&](const std::filesystem::path& p) {
    std::error_code ec;
    auto r = std::filesystem::relative(p, base, ec);
    return (ec || r.empty()) ? p.string() : r.string();
  };
  std::ostringstream os;
  for (const auto& e : index.entries) os << rel(e.image) << '\t' << rel(e.annotation) << '\t' << e.source << '\n';
  const auto s = os.str();
  write_file_atomic(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

}  // namespace odssd
