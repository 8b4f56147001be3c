#include <pybind11/numpy.h>
#include <pybind11/operators.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>

#include "odssd/annotation.hpp"
#include "odssd/codec.hpp"
#include "odssd/error.hpp"
#include "odssd/geometry.hpp"
#include "odssd/image.hpp"
#include "odssd/model.hpp"
#include "odssd/postprocess.hpp"
#include "odssd/synth.hpp"
#include "odssd/train.hpp"
#include "odssd/weights.hpp"

namespace py = pybind11;
using namespace odssd;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as (H, W, C) uint8 arrays.
py::array_t<std::uint8_t> to_array(const Image& img) {
  py::array_t<std::uint8_t> out({img.height, img.width, img.channels});
  std::memcpy(out.mutable_data(), img.pixels.data(), img.pixels.size());
  return out;
}

Image from_array(const U8Array& a) {
  if (a.ndim() != 3 && a.ndim() != 2) throw InvalidInput("image array must be (H, W) or (H, W, C)");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)), c);
  std::memcpy(img.pixels.data(), a.data(), img.pixels.size());
  return img;
}

py::tuple box_tuple(const BBox& b) { return py::make_tuple(b.xmin, b.ymin, b.xmax, b.ymax); }

py::dict detection_dict(const Detection& d, const ModelConfig& cfg) {
  py::dict out;
  out["class_id"] = d.class_id;
  out["label"] = cfg.class_names.at(static_cast<std::size_t>(d.class_id));
  out["score"] = d.score;
  out["left_box"] = box_tuple(d.left_box);
  out["dx"] = d.dx;
  out["dy"] = d.dy;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Stereo object-disparity SSD toolkit";
  m.attr("__version__") = "0.1.0";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidInput>(m, "InvalidInput", error.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  py::register_exception<FormatError>(m, "FormatError", error.ptr());
  py::register_exception<IoError>(m, "IoError", error.ptr());
  // SchemaError carries the element name as an attribute.
  static py::handle schema_error = py::exception<SchemaError>(m, "SchemaError", error.ptr()).release();
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const SchemaError& e) {
      py::object exc = py::reinterpret_borrow<py::object>(schema_error)(e.what());
      exc.attr("element") = e.element();
      PyErr_SetObject(schema_error.ptr(), exc.ptr());
    }
  });

  py::class_<BBox>(m, "BBox")
      .def(py::init<>())
      .def(py::init([](double x0, double y0, double x1, double y1) { return BBox{x0, y0, x1, y1}; }), py::arg("xmin"),
           py::arg("ymin"), py::arg("xmax"), py::arg("ymax"))
      .def_readwrite("xmin", &BBox::xmin)
      .def_readwrite("ymin", &BBox::ymin)
      .def_readwrite("xmax", &BBox::xmax)
      .def_readwrite("ymax", &BBox::ymax)
      .def("width", &BBox::width)
      .def("height", &BBox::height)
      .def("as_tuple", &box_tuple)
      .def(py::self == py::self)
      .def("__repr__", [](const BBox& b) {
        return "BBox(" + std::to_string(b.xmin) + ", " + std::to_string(b.ymin) + ", " + std::to_string(b.xmax) +
               ", " + std::to_string(b.ymax) + ")";
      });

  py::class_<ObjectDisparity>(m, "ObjectDisparity")
      .def_readonly("dx", &ObjectDisparity::dx)
      .def_readonly("dy", &ObjectDisparity::dy)
      .def("__iter__", [](const ObjectDisparity& d) { return py::iter(py::make_tuple(d.dx, d.dy)); });

  m.def("object_disparity", &object_disparity, py::arg("left"), py::arg("right"), py::arg("view_width"),
        py::arg("view_height"));
  m.def("iou", &iou);

  py::class_<AnnotatedObject>(m, "AnnotatedObject")
      .def_readwrite("name", &AnnotatedObject::name)
      .def_readwrite("bndbox", &AnnotatedObject::bndbox)
      .def_readwrite("bndbox2", &AnnotatedObject::bndbox2)
      .def_property_readonly("delta", [](const AnnotatedObject& o) { return py::make_tuple(o.delta.dx, o.delta.dy); });

  py::class_<AnnotationDoc>(m, "AnnotationDoc")
      .def_readwrite("filename", &AnnotationDoc::filename)
      .def_readonly("width", &AnnotationDoc::width)
      .def_readonly("height", &AnnotationDoc::height)
      .def_readonly("objects", &AnnotationDoc::objects)
      .def_readonly("warnings", &AnnotationDoc::warnings)
      .def(py::self == py::self);

  m.def("parse_annotation", [](const std::string& xml) { return parse_annotation(xml); });
  m.def("write_annotation", &write_annotation);

  m.def("stack_pair", [](const U8Array& l, const U8Array& r) { return to_array(stack_pair(from_array(l), from_array(r))); });
  m.def("encode_png", [](const U8Array& a) {
    const auto bytes = encode_png(from_array(a));
    return py::bytes(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  });
  m.def("decode_image", [](const py::bytes& b) {
    const std::string s = b;
    return to_array(decode_image(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())));
  });

  py::class_<ModelConfig>(m, "ModelConfig")
      .def_static("stereo640", &ModelConfig::stereo640)
      .def_static("stereo320", &ModelConfig::stereo320)
      .def_static("voc_reference640", &ModelConfig::voc_reference640)
      .def_static("toy", &ModelConfig::toy)
      .def_static("from_json", &ModelConfig::from_json)
      .def("to_json", &ModelConfig::to_json)
      .def("validate", &ModelConfig::validate)
      .def_readwrite("view_width", &ModelConfig::view_width)
      .def_readwrite("view_height", &ModelConfig::view_height)
      .def_readwrite("class_names", &ModelConfig::class_names)
      .def_readwrite("width_multiplier", &ModelConfig::width_multiplier)
      .def_readwrite("score_threshold", &ModelConfig::score_threshold)
      .def_readwrite("nms_iou_threshold", &ModelConfig::nms_iou_threshold)
      .def_readwrite("top_k", &ModelConfig::top_k)
      .def_property_readonly("num_classes", &ModelConfig::num_classes);

  py::class_<Prior>(m, "Prior")
      .def_readonly("cx", &Prior::cx)
      .def_readonly("cy", &Prior::cy)
      .def_readonly("w", &Prior::w)
      .def_readonly("h", &Prior::h);

  m.def("head_grids", [](const ModelConfig& c) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (const auto& g : head_grids(c)) out.emplace_back(g.height, g.width);
    return out;
  });
  m.def("prior_count", &prior_count);
  m.def("generate_priors", &generate_priors);

  py::class_<CodecParams>(m, "CodecParams")
      .def(py::init<>())
      .def_static("from_config", &CodecParams::from)
      .def_readwrite("view_width", &CodecParams::view_width)
      .def_readwrite("view_height", &CodecParams::view_height);

  m.def(
      "encode",
      [](const BBox& box, double dx, double dy, const Prior& p, const CodecParams& params) {
        const auto v = encode(box, ObjectDisparity{dx, dy}, p, params);
        return std::vector<double>{v.cx, v.cy, v.w, v.h, v.dx, v.dy};
      },
      py::arg("left_box"), py::arg("dx"), py::arg("dy"), py::arg("prior"), py::arg("params"));
  m.def(
      "decode",
      [](const std::vector<double>& v, const Prior& p, const CodecParams& params) {
        if (v.size() != 6) throw InvalidInput("location vector must have 6 entries");
        const auto d = decode(LocationVector{v[0], v[1], v[2], v[3], v[4], v[5]}, p, params);
        return py::make_tuple(d.left_box, d.dx, d.dy);
      },
      py::arg("location"), py::arg("prior"), py::arg("params"));

  m.def(
      "nms",
      [](const std::vector<BBox>& boxes, const std::vector<double>& scores, double thr, std::size_t top_k) {
        return nms(boxes, scores, thr, top_k);
      },
      py::arg("boxes"), py::arg("scores"), py::arg("iou_threshold"), py::arg("top_k") = 200);

  py::class_<Model<float>>(m, "Model")
      .def(py::init<ModelConfig, std::uint64_t>(), py::arg("config"), py::arg("seed") = 1)
      .def_static("load", [](const std::string& path) { return load_weights(path); })
      .def("save",
           [](const Model<float>& model, const std::string& path, const std::string& precision) {
             save_weights(path, model, parse_precision(precision));
           },
           py::arg("path"), py::arg("precision") = "fp32")
      .def_property_readonly("config", &Model<float>::config)
      .def("parameter_count", &Model<float>::parameter_count)
      .def("serialized_sizes",
           [](const Model<float>& model) {
             const auto s = summarize_weights(model);
             py::dict d;
             d["parameters"] = s.parameters;
             d["fp32"] = s.fp32_bytes;
             d["int8"] = s.int8_bytes;
             return d;
           })
      .def("shapes",
           [](const Model<float>& model) {
             const auto& c = model.config();
             const Tensor<float> x({1, 3, c.input_height(), c.input_width()});
             const auto out = model.forward(nullptr, x);
             py::dict d;
             d["tap"] = out.tap_shape;
             d["folded_tap"] = out.folded_tap_shape;
             d["confidences"] = out.confidences.shape();
             d["locations"] = out.locations.shape();
             return d;
           },
           "Runs one zero input through the network and reports intermediate shapes.")
      .def(
          "detect",
          [](const Model<float>& model, const U8Array& stacked) {
            const auto dets = detect_image(model, from_array(stacked));
            py::list out;
            for (const auto& d : dets) out.append(detection_dict(d, model.config()));
            return out;
          },
          py::arg("stacked"), "Detections for one stacked (2H, W, 3) image.");

  py::class_<SceneSpec>(m, "SceneSpec")
      .def(py::init<>())
      .def_readwrite("seed", &SceneSpec::seed)
      .def_readwrite("view_width", &SceneSpec::view_width)
      .def_readwrite("view_height", &SceneSpec::view_height)
      .def_readwrite("min_objects", &SceneSpec::min_objects)
      .def_readwrite("max_objects", &SceneSpec::max_objects)
      .def_readwrite("min_disparity", &SceneSpec::min_disparity)
      .def_readwrite("max_disparity", &SceneSpec::max_disparity)
      .def_readwrite("dy_jitter", &SceneSpec::dy_jitter);

  m.def(
      "generate_scene",
      [](const SceneSpec& spec, std::uint64_t index) {
        const auto s = generate_scene(spec, index);
        py::list objects;
        for (const auto& o : s.objects) {
          py::dict d;
          d["label"] = o.label;
          d["left_box"] = box_tuple(o.left_box);
          d["right_box"] = box_tuple(o.right_box);
          d["dx"] = o.disparity.dx;
          d["dy"] = o.disparity.dy;
          objects.append(d);
        }
        py::dict out;
        out["left"] = to_array(s.left);
        out["right"] = to_array(s.right);
        out["objects"] = objects;
        return out;
      },
      py::arg("spec"), py::arg("index"));
}
