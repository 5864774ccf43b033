#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "hyperace/detect.hpp"
#include "hyperace/image.hpp"
#include "hyperace/model.hpp"
#include "hyperace/profiler.hpp"
#include "hyperace/synthetic.hpp"
#include "hyperace/train.hpp"
#include "hyperace/weights.hpp"

namespace py = pybind11;
using namespace hyperace;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor from_numpy(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_numpy(const Tensor& t) {
  Array out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::dict detection_dict(const Detection& d) {
  py::dict o;
  o["box"] = py::make_tuple(d.box.x1, d.box.y1, d.box.x2, d.box.y2);
  o["class"] = d.cls;
  o["score"] = d.score;
  return o;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Hypergraph-enhanced detector core";

  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<WeightFileError>(m, "WeightFileError", PyExc_IOError);

  m.def("preset_config", [](const std::string& v) { return to_json(ModelConfig::preset(v)); }, py::arg("variant"),
        "Preset model config as JSON text.");
  m.def("normalize_config", [](const std::string& text) { return to_json(config_from_json(text)); }, py::arg("json"),
        "Validate a config and fill defaults from its variant.");

  py::class_<Network>(m, "Network")
      .def(py::init([](const std::string& text) { return std::make_unique<Network>(config_from_json(text)); }),
           py::arg("config_json"))
      .def("init", &Network::init, py::arg("seed") = 0)
      .def("config_json", [](const Network& n) { return to_json(n.config()); })
      .def("param_count", &Network::param_count)
      .def(
          "detect",
          [](Network& n, const Array& image) {
            Tensor x = from_numpy(image);
            std::array<Tensor, 3> heads;
            {
              py::gil_scoped_release release;
              heads = n.detect(x);
            }
            return py::make_tuple(to_numpy(heads[0]), to_numpy(heads[1]), to_numpy(heads[2]));
          },
          py::arg("image"), "Raw head maps at strides 8, 16, 32.")
      .def("save_weights", [](const Network& n, const std::string& p) { save_weights(n, p); })
      .def("load_weights", [](Network& n, const std::string& p) { load_weights(n, p); })
      .def("state", [](const Network& n) {
        py::dict d;
        for (const auto& t : n.state()) d[py::str(t.name)] = to_numpy(t.tensor);
        return d;
      })
      .def("hypergraph_layers", [](Network& n) {
        std::vector<std::string> names;
        for (const auto& l : n.hypergraph_layers()) names.push_back(l.first);
        return names;
      });

  m.def(
      "decode",
      [](const std::vector<Array>& heads, int reg_bins, int num_classes, double conf, double iou_threshold,
         double width, double height, std::int64_t index) {
        std::vector<Tensor> hv;
        for (const auto& h : heads) hv.push_back(from_numpy(h));
        DecodeOptions opt;
        opt.reg_bins = reg_bins;
        opt.num_classes = num_classes;
        opt.conf_threshold = conf;
        opt.image_width = width;
        opt.image_height = height;
        auto dets = decode(hv, opt, index);
        if (iou_threshold > 0) dets = nms(dets, iou_threshold);
        py::list out;
        for (const auto& d : dets) out.append(detection_dict(d));
        return out;
      },
      py::arg("heads"), py::arg("reg_bins") = 16, py::arg("num_classes") = 80, py::arg("conf") = 0.25,
      py::arg("iou") = 0.45, py::arg("width") = 0.0, py::arg("height") = 0.0, py::arg("index") = 0,
      "Decode head maps; NMS runs when iou > 0.");

  m.def(
      "nms",
      [](const std::vector<std::tuple<std::array<double, 4>, int, double>>& dets, double thr) {
        std::vector<Detection> in;
        for (const auto& [b, c, s] : dets) in.push_back({{b[0], b[1], b[2], b[3]}, c, s});
        py::list out;
        for (const auto& d : nms(in, thr)) out.append(detection_dict(d));
        return out;
      },
      py::arg("detections"), py::arg("iou"));

  m.def(
      "profile",
      [](const std::string& cfg, std::int64_t size) { return report_json(count_budget(config_from_json(cfg), size, size)); },
      py::arg("config_json"), py::arg("size") = 640, "Budget report as JSON text.");
  m.def("reference_checks", [] { return checks_json(reference_checks()); });

  m.def(
      "participation",
      [](Network& n, const Array& image, const std::string& layer, int top_k) {
        auto e = export_participation(n, from_numpy(image), layer, top_k);
        py::list top;
        for (const auto& edge : e.top) {
          py::list verts;
          for (const auto& v : edge) verts.append(py::make_tuple(v.vertex, v.x, v.y, v.weight));
          top.append(verts);
        }
        return py::make_tuple(to_numpy(e.matrix), top);
      },
      py::arg("network"), py::arg("image"), py::arg("layer"), py::arg("top_k") = 5,
      "Participation matrix [N, M] and per-hyperedge top vertices (index, x, y, weight).");

  m.def(
      "make_scene",
      [](std::uint64_t seed, std::int64_t size) {
        SceneOptions o;
        o.size = size;
        auto s = make_scene(seed, o);
        py::list objs;
        for (const auto& g : s.objects) objs.append(py::make_tuple(py::make_tuple(g.box.x1, g.box.y1, g.box.x2, g.box.y2), g.cls));
        return py::make_tuple(to_numpy(s.image), objs);
      },
      py::arg("seed"), py::arg("size") = 64);

  m.def(
      "toy_train",
      [](Network& n, int steps, double lr, int batch, std::uint64_t seed, int eval_scenes) {
        TrainOptions o;
        o.steps = steps;
        o.lr = lr;
        o.batch = batch;
        o.seed = seed;
        o.eval_scenes = eval_scenes;
        o.warmup = std::min(o.warmup, std::max(steps / 4, 1));
        TrainResult r;
        {
          py::gil_scoped_release release;
          r = train_toy(n, o);
        }
        py::dict d;
        d["loss"] = r.loss;
        d["recall"] = r.final_eval.recall;
        d["precision"] = r.final_eval.precision;
        return d;
      },
      py::arg("network"), py::arg("steps"), py::arg("lr") = 0.02, py::arg("batch") = 8, py::arg("seed") = 0,
      py::arg("eval_scenes") = 0);
}
