#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <algorithm>
#include <map>
#include <optional>

#include "egoattn/attention.h"
#include "egoattn/backbone.h"
#include "egoattn/config.h"
#include "egoattn/convlstm.h"
#include "egoattn/data.h"
#include "egoattn/errors.h"
#include "egoattn/flow.h"
#include "egoattn/ops.h"
#include "egoattn/rng.h"
#include "egoattn/training.h"
#include "egoattn/verify.h"

namespace py = pybind11;
using namespace egoattn;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(std::move(shape), std::vector<double>(a.data(), a.data() + a.size()));
}

Array to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Tensor optional_tensor(const std::optional<Array>& a) { return a ? to_tensor(*a) : Tensor(); }

TvL1Params tvl1_params(const py::kwargs& kw) {
  TvL1Params p;
  for (const auto& [k, v] : kw) {
    const std::string key = py::str(k);
    if (key == "lambda_") p.lambda = v.cast<double>();
    else if (key == "theta") p.theta = v.cast<double>();
    else if (key == "tau") p.tau = v.cast<double>();
    else if (key == "warps") p.warps = v.cast<std::size_t>();
    else if (key == "scales") p.scales = v.cast<std::size_t>();
    else if (key == "zoom") p.zoom = v.cast<double>();
    else if (key == "iterations") p.iterations = v.cast<std::size_t>();
    else if (key == "epsilon") p.epsilon = v.cast<double>();
    else if (key == "min_size") p.min_size = v.cast<std::size_t>();
    else throw ConfigError("unknown TV-L1 parameter '" + key + "'");
  }
  return p;
}

std::vector<FlowField> to_flows(const std::vector<std::pair<Array, Array>>& flows) {
  std::vector<FlowField> out;
  for (const auto& [u, v] : flows) out.push_back({to_tensor(u), to_tensor(v)});
  return out;
}

py::dict clip_dict(const VideoClip& clip) {
  py::dict d;
  const std::size_t t = clip.frames.size();
  Array frames;
  if (t > 0) {
    const auto& s = clip.frames[0].shape();
    frames = Array({static_cast<py::ssize_t>(t), static_cast<py::ssize_t>(s[0]), static_cast<py::ssize_t>(s[1]),
                    static_cast<py::ssize_t>(s[2])});
    double* dst = frames.mutable_data();
    for (const auto& f : clip.frames) dst = std::copy(f.data().begin(), f.data().end(), dst);
  }
  py::list boxes;
  for (const auto& b : clip.target_boxes) boxes.append(py::make_tuple(b.x0, b.y0, b.x1, b.y1));
  d["frames"] = frames;
  d["boxes"] = boxes;
  d["verb"] = clip.verb;
  d["object"] = clip.object;
  d["label"] = clip.activity_label;
  d["clip_id"] = clip.clip_id;
  return d;
}

}  // namespace

PYBIND11_MODULE(_egoattn, m) {
  m.doc() = "Egocentric activity recognition with CAM-based spatial attention and convLSTM";

  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

  m.def("conv2d", [](const Array& x, const Array& k, const std::optional<Array>& b, std::size_t stride,
                     std::size_t pad) { return to_array(conv2d(to_tensor(x), to_tensor(k), optional_tensor(b), stride, pad)); },
        py::arg("x"), py::arg("kernel"), py::arg("bias") = py::none(), py::arg("stride") = 1, py::arg("pad") = 0);
  m.def("global_avg_pool", [](const Array& f) { return to_array(global_avg_pool(to_tensor(f))); });
  m.def("spatial_softmax", [](const Array& x) { return to_array(spatial_softmax(to_tensor(x))); });
  m.def("compute_cam", [](const Array& f, const Array& w, std::size_t c) {
    return to_array(compute_cam(to_tensor(f), to_tensor(w), c));
  }, py::arg("features"), py::arg("head_weight"), py::arg("cls"));
  m.def("apply_spatial_attention", [](const Array& f, const Array& cam) {
    return to_array(apply_spatial_attention(to_tensor(f), to_tensor(cam)));
  }, py::arg("features"), py::arg("cam"));
  m.def("winning_class", [](const Array& logits) { return winning_class(to_tensor(logits)); });
  m.def("fuse_average", [](const Array& a, const Array& b) { return to_array(fuse_average(to_tensor(a), to_tensor(b))); });

  m.def("convlstm_step", [](const Array& x, const Array& h, const Array& c, const Array& w_x, const Array& w_h,
                            const Array& b, const std::string& variant) {
    Tensor tx = to_tensor(x);
    Tensor wx = to_tensor(w_x);
    Rng rng(0);
    ConvLSTMCell cell(wx.dim(1), wx.dim(0) / 4, wx.dim(2), rng, parse_gate_variant(variant));
    cell.input_kernels() = wx;
    cell.hidden_kernels() = to_tensor(w_h);
    cell.biases() = to_tensor(b);
    const ConvLSTMState s = cell.step(tx, {to_tensor(c), to_tensor(h)});
    return py::make_tuple(to_array(s.h), to_array(s.c));
  }, py::arg("x"), py::arg("h"), py::arg("c"), py::arg("w_x"), py::arg("w_h"), py::arg("b"),
        py::arg("variant") = "standard",
        "One cell step. Gate kernels stacked (input, forget, candidate, output). Returns (h, c).");

  m.def("tvl1_flow", [](const Array& a, const Array& b, const py::kwargs& kw) {
    const FlowField f = tvl1_flow(to_tensor(a), to_tensor(b), tvl1_params(kw));
    return py::make_tuple(to_array(f.u), to_array(f.v));
  }, py::arg("a"), py::arg("b"), "TV-L1 flow from grayscale a to b. Returns (u, v).");
  m.def("warp_compensate", [](const Array& u, const Array& v) {
    const WarpCompensation w = warp_compensate({to_tensor(u), to_tensor(v)});
    return py::make_tuple(to_array(w.flow.u), to_array(w.flow.v), w.model, w.degenerate);
  }, py::arg("u"), py::arg("v"), "Removes the affine global motion. Returns (u, v, model, degenerate).");
  m.def("build_flow_stack", [](const std::vector<std::pair<Array, Array>>& flows, std::size_t center,
                               std::size_t depth) {
    return to_array(build_flow_stack(to_flows(flows), center, depth));
  }, py::arg("flows"), py::arg("center"), py::arg("depth") = kStackDepth);
  m.def("cross_modality_init", [](const Array& k, std::size_t channels) {
    return to_array(cross_modality_init(to_tensor(k), channels));
  }, py::arg("rgb_kernel"), py::arg("channels"));

  m.def("generate_clip", [](std::size_t verb, std::size_t object, std::uint64_t seed, double camera_jitter,
                            std::size_t distractors) {
    DatasetSpec spec;
    spec.camera_jitter = camera_jitter;
    spec.distractors = distractors;
    spec.validate();
    Rng rng(seed);
    return clip_dict(generate_clip(spec, verb, object, rng));
  }, py::arg("verb"), py::arg("object"), py::arg("seed") = 0, py::arg("camera_jitter") = 0.0,
        py::arg("distractors") = 2);

  m.def("run_suite", [](const std::string& suite) {
    py::list out;
    for (const auto& c : run_suite(suite)) {
      py::dict d;
      d["suite"] = c.suite;
      d["name"] = c.name;
      d["passed"] = c.passed;
      d["value"] = c.value;
      d["tolerance"] = c.tolerance;
      out.append(d);
    }
    return out;
  }, py::arg("suite") = "all");

  m.def("resolve_config", [](const std::string& text, const std::map<std::string, std::string>& overrides) {
    RunConfig cfg = parse_run_config(text, "<python>");
    for (const auto& [k, v] : overrides) set_config_value(cfg, k, v);
    cfg.validate();
    return to_text(cfg);
  }, py::arg("text") = "", py::arg("overrides") = std::map<std::string, std::string>{},
        "Parses key = value text, applies overrides and returns the fully resolved config text.");
  m.def("config_keys", &config_keys);
}
