// Python bindings for the segmentation core: model construction and
// inference, checkpoint round-trips, losses and metrics, synthetic data,
// and the gradient-check harness. Arrays cross the boundary as contiguous
// float32 numpy arrays in (n, c, h, w) layout.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "mrn/config.hpp"
#include "mrn/data.hpp"
#include "mrn/engine.hpp"
#include "mrn/network.hpp"
#include "mrn/objectives.hpp"

namespace py = pybind11;
using namespace mrn;

namespace {

using NumpyF = py::array_t<float, py::array::c_style | py::array::forcecast>;

ArrayPtr<float> from_numpy(const NumpyF& a, const char* what) {
  py::buffer_info buf = a.request();
  if (buf.ndim != 4)
    throw std::invalid_argument(std::string(what) + ": expected a 4-D (n,c,h,w) array, got " +
                                std::to_string(buf.ndim) + "-D");
  auto out = make_array<float>(int(buf.shape[0]), int(buf.shape[1]), int(buf.shape[2]),
                               int(buf.shape[3]));
  std::memcpy(out->val.data(), buf.ptr, out->val.size() * sizeof(float));
  return out;
}

py::array_t<float> to_numpy(const ArrayPtr<float>& a) {
  py::array_t<float> out({a->n, a->c, a->h, a->w});
  std::memcpy(out.mutable_data(), a->val.data(), a->val.size() * sizeof(float));
  return out;
}

MrnConfig make_config(int depth, int base_channels, int in_channels, int descriptors, bool msc) {
  MrnConfig cfg;
  cfg.depth = depth;
  cfg.base_channels = base_channels;
  cfg.in_channels = in_channels;
  cfg.descriptors = descriptors;
  cfg.msc = msc;
  cfg.validate();
  return cfg;
}

py::dict config_dict(const MrnConfig& cfg) {
  py::dict d;
  d["depth"] = cfg.depth;
  d["base_channels"] = cfg.base_channels;
  d["in_channels"] = cfg.in_channels;
  d["descriptors"] = cfg.descriptors;
  d["msc"] = cfg.msc;
  return d;
}

// Shared checkpoint plumbing for both model wrappers.
template <typename Net>
struct PyModel {
  Net net;
  std::vector<float> norm_mean{0.0f, 0.0f, 0.0f};
  std::vector<float> norm_std{1.0f, 1.0f, 1.0f};

  PyModel(const MrnConfig& cfg, std::uint64_t seed) : net(cfg, seed) {}

  void save(const std::string& path) {
    CheckpointMeta meta;
    meta.arch = arch_name(net);
    meta.model = net.config();
    meta.norm.mean = {norm_mean[0], norm_mean[1], norm_mean[2]};
    meta.norm.std = {norm_std[0], norm_std[1], norm_std[2]};
    save_checkpoint(path, net.params(), meta);
  }

  static constexpr const char* expected_arch() {
    return std::is_same_v<Net, Mrn<float>> ? "mrn" : "baseline";
  }

  static PyModel from_checkpoint(const std::string& path) {
    auto ck = read_checkpoint(path);
    if (ck.meta.arch != expected_arch())
      throw std::invalid_argument("checkpoint " + path + " holds a '" + ck.meta.arch +
                                  "' model");
    PyModel m(ck.meta.model, 1);
    apply_checkpoint(ck, m.net.params());
    m.norm_mean.assign(ck.meta.norm.mean.begin(), ck.meta.norm.mean.end());
    m.norm_std.assign(ck.meta.norm.std.begin(), ck.meta.norm.std.end());
    return m;
  }
};

using PyMrn = PyModel<Mrn<float>>;
using PyBaseline = PyModel<Baseline<float>>;

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["dc"] = m.dc;
  d["iou"] = m.iou;
  d["precision"] = m.precision;
  d["recall"] = m.recall;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "dual-decoder melanoma lesion segmentation core";
  m.attr("__version__") = "0.1.0";

  py::class_<PyMrn>(m, "Mrn",
                    "Dual-decoder segmentation network: shared encoder, "
                    "attention decoder (auxiliary head) and output decoder (main head).")
      .def(py::init([](int depth, int base_channels, int in_channels, int descriptors, bool msc,
                       std::uint64_t seed) {
             return PyMrn(make_config(depth, base_channels, in_channels, descriptors, msc),
                          seed);
           }),
           py::arg("depth") = 4, py::arg("base_channels") = 16, py::arg("in_channels") = 3,
           py::arg("descriptors") = 64, py::arg("msc") = true, py::arg("seed") = 1)
      .def_static("from_checkpoint", &PyMrn::from_checkpoint, py::arg("path"))
      .def("save", &PyMrn::save, py::arg("path"))
      .def(
          "forward",
          [](PyMrn& self, const NumpyF& x, bool training) {
            auto out = self.net.forward(from_numpy(x, "forward"), nullptr, training);
            return py::make_tuple(to_numpy(out.aux_map), to_numpy(out.main_map));
          },
          py::arg("x"), py::arg("training") = false,
          "Runs the network on (n,c,h,w) float32 input; returns (aux_map, main_map).")
      .def("parameter_count", [](const PyMrn& self) { return self.net.parameter_count(); })
      .def_property_readonly("config",
                             [](const PyMrn& self) { return config_dict(self.net.config()); })
      .def_readwrite("norm_mean", &PyMrn::norm_mean)
      .def_readwrite("norm_std", &PyMrn::norm_std);

  py::class_<PyBaseline>(m, "Baseline",
                         "Single-path encoder/decoder reference: same encoder, plain "
                         "skip-concatenation decoder, one head.")
      .def(py::init([](int depth, int base_channels, int in_channels, bool msc,
                       std::uint64_t seed) {
             return PyBaseline(make_config(depth, base_channels, in_channels, 1, msc), seed);
           }),
           py::arg("depth") = 4, py::arg("base_channels") = 16, py::arg("in_channels") = 3,
           py::arg("msc") = false, py::arg("seed") = 1)
      .def_static("from_checkpoint", &PyBaseline::from_checkpoint, py::arg("path"))
      .def("save", &PyBaseline::save, py::arg("path"))
      .def(
          "forward",
          [](PyBaseline& self, const NumpyF& x, bool training) {
            return to_numpy(self.net.forward(from_numpy(x, "forward"), nullptr, training));
          },
          py::arg("x"), py::arg("training") = false,
          "Runs the network on (n,c,h,w) float32 input; returns the main map.")
      .def("parameter_count",
           [](const PyBaseline& self) { return self.net.parameter_count(); })
      .def_property_readonly(
          "config", [](const PyBaseline& self) { return config_dict(self.net.config()); })
      .def_readwrite("norm_mean", &PyBaseline::norm_mean)
      .def_readwrite("norm_std", &PyBaseline::norm_std);

  m.def(
      "dice_loss",
      [](const NumpyF& pred, const NumpyF& target, double eps) {
        return double(dice_loss(from_numpy(pred, "dice_loss"), from_numpy(target, "dice_loss"),
                                static_cast<Tape<float>*>(nullptr), float(eps))
                          ->val[0]);
      },
      py::arg("pred"), py::arg("target"), py::arg("eps") = 1e-6);

  m.def(
      "bce_loss",
      [](const NumpyF& pred, const NumpyF& target) {
        return double(bce_loss(from_numpy(pred, "bce_loss"), from_numpy(target, "bce_loss"),
                               static_cast<Tape<float>*>(nullptr))
                          ->val[0]);
      },
      py::arg("pred"), py::arg("target"));

  m.def(
      "dual_loss",
      [](const NumpyF& aux, const NumpyF& main, const NumpyF& target, double lambda_,
         double eps) {
        DualOutput<float> out{from_numpy(aux, "dual_loss"), from_numpy(main, "dual_loss")};
        DualLossSpec<float> spec;
        spec.lambda = float(lambda_);
        spec.eps = float(eps);
        auto L = dual_loss(out, from_numpy(target, "dual_loss"), spec,
                           static_cast<Tape<float>*>(nullptr));
        py::dict d;
        d["total"] = double(L.total->val[0]);
        d["aux"] = double(L.aux->val[0]);
        d["seg"] = double(L.seg->val[0]);
        return d;
      },
      py::arg("aux"), py::arg("main"), py::arg("target"), py::arg("lambda_") = 0.4,
      py::arg("eps") = 1e-6,
      "Weighted dual objective: total = lambda_ * aux + seg, each term dice + bce.");

  m.def(
      "metrics",
      [](const NumpyF& pred, const NumpyF& target) {
        return metrics_dict(metrics(from_numpy(pred, "metrics"), from_numpy(target, "metrics")));
      },
      py::arg("pred"), py::arg("target"),
      "Overlap metrics on hard masks (pred binarized at 0.5): dc, iou, precision, recall.");

  m.def(
      "synth_dataset",
      [](int n, int side, std::uint64_t seed) {
        py::list out;
        for (const auto& s : synth_dataset(n, side, seed)) {
          py::dict d;
          // drop the batch dimension for a friendlier shape
          py::array_t<float> img({s.image->c, s.image->h, s.image->w});
          std::memcpy(img.mutable_data(), s.image->val.data(),
                      s.image->val.size() * sizeof(float));
          py::array_t<float> mask({s.mask->h, s.mask->w});
          std::memcpy(mask.mutable_data(), s.mask->val.data(),
                      s.mask->val.size() * sizeof(float));
          d["image"] = img;
          d["mask"] = mask;
          d["id"] = s.id;
          py::dict meta;
          meta["region"] = s.meta.region;
          meta["skin_tone"] = s.meta.skin_tone;
          meta["gender"] = s.meta.gender;
          meta["age_group"] = s.meta.age_group;
          d["meta"] = meta;
          out.append(d);
        }
        return out;
      },
      py::arg("n"), py::arg("side") = 64, py::arg("seed") = 0,
      "Synthesizes n image/mask samples with demographic metadata.");

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int depth, int base_channels, int descriptors) {
        GradcheckReport rep = gradcheck(make_config(depth, base_channels, 3, descriptors, true),
                                        seed);
        py::dict d;
        d["pass"] = rep.pass;
        d["max_rel_err"] = rep.max_rel_err;
        d["threshold"] = rep.threshold;
        py::list rows;
        for (const auto& r : rep.rows) {
          py::dict row;
          row["group"] = r.group;
          row["max_rel_err"] = r.max_rel_err;
          row["probes"] = r.probes;
          rows.append(row);
        }
        d["rows"] = rows;
        return d;
      },
      py::arg("seed") = 42, py::arg("depth") = 2, py::arg("base_channels") = 4,
      py::arg("descriptors") = 4,
      "Compares analytic gradients of the dual loss against finite differences "
      "on a small 64-bit model.");
}
