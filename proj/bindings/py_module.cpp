// Python bindings for the SalM2 core: scans, model forward, audits,
// checkpoints, metrics, and the synthetic data generator.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "salm2/checkpoint.hpp"
#include "salm2/metrics.hpp"
#include "salm2/scan.hpp"
#include "salm2/semantic.hpp"
#include "salm2/training.hpp"

namespace py = pybind11;
using namespace salm2;

namespace {

using DArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using FArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using U8Array = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vec(const DArray& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

ScanInputs<double> build_scan_inputs(const DArray& decay, const DArray& drive, const DArray& readout,
                                     const py::object& passthrough, const py::object& initial_state,
                                     const py::object& raw_input) {
  if (decay.ndim() != 3) throw ContractViolation("decay must be [L, D, S]");
  ScanInputs<double> in;
  in.len = decay.shape(0);
  in.width = decay.shape(1);
  in.states = decay.shape(2);
  in.decay = to_vec(decay);
  in.drive = to_vec(drive);
  in.readout = to_vec(readout);
  if (!passthrough.is_none()) in.passthrough = to_vec(passthrough.cast<DArray>());
  if (!initial_state.is_none()) in.initial_state = to_vec(initial_state.cast<DArray>());
  if (!raw_input.is_none()) in.raw_input = to_vec(raw_input.cast<DArray>());
  return in;
}

py::array scan_result(const std::vector<double>& y, int64_t l, int64_t d) {
  py::array_t<double> out({l, d});
  std::copy(y.begin(), y.end(), out.mutable_data());
  return out;
}

std::vector<float> to_fvec(const FArray& a) {
  return std::vector<float>(a.data(), a.data() + a.size());
}

std::vector<uint8_t> to_u8vec(const U8Array& a) {
  return std::vector<uint8_t>(a.data(), a.data() + a.size());
}

struct PyModel {
  SalM2<float> model;
  explicit PyModel(SalM2<float> m) : model(std::move(m)) {}

  py::array forward(const FArray& image, bool with_semantics) {
    if (image.ndim() != 4) throw ContractViolation("image must be [B, 3, H, W]");
    NoGradGuard ng;
    auto x = Tensor<float>::from(
        {image.shape(0), image.shape(1), image.shape(2), image.shape(3)}, to_fvec(image));
    auto y = with_semantics ? model.forward(x) : model.forward_without_semantics(x);
    py::array_t<float> out({y.dim(0), y.dim(1), y.dim(2), y.dim(3)});
    std::copy(y.values().begin(), y.values().end(), out.mutable_data());
    return out;
  }
};

}  // namespace

PYBIND11_MODULE(_salm2, m) {
  m.doc() = "SalM2 driver-saliency core";

  py::register_exception<Error>(m, "Salm2Error");

  m.def(
      "sequential_scan",
      [](const DArray& decay, const DArray& drive, const DArray& readout,
         const py::object& passthrough, const py::object& initial_state, const py::object& raw) {
        auto in = build_scan_inputs(decay, drive, readout, passthrough, initial_state, raw);
        return scan_result(sequential_scan(in), in.len, in.width);
      },
      py::arg("decay"), py::arg("drive"), py::arg("readout"), py::arg("passthrough") = py::none(),
      py::arg("initial_state") = py::none(), py::arg("raw_input") = py::none(),
      "Exact left-to-right selective scan; returns y of shape [L, D].");

  m.def(
      "parallel_scan",
      [](const DArray& decay, const DArray& drive, const DArray& readout,
         const py::object& passthrough, const py::object& initial_state, const py::object& raw) {
        auto in = build_scan_inputs(decay, drive, readout, passthrough, initial_state, raw);
        return scan_result(parallel_scan(in), in.len, in.width);
      },
      py::arg("decay"), py::arg("drive"), py::arg("readout"), py::arg("passthrough") = py::none(),
      py::arg("initial_state") = py::none(), py::arg("raw_input") = py::none(),
      "Associative-prefix evaluation of the same recurrence.");

  py::class_<PyModel>(m, "Model")
      .def(py::init([](const py::object& config_json) {
             ModelConfig cfg;
             if (!config_json.is_none())
               cfg = ModelConfig::from_json(nlohmann::json::parse(config_json.cast<std::string>()));
             return PyModel(SalM2<float>(cfg));
           }),
           py::arg("config_json") = py::none())
      .def("forward", &PyModel::forward, py::arg("image"), py::arg("with_semantics") = true,
           "Saliency maps in (0,1), shape [B, 1, S, S].")
      .def("count_params", [](const PyModel& p) { return p.model.count_trainable_params(); })
      .def("param_breakdown",
           [](const PyModel& p) {
             py::dict d;
             for (const auto& [k, v] : p.model.param_breakdown()) d[py::str(k)] = v;
             return d;
           })
      .def("flops",
           [](const PyModel& p, int64_t input_size) {
             return estimate_flops(p.model.config(), input_size).total;
           },
           py::arg("input_size") = 256)
      .def("config_json", [](const PyModel& p) { return p.model.config().to_json().dump(); })
      .def("gamma", [](const PyModel& p) { return p.model.cma().gamma().values()[0]; })
      .def("save",
           [](const PyModel& p, const std::string& path) { save_checkpoint(p.model, path); })
      .def_static("load",
                  [](const std::string& path, const std::string& clip_weights) {
                    return PyModel(load_checkpoint(path, clip_weights).model);
                  },
                  py::arg("path"), py::arg("clip_weights") = std::string());

  m.def(
      "train",
      [](PyModel& model, const std::string& data_root, const std::string& split,
         const std::string& config_json) {
        TrainConfig cfg;
        if (!config_json.empty()) {
          auto j = nlohmann::json::parse(config_json);
          cfg.epochs = j.value("epochs", cfg.epochs);
          cfg.batch_size = j.value("batch_size", cfg.batch_size);
          cfg.seed = j.value("seed", cfg.seed);
          cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
          cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
        }
        auto ds = load_dataset(data_root, split);
        auto result = train_model(model.model, ds, ds, cfg);
        return result.history_json(cfg).dump();
      },
      py::arg("model"), py::arg("data_root"), py::arg("split") = "train",
      py::arg("config_json") = std::string(), "Returns the history record as a JSON string.");

  m.def(
      "validate",
      [](PyModel& model, const std::string& data_root, const std::string& split) {
        auto ds = load_dataset(data_root, split);
        return validate(model.model, ds).to_json().dump();
      },
      py::arg("model"), py::arg("data_root"), py::arg("split") = "train",
      "Six-metric report as a JSON string.");

  m.def("generate_synthetic",
        [](int64_t n, uint64_t seed, const std::string& out_root) {
          auto manifest = generate_synthetic(n, seed, out_root);
          return manifest.to_json().dump();
        },
        py::arg("n"), py::arg("seed"), py::arg("out_root"));

  m.def("write_random_adapter", &write_random_adapter, py::arg("path"), py::arg("seed"),
        py::arg("embed_dim") = 768);

  auto mm = m.def_submodule("metrics", "Saliency evaluation metrics");
  mm.def("cc", [](const FArray& p, const FArray& g) { return metrics::cc(to_fvec(p), to_fvec(g)); });
  mm.def("sim", [](const FArray& p, const FArray& g) { return metrics::sim(to_fvec(p), to_fvec(g)); });
  mm.def("kld", [](const FArray& p, const FArray& g) { return metrics::kld(to_fvec(p), to_fvec(g)); },
         py::arg("pred"), py::arg("gt"));
  mm.def("nss",
         [](const FArray& p, const U8Array& f) { return metrics::nss(to_fvec(p), to_u8vec(f)); });
  mm.def("auc_judd",
         [](const FArray& p, const U8Array& f) { return metrics::auc_judd(to_fvec(p), to_u8vec(f)); });
  mm.def("auc_borji",
         [](const FArray& p, const U8Array& f, int n_splits, uint64_t seed) {
           return metrics::auc_borji(to_fvec(p), to_u8vec(f), n_splits, seed);
         },
         py::arg("pred"), py::arg("fixation"), py::arg("n_splits") = 100, py::arg("seed") = 7);
}
