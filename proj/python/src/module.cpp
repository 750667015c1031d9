#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <string>
#include <vector>

#include "stsr/config.hpp"
#include "stsr/contrastive.hpp"
#include "stsr/errors.hpp"
#include "stsr/evaluate.hpp"
#include "stsr/synth_data.hpp"
#include "stsr/trainer.hpp"

namespace py = pybind11;
using namespace stsr;

namespace {

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  const auto d = t.data();
  std::copy(d.begin(), d.end(), out.mutable_data());
  return out;
}

Tensor from_numpy(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(shape, std::vector<float>(a.data(), a.data() + a.size()));
}

py::dict report_dict(const MetricReport& r) {
  py::dict d;
  d["label"] = r.label;
  d["config_fingerprint"] = r.config_fingerprint;
  d["sample_count"] = r.sample_count;
  d["gene_ids"] = r.gene_ids;
  d["rmse"] = r.rmse;
  d["pcc"] = r.pcc;
  d["mean_rmse"] = r.mean_rmse;
  d["mean_pcc"] = r.mean_pcc;
  return d;
}

py::dict loss_dict(const LossReport& r) {
  py::dict d;
  d["step"] = r.step;
  d["total"] = r.total;
  d["mse"] = r.mse;
  d["modal"] = r.modal;
  d["content"] = r.content;
  d["inter_sphere"] = r.inter_sphere;
  d["tau"] = r.tau;
  d["alpha"] = r.alpha;
  d["beta"] = r.beta;
  return d;
}

py::list samples_list(const Dataset& d) {
  py::list out;
  for (const auto& s : d.samples) {
    py::dict e;
    e["sample_id"] = s.sample_id;
    e["histology"] = to_numpy(s.histology);
    e["hr_st"] = to_numpy(s.hr_st);
    e["lr_st"] = s.lr_st ? py::object(to_numpy(*s.lr_st)) : py::none();
    e["gene_ids"] = s.gene_ids;
    out.append(e);
  }
  return out;
}

PredictOptions options(float omega, std::size_t steps, bool no_lr_st, std::uint64_t seed) {
  PredictOptions o;
  o.omega = omega;
  o.steps = steps;
  o.no_lr_st = no_lr_st;
  o.seed = seed;
  return o;
}

// Owns the dataset alongside the run so Python never sees a dangling reference.
class PyTrainer {
 public:
  PyTrainer(const std::string& config_text, const std::string& dataset_path) {
    RunConfig c = parse_config(config_text);
    if (!dataset_path.empty()) {
      c.dataset = dataset_path;
    }
    c.validate();
    trainer_ = std::make_unique<Trainer>(c, std::make_shared<const Dataset>(load_run_dataset(c)));
  }
  explicit PyTrainer(std::unique_ptr<Trainer> t) : trainer_(std::move(t)) {}

  static PyTrainer from_checkpoint(const std::string& path, const std::string& dataset_path) {
    return PyTrainer(Trainer::from_checkpoint_file(path, std::make_shared<const Dataset>(load_dataset(dataset_path))));
  }

  Trainer& get() { return *trainer_; }

 private:
  std::unique_ptr<Trainer> trainer_;
};

}  // namespace

PYBIND11_MODULE(_stsr, m) {
  m.doc() = "Contrastive conditional diffusion for spatial expression super-resolution";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_RuntimeError);
  py::register_exception<TruncationError>(m, "TruncationError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("default_config", [] { return to_text(RunConfig{}); }, "Canonical text of the default run config.");
  m.def("canonical_config", [](const std::string& text) { return to_text(parse_config(text)); }, py::arg("text"));
  m.def("fingerprint", [](const std::string& text) { return fingerprint(parse_config(text)); }, py::arg("text"));
  m.def("ablation_rows", [] { return kAblationRows; });

  m.def(
      "generate_dataset",
      [](const std::string& out, std::uint32_t count, std::uint32_t height, std::uint32_t width, std::uint32_t genes,
         std::uint32_t scale, double missing, std::uint64_t seed, double noise) {
        DatasetManifest mf;
        mf.count = count;
        mf.height = height;
        mf.width = width;
        mf.genes = genes;
        mf.scale = scale;
        mf.missing_fraction = missing;
        mf.seed = seed;
        mf.noise = noise;
        save_dataset(generate(mf), out);
      },
      py::arg("out"), py::arg("count") = 256, py::arg("height") = 40, py::arg("width") = 40, py::arg("genes") = 4,
      py::arg("scale") = 5, py::arg("missing") = 0.25, py::arg("seed") = 7, py::arg("noise") = 0.05);
  m.def("load_dataset", [](const std::string& path) { return samples_list(load_dataset(path)); }, py::arg("path"),
        "Samples of a dataset file as dicts of float32 arrays; lr_st is None when absent.");

  m.def("loss_modal", [](py::array_t<float> h, py::array_t<float> y, float tau) {
    return loss_modal(from_numpy(h), from_numpy(y), Tensor::scalar(tau)).item();
  });
  m.def("loss_content", [](py::array_t<float> h, py::array_t<float> y, float tau) {
    return loss_content(from_numpy(h), from_numpy(y), Tensor::scalar(tau)).item();
  });
  m.def("loss_inter_sphere", [](py::array_t<float> mh, py::array_t<float> ch, float tau) {
    return loss_inter_sphere(from_numpy(mh), from_numpy(ch), Tensor::scalar(tau)).item();
  });
  m.def("evaluate_maps",
        [](const std::vector<py::array_t<float>>& preds, const std::vector<py::array_t<float>>& truths,
           std::vector<std::int32_t> gene_ids, const std::string& label) {
          std::vector<Tensor> p;
          std::vector<Tensor> t;
          for (const auto& a : preds) {
            p.push_back(from_numpy(a));
          }
          for (const auto& a : truths) {
            t.push_back(from_numpy(a));
          }
          return report_dict(evaluate_maps(p, t, std::move(gene_ids), label, ""));
        },
        py::arg("preds"), py::arg("truths"), py::arg("gene_ids"), py::arg("label") = "eval");

  py::class_<PyTrainer>(m, "Trainer")
      .def(py::init<const std::string&, const std::string&>(), py::arg("config_text"), py::arg("dataset") = "")
      .def_static("from_checkpoint", &PyTrainer::from_checkpoint, py::arg("path"), py::arg("dataset"))
      .def_property_readonly("step", [](PyTrainer& t) { return t.get().step(); })
      .def_property_readonly("config_text", [](PyTrainer& t) { return to_text(t.get().config()); })
      .def_property_readonly("validation_indices", [](PyTrainer& t) { return t.get().validation_indices(); })
      .def(
          "train",
          [](PyTrainer& t, std::size_t steps) {
            py::list out;
            for (const auto& r : t.get().train(steps)) {
              out.append(loss_dict(r));
            }
            return out;
          },
          py::arg("steps"))
      .def("checkpoint_bytes",
           [](PyTrainer& t) {
             const auto b = t.get().checkpoint_bytes();
             return py::bytes(reinterpret_cast<const char*>(b.data()), b.size());
           })
      .def("save_checkpoint", [](PyTrainer& t, const std::string& path) { t.get().save_checkpoint(path); })
      .def(
          "predict",
          [](PyTrainer& t, std::vector<std::size_t> indices, float omega, std::size_t steps, bool no_lr_st,
             std::uint64_t seed) {
            std::vector<py::array_t<float>> out;
            for (const auto& p : t.get().predict(indices, options(omega, steps, no_lr_st, seed))) {
              out.push_back(to_numpy(p));
            }
            return out;
          },
          py::arg("indices"), py::arg("omega") = 1.0f, py::arg("steps") = 0, py::arg("no_lr_st") = false,
          py::arg("seed") = 0)
      .def(
          "evaluate",
          [](PyTrainer& t, const std::string& label, float omega, std::size_t steps, bool no_lr_st,
             std::uint64_t seed) {
            return report_dict(
                t.get().evaluate(t.get().validation_indices(), options(omega, steps, no_lr_st, seed), label));
          },
          py::arg("label") = "eval", py::arg("omega") = 1.0f, py::arg("steps") = 0, py::arg("no_lr_st") = false,
          py::arg("seed") = 0);
}
